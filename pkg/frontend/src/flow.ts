/**
 * Session flow state machine, free of DOM concerns.
 *
 * One subject walks an ordered list of sections (the backend's sessions),
 * each made of three parts. Per part, the choice gate opens only after both
 * samples have finished playing at least once; an acknowledged submission
 * (accepted, repeated, or conflicting) locks the part for good, so the UI
 * can never produce a second accepted record for the same (section, part).
 *
 * Everything observable happens through `events`, an append-only log the
 * tests assert against.
 */

import type {
  Choice,
  SessionDetail,
  SessionItem,
  SessionSummary,
  SubmitResult,
} from "./api";
import { ApiError } from "./api";

/** What the flow needs from the backend; ApiClient satisfies it. */
export interface FlowClient {
  listSessions(): Promise<SessionSummary[]>;
  getSession(sessionId: string): Promise<SessionDetail>;
  submitChoice(
    subject: string,
    sessionId: string,
    itemId: string,
    choice: Choice,
  ): Promise<SubmitResult>;
}

export type PlaySlot = "a" | "b";

/** accepted/duplicate/conflict are terminal; failed allows a retry. */
export type ItemStatus =
  | "pending"
  | "submitting"
  | "accepted"
  | "duplicate"
  | "conflict"
  | "failed";

const TERMINAL: ReadonlySet<ItemStatus> = new Set([
  "accepted",
  "duplicate",
  "conflict",
]);

export interface ItemState {
  sessionId: string;
  item: SessionItem;
  played: { a: boolean; b: boolean };
  status: ItemStatus;
  /** last letter the subject picked; survives failed submissions for retry */
  choice: Choice | null;
  /** server explanation for conflicts, transport message for failures */
  detail: string | null;
}

export type FlowEvent =
  | { kind: "loaded"; sections: number; items: number; resumed: number }
  | { kind: "played"; sessionId: string; itemId: string; slot: PlaySlot }
  | { kind: "gate-rejected"; sessionId: string; itemId: string; reason: string }
  | { kind: "submitting"; sessionId: string; itemId: string; choice: Choice }
  | { kind: "accepted"; sessionId: string; itemId: string; choice: Choice }
  | { kind: "duplicate"; sessionId: string; itemId: string; choice: Choice }
  | { kind: "conflict"; sessionId: string; itemId: string; choice: Choice; detail: string }
  | { kind: "submit-failed"; sessionId: string; itemId: string; choice: Choice; detail: string };

export interface SavedOutcome {
  status: "accepted" | "duplicate" | "conflict";
  choice: Choice;
}

/** Where completed parts are remembered across reloads. */
export interface ProgressStore {
  load(subject: string): Record<string, SavedOutcome> | null;
  save(subject: string, outcomes: Record<string, SavedOutcome>): void;
}

/** Keeps progress for the lifetime of the page only. */
export class MemoryProgress implements ProgressStore {
  private data = new Map<string, Record<string, SavedOutcome>>();

  load(subject: string): Record<string, SavedOutcome> | null {
    return this.data.get(subject) ?? null;
  }

  save(subject: string, outcomes: Record<string, SavedOutcome>): void {
    this.data.set(subject, outcomes);
  }
}

export class FlowError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FlowError";
  }
}

function progressKey(sessionId: string, itemId: string): string {
  return `${sessionId}/${itemId}`;
}

export class SessionFlow {
  readonly subject: string;
  readonly events: FlowEvent[] = [];
  private readonly client: FlowClient;
  private readonly progress: ProgressStore;
  private items: ItemState[] = [];
  private sectionIds: string[] = [];
  private loaded = false;

  constructor(client: FlowClient, subject: string, progress?: ProgressStore) {
    if (!subject.trim()) throw new FlowError("subject id must be nonempty");
    this.client = client;
    this.subject = subject.trim();
    this.progress = progress ?? new MemoryProgress();
  }

  /** Fetch the session index and every session body, in listed order. */
  async start(): Promise<void> {
    const index = await this.client.listSessions();
    const saved = this.progress.load(this.subject) ?? {};
    this.items = [];
    this.sectionIds = [];
    let resumed = 0;
    for (const entry of index) {
      const detail = await this.client.getSession(entry.session_id);
      this.sectionIds.push(detail.session_id);
      for (const item of detail.items) {
        const state: ItemState = {
          sessionId: detail.session_id,
          item,
          played: { a: false, b: false },
          status: "pending",
          choice: null,
          detail: null,
        };
        const prior = saved[progressKey(detail.session_id, item.item_id)];
        if (prior) {
          state.status = prior.status;
          state.choice = prior.choice;
          resumed += 1;
        }
        this.items.push(state);
      }
    }
    this.loaded = true;
    this.events.push({
      kind: "loaded",
      sections: this.sectionIds.length,
      items: this.items.length,
      resumed,
    });
  }

  /** All item states, in presentation order. Read-only by convention. */
  get allItems(): readonly ItemState[] {
    return this.items;
  }

  /** The part the subject is on: first item not yet locked. */
  get current(): ItemState | null {
    this.assertLoaded();
    return this.items.find((s) => !TERMINAL.has(s.status)) ?? null;
  }

  get done(): boolean {
    return this.loaded && this.current === null;
  }

  /** 1-based (section, part) position of the current item, for display. */
  position(): { section: number; sections: number; part: number; parts: number } | null {
    const cur = this.current;
    if (cur === null) return null;
    const inSection = this.items.filter((s) => s.sessionId === cur.sessionId);
    return {
      section: this.sectionIds.indexOf(cur.sessionId) + 1,
      sections: this.sectionIds.length,
      part: inSection.indexOf(cur) + 1,
      parts: inSection.length,
    };
  }

  /** Record that a sample of the current part finished playing. */
  markPlayed(slot: PlaySlot): void {
    const cur = this.requireCurrent();
    cur.played[slot] = true;
    this.events.push({
      kind: "played",
      sessionId: cur.sessionId,
      itemId: cur.item.item_id,
      slot,
    });
  }

  /** True once both samples of the current part have finished playing. */
  canChoose(): boolean {
    const cur = this.current;
    if (cur === null) return false;
    if (cur.status === "submitting") return false;
    return cur.played.a && cur.played.b;
  }

  /**
   * Submit the subject's pick for the current part.
   *
   * Throws FlowError when the gate is closed (and logs the refusal) or when
   * a submission is already in flight. Transport failures leave the part in
   * "failed" with everything preserved, so calling choose again retries.
   */
  async choose(choice: Choice): Promise<ItemStatus> {
    const cur = this.requireCurrent();
    if (!cur.played.a || !cur.played.b) {
      const missing = [
        !cur.played.a ? "A" : null,
        !cur.played.b ? "B" : null,
      ].filter((s): s is string => s !== null);
      this.events.push({
        kind: "gate-rejected",
        sessionId: cur.sessionId,
        itemId: cur.item.item_id,
        reason: `sample ${missing.join(" and ")} not played yet`,
      });
      throw new FlowError("play both samples before choosing");
    }
    if (cur.status === "submitting") {
      throw new FlowError("a submission is already in flight");
    }
    cur.choice = choice;
    cur.status = "submitting";
    this.events.push({
      kind: "submitting",
      sessionId: cur.sessionId,
      itemId: cur.item.item_id,
      choice,
    });
    let result: SubmitResult;
    try {
      result = await this.client.submitChoice(
        this.subject,
        cur.sessionId,
        cur.item.item_id,
        choice,
      );
    } catch (err) {
      cur.status = "failed";
      cur.detail = err instanceof ApiError ? err.message : String(err);
      this.events.push({
        kind: "submit-failed",
        sessionId: cur.sessionId,
        itemId: cur.item.item_id,
        choice,
        detail: cur.detail,
      });
      return cur.status;
    }
    if (result.kind === "conflict") {
      // the server kept its original record; surface that and move on
      cur.status = "conflict";
      cur.detail = result.detail;
      this.events.push({
        kind: "conflict",
        sessionId: cur.sessionId,
        itemId: cur.item.item_id,
        choice,
        detail: result.detail,
      });
    } else {
      cur.status = result.kind;
      cur.detail = null;
      this.events.push({
        kind: result.kind,
        sessionId: cur.sessionId,
        itemId: cur.item.item_id,
        choice,
      });
    }
    this.saveProgress();
    return cur.status;
  }

  /** Resubmit the preserved pick after a transport failure. */
  async retry(): Promise<ItemStatus> {
    const cur = this.requireCurrent();
    if (cur.status !== "failed" || cur.choice === null) {
      throw new FlowError("nothing to retry");
    }
    return this.choose(cur.choice);
  }

  private saveProgress(): void {
    const outcomes: Record<string, SavedOutcome> = {};
    for (const s of this.items) {
      if (TERMINAL.has(s.status) && s.choice !== null) {
        outcomes[progressKey(s.sessionId, s.item.item_id)] = {
          status: s.status as SavedOutcome["status"],
          choice: s.choice,
        };
      }
    }
    this.progress.save(this.subject, outcomes);
  }

  private requireCurrent(): ItemState {
    this.assertLoaded();
    const cur = this.current;
    if (cur === null) throw new FlowError("all parts are already completed");
    return cur;
  }

  private assertLoaded(): void {
    if (!this.loaded) throw new FlowError("call start() first");
  }
}
