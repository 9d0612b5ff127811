/**
 * DOM layer: renders the single-page flow and forwards user actions to the
 * state machine. All gating lives in SessionFlow; this file only mirrors it
 * into button states.
 *
 * Keyboard shortcuts: 1 plays sample A, 2 plays sample B, a/b submit the
 * matching choice once the gate is open.
 */

import { ApiClient, type Choice } from "./api";
import { SessionFlow, type ProgressStore, type SavedOutcome } from "./flow";

const PART_TITLES: Record<string, string> = {
  naturalness: "Which sounds more natural?",
  content: "Which preserves the sentence better?",
  similarity: "Which sounds more like the target speaker?",
};

/** localStorage-backed progress so a reload shows completed parts locked. */
class BrowserProgress implements ProgressStore {
  load(subject: string): Record<string, SavedOutcome> | null {
    const raw = window.localStorage.getItem(`listening-ui:${subject}`);
    return raw === null ? null : (JSON.parse(raw) as Record<string, SavedOutcome>);
  }

  save(subject: string, outcomes: Record<string, SavedOutcome>): void {
    window.localStorage.setItem(`listening-ui:${subject}`, JSON.stringify(outcomes));
  }
}

interface Handles {
  progress: HTMLElement;
  banner: HTMLElement;
  card: HTMLElement;
  chooseA: HTMLButtonElement;
  chooseB: HTMLButtonElement;
  hint: HTMLElement;
}

export function mountApp(root: HTMLElement, baseUrl = ""): void {
  const client = new ApiClient(baseUrl);
  root.innerHTML = "";
  renderSubjectScreen(root, client);
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderSubjectScreen(root: HTMLElement, client: ApiClient): void {
  root.innerHTML = "";
  const box = el("div", "entry");
  box.append(el("h1", undefined, "Listening test"));
  box.append(
    el(
      "p",
      undefined,
      "You will hear pairs of short audio samples. For each question, " +
        "play both samples, then pick one. There are no right answers.",
    ),
  );
  const input = el("input");
  input.placeholder = "subject id (e.g. your initials)";
  const button = el("button", "primary", "Start");
  const error = el("p", "error");
  box.append(input, button, error);
  root.append(box);

  const begin = async () => {
    const subject = input.value.trim();
    if (!subject) {
      error.textContent = "Enter a subject id first.";
      return;
    }
    button.disabled = true;
    try {
      const flow = new SessionFlow(client, subject, new BrowserProgress());
      await flow.start();
      renderFlowScreen(root, client, flow);
    } catch (err) {
      error.textContent = `Could not reach the test server: ${String(err)}`;
      button.disabled = false;
    }
  };
  button.addEventListener("click", () => void begin());
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") void begin();
  });
}

function renderFlowScreen(root: HTMLElement, client: ApiClient, flow: SessionFlow): void {
  root.innerHTML = "";
  const handles: Handles = {
    progress: el("div", "progress"),
    banner: el("div", "banner"),
    card: el("div", "card"),
    chooseA: el("button", "choice", "Choose A"),
    chooseB: el("button", "choice", "Choose B"),
    hint: el("p", "hint"),
  };
  const choices = el("div", "choices");
  choices.append(handles.chooseA, handles.chooseB);
  root.append(handles.progress, handles.banner, handles.card, choices, handles.hint);

  let shownItemId: string | null = null;

  const submit = async (choice: Choice) => {
    if (!flow.canChoose()) return;
    handles.chooseA.disabled = true;
    handles.chooseB.disabled = true;
    const status = await flow.choose(choice);
    if (status === "failed") {
      showFailureBanner(handles, flow, () => render());
    } else if (status === "conflict") {
      const last = flow.events[flow.events.length - 1];
      const detail = last?.kind === "conflict" ? last.detail : "";
      showBanner(
        handles,
        "A different answer for this part was already on file; " +
          `the original was kept (${detail}).`,
      );
    } else {
      clearBanner(handles);
    }
    render();
  };

  handles.chooseA.addEventListener("click", () => void submit("a"));
  handles.chooseB.addEventListener("click", () => void submit("b"));

  document.addEventListener("keydown", (ev) => {
    if (ev.target instanceof HTMLInputElement) return;
    if (ev.key === "a") void submit("a");
    if (ev.key === "b") void submit("b");
    if (ev.key === "1" || ev.key === "2") {
      const audio = handles.card.querySelectorAll("audio");
      const idx = ev.key === "1" ? 0 : 1;
      const which = audio[audio.length - 2 + idx];
      if (which) void which.play();
    }
  });

  const render = () => {
    const cur = flow.current;
    if (cur === null) {
      renderDoneScreen(root, flow);
      return;
    }
    const pos = flow.position();
    handles.progress.textContent = pos
      ? `Section ${pos.section} of ${pos.sections} - part ${pos.part} of ${pos.parts}`
      : "";
    if (cur.item.item_id !== shownItemId) {
      shownItemId = cur.item.item_id;
      buildCard(handles.card, client, flow, cur.item.item_id, render);
    }
    const open = flow.canChoose();
    handles.chooseA.disabled = !open;
    handles.chooseB.disabled = !open;
    handles.hint.textContent = open
      ? "Pick the sample that answers the question (or press a / b)."
      : "Play both samples to the end to unlock the choice buttons.";
  };

  render();
}

function buildCard(
  card: HTMLElement,
  client: ApiClient,
  flow: SessionFlow,
  itemId: string,
  onChange: () => void,
): void {
  const cur = flow.current;
  if (cur === null || cur.item.item_id !== itemId) return;
  card.innerHTML = "";
  card.append(el("h2", undefined, PART_TITLES[cur.item.part] ?? cur.item.part));
  card.append(el("p", "prompt", cur.item.prompt));

  if (cur.item.reference_token !== null) {
    const refBlock = el("div", "sample reference");
    refBlock.append(el("span", "label", "Reference"));
    const ref = document.createElement("audio");
    ref.controls = true;
    ref.preload = "none";
    ref.src = client.audioUrl(cur.item.reference_token);
    refBlock.append(ref);
    card.append(refBlock);
  }

  for (const slot of ["a", "b"] as const) {
    const block = el("div", "sample");
    block.append(el("span", "label", `Sample ${slot.toUpperCase()}`));
    const audio = document.createElement("audio");
    audio.controls = true;
    audio.preload = "none";
    audio.src = client.audioUrl(slot === "a" ? cur.item.a_token : cur.item.b_token);
    audio.addEventListener("ended", () => {
      // gate opens only when playback ran to the end, not on press of play
      if (flow.current?.item.item_id === itemId) {
        flow.markPlayed(slot);
        onChange();
      }
    });
    block.append(audio);
    card.append(block);
  }
}

function showBanner(handles: Handles, message: string): void {
  handles.banner.innerHTML = "";
  handles.banner.append(el("span", undefined, message));
  const dismiss = el("button", "dismiss", "Dismiss");
  dismiss.addEventListener("click", () => clearBanner(handles));
  handles.banner.append(dismiss);
  handles.banner.classList.add("visible");
}

function showFailureBanner(handles: Handles, flow: SessionFlow, rerender: () => void): void {
  handles.banner.innerHTML = "";
  const cur = flow.current;
  handles.banner.append(
    el(
      "span",
      undefined,
      `Could not reach the server (${cur?.detail ?? "unknown error"}). ` +
        "Your answer is kept locally.",
    ),
  );
  const retry = el("button", "retry", "Retry");
  retry.addEventListener("click", () => {
    void flow.retry().then((status) => {
      if (status !== "failed") clearBanner(handles);
      rerender();
    });
  });
  handles.banner.append(retry);
  handles.banner.classList.add("visible");
}

function clearBanner(handles: Handles): void {
  handles.banner.innerHTML = "";
  handles.banner.classList.remove("visible");
}

function renderDoneScreen(root: HTMLElement, flow: SessionFlow): void {
  root.innerHTML = "";
  const box = el("div", "entry");
  box.append(el("h1", undefined, "All done"));
  const accepted = flow.allItems.filter(
    (s) => s.status === "accepted" || s.status === "duplicate",
  ).length;
  const conflicts = flow.allItems.filter((s) => s.status === "conflict").length;
  box.append(
    el(
      "p",
      undefined,
      `Thank you. ${accepted} of ${flow.allItems.length} answers are on file.` +
        (conflicts > 0
          ? ` ${conflicts} part(s) already had a different answer recorded earlier.`
          : ""),
    ),
  );
  root.append(box);
}
