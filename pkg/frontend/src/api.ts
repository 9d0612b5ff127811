/**
 * Typed client for the listening-test backend.
 *
 * Participant routes only: session index, blinded session detail, audio by
 * opaque token, and choice submission. The aggregate route is admin-side
 * and deliberately has no client here.
 */

export interface SessionSummary {
  session_id: string;
  n_items: number;
}

export interface SessionItem {
  item_id: string;
  /** "naturalness" | "content" | "similarity" */
  part: string;
  prompt: string;
  a_token: string;
  b_token: string;
  /** null for the naturalness part, which plays without a reference */
  reference_token: string | null;
}

export interface SessionDetail {
  session_id: string;
  items: SessionItem[];
}

export type Choice = "a" | "b";

/**
 * Every way a submission can end short of a transport failure.
 * - accepted: new record stored (HTTP 201)
 * - duplicate: same answer already on file, acknowledged (HTTP 200)
 * - conflict: a different answer is on file and stays there (HTTP 409)
 */
export type SubmitResult =
  | { kind: "accepted" }
  | { kind: "duplicate" }
  | { kind: "conflict"; detail: string };

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    // wrap instead of storing fetch directly: browsers require fetch to be
    // called with the global as its receiver
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async getJson<T>(path: string): Promise<T> {
    let res: Response;
    try {
      res = await this.fetchFn(this.base + path);
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`);
    }
    if (!res.ok) {
      throw new ApiError(`GET ${path} failed (${res.status})`, res.status);
    }
    return (await res.json()) as T;
  }

  async health(): Promise<{ status: string; sessions: number }> {
    return this.getJson("/api/health");
  }

  async listSessions(): Promise<SessionSummary[]> {
    return this.getJson("/api/sessions");
  }

  async getSession(sessionId: string): Promise<SessionDetail> {
    return this.getJson(`/api/sessions/${encodeURIComponent(sessionId)}`);
  }

  /** URL for an <audio> element; the token never reveals the file behind it. */
  audioUrl(token: string): string {
    return `${this.base}/api/audio/${encodeURIComponent(token)}`;
  }

  async submitChoice(
    subject: string,
    sessionId: string,
    itemId: string,
    choice: Choice,
  ): Promise<SubmitResult> {
    let res: Response;
    try {
      res = await this.fetchFn(this.base + "/api/choices", {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({
          subject,
          session_id: sessionId,
          item_id: itemId,
          choice,
        }),
      });
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`);
    }
    if (res.status === 201) return { kind: "accepted" };
    if (res.status === 200) return { kind: "duplicate" };
    if (res.status === 409) {
      const body = (await res.json()) as { detail?: string };
      return { kind: "conflict", detail: body.detail ?? "answer already recorded" };
    }
    let detail = "";
    try {
      const body = (await res.json()) as { detail?: unknown };
      detail = typeof body.detail === "string" ? `: ${body.detail}` : "";
    } catch {
      // non-JSON error body; status alone will have to do
    }
    throw new ApiError(`submission rejected (${res.status})${detail}`, res.status);
  }
}
