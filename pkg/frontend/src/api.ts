// Typed client for the arena HTTP/JSON + event-stream API.

export type Outcome = "leftvote" | "rightvote" | "tievote" | "bothbad_vote";

export const OUTCOMES: readonly Outcome[] = [
  "leftvote",
  "rightvote",
  "tievote",
  "bothbad_vote",
];

export interface SessionInfo {
  session_id: string;
  sides: string[];
}

export interface StreamEvent {
  side: "A" | "B";
  delta?: string;
  done?: boolean;
  error?: string;
}

export interface VoteReveal {
  model_left: string;
  model_right: string;
}

export interface LeaderboardRow {
  model: string;
  rating: number;
  battles?: number;
  lower?: number | null;
  upper?: number | null;
}

export interface LeaderboardResponse {
  created_at: number | null;
  config_fingerprint?: string;
  models: LeaderboardRow[];
}

export interface SliceKey {
  axis: "question_category" | "image_domain";
  value: string;
}

export interface GenerationParams {
  temperature?: number;
  top_p?: number;
  max_tokens?: number;
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = `${resp.status}`;
    try {
      const body = (await resp.json()) as { error?: string };
      if (body.error) detail = body.error;
    } catch {
      // non-JSON error body; keep the status code
    }
    throw new Error(detail);
  }
  return (await resp.json()) as T;
}

/** Parse an SSE byte stream into "data:" payload strings, incrementally. */
export class SSEParser {
  private buffer = "";

  push(chunk: string): string[] {
    this.buffer += chunk;
    const frames: string[] = [];
    let idx: number;
    while ((idx = this.buffer.indexOf("\n\n")) >= 0) {
      const frame = this.buffer.slice(0, idx);
      this.buffer = this.buffer.slice(idx + 2);
      for (const line of frame.split("\n")) {
        if (line.startsWith("data: ")) frames.push(line.slice(6));
        else if (line.startsWith("data:")) frames.push(line.slice(5));
      }
    }
    return frames;
  }
}

export class ArenaClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = globalThis.fetch.bind(globalThis),
  ) {}

  async createSession(
    imageB64: string,
    params?: GenerationParams,
  ): Promise<SessionInfo> {
    const resp = await this.fetchFn(`${this.baseUrl}/session`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image_b64: imageB64, params }),
    });
    return asJson<SessionInfo>(resp);
  }

  /** POST a user message; yield each stream event as the server emits it. */
  async *streamMessage(
    sessionId: string,
    text: string,
  ): AsyncGenerator<StreamEvent> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/session/${encodeURIComponent(sessionId)}/message`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text }),
      },
    );
    if (!resp.ok || !resp.body) {
      throw new Error(`stream failed: ${resp.status}`);
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SSEParser();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      for (const payload of parser.push(decoder.decode(value, { stream: true }))) {
        yield JSON.parse(payload) as StreamEvent;
      }
    }
  }

  async vote(
    sessionId: string,
    outcome: Outcome,
    reason?: string,
  ): Promise<VoteReveal> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/session/${encodeURIComponent(sessionId)}/vote`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ outcome, reason }),
      },
    );
    return asJson<VoteReveal>(resp);
  }

  async leaderboard(slice?: SliceKey): Promise<LeaderboardResponse> {
    const params = new URLSearchParams();
    if (slice) {
      params.set("slice_axis", slice.axis);
      params.set("slice_value", slice.value);
    }
    const qs = params.toString();
    const resp = await this.fetchFn(
      `${this.baseUrl}/leaderboard${qs ? `?${qs}` : ""}`,
    );
    return asJson<LeaderboardResponse>(resp);
  }

  async models(): Promise<string[]> {
    const resp = await this.fetchFn(`${this.baseUrl}/models`);
    const body = await asJson<{ models: string[] }>(resp);
    return body.models;
  }
}
