// Typed client for the listening-test HTTP+JSON API.

export interface SessionInfo {
  session_id: string;
  listener_id: string;
  cursor: number;
  total: number;
  status: "active" | "complete";
}

export interface StimulusStep {
  done: boolean;
  stimulus_id?: string;
  audio_url?: string;
  reference_url?: string;
  index?: number;
  total?: number;
}

export interface RatingSubmission {
  stimulus_id: string;
  mos: number;
  dmos: number;
  dialect_choice: string;
  token: string;
}

export interface RatingResult {
  accepted: boolean;
  duplicate?: boolean;
  cursor?: number;
  reason?: string;
  expected_stimulus_id?: string;
}

export interface ReferenceSample {
  category: string;
  audio_url: string;
  available: boolean;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, readonly status: number, readonly detail?: unknown) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly fetchImpl: FetchLike,
    private readonly base: string = "",
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.base + path, init);
    const body = await res.json().catch(() => undefined);
    if (!res.ok) {
      throw new ApiError(`${path} failed (${res.status})`, res.status, (body as { detail?: unknown })?.detail);
    }
    return body as T;
  }

  createSession(listenerId: string): Promise<SessionInfo> {
    return this.request<SessionInfo>("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ listener_id: listenerId }),
    });
  }

  nextStimulus(sessionId: string): Promise<StimulusStep> {
    return this.request<StimulusStep>(`/sessions/${sessionId}/next`);
  }

  async submitRating(sessionId: string, rating: RatingSubmission): Promise<RatingResult> {
    const res = await this.fetchImpl(`${this.base}/sessions/${sessionId}/ratings`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(rating),
    });
    const body = await res.json().catch(() => undefined);
    if (res.ok) {
      return body as RatingResult;
    }
    // 409 carries the structured rejection in `detail`
    const detail = (body as { detail?: RatingResult })?.detail;
    if (res.status === 409 && detail) {
      return detail;
    }
    throw new ApiError(`rating failed (${res.status})`, res.status, detail);
  }

  references(): Promise<{ categories: ReferenceSample[] }> {
    return this.request<{ categories: ReferenceSample[] }>("/references");
  }
}
