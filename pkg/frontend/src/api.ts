// Typed client for the labeling-service HTTP endpoints.

export interface Playback {
  trajectory_id: string;
  task_id: string;
  length: number;
  link_lengths: number[];
  joint_angles: number[][];
  object_states: number[][];
}

export interface PairPayload {
  pair_id: string;
  task_id: string;
  left: Playback;
  right: Playback;
  frames_per_second: number;
}

export type Verdict = "LEFT" | "RIGHT" | "NOT_SURE";

export interface Stats {
  pending: number;
  completed: number;
  by_verdict: Record<string, number>;
  by_labeler: Record<string, number>;
  sessions: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class LabelApi {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async createSession(labelerId: string, taskFilter?: string): Promise<string> {
    const res = await this.fetchImpl(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ labeler_id: labelerId, task_filter: taskFilter ?? null }),
    });
    if (!res.ok) throw new Error(`createSession failed: ${res.status}`);
    const body = await res.json();
    return body.session_id as string;
  }

  /** Next unlabeled pair, or null when the queue is exhausted (204). */
  async nextPair(sessionId: string): Promise<PairPayload | null> {
    const res = await this.fetchImpl(`${this.baseUrl}/sessions/${sessionId}/next`);
    if (res.status === 204) return null;
    if (!res.ok) throw new Error(`nextPair failed: ${res.status}`);
    return (await res.json()) as PairPayload;
  }

  async submitLabel(sessionId: string, pairId: string, verdict: Verdict): Promise<void> {
    const res = await this.fetchImpl(`${this.baseUrl}/sessions/${sessionId}/labels`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ pair_id: pairId, verdict }),
    });
    if (res.status === 409) throw new ConflictError(`pair ${pairId} already labeled`);
    if (res.status === 410) throw new LeaseExpiredError(`lease expired on ${pairId}`);
    if (!res.ok) throw new Error(`submitLabel failed: ${res.status}`);
  }

  async stats(): Promise<Stats> {
    const res = await this.fetchImpl(`${this.baseUrl}/stats`);
    if (!res.ok) throw new Error(`stats failed: ${res.status}`);
    return (await res.json()) as Stats;
  }
}

export class ConflictError extends Error {}
export class LeaseExpiredError extends Error {}
