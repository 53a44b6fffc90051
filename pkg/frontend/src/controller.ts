// Session flow: fetch a pair, gate verdicts until both playbacks complete a
// loop, submit with retry/backoff, advance to the next pair.

import { ConflictError, LabelApi, PairPayload, Verdict } from "./api.js";
import { DualPlayback } from "./playback.js";

export type Phase = "loading" | "reviewing" | "submitting" | "done" | "error";

export interface SessionView {
  phase: Phase;
  pair: PairPayload | null;
  playback: DualPlayback | null;
  labeled: number;
  message: string;
}

export interface ControllerOptions {
  maxRetries?: number;
  backoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class SessionController {
  view: SessionView = {
    phase: "loading", pair: null, playback: null, labeled: 0, message: "",
  };
  private sessionId = "";
  private inFlight = false;
  private readonly maxRetries: number;
  private readonly backoffMs: number;
  private readonly sleep: (ms: number) => Promise<void>;

  constructor(private api: LabelApi, private labelerId: string,
              options: ControllerOptions = {}) {
    this.maxRetries = options.maxRetries ?? 4;
    this.backoffMs = options.backoffMs ?? 250;
    this.sleep = options.sleep ?? defaultSleep;
  }

  async start(taskFilter?: string): Promise<void> {
    this.sessionId = await this.api.createSession(this.labelerId, taskFilter);
    await this.loadNext();
  }

  async loadNext(): Promise<void> {
    this.view.phase = "loading";
    const pair = await this.api.nextPair(this.sessionId);
    if (pair === null) {
      this.view.phase = "done";
      this.view.pair = null;
      this.view.playback = null;
      this.view.message = `all pairs labeled (${this.view.labeled} this session)`;
      return;
    }
    this.view.pair = pair;
    this.view.playback = new DualPlayback(pair.left.length, pair.frames_per_second);
    this.view.phase = "reviewing";
    this.view.message = "";
  }

  /** Verdict buttons stay inert until both sides have played through once. */
  get canSubmit(): boolean {
    return this.view.phase === "reviewing"
      && this.view.playback !== null
      && this.view.playback.completedOnce
      && !this.inFlight;
  }

  replay(): void {
    this.view.playback?.restart();
  }

  /**
   * Submits the verdict for the pair as displayed; retries transient network
   * failures with backoff, keeping the verdict until acknowledged. A conflict
   * (already labeled) is treated as acknowledged and the session advances.
   */
  async submit(verdict: Verdict): Promise<boolean> {
    if (!this.canSubmit || this.view.pair === null) return false;
    this.inFlight = true;
    this.view.phase = "submitting";
    const pairId = this.view.pair.pair_id;
    try {
      for (let attempt = 0; ; attempt++) {
        try {
          await this.api.submitLabel(this.sessionId, pairId, verdict);
          break;
        } catch (err) {
          if (err instanceof ConflictError) break;
          if (attempt >= this.maxRetries) throw err;
          await this.sleep(this.backoffMs * 2 ** attempt);
        }
      }
      this.view.labeled += 1;
      await this.loadNext();
      return true;
    } catch (err) {
      this.view.phase = "error";
      this.view.message = `submit failed: ${String(err)}`;
      return false;
    } finally {
      this.inFlight = false;
    }
  }

  /** Keyboard bindings: left/right arrows, space for NOT_SURE, r to replay. */
  async handleKey(key: string): Promise<void> {
    if (key === "r") {
      this.replay();
      return;
    }
    const mapping: Record<string, Verdict> = {
      ArrowLeft: "LEFT",
      ArrowRight: "RIGHT",
      " ": "NOT_SURE",
    };
    const verdict = mapping[key];
    if (verdict) await this.submit(verdict);
  }
}
