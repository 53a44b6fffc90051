// Synchronized dual playback: one frame clock drives both sides, loops by
// default, and reports when each side has completed a full pass (verdict
// controls stay disabled until both have).

export interface PlaybackState {
  cursor: number;
  playing: boolean;
  speed: number;
  loops: number;
}

export class DualPlayback {
  state: PlaybackState = { cursor: 0, playing: true, speed: 1.0, loops: 0 };
  private fractional = 0;

  constructor(
    public readonly length: number,
    public readonly framesPerSecond: number,
  ) {
    if (length <= 0) throw new Error("playback needs at least one frame");
  }

  /** Advance by wall-clock dt (seconds); returns the current frame index. */
  tick(dt: number): number {
    if (!this.state.playing) return this.state.cursor;
    this.fractional += dt * this.framesPerSecond * this.state.speed;
    while (this.fractional >= 1) {
      this.fractional -= 1;
      this.state.cursor += 1;
      if (this.state.cursor >= this.length) {
        this.state.cursor = 0;
        this.state.loops += 1;
      }
    }
    return this.state.cursor;
  }

  get completedOnce(): boolean {
    return this.state.loops >= 1;
  }

  restart(): void {
    this.state.cursor = 0;
    this.state.loops = 0;
    this.fractional = 0;
    this.state.playing = true;
  }

  setSpeed(multiplier: number): void {
    this.state.speed = Math.min(2.0, Math.max(0.5, multiplier));
  }

  togglePause(): void {
    this.state.playing = !this.state.playing;
  }
}
