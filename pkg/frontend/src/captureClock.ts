// Capture-time bookkeeping. Utterances are timestamped with the client's
// capture clock mapped onto the server's tick clock: a single ping round
// trip at connect estimates the offset, and every key hold records its
// start/end against that shared timeline.

export interface HoldTiming {
  tStart: number;
  tEnd: number;
  durationMs: number;
}

export class CaptureClock {
  private offsetS = 0;

  /** Offset from one ping: assume symmetric latency, so the server clock at
   * local midpoint is serverT. */
  negotiate(localSentMs: number, localReceivedMs: number, serverT: number): number {
    const midpointS = (localSentMs + localReceivedMs) / 2000;
    this.offsetS = serverT - midpointS;
    return this.offsetS;
  }

  get offsetSeconds(): number {
    return this.offsetS;
  }

  toServerTime(localMs: number): number {
    return localMs / 1000 + this.offsetS;
  }
}

/** Tracks one press-and-hold capture window per word key. */
export class HoldTracker {
  private startedMs: number | null = null;

  get holding(): boolean {
    return this.startedMs !== null;
  }

  press(nowMs: number): boolean {
    if (this.startedMs !== null) return false;  // key auto-repeat
    this.startedMs = nowMs;
    return true;
  }

  release(nowMs: number, clock: CaptureClock): HoldTiming | null {
    if (this.startedMs === null) return null;
    const started = this.startedMs;
    this.startedMs = null;
    if (nowMs <= started) return null;
    return {
      tStart: clock.toServerTime(started),
      tEnd: clock.toServerTime(nowMs),
      durationMs: nowMs - started,
    };
  }
}
