// Teaching-console client: wires the socket, the authoritative grid view,
// and the push-to-talk capture flow together. The socket is injected so
// the whole flow is testable without a browser or a server.

import { CaptureClock, HoldTracker } from './captureClock.js';
import { applyMessage, emptyView, GridView } from './gridModel.js';
import { chunkPcm, floatTo16BitPcm, mergeBuffers } from './pcm.js';
import {
  baselineDoneMessage,
  parseServerMessage,
  ServerMessage,
  startMessage,
  utteranceMessage,
  Word,
} from './protocol.js';

export interface SocketLike {
  send(data: string | ArrayBuffer): void;
  close(): void;
}

export interface ClientOptions {
  participant: string;
  now?: () => number;
  onViewChange?: (view: GridView) => void;
}

export class TeachConsoleClient {
  view: GridView = emptyView();
  readonly clock = new CaptureClock();
  private holds = new Map<Word, HoldTracker>([
    ['yes', new HoldTracker()],
    ['no', new HoldTracker()],
  ]);
  private captureParts: Float32Array[] = [];
  private capturing: Word | null = null;
  private clockNegotiated = false;
  private readonly now: () => number;

  constructor(private socket: SocketLike, private options: ClientOptions) {
    this.now = options.now ?? (() => performance.now());
  }

  start(): void {
    this.socket.send(startMessage(this.options.participant));
  }

  finishBaseline(): void {
    this.socket.send(baselineDoneMessage());
  }

  /** Feed one raw server frame; returns the parsed message for callers. */
  handleFrame(raw: string): ServerMessage | null {
    const message = parseServerMessage(raw);
    this.view = applyMessage(this.view, message);
    if (message?.type === 'state' && typeof message.t === 'number' && !this.clockNegotiated) {
      const received = this.now();
      this.clock.negotiate(received, received, message.t);
      this.clockNegotiated = true;
    }
    this.options.onViewChange?.(this.view);
    return message;
  }

  /** Key down on Y/N: opens the capture window for that word. */
  pressWord(word: Word): boolean {
    const tracker = this.holds.get(word)!;
    if (this.capturing !== null && this.capturing !== word) return false;
    if (!tracker.press(this.now())) return false;
    this.capturing = word;
    this.captureParts = [];
    return true;
  }

  /** Audio callback while a key is held. */
  addCapturedAudio(samples: Float32Array): void {
    if (this.capturing !== null) {
      this.captureParts.push(samples);
    }
  }

  /** Key up: ships PCM chunks (if any) plus the utterance envelope. */
  releaseWord(word: Word): { durationMs: number; chunks: number } | null {
    const tracker = this.holds.get(word)!;
    const timing = tracker.release(this.now(), this.clock);
    if (timing === null || this.capturing !== word) {
      this.capturing = null;
      return null;
    }
    this.capturing = null;
    let chunkCount = 0;
    if (this.captureParts.length > 0) {
      const pcm = floatTo16BitPcm(mergeBuffers(this.captureParts));
      for (const chunk of chunkPcm(pcm)) {
        this.socket.send(chunk);
        chunkCount++;
      }
    }
    this.captureParts = [];
    this.socket.send(utteranceMessage(word, timing.tStart, timing.tEnd));
    return { durationMs: timing.durationMs, chunks: chunkCount };
  }

  get phase() {
    return this.view.phase;
  }
}
