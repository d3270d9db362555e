// Wire protocol shared with the live teaching service. JSON text frames
// carry control messages; binary frames carry raw 16-bit PCM chunks.

export const PCM_SAMPLE_RATE = 22050;
export const MAX_PCM_FRAME_BYTES = 64 * 1024;

export type Phase = 'BASELINE_RECORDING' | 'PRACTICE' | 'GAME' | 'DONE';
export type Word = 'yes' | 'no';

export interface MapSpec {
  rows: number;
  cols: number;
  walls: [number, number][];
  nut: [number, number];
  squirrel: [number, number];
  bombs: [number, number][];
  start: [number, number];
  start_direction: string;
}

export interface StateMessage {
  type: 'state';
  tick: number;
  t?: number;
  phase: Phase;
  agent: { row: number; col: number; has_nut: boolean };
  score: number;
  terminal: boolean;
  /** per-action H predictions; present only when the server runs with its
   * debug flag and the console shows them only behind ?debug=1 */
  h_values?: number[];
}

export interface PhaseMessage {
  type: 'phase';
  phase: Phase;
  session_id?: string;
  map?: MapSpec;
  tick_seconds?: number;
}

export interface AckMessage {
  type: 'ack';
  ok: boolean;
  value?: number;
  credited_steps?: number;
  buffered?: number;
}

export interface ErrorMessage {
  type: 'error';
  code: string;
  detail: string;
}

export type ServerMessage = StateMessage | PhaseMessage | AckMessage | ErrorMessage;

export interface UtteranceEnvelope {
  type: 'utterance';
  word: Word;
  t_start: number;
  t_end: number;
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== 'object' || data === null) return null;
  const message = data as { type?: unknown };
  switch (message.type) {
    case 'state': {
      const m = data as StateMessage;
      if (!m.agent || typeof m.agent.row !== 'number' || typeof m.score !== 'number') {
        return null;
      }
      return m;
    }
    case 'phase': {
      const m = data as PhaseMessage;
      return typeof m.phase === 'string' ? m : null;
    }
    case 'ack':
      return data as AckMessage;
    case 'error': {
      const m = data as ErrorMessage;
      return typeof m.code === 'string' ? m : null;
    }
    default:
      return null;
  }
}

export function startMessage(participant: string): string {
  return JSON.stringify({ type: 'start', participant });
}

export function baselineDoneMessage(): string {
  return JSON.stringify({ type: 'baseline_audio', done: true });
}

export function utteranceMessage(word: Word, tStart: number, tEnd: number): string {
  const envelope: UtteranceEnvelope = {
    type: 'utterance',
    word,
    t_start: tStart,
    t_end: tEnd,
  };
  return JSON.stringify(envelope);
}

export function endMessage(): string {
  return JSON.stringify({ type: 'end' });
}
