import { describe, expect, it } from 'vitest';

import {
  baselineDoneMessage,
  parseServerMessage,
  startMessage,
  utteranceMessage,
} from '../src/protocol';

describe('parseServerMessage', () => {
  it('accepts a well-formed state message', () => {
    const raw = JSON.stringify({
      type: 'state', tick: 3, t: 2.5, phase: 'GAME',
      agent: { row: 2, col: 4, has_nut: false }, score: -3.0, terminal: false,
    });
    const message = parseServerMessage(raw);
    expect(message?.type).toBe('state');
    if (message?.type === 'state') {
      expect(message.agent.col).toBe(4);
    }
  });

  it('rejects malformed json', () => {
    expect(parseServerMessage('{nope')).toBeNull();
  });

  it('rejects state without an agent', () => {
    expect(parseServerMessage(JSON.stringify({ type: 'state', score: 1 }))).toBeNull();
  });

  it('rejects unknown message types', () => {
    expect(parseServerMessage(JSON.stringify({ type: 'mystery' }))).toBeNull();
  });

  it('passes errors through with their code', () => {
    const message = parseServerMessage(JSON.stringify({
      type: 'error', code: 'PHASE_VIOLATION', detail: 'nope',
    }));
    expect(message?.type).toBe('error');
  });
});

describe('client messages', () => {
  it('start carries the participant', () => {
    expect(JSON.parse(startMessage('p7'))).toEqual({ type: 'start', participant: 'p7' });
  });

  it('utterance envelope carries word and window', () => {
    const envelope = JSON.parse(utteranceMessage('no', 1.25, 1.85));
    expect(envelope).toEqual({ type: 'utterance', word: 'no', t_start: 1.25, t_end: 1.85 });
  });

  it('baseline done flag set', () => {
    expect(JSON.parse(baselineDoneMessage()).done).toBe(true);
  });
});
