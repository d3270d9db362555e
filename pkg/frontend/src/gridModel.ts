// View model for the teacher's grid. The model is a pure fold over server
// messages: nothing here ever simulates a move locally, so the view can
// only show what the server said last.

import type { MapSpec, Phase, ServerMessage } from './protocol.js';

export type CellKind = 'empty' | 'wall' | 'nut' | 'squirrel' | 'bomb';

export interface GridView {
  rows: number;
  cols: number;
  cells: CellKind[][];
  agent: { row: number; col: number; hasNut: boolean } | null;
  score: number;
  tick: number;
  phase: Phase;
  terminal: boolean;
  errorBanner: string | null;
  lastAckValue: number | null;
  hValues: number[] | null;
}

export function emptyView(): GridView {
  return {
    rows: 0,
    cols: 0,
    cells: [],
    agent: null,
    score: 0,
    tick: 0,
    phase: 'BASELINE_RECORDING',
    terminal: false,
    errorBanner: null,
    lastAckValue: null,
    hValues: null,
  };
}

export function buildCells(map: MapSpec): CellKind[][] {
  const cells: CellKind[][] = [];
  for (let r = 0; r < map.rows; r++) {
    cells.push(new Array<CellKind>(map.cols).fill('empty'));
  }
  for (const [r, c] of map.walls) cells[r][c] = 'wall';
  cells[map.nut[0]][map.nut[1]] = 'nut';
  cells[map.squirrel[0]][map.squirrel[1]] = 'squirrel';
  for (const [r, c] of map.bombs) cells[r][c] = 'bomb';
  return cells;
}

/** Fold one server message into the view; unknown input sets the error
 * banner but never drops the connection state. */
export function applyMessage(view: GridView, message: ServerMessage | null): GridView {
  if (message === null) {
    return { ...view, errorBanner: 'malformed message from server' };
  }
  switch (message.type) {
    case 'phase': {
      const next = { ...view, phase: message.phase, errorBanner: null };
      if (message.map) {
        next.rows = message.map.rows;
        next.cols = message.map.cols;
        next.cells = buildCells(message.map);
      }
      return next;
    }
    case 'state':
      return {
        ...view,
        agent: {
          row: message.agent.row,
          col: message.agent.col,
          hasNut: message.agent.has_nut,
        },
        score: message.score,
        tick: message.tick,
        phase: message.phase,
        terminal: message.terminal,
        errorBanner: null,
        hValues: message.h_values ?? null,
      };
    case 'ack':
      return {
        ...view,
        lastAckValue: typeof message.value === 'number' ? message.value : view.lastAckValue,
      };
    case 'error':
      return { ...view, errorBanner: `${message.code}: ${message.detail}` };
  }
}
