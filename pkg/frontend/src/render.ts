// Canvas painting for the teacher view. Pure function of the GridView.

import type { GridView } from './gridModel.js';

const COLORS: Record<string, string> = {
  empty: '#f4f1ea',
  wall: '#4a4a4a',
  nut: '#c98a2b',
  squirrel: '#7a5230',
  bomb: '#c0392b',
};

export function drawGrid(canvas: HTMLCanvasElement, view: GridView): void {
  const ctx = canvas.getContext('2d');
  if (!ctx || view.rows === 0) return;
  const cell = Math.floor(Math.min(canvas.width / view.cols, canvas.height / view.rows));
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let r = 0; r < view.rows; r++) {
    for (let c = 0; c < view.cols; c++) {
      ctx.fillStyle = COLORS[view.cells[r][c]];
      ctx.fillRect(c * cell, r * cell, cell - 1, cell - 1);
      const kind = view.cells[r][c];
      if (kind === 'nut' || kind === 'squirrel' || kind === 'bomb') {
        ctx.fillStyle = '#ffffff';
        ctx.font = `${Math.floor(cell * 0.5)}px sans-serif`;
        ctx.textAlign = 'center';
        ctx.textBaseline = 'middle';
        const glyph = kind === 'nut' ? 'N' : kind === 'squirrel' ? 'S' : 'B';
        ctx.fillText(glyph, c * cell + cell / 2, r * cell + cell / 2);
      }
    }
  }
  if (view.agent) {
    ctx.fillStyle = view.agent.hasNut ? '#27ae60' : '#2980b9';
    ctx.beginPath();
    ctx.arc(view.agent.col * cell + cell / 2, view.agent.row * cell + cell / 2,
            cell * 0.35, 0, 2 * Math.PI);
    ctx.fill();
  }
}

export function updateHud(view: GridView, elements: {
  phase: HTMLElement; score: HTMLElement; banner: HTMLElement;
}): void {
  elements.phase.textContent = view.phase;
  elements.score.textContent = `score ${view.score.toFixed(1)} · tick ${view.tick}`;
  if (view.errorBanner) {
    elements.banner.textContent = view.errorBanner;
    elements.banner.style.display = 'block';
  } else {
    elements.banner.style.display = 'none';
  }
}
