import { MicCapture } from './audioCapture.js';
import { TeachConsoleClient } from './client.js';
import { drawGrid, updateHud } from './render.js';
import type { Word } from './protocol.js';

const BASELINE_PARAGRAPH =
  'Please read this short paragraph aloud in your normal speaking voice. ' +
  'The little robot is learning how you say yes and no, so speak naturally ' +
  'and clearly until the bar below fills up, then press Enter.';

function wsUrl(): string {
  const proto = location.protocol === 'https:' ? 'wss' : 'ws';
  return `${proto}://${location.host}/ws`;
}

function main(): void {
  const canvas = document.getElementById('grid') as HTMLCanvasElement;
  const phaseEl = document.getElementById('phase')!;
  const scoreEl = document.getElementById('score')!;
  const bannerEl = document.getElementById('banner')!;
  const promptEl = document.getElementById('prompt')!;
  const micEl = document.getElementById('mic')!;

  const socket = new WebSocket(wsUrl());
  socket.binaryType = 'arraybuffer';
  const mic = new MicCapture();

  const debugOverlay = new URLSearchParams(location.search).get('debug') === '1';
  const client = new TeachConsoleClient(socket, {
    participant: new URLSearchParams(location.search).get('participant') ?? 'browser',
    onViewChange: (view) => {
      drawGrid(canvas, view);
      updateHud(view, { phase: phaseEl, score: scoreEl, banner: bannerEl });
      if (debugOverlay && view.hValues) {
        scoreEl.textContent += ' · H [' +
          view.hValues.map((v) => v.toFixed(2)).join(', ') + ']';
      }
      promptEl.textContent =
        view.phase === 'BASELINE_RECORDING' ? BASELINE_PARAGRAPH :
        view.phase === 'DONE' ? 'Session complete. Thanks for teaching!' :
        'Hold Y to say YES, N to say NO while the robot moves.';
    },
  });

  socket.onopen = async () => {
    const ok = await mic.init();
    micEl.textContent = ok ? 'mic ready' : 'mic unavailable - keyboard-only feedback';
    mic.setSink((samples) => client.addCapturedAudio(samples));
    client.start();
  };
  socket.onmessage = (event) => {
    if (typeof event.data === 'string') client.handleFrame(event.data);
  };
  socket.onclose = () => {
    bannerEl.textContent = 'connection closed';
    bannerEl.style.display = 'block';
  };

  const keyWord = (event: KeyboardEvent): Word | null =>
    event.key === 'y' || event.key === 'Y' ? 'yes' :
    event.key === 'n' || event.key === 'N' ? 'no' : null;

  document.addEventListener('keydown', (event) => {
    if (event.repeat) return;
    if (event.key === 'Enter' && client.phase === 'BASELINE_RECORDING') {
      client.finishBaseline();
      return;
    }
    const word = keyWord(event);
    if (word && client.pressWord(word)) {
      micEl.textContent = `recording ${word.toUpperCase()}...`;
    }
  });
  document.addEventListener('keyup', (event) => {
    const word = keyWord(event);
    if (word) {
      const sent = client.releaseWord(word);
      if (sent) {
        micEl.textContent =
          `sent ${word.toUpperCase()} (${(sent.durationMs / 1000).toFixed(2)} s, ` +
          `${sent.chunks} audio chunk${sent.chunks === 1 ? '' : 's'})`;
      }
    }
  });

  // during the baseline phase every captured sample streams to the server
  setInterval(() => {
    if (client.phase === 'BASELINE_RECORDING' && mic.available) {
      mic.setSink((samples) => {
        // baseline audio goes out immediately as binary frames
        const pcm = new Int16Array(samples.length);
        for (let i = 0; i < samples.length; i++) {
          pcm[i] = Math.round(Math.max(-1, Math.min(1, samples[i])) * 32767);
        }
        socket.send(pcm.buffer);
      });
    } else if (mic.available) {
      mic.setSink((samples) => client.addCapturedAudio(samples));
    }
  }, 500);
}

main();
