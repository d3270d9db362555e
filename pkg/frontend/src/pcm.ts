// Float32 capture buffers -> 16-bit little-endian PCM frames no larger
// than the service's per-frame cap.

import { MAX_PCM_FRAME_BYTES } from './protocol.js';

export function floatTo16BitPcm(samples: Float32Array): ArrayBuffer {
  const out = new ArrayBuffer(samples.length * 2);
  const view = new DataView(out);
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1, samples[i]));
    view.setInt16(i * 2, Math.round(clamped * 32767), true);
  }
  return out;
}

export function chunkPcm(buffer: ArrayBuffer,
                         maxBytes: number = MAX_PCM_FRAME_BYTES): ArrayBuffer[] {
  const chunks: ArrayBuffer[] = [];
  for (let offset = 0; offset < buffer.byteLength; offset += maxBytes) {
    chunks.push(buffer.slice(offset, Math.min(offset + maxBytes, buffer.byteLength)));
  }
  return chunks;
}

/** Concatenate capture callbacks into one transferable buffer. */
export function mergeBuffers(parts: Float32Array[]): Float32Array {
  let total = 0;
  for (const part of parts) total += part.length;
  const merged = new Float32Array(total);
  let offset = 0;
  for (const part of parts) {
    merged.set(part, offset);
    offset += part.length;
  }
  return merged;
}
