// Microphone capture at the service's PCM rate. Uses an AudioWorklet when
// available and falls back to a ScriptProcessor; if the mic is denied the
// console still works keyboard-only (the server then applies plain +/-1
// feedback).

import { PCM_SAMPLE_RATE } from './protocol.js';

const WORKLET_SOURCE = `
class CaptureProcessor extends AudioWorkletProcessor {
  process(inputs) {
    const channel = inputs[0] && inputs[0][0];
    if (channel && channel.length) {
      const copy = new Float32Array(channel.length);
      copy.set(channel);
      this.port.postMessage(copy, [copy.buffer]);
    }
    return true;
  }
}
registerProcessor('capture-processor', CaptureProcessor);
`;

export class MicCapture {
  private context: AudioContext | null = null;
  private stream: MediaStream | null = null;
  private onSamples: ((samples: Float32Array) => void) | null = null;
  available = false;

  async init(): Promise<boolean> {
    try {
      this.stream = await navigator.mediaDevices.getUserMedia({ audio: true });
      this.context = new AudioContext({ sampleRate: PCM_SAMPLE_RATE });
      const source = this.context.createMediaStreamSource(this.stream);
      if (this.context.audioWorklet) {
        const blob = new Blob([WORKLET_SOURCE], { type: 'application/javascript' });
        await this.context.audioWorklet.addModule(URL.createObjectURL(blob));
        const node = new AudioWorkletNode(this.context, 'capture-processor');
        node.port.onmessage = (event) => this.onSamples?.(event.data);
        source.connect(node);
      } else {
        const node = this.context.createScriptProcessor(4096, 1, 1);
        node.onaudioprocess = (event) => {
          this.onSamples?.(new Float32Array(event.inputBuffer.getChannelData(0)));
        };
        source.connect(node);
        node.connect(this.context.destination);
      }
      this.available = true;
    } catch {
      this.available = false;
    }
    return this.available;
  }

  setSink(callback: ((samples: Float32Array) => void) | null): void {
    this.onSamples = callback;
  }
}
