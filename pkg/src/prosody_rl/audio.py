"""Prosodic feature extraction from yes/no utterances.

Turns mono PCM audio plus coarse word labels into per-utterance prosody
records: duration, repetition, pitch (Yin), energy (mean square) and
loudness (mean absolute amplitude), each aggregated as mean/max over
frames, plus cumulative energy. Also provides per-speaker baseline
standardization and the signed scalar feedback value used by the
interactive learner.
"""

from __future__ import annotations

import json
import warnings
import wave
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    AudioFormatError,
    DegenerateBaseline,
    EmptyInput,
    InvalidParams,
    UnmatchedLabel,
    VoicelessUtteranceWarning,
)

DEFAULT_SAMPLE_RATE = 22050
FRAME_LENGTH = 2048   # ~93 ms at 22050 Hz
HOP_LENGTH = 512      # ~23 ms
VAD_BLOCK = 512       # non-overlapping energy blocks for voice detection
VAD_HANGOVER_S = 0.150
VAD_FLOOR = 1e-4
VAD_RELATIVE = 0.05   # fraction of the 95th-percentile block energy
PITCH_FMIN = 80.0
PITCH_FMAX = 600.0
YIN_THRESHOLD = 0.1
LABEL_MATCH_WINDOW_S = 1.0
REPETITION_GAP_S = 1.0
FEEDBACK_SHIFT = 3.0
FEEDBACK_MIN_MAGNITUDE = 0.1

YES = "yes"
NO = "no"


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio samples in [-1, 1] with their sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise InvalidParams("sample_rate must be positive")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def slice_seconds(self, t_start: float, t_end: float) -> np.ndarray:
        # boundaries computed from frame/label math may overshoot the last
        # sample by a sliver; tolerate up to one hop
        if not (0.0 <= t_start < t_end <= self.duration + HOP_LENGTH / self.sample_rate):
            raise InvalidParams(
                f"slice [{t_start}, {t_end}] outside buffer of {self.duration:.3f} s"
            )
        i0 = int(round(t_start * self.sample_rate))
        i1 = int(round(t_end * self.sample_rate))
        return self.samples[i0:min(i1, len(self.samples))]


@dataclass(frozen=True)
class ProsodyFeatures:
    """Per-utterance prosodic measurements; all non-flag values >= 0."""

    duration: float
    repetition: int
    pitch_mean: float
    pitch_max: float
    energy_mean: float
    energy_max: float
    energy_total: float
    loudness_mean: float
    loudness_max: float

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "repetition": self.repetition,
            "pitch_mean": self.pitch_mean,
            "pitch_max": self.pitch_max,
            "energy_mean": self.energy_mean,
            "energy_max": self.energy_max,
            "energy_total": self.energy_total,
            "loudness_mean": self.loudness_mean,
            "loudness_max": self.loudness_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProsodyFeatures":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class UtteranceRecord:
    """One labeled speech segment with its features."""

    word: str
    t_start: float
    t_end: float
    features: ProsodyFeatures

    def __post_init__(self):
        if self.word not in (YES, NO):
            raise InvalidParams(f"word must be '{YES}' or '{NO}', got {self.word!r}")
        if self.t_end <= self.t_start:
            raise InvalidParams("t_end must be greater than t_start")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class SpeakerBaseline:
    """Baseline mean/std of pitch, energy and loudness for one speaker."""

    pitch_mean: float
    pitch_std: float
    energy_mean: float
    energy_std: float
    loudness_mean: float
    loudness_std: float

    def __post_init__(self):
        for name in ("pitch_std", "energy_std", "loudness_std"):
            if getattr(self, name) <= 0:
                raise DegenerateBaseline(f"{name} must be > 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SpeakerBaseline":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})

    @classmethod
    def from_audio(cls, audio: AudioBuffer) -> "SpeakerBaseline":
        """Frame-level statistics over the voiced part of a baseline recording."""
        regions = detect_voiced_regions(audio)
        if not regions:
            raise DegenerateBaseline("baseline recording contains no voiced audio")
        energies, loudnesses, pitches = [], [], []
        for t0, t1 in regions:
            seg = audio.slice_seconds(t0, t1)
            for frame in iter_frames(seg):
                energies.append(energy(frame))
                loudnesses.append(loudness(frame))
                f0 = _frame_pitch(frame, audio.sample_rate)
                if f0 is not None:
                    pitches.append(f0)
        if not pitches:
            raise DegenerateBaseline("baseline recording contains no voiced pitch")
        stats = {}
        for name, vals in (("pitch", pitches), ("energy", energies), ("loudness", loudnesses)):
            arr = np.asarray(vals)
            stats[f"{name}_mean"] = float(arr.mean())
            stats[f"{name}_std"] = float(arr.std())
            if stats[f"{name}_std"] <= 0:
                raise DegenerateBaseline(f"baseline {name} has zero variance")
        return cls(**stats)


# ---------------------------------------------------------------------------
# frame-level measures
# ---------------------------------------------------------------------------

def energy(frame) -> float:
    """Mean of squared amplitudes."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise EmptyInput("energy of an empty frame is undefined")
    return float(np.mean(frame * frame))


def loudness(frame) -> float:
    """Mean of absolute amplitudes (sound pressure at the microphone)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise EmptyInput("loudness of an empty frame is undefined")
    return float(np.mean(np.abs(frame)))


def yin_pitch(
    frame,
    sample_rate: int,
    f_min: float = PITCH_FMIN,
    f_max: float = PITCH_FMAX,
    threshold: float = YIN_THRESHOLD,
) -> float | None:
    """Yin fundamental-frequency estimate for one frame, or None if unvoiced.

    Difference function -> cumulative-mean-normalized difference ->
    absolute threshold -> parabolic interpolation of the selected lag.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if f_min <= 0 or f_min >= f_max:
        raise InvalidParams("need 0 < f_min < f_max")
    tau_max = int(sample_rate / f_min)
    tau_min = max(2, int(np.ceil(sample_rate / f_max)))
    if frame.size < 2 * tau_max:
        raise InvalidParams(
            f"frame of {frame.size} samples too short for f_min {f_min} Hz "
            f"(need >= {2 * tau_max})"
        )
    if tau_min >= tau_max:
        raise InvalidParams("search band collapses at this sample rate")

    d = _difference_function(frame, tau_max)
    # cumulative mean normalization; d'(0) := 1
    cum = np.cumsum(d[1:])
    cmndf = np.ones(tau_max + 1)
    nonzero = cum > 0
    cmndf[1:][nonzero] = d[1:][nonzero] * np.arange(1, tau_max + 1)[nonzero] / cum[nonzero]

    tau = None
    for lag in range(tau_min, tau_max):
        if cmndf[lag] < threshold:
            tau = lag
            # descend to the local minimum of the dip
            while tau + 1 < tau_max and cmndf[tau + 1] < cmndf[tau]:
                tau += 1
            break
    if tau is None:
        return None

    tau_refined = _parabolic_min(cmndf, tau)
    return float(sample_rate / tau_refined)


def _difference_function(frame: np.ndarray, tau_max: int) -> np.ndarray:
    """d(tau) = sum_{j<W} (x[j] - x[j+tau])^2 for tau in [0, tau_max]."""
    n = frame.size
    w = n - tau_max
    # cross-correlation via FFT: corr[tau] = sum_j x[j] * x[j+tau], j < w
    size = 1
    while size < n + w:
        size <<= 1
    fx = np.fft.rfft(frame, size)
    fk = np.fft.rfft(frame[:w][::-1], size)
    corr = np.fft.irfft(fx * fk, size)[w - 1:w + tau_max]
    sq = frame * frame
    head = float(np.sum(sq[:w]))
    csum = np.concatenate(([0.0], np.cumsum(sq)))
    windowed = csum[np.arange(tau_max + 1) + w] - csum[np.arange(tau_max + 1)]
    return head + windowed - 2.0 * corr


def _parabolic_min(values: np.ndarray, idx: int) -> float:
    if idx <= 0 or idx >= len(values) - 1:
        return float(idx)
    a, b, c = values[idx - 1], values[idx], values[idx + 1]
    denom = a - 2 * b + c
    if denom <= 0:
        return float(idx)
    shift = 0.5 * (a - c) / denom
    return float(idx + np.clip(shift, -1.0, 1.0))


def _frame_pitch(frame: np.ndarray, sample_rate: int,
                 f_min: float = PITCH_FMIN, f_max: float = PITCH_FMAX) -> float | None:
    """Yin on a frame, or None when the frame is too short for the band."""
    if frame.size < 2 * int(sample_rate / f_min):
        return None
    return yin_pitch(frame, sample_rate, f_min, f_max)


# ---------------------------------------------------------------------------
# framing and voice activity
# ---------------------------------------------------------------------------

def iter_frames(samples: np.ndarray, frame_length: int = FRAME_LENGTH,
                hop: int = HOP_LENGTH):
    """Frames starting every `hop` samples; the tail may be shorter than
    `frame_length` but segments shorter than one hop are dropped."""
    n = len(samples)
    for k in range(n // hop):
        yield samples[k * hop:k * hop + frame_length]


def detect_voiced_regions(audio: AudioBuffer) -> list[tuple[float, float]]:
    """Energy-gated voiced regions (start, end) in seconds.

    A block counts as voiced when its energy exceeds
    max(VAD_FLOOR, VAD_RELATIVE * 95th-percentile block energy); voiced
    blocks closer than the hangover are merged into one region.
    """
    samples = audio.samples
    n_blocks = len(samples) // VAD_BLOCK
    if n_blocks == 0:
        return []
    blocks = samples[:n_blocks * VAD_BLOCK].reshape(n_blocks, VAD_BLOCK)
    block_energy = np.mean(blocks * blocks, axis=1)
    threshold = max(VAD_FLOOR, VAD_RELATIVE * float(np.percentile(block_energy, 95)))
    voiced = block_energy > threshold
    if not voiced.any():
        return []

    block_s = VAD_BLOCK / audio.sample_rate
    regions: list[list[float]] = []
    for i in np.flatnonzero(voiced):
        t0, t1 = i * block_s, (i + 1) * block_s
        if regions and t0 - regions[-1][1] <= VAD_HANGOVER_S:
            regions[-1][1] = t1
        else:
            regions.append([t0, t1])
    return [(a, b) for a, b in regions]


# ---------------------------------------------------------------------------
# utterance-level operations
# ---------------------------------------------------------------------------

def extract_features(audio: AudioBuffer, t_start: float, t_end: float) -> ProsodyFeatures:
    """Frame an utterance and aggregate per-frame measures.

    energy/loudness aggregate over all frames; pitch over voiced frames only.
    All frames unvoiced -> pitch fields 0 plus a VoicelessUtteranceWarning.
    """
    seg = audio.slice_seconds(t_start, t_end)
    if len(seg) < HOP_LENGTH:
        raise InvalidParams("utterance shorter than one hop")
    energies, loudnesses, pitches = [], [], []
    for frame in iter_frames(seg):
        energies.append(energy(frame))
        loudnesses.append(loudness(frame))
        f0 = _frame_pitch(frame, audio.sample_rate)
        if f0 is not None:
            pitches.append(f0)
    if pitches:
        pitch_mean, pitch_max = float(np.mean(pitches)), float(np.max(pitches))
    else:
        warnings.warn("utterance has no voiced frames", VoicelessUtteranceWarning)
        pitch_mean = pitch_max = 0.0
    return ProsodyFeatures(
        duration=t_end - t_start,
        repetition=0,
        pitch_mean=pitch_mean,
        pitch_max=pitch_max,
        energy_mean=float(np.mean(energies)),
        energy_max=float(np.max(energies)),
        energy_total=float(np.sum(energies)),
        loudness_mean=float(np.mean(loudnesses)),
        loudness_max=float(np.max(loudnesses)),
    )


def segment_utterances(audio: AudioBuffer,
                       labels: list[tuple[str, float]]) -> list[UtteranceRecord]:
    """Match (word, approx_time) labels to voiced regions and extract features.

    Each label grabs the nearest voiced region; labels sharing one region
    split it at the midpoints between their timestamps. Records come back
    time-ordered and non-overlapping, with repetition flags filled in.
    """
    for word, t in labels:
        if not (0.0 <= t <= audio.duration):
            raise InvalidParams(f"label time {t} outside audio of {audio.duration:.3f} s")
    regions = detect_voiced_regions(audio)
    if not regions and labels:
        raise UnmatchedLabel(labels)

    def distance(t: float, region: tuple[float, float]) -> float:
        a, b = region
        if a <= t <= b:
            return 0.0
        return min(abs(t - a), abs(t - b))

    unmatched = []
    by_region: dict[int, list[tuple[str, float]]] = {}
    for word, t in labels:
        dists = [distance(t, r) for r in regions]
        best = int(np.argmin(dists))
        if dists[best] > LABEL_MATCH_WINDOW_S:
            unmatched.append((word, t))
        else:
            by_region.setdefault(best, []).append((word, t))
    if unmatched:
        raise UnmatchedLabel(unmatched)

    records = []
    for idx, matched in sorted(by_region.items()):
        a, b = regions[idx]
        matched.sort(key=lambda wt: wt[1])
        # split a shared region at midpoints between consecutive label times
        cuts = [a] + [
            min(max((t0 + t1) / 2.0, a), b)
            for (_, t0), (_, t1) in zip(matched, matched[1:])
        ] + [b]
        for (word, _), lo, hi in zip(matched, cuts, cuts[1:]):
            if hi - lo < HOP_LENGTH / audio.sample_rate:
                continue
            records.append(UtteranceRecord(word, lo, hi, extract_features(audio, lo, hi)))
    records.sort(key=lambda r: r.t_start)
    return detect_repetition(records)


def detect_repetition(records: list[UtteranceRecord],
                      gap_max: float = REPETITION_GAP_S) -> list[UtteranceRecord]:
    """Flag consecutive same-word records with gaps <= gap_max as repetitions."""
    flags = [0] * len(records)
    for i in range(len(records) - 1):
        a, b = records[i], records[i + 1]
        if a.word == b.word and b.t_start - a.t_end <= gap_max:
            flags[i] = flags[i + 1] = 1
    return [
        replace(r, features=replace(r.features, repetition=flag))
        for r, flag in zip(records, flags)
    ]


def signed_feedback_value(features: ProsodyFeatures, word: str,
                          baseline: SpeakerBaseline) -> float:
    """Combined prosody magnitude signed by the word (+yes / -no).

    Mean of the three baseline z-scores, shifted by +3 and floored at 0.1
    so the magnitude stays positive, then multiplied by the word sign.
    """
    if word not in (YES, NO):
        raise InvalidParams(f"word must be '{YES}' or '{NO}', got {word!r}")
    z_pitch = (features.pitch_mean - baseline.pitch_mean) / baseline.pitch_std
    z_energy = (features.energy_mean - baseline.energy_mean) / baseline.energy_std
    z_loud = (features.loudness_mean - baseline.loudness_mean) / baseline.loudness_std
    magnitude = max((z_pitch + z_energy + z_loud) / 3.0 + FEEDBACK_SHIFT,
                    FEEDBACK_MIN_MAGNITUDE)
    return magnitude if word == YES else -magnitude


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_wav(path) -> AudioBuffer:
    """Read a RIFF WAVE file; only 16-bit PCM mono is accepted."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise AudioFormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            raw = wf.readframes(wf.getnframes())
            rate = wf.getframerate()
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def write_wav(path, audio: AudioBuffer) -> None:
    pcm = np.clip(np.round(audio.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(pcm.tobytes())


def read_labels_jsonl(path) -> list[tuple[str, float]]:
    """Label rows {"word": "yes"|"no", "t": seconds}, one JSON object per line."""
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            word = str(row["word"]).lower()
            if word not in (YES, NO):
                raise InvalidParams(f"{path}:{lineno}: word must be yes|no")
            labels.append((word, float(row["t"])))
    return labels


def write_records_jsonl(path, records: list[UtteranceRecord]) -> None:
    """Versioned header, then one UtteranceRecord per line with floats
    fixed to 6 decimal places."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": "utterances", "version": "1.0"}) + "\n")
        for r in records:
            row = {"word": r.word, "t_start": r.t_start, "t_end": r.t_end}
            row.update(r.features.to_dict())
            fh.write(json.dumps({
                k: (round(v, 6) if isinstance(v, float) else v) for k, v in row.items()
            }, sort_keys=True) + "\n")
