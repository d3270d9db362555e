"""Synthetic teachers with controllable statistical structure.

Generates interactive-teaching sessions (feedback streams with prosody
magnitudes tied to the advantage of the evaluated action) and
demonstration datasets (audio-annotated snippets whose pitch tracks the
ground-truth return within each word class). The generators are
calibrated so the empirical correlations land on a requested target,
which lets the analysis pipelines and both learners be tested against
known injected structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import (
    NO,
    YES,
    AudioBuffer,
    ProsodyFeatures,
    SpeakerBaseline,
    UtteranceRecord,
    detect_repetition,
    signed_feedback_value,
)
from .errors import InvalidParams
from .gridworld import (
    ACTIONS,
    AgentState,
    GridMap,
    MdpSolution,
    state_features,
    step,
)
from .reward_learning import AudioAnnotation, TrajectorySnippet
from .session import DEFAULT_TICK_S, SessionData, StepRow
from .stats import ranks
from .tamer import FeedbackEvent

FEEDBACK_LATENCY_S = 0.3
DEMO_STEP_S = 0.25
SNIPPET_BUFFER_S = 0.5

# teacher emphasis saturates: magnitude = base + cap*tanh(conviction/cap) + noise
CONVICTION_CAP = 6.0
CHANNEL_NOISE = 0.4
OPTIMAL_MIX = 0.6        # fraction of agent actions drawn from the optimal set
PITCH_BASE_HZ = 120.0
PITCH_SLOPE_HZ = 15.0


@dataclass(frozen=True)
class TeacherProfile:
    """Knobs controlling a synthetic teacher's statistics."""

    pos_feedback_prob: float = 0.5
    neg_feedback_prob: float = 0.9
    pos_bias: float = 2.0
    expressiveness: float = 0.25    # target Spearman(signed prosody, advantage)
    neg_intensity_boost: float = 1.5
    sign_noise: float = 0.0         # extra independent feedback-sign flips
    seed: int = 0

    def __post_init__(self):
        for name in ("pos_feedback_prob", "neg_feedback_prob", "sign_noise"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise InvalidParams(f"{name} must lie in [0, 1]")
        if self.pos_bias < 1.0:
            raise InvalidParams("pos_bias must be >= 1")
        if not (-1.0 <= self.expressiveness <= 1.0):
            raise InvalidParams("expressiveness must lie in [-1, 1]")
        if self.neg_intensity_boost <= 0:
            raise InvalidParams("neg_intensity_boost must be positive")


def _spearman_r(x, y) -> float:
    rx, ry = ranks(x), ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(rx @ ry) / denom if denom else 0.0


def _simulate_session(grid: GridMap, solution: MdpSolution,
                      profile: TeacherProfile, ticks: int,
                      rng: np.random.Generator, perception_noise: float) -> dict:
    """One pass of the teaching simulation.

    The teacher perceives each evaluated action's quality as
    -|advantage| plus Gaussian perception noise; the word comes from
    thresholding perceived quality at the quantile matching pos_bias
    (so the yes:no ratio is exact by construction), and the spoken
    emphasis is the saturated distance of the perception from that
    threshold. Feedback that contradicts the advantage sign therefore
    tends to be unemphatic, which is exactly the structure a
    prosody-weighted learner can exploit.
    """
    alignment = 1.0 if profile.expressiveness >= 0 else -1.0
    flip = profile.sign_noise
    spec = solution.spec
    state = AgentState(grid.start[0], grid.start[1], False)
    steps: list[StepRow] = []
    raw = []  # (t, perceived, advantage)
    for k in range(ticks):
        t = k * DEFAULT_TICK_S
        optimal = solution.optimal_actions[state]
        others = [a for a in ACTIONS if a not in optimal]
        if not others or rng.random() < OPTIMAL_MIX:
            action = optimal[rng.integers(len(optimal))]
            took_optimal = True
        else:
            action = others[rng.integers(len(others))]
            took_optimal = False
        adv = solution.advantage(state, action)
        next_state, reward, terminal = step(grid, state, action, spec)
        steps.append(StepRow(t, state, action, reward, terminal))

        emit_p = profile.pos_feedback_prob if took_optimal else profile.neg_feedback_prob
        if rng.random() < emit_p:
            perceived = -abs(adv) + perception_noise * rng.standard_normal()
            raw.append((t + FEEDBACK_LATENCY_S, perceived, adv))
        state = AgentState(grid.start[0], grid.start[1], False) if terminal else next_state

    mag_base = 1.0 + 2.6 * CHANNEL_NOISE  # keeps the clamp rate below 1%
    baseline = SpeakerBaseline(
        pitch_mean=mag_base, pitch_std=1.0,
        energy_mean=mag_base, energy_std=1.0,
        loudness_mean=mag_base, loudness_std=1.0,
    )
    utts = []  # (t, word, duration, pitch, energy, loudness, advantage)
    clamped = samples = 0
    if raw:
        # positive-word fraction before independent flips, compensated so
        # the post-flip ratio still lands on pos_bias
        target_pos = profile.pos_bias / (1.0 + profile.pos_bias)
        if flip < 0.5:
            target_pos = min(max((target_pos - flip) / (1.0 - 2.0 * flip), 0.02), 0.98)
        else:
            target_pos = 0.5
        perceived = np.array([p for _, p, _ in raw])
        threshold = float(np.quantile(perceived, 1.0 - target_pos))
        for t, p, adv in raw:
            positive = (p > threshold) if alignment > 0 else (p <= threshold)
            if flip > 0 and rng.random() < flip:
                positive = not positive
            word = YES if positive else NO
            conviction = CONVICTION_CAP * math.tanh(abs(p - threshold) / CONVICTION_CAP)
            mags = mag_base + conviction + CHANNEL_NOISE * rng.standard_normal(3)
            if word == NO:
                mags[1] *= profile.neg_intensity_boost
                mags[2] *= profile.neg_intensity_boost
            samples += 3
            clamped += int(np.sum(mags < 0.0))
            mags = np.clip(mags, 0.0, None)
            duration = 0.35 + 0.3 * rng.random()
            utts.append((t, word, duration,
                         float(mags[0]), float(mags[1]), float(mags[2]), adv))
    return {
        "steps": steps, "raw_utts": utts, "baseline": baseline,
        "clamp_rate": clamped / samples if samples else 0.0,
    }


def _signed_pitch_rho(raw_utts) -> float:
    if len(raw_utts) < 10:
        return 0.0
    signed = [(1.0 if w == YES else -1.0) * p for _, w, _, p, _, _, _ in raw_utts]
    adv = [a for *_, a in raw_utts]
    return _spearman_r(signed, adv)


def _calibrate_perception_noise(grid: GridMap, solution: MdpSolution,
                                profile: TeacherProfile,
                                probe_ticks: int = 700) -> tuple[float, float]:
    """Bisect the perception noise scale until the probe session's
    Spearman(signed pitch, advantage) lands on the expressiveness target."""
    target = abs(profile.expressiveness)

    def measure(noise: float) -> float:
        # average over independent probe streams; a single realization's
        # sampling error would otherwise bias the bisection
        rhos = []
        for stream in (101, 102, 103):
            rng = np.random.default_rng([profile.seed, stream])
            out = _simulate_session(grid, solution, profile, probe_ticks, rng, noise)
            rhos.append(abs(_signed_pitch_rho(out["raw_utts"])))
        return float(np.mean(rhos))

    lo, hi = 0.05, 40.0
    if measure(lo) <= target:
        return lo, measure(lo)
    # tiny targets can sit beyond the default range; extend until reachable
    while measure(hi) > target and hi < 20_000.0:
        hi *= 5.0
    noise = hi
    for _ in range(24):
        noise = 0.5 * (lo + hi)
        rho = measure(noise)
        if abs(rho - target) < 0.015:
            break
        if rho > target:
            lo = noise
        else:
            hi = noise
    return noise, measure(noise)


def generate_intrl_session(grid: GridMap, solution: MdpSolution,
                           profile: TeacherProfile,
                           episode_length: int = 1400) -> SessionData:
    """Synthetic interactive teaching session of `episode_length` ticks.

    The agent mixes optimal and random actions; the teacher is a
    noisy-perception thresholder whose yes:no ratio matches pos_bias and
    whose emphasis tracks conviction. The perception noise is calibrated
    so the empirical Spearman between signed pitch and advantage lands
    near the profile's expressiveness target.
    """
    noise, probe_rho = _calibrate_perception_noise(grid, solution, profile)
    rng = np.random.default_rng([profile.seed, 202])
    out = _simulate_session(grid, solution, profile, episode_length, rng, noise)

    baseline: SpeakerBaseline = out["baseline"]
    utterances = []
    events = []
    for t, word, duration, pitch, energy_v, loud, _adv in out["raw_utts"]:
        features = ProsodyFeatures(
            duration=duration, repetition=0,
            pitch_mean=pitch, pitch_max=pitch * 1.1,
            energy_mean=energy_v, energy_max=energy_v * 1.2,
            energy_total=energy_v * 18.0,
            loudness_mean=loud, loudness_max=loud * 1.2,
        )
        utterances.append(UtteranceRecord(word, t, t + duration, features))
    utterances = detect_repetition(utterances)
    for u in utterances:
        events.append(FeedbackEvent(u.t_start,
                                    signed_feedback_value(u.features, u.word, baseline)))

    session = SessionData(
        grid=grid, reward_spec=solution.spec,
        participant=f"synthetic-{profile.seed}",
        steps=out["steps"], utterances=utterances, events=events,
        baseline=baseline,
        calibration={
            "perception_noise": noise, "probe_rho": probe_rho,
            "clamp_rate": out["clamp_rate"],
        },
    )
    session.score = sum(s.reward for s in session.steps)
    episodes = session.episode_lengths()
    session.outcome = episodes[-1][1] if episodes else "incomplete"
    return session


# ---------------------------------------------------------------------------
# demonstration datasets
# ---------------------------------------------------------------------------

def _mixed_quality_rollout(grid: GridMap, solution: MdpSolution,
                           quality: float, max_steps: int,
                           rng: np.random.Generator):
    """States, rewards and times of one rollout mixing optimal and random play."""
    spec = solution.spec
    interior = [s for s in solution.states() if not s.has_nut]
    state = interior[rng.integers(len(interior))]
    states = [state]
    rewards = []
    for _ in range(max_steps):
        if rng.random() < quality:
            action = solution.optimal_actions[state][rng.integers(
                len(solution.optimal_actions[state]))]
        else:
            action = int(rng.integers(4))
        state, reward, terminal = step(grid, state, action, spec)
        rewards.append(reward)
        states.append(state)
        if terminal:
            break
    return states, rewards


def snippet_step_range(t_start: float, t_end: float, step_s: float,
                       n_steps: int, buffer_s: float = SNIPPET_BUFFER_S) -> tuple[int, int]:
    """State indices covered by an utterance window plus buffers."""
    lo = max(0, int(math.floor((t_start - buffer_s) / step_s)))
    hi = min(n_steps, int(math.ceil((t_end + buffer_s) / step_s)))
    return lo, max(hi, lo + 1)


def generate_demo_dataset(grid: GridMap, solution: MdpSolution,
                          profile: TeacherProfile, num_snippets: int,
                          max_rollout_steps: int = 60) -> list[TrajectorySnippet]:
    """Audio-annotated snippets cut from mixed-quality demonstrations.

    Snippets above the median return get YES (below get NO), flipped with
    probability sign_noise; mean pitch is then drawn so its Spearman
    correlation with the return is +expressiveness within YES and
    -expressiveness within NO.
    """
    rng = np.random.default_rng([profile.seed, 303])
    raw = []
    while len(raw) < num_snippets:
        quality = rng.random()
        states, rewards = _mixed_quality_rollout(grid, solution, quality,
                                                 max_rollout_steps, rng)
        if len(rewards) < 3:
            continue
        span = len(rewards) * DEMO_STEP_S
        for _ in range(2):
            if len(raw) >= num_snippets:
                break
            duration = 0.5 + 1.5 * rng.random()
            t0 = rng.random() * max(span - duration, 1e-6)
            lo, hi = snippet_step_range(t0, t0 + duration, DEMO_STEP_S, len(rewards))
            gt = float(np.sum(rewards[lo:hi]))
            # the entered states, one per counted transition reward
            feats = np.stack([state_features(grid, s) for s in states[lo + 1:hi + 1]])
            raw.append((feats, gt))

    returns = np.array([gt for _, gt in raw])
    median = float(np.median(returns))
    above = returns > median
    flips = rng.random(num_snippets) < profile.sign_noise
    words = [
        (YES if is_above != flipped else NO)
        for is_above, flipped in zip(above, flips)
    ]

    g = (returns - returns.mean()) / (returns.std() or 1.0)
    direction = np.array([
        (1.0 if w == YES else -1.0) * (1.0 if profile.expressiveness >= 0 else -1.0)
        for w in words
    ])
    noise_draws = rng.standard_normal(num_snippets)
    target = abs(profile.expressiveness)

    if target < 0.05:
        pitch = np.clip(PITCH_BASE_HZ + 50.0 * noise_draws, 0.0, None)
    else:
        # the within-word return spreads differ (deliveries concentrate in
        # one class, bombs in the other), so each word class gets its own
        # noise scale, bisected against its own subset
        scales = {YES: 50.0, NO: 50.0}
        for word in (YES, NO):
            idx = [i for i, w in enumerate(words) if w == word]
            if len(idx) < 3:
                continue
            lo_s, hi_s = 0.0, 400.0
            for _ in range(40):
                noise_scale = 0.5 * (lo_s + hi_s)
                vals = (PITCH_SLOPE_HZ * direction[idx] * g[idx]
                        + noise_scale * noise_draws[idx])
                rho = abs(_spearman_r(vals, returns[idx]))
                if abs(rho - target) < 0.01:
                    break
                if rho > target:
                    lo_s = noise_scale
                else:
                    hi_s = noise_scale
            scales[word] = noise_scale
        per_snippet_scale = np.array([scales[w] for w in words])
        base = PITCH_BASE_HZ + 2.6 * max(scales.values())
        pitch = np.clip(base + direction * PITCH_SLOPE_HZ * g
                        + per_snippet_scale * noise_draws, 0.0, None)

    return [
        TrajectorySnippet(states=feats, gt_return=gt,
                          audio=AudioAnnotation(word, float(p)))
        for (feats, gt), word, p in zip(raw, words, pitch)
    ]


# ---------------------------------------------------------------------------
# optional audio synthesis (exercises the real extraction pipeline)
# ---------------------------------------------------------------------------

def synthesize_utterance(word: str, pitch_hz: float, energy_target: float,
                         duration_s: float, sample_rate: int = 22050) -> np.ndarray:
    """A pure tone standing in for one spoken word; energy = amplitude^2 / 2."""
    amplitude = min(math.sqrt(2.0 * energy_target), 1.0)
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    tone = amplitude * np.sin(2.0 * math.pi * pitch_hz * t)
    fade = min(220, len(tone) // 4)
    if fade:
        ramp = np.linspace(0.0, 1.0, fade)
        tone[:fade] *= ramp
        tone[-fade:] *= ramp[::-1]
    return tone


def synthesize_session_audio(utterances: list[UtteranceRecord],
                             total_duration_s: float,
                             sample_rate: int = 22050) -> tuple[AudioBuffer, list[tuple[str, float]]]:
    """Render synthetic utterances into one buffer plus (word, time) labels."""
    samples = np.zeros(int(total_duration_s * sample_rate))
    labels = []
    for u in utterances:
        tone = synthesize_utterance(u.word, u.features.pitch_mean,
                                    max(u.features.energy_mean, 1e-3),
                                    u.duration, sample_rate)
        i0 = int(u.t_start * sample_rate)
        i1 = min(i0 + len(tone), len(samples))
        samples[i0:i1] += tone[:i1 - i0]
        labels.append((u.word, u.t_start + u.duration / 2.0))
    return AudioBuffer(np.clip(samples, -1.0, 1.0), sample_rate), labels
