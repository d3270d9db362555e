"""Prosody-augmented TAMER: learn the human feedback function H.

Four linear regressors (one per action) over a shared radial-basis
featurization of the grid state. Training is completely myopic: a signed
feedback value is split over the most recent state-action pairs with
gamma-pdf interval weights and each credited pair gets one SGD step on
its own action's regressor. No update ever bootstraps from a successor
state's prediction.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import FormatVersionError, InvalidSession
from .gridworld import ACTIONS, AgentState, GridMap, MdpSolution

MODEL_FORMAT_VERSION = "1.0"

BASELINE = "baseline"   # plain +/-1 feedback
PROSODY = "prosody"     # prosody-weighted signed feedback


@dataclass(frozen=True)
class TimedStep:
    t: float
    state: AgentState
    action: int


@dataclass(frozen=True)
class FeedbackEvent:
    t: float
    value: float


class RbfFeaturizer:
    """Radial-basis featurization of (row, col, has_nut).

    Gaussian responses for centers on every 2nd interior cell at three
    bandwidths, with the whole block gated by the nut flag (separate
    copies for has_nut 0/1), plus a bias term.
    """

    SIGMAS = (0.5, 1.0, 2.0)

    def __init__(self, grid: GridMap, center_stride: int = 2):
        self.center_stride = center_stride
        self.centers = np.array([
            (r, c)
            for r in range(1, grid.rows - 1, center_stride)
            for c in range(1, grid.cols - 1, center_stride)
        ], dtype=np.float64)
        self.block_size = len(self.centers) * len(self.SIGMAS)
        self.dim = 2 * self.block_size + 1

    def transform(self, state: AgentState) -> np.ndarray:
        pos = np.array([state.row, state.col], dtype=np.float64)
        sq_dist = np.sum((self.centers - pos) ** 2, axis=1)
        block = np.concatenate([
            np.exp(-sq_dist / (2.0 * sigma * sigma)) for sigma in self.SIGMAS
        ])
        phi = np.zeros(self.dim)
        offset = self.block_size if state.has_nut else 0
        phi[offset:offset + self.block_size] = block
        phi[-1] = 1.0
        return phi

    def config(self) -> dict:
        return {"center_stride": self.center_stride,
                "centers": self.centers.tolist(),
                "sigmas": list(self.SIGMAS)}


class HModel:
    """One linear regressor per action over a shared featurization."""

    def __init__(self, featurizer: RbfFeaturizer, learning_rate: float = 0.01):
        self.featurizer = featurizer
        self.learning_rate = learning_rate
        self.weights = np.zeros((len(ACTIONS), featurizer.dim))

    def predict(self, state: AgentState, action: int) -> float:
        return float(self.weights[action] @ self.featurizer.transform(state))

    def predict_all(self, state: AgentState) -> np.ndarray:
        return self.weights @ self.featurizer.transform(state)

    def update(self, step: TimedStep, credited_value: float) -> None:
        """One SGD step on (prediction - credited_value)^2 for step.action only."""
        if not np.isfinite(credited_value):
            raise InvalidSession("credited feedback value must be finite")
        phi = self.featurizer.transform(step.state)
        prediction = float(self.weights[step.action] @ phi)
        self.weights[step.action] -= (
            self.learning_rate * 2.0 * (prediction - credited_value) * phi
        )

    def copy(self) -> "HModel":
        clone = HModel(self.featurizer, self.learning_rate)
        clone.weights = self.weights.copy()
        return clone

    def save(self, path, grid: GridMap) -> None:
        with open(path, "w") as fh:
            json.dump({
                "format": "hmodel",
                "version": MODEL_FORMAT_VERSION,
                "learning_rate": self.learning_rate,
                "featurizer": self.featurizer.config(),
                "map": json.loads(grid.to_json()),
                "weights": self.weights.tolist(),
            }, fh)

    @classmethod
    def load(cls, path) -> tuple["HModel", GridMap]:
        with open(path) as fh:
            d = json.load(fh)
        if d.get("format") != "hmodel":
            raise FormatVersionError(f"not an H-model checkpoint: {d.get('format')!r}")
        if str(d.get("version", "")).split(".")[0] != MODEL_FORMAT_VERSION.split(".")[0]:
            raise FormatVersionError(f"unsupported version {d.get('version')!r}")
        grid = GridMap.from_json(json.dumps(d["map"]))
        featurizer = RbfFeaturizer(grid, d["featurizer"]["center_stride"])
        model = cls(featurizer, d["learning_rate"])
        model.weights = np.asarray(d["weights"])
        return model, grid


# ---------------------------------------------------------------------------
# credit assignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CreditAssigner:
    """Gamma-pdf interval weights over the n most recent steps.

    Delays d_1 < ... < d_n (most recent first) partition [d_1, d_n + gap]
    into per-step intervals; each step's weight is the pdf mass of its
    interval. anchor_at_zero instead starts the first interval at the
    feedback instant, crediting the in-flight action with the freshest
    pdf mass.
    """

    shape: float = 2.0
    scale: float = 0.28
    n: int = 3
    default_gap: float = 1.25
    anchor_at_zero: bool = False

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.where(x >= 0, x * np.exp(-np.minimum(x / self.scale, 700.0))
                       / (self.scale * self.scale), 0.0)
        return out if out.ndim else float(out)

    def interval_bounds(self, delays: list[float]) -> list[tuple[float, float]]:
        if self.anchor_at_zero:
            edges = [0.0] + list(delays)
        else:
            if len(delays) >= 2:
                gap = delays[-1] - delays[-2]
            else:
                gap = self.default_gap
            edges = list(delays) + [delays[-1] + gap]
        return list(zip(edges, edges[1:]))


def credit_weights(assigner: CreditAssigner, feedback_t: float,
                   recent_steps: list[TimedStep]) -> np.ndarray:
    """Per-step weights for the <= n most recent steps before feedback_t.

    Returned in the same order as recent_steps (oldest first). Weights are
    non-negative and sum to at most 1. Empty input yields empty weights.
    """
    steps = [s for s in recent_steps if s.t < feedback_t][-assigner.n:]
    if not steps:
        return np.zeros(0)
    if any(b.t <= a.t for a, b in zip(steps, steps[1:])):
        raise InvalidSession("step timestamps must be strictly increasing")
    delays = [feedback_t - s.t for s in reversed(steps)]  # most recent first
    weights = []
    for lo, hi in assigner.interval_bounds(delays):
        mass, _ = integrate.quad(assigner.pdf, lo, hi, epsabs=1e-10, epsrel=1e-10)
        weights.append(max(mass, 0.0))
    return np.asarray(weights[::-1])  # back to oldest-first order


def apply_feedback(model: HModel, assigner: CreditAssigner,
                   recent_steps: list[TimedStep], event: FeedbackEvent) -> int:
    """Credit one feedback event over the recent steps; returns update count."""
    if event.value == 0.0:
        return 0
    steps = [s for s in recent_steps if s.t < event.t][-assigner.n:]
    weights = credit_weights(assigner, event.t, steps)
    for step_, w in zip(steps, weights):
        model.update(step_, w * event.value)
    return len(steps)


# ---------------------------------------------------------------------------
# offline training and evaluation
# ---------------------------------------------------------------------------

def train_offline(steps: list[TimedStep], events: list[FeedbackEvent],
                  variant: str, grid: GridMap,
                  learning_rate: float = 0.01,
                  assigner: CreditAssigner = CreditAssigner(),
                  model: HModel | None = None) -> HModel:
    """Replay a recorded session in time order and learn H.

    BASELINE collapses every feedback value to its sign; PROSODY uses the
    recorded prosody-weighted value as-is.
    """
    if variant not in (BASELINE, PROSODY):
        raise InvalidSession(f"unknown variant {variant!r}")
    if any(b.t <= a.t for a, b in zip(steps, steps[1:])):
        raise InvalidSession("step stream is not strictly increasing in time")
    if any(b.t < a.t for a, b in zip(events, events[1:])):
        raise InvalidSession("feedback stream is not sorted in time")

    if model is None:
        model = HModel(RbfFeaturizer(grid), learning_rate)
    recent: deque[TimedStep] = deque(maxlen=assigner.n)
    step_iter = iter(steps)
    pending = next(step_iter, None)
    for event in events:
        while pending is not None and pending.t < event.t:
            recent.append(pending)
            pending = next(step_iter, None)
        value = event.value
        if variant == BASELINE:
            value = float(np.sign(value))
        apply_feedback(model, assigner, list(recent), FeedbackEvent(event.t, value))
    return model


def evaluate_policy(model: HModel, solution: MdpSolution) -> int:
    """Count non-terminal states whose greedy H action is MDP-optimal.

    Ties break to the first action in the fixed (up, down, left, right)
    order, matching np.argmax.
    """
    count = 0
    for state in solution.states():
        greedy = int(np.argmax(model.predict_all(state)))
        if greedy in solution.optimal_actions[state]:
            count += 1
    return count

