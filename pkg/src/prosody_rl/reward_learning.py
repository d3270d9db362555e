"""Preference-based reward learning with a contrastive audio loss.

A small tanh MLP maps state features to per-state rewards. Ranked
snippet pairs train it with the usual softmax cross-entropy over
predicted returns; snippets that share a spoken word additionally pull
their predicted returns together through a temperature-scaled
similarity, where the temperature grows with the pitch difference of
the two utterances. Gradients are exact reverse-mode derivatives of the
fixed architecture (the |.| kinks take subgradient 0), so training has
no autodiff dependency and is bit-deterministic under a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateRanking,
    FormatVersionError,
    InsufficientData,
    InvalidParams,
    ShapeError,
)
from . import stats

CHECKPOINT_FORMAT_VERSION = "1.0"
HIDDEN = 64

POOL_JOINT = "joint"        # softmax over numerator+denominator pitch diffs
POOL_SEPARATE = "separate"  # per-group softmax


@dataclass(frozen=True)
class AudioAnnotation:
    word: str
    pitch_mean: float


@dataclass(frozen=True)
class TrajectorySnippet:
    """A contiguous state sequence with its hidden ground-truth return."""

    states: np.ndarray          # (T, d)
    gt_return: float
    audio: AudioAnnotation | None = None

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ShapeError("states must be a non-empty (T, d) array")
        object.__setattr__(self, "states", arr)


@dataclass(frozen=True)
class RankedPair:
    """tau_i ranked strictly below tau_j by ground-truth return."""

    tau_i: TrajectorySnippet
    tau_j: TrajectorySnippet

    def __post_init__(self):
        if not self.tau_i.gt_return < self.tau_j.gt_return:
            raise InvalidParams("ranked pairs need gt_return(tau_i) < gt_return(tau_j)")


@dataclass
class CalBatch:
    """Same-word pairs to pull together and dissimilar-word contrast pairs."""

    same_word_pairs: list[tuple[TrajectorySnippet, TrajectorySnippet]]
    dissimilar_pairs: list[tuple[TrajectorySnippet, TrajectorySnippet]]
    t0: float = 0.1
    alpha: float = 1.0
    pool: str = POOL_JOINT

    def validate(self) -> None:
        if self.t0 <= 0:
            raise InvalidParams("t0 must be positive")
        if not self.same_word_pairs or not self.dissimilar_pairs:
            raise InvalidParams("need at least one pair on each side")
        for a, b in self.same_word_pairs + self.dissimilar_pairs:
            if a.audio is None or b.audio is None:
                raise InvalidParams("every CAL snippet must carry audio")
        for a, b in self.same_word_pairs:
            if a.audio.word != b.audio.word:
                raise InvalidParams("same-word pair has differing words")
        for a, b in self.dissimilar_pairs:
            if a.audio.word == b.audio.word:
                raise InvalidParams("dissimilar pair has matching words")


class RewardNet:
    """Fixed two-hidden-layer tanh MLP with a scalar output."""

    def __init__(self, input_dim: int, seed: int = 0, init_scale: float = 0.3):
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.w1 = rng.normal(0.0, init_scale / math.sqrt(input_dim), (HIDDEN, input_dim))
        self.b1 = np.zeros(HIDDEN)
        self.w2 = rng.normal(0.0, init_scale / math.sqrt(HIDDEN), (HIDDEN, HIDDEN))
        self.b2 = np.zeros(HIDDEN)
        self.w3 = rng.normal(0.0, init_scale / math.sqrt(HIDDEN), HIDDEN)
        self.b3 = 0.0

    PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    def _forward(self, x: np.ndarray):
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"expected {self.input_dim}-dim states, got {x.shape[1]}")
        h1 = np.tanh(x @ self.w1.T + self.b1)
        h2 = np.tanh(h1 @ self.w2.T + self.b2)
        y = h2 @ self.w3 + self.b3
        return y, h1, h2

    def rewards(self, states) -> np.ndarray:
        """Per-state reward predictions for a (T, d) array."""
        y, _, _ = self._forward(np.asarray(states, dtype=np.float64))
        return y

    def return_gradient(self, snippet: TrajectorySnippet) -> dict[str, np.ndarray]:
        """d(predicted return)/d(params) accumulated over the snippet."""
        x = snippet.states
        _, h1, h2 = self._forward(x)
        grads = self.zero_grads()
        _accumulate_return_grad(self, grads, x, h1, h2, 1.0)
        return grads

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {
            "w1": np.zeros_like(self.w1), "b1": np.zeros_like(self.b1),
            "w2": np.zeros_like(self.w2), "b2": np.zeros_like(self.b2),
            "w3": np.zeros_like(self.w3), "b3": np.zeros(1),
        }

    def get_flat(self) -> np.ndarray:
        return np.concatenate([
            self.w1.ravel(), self.b1, self.w2.ravel(), self.b2, self.w3, [self.b3]
        ])

    def set_flat(self, flat: np.ndarray) -> None:
        sizes = [self.w1.size, self.b1.size, self.w2.size, self.b2.size, self.w3.size, 1]
        parts = np.split(np.asarray(flat, dtype=np.float64), np.cumsum(sizes)[:-1])
        self.w1 = parts[0].reshape(self.w1.shape)
        self.b1 = parts[1].copy()
        self.w2 = parts[2].reshape(self.w2.shape)
        self.b2 = parts[3].copy()
        self.w3 = parts[4].copy()
        self.b3 = float(parts[5][0])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "format": "rewardnet",
                "version": CHECKPOINT_FORMAT_VERSION,
                "input_dim": self.input_dim,
                "hidden": HIDDEN,
                "params": {k: np.asarray(getattr(self, k)).tolist()
                           for k in self.PARAM_NAMES},
            }, fh)

    @classmethod
    def load(cls, path) -> "RewardNet":
        with open(path) as fh:
            d = json.load(fh)
        if d.get("format") != "rewardnet":
            raise FormatVersionError(f"not a reward-net checkpoint: {d.get('format')!r}")
        if str(d.get("version", "")).split(".")[0] != CHECKPOINT_FORMAT_VERSION.split(".")[0]:
            raise FormatVersionError(f"unsupported version {d.get('version')!r}")
        net = cls(int(d["input_dim"]))
        net.w1 = np.asarray(d["params"]["w1"])
        net.b1 = np.asarray(d["params"]["b1"])
        net.w2 = np.asarray(d["params"]["w2"])
        net.b2 = np.asarray(d["params"]["b2"])
        net.w3 = np.asarray(d["params"]["w3"])
        net.b3 = float(d["params"]["b3"])
        return net


def _accumulate_return_grad(net: RewardNet, grads: dict, x, h1, h2, coeff: float):
    """Add coeff * d(sum of per-state outputs)/d(params) into grads."""
    t = x.shape[0]
    grads["b3"][0] += coeff * t
    grads["w3"] += coeff * h2.sum(axis=0)
    dz2 = coeff * (1.0 - h2 * h2) * net.w3          # (T, H)
    grads["w2"] += dz2.T @ h1
    grads["b2"] += dz2.sum(axis=0)
    dz1 = (dz2 @ net.w2) * (1.0 - h1 * h1)          # (T, H)
    grads["w1"] += dz1.T @ x
    grads["b1"] += dz1.sum(axis=0)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def predicted_return(net: RewardNet, snippet: TrajectorySnippet) -> float:
    """Undiscounted sum of per-state reward predictions."""
    return float(net.rewards(snippet.states).sum())


def sim(r_m: float, r_n: float) -> float:
    """Similarity of two returns: 1 / (1 + |r_m - r_n|), in (0, 1]."""
    return 1.0 / (1.0 + abs(r_m - r_n))


def temperatures(batch: CalBatch) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair temperatures t0 + softmax-normalized |pitch_m - pitch_n|.

    The default pool normalizes numerator and denominator pairs jointly;
    POOL_SEPARATE runs one softmax per group.
    """
    batch.validate()

    def raw(pairs):
        return np.array([abs(a.audio.pitch_mean - b.audio.pitch_mean)
                         for a, b in pairs])

    raw_same, raw_diss = raw(batch.same_word_pairs), raw(batch.dissimilar_pairs)
    if batch.pool == POOL_JOINT:
        norm = _softmax(np.concatenate([raw_same, raw_diss]))
        norm_same, norm_diss = norm[:len(raw_same)], norm[len(raw_same):]
    elif batch.pool == POOL_SEPARATE:
        norm_same, norm_diss = _softmax(raw_same), _softmax(raw_diss)
    else:
        raise InvalidParams(f"unknown temperature pool {batch.pool!r}")
    return batch.t0 + norm_same, batch.t0 + norm_diss


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def _cal_terms(net: RewardNet, batch: CalBatch):
    t_same, t_diss = temperatures(batch)
    returns = {}

    def ret(s):
        key = id(s)
        if key not in returns:
            returns[key] = predicted_return(net, s)
        return returns[key]

    sims_same = np.array([sim(ret(a), ret(b)) for a, b in batch.same_word_pairs])
    sims_diss = np.array([sim(ret(a), ret(b)) for a, b in batch.dissimilar_pairs])
    return sims_same, t_same, sims_diss, t_diss


def cal_core(sims_same, t_same, sims_diss, t_diss) -> float:
    """Contrastive loss exactly as printed: the denominator sums over the
    dissimilar pairs only, so the value may be negative."""
    scaled_diss = np.asarray(sims_diss) / np.asarray(t_diss)
    peak = scaled_diss.max()
    lse = peak + math.log(np.exp(scaled_diss - peak).sum())
    per_pair = -np.asarray(sims_same) / np.asarray(t_same) + lse
    return float(per_pair.mean())


def cal_loss(net: RewardNet, batch: CalBatch) -> float:
    """Average contrastive audio loss over the batch's same-word pairs."""
    return cal_core(*_cal_terms(net, batch))


def trex_loss(net: RewardNet, pairs: list[RankedPair]) -> float:
    """Summed softmax cross-entropy preferring the higher-ranked snippet."""
    if not pairs:
        raise InvalidParams("need at least one ranked pair")
    total = 0.0
    for pair in pairs:
        margin = predicted_return(net, pair.tau_i) - predicted_return(net, pair.tau_j)
        total += _softplus(margin)
    return total


def _softplus(z: float) -> float:
    return max(z, 0.0) + math.log1p(math.exp(-abs(z)))


def combined_loss(net: RewardNet, pairs: list[RankedPair],
                  batch: CalBatch | None, alpha: float) -> float:
    if alpha < 0:
        raise InvalidParams("alpha must be non-negative")
    total = trex_loss(net, pairs)
    if alpha > 0.0:
        if batch is None:
            raise InvalidParams("alpha > 0 requires a CAL batch")
        total += alpha * cal_loss(net, batch)
    return total


def gradient(net: RewardNet, pairs: list[RankedPair],
             batch: CalBatch | None, alpha: float) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradient of combined_loss w.r.t. the parameters.

    Temperatures are constants (they depend only on pitch); the |.| in
    sim takes subgradient 0 at the kink.
    """
    coeffs: dict[int, float] = {}
    snippets: dict[int, TrajectorySnippet] = {}
    returns: dict[int, float] = {}

    def ret(s: TrajectorySnippet) -> float:
        key = id(s)
        if key not in returns:
            returns[key] = predicted_return(net, s)
            snippets[key] = s
            coeffs.setdefault(key, 0.0)
        return returns[key]

    for pair in pairs:
        margin = ret(pair.tau_i) - ret(pair.tau_j)
        s = _sigmoid(margin)
        coeffs[id(pair.tau_i)] += s
        coeffs[id(pair.tau_j)] -= s

    if alpha > 0.0 and batch is not None:
        t_same, t_diss = temperatures(batch)
        b_count = len(batch.same_word_pairs)
        for (a, b), t in zip(batch.same_word_pairs, t_same):
            ra, rb = ret(a), ret(b)
            s_ab = sim(ra, rb)
            sign = _sign(ra - rb)
            # d(-s/t)/dRa = sign * s^2 / t, averaged over the B pairs
            g = alpha * sign * s_ab * s_ab / (t * b_count)
            coeffs[id(a)] += g
            coeffs[id(b)] -= g
        scaled = np.array([sim(ret(a), ret(b)) for a, b in batch.dissimilar_pairs]) / t_diss
        soft = _softmax(scaled)
        for (a, b), t, w in zip(batch.dissimilar_pairs, t_diss, soft):
            ra, rb = ret(a), ret(b)
            s_ab = sim(ra, rb)
            sign = _sign(ra - rb)
            g = alpha * w * (-sign) * s_ab * s_ab / t
            coeffs[id(a)] += g
            coeffs[id(b)] -= g

    grads = net.zero_grads()
    for key, coeff in coeffs.items():
        if coeff == 0.0:
            continue
        x = snippets[key].states
        _, h1, h2 = net._forward(x)
        _accumulate_return_grad(net, grads, x, h1, h2, coeff)
    return grads


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _sign(z: float) -> float:
    # subgradient 0 at the |.| kink
    return 0.0 if z == 0.0 else math.copysign(1.0, z)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    alpha: float = 1.0
    t0: float = 0.1
    lr: float = 1e-3
    epochs: int = 60
    num_ranked_pairs: int = 200
    pairs_per_batch: int = 16
    cal_same_pairs: int = 8
    cal_dissimilar_pairs: int = 16
    pool: str = POOL_JOINT
    seed: int = 0


def build_ranked_pairs(snippets: list[TrajectorySnippet], count: int,
                       rng: np.random.Generator) -> list[RankedPair]:
    """Sample distinct-return snippet pairs, ordered worst-first."""
    pairs = []
    guard = 0
    while len(pairs) < count:
        i, j = rng.integers(len(snippets), size=2)
        a, b = snippets[i], snippets[j]
        if a.gt_return == b.gt_return:
            guard += 1
            if guard > 100 * count:
                raise InvalidParams("could not find enough distinct-return pairs")
            continue
        if a.gt_return > b.gt_return:
            a, b = b, a
        pairs.append(RankedPair(a, b))
    return pairs


def sample_cal_batch(snippets: list[TrajectorySnippet], config: TrainConfig,
                     rng: np.random.Generator) -> CalBatch | None:
    by_word: dict[str, list[TrajectorySnippet]] = {}
    for s in snippets:
        if s.audio is not None:
            by_word.setdefault(s.audio.word, []).append(s)
    words = [w for w, group in by_word.items() if len(group) >= 2]
    if len(by_word) < 2 or not words:
        return None
    same = []
    for _ in range(config.cal_same_pairs):
        word = words[rng.integers(len(words))]
        group = by_word[word]
        i, j = rng.choice(len(group), size=2, replace=False)
        same.append((group[i], group[j]))
    w0, w1 = sorted(by_word.keys())[:2]
    diss = []
    for _ in range(config.cal_dissimilar_pairs):
        a = by_word[w0][rng.integers(len(by_word[w0]))]
        b = by_word[w1][rng.integers(len(by_word[w1]))]
        diss.append((a, b))
    return CalBatch(same, diss, t0=config.t0, alpha=config.alpha, pool=config.pool)


def train(net: RewardNet, dataset: list[TrajectorySnippet],
          config: TrainConfig = TrainConfig()) -> list[dict]:
    """Minibatch Adam on the combined loss; returns the per-epoch loss curve.

    Mutates `net` in place. Aborts with diagnostics if the loss goes
    non-finite.
    """
    rng = np.random.default_rng(config.seed)
    all_pairs = build_ranked_pairs(dataset, config.num_ranked_pairs, rng)

    flat = net.get_flat()
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    adam_t = 0
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(all_pairs))
        epoch_total = epoch_trex = epoch_cal = 0.0
        batches = 0
        for lo in range(0, len(all_pairs), config.pairs_per_batch):
            pairs = [all_pairs[k] for k in order[lo:lo + config.pairs_per_batch]]
            batch = None
            if config.alpha > 0:
                batch = sample_cal_batch(dataset, config, rng)
            alpha = config.alpha if batch is not None else 0.0

            grads = gradient(net, pairs, batch, alpha)
            flat_grad = np.concatenate([
                grads["w1"].ravel(), grads["b1"], grads["w2"].ravel(),
                grads["b2"], grads["w3"], grads["b3"],
            ])
            adam_t += 1
            m = 0.9 * m + 0.1 * flat_grad
            v = 0.999 * v + 0.001 * flat_grad * flat_grad
            m_hat = m / (1.0 - 0.9 ** adam_t)
            v_hat = v / (1.0 - 0.999 ** adam_t)
            flat = flat - config.lr * m_hat / (np.sqrt(v_hat) + 1e-8)
            net.set_flat(flat)

            batch_trex = trex_loss(net, pairs)
            batch_cal = cal_loss(net, batch) if batch is not None else 0.0
            total = batch_trex + alpha * batch_cal
            if not math.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}: trex={batch_trex}, "
                    f"cal={batch_cal}, |params|={np.abs(flat).max():.3e}"
                )
            epoch_total += total
            epoch_trex += batch_trex
            epoch_cal += batch_cal
            batches += 1
        curve.append({
            "epoch": epoch,
            "loss": epoch_total / batches,
            "trex": epoch_trex / batches,
            "cal": epoch_cal / batches,
        })
    return curve


def write_loss_curve(path, curve: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,trex,cal\n")
        for row in curve:
            fh.write(f"{row['epoch']},{row['loss']:.8f},{row['trex']:.8f},{row['cal']:.8f}\n")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate_reward(net: RewardNet, snippets: list[TrajectorySnippet]) -> stats.TestResult:
    """Spearman correlation between predicted and ground-truth returns."""
    if len(snippets) < 3:
        raise InsufficientData("need at least 3 held-out snippets")
    predicted = [predicted_return(net, s) for s in snippets]
    actual = [s.gt_return for s in snippets]
    if len(set(predicted)) == 1:
        raise DegenerateRanking("constant predicted returns")
    return stats.spearman(predicted, actual)


def policy_from_reward(reward_fn, grid, spec=None, episodes: int = 30,
                       max_steps: int = 100, seed: int = 0,
                       epsilon: float = 0.1):
    """Plan on a learned reward and score rollouts with the true one.

    reward_fn maps a state-feature vector to a scalar predicted reward (a
    RewardNet works directly); planning replaces the environment reward of
    each transition with the prediction at the successor state, centered so
    the mean prediction matches the step cost (ranking losses leave the
    reward's absolute offset unconstrained, and an uncentered offset turns
    planning into either loitering or suicide). Rollouts are epsilon-greedy
    from random non-terminal starts. Returns (policy dict, mean
    ground-truth episode score over `episodes` seeded rollouts).
    """
    from . import gridworld as gw

    spec = spec or gw.RewardSpec()
    if isinstance(reward_fn, RewardNet):
        net = reward_fn
        reward_fn = lambda feats: float(net.rewards(feats[None, :])[0])

    states = gw.enumerate_states(grid)
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    succ = np.zeros((n, 4), dtype=np.int64)
    rew = np.zeros((n, 4))
    term = np.zeros((n, 4), dtype=bool)
    for i, s in enumerate(states):
        for a in gw.ACTIONS:
            s2, _, t = gw.step(grid, s, a, spec)
            succ[i, a] = index.get(s2, 0)
            rew[i, a] = reward_fn(gw.state_features(grid, s2))
            term[i, a] = t
    rew += spec.step_cost - rew.mean()

    v = np.zeros(n)
    for _ in range(2000):
        q = rew + spec.discount * np.where(term, 0.0, v[succ])
        v_new = q.max(axis=1)
        converged = float(np.max(np.abs(v_new - v))) < 1e-9
        v = v_new
        if converged:
            break
    q = rew + spec.discount * np.where(term, 0.0, v[succ])
    policy = {s: int(np.argmax(q[i])) for i, s in enumerate(states)}

    rng = np.random.default_rng(seed)
    start_pool = [s for s in states if not s.has_nut]
    scores = []
    for _ in range(episodes):
        state = start_pool[rng.integers(len(start_pool))]
        total = 0.0
        for _ in range(max_steps):
            action = policy[state]
            if rng.random() < epsilon:
                action = int(rng.integers(4))
            state2, r, terminal = gw.step(grid, state, action, spec)
            total += r
            state = state2
            if terminal or state not in policy:
                break
        scores.append(total)
    return policy, float(np.mean(scores))


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def write_snippets_jsonl(path, snippets: list[TrajectorySnippet]) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": "snippets", "version": CHECKPOINT_FORMAT_VERSION}) + "\n")
        for s in snippets:
            row = {"states": s.states.tolist(), "gt_return": s.gt_return}
            if s.audio is not None:
                row["audio"] = {"word": s.audio.word, "pitch_mean": s.audio.pitch_mean}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_snippets_jsonl(path) -> list[TrajectorySnippet]:
    snippets = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "snippets":
            raise FormatVersionError(f"not a snippet dataset: {header.get('format')!r}")
        if str(header.get("version", "")).split(".")[0] != CHECKPOINT_FORMAT_VERSION.split(".")[0]:
            raise FormatVersionError(f"unsupported version {header.get('version')!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            audio = None
            if row.get("audio"):
                audio = AudioAnnotation(row["audio"]["word"], row["audio"]["pitch_mean"])
            snippets.append(TrajectorySnippet(
                states=np.asarray(row["states"], dtype=np.float64),
                gt_return=float(row["gt_return"]),
                audio=audio,
            ))
    return snippets
