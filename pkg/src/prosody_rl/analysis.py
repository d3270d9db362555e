"""Session and dataset analysis pipelines.

Mirrors the study bookkeeping: feedback balance, per-feature yes/no
comparisons, rank correlations between prosody and the advantage of the
evaluated action, and normalized teaching performance. Every corrected
p-value states the Bonferroni family size it was corrected with.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .audio import NO, YES, SpeakerBaseline
from .errors import DegenerateRanking, InsufficientData, StateNotFound
from .gridworld import MdpSolution
from .session import SessionData
from .stats import (
    TestResult,
    chi_square_gof,
    point_biserial,
    spearman,
    t_test_two_sample,
)

SIGNIFICANCE = 0.05
CONTINUOUS_FEATURES = ("duration", "pitch_mean", "energy_mean", "loudness_mean")


@dataclass
class IntrlReport:
    n_events: int
    n_yes: int
    n_no: int
    balance: TestResult
    balance_m: int
    feature_t_tests: dict[str, TestResult]
    t_test_m: int
    advantage_correlations: dict[str, TestResult]
    correlation_m: int
    normalized_performance: float | None
    episodes: list[tuple[int, str]]

    @property
    def positive_dominant(self) -> bool:
        return self.n_yes > self.n_no and self.balance.corrected_p < SIGNIFICANCE

    def significant_features(self) -> list[str]:
        return [name for name, res in self.feature_t_tests.items()
                if res.corrected_p < SIGNIFICANCE]

    def to_dict(self) -> dict:
        return {
            "n_events": self.n_events,
            "n_yes": self.n_yes,
            "n_no": self.n_no,
            "balance": {**self.balance.to_dict(), "m": self.balance_m},
            "feature_t_tests": {
                k: {**v.to_dict(), "m": self.t_test_m}
                for k, v in self.feature_t_tests.items()
            },
            "advantage_correlations": {
                k: {**v.to_dict(), "m": self.correlation_m}
                for k, v in self.advantage_correlations.items()
            },
            "normalized_performance": self.normalized_performance,
            "episodes": [{"steps": s, "outcome": o} for s, o in self.episodes],
        }

    def to_text(self) -> str:
        lines = [
            f"events: {self.n_events} ({self.n_yes} yes / {self.n_no} no)",
            f"balance chi-square: stat={self.balance.statistic:.3f} "
            f"corrected_p={self.balance.corrected_p:.2e} (m={self.balance_m}) "
            f"dominant={'yes' if self.positive_dominant else 'no'}",
            f"yes/no feature t-tests (m={self.t_test_m}):",
        ]
        for name, res in self.feature_t_tests.items():
            mark = "*" if res.corrected_p < SIGNIFICANCE else " "
            lines.append(f"  {mark} {name}: t={res.statistic:+.3f} corrected_p={res.corrected_p:.4f}")
        lines.append(f"advantage correlations (m={self.correlation_m}):")
        for name, res in self.advantage_correlations.items():
            mark = "*" if res.corrected_p < SIGNIFICANCE else " "
            lines.append(f"  {mark} {name}: r={res.statistic:+.3f} corrected_p={res.corrected_p:.4f}")
        perf = "n/a" if self.normalized_performance is None else f"{self.normalized_performance:.2f}"
        lines.append(f"normalized performance (mean over deliveries): {perf}")
        return "\n".join(lines)


def _utterance_advantages(session: SessionData, solution: MdpSolution) -> list:
    """Advantage of the step each utterance evaluates (the most recent
    step strictly before the utterance start); None when unmatched."""
    advantages = [None] * len(session.utterances)
    steps = session.steps
    idx = -1
    order = sorted(range(len(session.utterances)),
                   key=lambda i: session.utterances[i].t_start)
    for i in order:
        u = session.utterances[i]
        while idx + 1 < len(steps) and steps[idx + 1].t < u.t_start:
            idx += 1
        if idx < 0:
            continue
        s = steps[idx]
        try:
            advantages[i] = solution.advantage(s.state, s.action)
        except StateNotFound:
            pass
    return advantages


def analyze_intrl_session(session: SessionData, solution: MdpSolution,
                          baseline: SpeakerBaseline | None = None) -> IntrlReport:
    """Full analysis of one interactive session.

    Correlations follow the signed-feature convention: each prosodic value
    is multiplied by +1 (yes) or -1 (no) before correlating with the
    advantage of the evaluated step.
    """
    baseline = baseline or session.baseline
    utts = session.utterances
    if len(utts) < 3:
        raise InsufficientData("need at least 3 feedback events")

    n_yes = sum(1 for u in utts if u.word == YES)
    n_no = len(utts) - n_yes
    total = len(utts)
    balance = chi_square_gof([n_yes, n_no], [total / 2.0, total / 2.0])
    balance_m = 1
    balance = balance.with_correction(balance_m)

    t_tests = {}
    yes_vals = {f: [] for f in CONTINUOUS_FEATURES}
    no_vals = {f: [] for f in CONTINUOUS_FEATURES}
    for u in utts:
        target = yes_vals if u.word == YES else no_vals
        for f in CONTINUOUS_FEATURES:
            target[f].append(getattr(u.features, f))
    t_test_m = len(CONTINUOUS_FEATURES)
    for f in CONTINUOUS_FEATURES:
        t_tests[f] = t_test_two_sample(yes_vals[f], no_vals[f]).with_correction(t_test_m)

    advantages = _utterance_advantages(session, solution)
    keep = [i for i, a in enumerate(advantages) if a is not None]
    adv = np.array([advantages[i] for i in keep])
    correlations = {}
    correlation_m = len(CONTINUOUS_FEATURES) + 1
    for f in CONTINUOUS_FEATURES:
        signed = np.array([
            getattr(utts[i].features, f) * (1.0 if utts[i].word == YES else -1.0)
            for i in keep
        ])
        correlations[f] = spearman(signed, adv).with_correction(correlation_m)
    rep_flags = np.array([utts[i].features.repetition for i in keep], dtype=float)
    if len(set(rep_flags)) > 1:
        correlations["repetition"] = point_biserial(rep_flags, adv).with_correction(correlation_m)

    episodes = session.episode_lengths()
    deliveries = [steps for steps, outcome in episodes if outcome == "delivery"]
    performance = None
    if deliveries:
        from .gridworld import optimal_step_count
        optimal = optimal_step_count(solution)
        performance = float(np.mean([d / optimal for d in deliveries]))

    return IntrlReport(
        n_events=total, n_yes=n_yes, n_no=n_no,
        balance=balance, balance_m=balance_m,
        feature_t_tests=t_tests, t_test_m=t_test_m,
        advantage_correlations=correlations, correlation_m=correlation_m,
        normalized_performance=performance, episodes=episodes,
    )


def intrl_rows_csv(session: SessionData, solution: MdpSolution) -> str:
    """Per-event analysis rows for external plotting."""
    advantages = _utterance_advantages(session, solution)
    lines = ["t,word,duration,pitch_mean,energy_mean,loudness_mean,repetition,advantage"]
    for u, adv in zip(session.utterances, advantages):
        adv_s = "" if adv is None else f"{adv:.6f}"
        f = u.features
        lines.append(
            f"{u.t_start:.3f},{u.word},{f.duration:.6f},{f.pitch_mean:.6f},"
            f"{f.energy_mean:.6f},{f.loudness_mean:.6f},{f.repetition},{adv_s}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# demonstration datasets
# ---------------------------------------------------------------------------

@dataclass
class DemoReport:
    n_snippets: int
    n_yes: int
    n_no: int
    partial: bool
    warnings: list[str] = field(default_factory=list)
    word_share: dict[str, float] = field(default_factory=dict)
    pitch_t_test: TestResult | None = None
    return_t_test: TestResult | None = None
    pitch_return_correlation: dict[str, TestResult] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_snippets": self.n_snippets,
            "n_yes": self.n_yes,
            "n_no": self.n_no,
            "partial": self.partial,
            "warnings": self.warnings,
            "word_share": self.word_share,
            "pitch_t_test": self.pitch_t_test.to_dict() if self.pitch_t_test else None,
            "return_t_test": self.return_t_test.to_dict() if self.return_t_test else None,
            "pitch_return_correlation": {
                k: v.to_dict() for k, v in self.pitch_return_correlation.items()
            },
        }

    def to_text(self) -> str:
        lines = [f"snippets: {self.n_snippets} ({self.n_yes} yes / {self.n_no} no)"]
        if self.partial:
            lines.append("PARTIAL REPORT: " + "; ".join(self.warnings))
        for word, share in self.word_share.items():
            lines.append(f"  share[{word}] = {share:.3f}")
        if self.return_t_test:
            lines.append(f"yes-vs-no return t={self.return_t_test.statistic:+.3f} "
                         f"p={self.return_t_test.p_value:.2e}")
        if self.pitch_t_test:
            lines.append(f"yes-vs-no pitch t={self.pitch_t_test.statistic:+.3f} "
                         f"p={self.pitch_t_test.p_value:.4f}")
        for word, res in self.pitch_return_correlation.items():
            lines.append(f"spearman(pitch, return | {word}) = {res.statistic:+.3f} "
                         f"p={res.p_value:.4f}")
        return "\n".join(lines)


def analyze_demo_dataset(snippets) -> DemoReport:
    """Word balance, return separation and within-word pitch correlations."""
    audio = [s for s in snippets if s.audio is not None]
    if len(audio) < 3:
        raise InsufficientData("need at least 3 audio-annotated snippets")
    yes = [s for s in audio if s.audio.word == YES]
    no = [s for s in audio if s.audio.word == NO]
    report = DemoReport(
        n_snippets=len(audio), n_yes=len(yes), n_no=len(no),
        partial=not yes or not no,
    )
    total_states = sum(len(s.states) for s in audio)
    for word, group in ((YES, yes), (NO, no)):
        report.word_share[word] = sum(len(s.states) for s in group) / total_states
    if report.partial:
        missing = YES if not yes else NO
        report.warnings.append(f"word class {missing!r} absent; two-sample tests skipped")
    else:
        report.pitch_t_test = t_test_two_sample(
            [s.audio.pitch_mean for s in yes], [s.audio.pitch_mean for s in no])
        report.return_t_test = t_test_two_sample(
            [s.gt_return for s in yes], [s.gt_return for s in no])
    for word, group in ((YES, yes), (NO, no)):
        if len(group) >= 3:
            try:
                report.pitch_return_correlation[word] = spearman(
                    [s.audio.pitch_mean for s in group],
                    [s.gt_return for s in group])
            except DegenerateRanking:
                report.warnings.append(f"degenerate ranks within {word!r}")
    return report


def report_to_json(report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)
