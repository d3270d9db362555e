"""Statistical primitives for the session analyses.

Implements exactly the tests the analysis pipelines need (Spearman,
point-biserial, chi-square goodness of fit, Welch and paired t) on top of
self-contained regularized incomplete gamma/beta functions, so p-values
do not depend on an external stats package. Tail algorithms follow the
classic series/continued-fraction split (Numerical Recipes style) and are
accurate to ~1e-14, well inside the 1e-8 the tests demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .errors import (
    DegenerateGroups,
    DegenerateRanking,
    InsufficientData,
    InvalidExpected,
    InvalidParams,
)

_MAX_ITER = 500
_EPS = 1e-15
_TINY = 1e-300


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n: int
    corrected_p: float | None = None

    def with_correction(self, m: int) -> "TestResult":
        return TestResult(self.statistic, self.p_value, self.n,
                          corrected_p=min(1.0, m * self.p_value))

    def to_dict(self) -> dict:
        d = {"statistic": self.statistic, "p_value": self.p_value, "n": self.n}
        if self.corrected_p is not None:
            d["corrected_p"] = self.corrected_p
        return d


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def reg_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) = gamma(a, x) / Gamma(a)."""
    if a <= 0 or x < 0:
        raise InvalidParams("need a > 0 and x >= 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def reg_upper_gamma(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0 or x < 0:
        raise InvalidParams("need a > 0 and x >= 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def _gamma_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # modified Lentz continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise InvalidParams("need a > 0 and b > 0")
    if not (0.0 <= x <= 1.0):
        raise InvalidParams("need x in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def student_t_sf(t: float, dof: float) -> float:
    """Two-sided p-value for a Student t statistic."""
    if dof <= 0:
        raise InvalidParams("dof must be positive")
    if not math.isfinite(t):
        return 0.0
    x = dof / (dof + t * t)
    return reg_inc_beta(dof / 2.0, 0.5, x)


def chi2_sf(stat: float, dof: int) -> float:
    """Upper-tail probability of a chi-square statistic."""
    if dof <= 0:
        raise InvalidParams("dof must be positive")
    return reg_upper_gamma(dof / 2.0, stat / 2.0)


# ---------------------------------------------------------------------------
# rank helpers
# ---------------------------------------------------------------------------

def ranks(values) -> np.ndarray:
    """Fractional ranks starting at 1, ties averaged."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    r = np.empty(len(v))
    r[order] = np.arange(1, len(v) + 1, dtype=np.float64)
    # average the rank over each tied run
    sorted_v = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        if j > i:
            r[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return r


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise DegenerateRanking("zero variance input")
    return float(xc @ yc) / denom


def _correlation_p(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return student_t_sf(t, n - 2)


# ---------------------------------------------------------------------------
# tests
# ---------------------------------------------------------------------------

def spearman(x, y, exact_permutation: bool = False) -> TestResult:
    """Spearman rank correlation; p via the t approximation.

    exact_permutation enumerates all orderings (n <= 8 only) for an exact
    two-sided p, useful when n is too small for the approximation.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise InvalidParams("inputs must have equal length")
    if len(x) < 3:
        raise InsufficientData("need at least 3 pairs")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateRanking("constant input")
    r = _pearson(ranks(x), ranks(y))
    if exact_permutation:
        if len(x) > 8:
            raise InvalidParams("exact permutation p only supported for n <= 8")
        rx = ranks(x)
        observed = abs(r)
        count = 0
        total = 0
        for perm in permutations(ranks(y)):
            total += 1
            if abs(_pearson(rx, np.asarray(perm))) >= observed - 1e-12:
                count += 1
        return TestResult(r, count / total, len(x))
    return TestResult(r, _correlation_p(r, len(x)), len(x))


def point_biserial(flags, y) -> TestResult:
    """Pearson correlation between a {0,1} flag and a continuous variable."""
    flags = np.asarray(flags, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(flags) != len(y):
        raise InvalidParams("inputs must have equal length")
    if not set(np.unique(flags)) <= {0.0, 1.0}:
        raise InvalidParams("flags must be 0/1")
    if len(np.unique(flags)) < 2:
        raise DegenerateGroups("both flag groups must be non-empty")
    r = _pearson(flags, y)
    return TestResult(r, _correlation_p(r, len(y)), len(y))


def chi_square_gof(observed, expected) -> TestResult:
    """Goodness-of-fit chi-square with k-1 degrees of freedom."""
    o = np.asarray(observed, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    if len(o) != len(e):
        raise InvalidParams("observed and expected must have equal length")
    if len(o) < 2:
        raise InvalidParams("need at least two categories")
    if np.any(e <= 0):
        raise InvalidExpected("expected counts must all be positive")
    stat = float(np.sum((o - e) ** 2 / e))
    p = 1.0 if stat == 0.0 else chi2_sf(stat, len(o) - 1)
    return TestResult(stat, p, int(o.sum()))


def t_test_two_sample(a, b) -> TestResult:
    """Welch's two-sample t-test with Welch-Satterthwaite dof."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise InsufficientData("each group needs at least 2 samples")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    if va + vb == 0.0:
        if diff == 0.0:
            return TestResult(0.0, 1.0, len(a) + len(b))
        return TestResult(math.copysign(math.inf, diff), 0.0, len(a) + len(b))
    t = diff / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (
        va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1)
    )
    return TestResult(t, student_t_sf(t, dof), len(a) + len(b))


def t_test_paired(a, b) -> TestResult:
    """One-sample t on paired differences a - b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b):
        raise InvalidParams("paired samples must have equal length")
    if len(a) < 2:
        raise InsufficientData("need at least 2 pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        if d.mean() == 0.0:
            return TestResult(0.0, 1.0, len(d))
        return TestResult(math.copysign(math.inf, d.mean()), 0.0, len(d))
    t = d.mean() / (sd / math.sqrt(len(d)))
    return TestResult(t, student_t_sf(t, len(d) - 1), len(d))


def bonferroni(p_values, m: int) -> list[float]:
    """Multiply each p by the family size m, clamped at 1."""
    p_values = list(p_values)
    if m < len(p_values):
        raise InvalidParams("m must be at least the number of tests")
    return [min(1.0, m * p) for p in p_values]
