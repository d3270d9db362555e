import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prosody_rl import stats
from prosody_rl.errors import (
    DegenerateGroups,
    DegenerateRanking,
    InsufficientData,
    InvalidExpected,
    InvalidParams,
)


def integrate_simpson(f, a, b, n=50_000):
    """Composite Simpson oracle on a fixed 50k-step grid."""
    if n % 2:
        n += 1
    xs = np.linspace(a, b, n + 1)
    ys = np.array([f(x) for x in xs])
    h = (b - a) / n
    return h / 3 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-1:2].sum())


def lower_gamma_quadrature(a, x):
    """P(a, x) by quadrature; substituting t = u^a for a < 1 removes the
    integrable singularity at zero."""
    if a >= 1.0:
        raw = integrate_simpson(lambda u: u ** (a - 1) * math.exp(-u), 0.0 if a > 1 else 1e-14, x)
    else:
        raw = integrate_simpson(lambda t: math.exp(-t ** (1.0 / a)) / a, 0.0, x ** a)
    return raw / math.gamma(a)


def inc_beta_quadrature(a, b, x):
    """I_x(a, b) by quadrature with the same substitution near zero."""
    coeff = math.gamma(a + b) / (math.gamma(a) * math.gamma(b))
    if a >= 1.0:
        raw = integrate_simpson(lambda u: u ** (a - 1) * (1 - u) ** (b - 1), 0.0, x)
    else:
        raw = integrate_simpson(
            lambda t: (1 - t ** (1.0 / a)) ** (b - 1) / a, 0.0, x ** a)
    return coeff * raw


class TestSpecialFunctions:
    def test_reg_lower_gamma_vs_quadrature(self):
        # 20-point grid across shapes and arguments
        grid = [(a, x) for a in (0.5, 1.0, 2.0, 5.0, 9.5)
                for x in (0.1, 1.0, 3.0, 8.0)]
        assert len(grid) == 20
        for a, x in grid:
            oracle = lower_gamma_quadrature(a, x)
            assert stats.reg_lower_gamma(a, x) == pytest.approx(oracle, abs=1e-8), (a, x)

    def test_reg_inc_beta_vs_quadrature(self):
        grid = [(a, b, x) for (a, b) in ((0.5, 0.5), (2.0, 3.0), (5.0, 1.5), (4.0, 4.0))
                for x in (0.1, 0.35, 0.6, 0.9)]
        for a, b, x in grid:
            oracle = inc_beta_quadrature(a, b, x)
            assert stats.reg_inc_beta(a, b, x) == pytest.approx(oracle, abs=1e-8), (a, b, x)

    def test_gamma_complement(self):
        for a, x in ((0.5, 2.0), (3.0, 1.0), (7.0, 10.0)):
            assert stats.reg_lower_gamma(a, x) + stats.reg_upper_gamma(a, x) == pytest.approx(1.0)

    def test_domain_errors(self):
        with pytest.raises(InvalidParams):
            stats.reg_lower_gamma(-1.0, 2.0)
        with pytest.raises(InvalidParams):
            stats.reg_inc_beta(1.0, 1.0, 1.5)


class TestSpearman:
    def test_monotone(self):
        assert stats.spearman([1, 2, 3], [10, 20, 30]).statistic == pytest.approx(1.0)

    def test_reversed(self):
        assert stats.spearman([1, 2, 3], [3, 2, 1]).statistic == pytest.approx(-1.0)

    def test_hand_computed(self):
        # d^2 = 0+1+1+1+1 -> 1 - 6*4/(5*24) = 0.8
        result = stats.spearman([1, 2, 3, 4, 5], [1, 3, 2, 5, 4])
        assert result.statistic == pytest.approx(0.8, abs=1e-12)

    def test_constant_input(self):
        with pytest.raises(DegenerateRanking):
            stats.spearman([1, 1, 1, 1], [1, 2, 3, 4])

    def test_too_small(self):
        with pytest.raises(InsufficientData):
            stats.spearman([1, 2], [2, 1])

    @given(st.lists(st.integers(-1000, 1000), min_size=5, max_size=30, unique=True))
    def test_monotone_transform_invariance(self, xs):
        # well-separated inputs so the transform stays injective in floats
        xs = [float(x) for x in xs]
        rng = np.random.default_rng(42)
        ys = rng.permutation(len(xs)).astype(float)
        base = stats.spearman(xs, ys).statistic
        transformed = [math.tanh(x / 2000.0) for x in xs]
        assert stats.spearman(transformed, ys).statistic == pytest.approx(base, abs=1e-9)

    def test_exact_permutation_small_n(self):
        result = stats.spearman([1, 2, 3, 4, 5], [1, 3, 2, 5, 4],
                                exact_permutation=True)
        assert result.statistic == pytest.approx(0.8)
        assert 0.0 <= result.p_value <= 1.0

    def test_ties_use_average_ranks(self):
        assert list(stats.ranks([10, 20, 20, 30])) == [1.0, 2.5, 2.5, 4.0]


class TestPointBiserial:
    def test_perfect_separation(self):
        assert stats.point_biserial([0, 0, 1, 1], [1, 1, 2, 2]).statistic == pytest.approx(1.0)

    def test_constant_y(self):
        with pytest.raises((DegenerateGroups, DegenerateRanking)):
            stats.point_biserial([0, 1, 0, 1], [5, 5, 5, 5])

    def test_equal_group_means(self):
        assert stats.point_biserial([0, 0, 1, 1], [1, 2, 1, 2]).statistic == pytest.approx(0.0)

    def test_single_group(self):
        with pytest.raises(DegenerateGroups):
            stats.point_biserial([1, 1, 1], [1.0, 2.0, 3.0])


class TestChiSquare:
    def test_known_value(self):
        result = stats.chi_square_gof([30, 10], [20, 20])
        assert result.statistic == pytest.approx(10.0)
        # dof 1 upper tail at 10; independent quadrature oracle
        oracle = 1.0 - lower_gamma_quadrature(0.5, 5.0)
        assert result.p_value == pytest.approx(oracle, abs=1e-8)
        assert result.p_value == pytest.approx(0.001565, abs=1e-5)

    def test_exact_fit(self):
        result = stats.chi_square_gof([20, 20], [20, 20])
        assert result.statistic == 0.0
        assert result.p_value == 1.0

    def test_zero_expected(self):
        with pytest.raises(InvalidExpected):
            stats.chi_square_gof([1, 2], [0, 3])

    def test_statistic_nonnegative_iff_equal(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            o = rng.integers(1, 50, size=4).astype(float)
            e = rng.integers(1, 50, size=4).astype(float)
            result = stats.chi_square_gof(o, e)
            assert result.statistic >= 0
            assert (result.statistic == 0) == bool(np.all(o == e))


class TestTTests:
    def test_identical_samples(self):
        result = stats.t_test_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert result.statistic == 0.0
        assert result.p_value == 1.0

    def test_separated_samples(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0, 1, 1000)
        b = rng.normal(5, 1, 1000)
        assert stats.t_test_two_sample(a, b).p_value < 1e-10

    def test_swap_flips_sign(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0, 1, 50)
        b = rng.normal(0.7, 1.5, 60)
        fwd = stats.t_test_two_sample(a, b)
        rev = stats.t_test_two_sample(b, a)
        assert fwd.statistic == pytest.approx(-rev.statistic)
        assert fwd.p_value == pytest.approx(rev.p_value)

    def test_zero_variance_equal_means(self):
        result = stats.t_test_two_sample([2.0, 2.0], [2.0, 2.0])
        assert result.statistic == 0.0 and result.p_value == 1.0

    def test_paired(self):
        a = [1.0, 2.0, 3.0, 4.0]
        b = [0.5, 1.5, 2.2, 3.1]
        result = stats.t_test_paired(a, b)
        assert result.statistic > 0
        assert 0 < result.p_value < 0.05

    def test_paired_identical(self):
        result = stats.t_test_paired([1.0, 2.0], [1.0, 2.0])
        assert result.p_value == 1.0


class TestBonferroni:
    def test_examples(self):
        assert stats.bonferroni([0.01], 14) == [pytest.approx(0.14)]
        assert stats.bonferroni([0.2], 14) == [1.0]
        assert stats.bonferroni([0.003], 1) == [0.003]

    def test_family_size_check(self):
        with pytest.raises(InvalidParams):
            stats.bonferroni([0.1, 0.2, 0.3], 2)

    def test_result_correction(self):
        result = stats.TestResult(1.0, 0.02, 10).with_correction(4)
        assert result.corrected_p == pytest.approx(0.08)
        assert result.p_value == 0.02
