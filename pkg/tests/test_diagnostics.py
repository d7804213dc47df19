import numpy as np
import pytest
from scipy import stats

from ttu.diagnostics import (
    DiagnosticsError,
    ebfmi,
    ess,
    mcse_mean,
    rank_histogram,
    split_rhat,
)


def iid_chains(seed, chains=4, n=3000):
    return np.random.default_rng(seed).standard_normal((chains, n))


class TestSplitRhat:
    def test_iid_chains_near_one(self):
        assert split_rhat(iid_chains(0)) < 1.01

    def test_shifted_chain_flagged(self):
        draws = iid_chains(1)
        draws[0] += 5.0
        assert split_rhat(draws) > 1.5

    def test_constant_chains_convention(self):
        assert split_rhat(np.ones((4, 100))) == 1.0

    def test_within_chain_drift_detected(self):
        # split halves expose a trend even when chains agree marginally
        rng = np.random.default_rng(2)
        trend = np.linspace(-2, 2, 1000)
        draws = rng.standard_normal((4, 1000)) * 0.2 + trend
        assert split_rhat(draws) > 1.2

    def test_input_validation(self):
        with pytest.raises(DiagnosticsError):
            split_rhat(np.ones((1, 50)))
        with pytest.raises(DiagnosticsError):
            split_rhat(np.ones((4, 3)))

    def test_numerical_floor(self):
        assert split_rhat(iid_chains(3)) >= 1 - 1e-3


class TestEss:
    def test_iid_near_nominal(self):
        draws = iid_chains(4, chains=4, n=2000)
        n = draws.size
        assert 0.8 * n <= ess(draws, "bulk") <= 1.2 * n
        assert 0.8 * n <= ess(draws, "tail") <= 1.2 * n

    def test_ar1_matches_analytic_autocorrelation_time(self):
        # AR(1) with phi: ESS ~= N (1-phi)/(1+phi)
        phi = 0.9
        rng = np.random.default_rng(5)
        chains = []
        for _ in range(4):
            e = rng.standard_normal(5000)
            x = np.empty(5000)
            x[0] = e[0]
            for t in range(1, 5000):
                x[t] = phi * x[t - 1] + np.sqrt(1 - phi * phi) * e[t]
            chains.append(x)
        draws = np.array(chains)
        expected = draws.size * (1 - phi) / (1 + phi)
        got = ess(draws, "bulk")
        assert abs(got - expected) / expected < 0.3

    def test_minimal_input_finite(self):
        draws = np.array([[0.1, 0.9, -0.3, 0.5], [0.2, -0.1, 0.8, -0.6]])
        assert ess(draws, "bulk") > 0
        assert ess(draws, "tail") > 0

    def test_unknown_kind(self):
        with pytest.raises(DiagnosticsError):
            ess(iid_chains(6, n=10), "median")


class TestMcse:
    def test_iid_scales_like_sqrt_n(self):
        draws = iid_chains(7, chains=4, n=5000)
        got = mcse_mean(draws)
        assert got == pytest.approx(1.0 / np.sqrt(draws.size), rel=0.3)


class TestEbfmi:
    def test_iid_energy_near_two(self):
        energy = np.random.default_rng(8).standard_normal(20000)
        assert ebfmi(energy) == pytest.approx(2.0, abs=0.3)

    def test_random_walk_energy_low(self):
        phi = 0.99
        rng = np.random.default_rng(9)
        e = rng.standard_normal(20000)
        x = np.empty(20000)
        x[0] = e[0]
        for t in range(1, 20000):
            x[t] = phi * x[t - 1] + np.sqrt(1 - phi * phi) * e[t]
        assert ebfmi(x) < 0.1

    def test_two_values_positive_finite(self):
        v = ebfmi(np.array([0.0, 1.0]))
        assert np.isfinite(v) and v > 0

    def test_degenerate_energy_errors(self):
        with pytest.raises(DiagnosticsError, match="degenerate"):
            ebfmi(np.ones(100))
        with pytest.raises(DiagnosticsError):
            ebfmi(np.array([1.0]))


class TestRankHistogram:
    def test_iid_uniform_by_chisquare(self):
        draws = iid_chains(10, chains=4, n=2000)
        counts = rank_histogram(draws, bins=20)
        assert counts.shape == (4, 20)
        for c in range(4):
            assert counts[c].sum() == 2000
            _, p = stats.chisquare(counts[c])
            assert p > 0.001

    def test_dominant_chain_in_top_bins(self):
        rng = np.random.default_rng(11)
        draws = rng.standard_normal((3, 500))
        draws[2] += 100.0  # strictly larger than every other draw
        counts = rank_histogram(draws, bins=10)
        # chain 2 owns the top third of the pooled ranks (bins 6..9; ranks
        # 1001..1500 of 1500 start inside bin 6)
        assert counts[2, :6].sum() == 0
        assert counts[2, 6:].sum() == 500

    def test_too_many_bins(self):
        with pytest.raises(DiagnosticsError, match="too many bins"):
            rank_histogram(np.ones((2, 5)), bins=20)

    def test_tie_stability(self):
        draws = np.zeros((2, 10))
        a = rank_histogram(draws, bins=5)
        b = rank_histogram(draws, bins=5)
        assert np.array_equal(a, b)
        assert a[0].sum() == 10
