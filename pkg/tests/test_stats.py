import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from varibit.stats import (GradientHistory, Histogram, empirical_distribution,
                           gradient_diversity, kl_divergence,
                           log_gradient_diversity)


class TestHistogram:
    def test_mass_must_sum_to_one(self):
        with pytest.raises(ValueError):
            Histogram(np.array([0.0, 1.0, 2.0]), np.array([0.3, 0.3]))

    def test_point_mass_lands_in_zero_bin(self):
        h = empirical_distribution(np.zeros(4), 4, (-1.0, 1.0))
        # 0 sits at the lower edge of bin 2 of [-1, 1) split in 4
        assert h.mass.tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_symmetric_grid_splits_evenly(self):
        values = np.linspace(-1.0, 1.0, 200)
        h = empirical_distribution(values, 2, (-1.0, 1.0))
        assert h.mass == pytest.approx([0.5, 0.5], abs=1e-9)

    def test_gaussian_matches_cdf_oracle(self):
        rng = np.random.default_rng(42)
        samples = rng.standard_normal(10_000)
        r = 32
        h = empirical_distribution(samples, r, (-4.0, 4.0))
        cdf = sps.norm.cdf(h.bin_edges)
        expected = np.diff(cdf)
        expected[0] += cdf[0]          # edge bins absorb the tails
        expected[-1] += 1.0 - cdf[-1]
        assert np.abs(h.mass - expected).max() < 0.02

    def test_out_of_range_counted_at_edges(self):
        h = empirical_distribution(np.array([-50.0, 50.0]), 4, (-1.0, 1.0))
        assert h.mass.tolist() == [0.5, 0.0, 0.0, 0.5]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            empirical_distribution(np.array([]), 4, (-1.0, 1.0))

    @given(st.integers(0, 2 ** 32 - 1), st.integers(2, 64), st.integers(1, 500))
    @settings(max_examples=50, deadline=None)
    def test_mass_conservation(self, seed, resolution, n):
        values = np.random.default_rng(seed).normal(0, 3, n)
        h = empirical_distribution(values, resolution, (-1.0, 1.0))
        assert abs(h.mass.sum() - 1.0) <= 1e-9


class TestKlDivergence:
    def test_self_divergence_is_exactly_zero(self):
        values = np.random.default_rng(0).normal(size=500)
        h = empirical_distribution(values, 16, (-4.0, 4.0))
        assert kl_divergence(h, h) == 0.0

    def test_two_bin_hand_case(self):
        edges = np.array([0.0, 0.5, 1.0])
        p = Histogram(edges, np.array([0.5, 0.5]))
        q = Histogram(edges, np.array([0.25, 0.75]))
        expected = 1.0 - 0.5 * math.log2(3.0)  # = 0.20751875...
        assert kl_divergence(p, q) == pytest.approx(expected, abs=1e-6)
        assert kl_divergence(p, q) == pytest.approx(0.2075, abs=1e-4)

    def test_disjoint_masses_large_but_finite(self):
        edges = np.array([0.0, 0.5, 1.0])
        p = Histogram(edges, np.array([1.0, 0.0]))
        q = Histogram(edges, np.array([0.0, 1.0]))
        kl = kl_divergence(p, q, smoothing=1e-9)
        assert math.isfinite(kl)
        assert kl == pytest.approx(math.log2(1e9), rel=1e-3)

    def test_mismatched_edges_rejected(self):
        p = Histogram(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.5]))
        q = Histogram(np.array([0.0, 0.5, 1.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            kl_divergence(p, q)

    def test_non_negative_up_to_smoothing_floor(self):
        rng = np.random.default_rng(7)
        delta = 1e-9
        for _ in range(1000):
            r = int(rng.integers(2, 65))
            edges = np.arange(r + 1, dtype=float)
            p = rng.dirichlet(np.full(r, rng.uniform(0.1, 5.0)))
            q = rng.dirichlet(np.full(r, rng.uniform(0.1, 5.0)))
            kl = kl_divergence(Histogram(edges, p), Histogram(edges, q), delta)
            floor = -r * delta * math.log2((1 + delta) / delta)
            assert kl >= floor


class TestGradientDiversity:
    def test_identical_gradients_give_one(self):
        g = np.array([1.0, 2.0, -3.0])
        assert gradient_diversity([g, g, g, g]) == 1.0

    def test_orthogonal_pair_gives_sqrt2(self):
        a = np.array([1.0, 0.0])
        b = np.array([0.0, 1.0])
        assert gradient_diversity([a, b]) == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_cancellation_gives_infinity(self):
        g = np.array([1.0, -2.0])
        assert gradient_diversity([g, -g]) == math.inf

    def test_all_zero_history_gives_one(self):
        z = np.zeros(3)
        assert gradient_diversity([z, z]) == 1.0

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            gradient_diversity([])

    @given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        grads = [rng.normal(size=8) for _ in range(4)]
        base = gradient_diversity(grads)
        scaled = gradient_diversity([c * g for g in grads])
        if math.isinf(base):
            assert math.isinf(scaled)
        else:
            assert scaled == pytest.approx(base, rel=1e-12)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_at_least_one(self, seed):
        rng = np.random.default_rng(seed)
        grads = [rng.normal(size=6) for _ in range(int(rng.integers(1, 10)))]
        assert gradient_diversity(grads) >= 1.0 - 1e-12


class TestLogGradientDiversity:
    @pytest.mark.parametrize("delta_s,expected", [
        (1.0, 0.0),
        (math.inf, 1.0),
        (math.e ** 2, 2.0),
        (0.0, 1.0),
    ])
    def test_cases(self, delta_s, expected):
        assert log_gradient_diversity(delta_s) == pytest.approx(expected, abs=1e-12)


class TestGradientHistory:
    def test_bounded_ring_drops_oldest(self):
        h = GradientHistory(capacity=2)
        for i in range(4):
            h.append(np.array([float(i)]))
        assert len(h) == 2
        assert [e[0] for e in h.entries] == [2.0, 3.0]

    def test_shape_mismatch_rejected(self):
        h = GradientHistory(capacity=4)
        h.append(np.zeros(3))
        with pytest.raises(ValueError):
            h.append(np.zeros(4))

    def test_capacity_shrink_trims(self):
        h = GradientHistory(capacity=5)
        for i in range(5):
            h.append(np.array([float(i)]))
        h.set_capacity(2)
        assert len(h) == 2
        assert [e[0] for e in h.entries] == [3.0, 4.0]
