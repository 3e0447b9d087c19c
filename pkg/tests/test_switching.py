import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varibit.fixed_point import FixedPointFormat, quantize_tensor
from varibit.rng import substream
from varibit.stats import GradientHistory, empirical_distribution, kl_divergence
from varibit.switching import (QuantizationMapping, Strategy, adapt_lookback,
                               adapt_resolution, adapt_strategy,
                               histogram_range, init_mapping, precision_switch,
                               push_down, push_down_domain, push_up,
                               push_up_suggestions)


def scan_oracle(weights, current, resolution, epsilon_kl, base):
    """Exhaustive first-passing scan over the push_down domain, rebuilt from
    the public primitives only."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    domain = push_down_domain(w, current)
    value_range = histogram_range(w)
    p = empirical_distribution(w, resolution, value_range)
    for fmt in domain:
        quantized = quantize_tensor(w, fmt, substream(base, fmt.frac_length))
        q = empirical_distribution(quantized.values, resolution, value_range)
        if kl_divergence(p, q) < epsilon_kl:
            return fmt
    return domain[-1]


class TestPushDown:
    def test_all_zero_weights_hit_domain_minimum(self):
        current = FixedPointFormat(16, 8)
        result = push_down(np.zeros(64), current, 16, 0.05, rng=substream(0, "pd"))
        assert result == push_down_domain(np.zeros(64), current)[0]
        assert result.frac_length == 0

    def test_gridded_weights_need_at_most_their_grid(self):
        rng = substream(1, "data")
        weights = np.round(rng.normal(0, 0.4, 2000) * 16) / 16  # on the <8,4> grid
        result = push_down(weights, FixedPointFormat(16, 8), 32, 0.05,
                           rng=substream(1, "pd"))
        assert result.frac_length <= 4

    def test_matches_scan_on_standard_normal(self):
        weights = substream(2, "data").normal(0, 1, 1000)
        current = FixedPointFormat(32, 16)
        base = 987654321
        got = push_down(weights, current, 32, 0.05, rng=base)
        want = scan_oracle(weights, current, 32, 0.05, base)
        assert got == want

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_scan_on_mixed_tensors(self, seed):
        rng = np.random.default_rng(3000 + seed)
        n = int(rng.integers(1000, 10001))
        scale = float(rng.uniform(0.05, 3.0))
        kind = seed % 3
        if kind == 0:
            weights = rng.normal(0, scale, n)
        elif kind == 1:
            weights = rng.uniform(-scale, scale, n)
        else:
            weights = rng.laplace(0, scale, n)
        current = FixedPointFormat(32, 16)
        resolution = int(rng.integers(16, 49))
        eps = float(rng.choice([0.02, 0.05, 0.1]))
        base = int(rng.integers(0, 2 ** 63))
        assert push_down(weights, current, resolution, eps, base) == \
            scan_oracle(weights, current, resolution, eps, base)

    def test_empty_weights_rejected(self):
        with pytest.raises(ValueError):
            push_down(np.array([]), FixedPointFormat(8, 4), 16, 0.05, 1)

    def test_generator_and_int_base_agree(self):
        weights = substream(4, "data").normal(0, 1, 500)
        gen = substream(5, "pd")
        base = int(substream(5, "pd").integers(0, 2 ** 63))
        a = push_down(weights, FixedPointFormat(16, 8), 32, 0.05, gen)
        b = push_down(weights, FixedPointFormat(16, 8), 32, 0.05, base)
        assert a == b


class TestPushUp:
    def test_worked_case_suggestions(self):
        # diversity e^2 with a 4-fractional-bit minimum
        s1, s2 = push_up_suggestions(math.e ** 2, 4)
        assert s1 == 1
        assert s2 == 28

    def test_worked_case_strategies(self):
        minimal = FixedPointFormat(32, 4)
        lo = push_up(math.e ** 2, minimal, minimal, Strategy.MIN)
        mid = push_up(math.e ** 2, minimal, minimal, Strategy.MEAN)
        hi = push_up(math.e ** 2, minimal, minimal, Strategy.MAX)
        assert lo.frac_length == 4 + 1
        assert mid.frac_length == 4 + 15  # ceil(0.5 * (1 + 28))
        assert hi.frac_length == 4 + 28

    def test_unit_diversity_adds_one_bit(self):
        minimal = FixedPointFormat(6, 3)
        out = push_up(1.0, minimal, minimal, Strategy.MEAN)
        assert out == FixedPointFormat(7, 4)

    def test_infinite_diversity_uses_guarded_path(self):
        minimal = FixedPointFormat(32, 4)
        out = push_up(math.inf, minimal, minimal, Strategy.MAX)
        # log-diversity sentinel 1: s1 guarded to 1, s2 = 31 - fl_min
        assert out.frac_length == 4 + 27

    def test_clamps_to_word_length(self):
        minimal = FixedPointFormat(5, 4)
        out = push_up(math.e ** 2, minimal, minimal, Strategy.MAX)
        assert out.word_length == 6
        assert out.frac_length == out.word_length - 1

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_format_invariants_for_random_inputs(self, seed):
        rng = np.random.default_rng(seed)
        delta_s = math.inf if rng.random() < 0.1 else float(rng.uniform(0, math.e ** 6))
        wl = int(rng.integers(1, 33))
        fl = int(rng.integers(0, wl))
        minimal = FixedPointFormat(wl, fl)
        strategy = Strategy(["min", "mean", "max"][rng.integers(0, 3)])
        out = push_up(delta_s, minimal, minimal, strategy)
        assert 1 <= out.word_length <= 32
        assert 0 <= out.frac_length <= out.word_length - 1

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_strategy(self, seed):
        rng = np.random.default_rng(seed)
        delta_s = math.inf if rng.random() < 0.1 else float(rng.uniform(0, math.e ** 6))
        wl = int(rng.integers(1, 33))
        minimal = FixedPointFormat(wl, int(rng.integers(0, wl)))
        fls = [push_up(delta_s, minimal, minimal, s).frac_length
               for s in (Strategy.MIN, Strategy.MEAN, Strategy.MAX)]
        assert fls[0] <= fls[1] <= fls[2]


class TestAdaptStrategy:
    def test_escalates_mean_to_max(self):
        # recent average 2.0 vs current 2.5
        out = adapt_strategy([1.5, 2.5], [2], Strategy.MEAN)
        assert out is Strategy.MAX

    def test_escalates_min_to_mean(self):
        out = adapt_strategy([1.5, 2.5], [2], Strategy.MIN)
        assert out is Strategy.MEAN

    def test_improving_loss_drops_to_min(self):
        # recent average 2.0 vs current 1.5
        for current in (Strategy.MIN, Strategy.MEAN, Strategy.MAX):
            assert adapt_strategy([2.5, 1.5], [2], current) is Strategy.MIN

    def test_max_stays_max_without_matching_branch(self):
        assert adapt_strategy([1.5, 2.5], [2], Strategy.MAX) is Strategy.MAX

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            adapt_strategy([], [2], Strategy.MEAN)

    def test_automaton_full_walk(self):
        # non-improving losses escalate min -> mean -> max; an improving one
        # resets to min from anywhere
        st_now = Strategy.MIN
        st_now = adapt_strategy([1.0, 1.0], [1], st_now)
        assert st_now is Strategy.MEAN
        st_now = adapt_strategy([1.0, 1.0], [1], st_now)
        assert st_now is Strategy.MAX
        st_now = adapt_strategy([2.0, 1.0], [2], st_now)
        assert st_now is Strategy.MIN


class TestAdaptLookback:
    def test_unit_diversity_full_momentum(self):
        assert adapt_lookback(1.0, 4, 1.0, (4, 64)) == 64

    def test_infinite_diversity_pins_upper(self):
        assert adapt_lookback(math.inf, 10, 1.0, (4, 64)) == 64

    def test_momentum_blend(self):
        assert adapt_lookback(1.0, 4, 0.5, (4, 64)) == 34  # ceil(32 + 2)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_stays_in_bounds(self, seed):
        rng = np.random.default_rng(seed)
        lwr = int(rng.integers(1, 10))
        upr = lwr + int(rng.integers(0, 60))
        lb = int(rng.integers(lwr, upr + 1))
        gamma = float(rng.uniform(0.01, 1.0))
        delta_s = math.inf if rng.random() < 0.1 else float(rng.uniform(0, 50))
        out = adapt_lookback(delta_s, lb, gamma, (lwr, upr))
        assert lwr <= out <= upr


class TestAdaptResolution:
    def test_upper_lookback_raises_resolution(self):
        assert adapt_resolution(64, (4, 64), 32, (8, 64)) == 33

    def test_lower_lookback_clamps_at_floor(self):
        assert adapt_resolution(4, (4, 64), 8, (8, 64)) == 8

    def test_interior_lookback_keeps_resolution(self):
        assert adapt_resolution(30, (4, 64), 32, (8, 64)) == 32

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_stays_in_bounds(self, seed):
        rng = np.random.default_rng(seed)
        lb_bounds = (4, 64)
        r_lwr = int(rng.integers(2, 16))
        r_upr = r_lwr + int(rng.integers(0, 60))
        lb = int(rng.integers(4, 65))
        res = int(rng.integers(r_lwr, r_upr + 1))
        out = adapt_resolution(lb, lb_bounds, res, (r_lwr, r_upr))
        assert r_lwr <= out <= r_upr


def _mapping(names, lookback_bounds=(4, 64)):
    return init_mapping(names, FixedPointFormat(8, 4), lookback_bounds,
                        (8, 64), gamma=0.5, epsilon_kl=0.05, seed=99)


class TestPrecisionSwitch:
    def test_below_lookback_keeps_formats(self):
        q = _mapping(["a", "b"])
        master = {"a": np.zeros(16), "b": np.zeros(16)}
        grads = {"a": np.ones(16), "b": np.ones(16)}
        before = {n: s.format for n, s in q.layers.items()}
        precision_switch(grads, 1.0, q, master)
        assert {n: s.format for n, s in q.layers.items()} == before
        assert all(len(s.grads) == 1 for s in q.layers.values())

    def test_missing_layer_rejected(self):
        q = _mapping(["a", "b"])
        with pytest.raises(KeyError):
            precision_switch({"a": np.ones(4)}, 1.0, q,
                             {"a": np.zeros(4), "b": np.zeros(4)})

    def test_trigger_runs_push_down_then_push_up(self):
        # lookback pinned to 1 so the very first batch triggers; identical
        # gradient -> diversity 1 -> one extra fractional bit above minimal
        q = _mapping(["a"], lookback_bounds=(1, 1))
        master = {"a": np.zeros(32)}
        precision_switch({"a": np.ones(32)}, 1.0, q, master)
        minimal = push_down_domain(master["a"], FixedPointFormat(8, 4))[0]
        expected = push_up(1.0, minimal, minimal, q.strategy)
        assert q.layers["a"].format == expected
        assert len(q.layers["a"].grads) == 0  # window cleared after the switch

    def test_only_triggered_layer_switches(self):
        q = _mapping(["a", "b"])
        q.layers["a"].lookback = 1
        q.layers["a"].grads.set_capacity(1)
        # freeze adaptation pressure off layer b by keeping its lookback bounds
        master = {"a": substream(0, "wa").normal(0, 0.5, 64),
                  "b": substream(0, "wb").normal(0, 0.5, 64)}
        grads = {"a": np.ones(64), "b": np.ones(64)}
        before_b = q.layers["b"].format
        precision_switch(grads, 1.0, q, master)
        assert q.layers["b"].format == before_b
        assert len(q.layers["a"].grads) == 0  # switched and cleared
        assert len(q.layers["b"].grads) == 1  # still accumulating

    def test_strategy_adapts_once_per_call(self):
        q = _mapping(["a"])
        master = {"a": np.zeros(8)}
        assert q.strategy is Strategy.MEAN
        precision_switch({"a": np.ones(8)}, 1.0, q, master)
        # first call: average equals current -> escalate mean -> max
        assert q.strategy is Strategy.MAX

    def test_step_counter_advances(self):
        q = _mapping(["a"])
        master = {"a": np.zeros(8)}
        precision_switch({"a": np.ones(8)}, 1.0, q, master)
        precision_switch({"a": np.ones(8)}, 1.0, q, master)
        assert q.step == 2
