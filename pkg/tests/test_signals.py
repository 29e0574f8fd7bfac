import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentlab.errors import ConfigError, ShapeError, StateError
from sentlab.signals import (
    SIGNAL_NAMES,
    SampleTrace,
    SignalVector,
    TraceBank,
    assemble_signals,
    empirical_distribution,
    fls_raw,
    history_entropy,
    instant_entropy,
    instant_loss,
    mask_signals,
    normalize_fls,
    signal_matrix,
    update_emal,
    update_history,
)


def entropy_oracle(history, k):
    counts = Counter(history)
    n = len(history)
    return sum(-(c / n) * math.log(c / n) for c in counts.values()) / math.log(k)


class TestInstantLoss:
    def test_certain_label(self):
        assert instant_loss([0.0, 1.0], 1) == 0.0

    def test_half(self):
        assert instant_loss([0.5, 0.5], 0) == pytest.approx(0.6931471805599453, abs=1e-15)

    def test_clamped_at_zero_probability(self):
        assert instant_loss([1.0, 0.0], 1) == pytest.approx(27.631021115928547, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            instant_loss([0.5, 0.5], 2)


class TestEmal:
    def test_first_value_is_taken_directly(self):
        t = update_emal(SampleTrace("a"), 2.3, 0.9)
        assert t.emal == 2.3 and t.emal_initialized

    def test_recursion_step(self):
        t = SampleTrace("a", emal=1.0, emal_initialized=True)
        assert update_emal(t, 0.0, 0.9).emal == pytest.approx(0.9, abs=1e-15)

    def test_gamma_one_freezes(self):
        t = SampleTrace("a", emal=1.7, emal_initialized=True)
        assert update_emal(t, 100.0, 1.0).emal == 1.7

    @pytest.mark.parametrize("gamma", [-0.1, 1.5])
    def test_gamma_out_of_range(self, gamma):
        with pytest.raises(ConfigError):
            update_emal(SampleTrace("a"), 1.0, gamma)

    @given(st.lists(st.floats(0, 30), min_size=1, max_size=40), st.floats(0, 1))
    def test_stays_within_loss_range(self, losses, gamma):
        t = SampleTrace("a")
        for v in losses:
            update_emal(t, v, gamma)
        assert min(losses) - 1e-9 <= t.emal <= max(losses) + 1e-9


class TestHistory:
    def test_fifo_eviction(self):
        t = SampleTrace("a", history=[0, 1, 2])
        assert update_history(t, 1, 3).history == [1, 2, 1]

    def test_append_to_empty(self):
        assert update_history(SampleTrace("a"), 2, 5).history == [2]

    def test_length_grows_until_capacity(self):
        t = SampleTrace("a")
        for n in range(1, 9):
            update_history(t, n % 3, 5)
            assert len(t.history) == min(n, 5)

    def test_empirical_distribution_examples(self):
        np.testing.assert_array_equal(empirical_distribution([1], 3), [0, 1, 0])
        np.testing.assert_array_equal(empirical_distribution([0, 1, 0, 1], 2), [0.5, 0.5])

    def test_empty_history_is_a_state_error(self):
        with pytest.raises(StateError):
            empirical_distribution([], 3)


class TestEntropies:
    def test_constant_history(self):
        assert history_entropy([2, 2, 2], 3) == 0.0
        assert instant_entropy([2, 2, 2], 2, 3) == 0.0

    def test_uniform_history_is_one(self):
        assert history_entropy([0, 1, 2, 3], 4) == pytest.approx(1.0, abs=1e-15)

    def test_hand_computed_he(self):
        expected = (-(2 / 3) * math.log(2 / 3) - (1 / 3) * math.log(1 / 3)) / math.log(2)
        assert history_entropy([0, 0, 1], 2) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.9183, abs=1e-4)

    def test_hand_computed_ie(self):
        assert instant_entropy([0, 1], 1, 2) == pytest.approx(0.5, abs=1e-15)

    def test_single_class_is_config_error(self):
        with pytest.raises(ConfigError):
            history_entropy([0], 1)

    @settings(max_examples=200)
    @given(st.integers(2, 6).flatmap(
        lambda k: st.tuples(st.just(k), st.lists(st.integers(0, k - 1), min_size=1, max_size=12))))
    def test_bounds_and_ordering(self, case):
        k, hist = case
        he = history_entropy(hist, k)
        ie = instant_entropy(hist, hist[-1], k)
        assert 0.0 <= ie <= he + 1e-15 <= 1.0 + 1e-12


class TestFls:
    def test_cosine_cases(self):
        v = np.array([1.0, -2.0, 0.5])
        assert fls_raw(v, v) == pytest.approx(1.0)
        assert fls_raw([1, 0], [0, 3]) == 0.0
        assert fls_raw(v, -v) == pytest.approx(-1.0)

    def test_zero_vector_gives_zero(self):
        assert fls_raw([0, 0], [1, 2]) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fls_raw([1, 2], [1, 2, 3])

    def test_normalize(self):
        np.testing.assert_allclose(normalize_fls([-1, 0, 1]), [0, 0.5, 1])
        np.testing.assert_allclose(normalize_fls([0.3, 0.3, 0.3]), [0.5, 0.5, 0.5])

    @given(st.lists(st.floats(-1, 1), min_size=2, max_size=30))
    def test_normalize_is_monotone(self, raw):
        out = normalize_fls(raw)
        assert np.all((out >= 0) & (out <= 1))
        order = np.argsort(raw, kind="stable")
        assert np.all(np.diff(out[order]) >= -1e-12)


class TestAssembly:
    def test_first_epoch_certain_prediction(self):
        t = SampleTrace("a", history=[1])
        sv = assemble_signals(t, [0.0, 1.0, 0.0], 1, [1.0, 0.0], [1.0, 0.0], k=3, epoch=0)
        np.testing.assert_array_equal(sv.as_array(), [0.0, 0.0, 0.0, 0.0, 1.0])

    def test_slots_follow_components(self):
        t = SampleTrace("a", emal=0.4, emal_initialized=True, history=[0, 1, 1, 2])
        probs = [0.2, 0.7, 0.1]
        sv = assemble_signals(t, probs, 0, [1.0, 2.0], [2.0, 1.0], k=3, gamma=0.8, epoch=3)
        il = -math.log(0.2)
        assert sv.il == pytest.approx(il)
        assert sv.emal == pytest.approx(0.8 * 0.4 + 0.2 * il)
        assert sv.he == history_entropy([0, 1, 1, 2], 3)
        assert sv.ie == instant_entropy([0, 1, 1, 2], 2, 3)
        assert sv.fls == pytest.approx(0.8)

    def test_same_epoch_twice_is_rejected(self):
        t = SampleTrace("a", history=[0])
        assemble_signals(t, [0.6, 0.4], 0, [1, 1], [1, 1], k=2, epoch=4)
        emal = t.emal
        with pytest.raises(StateError):
            assemble_signals(t, [0.6, 0.4], 0, [1, 1], [1, 1], k=2, epoch=4)
        assert t.emal == emal

    def test_needs_history(self):
        with pytest.raises(StateError):
            assemble_signals(SampleTrace("a"), [0.5, 0.5], 0, [1], [1], k=2)

    def test_vector_round_trip(self):
        sv = SignalVector.from_array([1, 2, 0.5, 0.25, 0.75])
        assert SignalVector.from_array(sv.as_array()) == sv
        with pytest.raises(ShapeError):
            SignalVector.from_array([1, 2])


class TestTraceBank:
    def test_matches_per_sample_traces(self, rng):
        n, k, cap, gamma = 40, 4, 5, 0.7
        bank = TraceBank(n, k, cap, gamma)
        traces = [SampleTrace(str(i)) for i in range(n)]
        labels = rng.integers(0, k, size=n)
        for epoch in range(9):
            probs = rng.dirichlet(np.ones(k), size=n)
            il = bank.observe(epoch, probs, labels)
            first, last = rng.normal(size=(n, 6)), rng.normal(size=(n, 6))
            sg = signal_matrix(bank, il, first, last)
            for i, t in enumerate(traces):
                update_history(t, int(np.argmax(probs[i])), cap)
                sv = assemble_signals(t, probs[i], labels[i], first[i], last[i], k, gamma, epoch)
                np.testing.assert_allclose(sg[i], sv.as_array(), atol=1e-12, rtol=0)
                assert bank.history(i) == t.history

    def test_repeated_epoch(self):
        bank = TraceBank(2, 2)
        bank.observe(0, [[0.5, 0.5], [0.1, 0.9]], [0, 1])
        with pytest.raises(StateError):
            bank.observe(0, [[0.5, 0.5], [0.1, 0.9]], [0, 1])

    def test_masking_zeroes_named_columns(self, rng):
        sg = rng.normal(size=(10, 5))
        out = mask_signals(sg, ["IL", "FLS"])
        assert np.all(out[:, [1, 4]] == 0)
        np.testing.assert_array_equal(out[:, [0, 2, 3]], sg[:, [0, 2, 3]])
        assert SIGNAL_NAMES == ("EMAL", "IL", "HE", "IE", "FLS")
