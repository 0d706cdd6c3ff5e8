import csv
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modeforge.openset import (ILLEGAL, DEFAULT_TEMPERATURES, DEFAULT_THRESHOLDS, DecisionConfig,
                               decide, decide_batch, open_accuracy, softmax_with_temperature,
                               sweep, write_confusion_csv)

logit_vectors = arrays(np.float64, st.integers(1, 30),
                       elements=st.floats(-50, 50, allow_nan=False, width=64))
temps = st.floats(0.05, 20.0)


def off_max_mass(z, T):
    """1 - p_max, summed from the non-maximal probabilities so it stays representable."""
    p = softmax_with_temperature(z, T)
    m = np.argmax(z, axis=-1)
    mask = np.ones_like(p, dtype=bool)
    np.put_along_axis(mask, m[..., None], False, axis=-1)
    return np.where(mask, p, 0.0).sum(axis=-1)


class TestDecisionConfig:
    @pytest.mark.parametrize("T", [0.0, -1.0, np.inf, np.nan])
    def test_bad_temperature(self, T):
        with pytest.raises(ValueError):
            DecisionConfig(T, 0.5)

    @pytest.mark.parametrize("tau", [-0.01, 1.01])
    def test_bad_threshold(self, tau):
        with pytest.raises(ValueError):
            DecisionConfig(1.0, tau)


class TestSoftmax:
    def test_scalar_value(self):
        p = softmax_with_temperature([2.0, 0.0], 2.0)
        assert p[0] == pytest.approx(0.7310585786300049, abs=1e-15)

    def test_equal_logits_uniform(self):
        np.testing.assert_allclose(softmax_with_temperature(np.full(7, 3.3), 0.4), 1 / 7)

    def test_unit_temperature_is_standard(self, rng):
        z = rng.normal(size=5)
        np.testing.assert_allclose(softmax_with_temperature(z, 1.0), np.exp(z) / np.exp(z).sum())

    def test_large_logits_finite(self):
        p = softmax_with_temperature([1000.0, 999.0, -1000.0], 0.3)
        assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("T", [0.0, -2.0])
    def test_rejects_temperature(self, T):
        with pytest.raises(ValueError):
            softmax_with_temperature([1.0], T)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            softmax_with_temperature(np.zeros(0), 1.0)


class TestDecide:
    def test_boundary_is_legal(self):
        z = np.array([2.0, 0.0])
        tau = float(softmax_with_temperature(z, 2.0).max())
        d = decide(z, DecisionConfig(2.0, tau))
        assert d.verdict == 0 and d.is_legal and d.p_max == tau

    def test_just_above_boundary_is_illegal(self):
        z = np.array([2.0, 0.0])
        tau = float(np.nextafter(softmax_with_temperature(z, 2.0).max(), 1.0))
        assert decide(z, DecisionConfig(2.0, tau)).verdict == ILLEGAL

    def test_zero_threshold_always_legal(self, rng):
        for _ in range(20):
            z = rng.normal(size=6)
            assert decide(z, DecisionConfig(1.7, 0.0)).verdict == int(np.argmax(z))

    def test_uniform_26_classes(self):
        d = decide(np.zeros(26), DecisionConfig(1.0, 0.5))
        assert d.verdict == ILLEGAL and d.p_max == pytest.approx(1 / 26)

    def test_tie_breaks_to_lowest_index(self):
        assert decide([0.0, 5.0, 5.0, 1.0], DecisionConfig(1.0, 0.0)).verdict == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            decide([], DecisionConfig())

    def test_batch_matches_single(self, rng):
        z = rng.normal(scale=3, size=(200, 5))
        cfg = DecisionConfig(1.3, 0.8)
        np.testing.assert_array_equal(decide_batch(z, cfg), [decide(r, cfg).verdict for r in z])

    @given(logit_vectors, temps, st.floats(0, 1))
    def test_pure_and_consistent(self, z, T, tau):
        cfg = DecisionConfig(T, tau)
        a, b = decide(z, cfg), decide(z.copy(), cfg)
        assert a.verdict == b.verdict and a.p_max == b.p_max
        np.testing.assert_array_equal(a.probabilities, b.probabilities)
        assert a.p_max == a.probabilities.max()
        if a.is_legal:
            assert a.p_max >= tau


class TestOpenAccuracy:
    def test_all_correct(self):
        r = open_accuracy([0, 1, ILLEGAL], [0, 1, ILLEGAL], 2)
        assert r.open_accuracy == 1.0

    def test_all_rejected(self):
        truth = [0, 1, 1, ILLEGAL, ILLEGAL]
        r = open_accuracy([ILLEGAL] * 5, truth, 2)
        assert r.open_accuracy == pytest.approx(2 / 5)

    def test_hand_counted(self):
        # legal right, legal wrong class, legal rejected, illegal rejected
        r = open_accuracy([0, 0, ILLEGAL, ILLEGAL], [0, 1, 1, ILLEGAL], 2)
        assert (r.n, r.n_legal, r.n_illegal) == (4, 3, 1)
        assert (r.n_correct_legal, r.n_correct_illegal) == (1, 1)
        assert r.open_accuracy == 0.5
        expected = np.array([[1, 0, 0], [1, 0, 1], [0, 0, 1]])
        np.testing.assert_array_equal(r.confusion, expected)

    def test_illegal_accepted_counts_wrong(self):
        r = open_accuracy([1], [ILLEGAL], 2)
        assert r.n_correct_illegal == 0 and r.confusion[2, 1] == 1

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="decisions"):
            open_accuracy([0, 1], [0], 2)

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            open_accuracy([0], [5], 2)


class TestSweep:
    def make(self, rng, n=300, K=4):
        z = rng.normal(scale=2.0, size=(n, K))
        truth = rng.integers(0, K, size=n)
        truth[: n // 4] = ILLEGAL
        return z, truth

    def test_default_grid_shape(self):
        assert DEFAULT_TEMPERATURES.size == 48 and DEFAULT_THRESHOLDS.size == 201
        assert DEFAULT_TEMPERATURES[0] == 0.3 and DEFAULT_TEMPERATURES[-1] == 5.0
        assert DEFAULT_THRESHOLDS[0] == 0.8 and DEFAULT_THRESHOLDS[-1] == 1.0

    def test_matches_brute_force(self, rng):
        z, truth = self.make(rng)
        T_grid, tau_grid = [0.5, 1.0, 2.5], [0.3, 0.5, 0.7, 0.9]
        res = sweep(z, truth, T_grid, tau_grid)
        for i, T in enumerate(T_grid):
            for j, tau in enumerate(tau_grid):
                ref = open_accuracy(decide_batch(z, DecisionConfig(T, tau)), truth, 4)
                assert res.accuracy[i, j] == ref.open_accuracy
                assert res.correct_legal[i, j] == ref.n_correct_legal
                assert res.correct_illegal[i, j] == ref.n_correct_illegal

    def test_boundary_inclusive_in_grid(self):
        z = np.array([[2.0, 0.0]])
        tau = float(softmax_with_temperature(z[0], 2.0).max())
        assert sweep(z, [0], [2.0], [tau]).accuracy[0, 0] == 1.0

    def test_single_cell(self, rng):
        z, truth = self.make(rng)
        res = sweep(z, truth, [1.0], [0.6])
        assert res.best == (1.0, 0.6, res.accuracy[0, 0])

    def test_collapse_at_one(self, rng):
        z, truth = self.make(rng)
        res = sweep(z, truth, [1.0], [1.0])
        assert res.accuracy[0, 0] == pytest.approx(np.mean(truth == ILLEGAL))

    def test_threshold_monotone(self, rng):
        z, truth = self.make(rng)
        res = sweep(z, truth)
        assert np.all(np.diff(res.correct_legal, axis=1) <= 0)
        assert np.all(np.diff(res.correct_illegal, axis=1) >= 0)

    def test_errors(self, rng):
        z, truth = self.make(rng)
        with pytest.raises(ValueError):
            sweep(z, truth, [], [0.5])
        with pytest.raises(ValueError):
            sweep(z, truth[:-1])
        with pytest.raises(ValueError):
            sweep(z, truth, [0.0], [0.5])

    def test_full_grid_timing(self, rng):
        z = rng.normal(scale=3, size=(10_000, 8))
        truth = rng.integers(-1, 8, size=10_000)
        t0 = time.perf_counter()
        sweep(z, truth)
        assert time.perf_counter() - t0 < 60.0

    def test_csv(self, tmp_path, rng):
        z, truth = self.make(rng)
        res = sweep(z, truth, [1.0, 2.0], [0.5, 0.9])
        res.write_csv(tmp_path / "s.csv")
        rows = list(csv.reader(open(tmp_path / "s.csv")))
        assert rows[0] == ["temperature", "threshold", "accuracy", "n_correct_legal",
                           "n_correct_illegal"]
        assert len(rows) == 5 and float(rows[4][2]) == res.accuracy[1, 1]

    def test_confusion_csv(self, tmp_path):
        write_confusion_csv(tmp_path / "c.csv", np.eye(3, dtype=int), ["a", "b"])
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows[0] == ["truth\\pred", "a", "b", "illegal"]
        assert rows[3] == ["illegal", "0", "0", "1"]


class TestProperties:
    """Vectorized suites over 10^4 random logit vectors each."""

    N = 10_000

    def logits(self, rng):
        K = 8
        return rng.normal(scale=rng.uniform(0.1, 6.0, size=(self.N, 1)), size=(self.N, K))

    def test_normalization(self, rng):
        z = self.logits(rng)
        T = rng.uniform(0.05, 10.0, size=(self.N, 1))
        p = softmax_with_temperature(z / T, 1.0)
        assert np.all(p >= 0)
        assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-12

    def test_argmax_invariance(self, rng):
        z = self.logits(rng)
        ref = np.argmax(z, axis=1)
        for T in (0.05, 0.3, 1.0, 5.0, 50.0):
            np.testing.assert_array_equal(np.argmax(softmax_with_temperature(z, T), axis=1), ref)

    def test_pmax_strictly_decreasing(self, rng):
        z = self.logits(rng)
        prev = off_max_mass(z, 0.3)
        for T in np.arange(0.4, 5.01, 0.1):
            cur = off_max_mass(z, T)
            assert np.all(cur > prev)
            prev = cur

    def test_threshold_monotone(self, rng):
        z = self.logits(rng)
        for T in (0.5, 1.0, 3.0):
            p_max = softmax_with_temperature(z, T).max(axis=1)
            legal_prev = np.ones(self.N, dtype=bool)
            for tau in np.linspace(0, 1, 51):
                legal = p_max >= tau
                assert not np.any(legal & ~legal_prev)
                legal_prev = legal

    @settings(max_examples=200)
    @given(logit_vectors, temps, temps)
    def test_pmax_monotone_hypothesis(self, z, T1, T2):
        if T1 > T2:
            T1, T2 = T2, T1
        p1 = softmax_with_temperature(z, T1).max()
        p2 = softmax_with_temperature(z, T2).max()
        assert p2 <= p1 + 1e-15
