import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sst.errors import InvalidInputError
from sst.prob_core import (
    cross_entropy,
    cross_entropy_rows,
    labeled_loss,
    smoothed_targets,
    softmax,
    total_loss,
    unlabeled_loss,
)
from sst.sat import ClassThresholds, PseudoLabelSet, fixed_thresholds, select

# e/(e+1) and ln 2 evaluated with mpmath at 30 digits
SIGMOID_1 = 0.731058578630004879251159241822
LN2 = 0.693147180559945309417232121458
# -(0.95 ln 0.7 + 0.05 ln 0.3), mpmath at 30 digits
CE_SMOOTHED_07 = 0.399039836958092559598144086567


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-12)

    def test_extreme_magnitude(self):
        np.testing.assert_allclose(softmax([1000.0, 1000.0, 1000.0]), [1 / 3] * 3, atol=1e-12)

    def test_known_value(self):
        np.testing.assert_allclose(softmax([1.0, 0.0]), [SIGMOID_1, 1 - SIGMOID_1], atol=1e-5)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            softmax([np.nan, 0.0])
        with pytest.raises(InvalidInputError):
            softmax([np.inf, 0.0])

    def test_rejects_single_class(self):
        with pytest.raises(InvalidInputError):
            softmax([1.0])

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-1e4, 1e4)))
    def test_rows_are_distributions(self, v):
        p = softmax(v)
        assert abs(p.sum() - 1.0) < 1e-6
        assert np.all(p > 0)

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, st.integers(2, 8), elements=st.floats(-50, 50)),
        st.floats(-1e3, 1e3),
    )
    def test_shift_invariance(self, v, c):
        np.testing.assert_allclose(softmax(v + c), softmax(v), atol=1e-9)

    def test_matrix_rows(self):
        z = np.array([[0.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(softmax(z)[1], softmax(z[1]))


class TestCrossEntropy:
    def test_perfect_prediction(self):
        assert cross_entropy([1 - 1e-9, 1e-9], 0) == pytest.approx(0.0, abs=1e-8)

    def test_uniform_two_class(self):
        assert cross_entropy([0.5, 0.5], 0) == pytest.approx(LN2, abs=1e-4)

    def test_smoothed_against_oracle(self):
        assert cross_entropy([0.7, 0.3], 0, smoothing=0.1) == pytest.approx(CE_SMOOTHED_07, abs=1e-12)

    def test_smoothing_convention(self):
        np.testing.assert_allclose(smoothed_targets([0], 2, 0.1), [[0.95, 0.05]])
        np.testing.assert_allclose(smoothed_targets([2], 4, 0.2), [[0.05, 0.05, 0.85, 0.05]])

    def test_target_out_of_range(self):
        with pytest.raises(InvalidInputError):
            cross_entropy([0.5, 0.5], 2)
        with pytest.raises(InvalidInputError):
            cross_entropy([0.5, 0.5], -1)

    def test_underflow_is_clamped(self):
        assert math.isfinite(cross_entropy([1.0, 0.0], 1))

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20)),
        st.integers(0, 5),
        st.floats(0, 0.5),
    )
    def test_nonnegative(self, logits, target, eps):
        p = softmax(logits)
        assert cross_entropy(p, target % p.size, eps) >= 0.0


class TestLabeledLoss:
    def test_single_sample(self):
        assert labeled_loss([[0.7, 0.3]], [0], 0.1) == cross_entropy([0.7, 0.3], 0, 0.1)

    def test_duplicate_samples(self):
        assert labeled_loss([[0.7, 0.3], [0.7, 0.3]], [1, 1]) == pytest.approx(cross_entropy([0.7, 0.3], 1), rel=1e-15)

    def test_mixed_batch_is_mean(self):
        rows = [[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]]
        targets = [0, 0, 1]
        expected = (-math.log(0.7) - math.log(0.2) - math.log(0.5)) / 3
        assert labeled_loss(rows, targets) == pytest.approx(expected, rel=1e-12)

    def test_empty_batch(self):
        with pytest.raises(InvalidInputError):
            labeled_loss(np.zeros((0, 2)), [])


def _pls(entries):
    if not entries:
        return PseudoLabelSet()
    i, y, c = zip(*entries)
    return PseudoLabelSet(np.array(i), np.array(y), np.array(c))


class TestUnlabeledLoss:
    P_STRONG = np.array([[0.6, 0.4], [0.1, 0.9], [0.8, 0.2], [0.3, 0.7]])

    def test_empty_selection(self):
        assert unlabeled_loss(self.P_STRONG, PseudoLabelSet(), fixed_thresholds(0.0, 2)) == 0.0

    def test_all_selected_perfect(self):
        p = np.array([[1 - 1e-12, 1e-12], [1e-12, 1 - 1e-12]])
        pls = _pls([(0, 0, 0.99), (1, 1, 0.99)])
        assert unlabeled_loss(p, pls, fixed_thresholds(0.0, 2)) == pytest.approx(0.0, abs=1e-10)

    def test_partial_selection_divides_by_total(self):
        pls = _pls([(0, 1, 0.95), (1, 1, 0.55), (2, 0, 0.9)])
        tau = ClassThresholds(np.array([0.5, 0.6]))
        # entry 1 fails 0.55 > 0.6; remaining terms summed by hand over all 4 rows
        expected = (-math.log(0.4) - math.log(0.8)) / 4
        assert unlabeled_loss(self.P_STRONG, pls, tau) == pytest.approx(expected, rel=1e-12)

    def test_threshold_mismatch(self):
        with pytest.raises(InvalidInputError):
            unlabeled_loss(self.P_STRONG, PseudoLabelSet(), fixed_thresholds(0.5, 3))

    def test_bad_index(self):
        with pytest.raises(InvalidInputError):
            unlabeled_loss(self.P_STRONG, _pls([(7, 0, 0.9)]), fixed_thresholds(0.0, 2))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_monotone_in_thresholds(self, seed):
        rng = np.random.default_rng(seed)
        weak = softmax(rng.normal(size=(30, 4)) * 3)
        strong = softmax(rng.normal(size=(30, 4)) * 3)
        lo = rng.uniform(0, 1, 4)
        hi = np.minimum(lo + rng.uniform(0, 0.5, 4), 1.0)
        pls = select(weak, fixed_thresholds(0.0, 4))
        l_lo = unlabeled_loss(strong, pls, ClassThresholds(lo))
        l_hi = unlabeled_loss(strong, pls, ClassThresholds(hi))
        assert l_hi <= l_lo


class TestTotalLoss:
    def test_mu_zero(self):
        assert total_loss(1.0, 0.5, 0.0) == 1.0

    def test_linear(self):
        assert total_loss(1.0, 0.5, 1.0) == 1.5

    def test_arithmetic(self):
        assert total_loss(0.3, 0.2, 2.5) == pytest.approx(0.8, abs=1e-15)

    def test_mu_zero_is_bitwise_labeled_loss(self):
        rng = np.random.default_rng(1)
        p = softmax(rng.normal(size=(5, 3)))
        lab = labeled_loss(p, [0, 1, 2, 0, 1], 0.1)
        assert total_loss(lab, 0.123456789, 0.0) == lab

    def test_rows_match_single(self):
        p = softmax(np.random.default_rng(2).normal(size=(4, 3)))
        rows = cross_entropy_rows(p, [0, 1, 2, 1], 0.1)
        for k in range(4):
            assert rows[k] == pytest.approx(cross_entropy(p[k], [0, 1, 2, 1][k], 0.1), rel=1e-15)
