import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import average_precision_score, roc_auc_score

from hypclip.harness.ood import detection_score, metric_suite, ood_score
from helpers import threshold_sweep as brute_force


class TestScores:
    def test_softmax_of_zero_logits(self):
        assert ood_score(np.array([0.0, 0.0]), "softmax")[0] == 0.5

    def test_energy_of_zero_logits(self):
        assert ood_score(np.array([0.0, 0.0]), "energy", T=1.0)[0] == pytest.approx(-math.log(2))

    def test_energy_temperature(self):
        z = np.array([[1.0, 3.0, -2.0]])
        T = 2.5
        want = -T * math.log(sum(math.exp(v / T) for v in z[0]))
        assert ood_score(z, "energy", T)[0] == pytest.approx(want, rel=1e-14)

    def test_energy_is_negated_for_detection(self):
        z = np.array([[5.0, 0.0], [0.1, 0.0]])
        s = detection_score(z, "energy")
        assert s[0] > s[1]  # the confident sample looks more in-distribution

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ood_score(np.zeros((1, 2)), "mahalanobis")


class TestMetricSuite:
    def test_perfect_separation(self):
        assert metric_suite([3, 4, 5], [0, 1, 2]) == (0.0, 1.0, 1.0)

    def test_hand_fixture(self):
        ins = [0.9, 0.8, 0.7, 0.3, 0.2]
        outs = [0.85, 0.6, 0.5, 0.1, 0.05]
        got = metric_suite(ins, outs)
        want = brute_force(ins, outs)
        np.testing.assert_allclose(got, want, atol=1e-12)
        # by hand: positives ranked 1, 3, 4, 8, 9 of 10
        assert got.auroc == pytest.approx(17 / 25)
        assert got.fpr95 == pytest.approx(0.6)

    def test_ties_form_one_threshold(self):
        got = metric_suite([1.0, 1.0], [1.0, 0.0])
        np.testing.assert_allclose(got, brute_force([1.0, 1.0], [1.0, 0.0]))
        assert got.auroc == pytest.approx(0.75)

    def test_identical_distributions_near_chance(self):
        rng = np.random.default_rng(0)
        m = metric_suite(rng.normal(size=4000), rng.normal(size=4000))
        assert m.auroc == pytest.approx(0.5, abs=0.03)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metric_suite([], [1.0])

    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 8), min_size=1, max_size=25),
           st.lists(st.integers(0, 8), min_size=1, max_size=25))
    def test_matches_brute_force(self, ins, outs):
        np.testing.assert_allclose(metric_suite(ins, outs), brute_force(ins, outs), atol=1e-9)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=40),
           st.lists(st.floats(-5, 5), min_size=2, max_size=40))
    def test_agrees_with_sklearn(self, ins, outs):
        labels = np.r_[np.ones(len(ins)), np.zeros(len(outs))]
        scores = np.r_[ins, outs]
        m = metric_suite(ins, outs)
        assert m.auroc == pytest.approx(roc_auc_score(labels, scores), abs=1e-9)
        assert m.aupr == pytest.approx(average_precision_score(labels, scores), abs=1e-9)
