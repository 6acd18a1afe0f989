"""
Rarefy — Objective Check Tests
Exact-expectation checks of the weighted-loss equivalence and of the
unlabeled-data optimum on small discrete instances.
"""

import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pipeline.propositions import (
    Candidate,
    DiscreteInstance,
    SupportOverlapError,
    best_classification_loss,
    biased_labeled_joint,
    check_unlabeled_optimum,
    check_weighted_equivalence,
    combined_objective,
    random_instance,
    reweighted_mixtures,
    verify_propositions,
)


def _four_point():
    return DiscreteInstance(
        p_rare=[0.6, 0.4, 0.0, 0.0],
        p_common=[0.0, 0.0, 0.3, 0.7],
        alpha=0.25,
    )


def test_unit_weight_leaves_distributions_unchanged():
    instance = _four_point()
    p_hat = np.array([0.1, 0.2, 0.3, 0.4])
    q, q_hat, s = reweighted_mixtures(instance, p_hat, 1.0)
    assert s == pytest.approx(1.0)
    assert_allclose(q, instance.mixture, atol=1e-15)
    assert_allclose(q_hat, p_hat, atol=1e-15)


def test_four_point_equivalence():
    errors = check_weighted_equivalence(_four_point(), 2.0, np.random.default_rng(0), trials=50)
    assert errors["js"] <= 1e-9
    assert errors["wasserstein"] <= 1e-9


def test_reweighted_mixtures_are_distributions():
    instance = random_instance(np.random.default_rng(1), support=6, n_rare=2, alpha=0.1)
    q, q_hat, _ = reweighted_mixtures(instance, np.random.default_rng(2).dirichlet(np.ones(6)), 5.0)
    assert q.sum() == pytest.approx(1.0) and q_hat.sum() == pytest.approx(1.0)
    assert np.all(q >= 0) and np.all(q_hat >= 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 20), support=st.integers(2, 64), frac=st.floats(0.0, 0.95))
def test_weighted_equivalence_on_random_instances(seed, support, frac):
    rng = np.random.default_rng(seed)
    instance = random_instance(rng, support, int(rng.integers(1, support)))
    w = 1.0 + frac * (1.0 / instance.alpha - 1.0)
    errors = check_weighted_equivalence(instance, w, rng, trials=5)
    assert max(errors.values()) <= 1e-9


def test_overlapping_supports_rejected():
    with pytest.raises(SupportOverlapError):
        DiscreteInstance([0.5, 0.5, 0.0], [0.0, 0.5, 0.5], 0.3)


def test_instance_validation():
    with pytest.raises(ValueError):
        DiscreteInstance([0.5, 0.4], [0.0, 1.0], 0.3)
    with pytest.raises(ValueError):
        DiscreteInstance([1.0, 0.0], [0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        DiscreteInstance(np.ones(65) / 65, np.ones(65) / 65, 0.5)


def test_true_pair_has_zero_objective():
    instance = _four_point()
    joint = biased_labeled_joint(instance, np.array([5.0, 0.2, 1.0, 3.0]))
    true = Candidate("true", instance.p_rare, instance.p_common, instance.alpha)
    assert combined_objective(instance, true, joint) == pytest.approx(0.0, abs=1e-15)


def test_classification_loss_is_positive_when_labels_mix():
    labeled = np.array([[0.5, 0.0], [0.0, 0.5]])
    mixed = np.array([[0.25, 0.25], [0.25, 0.25]])
    assert best_classification_loss(labeled, mixed) > 0
    assert best_classification_loss(labeled, labeled) == pytest.approx(0.0)


def test_biased_labels_do_not_move_the_optimum():
    instance = _four_point()
    rng = np.random.default_rng(3)
    for bias in ([10.0, 0.1, 1.0, 1.0], [0.1, 10.0, 5.0, 0.2], [1.0, 1.0, 1.0, 1.0]):
        result = check_unlabeled_optimum(instance, biased_labeled_joint(instance, np.array(bias)), rng)
        assert result["ok"], result["objectives"]
        assert result["argmin"] == "true"
        assert result["runner_up"] > result["true_objective"]


def test_label_leak_keeps_the_marginal():
    instance = _four_point()
    result = check_unlabeled_optimum(
        instance, biased_labeled_joint(instance, np.array([2.0, 1.0, 1.0, 0.5])), np.random.default_rng(4)
    )
    assert "label-leak" in result["objectives"]
    assert result["objectives"]["label-leak"] > 0


def test_verify_report():
    rng = np.random.default_rng(5)
    instance = random_instance(rng, support=8, n_rare=3, alpha=0.2)
    report = verify_propositions(instance, 3.0, rng, trials=10, biases=4)
    assert report["ok"]
    assert report["weighted_equivalence"]["ok"]
    assert len(report["unlabeled_optimum"]) == 4
    assert_array_equal(instance.rare_mask, instance.p_rare > 0)
