"""Detection AUC, triangle utility, recovery accuracy, classification report."""

import numpy as np
import pytest

from cordcpd.metrics import (CORRELATION_TYPES, EvalConfig, auc_roc,
                             classification_report, correlation_accuracy,
                             dataset_detection_metrics, rank_auc,
                             step_label_vector, tri)
from cordcpd.scoring import (ChangeTypeDecision, FIRST_SCORED_STEP,
                             ScoreTriple, ensemble_score)


def rnd(*shape, seed=0, scale=1.0):
    return np.random.default_rng(seed).normal(scale=scale, size=shape)


# ---------------------------------------------------------------------------
# rank AUC

def brute_force_auc(scores, positives):
    """Direct definition: P(random positive > random negative), ties half."""
    pos = scores[positives]
    neg = scores[~positives]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else (0.5 if p == q else 0.0)
    return wins / (pos.size * neg.size)


def test_rank_auc_matches_brute_force_with_ties():
    rng = np.random.default_rng(1)
    for trial in range(5):
        scores = rng.integers(0, 6, size=25).astype(float)  # many ties
        positives = rng.uniform(size=25) < 0.3
        if positives.sum() in (0, 25):
            continue
        assert rank_auc(scores, positives) == pytest.approx(
            brute_force_auc(scores, positives), rel=1e-12)


def test_rank_auc_extremes():
    scores = np.array([0.1, 0.2, 0.9, 0.8])
    labels = np.array([False, False, True, True])
    assert rank_auc(scores, labels) == 1.0
    assert rank_auc(-scores, labels) == 0.0
    assert rank_auc(np.zeros(4), labels) == 0.5


def test_rank_auc_needs_both_classes():
    with pytest.raises(ValueError):
        rank_auc(np.arange(3.0), np.array([True, True, True]))
    with pytest.raises(ValueError):
        rank_auc(np.arange(3.0), np.zeros(3, dtype=bool))


def test_auc_roc_label_window_and_validation():
    scores = np.zeros(10)
    scores[4] = 1.0                      # spike at step 6
    assert auc_roc(scores, 6) == 1.0
    assert auc_roc(scores, 11) < 1.0
    # a +-1 window around step 5 includes the spike step
    labels = step_label_vector(10, 5, tolerance=1)
    assert labels.sum() == 3 and labels[4]
    with pytest.raises(ValueError):
        auc_roc(scores, 1)               # before the first scored step
    with pytest.raises(ValueError):
        auc_roc(scores, 12)              # past the last scored step


# ---------------------------------------------------------------------------
# triangle utility

def test_tri_reference_points():
    assert tri(40, 40, margin=15) == 1.0
    assert tri(43, 40, margin=15) == pytest.approx(0.8)
    assert tri(40, 43, margin=15) == pytest.approx(0.8)
    assert tri(55, 40, margin=15) == 0.0
    assert tri(70, 40, margin=15) == 0.0
    with pytest.raises(ValueError):
        tri(1, 1, margin=0)


# ---------------------------------------------------------------------------
# correlation recovery accuracy

def test_correlation_accuracy_counts_off_diagonal_entries():
    truth = np.array([[0.0, 1.0], [1.0, 0.0]])
    pred = np.array([[0.9, 0.8], [0.1, 0.2]])   # off-diagonal: hit, miss
    assert correlation_accuracy(pred, truth) == pytest.approx(0.5)
    assert correlation_accuracy(truth, truth) == 1.0


def test_correlation_accuracy_threshold_is_half_inclusive():
    truth = np.array([[0.0, 1.0], [0.0, 0.0]])
    pred = np.array([[0.0, 0.5], [0.49, 0.0]])
    assert correlation_accuracy(pred, truth) == 1.0


def test_correlation_accuracy_stacks_and_validation():
    truth = np.zeros((4, 3, 3))
    pred = np.zeros((4, 3, 3))
    pred[2, 0, 1] = 0.9                  # one wrong entry out of 4*6
    assert correlation_accuracy(pred, truth) == pytest.approx(23 / 24)
    with pytest.raises(ValueError):
        correlation_accuracy(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        correlation_accuracy(np.zeros((3, 4)), np.zeros((3, 4)))


# ---------------------------------------------------------------------------
# classification report

def decision(disc, label):
    return ChangeTypeDecision(predicted_step=10, discriminant=disc,
                              label=label, mode="with_label")


def test_classification_report_auc_and_per_type_accuracy():
    decisions = [
        decision(2.0, "correlation"),    # connection, correct
        decision(1.5, "correlation"),    # connection, correct
        decision(-1.0, "independent"),   # location, correct
        decision(0.5, "correlation"),    # location, wrong
        decision(-2.0, "independent"),   # speed, correct
    ]
    types = ["connection", "connection", "location", "location", "speed"]
    rep = classification_report(decisions, types)
    disc = np.array([2.0, 1.5, -1.0, 0.5, -2.0])
    is_corr = np.array([True, True, False, False, False])
    assert rep["roc_auc"] == pytest.approx(brute_force_auc(disc, is_corr))
    assert rep["accuracy_by_type"] == {
        "connection": 1.0, "location": 0.5, "speed": 1.0}
    assert rep["count"] == 5


def test_classification_report_validation():
    with pytest.raises(ValueError):
        classification_report([], [])
    with pytest.raises(ValueError):
        classification_report([decision(0.0, "correlation")], [])


def test_connection_is_the_correlation_type():
    assert "connection" in CORRELATION_TYPES
    assert "location" not in CORRELATION_TYPES


# ---------------------------------------------------------------------------
# dataset-level summary

def spike_triple(length, spike_at, kind):
    """Score triple whose chosen score spikes at a given index."""
    corr = np.zeros(length)
    indep = np.zeros(length)
    if kind == "corr":
        corr[spike_at] = 1.0
    else:
        indep[spike_at] = 1.0
    return ScoreTriple(correlation=corr, independent=indep,
                       ensemble=ensemble_score(corr, indep), window_k=5)


def test_dataset_detection_metrics_hand_case():
    length = 30
    # series 1: corr spike exactly at the label; series 2: 3 steps late
    label_steps = [10, 20]
    triples = [spike_triple(length, 10 - FIRST_SCORED_STEP, "corr"),
               spike_triple(length, 23 - FIRST_SCORED_STEP, "corr")]
    rep = dataset_detection_metrics(triples, label_steps,
                                    EvalConfig(tri_margin=15))
    # series 1: spike on the label -> AUC 1; series 2: the positive step
    # scores 0, tying 28 of 29 negatives and losing to the off-label spike
    assert rep["s_r"]["auc"] == pytest.approx((1.0 + 14 / 29) / 2)
    assert rep["s_r"]["tri"] == pytest.approx((1.0 + 0.8) / 2)
    # the flat independent score ranks the label step at chance
    assert rep["s_d"]["auc"] == pytest.approx(0.5)
    # ensemble inherits the corr spikes
    assert rep["s_en"]["tri"] == pytest.approx((1.0 + 0.8) / 2)


def test_dataset_detection_metrics_validation():
    with pytest.raises(ValueError):
        dataset_detection_metrics([], [])
    with pytest.raises(ValueError):
        dataset_detection_metrics([spike_triple(10, 3, "corr")], [5, 6])


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(tri_margin=0)
    with pytest.raises(ValueError):
        EvalConfig(auc_tolerance=-1)
