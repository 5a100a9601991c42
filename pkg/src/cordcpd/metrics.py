"""Evaluation metrics: rank AUC, the triangle utility, connection-recovery
accuracy, and the change-type classification report."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scoring import FIRST_SCORED_STEP, ChangeTypeDecision, predict_change_point

# change types whose ground truth is a correlation-structure change
CORRELATION_TYPES = frozenset({"connection"})


@dataclass
class EvalConfig:
    tri_margin: int = 15          # hinge width w
    auc_tolerance: int = 0        # half-width of the positive window, steps
    alpha: float = 0.75
    tau: float = 0.0

    def __post_init__(self):
        if self.tri_margin <= 0:
            raise ValueError("tri_margin must be positive")
        if self.auc_tolerance < 0:
            raise ValueError("auc_tolerance must be non-negative")


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group average."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Probability a random positive outranks a random negative, ties at
    half credit (the rank-statistic form, exact rather than a curve
    approximation)."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape:
        raise ValueError("scores and labels must align")
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both a positive and a negative example")
    ranks = _average_ranks(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * n_neg))


def step_label_vector(length: int, label_step: int, tolerance: int = 0
                      ) -> np.ndarray:
    """Positive mask over scored steps t = 2..length+1 within +-tolerance
    of the labeled step."""
    t = np.arange(FIRST_SCORED_STEP, FIRST_SCORED_STEP + length)
    return np.abs(t - label_step) <= tolerance


def auc_roc(scores: np.ndarray, label_step: int, tolerance: int = 0) -> float:
    """Per-series detection AUC: each step is an instance, positive within
    +-tolerance of the label."""
    scores = np.asarray(scores, dtype=np.float64)
    last_step = FIRST_SCORED_STEP + scores.size - 1
    if not (FIRST_SCORED_STEP <= label_step <= last_step):
        raise ValueError(
            f"label step {label_step} outside scored range "
            f"[{FIRST_SCORED_STEP}, {last_step}]")
    return rank_auc(scores, step_label_vector(scores.size, label_step, tolerance))


def tri(predicted_step: int, label_step: int, margin: int = 15) -> float:
    """Triangle utility max(0, 1 - |y - l| / w): 1 at an exact hit,
    decaying linearly to 0 at w steps away."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    return max(0.0, 1.0 - abs(int(predicted_step) - int(label_step)) / margin)


def correlation_accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of off-diagonal entries where 1{predicted >= 0.5} equals the
    binary truth; any leading shape, last two axes are the matrix."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    n = predicted.shape[-1]
    if predicted.shape[-2] != n:
        raise ValueError("last two axes must be square")
    off = ~np.eye(n, dtype=bool)
    hits = (predicted >= 0.5) == (truth >= 0.5)
    per_matrix = hits[..., off]
    return float(per_matrix.mean())


def classification_report(decisions: list[ChangeTypeDecision],
                          true_types: list[str]) -> dict:
    """ROC AUC of the discriminant (correlation changes positive) plus
    fixed-threshold accuracy per data type."""
    if not decisions:
        raise ValueError("no decisions to report on")
    if len(decisions) != len(true_types):
        raise ValueError("one true type per decision required")
    disc = np.array([d.discriminant for d in decisions])
    is_corr = np.array([t in CORRELATION_TYPES for t in true_types])
    auc = rank_auc(disc, is_corr)
    accuracy: dict[str, float] = {}
    for change_type in sorted(set(true_types)):
        mask = [t == change_type for t in true_types]
        want = "correlation" if change_type in CORRELATION_TYPES else "independent"
        got = [d.label == want for d, m in zip(decisions, mask) if m]
        accuracy[change_type] = float(np.mean(got))
    return {"roc_auc": auc, "accuracy_by_type": accuracy, "count": len(decisions)}


def dataset_detection_metrics(triples, label_steps, eval_cfg: EvalConfig | None = None
                              ) -> dict:
    """Mean AUC and TRI per score kind over a list of series.

    ``triples`` is a list of ScoreTriple, ``label_steps`` the 1-based true
    change steps. Returns {"s_r": {"auc": ..., "tri": ...}, "s_d": ...,
    "s_en": ...} with dataset means.
    """
    eval_cfg = eval_cfg or EvalConfig()
    if len(triples) != len(label_steps):
        raise ValueError("one label per series required")
    if not triples:
        raise ValueError("no series to evaluate")
    out = {}
    kinds = {
        "s_r": [t.correlation for t in triples],
        "s_d": [t.independent for t in triples],
        "s_en": [t.ensemble for t in triples],
    }
    for name, vectors in kinds.items():
        aucs = [auc_roc(v, int(l), eval_cfg.auc_tolerance)
                for v, l in zip(vectors, label_steps)]
        tris = [tri(predict_change_point(v), int(l), eval_cfg.tri_margin)
                for v, l in zip(vectors, label_steps)]
        out[name] = {"auc": float(np.mean(aucs)), "tri": float(np.mean(tris))}
    return out
