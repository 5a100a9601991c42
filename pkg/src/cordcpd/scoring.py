"""Change-point scores, the ensemble, and change-type classification.

Two complementary per-step scores, each a vector over steps t = 2..T:

* correlation change score: L1 distance between consecutive inferred
  correlation matrices (symmetrized connected-probability), spiking when
  the between-variable structure moves;
* independent change score: mean squared error of a k-step free rollout
  launched from the previous observed step, spiking when single-variable
  dynamics stop matching the learned model.

Both are z-normalized and summed into the ensemble score. The change-type
rule compares the two normalized scores at a step: structure changes push
the first up without disturbing the second, so a positive margin of the
first over alpha times the second reads as a correlation change.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .encoder import CONNECTED, ordered_pairs

FIRST_SCORED_STEP = 2  # scores index steps t = 2..T (1-based)

SCORES_CSV_HEADER = ("series_id", "t", "s_r", "s_d", "s_en")


@dataclass
class ScoreTriple:
    """Per-series score vectors, index i <-> step t = i + 2."""

    correlation: np.ndarray
    independent: np.ndarray
    ensemble: np.ndarray
    window_k: int

    def __post_init__(self):
        if not (len(self.correlation) == len(self.independent) == len(self.ensemble)):
            raise ValueError("score vectors must share one length")

    def step_of(self, index: int) -> int:
        return index + FIRST_SCORED_STEP

    def __len__(self) -> int:
        return len(self.ensemble)


@dataclass
class ChangeTypeDecision:
    predicted_step: int
    discriminant: float
    label: str                  # "correlation" | "independent"
    mode: str                   # "with_label" | "without_label"


def correlation_change_score(matrices: np.ndarray) -> np.ndarray:
    """L1 distance of consecutive [T,N,N] matrices over off-diagonal
    entries; length T-1."""
    a = np.asarray(matrices, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError(f"expected [T,N,N] matrices, got {a.shape}")
    if a.shape[0] < 2:
        raise ValueError("need at least two steps to score changes")
    off = 1.0 - np.eye(a.shape[1])
    diffs = np.abs(np.diff(a, axis=0)) * off
    return diffs.sum(axis=(1, 2))


def reverse_pair_permutation(n: int) -> np.ndarray:
    """Index permutation mapping each ordered pair (i,j) to (j,i)."""
    send, recv = ordered_pairs(n)
    lookup = {(s, r): p for p, (s, r) in enumerate(zip(send, recv))}
    return np.array([lookup[(r, s)] for s, r in zip(send, recv)], dtype=np.intp)


def symmetrize_pairs(pair_values: np.ndarray, n: int) -> np.ndarray:
    """(v_ij + v_ji) / 2 in pair indexing, any leading shape."""
    perm = reverse_pair_permutation(n)
    return 0.5 * (pair_values + pair_values[..., perm])


def normalize_score(s: np.ndarray) -> np.ndarray:
    """(s - mean) / population std; all zeros when the spread is degenerate."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot normalize an empty score vector")
    std = float(s.std())
    if std < 1e-12:
        return np.zeros_like(s)
    return (s - s.mean()) / std


def ensemble_score(correlation: np.ndarray, independent: np.ndarray) -> np.ndarray:
    if len(correlation) != len(independent):
        raise ValueError(
            f"score length mismatch: {len(correlation)} vs {len(independent)}")
    return normalize_score(correlation) + normalize_score(independent)


def predict_change_point(scores: np.ndarray) -> int:
    """1-based step of the maximum score; ties break toward the earliest."""
    scores = np.asarray(scores)
    return int(np.argmax(scores)) + FIRST_SCORED_STEP


def classify_change_type(correlation: np.ndarray, independent: np.ndarray,
                         step: int | None = None, alpha: float = 0.75,
                         tau: float = 0.0) -> ChangeTypeDecision:
    """Label the change at ``step`` (or at the ensemble argmax when absent).

    The discriminant is normalized(correlation) - alpha * normalized
    (independent) at the step; at or above ``tau`` reads as a correlation
    change, below as an independent change.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    nr = normalize_score(correlation)
    nd = normalize_score(independent)
    if step is None:
        mode = "without_label"
        step = predict_change_point(nr + nd)
    else:
        mode = "with_label"
    idx = int(step) - FIRST_SCORED_STEP
    if not (0 <= idx < len(nr)):
        raise ValueError(
            f"step {step} outside scored range "
            f"[{FIRST_SCORED_STEP}, {len(nr) + FIRST_SCORED_STEP - 1}]")
    disc = float(nr[idx] - alpha * nd[idx])
    label = "correlation" if disc >= tau else "independent"
    return ChangeTypeDecision(predicted_step=int(step), discriminant=disc,
                              label=label, mode=mode)


# ---------------------------------------------------------------------------
# model-based scoring

def independent_change_scores(decoder, values: np.ndarray,
                              pair_weights: np.ndarray, k: int) -> np.ndarray:
    """Rollout-error score for every series and step: [B,T-1].

    Entry (b, t-2) is the MSE between the k-step window forecast launched
    from observed step t-1 and the observed window, truncated at T.
    """
    values = np.asarray(values, dtype=np.float64)
    b, t_steps, n, m = values.shape
    pred, valid = decoder.rollout_all_starts(Tensor(values), Tensor(pair_weights), k)
    starts = np.arange(t_steps - 1)
    obs_idx = np.minimum(starts[:, None] + 1 + np.arange(k)[None, :], t_steps - 1)
    obs = values[:, obs_idx]                       # [B,S,k,N,M]
    sq = (pred - obs) ** 2 * valid[None, :, :, None, None]
    counts = valid.sum(axis=1) * (n * m)           # [S]
    return sq.sum(axis=(2, 3, 4)) / counts[None, :]


def score_series_batch(model, values: np.ndarray, k: int = 5
                       ) -> list[ScoreTriple]:
    """Score a [B,T,N,M] batch with a trained model (soft posterior)."""
    probs = model.posterior(values)                # [B,T,P,K]
    connected = probs[..., CONNECTED]
    sym = symmetrize_pairs(connected, model.n_vars)
    corr = np.abs(np.diff(sym, axis=1)).sum(axis=-1)   # [B,T-1]
    indep = independent_change_scores(model.decoder, values, connected, k)
    return [
        ScoreTriple(correlation=corr[i], independent=indep[i],
                    ensemble=ensemble_score(corr[i], indep[i]), window_k=k)
        for i in range(values.shape[0])
    ]


def score_dataset(model, values: np.ndarray, k: int = 5,
                  batch_size: int = 50) -> list[ScoreTriple]:
    """Score [S,T,N,M] series in batches; order preserved."""
    out: list[ScoreTriple] = []
    for start in range(0, values.shape[0], batch_size):
        out.extend(score_series_batch(model, values[start:start + batch_size], k))
    return out


# ---------------------------------------------------------------------------
# CSV round trip

def write_scores_csv(path, ids: list[str], triples: list[ScoreTriple]) -> None:
    if len(ids) != len(triples):
        raise ValueError("one id per score triple required")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SCORES_CSV_HEADER)
        for series_id, triple in zip(ids, triples):
            for i in range(len(triple)):
                writer.writerow([
                    series_id, triple.step_of(i),
                    repr(float(triple.correlation[i])),
                    repr(float(triple.independent[i])),
                    repr(float(triple.ensemble[i])),
                ])


def read_scores_csv(path) -> tuple[list[str], dict[str, ScoreTriple]]:
    """Returns (ids in file order, id -> ScoreTriple). Steps must be
    contiguous from 2 within each series."""
    path = Path(path)
    rows: dict[str, list[tuple[int, float, float, float]]] = {}
    order: list[str] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != SCORES_CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SCORES_CSV_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ValueError(f"{path}:{line_no}: expected 5 columns, got {len(row)}")
            series_id = row[0]
            if series_id not in rows:
                rows[series_id] = []
                order.append(series_id)
            rows[series_id].append(
                (int(row[1]), float(row[2]), float(row[3]), float(row[4])))
    triples: dict[str, ScoreTriple] = {}
    for series_id, entries in rows.items():
        steps = [e[0] for e in entries]
        if steps != list(range(FIRST_SCORED_STEP, FIRST_SCORED_STEP + len(steps))):
            raise ValueError(f"{path}: series {series_id} has non-contiguous steps")
        triples[series_id] = ScoreTriple(
            correlation=np.array([e[1] for e in entries]),
            independent=np.array([e[2] for e in entries]),
            ensemble=np.array([e[3] for e in entries]),
            window_k=0,
        )
    if not triples:
        raise ValueError(f"{path}: no score rows")
    return order, triples
