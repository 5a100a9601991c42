"""Edge-conditioned dynamics decoder and the training losses.

Each transition is predicted as a residual: x^{t+1} = x^t + delta, where
delta comes from one round of edge-weighted message passing over the
current values followed by an output head (a GRU over the step embeddings,
or a stateless MLP). The edge weight on an ordered pair scales its message,
so a zero matrix decouples the variables entirely.

Index convention (1-based steps): the matrix at step t drives the
transition out of t, i.e. x^{t+1} is predicted from x^t and A^t. The last
step's matrix drives nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import (Tensor, ShapeError, concat, gru_scan, matmul, stack,
                       sum_, take, transpose)
from .encoder import GruCell, Linear, TwoLayerMlp, ordered_pairs, receiver_matrix
from .params import ParamSet
from .rng import Rng


@dataclass
class DecoderConfig:
    out_kind: str = "rnn"             # rnn | mlp output head
    hidden_dim: int = 256
    sigma_sq: float = 5e-5            # Gaussian observation variance
    lambda_smooth: float = 1.0        # weight on the smoothness penalty

    def __post_init__(self):
        if self.out_kind not in ("rnn", "mlp"):
            raise ValueError(f"unknown decoder output kind {self.out_kind!r}")
        if self.sigma_sq <= 0:
            raise ValueError("sigma_sq must be positive")
        if self.lambda_smooth < 0:
            raise ValueError("lambda_smooth must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class Decoder:
    def __init__(self, ps: ParamSet, cfg: DecoderConfig, n_vars: int,
                 n_feats: int, rng: Rng):
        self.cfg = cfg
        self.n_vars = n_vars
        self.n_feats = n_feats
        d = cfg.hidden_dim
        # Message output keeps the feature width so x_i + sum(messages) typechecks.
        self.edge_mlp = TwoLayerMlp(ps, "dec.edge", 2 * n_feats, d, n_feats, rng)
        self.node_mlp = TwoLayerMlp(ps, "dec.node", n_feats, d, d, rng)
        if cfg.out_kind == "rnn":
            self.out_cell = GruCell(ps, "dec.gru", d, d, rng)
            self.out_head = Linear(ps, "dec.head", d, n_feats, rng)
        else:
            self.out_mlp = TwoLayerMlp(ps, "dec.out", d, d, n_feats, rng)
        self._send, self._recv = ordered_pairs(n_vars)
        self._receiver = Tensor(receiver_matrix(n_vars))

    def initial_hidden(self, leading: tuple[int, ...]) -> Tensor | None:
        if self.cfg.out_kind != "rnn":
            return None
        return Tensor(np.zeros(leading + (self.n_vars, self.cfg.hidden_dim)))

    def step_embedding(self, x_t: Tensor, a_t: Tensor) -> Tensor:
        """One message-passing round: [..., N, M] values + [..., P] edge
        weights -> [..., N, H] combined embeddings."""
        if x_t.shape[-2] != self.n_vars or x_t.shape[-1] != self.n_feats:
            raise ShapeError(f"decoder got values of shape {x_t.shape}")
        if a_t.shape[-1] != self._send.size:
            raise ShapeError(
                f"edge weights have {a_t.shape[-1]} pairs, expected {self._send.size}")
        axis = x_t.ndim - 2
        messages = self.edge_mlp.paired(x_t, self._send, self._recv, axis=axis)
        weighted = a_t[..., None] * messages
        aggregated = matmul(self._receiver, weighted)
        return self.node_mlp(x_t + aggregated)

    def _head(self, embedding: Tensor, hidden: Tensor | None
              ) -> tuple[Tensor, Tensor | None]:
        if self.cfg.out_kind == "rnn":
            d = self.cfg.hidden_dim
            xp = self.out_cell.project_inputs(embedding)
            hidden = self.out_cell.step(xp[..., 0:d], xp[..., d:2 * d],
                                        xp[..., 2 * d:3 * d], hidden)
            return self.out_head(hidden), hidden
        return self.out_mlp(embedding), None

    def decode_step(self, x_t: Tensor, a_t: Tensor, hidden: Tensor | None
                    ) -> tuple[Tensor, Tensor, Tensor | None]:
        """Predict one transition; returns (delta, x_next, new hidden)."""
        embedding = self.step_embedding(x_t, a_t)
        delta, hidden = self._head(embedding, hidden)
        return delta, x_t + delta, hidden

    def teacher_forced(self, x: Tensor, a: Tensor, return_hidden: bool = False
                       ) -> tuple[Tensor, list | None]:
        """Reconstruct steps 2..T from observed history.

        x is [B,T,N,M]; a is [B,T,P] (or [B,T-1,P]) edge weights, of which
        entries 1..T-1 drive the transitions. Returns predictions
        [B,T-1,N,M] where slot t-2 holds the prediction of step t; with
        ``return_hidden``, also the GRU states in force *before* each
        transition as one [B,T-1,N,H] tensor (rollouts resume from these).

        Message inputs come from observed values only, so the pair gathers,
        the edge MLP, and the fused GRU scan each run once over all steps.
        """
        b, t_steps, n, m = x.shape
        if t_steps < 2:
            raise ShapeError("need at least two steps to reconstruct")
        x_in = x[:, :t_steps - 1]
        messages = self.edge_mlp.paired(x_in, self._send, self._recv, axis=2)
        weighted = a[:, :t_steps - 1][..., None] * messages          # [B,T-1,P,M]
        aggregated = matmul(self._receiver, weighted)
        embeddings = self.node_mlp(x_in + aggregated)                # [B,T-1,N,H]

        if self.cfg.out_kind == "mlp":
            deltas = self.out_mlp(embeddings)
            return x_in + deltas, None

        d = self.cfg.hidden_dim
        xp = self.out_cell.project_inputs(embeddings)                # [B,T-1,N,3H]
        xp_t = transpose(xp, (0, 2, 1, 3))                           # [B,N,T-1,3H]
        h0 = Tensor(np.zeros((b, n, d)))
        states = gru_scan(xp_t, h0, self.out_cell.w_h, self.out_cell.b_h)
        states = transpose(states, (0, 2, 1, 3))                     # [B,T-1,N,H]
        preds = x_in + self.out_head(states)
        hiddens = None
        if return_hidden:
            before = states[:, :t_steps - 2]
            hiddens = concat([Tensor(np.zeros((b, 1, n, d))), before], axis=1)
        return preds, hiddens

    def free_rollout(self, x_prefix: Tensor, a: Tensor, k: int,
                     total_steps: int | None = None) -> Tensor:
        """Autoregressive window forecast for one series.

        Given observed steps 1..t as [t,N,M] and per-step edge weights
        [T,P], predict steps t+1..t+k feeding predictions back as inputs.
        The window truncates at ``total_steps`` when t+k overshoots.
        Returns [k', N, M].
        """
        if k < 1:
            raise ValueError("rollout window k must be >= 1")
        if x_prefix.ndim != 3:
            raise ShapeError("x_prefix must be [t, N, M]")
        t0 = x_prefix.shape[0]
        horizon = k if total_steps is None else min(k, total_steps - t0)
        if horizon < 1:
            raise ValueError(f"no steps left to predict after step {t0}")
        xb = x_prefix[None, ...]
        ab = a[None, ...]
        hidden = self.initial_hidden((1,))
        for s in range(t0 - 1):
            _, _, hidden = self.decode_step(xb[:, s], ab[:, s], hidden)
        cur = xb[:, t0 - 1]
        outs = []
        for j in range(horizon):
            _, cur, hidden = self.decode_step(cur, ab[:, t0 - 1 + j], hidden)
            outs.append(cur)
        return stack(outs, axis=1)[0]

    def rollout_all_starts(self, x: Tensor, a: Tensor, k: int
                           ) -> tuple[np.ndarray, np.ndarray]:
        """Window forecasts from every step at once (scoring path, no tape).

        For each start index s = 0..T-2 (the transition out of 1-based step
        s+1), roll k steps forward from the observed value at s, with the
        GRU state warmed by teacher forcing over the observed prefix.
        Returns (pred [B,T-1,k,N,M], valid [T-1,k] bool); invalid window
        positions (beyond the series end) hold the last clamped prediction
        and must be masked by the caller.
        """
        if k < 1:
            raise ValueError("rollout window k must be >= 1")
        b, t_steps, n, m = x.shape
        s_count = t_steps - 1
        _, hiddens = self.teacher_forced(x, a, return_hidden=True)
        hidden = hiddens                              # [B,S,N,H] or None
        cur = x[:, :s_count]                          # [B,S,N,M]
        starts = np.arange(s_count)
        preds = []
        for j in range(k):
            idx = np.minimum(starts + j, t_steps - 2)
            a_step = take(a, idx, axis=1)             # [B,S,P]
            _, cur, hidden = self.decode_step(cur, a_step, hidden)
            preds.append(cur.data)
        pred = np.stack(preds, axis=2)                # [B,S,k,N,M]
        valid = (starts[:, None] + 1 + np.arange(k)[None, :]) <= t_steps - 1
        return pred, valid


# ---------------------------------------------------------------------------
# losses

def reconstruction_loss(target, prediction: Tensor, sigma_sq: float) -> Tensor:
    """Sum of squared errors over every element, divided by 2*sigma_sq."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if target.shape != prediction.shape:
        raise ShapeError(
            f"reconstruction shapes differ: {target.shape} vs {prediction.shape}")
    diff = prediction - target
    return sum_(diff * diff) * (1.0 / (2.0 * sigma_sq))


def smoothness_loss(matrices) -> Tensor:
    """Mean squared step-to-step change of a [T,N,N] matrix sequence,
    diagonal excluded: (1/(T-1)) * sum_t ||A^t - A^{t-1}||^2."""
    a = matrices if isinstance(matrices, Tensor) else Tensor(matrices)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ShapeError(f"expected [T,N,N] matrices, got {a.shape}")
    t_steps = a.shape[0]
    if t_steps < 2:
        raise ShapeError("need at least two steps for a smoothness penalty")
    off_diag = Tensor(1.0 - np.eye(a.shape[1]))
    masked = a * off_diag
    diff = masked[1:] - masked[:-1]
    return sum_(diff * diff) * (1.0 / (t_steps - 1))


def smoothness_from_pairs(pair_weights: Tensor) -> Tensor:
    """Batch-mean smoothness over pair-indexed weights [B,T,P].

    Equals :func:`smoothness_loss` applied per series to the scattered
    [T,N,N] matrices, averaged over the batch (the diagonal never exists in
    pair indexing).
    """
    if pair_weights.ndim != 3:
        raise ShapeError(f"expected [B,T,P] pair weights, got {pair_weights.shape}")
    b, t_steps, _ = pair_weights.shape
    if t_steps < 2:
        raise ShapeError("need at least two steps for a smoothness penalty")
    diff = pair_weights[:, 1:] - pair_weights[:, :-1]
    return sum_(diff * diff) * (1.0 / (b * (t_steps - 1)))


def total_loss(x: Tensor, predictions: Tensor, smooth_pairs: Tensor,
               sigma_sq: float, lambda_smooth: float
               ) -> tuple[Tensor, Tensor, Tensor]:
    """Batch-mean training objective.

    reconstruction of steps 2..T plus lambda times the smoothness of the
    edge beliefs; returns (total, reconstruction part, smoothness part),
    each a scalar tensor already averaged over the batch.
    """
    b = x.shape[0]
    recon = reconstruction_loss(x[:, 1:], predictions, sigma_sq) * (1.0 / b)
    smooth = smoothness_from_pairs(smooth_pairs)
    return recon + smooth * lambda_smooth, recon, smooth
