"""Series encoder: per-step edge beliefs between variables.

The stack is temporal -> spatial -> temporal. Temporal layers mix
information along the time axis of each variable independently (a
bidirectional GRU or a transformer block with positional encoding); the
spatial layer mixes across variables at each step (message-passing GNN or a
transformer block without positional encoding, since variables carry no
order). Final per-variable embeddings are paired, mapped to logits over
edge types, and softmaxed into a posterior; a Gumbel-Softmax sample of that
posterior feeds the decoder during training.

Edge types are fixed at K=2: channel 0 means "no edge", channel 1 means
"connected". All pairwise quantities are stored pair-indexed over the
N*(N-1) ordered pairs; helpers convert to square matrices for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import (Tensor, ShapeError, concat, elu, gru_scan, layer_norm,
                       matmul, sigmoid, softmax, stack, take, tanh, transpose)
from .params import ParamSet
from .rng import Rng
from .sampling import gumbel_softmax

CONNECTED = 1  # edge-type channel carrying the "springs present" belief


@dataclass
class EncoderConfig:
    temporal_kind: str = "rnn"        # rnn | transformer
    spatial_kind: str = "gnn"         # gnn | transformer
    hidden_dim: int = 256
    n_edge_types: int = 2
    n_attention_heads: int = 4
    gumbel_temperature: float = 0.5

    def __post_init__(self):
        if self.temporal_kind not in ("rnn", "transformer"):
            raise ValueError(f"unknown temporal layer kind {self.temporal_kind!r}")
        if self.spatial_kind not in ("gnn", "transformer"):
            raise ValueError(f"unknown spatial layer kind {self.spatial_kind!r}")
        if self.n_edge_types != 2:
            raise ValueError("edge types are fixed at 2 (none/connected)")
        uses_transformer = "transformer" in (self.temporal_kind, self.spatial_kind)
        if uses_transformer and self.hidden_dim % self.n_attention_heads:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"{self.n_attention_heads} attention heads")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel_temperature must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def ordered_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Sender and receiver index vectors over all ordered pairs i != j."""
    send, recv = [], []
    for i in range(n):
        for j in range(n):
            if i != j:
                send.append(i)
                recv.append(j)
    return np.array(send, dtype=np.intp), np.array(recv, dtype=np.intp)


def receiver_matrix(n: int) -> np.ndarray:
    """[N, P] indicator: row j sums the messages whose receiver is j."""
    send, recv = ordered_pairs(n)
    mat = np.zeros((n, send.size))
    mat[recv, np.arange(send.size)] = 1.0
    return mat


def pairs_to_matrices(pair_values: np.ndarray, n: int) -> np.ndarray:
    """Scatter [..., P] pair-indexed values into [..., N, N] with zero diagonal."""
    send, recv = ordered_pairs(n)
    out = np.zeros(pair_values.shape[:-1] + (n, n))
    out[..., send, recv] = pair_values
    return out


def matrices_to_pairs(matrices: np.ndarray) -> np.ndarray:
    """Inverse gather of :func:`pairs_to_matrices` (diagonal dropped)."""
    n = matrices.shape[-1]
    send, recv = ordered_pairs(n)
    return matrices[..., send, recv]


class Linear:
    def __init__(self, ps: ParamSet, prefix: str, in_dim: int, out_dim: int, rng: Rng):
        self.w = ps.add(f"{prefix}.w", (in_dim, out_dim), rng=rng, fan_in=in_dim)
        self.b = ps.add(f"{prefix}.b", (out_dim,), zero=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b


class TwoLayerMlp:
    """Linear -> elu -> Linear."""

    def __init__(self, ps: ParamSet, prefix: str, in_dim: int, hidden: int,
                 out_dim: int, rng: Rng):
        self.lin1 = Linear(ps, f"{prefix}.lin1", in_dim, hidden, rng)
        self.lin2 = Linear(ps, f"{prefix}.lin2", hidden, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(elu(self.lin1(x)))

    def paired(self, h: Tensor, send: np.ndarray, recv: np.ndarray,
               axis: int) -> Tensor:
        """Apply the MLP to [h_send; h_recv] pairs along ``axis``.

        Equivalent to gathering both sides, concatenating, and calling the
        MLP, but the first linear layer runs per node before the gather:
        lin1([h_i; h_j]) = h_i @ W_top + h_j @ W_bottom, so the wide matmul
        touches N rows instead of P = N*(N-1).
        """
        d_in = h.shape[-1]
        u = matmul(h, self.lin1.w[:d_in])
        v = matmul(h, self.lin1.w[d_in:])
        pre = take(u, send, axis=axis) + take(v, recv, axis=axis) + self.lin1.b
        return self.lin2(elu(pre))


class GruCell:
    """Fused-gate GRU cell.

    Gate layout along the last axis of the fused projections is
    [reset | update | candidate]. The update rule is

        r = sigmoid(x W_xr + b_xr + h W_hr + b_hr)
        z = sigmoid(x W_xz + b_xz + h W_hz + b_hz)
        n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))
        h' = (1 - z) * n + z * h

    so all-zero weights give h' = 0.5 * h. The input-side projection is
    exposed separately so a whole sequence can be projected in one matmul
    before the scan.
    """

    def __init__(self, ps: ParamSet, prefix: str, in_dim: int, hidden: int, rng: Rng):
        self.hidden = hidden
        self.w_x = ps.add(f"{prefix}.w_x", (in_dim, 3 * hidden), rng=rng, fan_in=in_dim)
        self.w_h = ps.add(f"{prefix}.w_h", (hidden, 3 * hidden), rng=rng, fan_in=hidden)
        self.b_x = ps.add(f"{prefix}.b_x", (3 * hidden,), zero=True)
        self.b_h = ps.add(f"{prefix}.b_h", (3 * hidden,), zero=True)

    def project_inputs(self, x: Tensor) -> Tensor:
        return matmul(x, self.w_x) + self.b_x

    def step(self, xp_r: Tensor, xp_z: Tensor, xp_n: Tensor, h: Tensor) -> Tensor:
        d = self.hidden
        hp = matmul(h, self.w_h) + self.b_h
        r = sigmoid(xp_r + hp[..., 0:d])
        z = sigmoid(xp_z + hp[..., d:2 * d])
        n = tanh(xp_n + r * hp[..., 2 * d:3 * d])
        # (1 - z) * n + z * h, one op fewer:
        return n + z * (h - n)


class BiGru:
    """Bidirectional GRU over axis 1 of a [G, L, D] tensor -> [G, L, 2H].

    Both directions run as a single scan over a leading lane axis: lane 0
    reads the sequence forward, lane 1 reads it reversed, and lane 1's
    outputs are flipped back to natural time before the concat. The weight
    tensors carry the same lane axis, so each direction keeps independent
    parameters while the per-step work stays one batched matmul.
    """

    def __init__(self, ps: ParamSet, prefix: str, in_dim: int, hidden: int, rng: Rng):
        self.hidden = hidden
        self.in_dim = in_dim
        self.w_x = ps.add(f"{prefix}.w_x", (2, in_dim, 3 * hidden), rng=rng, fan_in=in_dim)
        self.w_h = ps.add(f"{prefix}.w_h", (2, hidden, 3 * hidden), rng=rng, fan_in=hidden)
        self.b_x = ps.add(f"{prefix}.b_x", (2, 1, 3 * hidden), zero=True)
        self.b_h = ps.add(f"{prefix}.b_h", (2, 1, 3 * hidden), zero=True)

    def __call__(self, x: Tensor) -> Tensor:
        g, length, d_in = x.shape
        d = self.hidden
        rev = np.arange(length - 1, -1, -1)
        lanes = stack([x, take(x, rev, axis=1)], axis=0)
        flat = lanes.reshape((2, g * length, d_in))
        xp = (matmul(flat, self.w_x) + self.b_x).reshape((2, g, length, 3 * d))
        both = gru_scan(xp, Tensor(np.zeros((2, g, d))), self.w_h, self.b_h)
        return concat([both[0], take(both[1], rev, axis=1)], axis=-1)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Standard sin/cos position table, [length, dim]."""
    pos = np.arange(length)[:, None].astype(np.float64)
    idx = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    table = np.empty((length, dim))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


class TransformerBlock:
    """One post-norm transformer block over axis 1 of [G, L, D].

    Input projection to the hidden width, optional sinusoidal positional
    encoding, multi-head scaled dot-product attention, then the usual two
    residual + layer-norm stages around attention and the position-wise
    feed-forward (width 4x hidden, elu).
    """

    def __init__(self, ps: ParamSet, prefix: str, in_dim: int, hidden: int,
                 n_heads: int, use_positions: bool, rng: Rng):
        if hidden % n_heads:
            raise ValueError("hidden dim must divide into attention heads")
        self.hidden = hidden
        self.n_heads = n_heads
        self.use_positions = use_positions
        self.in_proj = Linear(ps, f"{prefix}.in_proj", in_dim, hidden, rng)
        self.q = Linear(ps, f"{prefix}.q", hidden, hidden, rng)
        self.k = Linear(ps, f"{prefix}.k", hidden, hidden, rng)
        self.v = Linear(ps, f"{prefix}.v", hidden, hidden, rng)
        self.out = Linear(ps, f"{prefix}.out", hidden, hidden, rng)
        self.ff1 = Linear(ps, f"{prefix}.ff1", hidden, 4 * hidden, rng)
        self.ff2 = Linear(ps, f"{prefix}.ff2", 4 * hidden, hidden, rng)

    def _heads(self, x: Tensor, g: int, length: int) -> Tensor:
        per = self.hidden // self.n_heads
        return transpose(x.reshape((g, length, self.n_heads, per)), (0, 2, 1, 3))

    def attention(self, h: Tensor) -> Tensor:
        g, length, _ = h.shape
        per = self.hidden // self.n_heads
        q = self._heads(self.q(h), g, length)
        k = self._heads(self.k(h), g, length)
        v = self._heads(self.v(h), g, length)
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(per))
        weights = softmax(scores, axis=-1)
        mixed = matmul(weights, v)
        flat = transpose(mixed, (0, 2, 1, 3)).reshape((g, length, self.hidden))
        return self.out(flat)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.in_proj(x)
        if self.use_positions:
            h = h + Tensor(sinusoidal_positions(x.shape[1], self.hidden))
        h = layer_norm(h + self.attention(h))
        ff = self.ff2(elu(self.ff1(h)))
        return layer_norm(h + ff)


class GnnSpatial:
    """Message passing across variables at each step.

    Edge messages e_ij = f_e([h_i; h_j]) over ordered pairs, aggregated at
    the receiver, then combined as f_v(h_j + sum_i e_ij). f_e keeps the
    input width so the sum typechecks; f_v maps to the hidden width.
    """

    def __init__(self, ps: ParamSet, prefix: str, in_dim: int, hidden: int, rng: Rng):
        self.edge_mlp = TwoLayerMlp(ps, f"{prefix}.edge", 2 * in_dim, hidden, in_dim, rng)
        self.node_mlp = TwoLayerMlp(ps, f"{prefix}.node", in_dim, hidden, hidden, rng)

    def __call__(self, h: Tensor) -> Tensor:
        n = h.shape[2]
        if n < 2:
            raise ShapeError("GNN spatial layer needs at least 2 variables")
        send, recv = ordered_pairs(n)
        messages = self.edge_mlp.paired(h, send, recv, axis=2)  # [B,T,P,D]
        agg = matmul(Tensor(receiver_matrix(n)), messages)      # [B,T,N,D]
        return self.node_mlp(h + agg)


class Encoder:
    """temporal -> spatial -> temporal stack plus the pairwise edge head."""

    def __init__(self, ps: ParamSet, cfg: EncoderConfig, n_vars: int,
                 n_feats: int, rng: Rng):
        self.cfg = cfg
        self.n_vars = n_vars
        self.n_feats = n_feats
        d = cfg.hidden_dim
        if cfg.temporal_kind == "rnn":
            self.temporal1 = BiGru(ps, "enc.t1", n_feats, d, rng)
            t1_out = 2 * d
        else:
            self.temporal1 = TransformerBlock(
                ps, "enc.t1", n_feats, d, cfg.n_attention_heads, True, rng)
            t1_out = d
        if cfg.spatial_kind == "gnn":
            self.spatial = GnnSpatial(ps, "enc.sp", t1_out, d, rng)
        else:
            self.spatial = TransformerBlock(
                ps, "enc.sp", t1_out, d, cfg.n_attention_heads, False, rng)
        if cfg.temporal_kind == "rnn":
            self.temporal2 = BiGru(ps, "enc.t2", d, d, rng)
            t2_out = 2 * d
        else:
            self.temporal2 = TransformerBlock(
                ps, "enc.t2", d, d, cfg.n_attention_heads, True, rng)
            t2_out = d
        # One hidden layer, not a bare linear map: a shared linear head on
        # [z_i; z_j] can only score pairs additively (f(z_i) + g(z_j)), which
        # cannot represent general adjacency.
        self.edge_head = TwoLayerMlp(ps, "enc.head", 2 * t2_out, d,
                                     cfg.n_edge_types, rng)

    def _temporal(self, layer, h: Tensor) -> Tensor:
        # [B,T,N,D] -> per-variable sequences [B*N,T,D] -> layer -> back.
        b, t, n, d = h.shape
        seq = transpose(h, (0, 2, 1, 3)).reshape((b * n, t, d))
        out = layer(seq)
        return transpose(out.reshape((b, n, t, out.shape[-1])), (0, 2, 1, 3))

    def _spatial(self, h: Tensor) -> Tensor:
        if isinstance(self.spatial, GnnSpatial):
            return self.spatial(h)
        b, t, n, d = h.shape
        grouped = h.reshape((b * t, n, d))
        out = self.spatial(grouped)
        return out.reshape((b, t, n, out.shape[-1]))

    def embeddings(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ShapeError(f"encoder expects [B,T,N,M], got {x.shape}")
        h = self._temporal(self.temporal1, x)
        h = self._spatial(h)
        return self._temporal(self.temporal2, h)

    def edge_logits(self, x: Tensor) -> Tensor:
        """[B,T,P,K] logits over edge types for every ordered pair."""
        z = self.embeddings(x)
        n = z.shape[2]
        send, recv = ordered_pairs(n)
        return self.edge_head.paired(z, send, recv, axis=2)

    def encode(self, x: Tensor, rng: Rng | None = None, noise: np.ndarray | None = None,
               hard: bool = False) -> tuple[Tensor, Tensor | None]:
        """Posterior probabilities and (optionally) a Gumbel-Softmax sample.

        Returns (probs, sample), both [B,T,P,K]; sample is None when neither
        an rng nor explicit noise is supplied (the scoring path, which uses
        the soft posterior directly).
        """
        logits = self.edge_logits(x)
        probs = softmax(logits, axis=-1)
        if rng is None and noise is None:
            return probs, None
        sample = gumbel_softmax(logits, self.cfg.gumbel_temperature, rng=rng,
                                noise=noise, hard=hard)
        return probs, sample
