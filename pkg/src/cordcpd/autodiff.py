"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy float64 array. While a ``GradTape`` is active,
every primitive that touches a tensor with ``requires_grad=True`` appends a
record to the tape; ``GradTape.gradient`` replays those records in exact
reverse order of the forward pass and accumulates gradients into the leaf
tensors. Tensors and tapes are confined to a single execution stream: there
is no locking, and nesting tapes is not supported.

All forward results are checked for NaN/Inf; a non-finite value raises
``NonFiniteError`` at the op that produced it rather than surfacing later as
a poisoned loss.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

Scalar = Union[int, float]


class NonFiniteError(FloatingPointError):
    """A forward primitive produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested primitive."""


def _check_finite(data: np.ndarray, op: str) -> None:
    # Fast path: a single reduction. NaN/Inf both poison the sum; only a
    # finite-but-overflowing sum needs the full elementwise check.
    total = data.sum()
    if not np.isfinite(total) and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite output of '{op}'")


class Tensor:
    """A dense float64 array plus autodiff metadata."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar; all dispatch to module-level primitives.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a supported primitive")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)


class GradTape:
    """Ordered record of taped primitives for one forward pass.

    Use as a context manager::

        with GradTape() as tape:
            loss = model_loss(...)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._touched: list[Tensor] = []

    def __enter__(self) -> "GradTape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a GradTape is already active in this stream")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None],
               inputs: Sequence[Tensor]) -> None:
        self._records.append((out, backward))
        self._touched.append(out)
        self._touched.extend(inputs)

    def __len__(self) -> int:
        return len(self._records)

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. ``params``, flattened and
        concatenated in parameter order. Parameters off the compute path
        get exact zeros."""
        if loss.data.shape != ():
            raise ShapeError("backward requires a scalar loss")
        if not self._records:
            raise RuntimeError("backward over an empty tape")
        loss.grad = np.ones((), dtype=np.float64)
        for out, backward in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            backward(g)
        flat = np.concatenate([
            (p.grad if p.grad is not None else np.zeros(p.shape)).ravel()
            for p in params
        ]) if params else np.zeros(0)
        for t in self._touched:
            t.grad = None
        loss.grad = None
        self._records.clear()
        self._touched.clear()
        return flat


_ACTIVE_TAPE: Optional[GradTape] = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        # First touch copies; g may be a view the caller reuses.
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _grad_buffer(t: Tensor) -> np.ndarray:
    """The tensor's gradient accumulator, allocated on first touch.

    Gather-style ops scatter into this buffer directly instead of
    materializing a full-size gradient per call; with per-step slicing in
    recurrent scans that is the difference between O(T) and O(T^2) work.
    """
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, dtype=np.float64)
    return t.grad


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data: np.ndarray, op: str, inputs: Sequence[Tensor],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, backward, inputs)
    else:
        out.requires_grad = False
    return out


# ---------------------------------------------------------------------------
# Elementwise and broadcasting primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, "mul", (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            _accum(a, -g)

    return _make(-a.data, "neg", (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul operands must have rank >= 1")
    if a.data.shape[-1] != b.data.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if b.ndim > 1 \
                else np.multiply.outer(g, b.data)
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.data, g) if b.ndim > 1 else g * a.data
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(data, "matmul", (a, b), backward)


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # Stable in both tails: exp of a non-positive argument only.
    e = np.exp(-np.abs(a.data))
    data = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        if a.requires_grad:
            _accum(a, g * data * (1.0 - data))

    return _make(data, "sigmoid", (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - data * data))

    return _make(data, "tanh", (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (a.data > 0))

    return _make(data, "relu", (a,), backward)


def elu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.where(a.data > 0, a.data, np.expm1(np.minimum(a.data, 0.0)))

    def backward(g):
        if a.requires_grad:
            _accum(a, g * np.where(a.data > 0, 1.0, data + 1.0))

    return _make(data, "elu", (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            _accum(a, data * (g - dot))

    return _make(data, "softmax", (a,), backward)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = centered * inv

    def backward(g):
        if a.requires_grad:
            n = a.data.shape[-1]
            gm = g.mean(axis=-1, keepdims=True)
            gy = (g * data).mean(axis=-1, keepdims=True)
            _accum(a, inv * (g - gm - data * gy))

    return _make(data, "layer_norm", (a,), backward)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gru_scan(xp, h0, w_h, b_h) -> Tensor:
    """Run a whole GRU over the second-to-last axis of ``xp`` as one op.

    ``xp`` holds the input-side gate pre-activations, shaped [..., L, 3*d]
    with gate layout [reset | update | candidate]; ``h0`` is the initial
    state [..., d]; ``w_h`` is the recurrent weight, either [d, 3*d] or
    lane-major [2, d, 3*d] when the leading axis of ``xp`` carries two
    directions; ``b_h`` must broadcast against a step's [..., 3*d]
    pre-activation. Step rule matches ``GruCell.step``:

        r = sigmoid(xp_r + hp_r); z = sigmoid(xp_z + hp_z)
        n = tanh(xp_n + r * hp_n);  h' = (1 - z) * n + z * h

    Returns the stacked states [..., L, d]. Equivalent to L chained
    per-step primitives but recorded as a single tape node with an
    analytic reverse scan, which removes the per-step tape overhead that
    otherwise dominates training time.
    """
    xp, h0, w_h, b_h = (_as_tensor(t) for t in (xp, h0, w_h, b_h))
    if xp.ndim < 2 or xp.data.shape[-1] % 3:
        raise ShapeError(f"gru_scan needs [..., L, 3*d] pre-activations, got {xp.shape}")
    d = xp.data.shape[-1] // 3
    length = xp.data.shape[-2]
    batch = xp.data.shape[:-2]
    if h0.data.shape != batch + (d,):
        raise ShapeError(f"gru_scan initial state {h0.shape} does not match {batch + (d,)}")
    if w_h.data.shape[-2:] != (d, 3 * d) or w_h.ndim not in (2, 3):
        raise ShapeError(f"gru_scan recurrent weight has shape {w_h.shape}")
    if w_h.ndim == 3 and (xp.ndim < 3 or w_h.data.shape[0] != batch[0]):
        raise ShapeError("lane-major w_h requires a matching leading axis on xp")

    hs = np.empty(batch + (length, d))
    r_all = np.empty_like(hs)
    z_all = np.empty_like(hs)
    n_all = np.empty_like(hs)
    hpn_all = np.empty_like(hs)
    hprev_all = np.empty_like(hs)
    h = h0.data
    for t in range(length):
        hp = np.matmul(h, w_h.data) + b_h.data
        xt = xp.data[..., t, :]
        r = _sigmoid_stable(xt[..., 0:d] + hp[..., 0:d])
        z = _sigmoid_stable(xt[..., d:2 * d] + hp[..., d:2 * d])
        hpn = hp[..., 2 * d:]
        n = np.tanh(xt[..., 2 * d:] + r * hpn)
        hprev_all[..., t, :] = h
        h = n + z * (h - n)
        r_all[..., t, :] = r
        z_all[..., t, :] = z
        n_all[..., t, :] = n
        hpn_all[..., t, :] = hpn
        hs[..., t, :] = h

    w_h_t = np.swapaxes(w_h.data, -1, -2)

    def backward(g):
        dxp = np.empty(batch + (length, 3 * d))
        dhp = np.empty_like(dxp)
        gh = np.zeros(batch + (d,))
        for t in range(length - 1, -1, -1):
            gt = g[..., t, :] + gh
            r, z = r_all[..., t, :], z_all[..., t, :]
            n, hpn = n_all[..., t, :], hpn_all[..., t, :]
            hprev = hprev_all[..., t, :]
            dpre_n = gt * (1.0 - z) * (1.0 - n * n)
            dr = dpre_n * hpn
            dpre_z = gt * (hprev - n) * z * (1.0 - z)
            dpre_r = dr * r * (1.0 - r)
            dxp[..., t, 0:d] = dpre_r
            dxp[..., t, d:2 * d] = dpre_z
            dxp[..., t, 2 * d:] = dpre_n
            dhp[..., t, 0:d] = dpre_r
            dhp[..., t, d:2 * d] = dpre_z
            dhp[..., t, 2 * d:] = dpre_n * r
            gh = gt * z + np.matmul(dhp[..., t, :], w_h_t)
        if xp.requires_grad:
            _accum(xp, dxp)
        if h0.requires_grad:
            _accum(h0, gh)
        if w_h.requires_grad:
            if w_h.ndim == 2:
                _accum(w_h, hprev_all.reshape(-1, d).T @ dhp.reshape(-1, 3 * d))
            else:
                lanes = w_h.data.shape[0]
                hf = hprev_all.reshape(lanes, -1, d)
                df = dhp.reshape(lanes, -1, 3 * d)
                _accum(w_h, np.matmul(hf.transpose(0, 2, 1), df))
        if b_h.requires_grad:
            _accum(b_h, _unbroadcast(dhp.sum(axis=-2), b_h.data.shape))

    return _make(hs, "gru_scan", (xp, h0, w_h, b_h), backward)


# ---------------------------------------------------------------------------
# Shape and gather primitives
# ---------------------------------------------------------------------------

def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _make(data, "concat", ts, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for t, part in zip(ts, parts):
            if t.requires_grad:
                _accum(t, part)

    return _make(data, "stack", ts, backward)


def slice_(a, key) -> Tensor:
    """Basic indexing (ints, slices, None, Ellipsis); no advanced indexing,
    so the gradient scatter below never hits an index twice."""
    a = _as_tensor(a)
    data = a.data[key]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data)

    def backward(g):
        if a.requires_grad:
            _grad_buffer(a)[key] += g

    return _make(np.ascontiguousarray(data), "slice", (a,), backward)


def take(a, indices, axis: int) -> Tensor:
    """Gather along one axis with repeated indices allowed."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.take(a.data, idx, axis=axis)
    dim = a.data.shape[axis]

    onehot_t = np.zeros((dim, idx.size))
    onehot_t[idx, np.arange(idx.size)] = 1.0

    def backward(g):
        if a.requires_grad:
            # Scatter-add as a matmul: rows of the one-hot transpose sum the
            # gradient slices landing on each source index (BLAS beats
            # np.add.at by a wide margin here).
            gmoved = np.moveaxis(g, axis, 0).reshape(idx.size, -1)
            scattered = onehot_t @ gmoved
            buf = np.moveaxis(_grad_buffer(a), axis, 0)
            buf += scattered.reshape(buf.shape)

    return _make(data, "take", (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _make(data, "reshape", (a,), backward)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        if a.requires_grad:
            _accum(a, g.transpose(inverse))

    return _make(data, "transpose", (a,), backward)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                _accum(a, np.broadcast_to(g, a.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(np.asarray(data), "sum", (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def mse(a, b) -> Tensor:
    """Mean of elementwise squared differences, as a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    d = sub(a, b)
    return mean(mul(d, d))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def finite_difference_gradient(loss_fn: Callable[[np.ndarray], float],
                               theta: np.ndarray,
                               step: float = 1e-5,
                               coords: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector.

    With ``coords``, only those coordinates are probed (two evaluations
    each); the rest of the returned vector is zero. Large models are
    checked on a sampled coordinate subset to keep the probe count sane.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    indices = range(theta.size) if coords is None else coords
    for i in indices:
        bumped = theta.copy()
        bumped[i] = theta[i] + step
        up = loss_fn(bumped)
        bumped[i] = theta[i] - step
        down = loss_fn(bumped)
        grad[i] = (up - down) / (2.0 * step)
    return grad


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max(1, |a_i|, |n_i|)."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
