"""Dense float64 tensors with reverse-mode automatic differentiation.

Every trainable component in the package is expressed through the ops in
this module.  Design points:

* Tensors hold row-major float64 data.  No implicit broadcasting except
  against scalars; row-wise bias addition is its own explicit op.
* Operations record onto the innermost active :class:`Tape`.  With no tape
  active, ops run in inference mode and produce constants.
* ``Tape.backward`` sweeps the recorded ops exactly once in reverse order.
  Gradients of leaf tensors (anything not produced by an op on that tape)
  accumulate additively into ``.grad``; calling backward twice without
  resetting doubles them.  Zero or clear ``.grad`` between steps.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import LabelError, NumericError, ShapeError


class Tensor:
    """A dense float64 array with an optional gradient accumulation buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# tape


class _Accumulator:
    """Per-sweep adjoint storage keyed by tensor identity.

    Adjoints of tensors produced on the tape stay internal; adjoints of
    leaves are flushed into their ``.grad`` buffers at the end of the sweep,
    which is what makes repeated backward calls purely additive.
    """

    def __init__(self, output_ids: set[int]):
        self._output_ids = output_ids
        self._adjoint: dict[int, np.ndarray] = {}
        self._leaves: dict[int, Tensor] = {}

    def add(self, t: Tensor, contrib: np.ndarray) -> None:
        if not t.requires_grad:
            return
        key = id(t)
        buf = self._adjoint.get(key)
        if buf is None:
            self._adjoint[key] = np.array(contrib, dtype=np.float64)
        else:
            buf += contrib
        if key not in self._output_ids:
            self._leaves[key] = t

    def get(self, t: Tensor) -> np.ndarray | None:
        return self._adjoint.get(id(t))

    def flush_leaves(self) -> None:
        for key, t in self._leaves.items():
            adj = self._adjoint[key]
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += adj


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations for one reverse-mode sweep."""

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable]] = []
        self._output_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, out: Tensor, backward: Callable) -> None:
        out.requires_grad = True
        self._entries.append((out, backward))
        self._output_ids.add(id(out))

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        """Accumulate d(loss)/d(leaf) into every leaf's ``.grad``."""
        acc = _Accumulator(self._output_ids)
        acc._adjoint[id(loss)] = np.full_like(loss.data, seed)
        for out, backward in reversed(self._entries):
            g = acc.get(out)
            if g is None:
                continue
            backward(g, acc)
        acc.flush_leaves()


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result; record it if a tape is active and grads are needed."""
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, backward)
    return out


# --------------------------------------------------------------------------
# elementwise and arithmetic ops


def _check_binary_shapes(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} differ "
                         "(only scalar operands broadcast)")


def _reduce_to(shape: tuple[int, ...], g: np.ndarray) -> np.ndarray:
    # only scalar broadcasting exists, so the sole reduction is full-sum
    if shape == g.shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes(a, b, "add")

    def bwd(g, acc):
        acc.add(a, _reduce_to(a.data.shape, g))
        acc.add(b, _reduce_to(b.data.shape, g))

    return _emit(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes(a, b, "sub")

    def bwd(g, acc):
        acc.add(a, _reduce_to(a.data.shape, g))
        acc.add(b, _reduce_to(b.data.shape, -g))

    return _emit(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bwd(g, acc):
        acc.add(a, _reduce_to(ad.shape, g * bd))
        acc.add(b, _reduce_to(bd.shape, g * ad))

    return _emit(ad * bd, (a, b), bwd)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def bwd(g, acc):
        acc.add(a, g * c)

    return _emit(a.data * c, (a,), bwd)


def neg(a) -> Tensor:
    return scale(a, -1.0)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = _sigmoid(a.data)

    def bwd(g, acc):
        acc.add(a, g * out_data * (1.0 - out_data))

    return _emit(out_data, (a,), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g, acc):
        acc.add(a, g * (1.0 - out_data * out_data))

    return _emit(out_data, (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bwd(g, acc):
        acc.add(a, g * mask)

    return _emit(np.where(mask, a.data, 0.0), (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericError("log: non-positive input")
    out_data = np.log(a.data)
    ad = a.data

    def bwd(g, acc):
        acc.add(a, g / ad)

    return _emit(out_data, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data > 700.0):
        raise NumericError("exp: input too large, result would overflow")
    out_data = np.exp(a.data)

    def bwd(g, acc):
        acc.add(a, g * out_data)

    return _emit(out_data, (a,), bwd)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape

    def bwd(g, acc):
        acc.add(a, np.full(shape, float(g)))

    return _emit(np.asarray(np.sum(a.data)), (a,), bwd)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return scale(sum_all(a), 1.0 / n)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data

    def bwd(g, acc):
        acc.add(a, g @ bd.T)
        acc.add(b, ad.T @ g)

    return _emit(ad @ bd, (a, b), bwd)


def add_rows(x, bias) -> Tensor:
    """Add a length-D bias vector to every row of a TxD matrix."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.data.ndim != 2 or bias.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_rows: {x.data.shape} + {bias.data.shape}")

    def bwd(g, acc):
        acc.add(x, g)
        acc.add(bias, g.sum(axis=0))

    return _emit(x.data + bias.data, (x, bias), bwd)


def concat_cols(parts: Iterable) -> Tensor:
    """Concatenate TxD_i matrices along the feature axis."""
    ts = [as_tensor(p) for p in parts]
    rows = {t.data.shape[0] for t in ts}
    if len(rows) != 1 or any(t.data.ndim != 2 for t in ts):
        raise ShapeError("concat_cols: all parts must be 2-D with equal row count")
    widths = [t.data.shape[1] for t in ts]
    offsets = np.cumsum([0] + widths)

    def bwd(g, acc):
        for t, j0, j1 in zip(ts, offsets[:-1], offsets[1:]):
            acc.add(t, g[:, j0:j1])

    return _emit(np.concatenate([t.data for t in ts], axis=1), ts, bwd)


def slice_cols(x, j0: int, j1: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or not (0 <= j0 <= j1 <= x.data.shape[1]):
        raise ShapeError(f"slice_cols: [{j0}:{j1}] of {x.data.shape}")
    shape = x.data.shape

    def bwd(g, acc):
        full = np.zeros(shape)
        full[:, j0:j1] = g
        acc.add(x, full)

    return _emit(x.data[:, j0:j1].copy(), (x,), bwd)


def mul_const(x, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant array of the same shape."""
    x = as_tensor(x)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != x.data.shape:
        raise ShapeError(f"mul_const: {x.data.shape} vs {c.shape}")

    def bwd(g, acc):
        acc.add(x, g * c)

    return _emit(x.data * c, (x,), bwd)


# --------------------------------------------------------------------------
# softmax / cross entropy


def softmax_rows(logits) -> Tensor:
    """Row-wise softmax of a TxC matrix, computed with max-subtraction."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError("softmax_rows: input must be 2-D")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g, acc):
        dot = np.sum(g * p, axis=1, keepdims=True)
        acc.add(logits, p * (g - dot))

    return _emit(p, (logits,), bwd)


def log_softmax_rows(logits) -> Tensor:
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError("log_softmax_rows: input must be 2-D")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out_data = z - lse
    p = np.exp(out_data)

    def bwd(g, acc):
        acc.add(logits, g - p * g.sum(axis=1, keepdims=True))

    return _emit(out_data, (logits,), bwd)


def cross_entropy(logposteriors, targets, weights=None) -> Tensor:
    """Mean over frames of -log p(target).

    ``logposteriors`` is TxC with valid log-distributions per row;
    ``targets`` is a length-T integer label sequence.  Optional per-frame
    weights turn the plain mean into sum(w * nll) / sum(w).
    """
    lp = as_tensor(logposteriors)
    y = np.asarray(targets, dtype=np.int64)
    if lp.data.ndim != 2 or y.shape != (lp.data.shape[0],):
        raise ShapeError(f"cross_entropy: {lp.data.shape} with {y.shape} targets")
    n_frames, n_classes = lp.data.shape
    if np.any(y < 0) or np.any(y >= n_classes):
        raise LabelError(f"cross_entropy: target outside [0, {n_classes})")
    if weights is None:
        w = np.ones(n_frames)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n_frames,):
            raise ShapeError("cross_entropy: weights must be per-frame")
    w_total = w.sum()
    rows = np.arange(n_frames)
    value = -np.sum(w * lp.data[rows, y]) / w_total

    def bwd(g, acc):
        d = np.zeros((n_frames, n_classes))
        d[rows, y] = -w / w_total
        acc.add(lp, float(g) * d)

    return _emit(np.asarray(value), (lp,), bwd)


# --------------------------------------------------------------------------
# gradient checking


def gradient_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                   epsilon: float = 1e-5) -> float:
    """Compare reverse-mode gradients of a scalar graph to central differences.

    ``f`` rebuilds and returns the scalar loss; it is re-evaluated twice per
    parameter coordinate.  Returns the worst relative error, measured as
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    if loss.data.ndim != 0:
        raise ShapeError("gradient_check: f must return a scalar")
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(f().data)
            flat[i] = orig - epsilon
            f_minus = float(f().data)
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(ana_flat[i] - num) / max(1.0, abs(ana_flat[i]), abs(num))
            worst = max(worst, err)
    return worst
