"""Trainable layers, parameter containers, and the checkpoint format.

Weights are initialized uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) from the
caller's RNG; biases start at zero except the LSTM forget gate, which gets
1.0 so early cell states survive.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .tensor import Tensor, active_tape, add_rows, concat_cols, matmul, mul_const


class ParamSet:
    """Ordered mapping of parameter names to trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def total_count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in state:
                raise ConfigError(f"checkpoint is missing parameter {name}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(f"checkpoint shape mismatch for {name}: "
                                 f"{arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def merged_with(self, other: "ParamSet") -> "ParamSet":
        out = ParamSet()
        for src in (self, other):
            for name, t in src.items():
                if name in out._params:
                    raise ConfigError(f"duplicate parameter across sets: {name}")
                out._params[name] = t
        return out


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    lim = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape)


def init_linear(ps: ParamSet, name: str, d_in: int, d_out: int,
                rng: np.random.Generator) -> None:
    ps.add(f"{name}.W", _uniform(rng, d_in, (d_in, d_out)))
    ps.add(f"{name}.b", np.zeros(d_out))


def linear(ps: ParamSet, name: str, x: Tensor) -> Tensor:
    return add_rows(matmul(x, ps[f"{name}.W"]), ps[f"{name}.b"])


def init_lstm(ps: ParamSet, name: str, d_in: int, hidden: int,
              rng: np.random.Generator) -> None:
    ps.add(f"{name}.wx", _uniform(rng, d_in, (d_in, 4 * hidden)))
    ps.add(f"{name}.wh", _uniform(rng, hidden, (hidden, 4 * hidden)))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    ps.add(f"{name}.b", b)


def lstm_layer(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor,
               direction: str = "fwd") -> Tensor:
    """Recurrent layer over a TxD sequence.

    direction "fwd" or "bwd" gives TxH; "bidir" runs both and concatenates
    to Tx2H.  Initial state is zero.
    """
    if direction == "bidir":
        return concat_cols([lstm_layer(x, wx, wh, b, "fwd"),
                            lstm_layer(x, wx, wh, b, "bwd")])
    if direction not in ("fwd", "bwd"):
        raise ConfigError(f"unknown direction {direction!r}")
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise ShapeError("lstm_layer: input must be TxD with T >= 1")
    reverse = direction == "bwd"
    xd = np.ascontiguousarray(x.data[::-1]) if reverse else x.data
    h, cache = kernels.lstm_forward(xd, wx.data, wh.data, b.data)
    out_data = h[::-1].copy() if reverse else h

    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in (x, wx, wh, b)):
        def bwd(g, acc):
            gd = np.ascontiguousarray(g[::-1]) if reverse else np.ascontiguousarray(g)
            dx, dwx, dwh, db = kernels.lstm_backward(gd, cache)
            acc.add(x, dx[::-1] if reverse else dx)
            acc.add(wx, dwx)
            acc.add(wh, dwh)
            acc.add(b, db)
        tape.record(out, bwd)
    return out


def init_blstm_stack(ps: ParamSet, name: str, d_in: int, hidden: int,
                     n_layers: int, rng: np.random.Generator) -> None:
    d = d_in
    for k in range(n_layers):
        init_lstm(ps, f"{name}.l{k}.fwd", d, hidden, rng)
        init_lstm(ps, f"{name}.l{k}.bwd", d, hidden, rng)
        d = 2 * hidden


def blstm_stack(ps: ParamSet, name: str, x: Tensor, n_layers: int,
                dropout: float = 0.0,
                rng: np.random.Generator | None = None) -> Tensor:
    """Stack of bidirectional LSTM layers, optional dropout after each."""
    h = x
    for k in range(n_layers):
        fwd = lstm_layer(h, ps[f"{name}.l{k}.fwd.wx"], ps[f"{name}.l{k}.fwd.wh"],
                         ps[f"{name}.l{k}.fwd.b"], "fwd")
        bwd = lstm_layer(h, ps[f"{name}.l{k}.bwd.wx"], ps[f"{name}.l{k}.bwd.wh"],
                         ps[f"{name}.l{k}.bwd.b"], "bwd")
        h = concat_cols([fwd, bwd])
        if dropout > 0.0:
            h = apply_dropout(h, dropout, rng)
    return h


def apply_dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None:
        raise ConfigError("dropout requires an RNG")
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep) / keep
    return mul_const(x, mask)


class Adam(object):
    """Adam with externally scheduled learning rate and a freeze mask.

    Parameters whose name is in ``freeze`` (or whose grad is unset) are left
    bit-identical by ``step``.
    """

    def __init__(self, params: ParamSet, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self._v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self._t = 0

    def step(self, lr: float | None = None,
             freeze: frozenset[str] | set[str] = frozenset()) -> None:
        lr = self.lr if lr is None else lr
        self._t += 1
        bc1 = 1.0 - self.beta1 ** self._t
        bc2 = 1.0 - self.beta2 ** self._t
        for name, p in self.params.items():
            if name in freeze or p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# --------------------------------------------------------------------------
# checkpoint container: versioned binary, bit-exact round trip

_MAGIC = b"MXAC"
_VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    """Write name -> float64 array mapping; byte layout is little-endian."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(state)))
        for name, arr in state.items():
            arr = np.asarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        state: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            state[name] = data.astype(np.float64)
    return state
