"""Gradient verification suite used by the CLI and the acceptance tests.

Every entry builds a small scalar graph and compares reverse-mode gradients
against central finite differences at tiny dimensions.
"""

from __future__ import annotations

import numpy as np

from .am import VariantSpec, am_forward, am_loss, init_am
from .dsp import StftConfig, Waveform
from .nn import ParamSet, init_lstm, lstm_layer
from .separator import SeparatorConfig, init_separator, pit_loss, separate_graph
from .tensor import (Tensor, cross_entropy, exp, gradient_check, log,
                     log_softmax_rows, matmul, mean_all, mul, relu, sigmoid,
                     sum_all, tanh)

TOLERANCE = 1e-4


def _check_matmul(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    return gradient_check(lambda: sum_all(mul(matmul(a, b), matmul(a, b))),
                          [a, b])


def _check_elementwise(rng):
    x = Tensor(rng.uniform(0.5, 2.0, size=(4, 3)), requires_grad=True)

    def f():
        y = mul(sigmoid(x), tanh(x))
        z = relu(log(exp(mul(y, y))))
        return mean_all(z)
    return gradient_check(f, [x])


def _check_softmax_xent(rng):
    logits = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
    targets = rng.integers(0, 5, size=6)
    return gradient_check(
        lambda: cross_entropy(log_softmax_rows(logits), targets), [logits])


def _check_recurrent(rng):
    ps = ParamSet()
    init_lstm(ps, "l0", 3, 4, rng)
    init_lstm(ps, "l1", 8, 4, rng)
    x = Tensor(rng.normal(size=(10, 3)), requires_grad=True)

    def f():
        h = lstm_layer(x, ps["l0.wx"], ps["l0.wh"], ps["l0.b"], "bidir")
        h = lstm_layer(h, ps["l1.wx"], ps["l1.wh"], ps["l1.b"], "bidir")
        return mean_all(mul(h, h))
    return gradient_check(f, ps.tensors() + [x])


def _check_separator_loss(rng):
    """Soft-bounded SDR through sigmoid masks, inverse STFT, and PIT."""
    stft_cfg = StftConfig(fft_size=32, hop=16)
    sep_cfg = SeparatorConfig(rnn_layers=1, width=4, ff_width=6, stft=stft_cfg)
    ps = init_separator(sep_cfg, rng)
    mixture = Waveform(rng.normal(size=150) * 0.3)
    refs = (Waveform(rng.normal(size=150) * 0.3),
            Waveform(rng.normal(size=150) * 0.3))

    def f():
        _, waves, _ = separate_graph(ps, sep_cfg, mixture)
        loss, _ = pit_loss(waves, refs)
        return loss
    return gradient_check(f, ps.tensors())


def _check_am_variant(variant: VariantSpec, rng):
    T, D, C = 5, 6, 4
    ps = init_am(variant, C, D, rng)
    feats_mix = rng.normal(size=(T, D))
    feats_sep = (rng.normal(size=(T, D)), rng.normal(size=(T, D)))
    targets = (rng.integers(0, C, size=T), rng.integers(0, C, size=T))

    def f():
        out = am_forward(ps, variant, feats_mix, feats_sep)
        return am_loss(out, targets, (0, 1))
    return gradient_check(f, ps.tensors())


_AM_STRUCTURES = {
    "am_modular": VariantSpec(1, -1, 0, 0, enc_width=3),
    "am_mas": VariantSpec(1, 1, 1, 0, enc_width=3),
    "am_comb": VariantSpec(1, 1, 0, 1, enc_width=3, comb_width=4),
    "am_comb_mas": VariantSpec(1, 1, 1, 1, enc_width=3, comb_width=4),
}


def run_gradient_suite(seed: int = 0) -> dict[str, float]:
    """Worst relative gradient error per module; all must be <= 1e-4."""
    rng = np.random.default_rng(seed)
    results = {
        "matmul": _check_matmul(rng),
        "elementwise": _check_elementwise(rng),
        "softmax_xent": _check_softmax_xent(rng),
        "recurrent": _check_recurrent(rng),
        "separator_loss": _check_separator_loss(rng),
    }
    for name, variant in _AM_STRUCTURES.items():
        results[name] = _check_am_variant(variant, rng)
    return results
