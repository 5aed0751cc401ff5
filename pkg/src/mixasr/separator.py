"""Mask-based two-speaker separation in the STFT domain.

A BLSTM stack followed by two feed-forward layers predicts one sigmoid mask
per speaker; masks scale the complex mixture spectrogram and estimates are
synthesized by inverse STFT.  Training minimizes the soft-bounded SDR loss
under the best speaker permutation (uPIT).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .dsp import (Spectrogram, StftConfig, Waveform, istft_tensor, sdr,
                  soft_bounded_sdr_loss, stft)
from .errors import DivergenceError, LengthError
from .mixsim import MixtureExample
from .nn import (Adam, ParamSet, blstm_stack, init_blstm_stack, init_linear,
                 linear, save_checkpoint)
from .tensor import Tape, Tensor, add, mul, scale, sigmoid, slice_cols, tanh

N_SPEAKERS = 2


@dataclass(frozen=True)
class SeparatorConfig:
    rnn_layers: int = 3
    width: int = 64
    ff_width: int = 128
    stft: StftConfig = field(default_factory=StftConfig)


@dataclass
class SeparationResult:
    masks: tuple[np.ndarray, np.ndarray]
    est_specs: tuple[Spectrogram, Spectrogram]
    est_waveforms: tuple[Waveform, Waveform]


def init_separator(cfg: SeparatorConfig, rng: np.random.Generator) -> ParamSet:
    ps = ParamSet()
    bins = cfg.stft.bins
    init_blstm_stack(ps, "sep.rnn", bins, cfg.width, cfg.rnn_layers, rng)
    init_linear(ps, "sep.ff1", 2 * cfg.width, cfg.ff_width, rng)
    init_linear(ps, "sep.out", cfg.ff_width, N_SPEAKERS * bins, rng)
    return ps


def _network_input(spec: Spectrogram) -> np.ndarray:
    """Log magnitude, mean/variance normalized per bin over the utterance."""
    logmag = np.log(np.maximum(np.abs(spec.values), 1e-10))
    mean = logmag.mean(axis=0, keepdims=True)
    std = np.maximum(logmag.std(axis=0, keepdims=True), 1e-5)
    return (logmag - mean) / std


def separate_graph(ps: ParamSet, cfg: SeparatorConfig,
                   mixture: Waveform) -> tuple[list[Tensor], list[Tensor], Spectrogram]:
    """Forward pass producing mask and waveform tensors (tape-recordable).

    Returns (masks, est_waveform_tensors, mixture_spectrogram).
    """
    if len(mixture) < cfg.stft.fft_size:
        raise LengthError("mixture shorter than one STFT frame")
    spec = stft(mixture, cfg.stft)
    bins = cfg.stft.bins
    x = Tensor(_network_input(spec))
    h = blstm_stack(ps, "sep.rnn", x, cfg.rnn_layers)
    h = tanh(linear(ps, "sep.ff1", h))
    m = sigmoid(linear(ps, "sep.out", h))
    masks = [slice_cols(m, s * bins, (s + 1) * bins) for s in range(N_SPEAKERS)]
    waves = []
    for mask in masks:
        re = mul(mask, Tensor(spec.values.real.copy()))
        im = mul(mask, Tensor(spec.values.imag.copy()))
        waves.append(istft_tensor(re, im, cfg.stft, len(mixture)))
    return masks, waves, spec


def separate(ps: ParamSet, cfg: SeparatorConfig,
             mixture: Waveform) -> SeparationResult:
    """Inference: deterministic masks in [0,1] and per-speaker estimates."""
    masks, waves, spec = separate_graph(ps, cfg, mixture)
    mask_arrays = tuple(m.data for m in masks)
    est_specs = tuple(Spectrogram(m * spec.values, cfg.stft) for m in mask_arrays)
    est_waveforms = tuple(Waveform(w.data, mixture.sample_rate) for w in waves)
    return SeparationResult(mask_arrays, est_specs, est_waveforms)


def pit_loss(est: Sequence, refs: Sequence[Waveform],
             bound_db: float = 30.0) -> tuple[Tensor, tuple[int, int]]:
    """Minimum over both speaker permutations of the mean pair loss.

    ``est`` entries may be graph tensors (training) or waveforms/arrays
    (evaluation).  Ties resolve to the identity permutation.
    """
    pair = [[soft_bounded_sdr_loss(refs[j], est[i], bound_db)
             for j in range(N_SPEAKERS)] for i in range(N_SPEAKERS)]
    loss_id = scale(add(pair[0][0], pair[1][1]), 0.5)
    loss_sw = scale(add(pair[0][1], pair[1][0]), 0.5)
    if loss_sw.item() < loss_id.item():
        return loss_sw, (1, 0)
    return loss_id, (0, 1)


@dataclass
class SepTrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 8
    examples_per_epoch: int = 200  # only used when training from a stream
    bound_db: float = 30.0
    seed: int = 0


def _dev_metrics(ps: ParamSet, cfg: SeparatorConfig, dev: Sequence[MixtureExample],
                 bound_db: float) -> tuple[float, float]:
    losses, improvements = [], []
    for ex in dev:
        result = separate(ps, cfg, ex.mixture)
        loss, perm = pit_loss(result.est_waveforms, ex.references, bound_db)
        losses.append(loss.item())
        for s in range(N_SPEAKERS):
            improvements.append(sdr(ex.references[s], result.est_waveforms[perm.index(s)])
                                - sdr(ex.references[s], ex.mixture))
    return float(np.mean(losses)), float(np.mean(improvements))


def pretrain_separator(ps: ParamSet, cfg: SeparatorConfig, train_cfg: SepTrainConfig,
                       train_data: Sequence[MixtureExample] | Iterator[MixtureExample],
                       dev_data: Sequence[MixtureExample],
                       out_dir=None) -> list[dict]:
    """Phase-1 optimization of the separator alone.

    ``train_data`` may be a fixed example list or an endless mixture stream
    (dynamic mixing); a stream is consumed examples_per_epoch at a time.
    Returns the per-epoch log and mutates ``ps`` in place.
    """
    streaming = not isinstance(train_data, Sequence)
    opt = Adam(ps, lr=train_cfg.lr)
    shuffle_rng = np.random.default_rng([train_cfg.seed, 3])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log: list[dict] = []
    best_dev = np.inf

    for epoch in range(1, train_cfg.epochs + 1):
        if streaming:
            epoch_examples = [next(train_data) for _ in range(train_cfg.examples_per_epoch)]
        else:
            order = shuffle_rng.permutation(len(train_data))
            epoch_examples = [train_data[i] for i in order]
        epoch_losses = []
        for b0 in range(0, len(epoch_examples), train_cfg.batch_size):
            batch = epoch_examples[b0:b0 + train_cfg.batch_size]
            for ex in batch:
                with Tape() as tape:
                    _, waves, _ = separate_graph(ps, cfg, ex.mixture)
                    loss, _ = pit_loss(waves, ex.references, train_cfg.bound_db)
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError(
                        f"non-finite separator loss at epoch {epoch}")
                epoch_losses.append(value)
                tape.backward(loss, seed=1.0 / len(batch))
            opt.step()
            ps.zero_grads()
        dev_loss, dev_impr = _dev_metrics(ps, cfg, dev_data, train_cfg.bound_db)
        row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
               "dev_loss": dev_loss, "dev_sdr_improvement_db": dev_impr}
        log.append(row)
        if out is not None:
            save_checkpoint(out / f"epoch_{epoch:03d}.ckpt", ps.state())
            if dev_loss < best_dev:
                best_dev = dev_loss
                save_checkpoint(out / "best.ckpt", ps.state())
    if out is not None:
        if train_cfg.epochs == 0:
            save_checkpoint(out / "best.ckpt", ps.state())
        with open(out / "log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, ["epoch", "train_loss", "dev_loss", "dev_sdr_improvement_db"])
            writer.writeheader()
            writer.writerows(log)
    return log
