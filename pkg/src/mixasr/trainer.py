"""Three-phase training: separator pretraining, frozen-separator acoustic
model training, and joint fine-tuning.

Phase 2 freezes every separator parameter (bitwise) and runs the separator
in inference mode, caching its features and target assignments per example.
Phase 3 unfreezes, backpropagates the frame-wise cross entropy through
feature extraction, inverse STFT, and the mask network, and recomputes the
target assignment every time since the separator output drifts.  The Newbob
schedule halves the learning rate whenever dev loss improves by less than
an absolute threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .am import VariantSpec, am_forward, am_loss, assign_targets
from .dsp import Spectrogram, features, features_tensor, stft
from .errors import ConfigError, DivergenceError
from .mixsim import MixtureExample
from .nn import Adam, ParamSet, save_checkpoint
from .separator import (SeparatorConfig, SepTrainConfig, pretrain_separator,
                        separate, separate_graph)
from .tensor import Tape, Tensor

PHASES = ("sep_pretrain", "am_train", "joint")
_PHASE_RNG_TAG = {"sep_pretrain": 20, "am_train": 21, "joint": 22}


@dataclass(frozen=True)
class PhaseConfig:
    phase: str
    epochs: int
    lr: float
    batch_size: int = 4
    newbob_decay: float = 0.5
    newbob_threshold: float = 0.01
    min_lr: float = 1e-6
    l2: float = 1e-2
    dropout: float = 0.1
    grad_noise_std: float = 0.1
    specaugment: bool = True
    aux_scale: float = 0.3
    # sep_pretrain only
    bound_db: float = 30.0
    dynamic: bool = False
    examples_per_epoch: int = 200

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.epochs < 0 or self.lr <= 0:
            raise ConfigError("epochs must be >= 0 and lr > 0")
        if self.phase == "joint" and self.specaugment:
            raise ConfigError("SpecAugment must stay off in the joint phase")


def default_phase_config(phase: str) -> PhaseConfig:
    if phase == "sep_pretrain":
        return PhaseConfig(phase, epochs=10, lr=1e-3, batch_size=8,
                           l2=0.0, dropout=0.0, grad_noise_std=0.0,
                           specaugment=False)
    if phase == "am_train":
        return PhaseConfig(phase, epochs=20, lr=4e-4, specaugment=True)
    if phase == "joint":
        return PhaseConfig(phase, epochs=20, lr=3e-5, specaugment=False)
    raise ConfigError(f"unknown phase {phase!r}")


@dataclass
class TrainState:
    epoch: int = 0
    current_lr: float = 0.0
    best_dev_loss: float = np.inf
    freeze: frozenset[str] = frozenset()


def spec_augment(feats: np.ndarray, rng: np.random.Generator,
                 n_time_masks: int = 2, max_t: int = 10,
                 n_freq_masks: int = 2, max_f: int = 8) -> np.ndarray:
    """Mask random time and frequency blocks with the utterance mean."""
    out = np.array(feats, dtype=np.float64)
    if out.size == 0:
        raise ConfigError("spec_augment: empty features")
    mean = out.mean()
    n_frames, n_feats = out.shape
    for _ in range(n_time_masks):
        w = min(int(rng.integers(0, max_t + 1)), n_frames)
        if w > 0:
            t0 = int(rng.integers(0, n_frames - w + 1))
            out[t0:t0 + w, :] = mean
    for _ in range(n_freq_masks):
        w = min(int(rng.integers(0, max_f + 1)), n_feats)
        if w > 0:
            f0 = int(rng.integers(0, n_feats - w + 1))
            out[:, f0:f0 + w] = mean
    return out


def newbob_step(state: TrainState, dev_loss: float, cfg: PhaseConfig) -> float:
    """Decay the rate when dev improvement falls below the threshold."""
    if state.best_dev_loss - dev_loss < cfg.newbob_threshold:
        state.current_lr = max(cfg.min_lr, state.current_lr * cfg.newbob_decay)
    state.best_dev_loss = min(state.best_dev_loss, dev_loss)
    return state.current_lr


def apply_regularizers(params: ParamSet, l2: float, grad_noise_std: float,
                       rng: np.random.Generator,
                       freeze: frozenset[str] = frozenset()) -> None:
    """Add L2 pull and fresh Gaussian noise to the accumulated gradients."""
    for name, p in params.items():
        if name in freeze or p.grad is None:
            continue
        if l2 > 0.0:
            p.grad += l2 * p.data
        if grad_noise_std > 0.0:
            p.grad += rng.normal(0.0, grad_noise_std, size=p.data.shape)


# --------------------------------------------------------------------------
# acoustic-model phases (frozen-separator and joint)


class _AmPhaseRunner:
    def __init__(self, phase: PhaseConfig, params: ParamSet,
                 sep_cfg: SeparatorConfig, variant: VariantSpec,
                 train: Sequence[MixtureExample], dev: Sequence[MixtureExample],
                 seed: int):
        self.phase = phase
        self.params = params
        self.sep_cfg = sep_cfg
        self.variant = variant
        self.train = train
        self.dev = dev
        self.rng = np.random.default_rng([seed, _PHASE_RNG_TAG[phase.phase]])
        self.frozen_sep = phase.phase == "am_train"
        self.freeze = (frozenset(n for n in params.names() if n.startswith("sep."))
                       if self.frozen_sep else frozenset())
        self._frozen_cache: dict[tuple[str, int], tuple] = {}
        self._const_cache: dict[tuple[str, int], tuple] = {}

    def _ref_specs(self, key, ex) -> tuple[Spectrogram, Spectrogram]:
        cached = self._const_cache.get(key)
        if cached is None:
            stft_cfg = self.sep_cfg.stft
            cached = (tuple(stft(r, stft_cfg) for r in ex.references),
                      features(ex.mixture, stft_cfg))
            self._const_cache[key] = cached
        return cached

    def _prepare_frozen(self, key, ex):
        """Separator inference, features, and target permutation, cached."""
        cached = self._frozen_cache.get(key)
        if cached is None:
            ref_specs, feats_mix = self._ref_specs(key, ex)
            result = separate(self.params, self.sep_cfg, ex.mixture)
            perm = assign_targets(result.est_specs, ref_specs)
            feats_sep = tuple(features(w, self.sep_cfg.stft)
                              for w in result.est_waveforms)
            cached = (feats_mix, feats_sep, perm)
            self._frozen_cache[key] = cached
        return cached

    def _example_loss(self, key, ex, training: bool) -> Tensor:
        ph = self.phase
        dropout = ph.dropout if training else 0.0
        rng = self.rng if training else None
        if self.frozen_sep:
            feats_mix, feats_sep, perm = self._prepare_frozen(key, ex)
            if training and ph.specaugment:
                feats_mix = spec_augment(feats_mix, self.rng)
                feats_sep = tuple(spec_augment(f, self.rng) for f in feats_sep)
            out = am_forward(self.params, self.variant, feats_mix, feats_sep,
                             dropout, rng)
        else:
            ref_specs, feats_mix = self._ref_specs(key, ex)
            masks, waves, mix_spec = separate_graph(self.params, self.sep_cfg,
                                                    ex.mixture)
            est_specs = tuple(Spectrogram(m.data * mix_spec.values,
                                          self.sep_cfg.stft) for m in masks)
            perm = assign_targets(est_specs, ref_specs)
            feats_sep = tuple(features_tensor(w, self.sep_cfg.stft)
                              for w in waves)
            out = am_forward(self.params, self.variant, Tensor(feats_mix),
                             feats_sep, dropout, rng)
        return am_loss(out, ex.frame_labels, perm, ph.aux_scale)

    def dev_loss(self) -> float:
        values = []
        for i, ex in enumerate(self.dev):
            loss = self._example_loss(("dev", i), ex, training=False)
            values.append(loss.item())
        return float(np.mean(values))

    def run(self, out_dir=None) -> list[dict]:
        ph = self.phase
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        opt = Adam(self.params)
        state = TrainState(current_lr=ph.lr, freeze=self.freeze)
        log: list[dict] = []
        best_dev = np.inf
        last_good = None
        for epoch in range(1, ph.epochs + 1):
            order = self.rng.permutation(len(self.train))
            epoch_losses = []
            for b0 in range(0, len(order), ph.batch_size):
                batch = order[b0:b0 + ph.batch_size]
                for idx in batch:
                    with Tape() as tape:
                        loss = self._example_loss(("train", int(idx)),
                                                  self.train[int(idx)],
                                                  training=True)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise DivergenceError(
                            f"non-finite loss in {ph.phase} epoch {epoch}; "
                            f"last good checkpoint: {last_good}")
                    epoch_losses.append(value)
                    tape.backward(loss, seed=1.0 / len(batch))
                apply_regularizers(self.params, ph.l2, ph.grad_noise_std,
                                   self.rng, self.freeze)
                opt.step(lr=state.current_lr, freeze=self.freeze)
                self.params.zero_grads()
            dev = self.dev_loss()
            log.append({"epoch": epoch, "lr": state.current_lr,
                        "train_loss": float(np.mean(epoch_losses)),
                        "dev_loss": dev})
            if out is not None:
                path = out / f"epoch_{epoch:03d}.ckpt"
                save_checkpoint(path, self.params.state())
                last_good = path
                if dev < best_dev:
                    best_dev = dev
                    save_checkpoint(out / "best.ckpt", self.params.state())
            state.epoch = epoch
            newbob_step(state, dev, ph)
        if out is not None:
            if ph.epochs == 0:
                save_checkpoint(out / "best.ckpt", self.params.state())
            with open(out / "log.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, ["epoch", "lr", "train_loss",
                                             "dev_loss"])
                writer.writeheader()
                writer.writerows(log)
        return log


def train_phase(phase: PhaseConfig, params: ParamSet, sep_cfg: SeparatorConfig,
                variant: VariantSpec | None,
                train: Sequence[MixtureExample] | object,
                dev: Sequence[MixtureExample], seed: int,
                out_dir=None) -> list[dict]:
    """Run one training phase; ``params`` is updated in place.

    sep_pretrain expects ``params`` to hold separator parameters only (and
    accepts an example stream as ``train``); the acoustic-model phases
    expect the merged separator+AM set and a variant.
    """
    if phase.phase == "sep_pretrain":
        cfg = SepTrainConfig(epochs=phase.epochs, lr=phase.lr,
                             batch_size=phase.batch_size,
                             examples_per_epoch=phase.examples_per_epoch,
                             bound_db=phase.bound_db, seed=seed)
        return pretrain_separator(params, sep_cfg, cfg, train, dev, out_dir)
    if variant is None:
        raise ConfigError(f"{phase.phase} requires a variant spec")
    runner = _AmPhaseRunner(phase, params, sep_cfg, variant, train, dev, seed)
    return runner.run(out_dir)
