"""Acoustic-model encoder family over separated and mixture audio.

Four structural variants, selected by layer counts:

* separation encoders only (modular baseline): shared encoder per separated
  stream, shared softmax head;
* mixture-aware speaker encoding: separation-encoder and mixture-encoder
  outputs fused (element-wise addition when both are real encoders,
  concatenation when either is an identity), optionally passed through a
  shared MAS encoder, shared head;
* combination layer without MAS encoders: the two separated encodings and
  the mixture encoding are concatenated and jointly encoded; one head per
  speaker since both read the same joint encoding;
* combination layer over MAS encodings.

Whenever a real separation encoder exists, an auxiliary softmax head sits
directly on its output (same targets, scaled loss) to help convergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import Spectrogram, magnitude_mse
from .errors import ConfigError, ShapeError
from .nn import ParamSet, blstm_stack, init_blstm_stack, init_linear, linear
from .tensor import (Tensor, add, as_tensor, concat_cols, cross_entropy,
                     log_softmax_rows, scale)

IDENTITY = 0
ABSENT = -1


@dataclass(frozen=True)
class VariantSpec:
    """Encoder composition: layer counts for (sep, mix, mas, comb).

    sep_layers 0 means the separation encoder is the identity; mix_layers 0
    likewise, while -1 removes the mixture branch entirely (modular
    baseline).  mas_layers / comb_layers 0 disable those stages.
    """

    sep_layers: int = 6
    mix_layers: int = ABSENT
    mas_layers: int = 0
    comb_layers: int = 0
    enc_width: int = 32
    comb_width: int = 64

    def __post_init__(self):
        if self.sep_layers < 0 or self.mix_layers < ABSENT:
            raise ConfigError("negative layer count")
        if self.mas_layers < 0 or self.comb_layers < 0:
            raise ConfigError("negative layer count")
        if self.mix_layers == ABSENT and (self.mas_layers > 0 or self.comb_layers > 0):
            raise ConfigError("without a mixture branch the model is the modular "
                              "baseline; MAS and combination stages need mix input")

    @property
    def has_mix(self) -> bool:
        return self.mix_layers != ABSENT

    @property
    def has_aux(self) -> bool:
        return self.sep_layers > 0

    @property
    def fusion(self) -> str:
        # element-wise addition needs two real encoders of equal width
        if self.sep_layers > 0 and self.mix_layers > 0:
            return "add"
        return "concat"

    @classmethod
    def parse(cls, text: str, **widths) -> "VariantSpec":
        parts = [int(v) for v in text.replace(" ", "").split(",")]
        if len(parts) != 4:
            raise ConfigError(f"variant must be four integers, got {text!r}")
        return cls(*parts, **widths)

    def serialize(self) -> str:
        return f"{self.sep_layers},{self.mix_layers},{self.mas_layers},{self.comb_layers}"


#: The eight encoder compositions benchmarked in the experiments.
TABLE1_VARIANTS = (
    VariantSpec(6, ABSENT, 0, 0),
    VariantSpec(8, ABSENT, 0, 0),
    VariantSpec(0, 6, 4, 0),
    VariantSpec(6, 0, 4, 0),
    VariantSpec(6, 4, 0, 0),
    VariantSpec(6, 4, 0, 1),
    VariantSpec(6, 4, 2, 0),
    VariantSpec(6, 4, 1, 1),
)


@dataclass
class AmOutput:
    """Per-speaker log-posterior sequences, plus auxiliary ones if present."""
    main: tuple[Tensor, Tensor]
    aux: tuple[Tensor, Tensor] | None


def _branch_dims(v: VariantSpec, feat_dim: int) -> dict[str, int]:
    d = {}
    d["sep_out"] = 2 * v.enc_width if v.sep_layers > 0 else feat_dim
    if v.has_mix:
        d["mix_out"] = 2 * v.enc_width if v.mix_layers > 0 else feat_dim
        if v.fusion == "add":
            if d["sep_out"] != d["mix_out"]:
                raise ConfigError("additive fusion requires equal encoder widths")
            d["fused"] = d["sep_out"]
        else:
            d["fused"] = d["sep_out"] + d["mix_out"]
        d["mas_out"] = 2 * v.enc_width if v.mas_layers > 0 else d["fused"]
    return d


def init_am(variant: VariantSpec, n_classes: int, feat_dim: int,
            rng: np.random.Generator) -> ParamSet:
    ps = ParamSet()
    v = variant
    dims = _branch_dims(v, feat_dim)
    if v.sep_layers > 0:
        init_blstm_stack(ps, "am.sepenc", feat_dim, v.enc_width, v.sep_layers, rng)
    if v.mix_layers > 0:
        init_blstm_stack(ps, "am.mixenc", feat_dim, v.enc_width, v.mix_layers, rng)
    if v.mas_layers > 0:
        init_blstm_stack(ps, "am.masenc", dims["fused"], v.enc_width,
                         v.mas_layers, rng)
    if v.comb_layers > 0:
        if v.mas_layers > 0:
            comb_in = 2 * dims["mas_out"]
        else:
            comb_in = 2 * dims["sep_out"] + dims["mix_out"]
        init_blstm_stack(ps, "am.comb", comb_in, v.comb_width, v.comb_layers, rng)
        init_linear(ps, "am.head0", 2 * v.comb_width, n_classes, rng)
        init_linear(ps, "am.head1", 2 * v.comb_width, n_classes, rng)
    else:
        head_in = dims["mas_out"] if v.has_mix else dims["sep_out"]
        init_linear(ps, "am.head", head_in, n_classes, rng)
    if v.has_aux:
        init_linear(ps, "am.aux", 2 * v.enc_width, n_classes, rng)
    return ps


def am_forward(ps: ParamSet, variant: VariantSpec, feats_mix,
               feats_sep: tuple, dropout: float = 0.0,
               rng: np.random.Generator | None = None) -> AmOutput:
    """Log posteriors for both speakers under the selected composition.

    ``feats_mix`` and the two ``feats_sep`` entries must share their frame
    count.  Pass dropout > 0 with an RNG only during training.
    """
    v = variant
    f_mix = as_tensor(feats_mix)
    f_sep = [as_tensor(f) for f in feats_sep]
    frame_counts = {f.data.shape[0] for f in (f_mix, *f_sep)}
    if len(frame_counts) != 1:
        raise ShapeError(f"feature streams disagree on frame count: {frame_counts}")

    def enc(name, n_layers, x):
        return blstm_stack(ps, name, x, n_layers, dropout, rng)

    z_sep = [enc("am.sepenc", v.sep_layers, f) if v.sep_layers > 0 else f
             for f in f_sep]
    z_mix = None
    if v.has_mix:
        z_mix = enc("am.mixenc", v.mix_layers, f_mix) if v.mix_layers > 0 else f_mix

    def fused(s):
        if v.fusion == "add":
            return add(z_sep[s], z_mix)
        return concat_cols([z_sep[s], z_mix])

    if v.comb_layers > 0:
        if v.mas_layers > 0:
            comb_in = concat_cols([enc("am.masenc", v.mas_layers, fused(0)),
                                   enc("am.masenc", v.mas_layers, fused(1))])
        else:
            comb_in = concat_cols([z_sep[0], z_mix, z_sep[1]])
        z_comb = enc("am.comb", v.comb_layers, comb_in)
        logits = [linear(ps, f"am.head{s}", z_comb) for s in range(2)]
    else:
        def speaker_encoding(s):
            if not v.has_mix:
                return z_sep[s]
            e = fused(s)
            if v.mas_layers > 0:
                e = enc("am.masenc", v.mas_layers, e)
            return e
        logits = [linear(ps, "am.head", speaker_encoding(s)) for s in range(2)]

    main = tuple(log_softmax_rows(l) for l in logits)
    aux = None
    if v.has_aux:
        aux = tuple(log_softmax_rows(linear(ps, "am.aux", z)) for z in z_sep)
    return AmOutput(main=main, aux=aux)


def assign_targets(sep_specs: tuple[Spectrogram, Spectrogram],
                   ref_specs: tuple[Spectrogram, Spectrogram],
                   use_log_magnitude: bool = False) -> tuple[int, int]:
    """Permutation minimizing summed magnitude MSE; ties go to identity."""
    if use_log_magnitude:
        def spec_of(s):
            return Spectrogram(np.log(np.maximum(np.abs(s.values), 1e-10))
                               .astype(np.complex128), s.config)
        sep_specs = tuple(spec_of(s) for s in sep_specs)
        ref_specs = tuple(spec_of(s) for s in ref_specs)
    cost_id = (magnitude_mse(sep_specs[0], ref_specs[0])
               + magnitude_mse(sep_specs[1], ref_specs[1]))
    cost_sw = (magnitude_mse(sep_specs[0], ref_specs[1])
               + magnitude_mse(sep_specs[1], ref_specs[0]))
    return (1, 0) if cost_sw < cost_id else (0, 1)


def am_loss(out: AmOutput, targets: tuple, perm: tuple[int, int],
            aux_scale: float = 0.3) -> Tensor:
    """Mean main cross entropy plus scaled mean auxiliary cross entropy.

    ``perm`` (from :func:`assign_targets`) maps speaker head s to target
    stream perm[s]; the auxiliary heads use the same assignment.
    """
    y = [np.asarray(targets[perm[s]], dtype=np.int64) for s in range(2)]
    main = scale(add(cross_entropy(out.main[0], y[0]),
                     cross_entropy(out.main[1], y[1])), 0.5)
    if out.aux is None or aux_scale == 0.0:
        return main
    aux = scale(add(cross_entropy(out.aux[0], y[0]),
                    cross_entropy(out.aux[1], y[1])), 0.5)
    return add(main, scale(aux, aux_scale))


def greedy_decode(out: AmOutput) -> tuple[np.ndarray, np.ndarray]:
    """Frame-wise argmax per speaker; ties resolve to the lowest label id."""
    return tuple(np.argmax(lp.data, axis=1) for lp in out.main)


def am_param_count(ps: ParamSet) -> int:
    return ps.total_count()
