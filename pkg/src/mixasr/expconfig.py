"""Experiment configuration files.

INI-style key=value sections: [run], [corpus], [separator], [am], and one
[phase.*] section per training phase.  Unknown sections or keys are hard
errors; every violation in a file is reported at once.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from .am import VariantSpec
from .dsp import StftConfig
from .errors import ConfigError
from .mixsim import CorpusConfig
from .separator import SeparatorConfig
from .trainer import PHASES, PhaseConfig, default_phase_config


def _parse_bool(text: str) -> bool:
    val = text.strip().lower()
    if val in ("true", "yes", "on", "1"):
        return True
    if val in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_RUN_KEYS = {"phases": str, "seed": int, "out": str}
_CORPUS_KEYS = {
    "dir": str, "n_train": int, "n_dev": int, "n_eval": int, "seed": int,
    "num_speakers_pool": int, "alphabet_size": int, "burst_frames": int,
    "gap_min_frames": int, "gap_max_frames": int, "utt_min_s": float,
    "utt_max_s": float, "t60_min_s": float, "t60_max_s": float,
    "snr_db": float, "snr_jitter_db": float, "sample_rate": int,
    "amplitude": float, "rir_pool_size": int,
}
_SEPARATOR_KEYS = {"rnn_layers": int, "width": int, "ff_width": int,
                   "checkpoint": str}
_AM_KEYS = {"variant": str, "enc_width": int, "comb_width": int,
            "checkpoint": str}
_PHASE_KEYS = {
    "epochs": int, "lr": float, "batch_size": int, "newbob_decay": float,
    "newbob_threshold": float, "min_lr": float, "l2": float, "dropout": float,
    "grad_noise_std": float, "specaugment": _parse_bool, "aux_scale": float,
    "bound_db": float, "dynamic": _parse_bool, "examples_per_epoch": int,
}

_SCHEMA = {"run": _RUN_KEYS, "corpus": _CORPUS_KEYS,
           "separator": _SEPARATOR_KEYS, "am": _AM_KEYS}
_SCHEMA.update({f"phase.{p}": _PHASE_KEYS for p in PHASES})


@dataclass
class ExperimentConfig:
    phases: list[str]
    seed: int
    out: str
    corpus: CorpusConfig
    corpus_dir: str | None
    n_train: int
    n_dev: int
    n_eval: int
    separator: SeparatorConfig
    sep_checkpoint: str | None
    variant: VariantSpec
    am_checkpoint: str | None
    phase_configs: dict[str, PhaseConfig]


def _typed(section: str, key: str, raw: str, errors: list[str]):
    conv = _SCHEMA[section][key]
    try:
        return conv(raw)
    except ValueError as exc:
        errors.append(f"[{section}] {key}: {exc}")
        return None


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate an experiment config file.

    ``overrides`` may carry CLI-level replacements for seed, out, and
    variant.  Raises ConfigError listing every violation found.
    """
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    errors: list[str] = []
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key {key!r} in [{section}]")
                continue
            val = _typed(section, key, raw, errors)
            if val is not None:
                values[section][key] = val

    run = values.get("run", {})
    overrides = overrides or {}
    seed = overrides.get("seed", run.get("seed", 0))
    out = overrides.get("out", run.get("out"))
    if out is None:
        errors.append("[run] out is required (or pass --out)")
    phase_names = run.get("phases", "").split()
    for name in phase_names:
        if name not in PHASES:
            errors.append(f"[run] unknown phase {name!r}")

    cor = values.get("corpus", {})
    corpus_kwargs = {}
    for src, dst in (("num_speakers_pool", "num_speakers_pool"),
                     ("alphabet_size", "alphabet_size"),
                     ("burst_frames", "burst_frames"),
                     ("snr_db", "snr_db"), ("snr_jitter_db", "snr_jitter_db"),
                     ("sample_rate", "sample_rate"), ("amplitude", "amplitude"),
                     ("rir_pool_size", "rir_pool_size"), ("seed", "seed")):
        if src in cor:
            corpus_kwargs[dst] = cor[src]
    if "gap_min_frames" in cor or "gap_max_frames" in cor:
        corpus_kwargs["gap_frames"] = (cor.get("gap_min_frames", 2),
                                       cor.get("gap_max_frames", 5))
    if "utt_min_s" in cor or "utt_max_s" in cor:
        corpus_kwargs["utt_len_range_s"] = (cor.get("utt_min_s", 0.8),
                                            cor.get("utt_max_s", 1.4))
    if "t60_min_s" in cor or "t60_max_s" in cor:
        corpus_kwargs["t60_range_s"] = (cor.get("t60_min_s", 0.2),
                                        cor.get("t60_max_s", 0.5))
    if "sample_rate" in cor and cor["sample_rate"] != 8000:
        corpus_kwargs["stft"] = StftConfig(sample_rate=cor["sample_rate"])

    sep = values.get("separator", {})
    sep_kwargs = {k: sep[k] for k in ("rnn_layers", "width", "ff_width") if k in sep}
    if "sample_rate" in cor and cor["sample_rate"] != 8000:
        sep_kwargs["stft"] = StftConfig(sample_rate=cor["sample_rate"])

    amv = values.get("am", {})
    variant_text = overrides.get("variant", amv.get("variant", "6,-1,0,0"))
    width_kwargs = {k: amv[k] for k in ("enc_width", "comb_width") if k in amv}

    phase_configs: dict[str, PhaseConfig] = {}
    for name in PHASES:
        section = f"phase.{name}"
        base = default_phase_config(name)
        if section in values:
            try:
                base = replace(base, **values[section])
            except ConfigError as exc:
                errors.append(f"[{section}] {exc}")
        phase_configs[name] = base

    corpus_cfg = None
    variant = None
    sep_cfg = None
    try:
        corpus_cfg = CorpusConfig(**corpus_kwargs)
    except ConfigError as exc:
        errors.append(f"[corpus] {exc}")
    try:
        variant = VariantSpec.parse(variant_text, **width_kwargs)
    except ConfigError as exc:
        errors.append(f"[am] {exc}")
    try:
        sep_cfg = SeparatorConfig(**sep_kwargs)
    except ConfigError as exc:
        errors.append(f"[separator] {exc}")

    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))

    return ExperimentConfig(
        phases=phase_names,
        seed=seed,
        out=out,
        corpus=corpus_cfg,
        corpus_dir=cor.get("dir"),
        n_train=cor.get("n_train", 200),
        n_dev=cor.get("n_dev", 50),
        n_eval=cor.get("n_eval", 50),
        separator=sep_cfg,
        sep_checkpoint=sep.get("checkpoint"),
        variant=variant,
        am_checkpoint=amv.get("checkpoint"),
        phase_configs=phase_configs,
    )


def write_default_config(path) -> None:
    """Emit a fully commented template config."""
    Path(path).write_text(
        "[run]\n"
        "phases = sep_pretrain am_train joint\n"
        "seed = 0\n"
        "out = runs/example\n"
        "\n"
        "[corpus]\n"
        "n_train = 200\n"
        "n_dev = 50\n"
        "n_eval = 50\n"
        "seed = 0\n"
        "\n"
        "[separator]\n"
        "rnn_layers = 3\n"
        "width = 64\n"
        "\n"
        "[am]\n"
        "variant = 6,4,1,1\n"
        "enc_width = 32\n"
        "comb_width = 64\n"
        "\n"
        "[phase.sep_pretrain]\n"
        "epochs = 10\n"
        "lr = 1e-3\n"
        "batch_size = 8\n"
        "\n"
        "[phase.am_train]\n"
        "epochs = 20\n"
        "lr = 4e-4\n"
        "\n"
        "[phase.joint]\n"
        "epochs = 20\n"
        "lr = 3e-5\n")
