"""End-to-end experiment runner.

Builds the corpus (from disk or regenerated from the corpus seed), runs the
requested phases in order with prerequisite checks, evaluates on dev and
eval splits, and writes logs, checkpoints, reports, and a machine-readable
summary.  Identical config and seed reproduce the summary bitwise.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .am import init_am
from .dsp import read_wav  # noqa: F401  (re-export convenience)
from .errors import ConfigError
from .expconfig import ExperimentConfig
from .metrics import evaluate_model
from .mixsim import CorpusSampler, dynamic_mixing_stream, read_corpus
from .nn import ParamSet, load_checkpoint, save_checkpoint
from .separator import init_separator
from .trainer import train_phase

FEATURE_DIM = 40


def build_corpus(cfg: ExperimentConfig) -> dict[str, list]:
    """Materialize train/dev/eval example lists.

    Reads the corpus directory when one is configured; otherwise examples
    are regenerated deterministically from the corpus seed with disjoint
    per-split index ranges.
    """
    if cfg.corpus_dir:
        return read_corpus(cfg.corpus_dir)
    sampler = CorpusSampler(cfg.corpus)
    corpus = {}
    base = 0
    for split, n in (("train", cfg.n_train), ("dev", cfg.n_dev),
                     ("eval", cfg.n_eval)):
        corpus[split] = [sampler.example(base + k) for k in range(n)]
        base += n
    return corpus


def init_models(cfg: ExperimentConfig) -> tuple[ParamSet, ParamSet]:
    sep_ps = init_separator(cfg.separator, np.random.default_rng([cfg.seed, 10]))
    am_ps = init_am(cfg.variant, cfg.corpus.alphabet_size, FEATURE_DIM,
                    np.random.default_rng([cfg.seed, 11]))
    return sep_ps, am_ps


def _load_into(ps: ParamSet, path, prefix: str) -> None:
    state = load_checkpoint(path)
    subset = {k: v for k, v in state.items() if k.startswith(prefix)}
    if not subset:
        raise ConfigError(f"{path}: no parameters with prefix {prefix!r}")
    ps.load_state(subset)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute all configured phases and return the summary dict."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = build_corpus(cfg)
    sep_ps, am_ps = init_models(cfg)

    have_sep = cfg.sep_checkpoint is not None
    have_am = cfg.am_checkpoint is not None
    if cfg.sep_checkpoint:
        _load_into(sep_ps, cfg.sep_checkpoint, "sep.")
    if cfg.am_checkpoint:
        _load_into(am_ps, cfg.am_checkpoint, "am.")
        state = load_checkpoint(cfg.am_checkpoint)
        if any(k.startswith("sep.") for k in state):
            _load_into(sep_ps, cfg.am_checkpoint, "sep.")
            have_sep = True

    merged = sep_ps.merged_with(am_ps)
    summary: dict = {
        "seed": cfg.seed,
        "variant": cfg.variant.serialize(),
        "n_params": merged.total_count(),
        "phases": {},
    }

    for name in cfg.phases:
        phase = cfg.phase_configs[name]
        phase_dir = out / name
        if name == "sep_pretrain":
            train = (dynamic_mixing_stream(cfg.corpus)
                     if phase.dynamic else corpus["train"])
            log = train_phase(phase, sep_ps, cfg.separator, None, train,
                              corpus["dev"], cfg.seed, phase_dir)
            have_sep = True
        else:
            if not have_sep:
                raise ConfigError(
                    f"phase {name} needs a separator checkpoint: run "
                    "sep_pretrain first or set [separator] checkpoint")
            if name == "joint" and not have_am:
                raise ConfigError(
                    "joint phase needs a trained acoustic model: run "
                    "am_train first or set [am] checkpoint")
            log = train_phase(phase, merged, cfg.separator, cfg.variant,
                              corpus["train"], corpus["dev"], cfg.seed,
                              phase_dir)
            have_am = True
        summary["phases"][name] = {
            "epochs": phase.epochs,
            "log": log,
            "final_train_loss": log[-1]["train_loss"] if log else None,
            "final_dev_loss": log[-1]["dev_loss"] if log else None,
        }
        save_checkpoint(phase_dir / "final.ckpt",
                        sep_ps.state() if name == "sep_pretrain"
                        else merged.state())

    if have_am:
        eval_dir = out / "eval"
        eval_dir.mkdir(parents=True, exist_ok=True)
        report = evaluate_model(merged, cfg.separator, cfg.variant,
                                {"dev": corpus["dev"], "eval": corpus["eval"]},
                                checkpoint=str(out / cfg.phases[-1] / "final.ckpt"))
        (eval_dir / "report.json").write_text(report.to_json())
        report.write_csv(eval_dir / "report.csv")
        summary["eval"] = {split: rep.aggregates()
                           for split, rep in report.splits.items()}

    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
