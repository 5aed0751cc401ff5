"""Command-line interface.

Subcommands: simulate, train-sep, train-am, train-joint, eval, gradcheck,
report.  Exit code 0 on success, 1 on runtime failure, 2 on usage errors;
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import ConfigError
from .expconfig import parse_config
from .gradsuite import TOLERANCE, run_gradient_suite


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixasr",
        description="Two-speaker recognition over an explicit mask-based separator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", help="output directory (overrides [run] out)")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--variant", help="override [am] variant, e.g. 6,4,1,1")
        if checkpoint:
            p.add_argument("--checkpoint", help="parameter checkpoint to load")

    common(sub.add_parser("simulate", help="write a synthetic corpus to disk"))
    common(sub.add_parser("train-sep", help="phase 1: pretrain the separator"))
    common(sub.add_parser("train-am",
                          help="phase 2: train the AM on the frozen separator"),
           checkpoint=True)
    common(sub.add_parser("train-joint", help="phase 3: joint fine-tuning"),
           checkpoint=True)
    common(sub.add_parser("eval", help="score a checkpoint on dev and eval"),
           checkpoint=True)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report",
                       help="aggregate eval reports into a comparison table")
    r.add_argument("reports", nargs="+", help="report.json files")
    r.add_argument("--out", required=True, help="output CSV path")
    return parser


def _overrides(args) -> dict:
    out = {}
    for key in ("seed", "out", "variant"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _run_phases(args, phases: list[str], checkpoint_key: str | None = None) -> int:
    from .experiment import run_experiment

    cfg = parse_config(args.config, _overrides(args))
    cfg.phases = phases
    checkpoint = getattr(args, "checkpoint", None)
    if checkpoint is not None and checkpoint_key is not None:
        setattr(cfg, checkpoint_key, checkpoint)
    summary = run_experiment(cfg)
    _log(f"done; summary at {Path(cfg.out) / 'summary.json'}")
    for name, body in summary["phases"].items():
        _log(f"  {name}: final train loss {body['final_train_loss']:.4f}, "
             f"dev loss {body['final_dev_loss']:.4f}")
    return 0


def _cmd_simulate(args) -> int:
    from .mixsim import write_corpus

    cfg = parse_config(args.config, _overrides(args))
    manifest = write_corpus(cfg.out, cfg.n_train, cfg.n_dev, cfg.n_eval,
                            cfg.corpus)
    _log(f"wrote corpus to {cfg.out}: " +
         ", ".join(f"{k}={len(v)}" for k, v in manifest.items()))
    return 0


def _cmd_eval(args) -> int:
    from .experiment import build_corpus, init_models
    from .metrics import evaluate_model
    from .nn import load_checkpoint

    cfg = parse_config(args.config, _overrides(args))
    if args.checkpoint is None:
        raise ConfigError("eval requires --checkpoint")
    corpus = build_corpus(cfg)
    sep_ps, am_ps = init_models(cfg)
    merged = sep_ps.merged_with(am_ps)
    merged.load_state(load_checkpoint(args.checkpoint))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate_model(merged, cfg.separator, cfg.variant,
                            {"dev": corpus["dev"], "eval": corpus["eval"]},
                            checkpoint=args.checkpoint)
    (out / "report.json").write_text(report.to_json())
    report.write_csv(out / "report.csv")
    for split, rep in report.splits.items():
        agg = rep.aggregates()
        _log(f"{split}: FER {agg['frame_error_rate']:.4f} "
             f"TER {agg['token_error_rate']:.4f} "
             f"mean SDR gain {agg['mean_sdr_improvement_db']:.2f} dB")
    _log(f"report written to {out / 'report.json'}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradient_suite(args.seed)
    worst = max(results.values())
    for name, err in results.items():
        print(f"{name}: {err:.3e}")
    print(f"worst: {worst:.3e} (tolerance {TOLERANCE:.0e})")
    return 0 if worst <= TOLERANCE else 1


def _cmd_report(args) -> int:
    from .metrics import EvalReport

    rows = []
    for path in args.reports:
        report = EvalReport.from_json(Path(path).read_text())
        sep, mix, mas, comb = report.variant.split(",")
        dev = report.splits.get("dev")
        evl = report.splits.get("eval")
        rows.append({
            "sep": sep, "mix": mix, "mas": mas, "comb": comb,
            "params": report.n_params,
            "dev_FER": dev.aggregates()["frame_error_rate"] if dev else "",
            "dev_TER": dev.aggregates()["token_error_rate"] if dev else "",
            "eval_FER": evl.aggregates()["frame_error_rate"] if evl else "",
            "eval_TER": evl.aggregates()["token_error_rate"] if evl else "",
        })
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["sep", "mix", "mas", "comb", "params",
                                     "dev_FER", "dev_TER", "eval_FER",
                                     "eval_TER"])
        writer.writeheader()
        writer.writerows(rows)
    _log(f"comparison table written to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "train-sep":
            return _run_phases(args, ["sep_pretrain"])
        if args.command == "train-am":
            return _run_phases(args, ["am_train"], "sep_checkpoint")
        if args.command == "train-joint":
            return _run_phases(args, ["joint"], "am_checkpoint")
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "report":
            return _cmd_report(args)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        _log(f"error: {exc}")
        return 1
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
