"""Scoring: frame/token error rates under the oracle speaker permutation,
SDR improvement, and the evaluation report container.

Token sequences come from collapsing frame-label runs and dropping silence;
the token error rate is plain Levenshtein distance over collapsed tokens
divided by the reference length.  Two-speaker scores always take the
permutation that minimizes the combined, length-weighted error.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .am import VariantSpec, am_forward, greedy_decode
from .dsp import features, sdr
from .mixsim import SILENCE, MixtureExample
from .nn import ParamSet
from .separator import SeparatorConfig, pit_loss, separate


def collapse_tokens(frame_labels) -> list[int]:
    """Merge consecutive identical labels, then drop silence."""
    tokens = []
    prev = None
    for v in np.asarray(frame_labels, dtype=np.int64):
        if v != prev:
            if v != SILENCE:
                tokens.append(int(v))
            prev = v
    return tokens


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    """Edit distance with unit substitution/deletion/insertion costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def token_error_rate(hyp: Sequence[int], ref: Sequence[int]) -> float:
    return levenshtein(hyp, ref) / max(1, len(ref))


def _token_counts(hyp, ref) -> tuple[int, int]:
    return levenshtein(hyp, ref), len(ref)


def _frame_counts(hyp, ref) -> tuple[int, int]:
    hyp = np.asarray(hyp)
    ref = np.asarray(ref)
    if hyp.shape != ref.shape:
        raise ValueError("frame sequences must have equal length")
    return int(np.sum(hyp != ref)), len(ref)


METRICS: dict[str, Callable] = {"token": _token_counts, "frame": _frame_counts}


def oracle_permutation_score(hyp: tuple, ref: tuple,
                             metric: str | Callable = "token"
                             ) -> tuple[float, tuple[int, int]]:
    """Best-permutation combined error rate for two speakers.

    The combined rate pools error and reference counts across speakers
    (length-weighted); ties resolve to the identity permutation.
    """
    count = METRICS[metric] if isinstance(metric, str) else metric

    def rate(perm):
        err = tot = 0
        for s in range(2):
            e, t = count(hyp[s], ref[perm[s]])
            err += e
            tot += t
        return err / max(1, tot)

    r_id, r_sw = rate((0, 1)), rate((1, 0))
    if r_sw < r_id:
        return r_sw, (1, 0)
    return r_id, (0, 1)


def sdr_improvement(example: MixtureExample, result) -> tuple[float, float]:
    """Per-speaker SDR gain of the PIT-best estimate over the raw mixture."""
    _, perm = pit_loss(result.est_waveforms, example.references)
    gains = []
    for s in range(2):
        est = result.est_waveforms[perm.index(s)]
        gains.append(sdr(example.references[s], est)
                     - sdr(example.references[s], example.mixture))
    return tuple(gains)


# --------------------------------------------------------------------------
# evaluation report


@dataclass
class SplitReport:
    records: list[dict] = field(default_factory=list)

    def aggregates(self) -> dict:
        if not self.records:
            return {"frame_error_rate": 0.0, "token_error_rate": 0.0,
                    "mean_sdr_improvement_db": 0.0, "n_examples": 0}
        fe = sum(r["frame_errors"] for r in self.records)
        ft = sum(r["frame_total"] for r in self.records)
        te = sum(r["token_errors"] for r in self.records)
        tt = sum(r["token_total"] for r in self.records)
        gains = [g for r in self.records for g in r["sdr_improvement_db"]]
        return {"frame_error_rate": fe / max(1, ft),
                "token_error_rate": te / max(1, tt),
                "mean_sdr_improvement_db": float(np.mean(gains)),
                "n_examples": len(self.records)}


@dataclass
class EvalReport:
    variant: str
    checkpoint: str
    n_params: int
    splits: dict[str, SplitReport] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {"variant": self.variant, "checkpoint": self.checkpoint,
                   "n_params": self.n_params,
                   "splits": {name: {"aggregates": rep.aggregates(),
                                     "records": rep.records}
                              for name, rep in self.splits.items()}}
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        report = cls(payload["variant"], payload["checkpoint"],
                     payload["n_params"])
        for name, body in payload["splits"].items():
            report.splits[name] = SplitReport(records=body["records"])
        return report

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["split", "example", "frame_errors", "frame_total",
                             "token_errors", "token_total",
                             "sdr_improvement_db_0", "sdr_improvement_db_1"])
            for name, rep in self.splits.items():
                for r in rep.records:
                    writer.writerow([name, r["index"], r["frame_errors"],
                                     r["frame_total"], r["token_errors"],
                                     r["token_total"],
                                     r["sdr_improvement_db"][0],
                                     r["sdr_improvement_db"][1]])


def evaluate_split(params: ParamSet, sep_cfg: SeparatorConfig,
                   variant: VariantSpec,
                   examples: Sequence[MixtureExample]) -> SplitReport:
    """Separate, decode both heads greedily, and score per example."""
    report = SplitReport()
    for index, ex in enumerate(examples):
        result = separate(params, sep_cfg, ex.mixture)
        feats_mix = features(ex.mixture, sep_cfg.stft)
        feats_sep = tuple(features(w, sep_cfg.stft) for w in result.est_waveforms)
        out = am_forward(params, variant, feats_mix, feats_sep)
        hyp_frames = greedy_decode(out)
        hyp_tokens = tuple(collapse_tokens(h) for h in hyp_frames)
        ref_tokens = tuple(collapse_tokens(r) for r in ex.frame_labels)

        _, fperm = oracle_permutation_score(hyp_frames, ex.frame_labels, "frame")
        frame_errors = frame_total = 0
        for s in range(2):
            e, t = _frame_counts(hyp_frames[s], ex.frame_labels[fperm[s]])
            frame_errors += e
            frame_total += t
        _, tperm = oracle_permutation_score(hyp_tokens, ref_tokens, "token")
        token_errors = token_total = 0
        for s in range(2):
            e, t = _token_counts(hyp_tokens[s], ref_tokens[tperm[s]])
            token_errors += e
            token_total += t
        gains = sdr_improvement(ex, result)
        report.records.append({
            "index": index,
            "frame_errors": frame_errors, "frame_total": frame_total,
            "token_errors": token_errors, "token_total": token_total,
            "sdr_improvement_db": list(gains),
        })
    return report


def evaluate_model(params: ParamSet, sep_cfg: SeparatorConfig,
                   variant: VariantSpec,
                   corpus: dict[str, Sequence[MixtureExample]],
                   checkpoint: str = "") -> EvalReport:
    report = EvalReport(variant=variant.serialize(), checkpoint=str(checkpoint),
                        n_params=params.total_count())
    for split, examples in corpus.items():
        report.splits[split] = evaluate_split(params, sep_cfg, variant, examples)
    return report
