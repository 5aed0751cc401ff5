"""Synthetic labeled-mixture corpus.

Sources are tone bursts on a per-speaker frequency band, so frame labels
are exact by construction: bursts and gaps are laid out in whole STFT hops
and frame t is centered on sample t*hop.  Each mixture convolves two
utterances with exponentially decaying noise RIRs sharing one T60, pads the
shorter to the longer, and adds Gaussian noise at an exact SNR relative to
the summed reverberant speech.

Mixtures satisfy the construction identity mixture = ref0 + ref1 + noise
up to float rounding; anything written to disk additionally passes through
16-bit quantization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .dsp import StftConfig, Waveform, read_wav, write_wav
from .errors import ConfigError

SILENCE = 0

_LOW_BAND = (250.0, 1650.0)
_HIGH_BAND = (1950.0, 3650.0)


@dataclass(frozen=True)
class CorpusConfig:
    num_speakers_pool: int = 2
    alphabet_size: int = 12  # silence + 11 tokens
    burst_frames: int = 6
    gap_frames: tuple[int, int] = (2, 5)
    utt_len_range_s: tuple[float, float] = (0.8, 1.4)
    t60_range_s: tuple[float, float] = (0.2, 0.5)
    snr_db: float = 25.0
    snr_jitter_db: float = 0.0
    sample_rate: int = 8000
    amplitude: float = 0.22
    rir_pool_size: int = 32
    seed: int = 0
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.alphabet_size < 3:
            raise ConfigError("alphabet_size must be at least 3")
        if self.t60_range_s[0] <= 0 or self.t60_range_s[1] < self.t60_range_s[0]:
            raise ConfigError("t60 range must be positive and ordered")
        if self.num_speakers_pool < 2:
            raise ConfigError("need at least two speakers to form mixtures")
        if self.stft.sample_rate != self.sample_rate:
            raise ConfigError("corpus and STFT sample rates disagree")


@dataclass
class SourceUtterance:
    waveform: Waveform
    tokens: list[int]
    frame_labels: np.ndarray
    speaker_id: int


@dataclass
class MixtureExample:
    mixture: Waveform
    references: tuple[Waveform, Waveform]
    frame_labels: tuple[np.ndarray, np.ndarray]
    noise: np.ndarray
    meta: dict


def speaker_band(cfg: CorpusConfig, speaker_id: int) -> tuple[float, float]:
    """Frequency band a speaker's tokens live in; even ids low, odd ids high."""
    return _LOW_BAND if speaker_id % 2 == 0 else _HIGH_BAND


def token_frequency(cfg: CorpusConfig, speaker_id: int, token: int) -> float:
    lo, hi = speaker_band(cfg, speaker_id)
    n_tokens = cfg.alphabet_size - 1
    return lo + (token - 0.5) * (hi - lo) / n_tokens


def render_utterance(cfg: CorpusConfig, speaker_id: int,
                     rng: np.random.Generator) -> SourceUtterance:
    """Random token sequence rendered as ramped tone bursts.

    Layout is in whole hops, so the frame-label sequence is exact: frame t
    carries token k iff sample t*hop falls inside token k's burst.
    """
    hop = cfg.stft.hop
    fs = cfg.sample_rate
    target_s = rng.uniform(*cfg.utt_len_range_s)
    total_frames = max(cfg.stft.fft_size // hop + 1, int(round(target_s * fs / hop)))

    segments: list[tuple[int, int]] = []  # (label, n_frames)
    tokens: list[int] = []
    remaining = total_frames
    while True:
        gap = int(rng.integers(cfg.gap_frames[0], cfg.gap_frames[1] + 1))
        if remaining < gap + cfg.burst_frames + cfg.gap_frames[0]:
            break
        tok = int(rng.integers(1, cfg.alphabet_size))
        segments.append((SILENCE, gap))
        segments.append((tok, cfg.burst_frames))
        tokens.append(tok)
        remaining -= gap + cfg.burst_frames
    segments.append((SILENCE, remaining))

    n_samples = total_frames * hop
    x = np.zeros(n_samples)
    labels = np.zeros(cfg.stft.frame_count(n_samples), dtype=np.int64)
    ramp = hop // 2
    pos = 0
    for label, n_frames in segments:
        seg_len = n_frames * hop
        if label != SILENCE:
            t = np.arange(seg_len) / fs
            phase = rng.uniform(0.0, 2.0 * np.pi)
            burst = cfg.amplitude * np.sin(
                2.0 * np.pi * token_frequency(cfg, speaker_id, label) * t + phase)
            env = np.ones(seg_len)
            r = np.arange(ramp)
            env[:ramp] = 0.5 * (1.0 - np.cos(np.pi * r / ramp))
            env[-ramp:] = env[:ramp][::-1]
            x[pos:pos + seg_len] = burst * env
            f0 = pos // hop
            labels[f0:f0 + n_frames] = label
        pos += seg_len
    return SourceUtterance(Waveform(x, fs), tokens, labels, speaker_id)


def synth_rir(t60: float, rng: np.random.Generator,
              sample_rate: int = 8000) -> np.ndarray:
    """Exponentially decaying noise tail behind a unit direct path.

    The amplitude envelope exp(-6.9078 t / t60) is -60 dB at t60 and the
    tail is truncated at -80 dB.  Tail energy is normalized to the direct
    path's (0 dB direct-to-reverb ratio).
    """
    if t60 <= 0:
        raise ConfigError("t60 must be positive")
    n = int(np.ceil(t60 * sample_rate * 80.0 / 60.0))
    t = np.arange(n) / sample_rate
    env = np.exp(-6.9078 * t / t60)
    rir = rng.standard_normal(n) * env
    tail_energy = float(np.sum(rir[1:] ** 2))
    if tail_energy > 0:
        rir[1:] /= np.sqrt(tail_energy)
    rir[0] = 1.0
    return rir


def rir_envelope(t60: float, t: np.ndarray) -> np.ndarray:
    """Decay envelope used by synth_rir, exposed for verification."""
    return np.exp(-6.9078 * np.asarray(t, dtype=float) / t60)


def mix(utts: tuple[SourceUtterance, SourceUtterance], t60: float,
        snr_db: float, rng: np.random.Generator, cfg: CorpusConfig,
        rirs: tuple[np.ndarray, np.ndarray] | None = None,
        seed: int = 0) -> MixtureExample:
    """Reverberate, pad, and mix two utterances at an exact SNR."""
    if rirs is None:
        rirs = (synth_rir(t60, rng, cfg.sample_rate),
                synth_rir(t60, rng, cfg.sample_rate))
    refs = [np.convolve(u.waveform.samples, r) for u, r in zip(utts, rirs)]
    length = max(len(r) for r in refs)
    refs = [np.pad(r, (0, length - len(r))) for r in refs]

    if np.isinf(snr_db):
        noise = np.zeros(length)
    else:
        snr_eff = snr_db
        if cfg.snr_jitter_db > 0:
            snr_eff += rng.uniform(-cfg.snr_jitter_db, cfg.snr_jitter_db)
        speech = refs[0] + refs[1]
        noise = rng.standard_normal(length)
        target = float(np.sum(speech ** 2)) * 10.0 ** (-snr_eff / 10.0)
        noise *= np.sqrt(target / float(np.sum(noise ** 2)))

    peak = max(np.max(np.abs(refs[0] + refs[1] + noise)),
               np.max(np.abs(refs[0])), np.max(np.abs(refs[1])))
    if peak > 0.95:
        c = 0.95 / peak
        refs = [r * c for r in refs]
        noise = noise * c
    mixture = refs[0] + refs[1] + noise

    n_frames = cfg.stft.frame_count(length)
    labels = tuple(
        np.pad(u.frame_labels, (0, n_frames - len(u.frame_labels)),
               constant_values=SILENCE)
        for u in utts)
    meta = {"snr_db": float(snr_db), "t60_s": float(t60), "seed": int(seed)}
    return MixtureExample(
        mixture=Waveform(mixture, cfg.sample_rate),
        references=(Waveform(refs[0], cfg.sample_rate),
                    Waveform(refs[1], cfg.sample_rate)),
        frame_labels=labels,
        noise=noise,
        meta=meta,
    )


class CorpusSampler:
    """Deterministic example factory: example i depends only on (seed, i)."""

    def __init__(self, cfg: CorpusConfig, seed: int | None = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        pool_rng = np.random.default_rng([self.seed, 0])
        self.rir_pool = []
        for _ in range(cfg.rir_pool_size):
            t60 = pool_rng.uniform(*cfg.t60_range_s)
            pair = (synth_rir(t60, pool_rng, cfg.sample_rate),
                    synth_rir(t60, pool_rng, cfg.sample_rate))
            self.rir_pool.append((t60, pair))

    def example(self, index: int) -> MixtureExample:
        rng = np.random.default_rng([self.seed, 1, index])
        speakers = rng.choice(self.cfg.num_speakers_pool, size=2, replace=False)
        utts = (render_utterance(self.cfg, int(speakers[0]), rng),
                render_utterance(self.cfg, int(speakers[1]), rng))
        t60, rirs = self.rir_pool[int(rng.integers(len(self.rir_pool)))]
        ex = mix(utts, t60, self.cfg.snr_db, rng, self.cfg, rirs=rirs, seed=index)
        ex.meta["speakers"] = (int(speakers[0]), int(speakers[1]))
        return ex


def dynamic_mixing_stream(cfg: CorpusConfig, seed: int | None = None,
                          start_index: int = 0) -> Iterator[MixtureExample]:
    """Endless stream of fresh mixtures, deterministic given the seed."""
    sampler = CorpusSampler(cfg, seed)
    i = start_index
    while True:
        yield sampler.example(i)
        i += 1


# --------------------------------------------------------------------------
# on-disk corpus


def write_corpus(out_dir, n_train: int, n_dev: int, n_eval: int,
                 cfg: CorpusConfig) -> dict[str, list[str]]:
    """Write WAV + label + meta files per example and a split manifest.

    Example indices are disjoint across splits, so no two examples in the
    corpus share a generation seed.
    """
    out = Path(out_dir)
    sampler = CorpusSampler(cfg)
    counts = {"train": n_train, "dev": n_dev, "eval": n_eval}
    manifest: dict[str, list[str]] = {}
    base = 0
    for split, n in counts.items():
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        ids = []
        for k in range(n):
            index = base + k
            ex = sampler.example(index)
            ex_id = f"ex{index:06d}"
            write_wav(split_dir / f"{ex_id}_mix.wav", ex.mixture)
            write_wav(split_dir / f"{ex_id}_ref0.wav", ex.references[0])
            write_wav(split_dir / f"{ex_id}_ref1.wav", ex.references[1])
            with open(split_dir / f"{ex_id}.labels", "w") as fh:
                for labels in ex.frame_labels:
                    fh.write(" ".join(str(int(v)) for v in labels) + "\n")
            with open(split_dir / f"{ex_id}.meta", "w") as fh:
                fh.write(f"snr_db={ex.meta['snr_db']!r}\n")
                fh.write(f"t60_s={ex.meta['t60_s']!r}\n")
                fh.write(f"seed={ex.meta['seed']}\n")
            ids.append(ex_id)
        manifest[split] = ids
        base += n
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def read_corpus(corpus_dir) -> dict[str, list[MixtureExample]]:
    """Inverse of :func:`write_corpus` (waveforms carry 16-bit quantization)."""
    root = Path(corpus_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path}: corpus manifest not found")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    corpus: dict[str, list[MixtureExample]] = {}
    for split, ids in manifest.items():
        examples = []
        for ex_id in ids:
            d = root / split
            mixture = read_wav(d / f"{ex_id}_mix.wav")
            refs = (read_wav(d / f"{ex_id}_ref0.wav"),
                    read_wav(d / f"{ex_id}_ref1.wav"))
            with open(d / f"{ex_id}.labels") as fh:
                lines = fh.read().splitlines()
            labels = tuple(np.array([int(v) for v in line.split()], dtype=np.int64)
                           for line in lines[:2])
            meta = {}
            with open(d / f"{ex_id}.meta") as fh:
                for line in fh.read().splitlines():
                    key, val = line.split("=", 1)
                    meta[key] = int(val) if key == "seed" else float(val)
            noise = mixture.samples - refs[0].samples - refs[1].samples
            examples.append(MixtureExample(mixture, refs, labels, noise, meta))
        corpus[split] = examples
    return corpus


def toy_disjoint_band_config(seed: int = 0, **overrides) -> CorpusConfig:
    """Two-speaker corpus with one speaker per band; separable by masking."""
    return replace(CorpusConfig(num_speakers_pool=2, seed=seed), **overrides)
