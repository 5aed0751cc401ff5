"""STFT analysis/synthesis, filterbank features, and signal-level losses.

Framing convention: the signal is zero-padded by fft_size/2 on the left and
fft_size/2 plus up-to-one-hop alignment on the right, so frame t is centered
on sample t*hop and the last frame is complete.  With the sqrt-Hann
analysis/synthesis window pair this makes the istft(stft(x)) round trip
exact to float rounding on every sample, edges included.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, LengthError, ShapeError, ZeroReferenceError)
from .tensor import (Tensor, active_tape, add, as_tensor, log, matmul, mul,
                     scale, sub, sum_all)

_LOG10 = float(np.log(10.0))
SDR_CAP_DB = 100.0
FEATURE_FLOOR = 1e-10


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 256
    hop: int = 128
    sample_rate: int = 8000

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size % 2 != 0:
            raise ConfigError("fft_size must be positive and even")
        if self.hop <= 0 or self.fft_size % self.hop != 0:
            raise ConfigError("hop must be positive and divide fft_size")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        """sqrt-Hann; used for both analysis and synthesis."""
        n = np.arange(self.fft_size)
        return np.sqrt(0.5 * (1.0 - np.cos(2.0 * np.pi * n / self.fft_size)))

    def frame_count(self, n_samples: int) -> int:
        return 1 + -(-n_samples // self.hop)  # 1 + ceil(n/hop)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 8000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class Spectrogram:
    values: np.ndarray  # complex128, frames x bins
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or self.values.shape[1] != self.config.bins:
            raise ShapeError(f"spectrogram shape {self.values.shape} does not "
                             f"match {self.config.bins} bins")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


def _pad_amounts(n: int, cfg: StftConfig) -> tuple[int, int]:
    half = cfg.fft_size // 2
    align = (-n) % cfg.hop
    return half, half + align


def _frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    left, right = _pad_amounts(len(x), cfg)
    padded = np.concatenate([np.zeros(left), x, np.zeros(right)])
    n_frames = 1 + (len(padded) - cfg.fft_size) // cfg.hop
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    return padded[idx]


def stft(w: Waveform, cfg: StftConfig | None = None) -> Spectrogram:
    """Windowed DFT analysis; frames x bins complex output."""
    cfg = cfg or StftConfig()
    x = w.samples
    if len(x) < cfg.fft_size:
        raise LengthError(f"signal length {len(x)} < fft_size {cfg.fft_size}")
    frames = _frame_signal(x, cfg) * cfg.window()
    return Spectrogram(np.fft.rfft(frames, axis=1), cfg)


def _ola_norm(n_frames: int, cfg: StftConfig) -> np.ndarray:
    """Overlap-added product of analysis and synthesis windows."""
    win2 = cfg.window() ** 2
    out_len = (n_frames - 1) * cfg.hop + cfg.fft_size
    norm = np.zeros(out_len)
    for t in range(n_frames):
        norm[t * cfg.hop:t * cfg.hop + cfg.fft_size] += win2
    return np.maximum(norm, 1e-12)


def istft(s: Spectrogram, cfg: StftConfig | None = None,
          out_len: int | None = None) -> Waveform:
    """Overlap-add synthesis, inverse of :func:`stft` for a matching config."""
    cfg = cfg or StftConfig()
    if s.config != cfg:
        raise ConfigError("spectrogram was produced with a different STFT config")
    if out_len is None:
        out_len = (s.frames - 1) * cfg.hop
    y = _istft_array(s.values, cfg, out_len)
    return Waveform(y, cfg.sample_rate)


def _istft_array(values: np.ndarray, cfg: StftConfig, out_len: int) -> np.ndarray:
    frames_td = np.fft.irfft(values, cfg.fft_size, axis=1) * cfg.window()
    n_frames = values.shape[0]
    buf = np.zeros((n_frames - 1) * cfg.hop + cfg.fft_size)
    for t in range(n_frames):
        buf[t * cfg.hop:t * cfg.hop + cfg.fft_size] += frames_td[t]
    buf /= _ola_norm(n_frames, cfg)
    left = cfg.fft_size // 2
    if left + out_len > len(buf):
        raise LengthError(f"out_len {out_len} exceeds synthesizable range")
    return buf[left:left + out_len]


# --------------------------------------------------------------------------
# differentiable STFT / iSTFT (adjoint backward via rfft identities)


def stft_tensor(x: Tensor, cfg: StftConfig) -> tuple[Tensor, Tensor]:
    """Real/imaginary spectrogram parts of a waveform tensor, on the tape."""
    n = x.data.shape[0]
    if x.data.ndim != 1 or n < cfg.fft_size:
        raise LengthError("stft_tensor: 1-D input of at least fft_size samples")
    win = cfg.window()
    frames = _frame_signal(x.data, cfg) * win
    spec = np.fft.rfft(frames, axis=1)
    re, im = Tensor(spec.real.copy()), Tensor(spec.imag.copy())

    tape = active_tape()
    if tape is not None and x.requires_grad:
        hop, fft = cfg.hop, cfg.fft_size
        left, _ = _pad_amounts(n, cfg)
        n_frames = spec.shape[0]

        def scatter(G: np.ndarray) -> np.ndarray:
            # adjoint of window-and-rfft framing; re/im parts are independent
            G = np.array(G, dtype=np.complex128)
            G[:, 1:fft // 2] *= 0.5
            adj = fft * np.fft.irfft(G, fft, axis=1) * win
            dx_full = np.zeros((n_frames - 1) * hop + fft)
            for t in range(n_frames):
                dx_full[t * hop:t * hop + fft] += adj[t]
            return dx_full[left:left + n]

        def bwd_re(g, acc):
            acc.add(x, scatter(g))

        def bwd_im(g, acc):
            acc.add(x, scatter(1j * g))

        tape.record(re, bwd_re)
        tape.record(im, bwd_im)
    return re, im


def istft_tensor(re: Tensor, im: Tensor, cfg: StftConfig, out_len: int) -> Tensor:
    """Waveform tensor from real/imaginary spectrogram parts, on the tape."""
    if re.data.shape != im.data.shape or re.data.ndim != 2:
        raise ShapeError("istft_tensor: re/im must be equal-shape 2-D")
    values = re.data + 1j * im.data
    y = _istft_array(values, cfg, out_len)
    out = Tensor(y)

    tape = active_tape()
    if tape is not None and (re.requires_grad or im.requires_grad):
        hop, fft = cfg.hop, cfg.fft_size
        n_frames = re.data.shape[0]
        win = cfg.window()
        norm = _ola_norm(n_frames, cfg)
        left = fft // 2

        def bwd(g, acc):
            g_full = np.zeros(len(norm))
            g_full[left:left + out_len] = g
            g_full /= norm
            idx = np.arange(fft)[None, :] + hop * np.arange(n_frames)[:, None]
            h = g_full[idx] * win
            D = np.fft.rfft(h, axis=1) / fft
            D[:, 1:fft // 2] *= 2.0
            d_im = D.imag
            d_im[:, 0] = 0.0
            d_im[:, -1] = 0.0
            acc.add(re, D.real)
            acc.add(im, d_im)

        tape.record(out, bwd)
    return out


# --------------------------------------------------------------------------
# features


def mel_filterbank(cfg: StftConfig, n_bands: int = 40) -> np.ndarray:
    """Triangular auditory-scale filters as a bins x n_bands matrix."""
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    nyquist = cfg.sample_rate / 2.0
    pts = from_mel(np.linspace(to_mel(0.0), to_mel(nyquist), n_bands + 2))
    freqs = np.arange(cfg.bins) * cfg.sample_rate / cfg.fft_size
    fb = np.zeros((cfg.bins, n_bands))
    for j in range(n_bands):
        lo, mid, hi = pts[j], pts[j + 1], pts[j + 2]
        rise = (freqs - lo) / max(mid - lo, 1e-9)
        fall = (hi - freqs) / max(hi - mid, 1e-9)
        fb[:, j] = np.clip(np.minimum(rise, fall), 0.0, 1.0)
        if fb[:, j].sum() == 0.0:  # band narrower than a bin: take nearest bin
            fb[int(round(mid / (cfg.sample_rate / cfg.fft_size))), j] = 1.0
    return fb


def features(w: Waveform, cfg: StftConfig | None = None,
             n_bands: int = 40) -> np.ndarray:
    """Log filterbank energies, frames x n_bands."""
    cfg = cfg or StftConfig()
    power = np.abs(stft(w, cfg).values) ** 2
    return np.log(FEATURE_FLOOR + power @ mel_filterbank(cfg, n_bands))


def features_tensor(wave: Tensor, cfg: StftConfig, n_bands: int = 40) -> Tensor:
    """Differentiable version of :func:`features` for joint training."""
    re, im = stft_tensor(wave, cfg)
    power = add(mul(re, re), mul(im, im))
    energy = matmul(power, Tensor(mel_filterbank(cfg, n_bands)))
    return log(add(energy, Tensor(np.full(energy.data.shape, FEATURE_FLOOR))))


# --------------------------------------------------------------------------
# signal losses and metrics


def sdr(ref: Waveform, est: Waveform) -> float:
    """Signal-to-distortion ratio in dB, capped at +100."""
    r, e = ref.samples, est.samples
    if len(r) != len(e):
        raise LengthError(f"sdr: lengths differ ({len(r)} vs {len(e)})")
    num = float(np.sum(r * r))
    if num == 0.0:
        raise ZeroReferenceError("sdr: reference signal is all zero")
    den = float(np.sum((r - e) ** 2))
    if den == 0.0:
        return SDR_CAP_DB
    return min(SDR_CAP_DB, 10.0 * np.log10(num / den))


def soft_bounded_sdr_loss(ref, est, bound_db: float = 30.0) -> Tensor:
    """Negative SDR with a soft upper bound.

    The error power is floored by tau * ||ref||^2 with tau = 10^(-bound/10),
    so the loss lives in (-bound_db, inf) and attains -bound_db only at
    est == ref.  Differentiable in ``est`` when it is a graph tensor.
    """
    ref_arr = ref.samples if isinstance(ref, Waveform) else np.asarray(ref, float)
    est_t = est if isinstance(est, Tensor) else Tensor(
        est.samples if isinstance(est, Waveform) else est)
    if ref_arr.shape != est_t.data.shape:
        raise LengthError("soft_bounded_sdr_loss: length mismatch")
    e_ref = float(np.sum(ref_arr * ref_arr))
    if e_ref == 0.0:
        raise ZeroReferenceError("soft_bounded_sdr_loss: reference is all zero")
    tau = 10.0 ** (-bound_db / 10.0)
    d = sub(est_t, as_tensor(ref_arr))
    denom = add(sum_all(mul(d, d)), as_tensor(tau * e_ref))
    return scale(sub(log(denom), as_tensor(np.log(e_ref))), 10.0 / _LOG10)


def magnitude_mse(a: Spectrogram, b: Spectrogram) -> float:
    """Mean squared difference of STFT magnitudes."""
    if a.values.shape != b.values.shape:
        raise ShapeError(f"magnitude_mse: {a.values.shape} vs {b.values.shape}")
    d = np.abs(a.values) - np.abs(b.values)
    return float(np.mean(d * d))


# --------------------------------------------------------------------------
# WAV I/O: mono 16-bit PCM


def write_wav(path, w: Waveform) -> None:
    q = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(q.tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ConfigError(f"{path}: expected mono 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    return Waveform(np.frombuffer(raw, dtype="<i2") / 32768.0, rate)
