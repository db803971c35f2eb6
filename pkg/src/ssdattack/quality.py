"""Stealthiness metrics: L-inf distance, SNR and a mel-NSIM similarity score.

The similarity score (``vqs``) is an approximation of ViSQOL's 1-5 scale, fixed
as follows so independent implementations agree:

* samples are scaled to 16-bit code units (``x * 32768``) first, so the
  log compression below sees the same magnitudes as the exported WAV data;
* STFT: periodic Hann window of 512 samples, hop 256, no padding
  (``1 + (T - 512) // 256`` frames), power spectrum ``|X|**2``;
* 64 triangular mel filters (HTK mel scale ``2595 log10(1 + f / 700)``),
  edges equally spaced in mel between 50 and 8000 Hz, unit peak height;
* log compression ``log(1 + S)``; both spectrograms divided by their joint max;
* local statistics under a 3x3 Gaussian window (sigma 0.5, normalized),
  valid region only;
* per cell ``l = (2 mu_r mu_d + c1) / (mu_r^2 + mu_d^2 + c1)`` and
  ``s = (cov + c3) / (sqrt(var_r var_d) + c3)`` with ``c1 = 0.01**2``,
  ``c3 = 0.03**2 / 2``; the cell score ``l * s`` is clamped to [0, 1];
* ``nsim`` is the mean cell score and ``vqs = 1 + 4 * nsim``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import convolve2d

from .audio_io import SCALE, Waveform

N_FFT = 512
HOP = 256
N_MELS = 64
F_MIN = 50.0
F_MAX = 8000.0
C1 = 0.01**2
C2 = 0.03**2
SNR_CAP_DB = 200.0


class QualityError(ValueError):
    pass


@dataclass(frozen=True)
class QualityReport:
    linf: float
    snr_db: float
    nsim: float
    vqs: float

    def to_dict(self) -> dict:
        return {"linf": self.linf, "snr_db": self.snr_db, "nsim": self.nsim, "vqs": self.vqs}


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x = a.samples if isinstance(a, Waveform) else np.asarray(a, dtype=np.float64)
    y = b.samples if isinstance(b, Waveform) else np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise QualityError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def linf_dist(a, b) -> float:
    x, y = _pair(a, b)
    return float(np.abs(x - y).max())


def snr_db(reference, degraded) -> float:
    x, y = _pair(reference, degraded)
    signal = float(np.sum(x * x))
    if signal == 0.0:
        raise QualityError("reference signal is all zeros")
    noise = float(np.sum((x - y) ** 2))
    if noise == 0.0:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * np.log10(signal / noise))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int = N_FFT, n_mels: int = N_MELS,
                   f_min: float = F_MIN, f_max: float = F_MAX) -> np.ndarray:
    f_max = min(f_max, sample_rate / 2.0)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(f_min), _hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def log_mel(x: np.ndarray, sample_rate: int) -> np.ndarray:
    """(n_mels, frames) log-compressed mel power spectrogram."""
    if x.size < N_FFT:
        raise QualityError(f"clip of {x.size} samples is shorter than one {N_FFT}-sample window")
    n_frames = 1 + (x.size - N_FFT) // HOP
    idx = np.arange(N_FFT)[None, :] + HOP * np.arange(n_frames)[:, None]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(N_FFT) / N_FFT)
    power = np.abs(np.fft.rfft(SCALE * x[idx] * window, axis=1)) ** 2
    return np.log1p(mel_filterbank(sample_rate) @ power.T)


def _gaussian_window() -> np.ndarray:
    g = np.exp(-(np.arange(-1, 2) ** 2) / (2 * 0.5**2))
    w = np.outer(g, g)
    return w / w.sum()


def nsim(ref_spec: np.ndarray, deg_spec: np.ndarray) -> float:
    peak = max(ref_spec.max(), deg_spec.max())
    if peak <= 0:
        return 1.0
    r, d = ref_spec / peak, deg_spec / peak
    w = _gaussian_window()

    def local(a):
        return convolve2d(a, w, mode="valid")

    mu_r, mu_d = local(r), local(d)
    var_r = np.maximum(local(r * r) - mu_r * mu_r, 0.0)
    var_d = np.maximum(local(d * d) - mu_d * mu_d, 0.0)
    cov = local(r * d) - mu_r * mu_d
    c3 = C2 / 2.0
    lum = (2.0 * mu_r * mu_d + C1) / (mu_r * mu_r + mu_d * mu_d + C1)
    struct = (cov + c3) / (np.sqrt(var_r * var_d) + c3)
    return float(np.clip(lum * struct, 0.0, 1.0).mean())


def vqs_score(reference, degraded) -> QualityReport:
    if isinstance(reference, Waveform) and isinstance(degraded, Waveform):
        if reference.sample_rate != degraded.sample_rate:
            raise QualityError("sample rates differ")
        sample_rate = reference.sample_rate
    else:
        sample_rate = getattr(reference, "sample_rate", None) or getattr(degraded, "sample_rate", 16000)
    x, y = _pair(reference, degraded)
    if np.array_equal(x, y):
        # identical inputs: skip floating-point noise in the local statistics
        sim = 1.0
    else:
        sim = nsim(log_mel(x, sample_rate), log_mel(y, sample_rate))
    return QualityReport(linf_dist(x, y), snr_db(x, y) if np.any(x) else float("nan"), sim, 1.0 + 4.0 * sim)
