"""Seeded toy corpus of "real" and "fake" speech-like clips.

Every random quantity is drawn from :class:`ssdattack.prng.SplitMix64`, so a
clip is a pure function of its :class:`ClipSpec` and the sample rate.

Real pipeline
    1. pitch contour: ``f0 * (1 + 0.03 sin(2 pi v t + phi) + jitter)`` where the
       jitter is a linearly interpolated random walk on 20 ms knots (std 0.004
       per knot, clipped to +-0.03) and ``v`` in [0.3, 0.8] Hz;
    2. harmonic stack ``sum_k a_k sin(k * phase + phi_k)`` for all harmonics
       below 7.6 kHz with ``a_k = k**-1 * exp(-k f0 / HARMONIC_ROLLOFF_HZ) * (0.8 + 0.4 u_k)``;
    3. syllable envelope ``0.15 + 0.85 * ((1 - cos(2 pi r t + phi)) / 2) ** 1.5``
       with rate ``r`` in [2.5, 5] Hz;
    4. peak-normalize the voiced part to 1, add pink noise (1/f power, rms
       ``NOISE_RMS``), peak-normalize to 0.9.

Fake pipeline: the same signal before the final normalization, then the
artifact profile, then peak-normalize to 0.9.

* ``SpectralNotch``: zero FFT bins inside a comb of bands (centres
  ``NOTCH_START_HZ + j * NOTCH_SPACING_HZ`` shifted by a per-clip offset in
  [-20, 20] Hz, width ``NOTCH_WIDTH_HZ``).
* ``PhaseJitter``: STFT (Hann 512, hop 128), uniform random phase in 40 % of
  frames, inverse STFT.
* ``Quantize``: peak-normalize to 1, ``round(x * 32) / 32`` (6 bits,
  at most 65 levels).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .audio_io import Waveform, write_wav
from .prng import GAMMA, MASK64, SplitMix64, mix64

SAMPLE_RATE = 16000
DURATION_S = 4.0
PEAK = 0.9

NOISE_RMS = 0.012
HARMONIC_ROLLOFF_HZ = 400.0
MAX_HARMONIC_HZ = 7600.0
NOTCH_START_HZ = 2000.0
NOTCH_SPACING_HZ = 250.0
NOTCH_WIDTH_HZ = 200.0
NOTCH_STOP_HZ = 7900.0
PHASE_JITTER_FRACTION = 0.4
QUANTIZE_BITS = 6

F0_RANGE = (80.0, 260.0)


class Label(str, enum.Enum):
    REAL = "Real"
    FAKE = "Fake"


class Artifact(str, enum.Enum):
    NONE = "None"
    SPECTRAL_NOTCH = "SpectralNotch"
    PHASE_JITTER = "PhaseJitter"
    QUANTIZE = "Quantize"


class Split(str, enum.Enum):
    TRAIN = "Train"
    EVAL = "Eval"
    REDTEAM = "Redteam"


IN_DOMAIN = (Artifact.SPECTRAL_NOTCH,)
OUT_OF_DOMAIN = (Artifact.PHASE_JITTER, Artifact.QUANTIZE)

_SPLIT_TAG = {Split.TRAIN: 1, Split.EVAL: 2, Split.REDTEAM: 3}


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class ClipSpec:
    label: Label
    seed: int
    duration_s: float
    f0: float
    artifact_profile: Artifact = Artifact.NONE

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "artifact_profile", Artifact(self.artifact_profile))
        if (self.label is Label.REAL) != (self.artifact_profile is Artifact.NONE):
            raise CorpusError(f"label {self.label.value} incompatible with artifact {self.artifact_profile.value}")
        if not 60.0 <= self.f0 <= 300.0:
            raise CorpusError(f"f0 {self.f0} outside [60, 300] Hz")
        if self.duration_s <= 0:
            raise CorpusError("duration_s must be positive")

    def to_dict(self) -> dict:
        return {
            "label": self.label.value,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "f0": self.f0,
            "artifact_profile": self.artifact_profile.value,
        }


@dataclass(frozen=True)
class Manifest:
    split: Split
    clip_specs: list[ClipSpec] = field(default_factory=list)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "split", Split(self.split))
        seeds = [c.seed for c in self.clip_specs]
        if len(set(seeds)) != len(seeds):
            raise CorpusError("clip seeds must be unique within a manifest")
        if self.split is Split.REDTEAM and any(c.label is Label.REAL for c in self.clip_specs):
            raise CorpusError("Redteam manifests hold only Fake clips")

    def __len__(self) -> int:
        return len(self.clip_specs)

    def labels(self) -> np.ndarray:
        """0 for Real, 1 for Fake (the detector class order)."""
        return np.array([0 if c.label is Label.REAL else 1 for c in self.clip_specs], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "split": self.split.value,
            "sample_rate": self.sample_rate,
            "clips": [c.to_dict() for c in self.clip_specs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        return cls(
            split=Split(d["split"]),
            clip_specs=[ClipSpec(**c) for c in d["clips"]],
            sample_rate=int(d["sample_rate"]),
        )

    @classmethod
    def load(cls, path) -> "Manifest":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


# -- manifest ----------------------------------------------------------------

def _split_stream_seed(master_seed: int, split: Split) -> int:
    return mix64((int(master_seed) & MASK64) ^ (_SPLIT_TAG[split] * GAMMA & MASK64))


def build_manifest(split, n_real: int, n_fake: int, master_seed: int,
                   profiles=None, sample_rate: int = SAMPLE_RATE) -> Manifest:
    """Draw clip specs for a split.

    Clip ``i`` (Real clips first, then Fake) takes, in order from the split
    stream: seed (u64), f0 (uniform in ``F0_RANGE``), and for Fake clips a
    profile index (uniform over ``profiles``).  ``profiles`` defaults to the
    in-domain profile for every split.
    """
    split = Split(split)
    if n_real < 0 or n_fake < 0:
        raise CorpusError("clip counts must be non-negative")
    if split is Split.REDTEAM and n_real > 0:
        raise CorpusError("Redteam split cannot contain Real clips")
    profiles = tuple(Artifact(p) for p in (profiles or IN_DOMAIN))
    if Artifact.NONE in profiles:
        raise CorpusError("Fake clips need an artifact profile")
    rng = SplitMix64(_split_stream_seed(master_seed, split))
    specs = []
    seen = set()
    for i in range(n_real + n_fake):
        seed = rng.next_u64()
        while seed in seen:
            seed = rng.next_u64()
        seen.add(seed)
        f0 = round(rng.uniform_range(*F0_RANGE), 6)
        if i < n_real:
            specs.append(ClipSpec(Label.REAL, seed, DURATION_S, f0))
        else:
            profile = profiles[rng.integers(len(profiles))]
            specs.append(ClipSpec(Label.FAKE, seed, DURATION_S, f0, profile))
    return Manifest(split, specs, sample_rate)


# -- synthesis ---------------------------------------------------------------

def _peak_normalize(x: np.ndarray, peak: float) -> np.ndarray:
    m = np.abs(x).max()
    return x * (peak / m) if m > 0 else x


def _pink_noise(rng: SplitMix64, n: int, sample_rate: int) -> np.ndarray:
    white = rng.normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shape = np.zeros_like(freqs)
    shape[1:] = 1.0 / np.sqrt(np.maximum(freqs[1:], 20.0))
    pink = np.fft.irfft(spec * shape, n)
    return pink * (NOISE_RMS / np.sqrt(np.mean(pink**2)))


def _voiced(spec: ClipSpec, rng: SplitMix64, n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    vib_rate = rng.uniform_range(0.3, 0.8)
    vib_phase = rng.uniform_range(0.0, 2 * np.pi)
    knot_step = int(0.02 * sample_rate)
    n_knots = n // knot_step + 2
    walk = np.clip(np.cumsum(rng.normal(n_knots) * 0.004), -0.03, 0.03)
    jitter = np.interp(np.arange(n), np.arange(n_knots) * knot_step, walk)
    freq = spec.f0 * (1.0 + 0.03 * np.sin(2 * np.pi * vib_rate * t + vib_phase) + jitter)
    phase = 2 * np.pi * np.cumsum(freq) / sample_rate
    f_max = freq.max()
    n_harm = max(1, int(MAX_HARMONIC_HZ // f_max))
    gains = rng.uniform_range(0.8, 1.2, n_harm)
    phis = rng.uniform_range(0.0, 2 * np.pi, n_harm)
    x = np.zeros(n)
    for k in range(1, n_harm + 1):
        a = k**-1.0 * np.exp(-k * spec.f0 / HARMONIC_ROLLOFF_HZ) * gains[k - 1]
        x += a * np.sin(k * phase + phis[k - 1])
    rate = rng.uniform_range(2.5, 5.0)
    env_phase = rng.uniform_range(0.0, 2 * np.pi)
    env = 0.15 + 0.85 * ((1.0 - np.cos(2 * np.pi * rate * t + env_phase)) / 2.0) ** 1.5
    return _peak_normalize(x * env, 1.0)


def spectral_notch(x: np.ndarray, sample_rate: int, offset_hz: float = 0.0) -> np.ndarray:
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, 1.0 / sample_rate)
    centres = np.arange(NOTCH_START_HZ, NOTCH_STOP_HZ, NOTCH_SPACING_HZ) + offset_hz
    mask = np.zeros(freqs.size, dtype=bool)
    for c in centres:
        mask |= np.abs(freqs - c) <= NOTCH_WIDTH_HZ / 2
    spec[mask] = 0.0
    return np.fft.irfft(spec, x.size)


def phase_jitter(x: np.ndarray, rng: SplitMix64) -> np.ndarray:
    _, _, z = signal.stft(x, nperseg=512, noverlap=512 - 128, window="hann")
    n_frames = z.shape[1]
    pick = rng.uniform(n_frames) < PHASE_JITTER_FRACTION
    phases = rng.uniform_range(-np.pi, np.pi, z.shape[0] * n_frames).reshape(z.shape)
    z = np.where(pick[None, :], np.abs(z) * np.exp(1j * phases), z)
    _, y = signal.istft(z, nperseg=512, noverlap=512 - 128, window="hann")
    y = y[: x.size]
    if y.size < x.size:
        y = np.pad(y, (0, x.size - y.size))
    return y


def quantize_levels(x: np.ndarray, bits: int = QUANTIZE_BITS) -> np.ndarray:
    """Peak-normalize to 1 and round to ``2**bits`` steps over [-1, 1]."""
    half = 2 ** (bits - 1)
    return np.round(_peak_normalize(x, 1.0) * half) / half


def synth_clip(spec: ClipSpec, sample_rate: int = SAMPLE_RATE) -> Waveform:
    n = int(round(spec.duration_s * sample_rate))
    rng = SplitMix64(spec.seed)
    x = _voiced(spec, rng, n, sample_rate) + _pink_noise(rng, n, sample_rate)
    art = spec.artifact_profile
    if art is Artifact.SPECTRAL_NOTCH:
        x = spectral_notch(x, sample_rate, rng.uniform_range(-20.0, 20.0))
    elif art is Artifact.PHASE_JITTER:
        x = phase_jitter(x, rng)
    elif art is Artifact.QUANTIZE:
        x = quantize_levels(x)
    return Waveform(_peak_normalize(x, PEAK), sample_rate)


def synth_batch(manifest: Manifest) -> np.ndarray:
    """All clips of a manifest as a (N, T) array."""
    return np.stack([synth_clip(c, manifest.sample_rate).samples for c in manifest.clip_specs])


def materialize(manifest: Manifest, out_dir) -> list[Path]:
    """Write the manifest JSON and one WAV per clip under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.json")
    paths = []
    for i, c in enumerate(manifest.clip_specs):
        p = out / f"{i:04d}_{c.label.value.lower()}_{c.seed:016x}.wav"
        write_wav(synth_clip(c, manifest.sample_rate), p)
        paths.append(p)
    return paths
