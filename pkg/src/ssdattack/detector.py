"""Small raw-waveform spoof detectors, their training loop, EER and checkpoints.

Architectures (input: 64000 samples at 16 kHz)::

    ConvS     Conv(32, 1->4, s16)  ReLU  MaxPool(4,4)  Log  Conv(8, 4->8, s2)  ReLU
              AvgPoolGlobal  Dense(8, 2)
    ConvM     Conv(32, 1->8, s16)  ReLU  MaxPool(4,4)  Log  Conv(8, 8->16, s2)  ReLU
              Conv(4, 16->16, d2)  ReLU  AvgPoolGlobal  Dense(16, 2)
    ConvL     Conv(32, 1->16, s8)  ReLU  MaxPool(4,4)  Log  Conv(8, 16->24, s2)  ReLU
              MaxPool(2,2)  Conv(4, 24->32, d2)  ReLU  AvgPoolGlobal
              Dense(32, 16)  ReLU  Dense(16, 2)
    ConvGate  ConvM with its second convolution replaced by a gated
              convolution ``conv_a(x) * sigmoid(conv_b(x))``

``Log`` is ``log(1 + x / 1e-4)``.  The first convolution is initialized to a
bank of equal-width band-pass filters over [0, 8] kHz and is not trained.
Reference recipe: 48 Real + 48 Fake training clips, SGD lr 0.002, momentum
0.9, batch 8, 40 epochs.

Class 0 is Real, class 1 is Fake; exact probability ties resolve to Fake.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorkit as tk
from .audio_io import Waveform
from .corpus import Label, Manifest, Split, synth_batch

REAL, FAKE = 0, 1
LOG_FLOOR = 1e-4
DEFAULT_T = 64000
# the band-pass front end (layer 0) is fixed, as in sinc-filter front ends
FROZEN_LAYERS = 1
DEFAULT_SAMPLE_RATE = 16000


class ArchId(str, enum.Enum):
    CONV_S = "ConvS"
    CONV_M = "ConvM"
    CONV_L = "ConvL"
    CONV_GATE = "ConvGate"


ALL_ARCHS = (ArchId.CONV_S, ArchId.CONV_M, ArchId.CONV_L, ArchId.CONV_GATE)


class DetectorError(ValueError):
    pass


class CheckpointError(DetectorError):
    pass


def arch_layers(arch_id) -> list:
    arch = ArchId(arch_id)
    log = tk.LogCompress(LOG_FLOOR)
    if arch is ArchId.CONV_S:
        return [
            tk.Conv1d(32, 1, 4, stride=16), tk.ReLU(), tk.MaxPool1d(4, 4), log,
            tk.Conv1d(8, 4, 8, stride=2), tk.ReLU(),
            tk.AvgPoolGlobal(), tk.Dense(8, 2), tk.SoftmaxCE(),
        ]
    if arch is ArchId.CONV_M:
        return [
            tk.Conv1d(32, 1, 8, stride=16), tk.ReLU(), tk.MaxPool1d(4, 4), log,
            tk.Conv1d(8, 8, 16, stride=2), tk.ReLU(),
            tk.Conv1d(4, 16, 16, dilation=2), tk.ReLU(),
            tk.AvgPoolGlobal(), tk.Dense(16, 2), tk.SoftmaxCE(),
        ]
    if arch is ArchId.CONV_L:
        return [
            tk.Conv1d(32, 1, 16, stride=8), tk.ReLU(), tk.MaxPool1d(4, 4), log,
            tk.Conv1d(8, 16, 24, stride=2), tk.ReLU(), tk.MaxPool1d(2, 2),
            tk.Conv1d(4, 24, 32, dilation=2), tk.ReLU(),
            tk.AvgPoolGlobal(), tk.Dense(32, 16), tk.ReLU(), tk.Dense(16, 2), tk.SoftmaxCE(),
        ]
    return [
        tk.Conv1d(32, 1, 8, stride=16), tk.ReLU(), tk.MaxPool1d(4, 4), log,
        tk.GatedConv1d(8, 8, 16, stride=2), tk.ReLU(),
        tk.Conv1d(4, 16, 16, dilation=2), tk.ReLU(),
        tk.AvgPoolGlobal(), tk.Dense(16, 2), tk.SoftmaxCE(),
    ]


def bandpass_bank(n_bands: int, k: int, sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Hamming-windowed sinc band-pass filters splitting [0, sr/2] into equal bands.

    Returned shape is ``(n_bands, 1, k)``; used to initialize the first convolution.
    """
    nyq = sample_rate / 2.0
    m = np.arange(k) - (k - 1) / 2.0
    window = np.hamming(k)
    bank = np.empty((n_bands, 1, k))
    for c in range(n_bands):
        f1 = c * nyq / n_bands / sample_rate
        f2 = (c + 1) * nyq / n_bands / sample_rate
        h = 2 * f2 * np.sinc(2 * f2 * m) - 2 * f1 * np.sinc(2 * f1 * m)
        bank[c, 0] = h * window
    return bank


@dataclass(eq=False)
class DetectorModel:
    arch_id: ArchId
    params: list
    T: int = DEFAULT_T
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.arch_id = ArchId(self.arch_id)
        self.layers = arch_layers(self.arch_id)
        tk.check_layers(self.layers, self.T)
        reference = tk.init_params(self.layers, np.random.default_rng(0))
        for i, (want, got) in enumerate(zip(reference, self.params)):
            if set(want) != set(got) or any(want[k].shape != np.shape(got[k]) for k in want):
                raise DetectorError(f"{self.arch_id.value}: parameter shapes do not match layer {i}")

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Logits for a (B, T) batch."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.T:
            raise DetectorError(f"{self.arch_id.value} expects length {self.T}, got {x.shape[1]}")
        out, _ = tk.forward(self.layers, self.params, x)
        return out

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        return tk.softmax(self.logits(x))


@dataclass(frozen=True)
class Score:
    p_real: float
    p_fake: float

    @property
    def label(self) -> Label:
        return Label.REAL if self.p_real > self.p_fake else Label.FAKE

    @property
    def is_real(self) -> bool:
        return self.p_real > self.p_fake

    def to_dict(self) -> dict:
        return {"p_real": self.p_real, "p_fake": self.p_fake, "label": self.label.value}


def _samples(w) -> np.ndarray:
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)


def score(model: DetectorModel, w) -> Score:
    p = model.probabilities(_samples(w)[None, :])[0]
    return Score(float(p[REAL]), float(p[FAKE]))


def score_batch(model: DetectorModel, x: np.ndarray) -> list[Score]:
    p = model.probabilities(x)
    return [Score(float(a), float(b)) for a, b in p]


def loss_and_input_gradient(model: DetectorModel, x: np.ndarray, target) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CE losses, logits and d(CE)/d(input) for a (B, T) batch toward ``target``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.T:
        raise DetectorError(f"{model.arch_id.value} expects length {model.T}, got {x.shape[1]}")
    logits, cache = tk.forward(model.layers, model.params, x)
    losses, g = tk.cross_entropy_grad(logits, target)
    return losses, logits, tk.backward_input(cache, g)


def input_gradient(model: DetectorModel, w, target=Label.REAL) -> np.ndarray:
    """Gradient of the cross-entropy toward ``target`` with respect to the waveform."""
    cls = REAL if Label(target) is Label.REAL else FAKE
    _, _, g = loss_and_input_gradient(model, _samples(w)[None, :], cls)
    return g[0]


# -- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.002
    epochs: int = 40
    batch: int = 8
    seed: int = 0
    momentum: float = 0.9


def init_model(arch_id, seed: int, T: int = DEFAULT_T, sample_rate: int = DEFAULT_SAMPLE_RATE) -> DetectorModel:
    layers = arch_layers(arch_id)
    params = tk.init_params(layers, np.random.default_rng(seed))
    first = layers[0]
    params[0]["w"] = bandpass_bank(first.c_out, first.k, sample_rate)
    return DetectorModel(ArchId(arch_id), _to_float32(params), T, sample_rate)


def _to_float32(params) -> list:
    return [{k: np.asarray(v, dtype=np.float32) for k, v in p.items()} for p in params]


def train(arch_id, manifest: Manifest, hp: TrainConfig = TrainConfig(), data: np.ndarray | None = None,
          log=None) -> DetectorModel:
    """Mini-batch SGD with momentum on mean cross-entropy.

    Batches are drawn from a per-epoch permutation of ``numpy.random.default_rng(hp.seed)``;
    the returned parameters are the final-epoch values rounded to float32.
    ``data`` may carry the pre-synthesized (N, T) clips of ``manifest``.
    """
    if manifest.split is not Split.TRAIN:
        raise DetectorError(f"training requires a Train manifest, got {manifest.split.value}")
    if len(manifest) == 0:
        raise DetectorError("cannot train on an empty manifest")
    x = synth_batch(manifest) if data is None else np.asarray(data, dtype=np.float64)
    y = manifest.labels()
    model = init_model(arch_id, hp.seed, T=x.shape[1], sample_rate=manifest.sample_rate)
    params = [{k: v.astype(np.float64) for k, v in p.items()} for p in model.params]
    velocity = tk.zeros_like_params(params)
    rng = np.random.default_rng(hp.seed)
    for epoch in range(hp.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), hp.batch):
            idx = order[start:start + hp.batch]
            logits, cache = tk.forward(model.layers, params, x[idx])
            losses, g = tk.cross_entropy_grad(logits, y[idx])
            total += losses.sum()
            grads = tk.backward_params(cache, g / len(idx))
            for p, v, gp in list(zip(params, velocity, grads))[FROZEN_LAYERS:]:
                for k in p:
                    v[k] *= hp.momentum
                    v[k] -= hp.lr * gp[k]
                    p[k] += v[k]
        if log is not None:
            log(f"{ArchId(arch_id).value} epoch {epoch + 1}/{hp.epochs} loss {total / len(y):.4f}")
    model.params = _to_float32(params)
    return model


# -- EER ---------------------------------------------------------------------

def eer_from_scores(real_scores, fake_scores) -> float:
    """Equal error rate with ``score >= threshold`` meaning "Fake".

    Thresholds sweep every distinct score plus +inf.  False acceptance
    (fake called real) rises and false rejection (real called fake) falls as
    the threshold grows; the EER is read at the first operating point where
    FAR >= FRR, linearly interpolated against the previous point.
    """
    real = np.asarray(real_scores, dtype=np.float64)
    fake = np.asarray(fake_scores, dtype=np.float64)
    if real.size == 0 or fake.size == 0:
        raise DetectorError("EER needs scores from both classes")
    thresholds = np.append(np.unique(np.concatenate([real, fake])), np.inf)
    real_sorted = np.sort(real)
    fake_sorted = np.sort(fake)
    far = np.searchsorted(fake_sorted, thresholds, side="left") / fake.size
    frr = 1.0 - np.searchsorted(real_sorted, thresholds, side="left") / real.size
    diff = far - frr
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0 or i == 0:
        return float((far[i] + frr[i]) / 2)
    d0, d1 = diff[i - 1], diff[i]
    w = d0 / (d0 - d1)
    return float(far[i - 1] + w * (far[i] - far[i - 1]))


def eval_eer(model: DetectorModel, manifest: Manifest, data: np.ndarray | None = None) -> float:
    y = manifest.labels()
    if len(set(y.tolist())) < 2:
        raise DetectorError("EER needs a manifest with both Real and Fake clips")
    x = synth_batch(manifest) if data is None else data
    p_fake = np.concatenate([model.probabilities(x[i:i + 32])[:, FAKE] for i in range(0, len(x), 32)])
    return eer_from_scores(p_fake[y == REAL], p_fake[y == FAKE])


# -- checkpoints ---------------------------------------------------------------

MAGIC = b"SSDRT1"


def checkpoint_bytes(model: DetectorModel) -> bytes:
    arch = model.arch_id.value.encode("ascii")
    body = bytearray(MAGIC)
    body += struct.pack("<B", len(arch)) + arch
    body += struct.pack("<II", model.sample_rate, model.T)
    for p in model.params:
        for name in sorted(p):
            body += np.ascontiguousarray(p[name], dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    return bytes(body)


def save_checkpoint(model: DetectorModel, path) -> None:
    """Layout: magic ``SSDRT1``, u8 arch-id length, arch-id ASCII, u32 sample
    rate, u32 T, float32 parameters per layer in declaration order (names
    sorted within a layer), u32 CRC-32 of all preceding bytes; all little-endian."""
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path, expected_arch=None) -> DetectorModel:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 13:
        raise CheckpointError(f"{path}: file too short")
    if data[:5] != MAGIC[:5]:
        raise CheckpointError(f"{path}: bad magic")
    if data[:6] != MAGIC:
        raise CheckpointError(f"{path}: version mismatch ({data[:6]!r}, expected {MAGIC!r})")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum failure")
    pos = 6
    n = data[pos]
    pos += 1
    try:
        arch = ArchId(data[pos:pos + n].decode("ascii"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path}: unknown arch_id") from exc
    pos += n
    if expected_arch is not None and ArchId(expected_arch) is not arch:
        raise CheckpointError(f"{path}: holds {arch.value}, requested {ArchId(expected_arch).value}")
    sample_rate, T = struct.unpack_from("<II", data, pos)
    pos += 8
    template = tk.init_params(arch_layers(arch), np.random.default_rng(0))
    params = []
    for p in template:
        layer = {}
        for name in sorted(p):
            count = p[name].size
            end = pos + 4 * count
            if end > len(data) - 4:
                raise CheckpointError(f"{path}: parameter blob truncated")
            layer[name] = np.frombuffer(data[pos:end], dtype="<f4").astype(np.float32).reshape(p[name].shape)
            pos = end
        params.append(layer)
    if pos != len(data) - 4:
        raise CheckpointError(f"{path}: trailing bytes after parameter blob")
    return DetectorModel(arch, params, T, sample_rate)
