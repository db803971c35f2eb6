"""16-bit mono PCM WAV reading and writing.

Integer codes map to floats as ``c / 32768`` so that -1.0 is exactly
representable and the grid is uniform; writing uses
``clamp(round(x * 32768), -32768, 32767)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCALE = 32768.0


class WavFormatError(ValueError):
    """Base class for rejected WAV files."""

    field = "header"


class MalformedHeaderError(WavFormatError):
    field = "header"


class UnsupportedFormatError(WavFormatError):
    field = "format_code"


class ChannelCountError(WavFormatError):
    field = "num_channels"


class BitDepthError(WavFormatError):
    field = "bits_per_sample"


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("waveform must be a non-empty 1-D sequence")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(s)) or np.abs(s).max() > 1.0:
            raise ValueError("waveform samples must be finite and within [-1, 1]")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size


def to_codes(samples: np.ndarray) -> np.ndarray:
    """Float samples to int16 codes (round half to even, clamped)."""
    return np.clip(np.rint(np.asarray(samples, dtype=np.float64) * SCALE), -32768, 32767).astype(np.int16)


def from_codes(codes: np.ndarray) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) / SCALE


def quantize(samples: np.ndarray) -> np.ndarray:
    """Snap samples onto the 16-bit grid exactly as a write/read round trip would."""
    return from_codes(to_codes(samples))


def read_wav(path) -> Waveform:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeaderError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + 16 > len(data):
                raise MalformedHeaderError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif chunk_id == b"data":
            if fmt is None:
                raise MalformedHeaderError(f"{path}: data chunk before fmt chunk")
            format_code, channels, rate, _, _, bits = fmt
            if format_code != 1:
                raise UnsupportedFormatError(f"{path}: format_code {format_code} is not PCM (1)")
            if channels != 1:
                raise ChannelCountError(f"{path}: num_channels {channels}, only mono is supported")
            if bits != 16:
                raise BitDepthError(f"{path}: bits_per_sample {bits}, only 16-bit is supported")
            if body + size > len(data) or size % 2:
                raise MalformedHeaderError(f"{path}: data chunk size {size} inconsistent with file")
            if rate == 0 or size == 0:
                raise MalformedHeaderError(f"{path}: empty data or zero sample_rate")
            codes = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body)
            return Waveform(from_codes(codes), int(rate))
        pos = body + size + (size & 1)
    raise MalformedHeaderError(f"{path}: no data chunk")


def wav_bytes(w: Waveform) -> bytes:
    codes = to_codes(w.samples).astype("<i2")
    payload = codes.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, 1, w.sample_rate, w.sample_rate * 2, 2, 16,
        b"data", len(payload),
    )
    return header + payload


def write_wav(w: Waveform, path) -> None:
    Path(path).write_bytes(wav_bytes(w))
