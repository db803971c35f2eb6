"""Adversarial attacks against small raw-waveform synthetic-speech detectors."""

__version__ = "0.1.0"
