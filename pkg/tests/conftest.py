"""Shared fixtures.  ``reference`` trains the four detectors once per session."""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from ssdattack import corpus, detector
from ssdattack.corpus import OUT_OF_DOMAIN, ClipSpec, Manifest, Split

MASTER_SEED = 0


@dataclass
class Reference:
    train: Manifest
    eval: Manifest
    redteam: Manifest
    redteam_ood: Manifest
    train_data: np.ndarray
    eval_data: np.ndarray
    models: dict
    train_seconds: float


def reference_manifests(seed: int = MASTER_SEED):
    return (
        corpus.build_manifest(Split.TRAIN, 48, 48, seed),
        corpus.build_manifest(Split.EVAL, 50, 50, seed),
        corpus.build_manifest(Split.REDTEAM, 0, 100, seed),
        corpus.build_manifest(Split.REDTEAM, 0, 100, seed, profiles=OUT_OF_DOMAIN),
    )


@pytest.fixture(scope="session")
def reference() -> Reference:
    t0 = time.perf_counter()
    train, ev, red, ood = reference_manifests()
    train_data = corpus.synth_batch(train)
    models = {
        arch.value: detector.train(arch, train, detector.TrainConfig(seed=MASTER_SEED), data=train_data)
        for arch in detector.ALL_ARCHS
    }
    return Reference(train, ev, red, ood, train_data, corpus.synth_batch(ev), models, time.perf_counter() - t0)


def shorten(manifest: Manifest, duration_s: float) -> Manifest:
    return Manifest(manifest.split, [
        ClipSpec(c.label, c.seed, duration_s, c.f0, c.artifact_profile) for c in manifest.clip_specs
    ], manifest.sample_rate)


@pytest.fixture(scope="session")
def tiny_train() -> Manifest:
    return shorten(corpus.build_manifest(Split.TRAIN, 4, 4, 11), 0.5)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
