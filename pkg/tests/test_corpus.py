import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdattack.corpus import (
    IN_DOMAIN, OUT_OF_DOMAIN, Artifact, ClipSpec, CorpusError, Label, Manifest, Split,
    build_manifest, materialize, quantize_levels, synth_clip,
)
from ssdattack.prng import SplitMix64, mix64

M64 = (1 << 64) - 1


def _reference_splitmix(seed, n):
    """Sequential SplitMix64 written from the textbook definition."""
    state, out = seed, []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & M64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        out.append(z ^ (z >> 31))
    return out


def test_prng_known_vector():
    assert SplitMix64(1234567).next_u64() == 6457827717110365317


@given(st.integers(0, M64), st.integers(1, 50))
@settings(max_examples=50, deadline=None)
def test_prng_matches_sequential_reference(seed, n):
    ref = _reference_splitmix(seed, 2 * n)
    g = SplitMix64(seed)
    assert [g.next_u64() for _ in range(n)] == ref[:n]
    assert [int(v) for v in g.u64(n)] == ref[n:]


def test_prng_uniform_range():
    u = SplitMix64(3).uniform(10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.02
    assert mix64(0) == 0


def test_manifest_determinism():
    a = build_manifest(Split.TRAIN, 2, 2, 7)
    b = build_manifest(Split.TRAIN, 2, 2, 7)
    assert a.to_json() == b.to_json()
    assert [c.label for c in a.clip_specs] == [Label.REAL] * 2 + [Label.FAKE] * 2


def test_redteam_contract():
    m = build_manifest(Split.REDTEAM, 0, 100, 1)
    assert len(m) == 100
    assert all(c.label is Label.FAKE for c in m.clip_specs)
    with pytest.raises(CorpusError):
        build_manifest(Split.REDTEAM, 1, 10, 1)


def test_disjoint_master_seeds():
    a = {c.seed for c in build_manifest(Split.TRAIN, 50, 50, 1).clip_specs}
    b = {c.seed for c in build_manifest(Split.TRAIN, 50, 50, 2).clip_specs}
    assert len(a) == 100 and not a & b


def test_splits_draw_distinct_streams():
    a = {c.seed for c in build_manifest(Split.TRAIN, 20, 20, 0).clip_specs}
    b = {c.seed for c in build_manifest(Split.EVAL, 20, 20, 0).clip_specs}
    assert not a & b


def test_profiles_and_ranges():
    m = build_manifest(Split.REDTEAM, 0, 60, 4, profiles=OUT_OF_DOMAIN)
    assert {c.artifact_profile for c in m.clip_specs} == set(OUT_OF_DOMAIN)
    assert all(80 <= c.f0 <= 260 for c in m.clip_specs)
    assert {c.artifact_profile for c in build_manifest(Split.TRAIN, 0, 5, 4).clip_specs} == set(IN_DOMAIN)
    with pytest.raises(CorpusError):
        build_manifest(Split.TRAIN, 0, 1, 0, profiles=[Artifact.NONE])


def test_clip_spec_invariants():
    with pytest.raises(CorpusError):
        ClipSpec(Label.REAL, 1, 1.0, 100.0, Artifact.QUANTIZE)
    with pytest.raises(CorpusError):
        ClipSpec(Label.FAKE, 1, 1.0, 100.0)
    with pytest.raises(CorpusError):
        ClipSpec(Label.REAL, 1, 1.0, 30.0)
    with pytest.raises(CorpusError):
        Manifest(Split.TRAIN, [ClipSpec(Label.REAL, 1, 1.0, 100.0)] * 2)
    with pytest.raises(CorpusError):
        Manifest(Split.REDTEAM, [ClipSpec(Label.REAL, 1, 1.0, 100.0)])


def test_manifest_json_fields(tmp_path):
    m = build_manifest(Split.EVAL, 1, 1, 5)
    d = json.loads(m.to_json())
    assert set(d) == {"split", "sample_rate", "clips"}
    assert set(d["clips"][0]) == {"label", "seed", "duration_s", "f0", "artifact_profile"}
    m.save(tmp_path / "m.json")
    assert Manifest.load(tmp_path / "m.json") == m


def _spec(label, artifact=Artifact.NONE, seed=11, dur=0.5):
    return ClipSpec(label, seed, dur, 150.0, artifact)


@pytest.mark.parametrize("artifact", list(Artifact))
def test_synth_determinism_and_peak(artifact):
    label = Label.REAL if artifact is Artifact.NONE else Label.FAKE
    spec = _spec(label, artifact)
    a, b = synth_clip(spec), synth_clip(spec)
    assert np.array_equal(a.samples, b.samples)
    assert a.samples.size == 8000
    assert abs(np.abs(a.samples).max() - 0.9) <= 1e-6


def test_quantize_level_count():
    w = synth_clip(_spec(Label.FAKE, Artifact.QUANTIZE, dur=1.0))
    assert len(np.unique(w.samples)) <= 2**6 + 1
    x = np.sin(np.linspace(0, 50, 5000)) * 0.3 + 0.01 * np.cos(np.linspace(0, 3000, 5000))
    assert len(np.unique(quantize_levels(x))) <= 65


def test_artifacts_change_the_clip():
    base = synth_clip(_spec(Label.REAL)).samples
    for art in (Artifact.SPECTRAL_NOTCH, Artifact.PHASE_JITTER, Artifact.QUANTIZE):
        assert not np.allclose(synth_clip(_spec(Label.FAKE, art)).samples, base)


def test_notch_removes_high_band_energy():
    real = synth_clip(_spec(Label.REAL, dur=1.0)).samples
    fake = synth_clip(_spec(Label.FAKE, Artifact.SPECTRAL_NOTCH, dur=1.0)).samples

    def band(x):
        s = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(x.size, 1 / 16000)
        return s[(f > 4000) & (f < 8000)].sum() / s.sum()

    assert band(fake) < 0.5 * band(real)


def test_materialize(tmp_path):
    m = build_manifest(Split.EVAL, 1, 1, 3)
    m = Manifest(m.split, [ClipSpec(c.label, c.seed, 0.25, c.f0, c.artifact_profile) for c in m.clip_specs])
    paths = materialize(m, tmp_path)
    assert (tmp_path / "manifest.json").exists()
    assert [p.name.split("_")[1] for p in paths] == ["real", "fake"]
