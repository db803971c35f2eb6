import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdattack import tensorkit as tk
from ssdattack.attacks import (
    AttackConfigError, Method, SimbaConfig, WhiteBoxConfig, adversarial_audio, ifgsm_attack,
    pgd_attack, run_attack, simba_attack,
)
from ssdattack.audio_io import Waveform, read_wav
from ssdattack.detector import ArchId, init_model, score

from _stubs import LinearModel

T = 4000
ULP = np.spacing(np.float32(0.004))


@pytest.fixture(scope="module")
def model():
    return init_model(ArchId.CONV_S, 2, T=T)


@pytest.fixture(scope="module")
def clip():
    return np.round(np.random.default_rng(0).uniform(-0.5, 0.5, T) * 32768) / 32768


def wb(method=Method.PGD, **kw):
    return WhiteBoxConfig(method=method, **kw)


@pytest.mark.parametrize("method", [Method.PGD, Method.IFGSM])
def test_zero_budget_is_noop(model, clip, method):
    r = run_attack(model, clip, wb(method, epsilon=0.0, max_iters=5))
    assert not r.delta.any()
    assert r.success == score(model, clip).is_real


def test_zero_budget_simba(model, clip):
    r = simba_attack(model, clip, SimbaConfig(epsilon=0.0, q=100, max_queries=20))
    assert not r.delta.any()
    assert r.success == score(model, clip).is_real


@pytest.mark.parametrize("method", [Method.PGD, Method.IFGSM])
def test_zero_step_is_noop(model, clip, method):
    assert not run_attack(model, clip, wb(method, alpha=0.0, max_iters=3)).delta.any()


def test_single_pgd_step_closed_form():
    rng = np.random.default_rng(4)
    W = rng.normal(0, 1, (2, 16))
    b = np.array([-3.0, 3.0])
    s = rng.uniform(-0.5, 0.5, 16)
    m = LinearModel(W, b)
    alpha, eps = 2e-3, 0.004
    r = pgd_attack(m, s, wb(alpha=alpha, epsilon=eps, max_iters=1))
    z = W @ s + b
    p_fake = np.exp(z[1]) / np.exp(z).sum()
    # d CE(z, Real) / d s = -p_fake * (W0 - W1)
    g = -p_fake * (W[0] - W[1])
    assert r.steps_used == 1
    assert np.allclose(r.delta, np.clip(-alpha * g, -eps, eps), atol=1e-15)


def test_ifgsm_one_step_values(model, clip):
    alpha = 1e-3
    r = ifgsm_attack(model, clip, wb(Method.IFGSM, alpha=alpha, epsilon=0.004, max_iters=1))
    assert set(np.unique(r.delta)).issubset({-alpha, 0.0, alpha})
    r = ifgsm_attack(model, clip, wb(Method.IFGSM, alpha=0.01, epsilon=0.004, max_iters=1))
    nz = r.delta[r.delta != 0]
    assert nz.size and np.all(np.abs(nz) == 0.004)


def test_method_checks(model, clip):
    with pytest.raises(AttackConfigError):
        pgd_attack(model, clip, wb(Method.IFGSM))
    with pytest.raises(AttackConfigError):
        ifgsm_attack(model, clip, wb(Method.PGD))
    with pytest.raises(AttackConfigError):
        WhiteBoxConfig(max_iters=0)
    with pytest.raises(AttackConfigError):
        WhiteBoxConfig(epsilon=-1.0)
    with pytest.raises(AttackConfigError):
        SimbaConfig(q=0)
    with pytest.raises(AttackConfigError):
        simba_attack(model, clip, SimbaConfig(q=T + 1))


def test_white_box_early_stop_soundness():
    rng = np.random.default_rng(1)
    W = rng.normal(0, 1, (2, 32))
    s = rng.uniform(-0.3, 0.3, 32)
    m = LinearModel(W, np.array([0.0, (W[0] - W[1]) @ s + 0.05]))
    assert not score(m, s).is_real
    for method in (Method.PGD, Method.IFGSM):
        r = run_attack(m, s, wb(method, alpha=1e-3, epsilon=0.01, max_iters=200))
        assert r.success
        assert score(m, s + r.delta) == r.final_score
        assert r.steps_used < 200


def test_simba_constant_model():
    m = LinearModel(np.zeros((2, 8)), np.array([0.0, 1.0]))
    r = simba_attack(m, np.zeros(8), SimbaConfig(q=3, max_queries=25))
    assert not r.delta.any() and not r.success
    assert r.steps_used == 25
    assert r.accepted_p_trace == [r.final_score.p_real]


def _brute_force_single_weight(w, bias, s0, T, cfg):
    """Replay the trial sequence and decide accept/reject from the sign of w alone."""
    rng = np.random.default_rng(cfg.seed)
    d0, queries, accepted = 0.0, 1, 0
    real = lambda d: w * (s0 + d) > bias
    while queries < cfg.max_queries and not real(d0):
        idx = int(rng.choice(T, size=1, replace=False)[0])
        sign = 2.0 * rng.integers(0, 2, size=1)[0] - 1.0
        for direction in (1.0, -1.0):
            if queries >= cfg.max_queries:
                break
            queries += 1
            if idx != 0:
                continue
            cand = float(np.clip(d0 + direction * sign * cfg.alpha, -cfg.epsilon, cfg.epsilon))
            if w * cand > w * d0:
                d0 = cand
                accepted += 1
                break
    return d0, queries, accepted


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("w", [40.0, -25.0])
def test_simba_single_weight_brute_force(seed, w):
    T_small = 3
    W = np.zeros((2, T_small))
    W[0, 0] = w
    bias = 0.1
    m = LinearModel(W, np.array([0.0, bias]))
    cfg = SimbaConfig(alpha=0.0015, q=1, max_queries=10, epsilon=0.004, seed=seed)
    r = simba_attack(m, np.zeros(T_small), cfg)
    d0, queries, accepted = _brute_force_single_weight(w, bias, 0.0, T_small, cfg)
    assert r.delta[0] == pytest.approx(d0, abs=1e-15)
    assert not r.delta[1:].any()
    assert r.steps_used == queries
    assert len(r.accepted_p_trace) - 1 == accepted
    assert np.sign(r.delta[0]) in (0.0, np.sign(w))


def test_simba_query_accounting_and_trace(model, clip):
    calls = []

    def counting(sig):
        calls.append(1)
        p = tk.softmax(model.logits(sig[None, :])[0])
        from ssdattack.detector import Score
        return Score(float(p[0]), float(p[1]))

    cfg = SimbaConfig(alpha=0.005, q=200, max_queries=41, seed=3)
    r = simba_attack(model, clip, cfg, scorer=counting)
    assert len(calls) == r.steps_used <= cfg.max_queries
    assert all(b > a for a, b in zip(r.accepted_p_trace, r.accepted_p_trace[1:]))
    assert r.accepted_p_trace[-1] == r.final_score.p_real
    assert np.abs(r.delta).max() <= cfg.epsilon


def test_simba_counts_model_evaluations():
    rng = np.random.default_rng(8)
    m = LinearModel(rng.normal(0, 1, (2, 64)), np.array([0.0, 5.0]))
    r = simba_attack(m, rng.uniform(-0.2, 0.2, 64), SimbaConfig(alpha=0.01, q=8, max_queries=30, seed=2))
    assert m.calls == r.steps_used
    assert m.calls <= 30


def test_simba_is_seeded(model, clip):
    cfg = SimbaConfig(q=300, max_queries=15, seed=9)
    a, b = simba_attack(model, clip, cfg), simba_attack(model, clip, cfg)
    assert a.delta.tobytes() == b.delta.tobytes()
    assert a.accepted_p_trace == b.accepted_p_trace


@given(st.sampled_from([Method.PGD, Method.IFGSM, Method.SIMBA]), st.floats(1e-5, 0.05), st.floats(0.0, 0.01),
       st.booleans(), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_linf_contract(method, alpha, eps, clamp, seed):
    rng = np.random.default_rng(seed)
    m = LinearModel(rng.normal(0, 1, (2, 48)), np.array([0.0, 3.0]))
    s = np.clip(rng.uniform(-1.2, 1.2, 48), -1, 1)
    if method is Method.SIMBA:
        cfg = SimbaConfig(alpha=alpha, q=6, max_queries=40, epsilon=eps, seed=seed, clamp_valid_range=clamp)
    else:
        cfg = WhiteBoxConfig(method, alpha, eps, 20, clamp)
    r = run_attack(m, s, cfg)
    assert np.abs(r.delta).max() <= eps + np.spacing(np.float32(max(eps, 1e-30)))
    if clamp:
        assert np.all(np.abs(s + r.delta) <= 1.0)
    assert r.success == r.final_score.is_real


def test_adversarial_audio_is_clamped_and_quantized():
    s = np.array([0.99, -0.99, 0.1])
    out = adversarial_audio(s, np.array([0.02, -0.02, 1e-6]))
    assert out[0] == 32767 / 32768 and out[1] == -1.0
    assert np.array_equal(out * 32768, np.round(out * 32768))


def test_result_save(tmp_path, model, clip):
    r = run_attack(model, clip, wb(max_iters=2))
    r.save(tmp_path / "c0", Waveform(clip, 16000))
    meta = json.loads((tmp_path / "c0.json").read_text())
    assert set(meta) >= {"success", "steps_used", "final_score", "accepted_p_trace", "linf"}
    delta = np.frombuffer((tmp_path / "c0.delta.f32").read_bytes(), dtype="<f4")
    assert np.array_equal(delta, r.delta.astype(np.float32))
    assert np.array_equal(read_wav(tmp_path / "c0.wav").samples, adversarial_audio(clip, r.delta))
