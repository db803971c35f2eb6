"""White-box (PGD, I-FGSM) and query-only (SimBA) attacks toward the Real class.

All attacks work on a single clip and return an :class:`AttackResult` whose
``delta`` satisfies ``max|delta| <= epsilon``.  With ``clamp_valid_range`` the
perturbation is additionally shrunk so that ``s + delta`` stays in [-1, 1].
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorkit as tk
from .audio_io import Waveform, quantize, write_wav
from .detector import REAL, DetectorError, DetectorModel, Score


class Method(str, enum.Enum):
    PGD = "PGD"
    IFGSM = "IFGSM"
    SIMBA = "SimBA"


class AttackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WhiteBoxConfig:
    method: Method = Method.PGD
    alpha: float = 1e-3
    epsilon: float = 0.004
    max_iters: int = 200
    clamp_valid_range: bool = True

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.method is Method.SIMBA:
            raise AttackConfigError("SimBA takes a SimbaConfig")
        if self.alpha < 0 or self.epsilon < 0:
            raise AttackConfigError("alpha and epsilon must be non-negative")
        if self.max_iters < 1:
            raise AttackConfigError("max_iters must be at least 1")


@dataclass(frozen=True)
class SimbaConfig:
    alpha: float = 0.005
    q: int = 2000
    max_queries: int = 7500
    epsilon: float = 0.004
    seed: int = 0
    clamp_valid_range: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.epsilon < 0:
            raise AttackConfigError("alpha and epsilon must be non-negative")
        if self.q < 1:
            raise AttackConfigError("q must be at least 1")
        if self.max_queries < 1:
            raise AttackConfigError("max_queries must be at least 1")

    @property
    def method(self) -> Method:
        return Method.SIMBA


@dataclass
class AttackResult:
    delta: np.ndarray
    success: bool
    steps_used: int
    final_score: Score
    accepted_p_trace: list[float] = field(default_factory=list)

    def to_dict(self, include_delta: bool = True) -> dict:
        d = {
            "success": self.success,
            "steps_used": self.steps_used,
            "final_score": self.final_score.to_dict(),
            "accepted_p_trace": list(self.accepted_p_trace),
            "linf": float(np.abs(self.delta).max()) if self.delta.size else 0.0,
        }
        if include_delta:
            d["delta"] = self.delta.tolist()
        return d

    def save(self, stem, s: Waveform | None = None) -> None:
        """Write ``<stem>.json``, ``<stem>.delta.f32`` and, given the clean clip, ``<stem>.wav``."""
        stem = Path(stem)
        stem.with_suffix(".json").write_text(json.dumps(self.to_dict(include_delta=False), indent=2) + "\n")
        Path(f"{stem}.delta.f32").write_bytes(np.asarray(self.delta, dtype="<f4").tobytes())
        if s is not None:
            write_wav(Waveform(adversarial_audio(s, self.delta), s.sample_rate), stem.with_suffix(".wav"))


def adversarial_audio(s, delta) -> np.ndarray:
    """The shipped signal: ``s + delta`` clamped to [-1, 1] and snapped to the 16-bit grid."""
    x = s.samples if isinstance(s, Waveform) else np.asarray(s, dtype=np.float64)
    return quantize(np.clip(x + delta, -1.0, 1.0))


def _as_samples(model: DetectorModel, s) -> np.ndarray:
    x = s.samples if isinstance(s, Waveform) else np.asarray(s, dtype=np.float64)
    if x.ndim != 1 or x.size != model.T:
        raise DetectorError(f"{model.arch_id.value} expects length {model.T}, got {x.size}")
    return x


def _project(delta: np.ndarray, s: np.ndarray, epsilon: float, clamp: bool) -> np.ndarray:
    if clamp:
        delta = np.clip(delta, -1.0 - s, 1.0 - s)
    return np.clip(delta, -epsilon, epsilon)


def _score_from_logits(logits: np.ndarray) -> Score:
    p = tk.softmax(logits[0])
    return Score(float(p[0]), float(p[1]))


def white_box_attack(model: DetectorModel, s, cfg: WhiteBoxConfig) -> AttackResult:
    """Gradient steps on the cross-entropy toward Real with L-inf projection.

    The forward pass that checks for success after step ``t`` is reused to
    compute the gradient for step ``t + 1``.
    """
    x = _as_samples(model, s)
    delta = np.zeros_like(x)
    logits, cache = tk.forward(model.layers, model.params, x[None, :])
    steps = 0
    for t in range(1, cfg.max_iters + 1):
        _, g_logits = tk.cross_entropy_grad(logits, REAL)
        grad = tk.backward_input(cache, g_logits)[0]
        if cfg.method is Method.PGD:
            delta = delta - cfg.alpha * grad
        else:
            delta = delta - cfg.alpha * np.sign(grad)
        delta = _project(delta, x, cfg.epsilon, cfg.clamp_valid_range)
        steps = t
        logits, cache = tk.forward(model.layers, model.params, (x + delta)[None, :])
        if _score_from_logits(logits).is_real:
            break
    final = _score_from_logits(logits)
    return AttackResult(delta, final.is_real, steps, final)


def pgd_attack(model: DetectorModel, s, cfg: WhiteBoxConfig) -> AttackResult:
    if cfg.method is not Method.PGD:
        raise AttackConfigError(f"pgd_attack got method {cfg.method.value}")
    return white_box_attack(model, s, cfg)


def ifgsm_attack(model: DetectorModel, s, cfg: WhiteBoxConfig) -> AttackResult:
    if cfg.method is not Method.IFGSM:
        raise AttackConfigError(f"ifgsm_attack got method {cfg.method.value}")
    return white_box_attack(model, s, cfg)


def simba_attack(model: DetectorModel, s, cfg: SimbaConfig, scorer=None) -> AttackResult:
    """Random-coordinate search that keeps proposals raising p_real.

    Each trial picks ``q`` distinct timesteps and an independent random sign
    per timestep (``numpy.random.default_rng(cfg.seed)``), then queries
    ``s + P(delta + r)`` and, if that did not raise p_real strictly,
    ``s + P(delta - r)``, where ``P`` is the L-inf projection.  Querying the
    projected candidate means the stored p_real always belongs to the current
    ``delta``.  Every model evaluation, including the initial one, counts as
    one query; the search never exceeds ``cfg.max_queries`` evaluations.
    ``scorer`` overrides how a (T,) signal is scored (used for auditing).
    """
    x = _as_samples(model, s)
    if cfg.q > x.size:
        raise AttackConfigError(f"q={cfg.q} exceeds waveform length {x.size}")
    if scorer is None:
        def scorer(sig):
            return _score_from_logits(model.logits(sig[None, :]))
    rng = np.random.default_rng(cfg.seed)
    delta = np.zeros_like(x)
    current = scorer(x)
    queries = 1
    trace = [current.p_real]
    while queries < cfg.max_queries:
        if current.is_real:
            break
        idx = rng.choice(x.size, size=cfg.q, replace=False)
        step = cfg.alpha * (2.0 * rng.integers(0, 2, size=cfg.q) - 1.0)
        for sign in (1.0, -1.0):
            if queries >= cfg.max_queries:
                break
            cand = delta.copy()
            cand[idx] = _project(delta[idx] + sign * step, x[idx], cfg.epsilon, cfg.clamp_valid_range)
            sc = scorer(x + cand)
            queries += 1
            if sc.p_real > current.p_real:
                delta, current = cand, sc
                trace.append(sc.p_real)
                break
    return AttackResult(delta, current.is_real, queries, current, trace)


def run_attack(model: DetectorModel, s, cfg) -> AttackResult:
    if isinstance(cfg, SimbaConfig):
        return simba_attack(model, s, cfg)
    return white_box_attack(model, s, cfg)
