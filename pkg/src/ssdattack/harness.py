"""Hyper-parameter sweeps, transfer matrices and their serialization.

A sweep cell is ``(axis value, model, repeat, clip)``.  Each cell attacks one
clean clip (already on the 16-bit grid), exports the clamped and quantized
``s + delta`` and measures everything on that exported signal: success is
re-scored post-quantization and that value is what ASR reports.

SimBA seeds are derived per cell from ``(master_seed, repeat, clip seed)``
with SplitMix64, so results do not depend on processing order or worker
count.  White-box attacks are deterministic; their repeats reuse one run.

Aggregation per (axis value, model): within a repeat, mean and sample
standard deviation (ddof=1, 0 for a single clip) over clips; the reported
avg/std are the means of those over repeats.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .attacks import AttackResult, Method, SimbaConfig, WhiteBoxConfig, adversarial_audio, run_attack
from .audio_io import quantize
from .corpus import Manifest, Split, synth_clip
from .detector import ArchId, DetectorModel, score
from .prng import mix64
from .quality import vqs_score


class Axis(str, enum.Enum):
    STEP_SIZE = "step_size"
    EPSILON = "epsilon"
    ITERATIONS = "iterations"
    BATCH_SIZE = "batch_size"
    QUERIES = "queries"


AXIS_COLUMN = {
    Axis.STEP_SIZE: "lr",
    Axis.EPSILON: "eps",
    Axis.ITERATIONS: "iter",
    Axis.BATCH_SIZE: "bs",
    Axis.QUERIES: "query",
}

_AXIS_FIELD = {
    Axis.STEP_SIZE: "alpha",
    Axis.EPSILON: "epsilon",
    Axis.ITERATIONS: "max_iters",
    Axis.BATCH_SIZE: "q",
    Axis.QUERIES: "max_queries",
}

VALID_AXES = {
    Method.PGD: {Axis.STEP_SIZE, Axis.EPSILON, Axis.ITERATIONS},
    Method.IFGSM: {Axis.STEP_SIZE, Axis.EPSILON, Axis.ITERATIONS},
    Method.SIMBA: {Axis.STEP_SIZE, Axis.EPSILON, Axis.BATCH_SIZE, Axis.QUERIES},
}

DEFAULT_GRIDS = {
    (Method.PGD, Axis.STEP_SIZE): [1e-5, 1e-4, 1e-3, 1e-2],
    (Method.PGD, Axis.EPSILON): [0.001, 0.002, 0.003, 0.004],
    (Method.PGD, Axis.ITERATIONS): [50, 100, 150, 200],
    (Method.SIMBA, Axis.BATCH_SIZE): [500, 1000, 2000, 4000],
    (Method.SIMBA, Axis.STEP_SIZE): [0.001, 0.003, 0.005, 0.007],
    (Method.SIMBA, Axis.QUERIES): [1000, 2500, 5000, 7500],
}
for _axis in (Axis.STEP_SIZE, Axis.EPSILON, Axis.ITERATIONS):
    DEFAULT_GRIDS[(Method.IFGSM, _axis)] = DEFAULT_GRIDS[(Method.PGD, _axis)]


class HarnessError(RuntimeError):
    pass


def default_grid(method, axis) -> list:
    return list(DEFAULT_GRIDS[(Method(method), Axis(axis))])


@dataclass
class SweepSpec:
    attack: Method
    swept_axis: Axis
    axis_values: list
    fixed_config: WhiteBoxConfig | SimbaConfig
    model_ids: list
    manifest: Manifest
    repeats: int = 3
    master_seed: int = 0

    def __post_init__(self):
        self.attack = Method(self.attack)
        self.swept_axis = Axis(self.swept_axis)
        self.model_ids = [ArchId(m) for m in self.model_ids]
        if not self.axis_values:
            raise HarnessError("axis_values must be non-empty")
        if any(b <= a for a, b in zip(self.axis_values, self.axis_values[1:])):
            raise HarnessError("axis_values must be strictly increasing")
        if self.swept_axis not in VALID_AXES[self.attack]:
            raise HarnessError(f"axis {self.swept_axis.value} is not valid for {self.attack.value}")
        if self.fixed_config.method is not self.attack:
            raise HarnessError(f"fixed_config is for {self.fixed_config.method.value}, sweep is {self.attack.value}")
        if self.manifest.split is not Split.REDTEAM:
            raise HarnessError("sweeps run on a Redteam manifest")
        if self.repeats < 1:
            raise HarnessError("repeats must be at least 1")

    def config_at(self, value):
        name = _AXIS_FIELD[self.swept_axis]
        if name in ("max_iters", "q", "max_queries"):
            value = int(value)
        else:
            value = float(value)
        return replace(self.fixed_config, **{name: value})

    def to_dict(self) -> dict:
        cfg = asdict(self.fixed_config)
        cfg.pop(_AXIS_FIELD[self.swept_axis])
        if "method" in cfg:
            cfg["method"] = Method(cfg["method"]).value
        return {
            "attack": self.attack.value,
            "swept_axis": self.swept_axis.value,
            "axis_values": list(self.axis_values),
            "fixed_config": cfg,
            "model_ids": [m.value for m in self.model_ids],
            "manifest": self.manifest.to_dict(),
            "repeats": self.repeats,
            "master_seed": self.master_seed,
        }


@dataclass(frozen=True)
class ClipOutcome:
    axis_value: float
    model: str
    repeat: int
    clip_seed: int
    success: bool
    steps_used: int
    delta_linf: float
    linf: float
    snr_db: float
    vqs: float
    p_real: float


@dataclass
class SweepRecord:
    axis_value: float
    model: str
    asr_avg: float
    asr_std: float
    vqs_avg: float
    vqs_std: float
    snr_avg: float
    outcomes: list = field(default_factory=list, repr=False)


@dataclass
class TransferMatrix:
    attack: str
    dataset: str
    models: list
    asr: np.ndarray  # [source, target]

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "dataset": self.dataset,
            "models": list(self.models),
            "matrix": [[float(v) for v in row] for row in self.asr],
        }


def attack_success_rate(results) -> float:
    results = list(results)
    if not results:
        raise HarnessError("attack_success_rate needs at least one result")
    flags = [r.success if isinstance(r, AttackResult) else bool(r) for r in results]
    return sum(flags) / len(flags)


def cell_seed(master_seed: int, repeat: int, clip_seed: int) -> int:
    return mix64(mix64(mix64(int(master_seed)) ^ int(repeat)) ^ int(clip_seed))


def clean_clips(manifest: Manifest) -> dict[int, np.ndarray]:
    """Red-team clips keyed by seed, snapped to the 16-bit grid."""
    return {c.seed: quantize(synth_clip(c, manifest.sample_rate).samples) for c in manifest.clip_specs}


AttackFn = Callable[[DetectorModel, np.ndarray, object], AttackResult]


def evaluate_cell(model: DetectorModel, s: np.ndarray, cfg, attack_fn: AttackFn | None = None):
    """Attack one clip; return the result, the exported audio and its re-verified score."""
    result = (attack_fn or run_attack)(model, s, cfg)
    adv = adversarial_audio(s, result.delta)
    return result, adv, score(model, adv)


# -- worker plumbing -----------------------------------------------------------

_STATE: dict = {}


def _init_worker(models, clips, attack_fn):
    _STATE["models"] = models
    _STATE["clips"] = clips
    _STATE["attack_fn"] = attack_fn


def _run_cell(task):
    axis_value, model_id, repeat, clip_seed, cfg = task
    model = _STATE["models"][model_id]
    s = _STATE["clips"][clip_seed]
    try:
        result, adv, verified = evaluate_cell(model, s, cfg, _STATE["attack_fn"])
        q = vqs_score(s, adv)
    except Exception as exc:  # re-raised with cell context by the caller
        return task[:4], exc
    return task[:4], ClipOutcome(
        axis_value=axis_value, model=model_id, repeat=repeat, clip_seed=clip_seed,
        success=verified.is_real, steps_used=result.steps_used,
        delta_linf=float(np.abs(result.delta).max()), linf=q.linf, snr_db=q.snr_db,
        vqs=q.vqs, p_real=verified.p_real,
    )


def _transfer_cell(task):
    src, clip_seed, cfg, targets = task
    s = _STATE["clips"][clip_seed]
    try:
        _, adv, _ = evaluate_cell(_STATE["models"][src], s, cfg, _STATE["attack_fn"])
    except Exception as exc:
        return task[:2], exc
    return task[:2], [score(_STATE["models"][t], adv).is_real for t in targets]


def _map_cells(tasks, models, clips, attack_fn, jobs, worker=_run_cell):
    """Run ``worker`` over tasks; results come back in task order whatever ``jobs`` is."""
    if jobs <= 1 or len(tasks) <= 1:
        _init_worker(models, clips, attack_fn)
        return [worker(t) for t in tasks]
    import multiprocessing as mp
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(jobs, mp_context=ctx, initializer=_init_worker,
                             initargs=(models, clips, attack_fn)) as pool:
        return list(pool.map(worker, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _sample_std(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def _aggregate(outcomes: list[ClipOutcome], repeats: int):
    per_repeat = []
    for r in range(repeats):
        rows = [o for o in outcomes if o.repeat == r]
        succ = [float(o.success) for o in rows]
        vq = [o.vqs for o in rows]
        per_repeat.append((np.mean(succ), _sample_std(succ), np.mean(vq), _sample_std(vq),
                           np.mean([o.snr_db for o in rows])))
    return [float(np.mean(col)) for col in zip(*per_repeat)]


def run_sweep(spec: SweepSpec, models: dict, jobs: int = 1, attack_fn: AttackFn | None = None,
              clips: dict | None = None) -> list[SweepRecord]:
    """Attack every clip at every axis value with every model; one record per (value, model)."""
    models = {ArchId(k).value: v for k, v in models.items()}
    missing = [m.value for m in spec.model_ids if m.value not in models]
    if missing:
        raise HarnessError(f"no trained model for {', '.join(missing)}")
    clips = clean_clips(spec.manifest) if clips is None else clips
    seeds = [c.seed for c in spec.manifest.clip_specs]
    randomized = spec.attack is Method.SIMBA
    tasks = []
    for value in spec.axis_values:
        base = spec.config_at(value)
        for model_id in spec.model_ids:
            for repeat in range(spec.repeats if randomized else 1):
                for clip_seed in seeds:
                    cfg = replace(base, seed=cell_seed(spec.master_seed, repeat, clip_seed)) if randomized else base
                    tasks.append((value, model_id.value, repeat, clip_seed, cfg))
    results = {}
    for key, out in _map_cells(tasks, models, clips, attack_fn, jobs):
        if isinstance(out, Exception):
            value, model_id, _, clip_seed = key
            raise HarnessError(f"attack failed at {spec.swept_axis.value}={value}, model={model_id}, "
                               f"clip seed={clip_seed}: {out}") from out
        results[key] = out
    records = []
    for value in spec.axis_values:
        for model_id in spec.model_ids:
            outcomes = []
            for repeat in range(spec.repeats):
                src = repeat if randomized else 0
                for clip_seed in seeds:
                    o = results[(value, model_id.value, src, clip_seed)]
                    outcomes.append(replace(o, repeat=repeat))
            asr, asr_sd, vq, vq_sd, snr = _aggregate(outcomes, spec.repeats)
            records.append(SweepRecord(value, model_id.value, asr, asr_sd, vq, vq_sd, snr, outcomes))
    return records


def run_transfer(attack_cfg, models: dict, manifest: Manifest, dataset: str = "", master_seed: int = 0,
                 jobs: int = 1, attack_fn: AttackFn | None = None, clips: dict | None = None,
                 model_ids=None) -> TransferMatrix:
    """Attack on each source model, then score the exported audio on every target model."""
    model_ids = [ArchId(m).value for m in (model_ids or models)]
    models = {ArchId(k).value: v for k, v in models.items()}
    if len(model_ids) < 2:
        raise HarnessError("a transfer matrix needs at least two models")
    clips = clean_clips(manifest) if clips is None else clips
    seeds = [c.seed for c in manifest.clip_specs]
    randomized = isinstance(attack_cfg, SimbaConfig)
    tasks = []
    for src in model_ids:
        for clip_seed in seeds:
            cfg = replace(attack_cfg, seed=cell_seed(master_seed, 0, clip_seed)) if randomized else attack_cfg
            tasks.append((src, clip_seed, cfg, model_ids))
    hits = np.zeros((len(model_ids), len(model_ids)))
    for (src, clip_seed), out in _map_cells(tasks, models, clips, attack_fn, jobs, _transfer_cell):
        if isinstance(out, Exception):
            raise HarnessError(f"transfer attack failed on {src}, clip seed={clip_seed}: {out}") from out
        hits[model_ids.index(src)] += out
    return TransferMatrix(attack_cfg.method.value, dataset, model_ids, hits / len(seeds))


# -- serialization ---------------------------------------------------------------

def _fmt(v) -> str:
    return f"{float(v):.6g}"


def csv_text(records: list[SweepRecord], axis) -> str:
    if not records:
        raise HarnessError("no records to emit")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([AXIS_COLUMN[Axis(axis)], "asr-avg", "asr-std", "visqol-avg", "visqol-std", "snr-avg", "model"])
    for r in records:
        w.writerow([_fmt(r.axis_value), _fmt(r.asr_avg), _fmt(r.asr_std), _fmt(r.vqs_avg),
                    _fmt(r.vqs_std), _fmt(r.snr_avg), r.model])
    return buf.getvalue()


def emit_csv(records: list[SweepRecord], path, axis) -> None:
    Path(path).write_text(csv_text(records, axis))


def transfer_csv_text(matrix: TransferMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source"] + list(matrix.models))
    for src, row in zip(matrix.models, matrix.asr):
        w.writerow([src] + [_fmt(v) for v in row])
    return buf.getvalue()


def emit_transfer_csv(matrix: TransferMatrix, path) -> None:
    Path(path).write_text(transfer_csv_text(matrix))


def sweep_run_record(spec: SweepSpec, records: list[SweepRecord]) -> dict:
    return {
        "version": f"v{__version__}",
        "config": spec.to_dict(),
        "records": [
            {k: v for k, v in asdict(r).items() if k != "outcomes"} for r in records
        ],
        "clips": [asdict(o) for r in records for o in r.outcomes],
    }


def emit_json(run_record: dict, path) -> None:
    Path(path).write_text(json.dumps(run_record, indent=2, sort_keys=True) + "\n")
