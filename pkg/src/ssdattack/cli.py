"""Command-line entry point: ``ssdattack <subcommand> [flags]``.

Exit codes: 0 success, 1 domain error (message on stderr), 2 usage error.
Every subcommand accepts ``--seed``, ``--config`` and ``--out`` and writes
only below ``--out``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import corpus, detector, harness, quality
from .attacks import Method, SimbaConfig, WhiteBoxConfig, adversarial_audio, run_attack
from .audio_io import Waveform, read_wav
from .corpus import IN_DOMAIN, OUT_OF_DOMAIN, Manifest, Split

METHODS = {"pgd": Method.PGD, "ifgsm": Method.IFGSM, "simba": Method.SIMBA}

DEFAULTS = {
    "corpus": {
        "n_train_real": "48", "n_train_fake": "48",
        "n_eval_real": "50", "n_eval_fake": "50",
        "n_redteam": "100",
        "redteam_profiles": "SpectralNotch",
        "ood_profiles": "PhaseJitter, Quantize",
    },
    "models": {"arch_ids": "ConvS, ConvM, ConvL, ConvGate", "lr": "0.002", "epochs": "40", "batch": "8",
               "checkpoint_dir": ""},
    "attack": {"method": "pgd", "clamp_valid_range": "true"},
    "sweep": {"swept_axis": "step_size", "axis_values": "", "repeats": "3", "dataset": "redteam"},
    "transfer": {"methods": "pgd, ifgsm, simba", "dataset": "redteam"},
}


class CliError(RuntimeError):
    pass


# -- configuration -------------------------------------------------------------

def load_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cfg.read_dict(DEFAULTS)
    if path:
        if not Path(path).is_file():
            raise CliError(f"config file not found: {path}")
        cfg.read(path)
    return cfg


def _list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _number(text: str):
    v = float(text)
    return int(v) if v.is_integer() and "e" not in text.lower() and "." not in text else v


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise CliError(f"not a boolean: {text!r}")


def attack_config(cfg: configparser.ConfigParser, method: str, args=None, seed: int = 0):
    """Merge ``[attack]``, ``[attack.<method>]`` and command-line flags into a config object."""
    values = dict(cfg["attack"])
    section = f"attack.{method}"
    if cfg.has_section(section):
        values.update(cfg[section])
    if args is not None:
        for name in ("alpha", "epsilon", "max_iters", "q", "max_queries", "clamp_valid_range"):
            v = getattr(args, name, None)
            if v is not None:
                values[name] = str(v)
    m = METHODS[method]
    clamp = _bool(values.get("clamp_valid_range", "true"))
    if m is Method.SIMBA:
        d = SimbaConfig()
        return SimbaConfig(
            alpha=float(values.get("alpha", d.alpha)), q=int(values.get("q", d.q)),
            max_queries=int(values.get("max_queries", d.max_queries)),
            epsilon=float(values.get("epsilon", d.epsilon)), seed=seed, clamp_valid_range=clamp,
        )
    d = WhiteBoxConfig()
    return WhiteBoxConfig(
        method=m, alpha=float(values.get("alpha", d.alpha)), epsilon=float(values.get("epsilon", d.epsilon)),
        max_iters=int(values.get("max_iters", d.max_iters)), clamp_valid_range=clamp,
    )


def manifests_from_config(cfg, seed: int) -> dict[str, Manifest]:
    c = cfg["corpus"]
    return {
        "train": corpus.build_manifest(Split.TRAIN, int(c["n_train_real"]), int(c["n_train_fake"]), seed),
        "eval": corpus.build_manifest(Split.EVAL, int(c["n_eval_real"]), int(c["n_eval_fake"]), seed),
        "redteam": corpus.build_manifest(Split.REDTEAM, 0, int(c["n_redteam"]), seed,
                                         profiles=_list(c["redteam_profiles"]) or IN_DOMAIN),
        "redteam_ood": corpus.build_manifest(Split.REDTEAM, 0, int(c["n_redteam"]), seed,
                                             profiles=_list(c["ood_profiles"]) or OUT_OF_DOMAIN),
    }


def models_from_config(cfg, seed: int, train_manifest: Manifest, out: Path | None, log=print) -> dict:
    m = cfg["models"]
    hp = detector.TrainConfig(lr=float(m["lr"]), epochs=int(m["epochs"]), batch=int(m["batch"]), seed=seed)
    ckpt_dir = m.get("checkpoint_dir", "").strip()
    models = {}
    data = None
    for arch in _list(m["arch_ids"]):
        arch_id = detector.ArchId(arch)
        if ckpt_dir:
            models[arch_id.value] = detector.load_checkpoint(Path(ckpt_dir) / f"{arch_id.value}.ckpt", arch_id)
            continue
        if data is None:
            data = corpus.synth_batch(train_manifest)
        log(f"training {arch_id.value} ({hp.epochs} epochs)")
        model = detector.train(arch_id, train_manifest, hp, data=data)
        models[arch_id.value] = model
        if out is not None:
            (out / "models").mkdir(parents=True, exist_ok=True)
            detector.save_checkpoint(model, out / "models" / f"{arch_id.value}.ckpt")
    return models


# -- subcommands -----------------------------------------------------------------

def cmd_gen_corpus(args, cfg):
    manifests = manifests_from_config(cfg, args.seed)
    for name, man in manifests.items():
        corpus.materialize(man, args.out / name)
        print(f"{name}: {len(man)} clips -> {args.out / name}")


def _manifest_arg(args, cfg, which: str) -> Manifest:
    if args.manifest:
        return Manifest.load(args.manifest)
    return manifests_from_config(cfg, args.seed)[which]


def cmd_train(args, cfg):
    man = _manifest_arg(args, cfg, "train")
    m = cfg["models"]
    hp = detector.TrainConfig(
        lr=args.lr if args.lr is not None else float(m["lr"]),
        epochs=args.epochs if args.epochs is not None else int(m["epochs"]),
        batch=args.batch if args.batch is not None else int(m["batch"]),
        seed=args.seed,
    )
    archs = [args.arch] if args.arch else _list(m["arch_ids"])
    args.out.mkdir(parents=True, exist_ok=True)
    data = corpus.synth_batch(man)
    for arch in archs:
        model = detector.train(arch, man, hp, data=data, log=print)
        path = args.out / f"{detector.ArchId(arch).value}.ckpt"
        detector.save_checkpoint(model, path)
        print(f"wrote {path}")


def cmd_eval_eer(args, cfg):
    man = _manifest_arg(args, cfg, "eval")
    model = detector.load_checkpoint(args.checkpoint)
    eer = detector.eval_eer(model, man)
    args.out.mkdir(parents=True, exist_ok=True)
    harness.emit_json({"arch_id": model.arch_id.value, "eer": eer, "n_clips": len(man)}, args.out / "eer.json")
    print(f"{model.arch_id.value} EER {eer:.4f}")


def cmd_attack(args, cfg):
    man = _manifest_arg(args, cfg, "redteam")
    model = detector.load_checkpoint(args.checkpoint)
    method = args.method or cfg["attack"]["method"]
    clips = harness.clean_clips(man)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, spec in enumerate(man.clip_specs):
        seed = harness.cell_seed(args.seed, 0, spec.seed)
        acfg = attack_config(cfg, method, args, seed=seed)
        s = clips[spec.seed]
        result, adv, verified = harness.evaluate_cell(model, s, acfg)
        wav = Waveform(s, man.sample_rate)
        result.save(args.out / f"{i:04d}_{spec.seed:016x}", wav)
        q = quality.vqs_score(wav, Waveform(adv, man.sample_rate))
        rows.append({"clip_seed": spec.seed, "success": verified.is_real, "steps_used": result.steps_used,
                     **q.to_dict()})
        print(f"clip {i}: success={verified.is_real} steps={result.steps_used} linf={q.linf:.6g} vqs={q.vqs:.4f}")
    report = {
        "method": METHODS[method].value,
        "config": {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(attack_config(cfg, method, args)).items()
                   if k != "seed"},
        "arch_id": model.arch_id.value,
        "asr": harness.attack_success_rate([r["success"] for r in rows]) if rows else 0.0,
        "clips": rows,
    }
    harness.emit_json(report, args.out / "report.json")
    print(f"ASR {report['asr']:.4f}")


def _setup(args, cfg):
    manifests = manifests_from_config(cfg, args.seed)
    models = models_from_config(cfg, args.seed, manifests["train"], args.out)
    return manifests, models


def cmd_sweep(args, cfg):
    s = cfg["sweep"]
    method = args.method or cfg["attack"]["method"]
    axis = harness.Axis(args.swept_axis or s["swept_axis"])
    values_text = args.axis_values or s["axis_values"]
    values = [_number(v) for v in _list(values_text)] if values_text else harness.default_grid(METHODS[method], axis)
    args.out.mkdir(parents=True, exist_ok=True)
    manifests, models = _setup(args, cfg)
    spec = harness.SweepSpec(
        attack=METHODS[method], swept_axis=axis, axis_values=values,
        fixed_config=attack_config(cfg, method, args), model_ids=list(models),
        manifest=manifests[s["dataset"]], repeats=args.repeats or int(s["repeats"]), master_seed=args.seed,
    )
    records = harness.run_sweep(spec, models, jobs=args.jobs)
    harness.emit_csv(records, args.out / "sweep.csv", axis)
    harness.emit_json(harness.sweep_run_record(spec, records), args.out / "run.json")
    print(harness.csv_text(records, axis), end="")


def cmd_transfer(args, cfg):
    t = cfg["transfer"]
    methods = [args.method] if args.method else _list(t["methods"])
    args.out.mkdir(parents=True, exist_ok=True)
    manifests, models = _setup(args, cfg)
    man = manifests[t["dataset"]]
    clips = harness.clean_clips(man)
    out = {}
    for method in methods:
        acfg = attack_config(cfg, method, args)
        matrix = harness.run_transfer(acfg, models, man, dataset=t["dataset"], master_seed=args.seed,
                                      jobs=args.jobs, clips=clips)
        harness.emit_transfer_csv(matrix, args.out / f"transfer_{method}.csv")
        out[method] = matrix.to_dict()
        print(f"{method}:\n" + harness.transfer_csv_text(matrix), end="")
    harness.emit_json({"version": f"v{_version()}", "master_seed": args.seed, "matrices": out},
                      args.out / "transfer.json")


def cmd_quality(args, cfg):
    ref = read_wav(args.reference)
    deg = read_wav(args.degraded)
    report = quality.vqs_score(ref, deg)
    args.out.mkdir(parents=True, exist_ok=True)
    harness.emit_json(report.to_dict(), args.out / "quality.json")
    print(json.dumps(report.to_dict()))


def _version() -> str:
    from . import __version__
    return __version__


# -- parser ------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (integer) for corpus, training and attacks")
    p.add_argument("--config", type=Path, default=None, help="path to a key = value config file")
    p.add_argument("--out", type=Path, default=Path("ssdattack-out"), help="output directory (created if missing)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="worker processes for sweeps (count); output does not depend on it")


def _attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=sorted(METHODS), help="attack method")
    p.add_argument("--alpha", type=float, help="perturbation step size (linear amplitude, full scale = 1)")
    p.add_argument("--epsilon", type=float, help="L-inf budget on delta (linear amplitude, full scale = 1)")
    p.add_argument("--max_iters", "--max-iters", dest="max_iters", type=int,
                   help="white-box iterations (count)")
    p.add_argument("--q", type=int, help="SimBA perturbation batch size (timesteps per proposal, count)")
    p.add_argument("--max_queries", "--max-queries", dest="max_queries", type=int,
                   help="SimBA query budget (model evaluations, count)")
    p.add_argument("--clamp_valid_range", "--clamp-valid-range", dest="clamp_valid_range",
                   choices=["true", "false"], help="keep s + delta inside [-1, 1] (boolean)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssdattack", description="Adversarial attacks on synthetic-speech detectors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate train/eval/red-team clips as WAV + manifest")
    _common(p)

    p = sub.add_parser("train", help="train detector checkpoints")
    _common(p)
    p.add_argument("--arch", choices=[a.value for a in detector.ALL_ARCHS], help="architecture (default: all in config)")
    p.add_argument("--manifest", type=Path, help="Train manifest JSON (default: generated from --seed)")
    p.add_argument("--lr", type=float, help="SGD learning rate (dimensionless)")
    p.add_argument("--epochs", type=int, help="passes over the training set (count)")
    p.add_argument("--batch", type=int, help="mini-batch size (clips)")

    p = sub.add_parser("eval-eer", help="equal error rate of a checkpoint on an Eval manifest")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="detector checkpoint file")
    p.add_argument("--manifest", type=Path, help="Eval manifest JSON (default: generated from --seed)")

    p = sub.add_parser("attack", help="attack every clip of a red-team manifest")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="detector checkpoint file")
    p.add_argument("--manifest", type=Path, help="Redteam manifest JSON (default: generated from --seed)")
    _attack_flags(p)

    p = sub.add_parser("sweep", help="hyper-parameter sweep; writes sweep.csv and run.json")
    _common(p)
    _attack_flags(p)
    p.add_argument("--swept_axis", "--swept-axis", dest="swept_axis", choices=[a.value for a in harness.Axis],
                   help="hyper-parameter to sweep")
    p.add_argument("--axis_values", "--axis-values", dest="axis_values",
                   help="comma-separated, strictly increasing axis values (units of the swept field)")
    p.add_argument("--repeats", type=int, help="seeds per grid point (count)")

    p = sub.add_parser("transfer", help="transferability matrices; writes transfer_<method>.csv and transfer.json")
    _common(p)
    _attack_flags(p)

    p = sub.add_parser("quality", help="L-inf, SNR (dB) and vqs (1-5) between two WAV files")
    _common(p)
    p.add_argument("--reference", type=Path, required=True, help="reference WAV (16-bit mono)")
    p.add_argument("--degraded", type=Path, required=True, help="degraded WAV (16-bit mono)")
    return parser


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "eval-eer": cmd_eval_eer,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "transfer": cmd_transfer,
    "quality": cmd_quality,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        module = type(exc).__module__.rsplit(".", 1)[-1]
        if module == "builtins":
            module = "io" if isinstance(exc, OSError) else "cli"
        print(f"ssdattack {args.command}: [{module}] {exc}", file=sys.stderr)
        return 1
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
