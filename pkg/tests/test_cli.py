import argparse
import json
import subprocess
import sys
from pathlib import Path

import pytest

from ssdattack import cli

SMALL = """
[corpus]
n_train_real = 4
n_train_fake = 4
n_eval_real = 2
n_eval_fake = 2
n_redteam = 3

[models]
arch_ids = ConvS, ConvGate
epochs = 1
batch = 4

[attack]
method = pgd
max_iters = 5

[attack.simba]
q = 500
max_queries = 12

[sweep]
swept_axis = step_size
axis_values = 1e-4, 1e-3
repeats = 2

[transfer]
methods = pgd, simba
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "fig1.cfg"
    p.write_text(SMALL)
    return p


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_gen_corpus_is_deterministic(tmp_path, cfg):
    for name in ("a", "b"):
        assert cli.main(["gen-corpus", "--seed", "7", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a == b
    assert len([k for k in a if k.endswith(".wav")]) == 8 + 4 + 3 + 3
    assert {"train/manifest.json", "eval/manifest.json", "redteam/manifest.json", "redteam_ood/manifest.json"} <= set(a)


def test_train_eval_attack_quality_pipeline(tmp_path, cfg):
    out = tmp_path / "run"
    assert cli.main(["gen-corpus", "--config", str(cfg), "--out", str(out / "corpus")]) == 0
    assert cli.main(["train", "--config", str(cfg), "--arch", "ConvS", "--manifest", str(out / "corpus/train/manifest.json"),
                     "--out", str(out / "models")]) == 0
    ckpt = out / "models/ConvS.ckpt"
    assert ckpt.exists()
    assert cli.main(["eval-eer", "--checkpoint", str(ckpt), "--manifest", str(out / "corpus/eval/manifest.json"),
                     "--out", str(out / "eer")]) == 0
    assert 0.0 <= json.loads((out / "eer/eer.json").read_text())["eer"] <= 1.0

    assert cli.main(["attack", "--checkpoint", str(ckpt), "--manifest", str(out / "corpus/redteam/manifest.json"),
                     "--method", "pgd", "--alpha", "0", "--out", str(out / "atk")]) == 0
    report = json.loads((out / "atk/report.json").read_text())
    assert len(report["clips"]) == 3
    assert all(c["linf"] == 0.0 for c in report["clips"])

    assert cli.main(["attack", "--checkpoint", str(ckpt), "--config", str(cfg), "--method", "simba",
                     "--max_queries", "9", "--out", str(out / "simba")]) == 0
    report = json.loads((out / "simba/report.json").read_text())
    assert report["method"] == "SimBA" and report["config"]["max_queries"] == 9
    assert all(c["steps_used"] <= 9 for c in report["clips"])

    ref = sorted((out / "corpus/redteam").glob("*.wav"))[0]
    adv = sorted((out / "simba").glob("*.wav"))[0]
    assert cli.main(["quality", "--reference", str(ref), "--degraded", str(adv), "--out", str(out / "q")]) == 0
    q = json.loads((out / "q/quality.json").read_text())
    assert q["vqs"] == 1 + 4 * q["nsim"]


def test_sweep_header_and_jobs_independence(tmp_path, cfg):
    outs = []
    for jobs in ("1", "3"):
        out = tmp_path / f"s{jobs}"
        assert cli.main(["sweep", "--config", str(cfg), "--out", str(out), "--jobs", jobs]) == 0
        outs.append(out)
    text = (outs[0] / "sweep.csv").read_text()
    assert text.splitlines()[0] == "lr,asr-avg,asr-std,visqol-avg,visqol-std,snr-avg,model"
    assert len(text.splitlines()) == 1 + 2 * 2
    for name in ("sweep.csv", "run.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_transfer_outputs(tmp_path, cfg):
    assert cli.main(["transfer", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    for m in ("pgd", "simba"):
        lines = (tmp_path / f"t/transfer_{m}.csv").read_text().splitlines()
        assert lines[0] == "source,ConvS,ConvGate" and len(lines) == 3
    assert set(json.loads((tmp_path / "t/transfer.json").read_text())["matrices"]) == {"pgd", "simba"}


def test_writes_only_under_out(tmp_path, cfg, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    assert cli.main(["sweep", "--config", str(cfg), "--out", "o", "--jobs", "1"]) == 0
    assert [p.name for p in work.iterdir()] == ["o"]


def test_exit_codes(tmp_path, capsys):
    assert cli.main([]) == 2
    assert cli.main(["attack", "--method", "cw", "--checkpoint", "x"]) == 2
    assert cli.main(["sweep", "--alpha", "fast"]) == 2
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"SSDRT1" + b"\0" * 40)
    capsys.readouterr()
    assert cli.main(["eval-eer", "--checkpoint", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "detector" in err and "checksum" in err
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["eval-eer", "--checkpoint", str(tmp_path / "none.ckpt"), "--out", str(tmp_path / "o")]) == 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ssdattack", "eval-eer", "--checkpoint", str(tmp_path / "nope"),
                        "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 1 and "ssdattack eval-eer" in r.stderr
    r = subprocess.run([sys.executable, "-m", "ssdattack", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 2


def test_help_documents_every_flag():
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    assert set(sub.choices) == {"gen-corpus", "train", "eval-eer", "attack", "sweep", "transfer", "quality"}
    for name, p in sub.choices.items():
        for action in p._actions:
            if isinstance(action, argparse._HelpAction):
                continue
            assert action.help, f"{name} {action.option_strings} lacks help"
        p.format_help()
    attack_flags = {s for a in sub.choices["attack"]._actions for s in a.option_strings}
    assert {"--method", "--alpha", "--epsilon", "--max_iters", "--q", "--max_queries", "--clamp_valid_range",
            "--seed", "--config", "--out"} <= attack_flags
