import csv
import json

import numpy as np
import pytest

from sdepth import cli
from sdepth.data import read_fdpt, write_fdpt
from sdepth.hybrid import HybridModel
from sdepth.training import load_model


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cli.main(["generate", "--corpus", "toy-base", "--out", str(root / "base"), "--scenes", "2", "--frames", "4"])
    cli.main(["generate", "--corpus", "toy-high", "--out", str(root / "high"), "--scenes", "1", "--frames", "3"])
    fast = ["--steps", "2", "--batch", "1", "--clip-len", "2", "--seed", "3"]
    cli.main(["train-stage1", "--variant", "S", "--data", str(root / "base"), "--out", str(root / "s.fckp"),
              "--pretrain-steps", "1", "--pretrain-data", str(root / "base"), str(root / "high"),
              "--pretrain-crop", "140"] + fast)
    cli.main(["train-stage1", "--variant", "L", "--data", str(root / "base"), "--out", str(root / "l.fckp")] + fast)
    cli.main(["train-stage2", "--s-ckpt", str(root / "s.fckp"), "--l-ckpt", str(root / "l.fckp"),
              "--data", str(root / "high"), "--out", str(root / "h.fckp")] + fast)
    return root


def test_generate_layout(workspace):
    scene = workspace / "base" / "0001"
    assert len(list(scene.glob("frame_*.ppm"))) == 4 and len(list(scene.glob("frame_*.fdpt"))) == 4
    manifest = json.loads((workspace / "base" / "manifest.json").read_text())
    assert manifest["corpus"] == "toy-base" and len(manifest["scenes"]) == 2


def test_training_outputs(workspace):
    assert load_model(workspace / "s.fckp").cfg.variant == "S"
    assert isinstance(load_model(workspace / "h.fckp"), HybridModel)
    rows = list(csv.DictReader(open(f"{workspace / 's.fckp'}.loss.csv")))
    assert [r["step"] for r in rows] == ["0", "1"] and rows[0]["seed"] == "3"


def test_stage2_requires_checkpoints(workspace):
    with pytest.raises(SystemExit, match="missing"):
        cli.main(["train-stage2", "--s-ckpt", str(workspace / "nope.fckp"), "--l-ckpt", str(workspace / "l.fckp"),
                  "--data", str(workspace / "high"), "--out", str(workspace / "x.fckp")])


def test_config_file(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("# comment\nsteps = 7\nstrides = 1, 4\nlr_temporal = 2e-4  # inline\nloss_space = inverse_depth\n")
    values = cli.parse_config_file(cfg)
    assert values == {"steps": 7, "strides": (1, 4), "lr_temporal": 2e-4, "loss_space": "inverse_depth"}
    args = cli.build_parser().parse_args(
        ["train-stage1", "--variant", "S", "--data", "x", "--out", "y", "--config", str(cfg), "--steps", "9"])
    tc = cli.train_config(args, 1)
    assert tc.steps == 9 and tc.strides == (1, 4) and tc.seed == 0


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("stepz = 3\n")
    with pytest.raises(ValueError, match="unknown key"):
        cli.parse_config_file(cfg)


def test_infer_and_eval(workspace, capsys):
    pred = workspace / "pred_high"
    cli.main(["infer", "--ckpt", str(workspace / "h.fckp"), "--in", str(workspace / "high"), "--out", str(pred)])
    out = read_fdpt(pred / "0000" / "frame_0002.fdpt")
    assert out.shape == (280, 280) and (out > 0).all()
    capsys.readouterr()
    report = workspace / "report.json"
    cli.main(["eval", "--pred", str(pred), "--gt", str(workspace / "high"), "--report", str(report)])
    printed = json.loads(capsys.readouterr().out)
    full = json.loads(report.read_text())
    assert printed["sequences"] == 1
    seq = full["sequences"]["0000"]
    assert set(seq) == {"abs_rel", "delta1", "boundary_f1", "drift_std", "scale", "shift"}
    assert len(seq["drift_std"]) == 3
    assert (workspace / "report.sequences.csv").is_file() and (workspace / "report.drift.csv").is_file()


def test_infer_fallback_below_base(workspace):
    pred = workspace / "pred_base"
    cli.main(["infer", "--ckpt", str(workspace / "h.fckp"), "--in", str(workspace / "base" / "0000"),
              "--out", str(pred)])
    assert read_fdpt(pred / "frame_0000.fdpt").shape == (140, 140)


def test_eval_perfect_prediction(workspace, tmp_path, capsys):
    gt = workspace / "base"
    pred = tmp_path / "p"
    for f in gt.glob("*/frame_*.fdpt"):
        (pred / f.parent.name).mkdir(parents=True, exist_ok=True)
        write_fdpt(pred / f.parent.name / f.name, 2.0 * read_fdpt(f))
    cli.main(["eval", "--pred", str(pred), "--gt", str(gt), "--report", str(tmp_path / "r.json")])
    agg = json.loads(capsys.readouterr().out)
    assert agg["delta1"] == 1.0 and agg["abs_rel"] < 1e-6 and agg["boundary_f1"] == 1.0


def test_eval_resizes_predictions(workspace, tmp_path):
    gt = workspace / "base"
    pred = tmp_path / "p"
    for f in gt.glob("0000/frame_*.fdpt"):
        (pred / "0000").mkdir(parents=True, exist_ok=True)
        write_fdpt(pred / "0000" / f.name, np.ones((70, 70), np.float32) + np.random.rand(70, 70).astype(np.float32))
    gt_one = tmp_path / "g"
    (gt_one / "0000").mkdir(parents=True)
    for f in gt.glob("0000/frame_*.fdpt"):
        (gt_one / "0000" / f.name).write_bytes(f.read_bytes())
    rep = cli.evaluate_dirs(pred, gt_one)
    assert rep["aggregate"]["sequences"] == 1


def test_bench_json(workspace, capsys):
    capsys.readouterr()
    cli.main(["bench", "--ckpt", str(workspace / "h.fckp"), "--frames", str(workspace / "high"),
              "--threads", "2", "--limit", "3"])
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) == {"frames", "wall_seconds", "fps", "mode", "height", "width"}
    assert rep["frames"] == 2 and rep["mode"] == "hybrid" and rep["height"] == 280


def test_unknown_corpus(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["train-stage1", "--variant", "S", "--data", "nope", "--out", str(tmp_path / "x")])
