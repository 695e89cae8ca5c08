"""``sdepth`` command line.

Training options can also come from a config file of ``key = value`` lines
(``#`` starts a comment); keys are :class:`~sdepth.training.TrainConfig`
field names, tuples are comma separated, and command-line flags win::

    # stage1.cfg
    steps = 1500
    pretrain_steps = 1000
    strides = 1, 2, 4, 8
    lr_temporal = 1e-4
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .data import CORPORA, Corpus, read_fdpt, read_ppm, write_corpus, write_fdpt
from .numerics import bilinear_resize
from .streaming import bench, run_sequence
from .training import TrainConfig, load_model, save_model, train_stage1, train_stage2

log = logging.getLogger("sdepth")


def parse_config_file(path) -> dict:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    defaults = TrainConfig()
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(getattr(defaults, key), value)
    return out


def _coerce(default, value: str):
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int) or default is None and value.isdigit():
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def train_config(args, stage: int) -> TrainConfig:
    values = parse_config_file(args.config) if args.config else {}
    for key in ("steps", "seed", "batch", "pretrain_steps", "pretrain_crop", "pretrain_loss", "lr_temporal",
                "lr_backbone", "lr_fusion", "loss_space", "clip_len"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    values["stage"] = stage
    cfg = TrainConfig(**values)
    log.info("train config: %s", cfg)
    return cfg


def open_corpus(spec: str) -> Corpus:
    if Path(spec).is_dir():
        return Corpus.from_dir(spec)
    if spec in CORPORA:
        return Corpus.named(spec)
    raise SystemExit(f"{spec}: not a corpus directory or a known corpus name ({', '.join(CORPORA)})")


def scene_dirs(root: Path) -> list[Path]:
    return sorted(p for p in root.iterdir() if p.is_dir())


def load_frames(scene: Path) -> np.ndarray:
    files = sorted(scene.glob("frame_*.ppm"))
    if not files:
        raise SystemExit(f"{scene}: no frame_*.ppm files")
    return np.stack([read_ppm(f).transpose(2, 0, 1) for f in files]).astype(np.float32) / 255.0


def cmd_generate(args):
    out = write_corpus(args.corpus, args.out, args.scenes, args.frames)
    print(out)


def cmd_train_stage1(args):
    cfg = train_config(args, 1)
    pre = [open_corpus(d) for d in args.pretrain_data] if args.pretrain_data else None
    model, records = train_stage1(args.variant, open_corpus(args.data), cfg, pretrain_corpus=pre)
    save_model(model, args.out)
    _write_loss_log(args.out, records, cfg)


def cmd_train_stage2(args):
    cfg = train_config(args, 2)
    for p in (args.s_ckpt, args.l_ckpt):
        if not Path(p).is_file():
            raise SystemExit(f"missing stage-1 checkpoint {p}")
    model, records = train_stage2(load_model(args.s_ckpt), load_model(args.l_ckpt), open_corpus(args.data), cfg)
    save_model(model, args.out)
    _write_loss_log(args.out, records, cfg)


def _write_loss_log(ckpt, records, cfg):
    path = Path(f"{ckpt}.loss.csv")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "stage", "loss", "seed"])
        for r in records:
            w.writerow([r.step, r.stage, f"{r.loss:.6f}", cfg.seed])
    if records:
        log.info("final loss %.4f (step-0 loss %.4f); log in %s", records[-1].loss, records[0].loss, path)


def cmd_infer(args):
    model = load_model(args.ckpt)
    mode = None if args.mode == "auto" else args.mode
    src, dst = Path(args.inp), Path(args.out)
    scenes = scene_dirs(src) or [src]
    for scene in scenes:
        frames = load_frames(scene)
        preds = run_sequence(model, frames, mode, args.threads)
        d = dst / scene.name if scene != src else dst
        d.mkdir(parents=True, exist_ok=True)
        for t, p in enumerate(preds):
            write_fdpt(d / f"frame_{t:04d}.fdpt", p)
        log.info("%s: %d frames", scene.name, len(preds))


def _match(pred: np.ndarray, shape) -> np.ndarray:
    if pred.shape == tuple(shape):
        return pred
    return bilinear_resize(torch.from_numpy(pred)[None], *shape)[0].numpy()


def evaluate_dirs(pred_root: Path, gt_root: Path, cfg: M.BoundaryConfig = M.BoundaryConfig()) -> dict:
    reports = {}
    for scene in scene_dirs(gt_root):
        gt_files = sorted(scene.glob("frame_*.fdpt"))
        gts = [M.DepthRaster.from_sentinel(read_fdpt(f)) for f in gt_files]
        preds = [M.DepthRaster(_match(read_fdpt(pred_root / scene.name / f.name), g.shape)) for f, g in zip(gt_files, gts)]
        reports[scene.name] = M.evaluate_sequence(preds, gts, cfg)
    if not reports:
        raise SystemExit(f"{gt_root}: no scene directories")
    return {"sequences": reports, "aggregate": M.aggregate(reports.values())}


def write_report(report: dict, path: Path) -> None:
    """JSON report plus two delimited tables next to it."""
    path.write_text(json.dumps(report, indent=1))
    stem = path.with_suffix("")
    with open(f"{stem}.sequences.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "abs_rel", "delta1", "boundary_f1", "scale", "shift", "drift_std_final"])
        for name, r in report["sequences"].items():
            w.writerow([name, r["abs_rel"], r["delta1"], r["boundary_f1"], r["scale"], r["shift"], r["drift_std"][-1]])
    with open(f"{stem}.drift.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["prefix_frames", "mean_drift_std"])
        for i, v in enumerate(report["aggregate"]["drift_std"], 1):
            w.writerow([i, v])


def cmd_eval(args):
    cfg = M.BoundaryConfig(swap_pr=args.swap_pr)
    report = evaluate_dirs(Path(args.pred), Path(args.gt), cfg)
    write_report(report, Path(args.report))
    agg = report["aggregate"]
    print(json.dumps({k: agg[k] for k in ("abs_rel", "delta1", "boundary_f1", "sequences")}))


def cmd_bench(args):
    model = load_model(args.ckpt)
    root = Path(args.frames)
    scene = root if list(root.glob("frame_*.ppm")) else scene_dirs(root)[0]
    frames = load_frames(scene)
    if args.limit:
        frames = frames[: args.limit]
    mode = args.mode
    if mode == "auto":
        mode = "hybrid" if hasattr(model, "fusion") else model.cfg.variant
    report = bench(model, list(frames), mode, args.threads)
    print(json.dumps(report.to_json()))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdepth", description="Streaming video depth toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic corpus")
    g.add_argument("--corpus", required=True, choices=sorted(CORPORA))
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int)
    g.add_argument("--frames", type=int)
    g.set_defaults(func=cmd_generate)

    def train_flags(t):
        t.add_argument("--data", required=True, help="corpus directory or corpus name")
        t.add_argument("--out", required=True)
        t.add_argument("--config")
        t.add_argument("--steps", type=int)
        t.add_argument("--seed", type=int)
        t.add_argument("--batch", type=int)
        t.add_argument("--clip-len", dest="clip_len", type=int)
        t.add_argument("--lr-temporal", dest="lr_temporal", type=float)
        t.add_argument("--lr-backbone", dest="lr_backbone", type=float)
        t.add_argument("--loss-space", dest="loss_space", choices=["depth", "inverse_depth"])

    t1 = sub.add_parser("train-stage1", help="train one stream on base-resolution clips")
    t1.add_argument("--variant", required=True, choices=["S", "L"])
    t1.add_argument("--pretrain-steps", dest="pretrain_steps", type=int)
    t1.add_argument("--pretrain-data", dest="pretrain_data", nargs="+",
                    help="corpora for the per-frame warm-up (default: --data), sampled evenly")
    t1.add_argument("--pretrain-crop", dest="pretrain_crop", type=int, help="square crop of warm-up frames")
    t1.add_argument("--pretrain-loss", dest="pretrain_loss", choices=["ssi", "shift", "l1"])
    train_flags(t1)
    t1.set_defaults(func=cmd_train_stage1)

    t2 = sub.add_parser("train-stage2", help="train the hybrid model on high-resolution clips")
    t2.add_argument("--s-ckpt", required=True)
    t2.add_argument("--l-ckpt", required=True)
    t2.add_argument("--lr-fusion", dest="lr_fusion", type=float)
    train_flags(t2)
    t2.set_defaults(func=cmd_train_stage2)

    i = sub.add_parser("infer", help="stream every scene of a directory through a model")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--mode", default="auto", choices=["auto", "S", "L", "hybrid"])
    i.add_argument("--in", dest="inp", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--threads", type=int, default=1, choices=[1, 2])
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--swap-pr", action="store_true", help="conventional precision/recall denominators")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="FPS with one warmup frame excluded")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--frames", required=True)
    b.add_argument("--mode", default="auto", choices=["auto", "S", "L", "hybrid"])
    b.add_argument("--threads", type=int, default=1, choices=[1, 2])
    b.add_argument("--limit", type=int)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    args.func(args)


if __name__ == "__main__":
    main()
