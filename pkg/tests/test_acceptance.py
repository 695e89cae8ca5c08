"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line.

The training-based checks (stage-1 drift, stage-2 hybrid trends) train real
models and take tens of minutes on one CPU core; their checkpoints are cached
in the pytest cache under a key that hashes the package sources and the
training recipe, so unchanged code is not retrained on a rerun.
"""
import copy
import hashlib
import json
import os
import struct
import time
from pathlib import Path

import numpy as np
import pytest
import torch

import sdepth
from sdepth import data as D
from sdepth import metrics as M
from sdepth import numerics as nx
from sdepth.backbone import DepthHead, TransformerBlock
from sdepth.hybrid import FusionWeights, HybridConfig, HybridModel, cross_attention_fuse
from sdepth.streaming import bench, run_sequence
from sdepth.temporal import (
    CONV_K,
    BlockState,
    MambaBlock,
    SelectiveScanParams,
    TemporalConfig,
    TemporalModule,
    init_state,
    scan_recurrence,
    selective_scan,
)
from sdepth.training import (
    TrainConfig,
    l1_loss,
    load_model,
    save_model,
    shift_invariant_loss,
    ssi_loss,
    train_stage1,
    train_stage2,
)

import oracles
from conftest import ACCEPTANCE_LINES


def report(tag: str, ok: bool, detail: str, seconds: float | None = None):
    took = f" [{seconds:.1f}s]" if seconds is not None else ""
    line = f"{tag}: {'PASS' if ok else 'FAIL'} - {detail}{took}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    return ok


def randomize(module, seed, scale=0.3):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
        for m in module.modules():
            if isinstance(m, SelectiveScanParams):
                m.A_log.copy_(torch.rand(m.A_log.shape, generator=g, dtype=m.A_log.dtype))
    return module


# --------------------------------------------------------------------------


def test_c1_zero_init_identity():
    t0 = time.perf_counter()
    torch.manual_seed(0)
    model = HybridModel(HybridConfig()).eval()
    frames = torch.rand(5, 3, 280, 280)
    hybrid = run_sequence(model, frames, "hybrid")
    with torch.no_grad():
        plain = [model.s(f)[0].numpy() for f in frames]
    err = max(float(np.abs(a - b).max()) for a, b in zip(hybrid, plain))
    ok = report("C1 zero-init identity", err <= 1e-6, f"max-abs {err:.2e} over 5 frames at 280x280 (tol 1e-6)",
                time.perf_counter() - t0)
    assert ok


def test_c2_batch_vs_stream():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_scan = worst_align = 0.0
    for case in range(100):
        torch.manual_seed(case)
        e, n = int(rng.integers(2, 9)), int(rng.integers(2, 17))
        p = SelectiveScanParams(e, n)
        t = int(rng.integers(2, 13))
        cut = int(rng.integers(1, t))
        x = torch.randn(t, e)
        h0 = torch.randn(e, n) * float(rng.uniform(0, 1))
        with torch.no_grad():
            y, h = selective_scan(x, p, h0)
            y1, ha = selective_scan(x[:cut], p, h0)
            y2, hb = selective_scan(x[cut:], p, ha)
        worst_scan = max(worst_scan, float((torch.cat([y1, y2]) - y).abs().max()), float((hb - h).abs().max()))

        cfg = TemporalConfig(blocks=int(rng.integers(1, 5)), down_factor=int(rng.integers(1, 3)))
        mod = randomize(TemporalModule(cfg), seed=case, scale=0.2).eval()
        hw = (int(rng.integers(2, 7)) * 2, int(rng.integers(2, 7)) * 2)
        nf = int(rng.integers(2, 5))
        feats = torch.randn(nf, 32, *hw)
        with torch.no_grad():
            st = init_state(mod, hw)
            streamed = []
            for f in feats:
                o, st = mod(f, st)
                streamed.append(o)
            dh, dw = mod.down_size(*hw)
            toks = torch.cat([nx.bilinear_resize(f, dh, dw).flatten(1).T for f in feats])[None]
            y, _ = mod.run_tokens(toks, init_state(mod, hw))
            for i, f in enumerate(feats):
                part = y[0, i * dh * dw:(i + 1) * dh * dw].T.reshape(32, dh, dw)
                ref = f + nx.bilinear_resize(part, *hw)
                worst_align = max(worst_align, float((streamed[i] - ref).abs().max()))
    ok = worst_scan <= 1e-5 and worst_align <= 1e-5
    report("C2 batch-vs-stream", ok,
           f"selective_scan max-abs {worst_scan:.2e}, align_features max-abs {worst_align:.2e} on 100 cases (tol 1e-5)",
           time.perf_counter() - t0)
    assert ok


def _block_state(blk, dtype):
    c = blk.cfg
    return BlockState(torch.zeros(1, c.inner_dim, c.state_dim, dtype=dtype),
                      torch.zeros(1, CONV_K - 1, c.inner_dim, dtype=dtype))


def _grad_cases(seed: int):
    """(name, op, inputs) for every differentiable op; float64 modules, small inputs."""
    d = torch.float64
    g = torch.Generator().manual_seed(seed)

    def r(*shape):
        return torch.randn(*shape, generator=g, dtype=d)

    torch.manual_seed(seed)
    blk = randomize(MambaBlock(TemporalConfig(model_dim=4, inner_dim=3, state_dim=2, mlp_hidden=4)), seed, 0.5).double()
    tm = randomize(TemporalModule(TemporalConfig(model_dim=4, inner_dim=2, state_dim=2, mlp_hidden=3, blocks=1)),
                   seed, 0.5).double()
    fw = randomize(FusionWeights(4, 4, blocks=1, heads=2, mlp_ratio=2), seed, 0.5).double()
    ssp = randomize(SelectiveScanParams(3, 2), seed, 0.5).double()
    tb = randomize(TransformerBlock(4, 2, 2), seed, 0.5).double()
    head = randomize(DepthHead(4), seed, 0.5).double()
    scan_args = [r(1, 3, 2), torch.nn.functional.softplus(r(1, 3, 2)), r(1, 3, 2), r(1, 3, 2),
                 -torch.exp(0.5 * r(2, 2)), r(2), r(1, 2, 2)]
    return [
        ("conv2d", lambda x, k, b: nx.conv2d(x, k, b, padding=1), [r(1, 4, 4), r(2, 1, 3, 3), r(2)]),
        ("conv2d_stride2_replicate", lambda x, k: nx.conv2d(x, k, stride=2, padding=1, padding_mode="replicate"),
         [r(2, 5, 5), r(1, 2, 3, 3)]),
        ("bilinear_resize", lambda x: nx.bilinear_resize(x, 5, 3), [r(2, 3, 4)]),
        ("layer_norm", nx.layer_norm, [r(3, 5), r(5), r(5)]),
        ("linear", nx.linear, [r(3, 4), r(2, 4), r(2)]),
        ("gelu", nx.gelu, [r(10)]),
        ("silu", nx.silu, [r(10)]),
        ("softplus", nx.softplus, [r(10)]),
        ("attention", lambda q, k, v: nx.attention(q, k, v, 2), [r(2, 4), r(3, 4), r(3, 4)]),
        ("scan_recurrence", scan_recurrence, scan_args),
        ("selective_scan", lambda x, h: selective_scan(x, ssp, h), [r(4, 3), r(3, 2)]),
        ("transformer_block", tb, [r(3, 4)]),
        ("depth_head", lambda f: head(f, 4, 4), [r(4, 2, 2)]),
        ("mamba_block", lambda x: blk(x, _block_state(blk, d))[0], [r(1, 3, 4)]),
        ("align_features", lambda f: tm(f, init_state(tm, (4, 4)))[0], [r(4, 4, 4)]),
        ("cross_attention_fuse", lambda q, kv: cross_attention_fuse(q, kv, fw), [r(4, 4), r(2, 4)]),
        ("l1_loss", l1_loss, [r(12), r(12).abs() + 1]),
        ("ssi_loss", ssi_loss, [r(2, 6), r(2, 6).abs() + 1]),
        ("shift_invariant_loss", shift_invariant_loss, [r(2, 6), r(2, 6).abs() + 1]),
    ]


def test_c3_gradient_checks():
    t0 = time.perf_counter()
    worst = {}
    for inst in range(20):
        for name, op, inputs in _grad_cases(inst):
            rep = nx.grad_check(op, inputs, op_name=name, seed=inst)
            worst[name] = max(worst.get(name, 0.0), rep.max_rel_err)
    bad = {k: v for k, v in worst.items() if v > 1e-3}
    top = max(worst, key=worst.get)
    detail = f"{len(worst)} ops x 20 instances, worst rel err {worst[top]:.1e} ({top})"
    if bad:
        detail += f"; failing: {bad}"
    ok = report("C3 gradient checks", not bad, detail + " (tol 1e-3, float64)", time.perf_counter() - t0)
    assert ok


def _raster_pair(rng):
    kind = rng.integers(3)
    if kind == 0:
        g = rng.uniform(1, 10, (16, 16))
    else:  # blocky scenes with real step edges
        g = np.kron(rng.uniform(1, 10, (4, 4)), np.ones((4, 4)))
        if kind == 2:
            g = g * rng.uniform(0.95, 1.05, (16, 16))
    p = np.abs(g * rng.uniform(0.7, 1.3) + rng.normal(0, 0.5, (16, 16))) + 0.1
    return p, g


def test_c4_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = dict(delta1=0.0, abs_rel=0.0, boundary_f1=0.0, align=0.0, drift=0.0)
    for _ in range(100):
        p, g = _raster_pair(rng)
        worst["delta1"] = max(worst["delta1"], abs(M.delta1(p, g) - oracles.delta1_loops(p, g)))
        worst["abs_rel"] = max(worst["abs_rel"], abs(M.abs_rel(p, g) - oracles.abs_rel_loops(p, g)))
        worst["boundary_f1"] = max(worst["boundary_f1"], abs(M.boundary_f1(p, g) - oracles.boundary_f1_loops(p, g)))
        a = M.align_scale_shift(p, g)
        s, t = oracles.align_ls_loops([p], [g])
        worst["align"] = max(worst["align"], abs(a.scale - s), abs(a.shift - t))
        seq_p = [p * rng.uniform(0.5, 2) for _ in range(5)]
        seq_g = [g] * 5
        worst["drift"] = max(worst["drift"], abs(M.temporal_drift_std(seq_p, seq_g, 5) - oracles.drift_loops(seq_p, seq_g, 5)))

    a = M.align_scale_shift(np.array([1.0, 2.0]), np.array([3.0, 5.0]))
    gt_row, pr_row = np.array([[1.0, 1.3, 1.3]]), np.array([[1.0, 1.0, 1.3]])
    base = np.random.default_rng(0).uniform(1, 2, (4, 4))
    examples = {
        "align [1,2]->[3,5] = (2,1)": (a.scale, a.shift) == (2.0, 1.0),
        "scale [1,3]/[2,2] = 0.8": M.align_scale(np.array([1.0, 3.0]), np.array([2.0, 2.0])) == 0.8,
        "abs_rel [2]/[1] = 1": M.abs_rel(np.array([2.0]), np.array([1.0])) == 1.0,
        "abs_rel [.5,1.5]/[1,1] = .5": M.abs_rel(np.array([0.5, 1.5]), np.array([1.0, 1.0])) == 0.5,
        "delta1 [1,1]/[1,1.3] = .5": M.delta1(np.array([1.0, 1.0]), np.array([1.0, 1.3])) == 0.5,
        "delta1 [1,1.2]/[1,1] = 1": M.delta1(np.array([1.0, 1.2]), np.array([1.0, 1.0])) == 1.0,
        "contour [1,1.3] t=25": bool(M.boundary_contours(np.array([[1.0, 1.3]]), 25)["right"].all()),
        "no contour [1,1.2] t=25": not any(v.any() for v in M.boundary_contours(np.array([[1.0, 1.2]]), 25).values()),
        "F1(25) misaligned edge = 0": M.boundary_f1_per_threshold(pr_row, gt_row)[-1] == 0.0,
        "drift {1,3} = 1": M.temporal_drift_std([base, base / 3], [base, base], 2) == 1.0,
    }
    failed = [k for k, v in examples.items() if not v]
    ok = max(worst.values()) <= 1e-9 and not failed
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {len(examples) - len(failed)}/{len(examples)} worked examples exact"
    if failed:
        detail += f" (failed: {failed})"
    report("C4 metric oracles", ok, detail + " (tol 1e-9, 100 pairs 16x16)", time.perf_counter() - t0)
    assert ok


def test_c5_invariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_aff = 0.0
    bf1_exact = True
    for _ in range(30):
        p, g = _raster_pair(rng)
        base = M.evaluate_sequence([p], [g])
        for a in (0.5, 2.0, 7.0):
            for b in (0.0, 1.0):
                moved = M.evaluate_sequence([a * p + b], [g])
                for k in ("abs_rel", "delta1"):
                    worst_aff = max(worst_aff, abs(moved[k] - base[k]))
        for k in (0.1, 10.0):
            bf1_exact &= M.boundary_f1(k * p, g) == M.boundary_f1(p, g)
    ok = worst_aff <= 1e-6 and bf1_exact
    report("C5 invariance", ok,
           f"aligned AbsRel/delta1 affine max-dev {worst_aff:.1e} (tol 1e-6); boundary F1 scale-invariant exactly: {bf1_exact}",
           time.perf_counter() - t0)
    assert ok


# --------------------------------------------------------------------------
# training effects

TRAIN_BUDGET_S = 30 * 60
L_RECIPE = dict(steps=1500, pretrain_steps=1000, batch=2, seed=0, log_every=0)
S_RECIPE = dict(steps=1500, pretrain_steps=1000, pretrain_crop=140, batch=2, seed=0, log_every=0)
S_PRETRAIN = ("toy-base", "toy-high")  # S also runs at 280, so its warm-up sees high-resolution crops
STAGE2_RECIPE = dict(stage=2, steps=300, batch=2, seed=0, log_every=0)


def _source_digest() -> str:
    h = hashlib.sha256()
    for f in sorted(Path(sdepth.__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def _cached(config, name: str, recipe: dict, build):
    """Load a trained model from the pytest cache or train it with ``build``.

    Returns (model, training seconds of the run that produced it, cached?).
    """
    key = hashlib.sha256((_source_digest() + name + json.dumps(recipe, sort_keys=True)).encode()).hexdigest()[:16]
    root = config.cache.mkdir("sdepth-acceptance")
    ckpt, meta = root / f"{name}-{key}.fckp", root / f"{name}-{key}.json"
    if ckpt.is_file() and meta.is_file():
        return load_model(ckpt), json.loads(meta.read_text())["seconds"], True
    t0 = time.perf_counter()
    model = build()
    seconds = time.perf_counter() - t0
    save_model(model, ckpt)
    meta.write_text(json.dumps({"seconds": seconds, "recipe": recipe}))
    return model, seconds, False


@pytest.fixture(scope="session")
def l_stage1(pytestconfig):
    return _cached(pytestconfig, "L-stage1", L_RECIPE,
                   lambda: train_stage1("L", D.Corpus.named("toy-base"), TrainConfig(**L_RECIPE))[0])


def _suite(corpus, predict) -> dict:
    reps = []
    for i in range(len(corpus)):
        imgs, depths = corpus.scene(i)
        reps.append(M.evaluate_sequence(predict(imgs), list(depths)))
    return M.aggregate(reps)


def _origin(seconds, cached):
    return f"{seconds / 60:.1f} min" + (" (cached checkpoint)" if cached else "")


@pytest.mark.slow
def test_c6_stage1_drift(l_stage1):
    t0 = time.perf_counter()
    model, seconds, cached = l_stage1
    ablated = copy.deepcopy(model)
    ablated.temporal.zero_init()
    ev = D.Corpus.named("toy-base-eval")
    tr = _suite(ev, lambda x: run_sequence(model, x))
    ab = _suite(ev, lambda x: run_sequence(ablated, x))
    d_tr, d_ab = tr["drift_std"][47], ab["drift_std"][47]
    drop = ab["delta1"] - tr["delta1"]
    ok = d_tr <= 0.7 * d_ab and drop <= 0.01 and seconds <= TRAIN_BUDGET_S
    report("C6 stage-1 drift", ok,
           f"drift@48 trained {d_tr:.4f} vs ablated {d_ab:.4f} (ratio {d_tr / d_ab:.2f}, need <= 0.7); "
           f"delta1 trained {tr['delta1']:.4f} vs ablated {ab['delta1']:.4f} (drop {drop:+.4f}, need <= 0.01); "
           f"L training {_origin(seconds, cached)} (budget 30 min); {len(ev)} scenes",
           time.perf_counter() - t0)
    assert ok


def _train_s():
    base = D.Corpus.named("toy-base")
    pre = [base if n == "toy-base" else D.Corpus.named(n) for n in S_PRETRAIN]
    return train_stage1("S", base, TrainConfig(**S_RECIPE), pretrain_corpus=pre)[0]


@pytest.fixture(scope="session")
def hybrid_stage2(pytestconfig, l_stage1):
    l_model = l_stage1[0]
    s_model, s_sec, s_cached = _cached(pytestconfig, "S-stage1", {**S_RECIPE, "pretrain": S_PRETRAIN}, _train_s)

    def build():
        return train_stage2(copy.deepcopy(s_model), l_model, D.Corpus.named("toy-high"), TrainConfig(**STAGE2_RECIPE))[0]

    hybrid, h_sec, h_cached = _cached(pytestconfig, "hybrid-stage2",
                                      {**STAGE2_RECIPE, "s": S_RECIPE, "l": L_RECIPE, "pretrain": S_PRETRAIN},
                                      build)
    return hybrid, s_model, l_model, s_sec + h_sec, s_cached and h_cached


def _l_upsampled(l_model, imgs):
    h, w = imgs.shape[-2:]
    small = [nx.bilinear_resize(torch.from_numpy(f), 140, 140).numpy() for f in imgs]
    return [nx.bilinear_resize(torch.from_numpy(p)[None], h, w)[0].numpy() for p in run_sequence(l_model, small)]


@pytest.mark.slow
def test_c7_hybrid_trends(hybrid_stage2):
    hybrid, s_model, l_model, seconds, cached = hybrid_stage2
    t0 = time.perf_counter()
    ev = D.Corpus.named("toy-high-eval")
    hy = _suite(ev, lambda x: run_sequence(hybrid, x, "hybrid"))
    so = _suite(ev, lambda x: run_sequence(s_model, x))
    lo = _suite(ev, lambda x: _l_upsampled(l_model, x))
    eval_s = time.perf_counter() - t0
    a = hy["delta1"] >= so["delta1"]
    b = hy["boundary_f1"] >= lo["boundary_f1"]
    ok = a and b and seconds <= TRAIN_BUDGET_S and eval_s < 120
    report("C7 hybrid trends", ok,
           f"(a) delta1 hybrid {hy['delta1']:.4f} vs S-only {so['delta1']:.4f}: {a}; "
           f"(b) boundary F1 hybrid {hy['boundary_f1']:.4f} vs upsampled L-only {lo['boundary_f1']:.4f}: {b}; "
           f"S stage-1 + stage-2 training {_origin(seconds, cached)} (budget 30 min, L stream shared with C6); "
           f"eval {eval_s:.0f}s (budget 120s); {len(ev)} scenes",
           time.perf_counter() - t0)
    assert ok


# --------------------------------------------------------------------------
# throughput


def test_c8_bench_protocol_and_worker_equivalence():
    t0 = time.perf_counter()
    torch.manual_seed(8)
    model = HybridModel(HybridConfig()).eval()
    with torch.no_grad():  # non-trivial fusion so both streams matter
        model.fusion.out_proj.weight.normal_(0, 0.05)
        model.s.temporal.out_proj.weight.normal_(0, 0.05)
    frames = list(torch.rand(200, 3, 280, 280))
    r1, o1 = bench(model, frames, "hybrid", threads=1, keep_outputs=True)
    r2, o2 = bench(model, frames, "hybrid", threads=2, keep_outputs=True)
    rs = bench(model, frames, "S")
    rl = bench(model, frames, "L")
    same = all(torch.equal(a, b) for a, b in zip(o1, o2))
    protocol = all(r.frames == 199 and abs(r.fps - r.frames / r.wall_seconds) < 1e-9 for r in (r1, r2, rs, rl))
    ratio = r2.wall_seconds / (rs.wall_seconds + rl.wall_seconds)
    cores = os.cpu_count() or 1
    timing = f"2-worker/(S+L) wall ratio {ratio:.2f} on {cores} core(s) (fps: hybrid1 {r1.fps:.1f}, hybrid2 {r2.fps:.1f}, S {rs.fps:.1f}, L {rl.fps:.1f})"
    ok = same and protocol
    report("C8a bench protocol + bitwise worker equivalence", ok,
           f"199 timed frames after 1 warmup, outputs identical across worker counts: {same}; {timing}",
           time.perf_counter() - t0)
    assert ok
    pytest.c8_ratio = (ratio, cores)


def test_c8_parallel_speedup():
    ratio, cores = getattr(pytest, "c8_ratio", (None, os.cpu_count() or 1))
    if ratio is None:
        pytest.skip("throughput run did not complete")
    if cores < 4:
        report("C8b parallel speedup", False,
               f"NOT EVALUABLE: criterion requires a >=4-core host, this host has {cores}; measured ratio {ratio:.2f} (need <= 0.9)")
        pytest.skip(f"requires >= 4 cores, host has {cores}")
    ok = report("C8b parallel speedup", ratio <= 0.9, f"2-worker/(S+L) wall ratio {ratio:.2f} (need <= 0.9)")
    assert ok


# --------------------------------------------------------------------------
# formats


def test_c9_format_round_trips(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    checks = {}
    depth = rng.uniform(1, 10, (37, 23)).astype(np.float32)
    depth[rng.random((37, 23)) < 0.1] = 0.0
    D.write_fdpt(tmp_path / "d.fdpt", depth)
    back = D.read_fdpt(tmp_path / "d.fdpt")
    checks["fdpt round-trip bitwise"] = back.tobytes() == depth.tobytes() and back.shape == depth.shape
    checks["fdpt 2x2 = 32 bytes"] = len(D.encode_fdpt(np.ones((2, 2), np.float32))) == 32

    torch.manual_seed(9)
    model = HybridModel(HybridConfig())
    save_model(model, tmp_path / "h.fckp")
    loaded = load_model(tmp_path / "h.fckp")
    sd_a, sd_b = model.state_dict(), loaded.state_dict()
    checks["fckp model round-trip bitwise"] = sd_a.keys() == sd_b.keys() and all(
        sd_a[k].numpy().tobytes() == sd_b[k].numpy().tobytes() for k in sd_a)
    tensors = {"a": rng.standard_normal((3, 1, 2)).astype(np.float32), "é": np.float32([np.inf, -0.0, 1e-40])}
    tb = D.decode_checkpoint(D.encode_checkpoint(tensors))
    checks["fckp raw tensors bitwise"] = all(tb[k].tobytes() == v.tobytes() and tb[k].shape == v.shape for k, v in tensors.items())

    def raises(fn, buf, exc):
        try:
            fn(buf)
        except D.FormatError as e:
            return type(e) is exc
        return False

    f = D.encode_fdpt(depth)
    c = D.encode_checkpoint(tensors)
    for name, fn, buf in (("fdpt", D.decode_fdpt, f), ("fckp", D.decode_checkpoint, c)):
        checks[f"{name} bad magic"] = raises(fn, b"ABCD" + buf[4:], D.BadMagicError)
        checks[f"{name} bad version"] = raises(fn, buf[:4] + struct.pack("<I", 99) + buf[8:], D.VersionError)
        checks[f"{name} truncated header"] = raises(fn, buf[:6], D.TruncatedError)
        checks[f"{name} truncated payload"] = raises(fn, buf[:-1], D.TruncatedError)
    try:
        D.decode_fdpt(f[:-5])
        checks["truncation names sizes"] = False
    except D.TruncatedError as e:
        checks["truncation names sizes"] = str(len(f)) in str(e) and str(len(f) - 5) in str(e)
    failed = [k for k, v in checks.items() if not v]
    ok = report("C9 format round-trips", not failed,
                f"{len(checks) - len(failed)}/{len(checks)} checks" + (f"; failed: {failed}" if failed else ""),
                time.perf_counter() - t0)
    assert ok
