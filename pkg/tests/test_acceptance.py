"""Whole-pipeline acceptance gate on the repo's 50-pair 512px benchmark.

Each criterion prints one PASS/FAIL verdict line with its measured numbers
(surfaced in the run summary) and then asserts. The shared pass over the
benchmark runs once per session and keeps per-pair statistics only; pairs
are rebuilt in memory from configs/desk_benchmark.json, never written out.
"""

import dataclasses
import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import make_texture

from dualview import synthgen
from dualview.cli import main, parse_config
from dualview.dereflect import poisson_reconstruct, synthesize_transmission
from dualview.flow import estimate_flow
from dualview.imgcore import read_flo, read_image, write_flo, write_image
from dualview.metrics import calibrate_gain_bias, epe, evaluate_sample, ssim
from dualview.warp import backward_warp

_CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "desk_benchmark.json"


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name} failed: {detail}"


def _benchmark_config():
    raw = json.loads(_CONFIG_PATH.read_text())
    cfg, problems = parse_config(raw)
    assert not problems, problems
    return cfg


def _build_pair(index: int, gen_cfg) -> synthgen.SamplePair:
    # mirrors the dataset writer's per-sample stream: kind draw, two sources,
    # then composition, all on the split seed
    rng = np.random.default_rng(synthgen.split_seed(gen_cfg.master_seed, index))
    rng.choice(3, p=gen_cfg.source_mixture)
    side = gen_cfg.out_size + 2 * gen_cfg.margin
    t_src = synthgen.procedural_source(rng, side, side)
    r_src = synthgen.procedural_source(rng, side, side)
    return synthgen.compose_views(t_src, r_src, rng, gen_cfg)


@pytest.fixture(scope="session")
def benchmark_stats():
    """Per-pair numbers for A1/A2/A3/A5 from one pass over the benchmark.

    Each pair gets a reflection-free twin (same seed and geometry, alpha
    pinned to 1) so alignment quality can be compared with and without
    reflection contamination.
    """
    cfg = _benchmark_config()
    gen = cfg.gen
    twin_gen = dataclasses.replace(gen, alpha_range=(1.0, 1.0))
    rows = []
    for i in range(gen.n_samples):
        pair = _build_pair(i, gen)
        seed = synthgen.split_seed(gen.master_seed, i)
        alpha = np.float32(pair.params["alpha"])
        gain = np.float32(pair.params["spot_gain"])
        row = {}

        t0 = time.perf_counter()
        resid = 0.0
        for img, t, r in ((pair.I1, pair.T1, pair.R1), (pair.I2, pair.T2, pair.R2)):
            pre = alpha * t + (1 - alpha) * r
            pre += pair.spots[:, :, None] * (1 - alpha) * gain
            off_clamp = (pre > 0.0) & (pre < 1.0)
            resid = max(resid, float(np.abs(img - pre)[off_clamp].max()))
        row["formation_residual"] = resid
        row["formation_seconds"] = time.perf_counter() - t0

        warped, valid = backward_warp(pair.T2, pair.F12)
        keep = (valid > 0.5) & ~(pair.occl12 > 0.5)
        row["warp_mae"] = float(np.abs(pair.T1 - warped)[keep].mean())

        t0 = time.perf_counter()
        fres = estimate_flow(
            pair.I1, pair.I2, rng=np.random.default_rng(synthgen.split_seed(seed, 1))
        )
        row["flow_seconds"] = time.perf_counter() - t0
        row["epe"] = epe(fres.flow, pair.F12)[0]

        i21, warp_valid = backward_warp(pair.I2, fres.flow)
        est, _ = synthesize_transmission(pair.I1, i21, warp_valid, cfg.dereflect)
        report = evaluate_sample(pair, fres.flow, est)
        row["psnr"] = report.psnr
        row["input_psnr"] = report.input_psnr
        target = alpha * pair.T1
        row["abs_est"] = float(np.abs(est - target).mean())
        row["abs_input"] = float(np.abs(pair.I1 - target).mean())

        twin = _build_pair(i, twin_gen)
        tres = estimate_flow(
            twin.I1, twin.I2, rng=np.random.default_rng(synthgen.split_seed(seed, 1))
        )
        row["twin_epe"] = epe(tres.flow, twin.F12)[0]
        rows.append(row)
    return rows


def test_a1_formation_identity(benchmark_stats):
    worst = max(r["formation_residual"] for r in benchmark_stats)
    slowest = max(r["formation_seconds"] for r in benchmark_stats)
    ok = worst < 1e-6 and slowest < 1.0
    _verdict(
        "A1 formation identity",
        ok,
        f"max off-clamp residual {worst:.2e}, max check time {slowest:.2f}s",
    )


def test_a2_ground_truth_warp_consistency(benchmark_stats):
    worst = max(r["warp_mae"] for r in benchmark_stats)

    # integer translation: bilinear weights collapse to copies, zero error
    big = make_texture(np.random.default_rng(7), 160, 200, 3)
    dx, dy = 4, -3
    t1 = big[20:120, 30:150]
    t2 = big[20 - dy : 120 - dy, 30 - dx : 150 - dx]
    flow = np.zeros((100, 120, 2), np.float32)
    flow[:, :, 0] = dx
    flow[:, :, 1] = dy
    warped, valid = backward_warp(t2, flow)
    exact = float(np.abs(t1 - warped)[valid > 0.5].max())

    ok = worst < 0.02 and exact == 0.0
    _verdict(
        "A2 warp consistency",
        ok,
        f"max unoccluded MAE {worst:.4f}, integer-shift residual {exact:.1e}",
    )


def test_a3_reflection_robust_alignment(benchmark_stats):
    e = np.array([r["epe"] for r in benchmark_stats])
    tw = np.array([r["twin_epe"] for r in benchmark_stats])
    frac = float((e < 0.5).mean())
    ratio = float(e.mean() / tw.mean())
    slowest = max(r["flow_seconds"] for r in benchmark_stats)
    ok = frac >= 0.9 and ratio <= 2.0 and slowest < 5.0
    _verdict(
        "A3 reflection-robust alignment",
        ok,
        f"EPE<0.5px on {frac:.0%} of pairs, contaminated/twin ratio {ratio:.2f}, "
        f"max time {slowest:.1f}s",
    )


def test_a3b_two_motion_separation():
    rng = np.random.default_rng(42)
    t_layer = make_texture(rng, 220, 260)
    r_layer = make_texture(rng, 220, 260)
    m = 16
    t1 = np.ascontiguousarray(t_layer[m : m + 180, m : m + 220])
    t2 = np.ascontiguousarray(t_layer[m : m + 180, m - 3 : m - 3 + 220])
    r1 = np.ascontiguousarray(r_layer[m : m + 180, m : m + 220])
    r2 = np.ascontiguousarray(r_layer[m : m + 180, m + 3 : m + 3 + 220])
    img1 = (0.7 * t1 + 0.3 * r1).astype(np.float32)
    img2 = (0.7 * t2 + 0.3 * r2).astype(np.float32)

    res = estimate_flow(img1, img2, rng=np.random.default_rng(3))
    err = np.sqrt((res.flow[:, :, 0] - 3.0) ** 2 + res.flow[:, :, 1] ** 2)
    gy, gx = np.gradient(t1.astype(np.float64))
    textured = np.sqrt(gx**2 + gy**2) > 0.03
    mean_err = float(err[textured].mean())
    ok = textured.mean() > 0.2 and mean_err < 1.0
    _verdict(
        "A3b two-motion separation",
        ok,
        f"textured-region EPE {mean_err:.2f}px vs transmission motion",
    )


def test_a4_metric_protocol():
    gen = dataclasses.replace(_benchmark_config().gen, out_size=96, margin=24)
    pair = _build_pair(0, gen)

    f = pair.F12.astype(np.float64)
    analytic = float(np.sqrt((f**2).sum(axis=2)).mean())
    zeros_err = abs(epe(np.zeros_like(pair.F12), pair.F12)[0] - analytic)

    gt = make_texture(np.random.default_rng(11), 64, 80, 3).astype(np.float64)
    s, b, _ = calibrate_gain_bias((gt - 0.1) / 0.8, gt)
    planted_err = max(abs(s - 0.8), abs(b - 0.1))

    base = evaluate_sample(pair, pair.F12, pair.I1)
    mapped_est = (0.7 * pair.I1 + 0.05).astype(np.float32)
    mapped = evaluate_sample(pair, pair.F12, mapped_est)
    affine_err = abs(base.psnr - mapped.psnr)

    x = make_texture(np.random.default_rng(12), 48, 64, 1)
    ssim_err = abs(ssim(x, x) - 1.0)

    ok = (
        zeros_err < 1e-6
        and planted_err < 1e-9
        and affine_err < 1e-6
        and ssim_err < 1e-9
    )
    _verdict(
        "A4 metric protocol",
        ok,
        f"zeros-flow row {zeros_err:.1e}, planted gain/bias {planted_err:.1e}, "
        f"affine PSNR drift {affine_err:.1e} dB, SSIM self-distance {ssim_err:.1e}",
    )


def test_a5_dereflection_improvement(benchmark_stats):
    med = float(np.median([r["psnr"] for r in benchmark_stats]))
    med_in = float(np.median([r["input_psnr"] for r in benchmark_stats]))
    frac = float(np.mean([r["abs_est"] <= r["abs_input"] for r in benchmark_stats]))
    ok = med >= med_in + 1.0 and frac >= 0.9
    _verdict(
        "A5 dereflection improvement",
        ok,
        f"median calibrated PSNR {med:.2f} vs input {med_in:.2f} "
        f"(+{med - med_in:.2f} dB), abs error improved on {frac:.0%} of pairs",
    )


def test_a6_gradient_reintegration():
    img = make_texture(np.random.default_rng(6), 512, 512, 1).astype(np.float64)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    res = poisson_reconstruct(gx, gy, anchor_image=np.zeros_like(img), anchor_weight=0.0)
    aligned = res.image - res.image.mean() + img.mean()
    rmse = float(np.sqrt(np.mean((aligned - img) ** 2)))
    ok = rmse < 1e-3 and res.converged and res.iterations <= 2000 and res.residual < 1e-6
    _verdict(
        "A6 gradient reintegration",
        ok,
        f"RMSE {rmse:.1e}, {res.iterations} CG iterations, "
        f"relative residual {res.residual:.1e}",
    )


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_a7_determinism_and_formats(tmp_path):
    digests = []
    for workers in (1, 4):
        root = tmp_path / f"w{workers}"
        cfg = {
            "master_seed": 11,
            "workers": workers,
            "out": str(root),
            "gen": {
                "out_size": 64,
                "margin": 16,
                "n_samples": 3,
                "source_mixture": [0.0, 0.0, 1.0],
            },
            "dereflect": {"kind": "min-composite"},
        }
        cfg_path = tmp_path / f"cfg_w{workers}.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["bench", "--config", str(cfg_path)]) == 0
        digests.append(_tree_digest(root))
    same_tree = digests[0] == digests[1]

    rng = np.random.default_rng(3)
    img = rng.standard_normal((37, 23, 3)).astype(np.float32)
    write_image(img, tmp_path / "x.pfm")
    pfm_exact = bool(np.array_equal(read_image(tmp_path / "x.pfm"), img))
    flo = rng.standard_normal((19, 31, 2)).astype(np.float32)
    write_flo(flo, tmp_path / "y.flo")
    flo_exact = bool(np.array_equal(read_flo(tmp_path / "y.flo")[0], flo))

    ok = same_tree and pfm_exact and flo_exact
    _verdict(
        "A7 determinism and formats",
        ok,
        f"worker-count trees {'identical' if same_tree else 'DIFFER'}, "
        f"PFM bit-exact {pfm_exact}, FLO bit-exact {flo_exact}",
    )
