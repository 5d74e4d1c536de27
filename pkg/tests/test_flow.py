import numpy as np
import pytest

from dualview import flow, warp

from conftest import make_texture


def _subpixel_pair(img, dx, dy):
    """img2 such that content at p in img carries to p + (dx, dy) in img2."""
    f = np.zeros(img.shape[:2] + (2,), dtype=np.float32)
    f[:, :, 0] = -dx
    f[:, :, 1] = -dy
    img2, _ = warp.backward_warp(img, f)
    return img2


def _crop_pair(big, h, w, tx, ty, margin=16):
    img1 = big[margin : margin + h, margin : margin + w]
    img2 = big[margin - ty : margin - ty + h, margin - tx : margin - tx + w]
    return np.ascontiguousarray(img1), np.ascontiguousarray(img2)


def test_build_pyramid_shapes(textured_gray):
    pyr = flow.build_pyramid(textured_gray, 3)
    assert len(pyr) == 3
    assert pyr[0].shape == (96, 128)
    assert pyr[1].shape == (48, 64)
    assert pyr[2].shape == (24, 32)


def test_build_pyramid_too_deep_raises():
    img = np.zeros((32, 32), dtype=np.float32)
    flow.build_pyramid(img, 3)  # 32 -> 16 -> 8 is legal
    with pytest.raises(ValueError, match="below"):
        flow.build_pyramid(img, 4)


def test_build_pyramid_constant_preserved():
    img = np.full((40, 40), 0.63, dtype=np.float32)
    pyr = flow.build_pyramid(img, 3)
    for level in pyr:
        assert np.allclose(level, 0.63, atol=1e-6)


def test_build_pyramid_bad_args(textured_gray):
    with pytest.raises(ValueError):
        flow.build_pyramid(textured_gray, 0)
    with pytest.raises(ValueError):
        flow.build_pyramid(textured_gray, 2, scale_factor=1.5)


def test_lk_update_matches_hand_solved_normal_equations(rng):
    img1 = make_texture(rng, 33, 33)
    img2 = _subpixel_pair(img1, 0.3, -0.2)
    p = flow.FlowParams(
        pyramid_levels=1,
        iterations_per_level=1,
        window_radius=5,
        robust_threshold=1e9,   # plain least squares
        smoothness_weight=0.0,
    )
    got = flow.refine_flow(img1, img2, np.zeros((33, 33, 2), dtype=np.float32), p)

    # independent one-window solve at the center pixel
    gy, gx = np.gradient(img2.astype(np.float64))
    r = img2.astype(np.float64) - img1.astype(np.float64)
    sl = np.s_[16 - 5 : 16 + 6, 16 - 5 : 16 + 6]
    A = np.asarray(
        [
            [(gx[sl] ** 2).sum(), (gx[sl] * gy[sl]).sum()],
            [(gx[sl] * gy[sl]).sum(), (gy[sl] ** 2).sum()],
        ]
    )
    b = np.asarray([-(gx[sl] * r[sl]).sum(), -(gy[sl] * r[sl]).sum()])
    want = np.linalg.solve(A, b)
    assert got[16, 16, 0] == pytest.approx(want[0], abs=1e-3)
    assert got[16, 16, 1] == pytest.approx(want[1], abs=1e-3)


def test_refine_recovers_subpixel_translation(rng):
    # single-level, no init: the field average must land on the true shift
    # (sign or step-scale bugs miss by >= 0.4); per-pixel spread in flat
    # patches is inherent to windowed LK, so the dispersion bound is looser
    img1 = make_texture(rng, 96, 120)
    img2 = _subpixel_pair(img1, 0.4, -0.25)
    p = flow.FlowParams(pyramid_levels=1, iterations_per_level=3)
    got = flow.refine_flow(img1, img2, np.zeros((96, 120, 2), dtype=np.float32), p)
    inner = got[8:-8, 8:-8]
    mean_vec = inner.reshape(-1, 2).mean(axis=0)
    assert float(np.hypot(mean_vec[0] - 0.4, mean_vec[1] + 0.25)) < 0.08
    err = np.sqrt((inner[:, :, 0] - 0.4) ** 2 + (inner[:, :, 1] + 0.25) ** 2)
    assert float(err.mean()) < 0.2


def test_refine_integer_translation_three_levels(rng):
    big = make_texture(rng, 200, 240)
    img1, img2 = _crop_pair(big, 160, 200, 2, 1)
    p = flow.FlowParams(pyramid_levels=3, iterations_per_level=6)
    got = flow.refine_flow(img1, img2, np.zeros((160, 200, 2), dtype=np.float32), p)
    err = np.sqrt((got[:, :, 0] - 2.0) ** 2 + (got[:, :, 1] - 1.0) ** 2)
    assert float(err.mean()) < 0.2


def test_refine_rejects_bad_shapes(textured_gray):
    with pytest.raises(ValueError, match="init_flow"):
        flow.refine_flow(textured_gray, textured_gray, np.zeros((4, 4, 2), np.float32))
    with pytest.raises(ValueError, match="disagree"):
        flow.refine_flow(
            textured_gray,
            textured_gray[:-4],
            np.zeros(textured_gray.shape + (2,), np.float32),
        )


def test_estimate_flow_identity(textured_rgb):
    res = flow.estimate_flow(textured_rgb, textured_rgb, rng=np.random.default_rng(0))
    assert not res.unreliable
    mag = np.sqrt((res.flow**2).sum(axis=2))
    assert float(mag.mean()) < 0.05


def test_estimate_flow_homography_pair(rng):
    img1 = make_texture(rng, 160, 200)
    t = np.deg2rad(0.8)
    c, s = np.cos(t), np.sin(t)
    cx, cy = 100, 80
    H = (
        np.asarray([[1, 0, cx + 4.0], [0, 1, cy - 2.0], [0, 0, 1.0]])
        @ np.asarray([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        @ np.asarray([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    )
    flow_inv = warp.homography_to_flow(np.linalg.inv(H), img1.shape[:2])
    img2, _ = warp.backward_warp(img1, flow_inv)
    gt = warp.homography_to_flow(H, img1.shape[:2])
    res = flow.estimate_flow(img1, img2, rng=np.random.default_rng(1))
    err = np.sqrt(((res.flow - gt) ** 2).sum(axis=2))
    assert float(err.mean()) < 0.3


def test_estimate_flow_translation_equivariance(rng):
    big = make_texture(rng, 220, 260)
    img1, img2 = _crop_pair(big, 180, 220, 5, 3)
    r1 = flow.estimate_flow(img1, img2, rng=np.random.default_rng(2))
    dy, dx = 12, 17
    r2 = flow.estimate_flow(
        np.roll(img1, (dy, dx), axis=(0, 1)),
        np.roll(img2, (dy, dx), axis=(0, 1)),
        rng=np.random.default_rng(2),
    )
    a = r1.flow[30:140, 30:170]
    b = r2.flow[30 + dy : 140 + dy, 30 + dx : 170 + dx]
    diff = np.sqrt(((a - b) ** 2).sum(axis=2))
    assert float(diff.mean()) < 0.1


def test_estimate_flow_unreliable_on_flat():
    img = np.full((64, 64), 0.5, dtype=np.float32)
    res = flow.estimate_flow(img, img, rng=np.random.default_rng(0))
    assert res.unreliable
    assert np.all(np.isfinite(res.flow))
    assert float(np.abs(res.flow).max()) < 0.5


def test_estimate_flow_two_layer_blend(rng):
    t_layer = make_texture(rng, 220, 260)
    r_layer = make_texture(rng, 220, 260)
    t1, t2 = _crop_pair(t_layer, 180, 220, 3, 0)
    r1, r2 = _crop_pair(r_layer, 180, 220, -3, 0)
    img1 = (0.7 * t1 + 0.3 * r1).astype(np.float32)
    img2 = (0.7 * t2 + 0.3 * r2).astype(np.float32)
    res = flow.estimate_flow(img1, img2, rng=np.random.default_rng(3))
    err = np.sqrt((res.flow[:, :, 0] - 3.0) ** 2 + res.flow[:, :, 1] ** 2)
    # judge on transmission-textured pixels; flat spots may follow the reflection
    gy, gx = np.gradient(t1.astype(np.float64))
    textured = np.sqrt(gx**2 + gy**2) > 0.03
    assert textured.mean() > 0.2
    assert float(err[textured].mean()) < 1.0


def test_refine_flow_finite_on_noise(rng):
    img1 = rng.random((48, 52)).astype(np.float32)
    img2 = rng.random((48, 52)).astype(np.float32)
    got = flow.refine_flow(img1, img2, np.zeros((48, 52, 2), np.float32))
    assert np.all(np.isfinite(got))
