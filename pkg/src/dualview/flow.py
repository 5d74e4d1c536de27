"""Dense reflection-tolerant flow: coarse-to-fine robust Lucas-Kanade.

The estimator initializes from the dominant homography (reflections are
outliers to it), then refines per pyramid level with windowed least
squares whose residuals are reweighted by a Geman-McClure kernel, so
pixels disagreeing with the local motion (reflection texture, occlusions)
lose influence instead of dragging the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, uniform_filter

from .align import AlignDiagnostics, AlignParams, estimate_dominant_homography
from .imgcore import to_gray
from .warp import _gather_bilinear, backward_warp, homography_to_flow

_MIN_PYRAMID_SIDE = 8
_EIG_GATE = 1e-6   # structure-tensor min eigenvalue below this freezes the pixel
_MAX_STEP = 1.0    # per-iteration update clip, px
_ANCHOR_WEIGHT = 0.05  # pull toward the level's starting field (init chain)


@dataclass
class FlowParams:
    pyramid_levels: int = 3
    scale_factor: float = 0.5
    iterations_per_level: int = 4
    window_radius: int = 5
    robust_threshold: float = 0.1
    smoothness_weight: float = 1.5


@dataclass
class FlowResult:
    flow: np.ndarray
    unreliable: bool = False
    align: AlignDiagnostics = field(default_factory=AlignDiagnostics)
    init_from_homography: bool = True


def _resample(img: np.ndarray, shape: tuple[int, int], factor: float) -> np.ndarray:
    """Resize by bilinear sampling: out[q] = img(q * factor)."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    out, _ = _gather_bilinear(img, xs * factor, ys * factor)
    return out


def build_pyramid(
    img: np.ndarray, levels: int, scale_factor: float = 0.5
) -> list[np.ndarray]:
    """Gaussian-blur + bilinear-downsample pyramid, finest level first.

    Raises:
        ValueError: if any requested level would fall below 8 px on a side.
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if not 0.0 < scale_factor < 1.0:
        raise ValueError(f"scale_factor must be in (0, 1), got {scale_factor}")
    img = np.asarray(img, dtype=np.float32)
    pyr = [img]
    for _ in range(1, levels):
        prev = pyr[-1]
        blurred = gaussian_filter(prev, sigma=1.0)
        nh = int(round(prev.shape[0] * scale_factor))
        nw = int(round(prev.shape[1] * scale_factor))
        if min(nh, nw) < _MIN_PYRAMID_SIDE:
            raise ValueError(
                f"pyramid level would be {nh}x{nw}, below {_MIN_PYRAMID_SIDE} px"
            )
        # coarse pixel q reads the blurred finer level at q / scale_factor
        pyr.append(_resample(blurred, (nh, nw), 1.0 / scale_factor))
    return pyr


def _lk_update(
    i1: np.ndarray,
    i2: np.ndarray,
    flow: np.ndarray,
    anchor: np.ndarray,
    lam: float,
    p: FlowParams,
) -> np.ndarray:
    """One robust windowed least-squares update of flow on a single level.

    Solves, per pixel, (A + lam*I) u = b + lam*(anchor - flow) where A and b
    are the reweighted windowed normal equations. The anchor term damps drift
    where image evidence is weak or contradictory (flat patches, reflection
    texture), pulling toward the level's starting field instead of letting
    noise accumulate across iterations.
    """
    warped, inside = backward_warp(i2, flow)
    r = warped - i1
    gy, gx = np.gradient(warped)
    w = 1.0 / (1.0 + (r / p.robust_threshold) ** 2)
    w = w * inside  # border-extended samples carry no data

    size = 2 * p.window_radius + 1
    d1 = anchor[:, :, 0] - flow[:, :, 0]
    d2 = anchor[:, :, 1] - flow[:, :, 1]
    a11 = uniform_filter(w * gx * gx, size) + lam
    a12 = uniform_filter(w * gx * gy, size)
    a22 = uniform_filter(w * gy * gy, size) + lam
    b1 = -uniform_filter(w * gx * r, size) + lam * d1
    b2 = -uniform_filter(w * gy * r, size) + lam * d2

    det = a11 * a22 - a12 * a12
    trace = a11 + a22
    eig_min = 0.5 * (trace - np.sqrt(np.maximum((a11 - a22) ** 2 + 4 * a12 * a12, 0.0)))
    ok = (eig_min > _EIG_GATE) & (np.abs(det) > 1e-18)
    safe_det = np.where(ok, det, 1.0)
    # gated pixels step straight toward the anchor (keep the init chain)
    du = np.where(ok, (a22 * b1 - a12 * b2) / safe_det, d1)
    dv = np.where(ok, (a11 * b2 - a12 * b1) / safe_det, d2)
    du = np.clip(du, -_MAX_STEP, _MAX_STEP)
    dv = np.clip(dv, -_MAX_STEP, _MAX_STEP)
    if p.smoothness_weight > 0.0:
        du = gaussian_filter(du, p.smoothness_weight)
        dv = gaussian_filter(dv, p.smoothness_weight)
    return np.stack([du, dv], axis=2).astype(np.float32)


def refine_flow(
    img1: np.ndarray,
    img2: np.ndarray,
    init_flow: np.ndarray,
    params: FlowParams | None = None,
    anchor_weight: float = 0.0,
) -> np.ndarray:
    """Coarse-to-fine robust LK refinement of init_flow.

    Args:
        img1, img2: same-shape images; color is reduced to luma.
        init_flow: (H, W, 2) starting field at full resolution.
        anchor_weight: strength of the pull toward each level's starting
            field. Zero leaves updates driven by image evidence alone; a
            positive value biases toward the init chain, appropriate when
            init_flow comes from a trusted parametric motion.

    Returns:
        (H, W, 2) float32 refined flow.
    """
    p = params or FlowParams()
    g1 = to_gray(img1).astype(np.float32)
    g2 = to_gray(img2).astype(np.float32)
    if g1.shape != g2.shape:
        raise ValueError(f"image shapes disagree: {g1.shape} vs {g2.shape}")
    init_flow = np.asarray(init_flow, dtype=np.float32)
    if init_flow.shape != g1.shape + (2,):
        raise ValueError(f"init_flow shape {init_flow.shape} does not match {g1.shape}")
    pyr1 = build_pyramid(g1, p.pyramid_levels, p.scale_factor)
    pyr2 = build_pyramid(g2, p.pyramid_levels, p.scale_factor)

    # seed the coarsest level with the downscaled init
    coarse_scale = p.scale_factor ** (p.pyramid_levels - 1)
    shape_c = pyr1[-1].shape
    flow = np.stack(
        [
            _resample(init_flow[:, :, 0], shape_c, 1.0 / coarse_scale) * coarse_scale,
            _resample(init_flow[:, :, 1], shape_c, 1.0 / coarse_scale) * coarse_scale,
        ],
        axis=2,
    )
    for level in range(p.pyramid_levels - 1, -1, -1):
        i1, i2 = pyr1[level], pyr2[level]
        if flow.shape[:2] != i1.shape:
            # finer pixel q reads the coarser field at q * scale_factor,
            # and displacement magnitudes grow by 1 / scale_factor
            flow = np.stack(
                [
                    _resample(flow[:, :, 0], i1.shape, p.scale_factor) / p.scale_factor,
                    _resample(flow[:, :, 1], i1.shape, p.scale_factor) / p.scale_factor,
                ],
                axis=2,
            )
        anchor = flow  # level-start field, descended from the init
        for _ in range(p.iterations_per_level):
            flow = flow + _lk_update(i1, i2, flow, anchor, anchor_weight, p)
    return flow.astype(np.float32)


def estimate_flow(
    img1: np.ndarray,
    img2: np.ndarray,
    params: FlowParams | None = None,
    align_params: AlignParams | None = None,
    rng: np.random.Generator | None = None,
) -> FlowResult:
    """Dominant-homography initialization followed by dense robust refinement.

    Never aborts on weak alignment: an unreliable homography falls back to
    the best-effort field (identity at worst) and the result carries the
    warning flag.
    """
    p = params or FlowParams()
    ares = estimate_dominant_homography(img1, img2, align_params, rng)
    shape = to_gray(img1).shape
    init = homography_to_flow(ares.H, shape)
    # the homography is the dominant parametric motion; bias refinement
    # toward it so minority (reflection) texture cannot drag weak regions
    flow = refine_flow(img1, img2, init, p, anchor_weight=_ANCHOR_WEIGHT)
    return FlowResult(
        flow=flow,
        unreliable=not ares.diagnostics.reliable,
        align=ares.diagnostics,
        init_from_homography=True,
    )
