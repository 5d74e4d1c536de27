"""Bilinear resampling, backward warping, and homography-induced flow.

Pixel coordinates are (x, y) with x = column, y = row, origin at the center
of the top-left pixel.  A sampling point is inside the raster hull when
0 <= x <= W-1 and 0 <= y <= H-1; the validity masks returned here mark
exactly that, independent of the border policy used for values.
"""

from __future__ import annotations

import numpy as np

CLAMP = "clamp"
MARK_INVALID = "mark-invalid"
_POLICIES = (CLAMP, MARK_INVALID)


def _gather_bilinear(
    img: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Sample img at float coords with clamped taps; also return in-hull mask.

    img may be (H, W) or (H, W, C) for any C.  Output value shape matches
    the coordinate arrays (plus a trailing C axis for multichannel input).
    """
    h, w = img.shape[:2]
    xs = np.asarray(xs, dtype=np.float32)
    ys = np.asarray(ys, dtype=np.float32)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)

    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0r = x0.astype(np.int64)
    y0r = y0.astype(np.int64)
    x0i = np.clip(x0r, 0, w - 1)
    x1i = np.clip(x0r + 1, 0, w - 1)
    y0i = np.clip(y0r, 0, h - 1)
    y1i = np.clip(y0r + 1, 0, h - 1)

    flat = img.reshape(h * w, -1)
    i00 = flat[y0i * w + x0i]
    i10 = flat[y0i * w + x1i]
    i01 = flat[y1i * w + x0i]
    i11 = flat[y1i * w + x1i]

    wx = fx[..., None]
    wy = fy[..., None]
    top = i00 * (1.0 - wx) + i10 * wx
    bot = i01 * (1.0 - wx) + i11 * wx
    out = top * (1.0 - wy) + bot * wy
    if img.ndim == 2:
        out = out[..., 0]
    else:
        out = out.reshape(xs.shape + (img.shape[2],))
    return out.astype(np.float32), inside


def bilinear_sample(
    img: np.ndarray, x: float, y: float, policy: str = CLAMP
) -> tuple[np.ndarray | float, bool]:
    """Sample one point; returns (value, valid).

    Under "clamp" the taps clamp to the border, so out-of-range points take
    border values.  Under "mark-invalid" an out-of-hull point returns 0.
    valid reports in-hull membership for both policies.
    """
    if policy not in _POLICIES:
        raise ValueError(f"unknown border policy {policy!r}")
    img = np.asarray(img, dtype=np.float32)
    val, inside = _gather_bilinear(img, np.asarray([x]), np.asarray([y]))
    ok = bool(inside[0])
    v = val[0]
    if policy == MARK_INVALID and not ok:
        v = np.zeros_like(v)
    if img.ndim == 2:
        return float(v), ok
    return v, ok


def backward_warp(
    img2: np.ndarray, flow12: np.ndarray, policy: str = CLAMP
) -> tuple[np.ndarray, np.ndarray]:
    """Warp img2 into view 1: out[p] = img2(p + flow12[p]).

    Args:
        img2: (H, W) or (H, W, C) raster (flow fields are fine as C=2).
        flow12: (H, W, 2) flow in pixels, [..., 0] = u, [..., 1] = v.
        policy: border handling for values; see bilinear_sample.

    Returns:
        (warped, valid) with valid = 1.0 where p + flow12[p] stays in hull.
    """
    if policy not in _POLICIES:
        raise ValueError(f"unknown border policy {policy!r}")
    img2 = np.asarray(img2, dtype=np.float32)
    flow12 = np.asarray(flow12, dtype=np.float32)
    h, w = flow12.shape[:2]
    if img2.shape[:2] != (h, w):
        raise ValueError(f"image {img2.shape} and flow {flow12.shape} disagree")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    sx = xs + flow12[:, :, 0]
    sy = ys + flow12[:, :, 1]
    out, inside = _gather_bilinear(img2, sx, sy)
    if policy == MARK_INVALID:
        out = np.where(inside if img2.ndim == 2 else inside[..., None], out, np.float32(0.0))
    return out, inside.astype(np.float32)


def normalize_homography(H: np.ndarray) -> np.ndarray:
    """Scale a 3x3 homography so h33 = 1; reject singular input."""
    H = np.asarray(H, dtype=np.float64)
    if H.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {H.shape}")
    if abs(H[2, 2]) <= 1e-12:
        raise ValueError("homography has h33 ~ 0, cannot normalize")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) <= 1e-12:
        raise ValueError("homography is singular")
    return H


def project_points(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a homography to (N, 2) points; returns (N, 2) float64."""
    H = np.asarray(H, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    ones = np.ones((pts.shape[0], 1))
    ph = np.hstack([pts, ones]) @ H.T
    wcoord = ph[:, 2]
    if np.any(np.abs(wcoord) < 1e-8):
        raise ValueError("homography projects points to infinity")
    return ph[:, :2] / wcoord[:, None]


def homography_to_flow(H: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Dense flow induced by a homography: flow[p] = project(H, p) - p.

    Args:
        H: 3x3 invertible homography acting on (x, y) pixel coords.
        shape: (height, width) of the field.

    Returns:
        (H, W, 2) float32 flow.
    """
    H = normalize_homography(H)
    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1:
        raise ValueError(f"bad flow field shape {shape}")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    wcoord = H[2, 0] * xs + H[2, 1] * ys + H[2, 2]
    if np.any(np.abs(wcoord) < 1e-8):
        raise ValueError("homography projects raster points to infinity")
    px = (H[0, 0] * xs + H[0, 1] * ys + H[0, 2]) / wcoord
    py = (H[1, 0] * xs + H[1, 1] * ys + H[1, 2]) / wcoord
    return np.stack([px - xs, py - ys], axis=2).astype(np.float32)


def occlusion_mask(
    flow12: np.ndarray,
    flow21: np.ndarray,
    eps_abs: float = 0.5,
    eps_rel: float = 0.01,
) -> np.ndarray:
    """Forward-backward occlusion check.

    Pixel p of view 1 is occluded iff |flow12(p) + flow21(p + flow12(p))|
    exceeds eps_abs + eps_rel * (|flow12(p)| + |flow21(p + flow12(p))|),
    with flow21 sampled bilinearly; off-raster lookups count as occluded.

    Returns:
        (H, W) float32 mask, 1.0 = occluded.
    """
    flow12 = np.asarray(flow12, dtype=np.float32)
    flow21 = np.asarray(flow21, dtype=np.float32)
    if flow12.ndim != 3 or flow12.shape[2] != 2 or flow21.shape != flow12.shape:
        raise ValueError(
            f"flow fields must share (H, W, 2) shape, got {flow12.shape} vs {flow21.shape}"
        )
    bwd, inside = backward_warp(flow21, flow12, policy=CLAMP)
    cyc = np.sqrt(((flow12 + bwd) ** 2).sum(axis=2))
    mag = np.sqrt((flow12**2).sum(axis=2)) + np.sqrt((bwd**2).sum(axis=2))
    occluded = (cyc > eps_abs + eps_rel * mag) | (inside < 0.5)
    return occluded.astype(np.float32)
