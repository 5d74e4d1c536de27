"""Independent reference implementations used to pin expected test values.

Everything here is written loop-first and dumb on purpose: these functions
trade speed for obviousness so the fast vectorized library code can be
checked against them on small inputs.
"""

from __future__ import annotations

import numpy as np


def oracle_bilinear(img: np.ndarray, x: float, y: float) -> tuple[np.ndarray, bool]:
    """Direct 4-tap weight expansion with taps clamped to the raster."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - x0, y - y0
    acc = np.zeros(img.shape[2:] or (1,), dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = min(max(x0 + dx, 0), w - 1)
            yi = min(max(y0 + dy, 0), h - 1)
            acc = acc + wy * wx * np.atleast_1d(img[yi, xi])
    valid = (0 <= x <= w - 1) and (0 <= y <= h - 1)
    return (acc if img.ndim == 3 else acc[0]), valid


def oracle_backward_warp(img: np.ndarray, flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel loop over oracle_bilinear; clamp policy values."""
    img = np.asarray(img, dtype=np.float64)
    h, w = flow.shape[:2]
    out = np.zeros((h, w) + img.shape[2:], dtype=np.float64)
    valid = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            v, ok = oracle_bilinear(img, x + float(flow[y, x, 0]), y + float(flow[y, x, 1]))
            out[y, x] = v
            valid[y, x] = 1.0 if ok else 0.0
    return out, valid


def oracle_project(H: np.ndarray, x: float, y: float) -> tuple[float, float]:
    H = np.asarray(H, dtype=np.float64)
    d = H[2, 0] * x + H[2, 1] * y + H[2, 2]
    return (
        (H[0, 0] * x + H[0, 1] * y + H[0, 2]) / d,
        (H[1, 0] * x + H[1, 1] * y + H[1, 2]) / d,
    )


def oracle_lower_median(values) -> float:
    """Median as the lower of the two middle elements for even counts."""
    s = sorted(float(v) for v in values)
    if not s:
        raise ValueError("empty")
    return s[(len(s) - 1) // 2]


def oracle_epe(flow_est: np.ndarray, flow_gt: np.ndarray) -> tuple[float, float]:
    """(mean, lower-median) endpoint error, plain loops."""
    errs = []
    h, w = flow_gt.shape[:2]
    for y in range(h):
        for x in range(w):
            du = float(flow_est[y, x, 0]) - float(flow_gt[y, x, 0])
            dv = float(flow_est[y, x, 1]) - float(flow_gt[y, x, 1])
            errs.append((du * du + dv * dv) ** 0.5)
    return sum(errs) / len(errs), oracle_lower_median(errs)


def oracle_gain_bias(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Least-squares (s, b) for s*pred + b ~ gt via an explicit design matrix."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=np.float64).ravel()
    A = np.stack([p, np.ones_like(p)], axis=1)
    sol, *_ = np.linalg.lstsq(A, g, rcond=None)
    return float(sol[0]), float(sol[1])


def oracle_psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return 99.0
    return max(0.0, min(99.0, 10.0 * np.log10(peak * peak / mse)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    g = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            g[i, j] = np.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma * sigma))
    return g / g.sum()


def oracle_ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian sigma 1.5, valid window positions only."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3:
        return float(np.mean([oracle_ssim(a[:, :, c], b[:, :, c], peak) for c in range(a.shape[2])]))
    win = _gaussian_window()
    size = win.shape[0]
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    h, w = a.shape
    vals = []
    for y in range(h - size + 1):
        for x in range(w - size + 1):
            pa = a[y : y + size, x : x + size]
            pb = b[y : y + size, x : x + size]
            mu_a = float((win * pa).sum())
            mu_b = float((win * pb).sum())
            var_a = float((win * pa * pa).sum()) - mu_a * mu_a
            var_b = float((win * pb * pb).sum()) - mu_b * mu_b
            cov = float((win * pa * pb).sum()) - mu_a * mu_b
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(vals))


def forward_diff(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with Neumann (zero) last column/row."""
    img = np.asarray(img, dtype=np.float64)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    return gx, gy


def oracle_poisson_dense(
    gx: np.ndarray, gy: np.ndarray, anchor: np.ndarray, lam: float
) -> np.ndarray:
    """Dense normal-equations solve of min ||grad u - g||^2 + lam ||u - anchor||^2."""
    h, w = np.asarray(gx).shape
    n = h * w

    def idx(y, x):
        return y * w + x

    rows = []
    rhs = []
    for y in range(h):
        for x in range(w - 1):
            r = np.zeros(n)
            r[idx(y, x + 1)] = 1.0
            r[idx(y, x)] = -1.0
            rows.append(r)
            rhs.append(float(gx[y, x]))
    for y in range(h - 1):
        for x in range(w):
            r = np.zeros(n)
            r[idx(y + 1, x)] = 1.0
            r[idx(y, x)] = -1.0
            rows.append(r)
            rhs.append(float(gy[y, x]))
    A = np.asarray(rows)
    b = np.asarray(rhs)
    lhs = A.T @ A + lam * np.eye(n)
    rv = A.T @ b + lam * np.asarray(anchor, dtype=np.float64).ravel()
    if lam == 0.0:
        u, *_ = np.linalg.lstsq(lhs, rv, rcond=None)
        u = u - u.mean() + float(np.asarray(anchor, dtype=np.float64).mean())
    else:
        u = np.linalg.solve(lhs, rv)
    return u.reshape(h, w)


def oracle_zncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-mean normalized cross correlation of two equal-size patches."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den == 0:
        return 0.0
    return float((a * b).sum() / den)
