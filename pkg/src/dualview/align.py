"""Reflection-robust dominant-motion estimation.

The dominant homography between two views is found the classical way:
Harris corners on view 1, ZNCC patch matching into view 2 with a
left-right consistency check, then RANSAC over 4-match samples with a
DLT refit on the consensus set.  Reflections contribute a minority of
matches moving with their own motion; the consensus step ignores them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

from .imgcore import to_gray
from .warp import normalize_homography, project_points


class DegenerateGeometryError(ValueError):
    """Raised when point sets cannot support a homography fit."""


@dataclass
class AlignParams:
    max_corners: int = 500
    min_corner_distance: int = 7
    patch_radius: int = 5
    search_radius: int = 24
    zncc_min: float = 0.5          # matches scoring below this are dropped
    lr_tolerance: float = 1.0      # left-right consistency, px
    ransac_threshold: float = 1.5  # inlier reprojection error, px
    confidence: float = 0.999
    max_iterations: int = 2000
    min_matches: int = 8
    min_consensus: float = 0.5


@dataclass
class AlignDiagnostics:
    n_corners: int = 0
    n_matches: int = 0
    n_inliers: int = 0
    inlier_ratio: float = 0.0
    iterations: int = 0
    residual_p50: float = float("nan")
    residual_p90: float = float("nan")
    residual_max: float = float("nan")
    reliable: bool = False
    message: str = ""


@dataclass
class AlignResult:
    H: np.ndarray                  # 3x3 float64, h33 = 1
    inliers: np.ndarray            # bool per match
    matches: np.ndarray            # (M, 4) columns x1, y1, x2, y2
    diagnostics: AlignDiagnostics = field(default_factory=AlignDiagnostics)


def detect_corners(
    img: np.ndarray, max_count: int = 500, min_distance: int = 7
) -> np.ndarray:
    """Harris corners, strongest first.

    Returns:
        (N, 2) float32 array of (x, y), non-max suppressed so returned
        points are at least min_distance apart, N <= max_count, sorted by
        descending response.  Constant images yield an empty array.
    """
    g = to_gray(img).astype(np.float32)
    gy, gx = np.gradient(g)
    ixx = gaussian_filter(gx * gx, 1.5)
    iyy = gaussian_filter(gy * gy, 1.5)
    ixy = gaussian_filter(gx * gy, 1.5)
    resp = ixx * iyy - ixy * ixy - 0.04 * (ixx + iyy) ** 2
    peak = float(resp.max(initial=0.0))
    if peak <= 0.0:
        return np.zeros((0, 2), dtype=np.float32)
    size = 2 * int(min_distance) + 1
    is_peak = (resp == maximum_filter(resp, size=size)) & (resp > 1e-3 * peak)
    ys, xs = np.nonzero(is_peak)
    if ys.size == 0:
        return np.zeros((0, 2), dtype=np.float32)
    order = np.lexsort((xs, ys, -resp[ys, xs]))  # response desc, then row/col
    ys, xs = ys[order], xs[order]
    # greedy spacing pass; the max filter leaves equal-response plateaus in
    keep_x: list[int] = []
    keep_y: list[int] = []
    md2 = float(min_distance) ** 2
    for x, y in zip(xs.tolist(), ys.tolist()):
        ok = True
        for kx, ky in zip(keep_x, keep_y):
            if (kx - x) ** 2 + (ky - y) ** 2 < md2:
                ok = False
                break
        if ok:
            keep_x.append(x)
            keep_y.append(y)
            if len(keep_x) >= max_count:
                break
    return np.stack([np.asarray(keep_x), np.asarray(keep_y)], axis=1).astype(np.float32)


def _zncc_best(
    patch: np.ndarray, region: np.ndarray
) -> tuple[int, int, float]:
    """Best ZNCC position of patch inside region; returns (dy, dx, score).

    (dy, dx) index the top-left of the best window within region.  Flat
    windows score 0.
    """
    ph, pw = patch.shape
    win = np.lib.stride_tricks.sliding_window_view(region, (ph, pw))
    sy, sx = win.shape[:2]
    w = win.reshape(sy * sx, ph * pw).astype(np.float32)
    a = patch.astype(np.float32).ravel()
    a = a - a.mean()
    na = float(np.sqrt((a * a).sum()))
    if na < 1e-8:
        return 0, 0, 0.0
    wm = w - w.mean(axis=1, keepdims=True)
    nw = np.sqrt((wm * wm).sum(axis=1))
    scores = (wm @ a) / (nw * na + 1e-12)
    scores[nw < 1e-8] = 0.0
    best = int(np.argmax(scores))
    return best // sx, best % sx, float(scores[best])


def _best_match(
    g_from: np.ndarray,
    g_to: np.ndarray,
    x: int,
    y: int,
    radius: int,
    search: int,
) -> tuple[int, int, float, bool] | None:
    """Best ZNCC match of the patch at (x, y) in g_from within g_to.

    Returns (x2, y2, score, on_edge); on_edge marks a peak sitting on the
    search-window boundary, i.e. a possibly truncated optimum.
    """
    h_from, w_from = g_from.shape
    h_to, w_to = g_to.shape
    if not (radius <= x < w_from - radius and radius <= y < h_from - radius):
        return None
    patch = g_from[y - radius : y + radius + 1, x - radius : x + radius + 1]
    # candidate centers clipped so the window stays inside g_to
    cx0 = max(x - search, radius)
    cx1 = min(x + search, w_to - 1 - radius)
    cy0 = max(y - search, radius)
    cy1 = min(y + search, h_to - 1 - radius)
    if cx0 > cx1 or cy0 > cy1:
        return None
    region = g_to[cy0 - radius : cy1 + radius + 1, cx0 - radius : cx1 + radius + 1]
    dy, dx, score = _zncc_best(patch, region)
    on_edge = dx == 0 or dy == 0 or cx0 + dx == cx1 or cy0 + dy == cy1
    return cx0 + dx, cy0 + dy, score, on_edge


def match_patches(
    img1: np.ndarray,
    img2: np.ndarray,
    corners: np.ndarray,
    radius: int = 5,
    search: int = 24,
    zncc_min: float = 0.5,
    lr_tolerance: float = 1.0,
) -> np.ndarray:
    """ZNCC matching of corner patches with left-right consistency.

    Args:
        corners: (N, 2) integer-valued (x, y) positions in img1.

    Returns:
        (M, 4) float32 rows (x1, y1, x2, y2), in corner order.  Matches
        scoring below zncc_min or failing the left-right check (backward
        match farther than lr_tolerance px from the corner) are dropped.
    """
    g1 = to_gray(img1).astype(np.float32)
    g2 = to_gray(img2).astype(np.float32)
    out = []
    for cx, cy in np.asarray(corners).reshape(-1, 2):
        x, y = int(round(float(cx))), int(round(float(cy)))
        fwd = _best_match(g1, g2, x, y, radius, search)
        if fwd is None or fwd[2] < zncc_min or fwd[3]:  # truncated peaks are untrustworthy
            continue
        x2, y2 = fwd[0], fwd[1]
        bwd = _best_match(g2, g1, x2, y2, radius, search)
        if bwd is None or bwd[2] < zncc_min or bwd[3]:
            continue
        bx, by = bwd[0], bwd[1]
        if (bx - x) ** 2 + (by - y) ** 2 > lr_tolerance**2:
            continue
        out.append((x, y, x2, y2))
    if not out:
        return np.zeros((0, 4), dtype=np.float32)
    return np.asarray(out, dtype=np.float32)


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate centroid to origin, scale mean distance to sqrt(2)."""
    pts = np.asarray(pts, dtype=np.float64)
    centroid = pts.mean(axis=0)
    d = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise DegenerateGeometryError("all points coincide")
    s = np.sqrt(2.0) / d
    T = np.asarray(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    ones = np.ones((pts.shape[0], 1))
    pn = np.hstack([pts, ones]) @ T.T
    return pn[:, :2], T


def fit_homography_dlt(matches: np.ndarray) -> np.ndarray:
    """Direct linear transform with Hartley normalization.

    Args:
        matches: (M, 4) rows (x1, y1, x2, y2), M >= 4.

    Returns:
        3x3 float64 homography mapping view-1 points to view 2, h33 = 1.

    Raises:
        DegenerateGeometryError: fewer than 4 matches or a rank-deficient
        configuration (e.g. collinear points).
    """
    matches = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    m = matches.shape[0]
    if m < 4:
        raise DegenerateGeometryError(f"need >= 4 matches, got {m}")
    p1, t1 = _hartley_normalize(matches[:, :2])
    p2, t2 = _hartley_normalize(matches[:, 2:])
    a = np.zeros((2 * m, 9), dtype=np.float64)
    x, y = p1[:, 0], p1[:, 1]
    u, v = p2[:, 0], p2[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] <= 1e-10 * sv[0]:
        raise DegenerateGeometryError("point configuration is rank deficient")
    hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(t2) @ hn @ t1
    try:
        return normalize_homography(H)
    except ValueError as exc:
        raise DegenerateGeometryError(f"fit collapsed: {exc}") from exc


def _reprojection_errors(H: np.ndarray, matches: np.ndarray) -> np.ndarray:
    proj = project_points(H, matches[:, :2])
    return np.sqrt(((proj - matches[:, 2:4].astype(np.float64)) ** 2).sum(axis=1))


def _ransac_iterations(inlier_ratio: float, confidence: float, cap: int) -> int:
    if inlier_ratio <= 0.0:
        return cap
    if inlier_ratio >= 1.0:
        return 1
    denom = np.log1p(-min(inlier_ratio**4, 1.0 - 1e-12))
    if denom >= 0.0:
        return cap
    return int(min(cap, np.ceil(np.log(1.0 - confidence) / denom)))


def estimate_dominant_homography(
    img1: np.ndarray,
    img2: np.ndarray,
    params: AlignParams | None = None,
    rng: np.random.Generator | None = None,
) -> AlignResult:
    """RANSAC homography between two views, robust to reflection outliers.

    A fixed rng seed gives an identical H and inlier set.  Too few matches
    (< min_matches) or a consensus below min_consensus of the matches mark
    the result unreliable; the best-effort H (or identity) is still
    returned so downstream stages can proceed.
    """
    p = params or AlignParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    g1 = to_gray(img1)
    g2 = to_gray(img2)
    corners = detect_corners(g1, p.max_corners, p.min_corner_distance)
    matches = match_patches(
        g1, g2, corners, p.patch_radius, p.search_radius, p.zncc_min, p.lr_tolerance
    )
    m = matches.shape[0]
    diag = AlignDiagnostics(n_corners=int(corners.shape[0]), n_matches=int(m))

    def _finish(H, inliers, reliable, message):
        diag.n_inliers = int(inliers.sum())
        diag.inlier_ratio = float(inliers.mean()) if m else 0.0
        diag.reliable = reliable
        diag.message = message
        if diag.n_inliers:
            errs = _reprojection_errors(H, matches[inliers])
            diag.residual_p50 = float(np.percentile(errs, 50))
            diag.residual_p90 = float(np.percentile(errs, 90))
            diag.residual_max = float(errs.max())
        return AlignResult(H=H, inliers=inliers, matches=matches, diagnostics=diag)

    if m < p.min_matches:
        H = np.eye(3)
        if m >= 4:
            try:
                H = fit_homography_dlt(matches)
            except DegenerateGeometryError:
                pass
        return _finish(
            H, np.zeros(m, dtype=bool), False, f"alignment unreliable: {m} matches"
        )

    best_count = 0
    best_inliers = np.zeros(m, dtype=bool)
    needed = p.max_iterations
    it = 0
    while it < needed:
        it += 1
        idx = rng.choice(m, size=4, replace=False)
        try:
            cand = fit_homography_dlt(matches[idx])
        except DegenerateGeometryError:
            continue
        try:
            errs = _reprojection_errors(cand, matches)
        except ValueError:
            continue
        inl = errs < p.ransac_threshold
        count = int(inl.sum())
        if count > best_count:
            best_count = count
            best_inliers = inl
            needed = min(needed, _ransac_iterations(count / m, p.confidence, p.max_iterations))
    diag.iterations = it

    if best_count < 4:
        return _finish(
            np.eye(3), np.zeros(m, dtype=bool), False, "alignment unreliable: no consensus"
        )
    # iterated refit: re-threshold and refit until the inlier set stabilizes,
    # shedding strays that slipped into the initial consensus
    H = np.eye(3)
    inliers = best_inliers
    for _ in range(5):
        try:
            H_new = fit_homography_dlt(matches[inliers])
        except DegenerateGeometryError:
            return _finish(H, inliers, False, "alignment unreliable: degenerate refit")
        new_inliers = _reprojection_errors(H_new, matches) < p.ransac_threshold
        H = H_new
        if int(new_inliers.sum()) < 4 or np.array_equal(new_inliers, inliers):
            inliers = new_inliers if int(new_inliers.sum()) >= 4 else inliers
            break
        inliers = new_inliers
    ratio = float(inliers.mean())
    if ratio < p.min_consensus:
        return _finish(
            H, inliers, False, f"alignment unreliable: consensus {ratio:.2f}"
        )
    return _finish(H, inliers, True, "ok")
