"""Synthetic dual-view pair generation with geometrically consistent reflections.

Each sample overlays a transmission layer and an independently moving,
optionally defocused reflection layer, both driven by planar homographies,
then adds saturated bright spots shaped by thresholded fractal noise. The
transmission homographies induce the ground-truth flow between the views,
so every pair ships with dense flow and occlusion masks.

All sampling is performed on per-sample generator streams derived from a
splittable 64-bit seed mix, which makes datasets pure functions of their
configuration regardless of worker scheduling.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imgcore import ensure_image, read_flo, read_image, write_flo, write_image
from .warp import (
    _gather_bilinear,
    backward_warp,
    homography_to_flow,
    normalize_homography,
    occlusion_mask,
)

_SOURCE_KINDS = ("pool", "warped", "procedural")
_MAX_COVERAGE_RETRIES = 20
_MIN_COVERAGE = 0.7
_BASE_LATTICE_CELLS = 4  # coarsest noise octave spans >= 4 cells across min dim


def split_seed(master_seed: int, sample_index: int) -> int:
    """Order-independent 64-bit seed mix (splitmix64 finalizer).

    Pure function of (master_seed, sample_index); distinct indices give
    distinct, well-scrambled streams.
    """
    mask = (1 << 64) - 1
    z = (int(master_seed) + 0x9E3779B97F4A7C15 * (int(sample_index) + 1)) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return (z ^ (z >> 31)) & mask


@dataclass
class HomographyMagnitude:
    max_translation: float = 8.0   # px
    max_rotation: float = 2.0      # degrees
    max_perspective: float = 1e-5  # on the two projective coefficients


@dataclass
class GenConfig:
    out_size: int = 256
    n_samples: int = 10
    alpha_range: tuple[float, float] = (0.6, 0.9)
    refl_blur_sigma_range: tuple[float, float] = (0.0, 3.0)
    spot_blur_sigma_range: tuple[float, float] = (1.0, 5.0)
    persistence_range: tuple[float, float] = (0.3, 1.0)
    octaves: int = 4
    spot_threshold: float = 1.0
    spot_gain: float = 2.0
    homography_magnitude: HomographyMagnitude = field(
        default_factory=HomographyMagnitude
    )
    source_mixture: tuple[float, float, float] = (0.6, 0.3, 0.1)
    jitter_translation: float = 2.0  # view-1 pose wobble, px
    jitter_rotation: float = 0.3     # degrees
    margin: int = 32                 # extra source border consumed by warps
    master_seed: int = 0

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))

    def validate(self) -> list[str]:
        """Collect every constraint violation (empty list when valid)."""
        out = []
        if self.out_size < 64:
            out.append(f"out_size must be >= 64, got {self.out_size}")
        if self.n_samples < 0:
            out.append(f"n_samples must be >= 0, got {self.n_samples}")
        if self.margin < 0:
            out.append(f"margin must be >= 0, got {self.margin}")
        if self.octaves < 1:
            out.append(f"octaves must be >= 1, got {self.octaves}")
        for name, lo_bound, hi_bound in (
            ("alpha_range", 0.0, 1.0),
            ("refl_blur_sigma_range", 0.0, None),
            ("spot_blur_sigma_range", 0.0, None),
            ("persistence_range", 0.0, 1.0),
        ):
            r = getattr(self, name)
            if len(r) != 2 or not (r[0] <= r[1]):
                out.append(f"{name} must be an ordered (lo, hi) pair, got {r}")
                continue
            if r[0] < lo_bound or (hi_bound is not None and r[1] > hi_bound):
                hi_txt = hi_bound if hi_bound is not None else "inf"
                out.append(f"{name} must lie within [{lo_bound}, {hi_txt}], got {r}")
        m = self.homography_magnitude
        if m.max_translation < 0 or m.max_rotation < 0 or m.max_perspective < 0:
            out.append("homography_magnitude entries must be >= 0")
        w = self.source_mixture
        if len(w) != 3 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            out.append(
                f"source_mixture must be 3 nonnegative weights summing to 1, got {w}"
            )
        if self.spot_gain < 0:
            out.append(f"spot_gain must be >= 0, got {self.spot_gain}")
        if self.jitter_translation < 0 or self.jitter_rotation < 0:
            out.append("jitter magnitudes must be >= 0")
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        if "homography_magnitude" in d and isinstance(
            d["homography_magnitude"], dict
        ):
            d["homography_magnitude"] = HomographyMagnitude(
                **d["homography_magnitude"]
            )
        for key in (
            "alpha_range",
            "refl_blur_sigma_range",
            "spot_blur_sigma_range",
            "persistence_range",
            "source_mixture",
        ):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SamplePair:
    """One generated dual-view sample with ground truth.

    I1/I2 are the observed composites; T/R are the per-view transmission
    and (blurred) reflection layers; spots is the shared saturation field;
    F12/F21 the transmission flows with their occlusion masks. params
    records every sampled value needed to reproduce the composition.
    """

    I1: np.ndarray
    I2: np.ndarray
    T1: np.ndarray
    T2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    spots: np.ndarray
    F12: np.ndarray
    F21: np.ndarray
    occl12: np.ndarray
    occl21: np.ndarray
    params: dict


# ------------------------------------------------------------- homographies


def _translation(tx: float, ty: float) -> np.ndarray:
    h = np.eye(3)
    h[0, 2] = tx
    h[1, 2] = ty
    return h


def _draw_homography(
    rng: np.random.Generator, mag: HomographyMagnitude, center: tuple[float, float]
) -> np.ndarray:
    """Translation + rotation-about-center + projective perturbation."""
    tx = rng.uniform(-mag.max_translation, mag.max_translation)
    ty = rng.uniform(-mag.max_translation, mag.max_translation)
    theta = np.deg2rad(rng.uniform(-mag.max_rotation, mag.max_rotation))
    p1 = rng.uniform(-mag.max_perspective, mag.max_perspective)
    p2 = rng.uniform(-mag.max_perspective, mag.max_perspective)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    persp = np.eye(3)
    persp[2, 0] = p1
    persp[2, 1] = p2
    cx, cy = center
    return (
        _translation(tx, ty)
        @ _translation(cx, cy)
        @ rot
        @ persp
        @ _translation(-cx, -cy)
    )


def sample_layer_homographies(
    rng: np.random.Generator, cfg: GenConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Independent inter-view motions for the transmission and reflection.

    Retries near-singular draws a bounded number of times.
    """
    c = ((cfg.out_size - 1) / 2.0, (cfg.out_size - 1) / 2.0)
    out = []
    for _ in range(2):
        for attempt in range(10):
            h = _draw_homography(rng, cfg.homography_magnitude, c)
            if abs(np.linalg.det(h)) > 1e-6 and np.linalg.cond(h) < 1e8:
                out.append(h)
                break
        else:
            raise ValueError("could not draw an invertible homography in 10 tries")
    return out[0], out[1]


# -------------------------------------------------------------- noise fields


def _perlin_octave(
    rng: np.random.Generator, height: int, width: int, cells: int
) -> np.ndarray:
    """Single gradient-lattice noise layer, quintic fade, |value| <= sqrt(2)/2.

    The lattice spacing is min(height, width) / cells pixels, square cells.
    """
    cell = min(height, width) / float(cells)
    nx = int(np.floor((width - 1) / cell)) + 2
    ny = int(np.floor((height - 1) / cell)) + 2
    ang = rng.uniform(0.0, 2.0 * np.pi, size=(ny, nx))
    gx, gy = np.cos(ang), np.sin(ang)

    ys, xs = np.mgrid[0:height, 0:width]
    u = xs / cell
    v = ys / cell
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = u - i0
    fv = v - j0

    n00 = gx[j0, i0] * fu + gy[j0, i0] * fv
    n10 = gx[j0, i0 + 1] * (fu - 1) + gy[j0, i0 + 1] * fv
    n01 = gx[j0 + 1, i0] * fu + gy[j0 + 1, i0] * (fv - 1)
    n11 = gx[j0 + 1, i0 + 1] * (fu - 1) + gy[j0 + 1, i0 + 1] * (fv - 1)

    su = fu**3 * (fu * (fu * 6 - 15) + 10)
    sv = fv**3 * (fv * (fv * 6 - 15) + 10)
    nx0 = n00 + su * (n10 - n00)
    nx1 = n01 + su * (n11 - n01)
    return (nx0 + sv * (nx1 - nx0)).astype(np.float32)


def perlin_fractal(
    rng: np.random.Generator,
    width: int,
    height: int,
    octaves: int = 4,
    persistence: float = 0.5,
) -> np.ndarray:
    """Sum of persistence**o weighted noise octaves at doubling frequency.

    Octave o spans 4 * 2**o lattice cells across the min dimension, so the
    coarsest octave always keeps at least 4 cells. Output is unnormalized:
    |value| <= sum_o persistence**o * sqrt(2)/2.
    """
    if octaves < 1:
        raise ValueError(f"octaves must be >= 1, got {octaves}")
    out = np.zeros((height, width), dtype=np.float32)
    for o in range(octaves):
        amp = float(persistence) ** o
        out += amp * _perlin_octave(rng, height, width, _BASE_LATTICE_CELLS * 2**o)
    return out


def _spot_field(
    rng: np.random.Generator, width: int, height: int, cfg: GenConfig
) -> tuple[np.ndarray, float, float]:
    """Thresholded fractal noise, blurred: (mask in [0,1], rho, sigma)."""
    rho = rng.uniform(*cfg.persistence_range)
    z = perlin_fractal(rng, width, height, cfg.octaves, rho)
    binary = (z > cfg.spot_threshold).astype(np.float32)
    sigma = rng.uniform(*cfg.spot_blur_sigma_range)
    mask = gaussian_filter(binary, sigma) if sigma > 0 else binary
    return np.clip(mask, 0.0, 1.0), float(rho), float(sigma)


def bright_spot_mask(
    rng: np.random.Generator, width: int, height: int, cfg: GenConfig
) -> np.ndarray:
    """Soft saturation-spot mask: binarize fractal noise, Gaussian blur."""
    return _spot_field(rng, width, height, cfg)[0]


# ------------------------------------------------------------- source images


def procedural_source(
    rng: np.random.Generator, height: int, width: int, channels: int = 3
) -> np.ndarray:
    """Textured source image: filtered noise, blocks, oriented blobs.

    Values lie in [0.03, 0.97] so composition stays off the clamp rails
    away from saturated spots.
    """
    coarse = gaussian_filter(
        rng.standard_normal((height, width)), min(height, width) / 16.0
    )
    fine = gaussian_filter(rng.standard_normal((height, width)), 2.0)
    luma = 3.0 * coarse + 1.2 * fine

    for _ in range(10):
        hh = int(rng.integers(8, max(9, height // 3)))
        ww = int(rng.integers(8, max(9, width // 3)))
        y0 = int(rng.integers(0, height - hh))
        x0 = int(rng.integers(0, width - ww))
        luma[y0 : y0 + hh, x0 : x0 + ww] += rng.uniform(-0.6, 0.6)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float32)
    for _ in range(6):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0, height)
        sig = rng.uniform(5.0, min(height, width) / 6.0)
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(5.0, 14.0)
        amp = rng.uniform(-0.5, 0.5)
        proj = (xs - cx) * np.cos(theta) + (ys - cy) * np.sin(theta)
        env = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sig**2))
        luma += amp * env * np.sin(2 * np.pi * proj / period)

    luma += 0.03 * rng.standard_normal((height, width))
    lo, hi = float(luma.min()), float(luma.max())
    luma = (luma - lo) / max(hi - lo, 1e-9)
    luma = (0.03 + 0.94 * luma).astype(np.float32)
    if channels == 1:
        return luma
    gains = rng.uniform(0.55, 1.0, size=channels).astype(np.float32)
    offsets = rng.uniform(0.0, 0.12, size=channels).astype(np.float32)
    img = luma[:, :, None] * gains[None, None, :] + offsets[None, None, :]
    return np.clip(img, 0.03, 0.97).astype(np.float32)


def _match_channels(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if a.ndim == b.ndim:
        return a, b
    if a.ndim == 2:
        a = np.repeat(a[:, :, None], b.shape[2], axis=2)
    else:
        b = np.repeat(b[:, :, None], a.shape[2], axis=2)
    return a, b


def _center_crop(img: np.ndarray, side: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h < side or w < side:
        raise ValueError(
            f"source image {h}x{w} is smaller than required {side}x{side} "
            "(out_size plus twice the warp margin)"
        )
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    return np.ascontiguousarray(img[y0 : y0 + side, x0 : x0 + side])


# ---------------------------------------------------------------- composition


def _warp_from_source(
    src: np.ndarray, h_view: np.ndarray, out_size: int, margin: int
) -> tuple[np.ndarray, np.ndarray]:
    """Render a view: out[p] = src(inv(h_view) @ p + margin).

    Returns (image, inside mask) where inside marks taps that stayed
    within the source raster.
    """
    hinv = np.linalg.inv(h_view)
    ys, xs = np.mgrid[0:out_size, 0:out_size].astype(np.float64)
    ph = np.stack([xs, ys, np.ones_like(xs)])
    q = np.tensordot(hinv, ph, axes=1)
    sx = (q[0] / q[2] + margin).astype(np.float32)
    sy = (q[1] / q[2] + margin).astype(np.float32)
    out, inside = _gather_bilinear(src, sx, sy)
    return out, inside


def _coverage(h_view: np.ndarray, out_size: int, margin: int, side: int) -> float:
    hinv = np.linalg.inv(h_view)
    ys, xs = np.mgrid[0:out_size, 0:out_size].astype(np.float64)
    ph = np.stack([xs, ys, np.ones_like(xs)])
    q = np.tensordot(hinv, ph, axes=1)
    sx = q[0] / q[2] + margin
    sy = q[1] / q[2] + margin
    inside = (sx >= 0) & (sx <= side - 1) & (sy >= 0) & (sy <= side - 1)
    return float(inside.mean())


def compose_views_with(
    t_src: np.ndarray,
    r_src: np.ndarray,
    rng: np.random.Generator,
    cfg: GenConfig,
    h_t: np.ndarray,
    h_r: np.ndarray,
    j_t: np.ndarray | None = None,
    j_r: np.ndarray | None = None,
) -> SamplePair:
    """Compose a sample from fixed layer motions.

    h_t / h_r are the inter-view motions of the transmission and reflection;
    j_t / j_r pose view 1 (identity when omitted). Photometric values
    (alpha, blur sigma, spot field) are drawn from rng in a fixed order.
    """
    t_src = ensure_image(t_src)
    r_src = ensure_image(r_src)
    t_src, r_src = _match_channels(t_src, r_src)
    side = cfg.out_size + 2 * cfg.margin
    t_src = _center_crop(t_src, side)
    r_src = _center_crop(r_src, side)

    j_t = np.eye(3) if j_t is None else np.asarray(j_t, dtype=np.float64)
    j_r = np.eye(3) if j_r is None else np.asarray(j_r, dtype=np.float64)
    h_t1, h_t2 = j_t, np.asarray(h_t, np.float64) @ j_t
    h_r1, h_r2 = j_r, np.asarray(h_r, np.float64) @ j_r

    t1, _ = _warp_from_source(t_src, h_t1, cfg.out_size, cfg.margin)
    t2, _ = _warp_from_source(t_src, h_t2, cfg.out_size, cfg.margin)
    r1, _ = _warp_from_source(r_src, h_r1, cfg.out_size, cfg.margin)
    r2, _ = _warp_from_source(r_src, h_r2, cfg.out_size, cfg.margin)

    alpha = float(rng.uniform(*cfg.alpha_range))
    sigma_refl = float(rng.uniform(*cfg.refl_blur_sigma_range))
    if sigma_refl > 0:
        blur_sigma = (sigma_refl, sigma_refl, 0) if r1.ndim == 3 else sigma_refl
        r1 = gaussian_filter(r1, blur_sigma)
        r2 = gaussian_filter(r2, blur_sigma)

    spots, rho, sigma_spot = _spot_field(rng, cfg.out_size, cfg.out_size, cfg)
    spot_term = spots[:, :, None] if t1.ndim == 3 else spots
    imgs = []
    for t, r in ((t1, r1), (t2, r2)):
        raw = alpha * t + (1.0 - alpha) * r + spot_term * (1.0 - alpha) * cfg.spot_gain
        imgs.append(np.clip(raw, 0.0, 1.0).astype(np.float32))

    h_inter_t = normalize_homography(h_t2 @ np.linalg.inv(h_t1))
    h_inter_r = normalize_homography(h_r2 @ np.linalg.inv(h_r1))
    f12 = homography_to_flow(h_inter_t, (cfg.out_size, cfg.out_size))
    f21 = homography_to_flow(np.linalg.inv(h_inter_t), (cfg.out_size, cfg.out_size))
    occl12 = occlusion_mask(f12, f21).astype(np.float32)
    occl21 = occlusion_mask(f21, f12).astype(np.float32)

    params = {
        "alpha": alpha,
        "sigma_refl": sigma_refl,
        "rho": rho,
        "sigma_spot": sigma_spot,
        "spot_threshold": float(cfg.spot_threshold),
        "spot_gain": float(cfg.spot_gain),
        "out_size": int(cfg.out_size),
        "margin": int(cfg.margin),
        "h_t": [float(x) for x in h_inter_t.ravel()],
        "h_r": [float(x) for x in h_inter_r.ravel()],
        "h_t1": h_t1.tolist(),
        "h_t2": h_t2.tolist(),
        "h_r1": h_r1.tolist(),
        "h_r2": h_r2.tolist(),
    }
    return SamplePair(
        I1=imgs[0],
        I2=imgs[1],
        T1=t1,
        T2=t2,
        R1=r1,
        R2=r2,
        spots=spots,
        F12=f12,
        F21=f21,
        occl12=occl12,
        occl21=occl21,
        params=params,
    )


def compose_views(
    t_src: np.ndarray, r_src: np.ndarray, rng: np.random.Generator, cfg: GenConfig
) -> SamplePair:
    """Draw layer motions (resampling on poor warp coverage), then compose."""
    side = cfg.out_size + 2 * cfg.margin
    jitter_mag = HomographyMagnitude(
        cfg.jitter_translation, cfg.jitter_rotation, 0.0
    )
    center = ((cfg.out_size - 1) / 2.0, (cfg.out_size - 1) / 2.0)
    for _ in range(_MAX_COVERAGE_RETRIES):
        h_t, h_r = sample_layer_homographies(rng, cfg)
        j_t = _draw_homography(rng, jitter_mag, center)
        j_r = _draw_homography(rng, jitter_mag, center)
        views = (j_t, h_t @ j_t, j_r, h_r @ j_r)
        cov = min(_coverage(h, cfg.out_size, cfg.margin, side) for h in views)
        if cov >= _MIN_COVERAGE:
            return compose_views_with(t_src, r_src, rng, cfg, h_t, h_r, j_t, j_r)
    raise ValueError(
        f"warp coverage stayed below {_MIN_COVERAGE:.0%} after "
        f"{_MAX_COVERAGE_RETRIES} homography redraws; widen margin or "
        "shrink homography_magnitude"
    )


# ------------------------------------------------------------------- dataset


def _load_sources(source_images) -> list[np.ndarray]:
    out = []
    for s in source_images:
        if isinstance(s, (str, Path)):
            out.append(read_image(s))
        else:
            out.append(ensure_image(s))
    return out


def _prewarp(img: np.ndarray, rng: np.random.Generator, cfg: GenConfig) -> np.ndarray:
    """Extra random in-place warp of a source (clamped border sampling)."""
    h, w = img.shape[:2]
    hom = _draw_homography(rng, cfg.homography_magnitude, ((w - 1) / 2, (h - 1) / 2))
    flow = homography_to_flow(hom, (h, w))
    warped, _ = backward_warp(img, flow)
    return warped


def _make_sample(
    index: int, cfg: GenConfig, sources: list[np.ndarray], out_dir: Path
) -> dict:
    seed = split_seed(cfg.master_seed, index)
    rng = np.random.default_rng(seed)
    kind = _SOURCE_KINDS[int(rng.choice(3, p=cfg.source_mixture))]
    if kind == "procedural":
        side = cfg.out_size + 2 * cfg.margin
        t_src = procedural_source(rng, side, side)
        r_src = procedural_source(rng, side, side)
    else:
        picks = rng.choice(len(sources), size=2, replace=False)
        t_src, r_src = sources[int(picks[0])], sources[int(picks[1])]
        if kind == "warped":
            t_src = _prewarp(t_src, rng, cfg)
            r_src = _prewarp(r_src, rng, cfg)
    pair = compose_views(t_src, r_src, rng, cfg)

    sample_id = f"sample_{index:05d}"
    sdir = out_dir / sample_id
    sdir.mkdir(parents=True, exist_ok=True)
    write_image(pair.I1, sdir / "i1.pfm")
    write_image(pair.I2, sdir / "i2.pfm")
    write_image(pair.T1, sdir / "t1.pfm")
    write_image(pair.T2, sdir / "t2.pfm")
    write_image(pair.R1, sdir / "r1.pfm")
    write_image(pair.R2, sdir / "r2.pfm")
    write_image(pair.spots, sdir / "spots.pfm")
    write_image(pair.occl12, sdir / "occl12.pfm")
    write_image(pair.occl21, sdir / "occl21.pfm")
    write_flo(pair.F12, sdir / "f12.flo")
    write_flo(pair.F21, sdir / "f21.flo")
    write_image(pair.I1, sdir / "i1.png")
    write_image(pair.I2, sdir / "i2.png")

    params = dict(pair.params)
    params["seed"] = seed
    params["source_kind"] = kind
    (sdir / "params.json").write_text(json.dumps(params, sort_keys=True, indent=2))

    return {
        "id": sample_id,
        "dir": sample_id,
        "seed": seed,
        "source_kind": kind,
        "alpha": pair.params["alpha"],
        "sigma_refl": pair.params["sigma_refl"],
        "rho": pair.params["rho"],
        "sigma_spot": pair.params["sigma_spot"],
        "h_t": pair.params["h_t"],
        "h_r": pair.params["h_r"],
    }


def gen_dataset(
    cfg: GenConfig, source_images, out_dir, workers: int = 1
) -> list[dict]:
    """Write cfg.n_samples pairs under out_dir; return the manifest records.

    Output is byte-identical for a given config regardless of workers: each
    sample runs on its own seed-split stream and the manifest is ordered by
    index. Source images are needed only when the mixture draws from the
    pool ("pool"/"warped" kinds); procedural samples synthesize their own.
    """
    sources = _load_sources(source_images)
    if (cfg.source_mixture[0] > 0 or cfg.source_mixture[1] > 0) and len(sources) < 2:
        raise ValueError(
            "at least 2 source images are required when the mixture draws "
            f"from the pool, got {len(sources)}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    indices = range(cfg.n_samples)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(
                pool.map(lambda i: _make_sample(i, cfg, sources, out_dir), indices)
            )
    else:
        records = [_make_sample(i, cfg, sources, out_dir) for i in indices]

    with open(out_dir / "manifest.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return records


def load_sample(sample_dir) -> SamplePair:
    """Read one generated sample directory back into a SamplePair."""
    sdir = Path(sample_dir)
    params = json.loads((sdir / "params.json").read_text())
    return SamplePair(
        I1=read_image(sdir / "i1.pfm"),
        I2=read_image(sdir / "i2.pfm"),
        T1=read_image(sdir / "t1.pfm"),
        T2=read_image(sdir / "t2.pfm"),
        R1=read_image(sdir / "r1.pfm"),
        R2=read_image(sdir / "r2.pfm"),
        spots=read_image(sdir / "spots.pfm"),
        F12=read_flo(sdir / "f12.flo")[0],
        F21=read_flo(sdir / "f21.flo")[0],
        occl12=read_image(sdir / "occl12.pfm"),
        occl21=read_image(sdir / "occl21.pfm"),
        params=params,
    )
