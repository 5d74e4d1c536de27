import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def make_texture(rng: np.random.Generator, h: int, w: int, channels: int = 1) -> np.ndarray:
    """Richly textured synthetic image: smooth field + shapes + grain."""
    from scipy.ndimage import gaussian_filter

    shape = (h, w) if channels == 1 else (h, w, channels)
    img = gaussian_filter(rng.random(shape), sigma=(4, 4) if channels == 1 else (4, 4, 0))
    img = (img - img.min()) / max(float(np.ptp(img)), 1e-9)
    # sharp rectangles give corners; sine grating gives dense gradients
    for _ in range(6):
        y0 = rng.integers(0, max(h - 8, 1))
        x0 = rng.integers(0, max(w - 8, 1))
        hh = int(rng.integers(4, max(h // 3, 5)))
        ww = int(rng.integers(4, max(w // 3, 5)))
        val = rng.random(channels) if channels > 1 else float(rng.random())
        img[y0 : y0 + hh, x0 : x0 + ww] = val
    # localized gabor blobs: dense gradients without global periodicity
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    for _ in range(5):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        sig = rng.uniform(6, 16)
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(5, 14)
        env = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sig * sig))
        carrier = np.sin(2 * np.pi * (xs * np.cos(theta) + ys * np.sin(theta)) / period)
        blob = 0.25 * env * carrier
        img = img + (blob if channels == 1 else blob[:, :, None])
    img = img + 0.02 * rng.standard_normal(shape)
    return np.clip(0.1 + 0.8 * img, 0.0, 1.0).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def textured_gray(rng):
    return make_texture(rng, 96, 128, 1)


@pytest.fixture
def textured_rgb(rng):
    return make_texture(rng, 96, 128, 3)
