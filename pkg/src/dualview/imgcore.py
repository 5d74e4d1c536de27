"""Raster and flow-field I/O plus shared image conventions.

Images are numpy float32 arrays, (H, W) for grayscale or (H, W, 3) for color,
nominal range [0, 1] (values outside the range are legal for intermediate
math and survive PFM round trips; PNG clamps on encode only).  Flow fields
are (H, W, 2) float32 with [..., 0] = horizontal u and [..., 1] = vertical v,
in pixels.  Masks are (H, W) float32 with values in {0, 1}.
"""

from __future__ import annotations

import re
from pathlib import Path

import cv2
import numpy as np

# Middlebury .flo conventions
FLO_MAGIC = 202021.25
FLO_UNKNOWN = 1e10  # written for invalid pixels; anything > 1e9 reads as invalid

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


class PfmFormatError(ValueError):
    """Raised when a PFM file has a malformed header or truncated payload."""


class FloFormatError(ValueError):
    """Raised when a .flo file has the wrong magic number or a bad payload."""


def ensure_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate image shape/dtype and return it as float32."""
    a = np.asarray(img)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] != 3):
        raise ValueError(f"{name}: expected (H, W) or (H, W, 3), got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name}: empty raster {a.shape}")
    if not np.issubdtype(a.dtype, np.floating):
        raise ValueError(f"{name}: expected float dtype, got {a.dtype}")
    return a.astype(np.float32, copy=False)


def ensure_flow(flow: np.ndarray, name: str = "flow") -> np.ndarray:
    """Validate flow shape/dtype and return it as float32."""
    a = np.asarray(flow)
    if a.ndim != 3 or a.shape[2] != 2:
        raise ValueError(f"{name}: expected (H, W, 2), got {a.shape}")
    if not np.issubdtype(a.dtype, np.floating):
        raise ValueError(f"{name}: expected float dtype, got {a.dtype}")
    return a.astype(np.float32, copy=False)


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luma conversion with weights (0.299, 0.587, 0.114); grayscale passes through."""
    img = ensure_image(img)
    if img.ndim == 2:
        return img
    w = np.asarray(GRAY_WEIGHTS, dtype=np.float32)
    return img @ w


def read_image(path: str | Path) -> np.ndarray:
    """Read a PNG (8/16-bit, gray/color) or PFM image to float32.

    PNG sample values are scaled to [0, 1]: 8-bit by 1/255, 16-bit by 1/65535.
    PFM values are returned verbatim.  Color images come back as (H, W, 3) RGB.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    if path.suffix.lower() == ".pfm":
        return _read_pfm(path)
    raw = np.fromfile(path, dtype=np.uint8)
    img = cv2.imdecode(raw, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ValueError(f"undecodable image file: {path}")
    if img.ndim == 3 and img.shape[2] == 4:  # drop alpha
        img = img[:, :, :3]
    if img.ndim == 3:
        img = img[:, :, ::-1]  # BGR -> RGB
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValueError(f"unsupported PNG sample type {img.dtype}: {path}")
    return (img.astype(np.float32)) / np.float32(scale)


def write_image(img: np.ndarray, path: str | Path, bits: int = 8) -> None:
    """Write an image as PNG (quantized, clamped on encode) or PFM (verbatim float32).

    The container is chosen by extension.  `bits` selects PNG sample depth
    (8 or 16) and is ignored for PFM.
    """
    img = ensure_image(img)
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        _write_pfm(img, path)
        return
    if bits == 8:
        q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    elif bits == 16:
        q = np.rint(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    if q.ndim == 3:
        q = q[:, :, ::-1]  # RGB -> BGR
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise ValueError(f"PNG encode failed for {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    buf.tofile(path)


def _read_pfm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    # header: ident line, dims line, scale line; tokens split by whitespace
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        m = re.match(rb"\s*(\S+)\s", data[pos:])
        if m is None:
            break
        tokens.append(m.group(1))
        pos += m.end()
    if len(tokens) < 4:
        raise PfmFormatError(f"{path}: truncated PFM header at byte {pos}")
    ident = tokens[0]
    if ident == b"PF":
        channels = 3
    elif ident == b"Pf":
        channels = 1
    else:
        raise PfmFormatError(f"{path}: bad PFM ident {ident!r} at byte 0")
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise PfmFormatError(f"{path}: malformed PFM dims/scale: {exc}") from exc
    if width < 1 or height < 1:
        raise PfmFormatError(f"{path}: bad PFM dimensions {width}x{height}")
    if scale == 0.0:
        raise PfmFormatError(f"{path}: zero PFM scale")
    endian = "<" if scale < 0 else ">"
    count = width * height * channels
    payload = data[pos:]
    if len(payload) < count * 4:
        raise PfmFormatError(
            f"{path}: PFM payload truncated, need {count * 4} bytes got {len(payload)}"
        )
    flat = np.frombuffer(payload[: count * 4], dtype=f"{endian}f4")
    shape = (height, width, channels) if channels == 3 else (height, width)
    img = flat.reshape(shape)
    # PFM stores rows bottom-to-top; scale magnitude is ignored (written as 1)
    return np.flipud(img).astype(np.float32)


def _write_pfm(img: np.ndarray, path: Path) -> None:
    if img.ndim == 2:
        ident = b"Pf"
    else:
        ident = b"PF"
    h, w = img.shape[:2]
    header = ident + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    payload = np.flipud(img).astype("<f4").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + payload)


def read_flo(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a Middlebury .flo file.

    Returns:
        (flow, valid): flow is (H, W, 2) float32 with sentinel components
        replaced by 0; valid is (H, W) float32, 0 where either component
        carried the unknown sentinel (magnitude > 1e9).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such flow file: {path}")
    data = path.read_bytes()
    if len(data) < 12:
        raise FloFormatError(f"{path}: file too short for a .flo header")
    magic = np.frombuffer(data[:4], dtype="<f4")[0]
    if magic != np.float32(FLO_MAGIC):
        raise FloFormatError(f"{path}: bad .flo magic {magic!r}, expected {FLO_MAGIC}")
    w, h = (int(v) for v in np.frombuffer(data[4:12], dtype="<i4"))
    if w < 1 or h < 1:
        raise FloFormatError(f"{path}: bad .flo dimensions {w}x{h}")
    count = w * h * 2
    if len(data) - 12 < count * 4:
        raise FloFormatError(
            f"{path}: .flo payload truncated, need {count * 4} bytes got {len(data) - 12}"
        )
    flow = np.frombuffer(data[12 : 12 + count * 4], dtype="<f4").reshape(h, w, 2)
    invalid = np.abs(flow) > 1e9
    valid = (~invalid.any(axis=2)).astype(np.float32)
    if invalid.any():
        flow = np.where(invalid, np.float32(0.0), flow)
    return flow.astype(np.float32), valid


def write_flo(flow: np.ndarray, path: str | Path, valid: np.ndarray | None = None) -> None:
    """Write a Middlebury .flo file; invalid pixels get the unknown sentinel."""
    flow = ensure_flow(flow)
    h, w = flow.shape[:2]
    out = flow.astype("<f4", copy=True)
    if valid is not None:
        bad = np.asarray(valid) <= 0.5
        out[bad] = np.float32(FLO_UNKNOWN)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.asarray([FLO_MAGIC], dtype="<f4").tobytes() + np.asarray(
        [w, h], dtype="<i4"
    ).tobytes()
    path.write_bytes(header + out.tobytes())
