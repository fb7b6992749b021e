"""Array primitives shared by every stage of the attack.

Images are float64 arrays of shape (H, W, C) with values in [0, 1];
regions are small (h, w, c) blocks that get replicated across the full
canvas. Alongside the pure tensor ops this module owns the flat binary
image container (magic "RNA1") and a lossy 8-bit PPM/PGM export for
eyeballing results.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

# tolerance for "probabilities sum to one" checks on oracle outputs
PROB_ATOL = 1e-6

IMAGE_MAGIC = b"RNA1"
_IMAGE_HEADER = struct.Struct("<4sIII")


class ImageFormatError(ValueError):
    """Raised when an image file is malformed or truncated."""


@dataclass(frozen=True)
class Region:
    """Sub-block geometry: top-left corner (p1, p2), extent h x w.

    The corner is kept for completeness; tiling replicates the block over
    the whole canvas, so only the extent influences the attack.
    """

    p1: int
    p2: int
    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ValueError(f"region extent must be positive, got {self.h}x{self.w}")
        if self.p1 < 0 or self.p2 < 0:
            raise ValueError(f"region corner must be non-negative, got ({self.p1}, {self.p2})")

    def validate_within(self, height, width):
        if self.p1 + self.h > height or self.p2 + self.w > width:
            raise ValueError(
                f"region {self.h}x{self.w} at ({self.p1}, {self.p2}) exceeds "
                f"image bounds {height}x{width}"
            )


def gray_image(height, width, channels=1):
    """Uniform mid-gray image, the input-free starting point."""
    if height < 1 or width < 1 or channels < 1:
        raise ValueError(f"bad image dims {height}x{width}x{channels}")
    return np.full((height, width, channels), 0.5, dtype=np.float64)


def as_image(x):
    """Validate an array as an (H, W, C) float image and return it as float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"image must have shape (H, W, C), got {x.shape}")
    if any(d < 1 for d in x.shape):
        raise ValueError(f"image dims must be positive, got {x.shape}")
    return x


def clip01(x):
    """Project pixel values onto the valid [0, 1] box."""
    return np.clip(x, 0.0, 1.0)


def tile_region(region, height, width):
    """Replicate a region block across a height x width canvas.

    floor(H/h) x floor(W/w) whole copies are laid out as a grid centered on
    the canvas; the leftover border is filled by reflecting the tiled block
    (mirror without repeating the edge row/column). Channels tile along the
    spatial axes only.
    """
    region = np.asarray(region, dtype=np.float64)
    if region.ndim != 3:
        raise ValueError(f"region must have shape (h, w, c), got {region.shape}")
    h, w, _ = region.shape
    if h < 1 or w < 1:
        raise ValueError(f"region dims must be positive, got {region.shape}")
    if h > height or w > width:
        raise ValueError(f"region {h}x{w} larger than canvas {height}x{width}")
    m = height // h
    n = width // w
    block = np.tile(region, (m, n, 1))
    top = (height - m * h) // 2
    left = (width - n * w) // 2
    bottom = height - m * h - top
    right = width - n * w - left
    if top or bottom or left or right:
        block = np.pad(block, ((top, bottom), (left, right), (0, 0)), mode="reflect")
    return block


def l2_distortion(x, x0):
    """Euclidean distance between two images of identical shape."""
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x.shape != x0.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x0.shape}")
    return float(np.sqrt(np.sum((x - x0) ** 2)))


def linf_distortion(x, x0):
    """Largest absolute per-pixel difference between two images."""
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x.shape != x0.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x0.shape}")
    return float(np.max(np.abs(x - x0)))


def prediction_entropy(p):
    """Sum of p_i * ln(p_i) over a probability vector, with 0 * ln(0) = 0.

    Note the sign: this is the negated Shannon entropy, so it is always
    <= 0, peaks at 0 for a one-hot vector, and dips to -ln(K) at uniform.
    The size-selection rule watches this quantity fall then rise.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"probability vector must be 1-d, got shape {p.shape}")
    if np.any(p < 0.0):
        raise ValueError("probabilities must be non-negative")
    if abs(float(np.sum(p)) - 1.0) > PROB_ATOL:
        raise ValueError(f"probabilities must sum to 1, got {float(np.sum(p)):.8f}")
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask])))


def save_image(path, x):
    """Write an image to the float32 container: header then row-major data.

    Layout is little-endian throughout: magic "RNA1", uint32 H, W, C,
    then H*W*C float32 values. Float payloads round-trip through
    load_image exactly at float32 precision.
    """
    x = as_image(x)
    h, w, c = x.shape
    with open(path, "wb") as f:
        f.write(_IMAGE_HEADER.pack(IMAGE_MAGIC, h, w, c))
        f.write(x.astype("<f4").tobytes())


def load_image(path):
    """Read a float32 container file back into an (H, W, C) float64 array."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _IMAGE_HEADER.size:
        raise ImageFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, h, w, c = _IMAGE_HEADER.unpack_from(raw)
    if magic != IMAGE_MAGIC:
        raise ImageFormatError(f"{path}: bad magic {magic!r}")
    if h < 1 or w < 1 or c < 1:
        raise ImageFormatError(f"{path}: bad dims {h}x{w}x{c}")
    need = h * w * c * 4
    body = raw[_IMAGE_HEADER.size :]
    if len(body) != need:
        raise ImageFormatError(f"{path}: expected {need} payload bytes, got {len(body)}")
    data = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return data.reshape(h, w, c)


def ppm_bytes(x):
    """Binary PPM (3 channels) or PGM (1 channel) bytes for a [0,1] image.

    Values are clipped and rounded to 0..255; other channel counts have
    no sensible byte layout here and are rejected.
    """
    x = as_image(x)
    h, w, c = x.shape
    if c not in (1, 3):
        raise ValueError(f"PPM/PGM export needs 1 or 3 channels, got {c}")
    tag = b"P5" if c == 1 else b"P6"
    body = np.rint(clip01(x) * 255.0).astype(np.uint8).tobytes()
    return tag + b"\n%d %d\n255\n" % (w, h) + body


def save_ppm(path, x):
    """Export an image as 8-bit binary PPM/PGM for human inspection."""
    with open(path, "wb") as f:
        f.write(ppm_bytes(x))
