"""Core raster types and masked-region arithmetic.

Images are real-valued rasters in [0, 1], shape (H, W, C) with C in {1, 3};
masks are strictly binary rasters of shape (H, W).  The two region operators
(`hadamard`, `composite`) are exact: compositing is a hard per-pixel switch,
never a blend, so a partition of an image through complementary masks
reconstructs it bit for bit.

8-bit data enters and leaves through `from_uint8` / `to_uint8`; everything
in between stays float64 so exactness properties hold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Image:
    """Immutable (H, W, C) raster with samples in [0, 1], C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self) -> None:
        d = self.data
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ShapeError(f"image must be (H, W, 1|3), got {d.shape}")
        if d.dtype != np.float64:
            raise ShapeError(f"image dtype must be float64, got {d.dtype}")
        lo, hi = float(d.min(initial=0.0)), float(d.max(initial=1.0))
        if lo < 0.0 or hi > 1.0:
            raise ShapeError(f"image samples outside [0, 1]: min={lo}, max={hi}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        a = np.array(arr, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        return cls(_freeze(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Mask:
    """Immutable (H, W) binary raster; values are exactly 0.0 or 1.0."""

    data: np.ndarray

    def __post_init__(self) -> None:
        d = self.data
        if d.ndim != 2:
            raise ShapeError(f"mask must be (H, W), got {d.shape}")
        if d.dtype != np.float64:
            raise ShapeError(f"mask dtype must be float64, got {d.dtype}")
        bad = (d != 0.0) & (d != 1.0)
        if bad.any():
            raise ShapeError("mask contains values other than 0 and 1")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Mask":
        return cls(_freeze(np.array(arr, dtype=np.float64)))

    @classmethod
    def binarize(cls, arr: np.ndarray) -> "Mask":
        """Threshold rule for external mask files: any nonzero sample becomes 1."""
        return cls(_freeze((np.asarray(arr) != 0).astype(np.float64)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        return int(self.data.sum())


def _check_pair(o: Image, m: Mask) -> None:
    if (o.height, o.width) != (m.height, m.width):
        raise ShapeError(
            f"image ({o.height}x{o.width}) and mask ({m.height}x{m.width}) differ"
        )


def hadamard(o: Image, m: Mask) -> Image:
    """Per-pixel product o[y,x,c] * m[y,x]; zeroes everything outside the mask."""
    _check_pair(o, m)
    return Image(_freeze(o.data * m.data[:, :, None]))


def composite(a: Image, b: Image, m: Mask) -> Image:
    """Hard switch: a where the mask is 1, b where it is 0.  No blending."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"images differ in shape: {a.data.shape} vs {b.data.shape}")
    _check_pair(a, m)
    return Image(_freeze(np.where(m.data[:, :, None] == 1.0, a.data, b.data)))


def complement(m: Mask) -> Mask:
    return Mask(_freeze(1.0 - m.data))


def rgb_to_hsv(o: Image) -> Image:
    """Hexcone RGB -> HSV with H, S, V each scaled to [0, 1]."""
    if o.channels != 3:
        raise ShapeError(f"rgb_to_hsv needs 3 channels, got {o.channels}")
    r, g, b = o.data[..., 0], o.data[..., 1], o.data[..., 2]
    maxc = o.data.max(axis=2)
    minc = o.data.min(axis=2)
    c = maxc - minc
    safe_c = np.where(c == 0.0, 1.0, c)

    h = np.zeros_like(maxc)
    h = np.where(maxc == b, (r - g) / safe_c + 4.0, h)
    h = np.where(maxc == g, (b - r) / safe_c + 2.0, h)
    h = np.where(maxc == r, np.mod((g - b) / safe_c, 6.0), h)
    h = np.where(c == 0.0, 0.0, h) / 6.0

    s = np.where(maxc == 0.0, 0.0, c / np.where(maxc == 0.0, 1.0, maxc))
    out = np.stack([h, s, maxc], axis=2)
    return Image(_freeze(np.clip(out, 0.0, 1.0)))


def hsv_to_rgb(o: Image) -> Image:
    """Inverse hexcone conversion; roundtrip error stays below 1e-4 per channel."""
    if o.channels != 3:
        raise ShapeError(f"hsv_to_rgb needs 3 channels, got {o.channels}")
    h, s, v = o.data[..., 0], o.data[..., 1], o.data[..., 2]
    h6 = h * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))

    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    out = np.stack([r, g, b], axis=2)
    return Image(_freeze(np.clip(out, 0.0, 1.0)))


def shift_hue(o: Image, delta: float) -> Image:
    """Rotate hue of every pixel by `delta` (fraction of the hue circle)."""
    hsv = rgb_to_hsv(o).data.copy()
    hsv[..., 0] = np.mod(hsv[..., 0] + delta, 1.0)
    return hsv_to_rgb(Image(_freeze(hsv)))


def resize_nearest(o: Image, height: int, width: int) -> Image:
    """Nearest-neighbour resize (used to match texture and sprite sizes)."""
    ys = (np.arange(height) + 0.5) * o.height / height
    xs = (np.arange(width) + 0.5) * o.width / width
    yi = np.clip(ys.astype(np.int64), 0, o.height - 1)
    xi = np.clip(xs.astype(np.int64), 0, o.width - 1)
    return Image(_freeze(o.data[yi][:, xi].copy()))


def downsample_mean(o: Image, factor: int) -> Image:
    """Average-pool by an integer factor; dimensions must divide evenly."""
    h, w, c = o.data.shape
    if h % factor or w % factor:
        raise ShapeError(f"({h}, {w}) not divisible by pooling factor {factor}")
    pooled = o.data.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))
    return Image(_freeze(np.clip(pooled, 0.0, 1.0)))


def from_uint8(arr: np.ndarray) -> Image:
    """8-bit I/O boundary: v / 255."""
    return Image.from_array(np.asarray(arr, dtype=np.float64) / 255.0)


def to_uint8(o: Image) -> np.ndarray:
    """8-bit I/O boundary: round(v * 255)."""
    return np.clip(np.rint(o.data * 255.0), 0, 255).astype(np.uint8)
