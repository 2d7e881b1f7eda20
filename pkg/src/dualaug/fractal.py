"""Procedural fractal textures for task-irrelevant randomization.

Replaces a downloaded mixing-image corpus with three on-the-fly families:

* ``ifs_flame``  -- chaos-game iterated function system over 3..6 seeded
  contractive affine maps, accumulated into a density/color buffer and tone
  mapped with log1p density (>= 1e5 accumulated points per texture).
* ``julia``      -- escape-time rendering of z <- z^2 + c with a seed-derived
  c on the circle |c| = 0.7885, smooth iteration coloring.
* ``fbm_noise``  -- 5 octaves of smoothstep-interpolated value noise with
  persistence 0.5 and lacunarity 2, mapped through a seeded two-color ramp.

Every texture is a pure function of its spec: same (family, seed, size) in,
bit-identical image out.  Tone mapping and palette construction are fixed
constants per family so golden tests stay stable.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .imgcore import Image, _freeze
from .rng import derive_rng

FAMILIES = ("ifs_flame", "julia", "fbm_noise")

MIN_SIZE = 16

# ifs_flame constants
_FLAME_BATCH = 2048
_FLAME_ITERS = 84
_FLAME_BURN_IN = 20  # accumulated points: 2048 * 64 = 131072 >= 1e5

# julia constants
_JULIA_MAX_ITER = 96
_JULIA_RADIUS = 0.7885
_JULIA_VIEW = 1.6

# fbm_noise constants
_FBM_OCTAVES = 5
_FBM_BASE_CELLS = 4
_FBM_PERSISTENCE = 0.5


@dataclass(frozen=True)
class FractalSpec:
    family: str
    seed: int
    size: int

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown fractal family {self.family!r}")
        if self.size < MIN_SIZE:
            raise ConfigError(f"fractal size must be >= {MIN_SIZE}, got {self.size}")


def generate(spec: FractalSpec) -> Image:
    """Render the texture described by `spec` (deterministic in the spec)."""
    if spec.family == "ifs_flame":
        data = _ifs_flame(spec.seed, spec.size)
    elif spec.family == "julia":
        data = _julia(spec.seed, spec.size)
    else:
        data = _fbm_noise(spec.seed, spec.size)
    return Image(_freeze(np.clip(data, 0.0, 1.0)))


def default_corpus_seeds(master_seed: int, count: int = 64) -> list[int]:
    """Texture seeds derived from a master seed (one fixed derivation)."""
    rng = derive_rng(master_seed, 0x7E37)
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=count)]


def build_corpus(seeds: list[int], size: int, families: list[str] | None = None) -> list[Image]:
    """Generate one texture per seed, cycling through the families."""
    fams = list(families) if families else list(FAMILIES)
    for f in fams:
        if f not in FAMILIES:
            raise ConfigError(f"unknown fractal family {f!r}")
    return [
        generate(FractalSpec(family=fams[i % len(fams)], seed=s, size=size))
        for i, s in enumerate(seeds)
    ]


def _palette_color(rng: np.random.Generator, sat: float, val: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(float(rng.random()), sat, val))


def _palette_ramp(rng: np.random.Generator, val_a: float, val_b: float) -> tuple[np.ndarray, np.ndarray]:
    """Two ramp anchors with hues forced >= 1/3 of the circle apart."""
    h = float(rng.random())
    h2 = (h + 1.0 / 3.0 + float(rng.random()) / 3.0) % 1.0
    a = np.array(colorsys.hsv_to_rgb(h, 0.85, val_a))
    b = np.array(colorsys.hsv_to_rgb(h2, 0.6, val_b))
    return a, b


def _ifs_flame(seed: int, size: int) -> np.ndarray:
    rng = derive_rng(seed, 1)
    n_maps = int(rng.integers(3, 7))

    # Contractive affine maps: rotation * diag(s1, s2) + translation, s < 1.
    thetas = rng.uniform(0.0, 2.0 * np.pi, size=n_maps)
    scales = rng.uniform(0.3, 0.75, size=(n_maps, 2))
    trans = rng.uniform(-0.8, 0.8, size=(n_maps, 2))
    mats = np.empty((n_maps, 2, 2))
    for k in range(n_maps):
        c, s = np.cos(thetas[k]), np.sin(thetas[k])
        mats[k] = np.array([[c, -s], [s, c]]) @ np.diag(scales[k])
    colors = np.stack([_palette_color(rng, 0.85, 1.0) for _ in range(n_maps)])

    pts = rng.uniform(-1.0, 1.0, size=(_FLAME_BATCH, 2))
    kept = []
    kept_colors = []
    for it in range(_FLAME_ITERS):
        choice = rng.integers(0, n_maps, size=_FLAME_BATCH)
        pts = np.einsum("nij,nj->ni", mats[choice], pts) + trans[choice]
        if it >= _FLAME_BURN_IN:
            kept.append(pts.copy())
            kept_colors.append(colors[choice])
    all_pts = np.concatenate(kept)
    all_colors = np.concatenate(kept_colors)

    # Fit the attractor into the frame using robust percentile bounds.
    lo = np.percentile(all_pts, 1.0, axis=0)
    hi = np.percentile(all_pts, 99.0, axis=0)
    span = np.maximum(hi - lo, 1e-9)
    uv = (all_pts - lo) / span
    keep = ((uv >= 0.0) & (uv < 1.0)).all(axis=1)
    uv = uv[keep]
    all_colors = all_colors[keep]
    xi = np.minimum((uv[:, 0] * size).astype(np.int64), size - 1)
    yi = np.minimum((uv[:, 1] * size).astype(np.int64), size - 1)

    flat = yi * size + xi
    counts = np.bincount(flat, minlength=size * size).astype(np.float64)
    acc = np.zeros((size * size, 3))
    for ch in range(3):
        acc[:, ch] = np.bincount(flat, weights=all_colors[:, ch], minlength=size * size)

    density = counts.reshape(size, size)
    mean_color = (acc / np.maximum(counts, 1.0)[:, None]).reshape(size, size, 3)
    peak = max(float(density.max()), 1.0)
    brightness = np.log1p(density) / np.log1p(peak)
    return mean_color * brightness[:, :, None]


def _julia(seed: int, size: int) -> np.ndarray:
    rng = derive_rng(seed, 2)
    theta = float(rng.uniform(0.0, 2.0 * np.pi))
    c = _JULIA_RADIUS * np.exp(1j * theta)

    axis = np.linspace(-_JULIA_VIEW, _JULIA_VIEW, size)
    z = axis[None, :] + 1j * axis[:, None]
    z = z.copy()
    escape_val = np.zeros((size, size))
    alive = np.ones((size, size), dtype=bool)
    for it in range(_JULIA_MAX_ITER):
        z[alive] = z[alive] ** 2 + c
        escaped = alive & (np.abs(z) > 2.0)
        if escaped.any():
            # Smooth iteration count removes banding so gradients stay finite.
            mag = np.abs(z[escaped])
            escape_val[escaped] = it + 1.0 - np.log2(np.maximum(np.log(mag), 1e-12))
        alive &= ~escaped
        if not alive.any():
            break
    # Fixed contrast stretch over the escaped region; fast-escaping parameter
    # choices would otherwise give a nearly flat ramp.
    escaped_vals = escape_val[~alive]
    if escaped_vals.size:
        lo = np.percentile(escaped_vals, 2.0)
        hi = np.percentile(escaped_vals, 98.0)
        t = np.clip((escape_val - lo) / max(hi - lo, 1e-9), 0.0, 1.0)
    else:
        t = np.zeros_like(escape_val)

    a, b = _palette_ramp(rng, 0.9, 1.0)
    out = a[None, None, :] * (1.0 - t[:, :, None]) + b[None, None, :] * t[:, :, None]
    if alive.any():
        # Interior pixels get a dark orbit-magnitude shading so connected
        # sets do not collapse into a featureless region.
        mag = np.abs(z[alive])
        lo, hi = np.percentile(mag, 2.0), np.percentile(mag, 98.0)
        shade = np.clip((mag - lo) / max(hi - lo, 1e-9), 0.0, 1.0)
        out[alive] = a[None, :] * (0.08 + 0.3 * shade[:, None])
    return out


def _smoothstep(x: np.ndarray) -> np.ndarray:
    return x * x * (3.0 - 2.0 * x)


def _value_noise_octave(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    lattice = rng.random((cells + 1, cells + 1))
    coord = np.linspace(0.0, cells, size, endpoint=False)
    i = coord.astype(np.int64)
    f = _smoothstep(coord - i)
    i = np.minimum(i, cells - 1)

    v00 = lattice[np.ix_(i, i)]
    v01 = lattice[np.ix_(i, i + 1)]
    v10 = lattice[np.ix_(i + 1, i)]
    v11 = lattice[np.ix_(i + 1, i + 1)]
    fy, fx = f[:, None], f[None, :]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def _fbm_noise(seed: int, size: int) -> np.ndarray:
    rng = derive_rng(seed, 3)
    total = np.zeros((size, size))
    weight_sum = 0.0
    for octave in range(_FBM_OCTAVES):
        w = _FBM_PERSISTENCE**octave
        cells = min(_FBM_BASE_CELLS * 2**octave, size)
        total += w * _value_noise_octave(rng, size, cells)
        weight_sum += w
    t = total / weight_sum

    a, b = _palette_ramp(rng, 0.35, 1.0)
    return a[None, None, :] * (1.0 - t[:, :, None]) + b[None, None, :] * t[:, :, None]
