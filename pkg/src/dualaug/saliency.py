"""Where does a policy look?  Saliency maps and an attention-in-mask score.

For internal policies the map is the analytic input gradient of the squared
action norm (checked against finite differences in the test suite).  For
black-box scorers an occlusion map is provided instead: slide a patch of the
dataset-mean color over the image and record how much the score moves.

The scalar `attention_in_mask` (in-mask saliency mass over total mass) turns
"the policy attends to the task-relevant region" into a number that can be
compared across training methods.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeError
from .imgcore import Image, Mask, _freeze
from .synthbench import TinyPolicy


@dataclass(frozen=True)
class SaliencyMap:
    weights: np.ndarray  # (H, W), nonnegative

    def __post_init__(self) -> None:
        if self.weights.ndim != 2:
            raise ShapeError(f"saliency weights must be (H, W), got {self.weights.shape}")
        if (self.weights < 0).any():
            raise ShapeError("saliency weights must be nonnegative")

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> np.ndarray:
        t = self.total
        return self.weights / t if t > 0 else self.weights.copy()


def gradient_saliency(policy: TinyPolicy, o: Image, state: np.ndarray) -> SaliencyMap:
    """Per-pixel |d ||action||^2 / d o|, maxed over channels, analytic.

    The visualized scalar for a multi-dimensional action is the squared
    action norm; gradients flow back through the head, the encoder, and the
    average-pool downsampling, so the map has full observation resolution.
    """
    obs_batch = o.data[None]
    x = policy.preprocess(obs_batch)
    s = policy.norm_state(np.asarray(state, dtype=np.float64)[None])

    feats, enc_acts = policy.encoder.forward_cached(x)
    head_in = np.concatenate([feats, s], axis=1)
    pred, head_acts = policy.head.forward_cached(head_in)

    grad_pred = 2.0 * pred  # d ||a||^2 / d a
    _, _, grad_head_in = policy.head.backward(head_acts, grad_pred)
    _, _, grad_x = policy.encoder.backward(enc_acts, grad_head_in[:, : feats.shape[1]])

    f = policy.meta.downsample
    h, w, c = o.data.shape
    pooled_grad = grad_x.reshape(h // f, w // f, c)
    # Average pooling distributes gradient equally over each f x f cell.
    full = np.repeat(np.repeat(pooled_grad, f, axis=0), f, axis=1) / (f * f)
    return SaliencyMap(_freeze(np.abs(full).max(axis=2)))


def _bilinear_grid_upsample(grid: np.ndarray, centers_y: np.ndarray, centers_x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Upsample values at grid-cell centers to full resolution (edge clamp)."""
    rows = np.empty((h, grid.shape[1]))
    for j in range(grid.shape[1]):
        rows[:, j] = np.interp(np.arange(h), centers_y, grid[:, j])
    out = np.empty((h, w))
    for i in range(h):
        out[i] = np.interp(np.arange(w), centers_x, rows[i])
    return out


def occlusion_saliency(
    scorer: Callable[[Image], float],
    o: Image,
    patch: int = 8,
    stride: int = 4,
    fill: np.ndarray | None = None,
) -> SaliencyMap:
    """|score drop| when each patch is replaced by a fill color.

    `fill` should be the dataset-mean color; it defaults to the mean color
    of the image itself.
    """
    if patch < 1 or stride < 1:
        raise ShapeError(f"patch and stride must be >= 1, got {patch}, {stride}")
    h, w, c = o.data.shape
    if fill is None:
        fill = o.data.mean(axis=(0, 1))
    fill = np.asarray(fill, dtype=np.float64).reshape(1, 1, c)

    base = float(scorer(o))
    ys = list(range(0, max(h - patch, 0) + 1, stride))
    xs = list(range(0, max(w - patch, 0) + 1, stride))
    grid = np.zeros((len(ys), len(xs)))
    for gi, y0 in enumerate(ys):
        for gj, x0 in enumerate(xs):
            occluded = o.data.copy()
            occluded[y0 : y0 + patch, x0 : x0 + patch] = np.clip(fill, 0.0, 1.0)
            grid[gi, gj] = abs(float(scorer(Image(_freeze(occluded)))) - base)

    centers_y = np.array(ys, dtype=np.float64) + (patch - 1) / 2.0
    centers_x = np.array(xs, dtype=np.float64) + (patch - 1) / 2.0
    return SaliencyMap(_freeze(_bilinear_grid_upsample(grid, centers_y, centers_x, h, w)))


def attention_in_mask(sal: SaliencyMap, m: Mask) -> float | None:
    """Fraction of saliency mass inside the mask; None when the map is empty."""
    if sal.weights.shape != m.data.shape:
        raise ShapeError(f"map {sal.weights.shape} and mask {m.data.shape} differ")
    total = sal.total
    if total <= 0.0:
        return None
    return float((sal.weights * m.data).sum() / total)


# Fixed five-anchor color ramp (dark blue -> cyan -> green -> yellow -> red),
# used by the CLI to write heatmap images.
_RAMP_ANCHORS = np.array(
    [
        [0.05, 0.03, 0.35],
        [0.0, 0.55, 0.85],
        [0.1, 0.8, 0.3],
        [0.95, 0.9, 0.1],
        [0.85, 0.1, 0.05],
    ]
)


def render_heatmap(sal: SaliencyMap) -> Image:
    """Map normalized weights through the fixed color ramp."""
    w = sal.weights
    peak = w.max()
    t = w / peak if peak > 0 else w
    pos = t * (len(_RAMP_ANCHORS) - 1)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, len(_RAMP_ANCHORS) - 2)
    frac = (pos - i0)[:, :, None]
    rgb = _RAMP_ANCHORS[i0] * (1.0 - frac) + _RAMP_ANCHORS[i0 + 1] * frac
    return Image(_freeze(np.clip(rgb, 0.0, 1.0)))
