"""Dataset persistence and mask ingestion.

On-disk layout (one directory per episode under the dataset root):

    root/
      meta.json                  # height, width, channels, state_dim, action_dim
      <episode_id>/
        frames/000000.png ...    # 8-bit observations
        masks/000000.png ...     # optional binary masks (any nonzero -> 1)
        states.csv               # one row per frame
        actions.csv              # one row per frame

Images are quantized to 8 bits at this boundary; states and actions are
written with %.17g so float64 values round-trip bit-exactly.  Masks are the
primary input for region-aware augmentation and are normally produced by an
external segmentation tool; `propagate_mask` is a deliberately naive
translation-tracking fallback for datasets that only annotate the first
frame (masks/000000.png is then mandatory).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DataError
from .imgcore import Image, Mask, from_uint8, to_uint8

_EPISODE_ID_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]*")

PROPAGATE_SEARCH_RADIUS = 8  # translation search window, pixels


@dataclass
class Episode:
    """One demonstration: time-aligned observations, masks, states, actions."""

    id: str
    observations: list[Image]
    masks: list[Mask | None]
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.observations)
        if not (len(self.masks) == n and len(self.states) == n and len(self.actions) == n):
            raise DataError(
                f"episode {self.id!r}: lengths differ "
                f"(frames={n}, masks={len(self.masks)}, states={len(self.states)}, "
                f"actions={len(self.actions)})"
            )
        if n:
            shape = self.observations[0].data.shape
            for k, o in enumerate(self.observations):
                if o.data.shape != shape:
                    raise DataError(f"episode {self.id!r}: frame {k} shape {o.data.shape} != {shape}")

    def __len__(self) -> int:
        return len(self.observations)


@dataclass
class DatasetMeta:
    height: int
    width: int
    channels: int
    state_dim: int
    action_dim: int


@dataclass
class Dataset:
    episodes: list[Episode]
    meta: DatasetMeta | None

    def __len__(self) -> int:
        return len(self.episodes)

    def n_frames(self) -> int:
        return sum(len(ep) for ep in self.episodes)


def _require_safe_id(episode_id: str) -> None:
    if not _EPISODE_ID_RE.fullmatch(episode_id):
        raise DataError(f"episode id {episode_id!r} is not a safe directory name")


def _load_image_file(path: Path) -> np.ndarray:
    try:
        with PILImage.open(path) as img:
            return np.asarray(img)
    except OSError as exc:
        raise DataError(f"unreadable image file {path}: {exc}") from exc


def _load_csv(path: Path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise DataError(f"unreadable csv file {path}: {exc}") from exc


def _load_episode(ep_dir: Path) -> Episode:
    frames_dir = ep_dir / "frames"
    frame_files = sorted(frames_dir.glob("*.png"))
    if not frame_files:
        raise DataError(f"episode {ep_dir.name!r}: no frames in {frames_dir}")

    observations = []
    for f in frame_files:
        arr = _load_image_file(f)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        observations.append(from_uint8(arr))

    masks_dir = ep_dir / "masks"
    masks: list[Mask | None] = []
    for f in frame_files:
        mask_path = masks_dir / f.name
        if mask_path.is_file():
            masks.append(Mask.binarize(_load_image_file(mask_path)))
        else:
            masks.append(None)

    states = _load_csv(ep_dir / "states.csv")
    actions = _load_csv(ep_dir / "actions.csv")
    return Episode(
        id=ep_dir.name,
        observations=observations,
        masks=masks,
        states=states,
        actions=actions,
    )


def load_dataset(root_path: str | Path) -> Dataset:
    """Load every episode directory under the root (sorted by name)."""
    root = Path(root_path)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")

    meta = None
    meta_path = root / "meta.json"
    if meta_path.is_file():
        raw = json.loads(meta_path.read_text())
        meta = DatasetMeta(**{k: raw[k] for k in DatasetMeta.__annotations__})

    ep_dirs = sorted(d for d in root.iterdir() if (d / "frames").is_dir())
    episodes = [_load_episode(d) for d in ep_dirs]

    if meta is None and episodes:
        first = episodes[0]
        o = first.observations[0]
        meta = DatasetMeta(
            height=o.height,
            width=o.width,
            channels=o.channels,
            state_dim=first.states.shape[1],
            action_dim=first.actions.shape[1],
        )
    if meta is not None:
        for ep in episodes:
            o = ep.observations[0]
            if (o.height, o.width, o.channels) != (meta.height, meta.width, meta.channels):
                raise DataError(f"episode {ep.id!r}: observation dims differ from dataset meta")
            if ep.states.shape[1] != meta.state_dim or ep.actions.shape[1] != meta.action_dim:
                raise DataError(f"episode {ep.id!r}: state/action dims differ from dataset meta")
    return Dataset(episodes=episodes, meta=meta)


def _save_png(path: Path, arr: np.ndarray) -> None:
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    PILImage.fromarray(arr).save(path)


def save_dataset(dataset: Dataset, root_path: str | Path) -> None:
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    if dataset.meta is not None:
        (root / "meta.json").write_text(json.dumps(vars(dataset.meta), indent=2) + "\n")

    for ep in dataset.episodes:
        _require_safe_id(ep.id)
        ep_dir = root / ep.id
        frames_dir = ep_dir / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        any_mask = any(m is not None for m in ep.masks)
        if any_mask:
            (ep_dir / "masks").mkdir(exist_ok=True)
        for k, (obs, mask) in enumerate(zip(ep.observations, ep.masks)):
            _save_png(frames_dir / f"{k:06d}.png", to_uint8(obs))
            if mask is not None:
                _save_png(ep_dir / "masks" / f"{k:06d}.png", (mask.data * 255).astype(np.uint8))
        np.savetxt(ep_dir / "states.csv", ep.states, delimiter=",", fmt="%.17g")
        np.savetxt(ep_dir / "actions.csv", ep.actions, delimiter=",", fmt="%.17g")


def _gray(img: Image) -> np.ndarray:
    return img.data.mean(axis=2)


def _dilate3x3(m: np.ndarray) -> np.ndarray:
    padded = np.pad(m, 1)
    out = np.zeros_like(m)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out = np.maximum(out, padded[dy : dy + m.shape[0], dx : dx + m.shape[1]])
    return out


def _shift2d(m: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(m)
    h, w = m.shape
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    ys_dst = slice(max(0, dy), min(h, h + dy))
    xs_dst = slice(max(0, dx), min(w, w + dx))
    out[ys_dst, xs_dst] = m[ys_src, xs_src]
    return out


def propagate_mask(prev_mask: Mask, prev_frame: Image, next_frame: Image) -> Mask:
    """Track the masked region by translation and dilate once.

    Scores every integer shift within +/-PROPAGATE_SEARCH_RADIUS by the
    normalized cross-correlation of the masked pixels, picks the best
    (smallest shift wins ties), then applies one 3x3 dilation to absorb
    small shape changes.  A stand-in for a proper video-object-segmentation
    model, adequate for slowly moving rigid regions only.
    """
    if (prev_mask.height, prev_mask.width) != (prev_frame.height, prev_frame.width):
        raise DataError("prev_mask and prev_frame dimensions differ")
    if prev_frame.data.shape != next_frame.data.shape:
        raise DataError("prev_frame and next_frame dimensions differ")

    ys, xs = np.nonzero(prev_mask.data)
    if ys.size == 0:
        return Mask.from_array(np.zeros_like(prev_mask.data))

    g_prev = _gray(prev_frame)
    g_next = _gray(next_frame)
    h, w = g_prev.shape
    a_full = g_prev[ys, xs]

    r = PROPAGATE_SEARCH_RADIUS
    best = None  # (score, |dy|+|dx|, dy, dx)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ys2 = ys + dy
            xs2 = xs + dx
            valid = (ys2 >= 0) & (ys2 < h) & (xs2 >= 0) & (xs2 < w)
            if valid.sum() < max(4, ys.size // 2):
                continue
            a = a_full[valid]
            b = g_next[ys2[valid], xs2[valid]]
            sa, sb = a.std(), b.std()
            if sa < 1e-12 or sb < 1e-12:
                score = 0.0
            else:
                score = float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))
            key = (-score, abs(dy) + abs(dx), dy, dx)
            if best is None or key < best:
                best = key

    dy, dx = (0, 0) if best is None else (best[2], best[3])
    shifted = _shift2d(prev_mask.data, dy, dx)
    return Mask.from_array(_dilate3x3(shifted))
