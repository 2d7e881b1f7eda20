"""Dual-region augmentation of observations.

An augmented observation is built from two independent streams and then
recombined with a hard composite:

    aug = composite(rel(o * M), irr(o * (1 - M)), M)

* The task-relevant stream applies domain-driven transforms (hue rotation,
  sprite compositing) whose random draws are constant across all frames of
  one episode, so an object never flickers within a demonstration.
* The task-irrelevant stream runs 0..k_max mixing rounds against a corpus of
  procedural fractal textures, drawing per frame; each round blends either
  additively or multiplicatively with a Beta-distributed weight.

Both streams are clipped back to their own region, so the composite always
sees disjoint supports and in-mask output never depends on out-of-mask
input (and vice versa).  All draws derive from
(master_seed, episode_key, frame_id, stream), which makes augmentation
reproducible bit for bit regardless of worker count.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .dataio import Dataset, Episode
from .errors import ConfigError, ShapeError
from .fractal import FAMILIES, build_corpus, default_corpus_seeds
from .imgcore import Image, Mask, _freeze, complement, composite, hadamard, resize_nearest, shift_hue
from .parallel import pmap
from .rng import STREAM_IRR, STREAM_REL, FrameRng

MIX_OPS = ("additive", "multiplicative")

DEFAULT_K_MAX = 4
DEFAULT_BETA_ALPHA = 3.0
DEFAULT_CORPUS_SIZE = 64


@dataclass(frozen=True)
class HueShift:
    """Rotate the hue of the task-relevant region by a per-episode draw."""

    hue_delta_range: tuple[float, float]
    kind: str = "hue_shift"

    def __post_init__(self) -> None:
        lo, hi = self.hue_delta_range
        if lo > hi:
            raise ConfigError(f"hue_delta_range is not ordered: {self.hue_delta_range}")


def color_disc_sprites(count: int = 8, radius: int = 4) -> tuple[np.ndarray, ...]:
    """Opaque discs with evenly spaced hues; the builtin cutout sprite set."""
    side = 2 * radius + 1
    yy, xx = np.mgrid[:side, :side]
    disc = (yy - radius) ** 2 + (xx - radius) ** 2 <= radius * radius
    sprites = []
    for i in range(count):
        rgb = colorsys.hsv_to_rgb(i / count, 0.85, 0.9)
        s = np.zeros((side, side, 4))
        s[disc, :3] = rgb
        s[disc, 3] = 1.0
        sprites.append(s)
    return tuple(sprites)


BUILTIN_SPRITES = {"color_discs": color_disc_sprites}


@dataclass(frozen=True)
class SpriteComposite:
    """Alpha-blend cutout sprites into the task-relevant region.

    Placement coordinates are drawn once per episode as fractions of the
    mask bounding box, so sprites track the region across frames.
    """

    sprites: tuple[np.ndarray, ...]
    sprite_paths: tuple[str, ...] = ()
    builtin: str = ""  # set when sprites come from BUILTIN_SPRITES
    count_range: tuple[int, int] = (1, 3)
    scale_range: tuple[float, float] = (0.5, 1.0)
    rotation_range: tuple[float, float] = (0.0, 360.0)
    placement: str = "uniform_in_mask"
    kind: str = "sprite_composite"

    def __post_init__(self) -> None:
        if not self.sprites:
            raise ConfigError("sprite_composite requested with an empty sprite set")
        for s in self.sprites:
            if s.ndim != 3 or s.shape[2] != 4:
                raise ConfigError(f"sprites must be (h, w, 4) RGBA, got {s.shape}")
        if self.count_range[0] > self.count_range[1] or self.count_range[0] < 0:
            raise ConfigError(f"bad count_range {self.count_range}")
        if self.scale_range[0] > self.scale_range[1] or self.scale_range[0] <= 0:
            raise ConfigError(f"bad scale_range {self.scale_range}")
        if self.rotation_range[0] > self.rotation_range[1]:
            raise ConfigError(f"bad rotation_range {self.rotation_range}")
        if self.placement != "uniform_in_mask":
            raise ConfigError(f"unknown placement {self.placement!r}")


RelOp = HueShift | SpriteComposite


@dataclass(frozen=True)
class PixMixParams:
    """Mixing-round parameters for task-irrelevant randomization."""

    k_max: int = DEFAULT_K_MAX
    beta_alpha: float = DEFAULT_BETA_ALPHA
    ops: tuple[str, ...] = MIX_OPS
    corpus: tuple[Image, ...] = ()
    corpus_seeds: tuple[int, ...] = ()
    corpus_families: tuple[str, ...] = FAMILIES
    texture_size: int = DEFAULT_CORPUS_SIZE

    def __post_init__(self) -> None:
        if self.k_max < 0:
            raise ConfigError(f"k_max must be >= 0, got {self.k_max}")
        if self.beta_alpha <= 0:
            raise ConfigError(f"beta_alpha must be > 0, got {self.beta_alpha}")
        for op in self.ops:
            if op not in MIX_OPS:
                raise ConfigError(f"unknown mixing op {op!r}")
        if self.k_max > 0 and not self.corpus:
            raise ConfigError("texture corpus must be non-empty when k_max > 0")


@dataclass(frozen=True)
class AugPlan:
    rel_ops: tuple[RelOp, ...]
    pixmix: PixMixParams
    master_seed: int


def identity_plan(master_seed: int = 0) -> AugPlan:
    """A plan whose output is bit-identical to its input."""
    return AugPlan(rel_ops=(), pixmix=PixMixParams(k_max=0), master_seed=master_seed)


# -- plan serialization ------------------------------------------------------


def load_sprite_file(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as img:
        return np.asarray(img.convert("RGBA"), dtype=np.float64) / 255.0


def plan_to_config(plan: AugPlan) -> dict:
    rel_ops = []
    for op in plan.rel_ops:
        if isinstance(op, HueShift):
            rel_ops.append({"kind": op.kind, "hue_delta_range": list(op.hue_delta_range)})
        else:
            if not op.sprite_paths and not op.builtin:
                raise ConfigError(
                    "cannot serialize sprite_composite without sprite_paths or a builtin name"
                )
            entry = {
                "kind": op.kind,
                "count_range": list(op.count_range),
                "scale_range": list(op.scale_range),
                "rotation_range": list(op.rotation_range),
                "placement": op.placement,
            }
            if op.builtin:
                entry["builtin"] = op.builtin
            else:
                entry["sprite_paths"] = list(op.sprite_paths)
            rel_ops.append(entry)
    p = plan.pixmix
    return {
        "master_seed": plan.master_seed,
        "rel_ops": rel_ops,
        "pixmix": {
            "k_max": p.k_max,
            "beta_alpha": p.beta_alpha,
            "ops": list(p.ops),
            "corpus_seeds": list(p.corpus_seeds),
            "corpus_families": list(p.corpus_families),
            "texture_size": p.texture_size,
        },
    }


def plan_from_config(config: dict, sprite_root: str | Path | None = None) -> AugPlan:
    """Build a plan from its JSON form, regenerating the texture corpus."""
    try:
        master_seed = int(config["master_seed"])
    except KeyError as exc:
        raise ConfigError("plan config is missing master_seed") from exc

    rel_ops: list[RelOp] = []
    for raw in config.get("rel_ops", []):
        kind = raw.get("kind")
        if kind == "hue_shift":
            lo, hi = raw["hue_delta_range"]
            rel_ops.append(HueShift(hue_delta_range=(float(lo), float(hi))))
        elif kind == "sprite_composite":
            builtin = raw.get("builtin", "")
            if builtin:
                if builtin not in BUILTIN_SPRITES:
                    raise ConfigError(f"unknown builtin sprite set {builtin!r}")
                sprites = BUILTIN_SPRITES[builtin]()
                sprite_paths: tuple[str, ...] = ()
            else:
                paths = [
                    str(Path(sprite_root) / p) if sprite_root is not None else p
                    for p in raw["sprite_paths"]
                ]
                sprites = tuple(load_sprite_file(p) for p in paths)
                sprite_paths = tuple(raw["sprite_paths"])
            rel_ops.append(
                SpriteComposite(
                    sprites=sprites,
                    sprite_paths=sprite_paths,
                    builtin=builtin,
                    count_range=tuple(raw.get("count_range", (1, 3))),
                    scale_range=tuple(raw.get("scale_range", (0.5, 1.0))),
                    rotation_range=tuple(raw.get("rotation_range", (0.0, 360.0))),
                    placement=raw.get("placement", "uniform_in_mask"),
                )
            )
        else:
            raise ConfigError(f"unknown rel_op kind {kind!r}")

    raw_p = config.get("pixmix", {})
    k_max = int(raw_p.get("k_max", DEFAULT_K_MAX))
    seeds = [int(s) for s in raw_p.get("corpus_seeds", [])]
    families = list(raw_p.get("corpus_families", FAMILIES))
    size = int(raw_p.get("texture_size", DEFAULT_CORPUS_SIZE))
    if k_max > 0 and not seeds:
        seeds = default_corpus_seeds(master_seed)
    corpus = tuple(build_corpus(seeds, size, families)) if k_max > 0 else ()
    pixmix = PixMixParams(
        k_max=k_max,
        beta_alpha=float(raw_p.get("beta_alpha", DEFAULT_BETA_ALPHA)),
        ops=tuple(raw_p.get("ops", MIX_OPS)),
        corpus=corpus,
        corpus_seeds=tuple(seeds),
        corpus_families=tuple(families),
        texture_size=size,
    )
    return AugPlan(rel_ops=tuple(rel_ops), pixmix=pixmix, master_seed=master_seed)


def save_plan(plan: AugPlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan_to_config(plan), indent=2) + "\n")


def load_plan(path: str | Path, sprite_root: str | Path | None = None) -> AugPlan:
    return plan_from_config(json.loads(Path(path).read_text()), sprite_root)


# -- task-relevant stream ----------------------------------------------------


def _mask_bbox(m: Mask) -> tuple[int, int, int, int] | None:
    ys, xs = np.nonzero(m.data)
    if ys.size == 0:
        return None
    return int(ys.min()), int(ys.max()), int(xs.min()), int(xs.max())


def _render_sprite(sprite: np.ndarray, scale: float, rot_deg: float) -> np.ndarray:
    """Scaled/rotated premultiplied-RGBA patch via inverse bilinear sampling."""
    hs, ws = sprite.shape[:2]
    premult = sprite.copy()
    premult[:, :, :3] *= sprite[:, :, 3:4]

    out_side = max(2, int(np.ceil(scale * np.hypot(hs, ws))))
    theta = np.deg2rad(rot_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)

    yy, xx = np.mgrid[:out_side, :out_side].astype(np.float64)
    yy -= (out_side - 1) / 2.0
    xx -= (out_side - 1) / 2.0
    # Inverse map: un-rotate, un-scale, recenter on the sprite.
    src_x = (cos_t * xx + sin_t * yy) / scale + (ws - 1) / 2.0
    src_y = (-sin_t * xx + cos_t * yy) / scale + (hs - 1) / 2.0

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0

    def tap(yi, xi):
        inside = (yi >= 0) & (yi < hs) & (xi >= 0) & (xi < ws)
        vals = np.zeros((out_side, out_side, 4))
        vals[inside] = premult[yi[inside], xi[inside]]
        return vals

    v00 = tap(y0, x0)
    v01 = tap(y0, x0 + 1)
    v10 = tap(y0 + 1, x0)
    v11 = tap(y0 + 1, x0 + 1)
    fy3 = fy[:, :, None]
    fx3 = fx[:, :, None]
    return (
        v00 * (1 - fy3) * (1 - fx3)
        + v01 * (1 - fy3) * fx3
        + v10 * fy3 * (1 - fx3)
        + v11 * fy3 * fx3
    )


def _blend_patch(canvas: np.ndarray, patch: np.ndarray, cy: int, cx: int) -> None:
    """Composite a premultiplied-RGBA patch centered at (cy, cx), in place."""
    h, w = canvas.shape[:2]
    ph, pw = patch.shape[:2]
    y0 = cy - ph // 2
    x0 = cx - pw // 2
    ys = slice(max(0, y0), min(h, y0 + ph))
    xs = slice(max(0, x0), min(w, x0 + pw))
    if ys.start >= ys.stop or xs.start >= xs.stop:
        return
    pys = slice(ys.start - y0, ys.stop - y0)
    pxs = slice(xs.start - x0, xs.stop - x0)
    rgb = patch[pys, pxs, :3]
    alpha = patch[pys, pxs, 3:4]
    canvas[ys, xs] = rgb + (1.0 - alpha) * canvas[ys, xs]


def apply_rel(o_masked: Image, m: Mask, plan: AugPlan, frame_rng: FrameRng) -> Image:
    """Task-relevant transforms; all writes are clipped back to the mask.

    With an empty op list the input is returned unchanged (bit-exact).
    """
    if not plan.rel_ops:
        return o_masked
    out = o_masked
    for idx, op in enumerate(plan.rel_ops):
        rng = frame_rng.episode_stream(STREAM_REL, idx)
        if isinstance(op, HueShift):
            delta = float(rng.uniform(op.hue_delta_range[0], op.hue_delta_range[1]))
            out = hadamard(shift_hue(out, delta), m)
        else:
            bbox = _mask_bbox(m)
            if bbox is None:
                continue
            y_lo, y_hi, x_lo, x_hi = bbox
            canvas = out.data.copy()
            count = int(rng.integers(op.count_range[0], op.count_range[1] + 1))
            for _ in range(count):
                s_idx = int(rng.integers(0, len(op.sprites)))
                scale = float(rng.uniform(op.scale_range[0], op.scale_range[1]))
                rot = float(rng.uniform(op.rotation_range[0], op.rotation_range[1]))
                v = float(rng.random())
                u = float(rng.random())
                cy = int(round(y_lo + v * (y_hi - y_lo)))
                cx = int(round(x_lo + u * (x_hi - x_lo)))
                patch = _render_sprite(op.sprites[s_idx], scale, rot)
                _blend_patch(canvas, patch, cy, cx)
            out = hadamard(Image(_freeze(np.clip(canvas, 0.0, 1.0))), m)
    return out


# -- task-irrelevant stream --------------------------------------------------


def mix_round(x: np.ndarray, texture: np.ndarray, op: str, lam: float) -> np.ndarray:
    """One mixing round; lam = 1 leaves the input unchanged for both ops."""
    if op == "additive":
        mixed = lam * x + (1.0 - lam) * texture
    elif op == "multiplicative":
        mixed = np.power(x, lam) * np.power(texture, 1.0 - lam)
    else:
        raise ConfigError(f"unknown mixing op {op!r}")
    return np.clip(mixed, 0.0, 1.0)


def _texture_for(img_shape: tuple[int, int, int], texture: Image) -> np.ndarray:
    h, w, _ = img_shape
    if (texture.height, texture.width) != (h, w):
        texture = resize_nearest(texture, h, w)
    return texture.data


def apply_irr(o_masked: Image, m_complement: Mask, plan: AugPlan, frame_rng: FrameRng) -> Image:
    """Task-irrelevant randomization: k ~ U{0..k_max} texture-mixing rounds."""
    p = plan.pixmix
    if p.k_max == 0:
        return o_masked
    rng = frame_rng.frame_stream(STREAM_IRR)
    k = int(rng.integers(0, p.k_max + 1))
    if k == 0:
        return o_masked
    x = o_masked.data
    for _ in range(k):
        texture = p.corpus[int(rng.integers(0, len(p.corpus)))]
        op = p.ops[int(rng.integers(0, len(p.ops)))]
        lam = float(rng.beta(p.beta_alpha, p.beta_alpha))
        x = mix_round(x, _texture_for(x.shape, texture), op, lam)
    return hadamard(Image(_freeze(x)), m_complement)


# -- composition -------------------------------------------------------------


def augment_observation(
    o: Image, m: Mask, plan: AugPlan, episode_key: str, frame_id: int
) -> Image:
    """Augment one frame; deterministic in (plan.master_seed, episode_key, frame_id)."""
    if (o.height, o.width) != (m.height, m.width):
        raise ShapeError(
            f"observation ({o.height}x{o.width}) and mask ({m.height}x{m.width}) differ"
        )
    frame_rng = FrameRng(plan.master_seed, episode_key, frame_id)
    m_comp = complement(m)
    rel = apply_rel(hadamard(o, m), m, plan, frame_rng)
    irr = apply_irr(hadamard(o, m_comp), m_comp, plan, frame_rng)
    return composite(rel, irr, m)


@dataclass
class AugmentReport:
    n_source_episodes: int = 0
    n_augmented_episodes: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)


def _augment_episode_copy(ctx, unit):
    plan, episodes = ctx
    ep_idx, copy_idx = unit
    ep = episodes[ep_idx]
    new_id = f"{ep.id}-aug{copy_idx:02d}"
    new_obs = [
        augment_observation(o, m, plan, new_id, t)
        for t, (o, m) in enumerate(zip(ep.observations, ep.masks))
    ]
    return Episode(
        id=new_id,
        observations=new_obs,
        masks=list(ep.masks),
        states=ep.states.copy(),
        actions=ep.actions.copy(),
    )


def augment_dataset(
    dataset: Dataset, plan: AugPlan, copies: int, workers: int = 1
) -> tuple[Dataset, AugmentReport]:
    """Emit the source episodes plus `copies` augmented variants of each.

    States and actions pass through untouched; episodes with any missing
    mask are not augmented and land in the report instead.
    """
    report = AugmentReport(n_source_episodes=len(dataset.episodes))
    usable = []
    for idx, ep in enumerate(dataset.episodes):
        if any(m is None for m in ep.masks):
            report.skipped.append((ep.id, "missing mask for at least one frame"))
        else:
            usable.append(idx)

    units = [(idx, c) for idx in usable for c in range(copies)]
    augmented = pmap(_augment_episode_copy, units, workers=workers, ctx=(plan, dataset.episodes))
    report.n_augmented_episodes = len(augmented)
    episodes = list(dataset.episodes) + augmented
    return Dataset(episodes=episodes, meta=dataset.meta), report
