"""Synthetic reaching benchmark for exercising the augmentation pipeline.

A scripted expert drives a virtual end-effector toward a colored target disc
on a 64x64 canvas over 20 steps.  The demonstration environment renders the
target at a base hue on a clean background; the test environment shifts the
target hue by a held-out delta and swaps in a cluttered background with
distractors.  The held-out shift (+0.25 of the hue circle by default) lies
outside the training augmentation range (+/-0.15), so test-time variation is
never seen during training, augmented or not.

The policy is deliberately tiny: an MLP encoder on the flattened 32x32
downsampled observation plus a linear head on [features, state].  Training
minimizes mean squared action error with plain minibatch SGD and is
bit-deterministic in its seed.
"""

from __future__ import annotations

import colorsys
import struct
from dataclasses import dataclass, field

import numpy as np

from .augment import (
    AugPlan,
    HueShift,
    PixMixParams,
    SpriteComposite,
    color_disc_sprites,
    identity_plan,
)
from .dataio import Dataset, DatasetMeta, Episode
from .errors import ConfigError, DataError, ShapeError
from .fractal import build_corpus, default_corpus_seeds
from .imgcore import Image, Mask, _freeze, downsample_mean
from .nets import MLP
from .parallel import pmap
from .rng import STREAM_NET, STREAM_SCENE, STREAM_TRAIN, derive_rng

# -- scene specification -----------------------------------------------------


@dataclass(frozen=True)
class TargetSpec:
    position: tuple[float, float]  # (y, x), canvas pixels
    radius: float
    color_hsv: tuple[float, float, float]


@dataclass(frozen=True)
class DistractorSpec:
    shape: str  # "disc" | "square"
    position: tuple[float, float]
    size: float
    color_hsv: tuple[float, float, float]


@dataclass(frozen=True)
class BackgroundSpec:
    style: str  # "flat" | "clutter"
    palette_seed: int


@dataclass(frozen=True)
class SceneSpec:
    canvas: int
    target: TargetSpec
    distractors: tuple[DistractorSpec, ...]
    background: BackgroundSpec
    # Spots painted over the target disc: in-region appearance novelty,
    # the analogue of extra objects sitting inside the task-relevant region.
    target_spots: tuple[DistractorSpec, ...] = ()

    def __post_init__(self) -> None:
        y, x = self.target.position
        r = self.target.radius
        if not (r <= y <= self.canvas - r and r <= x <= self.canvas - r):
            raise ConfigError(f"target at {self.target.position} r={r} leaves the canvas")
        if self.background.style not in ("flat", "clutter"):
            raise ConfigError(f"unknown background style {self.background.style!r}")


def scene_to_config(spec: SceneSpec) -> dict:
    return {
        "canvas": spec.canvas,
        "target": {
            "position": list(spec.target.position),
            "radius": spec.target.radius,
            "color_hsv": list(spec.target.color_hsv),
        },
        "distractors": [_distractor_to_config(d) for d in spec.distractors],
        "target_spots": [_distractor_to_config(d) for d in spec.target_spots],
        "background": {"style": spec.background.style, "palette_seed": spec.background.palette_seed},
    }


def _distractor_to_config(d: DistractorSpec) -> dict:
    return {
        "shape": d.shape,
        "position": list(d.position),
        "size": d.size,
        "color_hsv": list(d.color_hsv),
    }


def _distractor_from_config(raw: dict) -> DistractorSpec:
    return DistractorSpec(
        raw["shape"], tuple(raw["position"]), float(raw["size"]), tuple(raw["color_hsv"])
    )


def scene_from_config(cfg: dict) -> SceneSpec:
    t = cfg["target"]
    return SceneSpec(
        canvas=int(cfg["canvas"]),
        target=TargetSpec(tuple(t["position"]), float(t["radius"]), tuple(t["color_hsv"])),
        distractors=tuple(_distractor_from_config(d) for d in cfg.get("distractors", [])),
        background=BackgroundSpec(cfg["background"]["style"], int(cfg["background"]["palette_seed"])),
        target_spots=tuple(_distractor_from_config(d) for d in cfg.get("target_spots", [])),
    )


# -- rasterization -----------------------------------------------------------


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def _disc_predicate(canvas: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[:canvas, :canvas]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


_CLUTTER_SAT = (0.4, 0.9)
_CLUTTER_VAL = (0.3, 0.95)
_CLUTTER_RECTS = 12


def _paint_background(spec: SceneSpec) -> np.ndarray:
    rng = derive_rng(spec.background.palette_seed, STREAM_SCENE)
    c = spec.canvas
    if spec.background.style == "flat":
        base = 0.72 + rng.uniform(-0.05, 0.05)
        tint = rng.uniform(-0.03, 0.03, size=3)
        return np.clip(np.tile(base + tint, (c, c, 1)), 0.0, 1.0)
    canvas = np.tile(rng.uniform(0.1, 0.4, size=3), (c, c, 1))
    for _ in range(_CLUTTER_RECTS):
        h = int(rng.integers(6, c // 2))
        w = int(rng.integers(6, c // 2))
        y0 = int(rng.integers(0, c - h))
        x0 = int(rng.integers(0, c - w))
        color = _hsv(rng.random(), rng.uniform(*_CLUTTER_SAT), rng.uniform(*_CLUTTER_VAL))
        canvas[y0 : y0 + h, x0 : x0 + w] = color
    return np.clip(canvas, 0.0, 1.0)


def _paint_shape(canvas: np.ndarray, d: DistractorSpec) -> None:
    c = canvas.shape[0]
    color = _hsv(*d.color_hsv)
    if d.shape == "disc":
        canvas[_disc_predicate(c, d.position[0], d.position[1], d.size)] = color
    elif d.shape == "square":
        y0 = int(round(d.position[0] - d.size))
        x0 = int(round(d.position[1] - d.size))
        side = int(round(2 * d.size))
        ys = slice(max(0, y0), min(c, y0 + side))
        xs = slice(max(0, x0), min(c, x0 + side))
        canvas[ys, xs] = color
    else:
        raise ConfigError(f"unknown distractor shape {d.shape!r}")


def render(spec: SceneSpec, ee_position: tuple[float, float] | None = None) -> tuple[Image, Mask]:
    """Rasterize a scene; the mask is exactly the target-disc support."""
    canvas = _paint_background(spec)
    c = spec.canvas
    for d in spec.distractors:
        _paint_shape(canvas, d)

    target_support = _disc_predicate(c, spec.target.position[0], spec.target.position[1], spec.target.radius)
    canvas[target_support] = _hsv(*spec.target.color_hsv)
    for d in spec.target_spots:
        _paint_shape(canvas, d)

    if ee_position is not None:
        canvas[_disc_predicate(c, ee_position[0], ee_position[1], 2.0)] = 1.0

    return (
        Image(_freeze(np.clip(canvas, 0.0, 1.0))),
        Mask.from_array(target_support.astype(float)),
    )


# -- benchmark configuration and episode generation --------------------------


@dataclass(frozen=True)
class BenchConfig:
    canvas: int = 64
    episode_len: int = 20
    step_max: float = 2.0
    target_radius_range: tuple[float, float] = (5.0, 7.0)
    demo_hue: float = 0.0
    held_out_hue_delta: float = 0.25  # never drawn by the training augmentation
    target_sat: float = 0.9
    target_val: float = 0.95
    n_distractors_test: int = 3
    distractor_hue_range: tuple[float, float] = (0.55, 0.75)
    distractor_size_range: tuple[float, float] = (2.0, 3.5)  # clearly smaller than the target


def expert_action(position: np.ndarray, target: np.ndarray, step_max: float) -> np.ndarray:
    """Step toward the target, clamped to step_max; lands exactly when close."""
    delta = target - position
    dist = float(np.hypot(*delta))
    if dist <= step_max:
        return delta
    return delta * (step_max / dist)


def make_scene_spec(env: str, rng: np.random.Generator, cfg: BenchConfig) -> SceneSpec:
    if env not in ("demo", "test"):
        raise ConfigError(f"env must be 'demo' or 'test', got {env!r}")
    c = cfg.canvas
    radius = float(rng.uniform(*cfg.target_radius_range))
    margin = 16.0
    ty = float(rng.uniform(margin, c - margin))
    tx = float(rng.uniform(margin, c - margin))
    hue = cfg.demo_hue if env == "demo" else cfg.demo_hue + cfg.held_out_hue_delta
    target = TargetSpec((ty, tx), radius, (hue % 1.0, cfg.target_sat, cfg.target_val))

    distractors: list[DistractorSpec] = []
    if env == "test":
        while len(distractors) < cfg.n_distractors_test:
            size = float(rng.uniform(*cfg.distractor_size_range))
            dy = float(rng.uniform(size, c - size))
            dx = float(rng.uniform(size, c - size))
            if np.hypot(dy - ty, dx - tx) < radius + size + 3.0:
                continue  # keep distractors clear of the target region
            shape = "disc" if rng.random() < 0.5 else "square"
            h = float(rng.uniform(*cfg.distractor_hue_range))
            # Muted like the clutter: distractors are background objects,
            # not target look-alikes.
            distractors.append(
                DistractorSpec(
                    shape, (dy, dx), size, (h, float(rng.uniform(*_CLUTTER_SAT)), float(rng.uniform(0.5, 0.95)))
                )
            )

    style = "flat" if env == "demo" else "clutter"
    palette_seed = int(rng.integers(0, 2**31 - 1))
    return SceneSpec(c, target, tuple(distractors), BackgroundSpec(style, palette_seed))


def _generate_episode(ctx, idx: int) -> tuple[Episode, SceneSpec]:
    env, seed, cfg = ctx
    rng = derive_rng(seed, STREAM_SCENE, idx)
    spec = make_scene_spec(env, rng, cfg)
    target = np.array(spec.target.position)

    # Keep the start far enough that reaching takes most of the budget;
    # otherwise zero-action "stay" frames dominate the regression target.
    lo = 0.60 * cfg.episode_len * cfg.step_max
    hi = 0.95 * cfg.episode_len * cfg.step_max
    while True:
        angle = rng.uniform(0.0, 2.0 * np.pi)
        dist = rng.uniform(lo, hi)
        pos = target + dist * np.array([np.cos(angle), np.sin(angle)])
        if (pos >= 4.0).all() and (pos <= cfg.canvas - 4.0).all():
            break

    observations, masks, states, actions = [], [], [], []
    for _ in range(cfg.episode_len):
        obs, mask = render(spec, ee_position=(pos[0], pos[1]))
        a = expert_action(pos, target, cfg.step_max)
        observations.append(obs)
        masks.append(mask)
        states.append(pos.copy())
        actions.append(a)
        pos = pos + a
    episode = Episode(
        id=f"{env}-{idx:04d}",
        observations=observations,
        masks=masks,
        states=np.array(states),
        actions=np.array(actions),
    )
    return episode, spec


def generate_episodes(
    n: int, env: str, seed: int, cfg: BenchConfig = BenchConfig(), workers: int = 1
) -> tuple[Dataset, dict[str, SceneSpec]]:
    """Scripted-expert dataset plus the scene spec of every episode."""
    if n < 1:
        raise ConfigError(f"need n >= 1 episodes, got {n}")
    results = pmap(_generate_episode, range(n), workers=workers, ctx=(env, seed, cfg))
    episodes = [ep for ep, _ in results]
    scenes = {ep.id: spec for ep, spec in results}
    meta = DatasetMeta(cfg.canvas, cfg.canvas, 3, 2, 2)
    return Dataset(episodes, meta), scenes


# -- ablation augmentation plans ----------------------------------------------


def method_plans(
    master_seed: int,
    hue_range: float = 0.2,
    texture_size: int = 64,
    corpus_count: int = 64,
) -> dict[str, AugPlan]:
    """The four-way ablation: dual, relevant-only, irrelevant-only, none.

    Relevant-region augmentation pairs a hue rotation with colored-cutout
    compositing.  The hue window must reach past 1/6 of the circle: below
    that the max RGB channel of the target never changes, an encoder can
    keep keying on that one channel, and the augmentation teaches nothing
    that transfers to held-out target colors.
    """
    seeds = default_corpus_seeds(master_seed, corpus_count)
    corpus = tuple(build_corpus(seeds, texture_size))
    rel_ops = (
        HueShift((-hue_range, hue_range)),
        SpriteComposite(sprites=color_disc_sprites(), builtin="color_discs"),
    )
    mixing = PixMixParams(corpus=corpus, corpus_seeds=tuple(seeds), texture_size=texture_size)
    return {
        "dual": AugPlan(rel_ops, mixing, master_seed),
        "rel_only": AugPlan(rel_ops, PixMixParams(k_max=0), master_seed),
        "irr_only": AugPlan((), mixing, master_seed),
        "none": identity_plan(master_seed),
    }


# -- tiny policy ---------------------------------------------------------------


@dataclass(frozen=True)
class PolicyMeta:
    canvas: int
    obs_height: int
    obs_width: int
    obs_channels: int
    downsample: int
    state_dim: int
    action_dim: int


class TinyPolicy:
    """MLP encoder on the downsampled observation + MLP head on [feat, state].

    The head needs its own hidden layer: expert actions are normalized
    directions, and normalization of (target - position) cannot be expressed
    by a linear map over features and state.
    """

    def __init__(self, encoder: MLP, head: MLP, meta: PolicyMeta):
        self.encoder = encoder
        self.head = head
        self.meta = meta

    @classmethod
    def init(cls, meta: PolicyMeta, rng: np.random.Generator, width: int = 64) -> "TinyPolicy":
        d_obs = (
            (meta.obs_height // meta.downsample)
            * (meta.obs_width // meta.downsample)
            * meta.obs_channels
        )
        encoder = MLP.init([d_obs, width, width], rng, out_tanh=True)
        head = MLP.init([width + meta.state_dim, width, meta.action_dim], rng)
        return cls(encoder, head, meta)

    # observation (N,H,W,C) float -> flattened centered inputs (N, d)
    def preprocess(self, obs_batch: np.ndarray) -> np.ndarray:
        n, h, w, c = obs_batch.shape
        f = self.meta.downsample
        if h % f or w % f:
            raise ShapeError(f"observation ({h}, {w}) not divisible by downsample {f}")
        pooled = obs_batch.reshape(n, h // f, f, w // f, f, c).mean(axis=(2, 4))
        return pooled.reshape(n, -1) - 0.5

    def norm_state(self, states: np.ndarray) -> np.ndarray:
        return states / self.meta.canvas - 0.5

    def features(self, obs_batch: np.ndarray) -> np.ndarray:
        return self.encoder.forward(self.preprocess(obs_batch))

    def act(self, obs_batch: np.ndarray, states: np.ndarray) -> np.ndarray:
        feats = self.features(obs_batch)
        return self.head.forward(np.concatenate([feats, self.norm_state(states)], axis=1))

    def act_single(self, obs: Image, state: np.ndarray) -> np.ndarray:
        return self.act(obs.data[None], np.asarray(state, dtype=np.float64)[None])[0]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.encoder.get_flat(), self.head.get_flat()])

    def set_flat(self, flat: np.ndarray) -> None:
        n_enc = self.encoder.get_flat().size
        self.encoder.set_flat(flat[:n_enc])
        self.head.set_flat(flat[n_enc:])

    def copy(self) -> "TinyPolicy":
        return TinyPolicy(self.encoder.copy(), self.head.copy(), self.meta)


# -- behavior cloning ------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    encoder_width: int = 64
    downsample: int = 2


@dataclass
class TrainResult:
    policy: TinyPolicy
    epoch_losses: list[float] = field(default_factory=list)  # [initial, after ep 1, ...]

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def dataset_tensors(dataset: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack all frames into (obs (N,H,W,C), states (N,ds), actions (N,da))."""
    if not dataset.episodes:
        raise DataError("dataset has no episodes")
    obs = np.stack([o.data for ep in dataset.episodes for o in ep.observations])
    states = np.concatenate([ep.states for ep in dataset.episodes])
    actions = np.concatenate([ep.actions for ep in dataset.episodes])
    return obs, states, actions


def action_mse(policy: TinyPolicy, x: np.ndarray, s: np.ndarray, y: np.ndarray) -> float:
    """Mean over frames of the squared action-error norm (batched inputs)."""
    feats = policy.encoder.forward(x)
    pred = policy.head.forward(np.concatenate([feats, s], axis=1))
    return float(np.sum((pred - y) ** 2) / len(y))


def train_bc(dataset: Dataset, hyper: TrainConfig = TrainConfig()) -> TrainResult:
    """Behavior cloning: minimize mean squared action error with minibatch SGD."""
    obs, states, actions = dataset_tensors(dataset)
    meta = PolicyMeta(
        canvas=dataset.meta.height if dataset.meta else obs.shape[1],
        obs_height=obs.shape[1],
        obs_width=obs.shape[2],
        obs_channels=obs.shape[3],
        downsample=hyper.downsample,
        state_dim=states.shape[1],
        action_dim=actions.shape[1],
    )
    rng = derive_rng(hyper.seed, STREAM_TRAIN)
    policy = TinyPolicy.init(meta, rng, width=hyper.encoder_width)

    x = policy.preprocess(obs)
    s = policy.norm_state(states)
    y = actions
    n = len(y)

    vel_h = [np.zeros_like(w) for w in policy.head.weights] + [
        np.zeros_like(b) for b in policy.head.biases
    ]
    vel_e = [np.zeros_like(w) for w in policy.encoder.weights] + [
        np.zeros_like(b) for b in policy.encoder.biases
    ]

    def step(net, grads_w, grads_b, vel):
        k = net.n_layers
        for i in range(k):
            vel[i] = hyper.momentum * vel[i] + grads_w[i]
            net.weights[i] -= hyper.lr * vel[i]
            vel[k + i] = hyper.momentum * vel[k + i] + grads_b[i]
            net.biases[i] -= hyper.lr * vel[k + i]

    losses = [action_mse(policy, x, s, y)]
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = perm[start : start + hyper.batch_size]
            xb, sb, yb = x[idx], s[idx], y[idx]
            feats, enc_acts = policy.encoder.forward_cached(xb)
            head_in = np.concatenate([feats, sb], axis=1)
            pred, head_acts = policy.head.forward_cached(head_in)
            # d/dpred of mean_i ||pred_i - y_i||^2
            grad_pred = 2.0 * (pred - yb) / len(yb)
            gw_h, gb_h, grad_head_in = policy.head.backward(head_acts, grad_pred)
            gw_e, gb_e, _ = policy.encoder.backward(enc_acts, grad_head_in[:, : feats.shape[1]])
            step(policy.head, gw_h, gb_h, vel_h)
            step(policy.encoder, gw_e, gb_e, vel_e)
        loss = action_mse(policy, x, s, y)
        if not np.isfinite(loss):
            raise ArithmeticError(f"training loss is not finite at epoch {epoch + 1}: {loss}")
        losses.append(loss)
    return TrainResult(policy=policy, epoch_losses=losses)


# -- evaluation -------------------------------------------------------------------


@dataclass
class EvalResult:
    mse: float
    endpoint_errors: dict[str, float] = field(default_factory=dict)

    @property
    def mean_endpoint_error(self) -> float | None:
        if not self.endpoint_errors:
            return None
        return float(np.mean(list(self.endpoint_errors.values())))


def rollout_endpoint_error(
    policy: TinyPolicy, spec: SceneSpec, start: np.ndarray, steps: int, step_max: float
) -> float:
    """Closed-loop rollout distance to the target center after `steps` steps."""
    pos = np.array(start, dtype=np.float64)
    target = np.array(spec.target.position)
    for _ in range(steps):
        obs, _ = render(spec, ee_position=(pos[0], pos[1]))
        a = policy.act_single(obs, pos)
        norm = float(np.hypot(*a))
        if norm > step_max:
            a = a * (step_max / norm)  # environment clamps oversized steps
        pos = pos + a
        pos = np.clip(pos, 0.0, spec.canvas - 1.0)
    return float(np.hypot(*(target - pos)))


def eval_policy(
    policy: TinyPolicy,
    dataset: Dataset,
    scenes: dict[str, SceneSpec] | None = None,
    cfg: BenchConfig = BenchConfig(),
) -> EvalResult:
    """Open-loop action MSE, plus closed-loop endpoint error when scenes are given."""
    obs, states, actions = dataset_tensors(dataset)
    x = policy.preprocess(obs)
    s = policy.norm_state(states)
    result = EvalResult(mse=action_mse(policy, x, s, actions))
    if scenes:
        for ep in dataset.episodes:
            spec = scenes.get(ep.id)
            if spec is None:
                continue
            result.endpoint_errors[ep.id] = rollout_endpoint_error(
                policy, spec, ep.states[0], cfg.episode_len, cfg.step_max
            )
    return result


# -- checkpoint format -------------------------------------------------------------
#
# Flat binary, little-endian:
#   magic 'TPOL' | u32 version | 7 x u32 meta | u32 n_enc_sizes | u32 sizes...
#   | u32 n_head_sizes | u32 sizes... | f32 flat params (encoder then head)

CHECKPOINT_MAGIC = b"TPOL"
CHECKPOINT_VERSION = 1


def save_policy(policy: TinyPolicy, path) -> None:
    m = policy.meta
    enc_sizes = policy.encoder.sizes
    head_sizes = policy.head.sizes
    header = struct.pack(
        "<4sI7I",
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        m.canvas,
        m.obs_height,
        m.obs_width,
        m.obs_channels,
        m.downsample,
        m.state_dim,
        m.action_dim,
    )
    header += struct.pack(f"<I{len(enc_sizes)}I", len(enc_sizes), *enc_sizes)
    header += struct.pack(f"<I{len(head_sizes)}I", len(head_sizes), *head_sizes)
    params = policy.get_flat().astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(params)


def load_policy(path) -> TinyPolicy:
    with open(path, "rb") as f:
        blob = f.read()
    magic, version = struct.unpack_from("<4sI", blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a policy checkpoint (bad magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    off = 8
    vals = struct.unpack_from("<7I", blob, off)
    off += 28
    meta = PolicyMeta(*[int(v) for v in vals])
    (n_enc,) = struct.unpack_from("<I", blob, off)
    off += 4
    enc_sizes = list(struct.unpack_from(f"<{n_enc}I", blob, off))
    off += 4 * n_enc
    (n_head,) = struct.unpack_from("<I", blob, off)
    off += 4
    head_sizes = list(struct.unpack_from(f"<{n_head}I", blob, off))
    off += 4 * n_head
    flat = np.frombuffer(blob, dtype="<f4", offset=off).astype(np.float64)

    rng = derive_rng(0, STREAM_NET)
    policy = TinyPolicy(
        MLP.init(enc_sizes, rng, out_tanh=True), MLP.init(head_sizes, rng), meta
    )
    expected = policy.get_flat().size
    if flat.size != expected:
        raise DataError(f"{path}: parameter count {flat.size} != expected {expected}")
    policy.set_flat(flat)
    return policy
