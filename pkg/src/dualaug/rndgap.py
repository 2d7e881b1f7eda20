"""Random-network-distillation gap: a scalar measure of visual generalization.

A frozen random MLP and an identically shaped trainable MLP both map encoder
features to a 32-d embedding.  The trainable net is fit to imitate the frozen
one on demonstration-environment observations only; the squared prediction
error ("novelty") is then compared between demonstration and test
observations:

    gap = | mean novelty(demo) - mean novelty(test) |

An encoder that maps test observations into the same feature region as the
demonstrations yields a small gap.  The full protocol repeats the measurement
with `n_resample` fresh frozen-net seeds; comparisons across methods pair
resamplings by index (identical frozen-net seeds), which is what makes a
paired t-test over methods meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .errors import ConfigError, ShapeError
from .imgcore import Image
from .nets import MLP
from .parallel import pmap
from .rng import STREAM_NET, derive_rng
from .stats import TTestResult, paired_t_test
from .synthbench import TinyPolicy

RND_HIDDEN = 64
RND_OUT = 32


# -- feature extractors -------------------------------------------------------


class FeatureExtractor:
    """Deterministic Image -> feature-vector mapping."""

    kind: str
    dim: int

    def __call__(self, obs_batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class FlattenDownsample(FeatureExtractor):
    kind = "flatten_downsample"

    def __init__(self, height: int, width: int, channels: int, factor: int = 2):
        if height % factor or width % factor:
            raise ShapeError(f"({height}, {width}) not divisible by factor {factor}")
        self.factor = factor
        self.dim = (height // factor) * (width // factor) * channels

    def __call__(self, obs_batch: np.ndarray) -> np.ndarray:
        n, h, w, c = obs_batch.shape
        f = self.factor
        pooled = obs_batch.reshape(n, h // f, f, w // f, f, c).mean(axis=(2, 4))
        return pooled.reshape(n, -1)


class RandomConv(FeatureExtractor):
    """One seeded random 5x5 conv (stride 4) + tanh, flattened."""

    kind = "random_conv"

    def __init__(self, height: int, width: int, channels: int, seed: int = 0, n_filters: int = 8):
        self.seed = seed
        self.n_filters = n_filters
        rng = derive_rng(seed, STREAM_NET, 0xC0)
        self.kernels = rng.normal(0.0, 1.0 / np.sqrt(25 * channels), size=(n_filters, 5, 5, channels))
        self.out_h = (height - 5) // 4 + 1
        self.out_w = (width - 5) // 4 + 1
        self.dim = self.out_h * self.out_w * n_filters

    def __call__(self, obs_batch: np.ndarray) -> np.ndarray:
        n = obs_batch.shape[0]
        out = np.empty((n, self.out_h, self.out_w, self.n_filters))
        for yi in range(self.out_h):
            for xi in range(self.out_w):
                patch = obs_batch[:, yi * 4 : yi * 4 + 5, xi * 4 : xi * 4 + 5, :]
                out[:, yi, xi, :] = np.tensordot(patch, self.kernels, axes=([1, 2, 3], [1, 2, 3]))
        return np.tanh(out).reshape(n, -1)


class PolicyEncoder(FeatureExtractor):
    """Features from a trained policy's encoder."""

    kind = "tiny_policy_encoder"

    def __init__(self, policy: TinyPolicy):
        self.policy = policy
        self.dim = policy.encoder.sizes[-1]

    def __call__(self, obs_batch: np.ndarray) -> np.ndarray:
        return self.policy.features(obs_batch)


def extract_features(extractor: FeatureExtractor, dataset: Dataset) -> np.ndarray:
    obs = np.stack([o.data for ep in dataset.episodes for o in ep.observations])
    if obs.size == 0:
        raise ConfigError("observation set is empty")
    return extractor(obs)


# -- RND pair -----------------------------------------------------------------


@dataclass
class RndPair:
    """Frozen random net + trainable predictor with identical architecture."""

    fixed: MLP
    predictor: MLP

    @classmethod
    def init(cls, feature_dim: int, seed: int) -> "RndPair":
        fixed = MLP.init([feature_dim, RND_HIDDEN, RND_HIDDEN, RND_OUT], derive_rng(seed, STREAM_NET, 1))
        predictor = MLP.init(
            [feature_dim, RND_HIDDEN, RND_HIDDEN, RND_OUT], derive_rng(seed, STREAM_NET, 2)
        )
        return cls(fixed=fixed, predictor=predictor)


@dataclass(frozen=True)
class PredictorConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32


def train_predictor(
    pair: RndPair, demo_features: np.ndarray, hyper: PredictorConfig = PredictorConfig(), seed: int = 0
) -> float:
    """Fit the predictor to the frozen net on demonstration features.

    Returns the final training loss (mean squared embedding error).
    """
    if demo_features.ndim != 2 or len(demo_features) < 1:
        raise ConfigError("need a non-empty (n, d) feature matrix")
    targets = pair.fixed.forward(demo_features)
    n = len(demo_features)
    rng = derive_rng(seed, STREAM_NET, 3)
    loss = float("nan")
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = perm[start : start + hyper.batch_size]
            out, acts = pair.predictor.forward_cached(demo_features[idx])
            grad = 2.0 * (out - targets[idx]) / len(idx)
            gw, gb, _ = pair.predictor.backward(acts, grad)
            pair.predictor.sgd_step(gw, gb, hyper.lr)
        pred = pair.predictor.forward(demo_features)
        loss = float(np.mean(np.sum((pred - targets) ** 2, axis=1)))
        if not np.isfinite(loss):
            raise ArithmeticError(f"predictor loss is not finite at epoch {epoch + 1}")
    return loss


def rnd_values(features: np.ndarray, pair: RndPair) -> np.ndarray:
    """Per-observation squared embedding prediction error."""
    if features.shape[1] != pair.fixed.sizes[0]:
        raise ShapeError(
            f"feature dim {features.shape[1]} != network input {pair.fixed.sizes[0]}"
        )
    diff = pair.predictor.forward(features) - pair.fixed.forward(features)
    return np.sum(diff**2, axis=1)


def rnd_value(o: Image, pair: RndPair, extractor: FeatureExtractor) -> float:
    return float(rnd_values(extractor(o.data[None]), pair)[0])


def rnd_gap(
    demo_features: np.ndarray,
    test_features: np.ndarray,
    seed: int,
    hyper: PredictorConfig = PredictorConfig(),
    train_features: np.ndarray | None = None,
) -> float:
    """One full measurement: fresh pair, fit predictor, gap of mean novelties.

    The predictor fits on `train_features` (the observations the encoder was
    trained on; defaults to the demonstration features).  Means use numpy
    pairwise summation, so aggregation order is fixed.
    """
    if len(demo_features) == 0 or len(test_features) == 0:
        raise ConfigError("both observation sets must be non-empty")
    if train_features is None:
        train_features = demo_features
    pair = RndPair.init(demo_features.shape[1], seed)
    train_predictor(pair, train_features, hyper, seed=seed)
    demo_mean = float(np.mean(rnd_values(demo_features, pair)))
    test_mean = float(np.mean(rnd_values(test_features, pair)))
    return abs(demo_mean - test_mean)


# -- resampling protocol ------------------------------------------------------


@dataclass
class GapReport:
    extractor_kind: str
    n_resample: int
    base_seed: int
    values: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values, ddof=1)) if len(self.values) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "extractor": self.extractor_kind,
            "n_resample": self.n_resample,
            "base_seed": self.base_seed,
            "values": self.values,
            "mean": self.mean,
            "std": self.std,
            "config": self.config,
        }


def resample_seed(base_seed: int, index: int) -> int:
    """Frozen-net seed for resampling `index`; shared across methods."""
    return int(derive_rng(base_seed, 0xA11CE, index).integers(0, 2**63 - 1))


def _gap_unit(ctx, index: int) -> float:
    demo_features, test_features, train_features, base_seed, hyper = ctx
    return rnd_gap(
        demo_features,
        test_features,
        resample_seed(base_seed, index),
        hyper,
        train_features=train_features,
    )


def gap_protocol(
    extractor: FeatureExtractor,
    demo_set: Dataset,
    test_set: Dataset,
    n_resample: int = 20,
    base_seed: int = 0,
    hyper: PredictorConfig = PredictorConfig(),
    workers: int = 1,
    train_set: Dataset | None = None,
) -> GapReport:
    """Gap recomputed over fresh frozen-net samplings (paired across methods).

    Resampling i always uses seed derived from (base_seed, i) regardless of
    the extractor, so reports produced with one base_seed can be compared
    pairwise between methods.  `train_set` is what the predictor fits on;
    pass the encoder's own (augmented) training data when available,
    otherwise the demonstration set is used.
    """
    if n_resample < 2:
        raise ConfigError("need n_resample >= 2 for meaningful statistics")
    demo_features = extract_features(extractor, demo_set)
    test_features = extract_features(extractor, test_set)
    train_features = extract_features(extractor, train_set) if train_set is not None else None
    values = pmap(
        _gap_unit,
        range(n_resample),
        workers=workers,
        ctx=(demo_features, test_features, train_features, base_seed, hyper),
    )
    return GapReport(
        extractor_kind=extractor.kind,
        n_resample=n_resample,
        base_seed=base_seed,
        values=[float(v) for v in values],
        config={
            "rnd_hidden": RND_HIDDEN,
            "rnd_out": RND_OUT,
            "predictor_lr": hyper.lr,
            "predictor_epochs": hyper.epochs,
            "predictor_batch": hyper.batch_size,
            "t_test_tails": "two",
        },
    )


def compare_reports(a: GapReport, b: GapReport) -> TTestResult:
    """Paired t-test between two methods' resampled gap values."""
    if a.base_seed != b.base_seed or a.n_resample != b.n_resample:
        raise ConfigError("reports are not paired: base_seed/n_resample differ")
    return paired_t_test(a.values, b.values)
