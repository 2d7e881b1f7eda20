import numpy as np
import pytest

from dualaug.errors import ShapeError
from dualaug.imgcore import Image, Mask
from dualaug.saliency import (
    SaliencyMap,
    attention_in_mask,
    gradient_saliency,
    occlusion_saliency,
    render_heatmap,
)
from dualaug.synthbench import TrainConfig, generate_episodes, train_bc

from helpers import rel_err


@pytest.fixture(scope="module")
def trained_policy():
    ds, _ = generate_episodes(4, "demo", seed=20)
    res = train_bc(ds, TrainConfig(epochs=5, seed=0))
    return res.policy, ds


class TestGradientSaliency:
    def test_map_has_observation_dimensions(self, trained_policy):
        policy, ds = trained_policy
        ep = ds.episodes[0]
        sal = gradient_saliency(policy, ep.observations[0], ep.states[0])
        assert sal.weights.shape == (64, 64)

    def test_zero_head_gives_zero_map(self, trained_policy):
        policy, ds = trained_policy
        dead = policy.copy()
        for i in range(dead.head.n_layers):
            dead.head.weights[i][:] = 0.0
            dead.head.biases[i][:] = 0.0
        ep = ds.episodes[0]
        sal = gradient_saliency(dead, ep.observations[0], ep.states[0])
        assert not sal.weights.any()

    def test_matches_finite_differences(self, trained_policy):
        policy, ds = trained_policy
        ep = ds.episodes[0]
        o, s = ep.observations[1], ep.states[1]

        def scalar_at(obs_arr):
            a = policy.act(obs_arr[None], np.asarray(s)[None])[0]
            return float(np.sum(a * a))

        # full analytic gradient, not just the channel-max map
        obs_batch = o.data[None]
        x = policy.preprocess(obs_batch)
        sn = policy.norm_state(np.asarray(s)[None])
        feats, enc_acts = policy.encoder.forward_cached(x)
        head_in = np.concatenate([feats, sn], axis=1)
        pred, head_acts = policy.head.forward_cached(head_in)
        _, _, ghin = policy.head.backward(head_acts, 2.0 * pred)
        _, _, gx = policy.encoder.backward(enc_acts, ghin[:, : feats.shape[1]])
        f = policy.meta.downsample
        pooled = gx.reshape(64 // f, 64 // f, 3)
        full = np.repeat(np.repeat(pooled, f, axis=0), f, axis=1) / (f * f)

        rng = np.random.default_rng(1)
        eps = 1e-5
        for _ in range(5):
            y, x_, c = rng.integers(0, 64), rng.integers(0, 64), rng.integers(0, 3)
            up = o.data.copy()
            up[y, x_, c] += eps
            dn = o.data.copy()
            dn[y, x_, c] -= eps
            fd = (scalar_at(up) - scalar_at(dn)) / (2 * eps)
            if abs(fd) < 1e-9 and abs(full[y, x_, c]) < 1e-9:
                continue
            assert rel_err(full[y, x_, c], fd) <= 1e-3, (y, x_, c)


class TestOcclusionSaliency:
    def test_constant_scorer_gives_zero_map(self):
        rng = np.random.default_rng(2)
        o = Image.from_array(rng.random((32, 32, 3)))
        sal = occlusion_saliency(lambda img: 1.0, o)
        assert not sal.weights.any()

    def test_single_pixel_scorer_concentrates_mass(self):
        # Scorer reads one pixel: saliency must peak on patches covering it.
        rng = np.random.default_rng(3)
        o = Image.from_array(rng.random((32, 32, 3)))
        py, px = 10, 20

        def scorer(img):
            return float(img.data[py, px].mean())

        sal = occlusion_saliency(scorer, o, patch=8, stride=4)
        peak_y, peak_x = np.unravel_index(sal.weights.argmax(), sal.weights.shape)
        assert abs(peak_y - py) <= 8 and abs(peak_x - px) <= 8
        near = sal.weights[max(0, py - 8) : py + 9, max(0, px - 8) : px + 9].sum()
        assert near / sal.total > 0.5

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(4)
        o = Image.from_array(rng.random((24, 24, 3)))
        sal = occlusion_saliency(lambda img: float(img.data.sum()), o, patch=6, stride=3)
        assert (sal.weights >= 0).all()

    def test_bad_patch_rejected(self):
        o = Image.from_array(np.zeros((16, 16, 3)))
        with pytest.raises(ShapeError):
            occlusion_saliency(lambda img: 0.0, o, patch=0)


class TestAttentionInMask:
    def test_uniform_map_proportional_to_mask_area(self):
        sal = SaliencyMap(np.ones((16, 16)))
        m = np.zeros((16, 16))
        m[:8, :8] = 1.0
        assert attention_in_mask(sal, Mask.from_array(m)) == 0.25

    def test_mass_inside_mask_gives_one(self):
        w = np.zeros((16, 16))
        w[2:4, 2:4] = 3.0
        m = np.zeros((16, 16))
        m[:8, :8] = 1.0
        assert attention_in_mask(SaliencyMap(w), Mask.from_array(m)) == 1.0

    def test_all_ones_mask_gives_one(self):
        rng = np.random.default_rng(5)
        sal = SaliencyMap(rng.random((8, 8)))
        assert attention_in_mask(sal, Mask.from_array(np.ones((8, 8)))) == 1.0

    def test_zero_total_reports_absent(self):
        sal = SaliencyMap(np.zeros((8, 8)))
        assert attention_in_mask(sal, Mask.from_array(np.ones((8, 8)))) is None

    def test_invariant_under_positive_scaling(self):
        rng = np.random.default_rng(6)
        w = rng.random((12, 12))
        m = Mask.from_array((rng.random((12, 12)) < 0.4).astype(float))
        a = attention_in_mask(SaliencyMap(w), m)
        b = attention_in_mask(SaliencyMap(w * 37.5), m)
        assert abs(a - b) < 1e-12

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            attention_in_mask(SaliencyMap(np.ones((8, 8))), Mask.from_array(np.ones((9, 9))))


class TestHeatmap:
    def test_output_is_valid_rgb_image(self):
        rng = np.random.default_rng(7)
        img = render_heatmap(SaliencyMap(rng.random((20, 20))))
        assert img.data.shape == (20, 20, 3)
        assert img.data.min() >= 0.0 and img.data.max() <= 1.0

    def test_zero_map_renders(self):
        img = render_heatmap(SaliencyMap(np.zeros((8, 8))))
        assert img.data.shape == (8, 8, 3)
