import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from svbrdf_transfer.augment import AugmentConfig, ExemplarSet, procedural_material, synth_training_sample
from svbrdf_transfer.maps import ALPHA_MIN, ImageBuffer, validate_maps
from svbrdf_transfer.net import NetConfig, Predictor, decode_backward, decode_heads, init_network, predict_tile
from svbrdf_transfer.optim import AdamState
from svbrdf_transfer.render import AmbientTerm, ViewSpec, sample_light
from svbrdf_transfer.train import LossConfig, map_loss, map_loss_grad, rendering_loss_grad, train_step

# enc 61456 + global 2128 + dec 159432 + head 657, tallied layer by layer
DEFAULT_PARAM_COUNT = 223_673
SMALL = NetConfig(size=16, depth=2, base=4, global_width=4)


@pytest.fixture(scope="module")
def small_predictor():
    return Predictor(init_network(SMALL, seed=0))


class TestConfig:
    def test_bottleneck(self):
        assert NetConfig(size=64, depth=4).bottleneck_size == 4

    def test_param_count(self):
        assert init_network(NetConfig(), 0).count() == DEFAULT_PARAM_COUNT

    def test_param_count_closed_form(self):
        cfg = NetConfig()
        conv = lambda cin, cout: cout * cin * 9 + cout  # noqa: E731
        ch = [8, 16, 32, 64, 64]
        total = conv(3, 8) + sum(conv(ch[i - 1], ch[i]) for i in range(1, 5))
        total += 16 * 64 + 16 + 64 * 16 + 64
        total += sum(conv(ch[i + 1], ch[i]) + conv(2 * ch[i] + (3 if i == 0 else 0), ch[i]) for i in range(4))
        total += conv(8, 9)
        assert total == DEFAULT_PARAM_COUNT == sum(int(np.prod(s)) for s in cfg.param_shapes().values())

    @pytest.mark.parametrize("kw", [dict(size=48), dict(size=64, depth=7), dict(base=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NetConfig(**kw)

    def test_init_deterministic(self):
        a, b = init_network(NetConfig(), 3), init_network(NetConfig(), 3)
        assert all(a.tensors[k].tobytes() == b.tensors[k].tobytes() for k in a.tensors)
        c = init_network(NetConfig(), 4)
        assert any(a.tensors[k].tobytes() != c.tensors[k].tobytes() for k in a.tensors)

    def test_fan_in_bounds(self):
        p = init_network(NetConfig(), 0)
        for name, w in p.tensors.items():
            if name.endswith(".b"):
                assert not w.any()
            else:
                assert np.abs(w).max() <= np.sqrt(6.0 / np.prod(w.shape[1:]))


class TestPredict:
    def test_output_valid(self, small_predictor, rng):
        m = small_predictor.predict(ImageBuffer(rng.uniform(0, 1, (16, 16, 3))))
        assert validate_maps(m) == []
        assert np.all(m.roughness > ALPHA_MIN) and np.all(m.roughness < 1)

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (16, 16, 3), elements=st.floats(-1e3, 1e3)))
    def test_adversarial_inputs_valid(self, small_predictor, data):
        assert validate_maps(small_predictor.predict(data)) == []

    def test_deterministic(self, small_predictor, rng):
        img = ImageBuffer(rng.uniform(0, 1, (16, 16, 3)))
        a, b = small_predictor.predict(img), predict_tile(small_predictor, img)
        assert a.equals(b)

    def test_wrong_size(self, small_predictor):
        with pytest.raises(ValueError, match="16x16x3"):
            small_predictor.predict(ImageBuffer(np.zeros((8, 16, 3))))

    def test_decode_extreme_logits(self):
        logits = np.array([50.0, -50.0, 80.0, -80.0, 0.0, 100.0, -100.0, 0.0, 1.0]).reshape(1, 9, 1, 1)
        maps, _ = decode_heads(logits)
        n = maps["normal"][0, 0, 0]
        assert abs(np.linalg.norm(n) - 1) < 1e-12 and n[2] > 0
        assert ALPHA_MIN <= maps["roughness"][0, 0, 0] <= 1

    def test_decode_backward_matches_differences(self, rng):
        logits = rng.normal(0, 0.7, size=(1, 9, 3, 3))
        weights = {k: rng.normal(size=v.shape) for k, v in decode_heads(logits)[0].items()}

        def f(x):
            maps, _ = decode_heads(x)
            return sum(float(np.sum(weights[k] * maps[k])) for k in maps)

        _, cache = decode_heads(logits)
        analytic = decode_backward(cache, weights)
        num = np.zeros_like(logits)
        for idx in np.ndindex(logits.shape):
            d = np.zeros_like(logits)
            d[idx] = 1e-6
            num[idx] = (f(logits + d) - f(logits - d)) / 2e-6
        np.testing.assert_allclose(analytic, num, atol=1e-6)


class TestTraining:
    def test_full_pipeline_gradient_flow(self, rng):
        pred = Predictor(init_network(NetConfig(), 0))
        ex = ExemplarSet([procedural_material(1, 128), procedural_material(2, 128)])
        img, target = synth_training_sample(ex, rng)
        maps, cache = pred.forward(img.data[None])
        gt = {k: getattr(target, k)[None] for k in maps}
        _, g_map = map_loss_grad(maps, gt, LossConfig().map_weights())
        _, g_ren = rendering_loss_grad(maps, gt, [[sample_light(rng)]], ViewSpec(), AmbientTerm(), 0.01)
        grads = pred.backward(cache, {k: g_map[k] + g_ren[k] for k in maps})
        assert set(grads) == set(pred.params.tensors)
        for name, g in grads.items():
            assert np.all(np.isfinite(g)), name
            assert np.any(g != 0), name

    def test_overfit_single_pair(self):
        # memorization check with the default optimizer settings, map loss only
        ex = ExemplarSet([procedural_material(3, 128), procedural_material(4, 128)])
        rng = np.random.default_rng(0)
        sample = synth_training_sample(ex, rng, AugmentConfig())
        lights = [[sample_light(rng) for _ in range(3)]]
        pred = Predictor(init_network(NetConfig(), 0))
        cfg = LossConfig(w_render=0.0)
        state = AdamState(lr=cfg.pretrain_lr)
        before = map_loss(pred.predict(sample[0]), sample[1])
        for it in range(200):
            train_step(pred, state, [sample], lights, cfg, AmbientTerm(), it)
        after = map_loss(pred.predict(sample[0]), sample[1])
        reduction = 1 - after / before
        print(f"overfit: map loss {before:.4f} -> {after:.4f}, reduction {reduction:.3f}")
        assert reduction >= 0.9

