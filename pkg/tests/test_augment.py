import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svbrdf_transfer.augment import (FAMILIES, AugmentConfig, AugmentError, ExemplarSet, compose_exemplars,
                                     perlin_field, procedural_material, random_scale_crop, resample_crop,
                                     sample_rng, synth_training_sample, threshold_mask)
from svbrdf_transfer.maps import ParameterMaps, validate_maps
from svbrdf_transfer.render import AmbientTerm, tonemap

import oracles
from conftest import random_maps


class TestPerlin:
    def test_zero_on_lattice(self):
        f = perlin_field(5, 4, 64, 64)
        np.testing.assert_array_equal(f[::16, ::16], 0.0)

    def test_zero_mean(self):
        means = [perlin_field(s, 4, 256, 256).mean() for s in range(100)]
        assert abs(np.mean(means)) < 0.02

    def test_deterministic(self):
        assert np.array_equal(perlin_field(9, 3, 50, 40), perlin_field(9, 3, 50, 40))
        assert perlin_field(9, 3, 50, 40).shape == (40, 50)

    def test_smooth(self):
        f = perlin_field(2, 2, 128, 128)
        assert np.abs(np.diff(f, axis=1)).max() < 0.1

    def test_invalid(self):
        with pytest.raises(ValueError):
            perlin_field(0, 0, 8, 8)


class TestMask:
    def test_above_max_is_empty(self):
        assert not threshold_mask(perlin_field(1, 3, 64, 64), 2.0).any()

    def test_binary(self):
        m = threshold_mask(perlin_field(1, 3, 64, 64), 0.1)
        assert set(np.unique(m)) <= {0.0, 1.0}

    @pytest.mark.parametrize("periods", [2, 4])
    def test_transitions_band_limited(self, periods):
        counts = [oracles.row_transitions(threshold_mask(perlin_field(s, periods, 128, 128), 0.0)) for s in range(100)]
        assert np.mean(counts) <= 2 * periods + 2


class TestScaleCrop:
    def test_identity_crop(self, rng):
        m = random_maps(rng, 20, 20)
        out = resample_crop(m, 3, 5, 1.0, 8)
        assert out.equals(m.crop(3, 5, 8, 8))

    def test_constant_source(self, rng):
        m = ParameterMaps.constant(64, 64, diffuse=(0.2, 0.3, 0.4), roughness=0.7, specular=0.3)
        cfg = AugmentConfig(crop=16)
        for _ in range(20):
            out = random_scale_crop(m, rng, cfg)
            np.testing.assert_allclose(out.diffuse, m.diffuse[:16, :16], atol=1e-12)
            np.testing.assert_allclose(out.roughness, 0.7, atol=1e-12)

    def test_outputs_valid(self, rng):
        m = random_maps(rng, 64, 64)
        cfg = AugmentConfig(crop=16)
        for _ in range(20):
            assert validate_maps(random_scale_crop(m, rng, cfg)) == []

    def test_too_small(self, rng):
        m = random_maps(rng, 20, 20)
        with pytest.raises(AugmentError, match="too small"):
            random_scale_crop(m, rng, AugmentConfig(crop=16), scale=2.0)

    def test_small_source_retries(self):
        # a 24 px source only fits scales up to 1.5; retries find one
        m = ParameterMaps.constant(24, 24)
        cfg = AugmentConfig(crop=16)
        for seed in range(30):
            assert random_scale_crop(m, np.random.default_rng(seed), cfg).width == 16


class TestCompose:
    def test_all_ones_and_zeros(self, rng):
        a, b = random_maps(rng, 8, 8), random_maps(rng, 8, 8)
        assert compose_exemplars(a, b, np.ones((8, 8))).equals(a)
        assert compose_exemplars(a, b, np.zeros((8, 8))).equals(b)

    def test_checker_exhaustive(self):
        a = ParameterMaps.constant(8, 8, diffuse=0.9, roughness=0.2, specular=0.5)
        b = ParameterMaps.constant(8, 8, normal=(0.6, 0.0, 0.8), diffuse=0.1, roughness=0.8, specular=0.02)
        mask = (np.add.outer(np.arange(8), np.arange(8)) % 2).astype(float)
        out = compose_exemplars(a, b, mask)
        for r in range(8):
            for c in range(8):
                src = a if mask[r, c] else b
                for name in ("normal", "diffuse", "roughness", "specular"):
                    assert np.array_equal(getattr(out, name)[r, c], getattr(src, name)[r, c])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(0, 1))
    def test_self_collage_identity(self, seed, soft):
        rng = np.random.default_rng(seed)
        a = random_maps(rng, 6, 6)
        mask = rng.uniform(size=(6, 6)) * soft
        out = compose_exemplars(a, a, mask)
        for name in ("diffuse", "roughness", "specular"):
            np.testing.assert_allclose(getattr(out, name), getattr(a, name), atol=1e-12)
        np.testing.assert_allclose(out.normal, a.normal, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(AugmentError):
            compose_exemplars(random_maps(rng, 4, 4), random_maps(rng, 4, 5), np.ones((4, 4)))


class TestSynth:
    def test_single_exemplar_scale_crop_only(self, monkeypatch):
        import svbrdf_transfer.augment as aug
        calls = []
        monkeypatch.setattr(aug, "random_mask", lambda *a, **k: calls.append(1))
        ex = ExemplarSet([procedural_material(1, 128)])
        _, target = synth_training_sample(ex, sample_rng(0, 0))
        assert not calls and target.width == 64

    def test_two_distinct_exemplars(self, monkeypatch):
        import svbrdf_transfer.augment as aug
        picked = []
        original = aug.random_scale_crop
        monkeypatch.setattr(aug, "random_scale_crop", lambda m, *a, **k: picked.append(id(m)) or original(m, *a, **k))
        ex = ExemplarSet([procedural_material(k, 128) for k in range(2)])
        for i in range(10):
            picked.clear()
            synth_training_sample(ex, sample_rng(3, i))
            assert len(set(picked)) == 2

    def test_reproducible(self):
        ex = ExemplarSet([procedural_material(k, 128) for k in range(3)])
        a = synth_training_sample(ex, sample_rng(11, 4))
        b = synth_training_sample(ex, sample_rng(11, 4))
        assert a[0].data.tobytes() == b[0].data.tobytes() and a[1].equals(b[1])

    def test_targets_valid_and_ambient_floor(self):
        ex = ExemplarSet([procedural_material(k, 128) for k in range(4)])
        amb = AmbientTerm(0.1)
        for i in range(20):
            img, target = synth_training_sample(ex, sample_rng(2, i), ambient=amb)
            assert validate_maps(target) == []
            floor = amb.k_a * (target.diffuse + target.specular).min()
            assert img.data.min() >= tonemap(np.array([floor]))[0] - 1e-12

    def test_no_augment_centre_crop(self):
        m = procedural_material(8, 128)
        _, target = synth_training_sample(ExemplarSet([m]), sample_rng(0, 0), augment=False)
        assert target.equals(m.crop(32, 32, 64, 64))

    def test_empty_set(self):
        with pytest.raises(AugmentError):
            ExemplarSet([])

    def test_exemplar_smaller_than_crop(self):
        with pytest.raises(AugmentError):
            ExemplarSet([ParameterMaps.constant(32, 32)], crop=64)


class TestProcedural:
    def test_valid_and_diverse(self):
        rough = []
        for seed in range(1000):
            m = procedural_material(seed, 32)
            assert validate_maps(m) == [], seed
            rough.append((m.roughness.min(), m.roughness.max()))
        r = np.array(rough)
        assert r[:, 0].min() <= 0.1 and r[:, 1].max() >= 0.9

    def test_uniform_constant(self):
        m = procedural_material(17, 32, "uniform")
        for name in ("normal", "diffuse", "roughness", "specular"):
            a = getattr(m, name)
            assert np.all(a == a[0, 0])

    @pytest.mark.parametrize("family", FAMILIES)
    def test_families_deterministic(self, family):
        assert procedural_material(4, 48, family).equals(procedural_material(4, 48, family))

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            procedural_material(0, 32, "marble")
