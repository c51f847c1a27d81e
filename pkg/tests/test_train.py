import csv
from types import SimpleNamespace

import numpy as np
import pytest

from svbrdf_transfer.augment import ExemplarSet, procedural_material
from svbrdf_transfer.maps import ImageBuffer, ParameterMaps
from svbrdf_transfer.net import NetConfig, Predictor, init_network
from svbrdf_transfer.optim import AdamState
from svbrdf_transfer.render import AmbientTerm, DirectionalLight, sample_light
from svbrdf_transfer.train import (RMSE_KEYS, LossConfig, TrainingError, Validation, finetune, map_loss, pretrain,
                                   rendering_loss, rmse_metrics, train_step)

import oracles
from conftest import random_maps

SMALL = NetConfig(size=16, depth=2, base=4, global_width=4)


class TestMapLoss:
    def test_identity_zero(self, canonical):
        assert map_loss(canonical, canonical) == 0.0

    def test_diffuse_offset(self, canonical):
        shifted = canonical.replace(diffuse=canonical.diffuse + 0.1)
        assert map_loss(shifted, canonical) == pytest.approx(0.1, abs=1e-12)

    def test_symmetric_nonnegative(self, rng):
        a, b = random_maps(rng, 8, 8), random_maps(rng, 8, 8)
        assert map_loss(a, b) == pytest.approx(map_loss(b, a), abs=1e-15)
        assert map_loss(a, b) > 0

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="dimension"):
            map_loss(random_maps(rng, 8, 8), random_maps(rng, 8, 9))

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            LossConfig(w_render=-1)


class TestRenderingLoss:
    def test_head_on_example(self):
        light = DirectionalLight((0.0, 0.0, 1.0), (np.pi,) * 3)
        a = ParameterMaps.constant(4, 4, diffuse=0.6, specular=0.0)
        b = ParameterMaps.constant(4, 4, diffuse=0.5, specular=0.0)
        loss = rendering_loss(a, b, [light], ambient=AmbientTerm(0.0))
        assert loss == pytest.approx(oracles.LOG_RENDER_EXAMPLE, abs=1e-9)

    def test_identity_zero(self, rng):
        m = random_maps(rng, 8, 8)
        assert rendering_loss(m, m, [sample_light(rng) for _ in range(3)]) == 0.0

    def test_no_lights(self, canonical):
        with pytest.raises(ValueError):
            rendering_loss(canonical, canonical, [])


class TestMetrics:
    def test_identical_all_zero(self, rng):
        m = random_maps(rng, 8, 8)
        rec = rmse_metrics(m, m)
        assert set(rec) == set(RMSE_KEYS) | {"rendering", "maps"}
        assert all(v == 0.0 for v in rec.values())

    def test_diffuse_offset(self, canonical):
        rec = rmse_metrics(canonical.replace(diffuse=canonical.diffuse + 0.1), canonical)
        assert rec["diffuse"] == pytest.approx(0.1, abs=1e-12)
        assert rec["normal"] == rec["roughness"] == rec["specular"] == 0.0
        assert rec["rendering"] > 0


class TestLoops:
    def test_zero_iterations_is_init(self):
        params, run = pretrain(SMALL, 3, 0)
        ref = init_network(SMALL, 3)
        assert all(params.tensors[k].tobytes() == ref.tensors[k].tobytes() for k in ref.tensors)
        assert run.losses == []

    def test_pretrain_reproducible(self):
        a, ra = pretrain(SMALL, 1, 5)
        b, rb = pretrain(SMALL, 1, 5)
        assert ra.losses == rb.losses
        assert all(a.tensors[k].tobytes() == b.tensors[k].tobytes() for k in a.tensors)
        assert all(np.isfinite(ra.losses)) and min(ra.losses) >= 0

    def test_finetune_zero_iterations_unchanged(self):
        base = init_network(SMALL, 0)
        ex = ExemplarSet([procedural_material(2, 32)], 16)
        tuned, run = finetune(base, ex, 0)
        assert all(tuned.tensors[k].tobytes() == base.tensors[k].tobytes() for k in base.tensors)
        assert [it for it, _ in run.snapshots] == [0]

    def test_finetune_leaves_input_untouched(self):
        base = init_network(SMALL, 0)
        before = {k: v.tobytes() for k, v in base.tensors.items()}
        finetune(base, ExemplarSet([procedural_material(2, 32)], 16), 3)
        assert all(base.tensors[k].tobytes() == before[k] for k in before)

    def test_csv(self, tmp_path):
        ex = ExemplarSet([procedural_material(2, 32), procedural_material(5, 32)], 16)
        _, run = finetune(init_network(SMALL, 0), ex, 12)
        path = run.write_csv(tmp_path / "log.csv")
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["iteration", "total_loss"] + [f"rmse_{k}" for k in RMSE_KEYS]
        its = [int(r[0]) for r in rows[1:]]
        assert its == list(range(13))
        assert rows[1][1] == "" and rows[1][2] != ""  # iteration 0: snapshot only
        assert rows[11][2] != "" and rows[12][2] == ""  # snapshots every 10 iterations
        assert all(float(r[1]) >= 0 for r in rows[2:])

    def test_validation_evaluate(self, rng):
        v = Validation.from_targets([random_maps(rng, 16, 16)])
        rec = v.evaluate(Predictor(init_network(SMALL, 0)))
        assert all(np.isfinite(x) and x >= 0 for x in rec.values())

    def test_non_finite_target_raises(self, rng):
        pred = Predictor(init_network(SMALL, 0))
        target = random_maps(rng, 16, 16)
        bad = SimpleNamespace(**{k: getattr(target, k) for k in RMSE_KEYS})
        bad.diffuse = np.full_like(target.diffuse, np.nan)
        sample = (ImageBuffer(rng.uniform(size=(16, 16, 3))), bad)
        with pytest.raises(TrainingError, match="iteration 7"):
            train_step(pred, AdamState(), [sample], [[sample_light(rng)]], LossConfig(), AmbientTerm(), 7)
