"""Losses, RMSE metrics, and the pre-training / fine-tuning loops."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import AugmentConfig, ExemplarSet, procedural_material, sample_rng, synth_training_sample
from .maps import MAP_NAMES, ImageBuffer, ParameterMaps
from .net import NetConfig, NetworkParams, Predictor, init_network
from .optim import AdamState, NonFiniteGradient, adam_step
from .render import (VALIDATION_LIGHTS, AmbientTerm, DirectionalLight, LightDistribution, ViewSpec,
                     render_image, sample_light, shade, shade_vjp, tonemap)

log = logging.getLogger(__name__)

RMSE_KEYS = ("normal", "diffuse", "roughness", "specular")


class TrainingError(FloatingPointError):
    def __init__(self, iteration: int, detail: str):
        super().__init__(f"non-finite loss at iteration {iteration}: {detail}")
        self.iteration = iteration


@dataclass(frozen=True)
class LossConfig:
    w_normal: float = 1.0
    w_diffuse: float = 1.0
    w_roughness: float = 1.0
    w_specular: float = 1.0
    w_render: float = 1.0
    lights_per_step: int = 3
    log_offset: float = 0.01
    pretrain_lr: float = 2e-3
    finetune_lr: float = 5e-4
    batch_size: int = 1

    def __post_init__(self):
        if min(self.w_normal, self.w_diffuse, self.w_roughness, self.w_specular, self.w_render) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.log_offset <= 0:
            raise ValueError("log offset must be > 0")
        if self.lights_per_step < 1 or self.batch_size < 1:
            raise ValueError("lights_per_step and batch_size must be >= 1")
        if self.pretrain_lr <= 0 or self.finetune_lr <= 0:
            raise ValueError("learning rates must be > 0")

    def map_weights(self) -> dict[str, float]:
        return {"normal": self.w_normal, "diffuse": self.w_diffuse,
                "roughness": self.w_roughness, "specular": self.w_specular}


# --- losses on batched NHWC map dicts ------------------------------------------

def _as_batch(m: ParameterMaps) -> dict[str, np.ndarray]:
    return {name: getattr(m, name)[None] for name in MAP_NAMES}


def map_loss_grad(pred: dict, gt: dict, weights: dict[str, float]) -> tuple[float, dict]:
    """Weighted sum of per-map mean absolute errors and its gradient."""
    total, grads = 0.0, {}
    for name in MAP_NAMES:
        w = weights[name]
        scale = 0.5 if name == "normal" else 1.0  # normals compared in RGB encoding
        diff = scale * (pred[name] - gt[name])
        total += w * float(np.mean(np.abs(diff)))
        grads[name] = w * scale * np.sign(diff) / diff.size
    return total, grads


def rendering_loss_grad(pred: dict, gt: dict, lights: Sequence[Sequence[DirectionalLight]],
                        view: ViewSpec, ambient: AmbientTerm, c: float) -> tuple[float, dict]:
    """Mean over lights of the L1 distance between log(render + c) images.

    ``lights[b]`` lists the lights used for batch item ``b``.
    """
    batch = pred["normal"].shape[0]
    grads = {name: np.zeros_like(pred[name]) for name in MAP_NAMES}
    total = 0.0
    for b in range(batch):
        args_p = [pred[k][b] for k in ("normal", "diffuse", "specular", "roughness")]
        args_g = [gt[k][b] for k in ("normal", "diffuse", "specular", "roughness")]
        for light in lights[b]:
            rp = shade(args_p[0], args_p[1], args_p[2], args_p[3], light, view, ambient)
            rg = shade(args_g[0], args_g[1], args_g[2], args_g[3], light, view, ambient)
            diff = np.log(rp + c) - np.log(rg + c)
            scale = 1.0 / (batch * len(lights[b]))
            total += scale * float(np.mean(np.abs(diff)))
            g_out = scale * np.sign(diff) / (diff.size * (rp + c))
            vjp = shade_vjp(g_out, args_p[0], args_p[1], args_p[2], args_p[3], light, view, ambient)
            for name in MAP_NAMES:
                grads[name][b] += vjp[name]
    return total, grads


def map_loss(pred: ParameterMaps, gt: ParameterMaps, cfg: LossConfig = LossConfig()) -> float:
    _check_dims(pred, gt)
    return map_loss_grad(_as_batch(pred), _as_batch(gt), cfg.map_weights())[0]


def rendering_loss(pred: ParameterMaps, gt: ParameterMaps, lights: Sequence[DirectionalLight],
                   view: ViewSpec = ViewSpec(), ambient: AmbientTerm = AmbientTerm(), c: float = 0.01) -> float:
    _check_dims(pred, gt)
    if not lights:
        raise ValueError("rendering_loss needs at least one light")
    return rendering_loss_grad(_as_batch(pred), _as_batch(gt), [list(lights)], view, ambient, c)[0]


def _check_dims(a: ParameterMaps, b: ParameterMaps):
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}")


def rmse_metrics(pred: ParameterMaps, gt: ParameterMaps, view: ViewSpec = ViewSpec(),
                 ambient: AmbientTerm = AmbientTerm()) -> dict[str, float]:
    """Per-map RMSE in [0, 1] encoding plus the RMSE of tonemapped renderings.

    Renderings use the fixed :data:`VALIDATION_LIGHTS`. ``maps`` is the
    average of the four map errors.
    """
    _check_dims(pred, gt)
    ep, eg = pred.encoded(), gt.encoded()
    out = {name: float(np.sqrt(np.mean((ep[name] - eg[name]) ** 2))) for name in RMSE_KEYS}
    sq = [np.mean((tonemap(render_image(pred, l, view, ambient)) - tonemap(render_image(gt, l, view, ambient))) ** 2)
          for l in VALIDATION_LIGHTS]
    out["rendering"] = float(np.sqrt(np.mean(sq)))
    out["maps"] = float(np.mean([out[k] for k in RMSE_KEYS]))
    return out


# --- training loops ------------------------------------------------------------

@dataclass
class TrainRun:
    iterations: int
    seed: int
    losses: list[float] = field(default_factory=list)
    snapshots: list[tuple[int, dict]] = field(default_factory=list)

    def snapshot_at(self, iteration: int) -> dict:
        for it, rec in self.snapshots:
            if it == iteration:
                return rec
        raise KeyError(iteration)

    def rows(self):
        snaps = dict(self.snapshots)
        for it in range(self.iterations + 1):
            loss = self.losses[it - 1] if it >= 1 else None
            rec = snaps.get(it)
            yield [it, "" if loss is None else repr(loss)] + [
                "" if rec is None else repr(rec[k]) for k in RMSE_KEYS]

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "total_loss"] + [f"rmse_{k}" for k in RMSE_KEYS])
            w.writerows(self.rows())
        return path


@dataclass(frozen=True)
class Validation:
    """Fixed (input, target) pairs for RMSE snapshots."""

    inputs: tuple[ImageBuffer, ...]
    targets: tuple[ParameterMaps, ...]

    @classmethod
    def from_targets(cls, targets: Sequence[ParameterMaps], ambient: AmbientTerm = AmbientTerm()):
        light = VALIDATION_LIGHTS[0]
        inputs = tuple(ImageBuffer(tonemap(render_image(t, light, ViewSpec(), ambient))) for t in targets)
        return cls(inputs, tuple(targets))

    def evaluate(self, predictor: Predictor, ambient: AmbientTerm = AmbientTerm()) -> dict[str, float]:
        recs = []
        for x, t in zip(self.inputs, self.targets):
            pred = predictor.predict(x)
            if not all(np.all(np.isfinite(getattr(pred, k))) for k in MAP_NAMES):
                raise FloatingPointError("non-finite prediction on a validation tile")
            recs.append(rmse_metrics(pred, t, ambient=ambient))
        return {k: float(np.mean([r[k] for r in recs])) for k in recs[0]}


def train_step(predictor: Predictor, state: AdamState, samples, light_sets, loss_cfg: LossConfig,
               ambient: AmbientTerm, iteration: int) -> float:
    images = np.stack([s[0].data for s in samples])
    gt = {name: np.stack([getattr(s[1], name) for s in samples]) for name in MAP_NAMES}
    pred, cache = predictor.forward(images)
    l_map, g_map = map_loss_grad(pred, gt, loss_cfg.map_weights())
    total, grads = l_map, g_map
    if loss_cfg.w_render > 0:
        l_ren, g_ren = rendering_loss_grad(pred, gt, light_sets, ViewSpec(), ambient, loss_cfg.log_offset)
        total = l_map + loss_cfg.w_render * l_ren
        grads = {k: g_map[k] + loss_cfg.w_render * g_ren[k] for k in MAP_NAMES}
    if not np.isfinite(total):
        raise TrainingError(iteration, f"loss = {total}")
    param_grads = predictor.backward(cache, grads)
    try:
        adam_step(predictor.graph.params, param_grads, state)
    except NonFiniteGradient as exc:
        raise TrainingError(iteration, str(exc)) from None
    return total


def _run(predictor: Predictor, iterations: int, seed: int, lr: float, make_sample: Callable,
         loss_cfg: LossConfig, lights: LightDistribution, ambient: AmbientTerm,
         validation: Validation | None, snapshot_every: int = 10, progress: Callable | None = None) -> TrainRun:
    run = TrainRun(iterations, seed)
    state = AdamState(lr=lr)
    if validation is not None:
        run.snapshots.append((0, validation.evaluate(predictor, ambient)))
    for it in range(1, iterations + 1):
        samples, light_sets = [], []
        for b in range(loss_cfg.batch_size):
            rng = sample_rng(seed, (it - 1) * loss_cfg.batch_size + b)
            samples.append(make_sample(rng))
            light_sets.append([sample_light(rng, lights) for _ in range(loss_cfg.lights_per_step)])
        run.losses.append(train_step(predictor, state, samples, light_sets, loss_cfg, ambient, it))
        if validation is not None and it % snapshot_every == 0:
            run.snapshots.append((it, validation.evaluate(predictor, ambient)))
        if progress is not None:
            progress(it, run)
    predictor.graph.release()
    return run


def procedural_source(size: int) -> Callable[[np.random.Generator], list[ParameterMaps]]:
    """Material source drawing two fresh procedural materials per sample."""
    def draw(rng):
        return [procedural_material(int(rng.integers(2 ** 63)), size) for _ in range(2)]
    return draw


def pretrain(cfg: NetConfig, seed: int, iterations: int, material_source: Callable | None = None,
             loss_cfg: LossConfig = LossConfig(), aug: AugmentConfig | None = None,
             lights: LightDistribution = LightDistribution(), ambient: AmbientTerm = AmbientTerm(),
             init: NetworkParams | None = None, validation: Validation | None = None,
             progress: Callable | None = None) -> tuple[NetworkParams, TrainRun]:
    """Train from scratch (or from ``init``) on composed procedural materials."""
    aug = aug or AugmentConfig(crop=cfg.size)
    source = material_source or procedural_source(int(np.ceil(aug.crop * aug.scale_max)))
    params = init.copy() if init is not None else init_network(cfg, seed)
    predictor = Predictor(params)

    def make_sample(rng):
        return synth_training_sample(ExemplarSet(source(rng)), rng, aug, lights, ambient)

    run = _run(predictor, iterations, seed, loss_cfg.pretrain_lr, make_sample, loss_cfg, lights, ambient,
               validation, progress=progress)
    if iterations:
        params.meta.update(stage="pretrain", iterations=iterations, train_seed=seed)
    return params, run


def finetune(params: NetworkParams, ex: ExemplarSet, iterations: int = 1000, loss_cfg: LossConfig = LossConfig(),
             seed: int = 0, aug: AugmentConfig | None = None, lights: LightDistribution = LightDistribution(),
             ambient: AmbientTerm = AmbientTerm(), augment: bool = True,
             validation: Validation | Sequence[ParameterMaps] | None = None,
             progress: Callable | None = None) -> tuple[NetworkParams, TrainRun]:
    """Specialize a copy of ``params`` to the exemplars; all weights are trained.

    Without explicit validation targets, RMSE snapshots use the centered
    crop of the first exemplar.
    """
    aug = aug or AugmentConfig(crop=params.config.size)
    ex = ex if isinstance(ex, ExemplarSet) else ExemplarSet(ex, aug.crop)
    if validation is None:
        first = ex[0]
        validation = [first.crop((first.width - aug.crop) // 2, (first.height - aug.crop) // 2, aug.crop, aug.crop)]
    if not isinstance(validation, Validation):
        validation = Validation.from_targets(list(validation), ambient)
    tuned = params.copy()
    predictor = Predictor(tuned)

    def make_sample(rng):
        return synth_training_sample(ex, rng, aug, lights, ambient, augment=augment)

    run = _run(predictor, iterations, seed, loss_cfg.finetune_lr, make_sample, loss_cfg, lights, ambient,
               validation, progress=progress)
    if iterations:
        tuned.meta.update(stage="finetune", iterations=iterations, train_seed=seed, augment=augment)
    return tuned, run
