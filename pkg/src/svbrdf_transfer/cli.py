"""Command-line driver: pretrain, finetune, infer, render, preview-augment, metrics.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .augment import AugmentError, ExemplarSet, sample_rng, synth_training_sample
from .config import ConfigError, RunConfig, load_config
from .maps import ImageBuffer, MapsError, map_paths, read_maps, read_png, write_maps, write_png
from .net import Predictor, load_network, save_network
from .render import DirectionalLight, ViewSpec, render_image, tonemap
from .tiling import TilingError, infer_large, plan_tiles, substitute_normals
from .train import TrainingError, finetune, pretrain, rmse_metrics

log = logging.getLogger("svbrdf_transfer")

COMMANDS = ("pretrain", "finetune", "infer", "render", "preview-augment", "metrics")
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _require(cfg: RunConfig, *keys: str, exist: bool = True):
    for key in keys:
        value = cfg[key]
        if not value:
            raise ConfigError(f"key {key}: required path not set")
        if exist:
            for item in value if isinstance(value, list) else [value]:
                if key in ("paths.exemplars", "paths.maps", "paths.prediction", "paths.reference"):
                    missing = [str(p) for p in map_paths(item).values() if not Path(p).exists()]
                else:
                    missing = [] if Path(item).exists() else [item]
                if missing:
                    raise ConfigError(f"key {key}: path not found: {missing[0]}")


def cmd_pretrain(cfg: RunConfig, out: Path) -> dict:
    net_cfg = cfg.net()
    params, run = pretrain(net_cfg, cfg["run.seed"], cfg["pretrain.iterations"], loss_cfg=cfg.loss(),
                           aug=cfg.augment(net_cfg.size), lights=cfg.lights(), ambient=cfg.ambient())
    ckpt = save_network(params, out / "pretrained.ckpt")
    csv_path = run.write_csv(out / "pretrain_log.csv")
    return {"checkpoint": str(ckpt), "log": str(csv_path)}


def cmd_finetune(cfg: RunConfig, out: Path) -> dict:
    _require(cfg, "paths.checkpoint", "paths.exemplars")
    params = load_network(cfg["paths.checkpoint"])
    aug = cfg.augment(params.config.size)
    ex = ExemplarSet([read_maps(stem) for stem in cfg["paths.exemplars"]], aug.crop)
    tuned, run = finetune(params, ex, cfg["finetune.iterations"], cfg.loss(), cfg["run.seed"], aug,
                          cfg.lights(), cfg.ambient(), augment=cfg["finetune.augment"])
    ckpt = save_network(tuned, out / "finetuned.ckpt")
    csv_path = run.write_csv(out / "finetune_log.csv")
    return {"checkpoint": str(ckpt), "log": str(csv_path)}


def _load_image(path) -> ImageBuffer:
    data = read_png(path)
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    return ImageBuffer(data[:, :, :3])


def cmd_infer(cfg: RunConfig, out: Path) -> dict:
    _require(cfg, "paths.checkpoint", "paths.input")
    substitute = cfg["infer.substitute_normals"]
    if substitute:
        _require(cfg, "paths.pretrained")
    params = load_network(cfg["paths.checkpoint"])
    tile, stride = cfg["tiler.tile"], cfg["tiler.stride"]
    if tile != params.config.size:
        raise ConfigError(f"key tiler.tile: {tile} differs from the checkpoint input size {params.config.size}")
    img = _load_image(cfg["paths.input"])
    plan = plan_tiles(img.width, img.height, tile, stride)
    maps = infer_large(img, Predictor(params), plan)
    if substitute:
        base = load_network(cfg["paths.pretrained"])
        if base.config.size != tile:
            raise ConfigError("key paths.pretrained: checkpoint input size differs from tiler.tile")
        maps = substitute_normals(maps, infer_large(img, Predictor(base), plan), True)
    files = write_maps(maps, out / "result")
    return {k: str(v) for k, v in files.items()} | {"tiles": len(plan.origins)}


def cmd_render(cfg: RunConfig, out: Path) -> dict:
    _require(cfg, "paths.maps")
    maps = read_maps(cfg["paths.maps"])
    light = DirectionalLight.from_angles(cfg["render.elevation"], cfg["render.azimuth"], cfg["render.intensity"])
    path = out / "render.png"
    write_png(path, tonemap(render_image(maps, light, ViewSpec(), cfg.ambient())), 8)
    return {"render": str(path)}


def cmd_preview(cfg: RunConfig, out: Path) -> dict:
    _require(cfg, "paths.exemplars")
    aug = cfg.augment(cfg["net.size"])
    ex = ExemplarSet([read_maps(stem) for stem in cfg["paths.exemplars"]], aug.crop)
    written = []
    for k in range(cfg["preview.count"]):
        img, target = synth_training_sample(ex, sample_rng(cfg["run.seed"], k), aug, cfg.lights(), cfg.ambient(),
                                            augment=cfg["finetune.augment"])
        write_maps(target, out / f"preview_{k:03d}")
        write_png(out / f"preview_{k:03d}_input.png", img.data, 8)
        written.append(k)
    return {"samples": len(written)}


def cmd_metrics(cfg: RunConfig, out: Path) -> dict:
    _require(cfg, "paths.prediction", "paths.reference")
    rec = rmse_metrics(read_maps(cfg["paths.prediction"]), read_maps(cfg["paths.reference"]),
                       ambient=cfg.ambient())
    path = out / "metrics.json"
    path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    print(json.dumps(rec, sort_keys=True))
    return {"metrics": str(path)}


HANDLERS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "infer": cmd_infer,
    "render": cmd_render,
    "preview-augment": cmd_preview,
    "metrics": cmd_metrics,
}


def _split_overrides(rest: list[str]) -> list[tuple[str, str]]:
    pairs, i = [], 0
    while i < len(rest):
        flag = rest[i]
        if not flag.startswith("--"):
            raise ConfigError(f"unexpected argument {flag!r}")
        key = flag[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise ConfigError(f"flag {flag}: missing value")
            value = rest[i + 1]
            i += 2
        pairs.append((key, value))
    return pairs


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "code": code, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="svbrdf-transfer", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--substitute-normals", action="store_true", help="infer: use pre-trained normals")
    parser.add_argument("--no-augment", action="store_true", help="finetune: train on raw exemplars")
    parser.add_argument("-v", "--verbose", action="store_true")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    try:
        overrides = _split_overrides(rest)
        if args.substitute_normals:
            overrides.append(("infer.substitute_normals", "true"))
        if args.no_augment:
            overrides.append(("finetune.augment", "false"))
        cfg = load_config(args.config, overrides)
        out = Path(cfg["paths.output"])
        cfg.echo(out)
        result = HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (TrainingError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except (MapsError, checkpoint.CheckpointError, AugmentError, TilingError, OSError, ValueError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    log.info(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
