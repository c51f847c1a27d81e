"""Run configuration: ``key = value`` files plus ``--section.key value`` overrides.

Every key, its default and its accepted range lives in :data:`SCHEMA`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .augment import AugmentConfig
from .net import NetConfig
from .render import AmbientTerm, LightDistribution
from .train import LossConfig


class ConfigError(ValueError):
    pass


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


@dataclass(frozen=True)
class Key:
    default: Any
    kind: type  # int, float, bool, str or list (comma-separated strings)
    check: Callable[[Any], bool] | None = None
    doc: str = ""


SCHEMA: dict[str, Key] = {
    "run.seed": Key(0, int, _nonneg, "master seed for every random stream"),
    "net.size": Key(64, int, _positive, "network input size (power of two)"),
    "net.depth": Key(4, int, _positive, "down/up-sampling levels"),
    "net.base": Key(8, int, _positive, "channels at full resolution"),
    "net.global_width": Key(16, int, _positive, "width of the global feature track"),
    "augment.scale_min": Key(0.5, float, _positive, "smallest exemplar resampling factor"),
    "augment.scale_max": Key(2.0, float, _positive, "largest exemplar resampling factor"),
    "augment.period_min": Key(2, int, _positive, "fewest Perlin cells across a crop"),
    "augment.period_max": Key(4, int, _positive, "most Perlin cells across a crop"),
    "augment.threshold_min": Key(-0.2, float, None, "lowest mask threshold"),
    "augment.threshold_max": Key(0.2, float, None, "highest mask threshold"),
    "loss.w_normal": Key(1.0, float, _nonneg, "normal map L1 weight"),
    "loss.w_diffuse": Key(1.0, float, _nonneg, "diffuse map L1 weight"),
    "loss.w_roughness": Key(1.0, float, _nonneg, "roughness map L1 weight"),
    "loss.w_specular": Key(1.0, float, _nonneg, "specular map L1 weight"),
    "loss.w_render": Key(1.0, float, _nonneg, "log-rendering L1 weight"),
    "loss.lights_per_step": Key(3, int, _positive, "lights per rendering-loss evaluation"),
    "loss.log_offset": Key(0.01, float, _positive, "c in log(render + c)"),
    "loss.pretrain_lr": Key(LossConfig.pretrain_lr, float, _positive, "Adam step size for pre-training"),
    "loss.finetune_lr": Key(LossConfig.finetune_lr, float, _positive, "Adam step size for fine-tuning"),
    "loss.batch_size": Key(LossConfig.batch_size, int, _positive, "samples per optimizer step"),
    "light.elevation_min": Key(20.0, float, lambda v: 0 < v <= 90, "lowest light elevation, degrees"),
    "light.elevation_max": Key(90.0, float, lambda v: 0 < v <= 90, "highest light elevation, degrees"),
    "light.intensity_min": Key(1.0, float, _nonneg, "lowest light intensity per channel"),
    "light.intensity_max": Key(4.0, float, _nonneg, "highest light intensity per channel"),
    "light.gray_probability": Key(0.5, float, _unit, "probability of a white light"),
    "light.ambient": Key(0.1, float, _nonneg, "ambient multiple of the albedos"),
    "tiler.tile": Key(64, int, lambda v: v >= 2, "tile size; must equal the network input size"),
    "tiler.stride": Key(32, int, _positive, "distance between tile origins"),
    "pretrain.iterations": Key(2000, int, _nonneg, "pre-training steps"),
    "finetune.iterations": Key(1000, int, _nonneg, "fine-tuning steps"),
    "finetune.augment": Key(True, bool, None, "collage augmentation of the exemplars"),
    "infer.substitute_normals": Key(False, bool, None, "take normals from the pre-trained network"),
    "render.elevation": Key(60.0, float, lambda v: 0 < v <= 90, "preview light elevation, degrees"),
    "render.azimuth": Key(45.0, float, None, "preview light azimuth, degrees"),
    "render.intensity": Key(3.0, float, _nonneg, "preview light intensity"),
    "preview.count": Key(8, int, _positive, "number of augmented samples to write"),
    "paths.output": Key("out", str, None, "directory receiving every artifact"),
    "paths.checkpoint": Key("", str, None, "network checkpoint to start from"),
    "paths.pretrained": Key("", str, None, "pre-trained checkpoint used for normal substitution"),
    "paths.exemplars": Key([], list, None, "comma-separated exemplar map stems"),
    "paths.input": Key("", str, None, "input image (PNG) for infer"),
    "paths.maps": Key("", str, None, "map stem for render"),
    "paths.prediction": Key("", str, None, "predicted map stem for metrics"),
    "paths.reference": Key("", str, None, "reference map stem for metrics"),
}


def _convert(key: str, raw: str, where: str):
    spec = SCHEMA[key]
    raw = raw.strip()
    try:
        if spec.kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                value = True
            elif low in ("0", "false", "no", "off"):
                value = False
            else:
                raise ValueError(raw)
        elif spec.kind is list:
            value = [s.strip() for s in raw.split(",") if s.strip()]
        elif spec.kind is int:
            value = int(raw)
        elif spec.kind is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {spec.kind.__name__} for key {key}") from None
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"{where}: value {value!r} out of range for key {key} ({spec.doc})")
    return value


class RunConfig:
    """Flat ``section.key -> value`` mapping with typed accessors for each module."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k: v.default for k, v in SCHEMA.items()}
        self.values.update(values or {})

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def net(self) -> NetConfig:
        return NetConfig(**self.section("net"))

    def augment(self, crop: int) -> AugmentConfig:
        return AugmentConfig(crop=crop, **self.section("augment"))

    def loss(self) -> LossConfig:
        return LossConfig(**self.section("loss"))

    def lights(self) -> LightDistribution:
        s = self.section("light")
        s.pop("ambient")
        return LightDistribution(**s)

    def ambient(self) -> AmbientTerm:
        return AmbientTerm(self["light.ambient"])

    def dumps(self) -> str:
        lines = []
        for key, spec in SCHEMA.items():
            v = self.values[key]
            text = ", ".join(v) if isinstance(v, list) else str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{key} = {text}  # {spec.doc}")
        return "\n".join(lines) + "\n"

    def echo(self, directory) -> Path:
        path = Path(directory) / "config.echo.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path


def parse_config(text: str = "", overrides: list[tuple[str, str]] = (), source: str = "<config>") -> RunConfig:
    """Parse config text, then apply ``(key, value)`` flag overrides.

    Raises:
        ConfigError: unknown key, unparsable or out-of-range value; the
            message names the line or flag.
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{lineno}"
        if "=" not in body:
            raise ConfigError(f"{where}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        values[key] = _convert(key, raw, where)
    for key, raw in overrides:
        if key not in SCHEMA:
            raise ConfigError(f"flag --{key}: unknown key {key!r}")
        values[key] = _convert(key, raw, f"flag --{key}")
    cfg = RunConfig(values)
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: RunConfig):
    try:
        cfg.net()
        cfg.augment(cfg["net.size"])
        cfg.loss()
        cfg.lights()
    except ValueError as exc:
        raise ConfigError(f"inconsistent configuration: {exc}") from None
    if cfg["tiler.stride"] > cfg["tiler.tile"]:
        raise ConfigError("key tiler.stride: stride larger than tiler.tile leaves uncovered pixels")


def load_config(path=None, overrides: list[tuple[str, str]] = ()) -> RunConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config(text, overrides, str(path or "<config>"))
