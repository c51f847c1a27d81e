"""Exemplar augmentation and procedural materials.

Training samples are built by scaling and cropping exemplars, pasting two
of them together under a thresholded low-frequency Perlin mask, and rendering
the result under a random directional light.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maps import ALPHA_MIN, MAP_NAMES, ImageBuffer, ParameterMaps, renormalize, validate_maps
from .render import AmbientTerm, LightDistribution, ViewSpec, render_image, sample_light, tonemap


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    crop: int = 64
    scale_min: float = 0.5
    scale_max: float = 2.0
    period_min: int = 2
    period_max: int = 4
    threshold_min: float = -0.2
    threshold_max: float = 0.2

    def __post_init__(self):
        if self.crop < 2:
            raise ValueError("crop must be >= 2")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError("scale range must be positive and ordered")
        if not 1 <= self.period_min <= self.period_max:
            raise ValueError("perlin periods must satisfy 1 <= min <= max")
        if self.threshold_min > self.threshold_max:
            raise ValueError("threshold range must be ordered")


class ExemplarSet:
    """A non-empty list of valid exemplar materials, each at least ``crop`` wide."""

    def __init__(self, patches, crop: int | None = None):
        self.patches = list(patches)
        if not self.patches:
            raise AugmentError("exemplar set is empty")
        for i, p in enumerate(self.patches):
            if validate_maps(p):
                raise AugmentError(f"exemplar {i} violates the parameter-map invariants")
            if crop is not None and min(p.width, p.height) < crop:
                raise AugmentError(f"exemplar {i} ({p.width}x{p.height}) is smaller than the crop size {crop}")

    def __len__(self):
        return len(self.patches)

    def __getitem__(self, i):
        return self.patches[i]


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


# --- noise and masks ---------------------------------------------------------

def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def perlin_field(seed, periods: int, w: int, h: int) -> np.ndarray:
    """Classic 2D gradient noise with ``periods`` lattice cells per axis.

    Values are scaled by sqrt(2) so they span roughly [-1, 1]. The field is
    exactly zero at lattice points.
    """
    if periods < 1 or w < 2 or h < 2:
        raise ValueError("perlin_field needs periods >= 1 and w, h >= 2")
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=(periods + 1, periods + 1))
    grads = np.stack([np.cos(angles), np.sin(angles)], axis=-1)

    u = np.arange(w) * (periods / w)
    v = np.arange(h) * (periods / h)
    xi, yi = np.floor(u).astype(int), np.floor(v).astype(int)
    xf, yf = u - xi, v - yi
    X, Y = np.meshgrid(xf, yf)
    XI, YI = np.meshgrid(xi, yi)

    def corner(dx, dy):
        g = grads[YI + dy, XI + dx]
        return g[..., 0] * (X - dx) + g[..., 1] * (Y - dy)

    sx, sy = _fade(X), _fade(Y)
    top = corner(0, 0) + sx * (corner(1, 0) - corner(0, 0))
    bottom = corner(0, 1) + sx * (corner(1, 1) - corner(0, 1))
    return np.sqrt(2.0) * (top + sy * (bottom - top))


def threshold_mask(field: np.ndarray, tau: float) -> np.ndarray:
    return (field > tau).astype(np.float64)


def random_mask(rng: np.random.Generator, cfg: AugmentConfig, w: int, h: int) -> np.ndarray:
    periods = int(rng.integers(cfg.period_min, cfg.period_max + 1))
    tau = rng.uniform(cfg.threshold_min, cfg.threshold_max)
    seed = int(rng.integers(2 ** 63))
    return threshold_mask(perlin_field(seed, periods, w, h), tau)


# --- resampling and composition ------------------------------------------------

def _bilinear(a: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = a.shape[:2]
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.minimum(np.floor(ys).astype(int), h - 1)
    x0 = np.minimum(np.floor(xs).astype(int), w - 1)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    fy, fx = ys - y0, xs - x0
    if a.ndim == 3:
        fy, fx = fy[:, None, None], fx[None, :, None]
    else:
        fy, fx = fy[:, None], fx[None, :]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bottom = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resample_crop(m: ParameterMaps, x0: float, y0: float, scale: float, crop: int) -> ParameterMaps:
    """Bilinearly sample a ``crop``-sized grid covering ``crop * scale`` source pixels."""
    if scale == 1.0 and float(x0).is_integer() and float(y0).is_integer():
        return m.crop(int(x0), int(y0), crop, crop)
    offs = (np.arange(crop) + 0.5) * scale - 0.5
    ys, xs = y0 + offs, x0 + offs
    out = {name: _bilinear(getattr(m, name), ys, xs) for name in MAP_NAMES}
    out["normal"] = renormalize(out["normal"])
    out["roughness"] = np.clip(out["roughness"], ALPHA_MIN, 1.0)
    return ParameterMaps(**out)


def random_scale_crop(m: ParameterMaps, rng: np.random.Generator, cfg: AugmentConfig,
                      scale: float | None = None) -> ParameterMaps:
    """Crop a randomly placed window of ``crop * scale`` pixels, resampled to ``crop``.

    The scale is log-uniform in the configured range. Scales whose window
    does not fit in the source are redrawn up to 8 times.
    """
    limit = min(m.width, m.height)
    for _ in range(9):
        s = scale if scale is not None else float(np.exp(rng.uniform(np.log(cfg.scale_min), np.log(cfg.scale_max))))
        span = cfg.crop * s
        if span <= limit:
            break
        if scale is not None:
            break
    else:
        span = np.inf
    if span > limit:
        raise AugmentError(f"source {m.width}x{m.height} too small for crop {cfg.crop} at scale {s:.3f}")
    x0 = int(rng.integers(0, int(np.floor(m.width - span)) + 1))
    y0 = int(rng.integers(0, int(np.floor(m.height - span)) + 1))
    return resample_crop(m, x0, y0, s, cfg.crop)


def compose_exemplars(a: ParameterMaps, b: ParameterMaps, mask: np.ndarray) -> ParameterMaps:
    """``mask * a + (1 - mask) * b`` per map.

    Normals are mixed in their RGB encoding and renormalized. With a binary
    mask this is an exact per-pixel selection.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if (a.height, a.width) != (b.height, b.width) or mask.shape != (a.height, a.width):
        raise AugmentError(f"dimension mismatch: a {a.width}x{a.height}, b {b.width}x{b.height}, mask {mask.shape}")
    if np.all((mask == 0) | (mask == 1)):
        sel = mask.astype(bool)
        out = {name: np.where(sel if name == "roughness" else sel[..., None], getattr(a, name), getattr(b, name))
               for name in MAP_NAMES}
        return ParameterMaps(**out)
    out = {}
    for name in MAP_NAMES:
        wa = mask if name == "roughness" else mask[..., None]
        out[name] = wa * getattr(a, name) + (1 - wa) * getattr(b, name)
    na, nb = (a.normal + 1) * 0.5, (b.normal + 1) * 0.5
    out["normal"] = renormalize(2.0 * (mask[..., None] * na + (1 - mask[..., None]) * nb) - 1.0)
    return ParameterMaps(**out)


def synth_training_sample(ex: ExemplarSet, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig(),
                          lights: LightDistribution = LightDistribution(), ambient: AmbientTerm = AmbientTerm(),
                          augment: bool = True) -> tuple[ImageBuffer, ParameterMaps]:
    """One (tonemapped rendering, target maps) training pair.

    With two or more exemplars, two distinct ones are scaled, cropped and
    composed under a fresh Perlin mask. A single exemplar is only scaled and
    cropped. With ``augment=False`` one exemplar is drawn and its centered
    crop is used as is.
    """
    if not augment:
        m = ex[int(rng.integers(len(ex)))]
        x0, y0 = (m.width - cfg.crop) // 2, (m.height - cfg.crop) // 2
        target = m.crop(x0, y0, cfg.crop, cfg.crop)
    elif len(ex) == 1:
        target = random_scale_crop(ex[0], rng, cfg)
    else:
        i, j = rng.choice(len(ex), size=2, replace=False)
        a = random_scale_crop(ex[int(i)], rng, cfg)
        b = random_scale_crop(ex[int(j)], rng, cfg)
        target = compose_exemplars(a, b, random_mask(rng, cfg, cfg.crop, cfg.crop))
    light = sample_light(rng, lights)
    img = ImageBuffer(tonemap(render_image(target, light, ViewSpec(), ambient)))
    return img, target


# --- procedural materials ---------------------------------------------------

FAMILIES = ("uniform", "two_tone", "tiles", "flakes")


def _random_bsdf(rng):
    """Diffuse albedo, roughness and specular albedo for one material region."""
    rough = rng.uniform(0.05, 1.0)
    if rng.uniform() < 0.3:  # metal: colored specular, dark diffuse
        spec = rng.uniform(0.4, 1.0, size=3)
        diff = rng.uniform(0.0, 0.1, size=3)
    else:
        spec = np.full(3, rng.uniform(0.02, 0.12))
        diff = rng.uniform(0.05, 0.9, size=3)
    return diff, rough, spec


def _normals_from_height(h: np.ndarray, strength: float) -> np.ndarray:
    gy, gx = np.gradient(h)
    n = np.stack([-strength * gx, -strength * gy, np.ones_like(h)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _region_maps(rng, size, variation):
    diff, rough, spec = _random_bsdf(rng)
    tex = perlin_field(int(rng.integers(2 ** 63)), int(rng.integers(4, 9)), size, size)
    d = np.clip(diff * (1.0 + variation * tex[..., None]), 0.0, 1.0)
    r = np.clip(rough * (1.0 + 0.5 * variation * tex), ALPHA_MIN, 1.0)
    return d, r, np.broadcast_to(spec, (size, size, 3))


def procedural_material(seed: int, size: int, family: str | None = None) -> ParameterMaps:
    """A random synthetic material of ``size`` x ``size`` pixels.

    Families: ``uniform`` (spatially constant), ``two_tone`` (two materials
    under a Perlin mask), ``tiles`` (grid of tiles separated by grout) and
    ``flakes`` (metallic base with sparkling flakes).
    """
    if size < 16:
        raise ValueError("procedural materials need size >= 16")
    rng = np.random.default_rng(seed)
    if family is None:
        family = FAMILIES[int(rng.integers(len(FAMILIES)))]
    flat = np.zeros((size, size, 3))
    flat[..., 2] = 1.0

    if family == "uniform":
        diff, rough, spec = _random_bsdf(rng)
        return ParameterMaps.constant(size, size, diffuse=diff, roughness=rough, specular=spec)

    if family == "two_tone":
        da, ra, sa = _region_maps(rng, size, 0.2)
        db, rb, sb = _region_maps(rng, size, 0.2)
        field = perlin_field(int(rng.integers(2 ** 63)), int(rng.integers(2, 5)), size, size)
        mask = field > rng.uniform(-0.2, 0.2)
        bump = perlin_field(int(rng.integers(2 ** 63)), int(rng.integers(6, 12)), size, size)
        normal = _normals_from_height(bump + 2.0 * mask, rng.uniform(0.0, 1.5))
        return ParameterMaps(normal, np.where(mask[..., None], da, db), np.where(mask, ra, rb),
                             np.where(mask[..., None], sa, sb))

    if family == "tiles":
        dt, rt, st = _region_maps(rng, size, 0.15)
        dg, rg, sg = _region_maps(rng, size, 0.3)
        count = int(rng.integers(2, 6))
        pitch = size / count
        grout = max(1.0, pitch * rng.uniform(0.05, 0.15))
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        dist = np.minimum(np.mod(xx, pitch), np.mod(yy, pitch))
        dist = np.minimum(dist, pitch - np.maximum(np.mod(xx, pitch), np.mod(yy, pitch)))
        in_grout = dist < grout / 2
        height = np.clip(dist / grout, 0.0, 1.0)
        normal = _normals_from_height(height, rng.uniform(0.5, 3.0))
        return ParameterMaps(normal, np.where(in_grout[..., None], dg, dt), np.where(in_grout, rg, rt),
                             np.where(in_grout[..., None], sg, st))

    if family == "flakes":
        spec = rng.uniform(0.4, 1.0, size=3)
        diff = rng.uniform(0.0, 0.15, size=3)
        rough = rng.uniform(0.2, 0.8)
        cell = int(rng.integers(2, 5))
        cells = -(-size // cell)
        tilt = rng.normal(0.0, rng.uniform(0.1, 0.4), size=(cells, cells, 2))
        nz = np.concatenate([tilt, np.ones((cells, cells, 1))], axis=-1)
        nz = nz.repeat(cell, axis=0).repeat(cell, axis=1)[:size, :size]
        normal = nz / np.linalg.norm(nz, axis=-1, keepdims=True)
        sparkle = rng.uniform(size=(cells, cells)).repeat(cell, axis=0).repeat(cell, axis=1)[:size, :size]
        r = np.clip(rough * (0.6 + 0.8 * sparkle), ALPHA_MIN, 1.0)
        return ParameterMaps(normal, np.broadcast_to(diff, (size, size, 3)), r,
                             np.clip(spec * (0.8 + 0.2 * sparkle[..., None]), 0.0, 1.0))

    raise ValueError(f"unknown material family {family!r}")
