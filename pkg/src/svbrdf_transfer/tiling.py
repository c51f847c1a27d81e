"""Tiled inference over large images with Gaussian-weighted stitching.

Only one tile's network activations are alive at a time; the full-size state
is two accumulators (weighted value sum and weight sum).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Union

import numpy as np

from .maps import ALPHA_MIN, ImageBuffer, ParameterMaps, renormalize
from .net import Predictor


class TilingError(ValueError):
    pass


@dataclass(frozen=True)
class TilePlan:
    width: int
    height: int
    tile: int
    stride: int
    origins: tuple[tuple[int, int], ...]  # (x, y), row-major


def _axis_origins(extent: int, tile: int, stride: int) -> list[int]:
    origins = list(range(0, extent - tile + 1, stride))
    if origins[-1] < extent - tile:
        origins.append(extent - tile)
    return origins


def plan_tiles(width: int, height: int, tile: int, stride: int | None = None) -> TilePlan:
    """Tile origins at multiples of ``stride``, the last one per axis clamped to the border."""
    stride = tile // 2 if stride is None else stride
    if tile < 1 or stride < 1:
        raise TilingError("tile and stride must be >= 1")
    if stride > tile:
        raise TilingError(f"stride {stride} larger than tile {tile} leaves gaps")
    if width < tile or height < tile:
        raise TilingError(f"image {width}x{height} is smaller than the tile size {tile}")
    xs = _axis_origins(width, tile, stride)
    ys = _axis_origins(height, tile, stride)
    return TilePlan(width, height, tile, stride, tuple((x, y) for y in ys for x in xs))


def blend_weights(tile: int) -> np.ndarray:
    """Gaussian tile weights, sigma = tile / 4, scaled so the centre texels weigh 1.

    For even tiles the geometric centre falls between texels; the kernel is
    divided by its maximum so the four central texels get weight exactly 1.
    """
    if tile < 2:
        raise TilingError("tile must be >= 2")
    sigma = tile / 4.0
    r = np.arange(tile) - (tile - 1) / 2.0
    d2 = r[:, None] ** 2 + r[None, :] ** 2
    w = np.exp(-d2 / (2.0 * sigma ** 2))
    return w / w.max()


def _pack(m: ParameterMaps) -> np.ndarray:
    # raw normals: averaging them equals averaging the (n + 1) / 2 encoding up to the affine map
    return np.concatenate([m.normal, m.diffuse, m.roughness[..., None], m.specular], axis=-1)


class StitchAccumulator:
    """Running weighted sums for Gaussian-blended stitching.

    A pixel seen by a single tile keeps that tile's raw value (flagged by a
    negative weight) and is only converted to a weighted sum when a second
    tile arrives, so single-coverage borders come out bit-exact.
    """

    def __init__(self, width: int, height: int, kernel: np.ndarray):
        self.kernel = kernel
        self.values = np.zeros((height, width, 10))
        self.weights = np.zeros((height, width))

    def add(self, origin: tuple[int, int], m: ParameterMaps) -> None:
        x, y = origin
        t = self.kernel.shape[0]
        if (m.width, m.height) != (t, t):
            raise TilingError(f"tile at {origin} is {m.width}x{m.height}, expected {t}x{t}")
        vals = self.values[y:y + t, x:x + t]
        wts = self.weights[y:y + t, x:x + t]
        packed = _pack(m)
        fresh = wts == 0
        single = wts < 0
        vals[single] *= -wts[single][:, None]
        wts[single] *= -1.0
        covered = ~fresh
        vals[covered] += self.kernel[covered][:, None] * packed[covered]
        wts[covered] += self.kernel[covered]
        vals[fresh] = packed[fresh]
        wts[fresh] = -self.kernel[fresh]

    def result(self) -> ParameterMaps:
        if np.any(self.weights == 0):
            raise TilingError("some pixels are not covered by any tile")
        single = self.weights < 0
        v = self.values / np.where(single, 1.0, self.weights)[..., None]
        blended = ~single
        normal = v[..., 0:3].copy()
        normal[blended] = renormalize(normal[blended])
        return ParameterMaps(
            normal=normal,
            diffuse=np.clip(v[..., 3:6], 0.0, 1.0),
            roughness=np.clip(v[..., 6], ALPHA_MIN, 1.0),
            specular=np.clip(v[..., 7:10], 0.0, 1.0),
        )

    @property
    def nbytes(self) -> int:
        return self.values.nbytes + self.weights.nbytes


def stitch(tiles: Iterable[tuple[tuple[int, int], ParameterMaps]], plan: TilePlan,
           kernel: np.ndarray | None = None) -> ParameterMaps:
    """Blend per-tile maps: per pixel, sum(w_i m_i) / sum(w_i).

    Tiles are accumulated in plan order whatever order they are passed in,
    so the result does not depend on how they were computed.
    """
    kernel = blend_weights(plan.tile) if kernel is None else kernel
    by_origin = {tuple(o): m for o, m in tiles}
    acc = StitchAccumulator(plan.width, plan.height, kernel)
    for origin in plan.origins:
        if origin not in by_origin:
            raise TilingError(f"missing tile for planned origin {origin}")
        acc.add(origin, by_origin[origin])
    return acc.result()


TileFn = Callable[[ImageBuffer], ParameterMaps]


@dataclass
class InferStats:
    tiles: int = 0
    peak_tile_activation_bytes: int = 0
    accumulator_bytes: int = 0


def infer_large(img: ImageBuffer, net: Union[Predictor, TileFn], plan: TilePlan | None = None,
                kernel: np.ndarray | None = None, stats: InferStats | None = None) -> ParameterMaps:
    """Predict maps for an arbitrarily large tonemapped image, one tile at a time.

    Args:
        net: a :class:`Predictor` or any callable mapping a tile image to maps.
        plan: defaults to tiles of the network input size with half-tile stride.
        stats: filled with tile count and the peak activation footprint.
    """
    if plan is None:
        if not isinstance(net, Predictor):
            raise TilingError("a tile plan is required when net is not a Predictor")
        plan = plan_tiles(img.width, img.height, net.config.size)
    if (plan.width, plan.height) != (img.width, img.height):
        raise TilingError(f"plan is for {plan.width}x{plan.height}, image is {img.width}x{img.height}")
    kernel = blend_weights(plan.tile) if kernel is None else kernel
    predict = net.predict if isinstance(net, Predictor) else net
    if isinstance(net, Predictor):
        net.peak_activation_bytes = 0
    acc = StitchAccumulator(plan.width, plan.height, kernel)
    t = plan.tile
    for x, y in plan.origins:
        acc.add((x, y), predict(ImageBuffer(img.data[y:y + t, x:x + t])))
    if stats is not None:
        stats.tiles = len(plan.origins)
        stats.accumulator_bytes = acc.nbytes
        if isinstance(net, Predictor):
            stats.peak_tile_activation_bytes = net.peak_activation_bytes
    return acc.result()


def substitute_normals(finetuned: ParameterMaps, pretrained: ParameterMaps, enable: bool = True) -> ParameterMaps:
    """Swap in the pre-trained network's normal map when ``enable`` is set."""
    if (finetuned.width, finetuned.height) != (pretrained.width, pretrained.height):
        raise TilingError("dimension mismatch between fine-tuned and pre-trained maps")
    if not enable:
        return finetuned
    return finetuned.replace(normal=pretrained.normal)
