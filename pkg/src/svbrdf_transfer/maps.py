"""SVBRDF parameter maps: data model, validation and PNG storage.

Albedo maps are sRGB-encoded on disk and linear in memory. Normals are stored
as ``(n + 1) / 2`` and roughness is stored linearly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import cv2
import numpy as np

ALPHA_MIN = 0.045
NORMAL_TOL = 1e-4
MAP_NAMES = ("normal", "diffuse", "roughness", "specular")


class MapsError(ValueError):
    """Raised for malformed parameter maps or map files."""


class Violation(NamedTuple):
    map: str
    pixel: tuple[int, int]  # (row, col)
    rule: str


def _frozen(a, shape_tail: tuple[int, ...]) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if a.shape[2:] != shape_tail or a.ndim != 2 + len(shape_tail):
        raise MapsError(f"expected array of shape (H, W{''.join(', %d' % s for s in shape_tail)}), got {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ParameterMaps:
    """The four per-pixel SVBRDF maps of one material.

    ``normal``, ``diffuse`` and ``specular`` have shape ``(H, W, 3)``;
    ``roughness`` has shape ``(H, W)``. Arrays are copied and made read-only.
    Construction only checks shapes; use :func:`validate_maps` for values.
    """

    normal: np.ndarray
    diffuse: np.ndarray
    roughness: np.ndarray
    specular: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "normal", _frozen(self.normal, (3,)))
        object.__setattr__(self, "diffuse", _frozen(self.diffuse, (3,)))
        object.__setattr__(self, "roughness", _frozen(self.roughness, ()))
        object.__setattr__(self, "specular", _frozen(self.specular, (3,)))
        shapes = {name: getattr(self, name).shape[:2] for name in MAP_NAMES}
        if len(set(shapes.values())) != 1:
            raise MapsError(f"map resolutions differ: {shapes}")

    @property
    def height(self) -> int:
        return self.normal.shape[0]

    @property
    def width(self) -> int:
        return self.normal.shape[1]

    @classmethod
    def constant(cls, width, height, normal=(0.0, 0.0, 1.0), diffuse=0.5, roughness=0.5, specular=0.04):
        def fill(v, c):
            return np.broadcast_to(np.asarray(v, dtype=np.float64), (height, width, c) if c else (height, width))

        return cls(fill(normal, 3), fill(diffuse, 3), fill(roughness, 0), fill(specular, 3))

    def crop(self, x: int, y: int, w: int, h: int) -> ParameterMaps:
        sl = (slice(y, y + h), slice(x, x + w))
        return ParameterMaps(self.normal[sl], self.diffuse[sl], self.roughness[sl], self.specular[sl])

    def replace(self, **maps) -> ParameterMaps:
        kw = {name: getattr(self, name) for name in MAP_NAMES}
        kw.update(maps)
        return ParameterMaps(**kw)

    def encoded(self) -> dict[str, np.ndarray]:
        """Maps in their [0, 1] encoding: normals RGB-encoded, others as-is."""
        return {
            "normal": (self.normal + 1.0) * 0.5,
            "diffuse": self.diffuse,
            "roughness": self.roughness,
            "specular": self.specular,
        }

    def equals(self, other: ParameterMaps) -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in MAP_NAMES)


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Linear radiance raster of shape ``(H, W, C)``."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3:
            raise MapsError(f"image must be (H, W, C), got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise MapsError("image entries must be finite and non-negative")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def validate_maps(m: ParameterMaps) -> list[Violation]:
    """List every pixel that breaks a ParameterMaps invariant.

    Returns an empty list for a valid material. Violations are reported in
    map order, then row-major pixel order.
    """
    report: list[Violation] = []

    def add(name, bad, rule):
        for r, c in np.argwhere(bad):
            report.append(Violation(name, (int(r), int(c)), rule))

    length = np.linalg.norm(m.normal, axis=-1)
    add("normal", ~(np.abs(length - 1.0) <= NORMAL_TOL), "length must be 1 within 1e-4")
    add("normal", ~(m.normal[..., 2] > 0), "z must be positive")
    for name in ("diffuse", "specular"):
        a = getattr(m, name)
        add(name, ~np.all((a >= 0) & (a <= 1), axis=-1), "channels must lie in [0, 1]")
    add("roughness", ~(m.roughness >= ALPHA_MIN), f"below alpha_min={ALPHA_MIN}")
    add("roughness", ~(m.roughness <= 1), "above 1")
    return report


def encode_normal_rgb(n) -> np.ndarray:
    """Map unit tangent-space normals to RGB, ``(n + 1) / 2``."""
    n = np.asarray(n, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(n, axis=-1) - 1.0) > NORMAL_TOL):
        raise MapsError("encode_normal_rgb expects unit normals")
    return (n + 1.0) * 0.5


def decode_normal_rgb(rgb) -> np.ndarray:
    """Inverse of :func:`encode_normal_rgb` that tolerates off-sphere input.

    Components with ``z <= 0`` are lifted to ``z = 1e-3`` before
    normalization, so blended or quantized normals stay in the upper
    hemisphere; mid-gray decodes to ``(0, 0, 1)``.
    """
    n = 2.0 * np.asarray(rgb, dtype=np.float64) - 1.0
    n[..., 2] = np.where(n[..., 2] <= 0, 1e-3, n[..., 2])
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def renormalize(n: np.ndarray) -> np.ndarray:
    """Project arbitrary normal vectors back to the upper unit hemisphere."""
    n = np.array(n, dtype=np.float64)
    n[..., 2] = np.where(n[..., 2] <= 0, 1e-3, n[..., 2])
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1 / 2.4) - 0.055)


# --- PNG storage -----------------------------------------------------------

def map_paths(stem) -> dict[str, Path]:
    """The four-file naming convention ``<stem>_<map>.png``."""
    stem = str(stem)
    return {name: Path(f"{stem}_{name}.png") for name in MAP_NAMES}


def read_png(path) -> np.ndarray:
    """Read an 8/16-bit PNG as floats in [0, 1], RGB order, shape (H, W, C)."""
    path = Path(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise MapsError(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise MapsError(f"unsupported bit depth {raw.dtype} in {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.shape[2] == 4:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
    elif raw.shape[2] == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return raw.astype(np.float64) / scale


def write_png(path, values: np.ndarray, bit_depth: int = 16) -> None:
    """Write floats in [0, 1] of shape (H, W) or (H, W, 3) as a PNG."""
    if bit_depth == 16:
        q = np.round(np.clip(values, 0, 1) * 65535.0).astype(np.uint16)
    elif bit_depth == 8:
        q = np.round(np.clip(values, 0, 1) * 255.0).astype(np.uint8)
    else:
        raise MapsError(f"unsupported bit depth {bit_depth}")
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[:, :, 0]
    if q.ndim == 3:
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), q):
        raise MapsError(f"cannot write image {path}")


def read_maps(paths) -> ParameterMaps:
    """Load a material from four PNG files.

    Args:
        paths: a stem (see :func:`map_paths`) or a mapping from map name
            to file path.
    """
    if not isinstance(paths, dict):
        paths = map_paths(paths)
    arrays = {name: read_png(paths[name]) for name in MAP_NAMES}
    sizes = {name: a.shape[:2] for name, a in arrays.items()}
    if len(set(sizes.values())) != 1:
        raise MapsError(f"resolution mismatch across map files: {sizes}")
    for name in ("normal", "diffuse", "specular"):
        if arrays[name].shape[2] != 3:
            raise MapsError(f"{name} map must have 3 channels, got {arrays[name].shape[2]}")
    return ParameterMaps(
        normal=decode_normal_rgb(arrays["normal"]),
        diffuse=srgb_to_linear(arrays["diffuse"]),
        roughness=np.clip(arrays["roughness"][:, :, 0], ALPHA_MIN, 1.0),
        specular=srgb_to_linear(arrays["specular"]),
    )


def write_maps(m: ParameterMaps, paths, bit_depth: int = 16) -> dict[str, Path]:
    if not isinstance(paths, dict):
        paths = map_paths(paths)
    write_png(paths["normal"], (m.normal + 1.0) * 0.5, bit_depth)
    write_png(paths["diffuse"], linear_to_srgb(m.diffuse), bit_depth)
    write_png(paths["roughness"], m.roughness, bit_depth)
    write_png(paths["specular"], linear_to_srgb(m.specular), bit_depth)
    return {k: Path(v) for k, v in paths.items()}
