"""Cook-Torrance shading (GGX / Schlick / Smith) under a directional light.

All shading functions are vectorized over leading axes: normals, albedos and
roughness may be single texels or whole maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maps import ALPHA_MIN, ImageBuffer, ParameterMaps, renormalize

HORIZON_EPS = 1e-4


@dataclass(frozen=True)
class DirectionalLight:
    dir: tuple[float, float, float]
    intensity: tuple[float, float, float]

    def __post_init__(self):
        d = np.asarray(self.dir, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6 or d[2] <= 0:
            raise ValueError(f"light direction must be a unit vector with z > 0, got {self.dir}")
        i = np.asarray(self.intensity, dtype=np.float64)
        if i.shape != (3,) or not np.all(np.isfinite(i)) or np.any(i < 0):
            raise ValueError(f"light intensity must be a finite non-negative RGB triplet, got {self.intensity}")

    @classmethod
    def from_angles(cls, elevation_deg: float, azimuth_deg: float, intensity=(1.0, 1.0, 1.0)):
        el, az = np.radians(elevation_deg), np.radians(azimuth_deg)
        d = (np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el))
        if np.isscalar(intensity):
            intensity = (intensity,) * 3
        return cls(tuple(float(c) for c in d), tuple(float(c) for c in intensity))


@dataclass(frozen=True)
class ViewSpec:
    dir: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        d = np.asarray(self.dir, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6 or d[2] <= 0:
            raise ValueError(f"view direction must be a unit vector with z > 0, got {self.dir}")


@dataclass(frozen=True)
class AmbientTerm:
    k_a: float = 0.1

    def __post_init__(self):
        if not np.isfinite(self.k_a) or self.k_a < 0:
            raise ValueError(f"ambient coefficient must be finite and >= 0, got {self.k_a}")


@dataclass(frozen=True)
class LightDistribution:
    elevation_min: float = 20.0  # degrees above the surface plane
    elevation_max: float = 90.0
    intensity_min: float = 1.0
    intensity_max: float = 4.0
    gray_probability: float = 0.5

    def __post_init__(self):
        if not 0 < self.elevation_min <= self.elevation_max <= 90:
            raise ValueError("elevation range must satisfy 0 < min <= max <= 90")
        if not 0 <= self.intensity_min <= self.intensity_max:
            raise ValueError("intensity range must satisfy 0 <= min <= max")
        if not 0 <= self.gray_probability <= 1:
            raise ValueError("gray_probability must lie in [0, 1]")


@dataclass(frozen=True)
class TexelBrdf:
    n: tuple[float, float, float]
    rho_d: tuple[float, float, float]
    rho_s: tuple[float, float, float]
    alpha: float


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _terms(n, alpha, l, v):
    """Geometry shared by shading and its derivatives."""
    h = l + v
    h = h / np.linalg.norm(h)
    nl, nv, nh = _dot(n, l), _dot(n, v), _dot(n, h)
    vh = float(np.dot(v, h))
    a2 = alpha * alpha
    q = nh * nh * (a2 - 1.0) + 1.0
    D = a2 / (np.pi * q * q)
    lit = nl > 0
    front = lit & (nv > 0)
    nl_s = np.where(front, nl, 1.0)
    nv_s = np.where(front, nv, 1.0)
    rl = np.sqrt(a2 + (1.0 - a2) * nl_s * nl_s)
    rv = np.sqrt(a2 + (1.0 - a2) * nv_s * nv_s)
    G1l = 2.0 * nl_s / (nl_s + rl)
    G1v = 2.0 * nv_s / (nv_s + rv)
    # specular lobe without Fresnel, cosine already folded in: D G / (4 n.v)
    S = np.where(front, D * G1l * G1v / (4.0 * nv_s), 0.0)
    return dict(h=h, nl=nl, nv=nv, nh=nh, vh=vh, a2=a2, q=q, lit=lit, front=front,
                nl_s=nl_s, nv_s=nv_s, rl=rl, rv=rv, S=S)


def shade(n, rho_d, rho_s, alpha, light: DirectionalLight, view: ViewSpec = ViewSpec(),
          ambient: AmbientTerm = AmbientTerm()) -> np.ndarray:
    """Outgoing radiance for arrays of texels.

    Args:
        n: normals ``(..., 3)``, used as given (not renormalized).
        rho_d, rho_s: albedos ``(..., 3)``.
        alpha: roughness ``(...)``.

    Returns:
        RGB radiance ``(..., 3)``.
    """
    n, rho_d, rho_s = (np.asarray(x, dtype=np.float64) for x in (n, rho_d, rho_s))
    alpha = np.asarray(alpha, dtype=np.float64)
    l = np.asarray(light.dir, dtype=np.float64)
    v = np.asarray(view.dir, dtype=np.float64)
    I = np.asarray(light.intensity, dtype=np.float64)
    t = _terms(n, alpha, l, v)
    fresnel_w = (1.0 - t["vh"]) ** 5
    F = rho_s + (1.0 - rho_s) * fresnel_w
    cos = np.where(t["lit"], t["nl"], 0.0)[..., None]
    direct = I * (cos * rho_d / np.pi + t["S"][..., None] * F)
    return direct + ambient.k_a * (rho_d + rho_s)


def _partials(n, rho_d, rho_s, alpha, light, view, ambient):
    n, rho_d, rho_s = (np.asarray(x, dtype=np.float64) for x in (n, rho_d, rho_s))
    alpha = np.asarray(alpha, dtype=np.float64)
    l = np.asarray(light.dir, dtype=np.float64)
    v = np.asarray(view.dir, dtype=np.float64)
    I = np.asarray(light.intensity, dtype=np.float64)
    t = _terms(n, alpha, l, v)
    k_a = ambient.k_a
    fresnel_w = (1.0 - t["vh"]) ** 5
    F = rho_s + (1.0 - rho_s) * fresnel_w
    lit = t["lit"]
    nl_pos = np.where(lit, t["nl"], 0.0)
    # subgradient convention: no specular derivative near the horizon
    smooth = t["front"] & (t["nl"] > HORIZON_EPS) & (t["nv"] > HORIZON_EPS)
    S = np.where(smooth, t["S"], 0.0)

    a2, q, nh = t["a2"], t["q"], t["nh"]
    nl_s, nv_s, rl, rv = t["nl_s"], t["nv_s"], t["rl"], t["rv"]
    dlnD_dnh = -4.0 * nh * (a2 - 1.0) / q
    dlnD_da = 2.0 / alpha - 4.0 * alpha * nh * nh / q
    dlnG1l_dx = 1.0 / nl_s - (1.0 + (1.0 - a2) * nl_s / rl) / (nl_s + rl)
    dlnG1v_dx = 1.0 / nv_s - (1.0 + (1.0 - a2) * nv_s / rv) / (nv_s + rv)
    dlnG1l_da = -(alpha * (1.0 - nl_s * nl_s) / rl) / (nl_s + rl)
    dlnG1v_da = -(alpha * (1.0 - nv_s * nv_s) / rv) / (nv_s + rv)
    dS_da = S * (dlnD_da + dlnG1l_da + dlnG1v_da)
    dS_dn = S[..., None] * (dlnD_dnh[..., None] * t["h"] + dlnG1l_dx[..., None] * l
                            + (dlnG1v_dx - 1.0 / nv_s)[..., None] * v)
    return dict(I=I, l=l, k_a=k_a, F=F, fresnel_w=fresnel_w, lit=lit, nl_pos=nl_pos,
                S=S, dS_da=dS_da, dS_dn=dS_dn, rho_d=rho_d)


def shade_jacobian(n, rho_d, rho_s, alpha, light, view=ViewSpec(), ambient=AmbientTerm()) -> dict:
    """Partial derivatives of each output channel of :func:`shade`.

    Returns a dict with ``normal`` ``(..., 3, 3)`` indexed [out, n_i],
    ``diffuse`` and ``specular`` ``(..., 3)`` (the Jacobians are diagonal:
    channel c only depends on albedo channel c), and ``roughness``
    ``(..., 3)``.
    """
    p = _partials(n, rho_d, rho_s, alpha, light, view, ambient)
    I, l = p["I"], p["l"]
    lit = p["lit"][..., None]
    d_rho_d = I * p["nl_pos"][..., None] / np.pi + p["k_a"]
    d_rho_s = I * p["S"][..., None] * (1.0 - p["fresnel_w"]) + p["k_a"]
    d_alpha = I * p["F"] * p["dS_da"][..., None]
    diffuse_n = np.where(lit, I * p["rho_d"] / np.pi, 0.0)
    d_n = diffuse_n[..., :, None] * l + (I * p["F"])[..., :, None] * p["dS_dn"][..., None, :]
    return {"normal": d_n, "diffuse": d_rho_d, "roughness": d_alpha, "specular": d_rho_s}


def shade_vjp(grad_out, n, rho_d, rho_s, alpha, light, view=ViewSpec(), ambient=AmbientTerm()) -> dict:
    """Vector-Jacobian product of :func:`shade` with ``grad_out`` ``(..., 3)``."""
    p = _partials(n, rho_d, rho_s, alpha, light, view, ambient)
    I, l = p["I"], p["l"]
    g = np.asarray(grad_out, dtype=np.float64)
    gI = g * I
    d_rho_d = g * (I * p["nl_pos"][..., None] / np.pi + p["k_a"])
    d_rho_s = g * (I * p["S"][..., None] * (1.0 - p["fresnel_w"]) + p["k_a"])
    d_alpha = np.sum(gI * p["F"], axis=-1) * p["dS_da"]
    diff_coef = np.where(p["lit"], np.sum(gI * p["rho_d"], axis=-1) / np.pi, 0.0)
    d_n = diff_coef[..., None] * l + np.sum(gI * p["F"], axis=-1)[..., None] * p["dS_dn"]
    return {"normal": d_n, "diffuse": d_rho_d, "roughness": d_alpha, "specular": d_rho_s}


def shade_texel(t: TexelBrdf, light: DirectionalLight, view: ViewSpec = ViewSpec(),
                ambient: AmbientTerm = AmbientTerm()) -> np.ndarray:
    return shade(t.n, t.rho_d, t.rho_s, t.alpha, light, view, ambient)


def shade_texel_gradient(t: TexelBrdf, light: DirectionalLight, view: ViewSpec = ViewSpec(),
                         ambient: AmbientTerm = AmbientTerm()) -> dict:
    """Jacobian of one texel's RGB output; see :func:`shade_jacobian`."""
    return shade_jacobian(t.n, t.rho_d, t.rho_s, t.alpha, light, view, ambient)


def render_image(m: ParameterMaps, light: DirectionalLight, view: ViewSpec = ViewSpec(),
                 ambient: AmbientTerm = AmbientTerm()) -> ImageBuffer:
    n = renormalize(m.normal)
    return ImageBuffer(shade(n, m.diffuse, m.specular, m.roughness, light, view, ambient))


def radiance_bound(max_intensity: float, ambient: AmbientTerm = AmbientTerm()) -> float:
    """Upper bound on any shaded channel for albedos in [0, 1]."""
    return max_intensity * (1.0 / (np.pi * ALPHA_MIN ** 2) / 4.0 + 1.0 / np.pi) + 2.0 * ambient.k_a


def sample_light(rng, dist: LightDistribution = LightDistribution()) -> DirectionalLight:
    """Draw a directional light.

    Args:
        rng: an integer seed or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng)
    # uniform in solid angle over the allowed elevation band
    s_lo, s_hi = np.sin(np.radians(dist.elevation_min)), np.sin(np.radians(dist.elevation_max))
    z = rng.uniform(s_lo, s_hi)
    az = rng.uniform(0.0, 2.0 * np.pi)
    r = np.sqrt(max(0.0, 1.0 - z * z))
    d = np.array([r * np.cos(az), r * np.sin(az), z])
    d /= np.linalg.norm(d)
    if rng.uniform() < dist.gray_probability:
        intensity = np.full(3, rng.uniform(dist.intensity_min, dist.intensity_max))
    else:
        intensity = rng.uniform(dist.intensity_min, dist.intensity_max, size=3)
    return DirectionalLight(tuple(float(c) for c in d), tuple(float(c) for c in intensity))


def tonemap(img, gamma: float = 2.2) -> np.ndarray:
    data = img.data if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
    return np.clip(data, 0.0, 1.0) ** (1.0 / gamma)


VALIDATION_LIGHTS = (
    DirectionalLight.from_angles(90.0, 0.0, 2.5),
    DirectionalLight.from_angles(60.0, 0.0, 2.5),
    DirectionalLight.from_angles(60.0, 120.0, 2.5),
    DirectionalLight.from_angles(45.0, 240.0, 2.5),
    DirectionalLight.from_angles(35.0, 300.0, 2.5),
)
