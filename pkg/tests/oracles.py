"""Independent reference computations used by the tests.

Values computed here by hand or by brute force are frozen as literals in the
tests that use them.
"""

import numpy as np

from svbrdf_transfer.render import DirectionalLight, TexelBrdf, shade

# hand-evaluated anchors
LAMBERT_HEAD_ON = 0.6  # I rho_d / pi * cos = pi * 0.6 / pi * 1
GGX_HEAD_ON = 1.0  # D = 1 / (pi a^2) = 4 / pi, F = G = 1, / 4, times cos 1 and I = pi
AMBIENT_ONLY = (0.044, 0.024, 0.004)  # 0.1 * (rho_d + rho_s)
TONEMAP_HALF = 0.7297400528407231  # 0.5 ** (1 / 2.2)
LOG_RENDER_EXAMPLE = 0.17904823144898552  # |log(0.61) - log(0.51)|
BLEND_CORNER_512 = 0.018604  # exp(-(2 * 255.5**2) / (2 * 128**2)) with centre weight 1


def texel_vector(t: TexelBrdf) -> np.ndarray:
    return np.concatenate([t.n, t.rho_d, t.rho_s, [t.alpha]]).astype(np.float64)


def fd_jacobian(t: TexelBrdf, light: DirectionalLight, ambient, step=1e-4) -> np.ndarray:
    """Central differences of the RGB output w.r.t. (n, rho_d, rho_s, alpha), shape (3, 10).

    Normals are perturbed as raw vectors, matching the analytic derivative
    which treats ``n`` as an unconstrained input.
    """
    x = texel_vector(t)
    jac = np.empty((3, 10))
    for i in range(10):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        fp = shade(xp[:3], xp[3:6], xp[6:9], xp[9], light, ambient=ambient)
        fm = shade(xm[:3], xm[3:6], xm[6:9], xm[9], light, ambient=ambient)
        jac[:, i] = (fp - fm) / (2 * step)
    return jac


def analytic_matrix(grad: dict) -> np.ndarray:
    """Pack a shade_texel_gradient result into the (3, 10) layout of :func:`fd_jacobian`."""
    jac = np.zeros((3, 10))
    jac[:, 0:3] = grad["normal"]
    jac[:, 3:6] = np.diag(grad["diffuse"])
    jac[:, 6:9] = np.diag(grad["specular"])
    jac[:, 9] = grad["roughness"]
    return jac


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest entrywise relative error, floored at 1e-3 of the largest entry."""
    floor = max(1e-3 * max(np.abs(numeric).max(), np.abs(analytic).max()), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


def random_texels(rng, count, min_cos=0.1):
    """Random texels and lights away from the horizon (n.l and n.v above ``min_cos``)."""
    out = []
    while len(out) < count:
        n = rng.normal(size=3)
        n[2] = abs(n[2])
        n /= np.linalg.norm(n)
        el = np.radians(rng.uniform(20, 90))
        az = rng.uniform(0, 2 * np.pi)
        l = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        if n @ l < min_cos or n[2] < min_cos:
            continue
        t = TexelBrdf(tuple(n), tuple(rng.uniform(0, 1, 3)), tuple(rng.uniform(0, 1, 3)), float(rng.uniform(0.1, 1.0)))
        light = DirectionalLight(tuple(l / np.linalg.norm(l)), tuple(rng.uniform(1, 4, 3)))
        out.append((t, light))
    return out


def row_transitions(mask: np.ndarray) -> float:
    """Mean number of 0/1 changes along each row."""
    return float(np.mean(np.sum(mask[:, 1:] != mask[:, :-1], axis=1)))
