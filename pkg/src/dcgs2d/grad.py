"""Hand-derived gradients of the squared-error loss under the additive model.

With residual ``r = I - T`` and ``G = exp(-q/2)`` where ``q = u1^2/s1^2 + u2^2/s2^2``
in the primitive's rotated frame, every derivative is a per-pixel term

    2 * o * G * (r . c) * dG_factor

summed over the footprint. The per-pixel positional terms are kept, since the
directional statistics need every one of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_CUTOFF, GaussianSet, Raster, eval_density
from .render import RenderOutput

PARAM_GROUPS = ("mu", "scales", "theta", "intensity", "opacity")


@dataclass(frozen=True)
class ParamGrads:
    mu: np.ndarray
    scales: np.ndarray
    theta: np.ndarray
    intensity: np.ndarray
    opacity: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass(frozen=True)
class GradBuffer:
    """Per-pixel positional gradients plus dense parameter gradients.

    ``prim``, ``pix`` and ``g`` are flat and grouped by primitive index (the
    same layout as the render footprints); ``ids`` maps primitive index to
    stable id.
    """

    prim: np.ndarray
    pix: np.ndarray
    g: np.ndarray          # (entries, 2)
    ids: np.ndarray
    dims: tuple[int, int]
    params: ParamGrads

    @property
    def n_prims(self) -> int:
        return len(self.ids)

    def entry(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """``(pixels, gradients)`` of primitive index ``i``."""
        lo = np.searchsorted(self.prim, i, side="left")
        hi = np.searchsorted(self.prim, i, side="right")
        return self.pix[lo:hi], self.g[lo:hi]

    def entry_by_id(self, gid: int) -> tuple[np.ndarray, np.ndarray]:
        (idx,) = np.nonzero(self.ids == gid)
        if not len(idx):
            raise KeyError(gid)
        return self.entry(int(idx[0]))


def positional_gradients(out: RenderOutput, target: Raster, gs: GaussianSet) -> GradBuffer:
    """Per-pixel ``dL_j/dmu_i`` for every footprint entry, and all dense gradients."""
    fp = out.footprints
    n = len(gs)
    resid = out.image.flat() - target.flat()
    prim = fp.prim
    c = gs.intensity[prim]
    r = resid[fp.pix]
    rc = np.einsum("kc,kc->k", r, c)
    common = 2.0 * out.weight * rc  # 2 * o * G * (r . c)

    s1 = gs.scales[prim, 0]
    s2 = gs.scales[prim, 1]
    cos_t = np.cos(gs.theta)[prim]
    sin_t = np.sin(gs.theta)[prim]
    a1 = fp.u1 / (s1 * s1)
    a2 = fp.u2 / (s2 * s2)
    # Sigma^-1 d = R diag(1/s^2) R^T d
    gx = common * (cos_t * a1 - sin_t * a2)
    gy = common * (sin_t * a1 + cos_t * a2)

    def seg_sum(w):
        return np.bincount(prim, weights=w, minlength=n)

    d_mu = np.stack([seg_sum(gx), seg_sum(gy)], axis=-1)
    d_scales = np.stack([seg_sum(common * fp.u1 * a1 / s1),
                         seg_sum(common * fp.u2 * a2 / s2)], axis=-1)
    d_theta = seg_sum(-common * fp.u1 * fp.u2 * (1.0 / (s1 * s1) - 1.0 / (s2 * s2)))
    two_g = 2.0 * out.density
    d_int = np.stack([seg_sum(two_g * gs.opacity[prim] * r[:, ch]) for ch in range(gs.channels)],
                     axis=-1).reshape(n, gs.channels)
    d_op = seg_sum(two_g * rc)

    params = ParamGrads(d_mu, d_scales, d_theta, d_int, d_op)
    return GradBuffer(prim, fp.pix, np.stack([gx, gy], axis=-1), gs.ids, out.image.dims, params)


def _brute_loss(mu, scales, theta, intensity, opacity, target: Raster, members) -> float:
    width, height = target.dims
    img = np.zeros((height, width, target.channels))
    for i, j in members:
        x, y = j % width, j // width
        c, s = np.cos(theta[i]), np.sin(theta[i])
        dx, dy = x - mu[i, 0], y - mu[i, 1]
        u1 = c * dx + s * dy
        u2 = -s * dx + c * dy
        dens = np.exp(-0.5 * ((u1 / scales[i, 0]) ** 2 + (u2 / scales[i, 1]) ** 2))
        img[y, x, :] += opacity[i] * intensity[i] * dens
    return float(np.square(img - target.data).sum())


def fd_oracle(gs: GaussianSet, target: Raster, param_selector, h: float = 1e-4,
              cutoff: float = DEFAULT_CUTOFF) -> float:
    """Central-difference estimate of ``dL/dparam``, evaluated pixel by pixel.

    ``param_selector`` is ``(group, index, component)``, e.g. ``("mu", 2, 0)``;
    ``component`` is ignored for the scalar groups. Footprint membership is
    fixed at the unperturbed parameters so the estimate differentiates the
    same truncated model the analytic path does.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    group, i, k = param_selector
    width, height = target.dims
    members = []
    for gi, g in enumerate(gs.items):
        for j in range(width * height):
            # density >= exp(-cutoff^2 / 2)  <=>  Mahalanobis distance <= cutoff
            with np.errstate(divide="ignore"):  # density underflows to 0 far from the center
                inside = -2.0 * np.log(eval_density(g, (j % width, j // width))) <= cutoff * cutoff
            if inside:
                members.append((gi, j))
    params = {name: np.array(getattr(gs, name), float) for name in PARAM_GROUPS}

    def at(delta):
        p = {name: v.copy() for name, v in params.items()}
        arr = p[group]
        if arr.ndim == 1:
            arr[i] += delta
        else:
            arr[i, k] += delta
        return _brute_loss(p["mu"], p["scales"], p["theta"], p["intensity"], p["opacity"],
                           target, members)

    return (at(h) - at(-h)) / (2.0 * h)
