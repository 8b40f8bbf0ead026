"""Adaptive density control driven by directional consistency.

Per training step every visible primitive contributes to running sums:

* the magnitude of its summed positional gradient (classic criterion),
* the norm of its homodirectional gradient ``g_hat = sum_j |g_ij|``,
* ``(1 - kappa) * ||g_hat||`` where ``kappa`` is the length of the circular
  mean of its per-pixel gradient directions,
* a split cost for each candidate cut along its principal axis.

At a refinement step the averaged criterion decides split / clone, and the
accumulated candidate costs decide where a split cuts the primitive.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Gaussian2D, GaussianSet, pixel_centers
from .grad import GradBuffer


class Criterion(str, enum.Enum):
    MAG3DGS = "mag3dgs"
    ABSGS = "absgs"
    DCC = "dcc"


class Placement(str, enum.Enum):
    RANDOM = "random"
    SPARSE_ARGMIN = "argmin"
    DENSE_ARGMIN = "dense"
    REGRESSION = "regression"


@dataclass(frozen=True)
class AdcConfig:
    tau_p: float = 1e-3
    tau_s: float = 1.5
    prune_opacity: float = 5e-3
    refine_period: int = 100
    densify_until_frac: float = 0.5
    n_candidates: int = 5
    criterion: Criterion = Criterion.DCC
    placement: Placement = Placement.REGRESSION
    dense_n: int = 60
    random_scale_divisor: float = 1.6

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        object.__setattr__(self, "placement", Placement(self.placement))
        if self.n_candidates < 3 or self.n_candidates % 2 == 0:
            raise ValueError(f"n_candidates must be odd and >= 3, got {self.n_candidates}")
        if self.dense_n < 3:
            raise ValueError(f"dense_n must be >= 3, got {self.dense_n}")
        if self.tau_p <= 0 or self.tau_s <= 0:
            raise ValueError("thresholds must be positive")
        if self.prune_opacity < 0:
            raise ValueError("prune_opacity must be non-negative")
        if self.refine_period < 1:
            raise ValueError("refine_period must be >= 1")
        if not 0.0 < self.densify_until_frac <= 1.0:
            raise ValueError("densify_until_frac must lie in (0, 1]")
        if self.random_scale_divisor <= 0:
            raise ValueError("random_scale_divisor must be positive")

    @property
    def cost_samples(self) -> int:
        """Number of split candidates the configured placement consumes."""
        return self.dense_n if self.placement is Placement.DENSE_ARGMIN else self.n_candidates


# --------------------------------------------------------------------------
# directional statistics


def directional_consistency(grads) -> tuple[np.ndarray, float]:
    """Circular mean of gradient directions and its length ``kappa``.

    Zero vectors carry no direction and are skipped. An empty set has
    ``kappa = 1``: nothing to disagree about.
    """
    g = np.asarray(grads, dtype=float).reshape(-1, 2)
    norms = np.hypot(g[:, 0], g[:, 1])
    g, norms = g[norms > 0], norms[norms > 0]
    if not len(g):
        return np.zeros(2), 1.0
    c = (g / norms[:, None]).sum(axis=0) / len(g)
    return c, min(1.0, float(np.hypot(c[0], c[1])))


def _side_cost(sum_u, count, abs_sum):
    """``(1 - kappa) * ||g_hat||`` from per-group sums (vectorized)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa = np.where(count > 0, np.hypot(sum_u[..., 0], sum_u[..., 1]) / count, 1.0)
    kappa = np.clip(kappa, 0.0, 1.0)
    return (1.0 - kappa) * np.hypot(abs_sum[..., 0], abs_sum[..., 1])


def _dot(a, b):
    """Row-wise 2-vector dot product, spelled out so every code path rounds alike."""
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]


def cost_at(x_k, x_end, pixel_xy, grads) -> float:
    """Split cost of cutting at ``x_k`` orthogonally to the axis toward ``x_end``.

    Pixels with ``(x_end - x_k) . (x - x_k) < 0`` fall on the left side, the
    rest (boundary included) on the right.
    """
    x_k = np.asarray(x_k, float)
    v_axis = np.asarray(x_end, float) - x_k
    pts = np.asarray(pixel_xy, float).reshape(-1, 2)
    g = np.asarray(grads, float).reshape(-1, 2)
    left = _dot(pts - x_k, v_axis) < 0
    total = 0.0
    for side in (left, ~left):
        gs = g[side]
        if not len(gs):
            continue
        _, kappa = directional_consistency(gs)
        g_hat = np.abs(gs).sum(axis=0)
        total += (1.0 - kappa) * float(np.hypot(g_hat[0], g_hat[1]))
    return total


def candidate_offsets(n: int) -> np.ndarray:
    """Candidate offsets along the axis in units of the sampling interval ``d/(n+1)``.

    For odd ``n`` these are ``-K..K``; an even ``n`` gets the half-integer
    offsets that keep the same spacing and symmetry.
    """
    if n < 1:
        raise ValueError("need at least one candidate")
    return np.arange(1, n + 1) - (n + 1) / 2.0


def candidate_positions(n: int) -> np.ndarray:
    """Normalized positions ``0.5 + i/(n+1)`` of the candidates, ascending."""
    return 0.5 + candidate_offsets(n) / (n + 1)


def _principal(gs: GaussianSet):
    axis = np.argmax(gs.scales, axis=1)  # ties -> lowest index
    c, s = np.cos(gs.theta), np.sin(gs.theta)
    p = np.where((axis == 0)[:, None], np.stack([c, s], -1), np.stack([-s, c], -1))
    s_a = gs.scales[np.arange(len(gs)), axis]
    return axis, p, s_a


def split_costs_all(gs: GaussianSet, gbuf: GradBuffer, n: int) -> np.ndarray:
    """Candidate split costs for every primitive at once, shape ``(len(gs), n)``."""
    n_prims = len(gs)
    out = np.zeros((n_prims, n))
    if not len(gbuf.prim):
        return out
    _, p, s_a = _principal(gs)
    d = 6.0 * s_a
    delta = d / (n + 1)
    prim = gbuf.prim
    g = gbuf.g
    norms = np.hypot(g[:, 0], g[:, 1])
    nz = norms > 0
    unit = np.zeros_like(g)
    unit[nz] = g[nz] / norms[nz, None]
    absg = np.abs(g)
    xy = pixel_centers(gbuf.dims, gbuf.pix)
    pe = p[prim]
    mu_e = gs.mu[prim]
    x_end = mu_e + (0.5 * d[prim])[:, None] * pe
    # all candidates at once: axis (candidate, entry, xy)
    offs = candidate_offsets(n)
    x_k = mu_e[None] + (offs[:, None] * delta[prim][None, :])[..., None] * pe[None]
    side = (_dot(x_end[None] - x_k, xy[None] - x_k) >= 0).astype(np.int64)  # 0 left, 1 right
    m = 2 * n_prims
    key = (np.arange(n)[:, None] * m + prim[None, :] * 2 + side).ravel()
    size = n * m

    def sums(w):
        return np.bincount(key, np.broadcast_to(w, side.shape).ravel(), size)

    sum_u = np.stack([sums(unit[:, 0]), sums(unit[:, 1])], -1)
    cnt = sums(nz.astype(float))
    sum_abs = np.stack([sums(absg[:, 0]), sums(absg[:, 1])], -1)
    cost = _side_cost(sum_u, cnt, sum_abs).reshape(n, n_prims, 2)
    out[:] = (cost[..., 0] + cost[..., 1]).T
    return out


def eval_split_costs(g: Gaussian2D, n: int, pixels, grads, dims: tuple[int, int]) -> np.ndarray:
    """Costs of ``n`` candidate cuts along ``g``'s principal axis, ascending offset order.

    ``pixels`` are flat indices on a raster of ``dims`` and ``grads`` the
    matching per-pixel positional gradients of ``g``.
    """
    pixels = np.asarray(pixels)
    if not len(pixels):
        return np.zeros(n)
    p = g.axis_direction()
    d = 6.0 * g.scales[g.principal_axis]
    delta = d / (n + 1)
    mu = np.asarray(g.mu)
    x_end = mu + 0.5 * d * p
    xy = pixel_centers(dims, pixels)
    return np.array([cost_at(mu + i * delta * p, x_end, xy, grads) for i in candidate_offsets(n)])


# --------------------------------------------------------------------------
# accumulation


@dataclass
class DensifyAccumulator:
    """Running per-primitive sums over one refinement window, aligned with a set's order."""

    ids: np.ndarray
    nu: np.ndarray
    dcc_sum: np.ndarray
    mag3dgs_sum: np.ndarray
    abs_sum: np.ndarray
    split_costs: np.ndarray   # (n, N)

    @classmethod
    def zeros(cls, gs: GaussianSet, n_candidates: int) -> "DensifyAccumulator":
        n = len(gs)
        return cls(np.array(gs.ids), np.zeros(n, np.int64), np.zeros(n), np.zeros(n), np.zeros(n),
                   np.zeros((n, n_candidates)))

    @property
    def n_candidates(self) -> int:
        return self.split_costs.shape[1]


@dataclass(frozen=True)
class StepStats:
    """One step's per-primitive increments (exposed for inspection and tests)."""

    visible: np.ndarray
    kappa: np.ndarray
    g_hat: np.ndarray
    mag: np.ndarray

    @property
    def dcc(self) -> np.ndarray:
        return (1.0 - self.kappa) * np.hypot(self.g_hat[:, 0], self.g_hat[:, 1])


def step_stats(gbuf: GradBuffer) -> StepStats:
    n = gbuf.n_prims
    prim, g = gbuf.prim, gbuf.g
    norms = np.hypot(g[:, 0], g[:, 1])
    nz = norms > 0
    unit = np.zeros_like(g)
    unit[nz] = g[nz] / norms[nz, None]
    sum_u = np.stack([np.bincount(prim, unit[:, 0], n), np.bincount(prim, unit[:, 1], n)], -1)
    cnt = np.bincount(prim, nz.astype(float), n)
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa = np.where(cnt > 0, np.hypot(sum_u[:, 0], sum_u[:, 1]) / cnt, 1.0)
    kappa = np.clip(kappa, 0.0, 1.0)
    absg = np.abs(g)
    g_hat = np.stack([np.bincount(prim, absg[:, 0], n), np.bincount(prim, absg[:, 1], n)], -1)
    mu = gbuf.params.mu
    return StepStats(np.bincount(prim, minlength=n) > 0, kappa, g_hat, np.hypot(mu[:, 0], mu[:, 1]))


def accumulate_step(acc: DensifyAccumulator, gbuf: GradBuffer, gs: GaussianSet,
                    with_costs: bool = True) -> DensifyAccumulator:
    """Fold one step's gradients into ``acc`` (in place) and return it."""
    if not np.array_equal(acc.ids, gbuf.ids) or not np.array_equal(acc.ids, gs.ids):
        raise ValueError("accumulator, gradient buffer and set are not aligned")
    st = step_stats(gbuf)
    vis = st.visible
    norm_hat = np.hypot(st.g_hat[:, 0], st.g_hat[:, 1])
    acc.nu[vis] += 1
    acc.dcc_sum[vis] += ((1.0 - st.kappa) * norm_hat)[vis]
    acc.abs_sum[vis] += norm_hat[vis]
    acc.mag3dgs_sum[vis] += st.mag[vis]
    if with_costs:
        costs = split_costs_all(gs, gbuf, acc.n_candidates)
        acc.split_costs[vis] += costs[vis]
    return acc


def criterion_values(acc: DensifyAccumulator, criterion: Criterion | str) -> np.ndarray:
    """Window average of the selected criterion; zero for never-visible primitives."""
    sums = {
        Criterion.DCC: acc.dcc_sum,
        Criterion.ABSGS: acc.abs_sum,
        Criterion.MAG3DGS: acc.mag3dgs_sum,
    }[Criterion(criterion)]
    out = np.zeros(len(acc.nu))
    vis = acc.nu > 0
    out[vis] = sums[vis] / acc.nu[vis]
    return out


def criterion_value(acc: DensifyAccumulator, index: int, criterion: Criterion | str) -> float:
    return float(criterion_values(acc, criterion)[index])


# --------------------------------------------------------------------------
# split placement


def _discrete_argmin(costs: np.ndarray) -> float:
    xs = candidate_positions(len(costs))
    best = costs.min()
    tied = np.nonzero(costs == best)[0]
    # ties: closest to the center, then lowest index
    # offsets are exact (half-)integers, so equal distances compare equal
    pick = tied[np.argmin(np.abs(candidate_offsets(len(costs))[tied]))]
    return float(xs[pick])


def fit_quadratic(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float]:
    """Least-squares ``y = a t^2 + b t + c`` with ``t = x - 0.5``; returns ``(a, b, c)``."""
    t = xs - 0.5
    design = np.stack([t * t, t, np.ones_like(t)], axis=-1)
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    return float(coef[0]), float(coef[1]), float(coef[2])


def select_x_opt(costs, placement: Placement | str) -> float:
    """Normalized split position in ``(0, 1)`` chosen from accumulated candidate costs."""
    placement = Placement(placement)
    costs = np.asarray(costs, dtype=float)
    n = len(costs)
    if n < 1:
        raise ValueError("empty cost vector")
    if np.all(costs == costs[0]):
        return 0.5
    if placement in (Placement.SPARSE_ARGMIN, Placement.DENSE_ARGMIN, Placement.RANDOM):
        return _discrete_argmin(costs)
    xs = candidate_positions(n)
    a, b, _ = fit_quadratic(xs, costs)
    scale = max(float(np.abs(costs).max()), np.finfo(float).tiny)
    if a > 1e-12 * scale:
        vertex = 0.5 - b / (2.0 * a)
        if xs[0] <= vertex <= xs[-1]:
            return float(vertex)
    return _discrete_argmin(costs)


def split_gaussian(x_opt: float, g: Gaussian2D) -> tuple[Gaussian2D, Gaussian2D]:
    """Cut ``g`` across its principal axis at normalized position ``x_opt``.

    The parent's 3-sigma segment is cut at fraction ``x_opt`` from its negative
    end; each child sits at the centroid of its piece with principal scale and
    opacity shares ``x_opt`` and ``1 - x_opt``.
    """
    if not 0.0 < x_opt < 1.0:
        raise ValueError(f"x_opt must lie in (0, 1), got {x_opt}")
    a = g.principal_axis
    p = g.axis_direction(a)
    s_a = g.scales[a]
    d = 6.0 * s_a
    d_l = d * (1.0 - x_opt)
    d_r = d * x_opt
    mu = np.asarray(g.mu)
    mu_l = mu - (d_l / 2.0) * p
    mu_r = mu + (d_r / 2.0) * p
    s_l = list(g.scales)
    s_r = list(g.scales)
    s_l[a] = s_a * x_opt
    s_r[a] = s_a * (1.0 - x_opt)
    o_l = g.opacity * x_opt
    o_r = g.opacity * (1.0 - x_opt)
    return (Gaussian2D(mu_l, s_l, g.theta, g.intensity, o_l),
            Gaussian2D(mu_r, s_r, g.theta, g.intensity, o_r))


def random_split(g: Gaussian2D, rng: np.random.Generator,
                 scale_divisor: float = 1.6) -> tuple[Gaussian2D, Gaussian2D]:
    """Two children drawn from the parent's own density, shrunk by ``scale_divisor``."""
    z = rng.standard_normal((2, 2))
    r = np.array([[math.cos(g.theta), -math.sin(g.theta)], [math.sin(g.theta), math.cos(g.theta)]])
    centers = np.asarray(g.mu) + (z * np.asarray(g.scales)) @ r.T
    scales = tuple(s / scale_divisor for s in g.scales)
    return tuple(Gaussian2D(c, scales, g.theta, g.intensity, g.opacity) for c in centers)


def split_children(g: Gaussian2D, costs, placement: Placement | str, rng: np.random.Generator,
                   scale_divisor: float = 1.6) -> tuple[Gaussian2D, Gaussian2D]:
    placement = Placement(placement)
    if placement is Placement.RANDOM:
        return random_split(g, rng, scale_divisor)
    return split_gaussian(select_x_opt(costs, placement), g)


# --------------------------------------------------------------------------
# refinement


@dataclass
class RefineResult:
    gaussians: GaussianSet
    accumulator: DensifyAccumulator
    n_split: int = 0
    n_clone: int = 0
    n_pruned: int = 0
    criterion: np.ndarray = field(default_factory=lambda: np.zeros(0))


def refine(gs: GaussianSet, acc: DensifyAccumulator, cfg: AdcConfig,
           rng: np.random.Generator) -> RefineResult:
    """Split / clone on the averaged criterion, prune transparent primitives, reset sums.

    Survivors keep their order and ids; clones and split children are appended
    with fresh ids.
    """
    if not np.array_equal(acc.ids, gs.ids):
        raise ValueError("accumulator is not aligned with the set")
    values = criterion_values(acc, cfg.criterion)
    selected = values > cfg.tau_p
    big = gs.scales.max(axis=1) > cfg.tau_s
    split_mask = selected & big
    clone_mask = selected & ~big

    added: list[Gaussian2D] = [gs[i] for i in np.nonzero(clone_mask)[0]]
    for i in np.nonzero(split_mask)[0]:
        added.extend(split_children(gs[i], acc.split_costs[i], cfg.placement, rng,
                                    cfg.random_scale_divisor))
    out = gs.select(~split_mask).extend(added)
    keep = out.opacity >= cfg.prune_opacity
    n_pruned = int((~keep).sum())
    if n_pruned:
        out = out.select(keep)
    return RefineResult(out, DensifyAccumulator.zeros(out, acc.n_candidates),
                        int(split_mask.sum()), int(clone_mask.sum()), n_pruned, values)
