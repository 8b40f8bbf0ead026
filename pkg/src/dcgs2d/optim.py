"""Adam training loop: render, loss, gradients, density control."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import adc
from .adc import AdcConfig, DensifyAccumulator
from .core import GaussianSet, Raster, canonical_theta
from .grad import PARAM_GROUPS, ParamGrads, positional_gradients
from .metrics import psnr, ssim
from .render import loss, render

log = logging.getLogger(__name__)

MIN_SCALE = 1e-3
MIN_OPACITY = 1e-4


@dataclass(frozen=True)
class LearningRates:
    mu: float = 2e-2
    scales: float = 5e-3
    theta: float = 1e-3
    intensity: float = 1e-2
    opacity: float = 5e-2

    def __post_init__(self):
        for name in PARAM_GROUPS:
            if getattr(self, name) <= 0:
                raise ValueError(f"learning rate for {name} must be positive")


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 1000
    lr: LearningRates = field(default_factory=LearningRates)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    adc: AdcConfig | None = field(default_factory=AdcConfig)
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    @property
    def densify_until(self) -> int:
        if self.adc is None:
            return 0
        return int(self.adc.densify_until_frac * self.total_iters)


@dataclass
class AdamState:
    """Moments keyed by parameter group, rows aligned with ``ids``."""

    ids: np.ndarray
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, gs: GaussianSet) -> "AdamState":
        m = {k: np.zeros_like(getattr(gs, k)) for k in PARAM_GROUPS}
        v = {k: np.zeros_like(getattr(gs, k)) for k in PARAM_GROUPS}
        return cls(np.array(gs.ids), m, v, 0)

    def remap(self, gs: GaussianSet) -> "AdamState":
        """Carry moments over to the primitives of ``gs`` that existed before; new ones start at zero."""
        pos = {int(g): i for i, g in enumerate(self.ids)}
        rows = np.array([pos.get(int(g), -1) for g in gs.ids], dtype=np.int64)
        known = rows >= 0
        fresh = AdamState.zeros(gs)
        for k in PARAM_GROUPS:
            fresh.m[k][known] = self.m[k][rows[known]]
            fresh.v[k][known] = self.v[k][rows[known]]
        fresh.t = self.t
        return fresh


def _projected(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = dict(params)
    out["scales"] = np.maximum(params["scales"], MIN_SCALE)
    out["opacity"] = np.clip(params["opacity"], MIN_OPACITY, 1.0)
    out["intensity"] = np.clip(params["intensity"], 0.0, 1.0)
    out["theta"] = canonical_theta(params["theta"])
    return out


def project(gs: GaussianSet) -> GaussianSet:
    """Push parameters back into their valid domains."""
    return gs.with_params(**_projected({k: getattr(gs, k) for k in PARAM_GROUPS}))


def adam_step(gs: GaussianSet, grads: ParamGrads, state: AdamState,
              cfg: TrainConfig) -> tuple[GaussianSet, AdamState]:
    """One bias-corrected Adam update with per-group learning rates, then projection."""
    if not np.array_equal(state.ids, gs.ids):
        raise ValueError("optimizer state is not aligned with the set")
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    new = {}
    for k in PARAM_GROUPS:
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        step = getattr(cfg.lr, k) * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        new[k] = getattr(gs, k) - step
    return gs.with_params(**_projected(new)), state


@dataclass(frozen=True)
class Checkpoint:
    iteration: int
    loss: float
    psnr: float
    ssim: float
    count: int


@dataclass(frozen=True)
class RefineEvent:
    iteration: int
    count_before: int
    count_after: int
    n_split: int
    n_clone: int
    n_pruned: int
    dcc: np.ndarray      # window-averaged criterion values at this refinement
    absgs: np.ndarray
    mag3dgs: np.ndarray


@dataclass
class FitReport:
    checkpoints: list[Checkpoint]
    gaussians: GaussianSet
    wall_time: float
    refinements: list[RefineEvent] = field(default_factory=list)

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]


class FitDiverged(RuntimeError):
    def __init__(self, message: str, report: FitReport):
        super().__init__(message)
        self.report = report


def _checkpoint(it: int, total: float, image: Raster, target: Raster, count: int) -> Checkpoint:
    return Checkpoint(it, total, psnr(image, target), ssim(image, target), count)


def fit(target: Raster, init: GaussianSet, cfg: TrainConfig, accumulate_costs: bool = True) -> FitReport:
    """Run ``cfg.total_iters`` Adam steps with density control on the configured schedule.

    Refinement fires after step ``k`` when ``k`` is a multiple of the refine
    period and ``k <= densify_until``.
    """
    if not len(init):
        raise ValueError("initial set must be nonempty")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    dims = target.dims
    gs = init
    state = AdamState.zeros(gs)
    acfg = cfg.adc
    acc = DensifyAccumulator.zeros(gs, acfg.cost_samples) if acfg else None
    want_costs = accumulate_costs and acfg is not None and acfg.placement is not adc.Placement.RANDOM
    checkpoints: list[Checkpoint] = []
    events: list[RefineEvent] = []

    for k in range(1, cfg.total_iters + 1):
        out = render(gs, dims)
        total, _ = loss(out.image, target)
        if not math.isfinite(total):
            report = FitReport(checkpoints, gs, time.perf_counter() - t0, events)
            raise FitDiverged(f"non-finite loss at iteration {k}", report)
        if k == 1 or (k - 1) % cfg.log_every == 0:
            checkpoints.append(_checkpoint(k - 1, total, out.image, target, len(gs)))
        gbuf = positional_gradients(out, target, gs)
        densifying = acfg is not None and k <= cfg.densify_until
        if densifying:
            adc.accumulate_step(acc, gbuf, gs, with_costs=want_costs)
        gs, state = adam_step(gs, gbuf.params, state, cfg)
        if densifying and k % acfg.refine_period == 0:
            before = len(gs)
            values = {c: adc.criterion_values(acc, c) for c in adc.Criterion}
            res = adc.refine(gs, acc, acfg, rng)
            gs, acc = res.gaussians, res.accumulator
            state = state.remap(gs)
            events.append(RefineEvent(k, before, len(gs), res.n_split, res.n_clone, res.n_pruned,
                                      values[adc.Criterion.DCC], values[adc.Criterion.ABSGS],
                                      values[adc.Criterion.MAG3DGS]))
            log.debug("refine @%d: %d -> %d (split %d, clone %d, pruned %d)", k, before, len(gs),
                      res.n_split, res.n_clone, res.n_pruned)
            if not len(gs):
                report = FitReport(checkpoints, gs, time.perf_counter() - t0, events)
                raise FitDiverged(f"every primitive pruned at iteration {k}", report)

    out = render(gs, dims)
    total, _ = loss(out.image, target)
    if not math.isfinite(total):
        raise FitDiverged("non-finite final loss", FitReport(checkpoints, gs, time.perf_counter() - t0, events))
    checkpoints.append(_checkpoint(cfg.total_iters, total, out.image, target, len(gs)))
    return FitReport(checkpoints, gs, time.perf_counter() - t0, events)
