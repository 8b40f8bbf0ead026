"""Randomized two-peak benchmark comparing split placements.

Per sample: fit one Gaussian (initialized at the target's centroid) for a
warmup phase while accumulating candidate split costs over the final window,
then split it once with every placement mode from that identical state and
keep optimizing each pair for the same number of steps. Final SSIM scores the
placement.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from . import adc
from .adc import DensifyAccumulator, Placement
from .core import Gaussian2D, GaussianSet, Raster
from .grad import positional_gradients
from .metrics import psnr, ssim
from .optim import AdamState, LearningRates, TrainConfig, adam_step
from .render import render
from .scenes import SceneSpec, gen_target, moment_init

ALL_MODES = (Placement.DENSE_ARGMIN, Placement.REGRESSION, Placement.SPARSE_ARGMIN, Placement.RANDOM)


@dataclass(frozen=True)
class BenchConfig:
    samples: int = 1000
    seed: int = 0
    modes: tuple[Placement, ...] = ALL_MODES
    scene: SceneSpec = field(default_factory=SceneSpec)
    warmup_iters: int = 300
    refine_iters: int = 300
    window: int = 100
    n_candidates: int = 5
    dense_n: int = 60
    random_scale_divisor: float = 1.6
    init_opacity: float = 0.5
    init_scale: float = 1.0
    lr: LearningRates = field(default_factory=LearningRates)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(Placement(m) for m in self.modes))
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 1 <= self.window <= self.warmup_iters:
            raise ValueError("window must lie in [1, warmup_iters]")
        if self.scene.kind not in ("two_peak", "k_peak"):
            raise ValueError("toybench needs a peak scene")


@dataclass(frozen=True)
class ModeResult:
    ssim: float
    psnr: float
    count: int
    wall_time: float
    x_opt: float


@dataclass(frozen=True)
class BenchRow:
    sample: int
    seed: int
    results: dict  # Placement -> ModeResult


def sample_seed(master: int, index: int) -> int:
    """Per-sample seed from the master seed and sample index only."""
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint64)[0] >> 1)


def _run(gs: GaussianSet, target: Raster, tcfg: TrainConfig, iters: int, state: AdamState,
         accs: Iterable[DensifyAccumulator] = (), acc_from: int = 0):
    accs = list(accs)
    for k in range(iters):
        out = render(gs, target.dims)
        gbuf = positional_gradients(out, target, gs)
        if k >= acc_from:
            for acc in accs:
                adc.accumulate_step(acc, gbuf, gs)
        gs, state = adam_step(gs, gbuf.params, state, tcfg)
    return gs, state


def run_sample(index: int, cfg: BenchConfig) -> BenchRow:
    seed = sample_seed(cfg.seed, index)
    target = gen_target(replace(cfg.scene, seed=seed))
    tcfg = TrainConfig(total_iters=cfg.warmup_iters + cfg.refine_iters, lr=cfg.lr, adc=None, seed=seed)
    g0 = moment_init(target, cfg.init_opacity)
    g0 = Gaussian2D(g0.mu, tuple(s * cfg.init_scale for s in g0.scales), g0.theta, g0.intensity, g0.opacity)
    gs = GaussianSet.from_gaussians([g0])
    state = AdamState.zeros(gs)

    sparse = DensifyAccumulator.zeros(gs, cfg.n_candidates)
    dense = DensifyAccumulator.zeros(gs, cfg.dense_n)
    want = [sparse] if Placement.DENSE_ARGMIN not in cfg.modes else [sparse, dense]
    gs, state = _run(gs, target, tcfg, cfg.warmup_iters, state, want,
                     acc_from=cfg.warmup_iters - cfg.window)
    parent = gs[0]

    results = {}
    for mode in cfg.modes:
        t0 = time.perf_counter()
        rng = np.random.default_rng([seed, list(ALL_MODES).index(mode)])
        costs = dense.split_costs[0] if mode is Placement.DENSE_ARGMIN else sparse.split_costs[0]
        if mode is Placement.RANDOM:
            x_opt = float("nan")
            kids = adc.random_split(parent, rng, cfg.random_scale_divisor)
        else:
            x_opt = adc.select_x_opt(costs, mode)
            kids = adc.split_gaussian(x_opt, parent)
        pair = GaussianSet.from_gaussians(kids, target.channels)
        child_state = AdamState.zeros(pair)
        child_state.t = state.t
        pair, _ = _run(pair, target, tcfg, cfg.refine_iters, child_state)
        image = render(pair, target.dims).image
        results[mode] = ModeResult(ssim(image, target), psnr(image, target), len(pair),
                                   time.perf_counter() - t0, x_opt)
    return BenchRow(index, seed, results)


# --------------------------------------------------------------------------
# tables


def row_fields(modes: Iterable[Placement]) -> list[str]:
    cols = ["sample", "seed"]
    for m in modes:
        cols += [f"{m.value}_ssim", f"{m.value}_psnr", f"{m.value}_count", f"{m.value}_xopt"]
    return cols


def row_values(row: BenchRow, modes: Iterable[Placement]) -> list[str]:
    vals = [str(row.sample), str(row.seed)]
    for m in modes:
        r = row.results[m]
        vals += [repr(r.ssim), repr(r.psnr), str(r.count), repr(r.x_opt)]
    return vals


def timing_fields(modes: Iterable[Placement]) -> list[str]:
    return ["sample"] + [f"{m.value}_seconds" for m in modes]


def timing_values(row: BenchRow, modes: Iterable[Placement]) -> list[str]:
    return [str(row.sample)] + [f"{row.results[m].wall_time:.6f}" for m in modes]


def read_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@dataclass(frozen=True)
class ModeSummary:
    mode: Placement
    n: int
    mean: float
    median: float
    q1: float
    q3: float
    psnr_mean: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def summarize(rows: list[dict], modes: Iterable[Placement]) -> list[ModeSummary]:
    """Per-mode SSIM statistics; independent of row order."""
    out = []
    for m in modes:
        vals = np.sort(np.array([float(r[f"{m.value}_ssim"]) for r in rows]))
        ps = np.sort(np.array([float(r[f"{m.value}_psnr"]) for r in rows]))
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        out.append(ModeSummary(m, len(vals), float(np.mean(vals)), float(med), float(q1), float(q3),
                               float(np.mean(ps))))
    return out


def _worker(args):
    index, cfg = args
    return run_sample(index, cfg)


def run_bench(cfg: BenchConfig, rows_path: Path, timing_path: Path, jobs: int = 1,
              progress=None) -> list[dict]:
    """Run every missing sample, appending rows as they finish; returns all rows."""
    fields = row_fields(cfg.modes)
    existing = read_rows(rows_path)
    if existing and list(existing[0].keys()) != fields:
        raise ValueError(f"{rows_path} has a different column layout; use a fresh output directory")
    done = {int(r["sample"]) for r in existing}
    todo = [i for i in range(cfg.samples) if i not in done]

    rows_new = not rows_path.exists() or rows_path.stat().st_size == 0
    timing_new = not timing_path.exists() or timing_path.stat().st_size == 0
    with open(rows_path, "a", newline="") as fr, open(timing_path, "a", newline="") as ft:
        wr, wt = csv.writer(fr), csv.writer(ft)
        if rows_new:
            wr.writerow(fields)
        if timing_new:
            wt.writerow(timing_fields(cfg.modes))

        def emit(row: BenchRow):
            wr.writerow(row_values(row, cfg.modes))
            wt.writerow(timing_values(row, cfg.modes))
            fr.flush()
            ft.flush()
            if progress:
                progress(row)

        if jobs <= 1 or len(todo) <= 1:
            for i in todo:
                emit(run_sample(i, cfg))
        else:
            import multiprocessing as mp

            ctx = mp.get_context("fork" if os.name == "posix" else "spawn")
            with ctx.Pool(jobs) as pool:
                for row in pool.imap_unordered(_worker, [(i, cfg) for i in todo]):
                    emit(row)
    return read_rows(rows_path)
