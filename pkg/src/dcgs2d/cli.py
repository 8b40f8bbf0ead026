"""Command-line entry point: ``dcgs2d {fit,toybench,dcmap,render}``.

Exit status is 0 on success, 1 for usage or configuration problems and 2
when a run fails (divergence, unreadable input, write errors).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import toybench
from .adc import Placement
from .config import ConfigError, RunConfig, default_config, load_config
from .core import GaussianSet, Raster
from .io import FormatError, read_gaussians, read_ppm, write_gaussians, write_ppm
from .metrics import DC_MASKED, dc_map, psnr, ssim
from .optim import FitDiverged, FitReport, fit
from .render import render
from .scenes import gen_target, grid_init, moment_init

log = logging.getLogger("dcgs2d")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
MODE_CHOICES = ("random", "argmin", "dense", "regression", "all")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcgs2d", description="2D Gaussian splatting with directional-consistency density control.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "fit": "fit a Gaussian set to a target image",
        "toybench": "randomized two-peak benchmark of split placements",
        "dcmap": "per-pixel directional-consistency map of an image",
        "render": "render a Gaussian table (or the configured scene) to an image",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="run configuration file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (created if missing)")
        p.add_argument("--seed", type=_u64, help="override [run] seed")
        p.add_argument("--jobs", type=_positive, help="worker processes (toybench)")
        p.add_argument("--samples", type=_positive, help="number of benchmark samples (toybench)")
        p.add_argument("--mode", choices=MODE_CHOICES,
                       help="placement mode; toybench accepts 'all'")
    return parser


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


# --------------------------------------------------------------------------
# shared helpers


def _apply_flags(cfg: RunConfig, args) -> None:
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    if args.jobs is not None:
        cfg.set("run", "jobs", args.jobs)
    if args.samples is not None:
        if args.command != "toybench":
            raise UsageError("--samples only applies to toybench")
        cfg.set("bench", "samples", args.samples)
    if args.mode is not None:
        if args.command == "toybench":
            modes = toybench.ALL_MODES if args.mode == "all" else (Placement(args.mode),)
            cfg.set("bench", "modes", modes, ", ".join(m.value for m in modes))
        elif args.command == "fit":
            if args.mode == "all":
                raise UsageError("fit takes a single --mode; 'all' only applies to toybench")
            cfg.set("adc", "placement", Placement(args.mode))
        else:
            raise UsageError(f"--mode does not apply to {args.command}")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _target(cfg: RunConfig) -> Raster:
    path = cfg.get("scene", "target")
    if path:
        return read_ppm(path)
    return gen_target(cfg.scene())


# --------------------------------------------------------------------------
# commands


def cmd_fit(cfg: RunConfig, out: Path) -> int:
    tcfg = cfg.train()
    target = _target(cfg)
    init_kind = cfg.get("train", "init", "moment")
    opacity = cfg.get("train", "init_opacity", 0.5)
    if init_kind == "file":
        path = cfg.get("train", "init_path")
        if not path:
            raise cfg.fail("train", "init", "init = file needs train.init_path")
        init = read_gaussians(path)
        if init.channels != target.channels:
            raise FormatError(f"{path}: {init.channels} intensity channels, target has {target.channels}")
    elif init_kind == "grid":
        init = grid_init(target.dims, cfg.get("train", "grid", 4), opacity, channels=target.channels)
    else:
        init = GaussianSet.from_gaussians([moment_init(target, opacity)], target.channels)

    rid = cfg.run_id
    try:
        report = fit(target, init, tcfg)
    except FitDiverged as exc:
        _write_fit_tables(out, rid, exc.report)
        raise
    image = render(report.gaussians, target.dims).image
    write_ppm(out / f"{rid}_target.ppm", target)
    write_ppm(out / f"{rid}_render.ppm", image)
    # residual centred on mid-gray so both signs are visible
    write_ppm(out / f"{rid}_residual.ppm", np.clip(0.5 + (image.data - target.data), 0, 1))
    write_gaussians(out / f"{rid}_gaussians.csv", report.gaussians)
    _write_fit_tables(out, rid, report)
    f = report.final
    print(f"fit {rid}: {f.count} primitives, PSNR {f.psnr:.3f} dB, SSIM {f.ssim:.5f}, "
          f"{report.wall_time:.2f} s")
    return EXIT_OK


def _write_fit_tables(out: Path, rid: str, report: FitReport) -> None:
    _write_csv(out / f"{rid}_report.csv", ["iteration", "loss", "psnr", "ssim", "count"],
               [[c.iteration, repr(c.loss), repr(c.psnr), repr(c.ssim), c.count] for c in report.checkpoints])
    _write_csv(out / f"{rid}_refinements.csv",
               ["iteration", "count_before", "count_after", "n_split", "n_clone", "n_pruned",
                "mean_dcc", "mean_absgs", "mean_mag3dgs"],
               [[e.iteration, e.count_before, e.count_after, e.n_split, e.n_clone, e.n_pruned,
                 repr(float(np.mean(e.dcc))) if len(e.dcc) else "nan",
                 repr(float(np.mean(e.absgs))) if len(e.absgs) else "nan",
                 repr(float(np.mean(e.mag3dgs))) if len(e.mag3dgs) else "nan"]
                for e in report.refinements])


def cmd_toybench(cfg: RunConfig, out: Path) -> int:
    bcfg = cfg.bench()
    jobs = cfg.get("run", "jobs", 1)
    rid = cfg.run_id
    rows_path, timing_path = out / f"{rid}_rows.csv", out / f"{rid}_timing.csv"
    t0 = time.perf_counter()
    done = [0]

    def progress(row):
        done[0] += 1
        if done[0] % 50 == 0:
            log.info("toybench: %d new samples (%.1f s)", done[0], time.perf_counter() - t0)

    rows = toybench.run_bench(bcfg, rows_path, timing_path, jobs=jobs, progress=progress)
    rows = [r for r in rows if int(r["sample"]) < bcfg.samples]
    summary = toybench.summarize(rows, bcfg.modes)
    _write_csv(out / f"{rid}_summary.csv", ["mode", "n", "mean_ssim", "median_ssim", "q1", "q3", "iqr", "mean_psnr"],
               [[s.mode.value, s.n, repr(s.mean), repr(s.median), repr(s.q1), repr(s.q3), repr(s.iqr),
                 repr(s.psnr_mean)] for s in summary])
    print(f"toybench {rid}: {len(rows)} samples, {time.perf_counter() - t0:.1f} s")
    for s in summary:
        print(f"  {s.mode.value:<10} mean {s.mean:.5f}  median {s.median:.5f}  IQR {s.iqr:.5f}")
    return EXIT_OK


def cmd_dcmap(cfg: RunConfig, out: Path) -> int:
    path = cfg.get("dcmap", "input")
    image = read_ppm(path) if path else _target(cfg)
    kw = {k: cfg.get("dcmap", k) for k in ("window_radius", "mag_floor", "min_count") if cfg.has("dcmap", k)}
    dm = dc_map(image, **kw)
    rid = cfg.run_id
    write_ppm(out / f"{rid}_dcmap.ppm", np.where(dm.mask, 0.0, dm.kappa))
    write_ppm(out / f"{rid}_mask.ppm", dm.mask.astype(float))
    h, w = dm.kappa.shape
    ys, xs = np.mgrid[0:h, 0:w]
    _write_csv(out / f"{rid}_dcmap.csv", ["x", "y", "kappa", "masked"],
               [[int(x), int(y), repr(float(k)), int(m)]
                for x, y, k, m in zip(xs.ravel(), ys.ravel(), dm.kappa.ravel(), dm.mask.ravel())])
    valid = dm.kappa[~dm.mask]
    mean = float(valid.mean()) if valid.size else float("nan")
    print(f"dcmap {rid}: {w}x{h}, {int(dm.mask.sum())} masked, mean kappa {mean:.4f} "
          f"(masked cells hold {DC_MASKED} in the CSV)")
    return EXIT_OK


def cmd_render(cfg: RunConfig, out: Path) -> int:
    rid = cfg.run_id
    path = cfg.get("render", "gaussians")
    if path is None:
        image = _target(cfg)
    else:
        gs = read_gaussians(path)
        for key in ("width", "height"):
            if not cfg.has("render", key):
                raise cfg.fail("render", key, "rendering a Gaussian table needs render.width and render.height")
        image = render(gs, (cfg.get("render", "width"), cfg.get("render", "height"))).image
    write_ppm(out / f"{rid}_render.ppm", image)
    msg = f"render {rid}: {image.width}x{image.height}"
    if cfg.get("scene", "target") and path is not None:
        target = read_ppm(cfg.get("scene", "target"))
        if target.data.shape == image.data.shape:
            msg += f", PSNR {psnr(image, target):.3f} dB, SSIM {ssim(image, target):.5f}"
    print(msg)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "toybench": cmd_toybench, "dcmap": cmd_dcmap, "render": cmd_render}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        _apply_flags(cfg, args)
        # validate every typed view this command uses before touching the disk
        if args.command == "fit":
            cfg.train()
        elif args.command == "toybench":
            cfg.bench()
        own_input = {"dcmap": ("dcmap", "input"), "render": ("render", "gaussians")}.get(args.command)
        if not cfg.get("scene", "target") and not (own_input and cfg.get(*own_input)):
            cfg.scene()
    except (ConfigError, UsageError) as exc:
        print(f"dcgs2d: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out: Path = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.run_id}_config.ini").write_text(cfg.dumps())
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"dcgs2d: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FitDiverged as exc:
        print(f"dcgs2d: fit diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, FormatError, ValueError) as exc:
        print(f"dcgs2d: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
