"""Synthetic targets for fits and benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Gaussian2D, GaussianSet, Raster
from .render import render

SCENE_KINDS = ("two_peak", "k_peak", "composite", "ramp_noise")


@dataclass(frozen=True)
class SceneSpec:
    """What to draw and how to randomize it. Identical specs give identical rasters."""

    kind: str = "two_peak"
    width: int = 32
    height: int = 32
    seed: int = 0
    n_peaks: int = 2
    sigma_range: tuple[float, float] = (1.5, 3.5)
    aspect_range: tuple[float, float] = (1.0, 2.0)
    amplitude_range: tuple[float, float] = (0.6, 1.0)
    separation_range: tuple[float, float] = (2.5, 4.0)  # in units of the larger peak's max sigma
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("raster dims must be positive")
        if self.n_peaks < 1:
            raise ValueError("n_peaks must be >= 1")
        for name in ("sigma_range", "aspect_range", "amplitude_range", "separation_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi")
        if self.separation_range[0] < 2.0:
            raise ValueError("peak separation must be at least 2 max-sigma")


def _random_peak(rng: np.random.Generator, spec: SceneSpec, center) -> Gaussian2D:
    sigma = rng.uniform(*spec.sigma_range)
    aspect = rng.uniform(*spec.aspect_range)
    theta = rng.uniform(0.0, math.pi)
    amp = rng.uniform(*spec.amplitude_range)
    return Gaussian2D(center, (sigma, sigma / aspect), theta, (1.0,), amp)


def peak_gaussians(spec: SceneSpec, rng: np.random.Generator | None = None) -> list[Gaussian2D]:
    """The ground-truth primitives of a ``two_peak``/``k_peak`` scene."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    k = 2 if spec.kind == "two_peak" else spec.n_peaks
    w, h = spec.width, spec.height
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    peaks = [_random_peak(rng, spec, center)]
    for _ in range(k - 1):
        # draw shape first, then place at a separation relative to the widest peak so far
        proto = _random_peak(rng, spec, center)
        max_sigma = max(max(p.scales) for p in peaks + [proto])
        sep = rng.uniform(*spec.separation_range) * max_sigma
        phi = rng.uniform(0.0, 2.0 * math.pi)
        anchor = np.asarray(peaks[rng.integers(len(peaks))].mu)
        pos = anchor + sep * np.array([math.cos(phi), math.sin(phi)])
        peaks.append(Gaussian2D(pos, proto.scales, proto.theta, proto.intensity, proto.opacity))
    # recentre the group on the raster
    shift = center - np.mean([p.mu for p in peaks], axis=0)
    return [Gaussian2D(np.asarray(p.mu) + shift, p.scales, p.theta, p.intensity, p.opacity)
            for p in peaks]


def _composite(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Flat | ramp | texture, left to right in equal thirds."""
    w, h = spec.width, spec.height
    img = np.zeros((h, w))
    a, b = w // 3, 2 * w // 3
    img[:, :a] = spec.extras.get("flat_value", 0.0)
    ramp_lo, ramp_hi = spec.extras.get("ramp", (0.1, 0.6))
    xs = np.arange(a, b)
    img[:, a:b] = ramp_lo + (ramp_hi - ramp_lo) * (xs - a) / max(b - a - 1, 1)
    # texture: many small random blobs
    n_blobs = int(spec.extras.get("blobs", 3 * (w - b) * h // 16))
    blobs = [Gaussian2D((rng.uniform(b, w - 1), rng.uniform(0, h - 1)),
                        (rng.uniform(0.8, 1.6), rng.uniform(0.8, 1.6)), rng.uniform(0, math.pi),
                        (1.0,), rng.uniform(0.2, 0.6)) for _ in range(n_blobs)]
    tex = render(GaussianSet.from_gaussians(blobs), (w, h)).image.data[:, :, 0]
    img[:, b:] = np.clip(tex[:, b:], 0.0, 1.0)
    return img


def _ramp_noise(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Left half a horizontal ramp, right half i.i.d. uniform noise."""
    w, h = spec.width, spec.height
    img = np.empty((h, w))
    half = w // 2
    img[:, :half] = np.linspace(0.0, 1.0, half)[None, :]
    img[:, half:] = rng.uniform(0.0, 1.0, (h, w - half))
    return img


def gen_target(spec: SceneSpec) -> Raster:
    rng = np.random.default_rng(spec.seed)
    if spec.kind in ("two_peak", "k_peak"):
        peaks = peak_gaussians(spec, rng)
        return render(GaussianSet.from_gaussians(peaks), (spec.width, spec.height)).image
    if spec.kind == "composite":
        return Raster(_composite(spec, rng))
    return Raster(_ramp_noise(spec, rng))


def moment_init(target: Raster, opacity: float = 0.5) -> Gaussian2D:
    """One Gaussian at the target's intensity centroid with matching second moments."""
    img = np.clip(target.data.mean(axis=2), 0.0, None)
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    mass = img.sum()
    if mass <= 0:
        return Gaussian2D(((w - 1) / 2, (h - 1) / 2), (w / 6, h / 6), 0.0, (1.0,) * target.channels, opacity)
    cx, cy = (img * xs).sum() / mass, (img * ys).sum() / mass
    dx, dy = xs - cx, ys - cy
    cov = np.array([[(img * dx * dx).sum(), (img * dx * dy).sum()],
                    [(img * dx * dy).sum(), (img * dy * dy).sum()]]) / mass
    evals, evecs = np.linalg.eigh(cov)
    major = evecs[:, 1]
    theta = math.atan2(major[1], major[0])
    scales = np.sqrt(np.maximum(evals[::-1], 0.25))
    return Gaussian2D((cx, cy), scales, theta, (1.0,) * target.channels, opacity)


def grid_init(dims: tuple[int, int], per_side: int, opacity: float = 0.5,
              intensity: float = 0.5, channels: int = 1) -> GaussianSet:
    """``per_side**2`` isotropic Gaussians on a regular grid, each about one cell wide."""
    if per_side < 1:
        raise ValueError("per_side must be >= 1")
    w, h = dims
    cx = (np.arange(per_side) + 0.5) * w / per_side - 0.5
    cy = (np.arange(per_side) + 0.5) * h / per_side - 0.5
    sx, sy = w / per_side / 2.0, h / per_side / 2.0
    return GaussianSet.from_gaussians(
        [Gaussian2D((x, y), (sx, sy), 0.0, (intensity,) * channels, opacity) for y in cy for x in cx],
        channels)


def local_maxima(img: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Strict 8-neighbour local maxima above ``threshold`` after a 3x3 box blur."""
    a = np.asarray(img, float)
    if a.ndim == 3:
        a = a.mean(axis=2)
    p = np.pad(a, 1, mode="edge")
    blur = sum(p[dy:dy + a.shape[0], dx:dx + a.shape[1]] for dy in range(3) for dx in range(3)) / 9.0
    q = np.pad(blur, 1, mode="constant", constant_values=-np.inf)
    peaks = []
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            v = blur[y, x]
            nb = q[y:y + 3, x:x + 3].copy()
            nb[1, 1] = -np.inf
            if v > threshold and v > nb.max():
                peaks.append((y, x))
    return peaks
