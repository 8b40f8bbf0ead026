"""Domain types and Gaussian evaluation shared by every other module.

The model lives directly in image space: a primitive's center is already its
projected 2D center, so there is no camera or projection step anywhere in the
package. Pixel ``(row y, col x)`` has its center at the continuous coordinate
``(x, y)`` and flat index ``j = y * width + x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

#: Mahalanobis radius of the "influenced pixel" set (3 sigma).
DEFAULT_CUTOFF = 3.0


def canonical_theta(theta):
    """Wrap an angle (scalar or array) into ``[0, pi)``."""
    t = np.mod(theta, math.pi)
    # np.mod can round up to exactly pi for tiny negative inputs
    t = np.where(t >= math.pi, 0.0, t)
    return float(t) if np.ndim(theta) == 0 else t


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Gaussian2D:
    """One anisotropic primitive.

    ``scales`` are per-axis standard deviations in pixels, ``theta`` rotates
    the local axes into the image, ``intensity`` holds one value per channel.
    """

    mu: tuple[float, float]
    scales: tuple[float, float]
    theta: float = 0.0
    intensity: tuple[float, ...] = (1.0,)
    opacity: float = 1.0

    def __post_init__(self):
        mu = tuple(float(v) for v in np.ravel(self.mu))
        scales = tuple(float(v) for v in np.ravel(self.scales))
        intensity = tuple(float(v) for v in np.ravel(self.intensity))
        if len(mu) != 2 or len(scales) != 2:
            raise ValueError("mu and scales must be 2-vectors")
        if not all(math.isfinite(v) for v in (*mu, *scales, *intensity, float(self.theta))):
            raise ValueError("gaussian parameters must be finite")
        if not all(s > 0 for s in scales):
            raise ValueError(f"scales must be strictly positive, got {scales}")
        if not 0.0 < self.opacity <= 1.0:
            raise ValueError(f"opacity must lie in (0, 1], got {self.opacity}")
        if len(intensity) not in (1, 3):
            raise ValueError("intensity must have 1 or 3 channels")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "theta", canonical_theta(float(self.theta)))

    @property
    def principal_axis(self) -> int:
        # ties resolve to the lowest axis index
        return int(np.argmax(self.scales))

    def axis_direction(self, axis: int | None = None) -> np.ndarray:
        """Unit vector of local axis ``axis`` expressed in image coordinates."""
        a = self.principal_axis if axis is None else axis
        return rotation(self.theta)[:, a]

    def covariance(self) -> np.ndarray:
        r = rotation(self.theta)
        return r @ np.diag(np.square(self.scales)) @ r.T


def eval_density(g: Gaussian2D, x) -> float:
    """Unnormalized kernel ``exp(-0.5 d^T Sigma^-1 d)`` with ``d = x - mu``."""
    d = np.asarray(x, dtype=float) - np.asarray(g.mu)
    c, s = math.cos(g.theta), math.sin(g.theta)
    u1 = c * d[0] + s * d[1]
    u2 = -s * d[0] + c * d[1]
    q = (u1 / g.scales[0]) ** 2 + (u2 / g.scales[1]) ** 2
    return math.exp(-0.5 * q)


@dataclass(frozen=True)
class Raster:
    """Dense image, stored as a float array of shape ``(height, width, channels)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"raster data must be (H, W) or (H, W, 1|3), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("raster contains non-finite values")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, width: int, height: int, channels: int = 1) -> "Raster":
        return cls(np.zeros((height, width, channels)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height

    def flat(self) -> np.ndarray:
        """Row-major ``(width*height, channels)`` view."""
        return self.data.reshape(-1, self.channels)


@dataclass(frozen=True)
class Footprint:
    gaussian_id: int
    pixels: np.ndarray  # flat pixel indices, ascending


def footprint(g: Gaussian2D, raster_dims: tuple[int, int], cutoff: float = DEFAULT_CUTOFF,
              gaussian_id: int = -1) -> Footprint:
    """Pixels within Mahalanobis distance ``cutoff`` of ``g``, clipped to the raster.

    ``raster_dims`` is ``(width, height)``.
    """
    gs = GaussianSet.from_gaussians([g])
    fp = compute_footprints(gs, raster_dims, cutoff)
    return Footprint(gaussian_id, np.sort(fp.pix))


_PARAM_SHAPES = {
    "mu": lambda c: (2,),
    "scales": lambda c: (2,),
    "theta": lambda c: (),
    "intensity": lambda c: (c,),
    "opacity": lambda c: (),
}


@dataclass(frozen=True)
class GaussianSet:
    """Ordered, immutable collection of primitives stored column-wise.

    ``ids`` are stable across refinement so accumulators and optimizer state
    can be joined back to surviving primitives.
    """

    mu: np.ndarray          # (n, 2)
    scales: np.ndarray      # (n, 2)
    theta: np.ndarray       # (n,)
    intensity: np.ndarray   # (n, channels)
    opacity: np.ndarray     # (n,)
    ids: np.ndarray         # (n,) int64
    next_id: int = 0
    channels: int = field(default=1)

    def __post_init__(self):
        n = len(self.ids)
        arrays = dict(
            mu=np.array(self.mu, float).reshape(n, 2),
            scales=np.array(self.scales, float).reshape(n, 2),
            theta=np.array(self.theta, float).reshape(n),
            intensity=np.array(self.intensity, float).reshape(n, self.channels),
            opacity=np.array(self.opacity, float).reshape(n),
            ids=np.array(self.ids, np.int64).reshape(n),
        )
        for k, v in arrays.items():
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        if len(np.unique(arrays["ids"])) != n:
            raise ValueError("gaussian ids must be unique")
        if n and self.next_id <= int(arrays["ids"].max()):
            object.__setattr__(self, "next_id", int(arrays["ids"].max()) + 1)

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian2D], channels: int | None = None) -> "GaussianSet":
        gs = list(gaussians)
        if channels is None:
            channels = len(gs[0].intensity) if gs else 1
        n = len(gs)
        return cls(
            mu=np.array([g.mu for g in gs], float).reshape(n, 2),
            scales=np.array([g.scales for g in gs], float).reshape(n, 2),
            theta=np.array([g.theta for g in gs], float),
            intensity=np.array([g.intensity for g in gs], float).reshape(n, channels),
            opacity=np.array([g.opacity for g in gs], float),
            ids=np.arange(n, dtype=np.int64),
            next_id=n,
            channels=channels,
        )

    @classmethod
    def empty(cls, channels: int = 1) -> "GaussianSet":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, channels)),
                   np.zeros(0), np.zeros(0, np.int64), 0, channels)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> Gaussian2D:
        return Gaussian2D(self.mu[i], self.scales[i], float(self.theta[i]),
                          tuple(self.intensity[i]), float(self.opacity[i]))

    @property
    def items(self) -> list[Gaussian2D]:
        return [self[i] for i in range(len(self))]

    def with_params(self, **arrays) -> "GaussianSet":
        """Copy with some parameter arrays replaced; ids are kept.

        This is the hot path of every optimizer step, so it skips the id
        checks (ids cannot change here) and only coerces shapes.
        """
        unknown = set(arrays) - _PARAM_SHAPES.keys()
        if unknown:
            raise TypeError(f"not parameter arrays: {sorted(unknown)}")
        n = len(self.ids)
        new = object.__new__(GaussianSet)
        for f in ("mu", "scales", "theta", "intensity", "opacity", "ids", "next_id", "channels"):
            object.__setattr__(new, f, getattr(self, f))
        for k, v in arrays.items():
            a = np.array(v, float).reshape((n,) + _PARAM_SHAPES[k](self.channels))
            a.setflags(write=False)
            object.__setattr__(new, k, a)
        return new

    def select(self, mask_or_index) -> "GaussianSet":
        idx = np.asarray(mask_or_index)
        return replace(self, mu=self.mu[idx], scales=self.scales[idx], theta=self.theta[idx],
                       intensity=self.intensity[idx], opacity=self.opacity[idx], ids=self.ids[idx])

    def extend(self, gaussians: Sequence[Gaussian2D]) -> "GaussianSet":
        """Append primitives with fresh ids."""
        if not gaussians:
            return self
        add = GaussianSet.from_gaussians(gaussians, self.channels)
        new_ids = np.arange(self.next_id, self.next_id + len(add), dtype=np.int64)
        return GaussianSet(
            mu=np.concatenate([self.mu, add.mu]),
            scales=np.concatenate([self.scales, add.scales]),
            theta=np.concatenate([self.theta, add.theta]),
            intensity=np.concatenate([self.intensity, add.intensity]),
            opacity=np.concatenate([self.opacity, add.opacity]),
            ids=np.concatenate([self.ids, new_ids]),
            next_id=self.next_id + len(add),
            channels=self.channels,
        )


@dataclass(frozen=True)
class FlatFootprints:
    """All footprints of a set, concatenated primitive by primitive.

    Entry ``k`` says primitive ``prim[k]`` influences pixel ``pix[k]``; the
    local coordinates ``u1, u2`` are the pixel offset expressed in the
    primitive's rotated frame and ``q`` is the squared Mahalanobis distance.
    """

    prim: np.ndarray
    pix: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    q: np.ndarray
    n_prims: int

    def counts(self) -> np.ndarray:
        return np.bincount(self.prim, minlength=self.n_prims)

    def segment(self, i: int) -> slice:
        # entries are grouped by primitive in ascending order
        lo = np.searchsorted(self.prim, i, side="left")
        hi = np.searchsorted(self.prim, i, side="right")
        return slice(lo, hi)


def compute_footprints(gs: GaussianSet, raster_dims: tuple[int, int],
                       cutoff: float = DEFAULT_CUTOFF) -> FlatFootprints:
    """Vectorized footprint enumeration for every primitive in ``gs``."""
    width, height = raster_dims
    if width <= 0 or height <= 0:
        raise ValueError("raster dims must be positive")
    n = len(gs)
    cos_t, sin_t = np.cos(gs.theta), np.sin(gs.theta)
    s1, s2 = gs.scales[:, 0], gs.scales[:, 1]
    # axis-aligned half extents of the cutoff ellipse
    ext_x = cutoff * np.sqrt((cos_t * s1) ** 2 + (sin_t * s2) ** 2)
    ext_y = cutoff * np.sqrt((sin_t * s1) ** 2 + (cos_t * s2) ** 2)
    mx, my = gs.mu[:, 0], gs.mu[:, 1]
    with np.errstate(invalid="ignore"):
        x0 = np.clip(np.ceil(mx - ext_x), 0, width).astype(np.int64)
        x1 = np.clip(np.floor(mx + ext_x), -1, width - 1).astype(np.int64)
        y0 = np.clip(np.ceil(my - ext_y), 0, height).astype(np.int64)
        y1 = np.clip(np.floor(my + ext_y), -1, height - 1).astype(np.int64)
    bw = np.maximum(x1 - x0 + 1, 0)
    bh = np.maximum(y1 - y0 + 1, 0)
    sizes = bw * bh
    total = int(sizes.sum())
    prim = np.repeat(np.arange(n, dtype=np.int64), sizes)
    starts = np.cumsum(sizes) - sizes
    local = np.arange(total, dtype=np.int64) - np.repeat(starts, sizes)
    bwp = bw[prim]
    px = x0[prim] + local % np.maximum(bwp, 1)
    py = y0[prim] + local // np.maximum(bwp, 1)
    dx = px - mx[prim]
    dy = py - my[prim]
    c, s = cos_t[prim], sin_t[prim]
    u1 = c * dx + s * dy
    u2 = -s * dx + c * dy
    q = (u1 / s1[prim]) ** 2 + (u2 / s2[prim]) ** 2
    keep = q <= cutoff * cutoff
    return FlatFootprints(
        prim=prim[keep], pix=(py * width + px)[keep], dx=dx[keep], dy=dy[keep],
        u1=u1[keep], u2=u2[keep], q=q[keep], n_prims=n,
    )


def pixel_centers(raster_dims: tuple[int, int], pix: np.ndarray) -> np.ndarray:
    """``(k, 2)`` image coordinates of flat pixel indices."""
    width = raster_dims[0]
    pix = np.asarray(pix)
    return np.stack([pix % width, pix // width], axis=-1).astype(float)
