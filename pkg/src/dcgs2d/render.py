"""Additive splatting of a GaussianSet onto a raster, and the squared-error loss.

Pixel values are ``sum_i o_i * c_i * G_i(x_j)`` over primitives whose
footprint covers ``j``. There is no depth order and no clamping; metrics clamp
on their own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_CUTOFF, FlatFootprints, GaussianSet, Raster, compute_footprints


@dataclass(frozen=True)
class RenderOutput:
    image: Raster
    footprints: FlatFootprints
    density: np.ndarray   # G_i(x_j) per footprint entry
    weight: np.ndarray    # o_i * G_i(x_j) per footprint entry

    def contributions(self, i: int, channel: int = 0, gaussians: GaussianSet | None = None):
        """``(pixels, values)`` that primitive ``i`` adds to the image."""
        seg = self.footprints.segment(i)
        w = self.weight[seg]
        if gaussians is not None:
            w = w * gaussians.intensity[i, channel]
        return self.footprints.pix[seg], w


def splat(gs: GaussianSet, fp: FlatFootprints, dims: tuple[int, int]):
    """Accumulate footprint entries into a flat ``(W*H, C)`` array."""
    width, height = dims
    density = np.exp(-0.5 * fp.q)
    weight = gs.opacity[fp.prim] * density
    img = np.empty((width * height, gs.channels))
    for ch in range(gs.channels):
        img[:, ch] = np.bincount(fp.pix, weights=weight * gs.intensity[fp.prim, ch],
                                 minlength=width * height)
    return img, density, weight


def render(gs: GaussianSet, dims: tuple[int, int], cutoff: float = DEFAULT_CUTOFF) -> RenderOutput:
    """Render ``gs`` onto a ``dims = (width, height)`` raster."""
    width, height = dims
    fp = compute_footprints(gs, dims, cutoff)
    img, density, weight = splat(gs, fp, dims)
    return RenderOutput(Raster(img.reshape(height, width, gs.channels)), fp, density, weight)


def loss(image: Raster, target: Raster) -> tuple[float, Raster]:
    """Per-pixel squared error summed over channels, and its total."""
    if image.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch: image {image.data.shape} vs target {target.data.shape}")
    per_pixel = np.square(image.data - target.data).sum(axis=2)
    return float(per_pixel.sum()), Raster(per_pixel)
