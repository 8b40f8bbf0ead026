"""Binary PPM/PGM images and CSV tables of Gaussian sets."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import GaussianSet, Raster


class FormatError(ValueError):
    """A file exists but does not parse as the expected format."""


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one.
    """
    out: list[bytes] = []
    pos = 0
    while len(out) < count:
        if pos >= len(buf):
            raise FormatError("truncated header")
        ch = buf[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        else:
            start = pos
            while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
                pos += 1
            out.append(buf[start:pos])
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("header must end with one whitespace byte")
    return out, pos + 1


def decode_ppm(buf: bytes) -> Raster:
    """Decode P5 (grayscale) or P6 (color) with maxval <= 255 into a [0, 1] raster."""
    (magic, w, h, maxval), off = _tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}; expected P5 or P6")
    try:
        width, height, mv = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"bad header number: {exc}") from None
    if width <= 0 or height <= 0:
        raise FormatError("image dims must be positive")
    if not 0 < mv <= 255:
        raise FormatError(f"maxval {mv} unsupported; only 8-bit images are read")
    channels = 3 if magic == b"P6" else 1
    n = width * height * channels
    body = buf[off:off + n]
    if len(body) < n:
        raise FormatError(f"pixel data truncated: {len(body)} of {n} bytes")
    data = np.frombuffer(body, np.uint8).reshape(height, width, channels).astype(float) / mv
    return Raster(data)


def encode_ppm(image) -> bytes:
    """P5 for one channel, P6 for three; values clamped to [0, 1] and rounded to 8 bits."""
    data = image.data if isinstance(image, Raster) else np.asarray(image, float)
    if data.ndim == 2:
        data = data[:, :, None]
    h, w, c = data.shape
    if c not in (1, 3):
        raise ValueError(f"PPM holds 1 or 3 channels, got {c}")
    px = np.rint(np.clip(np.nan_to_num(data), 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + px.tobytes()


def read_ppm(path) -> Raster:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path, image) -> None:
    Path(path).write_bytes(encode_ppm(image))


# --------------------------------------------------------------------------
# gaussian tables

def gaussian_fields(channels: int) -> list[str]:
    return (["id", "mu_x", "mu_y", "scale_1", "scale_2", "theta"]
            + [f"intensity_{c}" for c in range(channels)] + ["opacity"])


def write_gaussians(path, gs: GaussianSet) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(gaussian_fields(gs.channels))
        for i in range(len(gs)):
            w.writerow([int(gs.ids[i]), *map(repr, map(float, gs.mu[i])), *map(repr, map(float, gs.scales[i])),
                        repr(float(gs.theta[i])), *map(repr, map(float, gs.intensity[i])),
                        repr(float(gs.opacity[i]))])


def read_gaussians(path) -> GaussianSet:
    """Inverse of :func:`write_gaussians`; float values round-trip exactly."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    channels = sum(1 for h in header if h.startswith("intensity_"))
    if header != gaussian_fields(channels) or channels < 1:
        raise FormatError(f"{path}: unexpected header {header}")
    body = rows[1:]
    try:
        table = np.array([[float(v) for v in r] for r in body], float).reshape(len(body), len(header))
    except ValueError as exc:
        # csv line numbers are 1-based and the header is line 1
        bad = next(i for i, r in enumerate(body) if len(r) != len(header) or not _all_float(r))
        raise FormatError(f"{path}:{bad + 2}: {exc}") from None
    ids = table[:, 0].astype(np.int64)
    gs = GaussianSet(
        mu=table[:, 1:3], scales=table[:, 3:5], theta=table[:, 5],
        intensity=table[:, 6:6 + channels], opacity=table[:, 6 + channels],
        ids=ids, next_id=int(ids.max()) + 1 if len(ids) else 0, channels=channels,
    )
    if np.any(gs.scales <= 0) or not np.all(np.isfinite(table)):
        raise FormatError(f"{path}: scales must be positive and all values finite")
    return gs


def _all_float(row) -> bool:
    try:
        [float(v) for v in row]
        return True
    except ValueError:
        return False
