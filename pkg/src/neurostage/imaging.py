"""Grayscale rasters, PGM file I/O, and the pixel-level filters.

Images are immutable 8-bit values: every operation returns a new
:class:`GrayImage` / :class:`BinaryMask`, so they are safe to share across
threads.  PGM (P2 ASCII / P5 binary, maxval 255) is the only file format
decoded natively; convert anything else before ingestion.

Rounding convention: intensities are rounded half-up to the nearest
integer everywhere (``floor(x + 0.5)``), never banker's rounding.
"""

from __future__ import annotations

import numpy as np

from . import _kernels


class PgmFormatError(ValueError):
    """Raised for malformed or unsupported PGM files."""


def _round_half_up(values):
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


class GrayImage:
    """A 2D 8-bit grayscale raster.

    Wraps a read-only ``(height, width)`` uint8 array; construct from any
    integer array-like with values in [0, 255].
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"expected a non-empty 2D pixel array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any((arr < 0) | (arr > 255)):
                raise ValueError("pixel intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        self.pixels = arr

    @classmethod
    def from_flat(cls, width, height, values):
        """Build from row-major flat intensities."""
        arr = np.asarray(values)
        if arr.size != width * height:
            raise ValueError(f"expected {width * height} values, got {arr.size}")
        return cls(arr.reshape(height, width))

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


class BinaryMask:
    """Per-pixel booleans with the same layout as the image they came from."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        arr = np.asarray(bits)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"expected a non-empty 2D boolean array, got shape {arr.shape}")
        arr = arr.astype(bool)
        arr.setflags(write=False)
        self.bits = arr

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]

    def count(self):
        """Number of set pixels."""
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, set={self.count()})"


def _read_pgm_tokens(data, count):
    """Yield header tokens, honouring '#' comments anywhere in the header.

    Returns (tokens, offset_past_last_token_whitespace).
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise PgmFormatError("truncated PGM header")
        tokens.append(data[start:i])
    if i >= n or not data[i : i + 1].isspace():
        raise PgmFormatError("missing whitespace after PGM header")
    return tokens, i + 1


def load_gray(path) -> GrayImage:
    """Decode an 8-bit grayscale PGM file (P2 or P5, maxval 255)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 2 or data[:2] not in (b"P2", b"P5"):
        raise PgmFormatError(f"{path}: not a P2/P5 PGM file")
    magic = data[:2]
    try:
        tokens, offset = _read_pgm_tokens(data[2:], 3)
    except PgmFormatError as exc:
        raise PgmFormatError(f"{path}: {exc}") from None
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PgmFormatError(f"{path}: non-numeric PGM header field") from None
    if width < 1 or height < 1:
        raise PgmFormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise PgmFormatError(f"{path}: unsupported maxval {maxval} (only 255)")
    npix = width * height
    body = data[2 + offset :]
    if magic == b"P5":
        if len(body) < npix:
            raise PgmFormatError(f"{path}: truncated raster ({len(body)} of {npix} bytes)")
        arr = np.frombuffer(body[:npix], dtype=np.uint8).reshape(height, width)
    else:
        fields = body.split()
        if len(fields) < npix:
            raise PgmFormatError(f"{path}: truncated raster ({len(fields)} of {npix} values)")
        try:
            values = [int(f) for f in fields[:npix]]
        except ValueError:
            raise PgmFormatError(f"{path}: non-numeric raster value") from None
        if any(v < 0 or v > 255 for v in values):
            raise PgmFormatError(f"{path}: raster value outside [0, 255]")
        arr = np.asarray(values, dtype=np.uint8).reshape(height, width)
    return GrayImage(arr)


def save_gray(image: GrayImage, path) -> None:
    """Write a binary (P5) PGM; ``load_gray`` round-trips bit-exactly."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.pixels.tobytes())


def gaussian_kernel1d(kernel_size, sigma):
    """Normalized 1D Gaussian taps; the 2D kernel is their outer product."""
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise ValueError(f"kernel_size must be odd and >= 1, got {kernel_size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    half = kernel_size // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur(image: GrayImage, kernel_size=5, sigma=1.0) -> GrayImage:
    """Gaussian denoise with edge-clamp borders.

    The separable kernel is normalized to sum 1 before application, so a
    constant image is a fixed point for any kernel size.
    """
    taps = gaussian_kernel1d(kernel_size, sigma)
    half = kernel_size // 2
    src = image.pixels.astype(np.float64)
    padded = np.pad(src, half, mode="edge")
    rows = np.zeros_like(src)
    for k in range(kernel_size):
        rows += taps[k] * padded[k : k + image.height, half : half + image.width]
    padded = np.pad(rows, ((0, 0), (half, half)), mode="edge")
    out = np.zeros_like(src)
    for k in range(kernel_size):
        out += taps[k] * padded[:, k : k + image.width]
    return GrayImage(np.clip(_round_half_up(out), 0, 255).astype(np.uint8))


def threshold(image: GrayImage, t) -> BinaryMask:
    """Bit set iff intensity is strictly greater than ``t``."""
    return BinaryMask(image.pixels > t)


def multiply_contrast(image: GrayImage, factor) -> GrayImage:
    """Scale intensities by ``factor``, saturating at 255 (never wrapping)."""
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    boosted = _round_half_up(image.pixels.astype(np.float64) * factor)
    return GrayImage(np.clip(boosted, 0, 255).astype(np.uint8))


def _sample_axis(out_dim, in_dim):
    """Corner-aligned source coordinates for one axis."""
    if out_dim > 1:
        return np.arange(out_dim, dtype=np.float64) * ((in_dim - 1) / (out_dim - 1))
    return np.array([(in_dim - 1) / 2.0])


def resize_bilinear(image: GrayImage, out_w, out_h) -> GrayImage:
    """Bilinear resample with corner-aligned sampling.

    A single-pixel output axis samples the axis centre.  Resizing to the
    input dimensions is the identity.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target dimensions must be >= 1, got {out_w}x{out_h}")
    src = image.pixels.astype(np.float64)
    ys = _sample_axis(out_h, image.height)
    xs = _sample_axis(out_w, image.width)
    y0 = np.minimum(np.floor(ys).astype(np.intp), image.height - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), image.width - 1)
    y1 = np.minimum(y0 + 1, image.height - 1)
    x1 = np.minimum(x0 + 1, image.width - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    out = top * (1 - fy) + bot * fy
    return GrayImage(np.clip(_round_half_up(out), 0, 255).astype(np.uint8))


def flood_fill(mask: BinaryMask, seeds, fill_value) -> BinaryMask:
    """Flood-fill a binary mask from ``seeds`` with 4-connectivity.

    Every pixel 4-connected to a seed through pixels sharing the seed's
    original value is set to ``fill_value``; all other pixels are
    unchanged.  Seeds are (row, col) pairs and must be in bounds.
    """
    rows = []
    cols = []
    for r, c in seeds:
        if not (0 <= r < mask.height and 0 <= c < mask.width):
            raise ValueError(f"seed ({r}, {c}) outside {mask.width}x{mask.height} mask")
        rows.append(int(r))
        cols.append(int(c))
    work = mask.bits.astype(np.uint8)
    _kernels.flood_fill(work, rows, cols, 1 if fill_value else 0)
    return BinaryMask(work.astype(bool))
