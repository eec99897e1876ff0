"""Photon-count images, normalized probability maps, and photon sequences.

A photon image is a 2D grid of non-negative integer counts. A normalized
distribution is a 2D grid of non-negative reals summing to one; it doubles
as a "normalized signal" (clean image scaled to unit total) and as a
probability map over pixel locations. Pixel indices are flat and row-major
throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSignalError, ShapeError, ZeroPhotonError

# Counts are stored unsigned 64-bit: summed frame stacks can push per-pixel
# counts far past 16-bit range.
COUNT_DTYPE = np.uint64

PROB_SUM_TOL = 1e-9


def _validate_counts(counts) -> np.ndarray:
    arr = np.asarray(counts)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"photon image must be a non-empty 2D grid, got shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.floating):
        if not np.all(np.isfinite(arr)):
            raise ValueError("photon counts must be finite")
        if np.any(arr < 0) or np.any(arr != np.floor(arr)):
            raise ValueError("photon counts must be non-negative integers")
    elif np.issubdtype(arr.dtype, np.signedinteger):
        if np.any(arr < 0):
            raise ValueError("photon counts must be non-negative")
    elif not np.issubdtype(arr.dtype, np.unsignedinteger):
        raise ValueError(f"cannot interpret dtype {arr.dtype} as photon counts")
    out = arr.astype(COUNT_DTYPE)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PhotonImage:
    """2D grid of per-pixel photon counts (the observation, or the canvas)."""

    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "counts", _validate_counts(self.counts))

    @classmethod
    def zeros(cls, shape) -> "PhotonImage":
        return cls(np.zeros(shape, dtype=COUNT_DTYPE))

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "PhotonImage") -> "PhotonImage":
        if not isinstance(other, PhotonImage):
            return NotImplemented
        if other.shape != self.shape:
            raise ShapeError(f"cannot add images of shapes {self.shape} and {other.shape}")
        return PhotonImage(self.counts + other.counts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhotonImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.counts, other.counts))


@dataclass(frozen=True, eq=False)
class NormalizedDistribution:
    """Non-negative 2D grid summing to one (probability map over pixels)."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ShapeError(f"distribution must be a non-empty 2D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(arr.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities must sum to 1 (got {arr.sum()!r})")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @classmethod
    def from_signal(cls, signal) -> "NormalizedDistribution":
        """Normalize an arbitrary non-negative signal grid to unit total."""
        arr = np.asarray(signal, dtype=np.float64)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidSignalError("signal must be finite and non-negative")
        total = arr.sum()
        if total <= 0:
            raise InvalidSignalError("signal must have positive total")
        return cls(arr / total)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, NormalizedDistribution):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.probs, other.probs))


@dataclass(frozen=True, eq=False)
class PhotonSequence:
    """Ordered flat (row-major) pixel indices of individual photon arrivals."""

    positions: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64).reshape(-1)
        h, w = self.shape
        if h <= 0 or w <= 0:
            raise ShapeError(f"invalid grid shape {self.shape}")
        if pos.size and (pos.min() < 0 or pos.max() >= h * w):
            raise IndexError(f"photon index out of range for {h}x{w} grid")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "shape", (int(h), int(w)))

    def __len__(self) -> int:
        return int(self.positions.size)


def total_photons(img: PhotonImage) -> int:
    """Total number of photons in the image (sum of all pixel counts)."""
    return img.total


def normalize(img: PhotonImage) -> NormalizedDistribution:
    """Divide counts by the photon total.

    Raises ZeroPhotonError for an empty image.
    """
    total = img.total
    if total == 0:
        raise ZeroPhotonError("cannot normalize an image with zero photons")
    return NormalizedDistribution(img.counts.astype(np.float64) / total)


def from_photon_sequence(seq: PhotonSequence) -> PhotonImage:
    """Count photons per pixel. The result is independent of arrival order."""
    h, w = seq.shape
    counts = np.bincount(seq.positions, minlength=h * w).reshape(h, w)
    return PhotonImage(counts)


# ---------------------------------------------------------------------------
# Serialization: single-channel unsigned-integer TIFF, plus a plain-text
# PGM-style fallback for human-readable test fixtures.
# ---------------------------------------------------------------------------


def write_tiff(img: PhotonImage, path) -> None:
    """Write counts as a grayscale TIFF (uint16 if max < 65536, else uint32)."""
    import tifffile

    dtype = np.uint16 if int(img.counts.max(initial=0)) < 65536 else np.uint32
    tifffile.imwrite(str(path), img.counts.astype(dtype))


def read_tiff(path) -> PhotonImage:
    """Read a single-page unsigned-integer TIFF as a photon image."""
    import tifffile

    arr = tifffile.imread(str(path))
    if arr.ndim != 2:
        raise ShapeError(f"expected a single-page 2D TIFF, got shape {arr.shape}")
    return PhotonImage(arr)


def write_tiff_stack(images, path) -> None:
    """Write a list of equal-shape photon images as a multi-page TIFF."""
    import tifffile

    if not images:
        raise ValueError("cannot write an empty stack")
    shape = images[0].shape
    for im in images:
        if im.shape != shape:
            raise ShapeError("all stack frames must share one shape")
    peak = max(im.counts.max(initial=0) for im in images)
    dtype = np.uint16 if int(peak) < 65536 else np.uint32
    tifffile.imwrite(str(path), np.stack([im.counts.astype(dtype) for im in images]))


def read_tiff_stack(path) -> list[PhotonImage]:
    """Read a multi-page (or single-page) TIFF as a list of photon images."""
    import tifffile

    arr = tifffile.imread(str(path))
    if arr.ndim == 2:
        return [PhotonImage(arr)]
    if arr.ndim != 3:
        raise ShapeError(f"expected a 2D or 3D TIFF, got shape {arr.shape}")
    return [PhotonImage(frame) for frame in arr]


def write_float_tiff(values, path) -> None:
    """Write a real-valued grid (e.g. a denoised estimate) as a float32 TIFF."""
    import tifffile

    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2D grid, got shape {arr.shape}")
    tifffile.imwrite(str(path), arr)


def write_pgm(img: PhotonImage, path) -> None:
    """Write counts in ASCII PGM style (P2).

    Unlike strict PGM, maxval may exceed 65535; readers from this package
    accept that extension.
    """
    maxval = max(1, int(img.counts.max(initial=0)))
    h, w = img.shape
    lines = [f"P2", f"{w} {h}", f"{maxval}"]
    for row in img.counts:
        lines.append(" ".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> PhotonImage:
    """Read an ASCII PGM-style (P2) file written by :func:`write_pgm`."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM (P2) file")
    w, h = int(tokens[1]), int(tokens[2])
    values = np.array([int(t) for t in tokens[4 : 4 + w * h]], dtype=np.int64)
    if values.size != w * h:
        raise ValueError(f"{path}: expected {w * h} samples, found {values.size}")
    return PhotonImage(values.reshape(h, w))
