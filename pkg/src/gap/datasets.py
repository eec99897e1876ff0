"""Dataset constructions as pure transforms, plus synthetic test worlds.

The real-data transforms (histogram binning of localization tables,
binomial thinning, frame summation, every-nth splits, tiling) reproduce
standard photon-counting dataset preparation on user-supplied inputs. The
synthetic worlds pair a finite signal prior with shot-noise samples at
chosen pseudo-PSNR levels, which is what the exact-oracle verification and
the desk-scale training runs consume.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import PhotonImage
from .errors import RangeError, ShapeError
from .noise import binomial_split, intensity_for_pseudo_psnr, sample_shot_noise
from .oracle import SignalPrior

WORLD_KINDS = ("delta", "two-template", "blob-field")


@dataclass(frozen=True)
class LocalizationTable:
    """Detected emitter locations: frame index plus x/y in nanometres."""

    frame: np.ndarray
    x_nm: np.ndarray
    y_nm: np.ndarray
    extent: tuple | None = None

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=np.int64).reshape(-1)
        x = np.asarray(self.x_nm, dtype=np.float64).reshape(-1)
        y = np.asarray(self.y_nm, dtype=np.float64).reshape(-1)
        if not (frame.size == x.size == y.size):
            raise ValueError("frame, x_nm, y_nm must have equal lengths")
        if x.size and (not np.all(np.isfinite(x)) or not np.all(np.isfinite(y))):
            raise ValueError("coordinates must be finite")
        if frame.size and frame.min() < 0:
            raise ValueError("frame indices must be >= 0")
        for name, arr in (("frame", frame), ("x_nm", x), ("y_nm", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.frame.size)


def read_localizations(path, extent=None) -> LocalizationTable:
    """Read a localization CSV with columns frame, x_nm, y_nm (extras ignored)."""
    frames, xs, ys = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for col in ("frame", "x_nm", "y_nm"):
            if reader.fieldnames is None or col not in reader.fieldnames:
                raise ValueError(f"{path}: missing required column {col!r}")
        for row in reader:
            frames.append(int(float(row["frame"])))
            xs.append(float(row["x_nm"]))
            ys.append(float(row["y_nm"]))
    return LocalizationTable(np.array(frames), np.array(xs), np.array(ys), extent=extent)


def bin_localizations(table: LocalizationTable, bin_nm: float, extent=None) -> PhotonImage:
    """2D histogram of emitter locations with square half-open bins.

    ``extent`` is (x_min, y_min, x_max, y_max); records on a bin's upper
    edge fall into the next bin, and records outside the extent are
    dropped. Rows index y, columns index x. Without an explicit extent the
    table's own extent, or the data's bounding box, is used.
    """
    if not (bin_nm > 0) or not math.isfinite(bin_nm):
        raise RangeError(f"bin size must be positive and finite, got {bin_nm}")
    extent = extent if extent is not None else table.extent
    if extent is None:
        if len(table) == 0:
            raise RangeError("an extent is required to bin an empty table")
        extent = (
            float(table.x_nm.min()),
            float(table.y_nm.min()),
            float(table.x_nm.max()),
            float(table.y_nm.max()),
        )
    x0, y0, x1, y1 = (float(v) for v in extent)
    if not all(math.isfinite(v) for v in (x0, y0, x1, y1)) or x1 < x0 or y1 < y0:
        raise RangeError(f"invalid extent {extent}")
    w = max(1, int(math.ceil((x1 - x0) / bin_nm)) or 1)
    h = max(1, int(math.ceil((y1 - y0) / bin_nm)) or 1)
    if len(table) == 0:
        return PhotonImage.zeros((h, w))
    ix = np.floor((table.x_nm - x0) / bin_nm).astype(np.int64)
    iy = np.floor((table.y_nm - y0) / bin_nm).astype(np.int64)
    keep = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    counts = np.bincount(iy[keep] * w + ix[keep], minlength=h * w).reshape(h, w)
    return PhotonImage(counts)


def thin(img: PhotonImage, p: float, rng: np.random.Generator) -> PhotonImage:
    """Keep each photon with probability ``p`` (a simulated shorter exposure)."""
    return binomial_split(img, p, rng).input


def sum_frames(stack, k: int) -> list[PhotonImage]:
    """Sum consecutive groups of ``k`` frames pixelwise.

    Trailing frames that do not fill a complete group are dropped with a
    warning rather than zero-padded.
    """
    if k < 1:
        raise RangeError(f"group size must be >= 1, got {k}")
    stack = list(stack)
    if not stack:
        return []
    shape = stack[0].shape
    for im in stack:
        if im.shape != shape:
            raise ShapeError("all frames in a stack must share one shape")
    remainder = len(stack) % k
    if remainder:
        warnings.warn(f"dropping {remainder} trailing frame(s) not filling a group of {k}")
        stack = stack[: len(stack) - remainder]
    out = []
    for i in range(0, len(stack), k):
        total = np.zeros(shape, dtype=np.uint64)
        for im in stack[i : i + k]:
            total += im.counts
        out.append(PhotonImage(total))
    return out


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    test: list


def split_every_nth(images, n: int, offset: int) -> DatasetSplit:
    """Every n-th image (indices congruent to ``offset`` mod n) becomes test."""
    if n < 2:
        raise RangeError(f"split period must be >= 2, got {n}")
    if not 0 <= offset < n:
        raise RangeError(f"offset must lie in 0..{n - 1}, got {offset}")
    images = list(images)
    test = [im for i, im in enumerate(images) if i % n == offset]
    train = [im for i, im in enumerate(images) if i % n != offset]
    return DatasetSplit(train=train, test=test)


def tile(img: PhotonImage, tile_size: int) -> list[PhotonImage]:
    """Cut an image into non-overlapping square tiles (partial edges dropped)."""
    if tile_size < 1:
        raise RangeError(f"tile size must be >= 1, got {tile_size}")
    h, w = img.shape
    out = []
    for top in range(0, h - tile_size + 1, tile_size):
        for left in range(0, w - tile_size + 1, tile_size):
            out.append(PhotonImage(img.counts[top : top + tile_size, left : left + tile_size]))
    return out


def reject_empty(images, min_photons: int = 0) -> list[PhotonImage]:
    """Drop images whose photon total is at most ``min_photons``."""
    return [im for im in images if im.total > min_photons]


# ---------------------------------------------------------------------------
# Synthetic worlds: a known finite prior plus shot-noise samples from it.
# ---------------------------------------------------------------------------


@dataclass
class SyntheticWorld:
    """A finite prior with shot-noise samples drawn at known noise levels.

    ``images[db]`` holds the samples for one pseudo-PSNR level and
    ``signal_indices[db]`` records which prior signal generated each.
    """

    prior: SignalPrior
    images: dict = field(default_factory=dict)
    signal_indices: dict = field(default_factory=dict)

    def scaled_signal(self, db: float, index: int) -> np.ndarray:
        """The true Poisson-mean grid behind ``images[db][index]``."""
        k = self.signal_indices[db][index]
        s = self.prior.signals[k]
        gamma = intensity_for_pseudo_psnr(db)
        return gamma * s.size * (s / s.sum())


def _smooth_blob(shape, rng: np.random.Generator, n_blobs: int = 3) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    yy = (yy + 0.5) / h
    xx = (xx + 0.5) / w
    f = np.full((h, w), 0.35)
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        sigma = rng.uniform(0.12, 0.3)
        amp = rng.uniform(0.4, 1.0)
        f += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return f / f.mean()


def _ramp_templates(shape) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    if w < 2:
        raise ShapeError("two-template worlds need a width of at least 2")
    row = 1.0 + (w - 1 - np.arange(w)) / (w - 1)
    ramp = np.tile(row, (h, 1))
    return ramp, ramp[:, ::-1].copy()


def make_synthetic_world(
    kind: str,
    size,
    rng: np.random.Generator,
    *,
    psnr_levels=(0.0,),
    images_per_level: int = 10,
    n_signals: int = 8,
) -> SyntheticWorld:
    """Build a finite prior and sample noisy images from it.

    ``kind`` is one of 'delta' (a single smooth signal), 'two-template'
    (a horizontal ramp and its mirror; exactly (2,1)/(1,2) on a 1x2 grid),
    or 'blob-field' (``n_signals`` random smooth signals with uniform
    weights). For each requested pseudo-PSNR level, each sample first draws
    a signal from the prior, scales its normalized form to the level's
    intensity, and applies shot noise.
    """
    if kind not in WORLD_KINDS:
        raise ValueError(f"kind must be one of {WORLD_KINDS}, got {kind!r}")
    shape = (size, size) if isinstance(size, int) else (int(size[0]), int(size[1]))
    if kind == "delta":
        prior = SignalPrior.uniform([_smooth_blob(shape, rng)])
    elif kind == "two-template":
        prior = SignalPrior.uniform(list(_ramp_templates(shape)))
    else:
        prior = SignalPrior.uniform([_smooth_blob(shape, rng) for _ in range(n_signals)])

    world = SyntheticWorld(prior=prior)
    n_pixels = shape[0] * shape[1]
    for db in psnr_levels:
        gamma = intensity_for_pseudo_psnr(db)
        samples, indices = [], []
        for _ in range(images_per_level):
            k = int(rng.choice(prior.support_size, p=prior.weights))
            s = prior.signals[k]
            samples.append(sample_shot_noise(gamma * n_pixels * (s / s.sum()), rng))
            indices.append(k)
        world.images[float(db)] = samples
        world.signal_indices[float(db)] = indices
    return world
