"""Shot-noise simulation, binomial photon splitting, and pseudo-PSNR.

Splitting an observed image into an input/target pair by per-photon
Bernoulli assignment is statistically identical to recording two shorter
exposures of the same signal, which is what makes the self-supervised
training pairs valid. Pseudo-PSNR, ``10*log10(photons/pixel)``, is the PSNR
one expects for a shot-noise sample of a flat signal at that intensity and
serves as a reference-free noise-level axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PhotonImage
from .errors import (
    InvalidIntensityError,
    InvalidProbabilityError,
    InvalidSignalError,
    ZeroPhotonError,
)

# Split probabilities are capped so that on average at least 1% of photons
# lands in the target half.
MAX_SPLIT_PROBABILITY = 0.99


@dataclass(frozen=True)
class SplitPair:
    """Input/target halves of a binomially split photon image."""

    input: PhotonImage
    target: PhotonImage
    p: float


@dataclass(frozen=True)
class PsnrRange:
    """Closed interval of pseudo-PSNR values in dB; endpoints may be infinite."""

    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi) or self.lo > self.hi:
            raise ValueError(f"invalid pseudo-PSNR range [{self.lo}, {self.hi}]")

    def contains(self, db: float) -> bool:
        """Half-open membership test: lo <= db < hi."""
        return self.lo <= db < self.hi


def sample_shot_noise(signal, rng: np.random.Generator) -> PhotonImage:
    """Draw an independent Poisson count per pixel, with the signal as mean."""
    arr = np.asarray(signal, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidSignalError("Poisson means must be finite and non-negative")
    return PhotonImage(rng.poisson(arr))


def binomial_split(img: PhotonImage, p: float, rng: np.random.Generator) -> SplitPair:
    """Assign each photon to the input half with probability ``p``.

    The target is the exact pixelwise remainder, so
    ``input + target == img`` always holds.
    """
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise InvalidProbabilityError(f"split probability must lie in [0, 1], got {p}")
    counts = img.counts.astype(np.int64)
    inp = rng.binomial(counts, p)
    return SplitPair(PhotonImage(inp), PhotonImage(counts - inp), float(p))


def pseudo_psnr(intensity: float) -> float:
    """Expected PSNR (dB) of a shot-noise sample of a flat signal.

    ``intensity`` is the mean photon count per pixel; both the squared peak
    and the mean squared error of such a sample equal the intensity, so the
    value reduces to ``10*log10(intensity)``.
    """
    if not (intensity > 0) or not math.isfinite(intensity):
        raise InvalidIntensityError(f"intensity must be positive and finite, got {intensity}")
    return 10.0 * math.log10(intensity)


def intensity_for_pseudo_psnr(db: float) -> float:
    """Invert :func:`pseudo_psnr`: photons/pixel for a given dB value."""
    if math.isnan(db):
        raise ValueError("pseudo-PSNR must not be NaN")
    return 10.0 ** (db / 10.0)


def sample_split_probability(
    img: PhotonImage, psnr_range: PsnrRange, rng: np.random.Generator
) -> float:
    """Draw a split probability so the input half hits a random noise level.

    A target pseudo-PSNR is drawn uniformly from ``psnr_range``, converted
    to an intensity, and divided by the image's own photons/pixel. The
    result is clipped to at most 0.99.
    """
    total = img.total
    if total == 0:
        raise ZeroPhotonError("cannot choose a split probability for an empty image")
    if not (math.isfinite(psnr_range.lo) and math.isfinite(psnr_range.hi)):
        raise ValueError("pseudo-PSNR range must be finite for sampling")
    db = rng.uniform(psnr_range.lo, psnr_range.hi)
    gamma = intensity_for_pseudo_psnr(db)
    n_pixels = img.counts.size
    p = gamma * n_pixels / total
    return float(min(max(p, 0.0), MAX_SPLIT_PROBABILITY))
