"""Evaluation: PSNR against scaled ground truth and sample diagnostics.

PSNR follows the peak-squared-over-MSE convention with the peak taken from
the scaled ground truth; a perfect match is reported as the +inf sentinel.
The pseudo-PSNR of an image is the same quantity an ideal flat-signal
sample of equal intensity would score, computed without any ground truth.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import NormalizedDistribution, PhotonImage
from .errors import InvalidGroundTruthError, ShapeError, ZeroPhotonError
from .noise import pseudo_psnr


def scale_ground_truth(s: NormalizedDistribution, gamma: float, n: int) -> np.ndarray:
    """Scale a normalized signal to intensity ``gamma`` photons/pixel.

    Returns ``gamma * n * s`` whose total is ``gamma * n``.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return gamma * n * s.probs


def psnr(est, gt_scaled) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the estimate is exact."""
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt_scaled, dtype=np.float64)
    if est.shape != gt.shape:
        raise ShapeError(f"estimate shape {est.shape} != ground truth shape {gt.shape}")
    peak = gt.max()
    if not peak > 0:
        raise InvalidGroundTruthError("ground truth must have a positive maximum")
    mse = float(np.mean((est - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def image_pseudo_psnr(img: PhotonImage) -> float:
    """Pseudo-PSNR of an image: 10*log10 of its photons/pixel."""
    total = img.total
    if total == 0:
        raise ZeroPhotonError("pseudo-PSNR is undefined for an empty image")
    return pseudo_psnr(total / img.counts.size)


# ---------------------------------------------------------------------------
# Diagnostics for generated samples: intensity histograms, radially averaged
# power spectra, and simple distances between sample and reference sets.
# ---------------------------------------------------------------------------

_HIST_BINS = 16


def _radial_power_spectrum(counts: np.ndarray) -> np.ndarray:
    f = np.fft.fftshift(np.fft.fft2(counts.astype(np.float64)))
    power = np.abs(f) ** 2
    h, w = counts.shape
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.sqrt((yy - h // 2) ** 2 + (xx - w // 2) ** 2).astype(np.int64)
    sums = np.bincount(r.reshape(-1), weights=power.reshape(-1))
    hits = np.bincount(r.reshape(-1))
    return sums / np.maximum(hits, 1)


@dataclass
class SampleStatistics:
    """Distribution summaries of a sample set against a reference set."""

    intensity_histogram_distance: float
    power_spectrum_distance: float
    mean_image_l1: float
    bin_edges: np.ndarray = field(repr=False)
    sample_histogram: np.ndarray = field(repr=False)
    reference_histogram: np.ndarray = field(repr=False)
    sample_spectrum: np.ndarray = field(repr=False)
    reference_spectrum: np.ndarray = field(repr=False)


def sample_statistics(samples, reference) -> SampleStatistics:
    """Compare two image sets by intensity histogram, spectrum, and mean image.

    All distances are zero when the two sets contain the same images in any
    order. Purely diagnostic; no claim of perceptual fidelity.
    """
    samples, reference = list(samples), list(reference)
    if not samples or not reference:
        raise ValueError("both image sets must be non-empty")
    shape = samples[0].shape
    for im in samples + reference:
        if im.shape != shape:
            raise ShapeError("all images must share one shape for comparison")

    n_pixels = shape[0] * shape[1]
    s_int = np.array([im.total / n_pixels for im in samples])
    r_int = np.array([im.total / n_pixels for im in reference])
    edges = np.histogram_bin_edges(np.concatenate([s_int, r_int]), bins=_HIST_BINS)
    s_hist = np.histogram(s_int, bins=edges)[0] / len(samples)
    r_hist = np.histogram(r_int, bins=edges)[0] / len(reference)
    hist_distance = 0.5 * float(np.abs(s_hist - r_hist).sum())

    s_spec = np.mean([_radial_power_spectrum(im.counts) for im in samples], axis=0)
    r_spec = np.mean([_radial_power_spectrum(im.counts) for im in reference], axis=0)
    denom = float(np.linalg.norm(r_spec))
    spec_distance = float(np.linalg.norm(s_spec - r_spec)) / max(denom, 1e-300)

    s_mean = np.mean([im.counts.astype(np.float64) for im in samples], axis=0)
    r_mean = np.mean([im.counts.astype(np.float64) for im in reference], axis=0)
    mean_l1 = float(np.abs(s_mean - r_mean).mean())

    return SampleStatistics(
        intensity_histogram_distance=hist_distance,
        power_spectrum_distance=spec_distance,
        mean_image_l1=mean_l1,
        bin_edges=edges,
        sample_histogram=s_hist,
        reference_histogram=r_hist,
        sample_spectrum=s_spec,
        reference_spectrum=r_spec,
    )


# ---------------------------------------------------------------------------
# Evaluation reports.
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Per-image PSNR values with input noise levels and run metadata."""

    psnr_values: list
    input_pseudo_psnr: list
    metadata: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))


def make_report(estimates, ground_truths, inputs, metadata=None) -> EvalReport:
    """Score a list of estimates against scaled ground truths.

    ``inputs`` are the noisy observations the estimates came from; their
    pseudo-PSNR is recorded alongside each score.
    """
    estimates, ground_truths, inputs = list(estimates), list(ground_truths), list(inputs)
    if not (len(estimates) == len(ground_truths) == len(inputs)):
        raise ValueError("estimates, ground truths, and inputs must have equal lengths")
    values = [psnr(e, g) for e, g in zip(estimates, ground_truths)]
    in_db = [image_pseudo_psnr(im) for im in inputs]
    return EvalReport(psnr_values=values, input_pseudo_psnr=in_db, metadata=dict(metadata or {}))


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "psnr_db", "input_pseudo_psnr_db"])
        for i, (v, db) in enumerate(zip(report.psnr_values, report.input_pseudo_psnr)):
            writer.writerow([i, repr(float(v)), repr(float(db))])
        writer.writerow(["mean", repr(report.mean_psnr), ""])


def write_report_json(report: EvalReport, path) -> None:
    def _enc(v):
        # json has no Infinity literal in strict mode; use a string sentinel.
        return repr(float(v)) if math.isinf(v) else float(v)

    payload = {
        "mean_psnr_db": _enc(report.mean_psnr),
        "psnr_db": [_enc(v) for v in report.psnr_values],
        "input_pseudo_psnr_db": [_enc(v) for v in report.input_pseudo_psnr],
        "metadata": report.metadata,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
