"""Exact Bayesian reference computations over finite signal priors.

With a finite prior (a weighted set of candidate Poisson-mean grids),
the posterior over candidates, the posterior-mean (MMSE) estimate, and the
distribution of the next photon's location can all be computed in closed
form. The next-photon distribution is the posterior-weighted average of the
normalized candidate signals; when every candidate is itself normalized it
coincides exactly with the MMSE estimate. These quantities are the ground
truth that the learned predictor approximates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import NormalizedDistribution, PhotonImage, PhotonSequence, from_photon_sequence
from .errors import DegeneratePosteriorError, InvalidSignalError, ShapeError

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SignalPrior:
    """Finite weighted set of candidate signals (scaled Poisson-mean grids)."""

    signals: tuple
    weights: np.ndarray

    def __post_init__(self):
        sigs = tuple(np.asarray(s, dtype=np.float64) for s in self.signals)
        if not sigs:
            raise ValueError("prior needs at least one signal")
        shape = sigs[0].shape
        for s in sigs:
            if s.ndim != 2 or s.shape != shape:
                raise ShapeError("all prior signals must share one 2D shape")
            if not np.all(np.isfinite(s)) or np.any(s < 0):
                raise InvalidSignalError("prior signals must be finite and non-negative")
            s.setflags(write=False)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.size != len(sigs):
            raise ValueError("need exactly one weight per signal")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("weights must be non-negative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "signals", sigs)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, signals) -> "SignalPrior":
        signals = list(signals)
        return cls(tuple(signals), np.full(len(signals), 1.0 / len(signals)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.signals[0].shape

    @property
    def support_size(self) -> int:
        return len(self.signals)


@dataclass(frozen=True, eq=False)
class PosteriorWeights:
    """Posterior probabilities over a prior's support points."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("posterior weights must be non-negative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def log_likelihood(signal, img: PhotonImage) -> float:
    """Log-probability of the observed counts under independent Poisson pixels.

    Uses the convention 0*ln(0) = 0; returns -inf when a photon was observed
    at a pixel whose mean is zero.
    """
    s = np.asarray(signal, dtype=np.float64)
    if s.shape != img.shape:
        raise ShapeError(f"signal shape {s.shape} != image shape {img.shape}")
    x = img.counts.astype(np.float64)
    observed = x > 0
    if np.any(observed & (s == 0)):
        return float("-inf")
    ll = float(
        np.sum(x[observed] * np.log(s[observed])) - s.sum() - gammaln(x + 1.0).sum()
    )
    return ll


def posterior(prior: SignalPrior, img: PhotonImage) -> PosteriorWeights:
    """Posterior over the prior's support, proportional to weight x likelihood.

    Normalization happens in log space, so likelihood spreads of hundreds of
    nats are handled without overflow or underflow.
    """
    log_w = np.empty(prior.support_size)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior.weights)
    for k, s in enumerate(prior.signals):
        log_w[k] = log_prior[k] + log_likelihood(s, img)
    if np.all(np.isinf(log_w) & (log_w < 0)):
        raise DegeneratePosteriorError("observation is impossible under every prior signal")
    log_norm = logsumexp(log_w)
    return PosteriorWeights(np.exp(log_w - log_norm))


def mmse_estimate(prior: SignalPrior, img: PhotonImage) -> np.ndarray:
    """Posterior mean of the signal: the optimum of squared-error denoising."""
    w = posterior(prior, img).weights
    out = np.zeros(prior.shape)
    for wk, s in zip(w, prior.signals):
        out += wk * s
    return out


def next_photon_distribution(prior: SignalPrior, img: PhotonImage) -> NormalizedDistribution:
    """Probability map of the next photon's pixel given the observation.

    Equals the posterior-weighted average of the normalized candidate
    signals; for priors whose signals are already normalized this is the
    MMSE estimate itself.
    """
    totals = np.array([s.sum() for s in prior.signals])
    if np.any(totals == 0):
        raise InvalidSignalError("every prior signal needs a positive total")
    w = posterior(prior, img).weights
    out = np.zeros(prior.shape)
    for wk, s, tot in zip(w, prior.signals, totals):
        out += wk * (s / tot)
    return NormalizedDistribution(out)


def sequence_log_prob(prior: SignalPrior, seq: PhotonSequence) -> float:
    """Log-probability of an ordered photon sequence.

    Factorizes over photons, each conditioned on the image accumulated from
    the preceding ones; the order of previous photons carries no information,
    so the value is invariant under permutations of the sequence.
    """
    if seq.shape != prior.shape:
        raise ShapeError(f"sequence grid {seq.shape} != prior shape {prior.shape}")
    h, w = seq.shape
    canvas = np.zeros((h, w), dtype=np.int64)
    log_prob = 0.0
    for flat_idx in seq.positions:
        step_probs = next_photon_distribution(prior, PhotonImage(canvas)).probs
        p = step_probs.reshape(-1)[flat_idx]
        if p == 0.0:
            return float("-inf")
        log_prob += float(np.log(p))
        canvas.reshape(-1)[flat_idx] += 1
    return log_prob


class OraclePredictor:
    """Adapter exposing the exact next-photon map through a predict() method.

    Lets the photon-accumulation sampler run against the exact reference
    instead of a learned model.
    """

    def __init__(self, prior: SignalPrior):
        self.prior = prior

    def predict(self, img: PhotonImage) -> NormalizedDistribution:
        return next_photon_distribution(self.prior, img)


def two_template_prior() -> SignalPrior:
    """Bundled two-pixel reference fixture: uniform over (2,1) and (1,2)."""
    return SignalPrior.uniform([np.array([[2.0, 1.0]]), np.array([[1.0, 2.0]])])


# ---------------------------------------------------------------------------
# Plain-text fixture format: one header line "H W K", then for each support
# point a weight line followed by H rows of W space-separated values.
# ---------------------------------------------------------------------------


def save_prior(prior: SignalPrior, path) -> None:
    """Write a prior in the plain-text fixture format."""
    h, w = prior.shape
    lines = [f"{h} {w} {prior.support_size}"]
    for weight, signal in zip(prior.weights, prior.signals):
        lines.append(repr(float(weight)))
        for row in signal:
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_prior(path) -> SignalPrior:
    """Read a prior written by :func:`save_prior`."""
    raw = [
        line.split("#", 1)[0].strip()
        for line in Path(path).read_text().splitlines()
    ]
    lines = [line for line in raw if line]
    try:
        h, w, k = (int(t) for t in lines[0].split())
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: header must be 'H W K'") from exc
    if len(lines) != 1 + k * (1 + h):
        raise ValueError(f"{path}: expected {1 + k * (1 + h)} lines, found {len(lines)}")
    weights, signals = [], []
    cursor = 1
    for _ in range(k):
        weights.append(float(lines[cursor]))
        cursor += 1
        rows = []
        for _ in range(h):
            row = [float(t) for t in lines[cursor].split()]
            if len(row) != w:
                raise ValueError(f"{path}: expected {w} values per row")
            rows.append(row)
            cursor += 1
        signals.append(np.array(rows))
    return SignalPrior(tuple(signals), np.array(weights))
