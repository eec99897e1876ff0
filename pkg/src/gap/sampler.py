"""Inference by photon accumulation.

One-shot denoising multiplies the predicted probability map by the observed
photon total. Diversity denoising and unconditional generation both run the
same iterative loop: predict the next-photon distribution, add a Poisson
batch of photons whose expected size is a fixed fraction of the current
count (at least one), and repeat until a target photon count is reached.
The final approach places exactly the remaining photons, so every finished
trajectory lands on the target total.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PhotonImage, write_tiff
from .errors import RegistryCoverageError, ZeroPhotonError
from .noise import PsnrRange, pseudo_psnr


@dataclass(frozen=True)
class SamplerConfig:
    """Accumulation parameters.

    ``beta`` is the per-step growth rate of the photon count;
    ``target_photons`` is the stop criterion. With
    ``scale_rate_by_pixel_count`` set, per-pixel Poisson means are
    additionally multiplied by the pixel count (an alternative convention
    kept for comparison; the expected increment then becomes n times
    larger and trajectories overshoot the target).
    """

    target_photons: int
    beta: float = 0.1
    record_trajectory: bool = False
    scale_rate_by_pixel_count: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.target_photons < 1:
            raise ValueError(f"target_photons must be >= 1, got {self.target_photons}")


@dataclass
class AccumulationResult:
    image: PhotonImage
    trajectory: list | None


class ExpertRegistry:
    """Predictors specialized to contiguous half-open pseudo-PSNR ranges.

    Ranges are [lo, hi): a value exactly at a boundary belongs to the upper
    range. An empty image dispatches to the lowest range.
    """

    def __init__(self, entries):
        entries = sorted(entries, key=lambda e: e[0].lo)
        if not entries:
            raise ValueError("registry needs at least one entry")
        for (a, _), (b, _) in zip(entries, entries[1:]):
            if a.hi != b.lo:
                raise ValueError(
                    f"ranges must tile the span without gaps or overlap: "
                    f"[{a.lo}, {a.hi}) then [{b.lo}, {b.hi})"
                )
        self.entries = tuple((PsnrRange(r.lo, r.hi), m) for r, m in entries)

    @property
    def span(self) -> PsnrRange:
        return PsnrRange(self.entries[0][0].lo, self.entries[-1][0].hi)

    def __len__(self) -> int:
        return len(self.entries)


def select_expert(registry: ExpertRegistry, img: PhotonImage):
    """Pick the expert whose range contains the image's pseudo-PSNR."""
    if img.total == 0:
        return registry.entries[0][1]
    db = pseudo_psnr(img.total / img.counts.size)
    for rng_, model in registry.entries:
        if rng_.contains(db):
            return model
    raise RegistryCoverageError(f"no expert range covers {db:.2f} dB")


def _resolve_predictor(model_or_registry, img: PhotonImage):
    if isinstance(model_or_registry, ExpertRegistry):
        return select_expert(model_or_registry, img)
    return model_or_registry


def mmse_denoise(model, img: PhotonImage) -> np.ndarray:
    """Scaled single-step denoising: probability map times photon total."""
    if img.total == 0:
        raise ZeroPhotonError("cannot denoise an image with zero photons")
    return model.predict(img).probs * img.total


def gap_step(model, img: PhotonImage, cfg: SamplerConfig, rng: np.random.Generator) -> PhotonImage:
    """One accumulation step: add Poisson photons along the predicted map.

    The expected number of new photons is ``max(beta * total, 1)``; the
    photon count never decreases.
    """
    probs = _resolve_predictor(model, img).predict(img).probs
    alpha = max(cfg.beta * img.total, 1.0)
    lam = probs * alpha
    if cfg.scale_rate_by_pixel_count:
        lam = lam * img.counts.size
    return img + PhotonImage(rng.poisson(lam))


def accumulate(
    model_or_registry, start: PhotonImage, cfg: SamplerConfig, rng: np.random.Generator
) -> AccumulationResult:
    """Accumulate photons until the target count is reached exactly.

    While the geometric increment stays below the remaining deficit, plain
    Poisson steps run; once it would cross the target, the remaining
    photons are placed exactly (a multinomial draw along the current
    prediction), so the final total equals ``target_photons`` whenever the
    start image is below it. In the pixel-count-scaled comparison mode the
    exact finish is skipped and trajectories overshoot.
    """
    trajectory = [start] if cfg.record_trajectory else None
    img = start
    while img.total < cfg.target_photons:
        deficit = cfg.target_photons - img.total
        alpha = max(cfg.beta * img.total, 1.0)
        if not cfg.scale_rate_by_pixel_count and alpha >= deficit:
            predictor = _resolve_predictor(model_or_registry, img)
            probs = predictor.predict(img).probs
            new = rng.multinomial(deficit, probs.reshape(-1)).reshape(img.shape)
            img = img + PhotonImage(new)
        else:
            img = gap_step(model_or_registry, img, cfg, rng)
        if trajectory is not None:
            trajectory.append(img)
    return AccumulationResult(img, trajectory)


def accumulate_batch(
    model_or_registry, starts, cfg: SamplerConfig, rng: np.random.Generator
) -> list[AccumulationResult]:
    """Run many trajectories in lockstep, batching network evaluations.

    Equivalent in distribution to independent :func:`accumulate` calls;
    trajectories that reach the target stop stepping while the rest
    continue.
    """
    starts = list(starts)
    images = list(starts)
    trajectories = [[s] if cfg.record_trajectory else None for s in starts]
    active = [i for i, im in enumerate(images) if im.total < cfg.target_photons]
    while active:
        by_predictor: dict[int, list[int]] = {}
        predictors = {}
        for i in active:
            pred = _resolve_predictor(model_or_registry, images[i])
            by_predictor.setdefault(id(pred), []).append(i)
            predictors[id(pred)] = pred
        prob_maps: dict[int, np.ndarray] = {}
        for key, idxs in by_predictor.items():
            pred = predictors[key]
            batch = [images[i] for i in idxs]
            if hasattr(pred, "predict_batch") and len({im.shape for im in batch}) == 1:
                probs = pred.predict_batch(batch)
            else:
                probs = np.stack([pred.predict(im).probs for im in batch])
            for j, i in enumerate(idxs):
                prob_maps[i] = probs[j]
        for i in sorted(active):
            img = images[i]
            probs = prob_maps[i]
            deficit = cfg.target_photons - img.total
            alpha = max(cfg.beta * img.total, 1.0)
            if not cfg.scale_rate_by_pixel_count and alpha >= deficit:
                new = rng.multinomial(deficit, probs.reshape(-1)).reshape(img.shape)
            else:
                lam = probs * alpha
                if cfg.scale_rate_by_pixel_count:
                    lam = lam * img.counts.size
                new = rng.poisson(lam)
            images[i] = img + PhotonImage(new)
            if trajectories[i] is not None:
                trajectories[i].append(images[i])
        active = [i for i in active if images[i].total < cfg.target_photons]
    return [AccumulationResult(im, tr) for im, tr in zip(images, trajectories)]


def write_trajectory(result: AccumulationResult, out_dir, prefix: str = "step") -> None:
    """Write a recorded trajectory as numbered TIFFs plus a CSV summary."""
    if result.trajectory is None:
        raise ValueError("trajectory was not recorded; set record_trajectory=True")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total_photons", "pseudo_psnr"])
        for step, img in enumerate(result.trajectory):
            write_tiff(img, out_dir / f"{prefix}_{step:04d}.tif")
            total = img.total
            db = pseudo_psnr(total / img.counts.size) if total > 0 else float("-inf")
            writer.writerow([step, total, repr(db)])
