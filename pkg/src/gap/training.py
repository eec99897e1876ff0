"""Self-supervised training loop built on binomial photon splitting.

Each training example is manufactured from a single noisy image: crop a
random patch, draw a noise level (as a pseudo-PSNR) for the input half, and
split the patch's photons binomially. The network never sees clean data;
the target half of the split is a valid noisy observation of the same
signal, which is exactly what the per-photon cross-entropy loss needs.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass

import numpy as np
import torch

from .core import PhotonImage
from .errors import (
    DivergenceError,
    EmptyDatasetError,
    EmptyRegionError,
    RangeError,
    ShapeError,
)
from .model import (
    ArchitectureConfig,
    PredictorModel,
    batch_loss_torch,
    gap_loss,
    save_checkpoint,
)
from .noise import PsnrRange, SplitPair, binomial_split, sample_split_probability

_EMPTY_PATCH_RETRIES = 100
_EMPTY_TARGET_RETRIES = 50


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters of the self-supervised loop.

    Defaults besides the pseudo-PSNR range follow the production setup;
    desk-scale runs shrink patches, steps, and epochs.
    """

    psnr_range: PsnrRange
    patch_size: int = 256
    batch_size: int = 32
    epochs: int = 100
    steps_per_epoch: int = 500
    initial_learning_rate: float = 1e-4
    plateau_patience: int = 10
    plateau_factor: float = 2.0
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        positive = {
            "patch_size": self.patch_size,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "steps_per_epoch": self.steps_per_epoch,
            "initial_learning_rate": self.initial_learning_rate,
            "plateau_patience": self.plateau_patience,
            "plateau_factor": self.plateau_factor,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    validation_loss: float
    learning_rate: float


def augment(img: PhotonImage, variant: int) -> PhotonImage:
    """Apply one of the 8 flip/transpose symmetries; variant 0 is identity.

    Bit 0 transposes, bit 1 flips rows, bit 2 flips columns (in that order).
    """
    if variant not in range(8):
        raise RangeError(f"augmentation variant must be in 0..7, got {variant}")
    c = img.counts
    if variant & 1:
        c = c.T
    if variant & 2:
        c = c[::-1, :]
    if variant & 4:
        c = c[:, ::-1]
    return PhotonImage(c)


def make_training_pair(
    img: PhotonImage, cfg: TrainingConfig, rng: np.random.Generator
) -> SplitPair:
    """Crop a random patch and split it into an input/target pair.

    Crops that contain no photons are redrawn (up to a bounded number of
    retries); the split probability is resampled per pair from the
    configured pseudo-PSNR range.
    """
    h, w = img.shape
    ps = cfg.patch_size
    if h < ps or w < ps:
        raise ShapeError(f"image {img.shape} is smaller than patch size {ps}")
    for _ in range(_EMPTY_PATCH_RETRIES):
        top = int(rng.integers(0, h - ps + 1))
        left = int(rng.integers(0, w - ps + 1))
        patch = PhotonImage(img.counts[top : top + ps, left : left + ps])
        if patch.total > 0:
            p = sample_split_probability(patch, cfg.psnr_range, rng)
            return binomial_split(patch, p, rng)
    raise EmptyRegionError(f"no non-empty {ps}x{ps} patch found in {_EMPTY_PATCH_RETRIES} tries")


def _nonempty_target_pair(
    img: PhotonImage, cfg: TrainingConfig, rng: np.random.Generator
) -> SplitPair:
    # The loss is undefined for an empty target half (possible at high split
    # probabilities and low counts), so such pairs are redrawn.
    for _ in range(_EMPTY_TARGET_RETRIES):
        pair = make_training_pair(img, cfg, rng)
        if pair.target.total > 0:
            return pair
    raise EmptyRegionError("could not draw a pair with a non-empty target")


def _sample_batch(images, cfg: TrainingConfig, rng: np.random.Generator):
    inputs, targets = [], []
    for _ in range(cfg.batch_size):
        img = images[int(rng.integers(len(images)))]
        pair = _nonempty_target_pair(img, cfg, rng)
        variant = int(rng.integers(8))
        inputs.append(augment(pair.input, variant).counts)
        targets.append(augment(pair.target, variant).counts)
    return np.stack(inputs), np.stack(targets)


def validate(model: PredictorModel, images, cfg: TrainingConfig) -> float:
    """Mean loss over deterministic validation pairs.

    Each image's pair is generated from a random stream keyed by the image
    content and the config seed, so the value is reproducible, comparable
    across epochs, and independent of list order.
    """
    if not images:
        raise EmptyDatasetError("validation set is empty")
    losses = []
    for img in images:
        key = zlib.crc32(img.counts.tobytes())
        pair_rng = np.random.default_rng([cfg.seed, key])
        pair = _nonempty_target_pair(img, cfg, pair_rng)
        losses.append(gap_loss(model.predict(pair.input), pair.target))
    return float(np.mean(losses))


def _adam_state_vectors(optimizer: torch.optim.Adam) -> dict | None:
    states = [optimizer.state.get(p) for group in optimizer.param_groups for p in group["params"]]
    if any(s is None or "exp_avg" not in s for s in states):
        return None
    m = torch.cat([s["exp_avg"].reshape(-1) for s in states]).numpy().astype(np.float64)
    v = torch.cat([s["exp_avg_sq"].reshape(-1) for s in states]).numpy().astype(np.float64)
    step = int(states[0]["step"])
    return {"step": step, "m": m, "v": v}


def train(
    images,
    cfg: TrainingConfig,
    arch: ArchitectureConfig,
    *,
    threads: int | None = None,
    log_fn=None,
    checkpoint_dir=None,
    checkpoint_every: int = 10,
):
    """Run the full self-supervised loop and return (best model, history).

    The image list is split 90/10 in the given order (first part trains,
    last part validates). Each epoch runs ``steps_per_epoch`` optimizer
    steps; the learning rate is divided by ``plateau_factor`` whenever the
    validation loss stops improving for ``plateau_patience`` epochs. The
    returned model carries the parameters of the best validation epoch.

    With ``threads=1`` the run is single-threaded and bit-reproducible for
    a fixed seed.
    """
    images = list(images)
    if len(images) < 2:
        raise EmptyDatasetError(f"need at least 2 images to split train/validation, got {len(images)}")
    if threads is not None:
        torch.set_num_threads(threads)

    n_val = max(1, int(round(len(images) * cfg.validation_fraction)))
    train_images = images[: len(images) - n_val]
    val_images = images[len(images) - n_val :]

    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    model = PredictorModel(arch, seed=cfg.seed)
    optimizer = torch.optim.Adam(model.net.parameters(), lr=cfg.initial_learning_rate)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=1.0 / cfg.plateau_factor, patience=cfg.plateau_patience
    )

    history: list[EpochStats] = []
    best_val = math.inf
    best_theta = model.theta
    best_epoch = 0
    best_opt_state = None
    global_step = 0

    if checkpoint_dir is not None:
        from pathlib import Path

        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, cfg.epochs + 1):
        step_losses = np.empty(cfg.steps_per_epoch)
        for step in range(cfg.steps_per_epoch):
            inputs, targets = _sample_batch(train_images, cfg, rng)
            loss = batch_loss_torch(model, inputs, targets)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at step {global_step}", step=global_step)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            step_losses[step] = value
            global_step += 1

        val_loss = validate(model, val_images, cfg)
        lr = float(optimizer.param_groups[0]["lr"])
        stats = EpochStats(epoch, float(step_losses.mean()), val_loss, lr)
        history.append(stats)
        if log_fn is not None:
            log_fn(
                f"epoch {epoch:4d}  train {stats.train_loss:.6f}  "
                f"val {stats.validation_loss:.6f}  lr {lr:.3e}"
            )
        scheduler.step(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_theta = model.theta
            best_epoch = epoch
            best_opt_state = _adam_state_vectors(optimizer)
            if checkpoint_dir is not None:
                save_checkpoint(
                    checkpoint_dir / "best_checkpoint.npz",
                    model,
                    epoch=epoch,
                    psnr_range=cfg.psnr_range,
                    learning_rate=lr,
                    optimizer_state=best_opt_state,
                )
        if checkpoint_dir is not None and epoch % checkpoint_every == 0:
            save_checkpoint(
                checkpoint_dir / f"checkpoint_epoch_{epoch:04d}.npz",
                model,
                epoch=epoch,
                psnr_range=cfg.psnr_range,
                learning_rate=lr,
                optimizer_state=_adam_state_vectors(optimizer),
            )

    model.theta = best_theta
    if checkpoint_dir is not None:
        write_history_csv(history, checkpoint_dir / "history.csv")
    if log_fn is not None:
        log_fn(f"best validation loss {best_val:.6f} at epoch {best_epoch}")
    return model, history


def write_history_csv(history, path) -> None:
    """Write per-epoch statistics as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "validation_loss", "learning_rate"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.validation_loss), repr(row.learning_rate)])
