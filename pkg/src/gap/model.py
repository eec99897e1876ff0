"""Learnable next-photon predictor: encoding, network, loss, gradients.

The predictor maps a photon-count image to a probability map over pixels
via a U-Net-style encoder/decoder with residual blocks and a softmax over
all pixels at the output. Raw counts are never normalized; instead each
pixel count feeds a bank of sinusoids at decade-spaced scales, which keeps
the input bounded across many orders of magnitude of photon counts.

The training loss is a per-photon cross-entropy: the log predicted
probability at each target photon's pixel, averaged over target photons and
divided by the pixel count. It is minimized exactly when the prediction
equals the normalized target, and a target with T photons contributes the
same as T single-photon targets would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import NormalizedDistribution, PhotonImage
from .errors import ShapeError, ZeroPhotonError

# Floor applied to predicted probabilities inside the loss logarithm;
# prevents -inf loss from softmax underflow.
LOSS_EPSILON = 1e-12


@dataclass(frozen=True)
class ArchitectureConfig:
    """Network hyperparameters; defaults are full production scale.

    Tests and desk-scale runs pass smaller values (e.g. 4 levels, 16 base
    channels) so everything runs on one CPU core in minutes.
    """

    levels: int = 6
    base_channels: int = 28
    encoding_frequencies: int = 10

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 1 or self.encoding_frequencies < 1:
            raise ValueError("levels, base_channels, encoding_frequencies must all be >= 1")

    @property
    def shape_divisor(self) -> int:
        return 2 ** (self.levels - 1)


def frequency_encode(img: PhotonImage, n_freq: int) -> np.ndarray:
    """Per-pixel sinusoidal encoding: channel k holds sin(count / 10**k).

    Returns an (H, W, n_freq) float array bounded in [-1, 1]. No other input
    normalization is applied anywhere in the model.
    """
    if n_freq < 1:
        raise ValueError("n_freq must be >= 1")
    x = img.counts.astype(np.float64)
    scales = 10.0 ** np.arange(n_freq)
    return np.sin(x[..., None] / scales)


def _encode_batch(counts: np.ndarray, n_freq: int) -> np.ndarray:
    # counts: (B, H, W) -> (B, n_freq, H, W), computed in float64 so the
    # sinusoids stay accurate for large counts.
    scales = 10.0 ** np.arange(n_freq)
    enc = np.sin(counts.astype(np.float64)[:, None, :, :] / scales[None, :, None, None])
    return enc


class _ResidualBlock(nn.Module):
    """Three 3x3 convolutions with ReLU after the second and after the
    residual addition; a 1x1 projection matches channels on the skip path
    when they differ. Reflective padding avoids dark borders on photon maps.
    """

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        conv = lambda a, b: nn.Conv2d(a, b, 3, padding=1, padding_mode="reflect")
        self.conv1 = conv(in_ch, out_ch)
        self.conv2 = conv(out_ch, out_ch)
        self.conv3 = conv(out_ch, out_ch)
        self.proj = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        y = self.conv3(F.relu(self.conv2(self.conv1(x))))
        return F.relu(y + self.proj(x))


class _UNet(nn.Module):
    def __init__(self, arch: ArchitectureConfig):
        super().__init__()
        chans = [arch.base_channels * 2**i for i in range(arch.levels)]
        self.down = nn.ModuleList()
        in_ch = arch.encoding_frequencies
        for c in chans[:-1]:
            self.down.append(_ResidualBlock(in_ch, c))
            in_ch = c
        self.bottom = _ResidualBlock(in_ch, chans[-1])
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(arch.levels - 1)):
            self.up.append(nn.ConvTranspose2d(chans[i + 1], chans[i], 2, stride=2))
            self.dec.append(_ResidualBlock(2 * chans[i], chans[i]))
        self.head = nn.Conv2d(chans[0], 1, 1)
        # Zero-initialized head: a fresh model predicts the uniform map.
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottom(x)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = dec(torch.cat([up(x), skip], dim=1))
        return self.head(x)[:, 0]  # (B, H, W) logits


class PredictorModel:
    """Parameterized map from photon images to next-photon probability maps.

    Parameters live in a single flat vector (the ``theta`` property), which
    is the unit of checkpointing and of finite-difference verification.
    Input heights and widths must be divisible by ``2**(levels-1)``.
    """

    def __init__(self, arch: ArchitectureConfig, *, seed: int = 0, dtype: str = "float32"):
        if dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be 'float32' or 'float64', got {dtype!r}")
        self.arch = arch
        self._torch_dtype = torch.float64 if dtype == "float64" else torch.float32
        torch.manual_seed(seed)
        self.net = _UNet(arch).to(self._torch_dtype)
        self.net.eval()

    @property
    def dtype(self) -> str:
        return "float64" if self._torch_dtype == torch.float64 else "float32"

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    @property
    def theta(self) -> np.ndarray:
        vec = torch.nn.utils.parameters_to_vector(self.net.parameters())
        return vec.detach().numpy().astype(np.float64, copy=True)

    @theta.setter
    def theta(self, values) -> None:
        vec = torch.as_tensor(np.asarray(values), dtype=self._torch_dtype)
        if vec.numel() != self.n_parameters:
            raise ValueError(f"expected {self.n_parameters} parameters, got {vec.numel()}")
        torch.nn.utils.vector_to_parameters(vec, self.net.parameters())

    def check_shape(self, shape) -> None:
        h, w = shape
        d = self.arch.shape_divisor
        if h % d or w % d or h < d or w < d:
            raise ShapeError(
                f"input shape {shape} must be divisible by {d} for {self.arch.levels} levels"
            )

    def _logits(self, counts: np.ndarray) -> torch.Tensor:
        enc = _encode_batch(counts, self.arch.encoding_frequencies)
        z = torch.as_tensor(enc, dtype=self._torch_dtype)
        return self.net(z)

    def predict(self, img: PhotonImage) -> NormalizedDistribution:
        """Softmax over all pixels of the network output for one image."""
        self.check_shape(img.shape)
        with torch.no_grad():
            logits = self._logits(img.counts[None, :, :].astype(np.float64))
            flat = torch.softmax(logits.reshape(1, -1), dim=1)
        probs = flat.numpy().astype(np.float64).reshape(img.shape)
        return NormalizedDistribution(probs / probs.sum())

    def predict_batch(self, images) -> np.ndarray:
        """Probability maps for a batch of equal-shape images, as (B, H, W)."""
        images = list(images)
        if not images:
            return np.zeros((0, 0, 0))
        shape = images[0].shape
        self.check_shape(shape)
        for im in images:
            if im.shape != shape:
                raise ShapeError("all batch images must share one shape")
        counts = np.stack([im.counts for im in images]).astype(np.float64)
        with torch.no_grad():
            logits = self._logits(counts)
            flat = torch.softmax(logits.reshape(len(images), -1), dim=1)
        probs = flat.numpy().astype(np.float64)
        probs /= probs.sum(axis=1, keepdims=True)
        return probs.reshape(len(images), *shape)


def gap_loss(prediction: NormalizedDistribution, target: PhotonImage) -> float:
    """Normalized per-photon cross-entropy between a prediction and a target.

    ``-(1 / (n * T)) * sum_i target_i * ln(max(pred_i, eps))`` with n the
    pixel count and T the target's photon total.
    """
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction shape {prediction.shape} != target shape {target.shape}")
    t_total = target.total
    if t_total == 0:
        raise ZeroPhotonError("loss is undefined for a target with zero photons")
    n = target.counts.size
    log_f = np.log(np.maximum(prediction.probs, LOSS_EPSILON))
    return float(-(log_f * target.counts.astype(np.float64)).sum() / (n * t_total))


def batch_loss_torch(model: PredictorModel, inputs: np.ndarray, targets: np.ndarray) -> torch.Tensor:
    """Differentiable mean loss over a batch of (input, target) count grids.

    ``inputs`` and ``targets`` are (B, H, W) count arrays; every target must
    contain at least one photon.
    """
    b, h, w = inputs.shape
    t = torch.as_tensor(targets.astype(np.float64), dtype=model._torch_dtype).reshape(b, -1)
    totals = t.sum(dim=1)
    if torch.any(totals <= 0):
        raise ZeroPhotonError("every target in a batch needs at least one photon")
    logits = model._logits(inputs)
    probs = torch.softmax(logits.reshape(b, -1), dim=1)
    log_f = torch.log(torch.clamp(probs, min=LOSS_EPSILON))
    per_example = -(log_f * t).sum(dim=1) / (h * w * totals)
    return per_example.mean()


def loss_gradient(model: PredictorModel, input_img: PhotonImage, target_img: PhotonImage) -> np.ndarray:
    """Gradient of the loss with respect to the flat parameter vector."""
    if input_img.shape != target_img.shape:
        raise ShapeError("input and target shapes must match")
    if target_img.total == 0:
        raise ZeroPhotonError("loss is undefined for a target with zero photons")
    model.check_shape(input_img.shape)
    model.net.zero_grad(set_to_none=True)
    loss = batch_loss_torch(
        model, input_img.counts[None].astype(np.float64), target_img.counts[None].astype(np.float64)
    )
    loss.backward()
    grads = [
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in model.net.parameters()
    ]
    model.net.zero_grad(set_to_none=True)
    return torch.cat(grads).numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# Checkpoints: a versioned .npz container with the architecture descriptor,
# the flat parameter vector, optimizer state, epoch counter, and the training
# pseudo-PSNR range. No pickling, so files stay portable.
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: PredictorModel
    epoch: int
    psnr_range: tuple | None
    learning_rate: float | None
    optimizer_state: dict | None


def save_checkpoint(
    path,
    model: PredictorModel,
    *,
    epoch: int = 0,
    psnr_range=None,
    learning_rate: float | None = None,
    optimizer_state: dict | None = None,
) -> None:
    """Write a model (and optionally optimizer state) to a .npz checkpoint."""
    payload = {
        "format_version": np.int64(CHECKPOINT_FORMAT_VERSION),
        "levels": np.int64(model.arch.levels),
        "base_channels": np.int64(model.arch.base_channels),
        "encoding_frequencies": np.int64(model.arch.encoding_frequencies),
        "dtype": np.str_(model.dtype),
        "theta": model.theta,
        "epoch": np.int64(epoch),
        "psnr_lo": np.float64(psnr_range.lo if psnr_range is not None else np.nan),
        "psnr_hi": np.float64(psnr_range.hi if psnr_range is not None else np.nan),
        "learning_rate": np.float64(learning_rate if learning_rate is not None else np.nan),
    }
    if optimizer_state is not None:
        payload["adam_step"] = np.int64(optimizer_state["step"])
        payload["adam_m"] = np.asarray(optimizer_state["m"], dtype=np.float64)
        payload["adam_v"] = np.asarray(optimizer_state["v"], dtype=np.float64)
    np.savez_compressed(str(path), **payload)


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    from .noise import PsnrRange

    with np.load(str(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version > CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"checkpoint format {version} is newer than supported")
        arch = ArchitectureConfig(
            levels=int(data["levels"]),
            base_channels=int(data["base_channels"]),
            encoding_frequencies=int(data["encoding_frequencies"]),
        )
        model = PredictorModel(arch, dtype=str(data["dtype"]))
        model.theta = data["theta"]
        lo, hi = float(data["psnr_lo"]), float(data["psnr_hi"])
        psnr_range = None if np.isnan(lo) else PsnrRange(lo, hi)
        lr = float(data["learning_rate"])
        epoch = int(data["epoch"])
        opt_state = None
        if "adam_step" in data.files:
            opt_state = {
                "step": int(data["adam_step"]),
                "m": data["adam_m"].copy(),
                "v": data["adam_v"].copy(),
            }
    return Checkpoint(
        model=model,
        epoch=epoch,
        psnr_range=psnr_range,
        learning_rate=None if np.isnan(lr) else lr,
        optimizer_state=opt_state,
    )
