"""Generative accumulation of photons: shot-noise denoising and generation.

The package views a shot-noise image as the running total of a photon
sequence. A model trained to predict where the next photon lands is, for
normalized signals, an MMSE denoiser; sampling photons from its output and
feeding the growing canvas back in yields diverse denoising and, from an
empty canvas, unconditional generation. An exact finite-prior oracle
provides ground truth for all of it at desk scale.
"""

from .core import (
    NormalizedDistribution,
    PhotonImage,
    PhotonSequence,
    from_photon_sequence,
    normalize,
    read_pgm,
    read_tiff,
    read_tiff_stack,
    total_photons,
    write_pgm,
    write_tiff,
    write_tiff_stack,
)
from .errors import GapError
from .metrics import image_pseudo_psnr, psnr, sample_statistics, scale_ground_truth
from .model import (
    ArchitectureConfig,
    PredictorModel,
    frequency_encode,
    gap_loss,
    load_checkpoint,
    loss_gradient,
    save_checkpoint,
)
from .noise import (
    PsnrRange,
    SplitPair,
    binomial_split,
    intensity_for_pseudo_psnr,
    pseudo_psnr,
    sample_shot_noise,
    sample_split_probability,
)
from .oracle import (
    OraclePredictor,
    SignalPrior,
    log_likelihood,
    mmse_estimate,
    next_photon_distribution,
    posterior,
    sequence_log_prob,
    two_template_prior,
)
from .sampler import (
    ExpertRegistry,
    SamplerConfig,
    accumulate,
    accumulate_batch,
    gap_step,
    mmse_denoise,
    select_expert,
)
from .training import TrainingConfig, augment, make_training_pair, train, validate

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig",
    "ExpertRegistry",
    "GapError",
    "NormalizedDistribution",
    "OraclePredictor",
    "PhotonImage",
    "PhotonSequence",
    "PredictorModel",
    "PsnrRange",
    "SamplerConfig",
    "SignalPrior",
    "SplitPair",
    "TrainingConfig",
    "accumulate",
    "accumulate_batch",
    "augment",
    "binomial_split",
    "frequency_encode",
    "from_photon_sequence",
    "gap_loss",
    "gap_step",
    "image_pseudo_psnr",
    "intensity_for_pseudo_psnr",
    "load_checkpoint",
    "log_likelihood",
    "loss_gradient",
    "make_training_pair",
    "mmse_denoise",
    "mmse_estimate",
    "next_photon_distribution",
    "normalize",
    "posterior",
    "pseudo_psnr",
    "psnr",
    "read_pgm",
    "read_tiff",
    "read_tiff_stack",
    "sample_shot_noise",
    "sample_split_probability",
    "sample_statistics",
    "save_checkpoint",
    "scale_ground_truth",
    "select_expert",
    "sequence_log_prob",
    "total_photons",
    "train",
    "two_template_prior",
    "validate",
    "write_pgm",
    "write_tiff",
    "write_tiff_stack",
]
