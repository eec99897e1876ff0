"""Command-line entry point covering the pipeline end to end.

Every stochastic command runs from an explicit or generated seed, prints
it, and records it, together with the full effective configuration, in a
``manifest.json`` next to the outputs, so any artifact directory can be
reproduced by re-running the command it describes.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import PhotonImage, read_tiff, read_tiff_stack, write_float_tiff, write_tiff
from .errors import ConfigError, GapError
from .metrics import make_report, psnr, write_report_csv, write_report_json
from .model import ArchitectureConfig, load_checkpoint
from .noise import PsnrRange, sample_shot_noise
from .oracle import (
    SignalPrior,
    load_prior,
    mmse_estimate,
    next_photon_distribution,
    posterior,
    sequence_log_prob,
    two_template_prior,
)
from .sampler import SamplerConfig, accumulate, mmse_denoise, write_trajectory
from .training import TrainingConfig, train, write_history_csv
from .datasets import (
    bin_localizations,
    read_localizations,
    reject_empty,
    split_every_nth,
    sum_frames,
    thin,
    tile,
)


# ---------------------------------------------------------------------------
# Option tables: one source of truth for flags, config-file keys, and types.
# ---------------------------------------------------------------------------


def _bool(text):
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class Opt:
    def __init__(self, dest, type_, default=None, required=False, help=""):
        self.dest = dest
        self.type = type_
        self.default = default
        self.required = required
        self.help = help


_COMMON = [Opt("config", str, help="key = value config file; flags override it")]

_OPTIONS = {
    "simulate": _COMMON
    + [
        Opt("signal", str, required=True, help="signal TIFF (Poisson means)"),
        Opt("pseudo_psnr", float, help="rescale the signal to this noise level (dB)"),
        Opt("count", int, default=1, help="number of noisy samples"),
        Opt("out", str, required=True),
        Opt("seed", int),
    ],
    "prepare-data": _COMMON
    + [
        Opt("op", str, required=True, help="bin | thin | sum | split | tile"),
        Opt("input", str, required=True, help="localization CSV, TIFF stack, or TIFF dir"),
        Opt("out", str, required=True),
        Opt("bin_nm", float, help="bin size in nm (op=bin)"),
        Opt("extent", str, help="x0,y0,x1,y1 in nm (op=bin)"),
        Opt("p", float, help="keep probability (op=thin)"),
        Opt("k", int, help="frames per group (op=sum)"),
        Opt("every", int, help="test period (op=split)"),
        Opt("offset", int, help="test offset (op=split)"),
        Opt("tile_size", int, help="tile edge in pixels (op=tile)"),
        Opt("min_photons", int, default=0, help="drop tiles at or below this total (op=tile)"),
        Opt("seed", int),
    ],
    "train": _COMMON
    + [
        Opt("data", str, required=True, help="training TIFF stack or directory"),
        Opt("out", str, required=True),
        Opt("psnr_lo", float, required=True, help="lower pseudo-PSNR bound (dB)"),
        Opt("psnr_hi", float, required=True, help="upper pseudo-PSNR bound (dB)"),
        Opt("patch_size", int, default=256),
        Opt("batch_size", int, default=32),
        Opt("epochs", int, default=100),
        Opt("steps_per_epoch", int, default=500),
        Opt("learning_rate", float, default=1e-4),
        Opt("plateau_patience", int, default=10),
        Opt("plateau_factor", float, default=2.0),
        Opt("validation_fraction", float, default=0.1),
        Opt("levels", int, default=6),
        Opt("base_channels", int, default=28),
        Opt("encoding_frequencies", int, default=10),
        Opt("checkpoint_every", int, default=10),
        Opt("seed", int),
        Opt("threads", int),
    ],
    "denoise": _COMMON
    + [
        Opt("checkpoint", str, required=True),
        Opt("input", str, required=True, help="noisy TIFF file or directory"),
        Opt("out", str, required=True),
        Opt("threads", int),
    ],
    "sample": _COMMON
    + [
        Opt("checkpoint", str, required=True),
        Opt("input", str, required=True, help="noisy TIFF to denoise diversely"),
        Opt("target_photons", int, required=True),
        Opt("trajectories", int, default=3),
        Opt("beta", float, default=0.1),
        Opt("out", str, required=True),
        Opt("seed", int),
        Opt("threads", int),
    ],
    "generate": _COMMON
    + [
        Opt("checkpoint", str, required=True),
        Opt("height", int, required=True),
        Opt("width", int, required=True),
        Opt("target_photons", int, required=True),
        Opt("count", int, default=1),
        Opt("beta", float, default=0.1),
        Opt("record_trajectory", _bool, default=False),
        Opt("out", str, required=True),
        Opt("seed", int),
        Opt("threads", int),
    ],
    "evaluate": _COMMON
    + [
        Opt("checkpoint", str, required=True),
        Opt("input", str, required=True, help="noisy TIFF file or directory"),
        Opt("ground_truth", str, required=True, help="scaled ground-truth TIFF file or directory"),
        Opt("out", str, required=True),
        Opt("threads", int),
    ],
    "oracle-check": _COMMON
    + [
        Opt("prior", str, help="optional prior fixture file to check as well"),
        Opt("seed", int, default=0),
    ],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gap",
        description="Shot-noise denoising and generative photon accumulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in _OPTIONS.items():
        p = sub.add_parser(command)
        for opt in options:
            flag = "--" + opt.dest.replace("_", "-")
            if opt.type is _bool:
                p.add_argument(flag, dest=opt.dest, nargs="?", const=True, default=None,
                               type=_bool, help=opt.help)
            else:
                p.add_argument(flag, dest=opt.dest, type=opt.type, default=None, help=opt.help)
    return parser


def _load_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _effective_config(command: str, args: argparse.Namespace) -> dict:
    options = {opt.dest: opt for opt in _OPTIONS[command]}
    merged = {dest: opt.default for dest, opt in options.items()}
    if args.config is not None:
        for key, raw in _load_config_file(args.config).items():
            if key not in options:
                raise ConfigError(key, f"unknown config key for command {command!r}")
            try:
                merged[key] = options[key].type(raw)
            except ValueError as exc:
                raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from exc
    for dest in options:
        cli_value = getattr(args, dest)
        if cli_value is not None:
            merged[dest] = cli_value
    for dest, opt in options.items():
        if opt.required and merged[dest] is None:
            raise ConfigError(dest, "required value is missing")
    return merged


def _resolve_seed(cfg: dict) -> int:
    seed = cfg.get("seed")
    if seed is None:
        seed = int.from_bytes(os.urandom(4), "big")
        cfg["seed"] = seed
    print(f"seed: {cfg['seed']}")
    return int(cfg["seed"])


def _set_threads(cfg: dict) -> None:
    if cfg.get("threads") is not None:
        import torch

        torch.set_num_threads(int(cfg["threads"]))


def _write_manifest(out_dir, command: str, cfg: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": {k: v for k, v in sorted(cfg.items()) if k != "config"},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_images(path) -> tuple[list[str], list[PhotonImage]]:
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".tif", ".tiff"))
        if not files:
            raise GapError(f"no TIFF files found in {path}")
        names, images = [], []
        for p in files:
            for i, img in enumerate(read_tiff_stack(p)):
                names.append(f"{p.stem}_{i:04d}" if i else p.stem)
                images.append(img)
        return names, images
    stack = read_tiff_stack(path)
    return [f"{path.stem}_{i:04d}" for i in range(len(stack))], stack


def _load_float_grids(path) -> list[np.ndarray]:
    import tifffile

    path = Path(path)
    files = (
        sorted(p for p in path.iterdir() if p.suffix.lower() in (".tif", ".tiff"))
        if path.is_dir()
        else [path]
    )
    grids = []
    for p in files:
        arr = np.asarray(tifffile.imread(str(p)), dtype=np.float64)
        if arr.ndim == 2:
            grids.append(arr)
        elif arr.ndim == 3:
            grids.extend(arr)
        else:
            raise GapError(f"{p}: expected 2D or 3D TIFF")
    return grids


# ---------------------------------------------------------------------------
# Command implementations.
# ---------------------------------------------------------------------------


def _cmd_simulate(cfg: dict) -> int:
    import tifffile

    seed = _resolve_seed(cfg)
    rng = np.random.default_rng(seed)
    signal = np.asarray(tifffile.imread(cfg["signal"]), dtype=np.float64)
    if signal.ndim != 2:
        raise ConfigError("signal", "must be a single-page 2D TIFF")
    if cfg["pseudo_psnr"] is not None:
        total = signal.sum()
        if total <= 0:
            raise ConfigError("signal", "cannot rescale a signal with non-positive total")
        gamma = 10.0 ** (cfg["pseudo_psnr"] / 10.0)
        signal = gamma * signal.size * (signal / total)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for i in range(cfg["count"]):
        write_tiff(sample_shot_noise(signal, rng), out / f"noisy_{i:04d}.tif")
    _write_manifest(out, "simulate", cfg)
    return 0


def _parse_extent(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise ConfigError("extent", "expected four comma-separated numbers x0,y0,x1,y1")
    return tuple(parts)


def _cmd_prepare_data(cfg: dict) -> int:
    op = cfg["op"]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if op == "bin":
        if cfg["bin_nm"] is None:
            raise ConfigError("bin_nm", "required for op=bin")
        extent = _parse_extent(cfg["extent"]) if cfg["extent"] else None
        table = read_localizations(cfg["input"], extent=extent)
        write_tiff(bin_localizations(table, cfg["bin_nm"]), out / "binned_0000.tif")
    elif op == "thin":
        if cfg["p"] is None:
            raise ConfigError("p", "required for op=thin")
        seed = _resolve_seed(cfg)
        rng = np.random.default_rng(seed)
        _, images = _load_images(cfg["input"])
        for i, img in enumerate(images):
            write_tiff(thin(img, cfg["p"], rng), out / f"thinned_{i:04d}.tif")
    elif op == "sum":
        if cfg["k"] is None:
            raise ConfigError("k", "required for op=sum")
        _, images = _load_images(cfg["input"])
        for i, img in enumerate(sum_frames(images, cfg["k"])):
            write_tiff(img, out / f"summed_{i:04d}.tif")
    elif op == "split":
        if cfg["every"] is None or cfg["offset"] is None:
            raise ConfigError("every", "op=split needs both --every and --offset")
        _, images = _load_images(cfg["input"])
        split = split_every_nth(images, cfg["every"], cfg["offset"])
        for name, part in (("train", split.train), ("test", split.test)):
            part_dir = out / name
            part_dir.mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(part):
                write_tiff(img, part_dir / f"img_{i:04d}.tif")
    elif op == "tile":
        if cfg["tile_size"] is None:
            raise ConfigError("tile_size", "required for op=tile")
        _, images = _load_images(cfg["input"])
        tiles = [t for img in images for t in tile(img, cfg["tile_size"])]
        for i, img in enumerate(reject_empty(tiles, cfg["min_photons"])):
            write_tiff(img, out / f"tile_{i:04d}.tif")
    else:
        raise ConfigError("op", f"unknown operation {op!r}")
    _write_manifest(out, "prepare-data", cfg)
    return 0


def _cmd_train(cfg: dict) -> int:
    seed = _resolve_seed(cfg)
    _set_threads(cfg)
    _, images = _load_images(cfg["data"])
    training_cfg = TrainingConfig(
        psnr_range=PsnrRange(cfg["psnr_lo"], cfg["psnr_hi"]),
        patch_size=cfg["patch_size"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        steps_per_epoch=cfg["steps_per_epoch"],
        initial_learning_rate=cfg["learning_rate"],
        plateau_patience=cfg["plateau_patience"],
        plateau_factor=cfg["plateau_factor"],
        validation_fraction=cfg["validation_fraction"],
        seed=seed,
    )
    arch = ArchitectureConfig(
        levels=cfg["levels"],
        base_channels=cfg["base_channels"],
        encoding_frequencies=cfg["encoding_frequencies"],
    )
    out = Path(cfg["out"])
    _write_manifest(out, "train", cfg)
    _, history = train(
        images,
        training_cfg,
        arch,
        threads=cfg["threads"],
        log_fn=print,
        checkpoint_dir=out,
        checkpoint_every=cfg["checkpoint_every"],
    )
    write_history_csv(history, out / "history.csv")
    return 0


def _cmd_denoise(cfg: dict) -> int:
    _set_threads(cfg)
    model = load_checkpoint(cfg["checkpoint"]).model
    names, images = _load_images(cfg["input"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for name, img in zip(names, images):
        write_float_tiff(mmse_denoise(model, img), out / f"denoised_{name}.tif")
    _write_manifest(out, "denoise", cfg)
    return 0


def _cmd_sample(cfg: dict) -> int:
    seed = _resolve_seed(cfg)
    _set_threads(cfg)
    model = load_checkpoint(cfg["checkpoint"]).model
    start = read_tiff(cfg["input"])
    sampler_cfg = SamplerConfig(
        target_photons=cfg["target_photons"], beta=cfg["beta"], record_trajectory=True
    )
    rng = np.random.default_rng(seed)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for t in range(cfg["trajectories"]):
        result = accumulate(model, start, sampler_cfg, rng)
        write_trajectory(result, out / f"trajectory_{t:03d}")
        write_tiff(result.image, out / f"final_{t:03d}.tif")
    _write_manifest(out, "sample", cfg)
    return 0


def _cmd_generate(cfg: dict) -> int:
    seed = _resolve_seed(cfg)
    _set_threads(cfg)
    model = load_checkpoint(cfg["checkpoint"]).model
    sampler_cfg = SamplerConfig(
        target_photons=cfg["target_photons"],
        beta=cfg["beta"],
        record_trajectory=bool(cfg["record_trajectory"]),
    )
    rng = np.random.default_rng(seed)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    blank = PhotonImage.zeros((cfg["height"], cfg["width"]))
    for i in range(cfg["count"]):
        result = accumulate(model, blank, sampler_cfg, rng)
        write_tiff(result.image, out / f"generated_{i:04d}.tif")
        if sampler_cfg.record_trajectory:
            write_trajectory(result, out / f"trajectory_{i:03d}")
    _write_manifest(out, "generate", cfg)
    return 0


def _cmd_evaluate(cfg: dict) -> int:
    _set_threads(cfg)
    model = load_checkpoint(cfg["checkpoint"]).model
    _, images = _load_images(cfg["input"])
    ground_truths = _load_float_grids(cfg["ground_truth"])
    if len(ground_truths) == 1 and len(images) > 1:
        ground_truths = ground_truths * len(images)
    if len(ground_truths) != len(images):
        raise ConfigError("ground_truth", "need one grid, or one per input image")
    estimates = [mmse_denoise(model, img) for img in images]
    report = make_report(
        estimates,
        ground_truths,
        images,
        metadata={"checkpoint": str(cfg["checkpoint"]), "input": str(cfg["input"])},
    )
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv")
    write_report_json(report, out / "report.json")
    print(f"mean PSNR: {report.mean_psnr:.4f} dB over {len(images)} image(s)")
    _write_manifest(out, "evaluate", cfg)
    return 0


def _check(description: str, ok: bool, failures: list) -> None:
    print(f"{'PASS' if ok else 'FAIL'}  {description}")
    if not ok:
        failures.append(description)


def _cmd_oracle_check(cfg: dict) -> int:
    from .core import PhotonSequence

    rng = np.random.default_rng(cfg["seed"])
    failures: list[str] = []

    fixture = two_template_prior()
    obs = PhotonImage(np.array([[1, 0]]))
    w = posterior(fixture, obs).weights
    print(f"two-template posterior: ({w[0]:.12f}, {w[1]:.12f})")
    _check("two-template posterior equals (2/3, 1/3)",
           np.allclose(w, [2 / 3, 1 / 3], atol=1e-12), failures)
    npd = next_photon_distribution(fixture, obs).probs
    _check("two-template next-photon map equals (5/9, 4/9)",
           np.allclose(npd, [[5 / 9, 4 / 9]], atol=1e-12), failures)
    est = mmse_estimate(fixture, obs)
    _check("two-template MMSE estimate equals (5/3, 4/3)",
           np.allclose(est, [[5 / 3, 4 / 3]], atol=1e-12), failures)

    worst = 0.0
    for _ in range(50):
        h, w_ = rng.integers(1, 5, size=2)
        k = int(rng.integers(1, 17))
        signals = [s / s.sum() for s in rng.random((k, h, w_)) + 1e-3]
        weights = rng.random(k) + 1e-3
        prior = SignalPrior(tuple(signals), weights / weights.sum())
        obs = PhotonImage(rng.poisson(5.0, size=(h, w_)))
        gap_ = np.abs(
            next_photon_distribution(prior, obs).probs - mmse_estimate(prior, obs)
        ).max()
        worst = max(worst, gap_)
    _check(f"next-photon map equals MMSE for normalized priors (max gap {worst:.2e})",
           worst <= 1e-12, failures)

    prior = SignalPrior.uniform([rng.random((2, 2)) + 0.1 for _ in range(3)])
    base = rng.integers(0, 4, size=5)
    ref = sequence_log_prob(prior, PhotonSequence(base, (2, 2)))
    ok = all(
        math.isclose(
            sequence_log_prob(prior, PhotonSequence(rng.permutation(base), (2, 2))),
            ref,
            rel_tol=1e-10,
            abs_tol=1e-10,
        )
        for _ in range(5)
    )
    _check("sequence probability is order-invariant", ok, failures)

    two_pixel = two_template_prior()
    total = sum(
        math.exp(sequence_log_prob(two_pixel, PhotonSequence([a, b], (1, 2))))
        for a in (0, 1)
        for b in (0, 1)
    )
    _check(f"length-2 sequence probabilities sum to 1 (got {total:.12f})",
           abs(total - 1.0) <= 1e-9, failures)

    if cfg["prior"]:
        loaded = load_prior(cfg["prior"])
        obs = sample_shot_noise(loaded.signals[0], rng)
        w = posterior(loaded, obs).weights
        print(f"loaded prior: {loaded.support_size} signal(s) of shape {loaded.shape}; "
              f"posterior under a sample of signal 0: {np.array2string(w, precision=6)}")
        _check("loaded prior posterior sums to 1", abs(w.sum() - 1.0) <= 1e-12, failures)

    if failures:
        print(f"{len(failures)} check(s) failed")
        return 1
    print("all oracle checks passed")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "prepare-data": _cmd_prepare_data,
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "sample": _cmd_sample,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "oracle-check": _cmd_oracle_check,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _effective_config(args.command, args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (GapError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
