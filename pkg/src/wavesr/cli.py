"""Command-line front end: train / infer / eval / ablate.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
Every run writes a JSON manifest with the fully-resolved configuration,
the seed, and the git commit (when available), so runs are reproducible
from the manifest alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config, require, seed_streams
from .denoiser import load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericError, TrainingDiverged, WavesrError
from .image import degrade, load_image, save_image
from .metrics import psnr, ssim, write_metrics_csv
from .pipeline import build_reference, build_targets, sample, train, write_trajectory_manifest
from .wavelet import WaveletConfig, atrous_decompose, dump_subbands


def _git_hash() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        return out.stdout.strip() if out.returncode == 0 else None
    except OSError:
        return None


def _write_manifest(path, cfg: RunConfig, command: str, extra: dict):
    manifest = {
        "command": command,
        "config": cfg.resolved(),
        "seed": cfg.seed,
        "git_hash": _git_hash(),
        "version": __version__,
    }
    manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _metric_row(cfg: RunConfig, name, x_hat, x_gt) -> dict:
    return {
        "image": name,
        "psnr": psnr(x_hat, x_gt, y_channel=cfg.y_channel, crop_border=cfg.crop_border),
        "ssim": ssim(x_hat, x_gt, y_channel=cfg.y_channel, crop_border=cfg.crop_border),
    }


# ---------------------------------------------------------------------------
# Commands.

def cmd_train(cfg: RunConfig) -> int:
    require(cfg, "input", "checkpoint")
    y = load_image(cfg.input)
    streams = seed_streams(cfg.seed)
    degradation = cfg.degradation()
    try:
        model, losses = train(y, degradation, cfg.sampler_cfg(), cfg.train_cfg(),
                              cfg.net_cfg(y.shape[2]), streams["train"])
    except TrainingDiverged as exc:
        if exc.params is not None:
            save_checkpoint(cfg.checkpoint, exc.params)
            print(f"error: {exc}; last finite checkpoint kept at {cfg.checkpoint}",
                  file=sys.stderr)
        raise
    save_checkpoint(cfg.checkpoint, model)
    if cfg.dump_subbands and cfg.levels >= 1:
        x_ref = build_reference(y, degradation)
        pyramid = atrous_decompose(x_ref, WaveletConfig(levels=cfg.levels,
                                                        detail_gain=cfg.detail_gain))
        dump_subbands(pyramid, cfg.dump_subbands)
    _write_manifest(str(cfg.checkpoint) + ".manifest.json", cfg, "train",
                    {"iterations": cfg.iterations, "loss_curve": losses})
    print(f"wrote checkpoint {cfg.checkpoint} ({cfg.iterations} iterations, "
          f"final loss {losses[-1]:.6f})")
    return 0


def cmd_infer(cfg: RunConfig) -> int:
    require(cfg, "input", "checkpoint", "output")
    y = load_image(cfg.input)
    model = load_checkpoint(cfg.checkpoint)
    streams = seed_streams(cfg.seed)
    result = sample(y, model, cfg.sampler_cfg(), cfg.degradation(), streams["sampler"],
                    record=bool(cfg.record_trajectory))
    save_image(cfg.output, result.image)
    if cfg.record_trajectory:
        write_trajectory_manifest(result.manifest, cfg.record_trajectory)
    _write_manifest(str(cfg.output) + ".manifest.json", cfg, "infer",
                    {"output_shape": list(result.image.shape)})
    print(f"wrote {cfg.output} ({result.image.shape[0]}x{result.image.shape[1]})")
    if cfg.ground_truth:
        row = _metric_row(cfg, cfg.output, result.image, load_image(cfg.ground_truth))
        csv_path = cfg.metrics_csv or str(cfg.output) + ".metrics.csv"
        write_metrics_csv(csv_path, [row])
        print(f"psnr={row['psnr']:.4f} dB  ssim={row['ssim']:.6f}  ({csv_path})")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    require(cfg, "input", "ground_truth")
    row = _metric_row(cfg, cfg.input, load_image(cfg.input), load_image(cfg.ground_truth))
    if cfg.metrics_csv:
        write_metrics_csv(cfg.metrics_csv, [row])
    print(f"psnr={row['psnr']:.4f} dB  ssim={row['ssim']:.6f}")
    return 0


# ---------------------------------------------------------------------------
# Ablation suites: each cell is a config delta applied to the base run.

ABLATION_SUITES = {
    "core-components": [
        ("lr-consistency", {"levels": 0, "parent_mode": "none"}),
        ("plus-atrous", {"parent_mode": "none"}),
        ("plus-bivariate", {}),
    ],
    "parent-choice": [
        ("none", {"parent_mode": "none"}),
        ("misaligned", {"parent_mode": "misaligned-prev-t"}),
        ("coarse-final", {"parent_mode": "coarse-final"}),
        ("time-aligned", {"parent_mode": "time-aligned"}),
    ],
    "eta-sweep": [(f"eta={v}", {"eta": v}) for v in (0.1, 0.3, 0.5)],
    "omega-d-sweep": (
        [(f"omega={v}", {"omega": v}) for v in (0.3, 0.5, 1.0, 2.0)]
        + [(f"d={v}", {"detail_gain": v}) for v in (0.5, 0.8, 1.0, 1.5)]
    ),
    "levels": [(f"levels={v}", {"levels": v}) for v in (4, 5, 6, 7)],
    "reverse-steps": [(f"timesteps={v}", {"timesteps": v}) for v in (50, 75, 100)],
    "shared-vs-separate": [
        ("separate", {"shared": False}),
        ("shared", {"shared": True}),
    ],
}


def run_ablation_cell(cfg: RunConfig, x_gt: np.ndarray) -> dict:
    """Synthesize the LR input, train, sample, and score one grid cell."""
    streams = seed_streams(cfg.seed)
    degradation = cfg.degradation()
    y = degrade(x_gt, degradation, noisy=cfg.noise_sigma > 0, rng=streams["noise"])
    model, _ = train(y, degradation, cfg.sampler_cfg(), cfg.train_cfg(),
                     cfg.net_cfg(x_gt.shape[2]), streams["train"])
    result = sample(y, model, cfg.sampler_cfg(), degradation, streams["sampler"])
    return _metric_row(cfg, cfg.input, result.image, x_gt)


def cmd_ablate(suite: str, cfg: RunConfig) -> int:
    if suite not in ABLATION_SUITES:
        raise ConfigError(f"unknown ablation suite '{suite}' "
                          f"(choose from {', '.join(sorted(ABLATION_SUITES))})")
    require(cfg, "input", "metrics_csv")
    x_gt = load_image(cfg.input)
    rows = []
    for label, delta in ABLATION_SUITES[suite]:
        cell_cfg = dataclasses.replace(cfg, **delta)
        row = {"suite": suite, "cell": label}
        row.update({k: v for k, v in sorted(delta.items())})
        row.update(run_ablation_cell(cell_cfg, x_gt))
        rows.append(row)
        print(f"[{suite}] {label}: psnr={row['psnr']:.4f} ssim={row['ssim']:.6f}")
    write_metrics_csv(cfg.metrics_csv, rows)
    _write_manifest(str(cfg.metrics_csv) + ".manifest.json", cfg, f"ablate:{suite}",
                    {"cells": [label for label, _ in ABLATION_SUITES[suite]]})
    print(f"wrote {cfg.metrics_csv} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavesr",
                                     description="Unsupervised single-image super-resolution")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (("train", "train the per-image denoiser"),
                        ("infer", "super-resolve an LR image with a trained checkpoint"),
                        ("eval", "compute PSNR/SSIM between two images"),
                        ("ablate", "run a named ablation grid")):
        p = sub.add_parser(name, help=descr)
        if name == "ablate":
            p.add_argument("suite", help=", ".join(sorted(ABLATION_SUITES)))
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, args.overrides)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "infer":
            return cmd_infer(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        return cmd_ablate(args.suite, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (WavesrError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
