"""
This module provides the commands behind the command-line interface: simulate,
train, reconstruct, fdk, eval and ablate.
"""

import csv
import logging
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from hashCT.models.v1.cmd import (
    AblationRow,
    AblationSetting,
    CmdAblateResponse,
    CmdEvalResponse,
    CmdSimulateResponse,
    CmdTrainResponse,
    CmdVolumeResponse,
    RunConfig,
)
from hashCT.models.v1.data import GridSpec, Sinogram, VolumeGrid
from hashCT.models.v1.trainer import TrainMode
from hashCT.util.v1.baseline import fdk_reconstruct
from hashCT.util.v1.checkpoint import load_checkpoint, save_checkpoint
from hashCT.util.v1.config import write_manifest
from hashCT.util.v1.containers import (
    load_sinogram,
    load_volume,
    save_sinogram,
    save_volume,
)
from hashCT.util.v1.errors import ConfigError, NumericalError
from hashCT.util.v1.metrics import (
    diff_image,
    evaluate,
    fov_mask,
    psnr,
    save_diff_png,
    write_reports,
)
from hashCT.util.v1.phantom import build_phantom, rasterize, simulate_sinogram
from hashCT.util.v1.trainer import (
    CHECKPOINT_NAME,
    reconstruct_volume,
    train,
    write_training_log,
)

logger = logging.getLogger(__name__)

SINOGRAM_NAME = "sinogram.bin"
GROUND_TRUTH_NAME = "ground_truth.bin"
LOG_NAME = "training_log.csv"
INR_VOLUME_NAME = "volume_inr.bin"
FDK_VOLUME_NAME = "volume_fdk.bin"
ABLATION_NAME = "ablation.csv"


class CmdException(Exception):
    """Failure of a command, carrying the process exit code."""

    def __init__(self, code: int, detail: str):
        super().__init__(detail)
        self.code = code
        self.detail = detail


def exit_code(error: Exception) -> int:
    """2 for configuration errors, 3 for numerical failures, 1 otherwise."""
    if isinstance(error, (ConfigError, ValidationError, FileNotFoundError)):
        return 2
    if isinstance(error, NumericalError):
        return 3
    return 1


def _output_dir(config: RunConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dtype(config: RunConfig):
    return np.float64 if config.precision == "float64" else np.float32


def _grid(config: RunConfig) -> GridSpec:
    return GridSpec.for_box(
        config.domain.fov_omega, config.data.grid_pitch_mm, config.geometry.dim
    )


def _train_config(config: RunConfig, **update):
    return config.training.model_copy(update={"seed": config.seed, **update})


def _load_sinogram(config: RunConfig) -> Sinogram:
    path = Path(config.data.sinogram_path or Path(config.output_dir) / SINOGRAM_NAME)
    if not path.exists():
        raise ConfigError(
            f"sinogram {path} not found; run simulate or set data.sinogram_path"
        )
    sinogram = load_sinogram(path)
    if sinogram.geometry != config.geometry:
        raise ConfigError(
            f"sinogram {path} was acquired with a different geometry than [geometry]"
        )
    return sinogram.subsample_views(config.data.view_stride)


def _load_ground_truth(config: RunConfig) -> Optional[VolumeGrid]:
    if config.data.ground_truth_path:
        return load_volume(config.data.ground_truth_path)
    default = Path(config.output_dir) / GROUND_TRUTH_NAME
    if default.exists():
        gt = load_volume(default)
        if gt.grid == _grid(config):
            return gt
        logger.warning("Ignoring %s, its grid differs from the run grid", default)
    return None


def cmd_simulate(config: RunConfig) -> CmdSimulateResponse:
    """Project the configured phantom and rasterize its ground truth.

    Args:
        config (RunConfig): Run configuration with a phantom section.

    Returns:
        CmdSimulateResponse: Paths of the sinogram and ground-truth containers.

    Raises:
        CmdException: With exit code 2 when no phantom is configured.
    """
    started = time.perf_counter()
    try:
        if config.phantom.name is None and config.phantom.path is None:
            raise ConfigError("simulate needs phantom.name or phantom.path")
        output_dir = _output_dir(config)
        phantom = build_phantom(config.phantom, config.geometry.dim)
        sinogram = simulate_sinogram(phantom, config.geometry, config.workers)
        gt = rasterize(phantom, _grid(config), config.phantom.supersample)
        sinogram_path = output_dir / SINOGRAM_NAME
        gt_path = output_dir / GROUND_TRUTH_NAME
        save_sinogram(sinogram_path, sinogram)
        save_volume(gt_path, gt)
        write_manifest(
            output_dir,
            "simulate",
            config,
            time.perf_counter() - started,
            [sinogram_path, gt_path],
        )
    except Exception as e:
        raise CmdException(exit_code(e), str(e)) from e

    return CmdSimulateResponse(
        sinogram_path=str(sinogram_path),
        ground_truth_path=str(gt_path),
        shape=list(sinogram.values.shape),
    )


def cmd_train(
    config: RunConfig, mode: Optional[TrainMode] = None, resume: bool = False
) -> CmdTrainResponse:
    """Train the neural field on the run's sinogram.

    Args:
        config (RunConfig): Run configuration.
        mode (TrainMode, optional): Overrides ``training.mode``.
        resume (bool): Continue from ``data.checkpoint_path`` or the run's
            checkpoint, optimizer state included.

    Returns:
        CmdTrainResponse: Checkpoint, log and summary of the run.

    Raises:
        CmdException: Exit code 3 if training diverges.
    """
    started = time.perf_counter()
    try:
        output_dir = _output_dir(config)
        sinogram = _load_sinogram(config)
        gt = _load_ground_truth(config)
        cfg = _train_config(config, **({"mode": mode} if mode else {}))
        state = None
        if resume:
            path = Path(config.data.checkpoint_path or output_dir / CHECKPOINT_NAME)
            state = load_checkpoint(path, dtype=_dtype(config))
        result = train(
            sinogram,
            config.domain,
            config.encoder,
            config.mlp,
            config.sampling,
            cfg,
            gt=gt,
            workers=config.workers,
            dtype=_dtype(config),
            output_dir=output_dir,
            resume=state,
            progress=True,
        )
        checkpoint_path = output_dir / CHECKPOINT_NAME
        save_checkpoint(checkpoint_path, result.model, result.state)
        log_path = write_training_log(output_dir / LOG_NAME, result.log)
        final_psnr = result.log.psnr_history[-1] if result.log.psnr_history else None
        if gt is not None and final_psnr is None:
            recon = reconstruct_volume(result.model, config.domain, gt.grid, config.workers)
            final_psnr = psnr(recon, gt, mask=fov_mask(gt.grid, config.domain))
        write_manifest(
            output_dir,
            "train",
            config,
            time.perf_counter() - started,
            [checkpoint_path, log_path],
        )
    except Exception as e:
        raise CmdException(exit_code(e), str(e)) from e

    return CmdTrainResponse(
        checkpoint_path=str(checkpoint_path),
        log_path=str(log_path),
        iterations=result.iterations,
        stop_reason=result.stop_reason,
        train_seconds=result.train_seconds,
        final_psnr=final_psnr,
        time_to_target_s=result.time_to_target_s,
    )


def cmd_reconstruct(config: RunConfig) -> CmdVolumeResponse:
    """Evaluate a trained field on the run grid inside the FOV.

    Args:
        config (RunConfig): Run configuration.

    Returns:
        CmdVolumeResponse: Path of the reconstructed volume.
    """
    started = time.perf_counter()
    try:
        output_dir = _output_dir(config)
        path = Path(config.data.checkpoint_path or output_dir / CHECKPOINT_NAME)
        if not path.exists():
            raise ConfigError(f"checkpoint {path} not found; run train first")
        model, _ = load_checkpoint(path, dtype=_dtype(config))
        volume = reconstruct_volume(model, config.domain, _grid(config), config.workers)
        volume_path = output_dir / INR_VOLUME_NAME
        save_volume(volume_path, volume)
        write_manifest(
            output_dir, "reconstruct", config, time.perf_counter() - started, [volume_path]
        )
    except Exception as e:
        raise CmdException(exit_code(e), str(e)) from e

    return CmdVolumeResponse(volume_path=str(volume_path), dims=list(volume.grid.dims))


def cmd_fdk(config: RunConfig, extrapolate: Optional[bool] = None) -> CmdVolumeResponse:
    """Reconstruct the run's sinogram with the FDK baseline.

    Args:
        config (RunConfig): Run configuration.
        extrapolate (bool, optional): Overrides ``baseline.extrapolate``.

    Returns:
        CmdVolumeResponse: Path of the FDK volume.
    """
    started = time.perf_counter()
    try:
        output_dir = _output_dir(config)
        sinogram = _load_sinogram(config)
        baseline = config.baseline
        if extrapolate is None:
            extrapolate = baseline.extrapolate
        volume = fdk_reconstruct(
            sinogram,
            _grid(config),
            baseline.filter,
            extrapolate=extrapolate,
            margin_frac=baseline.margin_frac,
            workers=config.workers,
            progress=True,
        )
        name = "volume_fdk_extrapolated.bin" if extrapolate else FDK_VOLUME_NAME
        volume_path = output_dir / name
        save_volume(volume_path, volume)
        write_manifest(
            output_dir, "fdk", config, time.perf_counter() - started, [volume_path]
        )
    except Exception as e:
        raise CmdException(exit_code(e), str(e)) from e

    return CmdVolumeResponse(volume_path=str(volume_path), dims=list(volume.grid.dims))


def cmd_eval(config: RunConfig, volumes: List[str]) -> CmdEvalResponse:
    """Score reconstructions against the ground truth inside the FOV.

    Args:
        config (RunConfig): Run configuration.
        volumes (List[str]): Volume containers to evaluate.

    Returns:
        CmdEvalResponse: One report per volume and the metrics CSV path.
    """
    started = time.perf_counter()
    try:
        if not volumes:
            raise ConfigError("eval needs at least one volume")
        output_dir = _output_dir(config)
        gt = _load_ground_truth(config)
        if gt is None:
            raise ConfigError("eval needs data.ground_truth_path or a simulated run")
        metrics = config.metrics
        slices = metrics.diff_slices or [gt.grid.dims[2] // 2]
        reports, files = [], []
        for volume_path in volumes:
            recon = load_volume(volume_path)
            name = Path(volume_path).stem
            reports.append(evaluate(name, recon, gt, config.domain, metrics))
            for index in slices:
                image = diff_image(recon, gt, index, metrics.diff_window)
                png = output_dir / f"{name}_diff_z{index}.png"
                save_diff_png(png, image, metrics.diff_window, index)
                files.append(png)
        csv_path, txt_path = write_reports(output_dir, reports)
        write_manifest(
            output_dir,
            "eval",
            config,
            time.perf_counter() - started,
            files + [csv_path, txt_path],
        )
    except Exception as e:
        raise CmdException(exit_code(e), str(e)) from e

    return CmdEvalResponse(reports=reports, metrics_path=str(csv_path))


def ablation_settings(config: RunConfig) -> List[AblationSetting]:
    """The configured sweep, led by the naive-extension reference if enabled."""
    settings = list(config.ablate.settings)
    if config.ablate.include_reference:
        reference = AblationSetting(
            restricted_levels=config.encoder.n_levels,
            step_outside=config.sampling.step_inside,
        )
        settings.insert(0, reference)
    return settings


def cmd_ablate(config: RunConfig) -> CmdAblateResponse:
    """Train one extended-mode run per (m, step_outside) setting on one seed.

    Args:
        config (RunConfig): Run configuration with an ``[ablate]`` section.

    Returns:
        CmdAblateResponse: Per-setting PSNR, wall-clock and iterations.
    """
    started = time.perf_counter()
    try:
        settings = ablation_settings(config)
        if not settings:
            raise ConfigError("ablate needs at least one setting")
        output_dir = _output_dir(config)
        sinogram = _load_sinogram(config)
        gt = _load_ground_truth(config)
        mask = fov_mask(gt.grid, config.domain) if gt is not None else None
        cfg = _train_config(config, mode=TrainMode.EXTENDED)
        rows = []
        for setting in tqdm(settings, desc="ablate"):
            encoder = config.encoder.model_copy(
                update={"restricted_levels": setting.restricted_levels}
            )
            plan = config.sampling.model_copy(
                update={"step_outside": setting.step_outside}
            )
            result = train(
                sinogram,
                config.domain,
                encoder,
                config.mlp,
                plan,
                cfg,
                gt=gt,
                workers=config.workers,
                dtype=_dtype(config),
            )
            final = None
            if gt is not None:
                recon = reconstruct_volume(
                    result.model, config.domain, gt.grid, config.workers
                )
                final = psnr(recon, gt, mask=mask)
            label = f"m={setting.restricted_levels},out={setting.step_outside:g}"
            rows.append(
                AblationRow(
                    setting=label,
                    restricted_levels=setting.restricted_levels,
                    step_outside=setting.step_outside,
                    final_psnr=final,
                    wall_clock_s=result.train_seconds,
                    iterations=result.iterations,
                    time_to_target_s=result.time_to_target_s,
                )
            )
            logger.info(
                "Ablation %s: %d iterations, %.1f s", label, result.iterations, result.train_seconds
            )
        reference = rows[0].final_psnr if config.ablate.include_reference else None
        if reference is not None:
            rows = [
                row.model_copy(
                    update={
                        "psnr_vs_reference": None
                        if row.final_psnr is None
                        else row.final_psnr - reference
                    }
                )
                for row in rows
            ]
        csv_path = output_dir / ABLATION_NAME
        with open(csv_path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(AblationRow.model_fields))
            writer.writeheader()
            for row in rows:
                writer.writerow(row.model_dump())
        write_manifest(
            output_dir, "ablate", config, time.perf_counter() - started, [csv_path]
        )
    except Exception as e:
        raise CmdException(exit_code(e), str(e)) from e

    return CmdAblateResponse(rows=rows, csv_path=str(csv_path))
