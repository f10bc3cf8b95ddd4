"""
This module runs the joint optimization of the hash tables and the field
network against a measured sinogram, and evaluates the trained field on voxel
grids.
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

from hashCT.models.v1.data import GridSpec, Sinogram, VolumeGrid
from hashCT.models.v1.encoder import EncoderConfig
from hashCT.models.v1.geometry import Domain
from hashCT.models.v1.network import MLPConfig
from hashCT.models.v1.projector import SamplingPlan
from hashCT.models.v1.trainer import (
    LogRecord,
    StopDecision,
    TrainConfig,
    TrainingLog,
    TrainMode,
)
from hashCT.util.v1 import network
from hashCT.util.v1.checkpoint import save_checkpoint
from hashCT.util.v1.encoder import HashEncoding
from hashCT.util.v1.errors import DomainError, NumericalError
from hashCT.util.v1.geometry import make_rays
from hashCT.util.v1.metrics import fov_mask, psnr
from hashCT.util.v1.optimizer import AdamState, adam_step
from hashCT.util.v1.projector import (
    FieldModel,
    GradientBuffers,
    forward_project,
    residual_and_backward,
    sample_rays,
    sample_rays_single_zone,
    to_unit_cube,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
DIAGNOSTIC_NAME = "diagnostic_checkpoint.bin"


class TrainResult:
    """Outcome of ``train``."""

    def __init__(self, model, state, log, iterations, stop_reason, train_seconds):
        self.model: FieldModel = model
        self.state: AdamState = state
        self.log: TrainingLog = log
        self.iterations: int = iterations
        self.stop_reason: str = stop_reason
        self.train_seconds: float = train_seconds
        self.time_to_target_s: Optional[float] = None


def init_model(
    encoder_cfg: EncoderConfig,
    mlp_cfg: MLPConfig,
    dim: int,
    seed: int = 0,
    dtype=np.float32,
) -> FieldModel:
    """Fresh hash tables and network, seeded independently from one seed."""
    seeds = np.random.SeedSequence(seed).generate_state(2)
    encoding = HashEncoding(encoder_cfg, dim=dim, seed=int(seeds[0]), dtype=dtype)
    params = network.init(mlp_cfg, seed=int(seeds[1]), dtype=dtype)
    return FieldModel(encoding, params)


def stopping_check(log: TrainingLog, cfg: TrainConfig) -> StopDecision:
    """Decide whether training has converged.

    With ground truth, stop once two consecutive PSNR evaluations differ by
    less than ``stop_psnr_delta``. Without it, stop once the mean loss of an
    evaluation window improves on the previous one by less than
    ``loss_plateau_rel`` (relative).
    """
    if len(log.psnr_history) >= 2:
        delta = abs(log.psnr_history[-1] - log.psnr_history[-2])
        return StopDecision.STOP if delta < cfg.stop_psnr_delta else StopDecision.CONTINUE
    if not log.psnr_history and len(log.window_losses) >= 2:
        previous, current = log.window_losses[-2], log.window_losses[-1]
        if previous <= 0.0:
            return StopDecision.STOP
        if (previous - current) / previous < cfg.loss_plateau_rel:
            return StopDecision.STOP
    return StopDecision.CONTINUE


def reconstruct_volume(
    model: FieldModel,
    domain: Domain,
    grid: GridSpec,
    workers: int = 1,
    chunk_size: int = 65536,
) -> VolumeGrid:
    """Evaluate the field with the full encoder at every voxel center.

    Raises:
        DomainError: If the grid reaches outside the extended domain.
    """
    bounds = grid.bounds()
    outer = domain.fov_extended
    dim = model.encoding.dim
    if any(
        bounds.lo[i] < outer.lo[i] - 1e-9 or bounds.hi[i] > outer.hi[i] + 1e-9
        for i in range(dim)
    ):
        raise DomainError("reconstruction grid extends outside the extended domain")
    centers = grid.voxel_centers()
    values = np.zeros(centers.shape[0], dtype=np.float64)

    def _evaluate(start):
        stop = min(start + chunk_size, centers.shape[0])
        x = to_unit_cube(centers[start:stop], outer, dim)
        features, _ = model.encoding.encode(x)
        mu, _ = network.forward(model.params, features)
        values[start:stop] = mu

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        list(pool.map(_evaluate, range(0, centers.shape[0], chunk_size)))
    return VolumeGrid(grid=grid, values=values.reshape(grid.shape))


def _chunk_loss(model, sinogram, domain, plan, cfg, indices, scale, rng):
    geom = sinogram.geometry
    views, rows, cols = np.unravel_index(indices, sinogram.values.shape)
    origins, directions = make_rays(geom, views, rows, cols)
    if cfg.mode == TrainMode.NAIVE:
        samples = sample_rays_single_zone(origins, directions, domain, plan, rng=rng)
    else:
        samples = sample_rays(origins, directions, domain, plan, rng=rng)
    predicted, cache = forward_project(
        samples,
        model.encoding,
        model.params,
        cfg.mode != TrainMode.TRUNCATED,
        domain,
        restrict_outer=cfg.mode == TrainMode.EXTENDED,
    )
    buffers = model.new_buffers()
    measured = sinogram.values[views, rows, cols]
    loss = residual_and_backward(measured, predicted, cache, buffers, scale=scale)
    return loss, buffers


def train_step(
    model: FieldModel,
    state: AdamState,
    sinogram: Sinogram,
    domain: Domain,
    plan: SamplingPlan,
    cfg: TrainConfig,
    iteration: int,
    pool: Optional[ThreadPoolExecutor] = None,
    workers: int = 1,
) -> float:
    """One optimizer iteration over a freshly drawn ray batch.

    The batch of iteration ``k`` only depends on ``(seed, k)``, so a resumed
    run draws the same rays as an uninterrupted one.

    Returns:
        float: Mean L1 loss of the batch.
    """
    rng = np.random.default_rng([cfg.seed, iteration])
    indices = rng.integers(0, sinogram.values.size, size=cfg.batch_rays)
    scale = 1.0 / cfg.batch_rays
    chunks = [c for c in np.array_split(indices, max(1, workers)) if c.size]
    rngs = [np.random.default_rng([cfg.seed, iteration, i + 1]) for i in range(len(chunks))]

    if pool is None or len(chunks) == 1:
        results = [
            _chunk_loss(model, sinogram, domain, plan, cfg, c, scale, r)
            for c, r in zip(chunks, rngs)
        ]
    else:
        futures = [
            pool.submit(_chunk_loss, model, sinogram, domain, plan, cfg, c, scale, r)
            for c, r in zip(chunks, rngs)
        ]
        done = futures if cfg.deterministic else as_completed(futures)
        results = [f.result() for f in done]

    grads = GradientBuffers(model.params, model.encoding)
    loss = 0.0
    for chunk_loss, buffers in results:
        loss += chunk_loss
        grads.merge(buffers)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss at iteration {iteration}")
    adam_step(model, grads, state, cfg.learning_rate)
    return loss


def train(
    sinogram: Sinogram,
    domain: Domain,
    encoder_cfg: EncoderConfig,
    mlp_cfg: MLPConfig,
    plan: SamplingPlan,
    cfg: TrainConfig,
    gt: Optional[VolumeGrid] = None,
    workers: int = 1,
    dtype=np.float32,
    output_dir: Optional[Path] = None,
    resume: Optional[Tuple[FieldModel, AdamState]] = None,
    progress: bool = False,
) -> TrainResult:
    """Jointly optimize the field network and the hash tables.

    Args:
        sinogram (Sinogram): Measured projections with their geometry.
        domain (Domain): FOV and extended FOV.
        encoder_cfg (EncoderConfig): Hash encoding configuration.
        mlp_cfg (MLPConfig): Network configuration.
        plan (SamplingPlan): Ray sampling step sizes.
        cfg (TrainConfig): Optimizer and stopping parameters.
        gt (VolumeGrid, optional): Ground truth for PSNR-based stopping.
        workers (int): Threads sharing each ray batch.
        dtype: Parameter dtype.
        output_dir (Path, optional): Where checkpoints are written.
        resume (tuple, optional): Model and optimizer state to continue from.
        progress (bool): Show a progress bar.

    Returns:
        TrainResult: Trained model, optimizer state and log.

    Raises:
        NumericalError: On a non-finite loss, after writing a diagnostic
            checkpoint when ``output_dir`` is set.
    """
    dim = sinogram.geometry.dim
    if resume is None:
        model = init_model(encoder_cfg, mlp_cfg, dim, cfg.seed, dtype)
        state = AdamState.create(model)
    else:
        model, state = resume
        if state is None:
            state = AdamState.create(model)
    start = state.step
    mask = fov_mask(gt.grid, domain) if gt is not None else None

    log = TrainingLog()
    train_seconds = 0.0
    window_loss = 0.0
    window_count = 0
    log_loss = 0.0
    log_count = 0
    stop_reason = "max_iterations"
    time_to_target = None
    iteration = start

    logger.info(
        "Training in %s mode from iteration %d (batch %d, %d workers)",
        cfg.mode.value,
        start,
        cfg.batch_rays,
        workers,
    )
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    bar = tqdm(
        total=cfg.max_iterations,
        initial=start,
        disable=not progress,
        desc="train",
    )
    try:
        while iteration < cfg.max_iterations:
            tic = time.perf_counter()
            try:
                loss = train_step(
                    model, state, sinogram, domain, plan, cfg, iteration, pool, workers
                )
            except NumericalError:
                if output_dir is not None:
                    save_checkpoint(Path(output_dir) / DIAGNOSTIC_NAME, model, state)
                logger.error("Training diverged at iteration %d", iteration)
                raise
            step_ms = (time.perf_counter() - tic) * 1e3
            log.add_time("step", step_ms)
            train_seconds += step_ms / 1e3
            iteration += 1
            bar.update(1)

            log_loss += loss
            log_count += 1
            window_loss += loss
            window_count += 1
            if iteration % cfg.log_every == 0:
                mean = log_loss / log_count
                log.records.append(
                    LogRecord(
                        iteration=iteration,
                        loss=mean,
                        wall_ms=train_seconds * 1e3,
                        phase="train",
                    )
                )
                bar.set_postfix(loss=f"{mean:.3e}")
                logger.info("Iteration %d: loss %.6e", iteration, mean)
                log_loss, log_count = 0.0, 0

            if (
                output_dir is not None
                and cfg.checkpoint_every
                and iteration % cfg.checkpoint_every == 0
            ):
                save_checkpoint(Path(output_dir) / CHECKPOINT_NAME, model, state)

            if iteration % cfg.eval_every == 0:
                log.window_losses.append(window_loss / window_count)
                window_loss, window_count = 0.0, 0
                value = None
                if gt is not None:
                    tic = time.perf_counter()
                    recon = reconstruct_volume(model, domain, gt.grid, workers)
                    value = psnr(recon, gt, mask=mask)
                    log.add_time("eval", (time.perf_counter() - tic) * 1e3)
                    log.psnr_history.append(value)
                    logger.info("Iteration %d: PSNR %.3f dB", iteration, value)
                log.records.append(
                    LogRecord(
                        iteration=iteration,
                        loss=log.window_losses[-1],
                        psnr=value,
                        wall_ms=train_seconds * 1e3,
                        phase="eval",
                    )
                )
                if (
                    value is not None
                    and cfg.target_psnr is not None
                    and value >= cfg.target_psnr
                ):
                    time_to_target = train_seconds
                    stop_reason = "target_psnr"
                    break
                if stopping_check(log, cfg) == StopDecision.STOP:
                    stop_reason = "converged"
                    if gt is None:
                        logger.warning(
                            "Stopped on the loss plateau rule, no ground truth given"
                        )
                    break
    finally:
        bar.close()
        if pool is not None:
            pool.shutdown()

    log.records.append(
        LogRecord(iteration=iteration, wall_ms=train_seconds * 1e3, phase="stop")
    )
    logger.info(
        "Stopped after %d iterations (%s), %.1f s training time",
        iteration,
        stop_reason,
        train_seconds,
    )
    logger.debug("Phase timings (ms): %s", log.phase_ms)
    result = TrainResult(model, state, log, iteration, stop_reason, train_seconds)
    result.time_to_target_s = time_to_target
    return result


def write_training_log(path, log: TrainingLog) -> Path:
    """Write the log as CSV with columns iteration, loss, psnr, wall_ms, phase."""
    path = Path(path)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(LogRecord.model_fields))
        writer.writeheader()
        for record in log.records:
            writer.writerow(record.model_dump())
    return path
