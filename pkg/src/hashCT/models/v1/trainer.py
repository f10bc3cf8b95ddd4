"""
This module contains Pydantic models for training runs and their logs.
"""

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, field_validator


class TrainMode(str, Enum):
    """Enum representing the training domain."""

    TRUNCATED = "truncated"
    EXTENDED = "extended"
    NAIVE = "naive"


class StopDecision(str, Enum):
    """Enum representing the outcome of a stopping check."""

    CONTINUE = "continue"
    STOP = "stop"


class TrainConfig(BaseModel):
    """
    Optimizer, batching and stopping parameters.

    Attributes:
        learning_rate (float): Adam learning rate.
        batch_rays (int): Rays per iteration, drawn uniformly with replacement.
        max_iterations (int): Upper bound on training iterations.
        eval_every (int): Iterations between PSNR evaluations.
        log_every (int): Iterations between loss log records.
        stop_psnr_delta (float): Stop when consecutive PSNRs differ by less.
        loss_plateau_rel (float): Relative windowed-loss improvement below
            which training stops when no ground truth is available.
        target_psnr (float | None): Stop once this PSNR is reached.
        seed (int): Seed of initialization and ray batching.
        mode (TrainMode): Truncated domain, extended domain with two sampling
            zones, or naive extension with one dense zone and full encoding.
        deterministic (bool): Merge worker gradients in a fixed order.
        checkpoint_every (int): Iterations between checkpoints, 0 disables.
    """

    model_config = ConfigDict(frozen=True)

    learning_rate: float = 2e-4
    batch_rays: int = 128
    max_iterations: int = 20_000
    eval_every: int = 10_000
    log_every: int = 100
    stop_psnr_delta: float = 1e-1
    loss_plateau_rel: float = 5e-3
    target_psnr: Optional[float] = None
    seed: int = 0
    mode: TrainMode = TrainMode.EXTENDED
    deterministic: bool = True
    checkpoint_every: int = 0

    @field_validator("batch_rays", "max_iterations", "eval_every", "log_every")
    @classmethod
    def _positive(cls, value):
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("learning_rate")
    @classmethod
    def _positive_rate(cls, value):
        if value <= 0:
            raise ValueError("learning_rate must be positive")
        return value


class LogRecord(BaseModel):
    """
    One row of the training log.

    Attributes:
        iteration (int): Iteration count when the record was written.
        loss (float | None): Mean L1 loss over the last logging window.
        psnr (float | None): PSNR inside the FOV, if evaluated.
        wall_ms (float): Training wall-clock so far, evaluation excluded.
        phase (str): ``train``, ``eval`` or ``stop``.
    """

    iteration: int
    loss: Optional[float] = None
    psnr: Optional[float] = None
    wall_ms: float
    phase: str


class TrainingLog(BaseModel):
    """
    Loss and PSNR history of a run.

    Attributes:
        records (List[LogRecord]): Log rows in iteration order.
        psnr_history (List[float]): PSNR of each evaluation.
        window_losses (List[float]): Mean loss of each evaluation window.
        phase_ms (dict): Accumulated wall-clock per phase.
    """

    records: List[LogRecord] = []
    psnr_history: List[float] = []
    window_losses: List[float] = []
    phase_ms: dict = {}

    def add_time(self, phase: str, ms: float) -> None:
        self.phase_ms[phase] = self.phase_ms.get(phase, 0.0) + ms
