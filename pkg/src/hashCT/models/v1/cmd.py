"""
This module contains the run configuration and the response models of the
command layer.
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from hashCT.models.v1.baseline import BaselineConfig
from hashCT.models.v1.encoder import EncoderConfig
from hashCT.models.v1.geometry import Domain, ScanGeometry
from hashCT.models.v1.metrics import MetricsConfig, MetricsReport
from hashCT.models.v1.network import MLPConfig
from hashCT.models.v1.phantom import PhantomConfig
from hashCT.models.v1.projector import SamplingPlan
from hashCT.models.v1.trainer import TrainConfig


class DataConfig(BaseModel):
    """
    Input and output data locations.

    Attributes:
        sinogram_path (str | None): Existing sinogram container to train on.
        ground_truth_path (str | None): Volume container used for evaluation.
        checkpoint_path (str | None): Checkpoint to reconstruct from or resume.
        view_stride (int): Keep every n-th view of the sinogram.
        grid_pitch_mm (float): Voxel pitch of reconstructions and ground truth.
    """

    model_config = ConfigDict(frozen=True)

    sinogram_path: Optional[str] = None
    ground_truth_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    view_stride: int = 1
    grid_pitch_mm: float = 0.5

    @field_validator("view_stride")
    @classmethod
    def _positive_stride(cls, value):
        if value < 1:
            raise ValueError("view_stride must be at least 1")
        return value

    @field_validator("grid_pitch_mm")
    @classmethod
    def _positive_pitch(cls, value):
        if value <= 0:
            raise ValueError("grid_pitch_mm must be positive")
        return value


class AblationSetting(BaseModel):
    """One (m, step_outside) configuration of the ablation sweep."""

    model_config = ConfigDict(frozen=True)

    restricted_levels: int
    step_outside: float


class AblateConfig(BaseModel):
    """
    Ablation sweep.

    Attributes:
        settings (List[AblationSetting]): Settings trained on a shared seed.
        include_reference (bool): Prepend the naive-extension reference run.
    """

    model_config = ConfigDict(frozen=True)

    settings: List[AblationSetting] = [
        AblationSetting(restricted_levels=2, step_outside=2.0),
        AblationSetting(restricted_levels=4, step_outside=2.0),
        AblationSetting(restricted_levels=8, step_outside=2.0),
        AblationSetting(restricted_levels=4, step_outside=1.0),
        AblationSetting(restricted_levels=4, step_outside=4.0),
    ]
    include_reference: bool = True


class RunConfig(BaseModel):
    """
    Complete, cross-validated configuration of a run.

    Attributes:
        geometry (ScanGeometry): Acquisition geometry.
        domain (Domain): FOV and extended FOV.
        phantom (PhantomConfig): Phantom used for simulation and ground truth.
        data (DataConfig): Input and output files.
        encoder (EncoderConfig): Hash encoding.
        mlp (MLPConfig): Field network.
        sampling (SamplingPlan): Ray sampling.
        training (TrainConfig): Optimizer and stopping.
        baseline (BaselineConfig): FDK baseline.
        metrics (MetricsConfig): Evaluation.
        ablate (AblateConfig): Ablation sweep.
        output_dir (str): Directory receiving every artifact.
        seed (int): Seed of simulation noise-free data, initialization and batching.
        precision (str): Parameter dtype.
        workers (int): Worker threads.
    """

    model_config = ConfigDict(frozen=True)

    geometry: ScanGeometry = ScanGeometry()
    domain: Domain
    phantom: PhantomConfig = PhantomConfig()
    data: DataConfig = DataConfig()
    encoder: EncoderConfig = EncoderConfig()
    mlp: MLPConfig = MLPConfig()
    sampling: SamplingPlan = SamplingPlan()
    training: TrainConfig = TrainConfig()
    baseline: BaselineConfig = BaselineConfig()
    metrics: MetricsConfig = MetricsConfig()
    ablate: AblateConfig = AblateConfig()
    output_dir: str = "runs/default"
    seed: int = 0
    precision: Literal["float32", "float64"] = "float32"
    workers: int = 1

    @field_validator("workers")
    @classmethod
    def _positive_workers(cls, value):
        if value < 1:
            raise ValueError("workers must be at least 1")
        return value

    @model_validator(mode="after")
    def _check_sections(self):
        errors = []
        if self.encoder.output_dim != self.mlp.input_dim:
            errors.append(
                f"encoder output L*F={self.encoder.output_dim} must equal "
                f"mlp.input_dim={self.mlp.input_dim}"
            )
        if self.geometry.n_views % self.data.view_stride:
            errors.append(
                f"data.view_stride={self.data.view_stride} must divide "
                f"geometry.n_views={self.geometry.n_views}"
            )
        if self.geometry.dim == 2:
            for name, box in (
                ("fov_omega", self.domain.fov_omega),
                ("fov_extended", self.domain.fov_extended),
            ):
                if not box.lo[2] < 0.0 < box.hi[2]:
                    errors.append(f"planar scans need domain.{name} to contain z=0")
        for setting in self.ablate.settings:
            if not 1 <= setting.restricted_levels <= self.encoder.n_levels:
                errors.append(
                    f"ablation restricted_levels={setting.restricted_levels} outside "
                    f"[1, {self.encoder.n_levels}]"
                )
            if setting.step_outside < self.sampling.step_inside:
                errors.append(
                    f"ablation step_outside={setting.step_outside} is below "
                    f"sampling.step_inside={self.sampling.step_inside}"
                )
        if errors:
            raise ValueError("; ".join(errors))
        return self


class CmdSimulateResponse(BaseModel):
    """Model representing the result of a simulation."""

    sinogram_path: str
    ground_truth_path: str
    shape: List[int]


class CmdTrainResponse(BaseModel):
    """Model representing the result of a training run."""

    checkpoint_path: str
    log_path: str
    iterations: int
    stop_reason: str
    train_seconds: float
    final_psnr: Optional[float] = None
    time_to_target_s: Optional[float] = None


class CmdVolumeResponse(BaseModel):
    """Model representing a written reconstruction."""

    volume_path: str
    dims: List[int]


class CmdEvalResponse(BaseModel):
    """Model representing the evaluation of one or more reconstructions."""

    reports: List[MetricsReport]
    metrics_path: str


class AblationRow(BaseModel):
    """One row of the ablation CSV."""

    setting: str
    restricted_levels: int
    step_outside: float
    final_psnr: Optional[float] = None
    psnr_vs_reference: Optional[float] = None
    wall_clock_s: float
    iterations: int
    time_to_target_s: Optional[float] = None


class CmdAblateResponse(BaseModel):
    """Model representing the result of an ablation sweep."""

    rows: List[AblationRow]
    csv_path: str
