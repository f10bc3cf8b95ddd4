"""End-to-end reconstruction runs on a small truncated fan-beam scan.

The scanned body is a 40 mm disk while the detector only covers about 22 mm
around the isocenter, so every view is truncated and the FOV sees mass outside
itself on every ray.
"""

import numpy as np
import pytest

from hashCT.models.v1.data import GridSpec
from hashCT.models.v1.encoder import EncoderConfig
from hashCT.models.v1.geometry import Domain, ScanGeometry, ScanMode
from hashCT.models.v1.network import MLPConfig
from hashCT.models.v1.phantom import Ellipsoid, Phantom
from hashCT.models.v1.projector import SamplingPlan
from hashCT.models.v1.trainer import TrainConfig, TrainMode
from hashCT.util.v1.baseline import fdk_reconstruct
from hashCT.util.v1.metrics import fov_mask, psnr
from hashCT.util.v1.phantom import rasterize, simulate_sinogram
from hashCT.util.v1.trainer import reconstruct_volume, train

pytestmark = pytest.mark.slow

GEOMETRY = ScanGeometry(
    source_to_detector_mm=300.0,
    source_to_isocenter_mm=200.0,
    detector_rows=1,
    detector_cols=65,
    pixel_pitch_mm=(1.0, 1.0),
    n_views=60,
    mode=ScanMode.FAN2D,
)
DOMAIN = Domain(fov_mm=(30.0, 30.0), extended_mm=(160.0, 160.0))
PHANTOM = Phantom(
    ellipsoids=[
        Ellipsoid(center=(0.0, 0.0, 0.0), semi_axes=(40.0, 40.0, 40.0), delta_mu=0.02),
        Ellipsoid(center=(3.0, -2.0, 0.0), semi_axes=(8.0, 8.0, 8.0), delta_mu=0.01),
    ],
    dim=2,
)
N_LEVELS = 8
MLP = MLPConfig(input_dim=2 * N_LEVELS, hidden_layers=2, hidden_width=32, mu_max=0.1)
STEP_INSIDE = 0.5
ITERATIONS = 2000


def _encoder(restricted_levels):
    return EncoderConfig(
        n_levels=N_LEVELS,
        n_min=16,
        n_max=256,
        table_size=2**14,
        feature_dim=2,
        restricted_levels=restricted_levels,
    )


def _plan(step_outside):
    return SamplingPlan(step_inside=STEP_INSIDE, step_outside=step_outside)


def _config(mode, iterations, target=None):
    return TrainConfig(
        learning_rate=5e-3,
        batch_rays=128,
        max_iterations=iterations,
        eval_every=100 if target is not None else iterations,
        log_every=iterations,
        stop_psnr_delta=0.0,
        target_psnr=target,
        seed=0,
        mode=mode,
    )


@pytest.fixture(scope="module")
def scan():
    sinogram = simulate_sinogram(PHANTOM, GEOMETRY, workers=2)
    gt = rasterize(PHANTOM, GridSpec.for_box(DOMAIN.fov_omega, 0.5, dim=2), supersample=2)
    return sinogram, gt


@pytest.fixture(scope="module")
def fit(scan):
    sinogram, gt = scan
    mask = fov_mask(gt.grid, DOMAIN)
    runs = {}

    def _fit(
        mode=TrainMode.EXTENDED,
        restricted_levels=2,
        step_outside=1.0,
        iterations=ITERATIONS,
        target=None,
    ):
        key = (mode, restricted_levels, step_outside, iterations, target)
        if key not in runs:
            result = train(
                sinogram,
                DOMAIN,
                _encoder(restricted_levels),
                MLP,
                _plan(step_outside),
                _config(mode, iterations, target),
                gt=gt if target is not None else None,
                workers=2,
            )
            recon = reconstruct_volume(result.model, DOMAIN, gt.grid, workers=2)
            runs[key] = (result, psnr(recon, gt, mask=mask))
        return runs[key]

    return _fit


def _seconds(sinogram, step_outside, repeats=3):
    cfg = _config(TrainMode.EXTENDED, 60)
    return min(
        train(sinogram, DOMAIN, _encoder(2), MLP, _plan(step_outside), cfg).train_seconds
        for _ in range(repeats)
    )


def test_extended_domain_beats_truncated_training(fit):
    _, truncated = fit(mode=TrainMode.TRUNCATED)
    _, extended = fit()
    assert extended >= truncated + 5.0


def test_extended_training_beats_filtered_backprojection(scan, fit):
    sinogram, gt = scan
    fbp = fdk_reconstruct(sinogram, gt.grid, workers=2)
    _, extended = fit()
    assert extended > psnr(fbp, gt, mask=fov_mask(gt.grid, DOMAIN))


def test_adaptive_sampling_reaches_the_reference_faster(fit):
    reference, reference_psnr = fit(
        restricted_levels=N_LEVELS, step_outside=STEP_INSIDE
    )
    adaptive, _ = fit(
        step_outside=10 * STEP_INSIDE,
        iterations=2 * ITERATIONS,
        target=reference_psnr - 1.0,
    )
    assert adaptive.stop_reason == "target_psnr"
    assert adaptive.time_to_target_s <= 0.7 * reference.train_seconds


def test_psnr_is_stable_across_the_ablation(fit):
    values = [fit(restricted_levels=m)[1] for m in (1, 2, 4, 8)]
    values += [fit(step_outside=step)[1] for step in (0.5, 2.0, 4.0)]
    assert np.all(np.isfinite(values))
    assert max(values) - min(values) < 1.5


def test_coarser_outer_sampling_trains_faster(scan):
    sinogram, _ = scan
    times = [_seconds(sinogram, step) for step in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(times, times[1:]))
