import csv
import math

import numpy as np
import pytest

from hashCT.models.v1.data import GridSpec, VolumeGrid
from hashCT.models.v1.geometry import Domain
from hashCT.models.v1.metrics import MetricsConfig
from hashCT.util.v1.errors import BoundsError, ShapeError
from hashCT.util.v1.metrics import (
    decode_diff,
    diff_image,
    evaluate,
    fov_mask,
    load_diff_png,
    psnr,
    rim_artifact_ratio,
    save_diff_png,
    ssim,
    write_reports,
)

GRID = GridSpec(dims=(32, 32, 3), pitch=(1.0, 1.0, 1.0), origin=(-15.5, -15.5, -1.0))
DOMAIN = Domain(fov_mm=(20.0, 20.0, 4.0), extended_mm=(40.0, 40.0, 8.0))


def _volume(values):
    return VolumeGrid(grid=GRID, values=values)


@pytest.fixture
def gt(rng):
    return _volume(rng.uniform(0.0, 0.02, size=GRID.shape))


def test_identical_volumes(gt):
    assert math.isinf(psnr(gt, gt))
    assert ssim(gt, gt) == pytest.approx(1.0)


def test_psnr_of_constant_offset():
    values = np.zeros(GRID.shape)
    values[0, 0, 0] = 1.0
    truth = _volume(values)
    assert psnr(_volume(values + 0.1), truth) == pytest.approx(20.0)
    assert psnr(_volume(values + 0.1), truth, data_range=10.0) == pytest.approx(40.0)


def test_psnr_uses_the_mask_only(gt):
    mask = fov_mask(GRID, DOMAIN)
    noisy = gt.values.copy()
    noisy[~mask] += 1.0
    assert math.isinf(psnr(_volume(noisy), gt, mask=mask))


def test_mismatched_grids_are_rejected(gt):
    other = GridSpec(dims=(32, 32, 3), pitch=(2.0, 1.0, 1.0), origin=GRID.origin)
    with pytest.raises(ShapeError):
        psnr(VolumeGrid(grid=other, values=gt.values), gt)


def test_ssim_is_symmetric(gt, rng):
    noisy = _volume(gt.values + rng.normal(scale=0.002, size=GRID.shape))
    config = MetricsConfig(data_range=0.02)
    assert ssim(noisy, gt, config) == pytest.approx(ssim(gt, noisy, config), rel=1e-12)
    assert ssim(noisy, gt, config) < 1.0


def test_ssim_matches_scikit_image(gt, rng):
    metrics = pytest.importorskip("skimage.metrics")
    noisy = _volume(gt.values + rng.normal(scale=0.004, size=GRID.shape))
    expected = np.mean(
        [
            metrics.structural_similarity(
                noisy.values[z],
                gt.values[z],
                data_range=0.02,
                gaussian_weights=True,
                sigma=1.5,
                use_sample_covariance=False,
            )
            for z in range(GRID.shape[0])
        ]
    )
    value = ssim(noisy, gt, MetricsConfig(data_range=0.02))
    assert value == pytest.approx(expected, rel=1e-9)


def test_fov_mask_counts():
    mask = fov_mask(GRID, DOMAIN)
    assert mask.shape == GRID.shape
    # x, y centers -15.5..15.5 step 1; |c| <= 10 keeps 20 per axis
    assert mask.sum() == 20 * 20 * 3


def test_rim_ratio_of_flat_and_bright_rim():
    flat = _volume(np.full(GRID.shape, 0.02))
    assert rim_artifact_ratio(flat, DOMAIN) == pytest.approx(0.0)

    xs, ys, _ = GRID.axis_coordinates()
    r = np.hypot(xs[None, :], ys[:, None])
    values = np.where(r > 8.0, 0.04, 0.02)[None].repeat(3, axis=0)
    assert rim_artifact_ratio(_volume(values), DOMAIN) == pytest.approx(1.0)


def test_rim_ratio_needs_resolution():
    coarse = GridSpec(dims=(2, 2, 1), pitch=(20.0, 20.0, 1.0), origin=(-10.0, -10.0, 0.0))
    with pytest.raises(ShapeError):
        rim_artifact_ratio(VolumeGrid(grid=coarse, values=np.ones((1, 2, 2))), DOMAIN)


def test_diff_image_levels(gt):
    window = 0.005
    assert np.all(diff_image(gt, gt, 1, window) == 128)
    brighter = _volume(gt.values + window)
    darker = _volume(gt.values - 2 * window)
    assert np.all(diff_image(brighter, gt, 1, window) == 255)
    assert np.all(diff_image(darker, gt, 1, window) == 0)


def test_diff_image_decodes_within_one_step(gt, rng):
    window = 0.005
    delta = rng.uniform(-window, window, size=GRID.shape)
    image = diff_image(_volume(gt.values + delta), gt, 2, window)
    decoded = decode_diff(image, window)
    assert np.abs(decoded - delta[2]).max() <= window / 127.5 * 0.5 + 1e-12


def test_diff_image_bounds(gt):
    with pytest.raises(BoundsError):
        diff_image(gt, gt, 3, 0.005)
    with pytest.raises(ValueError):
        diff_image(gt, gt, 0, 0.0)


def test_diff_png_keeps_window(gt, tmp_path):
    image = diff_image(_volume(gt.values + 0.001), gt, 0, 0.004)
    path = tmp_path / "diff.png"
    save_diff_png(path, image, 0.004, 0)
    loaded, window = load_diff_png(path)
    np.testing.assert_array_equal(loaded, image)
    assert window == 0.004


def test_evaluate_and_reports(gt, tmp_path):
    report = evaluate("same", gt, gt, DOMAIN)
    assert math.isinf(report.psnr)
    assert report.ssim == pytest.approx(1.0)
    assert report.n_voxels == 20 * 20 * 3

    csv_path, txt_path = write_reports(tmp_path, [report])
    with open(csv_path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert rows[0]["name"] == "same"
    assert "same" in txt_path.read_text()
