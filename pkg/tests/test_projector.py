import numpy as np
import pytest
from scipy.special import erf

from hashCT.models.v1.encoder import EncoderConfig
from hashCT.models.v1.geometry import Domain, Ray
from hashCT.models.v1.network import MLPConfig
from hashCT.models.v1.projector import SamplingPlan
from hashCT.util.v1 import network
from hashCT.util.v1.encoder import HashEncoding
from hashCT.util.v1.geometry import clip_rays_to_box, make_rays
from hashCT.util.v1.phantom import builtin_phantom, mu_at, project_rays
from hashCT.util.v1.projector import (
    FieldModel,
    forward_project,
    integrate_field,
    residual_and_backward,
    sample_ray,
    sample_rays,
    sample_rays_single_zone,
    to_unit_cube,
)

ORIGIN = np.array([[200.0, 0.0, 0.0]])
TOWARDS_CENTER = np.array([[-1.0, 0.0, 0.0]])


def test_zone_lengths_cover_chords(planar_domain):
    samples = sample_rays(ORIGIN, TOWARDS_CENTER, planar_domain, SamplingPlan())
    inside, outside = samples.zone_lengths()
    assert inside[0] == pytest.approx(30.0, abs=1e-9)
    assert outside[0] == pytest.approx(50.0, abs=1e-9)
    assert np.count_nonzero(samples.inside) == 150
    # 25 mm per outer side at 2 mm: 12 full steps and a truncated one
    assert np.count_nonzero(~samples.inside) == 26


def test_samples_are_ordered_midpoints(planar_domain):
    samples = sample_rays(ORIGIN, TOWARDS_CENTER, planar_domain, SamplingPlan())
    assert np.all(np.diff(samples.t) > 0)
    # out - in - out along the ray
    zones = samples.inside.astype(int)
    assert np.count_nonzero(np.diff(zones)) == 2
    first = samples.t[0]
    assert first == pytest.approx(160.0 + 1.0)
    np.testing.assert_allclose(samples.points[:, 1:], 0.0)


def test_jitter_preserves_lengths(planar_domain):
    plan = SamplingPlan(jitter=True)
    origins = np.repeat(ORIGIN, 5, axis=0)
    directions = np.repeat(TOWARDS_CENTER, 5, axis=0)
    samples = sample_rays(
        origins, directions, planar_domain, plan, rng=np.random.default_rng(0)
    )
    inside, outside = samples.zone_lengths()
    np.testing.assert_allclose(inside, 30.0, atol=1e-9)
    np.testing.assert_allclose(outside, 50.0, atol=1e-9)


def test_ray_missing_the_domain(planar_domain):
    samples = sample_rays(
        np.array([[200.0, 100.0, 0.0]]), TOWARDS_CENTER, planar_domain, SamplingPlan()
    )
    assert len(samples) == 0
    assert integrate_field(samples, lambda p: np.ones(len(p)))[0] == 0.0


def test_gaussian_line_integral(planar_domain):
    sigma = 5.0
    samples = sample_rays(ORIGIN, TOWARDS_CENTER, planar_domain, SamplingPlan())

    def gaussian(points):
        return np.exp(-(points**2).sum(axis=1) / (2 * sigma**2))

    value = integrate_field(samples, gaussian)[0]
    assert value == pytest.approx(sigma * np.sqrt(2 * np.pi), rel=1e-3)
    inside = integrate_field(samples, gaussian, zone=True)[0]
    assert inside < value


def test_constant_field_forward(constant_model, planar_domain):
    samples = sample_rays(ORIGIN, TOWARDS_CENTER, planar_domain, SamplingPlan())
    enc, params = constant_model.encoding, constant_model.params
    extended, _ = forward_project(samples, enc, params, True, planar_domain)
    truncated, _ = forward_project(samples, enc, params, False, planar_domain)
    assert extended[0] == pytest.approx(0.05 * 80.0, rel=1e-6)
    assert truncated[0] == pytest.approx(0.05 * 30.0, rel=1e-6)


def test_residual_gradient_on_output_bias(constant_model, planar_domain):
    samples = sample_rays(ORIGIN, TOWARDS_CENTER, planar_domain, SamplingPlan())
    enc, params = constant_model.encoding, constant_model.params
    predicted, cache = forward_project(samples, enc, params, True, planar_domain)
    buffers = constant_model.new_buffers()
    loss = residual_and_backward([10.0], predicted, cache, buffers)
    assert loss == pytest.approx(6.0, rel=1e-6)
    # d pred / d b = sum_k w_k * mu_max * s (1 - s) = 80 * 0.1 * 0.25
    assert buffers.mlp.biases[-1][0] == pytest.approx(-2.0, rel=1e-6)


def test_zero_residual_has_zero_gradient(constant_model, planar_domain):
    samples = sample_rays(ORIGIN, TOWARDS_CENTER, planar_domain, SamplingPlan())
    enc, params = constant_model.encoding, constant_model.params
    predicted, cache = forward_project(samples, enc, params, False, planar_domain)
    buffers = constant_model.new_buffers()
    loss = residual_and_backward(predicted, predicted, cache, buffers)
    assert loss == 0.0
    assert not any(g.any() for g in buffers.mlp.tensors())


def test_truncated_mode_ignores_outer_samples(tiny_model, planar_domain):
    samples = sample_rays(ORIGIN, TOWARDS_CENTER, planar_domain, SamplingPlan())
    enc, params = tiny_model.encoding, tiny_model.params
    _, cache = forward_project(samples, enc, params, False, planar_domain)
    assert cache.ray_index.size == np.count_nonzero(samples.inside)


def test_extended_gradient_matches_finite_differences(
    tiny_encoder_config, tiny_mlp_config, planar_domain
):
    rng = np.random.default_rng(3)
    cfg = tiny_encoder_config
    tables = [rng.uniform(-1, 1, size=(cfg.table_size, 2)) for _ in range(cfg.n_levels)]
    model = FieldModel(
        HashEncoding(cfg, dim=2, dtype=np.float64, tables=tables),
        network.init(tiny_mlp_config, seed=4, dtype=np.float64),
    )
    origins = np.array([[200.0, 3.0, 0.0], [0.0, 200.0, 0.0]])
    directions = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    samples = sample_rays(origins, directions, planar_domain, SamplingPlan())
    measured = np.array([100.0, -100.0])

    def objective():
        pred, _ = forward_project(samples, model.encoding, model.params, True, planar_domain)
        return float(np.abs(measured - pred).sum())

    pred, cache = forward_project(samples, model.encoding, model.params, True, planar_domain)
    buffers = model.new_buffers()
    residual_and_backward(measured, pred, cache, buffers)

    h = 1e-6
    bias = model.params.biases[-1]
    saved = bias[0]
    bias[0] = saved + h
    plus = objective()
    bias[0] = saved - h
    minus = objective()
    bias[0] = saved
    assert (plus - minus) / (2 * h) == pytest.approx(buffers.mlp.biases[-1][0], rel=1e-5)

    rows, grads = buffers.encoder.reduce(0)
    row = rows[np.argmax(np.abs(grads[:, 0]))]
    table = model.encoding.tables[0]
    saved = table[row, 0]
    table[row, 0] = saved + h
    plus = objective()
    table[row, 0] = saved - h
    minus = objective()
    table[row, 0] = saved
    expected = grads[rows == row][0, 0]
    assert (plus - minus) / (2 * h) == pytest.approx(expected, rel=1e-5)


def test_unit_cube_mapping():
    domain = Domain(fov_mm=(30.0, 30.0), extended_mm=(80.0, 80.0))
    x = to_unit_cube(
        np.array([[-40.0, -40.0, 0.0], [40.0, 40.0, 0.0], [0.0, 0.0, 0.0]]),
        domain.fov_extended,
        2,
    )
    np.testing.assert_allclose(x, [[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]])


def _fan_rays(geom):
    views, rows, cols = np.meshgrid(
        np.arange(0, geom.n_views, 5), [0], np.arange(geom.detector_cols), indexing="ij"
    )
    return make_rays(geom, views.ravel(), rows.ravel(), cols.ravel())


EQUAL_STEPS = SamplingPlan(step_inside=0.25, step_outside=0.25)


def test_equal_steps_put_both_zones_on_one_grid(fan_geometry, planar_domain):
    origins, directions = _fan_rays(fan_geometry)
    two = sample_rays(origins, directions, planar_domain, EQUAL_STEPS)
    one = sample_rays_single_zone(origins, directions, planar_domain, EQUAL_STEPS)
    near, far, _ = clip_rays_to_box(origins, directions, planar_domain.fov_omega)
    extra = np.bincount(two.ray_index, minlength=two.n_rays) - np.bincount(
        one.ray_index, minlength=one.n_rays
    )
    assert np.all((extra >= 0) & (extra <= 2))
    for ray in range(one.n_rays):
        a = one.t[one.ray_index == ray]
        b = two.t[two.ray_index == ray]
        # only nodes of steps split by the FOV boundary may differ
        changed = np.concatenate([np.setdiff1d(a, b), np.setdiff1d(b, a)])
        gap = np.minimum(np.abs(changed - near[ray]), np.abs(changed - far[ray]))
        assert np.all(gap < EQUAL_STEPS.step_inside)
    np.testing.assert_allclose(
        np.add(*two.zone_lengths()), np.add(*one.zone_lengths()), atol=1e-9
    )


def test_single_zone_tags_follow_the_fov(fan_geometry, planar_domain):
    origins, directions = _fan_rays(fan_geometry)
    one = sample_rays_single_zone(origins, directions, planar_domain, EQUAL_STEPS)
    inside = np.all(np.abs(one.points[:, :2]) <= 15.0, axis=1)
    np.testing.assert_array_equal(one.inside, inside)


def test_full_restriction_matches_naive_extension(fan_geometry, planar_domain):
    cfg = EncoderConfig(
        n_levels=4, n_min=4, n_max=32, table_size=2**10, feature_dim=2, restricted_levels=4
    )
    enc = HashEncoding(cfg, dim=2, seed=5, dtype=np.float64)
    params = network.init(
        MLPConfig(input_dim=8, hidden_layers=2, hidden_width=16, mu_max=0.1),
        seed=6,
        dtype=np.float64,
    )
    origins, directions = _fan_rays(fan_geometry)
    two = sample_rays(origins, directions, planar_domain, EQUAL_STEPS)
    one = sample_rays_single_zone(origins, directions, planar_domain, EQUAL_STEPS)
    zoned, _ = forward_project(two, enc, params, True, planar_domain)
    naive, _ = forward_project(one, enc, params, True, planar_domain, restrict_outer=False)
    np.testing.assert_allclose(zoned, naive, rtol=1e-6)


def test_sample_ray_applies_jitter(planar_domain):
    ray = Ray(
        origin=(200.0, 0.0, 0.0), direction=(-1.0, 0.0, 0.0), detector_index=(0, 0, 0)
    )
    plan = SamplingPlan(jitter=True)
    fixed = sample_ray(ray, planar_domain, plan)
    jittered = sample_ray(ray, planar_domain, plan, rng=np.random.default_rng(7))
    assert not np.array_equal(fixed.t, jittered.t)
    np.testing.assert_allclose(jittered.zone_lengths(), fixed.zone_lengths(), atol=1e-9)


def test_halving_the_steps_quarters_the_quadrature_error():
    # zone boundaries land on every grid, so each zone is a plain midpoint rule
    domain = Domain(fov_mm=(32.0, 32.0), extended_mm=(96.0, 96.0))
    sigma, shift = 12.0, 3.0

    def gaussian(points):
        return np.exp(-((points[:, 0] - shift) ** 2 + points[:, 1] ** 2) / (2 * sigma**2))

    scale = sigma * np.sqrt(np.pi / 2)
    root2 = sigma * np.sqrt(2)
    exact = scale * (erf((48.0 - shift) / root2) - erf((-48.0 - shift) / root2))
    errors = []
    for step in (1.0, 0.5, 0.25, 0.125):
        plan = SamplingPlan(step_inside=step, step_outside=4 * step)
        samples = sample_rays(ORIGIN, TOWARDS_CENTER, domain, plan)
        errors.append(integrate_field(samples, gaussian)[0] - exact)
    ratios = np.array(errors[:-1]) / np.array(errors[1:])
    assert np.all((ratios > 3.0) & (ratios < 5.0))


def test_fov_integral_misses_the_outer_mass(fan_geometry, planar_domain):
    disk = builtin_phantom("disk", scale_mm=40.0, dim=2)
    origins, directions = _fan_rays(fan_geometry)
    samples = sample_rays(
        origins, directions, planar_domain, SamplingPlan(step_inside=0.05, step_outside=0.5)
    )
    measured = project_rays(disk, origins, directions)
    inside = integrate_field(samples, lambda p: mu_at(disk, p), zone=True)
    assert np.all(measured > inside + 0.1)
