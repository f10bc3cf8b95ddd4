"""
This module provides the differentiable forward projection of the neural
field: two-zone ray sampling, midpoint quadrature and the L1 residual with its
backward pass.
"""

from typing import Callable, Optional

import numpy as np

from hashCT.models.v1.geometry import Box, Domain, Ray
from hashCT.models.v1.projector import SamplingPlan
from hashCT.util.v1 import network
from hashCT.util.v1.encoder import EncoderGradBuffer, EncodingCache, HashEncoding
from hashCT.util.v1.geometry import clip_rays_to_box
from hashCT.util.v1.network import ForwardCache, MLPGrads, MLPParams

GRID_GUARD = 1e-9


class RaySampleSet:
    """
    Samples of a batch of rays, sorted by ray and then by ray parameter.

    Attributes:
        n_rays (int): Number of rays in the batch.
        ray_index (np.ndarray): Owning ray of each sample.
        t (np.ndarray): Ray parameter (mm) of each midpoint node.
        weights (np.ndarray): Step length (mm) of each node.
        inside (np.ndarray): True inside the FOV, False in the outer domain.
        points (np.ndarray): Sample positions (n, 3) in mm.
    """

    def __init__(self, n_rays, ray_index, t, weights, inside, points):
        self.n_rays = n_rays
        self.ray_index = ray_index
        self.t = t
        self.weights = weights
        self.inside = inside
        self.points = points

    def __len__(self):
        return int(self.t.size)

    def zone_lengths(self):
        """Per-ray summed step weights inside and outside the FOV."""
        inside = np.bincount(
            self.ray_index[self.inside],
            weights=self.weights[self.inside],
            minlength=self.n_rays,
        )
        outside = np.bincount(
            self.ray_index[~self.inside],
            weights=self.weights[~self.inside],
            minlength=self.n_rays,
        )
        return inside, outside


class GradientBuffers:
    """Network gradients and sparse hash-table gradients of one batch."""

    def __init__(self, params: MLPParams, enc: HashEncoding):
        self.mlp = MLPGrads.zeros_like(params)
        self.encoder: EncoderGradBuffer = enc.new_grad_buffer()

    def merge(self, other: "GradientBuffers") -> None:
        self.mlp.add_(other.mlp)
        self.encoder.merge(other.encoder)


class ProjectionCache:
    """State of ``forward_project`` needed by ``residual_and_backward``."""

    def __init__(self, enc, params, ray_index, weights, encoding, net, n_rays):
        self.enc: HashEncoding = enc
        self.params: MLPParams = params
        self.ray_index = ray_index
        self.weights = weights
        self.encoding: EncodingCache = encoding
        self.net: ForwardCache = net
        self.n_rays = n_rays


def _sample_intervals(a, b, step, ray_ids, anchor):
    # midpoint nodes of [a, b] on the grid anchor + k * step; cells cut by
    # a or b are truncated so the weights add up to b - a
    k0 = np.floor((a - anchor) / step + GRID_GUARD)
    k1 = np.ceil((b - anchor) / step - GRID_GUARD)
    counts = np.where(b > a, np.maximum(k1 - k0, 1), 0).astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0)
        return np.zeros(0, dtype=np.int64), empty, empty
    first = np.cumsum(counts) - counts
    owner = np.repeat(np.arange(a.size), counts)
    k = np.arange(total) - first[owner]
    cell = k0[owner] + k
    lo = np.maximum(anchor[owner] + cell * step, a[owner])
    hi = np.minimum(anchor[owner] + (cell + 1) * step, b[owner])
    lo[k == 0] = a[owner][k == 0]
    last = k == counts[owner] - 1
    hi[last] = b[owner][last]
    keep = hi > lo
    return ray_ids[owner][keep], 0.5 * (lo + hi)[keep], (hi - lo)[keep]


def _grid_fraction(n, plan, rng):
    if plan.jitter and rng is not None:
        return rng.uniform(0.0, 1.0, size=n)
    return np.zeros(n)


def _sample_set(origins, directions, n, zones):
    ray_index = np.concatenate([z[0] for z in zones])
    t = np.concatenate([z[1] for z in zones])
    weights = np.concatenate([z[2] for z in zones])
    inside = np.concatenate([np.full(z[0].size, z[3]) for z in zones])
    order = np.lexsort((t, ray_index))
    ray_index, t, weights, inside = (
        ray_index[order],
        t[order],
        weights[order],
        inside[order],
    )
    points = origins[ray_index] + t[:, None] * directions[ray_index]
    return RaySampleSet(n, ray_index, t, weights, inside, points)


def sample_rays(
    origins: np.ndarray,
    directions: np.ndarray,
    domain: Domain,
    plan: SamplingPlan,
    rng: Optional[np.random.Generator] = None,
) -> RaySampleSet:
    """Partition each ray's extended-domain chord by FOV membership and sample it.

    Every zone samples on a grid anchored at the ray's entry into the extended
    domain, so with equal steps the zones share one grid and only the steps
    crossing the FOV boundary are split.

    Args:
        origins (np.ndarray): (n, 3) ray origins.
        directions (np.ndarray): (n, 3) unit directions.
        domain (Domain): FOV and extended FOV.
        plan (SamplingPlan): Step sizes per zone.
        rng (np.random.Generator, optional): Source of the jitter offsets.

    Returns:
        RaySampleSet: Samples ordered by ray and ray parameter.
    """
    n = origins.shape[0]
    e_near, e_far, e_hit = clip_rays_to_box(origins, directions, domain.fov_extended)
    i_near, i_far, i_hit = clip_rays_to_box(origins, directions, domain.fov_omega)
    i_hit &= e_hit
    i_near = np.clip(i_near, e_near, e_far)
    i_far = np.clip(i_far, e_near, e_far)
    ids = np.arange(n)
    frac = _grid_fraction(n, plan, rng)
    entry = np.where(e_hit, e_near, 0.0)

    def _anchor(step):
        return entry + np.where(frac > 0, (frac - 1.0) * step, 0.0)

    out_anchor, in_anchor = _anchor(plan.step_outside), _anchor(plan.step_inside)
    zones = []
    # out - in - out; rays missing the FOV keep a single outer interval
    a = entry
    b = np.where(e_hit, np.where(i_hit, i_near, e_far), 0.0)
    zones.append(
        _sample_intervals(a, b, plan.step_outside, ids, out_anchor) + (False,)
    )
    a = np.where(i_hit, i_near, 0.0)
    b = np.where(i_hit, i_far, 0.0)
    zones.append(_sample_intervals(a, b, plan.step_inside, ids, in_anchor) + (True,))
    a = np.where(i_hit, i_far, 0.0)
    b = np.where(i_hit, e_far, 0.0)
    zones.append(
        _sample_intervals(a, b, plan.step_outside, ids, out_anchor) + (False,)
    )
    return _sample_set(origins, directions, n, zones)


def sample_rays_single_zone(
    origins: np.ndarray,
    directions: np.ndarray,
    domain: Domain,
    plan: SamplingPlan,
    rng: Optional[np.random.Generator] = None,
) -> RaySampleSet:
    """Sample the whole extended-domain chord at the inside step.

    This is the naive domain extension: one grid, no zone boundaries. Samples
    are still tagged by FOV membership of their midpoint.
    """
    n = origins.shape[0]
    e_near, e_far, e_hit = clip_rays_to_box(origins, directions, domain.fov_extended)
    frac = _grid_fraction(n, plan, rng)
    a = np.where(e_hit, e_near, 0.0)
    b = np.where(e_hit, e_far, 0.0)
    anchor = a + np.where(frac > 0, (frac - 1.0) * plan.step_inside, 0.0)
    ray_ids, t, weights = _sample_intervals(
        a, b, plan.step_inside, np.arange(n), anchor
    )
    points = origins[ray_ids] + t[:, None] * directions[ray_ids]
    box = domain.fov_omega
    inside = np.all(
        (points >= np.asarray(box.lo)) & (points <= np.asarray(box.hi)), axis=1
    )
    return RaySampleSet(n, ray_ids, t, weights, inside, points)


def sample_ray(
    ray: Ray,
    domain: Domain,
    plan: SamplingPlan,
    rng: Optional[np.random.Generator] = None,
) -> RaySampleSet:
    """Two-zone samples of a single ray; empty when the ray misses the domain."""
    return sample_rays(
        np.asarray([ray.origin], dtype=np.float64),
        np.asarray([ray.direction], dtype=np.float64),
        domain,
        plan,
        rng=rng,
    )



def to_unit_cube(points: np.ndarray, box: Box, dim: int) -> np.ndarray:
    """Normalize positions in the extended domain to [0, 1]^dim."""
    lo = np.asarray(box.lo[:dim])
    size = np.asarray(box.size[:dim])
    return np.clip((points[:, :dim] - lo) / size, 0.0, 1.0)


def integrate_field(
    samples: RaySampleSet, mu_fn: Callable[[np.ndarray], np.ndarray], zone=None
) -> np.ndarray:
    """Quadrature ``sum mu(x_k) * w_k`` per ray for an arbitrary field.

    Args:
        samples (RaySampleSet): Ray samples.
        mu_fn (Callable): Field evaluated at (n, 3) positions.
        zone (bool, optional): Restrict to inside (True) or outside (False).

    Returns:
        np.ndarray: Per-ray integrals.
    """
    keep = np.ones(len(samples), dtype=bool) if zone is None else samples.inside == zone
    values = mu_fn(samples.points[keep]) * samples.weights[keep]
    return np.bincount(
        samples.ray_index[keep], weights=values, minlength=samples.n_rays
    )


def forward_project(
    samples: RaySampleSet,
    enc: HashEncoding,
    net: MLPParams,
    extended: bool,
    domain: Domain,
    restrict_outer: bool = True,
):
    """Predicted projections of the neural field.

    Inside samples use the full encoder. In extended mode outer samples use the
    restricted encoder unless ``restrict_outer`` is off; in truncated mode they
    are skipped entirely.

    Args:
        samples (RaySampleSet): Ray samples.
        enc (HashEncoding): Hash encoding.
        net (MLPParams): Field network.
        extended (bool): Integrate the outer domain too.
        domain (Domain): Domain used to normalize coordinates.
        restrict_outer (bool): Encode outer samples with the first m levels only.

    Returns:
        tuple: Per-ray predictions (float64) and a ``ProjectionCache``.
    """
    keep = np.ones(len(samples), dtype=bool) if extended else samples.inside
    ray_index = samples.ray_index[keep]
    weights = samples.weights[keep]
    x = to_unit_cube(samples.points[keep], domain.fov_extended, enc.dim)
    restricted = ~samples.inside[keep] if extended and restrict_outer else None
    features, encoding = enc.encode(x, restricted=restricted)
    mu, net_cache = network.forward(net, features)
    predicted = np.bincount(
        ray_index, weights=mu.astype(np.float64) * weights, minlength=samples.n_rays
    )
    cache = ProjectionCache(
        enc, net, ray_index, weights, encoding, net_cache, samples.n_rays
    )
    return predicted, cache


def residual_and_backward(
    measured,
    predicted,
    cache: ProjectionCache,
    buffers: GradientBuffers,
    scale: float = 1.0,
) -> float:
    """L1 residual ``scale * sum |P - pred|`` and its subgradient.

    The upstream gradient ``-sign(P - pred)`` (0 at a zero residual) is routed
    through each sample's step weight into the network and the encoder.

    Args:
        measured: Measured projections per ray.
        predicted: Predictions from ``forward_project``.
        cache (ProjectionCache): Cache from ``forward_project``.
        buffers (GradientBuffers): Gradient accumulators.
        scale (float): Loss scale, e.g. 1 / batch size.

    Returns:
        float: The loss contribution.
    """
    residual = np.asarray(measured, dtype=np.float64) - np.asarray(predicted)
    grad_pred = -np.sign(residual) * scale
    upstream = grad_pred[cache.ray_index] * cache.weights
    if upstream.size:
        param_grads, feature_grads = network.backward(cache.params, cache.net, upstream)
        buffers.mlp.add_(param_grads)
        cache.enc.backward(cache.encoding, feature_grads, buffers.encoder)
    return float(scale * np.abs(residual).sum())


class FieldModel:
    """The learnable field: hash encoding phi and network theta."""

    def __init__(self, encoding: HashEncoding, params: MLPParams):
        if encoding.output_dim != params.config.input_dim:
            raise ValueError(
                f"encoder width {encoding.output_dim} does not match network "
                f"input {params.config.input_dim}"
            )
        self.encoding = encoding
        self.params = params

    def new_buffers(self) -> GradientBuffers:
        return GradientBuffers(self.params, self.encoding)
