"""
This module provides the multi-resolution hash encoding, its restricted
variant that keeps only the coarsest levels, and the adjoint that scatters
feature gradients back into the hash tables.
"""

import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from hashCT.models.v1.encoder import EncoderConfig
from hashCT.util.v1.errors import BoundsError, DomainError, ShapeError

HASH_PRIMES = np.array([1, 19349663, 83492791], dtype=np.uint64)
INIT_SCALE = 1e-4


def level_resolution(cfg: EncoderConfig, level: int) -> int:
    """Grid resolution ``floor(N_min * b**level)`` of one level.

    A relative guard of 1e-12 keeps ``N_max`` at the last level when the
    power lands a rounding error below the integer.

    Args:
        cfg (EncoderConfig): Encoder configuration.
        level (int): Level index.

    Returns:
        int: Grid resolution N_level.

    Raises:
        BoundsError: If the level is out of range.
    """
    if not 0 <= level < cfg.n_levels:
        raise BoundsError(f"level {level} outside [0, {cfg.n_levels})")
    return int(math.floor(cfg.n_min * cfg.growth_factor**level * (1.0 + 1e-12)))


def spatial_hash(vertex, table_size: int) -> np.ndarray:
    """XOR-of-primes spatial hash modulo the table size.

    Args:
        vertex: Non-negative integer vertex (d,) or vertices (n, d), d <= 3.
        table_size (int): Table size T, a power of two.

    Returns:
        np.ndarray: Table indices in [0, T).
    """
    v = np.asarray(vertex).astype(np.uint64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    h = np.zeros(v.shape[0], dtype=np.uint64)
    for i in range(v.shape[1]):
        h ^= v[:, i] * HASH_PRIMES[i]
    h &= np.uint64(table_size - 1)
    return h[0] if single else h


class EncoderGradBuffer:
    """
    Sparse per-level gradient accumulator.

    Contributions are appended in call order and reduced with ``np.bincount``,
    so the dense result only depends on the order of accumulation.
    """

    def __init__(self, n_levels: int, feature_dim: int):
        self.n_levels = n_levels
        self.feature_dim = feature_dim
        self._rows: List[List[np.ndarray]] = [[] for _ in range(n_levels)]
        self._values: List[List[np.ndarray]] = [[] for _ in range(n_levels)]

    def add(self, level: int, rows: np.ndarray, values: np.ndarray) -> None:
        if rows.size:
            self._rows[level].append(rows.astype(np.int64, copy=False))
            self._values[level].append(values)

    def merge(self, other: "EncoderGradBuffer") -> None:
        for level in range(self.n_levels):
            self._rows[level].extend(other._rows[level])
            self._values[level].extend(other._values[level])

    def is_empty(self) -> bool:
        return not any(self._rows)

    def reduce(self, level: int) -> Tuple[np.ndarray, np.ndarray]:
        """Touched rows (sorted) and their summed gradients (k, F) in float64."""
        if not self._rows[level]:
            return np.zeros(0, dtype=np.int64), np.zeros((0, self.feature_dim))
        rows = np.concatenate(self._rows[level])
        values = np.concatenate(self._values[level]).astype(np.float64)
        unique, inverse = np.unique(rows, return_inverse=True)
        summed = np.stack(
            [
                np.bincount(inverse, weights=values[:, f], minlength=unique.size)
                for f in range(self.feature_dim)
            ],
            axis=-1,
        )
        return unique, summed

    def to_dense(self, level: int, table_size: int) -> np.ndarray:
        dense = np.zeros((table_size, self.feature_dim), dtype=np.float64)
        rows, summed = self.reduce(level)
        dense[rows] = summed
        return dense


class EncodingCache:
    """Corner indices and weights of an encode call, per active level."""

    def __init__(self, n_points: int):
        self.n_points = n_points
        # level -> (point rows or None for all, corner indices, corner weights)
        self.levels: Dict[int, Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]] = {}


class HashEncoding:
    """
    Learnable hash tables phi_0..phi_{L-1} and the resolution schedule.

    Args:
        config (EncoderConfig): Encoder configuration.
        dim (int): Input dimension, 2 or 3.
        seed (int): Seed of the uniform table initialization.
        dtype: Table dtype, float32 for training and float64 for checks.
        tables (list, optional): Existing tables to adopt.
    """

    def __init__(
        self,
        config: EncoderConfig,
        dim: int = 3,
        seed: int = 0,
        dtype=np.float32,
        tables: Optional[List[np.ndarray]] = None,
    ):
        if dim not in (2, 3):
            raise ShapeError("hash encoding supports 2D and 3D inputs")
        self.config = config
        self.dim = dim
        self.dtype = np.dtype(dtype)
        self.resolutions = [
            level_resolution(config, level) for level in range(config.n_levels)
        ]
        shape = (config.table_size, config.feature_dim)
        if tables is None:
            rng = np.random.default_rng(seed)
            tables = [
                rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
                for _ in range(config.n_levels)
            ]
        if len(tables) != config.n_levels or any(t.shape != shape for t in tables):
            raise ShapeError("hash tables do not match the encoder configuration")
        self.tables = [np.ascontiguousarray(t, dtype=self.dtype) for t in tables]
        self.corner_offsets = np.array(
            [[(k >> i) & 1 for i in range(dim)] for k in range(2**dim)],
            dtype=np.int64,
        )

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def _corners(self, x: np.ndarray, level: int) -> Tuple[np.ndarray, np.ndarray]:
        res = self.resolutions[level]
        scaled = x * res
        base = np.minimum(np.floor(scaled).astype(np.int64), res - 1)
        frac = scaled - base
        vertices = base[:, None, :] + self.corner_offsets[None, :, :]
        index = spatial_hash(
            vertices.reshape(-1, self.dim), self.config.table_size
        ).reshape(vertices.shape[:2])
        weights = np.ones(vertices.shape[:2], dtype=np.float64)
        for i in range(self.dim):
            delta = self.corner_offsets[:, i][None, :]
            weights *= np.where(delta == 1, frac[:, i : i + 1], 1.0 - frac[:, i : i + 1])
        return index.astype(np.int64), weights

    def encode(
        self, x, restricted: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, EncodingCache]:
        """Encode points, using the restricted encoder where ``restricted`` is set.

        Args:
            x: Points in [0, 1]^d, shape (n, d).
            restricted (np.ndarray, optional): Boolean mask (n,); masked points
                only receive the first m levels, the rest stays zero.

        Returns:
            tuple: Features (n, L*F) and the cache for the backward pass.

        Raises:
            DomainError: If any coordinate lies outside the unit cube.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ShapeError(f"expected {self.dim}D points, got {x.shape[1]}D")
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise DomainError("encoder input must lie in the unit cube")
        n = x.shape[0]
        cfg = self.config
        width = cfg.feature_dim
        features = np.zeros((n, cfg.output_dim), dtype=self.dtype)
        cache = EncodingCache(n)

        full_rows = None
        if restricted is not None and np.any(restricted):
            full_rows = np.flatnonzero(~np.asarray(restricted, dtype=bool))

        for level in range(cfg.n_levels):
            rows = None if level < cfg.restricted_levels else full_rows
            points = x if rows is None else x[rows]
            if points.shape[0] == 0:
                continue
            index, weights = self._corners(points, level)
            weights = weights.astype(self.dtype)
            table = self.tables[level]
            y = np.zeros((points.shape[0], width), dtype=self.dtype)
            for corner in range(index.shape[1]):
                y += weights[:, corner, None] * table[index[:, corner]]
            if rows is None:
                features[:, level * width : (level + 1) * width] = y
            else:
                features[rows, level * width : (level + 1) * width] = y
            cache.levels[level] = (rows, index, weights)
        return features, cache

    def backward(
        self, cache: EncodingCache, upstream: np.ndarray, buf: EncoderGradBuffer
    ) -> None:
        """Scatter ``w_corner * upstream_slice`` into the gradient buffer."""
        upstream = np.atleast_2d(upstream)
        if upstream.shape != (cache.n_points, self.output_dim):
            raise ShapeError("upstream gradient does not match the encoding")
        width = self.config.feature_dim
        for level, (rows, index, weights) in cache.levels.items():
            grad = upstream[:, level * width : (level + 1) * width]
            if rows is not None:
                grad = grad[rows]
            values = weights[:, :, None] * grad[:, None, :]
            buf.add(level, index.reshape(-1), values.reshape(-1, width))

    def new_grad_buffer(self) -> EncoderGradBuffer:
        return EncoderGradBuffer(self.config.n_levels, self.config.feature_dim)


def encode_full(enc: HashEncoding, x) -> np.ndarray:
    """Concatenate the interpolated features of all L levels."""
    features, _ = enc.encode(x)
    return features


def encode_restricted(enc: HashEncoding, x) -> np.ndarray:
    """Features of the first m levels followed by (L - m) zero vectors."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    features, _ = enc.encode(x, restricted=np.ones(x.shape[0], dtype=bool))
    return features


def encode_backward(
    enc: HashEncoding,
    x,
    upstream: np.ndarray,
    restricted: bool,
    buf: EncoderGradBuffer,
) -> None:
    """Accumulate table gradients of ``<upstream, encode(x)>`` into ``buf``.

    Args:
        enc (HashEncoding): The encoding.
        x: Points (n, d) in the unit cube.
        upstream (np.ndarray): Gradient w.r.t. the features, (n, L*F).
        restricted (bool): Use the restricted encoder; inactive levels
            receive nothing.
        buf (EncoderGradBuffer): Accumulator.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mask = np.full(x.shape[0], bool(restricted))
    _, cache = enc.encode(x, restricted=mask)
    enc.backward(cache, np.atleast_2d(np.asarray(upstream)), buf)
