"""
This module provides the field network f_theta with hand-written forward and
reverse-mode passes.
"""

from typing import List, Optional, Tuple

import numpy as np

from hashCT.models.v1.network import MLPConfig
from hashCT.util.v1.errors import ShapeError, StaleCacheError


class MLPGrads:
    """Gradient buffers matching the parameter tensors."""

    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def zeros_like(cls, params: "MLPParams") -> "MLPGrads":
        return cls(
            [np.zeros_like(w, dtype=np.float64) for w in params.weights],
            [np.zeros_like(b, dtype=np.float64) for b in params.biases],
        )

    def add_(self, other: "MLPGrads") -> "MLPGrads":
        for mine, theirs in zip(self.weights + self.biases, other.weights + other.biases):
            mine += theirs
        return self

    def tensors(self) -> List[np.ndarray]:
        return self.weights + self.biases


class MLPParams:
    """
    Weights (fan_in, fan_out) and biases of every layer.

    ``version`` increases after every optimizer step; forward caches record it
    so a backward pass against updated parameters is detected.
    """

    def __init__(
        self, config: MLPConfig, weights: List[np.ndarray], biases: List[np.ndarray]
    ):
        dims = config.layer_dims
        for layer, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[layer], dims[layer + 1]) or b.shape != (dims[layer + 1],):
                raise ShapeError(f"layer {layer} parameters do not match {dims}")
        if len(weights) != len(dims) - 1:
            raise ShapeError("number of layers does not match the configuration")
        self.config = config
        self.weights = weights
        self.biases = biases
        self.version = 0

    @property
    def dtype(self):
        return self.weights[0].dtype

    def tensors(self) -> List[np.ndarray]:
        return self.weights + self.biases

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())


class ForwardCache:
    """Activations kept by ``forward`` for ``backward``."""

    def __init__(self, version: int):
        self.version = version
        self.activations: List[np.ndarray] = []
        self.preactivations: List[np.ndarray] = []
        self.sigmoid: Optional[np.ndarray] = None


def init(config: MLPConfig, seed: int = 0, dtype=np.float32) -> MLPParams:
    """He-uniform weights with bound sqrt(6 / fan_in) and zero biases.

    Args:
        config (MLPConfig): Network configuration.
        seed (int): Seed of the weight draw.
        dtype: Parameter dtype.

    Returns:
        MLPParams: Reproducible initial parameters.
    """
    rng = np.random.default_rng(seed)
    dims = config.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MLPParams(config, weights, biases)


def forward(params: MLPParams, features: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Evaluate ``mu = mu_max * sigmoid(last preactivation)``.

    Args:
        params (MLPParams): Network parameters.
        features (np.ndarray): Encoded inputs (n, input_dim).

    Returns:
        tuple: Attenuation (n,) and the activation cache.

    Raises:
        ShapeError: If the feature width does not match the network.
    """
    a = np.atleast_2d(features).astype(params.dtype, copy=False)
    if a.shape[1] != params.config.input_dim:
        raise ShapeError(
            f"features have width {a.shape[1]}, network expects {params.config.input_dim}"
        )
    cache = ForwardCache(params.version)
    n_layers = len(params.weights)
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.activations.append(a)
        z = a @ w + b
        cache.preactivations.append(z)
        if layer < n_layers - 1:
            a = np.maximum(z, 0)
        else:
            a = z
    logits = a[:, 0]
    eps = np.finfo(params.dtype).eps
    # outputs stay strictly inside (0, mu_max)
    sigmoid = np.clip(0.5 * (1.0 + np.tanh(0.5 * logits)), eps, 1.0 - eps)
    cache.sigmoid = sigmoid
    return params.config.mu_max * sigmoid, cache


def backward(
    params: MLPParams, cache: ForwardCache, upstream
) -> Tuple[MLPGrads, np.ndarray]:
    """Reverse-mode gradients of ``sum(upstream * mu)``.

    Args:
        params (MLPParams): Parameters the cache was computed with.
        cache (ForwardCache): Cache from ``forward``.
        upstream: Scalar or (n,) gradient with respect to the outputs.

    Returns:
        tuple: Parameter gradients (float64) and the feature gradient (n, input_dim).

    Raises:
        StaleCacheError: If the parameters changed since the forward pass.
    """
    if cache.version != params.version or cache.sigmoid is None:
        raise StaleCacheError("forward cache does not belong to the current parameters")
    s = cache.sigmoid.astype(np.float64)
    dz = (np.broadcast_to(np.asarray(upstream, dtype=np.float64), s.shape)
          * params.config.mu_max * s * (1.0 - s))[:, None]

    n_layers = len(params.weights)
    grad_w: List[np.ndarray] = [None] * n_layers
    grad_b: List[np.ndarray] = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        a_prev = cache.activations[layer].astype(np.float64)
        grad_w[layer] = a_prev.T @ dz
        grad_b[layer] = dz.sum(axis=0)
        da = dz @ params.weights[layer].astype(np.float64).T
        if layer > 0:
            dz = da * (cache.preactivations[layer - 1] > 0)
    return MLPGrads(grad_w, grad_b), da
