"""
This module provides Adam with sparse (lazy) updates for hash-table rows.
"""

from typing import List

import numpy as np

from hashCT.util.v1.errors import NumericalError, ShapeError
from hashCT.util.v1.projector import FieldModel, GradientBuffers

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class AdamState:
    """
    First and second moments of every learnable tensor and the shared step.

    Hash-table moments only advance on rows touched by a batch.
    """

    def __init__(self, mlp_m, mlp_v, table_m, table_v, step: int = 0):
        self.mlp_m: List[np.ndarray] = mlp_m
        self.mlp_v: List[np.ndarray] = mlp_v
        self.table_m: List[np.ndarray] = table_m
        self.table_v: List[np.ndarray] = table_v
        self.step = step

    @classmethod
    def create(cls, model: FieldModel) -> "AdamState":
        tensors = model.params.tensors()
        tables = model.encoding.tables
        return cls(
            [np.zeros_like(t) for t in tensors],
            [np.zeros_like(t) for t in tensors],
            [np.zeros_like(t) for t in tables],
            [np.zeros_like(t) for t in tables],
        )

    def all_finite(self) -> bool:
        return all(
            np.all(np.isfinite(t))
            for t in self.mlp_m + self.mlp_v + self.table_m + self.table_v
        )


def _update(param, grad, m, v, lr, bc1, bc2):
    m_new = BETA1 * m.astype(np.float64) + (1.0 - BETA1) * grad
    v_new = BETA2 * v.astype(np.float64) + (1.0 - BETA2) * grad * grad
    step = lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + EPSILON)
    return (param.astype(np.float64) - step), m_new, v_new


def adam_step(
    model: FieldModel, grads: GradientBuffers, state: AdamState, lr: float
) -> None:
    """One Adam update of theta and of the touched rows of phi.

    Args:
        model (FieldModel): Parameters, updated in place.
        grads (GradientBuffers): Batch gradients.
        state (AdamState): Moments, updated in place.
        lr (float): Learning rate.

    Raises:
        NumericalError: On NaN or infinite gradients or parameters.
    """
    reduced = [grads.encoder.reduce(level) for level in range(len(state.table_m))]
    for g in grads.mlp.tensors() + [values for _, values in reduced]:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient in optimizer step")

    state.step += 1
    bc1 = 1.0 - BETA1**state.step
    bc2 = 1.0 - BETA2**state.step

    params = model.params.tensors()
    grad_tensors = grads.mlp.tensors()
    if len(grad_tensors) != len(params):
        raise ShapeError("gradient buffers do not match the network")
    for i, (param, grad) in enumerate(zip(params, grad_tensors)):
        new, m_new, v_new = _update(
            param, grad, state.mlp_m[i], state.mlp_v[i], lr, bc1, bc2
        )
        param[...] = new
        state.mlp_m[i][...] = m_new
        state.mlp_v[i][...] = v_new

    for level, (rows, values) in enumerate(reduced):
        if rows.size == 0:
            continue
        table = model.encoding.tables[level]
        new, m_new, v_new = _update(
            table[rows],
            values,
            state.table_m[level][rows],
            state.table_v[level][rows],
            lr,
            bc1,
            bc2,
        )
        table[rows] = new
        state.table_m[level][rows] = m_new
        state.table_v[level][rows] = v_new

    model.params.version += 1
    if not model.params.all_finite():
        raise NumericalError("non-finite network parameters after optimizer step")
