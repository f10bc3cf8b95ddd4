"""
This module serializes the hash tables, the network and optionally the Adam
moments into a single little-endian checkpoint.
"""

import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from hashCT.models.v1.encoder import EncoderConfig
from hashCT.models.v1.network import MLPConfig
from hashCT.util.v1.containers import read_header, read_payload
from hashCT.util.v1.encoder import HashEncoding
from hashCT.util.v1.errors import ContainerError
from hashCT.util.v1.network import MLPParams
from hashCT.util.v1.optimizer import AdamState
from hashCT.util.v1.projector import FieldModel

logger = logging.getLogger(__name__)

ENCODER_MAGIC = b"INRHASH1"
NETWORK_MAGIC = b"MLP1"
ADAM_MAGIC = b"ADAM"

ENCODER_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("dim", "<u4"),
        ("n_levels", "<u4"),
        ("table_size", "<u4"),
        ("feature_dim", "<u4"),
        ("n_min", "<u4"),
        ("n_max", "<u4"),
        ("restricted_levels", "<u4"),
    ]
)
NETWORK_HEADER = np.dtype([("magic", "S4"), ("n_dims", "<u4")])
ADAM_HEADER = np.dtype([("magic", "S4"), ("step", "<u8")])


def _write(handle, array) -> None:
    np.ascontiguousarray(array, dtype="<f4").tofile(handle)


def save_checkpoint(
    path: Union[str, Path], model: FieldModel, state: Optional[AdamState] = None
) -> None:
    """Write the model and, for resumable checkpoints, the optimizer state.

    Args:
        path: Output file.
        model (FieldModel): Encoder tables and network parameters.
        state (AdamState, optional): Optimizer moments and step counter.
    """
    enc = model.encoding
    cfg = enc.config
    header = np.zeros(1, dtype=ENCODER_HEADER)
    header["magic"] = ENCODER_MAGIC
    header["dim"] = enc.dim
    header["n_levels"] = cfg.n_levels
    header["table_size"] = cfg.table_size
    header["feature_dim"] = cfg.feature_dim
    header["n_min"] = cfg.n_min
    header["n_max"] = cfg.n_max
    header["restricted_levels"] = cfg.restricted_levels

    dims = model.params.config.layer_dims
    net_header = np.zeros(1, dtype=NETWORK_HEADER)
    net_header["magic"] = NETWORK_MAGIC
    net_header["n_dims"] = len(dims)

    with open(path, "wb") as handle:
        header.tofile(handle)
        for table in enc.tables:
            _write(handle, table)
        net_header.tofile(handle)
        np.asarray(dims, dtype="<u4").tofile(handle)
        np.asarray([model.params.config.mu_max], dtype="<f8").tofile(handle)
        for w, b in zip(model.params.weights, model.params.biases):
            _write(handle, w)
            _write(handle, b)
        if state is not None:
            adam = np.zeros(1, dtype=ADAM_HEADER)
            adam["magic"] = ADAM_MAGIC
            adam["step"] = state.step
            adam.tofile(handle)
            for moment in state.table_m + state.table_v + state.mlp_m + state.mlp_v:
                _write(handle, moment)
    logger.info("Wrote checkpoint to %s", path)


def load_checkpoint(
    path: Union[str, Path], dtype=np.float32
) -> Tuple[FieldModel, Optional[AdamState]]:
    """Read a checkpoint written by ``save_checkpoint``.

    Args:
        path: Checkpoint file.
        dtype: Parameter dtype of the restored model.

    Returns:
        tuple: The model and the optimizer state, or None if absent.

    Raises:
        ContainerError: If the file is truncated or malformed.
    """
    with open(path, "rb") as handle:
        header = read_header(handle, ENCODER_HEADER, ENCODER_MAGIC)
        try:
            enc_cfg = EncoderConfig(
                n_levels=int(header["n_levels"]),
                n_min=int(header["n_min"]),
                n_max=int(header["n_max"]),
                table_size=int(header["table_size"]),
                feature_dim=int(header["feature_dim"]),
                restricted_levels=int(header["restricted_levels"]),
            )
        except ValueError as e:
            raise ContainerError(f"invalid encoder header: {e}") from e
        shape = (enc_cfg.table_size, enc_cfg.feature_dim)
        tables = [
            read_payload(handle, shape[0] * shape[1]).reshape(shape)
            for _ in range(enc_cfg.n_levels)
        ]
        encoding = HashEncoding(
            enc_cfg, dim=int(header["dim"]), dtype=dtype, tables=tables
        )

        net_header = read_header(handle, NETWORK_HEADER, NETWORK_MAGIC)
        dims = read_payload(handle, int(net_header["n_dims"]), "<u4").astype(int)
        mu_max = float(read_payload(handle, 1, "<f8")[0])
        if dims.size < 2 or dims[-1] != 1 or len(set(dims[1:-1].tolist())) > 1:
            raise ContainerError(f"unsupported layer dims {dims.tolist()}")
        try:
            mlp_cfg = MLPConfig(
                input_dim=int(dims[0]),
                hidden_layers=int(dims.size - 2),
                hidden_width=int(dims[1]) if dims.size > 2 else 1,
                mu_max=mu_max,
            )
        except ValueError as e:
            raise ContainerError(f"invalid network header: {e}") from e
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(
                read_payload(handle, fan_in * fan_out).reshape(fan_in, fan_out).astype(dtype)
            )
            biases.append(read_payload(handle, fan_out).astype(dtype))
        model = FieldModel(encoding, MLPParams(mlp_cfg, weights, biases))

        state = None
        if handle.read(1):
            handle.seek(-1, 1)
            adam = read_header(handle, ADAM_HEADER, ADAM_MAGIC)
            state = AdamState.create(model)
            for moment in state.table_m + state.table_v + state.mlp_m + state.mlp_v:
                moment[...] = read_payload(handle, moment.size).reshape(moment.shape)
            state.step = int(adam["step"])
    logger.info("Loaded checkpoint from %s", path)
    return model, state
