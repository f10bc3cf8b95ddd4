import numpy as np
import pytest

from hashCT.models.v1.data import GridSpec, Sinogram, VolumeGrid
from hashCT.util.v1.checkpoint import load_checkpoint, save_checkpoint
from hashCT.util.v1.containers import (
    SINOGRAM_HEADER,
    load_sinogram,
    load_volume,
    save_sinogram,
    save_volume,
)
from hashCT.util.v1.errors import ContainerError


def test_sinogram_round_trip(fan_geometry, rng, tmp_path):
    values = rng.uniform(0.0, 2.0, size=(36, 1, 65)).astype(np.float32)
    path = tmp_path / "sinogram.bin"
    save_sinogram(path, Sinogram(geometry=fan_geometry, values=values))
    loaded = load_sinogram(path)
    assert loaded.geometry == fan_geometry
    np.testing.assert_array_equal(loaded.values, values)
    assert path.stat().st_size == SINOGRAM_HEADER.itemsize + values.size * 4


def test_volume_round_trip(rng, tmp_path):
    grid = GridSpec(dims=(5, 4, 3), pitch=(0.5, 0.5, 1.0), origin=(-1.0, -0.75, -1.0))
    values = rng.uniform(0.0, 0.02, size=grid.shape).astype(np.float32)
    path = tmp_path / "volume.bin"
    save_volume(path, VolumeGrid(grid=grid, values=values))
    loaded = load_volume(path)
    assert loaded.grid == grid
    np.testing.assert_array_equal(loaded.values, values)


def test_payload_is_little_endian_float32(cone_geometry, tmp_path):
    values = np.arange(8 * 9 * 9, dtype=np.float64).reshape(8, 9, 9)
    path = tmp_path / "sinogram.bin"
    save_sinogram(path, Sinogram(geometry=cone_geometry, values=values))
    raw = path.read_bytes()[SINOGRAM_HEADER.itemsize :]
    np.testing.assert_array_equal(np.frombuffer(raw, dtype="<f4"), values.ravel())


def test_wrong_magic(fan_geometry, tmp_path):
    path = tmp_path / "volume.bin"
    save_sinogram(path, Sinogram(geometry=fan_geometry, values=np.zeros((36, 1, 65))))
    with pytest.raises(ContainerError):
        load_volume(path)


def test_truncated_payload(fan_geometry, tmp_path):
    path = tmp_path / "sinogram.bin"
    save_sinogram(path, Sinogram(geometry=fan_geometry, values=np.zeros((36, 1, 65))))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ContainerError):
        load_sinogram(path)


def test_empty_file(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    with pytest.raises(ContainerError):
        load_checkpoint(path)


def test_checkpoint_keeps_float64_scale(tiny_model, tmp_path):
    path = tmp_path / "model.bin"
    save_checkpoint(path, tiny_model)
    model, state = load_checkpoint(path, dtype=np.float64)
    assert state is None
    assert model.params.dtype == np.float64
    assert model.params.config.mu_max == tiny_model.params.config.mu_max
    assert model.encoding.dim == 2
    np.testing.assert_array_equal(model.encoding.tables[0], tiny_model.encoding.tables[0])
