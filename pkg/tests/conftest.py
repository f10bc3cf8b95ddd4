import numpy as np
import pytest

from hashCT.models.v1.encoder import EncoderConfig
from hashCT.models.v1.geometry import Domain, ScanGeometry, ScanMode
from hashCT.models.v1.network import MLPConfig
from hashCT.util.v1 import network
from hashCT.util.v1.encoder import HashEncoding
from hashCT.util.v1.projector import FieldModel


@pytest.fixture
def fan_geometry():
    # iso-center coverage radius 32.5 * 200 / 300 = 21.7 mm
    return ScanGeometry(
        source_to_detector_mm=300.0,
        source_to_isocenter_mm=200.0,
        detector_rows=1,
        detector_cols=65,
        pixel_pitch_mm=(1.0, 1.0),
        n_views=36,
        mode=ScanMode.FAN2D,
    )


@pytest.fixture
def cone_geometry():
    return ScanGeometry(
        source_to_detector_mm=300.0,
        source_to_isocenter_mm=200.0,
        detector_rows=9,
        detector_cols=9,
        pixel_pitch_mm=(2.0, 2.0),
        n_views=8,
    )


@pytest.fixture
def planar_domain():
    return Domain(fov_mm=(30.0, 30.0), extended_mm=(80.0, 80.0))


@pytest.fixture
def tiny_encoder_config():
    return EncoderConfig(
        n_levels=4,
        n_min=4,
        n_max=32,
        table_size=2**10,
        feature_dim=2,
        restricted_levels=2,
    )


@pytest.fixture
def tiny_mlp_config():
    return MLPConfig(input_dim=8, hidden_layers=2, hidden_width=16, mu_max=0.1)


@pytest.fixture
def tiny_model(tiny_encoder_config, tiny_mlp_config):
    encoding = HashEncoding(tiny_encoder_config, dim=2, seed=1)
    params = network.init(tiny_mlp_config, seed=2)
    return FieldModel(encoding, params)


@pytest.fixture
def constant_model(tiny_encoder_config, tiny_mlp_config):
    """Field whose network has all-zero weights, so mu = mu_max / 2 everywhere."""
    encoding = HashEncoding(tiny_encoder_config, dim=2, seed=1)
    params = network.init(tiny_mlp_config, seed=2)
    for w in params.weights:
        w[...] = 0.0
    return FieldModel(encoding, params)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
