import pytest
import numpy as np

from app.data.synthetic import generate_synthetic
from app.models.config import (
    DecoderConfig,
    EncoderConfig,
    HeadConfig,
    RunConfig,
    TrainingConfig,
)
from app.models.manifest import SyntheticSpec
from app.tensor import set_finite_checks


@pytest.fixture(scope="session", autouse=True)
def finite_checks():
    """Run every test with NaN/Inf checks at op boundaries."""
    set_finite_checks(True)
    yield
    set_finite_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_config():
    return RunConfig.toy()


@pytest.fixture(scope="session")
def tiny_config():
    """Smallest valid model: 32x32 input, two stages of one block each."""
    return RunConfig(
        encoder=EncoderConfig(
            image_size=32,
            patch_size=4,
            embed_dim=8,
            stage_depths=[1, 1],
            heads_per_stage=[1, 2],
            window_size=4,
            mlp_ratio=2.0,
        ),
        decoder=DecoderConfig(blocks_per_level=1),
        head=HeadConfig(widths=[8, 8], gru_hidden=4),
        training=TrainingConfig(epochs=2, batch_size=4),
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """16 synthetic 32x32 images (8 bonafide, 4 PH, 4 PL) with their manifest."""
    out_dir = tmp_path_factory.mktemp("syn_tiny")
    spec = SyntheticSpec(image_size=32, bonafide_count=8, attack_counts={"PH": 4, "PL": 4}, seed=3)
    manifest, _ = generate_synthetic(spec, out_dir)
    return manifest
