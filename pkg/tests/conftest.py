import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pclr.data import SynthConfig, generate_synthetic_cohort  # noqa: E402
from pclr.encoder import EncoderConfig  # noqa: E402

# Smallest encoder that still runs four downsampling blocks: 256 -> 64 -> 16 -> 4 -> 1.
TINY = EncoderConfig(
    input_length=256, leads=3, kernel_size=3, stem_channels=4, block_channels=(4, 6, 6, 8),
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    """24 synthetic patients with 2-4 ECGs each, written once per session."""
    out = tmp_path_factory.mktemp("cohort")
    manifest = generate_synthetic_cohort(SynthConfig(n_patients=24, ecgs_per_patient=(2, 4), seed=5), out)
    return out, manifest
