from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from loopscreen.dataset import SynthConfig, synth_generate
from loopscreen.imaging import Image


@pytest.fixture(scope="session")
def loop_image() -> Image:
    """One deterministic synthetic loop trace (control class, 128x128)."""
    return synth_generate(SynthConfig(count_per_class=1, seed=99))[0].image


@pytest.fixture(scope="session")
def synth_default_240():
    """The default desk-scale dataset: 120 per class, fixed seed."""
    return synth_generate(SynthConfig(count_per_class=120, seed=42))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
