import math
import os

import hypothesis
import numpy as np
import pytest

from src.config import ExperimentConfig
from src.data_models import QuenchSpec, TimeSeries

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))


@pytest.fixture(autouse=True)
def isolated_home(tmp_path_factory, monkeypatch):
    """Keep ~/.breathingmode/config.ini of the developer out of every test."""
    home = tmp_path_factory.mktemp("home")
    monkeypatch.setenv("HOME", str(home))
    monkeypatch.setenv("USERPROFILE", str(home))
    return home


@pytest.fixture
def quench():
    return QuenchSpec(omega_post=math.sqrt(0.9), g=1.0, n_particles=2)


@pytest.fixture
def fast_config(tmp_path):
    """Analytic run short enough for unit tests."""
    return ExperimentConfig.model_validate({
        "quench": {"g": 1.0},
        "engine": {"name": "analytic", "max_quanta": 8, "grid_spacing": 0.02},
        "run": {"periods": 40, "samples_per_period": 16},
        "output": {"directory": str(tmp_path / "results")},
    })


def cosine_series(frequencies, amplitudes, periods=200.0, samples_per_period=32, omega=1.0, offset=1.0):
    """sum a_k cos(w_k t) sampled on the post-quench grid of `omega`."""
    dt = 2.0 * math.pi / omega / samples_per_period
    t = dt * np.arange(int(periods * samples_per_period))
    samples = offset + sum(a * np.cos(w * t) for w, a in zip(frequencies, amplitudes))
    return TimeSeries(0.0, dt, samples)


@pytest.fixture
def make_series():
    return cosine_series
