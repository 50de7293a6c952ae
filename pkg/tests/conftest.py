"""
Pytest configuration for the lab tests.
"""
import os
from pathlib import Path

import django
import numpy as np
import pytest

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'nla_site.settings')

REPO_DIR = Path(__file__).resolve().parent.parent


def pytest_configure(config):
    """Configure Django before running tests."""
    django.setup()
    config.addinivalue_line(
        'markers',
        'slow: desk-scale acceptance runs (seconds to minutes each)',
    )


@pytest.fixture
def grid_1d():
    from nla.grid import Grid
    return Grid(1, 512, 20.0)


@pytest.fixture
def small_grid():
    """Small enough for the direct-sum oracles."""
    from nla.grid import Grid
    return Grid(1, 128, 10.0)


@pytest.fixture
def grid_2d():
    from nla.grid import Grid
    return Grid(2, 64, 8.0)


@pytest.fixture
def gaussian_J():
    from nla.kernels import KernelSpec
    return KernelSpec('gaussian', 1, 1.0)


@pytest.fixture
def shifted_G():
    from nla.kernels import KernelSpec
    return KernelSpec('shifted_bump', 1, 1.0, shift=(0.5,))


@pytest.fixture
def model(gaussian_J, shifted_G):
    from nla.solver import ModelParams
    return ModelParams(q=2.0, lam=1.0, J=gaussian_J, G=shifted_G, dim=1)


@pytest.fixture
def results_dir(tmp_path, settings):
    """Point NLA_RESULTS_DIR at a scratch directory."""
    settings.NLA_RESULTS_DIR = tmp_path / 'results'
    return settings.NLA_RESULTS_DIR


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def configs_dir():
    return REPO_DIR / 'configs'
