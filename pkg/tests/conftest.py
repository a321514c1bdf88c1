"""
Pytest configuration and fixtures for the test suite
"""

import logging
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

# Set test environment
os.environ['SINKGP_ENV'] = 'testing'


@pytest.fixture
def rng():
    """Seeded generator for randomized instances."""
    return np.random.default_rng(12345)


@pytest.fixture
def sink_cfg():
    """Moderate regularization with a tight tolerance."""
    from models.transport import SinkhornConfig
    return SinkhornConfig(epsilon=0.1, max_iter=5000, tol=1e-10, unroll_cap=400)


@pytest.fixture
def tight_cfg():
    """Tolerance tight enough for finite-difference oracles."""
    from models.transport import SinkhornConfig
    return SinkhornConfig(epsilon=0.1, max_iter=20000, tol=1e-13, unroll_cap=600)


@pytest.fixture
def two_measures():
    """A 3-atom and a 2-atom measure in the plane."""
    from models.measure import DiscreteMeasure
    P = DiscreteMeasure(np.array([[0.0, 0.0], [0.3, 0.1], [-0.2, 0.25]]), np.array([0.5, 0.3, 0.2]))
    Q = DiscreteMeasure(np.array([[0.1, -0.1], [0.2, 0.3]]), np.array([0.6, 0.4]))
    return P, Q


@pytest.fixture
def square_reference():
    """Uniform weights on the four corners of a square (every atom equivalent)."""
    from models.measure import DiscreteMeasure
    return DiscreteMeasure.uniform(np.array([[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]]))


@pytest.fixture
def small_reference():
    """Trainable three-atom reference."""
    from services.embedding import initial_reference
    return initial_reference(3, 2, 0.5, seed=7)


@pytest.fixture
def toy_dataset():
    """Eight toy regression clouds of twelve points."""
    from services.measures import sample_toy_dataset
    return sample_toy_dataset(8, 12, seed=3)


@pytest.fixture
def mixture_dataset():
    """Ten two-class clouds of twelve points."""
    from services.measures import sample_mixture_dataset
    return sample_mixture_dataset(10, 12, seed=5)


@pytest.fixture
def write_csv(tmp_path):
    """Write text to a file under tmp_path and return its path."""
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return path
    return _write


@pytest.fixture(autouse=True)
def reset_logging():
    """Commands reconfigure the root logger; restore it after each test."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        if handler not in handlers:
            root.removeHandler(handler)
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)
