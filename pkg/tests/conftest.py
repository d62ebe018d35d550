import numpy as np
import pytest

from trafficsynth.propagation import ArrayGeometry, Environment


@pytest.fixture
def default_array() -> ArrayGeometry:
    return ArrayGeometry.default()


@pytest.fixture
def default_env() -> Environment:
    return Environment()


@pytest.fixture
def dry_env() -> Environment:
    """No ground reflection; handy for single-path oracles."""
    return Environment(ground_reflection_coeff=0.0)
