import numpy as np
import pytest

from mtwlab import instances, solve_kantorovich


@pytest.fixture(scope="session")
def neglog_solution():
    """The main pipeline instance, solved once and reused across modules."""
    spec = instances.neglog_pipeline_instance(per_axis=44, seed=7)
    return solve_kantorovich(spec)


@pytest.fixture(scope="session")
def quadratic_model_solution():
    spec = instances.quadratic_model_instance(per_axis=24, seed=0)
    return solve_kantorovich(spec)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
