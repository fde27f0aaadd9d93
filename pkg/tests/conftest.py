import pytest

import pfkde
from pfkde import analysis, kde


BENCH_SEED = 1234


@pytest.fixture(scope="session")
def model():
    return pfkde.benchmark_model()


@pytest.fixture(scope="session")
def trajectory(model):
    return pfkde.simulate(model, 50, BENCH_SEED)


@pytest.fixture(scope="session")
def posterior(model, trajectory):
    return pfkde.run_kalman(model.A, model.B, trajectory.observations)[-1]


@pytest.fixture(scope="session")
def small_cloud(model, trajectory):
    """k=4-sized benchmark cloud shared by estimator tests."""
    return pfkde.run_filter(model, trajectory.observations, 4096, seed=7)


@pytest.fixture(scope="session")
def metric_grid(posterior):
    return analysis.Grid.centered(posterior.mean, 0.2, 54)


@pytest.fixture()
def gauss_estimator(small_cloud):
    return kde.DensityEstimator(cloud=small_cloud,
                                kernel=pfkde.make_kernel("gaussian", 2), k=4)


@pytest.fixture()
def epan_estimator(small_cloud):
    return kde.DensityEstimator(cloud=small_cloud,
                                kernel=pfkde.make_kernel("epanechnikov", 2), k=4)
