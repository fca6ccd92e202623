import numpy as np
import pytest
from hypothesis import settings

from gpsocp.gp import fit
from gpsocp.kernels import BaseKernelParams, CompositeKernel

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_kernel(rng, m=1, dim=2, region_id=1):
    base = tuple(
        BaseKernelParams(np.exp(rng.uniform(-0.5, 1.0, dim)), float(np.exp(rng.uniform(-1.0, 1.0))))
        for _ in range(m + 1)
    )
    return CompositeKernel(base, region_id)


def random_model(rng, n=30, m=1, dim=2, noise=None):
    kernel = random_kernel(rng, m, dim)
    X = rng.uniform(-2, 2, size=(n, dim))
    Y = np.hstack([np.ones((n, 1)), rng.uniform(-2, 2, size=(n, m))])
    omega = rng.normal(size=n)
    return fit(kernel, X, Y, omega, noise if noise is not None else float(rng.uniform(0.01, 0.2)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def comparison(tmp_path_factory):
    """One default-config comparison run shared by the harness and acceptance tests."""
    import time

    from gpsocp.harness import ExperimentConfig, compare_controllers

    out = tmp_path_factory.mktemp("compare")
    config = ExperimentConfig(out_dir=str(out))
    start = time.perf_counter()
    summary, episodes, training = compare_controllers(config)
    elapsed = time.perf_counter() - start
    return {"config": config, "out": out, "summary": summary, "episodes": episodes,
            "training": training, "elapsed": elapsed}


def pytest_collection_modifyitems(items):
    for item in items:
        if "comparison" in getattr(item, "fixturenames", ()):
            item.add_marker(pytest.mark.slow)
