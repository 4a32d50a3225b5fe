import numpy as np
import pandas as pd
import pytest

from crossfit import create_carry, datasets, kernels
from crossfit.design import DesignFrame


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile (or cache-load) the jitted kernels once so timings and
    # per-test costs stay meaningful
    kernels.warmup()


@pytest.fixture(scope="session")
def arterial():
    return datasets.load_arterial()


@pytest.fixture(scope="session")
def water():
    return datasets.load_water()


@pytest.fixture(scope="session")
def arterial_simple(arterial):
    return create_carry(arterial, "simple")


@pytest.fixture(scope="session")
def arterial_complex(arterial):
    return create_carry(arterial, "complex")


@pytest.fixture(scope="session")
def water_simple(water):
    return create_carry(water, "simple")


def make_gaussian_clusters(n_clusters, size, beta, rho=0.0, phi=1.0, seed=0,
                           structure="exchangeable"):
    """Balanced gaussian clusters with one numeric covariate.

    Returns a DesignFrame whose default-encoded design is
    [(Intercept), x]; used as a light-weight generator for solver oracles.
    """
    rng = np.random.default_rng(seed)
    p = len(beta)
    x = rng.normal(size=(n_clusters * size, p - 1))
    X = np.column_stack([np.ones(n_clusters * size), x])
    if structure == "exchangeable":
        corr = np.full((size, size), rho)
        np.fill_diagonal(corr, 1.0)
    elif structure == "ar1":
        idx = np.arange(size)
        corr = rho ** np.abs(idx[:, None] - idx[None, :])
    else:
        corr = np.eye(size)
    chol = np.linalg.cholesky(corr)
    noise = (rng.standard_normal((n_clusters, size)) @ chol.T).reshape(-1)
    y = X @ np.asarray(beta) + np.sqrt(phi) * noise

    df = pd.DataFrame({
        "Unit": np.repeat(np.arange(1, n_clusters + 1), size),
        "Period": np.ones(n_clusters * size, dtype=int),
        "Treatment": ["A"] * (n_clusters * size),
        "Response": y,
    })
    for j in range(p - 1):
        df[f"x{j + 1}"] = x[:, j]
    frame = DesignFrame(data=df, unit_col="Unit", period_col="Period",
                        treatment_col="Treatment", response_col="Response")
    return frame, X


@pytest.fixture
def gaussian_clusters():
    return make_gaussian_clusters
