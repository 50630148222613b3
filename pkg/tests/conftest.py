import numpy as np
import pytest

from deepdeconf.datagen import SimConfig, simulate_dataset
from deepdeconf.evaluation import split_users


def rel_err(a, b, floor=1e-8):
    """Entrywise relative error, guarded against both values being near zero."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))))


def canonical_correlations(X, Y):
    Qx, _ = np.linalg.qr(X - X.mean(axis=0))
    Qy, _ = np.linalg.qr(Y - Y.mean(axis=0))
    return np.clip(np.linalg.svd(Qx.T @ Qy, compute_uv=False), 0.0, 1.0)


@pytest.fixture(scope="session")
def small_ds():
    return simulate_dataset(SimConfig(n_users=500, n_items=200, seed=0))


@pytest.fixture(scope="session")
def small_split(small_ds):
    return split_users(small_ds.n_users, seed=0, exposures=small_ds.exposures)
