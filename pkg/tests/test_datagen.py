import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepdeconf.datagen import (CausalDataset, SimConfig, clean_raw, expose_top, fit_generator_vaes, gini,
                                item_popularity, largest_remainder_counts, quantile_ratings, rating_distribution_kl,
                                simulate_dataset, simulate_semisynthetic)
from deepdeconf.errors import ParameterError, ValidationError
from deepdeconf.numkit import Rng


def _audit(ds, target_rate):
    """Exhaustive scan of one generated bundle."""
    U, I = ds.exposures.shape
    assert set(np.unique(ds.ratings_full)) <= {1, 2, 3, 4, 5}
    assert np.array_equal(ds.ratings_obs, ds.ratings_full * ds.exposures)
    assert np.array_equal(ds.ratings_obs == 0, ds.exposures == 0)
    assert np.all(ds.exposures.sum(axis=1) >= 1)
    assert ds.exposures.sum() == round(target_rate * U * I)
    assert abs(ds.exposures.mean() - target_rate) <= 0.5 / (U * I) + len(ds.manifest["repairs"]) / (U * I)


# -- simulated --------------------------------------------------------------

@pytest.mark.parametrize("gamma", [0.0, 0.1, 0.5, 0.9, 1.0])
def test_simulated_bundle_passes_audit(gamma):
    ds = simulate_dataset(SimConfig(n_users=300, n_items=80, gamma_theta=gamma, seed=3))
    _audit(ds, 0.1)
    assert ds.features.shape == (300, 10) and ds.confounders_true.shape == (300, 20)


def test_sparse_rate_forces_repairs_and_audit_holds():
    ds = simulate_dataset(SimConfig(n_users=400, n_items=50, exposure_rate=0.03, latent_dim=4, feature_dim=2,
                                    seed=1))
    assert len(ds.manifest["repairs"]) > 0
    _audit(ds, 0.03)


def test_budget_below_user_count_rejected():
    with pytest.raises(ParameterError, match="exposure count"):
        simulate_dataset(SimConfig(n_users=400, n_items=50, exposure_rate=0.01, latent_dim=4, feature_dim=2))


def test_no_confounding_gives_independent_ratings():
    ds = simulate_dataset(SimConfig(n_users=1000, n_items=100, gamma_theta=0.0, gamma_b=0.0, seed=4))
    flat = ds.propensity.reshape(-1)
    rank = np.empty(flat.size)
    rank[np.argsort(flat, kind="stable")] = np.arange(flat.size)
    assert flat.size == 100_000
    assert abs(np.corrcoef(rank, ds.ratings_full.reshape(-1))[0, 1]) < 0.02


def test_confounding_couples_exposure_and_rating():
    ds = simulate_dataset(SimConfig(n_users=1000, n_items=100, gamma_theta=0.9, seed=4))
    assert abs(np.corrcoef(ds.propensity.reshape(-1), ds.ratings_full.reshape(-1))[0, 1]) > 0.02


def test_simulation_is_deterministic():
    cfg = SimConfig(n_users=100, n_items=40, seed=9)
    a, b = simulate_dataset(cfg), simulate_dataset(cfg)
    for name in ("ratings_full", "exposures", "features", "confounders_true"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.exposures, simulate_dataset(cfg.replace(seed=10)).exposures)


def test_features_are_standardized_components():
    ds = simulate_dataset(SimConfig(n_users=500, n_items=40, seed=0))
    assert np.allclose(ds.features.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(ds.features.std(axis=0), 1.0, atol=1e-12)
    assert simulate_dataset(SimConfig(n_users=50, n_items=20, feature_dim=0)).features.shape == (50, 0)


@pytest.mark.parametrize("field,value", [("gamma_theta", 1.5), ("gamma_theta", -0.1), ("gamma_b", -1.0),
                                         ("exposure_rate", 0.0), ("exposure_rate", 1.0), ("feature_noise", -1.0),
                                         ("feature_dim", 30), ("n_users", 1), ("seed", -1)])
def test_config_rejects_out_of_range(field, value):
    with pytest.raises(ParameterError, match=field):
        SimConfig(**{field: value})


def test_expose_top_ties_by_flat_index():
    ex, rep = expose_top(np.zeros((3, 4)), 5)
    assert ex.reshape(-1).tolist() == [1] * 4 + [0] * 8 or rep
    assert ex.sum() == 5 and np.all(ex.sum(axis=1) >= 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(1, 15), st.floats(0.01, 0.9), st.integers(0, 2**31 - 1))
def test_expose_top_keeps_count_and_covers_users(U, I, rate, seed):
    count = max(U, int(round(rate * U * I)))
    if count > U * I:
        return
    scores = np.maximum(Rng(seed).gen.standard_normal((U, I)), 0.0)
    ex, repairs = expose_top(scores, count)
    assert ex.sum() == count
    assert np.all(ex.sum(axis=1) >= 1)
    for r in repairs:
        assert ex[r["user"], r["added_item"]] == 1


# -- semi-synthetic ---------------------------------------------------------

@pytest.fixture(scope="module")
def raw_matrix():
    src = simulate_dataset(SimConfig(n_users=200, n_items=100, latent_dim=6, feature_dim=3, seed=11))
    raw = src.ratings_obs.copy()
    raw[:, 99] = 0  # an empty item is dropped by cleaning
    return raw


@pytest.fixture(scope="module")
def generators(raw_matrix):
    return fit_generator_vaes(raw_matrix, latent_dim=6, epochs=5, seed=0)


def test_generator_decoders_have_item_width(generators):
    assert 99 in generators.dropped_items
    width = 100 - len(generators.dropped_items)
    for vae in (generators.exposure, generators.rating):
        assert vae.decode_logits(np.zeros((1, 6))).shape == (1, width)


def test_exposure_generator_improves_in_first_epochs(generators):
    val = [e["val"] for e in generators.logs["exposure"]["epochs"]]
    assert len(val) == 6
    assert max(val[1:]) > val[0]


def test_binarization_and_histogram(raw_matrix, generators):
    cleaned, _, _ = clean_raw(raw_matrix)
    assert generators.exposure_rate == float((cleaned > 0).mean())
    counts = np.array([(cleaned == r).sum() for r in range(1, 6)])
    assert np.allclose(generators.rating_hist, counts / counts.sum(), rtol=0, atol=1e-15)


@pytest.mark.parametrize("gamma", [0.1, 0.9])
def test_semisynthetic_matches_source_exactly(generators, gamma):
    cfg = SimConfig(n_users=300, n_items=1, latent_dim=6, feature_dim=3, gamma_theta=gamma, seed=2)
    ds = simulate_semisynthetic(None, cfg, generators)
    U, I = ds.exposures.shape
    assert I == 100 - len(generators.dropped_items)
    counts = np.array([(ds.ratings_full == r).sum() for r in range(1, 6)])
    assert np.array_equal(counts, largest_remainder_counts(generators.rating_hist, U * I))
    assert np.max(np.abs(counts / (U * I) - generators.rating_hist)) <= 1.0 / (U * I)
    assert abs(ds.exposures.mean() - generators.exposure_rate) <= 1.0 / (U * I)
    _audit(ds, generators.exposure_rate)


def test_semisynthetic_is_long_tailed(generators):
    ds = simulate_semisynthetic(None, SimConfig(n_users=300, latent_dim=6, feature_dim=3, seed=2), generators)
    uniform = np.full(ds.n_items, ds.exposures.sum() / ds.n_items)
    assert gini(item_popularity(ds)) > gini(uniform)


def test_latent_dim_mismatch_rejected(generators):
    with pytest.raises(ParameterError):
        simulate_semisynthetic(None, SimConfig(n_users=50, latent_dim=7, feature_dim=3), generators)


def test_quantile_mapping_is_monotone():
    scores = Rng(0).gen.random((20, 30))
    r = quantile_ratings(scores, np.array([0.1, 0.2, 0.3, 0.2, 0.2]))
    flat_s, flat_r = scores.reshape(-1), r.reshape(-1)
    order = np.argsort(flat_s)
    assert np.all(np.diff(flat_r[order]) >= 0)
    assert np.bincount(flat_r, minlength=6)[1:].tolist() == [60, 120, 180, 120, 120]


def test_clean_raw_rejects_bad_ratings():
    with pytest.raises(ValidationError):
        clean_raw(np.array([[6, 0], [1, 2]]))
    with pytest.raises(ValidationError):
        clean_raw(np.array([[1.5, 0], [1, 2]]))


# -- diagnostics ------------------------------------------------------------

def _toy(full, exposures):
    full, exposures = np.array(full), np.array(exposures)
    return CausalDataset(full, exposures, full * exposures, np.zeros((len(full), 0)), np.zeros((len(full), 1)))


def test_kl_zero_when_everything_observed():
    ds = _toy([[1, 5, 3], [2, 2, 4]], np.ones((2, 3), dtype=int))
    g, m = rating_distribution_kl(ds)
    assert g == 0.0 and m == 0.0


def test_kl_hand_computed_toy():
    ds = _toy([[1, 5], [5, 5]], [[0, 1], [1, 0]])
    eps = 1e-9
    p = np.array([eps, eps, eps, eps, 1 + eps]) / (1 + 5 * eps)
    q = np.array([0.25 + eps, eps, eps, eps, 0.75 + eps]) / (1 + 5 * eps)
    expected_global = float(np.sum(p * np.log(p / q)))
    q0 = np.array([0.5 + eps, eps, eps, eps, 0.5 + eps]) / (1 + 5 * eps)
    q1 = p
    expected_mean = 0.5 * (float(np.sum(p * np.log(p / q0))) + float(np.sum(p * np.log(p / q1))))
    g, m = rating_distribution_kl(ds)
    assert abs(g - expected_global) < 1e-12
    assert abs(m - expected_mean) < 1e-12


def test_kl_requires_exposed_item_per_user():
    with pytest.raises(ValidationError):
        rating_distribution_kl(_toy([[1, 2], [3, 4]], [[0, 0], [1, 1]]))


def test_kl_grows_with_confounding_on_same_seed():
    kl = [rating_distribution_kl(simulate_dataset(SimConfig(n_users=1000, n_items=300, gamma_theta=g, seed=1)))[0]
          for g in (0.1, 0.9)]
    assert kl[1] > kl[0]


def test_popularity_counts():
    ds = _toy(np.ones((4, 3), dtype=int), np.ones((4, 3), dtype=int))
    assert item_popularity(ds).tolist() == [4, 4, 4]
    ds = simulate_dataset(SimConfig(n_users=100, n_items=30, seed=0))
    assert item_popularity(ds).sum() == ds.exposures.sum()


def test_gini_reference_values():
    assert gini(np.full(5, 3.0)) == 0.0
    assert abs(gini(np.array([0, 0, 0, 1.0])) - 0.75) < 1e-15
    assert gini(np.zeros(3)) == 0.0
