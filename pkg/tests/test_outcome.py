import dataclasses
import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rel_err
from deepdeconf.errors import DimensionError, ParameterError, TrainingError, ValidationError
from deepdeconf.evaluation import ModelConfig, fit_exposure_stage, fit_outcome_stage
from deepdeconf.exposure import ExposureVae, holdout_inputs
from deepdeconf.numkit import Rng, finite_diff_grad
from deepdeconf.outcome import (OutcomeNet, outcome_loss, predict_ratings, rating_target, recommend_topk,
                                train_outcome, validation_ndcg)

FAST = ModelConfig(latent_dim=8, epochs=15, exposure_epochs=20)


def _linear_net(I=6, K=2, F=3, seed=0):
    return OutcomeNet(I, K, F, hidden=()).init(Rng(seed))


# -- loss -------------------------------------------------------------------

def test_uniform_logits_give_ln_items():
    net = _linear_net(I=10)
    for k in net.params:
        net.params[k][:] = 0.0
    a = np.zeros(10)
    a[[1, 4, 7]] = 1.0
    loss, _ = outcome_loss(net, np.zeros(3), np.zeros(2), a, a / 3)
    assert abs(loss - np.log(10)) < 1e-12


def test_one_hot_target_with_large_logit_approaches_zero():
    net = _linear_net(I=4)
    for k in net.params:
        net.params[k][:] = 0.0
    target = np.array([0.0, 1.0, 0.0, 0.0])
    losses = []
    for big in (1.0, 10.0, 50.0):
        net.params["out0.b"][1] = big
        losses.append(outcome_loss(net, np.zeros(3), np.zeros(2), target, target)[0])
    assert losses[0] > losses[1] > losses[2] >= 0.0
    assert losses[2] < 1e-20


def test_all_zero_target_raises():
    net = _linear_net()
    with pytest.raises(ValidationError):
        outcome_loss(net, np.zeros(3), np.zeros(2), np.zeros(6), np.zeros(6))


@pytest.mark.parametrize("seed", range(20))
def test_outcome_gradients_match_finite_differences(seed):
    rng = Rng(seed)
    net = OutcomeNet(8, 3, 2).init(rng.split("init"))
    g = rng.split("data").gen
    x, z = g.standard_normal((4, 2)), g.standard_normal((4, 3))
    a = (g.random((4, 8)) < 0.5).astype(float)
    a[:, 0] = 1.0
    target = rating_target(a * g.integers(1, 6, (4, 8)))
    _, grads = outcome_loss(net, x, z, a, target)
    for name in net.param_names:
        base = net.params[name]

        def f(p, name=name, base=base):
            net.params[name] = p
            loss = outcome_loss(net, x, z, a, target)[0]
            net.params[name] = base
            return loss

        assert rel_err(grads[name], finite_diff_grad(f, base.copy()), floor=1e-7) < 1e-4, name


def test_rating_target_weights_by_rating():
    t = rating_target(np.array([[5, 0, 1, 0]]))
    assert np.allclose(t, [[5 / 6, 0, 1 / 6, 0]], rtol=0, atol=1e-15)
    with pytest.raises(ValidationError):
        rating_target(np.zeros((1, 3)))


# -- network contract ------------------------------------------------------

def test_input_order_and_dimensions():
    net = OutcomeNet(5, 2, 3)
    v = net.assemble(np.full(3, 1.0), np.full(2, 2.0), np.full(5, 3.0))
    assert np.array_equal(v, [1, 1, 1, 2, 2, 3, 3, 3, 3, 3])
    assert net.stack.dims == (10, 2, 5)
    with pytest.raises(DimensionError):
        net.assemble(np.zeros(3), np.zeros(2), np.zeros(4))


def test_ablation_drops_confounder_block():
    net = OutcomeNet(5, 2, 3, use_confounder=False)
    assert net.input_dim == 8
    assert np.array_equal(net.assemble(np.ones(3), None, np.zeros(5)), [1, 1, 1, 0, 0, 0, 0, 0])


def test_linear_net_logits_closed_form():
    net = _linear_net(seed=4)
    g = Rng(5).gen
    W, b = net.params["out0.W"], net.params["out0.b"]
    x, z, a = g.standard_normal(3), g.standard_normal(2), (g.random(6) < 0.5).astype(float)
    Wx, Wz, Wa = W[:, net.blocks["x"]], W[:, net.blocks["z"]], W[:, net.blocks["a"]]
    expected = Wx @ x + Wz @ z + Wa @ a + b
    assert np.allclose(net.logits(x, z, a), expected, rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_predicted_scores_normalized_and_deterministic(seed):
    rng = Rng(seed)
    net = OutcomeNet(12, 3, 2).init(rng)
    g = rng.split("in").gen
    x, z, a = g.standard_normal((3, 2)), g.standard_normal((3, 3)), (g.random((3, 12)) < 0.3).astype(float)
    p = predict_ratings(net, x, z, a)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
    assert np.array_equal(p, predict_ratings(net, x, z, a))


def test_features_never_reach_exposure_model():
    params = inspect.signature(ExposureVae.encode).parameters
    assert list(params) == ["self", "x"]


def test_exposure_stage_ignores_features(small_ds, small_split):
    other = dataclasses.replace(small_ds, features=Rng(9).gen.standard_normal(small_ds.features.shape))
    m = FAST.replace(exposure_epochs=3)
    _, Z1, _, _ = fit_exposure_stage(small_ds, small_split, m, seed=0)
    _, Z2, _, _ = fit_exposure_stage(other, small_split, m, seed=0)
    assert np.array_equal(Z1, Z2)


# -- top-K ------------------------------------------------------------------

def test_only_unexposed_item_is_returned():
    a = np.ones(10)
    a[7] = 0
    for k in (1, 5, 20):
        items, short = recommend_topk(np.arange(10.0), a, k)
        assert items.tolist() == [7]
        assert short == (k > 1)


def test_ties_break_by_ascending_index():
    items, short = recommend_topk(np.zeros(8), np.zeros(8), 5)
    assert items.tolist() == [0, 1, 2, 3, 4] and not short


def test_topk_rejects_zero():
    with pytest.raises(ParameterError):
        recommend_topk(np.zeros(3), np.zeros(3), 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.integers(1, 25), st.integers(0, 2**31 - 1))
def test_topk_matches_full_sort_oracle(n, k, seed):
    g = Rng(seed).gen
    scores = g.integers(0, 5, n).astype(float)  # small range forces ties
    a = (g.random(n) < 0.4).astype(float)
    oracle = sorted((i for i in range(n) if a[i] == 0), key=lambda i: (-scores[i], i))[:k]
    items, short = recommend_topk(scores, a, k)
    assert items.tolist() == oracle
    assert short == (len(oracle) < k)
    assert not np.any(a[items] == 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance_of_linear_net(seed):
    I = 9
    net = _linear_net(I=I, seed=seed % 1000)
    g = Rng(seed).gen
    x, z, a = g.standard_normal(3), g.standard_normal(2), (g.random(I) < 0.4).astype(float)
    perm = g.permutation(I)
    inv = np.argsort(perm)
    pnet = _linear_net(I=I)
    W = net.params["out0.W"]
    a_cols = np.arange(W.shape[1])[net.blocks["a"]]
    W_p = W[perm].copy()
    W_p[:, a_cols] = W[perm][:, a_cols[perm]]
    pnet.params["out0.W"] = W_p
    pnet.params["out0.b"] = net.params["out0.b"][perm].copy()
    assert np.allclose(pnet.logits(x, z, a[perm]), net.logits(x, z, a)[perm], rtol=0, atol=1e-12)
    s, sp = net.logits(x, z, a), pnet.logits(x, z, a[perm])
    # equal scores would make ordering depend on index; generic draws avoid them
    top, _ = recommend_topk(s, a, 5)
    top_p, _ = recommend_topk(sp, a[perm], 5)
    assert np.array_equal(perm[top_p], top)
    assert np.array_equal(inv[top], top_p)


# -- training ---------------------------------------------------------------

@pytest.fixture(scope="module")
def exposure_fit(small_ds, small_split):
    _, Z, Z_val, _ = fit_exposure_stage(small_ds, small_split, FAST, seed=0)
    return Z, Z_val


def test_training_does_not_lower_validation_ndcg(small_ds, small_split, exposure_fit):
    net, log = fit_outcome_stage(small_ds, small_split, FAST, 0, *exposure_fit)
    assert log["best_val_ndcg"] >= log["epochs"][0]["val_ndcg"]
    assert log["best_epoch"] > 0
    A = small_ds.exposures[small_split.val].astype(float)
    vis = holdout_inputs(A, small_split.val_holdout)
    ndcg = validation_ndcg(net, small_ds.features[small_split.val], exposure_fit[1], vis, small_split.val_holdout)
    assert ndcg == log["best_val_ndcg"]


def test_training_is_deterministic(small_ds, small_split, exposure_fit):
    m = FAST.replace(epochs=3)
    n1, l1 = fit_outcome_stage(small_ds, small_split, m, 0, *exposure_fit)
    n2, l2 = fit_outcome_stage(small_ds, small_split, m, 0, *exposure_fit)
    assert l1 == l2
    for k in n1.params:
        assert np.array_equal(n1.params[k], n2.params[k])


def test_ablation_trains_under_same_loop(small_ds, small_split):
    net, log = fit_outcome_stage(small_ds, small_split, FAST.replace(use_confounder=False, epochs=3), 0)
    assert not net.use_confounder and net.input_dim == small_ds.features.shape[1] + small_ds.n_items
    assert len(log["epochs"]) >= 2


def test_confounder_required_unless_ablated(small_ds, small_split):
    with pytest.raises(ParameterError):
        fit_outcome_stage(small_ds, small_split, FAST, 0)


def test_nan_loss_raises_training_error():
    net = OutcomeNet(4, 2, 1).init(Rng(0))
    net.params["out0.b"][:] = np.nan
    a = np.array([[1.0, 0, 0, 1]])
    train = {"x": np.zeros((1, 1)), "z": np.zeros((1, 2)), "a": a, "target": rating_target(a)}
    val = {"x": np.zeros((1, 1)), "z": np.zeros((1, 2)), "a": np.array([[1.0, 0, 0, 0]]),
           "holdout": np.array([[False, False, False, True]])}
    with pytest.raises(TrainingError):
        train_outcome(net, train, val, Rng(0), epochs=2)
