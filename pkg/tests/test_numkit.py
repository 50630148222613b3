import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepdeconf.errors import DimensionError, NumericalError, ParameterError, TrainingError
from deepdeconf.numkit import (AdamState, DenseStack, Rng, adam_step, affine_backward, affine_forward,
                               finite_diff_grad, jacobi_eigh, log_softmax_fw, pca_project, relu_bw, relu_fw,
                               sample_bernoulli, sample_poisson, sample_standard_normal, sigmoid_bw, sigmoid_fw,
                               softmax_fw, tanh_bw, tanh_fw)


def triple_loop_affine(x, W, b):
    out = [0.0] * W.shape[0]
    for i in range(W.shape[0]):
        acc = 0.0
        for j in range(W.shape[1]):
            acc += W[i, j] * x[j]
        out[i] = acc + b[i]
    return np.array(out)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(1e-10, np.maximum(np.abs(a), np.abs(b))))


# -- RNG --------------------------------------------------------------------

def test_rng_same_seed_same_draws():
    a = Rng(7).split("x").gen.standard_normal(50)
    b = Rng(7).split("x").gen.standard_normal(50)
    assert np.array_equal(a, b)


def test_rng_split_streams_differ_and_do_not_advance_parent():
    parent = Rng(7)
    first = Rng(7).gen.random(5)
    parent.split("a")
    assert np.array_equal(parent.gen.random(5), first)
    assert not np.array_equal(Rng(7).split("a").gen.random(5), Rng(7).split("b").gen.random(5))


def test_rng_rejects_negative_seed():
    with pytest.raises(ParameterError):
        Rng(-1)


# -- samplers ---------------------------------------------------------------

def test_sampler_trivial_cases():
    rng = Rng(0)
    assert sample_poisson(rng, 0) == 0
    assert sample_bernoulli(rng, 1) == 1
    assert sample_bernoulli(rng, 0) == 0


def test_sampler_law_of_large_numbers():
    rng = Rng(1)
    assert abs(sample_standard_normal(rng, 100_000).mean()) < 0.02
    assert abs(sample_poisson(rng, 3.0, size=100_000).mean() - 3.0) < 0.05


@pytest.mark.parametrize("lam", [-1.0, np.nan, np.inf])
def test_poisson_rejects_bad_rate(lam):
    with pytest.raises(ParameterError):
        sample_poisson(Rng(0), lam)


@pytest.mark.parametrize("p", [-0.1, 1.5, np.nan])
def test_bernoulli_rejects_bad_probability(p):
    with pytest.raises(ParameterError):
        sample_bernoulli(Rng(0), p)


# -- affine layer -----------------------------------------------------------

def test_affine_forward_examples():
    W = np.array([[2.0, 3.0], [4.0, 5.0]])
    assert np.array_equal(affine_forward(np.array([1.0, 0.0]), W, np.zeros(2)), [2.0, 4.0])
    assert np.array_equal(affine_forward(np.zeros(2), W, np.array([7.0, -1.0])), [7.0, -1.0])


def test_affine_forward_matches_triple_loop():
    g = Rng(3).gen
    x, W, b = g.standard_normal(3), g.standard_normal((5, 3)), g.standard_normal(5)
    assert np.allclose(affine_forward(x, W, b), triple_loop_affine(x, W, b), rtol=0, atol=1e-14)


def test_affine_shape_mismatch():
    with pytest.raises(DimensionError):
        affine_forward(np.zeros(3), np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(DimensionError):
        affine_backward(np.zeros(3), np.zeros(2), np.zeros((2, 2)))


def test_affine_backward_trivial():
    W = np.arange(6.0).reshape(2, 3)
    gx, gW, gb = affine_backward(np.array([1.0, 0.0]), np.zeros(3), W)
    assert np.array_equal(gb, [1.0, 0.0])
    assert np.array_equal(gW, np.zeros((2, 3)))
    assert np.array_equal(gx, W[0])


@pytest.mark.parametrize("seed", range(20))
def test_affine_backward_matches_finite_differences(seed):
    g = Rng(seed).gen
    x, W, b = g.standard_normal(4), g.standard_normal((3, 4)), g.standard_normal(3)
    w = g.standard_normal(3)  # random projection makes the output scalar
    gx, gW, gb = affine_backward(w, x, W)
    assert rel_err(gx, finite_diff_grad(lambda v: w @ affine_forward(v, W, b), x)) < 1e-6
    assert rel_err(gW, finite_diff_grad(lambda M: w @ affine_forward(x, M, b), W)) < 1e-6
    assert rel_err(gb, finite_diff_grad(lambda c: w @ affine_forward(x, W, c), b)) < 1e-6


# -- activations ------------------------------------------------------------

def test_activation_examples():
    assert np.array_equal(relu_fw(np.array([-1.0, 2.0])), [0.0, 2.0])
    assert np.allclose(softmax_fw(np.full(3, 4.2)), 1 / 3, rtol=0, atol=1e-15)
    assert np.array_equal(relu_bw(np.ones(2), np.array([-1.0, 2.0])), [0.0, 1.0])


@pytest.mark.parametrize("seed", range(20))
def test_activation_backward_matches_finite_differences(seed):
    g = Rng(seed).gen
    x, w = g.standard_normal(5), g.standard_normal(5)
    assert rel_err(sigmoid_bw(w, sigmoid_fw(x)), finite_diff_grad(lambda v: w @ sigmoid_fw(v), x)) < 1e-6
    assert rel_err(tanh_bw(w, tanh_fw(x)), finite_diff_grad(lambda v: w @ tanh_fw(v), x)) < 1e-6


def test_sigmoid_stable_at_extremes():
    y = sigmoid_fw(np.array([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(y))
    assert y[0] == 0.0 and y[1] == 0.5 and y[2] == 1.0


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
def test_softmax_normalized_and_finite(x):
    p = softmax_fw(x)
    assert np.all(np.isfinite(p))
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.allclose(np.exp(log_softmax_fw(x)), p, rtol=1e-12, atol=1e-300)


# -- dense stack ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_dense_stack_backward_matches_finite_differences(seed):
    rng = Rng(seed)
    stack = DenseStack((4, 3, 2), "s")
    params = {}
    stack.init(rng, params)
    x = rng.split("x").gen.standard_normal((3, 4))
    w = rng.split("w").gen.standard_normal((3, 2))
    out, cache = stack.forward(params, x)
    grads = {}
    gx = stack.backward(params, w, cache, grads)
    assert rel_err(gx, finite_diff_grad(lambda v: np.sum(w * stack.forward(params, v)[0]), x)) < 1e-6
    for name in stack.names:
        def f(p, name=name):
            saved = params[name]
            params[name] = p
            val = np.sum(w * stack.forward(params, x)[0])
            params[name] = saved
            return val
        assert rel_err(grads[name], finite_diff_grad(f, params[name])) < 1e-6


# -- Adam -------------------------------------------------------------------

def test_adam_zero_grad_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState())
    assert np.array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    # from m = v = 0 the bias-corrected step is lr * g / (|g| + eps)
    params = {"w": np.zeros(3)}
    state = AdamState(lr=1e-3)
    g = np.array([0.5, -3.0, 2e-2])
    adam_step(params, {"w": g}, state)
    expected = -1e-3 * g / (np.abs(g) + 1e-8)
    assert np.allclose(params["w"], expected, rtol=0, atol=1e-15)
    assert state.step == 1


def test_adam_descends_quadratic():
    params = {"w": np.array([1.5])}
    state = AdamState(lr=0.1)
    values = [params["w"][0] ** 2]
    for _ in range(3):
        adam_step(params, {"w": 2 * params["w"]}, state)
        values.append(params["w"][0] ** 2)
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_rejects_nonfinite_gradient_by_name():
    with pytest.raises(TrainingError, match="enc0.W"):
        adam_step({"enc0.W": np.zeros(2)}, {"enc0.W": np.array([np.nan, 0.0])}, AdamState())


# -- finite differences -----------------------------------------------------

def test_finite_diff_examples():
    assert np.array_equal(finite_diff_grad(lambda v: 3.0, np.array([1.0, 2.0])), [0.0, 0.0])
    assert np.allclose(finite_diff_grad(lambda v: float(v @ v), np.array([1.0, 2.0])), [2.0, 4.0], atol=1e-8)


def test_finite_diff_nonfinite_raises():
    with pytest.raises(NumericalError):
        finite_diff_grad(lambda v: np.inf if v[0] > 0 else 0.0, np.array([0.0]))


# -- Jacobi / PCA -----------------------------------------------------------

def power_iteration(A, iters=5000):
    v = np.ones(A.shape[0]) / np.sqrt(A.shape[0])
    for _ in range(iters):
        v = A @ v
        v /= np.linalg.norm(v)
    return float(v @ A @ v)


@pytest.mark.parametrize("seed", range(5))
def test_jacobi_top_eigenvalue_matches_power_iteration(seed):
    B = Rng(seed).gen.standard_normal((30, 8))
    A = B.T @ B
    vals, _ = jacobi_eigh(A)
    assert abs(vals[0] - power_iteration(A)) < 1e-6 * max(1.0, vals[0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_jacobi_reconstructs_and_is_orthonormal(n, seed):
    B = Rng(seed).gen.standard_normal((n, n))
    A = B + B.T
    vals, V = jacobi_eigh(A)
    assert np.all(np.diff(vals) <= 1e-12)
    assert np.allclose(V.T @ V, np.eye(n), atol=1e-8)
    assert np.allclose(V @ np.diag(vals) @ V.T, A, atol=1e-8 * max(1.0, np.abs(A).max()))
    idx = np.argmax(np.abs(V), axis=0)
    assert np.all(V[idx, np.arange(n)] > 0)


def test_jacobi_rejects_asymmetric():
    with pytest.raises(ParameterError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_pca_axis_aligned():
    g = Rng(0).gen
    X = np.column_stack([2.0 * g.standard_normal(5000), g.standard_normal(5000)])
    proj, basis = pca_project(X, 1)
    assert np.allclose(np.abs(basis[:, 0]), [1.0, 0.0], atol=0.02)
    assert np.allclose(np.abs(proj[:, 0]), np.abs(X[:, 0] - X[:, 0].mean()), atol=0.1)


def test_pca_full_rank_reconstructs():
    X = Rng(1).gen.standard_normal((40, 6))
    proj, basis = pca_project(X, 6)
    assert np.allclose(proj @ basis.T, X - X.mean(axis=0), atol=1e-8)


def test_pca_rejects_too_many_components():
    with pytest.raises(ParameterError):
        pca_project(np.zeros((4, 2)), 3)
