"""Dense numerical kernel: seeded RNG, layers, Adam, gradient oracle, Jacobi PCA.

Matrices are plain float64 numpy arrays. Every layer function accepts either a
single vector ``(n,)`` or a batch ``(B, n)``; weights are stored ``(out, in)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, ParameterError, TrainingError

FloatArray = np.ndarray


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def _tag_key(tag: str | int) -> int:
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Seeded random stream with deterministic named sub-streams.

    ``Rng(s).split("x")`` always yields the same stream for the same ``(s, "x")``
    and never perturbs the parent's own draw sequence.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        if seed < 0:
            raise ParameterError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self._path = _path
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *_path])))

    def split(self, tag: str | int) -> "Rng":
        return Rng(self.seed, self._path + (_tag_key(tag),))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, depth={len(self._path)})"


def sample_standard_normal(rng: Rng, n: int | tuple[int, ...]) -> FloatArray:
    return rng.gen.standard_normal(n)


def sample_poisson(rng: Rng, lam, size=None):
    lam_arr = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(lam_arr)) or np.any(lam_arr < 0):
        raise ParameterError("Poisson rate must be finite and >= 0")
    out = rng.gen.poisson(lam_arr, size=size)
    return int(out) if np.ndim(out) == 0 else out


def sample_bernoulli(rng: Rng, p, size=None):
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(~(p_arr >= 0)) or np.any(p_arr > 1):
        raise ParameterError("Bernoulli probability must lie in [0, 1]")
    out = (rng.gen.random(size if size is not None else p_arr.shape) < p_arr).astype(np.int64)
    return int(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def affine_forward(x: FloatArray, W: FloatArray, b: FloatArray) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: x{x.shape} W{W.shape} b{b.shape} do not conform")
    return x @ W.T + b


def affine_backward(grad_out: FloatArray, x: FloatArray, W: FloatArray):
    """Return ``(grad_x, grad_W, grad_b)``; batched inputs sum over the batch."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if grad_out.shape[-1] != W.shape[0] or x.shape[-1] != W.shape[1] or grad_out.shape[:-1] != x.shape[:-1]:
        raise DimensionError(f"affine backward: grad{grad_out.shape} x{x.shape} W{W.shape}")
    grad_x = grad_out @ W
    if x.ndim == 1:
        return grad_x, np.outer(grad_out, x), grad_out.copy()
    return grad_x, grad_out.T @ x, grad_out.sum(axis=0)


def tanh_fw(x):
    return np.tanh(x)


def tanh_bw(grad_out, y):
    # y is the forward output
    return grad_out * (1.0 - y * y)


def sigmoid_fw(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bw(grad_out, y):
    return grad_out * y * (1.0 - y)


def relu_fw(x):
    return np.maximum(x, 0.0)


def relu_bw(grad_out, x):
    return grad_out * (np.asarray(x) > 0)


def log_softmax_fw(x):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax_fw(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def xavier_normal(rng: Rng, fan_out: int, fan_in: int) -> FloatArray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.gen.standard_normal((fan_out, fan_in)) * std


class DenseStack:
    """Affine layers with tanh between them and a linear last layer.

    Parameters live in the caller-owned ``params`` dict under
    ``f"{prefix}{k}.W"`` / ``f"{prefix}{k}.b"`` so several stacks can share a
    single Adam state.
    """

    def __init__(self, dims: Sequence[int], prefix: str):
        if len(dims) < 2:
            raise ParameterError("a stack needs at least input and output width")
        self.dims = tuple(int(d) for d in dims)
        self.prefix = prefix

    @property
    def names(self) -> list[str]:
        out = []
        for k in range(len(self.dims) - 1):
            out += [f"{self.prefix}{k}.W", f"{self.prefix}{k}.b"]
        return out

    def init(self, rng: Rng, params: dict) -> None:
        for k, (d_in, d_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            params[f"{self.prefix}{k}.W"] = xavier_normal(rng, d_out, d_in)
            params[f"{self.prefix}{k}.b"] = np.zeros(d_out)

    def forward(self, params: dict, x: FloatArray):
        inputs = []
        h = x
        n = len(self.dims) - 1
        for k in range(n):
            inputs.append(h)
            h = affine_forward(h, params[f"{self.prefix}{k}.W"], params[f"{self.prefix}{k}.b"])
            if k < n - 1:
                h = tanh_fw(h)
        return h, inputs

    def backward(self, params: dict, grad_out: FloatArray, inputs: list, grads: dict) -> FloatArray:
        """Accumulate parameter gradients into ``grads``; return d/d(input)."""
        g = grad_out
        n = len(self.dims) - 1
        for k in reversed(range(n)):
            W = params[f"{self.prefix}{k}.W"]
            g, gW, gb = affine_backward(g, inputs[k], W)
            grads[f"{self.prefix}{k}.W"] = grads.get(f"{self.prefix}{k}.W", 0.0) + gW
            grads[f"{self.prefix}{k}.b"] = grads.get(f"{self.prefix}{k}.b", 0.0) + gb
            if k > 0:
                # inputs[k] is the tanh output of layer k-1
                g = tanh_bw(g, inputs[k])
        return g


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One bias-corrected Adam update applied in place; returns ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in tensor '{name}'")
        if np.shape(g) != params[name].shape:
            raise DimensionError(f"gradient for '{name}' has shape {np.shape(g)}, expected {params[name].shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Gradient oracle
# ---------------------------------------------------------------------------

def finite_diff_grad(f: Callable[[FloatArray], float], x: FloatArray, h: float = 1e-5) -> FloatArray:
    """Central differences of a scalar function, same shape as ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"objective is not finite near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Jacobi eigensolver / PCA
# ---------------------------------------------------------------------------

def jacobi_eigh(A: FloatArray, tol: float = 1e-10, max_sweeps: int = 100):
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Returns eigenvalues sorted descending and eigenvectors as columns, each
    column signed so its largest-magnitude entry is positive. Iterates until
    the off-diagonal Frobenius norm drops below ``tol * max(1, ||A||_F)``.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise DimensionError(f"expected a square matrix, got {A.shape}")
    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max(initial=0.0))):
        raise ParameterError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    threshold = tol * max(1.0, np.linalg.norm(A))

    def off_norm(M):
        return np.linalg.norm(M - np.diag(np.diag(M)))

    for _ in range(max_sweeps):
        if off_norm(A) < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(apq) < 1e-36 * abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        if off_norm(A) >= threshold:
            raise NumericalError("Jacobi iteration did not converge")

    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    vals, V = vals[order], V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(n)])
    signs[signs == 0] = 1.0
    return vals, V * signs


def pca_project(X: FloatArray, out_dim: int):
    """Project centred rows of ``X`` on the top ``out_dim`` principal axes.

    Returns ``(projection (U, S), basis (K, S))``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("pca_project expects a 2-D matrix")
    n, k = X.shape
    if n < 2:
        raise ParameterError("need at least two rows for a covariance")
    if out_dim > k or out_dim < 0:
        raise ParameterError(f"out_dim={out_dim} must lie in [0, {k}]")
    centred = X - X.mean(axis=0)
    cov = centred.T @ centred / (n - 1)
    _, vecs = jacobi_eigh(cov)
    basis = vecs[:, :out_dim]
    return centred @ basis, basis
