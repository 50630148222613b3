"""Causal readouts of a fitted outcome net and the OLS variance diagnostics.

Linearizing the outcome net around a point gives
``f(a, z, x) ~ W^a a + W^z z + W^x x + alpha`` and, for an affine net, column
``j`` of ``W^a`` is exactly the effect of exposing item ``j`` on every score.
The scalar OLS study shows why conditioning on informative pre-treatment
features sharpens that estimate.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import DegenerateError, DimensionError, ParameterError
from .numkit import Rng
from .outcome import OutcomeNet
from .storage import dense_csv


@dataclass
class JacobianReport:
    a: np.ndarray
    z: np.ndarray
    x: np.ndarray
    W_a: np.ndarray        # I x I
    W_z: np.ndarray        # I x K (K x 0 block when the net ignores z)
    W_x: np.ndarray        # I x F
    alpha: np.ndarray      # I, score at the point minus the linear terms
    mode: str

    @property
    def exact(self) -> bool:
        """True when the net is affine, so the expansion is not an approximation."""
        return self._affine

    _affine: bool = False


def input_jacobian(net: OutcomeNet, v: np.ndarray) -> np.ndarray:
    """d logits / d input at a single input vector, one reverse sweep per output."""
    stack = net.stack
    _, inputs = stack.forward(net.params, v[None])
    n = len(stack.dims) - 1
    g = net.params[f"{stack.prefix}{n - 1}.W"].copy()
    for k in reversed(range(n - 1)):
        g = g * (1.0 - inputs[k + 1][0] ** 2)
        g = g @ net.params[f"{stack.prefix}{k}.W"]
    return g


def network_jacobian(net: OutcomeNet, a=None, z=None, x=None, mode: str = "local") -> JacobianReport:
    """Linearize ``net`` at ``(a, z, x)``; ``mode='global'`` expands at the origin."""
    if mode not in ("global", "local"):
        raise ParameterError(f"mode must be 'global' or 'local', got {mode!r}")
    I, K = net.n_items, net.latent_dim
    F = net.n_features if net.use_features else 0
    if mode == "global":
        a, z, x = np.zeros(I), np.zeros(K), np.zeros(F)
    else:
        a = np.zeros(I) if a is None else np.asarray(a, dtype=np.float64)
        z = np.zeros(K) if z is None else np.asarray(z, dtype=np.float64)
        x = np.zeros(F) if x is None else np.asarray(x, dtype=np.float64)
    if a.shape != (I,):
        raise DimensionError(f"a has shape {a.shape}, expected ({I},)")
    point = np.concatenate([v for v in (x, z, a)])
    if not np.all(np.isfinite(point)):
        raise ParameterError("expansion point must be finite")
    v = net.assemble(x, z, a)
    J = input_jacobian(net, v)
    f0 = net.forward_input(v[None])[0]
    alpha = f0 - J @ v
    blocks = net.blocks
    W_z = J[:, blocks["z"]] if net.use_confounder else np.zeros((I, 0))
    return JacobianReport(a=a, z=z, x=x, W_a=J[:, blocks["a"]], W_z=W_z, W_x=J[:, blocks["x"]],
                          alpha=alpha, mode=mode, _affine=len(net.hidden) == 0)


def cate_of_exposure(report: JacobianReport, j: int) -> np.ndarray:
    """Effect on all item scores of exposing item ``j`` (column ``j`` of ``W^a``)."""
    n = report.W_a.shape[1]
    if not 0 <= int(j) < n:
        raise IndexError(f"item {j} out of range [0, {n})")
    return report.W_a[:, int(j)].copy()


def top_pairs(W_a: np.ndarray, k: int = 20) -> list[dict]:
    """Strongest off-diagonal co-recommendation effects by ``|w_ij|``."""
    mag = np.abs(W_a).astype(np.float64)
    np.fill_diagonal(mag, -np.inf)
    flat = np.argsort(-mag, axis=None, kind="stable")[:min(k, W_a.size - W_a.shape[0])]
    out = []
    for f in flat:
        i, j = divmod(int(f), W_a.shape[1])
        out.append({"target_item": i, "exposed_item": j, "effect": float(W_a[i, j])})
    return out


def report_files(report: JacobianReport, k: int = 20) -> tuple[dict, dict]:
    """CSV matrices and a JSON-ready summary (strongest off-diagonal pairs)."""
    files = {
        "W_a.csv": dense_csv(report.W_a, "a"),
        "W_z.csv": dense_csv(report.W_z, "z"),
        "W_x.csv": dense_csv(report.W_x, "x"),
        "alpha.csv": dense_csv(report.alpha[:, None], "alpha"),
    }
    summary = {
        "mode": report.mode,
        "exact": report.exact,
        "n_items": int(report.W_a.shape[0]),
        "mean_self_effect": float(np.mean(np.diag(report.W_a))),
        "top_pairs": top_pairs(report.W_a, k),
    }
    return files, summary


# ---------------------------------------------------------------------------
# OLS variance study
# ---------------------------------------------------------------------------

RIDGE = 1e-10


@dataclass
class OlsVarianceReport:
    tau_hat: float          # mean rating difference, exposed minus unexposed
    w_a_hat: float          # OLS exposure coefficient, no covariate
    w_a_hat_x: float        # OLS exposure coefficient, with the feature
    n_exposed: int
    n_unexposed: int
    s2: float               # residual variance, no covariate (U - 2 dof)
    s2_x: float             # residual variance, with the feature (U - 3 dof)
    var_design: float       # s2 * [(D'D)^-1]_aa, no covariate
    var_closed: float       # s2 * (1/U1 + 1/U0)
    var_with: float         # s2_x * [(D'D)^-1]_aa with the feature
    true_w_a: float

    @property
    def var_without(self) -> float:
        return self.var_design


def ols_fit(D: np.ndarray, r: np.ndarray):
    """Normal-equation OLS with a tiny ridge; returns (coef, s2, (D'D)^-1)."""
    n, p = D.shape
    if n <= p:
        raise DegenerateError(f"need more rows ({n}) than columns ({p})")
    G = D.T @ D + RIDGE * np.eye(p)
    G_inv = np.linalg.inv(G)
    coef = G_inv @ (D.T @ r)
    resid = r - D @ coef
    s2 = float(resid @ resid) / (n - p)
    return coef, s2, G_inv


def ols_variance_study(n_users: int, rng: Rng, w_a: float = 1.0, w_z: float = 0.5, w_x: float = 2.0,
                       alpha: float = 3.0, noise_sd: float = 1.0, z: float = 0.3,
                       exposure_prob: float | None = None) -> OlsVarianceReport:
    """Simulate one item's ratings inside a single confounder stratum and fit both OLS specifications.

    Conditioning on ``z`` means it is constant across the sample, so it folds
    into the intercept. Exposure is Bernoulli with probability ``sigmoid(z)``
    unless given; the feature ``x`` is standard normal and pre-treatment.
    """
    if n_users < 10:
        raise ParameterError("n_users must be >= 10")
    if noise_sd < 0:
        raise ParameterError("noise_sd must be >= 0")
    p = 1.0 / (1.0 + np.exp(-z)) if exposure_prob is None else float(exposure_prob)
    a = (rng.split("exposure").gen.random(n_users) < p).astype(np.float64)
    x = rng.split("feature").gen.standard_normal(n_users)
    eps = noise_sd * rng.split("noise").gen.standard_normal(n_users)
    r = w_z * z + w_a * a + w_x * x + alpha + eps
    return ols_report(r, a, x, true_w_a=w_a)


def ols_report(r, a, x, true_w_a: float = float("nan")) -> OlsVarianceReport:
    r, a, x = (np.asarray(v, dtype=np.float64) for v in (r, a, x))
    u1 = int(np.sum(a == 1))
    u0 = int(np.sum(a == 0))
    if u1 == 0 or u0 == 0:
        raise DegenerateError("both exposure groups must be nonempty")
    if u1 + u0 != a.size:
        raise ParameterError("exposures must be binary")
    ones = np.ones_like(a)
    coef, s2, G_inv = ols_fit(np.column_stack([ones, a]), r)
    coef_x, s2_x, G_inv_x = ols_fit(np.column_stack([ones, a, x]), r)
    tau = float(r[a == 1].mean() - r[a == 0].mean())
    return OlsVarianceReport(
        tau_hat=tau,
        w_a_hat=float(coef[1]),
        w_a_hat_x=float(coef_x[1]),
        n_exposed=u1,
        n_unexposed=u0,
        s2=s2,
        s2_x=s2_x,
        var_design=s2 * float(G_inv[1, 1]),
        var_closed=s2 * (1.0 / u1 + 1.0 / u0),
        var_with=s2_x * float(G_inv_x[1, 1]),
        true_w_a=float(true_w_a),
    )
