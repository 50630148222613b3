"""Fast oracle suites run by ``deepdeconf selfcheck``.

Each check compares a library routine against an independent computation
(finite differences, brute-force set counting, two OLS formulas) and returns
``(name, passed, detail)``.
"""
from __future__ import annotations

import numpy as np

from .causal import cate_of_exposure, network_jacobian, ols_variance_study
from .exposure import ExposureVae
from .metrics import ndcg_at_k, recall_at_k
from .numkit import Rng, finite_diff_grad
from .outcome import OutcomeNet, outcome_loss
from .vae import BetaSchedule


def _rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def check_elbo_gradients(seeds=range(20), I=8, K=3):
    worst = 0.0
    for seed in seeds:
        rng = Rng(seed)
        vae = ExposureVae(I, K, beta=BetaSchedule(0.2, 20)).init(rng.split("init"))
        a = (rng.split("a").gen.random((4, I)) < 0.4).astype(float)
        eps = rng.split("eps").gen.standard_normal((4, K))
        _, grads, _ = vae.loss_and_grads(a, eps, 0.2)
        for name in vae.param_names:
            p = vae.params[name]

            def f(flat, name=name, shape=p.shape):
                saved = vae.params[name]
                vae.params[name] = flat.reshape(shape)
                loss = vae.loss_and_grads(a, eps, 0.2)[0]
                vae.params[name] = saved
                return loss

            worst = max(worst, _rel_err(grads[name].ravel(), finite_diff_grad(f, p.ravel().copy())))
    return "elbo_gradients", worst < 1e-4, f"max rel err {worst:.2e}"


def check_outcome_gradients(seeds=range(20), I=8, K=3, F=2):
    worst = 0.0
    for seed in seeds:
        rng = Rng(seed)
        net = OutcomeNet(I, K, F).init(rng.split("init"))
        g = rng.split("data").gen
        x, z = g.standard_normal((4, F)), g.standard_normal((4, K))
        a = (g.random((4, I)) < 0.5).astype(float)
        a[:, 0] = 1.0
        target = a * g.integers(1, 6, (4, I))
        target = target / target.sum(axis=1, keepdims=True)
        _, grads = outcome_loss(net, x, z, a, target)
        for name in net.param_names:
            p = net.params[name]

            def f(flat, name=name, shape=p.shape):
                saved = net.params[name]
                net.params[name] = flat.reshape(shape)
                loss = outcome_loss(net, x, z, a, target)[0]
                net.params[name] = saved
                return loss

            worst = max(worst, _rel_err(grads[name].ravel(), finite_diff_grad(f, p.ravel().copy())))
    return "outcome_gradients", worst < 1e-4, f"max rel err {worst:.2e}"


def check_metrics(n_cases=1000, seed=0):
    g = Rng(seed).gen
    for _ in range(n_cases):
        n_items = int(g.integers(2, 51))
        k = int(g.integers(1, min(20, n_items) + 1))
        ranked = g.permutation(n_items)[:k]
        hold = set(g.choice(n_items, int(g.integers(1, n_items + 1)), replace=False).tolist())
        hits = [int(i) in hold for i in ranked]
        denom = min(k, len(hold))
        rec = sum(hits) / denom
        dcg = sum(1.0 / np.log2(r + 2) for r, h in enumerate(hits) if h)
        idcg = sum(1.0 / np.log2(r + 2) for r in range(denom))
        if recall_at_k(ranked, hold, k) != rec or abs(ndcg_at_k(ranked, hold, k) - dcg / idcg) > 1e-12:
            return "ranking_metrics", False, f"mismatch at I={n_items}, K={k}"
    return "ranking_metrics", True, f"{n_cases} random cases"


def check_ols(seeds=range(100)):
    rep = ols_variance_study(10_000, Rng(0))
    ident = abs(rep.w_a_hat - rep.tau_hat)
    var = abs(rep.var_design - rep.var_closed)
    reduced = sum(ols_variance_study(1000, Rng(s)).var_with < ols_variance_study(1000, Rng(s)).var_without
                  for s in seeds)
    ok = ident < 1e-10 and var < 1e-10 and reduced >= 99
    return "ols_identities", ok, f"|w-tau|={ident:.1e} |V-V|={var:.1e} reduced {reduced}/{len(seeds)}"


def check_linear_jacobian(I=8, K=3, F=2):
    net = OutcomeNet(I, K, F, hidden=()).init(Rng(0))
    rng = Rng(1).gen
    a = (rng.random(I) < 0.5).astype(float)
    a[2] = 0.0
    z, x = rng.standard_normal(K), rng.standard_normal(F)
    rep = network_jacobian(net, a, z, x)
    exact = np.array_equal(rep.W_a, net.params["out0.W"][:, net.blocks["a"]])
    e = np.zeros(I)
    e[2] = 1.0
    diff = net.logits(x, z, a + e) - net.logits(x, z, a)
    err = float(np.max(np.abs(cate_of_exposure(rep, 2) - diff)))
    return "linear_jacobian", exact and err < 1e-12, f"exact={exact} cate err {err:.1e}"


CHECKS = (check_elbo_gradients, check_outcome_gradients, check_metrics, check_ols, check_linear_jacobian)


def run_all():
    return [check() for check in CHECKS]
