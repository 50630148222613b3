"""Deconfounded outcome network and top-K recommendation.

The network maps the concatenation ``[x_u | z_u | a_u]`` (user features,
substitute confounder, exposure vector) through a tanh hidden layer to one
score per item and is fit with a multinomial likelihood over the user's
normalized rating mass.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError, TrainingError, ValidationError
from .metrics import batch_metrics, topk_indices
from .numkit import AdamState, DenseStack, Rng, adam_step, log_softmax_fw, softmax_fw


class OutcomeNet:
    """Scores for every item given features, confounder and exposures.

    ``use_confounder=False`` gives the Concat-VAE ablation: the substitute
    confounder block is removed from the input. ``hidden=()`` gives the purely
    affine net whose weight blocks are directly the treatment effects.
    """

    def __init__(self, n_items: int, latent_dim: int, n_features: int, hidden: tuple[int, ...] | None = None,
                 use_features: bool = True, use_confounder: bool = True):
        self.n_items = int(n_items)
        self.latent_dim = int(latent_dim)
        self.n_features = int(n_features)
        self.use_features = bool(use_features) and self.n_features > 0
        self.use_confounder = bool(use_confounder)
        self.hidden = (self.latent_dim,) if hidden is None else tuple(hidden)
        f = self.n_features if self.use_features else 0
        k = self.latent_dim if self.use_confounder else 0
        self.blocks = {
            "x": slice(0, f),
            "z": slice(f, f + k),
            "a": slice(f + k, f + k + self.n_items),
        }
        self.input_dim = f + k + self.n_items
        self.stack = DenseStack((self.input_dim, *self.hidden, self.n_items), "out")
        self.params: dict[str, np.ndarray] = {}

    @property
    def param_names(self) -> list[str]:
        return self.stack.names

    def init(self, rng: Rng) -> "OutcomeNet":
        self.stack.init(rng, self.params)
        return self

    def hyperparams(self) -> dict:
        return {
            "kind": "OutcomeNet",
            "n_items": self.n_items,
            "latent_dim": self.latent_dim,
            "n_features": self.n_features,
            "hidden": list(self.hidden),
            "use_features": self.use_features,
            "use_confounder": self.use_confounder,
        }

    def assemble(self, x, z, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        if a.shape[-1] != self.n_items:
            raise DimensionError(f"exposure block has {a.shape[-1]} entries, expected {self.n_items}")
        parts = []
        if self.use_features:
            x = np.asarray(x, dtype=np.float64)
            if x.shape[-1] != self.n_features:
                raise DimensionError(f"feature block has {x.shape[-1]} entries, expected {self.n_features}")
            parts.append(x)
        if self.use_confounder:
            z = np.asarray(z, dtype=np.float64)
            if z.shape[-1] != self.latent_dim:
                raise DimensionError(f"confounder block has {z.shape[-1]} entries, expected {self.latent_dim}")
            parts.append(z)
        parts.append(a)
        return np.concatenate(parts, axis=-1)

    def forward_input(self, v: np.ndarray) -> np.ndarray:
        return self.stack.forward(self.params, v)[0]

    def logits(self, x, z, a) -> np.ndarray:
        return self.forward_input(self.assemble(x, z, a))


def rating_target(ratings_obs: np.ndarray) -> np.ndarray:
    """Row-normalized rating mass; rows without any rating raise."""
    r = np.asarray(ratings_obs, dtype=np.float64)
    if np.any(r < 0):
        raise ValidationError("ratings must be non-negative")
    total = r.sum(axis=-1, keepdims=True)
    if np.any(total == 0):
        raise ValidationError("user has no exposed ratings")
    return r / total


def outcome_loss(net: OutcomeNet, x, z, a, target):
    """Multinomial negative log-likelihood (mean over rows) and exact gradients."""
    target = np.asarray(target, dtype=np.float64)
    mass = target.sum(axis=-1)
    if np.any(mass <= 0):
        raise ValidationError("all-zero rating target (user has no exposed ratings)")
    v = net.assemble(x, z, a)
    single = v.ndim == 1
    if single:
        v, target = v[None], target[None]
    logits, cache = net.stack.forward(net.params, v)
    logp = log_softmax_fw(logits)
    n = v.shape[0]
    loss = float(-np.sum(target * logp) / n)
    dlogits = (np.exp(logp) * target.sum(axis=1, keepdims=True) - target) / n
    grads: dict[str, np.ndarray] = {}
    net.stack.backward(net.params, dlogits, cache, grads)
    return loss, grads


def predict_ratings(net: OutcomeNet, x, z, a_obs) -> np.ndarray:
    """Softmax scores conditioned on the observed exposures."""
    return softmax_fw(net.logits(x, z, a_obs))


def recommend_topk(scores, a_obs, k: int):
    """Top-``k`` unexposed items, ties broken by ascending index.

    Returns ``(items, short)`` where ``short`` flags that fewer than ``k``
    unexposed items existed.
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    a_obs = np.asarray(a_obs)
    n_free = int(np.sum(a_obs == 0))
    take = min(k, n_free)
    items = topk_indices(scores, a_obs, take)
    return items, take < k


def validation_ndcg(net: OutcomeNet, x, z, a_visible, holdout, k: int = 20) -> float:
    scores = net.logits(x, z, a_visible)
    top = topk_indices(scores, a_visible, k)
    _, ndcg = batch_metrics(top, holdout, [k])[k]
    return float(np.nanmean(ndcg))


def train_outcome(net: OutcomeNet, train: dict, val: dict, rng: Rng, epochs: int = 100,
                  batch_size: int = 256, lr: float = 1e-3, patience: int = 10, select_k: int = 20):
    """Fit the outcome net; keep the epoch with the best validation N@``select_k``.

    ``train`` holds arrays ``x, z, a, target``; ``val`` holds ``x, z, a``
    (visible exposures) and a boolean ``holdout`` matrix of held-out items.
    """
    n = train["a"].shape[0]
    if n < 1:
        raise TrainingError("no training users")
    state = AdamState(lr=lr)
    shuffle_rng = rng.split("shuffle")

    def score():
        return validation_ndcg(net, val["x"], val["z"], val["a"], val["holdout"], select_k)

    best = score()
    best_params = {k: v.copy() for k, v in net.params.items()}
    best_epoch = 0
    log = [{"epoch": 0, "loss": None, "val_ndcg": best}]
    stale = 0
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.gen.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            loss, grads = outcome_loss(net, train["x"][idx], train["z"][idx], train["a"][idx],
                                       train["target"][idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            adam_step(net.params, grads, state)
            total += loss * len(idx)
        s = score()
        log.append({"epoch": epoch, "loss": total / n, "val_ndcg": s})
        if s > best:
            best, best_epoch, stale = s, epoch, 0
            best_params = {k: v.copy() for k, v in net.params.items()}
        else:
            stale += 1
            if stale >= patience:
                break
    net.params = best_params
    return net, {"best_epoch": best_epoch, "best_val_ndcg": best, "epochs": log}
