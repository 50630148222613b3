"""Gaussian-latent autoencoder core shared by the exposure and generator VAEs.

The likelihood is supplied by subclasses through ``_nll(logits, target)``, which
returns per-row negative log-likelihoods and d(nll)/d(logits).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import TrainingError
from .numkit import AdamState, DenseStack, Rng, adam_step


@dataclass(frozen=True)
class BetaSchedule:
    beta_max: float = 0.2
    anneal_epochs: int = 20

    def __call__(self, epoch: int) -> float:
        if self.anneal_epochs <= 0:
            return self.beta_max
        return self.beta_max * min(1.0, epoch / self.anneal_epochs)


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis."""
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1.0, axis=-1)


class GaussianVae:
    likelihood = "abstract"

    def __init__(self, n_items: int, latent_dim: int, hidden: tuple[int, ...] | None = None,
                 beta: BetaSchedule = BetaSchedule()):
        hidden = (latent_dim,) if hidden is None else tuple(hidden)
        self.n_items = int(n_items)
        self.latent_dim = int(latent_dim)
        self.hidden = hidden
        self.beta = beta
        self.encoder = DenseStack((n_items, *hidden, 2 * latent_dim), "enc")
        self.decoder = DenseStack((latent_dim, *hidden[::-1], n_items), "dec")
        self.params: dict[str, np.ndarray] = {}

    @property
    def param_names(self) -> list[str]:
        return self.encoder.names + self.decoder.names

    def init(self, rng: Rng) -> "GaussianVae":
        self.encoder.init(rng.split("encoder"), self.params)
        self.decoder.init(rng.split("decoder"), self.params)
        return self

    def hyperparams(self) -> dict:
        return {
            "kind": type(self).__name__,
            "likelihood": self.likelihood,
            "n_items": self.n_items,
            "latent_dim": self.latent_dim,
            "hidden": list(self.hidden),
            "beta_max": self.beta.beta_max,
            "anneal_epochs": self.beta.anneal_epochs,
        }

    # -- likelihood hooks ---------------------------------------------------
    def _nll(self, logits: np.ndarray, target: np.ndarray):
        raise NotImplementedError

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)

    # -- passes -------------------------------------------------------------
    def encode(self, x: np.ndarray):
        h, _ = self.encoder.forward(self.params, self._check_input(x))
        k = self.latent_dim
        return h[..., :k], h[..., k:]

    def decode_logits(self, z: np.ndarray) -> np.ndarray:
        return self.decoder.forward(self.params, np.asarray(z, dtype=np.float64))[0]

    def loss_and_grads(self, x: np.ndarray, eps: np.ndarray, beta: float, target: np.ndarray | None = None):
        """Negative ELBO averaged over rows, with exact gradients.

        ``eps`` is the reparameterisation noise, shape ``(B, K)`` (or ``(K,)``).
        ``target`` defaults to ``x``.
        """
        x = self._check_input(x)
        target = x if target is None else np.asarray(target, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x, target, eps = x[None], target[None], np.asarray(eps)[None]
        n = x.shape[0]
        k = self.latent_dim

        h, enc_cache = self.encoder.forward(self.params, x)
        mu, logvar = h[:, :k], h[:, k:]
        std = np.exp(0.5 * logvar)
        z = mu + std * eps
        logits, dec_cache = self.decoder.forward(self.params, z)
        nll, dlogits = self._nll(logits, target)
        kl = gaussian_kl(mu, logvar)
        loss = float(np.mean(nll + beta * kl))

        grads: dict[str, np.ndarray] = {}
        dz = self.decoder.backward(self.params, dlogits / n, dec_cache, grads)
        dmu = dz + beta * mu / n
        dlogvar = dz * eps * 0.5 * std + beta * 0.5 * (np.exp(logvar) - 1.0) / n
        self.encoder.backward(self.params, np.concatenate([dmu, dlogvar], axis=1), enc_cache, grads)
        return loss, grads, {"nll": float(np.mean(nll)), "kl": float(np.mean(kl))}


def train_vae(vae: GaussianVae, train_x: np.ndarray, score_val: Callable[[GaussianVae], float], rng: Rng,
              epochs: int = 100, batch_size: int = 256, lr: float = 1e-3, patience: int = 10,
              train_target: np.ndarray | None = None):
    """Mini-batch Adam on the negative ELBO with early stopping on ``score_val``.

    ``score_val`` is maximised. Restores and returns the best parameters plus a
    per-epoch log whose entry 0 is the untrained model.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    if train_x.shape[0] < 1:
        raise TrainingError("no training rows")
    train_target = train_x if train_target is None else np.asarray(train_target, dtype=np.float64)
    state = AdamState(lr=lr)
    shuffle_rng = rng.split("shuffle")
    noise_rng = rng.split("noise")
    n = train_x.shape[0]

    best_score = score_val(vae)
    best_params = {k: v.copy() for k, v in vae.params.items()}
    best_epoch = 0
    log = [{"epoch": 0, "loss": None, "val": best_score}]
    stale = 0
    for epoch in range(1, epochs + 1):
        beta = vae.beta(epoch - 1)
        order = shuffle_rng.gen.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            eps = noise_rng.gen.standard_normal((len(idx), vae.latent_dim))
            loss, grads, _ = vae.loss_and_grads(train_x[idx], eps, beta, train_target[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            adam_step(vae.params, grads, state)
            total += loss * len(idx)
        score = score_val(vae)
        log.append({"epoch": epoch, "loss": total / n, "val": score, "beta": beta})
        if score > best_score:
            best_score, best_epoch, stale = score, epoch, 0
            best_params = {k: v.copy() for k, v in vae.params.items()}
        else:
            stale += 1
            if stale >= patience:
                break
    vae.params = best_params
    return vae, {"best_epoch": best_epoch, "best_val": best_score, "epochs": log}
