"""Factorized-logistic VAE over binary exposure vectors.

The decoder emits one Bernoulli logit per item, so exposures are conditionally
independent given the latent code. The posterior mean of the latent code is
used downstream as the substitute confounder.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .numkit import Rng, sigmoid_fw
from .vae import BetaSchedule, GaussianVae, gaussian_kl, train_vae

PROB_FLOOR = 1e-6
# logit at which sigmoid reaches 1 - PROB_FLOOR
LOGIT_CLAMP = float(np.log((1.0 - PROB_FLOOR) / PROB_FLOOR))


def _softplus(x):
    return np.logaddexp(0.0, x)


def bernoulli_nll(logits: np.ndarray, a: np.ndarray):
    """Per-entry negative log-likelihood with probabilities kept in [1e-6, 1-1e-6]."""
    clipped = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    nll = _softplus(clipped) - a * clipped
    inside = np.abs(logits) < LOGIT_CLAMP
    return nll, (sigmoid_fw(clipped) - a) * inside


def exposure_probs(logits: np.ndarray) -> np.ndarray:
    return sigmoid_fw(np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP))


class ExposureVae(GaussianVae):
    likelihood = "bernoulli"

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_items:
            raise ValidationError(f"exposure vectors must have {self.n_items} entries, got {x.shape[-1]}")
        if not np.all((x == 0.0) | (x == 1.0)):
            raise ValidationError("exposure vectors must be binary")
        return x

    def _nll(self, logits, target):
        nll, dlogits = bernoulli_nll(logits, target)
        return nll.sum(axis=-1), dlogits

    def log_likelihood(self, a: np.ndarray, z: np.ndarray, per_item: bool = False):
        """log p(a | z) under the decoder; per-item terms if ``per_item``."""
        a = self._check_input(a)
        nll, _ = bernoulli_nll(self.decode_logits(z), a)
        return -nll if per_item else -nll.sum(axis=-1)


def elbo(vae: ExposureVae, a: np.ndarray, rng: Rng | None = None, beta: float | None = None,
         eps: np.ndarray | None = None):
    """Negative ELBO of exposure vector(s) ``a`` and its gradients.

    Pass ``eps`` to freeze the reparameterisation noise; otherwise it is drawn
    from ``rng``. ``beta`` defaults to the schedule's maximum.
    """
    a = vae._check_input(a)
    if eps is None:
        if rng is None:
            raise ValidationError("either rng or eps is required")
        eps = rng.gen.standard_normal(a.shape[:-1] + (vae.latent_dim,))
    beta = vae.beta.beta_max if beta is None else beta
    loss, grads, _ = vae.loss_and_grads(a, eps, beta)
    return loss, grads


def kl_term(vae: GaussianVae, a: np.ndarray) -> np.ndarray:
    mu, logvar = vae.encode(a)
    return gaussian_kl(mu, logvar)


def holdout_inputs(exposures: np.ndarray, holdout_mask: np.ndarray) -> np.ndarray:
    return np.where(holdout_mask, 0.0, exposures)


def predictive_check(vae: ExposureVae, val_exposures: np.ndarray, holdout_mask: np.ndarray) -> float:
    """Mean held-out Bernoulli log-likelihood per scored entry.

    The encoder sees exposures with the masked entries removed; every entry not
    visible to the encoder (held-out exposures and true non-exposures) is then
    scored against the original exposure vector under the decoder mean.
    """
    val_exposures = vae._check_input(val_exposures)
    holdout_mask = np.asarray(holdout_mask, dtype=bool)
    if holdout_mask.shape != val_exposures.shape:
        raise ValidationError("holdout mask shape does not match exposures")
    if not holdout_mask.any():
        raise ValidationError("holdout mask selects no entries")
    visible = holdout_inputs(val_exposures, holdout_mask)
    mu, _ = vae.encode(visible)
    ll = vae.log_likelihood(val_exposures, mu, per_item=True)
    scored = visible == 0.0
    return float(ll[scored].mean())


def extract_confounders(vae: ExposureVae, exposures: np.ndarray) -> np.ndarray:
    """Posterior means for every row, shape ``(U, K)``."""
    mu, _ = vae.encode(exposures)
    return np.array(mu)


def train_exposure(vae: ExposureVae, train_exposures: np.ndarray, val_exposures: np.ndarray,
                   val_holdout: np.ndarray, rng: Rng, epochs: int = 150, batch_size: int = 64,
                   lr: float = 3e-3, patience: int = 30):
    """Fit the exposure VAE, selecting the epoch with the best predictive check."""
    train_exposures = vae._check_input(train_exposures)

    def score(model):
        return predictive_check(model, val_exposures, val_holdout)

    return train_vae(vae, train_exposures, score, rng, epochs=epochs, batch_size=batch_size,
                     lr=lr, patience=patience)


__all__ = [
    "BetaSchedule",
    "ExposureVae",
    "LOGIT_CLAMP",
    "PROB_FLOOR",
    "bernoulli_nll",
    "elbo",
    "exposure_probs",
    "extract_confounders",
    "kl_term",
    "predictive_check",
    "train_exposure",
]
