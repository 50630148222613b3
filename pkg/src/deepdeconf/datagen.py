"""Confounded rating datasets: fully simulated and semi-synthetic generators.

Both generators draw a confounder ``c_u`` and a preference
``theta_u = g * c_u + (1 - g) * eps_u`` per user, expose the globally
highest-propensity cells, draw ratings from the preference, and derive user
features as a noisy PCA view of the preference.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError, ValidationError
from .exposure import ExposureVae, exposure_probs, train_exposure
from .numkit import Rng, pca_project, relu_fw, sample_poisson, softmax_fw
from .vae import BetaSchedule, GaussianVae, train_vae

log = logging.getLogger(__name__)

RATING_LEVELS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class SimConfig:
    n_users: int = 2000
    n_items: int = 500
    latent_dim: int = 20
    feature_dim: int = 10
    gamma_theta: float = 0.5
    gamma_b: float = 2.0
    exposure_rate: float = 0.1
    feature_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma_theta <= 1.0:
            raise ParameterError(f"gamma_theta={self.gamma_theta} outside [0, 1]")
        if self.gamma_b < 0:
            raise ParameterError(f"gamma_b={self.gamma_b} must be >= 0")
        if not 0.0 < self.exposure_rate < 1.0:
            raise ParameterError(f"exposure_rate={self.exposure_rate} outside (0, 1)")
        if self.feature_noise < 0:
            raise ParameterError(f"feature_noise={self.feature_noise} must be >= 0")
        if self.n_users < 2:
            raise ParameterError(f"n_users={self.n_users} must be >= 2")
        if self.n_items < 1:
            raise ParameterError(f"n_items={self.n_items} must be >= 1")
        if self.latent_dim < 1:
            raise ParameterError(f"latent_dim={self.latent_dim} must be >= 1")
        if not 0 <= self.feature_dim <= self.latent_dim:
            raise ParameterError(f"feature_dim={self.feature_dim} must lie in [0, latent_dim]")
        if self.seed < 0:
            raise ParameterError(f"seed={self.seed} must be >= 0")

    def replace(self, **changes) -> "SimConfig":
        return SimConfig(**{**asdict(self), **changes})


@dataclass
class CausalDataset:
    ratings_full: np.ndarray
    exposures: np.ndarray
    ratings_obs: np.ndarray
    features: np.ndarray
    confounders_true: np.ndarray
    manifest: dict = field(default_factory=dict)
    propensity: np.ndarray | None = None

    @property
    def n_users(self) -> int:
        return self.exposures.shape[0]

    @property
    def n_items(self) -> int:
        return self.exposures.shape[1]

    def summary(self) -> dict:
        per_user = self.exposures.sum(axis=1)
        return {
            "n_users": int(self.n_users),
            "n_items": int(self.n_items),
            "density": float(self.exposures.mean()),
            "exposures_per_user_mean": float(per_user.mean()),
            "exposures_per_user_std": float(per_user.std()),
        }


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------

def draw_latents(rng: Rng, n_users: int, latent_dim: int, gamma_theta: float):
    c = rng.split("confounder").gen.standard_normal((n_users, latent_dim))
    eps = rng.split("preference").gen.standard_normal((n_users, latent_dim))
    theta = gamma_theta * c + (1.0 - gamma_theta) * eps
    return c, theta


def noisy_features(rng: Rng, theta: np.ndarray, feature_dim: int, noise_var: float) -> np.ndarray:
    """Standardized top principal components of ``theta + N(0, noise_var I)``."""
    if feature_dim == 0:
        return np.zeros((theta.shape[0], 0))
    noisy = theta + np.sqrt(noise_var) * rng.split("feature_noise").gen.standard_normal(theta.shape)
    proj, _ = pca_project(noisy, feature_dim)
    sd = proj.std(axis=0)
    sd[sd == 0] = 1.0
    return (proj - proj.mean(axis=0)) / sd


def expose_top(scores: np.ndarray, count: int):
    """Expose the ``count`` globally highest scores, then repair empty users.

    Ties rank by ascending flat (user, item) index. A user left without any
    exposure gets its best item; to keep the total fixed, the lowest-ranked
    exposed cell of a user holding at least two exposures is released.
    Returns ``(exposures, repair_log)``.
    """
    n_users, n_items = scores.shape
    if not n_users <= count <= n_users * n_items:
        raise ParameterError(f"exposure count {count} cannot give each of {n_users} users an item "
                             f"within {n_users * n_items} cells")
    flat = scores.reshape(-1)
    order = np.lexsort((np.arange(flat.size), -flat))
    exposed = np.zeros(flat.size, dtype=np.int64)
    exposed[order[:count]] = 1
    exposures = exposed.reshape(n_users, n_items)
    rank = np.empty(flat.size, dtype=np.int64)
    rank[order] = np.arange(flat.size)
    rank = rank.reshape(n_users, n_items)

    repairs = []
    counts = exposures.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        # candidate cells to release, worst rank first
        cand = order[:count][::-1].tolist()
        ptr = 0
        for u in empty:
            item = int(np.argmin(rank[u]))
            while True:
                cell = cand[ptr]
                ptr += 1
                cu, ci = divmod(cell, n_items)
                if exposures[cu, ci] == 1 and counts[cu] >= 2:
                    break
            exposures[cu, ci] = 0
            counts[cu] -= 1
            exposures[u, item] = 1
            counts[u] += 1
            repairs.append({"user": int(u), "added_item": item, "released": [int(cu), int(ci)]})
    return exposures, repairs


# ---------------------------------------------------------------------------
# Fully simulated
# ---------------------------------------------------------------------------

def simulate_dataset(cfg: SimConfig) -> CausalDataset:
    """Simulated dataset with ReLU exposure propensities and Poisson ratings.

    ``gamma_b`` adds ``gamma_b * c_u`` to the preference in the rating branch
    only; with ``gamma_b = 0`` ratings depend on ``theta_u`` alone.
    """
    rng = Rng(cfg.seed)
    U, I, K = cfg.n_users, cfg.n_items, cfg.latent_dim
    c, theta = draw_latents(rng, U, K, cfg.gamma_theta)
    scale = 1.0 / np.sqrt(K)
    W_a = rng.split("W_a").gen.standard_normal((I, K)) * scale
    W_r = rng.split("W_r").gen.standard_normal((I, K)) * scale

    propensity = relu_fw(c @ W_a.T)
    count = int(round(cfg.exposure_rate * U * I))
    exposures, repairs = expose_top(propensity, count)

    rate = relu_fw((theta + cfg.gamma_b * c) @ W_r.T)
    ratings_full = np.minimum(1 + sample_poisson(rng.split("ratings"), rate), 5).astype(np.int64)
    features = noisy_features(rng, theta, cfg.feature_dim, cfg.feature_noise)

    manifest = {
        "generator": "simulated",
        "config": asdict(cfg),
        "target_exposures": count,
        "repairs": repairs,
    }
    ds = CausalDataset(ratings_full, exposures, ratings_full * exposures, features, c, manifest, propensity)
    ds.manifest["stats"] = ds.summary()
    return ds


# ---------------------------------------------------------------------------
# Semi-synthetic
# ---------------------------------------------------------------------------

class RatingVae(GaussianVae):
    """Generator-side VAE with a multinomial likelihood over rating mass."""

    likelihood = "multinomial"

    def _nll(self, logits, target):
        logp = logits - np.max(logits, axis=-1, keepdims=True)
        logp = logp - np.log(np.sum(np.exp(logp), axis=-1, keepdims=True))
        mass = target.sum(axis=-1, keepdims=True)
        return -np.sum(target * logp, axis=-1), np.exp(logp) * mass - target


@dataclass
class GeneratorModels:
    exposure: ExposureVae
    rating: RatingVae
    exposure_rate: float
    rating_hist: np.ndarray
    dropped_users: list
    dropped_items: list
    logs: dict = field(default_factory=dict)


def clean_raw(raw: np.ndarray):
    """Drop users and items without any rating; return the trimmed matrix and dropped ids."""
    raw = np.asarray(raw)
    if np.any((raw < 0) | (raw > 5)) or np.any(raw != np.round(raw)):
        raise ValidationError("raw ratings must be integers in 0..5")
    keep_u = raw.sum(axis=1) > 0
    keep_i = raw[keep_u].sum(axis=0) > 0
    dropped_u = np.flatnonzero(~keep_u).tolist()
    dropped_i = np.flatnonzero(~keep_i).tolist()
    return raw[keep_u][:, keep_i].astype(np.int64), dropped_u, dropped_i


def _val_split(rng: Rng, n: int, frac: float = 0.1):
    perm = rng.gen.permutation(n)
    n_val = max(1, int(round(frac * n))) if n > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _holdout_mask(rng: Rng, matrix: np.ndarray, frac: float = 0.2) -> np.ndarray:
    mask = np.zeros(matrix.shape, dtype=bool)
    for u in range(matrix.shape[0]):
        obs = np.flatnonzero(matrix[u])
        if len(obs) < 2:
            continue
        n_hold = max(1, int(round(frac * len(obs))))
        mask[u, rng.gen.choice(obs, n_hold, replace=False)] = True
    return mask


def fit_generator_vaes(raw: np.ndarray, latent_dim: int, epochs: int = 100, seed: int = 0,
                       batch_size: int = 256, beta: BetaSchedule = BetaSchedule()) -> GeneratorModels:
    """Fit the exposure (factorized logistic) and rating (multinomial) generators."""
    cleaned, dropped_u, dropped_i = clean_raw(raw)
    if dropped_u or dropped_i:
        log.info("dropped %d empty users and %d empty items", len(dropped_u), len(dropped_i))
    rng = Rng(seed)
    exposures = (cleaned > 0).astype(np.float64)
    tr, va = _val_split(rng.split("split"), cleaned.shape[0])
    n_items = cleaned.shape[1]

    exp_vae = ExposureVae(n_items, latent_dim, beta=beta).init(rng.split("exposure_init"))
    if len(va) and exposures[va].sum() > 1:
        mask = _holdout_mask(rng.split("holdout"), exposures[va])
        if not mask.any():
            mask = exposures[va] > 0
        exp_vae, exp_log = train_exposure(exp_vae, exposures[tr], exposures[va], mask, rng.split("exposure_train"),
                                          epochs=epochs, batch_size=batch_size)
    else:
        exp_vae, exp_log = train_vae(exp_vae, exposures, lambda m: 0.0, rng.split("exposure_train"),
                                     epochs=epochs, batch_size=batch_size, patience=epochs + 1)

    mass = cleaned / cleaned.sum(axis=1, keepdims=True)
    rat_vae = RatingVae(n_items, latent_dim, beta=beta).init(rng.split("rating_init"))

    def rating_score(model):
        if not len(va):
            return 0.0
        mu, _ = model.encode(mass[va])
        nll, _ = model._nll(model.decode_logits(mu), mass[va])
        return float(-nll.mean())

    rat_vae, rat_log = train_vae(rat_vae, mass[tr], rating_score, rng.split("rating_train"),
                                 epochs=epochs, batch_size=batch_size)

    hist = np.array([(cleaned == r).sum() for r in RATING_LEVELS], dtype=np.float64)
    return GeneratorModels(
        exposure=exp_vae,
        rating=rat_vae,
        exposure_rate=float(exposures.mean()),
        rating_hist=hist / hist.sum(),
        dropped_users=dropped_u,
        dropped_items=dropped_i,
        logs={"exposure": exp_log, "rating": rat_log},
    )


def largest_remainder_counts(probs: np.ndarray, total: int) -> np.ndarray:
    raw = np.asarray(probs, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short:
        order = np.lexsort((np.arange(len(raw)), -(raw - counts)))
        counts[order[:short]] += 1
    return counts


def quantile_ratings(scores: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Assign levels 1..5 by global score rank so level counts follow ``probs``.

    Lowest scores get the lowest level; ties rank by (user, item) index.
    """
    flat = scores.reshape(-1)
    counts = largest_remainder_counts(probs, flat.size)
    order = np.lexsort((np.arange(flat.size), flat))
    levels = np.repeat(np.array(RATING_LEVELS, dtype=np.int64), counts)
    out = np.empty(flat.size, dtype=np.int64)
    out[order] = levels
    return out.reshape(scores.shape)


def _duplicate_fraction(scores: np.ndarray) -> float:
    flat = np.sort(scores.reshape(-1))
    return float(np.mean(flat[1:] == flat[:-1])) if flat.size > 1 else 0.0


def simulate_semisynthetic(raw: np.ndarray, cfg: SimConfig, generators: GeneratorModels | None = None,
                           epochs: int = 100) -> CausalDataset:
    """Re-simulate exposures and ratings from generators fit on a real matrix.

    Exposure and rating level counts follow the source matrix; ``cfg.n_items``
    and ``cfg.exposure_rate`` are ignored in favour of the source's values.
    """
    if generators is None:
        generators = fit_generator_vaes(raw, cfg.latent_dim, epochs=epochs, seed=cfg.seed)
    if generators.exposure.latent_dim != cfg.latent_dim:
        raise ParameterError("generator latent_dim does not match cfg.latent_dim")
    rng = Rng(cfg.seed)
    U, K = cfg.n_users, cfg.latent_dim
    I = generators.exposure.n_items
    c, theta = draw_latents(rng, U, K, cfg.gamma_theta)

    exp_scores = exposure_probs(generators.exposure.decode_logits(c))
    count = int(round(generators.exposure_rate * U * I))
    exposures, repairs = expose_top(exp_scores, count)

    rat_scores = softmax_fw(generators.rating.decode_logits(theta + cfg.gamma_b * c))
    ratings_full = quantile_ratings(rat_scores, generators.rating_hist)
    features = noisy_features(rng, theta, cfg.feature_dim, cfg.feature_noise)

    warnings = []
    for name, s in (("exposure", exp_scores), ("rating", rat_scores)):
        dup = _duplicate_fraction(s)
        if dup > 1e-3:
            warnings.append(f"{name} scores: {dup:.4%} duplicates, minimizer not unique")
    manifest = {
        "generator": "semisynthetic",
        "config": {**asdict(cfg), "n_items": I, "exposure_rate": generators.exposure_rate},
        "source_exposure_rate": generators.exposure_rate,
        "source_rating_hist": generators.rating_hist.tolist(),
        "target_exposures": count,
        "dropped_users": generators.dropped_users,
        "dropped_items": generators.dropped_items,
        "repairs": repairs,
        "warnings": warnings,
    }
    ds = CausalDataset(ratings_full, exposures, ratings_full * exposures, features, c, manifest, exp_scores)
    ds.manifest["stats"] = ds.summary()
    return ds


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def _hist(ratings: np.ndarray, axis=None) -> np.ndarray:
    counts = np.stack([(ratings == r).sum(axis=axis) for r in RATING_LEVELS], axis=-1).astype(np.float64)
    total = counts.sum(axis=-1, keepdims=True)
    p = np.divide(counts, total, out=np.zeros_like(counts), where=total > 0) + 1e-9
    return p / p.sum(axis=-1, keepdims=True)


def _kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.sum(p * np.log(p / q), axis=-1)


def rating_distribution_kl(ds: CausalDataset):
    """KL(observed || population) of the rating histogram, globally and averaged per user."""
    if np.any(ds.exposures.sum(axis=1) == 0):
        raise ValidationError("every user needs at least one exposed item")
    obs, full = ds.ratings_obs, ds.ratings_full
    global_kl = float(_kl(_hist(obs), _hist(full)))
    per_user = _kl(_hist(obs, axis=1), _hist(full, axis=1))
    return global_kl, float(per_user.mean())


def item_popularity(ds: CausalDataset) -> np.ndarray:
    return ds.exposures.sum(axis=0)


def gini(values: np.ndarray) -> float:
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0 or x.sum() == 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float((2.0 * np.sum(ranks * x) / (n * x.sum())) - (n + 1.0) / n)
