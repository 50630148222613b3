"""Strong-generalization splits, unbiased evaluation and experiment sweeps."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .datagen import CausalDataset, SimConfig, simulate_dataset
from .errors import EvaluationError, NumericalError, ParameterError
from .exposure import ExposureVae, extract_confounders, holdout_inputs, train_exposure
from .metrics import batch_metrics, ndcg_at_k, recall_at_k, topk_indices
from .numkit import Rng
from .outcome import OutcomeNet, rating_target, train_outcome
from .vae import BetaSchedule

log = logging.getLogger(__name__)

DEFAULT_KS = tuple(range(5, 55, 5))
DEFAULT_SEEDS = (1, 2, 3, 4, 5)
METHODS = ("deep_deconf", "concat_vae")


@dataclass
class SplitSpec:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    val_holdout: np.ndarray  # (len(val), I) boolean
    seed: int
    moved_to_train: list = field(default_factory=list)


def split_users(n_users: int, ratios=(0.7, 0.15, 0.15), seed: int = 0, exposures: np.ndarray | None = None,
                holdout_frac: float = 0.2) -> SplitSpec:
    """Shuffle users and cut into train/val/test; build the val holdout masks.

    Validation users with fewer than two observed entries cannot hold anything
    out and are moved to the training set.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = Rng(seed)
    perm = rng.split("users").gen.permutation(n_users)
    n_val = int(round(ratios[1] * n_users))
    n_test = int(round(ratios[2] * n_users))
    n_train = n_users - n_val - n_test
    train = perm[:n_train]
    val = perm[n_train:n_train + n_val]
    test = perm[n_train + n_val:]

    moved: list[int] = []
    if exposures is None:
        masks = np.zeros((len(val), 0), dtype=bool)
    else:
        counts = (exposures[val] > 0).sum(axis=1)
        moved = sorted(int(u) for u in val[counts < 2])
        if moved:
            log.info("moved %d validation users with < 2 observations to train", len(moved))
            train = np.concatenate([train, val[counts < 2]])
            val = val[counts >= 2]
        mask_rng = rng.split("holdout")
        masks = np.zeros((len(val), exposures.shape[1]), dtype=bool)
        for row, u in enumerate(val):
            obs = np.flatnonzero(exposures[u] > 0)
            n_hold = max(1, int(round(holdout_frac * len(obs))))
            masks[row, mask_rng.gen.choice(obs, n_hold, replace=False)] = True
    return SplitSpec(np.sort(train), val, np.sort(test), masks, seed, moved)


# ---------------------------------------------------------------------------
# Model stack
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 20
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    patience: int = 10
    beta_max: float = 0.2
    anneal_epochs: int = 20
    use_features: bool = True
    use_confounder: bool = True
    select_k: int = 20
    relevance_threshold: int = 4
    # the exposure VAE's validation likelihood climbs slowly and noisily, so it
    # gets its own step size and a longer stopping window
    exposure_lr: float = 3e-3
    exposure_epochs: int = 150
    exposure_batch_size: int = 64
    exposure_patience: int = 30

    def __post_init__(self):
        for name in ("latent_dim", "epochs", "batch_size", "patience", "select_k", "exposure_epochs",
                     "exposure_batch_size", "exposure_patience"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name}={getattr(self, name)} must be >= 1")
        for name in ("lr", "exposure_lr"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name}={getattr(self, name)} must be > 0")
        if self.beta_max < 0:
            raise ParameterError(f"beta_max={self.beta_max} must be >= 0")
        if self.anneal_epochs < 0:
            raise ParameterError(f"anneal_epochs={self.anneal_epochs} must be >= 0")
        if not 1 <= self.relevance_threshold <= 5:
            raise ParameterError(f"relevance_threshold={self.relevance_threshold} outside 1..5")

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})


METHOD_CONFIGS: dict[str, dict] = {
    "deep_deconf": {"use_confounder": True, "use_features": True},
    "concat_vae": {"use_confounder": False, "use_features": True},
    "deep_deconf_nf": {"use_confounder": True, "use_features": False},
}


@dataclass
class ModelStack:
    outcome: OutcomeNet
    exposure: ExposureVae | None
    confounders: np.ndarray
    logs: dict = field(default_factory=dict)

    def confounders_for(self, exposures: np.ndarray) -> np.ndarray:
        if self.exposure is None:
            return np.zeros((exposures.shape[0], 0))
        return extract_confounders(self.exposure, exposures)


def fit_exposure_stage(ds: CausalDataset, split: SplitSpec, mcfg: ModelConfig, seed: int = 0):
    """Train the exposure VAE on training users.

    Returns ``(vae, Z, Z_val, log)``: ``Z`` encodes every user's full observed
    exposures, ``Z_val`` encodes validation users from their visible entries
    only so model selection never peeks at the held-out items.
    """
    rng = Rng(seed)
    A = ds.exposures.astype(np.float64)
    vae = ExposureVae(ds.n_items, mcfg.latent_dim, beta=BetaSchedule(mcfg.beta_max, mcfg.anneal_epochs))
    vae.init(rng.split("exposure_init"))
    vae, log_ = train_exposure(vae, A[split.train], A[split.val], split.val_holdout, rng.split("exposure_train"),
                               epochs=mcfg.exposure_epochs, batch_size=mcfg.exposure_batch_size, lr=mcfg.exposure_lr,
                               patience=mcfg.exposure_patience)
    Z = extract_confounders(vae, A)
    Z_val = extract_confounders(vae, holdout_inputs(A[split.val], split.val_holdout))
    return vae, Z, Z_val, log_


def fit_outcome_stage(ds: CausalDataset, split: SplitSpec, mcfg: ModelConfig, seed: int = 0,
                      Z: np.ndarray | None = None, Z_val: np.ndarray | None = None):
    """Train the outcome net on training users given precomputed confounders."""
    rng = Rng(seed)
    A = ds.exposures.astype(np.float64)
    if not mcfg.use_confounder:
        Z, Z_val = np.zeros((ds.n_users, 0)), np.zeros((len(split.val), 0))
    elif Z is None or Z_val is None:
        raise ParameterError("confounders are required when use_confounder is set")
    elif not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Z_val))):
        raise NumericalError("substitute confounders contain non-finite values")
    X = ds.features if mcfg.use_features else np.zeros((ds.n_users, 0))
    net = OutcomeNet(ds.n_items, mcfg.latent_dim, ds.features.shape[1], use_features=mcfg.use_features,
                     use_confounder=mcfg.use_confounder).init(rng.split("outcome_init"))
    train = {"x": X[split.train], "z": Z[split.train], "a": A[split.train],
             "target": rating_target(ds.ratings_obs[split.train])}
    val = {"x": X[split.val], "z": Z_val, "a": holdout_inputs(A[split.val], split.val_holdout),
           "holdout": split.val_holdout}
    return train_outcome(net, train, val, rng.split("outcome_train"), epochs=mcfg.epochs,
                         batch_size=mcfg.batch_size, lr=mcfg.lr, patience=mcfg.patience, select_k=mcfg.select_k)


def fit_stack(ds: CausalDataset, split: SplitSpec, mcfg: ModelConfig, seed: int = 0) -> ModelStack:
    """Fit the exposure VAE (if used) then the outcome net on training users."""
    logs = {}
    exposure, Z, Z_val = None, None, None
    if mcfg.use_confounder:
        exposure, Z, Z_val, logs["exposure"] = fit_exposure_stage(ds, split, mcfg, seed)
    net, logs["outcome"] = fit_outcome_stage(ds, split, mcfg, seed, Z, Z_val)
    if Z is None:
        Z = np.zeros((ds.n_users, 0))
    return ModelStack(net, exposure, Z, logs)


# ---------------------------------------------------------------------------
# Unbiased evaluation
# ---------------------------------------------------------------------------

@dataclass
class MetricsRecord:
    ks: tuple
    recall: dict
    ndcg: dict
    per_user_recall: dict
    per_user_ndcg: dict
    users: np.ndarray
    skipped: int
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "skipped_users": self.skipped,
            "recall": {str(k): self.recall[k] for k in self.ks},
            "ndcg": {str(k): self.ndcg[k] for k in self.ks},
            "config": self.config,
        }


def relevant_unexposed(ds: CausalDataset, users: np.ndarray, threshold: int = 4) -> np.ndarray:
    return (ds.ratings_full[users] >= threshold) & (ds.exposures[users] == 0)


def evaluate_scores(scores: np.ndarray, ds: CausalDataset, users: np.ndarray, ks: Sequence[int] = DEFAULT_KS,
                    threshold: int = 4, seed: int | None = None, config: dict | None = None) -> MetricsRecord:
    """Rank unexposed items by ``scores`` and score against population ratings."""
    if ds.ratings_full is None:
        raise EvaluationError("unbiased evaluation needs population ratings")
    ks = tuple(int(k) for k in ks)
    exposed = ds.exposures[users]
    relevant = relevant_unexposed(ds, users, threshold)
    keep = relevant.any(axis=1)
    top = topk_indices(scores, exposed, max(ks))
    per = batch_metrics(top[keep], relevant[keep], ks)
    rec = {k: per[k][0] for k in ks}
    ndcg = {k: per[k][1] for k in ks}
    return MetricsRecord(
        ks=ks,
        recall={k: float(np.mean(rec[k])) for k in ks},
        ndcg={k: float(np.mean(ndcg[k])) for k in ks},
        per_user_recall=rec,
        per_user_ndcg=ndcg,
        users=np.asarray(users)[keep],
        skipped=int((~keep).sum()),
        seed=seed,
        config=config or {},
    )


def stack_scores(stack: ModelStack, ds: CausalDataset, users: np.ndarray) -> np.ndarray:
    A = ds.exposures[users].astype(np.float64)
    Z = stack.confounders_for(A)
    X = ds.features[users] if stack.outcome.use_features else np.zeros((len(users), 0))
    return stack.outcome.logits(X, Z, A)


def evaluate_unbiased(stack: ModelStack, ds: CausalDataset, split: SplitSpec, ks: Sequence[int] = DEFAULT_KS,
                      threshold: int = 4, config: dict | None = None) -> MetricsRecord:
    """Test-user metrics: confounders encoded from the full observed exposures."""
    scores = stack_scores(stack, ds, split.test)
    return evaluate_scores(scores, ds, split.test, ks, threshold, split.seed, config)


def oracle_scores(ds: CausalDataset, users: np.ndarray) -> np.ndarray:
    return ds.ratings_full[users].astype(np.float64)


def random_scores(ds: CausalDataset, users: np.ndarray, seed: int = 0) -> np.ndarray:
    return Rng(seed).gen.random((len(users), ds.n_items))


def expected_random_recall(n_free: int, n_rel: int, k: int) -> float:
    """Expected recall of a uniformly random ranking (hypergeometric mean of hits)."""
    k_eff = min(k, n_free)
    return k_eff * n_rel / n_free / min(k, n_rel)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def run_cell(cfg: SimConfig, method: str, mcfg: ModelConfig, seed: int, ks=DEFAULT_KS,
             ratios=(0.7, 0.15, 0.15), dataset: CausalDataset | None = None) -> MetricsRecord:
    """Generate (or reuse) a dataset for ``seed``, fit ``method`` and evaluate it.

    The dataset seed is shared across methods so comparisons are paired.
    """
    if method not in METHOD_CONFIGS:
        raise ParameterError(f"unknown method {method!r}; expected one of {sorted(METHOD_CONFIGS)}")
    ds = dataset if dataset is not None else simulate_dataset(cfg.replace(seed=seed))
    split = split_users(ds.n_users, ratios, seed=seed, exposures=ds.exposures)
    m = mcfg.replace(**METHOD_CONFIGS[method])
    stack = fit_stack(ds, split, m, seed=seed)
    return evaluate_unbiased(stack, ds, split, ks, m.relevance_threshold,
                             config={"method": method, "sim": asdict(cfg.replace(seed=seed)), "model": asdict(m)})


def _rows(level, method, rec: MetricsRecord, seed, level_name):
    for k in rec.ks:
        yield {level_name: level, "method": method, "metric": "recall", "K": k, "seed": seed, "value": rec.recall[k]}
        yield {level_name: level, "method": method, "metric": "ndcg", "K": k, "seed": seed, "value": rec.ndcg[k]}


def _mean_table(rows, level_name, k):
    table: dict = {}
    for r in rows:
        if r["K"] != k:
            continue
        key = (r["method"], r[level_name], r["metric"])
        table.setdefault(key, []).append(r["value"])
    return {key: float(np.mean(v)) for key, v in table.items()}


def _cell(task):
    cfg, method, mcfg, seed, ks = task
    return run_cell(cfg, method, mcfg, seed, ks)


def run_cells(tasks: list, jobs: int = 1):
    """Evaluate ``(cfg, method, mcfg, seed, ks)`` cells, in worker processes when ``jobs > 1``.

    Every cell regenerates its dataset from its own seed, so results do not
    depend on ``jobs`` or on scheduling order.
    """
    if jobs <= 1:
        for t in tasks:
            yield _cell(t)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(_cell, tasks)


def confounding_sweep(levels: Iterable[float], methods: Sequence[str] = METHODS, seeds: Sequence[int] = DEFAULT_SEEDS,
                      base: SimConfig = SimConfig(), mcfg: ModelConfig = ModelConfig(), ks=DEFAULT_KS,
                      report_k: int = 20, progress: Callable[[str], None] | None = None, jobs: int = 1):
    """Grid over confounding strength x method x seed.

    Returns ``(rows, summary)``; ``summary`` holds mean R@K/N@K per cell and the
    level at which each method peaks.
    """
    levels = [float(g) for g in levels]
    if len(levels) < 2 or len(seeds) < 2:
        raise ParameterError("a sweep needs at least two levels and two seeds")
    keys = [(g, seed, method) for g in levels for seed in seeds for method in methods]
    tasks = [(base.replace(gamma_theta=g), method, mcfg, seed, ks) for g, seed, method in keys]
    rows = []
    for (g, seed, method), rec in zip(keys, run_cells(tasks, jobs)):
        rows.extend(_rows(g, method, rec, seed, "level"))
        if progress:
            progress(f"gamma_theta={g} seed={seed} {method}: R@{report_k}={rec.recall[report_k]:.4f}")
    return rows, summarize(rows, "level", report_k)


def summarize(rows, level_name: str, report_k: int = 20) -> dict:
    means = _mean_table(rows, level_name, report_k)
    methods = sorted({m for m, _, _ in means})
    levels = sorted({lv for _, lv, _ in means}, key=lambda v: (isinstance(v, str), v))
    grid = {m: {str(lv): {"recall": means.get((m, lv, "recall")), "ndcg": means.get((m, lv, "ndcg"))}
                for lv in levels} for m in methods}
    argmax = {}
    for m in methods:
        argmax[m] = {
            metric: max((lv for lv in levels if (m, lv, metric) in means), key=lambda lv: means[(m, lv, metric)])
            for metric in ("recall", "ndcg")
        }
    return {"K": report_k, "means": grid, "argmax_level": argmax}


def noise_sensitivity_study(noise_levels: Sequence[float | None] = (0.1, 0.5, 0.9, None),
                            base: SimConfig = SimConfig(), mcfg: ModelConfig = ModelConfig(),
                            seeds: Sequence[int] = DEFAULT_SEEDS, ks=DEFAULT_KS, report_k: int = 20,
                            progress: Callable[[str], None] | None = None, jobs: int = 1):
    """Deep-Deconf under feature noise variances; ``None`` runs without features.

    The no-features run reuses the lowest-noise dataset (features are never
    read), so every column of a seed shares exposures and ratings.
    """
    finite = [n for n in noise_levels if n is not None]
    keys, tasks = [], []
    for seed in seeds:
        for noise in noise_levels:
            data_noise = noise if noise is not None else (min(finite) if finite else base.feature_noise)
            method = "deep_deconf" if noise is not None else "deep_deconf_nf"
            keys.append(("none" if noise is None else float(noise), seed))
            tasks.append((base.replace(feature_noise=data_noise), method, mcfg, seed, ks))
    rows = []
    for (label, seed), rec in zip(keys, run_cells(tasks, jobs)):
        rows.extend(_rows(label, "deep_deconf", rec, seed, "noise"))
        if progress:
            progress(f"noise={label} seed={seed}: R@{report_k}={rec.recall[report_k]:.4f}")
    return rows, summarize(rows, "noise", report_k)


__all__ = [
    "DEFAULT_KS",
    "DEFAULT_SEEDS",
    "METHODS",
    "MetricsRecord",
    "ModelConfig",
    "ModelStack",
    "SplitSpec",
    "confounding_sweep",
    "evaluate_scores",
    "evaluate_unbiased",
    "expected_random_recall",
    "fit_exposure_stage",
    "fit_outcome_stage",
    "fit_stack",
    "ndcg_at_k",
    "noise_sensitivity_study",
    "oracle_scores",
    "random_scores",
    "recall_at_k",
    "run_cell",
    "run_cells",
    "split_users",
    "summarize",
]
