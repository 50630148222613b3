"""Top-K ranking metrics: recall and NDCG with binary relevance."""
from __future__ import annotations

import numpy as np


def _discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def recall_at_k(ranked, holdout, k: int) -> float:
    """Hits in the first ``k`` ranks divided by ``min(k, |holdout|)``.

    Raises ``ValueError`` for an empty holdout set; callers skip such users.
    """
    holdout = set(int(i) for i in holdout)
    if not holdout:
        raise ValueError("empty holdout set")
    hits = sum(1 for i in list(ranked)[:k] if int(i) in holdout)
    return hits / min(k, len(holdout))


def ndcg_at_k(ranked, holdout, k: int) -> float:
    holdout = set(int(i) for i in holdout)
    if not holdout:
        raise ValueError("empty holdout set")
    top = list(ranked)[:k]
    disc = _discounts(k)
    dcg = sum(disc[r] for r, i in enumerate(top) if int(i) in holdout)
    idcg = disc[:min(k, len(holdout))].sum()
    return float(dcg / idcg)


def topk_indices(scores: np.ndarray, exposed: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top-k item indices after masking ``exposed`` items.

    Ties resolve to the lower item index. Masked items sort last, so callers
    must not read past the number of unexposed items.
    """
    masked = np.where(np.asarray(exposed) > 0, -np.inf, scores)
    return np.argsort(-masked, axis=-1, kind="stable")[..., :k]


def batch_metrics(top: np.ndarray, relevant: np.ndarray, ks) -> dict:
    """Per-user recall and NDCG for every cut-off in ``ks``.

    ``top`` is ``(U, >= max(ks))`` ranked indices, ``relevant`` a boolean
    ``(U, I)`` matrix. Users without relevant items get NaN.
    """
    relevant = np.asarray(relevant, dtype=bool)
    n_rel = relevant.sum(axis=1)
    hits = np.take_along_axis(relevant, top, axis=1)
    disc = _discounts(top.shape[1])
    cum_idcg = np.concatenate([[0.0], np.cumsum(disc)])
    out = {}
    with np.errstate(invalid="ignore", divide="ignore"):
        for k in ks:
            h = hits[:, :k]
            denom = np.minimum(k, n_rel)
            rec = h.sum(axis=1) / denom
            dcg = (h * disc[:k]).sum(axis=1)
            ndcg = dcg / cum_idcg[denom]
            rec[n_rel == 0] = np.nan
            ndcg[n_rel == 0] = np.nan
            out[k] = (rec, ndcg)
    return out
