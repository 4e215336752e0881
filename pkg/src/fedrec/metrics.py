"""Top-K ranking evaluation: full-catalog scoring per user (train positives
excluded), hit ratio and NDCG, averaged over users that have positives in
the evaluated split."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .proxyncf import NCF_BRANCH


def score_all_items(u_emb: np.ndarray, item_table: np.ndarray, params,
                    branch: str = NCF_BRANCH) -> np.ndarray:
    """Branch scores for one user against every item.

    Splits W1 into its user and item halves so the item half is applied to
    the whole table in one product; equivalent to scoring each pair
    separately.
    """
    mlp = params.ncf if branch == NCF_BRANCH else params.proxy
    d = params.embed_dim
    w_user, w_item = mlp.W1[:, :d], mlp.W1[:, d:]
    z1 = (w_user @ u_emb + mlp.b1)[:, None] + w_item @ item_table.T  # (hidden, n_items)
    a1 = np.maximum(z1, 0.0)
    return (mlp.W2 @ a1 + mlp.b2[:, None])[0]


def rank_items(user: int, global_model, client, exclude) -> list:
    """Items ordered by recommendation-branch score, best first, with the
    excluded set removed; ties fall back to ascending item id."""
    scores = score_all_items(client.user_embedding, global_model.item_table, global_model.params)
    n = scores.shape[0]
    keep = np.ones(n, dtype=bool)
    if exclude:
        keep[np.fromiter(exclude, dtype=np.intp)] = False
    ids = np.flatnonzero(keep)
    order = np.lexsort((ids, -scores[ids]))
    return [int(i) for i in ids[order]]


def hr_at_k(ranked, positives, k: int) -> float:
    """Fraction of this user's positives appearing in the top k."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if not positives:
        raise ValueError("user has no positives; skip instead of scoring")
    top = set(ranked[:k])
    return len(top.intersection(positives)) / len(positives)


def ndcg_at_k(ranked, positives, k: int) -> float:
    """Binary-gain NDCG: hits at rank r contribute 1/log2(r + 1), normalized
    by the best achievable arrangement of the positives."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if not positives:
        raise ValueError("user has no positives; skip instead of scoring")
    pos = set(positives)
    dcg = 0.0
    for r, item in enumerate(ranked[:k], start=1):
        if item in pos:
            dcg += 1.0 / math.log2(r + 1)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(pos)) + 1))
    return dcg / idcg


@dataclass
class EvalReport:
    hr: float
    ndcg: float
    k: int
    split: str
    per_user_hr: dict = field(default_factory=dict)
    per_user_ndcg: dict = field(default_factory=dict)


def evaluate_split(global_model, clients, split, which: str, k: int,
                   user_ids=None, sampled_negatives: int = None,
                   rng: np.random.Generator = None) -> EvalReport:
    """HR@k / NDCG@k over the chosen split.

    Full-catalog ranking by default (train positives excluded). With
    sampled_negatives set, each user is instead ranked among their
    positives plus that many sampled non-interacted items (the cheap,
    biased protocol; off by default). Users without positives in the
    split are skipped. Totals use exact summation so the result does not
    depend on user order.
    """
    if which not in ("val", "test"):
        raise ConfigurationError(f"split must be val or test, got {which!r}")
    get_pos = split.val_items if which == "val" else split.test_items
    users = range(split.num_users) if user_ids is None else user_ids
    per_hr, per_ndcg = {}, {}
    for u in users:
        positives = get_pos(u)
        if not positives:
            continue
        client = clients[u]
        scores = score_all_items(client.user_embedding, global_model.item_table,
                                 global_model.params)
        exclude = set(client.train_items)
        if sampled_negatives is None:
            keep = np.ones(scores.shape[0], dtype=bool)
            if exclude:
                keep[np.fromiter(exclude, dtype=np.intp)] = False
            ids = np.flatnonzero(keep)
        else:
            if rng is None:
                raise ConfigurationError("sampled-negative evaluation needs an rng")
            banned = exclude.union(positives)
            candidates = np.flatnonzero(
                ~np.isin(np.arange(scores.shape[0]), np.fromiter(banned, dtype=np.intp)))
            take = min(sampled_negatives, candidates.shape[0])
            negs = rng.choice(candidates, size=take, replace=False)
            ids = np.concatenate([np.fromiter(positives, dtype=np.intp), negs])
        order = np.lexsort((ids, -scores[ids]))
        top = ids[order[:k]]
        hit_ranks = np.flatnonzero(np.isin(top, np.fromiter(positives, dtype=np.intp))) + 1
        n_pos = len(positives)
        per_hr[u] = hit_ranks.size / n_pos
        idcg = math.fsum(1.0 / math.log2(r + 1) for r in range(1, min(k, n_pos) + 1))
        per_ndcg[u] = float(np.sum(1.0 / np.log2(hit_ranks + 1))) / idcg
    n = len(per_hr)
    hr = math.fsum(per_hr.values()) / n if n else 0.0
    ndcg = math.fsum(per_ndcg.values()) / n if n else 0.0
    return EvalReport(hr=hr, ndcg=ndcg, k=k, split=which,
                      per_user_hr=per_hr, per_user_ndcg=per_ndcg)
