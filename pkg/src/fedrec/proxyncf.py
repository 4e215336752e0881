"""Dual-branch client model.

The recommendation branch scores (user, item) pairs with a two-layer MLP
over the concatenated embeddings and is trained with the pairwise BPR
loss. The proxy branch has the same architecture over the same inputs but
predicts the per-triplet ranking loss, trained by regression against the
recommendation branch's realized losses. The two branches are optimized
independently: no gradient from the regression loss ever reaches the
recommendation branch, and (by design) none reaches the embeddings either.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .errors import DimensionError

NCF_BRANCH = "ncf"
PROXY_BRANCH = "proxy"


@dataclass
class ProxyNcfParams:
    """Both MLP branches take [u || v] of width 2 * embed_dim and emit one score.

    When proxy_pairwise is True (default) the proxy predicts a triplet loss
    from both pair scores, softplus(q_neg - q_pos), which makes a proxy
    branch with copied recommendation weights reproduce the true loss
    exactly. The switch falls back to a positive-pair-only prediction
    softplus(q_pos) for ablation.
    """

    ncf: nk.MlpParams
    proxy: nk.MlpParams
    embed_dim: int
    proxy_pairwise: bool = True

    def copy(self) -> "ProxyNcfParams":
        return ProxyNcfParams(self.ncf.copy(), self.proxy.copy(), self.embed_dim, self.proxy_pairwise)

    def as_dict(self) -> dict:
        d = self.ncf.as_dict("ncf.")
        d.update(self.proxy.as_dict("proxy."))
        return d


def init_proxyncf(embed_dim: int, hidden_dim: int, rng: np.random.Generator,
                  proxy_pairwise: bool = True) -> ProxyNcfParams:
    return ProxyNcfParams(
        ncf=nk.init_mlp(2 * embed_dim, hidden_dim, 1, rng),
        proxy=nk.init_mlp(2 * embed_dim, hidden_dim, 1, rng),
        embed_dim=embed_dim,
        proxy_pairwise=proxy_pairwise,
    )


def _branch(params: ProxyNcfParams, branch: str) -> nk.MlpParams:
    if branch == NCF_BRANCH:
        return params.ncf
    if branch == PROXY_BRANCH:
        return params.proxy
    raise ValueError(f"unknown branch {branch!r}")


def score_pair(u_emb, v_emb, params: ProxyNcfParams, branch: str = NCF_BRANCH) -> float:
    """MLP score of the concatenated pair [u || v] under the chosen branch."""
    u_emb = np.asarray(u_emb, dtype=np.float64)
    v_emb = np.asarray(v_emb, dtype=np.float64)
    if u_emb.shape != (params.embed_dim,) or v_emb.shape != (params.embed_dim,):
        raise DimensionError(
            f"embeddings must have shape ({params.embed_dim},), got {u_emb.shape} and {v_emb.shape}")
    y, _ = nk.mlp_forward(_branch(params, branch), np.concatenate([u_emb, v_emb]))
    return float(y[0])


def bpr_loss(pos_score: float, neg_score: float) -> float:
    """-ln sigmoid(pos - neg), computed as softplus(neg - pos)."""
    return nk.softplus(neg_score - pos_score)


def proxy_predict_triplet(u_emb, pos_emb, neg_emb, params: ProxyNcfParams) -> float:
    """Predicted triplet loss from the proxy branch; always > 0."""
    q_pos = score_pair(u_emb, pos_emb, params, PROXY_BRANCH)
    if params.proxy_pairwise:
        q_neg = score_pair(u_emb, neg_emb, params, PROXY_BRANCH)
        return nk.softplus(q_neg - q_pos)
    return nk.softplus(q_pos)


@dataclass
class ClientLosses:
    l_ncf: float                 # sum of per-triplet ranking losses
    l_proxy: float               # sum of squared regression errors
    triplet_losses: np.ndarray   # realized losses, input order
    predicted_losses: np.ndarray


@dataclass
class ClientGradients:
    d_user: np.ndarray   # (embed_dim,)
    d_items: dict        # item id -> (embed_dim,) grad; only touched rows
    d_ncf: nk.MlpParams
    d_proxy: nk.MlpParams


def _check_ids(item_table: np.ndarray, triplets) -> None:
    n = item_table.shape[0]
    for t in triplets:
        if not (0 <= t.pos_item < n and 0 <= t.neg_item < n):
            raise IndexError(f"item id out of range in triplet {t}")


def _pair_inputs(u_emb, item_table, item_ids):
    U = np.broadcast_to(u_emb, (len(item_ids), u_emb.shape[0]))
    return np.concatenate([U, item_table[item_ids]], axis=1)


def client_losses_and_backward(params: ProxyNcfParams, u_emb, item_table, triplets,
                               train_proxy: bool = True):
    """Forward and backward in one pass over the triplet batch.

    The total objective is  sum_i bpr(i)  +  mean_i (pred(i) - bpr(i))^2,
    where the realized losses inside the squared error are treated as
    constants. Regression gradients flow only into the proxy MLP; the
    user embedding and item rows receive gradients from the ranking loss
    alone. Returns (ClientLosses, ClientGradients).
    """
    u_emb = np.asarray(u_emb, dtype=np.float64)
    d = params.embed_dim
    if u_emb.shape != (d,):
        raise DimensionError(f"user embedding must have shape ({d},), got {u_emb.shape}")
    if not triplets:
        zeros = ClientGradients(
            d_user=np.zeros(d), d_items={},
            d_ncf=nk.zeros_like_mlp(params.ncf), d_proxy=nk.zeros_like_mlp(params.proxy))
        empty = np.zeros(0)
        return ClientLosses(0.0, 0.0, empty, empty), zeros
    _check_ids(item_table, triplets)

    pos_ids = np.array([t.pos_item for t in triplets])
    neg_ids = np.array([t.neg_item for t in triplets])
    B = len(triplets)
    X_pos = _pair_inputs(u_emb, item_table, pos_ids)
    X_neg = _pair_inputs(u_emb, item_table, neg_ids)

    # ranking branch
    Y_pos, cache_pos = nk.mlp_forward_batch(params.ncf, X_pos)
    Y_neg, cache_neg = nk.mlp_forward_batch(params.ncf, X_neg)
    margin = Y_neg[:, 0] - Y_pos[:, 0]
    losses = nk.softplus(margin)
    sig = nk.sigmoid(margin)  # d loss / d margin
    g_ncf_pos, dX_pos = nk.mlp_backward_batch(params.ncf, cache_pos, (-sig)[:, None])
    g_ncf_neg, dX_neg = nk.mlp_backward_batch(params.ncf, cache_neg, sig[:, None])
    d_ncf = nk.add_mlp(g_ncf_pos, g_ncf_neg)

    d_user = dX_pos[:, :d].sum(axis=0) + dX_neg[:, :d].sum(axis=0)
    all_ids = np.concatenate([pos_ids, neg_ids])
    all_rows = np.concatenate([dX_pos[:, d:], dX_neg[:, d:]], axis=0)
    uniq, inv = np.unique(all_ids, return_inverse=True)
    acc = np.zeros((len(uniq), d))
    np.add.at(acc, inv, all_rows)
    d_items = {int(i): acc[j] for j, i in enumerate(uniq)}

    # proxy branch (regression against detached realized losses)
    if train_proxy:
        Q_pos, qcache_pos = nk.mlp_forward_batch(params.proxy, X_pos)
        if params.proxy_pairwise:
            Q_neg, qcache_neg = nk.mlp_forward_batch(params.proxy, X_neg)
            qmargin = Q_neg[:, 0] - Q_pos[:, 0]
            preds = nk.softplus(qmargin)
            err = preds - losses
            coef = (2.0 / B) * err * nk.sigmoid(qmargin)
            g_pr_pos, _ = nk.mlp_backward_batch(params.proxy, qcache_pos, (-coef)[:, None])
            g_pr_neg, _ = nk.mlp_backward_batch(params.proxy, qcache_neg, coef[:, None])
            d_proxy = nk.add_mlp(g_pr_pos, g_pr_neg)
        else:
            preds = nk.softplus(Q_pos[:, 0])
            err = preds - losses
            coef = (2.0 / B) * err * nk.sigmoid(Q_pos[:, 0])
            d_proxy, _ = nk.mlp_backward_batch(params.proxy, qcache_pos, coef[:, None])
        l_proxy = float(np.sum(err * err))
    else:
        preds = np.zeros(B)
        d_proxy = nk.zeros_like_mlp(params.proxy)
        l_proxy = 0.0

    result = ClientLosses(
        l_ncf=float(np.sum(losses)),
        l_proxy=l_proxy,
        triplet_losses=losses,
        predicted_losses=preds,
    )
    grads = ClientGradients(d_user=d_user, d_items=d_items, d_ncf=d_ncf, d_proxy=d_proxy)
    return result, grads


def client_losses(params: ProxyNcfParams, u_emb, item_table, triplets) -> ClientLosses:
    """Batch losses only: (sum of ranking losses, sum of squared proxy errors,
    per-triplet values aligned with the input order)."""
    u_emb = np.asarray(u_emb, dtype=np.float64)
    if not triplets:
        empty = np.zeros(0)
        return ClientLosses(0.0, 0.0, empty, empty)
    _check_ids(item_table, triplets)
    pos_ids = np.array([t.pos_item for t in triplets])
    neg_ids = np.array([t.neg_item for t in triplets])
    X_pos = _pair_inputs(u_emb, item_table, pos_ids)
    X_neg = _pair_inputs(u_emb, item_table, neg_ids)
    Y_pos, _ = nk.mlp_forward_batch(params.ncf, X_pos)
    Y_neg, _ = nk.mlp_forward_batch(params.ncf, X_neg)
    losses = nk.softplus(Y_neg[:, 0] - Y_pos[:, 0])
    Q_pos, _ = nk.mlp_forward_batch(params.proxy, X_pos)
    if params.proxy_pairwise:
        Q_neg, _ = nk.mlp_forward_batch(params.proxy, X_neg)
        preds = nk.softplus(Q_neg[:, 0] - Q_pos[:, 0])
    else:
        preds = nk.softplus(Q_pos[:, 0])
    err = preds - losses
    return ClientLosses(float(np.sum(losses)), float(np.sum(err * err)), losses, preds)


def client_backward(params: ProxyNcfParams, u_emb, item_table, triplets,
                    train_proxy: bool = True) -> ClientGradients:
    """Gradients of the combined objective; see client_losses_and_backward."""
    _, grads = client_losses_and_backward(params, u_emb, item_table, triplets, train_proxy)
    return grads
