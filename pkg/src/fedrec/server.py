"""Server-side state: the global item table and model parameters, sample-
count-weighted delta aggregation, per-item staleness counters, and the
selection reward combining validation accuracy with embedding staleness.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .errors import ConfigurationError, ProtocolError
from .proxyncf import ProxyNcfParams, init_proxyncf


@dataclass
class GlobalModel:
    item_table: np.ndarray       # (num_items, embed_dim)
    params: ProxyNcfParams
    round_index: int = 0
    server_lr: float = 1.0


def init_global_model(num_items: int, embed_dim: int, hidden_dim: int,
                      rng: np.random.Generator, server_lr: float = 1.0,
                      proxy_pairwise: bool = True) -> GlobalModel:
    return GlobalModel(
        item_table=nk.xavier_init((num_items, embed_dim), rng),
        params=init_proxyncf(embed_dim, hidden_dim, rng, proxy_pairwise),
        round_index=0,
        server_lr=server_lr,
    )


def snapshot_nbytes(model: GlobalModel) -> int:
    """Size of one broadcast payload (item table plus both MLP branches)."""
    total = model.item_table.nbytes
    for arr in model.params.as_dict().values():
        total += arr.nbytes
    return total


def aggregate(model: GlobalModel, updates) -> None:
    """FedAvg over deltas: each tensor moves by server_lr times the
    sample-count-weighted average of the client deltas.

    Item rows appearing in no update keep their value exactly; rows in a
    payload receive the weighted sum of the deltas present for them (a
    client that did not touch a row contributes an implicit zero). The
    updates are processed in user-id order, so the result is bitwise
    independent of the input order.
    """
    if not updates:
        raise ProtocolError("aggregate called with no updates")
    total = sum(u.sample_count for u in updates)
    if total <= 0:
        raise ProtocolError("aggregate called with zero total sample count")
    eta = model.server_lr
    ordered = sorted(updates, key=lambda u: u.user_id)
    for upd in ordered:
        w = upd.sample_count / total
        if upd.delta_items:
            ids = np.fromiter(sorted(upd.delta_items), dtype=np.intp)
            deltas = np.stack([upd.delta_items[int(i)] for i in ids])
            if deltas.shape[1] != model.item_table.shape[1] or ids.max() >= model.item_table.shape[0]:
                raise ProtocolError(f"update from user {upd.user_id} does not match the item table")
            model.item_table[ids] += (eta * w) * deltas
    for name, target in model.params.as_dict().items():
        acc = np.zeros_like(target)
        for upd in ordered:
            w = upd.sample_count / total
            delta = {**upd.delta_ncf.as_dict("ncf."), **upd.delta_proxy.as_dict("proxy.")}[name]
            if delta.shape != target.shape:
                raise ProtocolError(f"MLP delta shape mismatch from user {upd.user_id}")
            acc += w * delta
        target += eta * acc
    model.round_index += 1


@dataclass
class StalenessTracker:
    """Rounds-since-update counter per item, normalized by a window T.

    The average tau/T is deliberately not clamped: items untouched for
    longer than the window push the statistic above 1.
    """

    tau: np.ndarray   # (num_items,) int
    window: int

    def __post_init__(self):
        if self.window <= 0:
            raise ConfigurationError(f"staleness window must be > 0, got {self.window}")


def init_staleness(num_items: int, window: int) -> StalenessTracker:
    return StalenessTracker(tau=np.zeros(num_items, dtype=np.int64), window=window)


def update_staleness(tracker: StalenessTracker, touched) -> None:
    """touched rows reset to 0; every other counter increments by one."""
    tracker.tau += 1
    ids = np.fromiter(touched, dtype=np.intp) if touched else np.empty(0, dtype=np.intp)
    if ids.size:
        if ids.min() < 0 or ids.max() >= tracker.tau.shape[0]:
            raise ProtocolError("touched item id out of range")
        tracker.tau[ids] = 0


def staleness_value(tracker: StalenessTracker) -> float:
    return float(np.mean(tracker.tau)) / tracker.window


def compute_reward(acc: float, staleness: float, lam: float) -> float:
    """lam * acc - (1 - lam) * staleness, with exact endpoints so the
    ablations lam=1 (accuracy only) and lam=0 (negated staleness) hold
    bitwise."""
    if not (np.isfinite(acc) and np.isfinite(staleness)):
        raise ConfigurationError("reward inputs must be finite")
    if not (0.0 <= lam <= 1.0):
        raise ConfigurationError(f"lambda must be in [0, 1], got {lam}")
    if lam == 1.0:
        return acc
    if lam == 0.0:
        return -staleness
    return lam * acc - (1.0 - lam) * staleness


def detect_touched_rows(update, sigma: float, embed_dim: int) -> set:
    """Noise-robust touched-row detection for full-table LDP uploads:
    a row counts as updated when its delta norm exceeds 3 * sigma * sqrt(d)."""
    threshold = 3.0 * sigma * math.sqrt(embed_dim)
    return {i for i, row in update.delta_items.items()
            if float(np.linalg.norm(row)) > threshold}


# ---------------------------------------------------------------------------
# checkpoints

SERVER_CHECKPOINT = "server.bin"


def save_checkpoint(directory, model: GlobalModel, tracker: StalenessTracker) -> None:
    os.makedirs(directory, exist_ok=True)
    tensors = {"item_table": model.item_table, "tau": tracker.tau}
    tensors.update(model.params.as_dict())
    tensors["meta"] = np.array([
        float(model.round_index), model.server_lr,
        float(model.params.embed_dim), float(model.params.proxy_pairwise),
        float(tracker.window),
    ])
    nk.save_tensors(os.path.join(directory, SERVER_CHECKPOINT), tensors)


def load_checkpoint(directory):
    tensors = nk.load_tensors(os.path.join(directory, SERVER_CHECKPOINT))
    meta = tensors["meta"]
    def mlp(prefix):
        return nk.MlpParams(tensors[prefix + "W1"], tensors[prefix + "b1"],
                            tensors[prefix + "W2"], tensors[prefix + "b2"])
    params = ProxyNcfParams(mlp("ncf."), mlp("proxy."), int(meta[2]), bool(meta[3]))
    model = GlobalModel(item_table=tensors["item_table"], params=params,
                        round_index=int(meta[0]), server_lr=float(meta[1]))
    tracker = StalenessTracker(tau=tensors["tau"].astype(np.int64), window=int(meta[4]))
    return model, tracker
