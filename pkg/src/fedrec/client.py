"""Per-client lifecycle: contribution prediction with the proxy branch,
local training from a global snapshot, optional Gaussian upload noise, and
the versioned upload wire format.

Privacy boundary: the user embedding and the raw interaction pairs never
leave this module. Uploads carry only parameter deltas for touched item
rows, dense MLP deltas, and the local sample count; contribution reports
carry a single predicted-loss scalar.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from . import proxyncf
from .data import Triplet, sample_negatives
from .errors import ClientTrainingError, ConfigurationError, EmptyDatasetError
from .numkernel import AdamState

WIRE_UPDATE_MAGIC = b"FRU1"
WIRE_REPORT_MAGIC = b"FRR1"


@dataclass
class ClientState:
    """Client-resident state. `user_embedding` is private and is excluded
    from every serialized payload."""

    user_id: int
    user_embedding: np.ndarray
    train_items: tuple
    val_items: tuple
    user_adam: AdamState = field(default_factory=AdamState)


def init_client(user_id: int, train_items, val_items, embed_dim: int,
                rng: np.random.Generator, lr: float = 0.01) -> ClientState:
    emb = nk.xavier_init((1, embed_dim), rng)[0]
    return ClientState(
        user_id=user_id,
        user_embedding=emb,
        train_items=tuple(train_items),
        val_items=tuple(val_items),
        user_adam=AdamState(lr=lr),
    )


@dataclass
class ContributionReport:
    user_id: int
    predicted_loss: float


@dataclass
class LocalUpdate:
    """Parameter deltas (trained minus snapshot). `touched_items` is
    simulator-side metadata; it is not part of the wire format."""

    user_id: int
    delta_items: dict            # item id -> (embed_dim,) delta
    delta_ncf: nk.MlpParams
    delta_proxy: nk.MlpParams
    sample_count: int
    touched_items: tuple


def _report_batch(client: ClientState, num_items: int, rng: np.random.Generator) -> list:
    """One triplet per train positive: the canonical local dataset pass."""
    owned = set(client.train_items)
    negs = sample_negatives(owned, num_items, len(client.train_items), rng)
    return [Triplet(client.user_id, pos, neg) for pos, neg in zip(client.train_items, negs)]


def predict_contribution(client: ClientState, global_model, max_triplets: int,
                         rng: np.random.Generator) -> ContributionReport:
    """Single inference pass of the proxy branch over the client's triplets.

    When the local pass exceeds max_triplets, a uniform subset is scored
    and the sum is scaled back up by full/subset so the report still
    estimates the full local predicted-loss sum. No parameter is written.
    """
    if not client.train_items:
        raise EmptyDatasetError(f"user {client.user_id} has no train items")
    if max_triplets < 1:
        raise ConfigurationError(f"max_triplets must be >= 1, got {max_triplets}")
    batch = _report_batch(client, global_model.item_table.shape[0], rng)
    scale = 1.0
    if len(batch) > max_triplets:
        idx = rng.choice(len(batch), size=max_triplets, replace=False)
        scale = len(batch) / max_triplets
        batch = [batch[i] for i in idx]
    params = global_model.params
    pos_ids = np.array([t.pos_item for t in batch])
    neg_ids = np.array([t.neg_item for t in batch])
    table = global_model.item_table
    U = np.broadcast_to(client.user_embedding, (len(batch), params.embed_dim))
    Q_pos, _ = nk.mlp_forward_batch(params.proxy, np.concatenate([U, table[pos_ids]], axis=1))
    if params.proxy_pairwise:
        Q_neg, _ = nk.mlp_forward_batch(params.proxy, np.concatenate([U, table[neg_ids]], axis=1))
        preds = nk.softplus(Q_neg[:, 0] - Q_pos[:, 0])
    else:
        preds = nk.softplus(Q_pos[:, 0])
    return ContributionReport(client.user_id, scale * float(np.sum(preds)))


def true_contribution(client: ClientState, global_model, rng: np.random.Generator) -> float:
    """Exact local ranking-loss sum under the current snapshot (one forward
    pass of the recommendation branch; the oracle the proxy approximates)."""
    batch = _report_batch(client, global_model.item_table.shape[0], rng)
    losses = proxyncf.client_losses(global_model.params, client.user_embedding,
                                    global_model.item_table, batch)
    return losses.l_ncf


def local_train(client: ClientState, global_model, epochs: int, n_neg: int,
                lr: float, rng: np.random.Generator, train_proxy: bool = True) -> LocalUpdate:
    """Initialize local parameters from the snapshot, run full-batch Adam for
    `epochs` epochs with fresh negatives per epoch, and return the deltas.

    The user embedding is updated in place on the client (with its
    persistent Adam state) and never appears in the returned update.
    """
    if not client.train_items:
        raise EmptyDatasetError(f"user {client.user_id} has no train items")
    params = global_model.params
    d = params.embed_dim
    table = global_model.item_table
    if epochs == 0:
        return LocalUpdate(client.user_id, {}, nk.zeros_like_mlp(params.ncf),
                           nk.zeros_like_mlp(params.proxy), len(client.train_items), ())

    owned = set(client.train_items)
    epoch_batches = []
    for _ in range(epochs):
        negs = sample_negatives(owned, table.shape[0], len(client.train_items) * n_neg, rng)
        batch = [Triplet(client.user_id, pos, negs[i * n_neg + j])
                 for i, pos in enumerate(client.train_items) for j in range(n_neg)]
        epoch_batches.append(batch)
    touched = sorted(owned.union(t.neg_item for b in epoch_batches for t in b))

    # work on a compact row block (one Adam tensor) with triplets remapped
    # to local row indices; equivalent to per-row updates, far cheaper
    local_index = {item: j for j, item in enumerate(touched)}
    rows = table[np.asarray(touched, dtype=np.intp)].copy()
    local_batches = [
        [Triplet(t.user, local_index[t.pos_item], local_index[t.neg_item]) for t in b]
        for b in epoch_batches
    ]
    local = params.copy()
    opt_params = local.as_dict()
    opt_params["items"] = rows
    opt = AdamState(lr=lr)

    for batch in local_batches:
        losses, grads = proxyncf.client_losses_and_backward(
            local, client.user_embedding, rows, batch, train_proxy=train_proxy)
        if not np.isfinite(losses.l_ncf) or not np.isfinite(losses.l_proxy):
            raise ClientTrainingError(client.user_id, "non-finite local loss")
        row_grads = np.zeros_like(rows)
        for j, g in grads.d_items.items():
            row_grads[j] = g
        gdict = grads.d_ncf.as_dict("ncf.")
        gdict.update(grads.d_proxy.as_dict("proxy."))
        gdict["items"] = row_grads
        nk.adam_step(opt_params, gdict, opt)
        nk.adam_step({"user": client.user_embedding}, {"user": grads.d_user}, client.user_adam)

    delta_items = {item: rows[j] - table[item] for item, j in local_index.items()}
    return LocalUpdate(
        user_id=client.user_id,
        delta_items=delta_items,
        delta_ncf=nk.sub_mlp(local.ncf, params.ncf),
        delta_proxy=nk.sub_mlp(local.proxy, params.proxy),
        sample_count=len(client.train_items),
        touched_items=tuple(touched),
    )


def trained_contribution(client: ClientState, global_model, epochs: int, n_neg: int,
                         lr: float, rng: np.random.Generator) -> ContributionReport:
    """Contribution evaluation without the proxy branch: run throwaway local
    training and report the post-training local loss. Deliberately as
    expensive as a real local round; used by the no-proxy ablation."""
    scratch = ClientState(
        user_id=client.user_id,
        user_embedding=client.user_embedding.copy(),
        train_items=client.train_items,
        val_items=client.val_items,
        user_adam=client.user_adam.copy(),
    )
    update = local_train(scratch, global_model, epochs, n_neg, lr, rng, train_proxy=False)
    trained_table = global_model.item_table.copy()
    for i, delta in update.delta_items.items():
        trained_table[i] = trained_table[i] + delta
    trained = global_model.params.copy()
    trained.ncf = nk.add_mlp(trained.ncf, update.delta_ncf)
    batch = _report_batch(scratch, trained_table.shape[0], rng)
    losses = proxyncf.client_losses(trained, scratch.user_embedding, trained_table, batch)
    return ContributionReport(client.user_id, losses.l_ncf)


def apply_ldp(update: LocalUpdate, sigma: float, rng: np.random.Generator,
              full_table: bool = False, num_items: int = None) -> LocalUpdate:
    """Add N(0, sigma^2) noise to the uploaded item-row deltas.

    sigma == 0 returns the update unchanged. In full-table mode every row
    of the catalog appears in the payload (touched or not) and the MLP
    deltas are noised as well, hiding which rows the client interacted
    with at the cost of a |V|-row upload.
    """
    if not np.isfinite(sigma) or sigma < 0:
        raise ConfigurationError(f"ldp sigma must be finite and >= 0, got {sigma}")
    if sigma == 0.0:
        return update
    d = update.delta_ncf.W1.shape[1] // 2
    if full_table:
        if num_items is None:
            raise ConfigurationError("full-table LDP needs num_items")
        noisy_items = {}
        for i in range(num_items):
            base = update.delta_items.get(i)
            row = base.copy() if base is not None else np.zeros(d)
            noisy_items[i] = row + rng.normal(0.0, sigma, size=d)
        noise_mlp = lambda p: nk.MlpParams(
            p.W1 + rng.normal(0.0, sigma, size=p.W1.shape),
            p.b1 + rng.normal(0.0, sigma, size=p.b1.shape),
            p.W2 + rng.normal(0.0, sigma, size=p.W2.shape),
            p.b2 + rng.normal(0.0, sigma, size=p.b2.shape),
        )
        return LocalUpdate(update.user_id, noisy_items, noise_mlp(update.delta_ncf),
                           noise_mlp(update.delta_proxy), update.sample_count,
                           tuple(range(num_items)))
    noisy_items = {i: row + rng.normal(0.0, sigma, size=row.shape)
                   for i, row in update.delta_items.items()}
    return LocalUpdate(update.user_id, noisy_items, update.delta_ncf, update.delta_proxy,
                       update.sample_count, update.touched_items)


# ---------------------------------------------------------------------------
# wire formats (versioned, byte-stable; all integers little-endian)
#
# update:  magic "FRU1" | user_id u32 | sample_count u32 | embed_dim u16 |
#          n_rows u32 | n_rows * (item_id u32, embed_dim f64) |
#          8 MLP tensors (ncf W1,b1,W2,b2 then proxy ...), each prefixed by
#          rows u32, cols u32 and row-major f64 payload
# report:  magic "FRR1" | user_id u32 | predicted_loss f64


def _pack_matrix(arr: np.ndarray) -> bytes:
    a = np.atleast_2d(np.asarray(arr, dtype="<f8"))
    return struct.pack("<II", a.shape[0], a.shape[1]) + a.tobytes()


def _unpack_matrix(buf: memoryview, offset: int):
    rows, cols = struct.unpack_from("<II", buf, offset)
    offset += 8
    n = rows * cols
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(rows, cols)
    return arr.copy(), offset + 8 * n


def _row_record_dtype(d: int) -> np.dtype:
    return np.dtype([("id", "<u4"), ("row", "<f8", (d,))])


def serialize_update(update: LocalUpdate) -> bytes:
    d = update.delta_ncf.W1.shape[1] // 2
    parts = [WIRE_UPDATE_MAGIC,
             struct.pack("<IIHI", update.user_id, update.sample_count, d,
                         len(update.delta_items))]
    if update.delta_items:
        ids = sorted(update.delta_items)
        records = np.empty(len(ids), dtype=_row_record_dtype(d))
        records["id"] = ids
        records["row"] = np.stack([np.asarray(update.delta_items[i]) for i in ids])
        parts.append(records.tobytes())
    for mlp in (update.delta_ncf, update.delta_proxy):
        for arr in (mlp.W1, mlp.b1, mlp.W2, mlp.b2):
            parts.append(_pack_matrix(arr))
    return b"".join(parts)


def deserialize_update(payload: bytes) -> LocalUpdate:
    buf = memoryview(payload)
    if bytes(buf[:4]) != WIRE_UPDATE_MAGIC:
        raise ValueError("not a client update payload")
    user_id, sample_count, d, n_rows = struct.unpack_from("<IIHI", buf, 4)
    offset = 4 + struct.calcsize("<IIHI")
    delta_items = {}
    if n_rows:
        records = np.frombuffer(buf, dtype=_row_record_dtype(d), count=n_rows, offset=offset)
        offset += records.dtype.itemsize * n_rows
        for rec in records:
            delta_items[int(rec["id"])] = np.asarray(rec["row"], dtype=np.float64).copy()
    mats = []
    for _ in range(8):
        arr, offset = _unpack_matrix(buf, offset)
        mats.append(arr)
    def mlp(ms):
        return nk.MlpParams(ms[0], ms[1][0], ms[2], ms[3][0])
    return LocalUpdate(
        user_id=user_id,
        delta_items=delta_items,
        delta_ncf=mlp(mats[:4]),
        delta_proxy=mlp(mats[4:]),
        sample_count=sample_count,
        touched_items=tuple(sorted(delta_items)),
    )


def serialize_report(report: ContributionReport) -> bytes:
    return WIRE_REPORT_MAGIC + struct.pack("<Id", report.user_id, report.predicted_loss)


def deserialize_report(payload: bytes) -> ContributionReport:
    if payload[:4] != WIRE_REPORT_MAGIC:
        raise ValueError("not a contribution report payload")
    user_id, loss = struct.unpack_from("<Id", payload, 4)
    return ContributionReport(user_id, loss)
