"""Implicit-feedback interaction data: loading, activity filtering, per-user
train/val/test splitting, and triplet sampling with uniform negatives.

All randomized steps are pure functions of (input, seed): the same seed
always reproduces the same split and the same samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    EmptyDatasetError,
    NoNegativesError,
    ParseError,
)

_SEPARATORS = {"movielens-dat": "::", "tsv": "\t", "csv": ","}


@dataclass(frozen=True)
class InteractionDataset:
    """Deduplicated (user, item) pairs over dense 0-based id spaces.

    `raw_user_ids[dense]` / `raw_item_ids[dense]` recover the original labels;
    the mapping is a bijection assigned in first-appearance order.
    """

    num_users: int
    num_items: int
    interactions: tuple  # of (user, item) pairs
    user_items: tuple    # per user, sorted tuple of item ids
    raw_user_ids: tuple
    raw_item_ids: tuple

    def __post_init__(self):
        if self.num_users == 0 or not self.interactions:
            raise EmptyDatasetError("dataset has no interactions")

    def items_of(self, user: int) -> tuple:
        return self.user_items[user]


def _build_dataset(pairs, raw_user_ids, raw_item_ids) -> InteractionDataset:
    per_user = [[] for _ in range(len(raw_user_ids))]
    for u, i in pairs:
        per_user[u].append(i)
    return InteractionDataset(
        num_users=len(raw_user_ids),
        num_items=len(raw_item_ids),
        interactions=tuple(pairs),
        user_items=tuple(tuple(sorted(items)) for items in per_user),
        raw_user_ids=tuple(raw_user_ids),
        raw_item_ids=tuple(raw_item_ids),
    )


def load_interactions(path, format: str) -> InteractionDataset:
    """Parse an interaction file into implicit-feedback pairs.

    Records are (raw-user, raw-item[, rating, timestamp]); rating and
    timestamp columns are ignored (any record counts as a positive).
    Duplicate (user, item) records collapse to one. Files must be
    headerless; blank lines are skipped.
    """
    if format not in _SEPARATORS:
        raise ConfigurationError(f"unknown dataset format {format!r}")
    sep = _SEPARATORS[format]
    user_map, item_map = {}, {}
    raw_users, raw_items = [], []
    pairs = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(sep)
            if len(fields) < 2 or not fields[0] or not fields[1]:
                raise ParseError(path, line_no, f"expected 'user{sep}item[...]', got {line!r}")
            ru, ri = fields[0], fields[1]
            if ru not in user_map:
                user_map[ru] = len(raw_users)
                raw_users.append(ru)
            if ri not in item_map:
                item_map[ri] = len(raw_items)
                raw_items.append(ri)
            pair = (user_map[ru], item_map[ri])
            if pair not in seen:
                seen.add(pair)
                pairs.append(pair)
    if not pairs:
        raise EmptyDatasetError(f"{path}: no interactions")
    return _build_dataset(pairs, raw_users, raw_items)


def write_interactions(path, ds: InteractionDataset, format: str = "tsv") -> None:
    """Write a dataset back to disk using its raw id labels."""
    sep = _SEPARATORS[format]
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in ds.interactions:
            fh.write(f"{ds.raw_user_ids[u]}{sep}{ds.raw_item_ids[i]}\n")


def filter_min_interactions(ds: InteractionDataset, k: int) -> InteractionDataset:
    """Drop users with fewer than k interactions (repeating until stable),
    then compact both id spaces. Items are never filtered by count; an item
    disappears only when all of its interactions belonged to dropped users.
    """
    if k < 1:
        raise ConfigurationError(f"min-interaction threshold must be >= 1, got {k}")
    keep = [len(items) >= k for items in ds.user_items]
    # removing a user cannot lower another user's count, but loop for clarity
    while True:
        counts = [0] * ds.num_users
        for u, _ in ds.interactions:
            if keep[u]:
                counts[u] += 1
        changed = False
        for u in range(ds.num_users):
            if keep[u] and counts[u] < k:
                keep[u] = False
                changed = True
        if not changed:
            break
    pairs = [(u, i) for u, i in ds.interactions if keep[u]]
    if not pairs:
        raise EmptyDatasetError(f"no users left after filtering at k={k}")
    user_remap, item_remap = {}, {}
    new_raw_users, new_raw_items = [], []
    remapped = []
    for u, i in pairs:
        if u not in user_remap:
            user_remap[u] = len(new_raw_users)
            new_raw_users.append(ds.raw_user_ids[u])
        if i not in item_remap:
            item_remap[i] = len(new_raw_items)
            new_raw_items.append(ds.raw_item_ids[i])
        remapped.append((user_remap[u], item_remap[i]))
    return _build_dataset(remapped, new_raw_users, new_raw_items)


@dataclass(frozen=True)
class SplitDataset:
    """Train/val/test views over one id space; together they cover the
    source interactions exactly and are pairwise disjoint."""

    train: InteractionDataset
    val: InteractionDataset
    test: InteractionDataset
    ratios: tuple
    seed: int

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def train_items(self, user: int) -> tuple:
        return self.train.user_items[user]

    def val_items(self, user: int) -> tuple:
        return self.val.user_items[user]

    def test_items(self, user: int) -> tuple:
        return self.test.user_items[user]


def _view(ds, pairs, per_user):
    # empty folds are legal for views, so bypass the dataclass guard
    view = object.__new__(InteractionDataset)
    object.__setattr__(view, "num_users", ds.num_users)
    object.__setattr__(view, "num_items", ds.num_items)
    object.__setattr__(view, "interactions", tuple(pairs))
    object.__setattr__(view, "user_items", tuple(tuple(sorted(it)) for it in per_user))
    object.__setattr__(view, "raw_user_ids", ds.raw_user_ids)
    object.__setattr__(view, "raw_item_ids", ds.raw_item_ids)
    return view


def _fold_sizes(n: int, ratios) -> tuple:
    r_train, r_val, r_test = ratios
    n_val = int(r_val * n + 0.5)
    n_test = int(r_test * n + 0.5)
    # every user must keep at least one training item
    while n - n_val - n_test < 1:
        if n_val >= n_test and n_val > 0:
            n_val -= 1
        elif n_test > 0:
            n_test -= 1
        else:
            break
    return n - n_val - n_test, n_val, n_test


def split_dataset(ds: InteractionDataset, ratios, seed: int) -> SplitDataset:
    """Per-user random split so every client retains local training data.

    Within each user the items are shuffled once and cut into
    train/val/test by rounded ratio counts (each within one item of the
    exact ratio). Deterministic for a given seed.
    """
    r_train, r_val, r_test = ratios
    if r_train <= 0 or r_val < 0 or r_test < 0:
        raise ConfigurationError(f"invalid split ratios {ratios}")
    if abs(r_train + r_val + r_test - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must sum to 1, got {ratios}")
    for u in range(ds.num_users):
        if len(ds.user_items[u]) < 3:
            raise ConfigurationError(
                f"user {u} has {len(ds.user_items[u])} interactions (< 3); "
                "raise the min-interaction filter threshold")
    rng = np.random.default_rng(seed)
    train_pairs, val_pairs, test_pairs = [], [], []
    per_user = ([[] for _ in range(ds.num_users)],
                [[] for _ in range(ds.num_users)],
                [[] for _ in range(ds.num_users)])
    for u in range(ds.num_users):
        items = list(ds.user_items[u])
        order = rng.permutation(len(items))
        shuffled = [items[j] for j in order]
        n_train, n_val, n_test = _fold_sizes(len(items), ratios)
        folds = (shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:])
        for fold_idx, fold_items in enumerate(folds):
            for i in fold_items:
                per_user[fold_idx][u].append(i)
                (train_pairs, val_pairs, test_pairs)[fold_idx].append((u, i))
    return SplitDataset(
        train=_view(ds, train_pairs, per_user[0]),
        val=_view(ds, val_pairs, per_user[1]),
        test=_view(ds, test_pairs, per_user[2]),
        ratios=tuple(ratios),
        seed=seed,
    )


@dataclass(frozen=True)
class Triplet:
    user: int
    pos_item: int
    neg_item: int


def sample_negatives(owned, num_items: int, count: int, rng: np.random.Generator) -> list:
    """Uniform negatives from the complement of `owned`, by rejection sampling
    (vectorized in chunks; still exact rejection against the owned set)."""
    if len(owned) >= num_items:
        raise NoNegativesError("user has interacted with every item")
    owned_arr = np.fromiter(owned, dtype=np.int64) if owned else np.empty(0, dtype=np.int64)
    out = []
    # oversample to cover the expected rejection rate in one pass
    chunk = max(16, int(count * num_items / max(num_items - len(owned), 1)) + 8)
    while len(out) < count:
        cand = rng.integers(0, num_items, size=chunk)
        good = cand[~np.isin(cand, owned_arr)]
        out.extend(int(c) for c in good[: count - len(out)])
    return out


def sample_triplets(split: SplitDataset, user: int, n_neg: int, rng: np.random.Generator) -> list:
    """For each train positive of `user`, draw n_neg uniform negatives from
    outside the user's train set."""
    if n_neg < 1:
        raise ConfigurationError(f"n_neg must be >= 1, got {n_neg}")
    positives = split.train_items(user)
    if not positives:
        raise EmptyDatasetError(f"user {user} has no train items")
    owned = set(positives)
    triplets = []
    for pos in positives:
        for neg in sample_negatives(owned, split.num_items, n_neg, rng):
            triplets.append(Triplet(user, pos, neg))
    return triplets


# ---------------------------------------------------------------------------
# split manifest


def save_split_manifest(path, split: SplitDataset) -> None:
    """Persist (user, item, fold) rows; fold is train/val/test."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, fold in (("train", split.train), ("val", split.val), ("test", split.test)):
            for u, i in fold.interactions:
                fh.write(f"{u}\t{i}\t{name}\n")


def load_split_manifest(path, ds: InteractionDataset, ratios=(0.8, 0.1, 0.1), seed: int = -1) -> SplitDataset:
    """Rebuild a SplitDataset from a manifest written over the same dataset."""
    folds = {"train": [], "val": [], "test": []}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in folds:
                raise ParseError(path, line_no, f"bad manifest row {line!r}")
            folds[parts[2]].append((int(parts[0]), int(parts[1])))
    covered = set(folds["train"]) | set(folds["val"]) | set(folds["test"])
    if covered != set(ds.interactions):
        raise ConfigurationError(f"{path}: manifest does not cover the dataset exactly")
    per = {name: [[] for _ in range(ds.num_users)] for name in folds}
    for name, pairs in folds.items():
        for u, i in pairs:
            per[name][u].append(i)
    return SplitDataset(
        train=_view(ds, folds["train"], per["train"]),
        val=_view(ds, folds["val"], per["val"]),
        test=_view(ds, folds["test"], per["test"]),
        ratios=tuple(ratios),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_interactions(
    num_users: int,
    num_items: int,
    seed: int,
    min_items_per_user: int = 20,
    mean_extra_items: float = 60.0,
    n_groups: int = 8,
    boost: float = 6.0,
    popularity_exponent: float = 1.0,
    noise_user_fraction: float = 0.0,
) -> InteractionDataset:
    """Generate clustered, long-tail implicit feedback for desk-scale runs.

    Users and items belong to latent groups; a user draws items with
    probability proportional to a global long-tail popularity times a
    boost on the user's preferred item groups. This yields non-IID
    clients and a realistic skewed item distribution while staying fully
    deterministic for a given seed.

    `noise_user_fraction` designates a cohort whose interactions are
    drawn uniformly at random instead: clients with unlearnable local
    data, modeling the heterogeneity of real populations (their losses
    stay high and their updates carry no collaborative signal).
    """
    rng = np.random.default_rng(seed)
    user_group = rng.integers(0, n_groups, size=num_users)
    # spread items across groups by popularity rank so each group has head items
    item_group = np.arange(num_items) % n_groups
    popularity = 1.0 / np.power(np.arange(num_items) + 10.0, popularity_exponent)
    is_noise = rng.random(num_users) < noise_user_fraction

    sigma = 0.9
    mu = np.log(max(mean_extra_items, 1.0)) - sigma * sigma / 2.0
    counts = min_items_per_user + np.floor(rng.lognormal(mu, sigma, size=num_users)).astype(int)
    counts = np.minimum(counts, num_items // 3)

    pairs = []
    for u in range(num_users):
        if is_noise[u]:
            items = rng.choice(num_items, size=int(counts[u]), replace=False)
        else:
            g = user_group[u]
            preferred = {g % n_groups, (g + 1) % n_groups}
            weights = popularity * np.where(np.isin(item_group, list(preferred)), boost, 1.0)
            weights = weights / weights.sum()
            items = rng.choice(num_items, size=int(counts[u]), replace=False, p=weights)
        for i in items:
            pairs.append((u, int(i)))
    raw_users = [str(u) for u in range(num_users)]
    raw_items = [str(i) for i in range(num_items)]
    # compact away any item that no user drew
    used = sorted({i for _, i in pairs})
    remap = {old: new for new, old in enumerate(used)}
    pairs = [(u, remap[i]) for u, i in pairs]
    return _build_dataset(pairs, raw_users, [raw_items[i] for i in used])
