"""Shared test helpers: central finite differences and small fixtures."""

import numpy as np
import pytest

from fedrec import data, numkernel as nk
from fedrec.proxyncf import ProxyNcfParams, init_proxyncf


def fd_grad(f, arr, h=1e-5):
    """Central finite differences of scalar f() w.r.t. arr, mutated in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-4, floor=1e-4):
    """Relative error below `rel` entrywise; entries smaller than `floor` on
    both sides are compared against the floor instead (central differences
    carry ~1e-10 of cancellation noise, which would swamp a true zero)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = np.abs(analytic - numeric) / denom
    assert err.max() < rel, f"max rel grad error {err.max():.3e}"


def max_rel_err(analytic, numeric, floor=1e-4):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def random_mlp(n_in, n_hidden, n_out, rng, scale=1.0):
    p = nk.init_mlp(n_in, n_hidden, n_out, rng)
    p.W1 *= scale
    p.W2 *= scale
    p.b1[:] = rng.normal(0, 0.3, size=p.b1.shape)
    p.b2[:] = rng.normal(0, 0.3, size=p.b2.shape)
    return p


def min_abs_preactivation(params: ProxyNcfParams, u_emb, item_table, triplets):
    """Smallest |hidden pre-activation| over every pair input of both branches;
    used to resample away from ReLU kinks before finite differencing."""
    lows = []
    for t in triplets:
        for item in (t.pos_item, t.neg_item):
            x = np.concatenate([u_emb, item_table[item]])
            for mlp in (params.ncf, params.proxy):
                lows.append(np.abs(mlp.W1 @ x + mlp.b1).min())
    return min(lows) if lows else 1.0


@pytest.fixture(scope="session")
def tiny_split():
    ds = data.synthetic_interactions(24, 40, seed=5, min_items_per_user=6, mean_extra_items=4)
    return data.split_dataset(ds, (0.8, 0.1, 0.1), seed=9)
