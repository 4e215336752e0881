"""Minimal dense numeric kernel: float64 tensors, Xavier init, a two-layer
MLP with hand-written backprop, and an Adam optimizer over named tensors.

No autodiff framework; gradients here are checked against finite
differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

# ---------------------------------------------------------------------------
# elementwise helpers


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    """Numerically stable logistic function, scalar or array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def softplus(x):
    """log(1 + exp(x)) without overflow for |x| up to ~700."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z)
    e = np.exp(shifted)
    return e / e.sum()


# ---------------------------------------------------------------------------
# initialization


def xavier_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform Xavier/Glorot init on [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise DimensionError(f"xavier_init needs positive dims, got {shape}")
    a = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


# ---------------------------------------------------------------------------
# two-layer MLP


@dataclass
class MlpParams:
    """y = W2 @ relu(W1 @ x + b1) + b2."""

    W1: np.ndarray  # (hidden, n_in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (n_out, hidden)
    b2: np.ndarray  # (n_out,)

    @property
    def n_in(self) -> int:
        return self.W1.shape[1]

    @property
    def n_out(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def as_dict(self, prefix: str = "") -> dict:
        return {
            prefix + "W1": self.W1,
            prefix + "b1": self.b1,
            prefix + "W2": self.W2,
            prefix + "b2": self.b2,
        }


def init_mlp(n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator) -> MlpParams:
    return MlpParams(
        W1=xavier_init((n_hidden, n_in), rng),
        b1=np.zeros(n_hidden),
        W2=xavier_init((n_out, n_hidden), rng),
        b2=np.zeros(n_out),
    )


def zeros_like_mlp(params: MlpParams) -> MlpParams:
    return MlpParams(
        np.zeros_like(params.W1),
        np.zeros_like(params.b1),
        np.zeros_like(params.W2),
        np.zeros_like(params.b2),
    )


def add_mlp(a: MlpParams, b: MlpParams, scale: float = 1.0) -> MlpParams:
    return MlpParams(a.W1 + scale * b.W1, a.b1 + scale * b.b1, a.W2 + scale * b.W2, a.b2 + scale * b.b2)


def sub_mlp(a: MlpParams, b: MlpParams) -> MlpParams:
    return MlpParams(a.W1 - b.W1, a.b1 - b.b1, a.W2 - b.W2, a.b2 - b.b2)


@dataclass
class MlpCache:
    x: np.ndarray   # input, (n_in,) or (batch, n_in)
    z1: np.ndarray  # pre-activation of the hidden layer
    a1: np.ndarray  # relu(z1)


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Single-vector forward pass; returns (y, cache) with cache feeding backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.n_in:
        raise DimensionError(f"expected input of length {params.n_in}, got shape {x.shape}")
    z1 = params.W1 @ x + params.b1
    a1 = relu(z1)
    y = params.W2 @ a1 + params.b2
    return y, MlpCache(x=x, z1=z1, a1=a1)


def mlp_backward(params: MlpParams, cache: MlpCache, dy: np.ndarray):
    """Gradients of a scalar loss given dy = dL/dy. Returns (param grads, dx).

    ReLU subgradient at exactly 0 is taken as 0.
    """
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != (params.n_out,):
        raise DimensionError(f"expected dy of shape {(params.n_out,)}, got {dy.shape}")
    dW2 = np.outer(dy, cache.a1)
    db2 = dy.copy()
    da1 = params.W2.T @ dy
    dz1 = da1 * (cache.z1 > 0)
    dW1 = np.outer(dz1, cache.x)
    db1 = dz1
    dx = params.W1.T @ dz1
    return MlpParams(dW1, db1, dW2, db2), dx


def mlp_forward_batch(params: MlpParams, X: np.ndarray):
    """Batched forward: X is (batch, n_in), returns (Y (batch, n_out), cache)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.n_in:
        raise DimensionError(f"expected (batch, {params.n_in}) input, got shape {X.shape}")
    Z1 = X @ params.W1.T + params.b1
    A1 = relu(Z1)
    Y = A1 @ params.W2.T + params.b2
    return Y, MlpCache(x=X, z1=Z1, a1=A1)


def mlp_backward_batch(params: MlpParams, cache: MlpCache, dY: np.ndarray):
    """Batched backward; parameter gradients are summed over the batch.

    Returns (param grads, dX of shape (batch, n_in)).
    """
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != cache.a1.shape[:1] + (params.n_out,):
        raise DimensionError(f"dY shape {dY.shape} does not match batch")
    dW2 = dY.T @ cache.a1
    db2 = dY.sum(axis=0)
    dA1 = dY @ params.W2
    dZ1 = dA1 * (cache.z1 > 0)
    dW1 = dZ1.T @ cache.x
    db1 = dZ1.sum(axis=0)
    dX = dZ1 @ params.W1
    return MlpParams(dW1, db1, dW2, db2), dX


# ---------------------------------------------------------------------------
# Adam over named tensors


@dataclass
class AdamState:
    """Adam moments for a dict of named tensors. Single shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            step=self.step,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on the arrays in `params`.

    Keys present in `grads` must exist in `params` with matching shapes;
    keys absent from `grads` are left untouched (sparse update).
    """
    for name, g in grads.items():
        if name not in params:
            raise DimensionError(f"gradient for unknown tensor {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise DimensionError(
                f"gradient shape {np.shape(g)} != param shape {np.shape(params[name])} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for tensor {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# tensor checkpoint format
#
# Text header followed by raw little-endian binary:
#
#   line 1: "NTD1"                           (magic + version)
#   line 2: number of tensors
#   per tensor: "<name> <dtype> <ndim> <d0> <d1> ..."
#   then the tensors' bytes back to back, C order, in header order.
#
# Names are sorted so the file is byte-stable for a given tensor dict.

_MAGIC = b"NTD1"
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def save_tensors(path, tensors: dict) -> None:
    names = sorted(tensors)
    header_lines = [_MAGIC.decode(), str(len(names))]
    blobs = []
    for name in names:
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(tensors[name])
        if np.issubdtype(arr.dtype, np.integer):
            code, arr = "i8", arr.astype("<i8")
        else:
            code, arr = "f8", arr.astype("<f8")
        dims = " ".join(str(d) for d in arr.shape)
        header_lines.append(f"{name} {code} {arr.ndim}" + (f" {dims}" if dims else ""))
        blobs.append(np.ascontiguousarray(arr).tobytes())
    with open(path, "wb") as fh:
        fh.write(("\n".join(header_lines) + "\n").encode())
        for blob in blobs:
            fh.write(blob)


def load_tensors(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a tensor dump (magic {magic!r})")
        count = int(fh.readline())
        specs = []
        for _ in range(count):
            parts = fh.readline().split()
            name = parts[0].decode()
            code = parts[1].decode()
            ndim = int(parts[2])
            shape = tuple(int(p) for p in parts[3:3 + ndim])
            specs.append((name, code, shape))
        out = {}
        for name, code, shape in specs:
            dtype = _DTYPES[code]
            n = int(np.prod(shape)) if shape else 1
            data = fh.read(n * dtype.itemsize)
            out[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return out
