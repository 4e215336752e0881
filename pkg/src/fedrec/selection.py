"""Client-selection strategies behind one interface: uniform random,
loss-ranked power-of-choice, k-means diversity sampling, and a softmax
actor with a scalar critic trained by one-step temporal difference.

Every selector returns an ordered list of K distinct client ids; only the
stochastic-policy selector attaches a log-probability to its action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .errors import ConfigurationError, NumericError
from .numkernel import AdamState, MlpParams


@dataclass
class SelectionState:
    """Per-client predicted-loss vector, the selector's observation."""

    losses: np.ndarray  # (num_clients,)


def state_from_reports(reports, num_clients: int) -> SelectionState:
    """Assemble the observation from contribution reports; clients missing a
    report are imputed with the mean of the reported losses so the vector
    keeps its fixed width."""
    losses = np.full(num_clients, np.nan)
    for r in reports:
        losses[r.user_id] = r.predicted_loss
    observed = losses[~np.isnan(losses)]
    fill = float(observed.mean()) if observed.size else 0.0
    losses[np.isnan(losses)] = fill
    return SelectionState(losses=losses)


def zscore(x: np.ndarray) -> np.ndarray:
    """Per-round standardization; a constant vector maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    std = x.std()
    if std < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / std


@dataclass
class SelectionAction:
    chosen: list
    log_prob: float = None


def _check_k(n: int, k: int) -> None:
    if not (1 <= k <= n):
        raise ConfigurationError(f"cannot select {k} of {n} clients")


def select_random(n_clients: int, k: int, rng: np.random.Generator) -> SelectionAction:
    _check_k(n_clients, k)
    chosen = rng.choice(n_clients, size=k, replace=False)
    return SelectionAction(chosen=[int(c) for c in chosen])


def select_powd(state: SelectionState, d_pool: int, k: int, rng: np.random.Generator) -> SelectionAction:
    """Power-of-choice: uniform candidate pool of size d_pool, then the K
    highest-loss candidates (ties broken toward lower client id)."""
    n = state.losses.shape[0]
    _check_k(n, k)
    if not (k <= d_pool <= n):
        raise ConfigurationError(f"need k <= d_pool <= n, got k={k}, d_pool={d_pool}, n={n}")
    pool = rng.choice(n, size=d_pool, replace=False)
    ranked = sorted(pool, key=lambda c: (-state.losses[c], c))
    return SelectionAction(chosen=[int(c) for c in ranked[:k]])


def _lloyd(features: np.ndarray, n_clusters: int, rng: np.random.Generator, max_iter: int = 50):
    n = features.shape[0]
    centers = features[rng.choice(n, size=n_clusters, replace=False)].copy()
    assign = None
    for _it in range(max_iter):
        dists = np.linalg.norm(features[:, None, :] - centers[None, :, :], axis=2)
        new_assign = dists.argmin(axis=1)
        seized = set()
        for c in range(n_clusters):
            if not np.any(new_assign == c):
                # empty cluster: seize the point farthest from its center
                own_dist = dists[np.arange(n), new_assign].copy()
                own_dist[list(seized)] = -1.0
                farthest = int(np.argmax(own_dist))
                new_assign[farthest] = c
                seized.add(farthest)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(n_clusters):
            members = features[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return assign


def select_kmeans(features: np.ndarray, n_clusters: int, k: int,
                  rng: np.random.Generator) -> SelectionAction:
    """Cluster clients on their feature vectors, then draw picks round-robin
    across clusters, uniformly without replacement inside each."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    _check_k(n, k)
    if n_clusters > n:
        raise ConfigurationError(f"more clusters ({n_clusters}) than clients ({n})")
    assign = _lloyd(features, n_clusters, rng)
    queues = []
    for c in range(n_clusters):
        members = np.flatnonzero(assign == c)
        queues.append(list(rng.permutation(members)))
    chosen = []
    while len(chosen) < k:
        progressed = False
        for q in queues:
            if q and len(chosen) < k:
                chosen.append(int(q.pop()))
                progressed = True
        if not progressed:
            break
    return SelectionAction(chosen=chosen)


# ---------------------------------------------------------------------------
# actor-critic agent


@dataclass
class AgentParams:
    """Softmax policy over clients plus a scalar state-value estimator."""

    actor: MlpParams    # num_clients -> hidden -> num_clients
    critic: MlpParams   # num_clients -> hidden -> 1
    actor_adam: AdamState
    critic_adam: AdamState
    gamma: float = 0.95
    entropy_weight: float = 0.01


def init_agent(num_clients: int, actor_hidden: int, critic_hidden: int,
               rng: np.random.Generator, lr: float = 1e-3,
               gamma: float = 0.95, entropy_weight: float = 0.01) -> AgentParams:
    return AgentParams(
        actor=nk.init_mlp(num_clients, actor_hidden, num_clients, rng),
        critic=nk.init_mlp(num_clients, critic_hidden, 1, rng),
        actor_adam=AdamState(lr=lr),
        critic_adam=AdamState(lr=lr),
        gamma=gamma,
        entropy_weight=entropy_weight,
    )


@dataclass
class Transition:
    state: np.ndarray
    action: SelectionAction
    reward: float
    next_state: np.ndarray
    terminal: bool = False


def actor_policy(agent: AgentParams, state: SelectionState) -> np.ndarray:
    """Softmax of the actor logits; strictly positive, sums to one."""
    logits, _ = nk.mlp_forward(agent.actor, np.asarray(state.losses, dtype=np.float64))
    if not np.all(np.isfinite(logits)):
        raise NumericError("actor produced non-finite logits")
    return nk.softmax(logits)


def sample_subset(probs: np.ndarray, k: int, rng: np.random.Generator) -> SelectionAction:
    """Draw K clients without replacement by sequential renormalization and
    record the log-probability of the ordered draw."""
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    _check_k(n, k)
    if np.count_nonzero(probs > 0.0) < k:
        raise ConfigurationError(f"distribution supports fewer than {k} clients")
    p = probs.copy()
    chosen = []
    log_prob = 0.0
    for _ in range(k):
        mass = p.sum()
        idx = int(rng.choice(n, p=p / mass))
        log_prob += math.log(p[idx] / mass)
        chosen.append(idx)
        p[idx] = 0.0
    return SelectionAction(chosen=chosen, log_prob=log_prob)


def subset_log_prob(probs: np.ndarray, chosen) -> tuple:
    """Log-probability of an ordered no-replacement draw and its gradient
    with respect to the probability vector."""
    p = np.asarray(probs, dtype=np.float64)
    grad = np.zeros_like(p)
    log_prob = 0.0
    mass = 1.0
    inv_masses = []
    for idx in chosen:
        log_prob += math.log(p[idx] / mass)
        inv_masses.append(1.0 / mass)
        mass -= p[idx]
    # d/dp_m: 1/p_m for each selected m, plus 1/mass_i for every draw i
    # made after m was removed from the pool
    suffix = 0.0
    for pos in range(len(chosen) - 1, -1, -1):
        idx = chosen[pos]
        grad[idx] += 1.0 / p[idx] + suffix
        suffix += inv_masses[pos]
    return log_prob, grad


def _entropy(probs: np.ndarray) -> tuple:
    p = np.clip(probs, 1e-300, None)
    h = float(-(p * np.log(p)).sum())
    return h, -(np.log(p) + 1.0)


def _softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    s = float(np.dot(dprobs, probs))
    return probs * (dprobs - s)


def actor_loss_and_grads(agent: AgentParams, state: np.ndarray, chosen,
                         advantage: float) -> tuple:
    """Policy-gradient loss -(A * log_prob + w * entropy) and its gradients.

    The advantage is a constant here; only the policy depends on the
    actor parameters.
    """
    x = np.asarray(state, dtype=np.float64)
    logits, cache = nk.mlp_forward(agent.actor, x)
    probs = nk.softmax(logits)
    log_prob, dlp_dp = subset_log_prob(probs, chosen)
    entropy, dh_dp = _entropy(probs)
    loss = -(advantage * log_prob + agent.entropy_weight * entropy)
    dloss_dp = -(advantage * dlp_dp + agent.entropy_weight * dh_dp)
    dlogits = _softmax_backward(probs, dloss_dp)
    grads, _ = nk.mlp_backward(agent.actor, cache, dlogits)
    return loss, grads


def critic_value(agent: AgentParams, state: np.ndarray) -> float:
    y, _ = nk.mlp_forward(agent.critic, np.asarray(state, dtype=np.float64))
    return float(y[0])


def critic_loss_and_grads(agent: AgentParams, state: np.ndarray, target: float) -> tuple:
    """Squared TD error (V(s) - target)^2 with a detached target."""
    x = np.asarray(state, dtype=np.float64)
    y, cache = nk.mlp_forward(agent.critic, x)
    err = float(y[0]) - target
    grads, _ = nk.mlp_backward(agent.critic, cache, np.array([2.0 * err]))
    return err * err, grads


def agent_update(agent: AgentParams, tr: Transition) -> tuple:
    """One-step advantage actor-critic update; returns (actor_loss, critic_loss)."""
    v_s = critic_value(agent, tr.state)
    v_next = 0.0 if tr.terminal else critic_value(agent, tr.next_state)
    target = tr.reward + agent.gamma * v_next * (0.0 if tr.terminal else 1.0)
    advantage = target - v_s
    if not np.isfinite(advantage):
        raise NumericError("non-finite advantage in agent update")
    actor_loss, actor_grads = actor_loss_and_grads(agent, tr.state, tr.action.chosen, advantage)
    critic_loss, critic_grads = critic_loss_and_grads(agent, tr.state, target)
    actor_params = agent.actor.as_dict()
    critic_params = agent.critic.as_dict()
    nk.adam_step(actor_params, actor_grads.as_dict(), agent.actor_adam)
    nk.adam_step(critic_params, critic_grads.as_dict(), agent.critic_adam)
    return actor_loss, critic_loss
