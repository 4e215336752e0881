"""Experiment orchestration: configuration, named seed streams, the
federated round loop, early stopping on validation HR, round logging, and
the selection-bias report.

One round executes, in order: contribution reports from every client,
selection of K participants, local training on the selected clients
(optionally noised), delta aggregation plus staleness bookkeeping,
validation evaluation, the reward, and (for the learned selector) one
agent update. Runs are fully deterministic for a given (config, seed):
two runs produce identical logs apart from the wall-clock columns.
"""

from __future__ import annotations

import copy
import math
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import client as client_mod
from . import data as data_mod
from . import metrics as metrics_mod
from . import selection as selection_mod
from . import server as server_mod
from . import numkernel as nk
from .errors import ConfigurationError
from .server import GlobalModel, StalenessTracker

CONFIG_VERSION = 1

SELECTORS = ("random", "powd", "kmeans", "proxyrl")
ABLATIONS = ("none", "no_proxy", "no_staleness", "no_accuracy")

# named seed streams (stable across versions; part of the determinism contract)
STREAM_SPLIT = 0
STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_CONTRIB = 3
STREAM_SELECT = 4
STREAM_LDP = 5
STREAM_EVAL = 6


def stream_rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


@dataclass
class ExperimentConfig:
    dataset_path: str = ""
    dataset_format: str = "tsv"
    min_interactions: int = 20
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    embed_dim: int = 32
    hidden_dim: int = 64
    clients_per_round: int = 50
    lam: float = 0.6                  # accuracy/staleness trade-off (config key "lambda")
    staleness_window: int = 10
    local_epochs: int = 2
    n_neg: int = 4
    local_lr: float = 0.01
    ldp_sigma: float = 0.0
    ldp_full_table: bool = False
    selector: str = "proxyrl"
    powd_pool: int = 0                # 0 -> min(2K, num clients)
    kmeans_clusters: int = 10
    actor_hidden: int = 64
    critic_hidden: int = 64
    agent_lr: float = 1e-3
    gamma: float = 0.95
    entropy_weight: float = 0.01
    max_rounds: int = 100
    patience: int = 5
    eval_k: int = 20
    eval_users: int = 500
    reward_metric: str = "hr"
    ablation: str = "none"
    seed: int = 0
    split_seed: int = -1              # -1 -> use seed
    max_report_triplets: int = 128
    proxy_pairwise: bool = True
    checkpoint_every: int = 0
    output_dir: str = ""

    @property
    def effective_lambda(self) -> float:
        if self.ablation == "no_staleness":
            return 1.0
        if self.ablation == "no_accuracy":
            return 0.0
        return self.lam

    @property
    def effective_split_seed(self) -> int:
        return self.seed if self.split_seed < 0 else self.split_seed


# config keys whose name differs from the dataclass field
_KEY_ALIASES = {"lambda": "lam"}
_FIELD_TO_KEY = {"lam": "lambda"}


def validate_config(cfg: ExperimentConfig) -> None:
    if not (0.0 <= cfg.lam <= 1.0):
        raise ConfigurationError(f"lambda must be in [0, 1], got {cfg.lam}")
    if cfg.patience < 1:
        raise ConfigurationError(f"patience must be >= 1, got {cfg.patience}")
    if cfg.selector not in SELECTORS:
        raise ConfigurationError(f"unknown selector {cfg.selector!r} (expected one of {SELECTORS})")
    if cfg.ablation not in ABLATIONS:
        raise ConfigurationError(f"unknown ablation {cfg.ablation!r} (expected one of {ABLATIONS})")
    if cfg.reward_metric not in ("hr", "ndcg"):
        raise ConfigurationError(f"reward_metric must be hr or ndcg, got {cfg.reward_metric!r}")
    if cfg.max_rounds < 1 or cfg.clients_per_round < 1:
        raise ConfigurationError("max_rounds and clients_per_round must be >= 1")
    if cfg.local_epochs < 0 or cfg.n_neg < 1:
        raise ConfigurationError("local_epochs must be >= 0 and n_neg >= 1")


def load_config(path) -> ExperimentConfig:
    """Parse the flat key=value config format ('#' comments, blank lines ok)."""
    known = {f.name: f for f in fields(ExperimentConfig)}
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "config_version":
                if int(value) != CONFIG_VERSION:
                    raise ConfigurationError(f"{path}: unsupported config version {value}")
                continue
            name = _KEY_ALIASES.get(key, key)
            if name not in known:
                raise ConfigurationError(f"{path}:{line_no}: unknown key {key!r}")
            ftype = known[name].type
            if ftype == "bool" or isinstance(known[name].default, bool):
                if value.lower() not in ("true", "false"):
                    raise ConfigurationError(f"{path}:{line_no}: {key} must be true or false")
                values[name] = value.lower() == "true"
            elif isinstance(known[name].default, int):
                values[name] = int(value)
            elif isinstance(known[name].default, float):
                values[name] = float(value)
            else:
                values[name] = value
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"config_version = {CONFIG_VERSION}\n")
        for f in fields(ExperimentConfig):
            key = _FIELD_TO_KEY.get(f.name, f.name)
            value = getattr(cfg, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            fh.write(f"{key} = {value}\n")


class EarlyStopper:
    """Stop when the tracked value fails to improve for `patience`
    consecutive updates."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = -math.inf
        self.best_index = 0
        self.bad = 0
        self.count = 0

    def update(self, value: float) -> bool:
        self.count += 1
        if value > self.best:
            self.best = value
            self.best_index = self.count
            self.bad = 0
            return False
        self.bad += 1
        return self.bad >= self.patience


@dataclass
class RoundLog:
    round_index: int
    selected: list
    reward: float
    staleness: float
    val_hr: float
    val_ndcg: float
    test_hr: float        # nan unless evaluated this round
    test_ndcg: float
    unique_clients: int
    bytes_up: int
    bytes_down: int
    wall_ms: float
    contrib_ms: float


ROUNDS_CSV_HEADER = ("round,selected,reward,staleness,val_hr,val_ndcg,test_hr,test_ndcg,"
                     "unique_clients,bytes_up,bytes_down,wall_ms,contrib_ms")
# columns excluded from determinism comparisons
TIMING_COLUMNS = ("wall_ms", "contrib_ms")


def format_round_row(log: RoundLog) -> str:
    def num(x):
        return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))
    sel = ";".join(str(c) for c in log.selected)
    return ",".join([
        str(log.round_index), sel, num(log.reward), num(log.staleness),
        num(log.val_hr), num(log.val_ndcg), num(log.test_hr), num(log.test_ndcg),
        str(log.unique_clients), str(log.bytes_up), str(log.bytes_down),
        f"{log.wall_ms:.3f}", f"{log.contrib_ms:.3f}",
    ])


def write_rounds_csv(logs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ROUNDS_CSV_HEADER + "\n")
        for log in logs:
            fh.write(format_round_row(log) + "\n")


@dataclass
class SimulationWorld:
    cfg: ExperimentConfig
    split: data_mod.SplitDataset
    clients: list
    global_model: GlobalModel
    tracker: StalenessTracker
    agent: selection_mod.AgentParams = None
    eval_user_ids: list = field(default_factory=list)
    round_index: int = 0
    cached_state: np.ndarray = None
    logs: list = field(default_factory=list)
    seen_clients: set = field(default_factory=set)
    report_nbytes: int = len(client_mod.serialize_report(client_mod.ContributionReport(0, 0.0)))

    @property
    def num_clients(self) -> int:
        return self.split.num_users


def load_dataset(cfg: ExperimentConfig) -> data_mod.SplitDataset:
    ds = data_mod.load_interactions(cfg.dataset_path, cfg.dataset_format)
    ds = data_mod.filter_min_interactions(ds, cfg.min_interactions)
    return data_mod.split_dataset(
        ds, (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio), cfg.effective_split_seed)


def build_world(cfg: ExperimentConfig, split: data_mod.SplitDataset = None) -> SimulationWorld:
    validate_config(cfg)
    if split is None:
        split = load_dataset(cfg)
    n = split.num_users
    if cfg.clients_per_round > n:
        raise ConfigurationError(
            f"clients_per_round={cfg.clients_per_round} exceeds the {n} available clients")
    clients = [
        client_mod.init_client(
            u, split.train_items(u), split.val_items(u), cfg.embed_dim,
            stream_rng(cfg.seed, STREAM_INIT, u), lr=cfg.local_lr)
        for u in range(n)
    ]
    global_model = server_mod.init_global_model(
        split.num_items, cfg.embed_dim, cfg.hidden_dim,
        stream_rng(cfg.seed, STREAM_INIT), proxy_pairwise=cfg.proxy_pairwise)
    tracker = server_mod.init_staleness(split.num_items, cfg.staleness_window)
    agent = None
    if cfg.selector == "proxyrl":
        agent = selection_mod.init_agent(
            n, cfg.actor_hidden, cfg.critic_hidden, stream_rng(cfg.seed, STREAM_INIT, 1 << 20),
            lr=cfg.agent_lr, gamma=cfg.gamma, entropy_weight=cfg.entropy_weight)
    eval_pool = [u for u in range(n) if split.val_items(u)]
    eval_rng = stream_rng(cfg.seed, STREAM_EVAL)
    if len(eval_pool) > cfg.eval_users:
        picked = eval_rng.choice(len(eval_pool), size=cfg.eval_users, replace=False)
        eval_user_ids = sorted(eval_pool[i] for i in picked)
    else:
        eval_user_ids = eval_pool
    return SimulationWorld(cfg=cfg, split=split, clients=clients, global_model=global_model,
                           tracker=tracker, agent=agent, eval_user_ids=eval_user_ids)


def compute_contribution_state(world: SimulationWorld, round_index: int) -> np.ndarray:
    """Per-client loss estimates for `round_index`: proxy-branch inference by
    default, throwaway local training under the no-proxy ablation."""
    cfg = world.cfg
    reports = []
    for cl in world.clients:
        rng = stream_rng(cfg.seed, STREAM_CONTRIB, round_index, cl.user_id)
        if cfg.ablation == "no_proxy":
            reports.append(client_mod.trained_contribution(
                cl, world.global_model, cfg.local_epochs, cfg.n_neg, cfg.local_lr, rng))
        else:
            reports.append(client_mod.predict_contribution(
                cl, world.global_model, cfg.max_report_triplets, rng))
    return selection_mod.state_from_reports(reports, world.num_clients).losses


def _select(world: SimulationWorld, t: int, state_raw: np.ndarray) -> selection_mod.SelectionAction:
    cfg = world.cfg
    n = world.num_clients
    k = cfg.clients_per_round
    rng = stream_rng(cfg.seed, STREAM_SELECT, t)
    if cfg.selector == "random":
        return selection_mod.select_random(n, k, rng)
    if cfg.selector == "powd":
        pool = cfg.powd_pool if cfg.powd_pool > 0 else min(2 * k, n)
        pool = max(pool, k)
        return selection_mod.select_powd(selection_mod.SelectionState(state_raw), pool, k, rng)
    if cfg.selector == "kmeans":
        sizes = np.array([len(c.train_items) for c in world.clients], dtype=np.float64)
        features = np.stack([selection_mod.zscore(state_raw), selection_mod.zscore(sizes)], axis=1)
        return selection_mod.select_kmeans(features, min(cfg.kmeans_clusters, n), k, rng)
    probs = selection_mod.actor_policy(world.agent,
                                       selection_mod.SelectionState(selection_mod.zscore(state_raw)))
    return selection_mod.sample_subset(probs, k, rng)


def run_round(world: SimulationWorld) -> RoundLog:
    cfg = world.cfg
    t = world.round_index + 1
    t_round = time.perf_counter()
    contrib_s = 0.0

    # (1) contribution reports -> selection state
    if world.cached_state is not None:
        state_raw = world.cached_state
        world.cached_state = None
    else:
        t0 = time.perf_counter()
        state_raw = compute_contribution_state(world, t)
        contrib_s += time.perf_counter() - t0

    # (2) selection
    action = _select(world, t, state_raw)
    world.seen_clients.update(action.chosen)

    # (3) local training on the selected clients
    updates = []
    bytes_up = world.num_clients * world.report_nbytes
    for uid in action.chosen:
        upd = client_mod.local_train(
            world.clients[uid], world.global_model, cfg.local_epochs, cfg.n_neg,
            cfg.local_lr, stream_rng(cfg.seed, STREAM_TRAIN, t, uid),
            train_proxy=cfg.ablation != "no_proxy")
        if cfg.ldp_sigma > 0:
            upd = client_mod.apply_ldp(
                upd, cfg.ldp_sigma, stream_rng(cfg.seed, STREAM_LDP, t, uid),
                full_table=cfg.ldp_full_table, num_items=world.split.num_items)
        bytes_up += len(client_mod.serialize_update(upd))
        updates.append(upd)
    bytes_down = world.num_clients * server_mod.snapshot_nbytes(world.global_model)

    # (4) aggregation + staleness bookkeeping
    server_mod.aggregate(world.global_model, updates)
    touched = set()
    for upd in updates:
        if cfg.ldp_sigma > 0 and cfg.ldp_full_table:
            touched |= server_mod.detect_touched_rows(upd, cfg.ldp_sigma, cfg.embed_dim)
        else:
            touched |= set(upd.touched_items)
    server_mod.update_staleness(world.tracker, touched)

    # (5) validation metrics on the fixed subsample
    report = metrics_mod.evaluate_split(
        world.global_model, world.clients, world.split, "val", cfg.eval_k,
        user_ids=world.eval_user_ids)
    acc = report.hr if cfg.reward_metric == "hr" else report.ndcg

    # (6) reward
    staleness = server_mod.staleness_value(world.tracker)
    reward = server_mod.compute_reward(acc, staleness, cfg.effective_lambda)

    # (7) one agent update on the completed transition
    if cfg.selector == "proxyrl":
        t0 = time.perf_counter()
        next_state_raw = compute_contribution_state(world, t + 1)
        contrib_s += time.perf_counter() - t0
        selection_mod.agent_update(world.agent, selection_mod.Transition(
            state=selection_mod.zscore(state_raw),
            action=action,
            reward=reward,
            next_state=selection_mod.zscore(next_state_raw),
            terminal=False,
        ))
        world.cached_state = next_state_raw

    world.round_index = t
    log = RoundLog(
        round_index=t,
        selected=list(action.chosen),
        reward=reward,
        staleness=staleness,
        val_hr=report.hr,
        val_ndcg=report.ndcg,
        test_hr=float("nan"),
        test_ndcg=float("nan"),
        unique_clients=len(world.seen_clients),
        bytes_up=bytes_up,
        bytes_down=bytes_down,
        wall_ms=(time.perf_counter() - t_round) * 1000.0,
        contrib_ms=contrib_s * 1000.0,
    )
    world.logs.append(log)
    return log


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    rounds_run: int
    best_round: int
    best_val_hr: float
    test_hr: float
    test_ndcg: float
    logs: list
    output_dir: str = ""


def _model_snapshot(world: SimulationWorld):
    return (copy.deepcopy(world.global_model),
            [c.user_embedding.copy() for c in world.clients])


def _restore_snapshot(world: SimulationWorld, snap) -> None:
    model, embeddings = snap
    world.global_model = copy.deepcopy(model)
    for c, emb in zip(world.clients, embeddings):
        c.user_embedding = emb.copy()


def run_experiment(cfg: ExperimentConfig, split: data_mod.SplitDataset = None,
                   quiet: bool = True) -> ExperimentResult:
    """Run rounds until validation HR stalls for `patience` rounds or the
    round cap is reached; restore the best-validation model, evaluate the
    test split over all users, and write rounds.csv / summary files."""
    world = build_world(cfg, split)
    out_dir = cfg.output_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_config(cfg, os.path.join(out_dir, "config.txt"))
    stopper = EarlyStopper(cfg.patience)
    best_snap = _model_snapshot(world)
    try:
        for t in range(1, cfg.max_rounds + 1):
            log = run_round(world)
            improved = log.val_hr > stopper.best
            stop = stopper.update(log.val_hr)
            if improved:
                best_snap = _model_snapshot(world)
            if cfg.checkpoint_every and t % cfg.checkpoint_every == 0 and out_dir:
                ckpt_dir = os.path.join(out_dir, "checkpoints", f"round_{t:04d}")
                save_world_checkpoint(ckpt_dir, world)
                test_rep = metrics_mod.evaluate_split(
                    world.global_model, world.clients, world.split, "test", cfg.eval_k)
                log.test_hr, log.test_ndcg = test_rep.hr, test_rep.ndcg
            if not quiet:
                print(f"round {t}: val_hr={log.val_hr:.4f} reward={log.reward:.4f} "
                      f"staleness={log.staleness:.3f}", flush=True)
            if stop:
                break
    finally:
        if out_dir:
            write_rounds_csv(world.logs, os.path.join(out_dir, "rounds.csv"))

    _restore_snapshot(world, best_snap)
    test_report = metrics_mod.evaluate_split(
        world.global_model, world.clients, world.split, "test", cfg.eval_k)
    result = ExperimentResult(
        cfg=cfg,
        rounds_run=len(world.logs),
        best_round=stopper.best_index,
        best_val_hr=stopper.best if stopper.best > -math.inf else float("nan"),
        test_hr=test_report.hr,
        test_ndcg=test_report.ndcg,
        logs=world.logs,
        output_dir=out_dir,
    )
    if out_dir:
        save_world_checkpoint(os.path.join(out_dir, "checkpoints", "best"), world)
        _write_summary(result, out_dir)
    return result


def _write_summary(result: ExperimentResult, out_dir) -> None:
    cfg = result.cfg
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"selector: {cfg.selector}\n")
        fh.write(f"ablation: {cfg.ablation}\n")
        fh.write(f"lambda: {cfg.effective_lambda}\n")
        fh.write(f"seed: {cfg.seed}\n")
        fh.write(f"rounds_run: {result.rounds_run}\n")
        fh.write(f"best_round: {result.best_round}\n")
        fh.write(f"best_val_hr: {result.best_val_hr!r}\n")
        fh.write(f"test_hr: {result.test_hr!r}\n")
        fh.write(f"test_ndcg: {result.test_ndcg!r}\n")
    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("selector,ablation,lambda,seed,clients_per_round,rounds_run,best_round,"
                 "best_val_hr,test_hr,test_ndcg\n")
        fh.write(",".join([
            cfg.selector, cfg.ablation, repr(float(cfg.effective_lambda)), str(cfg.seed),
            str(cfg.clients_per_round), str(result.rounds_run), str(result.best_round),
            repr(result.best_val_hr), repr(result.test_hr), repr(result.test_ndcg)]) + "\n")


# ---------------------------------------------------------------------------
# selection-bias reporting


def selection_bias_report(logs, num_clients: int):
    """(number of distinct clients ever selected, per-client selection counts)."""
    if not logs:
        raise ConfigurationError("no rounds logged")
    freq = np.zeros(num_clients, dtype=np.int64)
    for log in logs:
        for c in log.selected:
            freq[c] += 1
    return int(np.count_nonzero(freq)), freq


def write_bias_csv(logs, num_clients: int, selector: str, path) -> None:
    _, freq = selection_bias_report(logs, num_clients)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("selector,client_id,count\n")
        for c in range(num_clients):
            fh.write(f"{selector},{c},{freq[c]}\n")


# ---------------------------------------------------------------------------
# world checkpointing (simulator state; the server checkpoint plus the
# simulator-held user embeddings needed to re-run evaluation)


def save_world_checkpoint(directory, world: SimulationWorld) -> None:
    os.makedirs(directory, exist_ok=True)
    server_mod.save_checkpoint(directory, world.global_model, world.tracker)
    nk.save_tensors(os.path.join(directory, "world.bin"), {
        "user_embeddings": np.stack([c.user_embedding for c in world.clients]),
    })
    save_config(world.cfg, os.path.join(directory, "config.txt"))


def load_world_checkpoint(directory) -> SimulationWorld:
    cfg = load_config(os.path.join(directory, "config.txt"))
    split = load_dataset(cfg)
    world = build_world(cfg, split)
    model, tracker = server_mod.load_checkpoint(directory)
    world.global_model = model
    world.tracker = tracker
    embeddings = nk.load_tensors(os.path.join(directory, "world.bin"))["user_embeddings"]
    for c, emb in zip(world.clients, embeddings):
        c.user_embedding = emb.copy()
    return world
