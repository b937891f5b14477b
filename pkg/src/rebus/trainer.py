"""BPR training with Adam, global L2 regularisation and validation-AUC early stopping."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .corpus import SplitDataset
from .evalkit import make_valid_task, validation_auc
from .model import ContextTable, Hyperparams, ModelParams, build_context_table, xavier_bound
from .seqmine import PatternSet, mine_frequent_substrings

logger = logging.getLogger(__name__)

# named random sub-streams derived from the run seed
STREAMS = {"init": 1, "sampling": 2}

DEFAULT_GRIDS = {
    "alpha": [0.3, 0.5, 0.7, 1.0],
    "gamma": [0.3, 0.5, 0.7],
    "lambda_reg": [0.0, 0.001, 0.01, 0.1, 1.0],
}


def stream_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    patience: int = 250
    max_epochs: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    rng_seed: int = 0
    epoch_size: int | None = None  # None = number of training interactions

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def init_params(num_items: int, k: int, seed: int) -> ModelParams:
    """Xavier-uniform embeddings (fan_in = fan_out = k), zero biases."""
    if num_items < 1:
        raise ValueError("num_items must be >= 1")
    bound = xavier_bound(k)
    rng = stream_rng(seed, "init")
    return ModelParams(rng.uniform(-bound, bound, size=(num_items, k)), np.zeros(num_items))


class TrainingData:
    """Every (user, position >= 2) of the training prefixes with its precomputed context.

    Row ``offset[u] + t - 2`` holds the context of ``train_u[:t-1]``; the
    positive item of that row is ``train_u[t-1]`` (1-based t).
    """

    def __init__(self, split: SplitDataset, hyper: Hyperparams, patterns: PatternSet | None):
        self.num_items = split.num_items
        self.train = split.train
        lens = np.array([len(t) for t in split.train], dtype=np.int64)
        npos = np.maximum(lens - 1, 0)
        self.offset = np.concatenate([[0], np.cumsum(npos)])
        self.eligible = np.flatnonzero(lens >= 2)
        if len(self.eligible) == 0:
            raise ValueError("no user has at least two training items")
        prefixes = [t[:j] for t in split.train for j in range(1, len(t))]
        self.table: ContextTable = build_context_table(prefixes, hyper, patterns)
        self.positives = np.concatenate([t[1:] for t in split.train if len(t) >= 2]).astype(np.int64)
        # first occurrence index of each item per user; distinct-count lookup for full-coverage guard
        self._first: list = []
        self._first_sorted: list = []
        for t in split.train:
            first: dict = {}
            for idx, item in enumerate(t.tolist()):
                first.setdefault(item, idx)
            self._first.append(first)
            self._first_sorted.append(np.sort(np.fromiter(first.values(), dtype=np.int64, count=len(first))))

    def seen_before(self, u: int, item: int, t: int) -> bool:
        """Whether ``item`` occurs in the first ``t`` training items of ``u``."""
        return self._first[u].get(item, t) < t

    def distinct_upto(self, u: int, t: int) -> int:
        return int(np.searchsorted(self._first_sorted[u], t))


class Batch(NamedTuple):
    users: np.ndarray
    positions: np.ndarray  # 1-based t
    pos_items: np.ndarray
    neg_items: np.ndarray
    rows: np.ndarray


def sample_batch(data: TrainingData, rng: np.random.Generator, batch_size: int) -> Batch:
    """Uniform user, uniform position t in [2, |train_u|], uniform unseen negative (rejection)."""
    users = np.empty(batch_size, dtype=np.int64)
    ts = np.empty(batch_size, dtype=np.int64)
    negs = np.empty(batch_size, dtype=np.int64)
    n_items = data.num_items
    for n in range(batch_size):
        while True:
            u = int(data.eligible[rng.integers(len(data.eligible))])
            t = int(rng.integers(2, len(data.train[u]) + 1))
            if data.distinct_upto(u, t) < n_items:
                break
        while True:
            j = int(rng.integers(n_items))
            if not data.seen_before(u, j, t):
                break
        users[n], ts[n], negs[n] = u, t, j
    rows = data.offset[users] + ts - 2
    return Batch(users, ts, data.positives[rows], negs, rows)


@dataclass
class TrainState:
    params: ModelParams
    m_P: np.ndarray
    v_P: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    step: int = 0
    epoch: int = 0
    best_valid_auc: float = 0.0
    best_epoch: int = 0
    best_params: ModelParams | None = None

    @classmethod
    def fresh(cls, params: ModelParams) -> "TrainState":
        z = np.zeros_like
        return cls(params, z(params.embeddings), z(params.embeddings), z(params.biases), z(params.biases))


def objective_and_grad(params: ModelParams, hyper: Hyperparams, table: ContextTable, rows, pos, neg,
                       impl=None) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Mean BPR loss, full objective (+ lambda * ||theta||^2) and its gradient w.r.t. (P, beta)."""
    a, b = hyper.mixing()
    gP = np.zeros_like(params.embeddings)
    gb = np.zeros_like(params.biases)
    n = len(rows)
    loss = 0.0
    if n:
        loss = kernels.bpr_grad(params.embeddings, params.biases, table.long_ptr, table.long_idx,
                                table.short_ptr, table.short_idx, table.short_w, rows, pos, neg,
                                hyper.alpha, a, b, 1.0 / n, gP, gb, impl=impl) / n
    lam = hyper.lambda_reg
    reg = lam * (float(np.sum(params.embeddings ** 2)) + float(np.sum(params.biases ** 2)))
    if lam:
        gP += 2.0 * lam * params.embeddings
        gb += 2.0 * lam * params.biases
    return loss, loss + reg, gP, gb


def bpr_step(state: TrainState, batch: Batch, hyper: Hyperparams, table: ContextTable,
             config: TrainConfig) -> float:
    """One Adam update on ``batch``; returns the mean BPR loss before regularisation."""
    a, b = hyper.mixing()
    p = state.params
    gP = np.zeros_like(p.embeddings)
    gb = np.zeros_like(p.biases)
    n = len(batch.rows)
    loss = 0.0
    if n:
        loss = kernels.bpr_grad(p.embeddings, p.biases, table.long_ptr, table.long_idx, table.short_ptr,
                                table.short_idx, table.short_w, batch.rows, batch.pos_items, batch.neg_items,
                                hyper.alpha, a, b, 1.0 / n, gP, gb) / n
    if not (np.isfinite(gP).all() and np.isfinite(gb).all() and math.isfinite(loss)):
        bad = _first_bad_triple(p, hyper, table, batch)
        raise FloatingPointError(f"non-finite gradient at epoch {state.epoch}, step {state.step + 1}, triple {bad}")
    state.step += 1
    c = config
    kernels.adam_step(p.embeddings, gP, state.m_P, state.v_P, c.learning_rate, c.adam_beta1, c.adam_beta2,
                      c.adam_epsilon, state.step, hyper.lambda_reg)
    kernels.adam_step(p.biases, gb, state.m_b, state.v_b, c.learning_rate, c.adam_beta1, c.adam_beta2,
                      c.adam_epsilon, state.step, hyper.lambda_reg)
    return loss


def _first_bad_triple(p: ModelParams, hyper: Hyperparams, table: ContextTable, batch: Batch):
    for n in range(len(batch.rows)):
        sl = slice(n, n + 1)
        _, _, gP, gb = objective_and_grad(p, replace(hyper, lambda_reg=0.0), table, batch.rows[sl],
                                          batch.pos_items[sl], batch.neg_items[sl])
        if not (np.isfinite(gP).all() and np.isfinite(gb).all()):
            return {"user": int(batch.users[n]), "t": int(batch.positions[n]),
                    "pos": int(batch.pos_items[n]), "neg": int(batch.neg_items[n])}
    return None


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    valid_auc: float
    seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    best_epoch: int
    best_valid_auc: float
    log: list = field(default_factory=list)
    stopped_early: bool = False

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "valid_auc", "seconds"])
        for r in self.log:
            w.writerow([r.epoch, f"{r.loss:.6f}", f"{r.valid_auc:.6f}", f"{r.seconds:.3f}"])
        return buf.getvalue()


def train(split: SplitDataset, hyper: Hyperparams, config: TrainConfig, f: PatternSet | None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train until ``patience`` epochs pass without a validation-AUC gain; return the best snapshot."""
    data = TrainingData(split, hyper, f)
    vtask = make_valid_task(split)
    vtable = build_context_table(vtask.prefixes, hyper, f)
    state = TrainState.fresh(init_params(split.num_items, hyper.k, config.rng_seed))
    rng = stream_rng(config.rng_seed, "sampling")
    epoch_size = config.epoch_size or split.num_train_interactions()
    steps = max(1, math.ceil(epoch_size / config.batch_size))
    log: list = []
    stopped = False
    state.best_valid_auc = -1.0
    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        t0 = time.perf_counter()
        total = 0.0
        for _ in range(steps):
            batch = sample_batch(data, rng, config.batch_size)
            total += bpr_step(state, batch, hyper, data.table, config)
        vauc = validation_auc(state.params, hyper, vtable, vtask)
        rec = EpochRecord(epoch, total / steps, vauc, time.perf_counter() - t0)
        log.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        logger.debug("epoch %d loss %.5f valid_auc %.5f", epoch, rec.loss, vauc)
        if vauc > state.best_valid_auc:
            state.best_valid_auc = vauc
            state.best_epoch = epoch
            state.best_params = state.params.copy()
        elif epoch - state.best_epoch >= config.patience:
            stopped = True
            break
    return TrainResult(state.best_params, state.best_epoch, state.best_valid_auc, log, stopped)


@dataclass
class GridResult:
    best: Hyperparams
    best_result: TrainResult
    leaderboard: list  # dicts sorted by valid_auc, descending

    def leaderboard_csv(self) -> str:
        if not self.leaderboard:
            return ""
        buf = io.StringIO()
        fields = list(self.leaderboard[0])
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(self.leaderboard)
        return buf.getvalue()


def grid_size(grids: dict) -> int:
    return int(np.prod([len(v) for v in grids.values()])) if grids else 1


def grid_search(split: SplitDataset, grids: dict, config: TrainConfig, base: Hyperparams | None = None,
                patterns_cache: dict | None = None) -> GridResult:
    """Train every combination of ``grids`` (field name -> values) over ``base``; rank by validation AUC.

    Pattern sets are mined once per (min_count, max_size).
    """
    base = base or Hyperparams()
    names = list(grids)
    for n in names:
        if n not in Hyperparams.__dataclass_fields__:
            raise ValueError(f"unknown hyperparameter {n!r}")
    cache = patterns_cache if patterns_cache is not None else {}
    rows = []
    best = None
    for combo in itertools.product(*(grids[n] for n in names)):
        hyper = replace(base, **dict(zip(names, combo)))
        key = (hyper.min_count, hyper.max_size)
        if hyper.mc_order is None and key not in cache:
            cache[key] = mine_frequent_substrings(split.train, *key)
        f = cache.get(key) if hyper.mc_order is None else None
        res = train(split, hyper, config, f)
        row = {n: v for n, v in zip(names, combo)}
        row.update(valid_auc=res.best_valid_auc, best_epoch=res.best_epoch, epochs=len(res.log))
        rows.append(row)
        logger.info("grid %s -> valid_auc %.5f", row, res.best_valid_auc)
        if best is None or res.best_valid_auc > best[1].best_valid_auc:
            best = (hyper, res)
    order = sorted(range(len(rows)), key=lambda i: -rows[i]["valid_auc"])
    return GridResult(best[0], best[1], [rows[i] for i in order])
