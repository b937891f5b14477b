"""Item embeddings, long/short-term context vectors and the unified distance score."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import kernels
from .seqmine import MatchedContext, PatternSet, last_items_context, match_context


class Mode(str, enum.Enum):
    FULL = "full"
    LONG_TERM = "lt"
    SHORT_TERM = "st"


@dataclass(frozen=True)
class Hyperparams:
    k: int = 10
    alpha: float = 1.0
    gamma: float = 0.5
    no_gamma: bool = False
    lambda_reg: float = 0.0
    window: int | None = None  # None = whole prefix
    min_count: int = 2
    max_size: int = 3
    mc_order: int | None = None
    mode: Mode = Mode.FULL

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.mc_order is not None and self.mc_order < 1:
            raise ValueError("mc_order must be >= 1")
        if self.min_count < 1 or self.max_size < 1:
            raise ValueError("min_count and max_size must be >= 1")

    def mixing(self) -> tuple[float, float]:
        """Coefficients (long-term, short-term) of the combined context vector."""
        if self.mode is Mode.LONG_TERM:
            return 1.0, 0.0
        if self.mode is Mode.SHORT_TERM:
            return 0.0, 1.0
        if self.no_gamma:
            return 1.0, 1.0
        return self.gamma, 1.0 - self.gamma

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ModelParams:
    """``embeddings[i]`` is the k-vector of item i; ``biases[i]`` its bias."""

    embeddings: np.ndarray
    biases: np.ndarray

    @property
    def num_items(self) -> int:
        return self.embeddings.shape[0]

    @property
    def k(self) -> int:
        return self.embeddings.shape[1]

    @property
    def num_parameters(self) -> int:
        return self.embeddings.size + self.biases.size

    def copy(self) -> "ModelParams":
        return ModelParams(self.embeddings.copy(), self.biases.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.embeddings).all() and np.isfinite(self.biases).all())


@lru_cache(maxsize=256)
def _damping(r: int) -> tuple:
    z = np.arange(1, r + 1) / r - 1.0
    e = np.exp(z - z.max())
    return tuple(e / e.sum())


def damping_weights(r: int) -> np.ndarray:
    """Softmax of the ramp ``j/r - 1`` for j = 1..r, strictly increasing, summing to one."""
    if r < 1:
        raise ValueError("R must be >= 1")
    return np.array(_damping(int(r)))


@dataclass(frozen=True)
class ScoreContext:
    """Context of one user at one position.

    ``long_items`` is the sorted set of prefix items inside the window; the
    short-term part is a matched context with its damping weights.
    """

    long_items: np.ndarray
    short_ctx: MatchedContext
    eta: np.ndarray = field(repr=False)

    @property
    def short_items(self) -> np.ndarray:
        return np.asarray(self.short_ctx.items, dtype=np.int64)


def short_context(prefix: Sequence[int], hyper: Hyperparams, f: PatternSet | None) -> MatchedContext:
    if hyper.mc_order is not None:
        return last_items_context(prefix, hyper.mc_order)
    if f is None:
        raise ValueError("a PatternSet is required unless mc_order is set")
    return match_context(prefix, f)


def build_context(prefix: Sequence[int], hyper: Hyperparams, f: PatternSet | None) -> ScoreContext:
    """Context for predicting position t = len(prefix) + 1."""
    prefix = np.asarray(prefix, dtype=np.int64)
    if len(prefix) == 0:
        raise ValueError("empty history")
    window = prefix if hyper.window is None else prefix[-hyper.window:]
    sctx = short_context(prefix, hyper, f)
    return ScoreContext(np.unique(window), sctx, damping_weights(len(sctx.items)))


def long_term_vector(params: ModelParams, ctx: ScoreContext, i: int, alpha: float) -> np.ndarray:
    """Sum of window embeddings, item ``i`` excluded, scaled by ``1/|J|**alpha``; zero if J is empty."""
    j = ctx.long_items[ctx.long_items != i]
    if len(j) == 0:
        return np.zeros(params.k)
    return params.embeddings[j].sum(axis=0) / len(j) ** alpha


def short_term_vector(params: ModelParams, ctx: ScoreContext) -> np.ndarray:
    return ctx.eta @ params.embeddings[ctx.short_items]


def score(params: ModelParams, hyper: Hyperparams, ctx: ScoreContext, i: int) -> float:
    """Negated bias plus squared distance between the context vector and ``P_i``; higher is better."""
    a, b = hyper.mixing()
    v = np.zeros(params.k)
    if a:
        v = v + a * long_term_vector(params, ctx, i, hyper.alpha)
    if b:
        v = v + b * short_term_vector(params, ctx)
    d = v - params.embeddings[i]
    return -float(params.biases[i] + d @ d)


def score_all(params: ModelParams, hyper: Hyperparams, ctx: ScoreContext) -> np.ndarray:
    """Scores of every item, via one matrix-vector product plus a fix-up for window items."""
    a, b = hyper.mixing()
    P = params.embeddings
    n = len(ctx.long_items)
    s_sum = P[ctx.long_items].sum(axis=0) if n else np.zeros(params.k)
    st = short_term_vector(params, ctx) if b else np.zeros(params.k)
    lt = s_sum / n ** hyper.alpha if n else np.zeros(params.k)
    v = a * lt + b * st
    sq = np.einsum("ij,ij->i", P, P)
    out = -(params.biases + (v @ v) - 2.0 * (P @ v) + sq)
    if a and n:
        # candidates inside the window drop themselves from the long-term sum
        Pc = P[ctx.long_items]
        if n > 1:
            lt_c = (s_sum - Pc) / (n - 1) ** hyper.alpha
        else:
            lt_c = np.zeros_like(Pc)
        d = a * lt_c + b * st - Pc
        out[ctx.long_items] = -(params.biases[ctx.long_items] + np.einsum("ij,ij->i", d, d))
    return out


def top_n_from_scores(scores: np.ndarray, n: int, exclude=()) -> np.ndarray:
    """Highest scores first, ties by ascending id, excluded ids removed."""
    mask = np.ones(len(scores), dtype=bool)
    excl = np.asarray(list(exclude) if not isinstance(exclude, np.ndarray) else exclude, dtype=np.int64)
    mask[excl] = False
    ids = np.flatnonzero(mask)
    order = np.lexsort((ids, -scores[ids]))
    return ids[order[:n]]


def recommend_top_n(params: ModelParams, hyper: Hyperparams, history: Sequence[int], f: PatternSet | None,
                    n: int, exclude=()) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    ctx = build_context(history, hyper, f)
    return top_n_from_scores(score_all(params, hyper, ctx), n, exclude)


# -- flattened contexts for the batched kernels -------------------------------

@dataclass(frozen=True)
class ContextTable:
    """Many contexts in CSR layout: row r has long items ``long_idx[long_ptr[r]:long_ptr[r+1]]`` etc."""

    long_ptr: np.ndarray
    long_idx: np.ndarray
    short_ptr: np.ndarray
    short_idx: np.ndarray
    short_w: np.ndarray
    matched: tuple = field(default=(), repr=False)

    def __len__(self) -> int:
        return len(self.long_ptr) - 1

    def long_items(self, r: int) -> np.ndarray:
        return self.long_idx[self.long_ptr[r]:self.long_ptr[r + 1]]

    def short_items(self, r: int) -> np.ndarray:
        return self.short_idx[self.short_ptr[r]:self.short_ptr[r + 1]]

    def short_weights(self, r: int) -> np.ndarray:
        return self.short_w[self.short_ptr[r]:self.short_ptr[r + 1]]


def build_context_table(prefixes: Sequence[Sequence[int]], hyper: Hyperparams, f: PatternSet | None,
                        keep_matches: bool = False) -> ContextTable:
    long_parts, short_parts, w_parts, matched = [], [], [], []
    long_len = np.zeros(len(prefixes), dtype=np.int64)
    short_len = np.zeros(len(prefixes), dtype=np.int64)
    for r, prefix in enumerate(prefixes):
        if len(prefix) == 0:
            raise ValueError(f"empty prefix at row {r}")
        window = prefix if hyper.window is None else prefix[-hyper.window:]
        li = np.unique(np.asarray(window, dtype=np.int32))
        sctx = short_context(prefix, hyper, f)
        long_parts.append(li)
        short_parts.append(sctx.items)
        w_parts.append(_damping(len(sctx.items)))
        long_len[r] = len(li)
        short_len[r] = len(sctx.items)
        if keep_matches:
            matched.append(sctx)
    cat = np.concatenate
    return ContextTable(
        long_ptr=np.concatenate([[0], np.cumsum(long_len)]).astype(np.int64),
        long_idx=(cat(long_parts) if long_parts else np.zeros(0)).astype(np.int32),
        short_ptr=np.concatenate([[0], np.cumsum(short_len)]).astype(np.int64),
        short_idx=np.fromiter((i for p in short_parts for i in p), dtype=np.int32, count=int(short_len.sum())),
        short_w=np.fromiter((w for p in w_parts for w in p), dtype=np.float64, count=int(short_len.sum())),
        matched=tuple(matched),
    )


def batch_scores(params: ModelParams, hyper: Hyperparams, table: ContextTable, rows: np.ndarray) -> np.ndarray:
    """Score matrix (len(rows), num_items) for contexts ``rows`` of ``table``; equals score_all row-wise."""
    a, b = hyper.mixing()
    P = params.embeddings
    rows = np.asarray(rows, dtype=np.int64)
    V = kernels.context_vectors(P, table.long_ptr, table.long_idx, table.short_ptr, table.short_idx,
                                table.short_w, rows, hyper.alpha, a, b)
    sq = np.einsum("ij,ij->i", P, P)
    out = 2.0 * (V @ P.T)
    out -= np.einsum("ij,ij->i", V, V)[:, None]
    out -= (params.biases + sq)[None, :]
    if a:
        for n_row, r in enumerate(rows):
            li = table.long_items(r)
            n = len(li)
            if n == 0:
                continue
            Pc = P[li]
            s_sum = Pc.sum(axis=0)
            st = table.short_weights(r) @ P[table.short_items(r)] if b else 0.0
            lt_c = (s_sum - Pc) / (n - 1) ** hyper.alpha if n > 1 else np.zeros_like(Pc)
            d = a * lt_c + b * st - Pc
            out[n_row, li] = -(params.biases[li] + np.einsum("ij,ij->i", d, d))
    return out


def param_count(num_items: int, k: int) -> int:
    return num_items * (k + 1)


def xavier_bound(k: int) -> float:
    return math.sqrt(6.0 / (k + k))
