"""Full-catalogue ranking evaluation: AUC, HIT/NDCG, POP/DIV, cold-start, pattern statistics."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import ColdStartPartition, SplitDataset
from .model import Hyperparams, ModelParams, batch_scores, build_context_table
from .seqmine import MatchClass, PatternSet, classify_match, match_context

HIT_CUTOFFS = (5, 10, 25, 50)
POP_CUTOFFS = (1, 5, 25)
CHUNK = 512


@dataclass(frozen=True)
class EvalTask:
    """One ranking problem per row: a history, its ground-truth item, items not to rank."""

    prefixes: tuple
    ground_truth: np.ndarray
    excluded: tuple
    num_items: int

    def __len__(self) -> int:
        return len(self.prefixes)


def make_test_task(split: SplitDataset) -> EvalTask:
    prefixes = tuple(s[:-1] for s in split.dataset.sequences)
    return EvalTask(prefixes, np.asarray(split.test_item), tuple(split.excluded_candidates(u)
                    for u in range(split.num_users)), split.num_items)


def make_valid_task(split: SplitDataset) -> EvalTask:
    return EvalTask(tuple(split.train), np.asarray(split.valid_item),
                    tuple(np.unique(t) for t in split.train), split.num_items)


def make_cold_task(partition: ColdStartPartition) -> EvalTask:
    return EvalTask(tuple(partition.histories), np.asarray(partition.test_items),
                    tuple(np.unique(h) for h in partition.histories), partition.main.num_items)


# -- scorers -------------------------------------------------------------------

class RebusScorer:
    def __init__(self, params: ModelParams, hyper: Hyperparams, patterns: PatternSet | None):
        self.params = params
        self.hyper = hyper
        self.patterns = patterns

    def prepare(self, task: EvalTask):
        return build_context_table(task.prefixes, self.hyper, self.patterns)

    def scores(self, state, rows: np.ndarray) -> np.ndarray:
        return batch_scores(self.params, self.hyper, state, rows)


class PopularityScorer:
    """Training interaction counts, identical for every user."""

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.float64)

    def prepare(self, task: EvalTask):
        return None

    def scores(self, state, rows: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.counts, (len(rows), len(self.counts))).copy()


class RandomScorer:
    """I.i.d. uniform scores, reproducible per (seed, row)."""

    def __init__(self, num_items: int, seed: int = 0):
        self.num_items = num_items
        self.seed = seed

    def prepare(self, task: EvalTask):
        return None

    def scores(self, state, rows: np.ndarray) -> np.ndarray:
        return np.stack([np.random.default_rng([self.seed, int(r)]).random(self.num_items) for r in rows])


def pop_baseline(split: SplitDataset) -> PopularityScorer:
    return PopularityScorer(split.train_popularity())


# -- ranking -------------------------------------------------------------------

@dataclass(frozen=True)
class RankingOutcome:
    user: int
    gt_rank: int
    num_candidates: int
    top_items: tuple = ()


def gt_ranks(scores: np.ndarray, gt: np.ndarray, excluded: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """1-based rank of each row's ground truth among its candidates, and the candidate count.

    Candidates are all items minus ``excluded``, plus the ground truth. An
    equal score outranks the ground truth when its id is smaller.
    """
    n_rows, n_items = scores.shape
    mask = np.ones((n_rows, n_items), dtype=bool)
    if n_rows:
        lens = [len(e) for e in excluded]
        r_idx = np.repeat(np.arange(n_rows), lens)
        c_idx = np.concatenate([np.asarray(e, dtype=np.int64) for e in excluded]) if sum(lens) else np.zeros(0, int)
        mask[r_idx, c_idx] = False
    mask[np.arange(n_rows), gt] = False
    s_g = scores[np.arange(n_rows), gt][:, None]
    ids = np.arange(n_items)[None, :]
    beats = (scores > s_g) | ((scores == s_g) & (ids < gt[:, None]))
    rank = 1 + (beats & mask).sum(axis=1)
    return rank, mask.sum(axis=1) + 1


def top_items(scores: np.ndarray, n: int, exclude: np.ndarray) -> np.ndarray:
    """Ids of the ``n`` best scores (ties by ascending id), skipping ``exclude``."""
    s = scores.astype(np.float64, copy=True)
    s[np.asarray(exclude, dtype=np.int64)] = -np.inf
    valid = len(s) - len(np.unique(exclude))
    n = min(n, valid)
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    if n < len(s):
        thresh = np.partition(s, len(s) - n)[len(s) - n]
        cand = np.flatnonzero(s >= thresh)
    else:
        cand = np.arange(len(s))
    cand = cand[np.isfinite(s[cand])]
    order = np.lexsort((cand, -s[cand]))
    return cand[order[:n]]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("REBUS_THREADS", "1")))
    except ValueError:
        return 1


def rank_outcomes(scorer, task: EvalTask, top_n: int = max(HIT_CUTOFFS), chunk: int = CHUNK) -> list:
    """Rank every row of ``task``; rows are processed in fixed-size chunks, in order."""
    state = scorer.prepare(task)
    starts = list(range(0, len(task), chunk))

    def run(lo):
        rows = np.arange(lo, min(lo + chunk, len(task)))
        S = scorer.scores(state, rows)
        excl = [task.excluded[r] for r in rows]
        ranks, ncand = gt_ranks(S, task.ground_truth[rows], excl)
        tops = [tuple(int(i) for i in top_items(S[n], top_n, excl[n])) for n in range(len(rows))] if top_n else None
        return [RankingOutcome(int(r), int(ranks[n]), int(ncand[n]), tops[n] if tops else ())
                for n, r in enumerate(rows)]

    workers = _threads()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(lo) for lo in starts]
    return [o for p in parts for o in p]


def rank_ground_truth(scorer, task: EvalTask, row: int) -> RankingOutcome:
    state = scorer.prepare(EvalTask((task.prefixes[row],), task.ground_truth[row:row + 1],
                                    (task.excluded[row],), task.num_items))
    S = scorer.scores(state, np.array([0]))
    rank, n = gt_ranks(S, task.ground_truth[row:row + 1], [task.excluded[row]])
    return RankingOutcome(row, int(rank[0]), int(n[0]), tuple(int(i) for i in top_items(S[0], 50, task.excluded[row])))


# -- metrics -------------------------------------------------------------------

def auc(outcomes: Sequence[RankingOutcome]) -> float:
    """Mean fraction of negatives ranked below the ground truth (rows with no negatives skipped)."""
    vals = [(o.num_candidates - o.gt_rank) / (o.num_candidates - 1) for o in outcomes if o.num_candidates > 1]
    if not vals:
        raise ValueError("no rankable outcomes")
    return float(np.mean(vals))


def hit_ndcg(outcomes: Sequence[RankingOutcome], cutoffs=HIT_CUTOFFS) -> tuple[dict, dict]:
    ranks = np.array([o.gt_rank for o in outcomes], dtype=np.float64)
    hit, ndcg = {}, {}
    for x in cutoffs:
        inside = ranks <= x
        hit[x] = float(inside.mean())
        ndcg[x] = float(np.where(inside, 1.0 / np.log2(ranks + 1.0), 0.0).mean())
    return hit, ndcg


def pop_div(top_lists: Sequence[Sequence[int]], popularity: np.ndarray, num_items: int,
            cutoffs=POP_CUTOFFS) -> tuple[dict, dict]:
    """POP_X: share of top-X slots taken by the X most popular items. DIV_X: distinct top-X items / |I|."""
    popularity = np.asarray(popularity, dtype=np.float64)
    rank_by_pop = np.lexsort((np.arange(len(popularity)), -popularity))
    pop, div = {}, {}
    for x in cutoffs:
        popular = set(int(i) for i in rank_by_pop[:x])
        slots = hits = 0
        seen = set()
        for lst in top_lists:
            lst = lst[:x]
            slots += len(lst)
            hits += sum(1 for i in lst if i in popular)
            seen.update(lst)
        pop[x] = hits / slots if slots else 0.0
        div[x] = len(seen) / num_items
    return pop, div


# -- pattern statistics -------------------------------------------------------------

@dataclass
class PatternStats:
    percent: dict  # class letter -> percentage
    mean_size: float
    mean_occupation: float
    count: int

    def to_row(self, label: str = "") -> dict:
        row = {"dataset": label}
        for c in MatchClass:
            row[c.value] = round(self.percent[c.value], 4)
        row["F"] = round(self.mean_size, 4)
        row["G"] = round(self.mean_occupation, 4)
        return row


def pattern_stats(f: PatternSet, prefixes: Sequence[Sequence[int]]) -> PatternStats:
    """Match-class shares over ``prefixes``; size and occupation averaged over matched prefixes."""
    counts = {c.value: 0 for c in MatchClass}
    sizes, occs = [], []
    for p in prefixes:
        if len(p) == 0:
            continue
        st = classify_match(p, match_context(p, f))
        counts[st.match_class.value] += 1
        if st.match_class is not MatchClass.NO_MATCH:
            sizes.append(st.size)
            occs.append(st.occupation)
    total = sum(counts.values())
    pct = {c: (100.0 * n / total if total else 0.0) for c, n in counts.items()}
    return PatternStats(pct, float(np.mean(sizes)) if sizes else 0.0,
                        float(np.mean(occs)) if occs else 0.0, total)


def pattern_stats_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["dataset", "A", "B", "C", "D", "E", "F", "G"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# -- reports -------------------------------------------------------------------

@dataclass
class EvalReport:
    auc: float
    hit: dict
    ndcg: dict
    pop: dict
    div: dict
    num_users: int
    pattern_stats: PatternStats | None = None
    empty: bool = False
    runtime_seconds: float | None = field(default=None, compare=False)

    def check_invariants(self) -> None:
        rates = [self.auc, *self.hit.values(), *self.ndcg.values(), *self.pop.values(), *self.div.values()]
        if self.empty:
            return
        for r in rates:
            if not (0.0 <= r <= 1.0) or math.isnan(r):
                raise AssertionError(f"rate out of range: {r}")
        cuts = sorted(self.hit)
        for lo, hi in zip(cuts, cuts[1:]):
            if self.hit[lo] > self.hit[hi]:
                raise AssertionError("HIT not monotone in cutoff")
        for x in cuts:
            if self.ndcg[x] > self.hit[x] + 1e-15:
                raise AssertionError("NDCG exceeds HIT")
        if self.pattern_stats is not None and self.pattern_stats.count:
            total = sum(self.pattern_stats.percent.values())
            if abs(total - 100.0) > 0.01:
                raise AssertionError(f"pattern classes sum to {total}")

    def to_dict(self) -> dict:
        d = {
            "num_users": self.num_users,
            "empty": self.empty,
            "auc": self.auc,
            "hit": {str(k): v for k, v in self.hit.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "pop": {str(k): v for k, v in self.pop.items()},
            "div": {str(k): v for k, v in self.div.items()},
        }
        if self.pattern_stats is not None:
            ps = self.pattern_stats
            d["pattern_stats"] = {"percent": ps.percent, "mean_size": ps.mean_size,
                                  "mean_occupation": ps.mean_occupation, "count": ps.count}
        if self.runtime_seconds is not None:
            d["runtime_seconds"] = self.runtime_seconds
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "cutoff", "value"])
        w.writerow(["AUC", "", repr(self.auc)])
        for name, m in (("HIT", self.hit), ("NDCG", self.ndcg), ("POP", self.pop), ("DIV", self.div)):
            for x, v in m.items():
                w.writerow([name, x, repr(v)])
        return buf.getvalue()


def evaluate(scorer, task: EvalTask, popularity: np.ndarray, patterns: PatternSet | None = None) -> EvalReport:
    """All metrics for ``task``. Pattern statistics are added when ``patterns`` is given."""
    if len(task) == 0:
        nan = float("nan")
        return EvalReport(nan, {x: nan for x in HIT_CUTOFFS}, {x: nan for x in HIT_CUTOFFS},
                          {x: nan for x in POP_CUTOFFS}, {x: nan for x in POP_CUTOFFS}, 0, empty=True)
    outcomes = rank_outcomes(scorer, task)
    hit, ndcg = hit_ndcg(outcomes)
    pop, div = pop_div([o.top_items for o in outcomes], popularity, task.num_items)
    stats = pattern_stats(patterns, task.prefixes) if patterns is not None else None
    return EvalReport(auc(outcomes), hit, ndcg, pop, div, len(task), stats)


def validation_auc(params: ModelParams, hyper: Hyperparams, table, task: EvalTask, chunk: int = CHUNK) -> float:
    """AUC on a prepared context table (used every epoch by the trainer; no top lists)."""
    vals = []
    for lo in range(0, len(task), chunk):
        rows = np.arange(lo, min(lo + chunk, len(task)))
        S = batch_scores(params, hyper, table, rows)
        rank, n = gt_ranks(S, task.ground_truth[rows], [task.excluded[r] for r in rows])
        ok = n > 1
        vals.append((n[ok] - rank[ok]) / (n[ok] - 1))
    v = np.concatenate(vals)
    return float(v.mean()) if len(v) else float("nan")


def cold_start_eval(scorer, partition: ColdStartPartition, popularity: np.ndarray) -> EvalReport:
    """Metrics for users held out of training; history is the context, last item the target."""
    return evaluate(scorer, make_cold_task(partition), popularity)
