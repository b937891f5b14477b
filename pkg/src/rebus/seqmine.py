"""Frequent substring mining and wildcard context matching."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence


class PatternSet:
    """Frequent substrings with their document-frequency support.

    Patterns are tuples of item ids. Lookup is by exact tuple.
    """

    __slots__ = ("_support", "min_count", "max_size", "_items")

    def __init__(self, support: Mapping[tuple, int], min_count: int, max_size: int):
        self._support = dict(support)
        self.min_count = int(min_count)
        self.max_size = int(max_size)
        self._items = frozenset(p[0] for p in self._support if len(p) == 1)

    @classmethod
    def from_patterns(cls, patterns: Iterable[Sequence[int]], min_count: int = 1) -> "PatternSet":
        """Wrap an explicit collection (support recorded as ``min_count``)."""
        pats = {tuple(int(i) for i in p): min_count for p in patterns}
        return cls(pats, min_count, max((len(p) for p in pats), default=0))

    def __contains__(self, pattern) -> bool:
        return tuple(pattern) in self._support

    def __len__(self) -> int:
        return len(self._support)

    def __iter__(self):
        return iter(sorted(self._support, key=_pattern_key))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PatternSet):
            return NotImplemented
        return (self._support == other._support and self.min_count == other.min_count
                and self.max_size == other.max_size)

    def has_item(self, item: int) -> bool:
        return item in self._items

    def support(self, pattern) -> int:
        return self._support[tuple(pattern)]

    def patterns(self) -> set:
        return set(self._support)

    def items(self):
        """(pattern, support) pairs in canonical order."""
        return [(p, self._support[p]) for p in self]


def _pattern_key(p: tuple) -> tuple:
    return (len(p), p)


def mine_frequent_substrings(train: Iterable[Sequence[int]], min_count: int, max_size: int) -> PatternSet:
    """All contiguous substrings of length <= ``max_size`` found in >= ``min_count`` sequences.

    Level-wise: a length-n window is a candidate only if both of its
    length-(n-1) sub-windows are frequent. Each sequence counts at most once
    per pattern.
    """
    if min_count < 1 or max_size < 1:
        raise ValueError("min_count and max_size must be >= 1")
    seqs = [tuple(int(i) for i in s) for s in train]
    counts: Counter = Counter()
    for s in seqs:
        counts.update(set((i,) for i in s))
    frequent = {p: c for p, c in counts.items() if c >= min_count}
    support = dict(frequent)
    # start positions whose current-level window is frequent
    active = [[i for i in range(len(s)) if (s[i],) in frequent] for s in seqs]

    for n in range(2, max_size + 1):
        if not frequent:
            break
        counts = Counter()
        cand_pos = []
        for s, act in zip(seqs, active):
            pos = [i for i, j in zip(act, act[1:]) if j == i + 1]
            cand_pos.append(pos)
            counts.update(set(s[i:i + n] for i in pos))
        frequent = {p: c for p, c in counts.items() if c >= min_count}
        support.update(frequent)
        active = [[i for i in pos if s[i:i + n] in frequent] for s, pos in zip(seqs, cand_pos)]
    return PatternSet(support, min_count, max_size)


@dataclass(frozen=True)
class MatchedContext:
    """Items of the chosen pattern and their 1-based positions in the prefix."""

    items: tuple
    positions: tuple
    is_fallback: bool

    def __len__(self) -> int:
        return len(self.items)


def match_context(prefix: Sequence[int], f: PatternSet) -> MatchedContext:
    """Backward greedy exact matching with wildcards.

    The most recent prefix item belonging to ``f`` seeds the path; scanning
    further back, an item is prepended whenever the extended path is in ``f``.
    With no seed the context is the last prefix item.
    """
    n = len(prefix)
    if n == 0:
        raise ValueError("empty prefix")
    path: list = []
    pos: list = []
    limit = f.max_size
    for idx in range(n - 1, -1, -1):
        item = int(prefix[idx])
        if not path:
            if f.has_item(item):
                path.append(item)
                pos.append(idx + 1)
        else:
            if len(path) >= limit:
                break  # nothing longer than max_size is stored
            if (item, *reversed(path)) in f:
                path.append(item)
                pos.append(idx + 1)
    if not path:
        return MatchedContext((int(prefix[-1]),), (n,), True)
    return MatchedContext(tuple(reversed(path)), tuple(reversed(pos)), False)


def last_items_context(prefix: Sequence[int], order: int) -> MatchedContext:
    """Fixed-order Markov context: the last ``min(order, len(prefix))`` items."""
    n = len(prefix)
    if n == 0:
        raise ValueError("empty prefix")
    k = min(order, n)
    return MatchedContext(tuple(int(i) for i in prefix[n - k:]), tuple(range(n - k + 1, n + 1)), False)


class MatchClass(str, enum.Enum):
    NO_MATCH = "A"
    MC1 = "B"
    MC1_OLD = "C"
    MCL = "D"
    SEQ = "E"


class MatchStats(NamedTuple):
    match_class: MatchClass
    size: int
    occupation: int


def classify_match(prefix: Sequence[int], ctx: MatchedContext) -> MatchStats:
    """Categorise a context: no match, 1st-order chain (recent / old), L-order chain, or gapped.

    A multi-item match that is contiguous but does not end at the most recent
    item is not a Markov chain over the latest items and is reported as gapped.
    """
    n = len(prefix)
    size = len(ctx.items)
    occupation = ctx.positions[-1] - ctx.positions[0] + 1
    if ctx.is_fallback:
        return MatchStats(MatchClass.NO_MATCH, size, occupation)
    if size == 1:
        cls = MatchClass.MC1 if ctx.positions[0] == n else MatchClass.MC1_OLD
        return MatchStats(cls, 1, 1)
    if occupation == size and ctx.positions[-1] == n:
        return MatchStats(MatchClass.MCL, size, occupation)
    return MatchStats(MatchClass.SEQ, size, occupation)


# -- text format -------------------------------------------------------------

def dump_patterns(f: PatternSet) -> str:
    """``item,item,...<TAB>support`` lines, ordered by length then items."""
    return "".join(",".join(map(str, p)) + "\t" + str(c) + "\n" for p, c in f.items())


def load_patterns(text: str, min_count: int | None = None, max_size: int | None = None) -> PatternSet:
    support = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            pat, cnt = line.split("\t")
            support[tuple(int(x) for x in pat.split(","))] = int(cnt)
        except ValueError:
            raise ValueError(f"pattern file line {lineno}: malformed {line!r}") from None
    if min_count is None:
        min_count = min(support.values(), default=1)
    if max_size is None:
        max_size = max((len(p) for p in support), default=0)
    return PatternSet(support, min_count, max_size)
