"""Interaction logs, k-core filtering, leave-one-out and cold-start splits.

Items and users are reindexed densely; a user's sequence is ordered oldest first.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

MAGIC = b"REBUSDAT"
FORMAT_VERSION = 1
CORE = 5
MAX_COLD_HISTORY = 4

_HEADER = struct.Struct("<8sIIIQ")


class EventFormatError(ValueError):
    """A line of an event log could not be parsed."""

    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class EmptyDatasetError(ValueError):
    """Nothing survives filtering."""


class RawEvent(NamedTuple):
    user_key: str
    item_key: str
    timestamp: int


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Reindexed implicit-feedback corpus.

    ``sequences[u]`` is the chronologically ordered int32 array of item ids for
    user ``u``; ``user_keys`` / ``item_keys`` map dense ids back to raw keys.
    """

    num_items: int
    sequences: tuple
    user_keys: tuple
    item_keys: tuple

    @property
    def num_users(self) -> int:
        return len(self.sequences)

    @property
    def num_actions(self) -> int:
        return int(sum(len(s) for s in self.sequences))

    @property
    def item_popularity(self) -> np.ndarray:
        if not self.sequences:
            return np.zeros(self.num_items, dtype=np.int64)
        return np.bincount(np.concatenate(self.sequences), minlength=self.num_items)

    def stats(self) -> dict:
        n_u, n_i, n_a = self.num_users, self.num_items, self.num_actions
        return {
            "num_users": n_u,
            "num_items": n_i,
            "num_actions": n_a,
            "actions_per_user": n_a / n_u if n_u else 0.0,
            "actions_per_item": n_a / n_i if n_i else 0.0,
            "sparsity": 1.0 - n_a / (n_u * n_i) if n_u and n_i else 1.0,
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_items == other.num_items
            and self.user_keys == other.user_keys
            and self.item_keys == other.item_keys
            and len(self.sequences) == len(other.sequences)
            and all(
                a.dtype == b.dtype and np.array_equal(a, b)
                for a, b in zip(self.sequences, other.sequences)
            )
        )

    @classmethod
    def from_sequences(cls, sequences: Sequence[Sequence[int]], num_items: int | None = None,
                       user_keys=None, item_keys=None) -> "Dataset":
        """Build directly from integer sequences (no filtering). Handy for tests."""
        seqs = tuple(_freeze(np.asarray(s, dtype=np.int32).copy()) for s in sequences)
        if num_items is None:
            num_items = int(max((int(s.max()) for s in seqs if len(s)), default=-1)) + 1
        for s in seqs:
            if len(s) and (s.min() < 0 or s.max() >= num_items):
                raise ValueError("item id out of range")
        if user_keys is None:
            user_keys = tuple(str(u) for u in range(len(seqs)))
        if item_keys is None:
            item_keys = tuple(str(i) for i in range(num_items))
        return cls(int(num_items), seqs, tuple(user_keys), tuple(item_keys))


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Leave-one-out split: train prefix, validation item, test item per user."""

    dataset: Dataset
    train: tuple
    valid_item: np.ndarray
    test_item: np.ndarray
    _excluded: tuple = field(repr=False)

    @property
    def num_users(self) -> int:
        return len(self.train)

    @property
    def num_items(self) -> int:
        return self.dataset.num_items

    def excluded_candidates(self, u: int) -> np.ndarray:
        """Sorted unique items of train + validation, omitted when ranking the test item."""
        return self._excluded[u]

    def train_popularity(self) -> np.ndarray:
        if not self.train:
            return np.zeros(self.num_items, dtype=np.int64)
        return np.bincount(np.concatenate(self.train), minlength=self.num_items)

    def num_train_interactions(self) -> int:
        return int(sum(len(t) for t in self.train))


@dataclass(frozen=True, eq=False)
class ColdStartPartition:
    """The k-core part plus users filtered out of it whose items all survive."""

    main: Dataset
    cold_keys: tuple
    histories: tuple
    test_items: np.ndarray

    @property
    def num_cold(self) -> int:
        return len(self.histories)

    def as_dataset(self) -> Dataset:
        """Cold users as a dataset in main's item space (history followed by test item)."""
        seqs = [np.append(h, t) for h, t in zip(self.histories, self.test_items)]
        return Dataset.from_sequences(seqs, self.main.num_items, self.cold_keys, self.main.item_keys)


def _detect_delimiter(line: str) -> str:
    for d in ("\t", "::", ","):
        if d in line:
            return d
    raise ValueError("cannot detect delimiter (expected tab, '::' or comma)")


def read_events(path, timestamp_col: int = 2, delimiter: str | None = None) -> Iterator[RawEvent]:
    """Yield events from a delimited log with ``user, item, ..., timestamp`` columns.

    Blank lines and ``#`` comments are skipped. A first line whose timestamp
    field is not an integer is taken as a header.
    """
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            if delimiter is None:
                try:
                    delimiter = _detect_delimiter(line)
                except ValueError as exc:
                    raise EventFormatError(lineno, line, str(exc)) from None
            fields = [f.strip() for f in line.split(delimiter)]
            if len(fields) <= max(1, timestamp_col):
                raise EventFormatError(lineno, line, f"expected at least {max(2, timestamp_col) + 1} fields")
            user, item, ts = fields[0], fields[1], fields[timestamp_col]
            try:
                ts_val = int(ts)
            except ValueError:
                try:
                    ts_f = float(ts)
                except ValueError:
                    ts_f = None
                if ts_f is None or not np.isfinite(ts_f):
                    if lineno == 1:
                        continue
                    raise EventFormatError(lineno, line, "timestamp is not a finite number") from None
                ts_val = int(ts_f)
            if not user or not item:
                raise EventFormatError(lineno, line, "empty user or item key")
            yield RawEvent(user, item, ts_val)


def _core_filter(users: np.ndarray, items: np.ndarray, core: int) -> np.ndarray:
    """Boolean mask of events surviving iterated k-core filtering."""
    alive = np.ones(len(users), dtype=bool)
    n_u = int(users.max()) + 1 if len(users) else 0
    n_i = int(items.max()) + 1 if len(items) else 0
    while True:
        uc = np.bincount(users[alive], minlength=n_u)
        ic = np.bincount(items[alive], minlength=n_i)
        keep = alive & (uc[users] >= core) & (ic[items] >= core)
        if keep.sum() == alive.sum():
            return keep
        alive = keep


def _encode(keys: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    """Codes in order of first appearance."""
    table: dict[str, int] = {}
    codes = np.fromiter((table.setdefault(k, len(table)) for k in keys), dtype=np.int64, count=len(keys))
    return codes, list(table)


def _build(user_codes, item_codes, stamps, order_idx, user_names, item_names, mask) -> Dataset:
    u, i, ts, idx = user_codes[mask], item_codes[mask], stamps[mask], order_idx[mask]
    # dense ids by first appearance among surviving events (idx is input order)
    _, first_u = np.unique(u, return_index=True)
    u_old = u[np.sort(first_u)]
    u_map = np.full(len(user_names), -1, dtype=np.int64)
    u_map[u_old] = np.arange(len(u_old))
    _, first_i = np.unique(i, return_index=True)
    i_old = i[np.sort(first_i)]
    i_map = np.full(len(item_names), -1, dtype=np.int64)
    i_map[i_old] = np.arange(len(i_old))
    nu, ni = u_map[u], i_map[i]
    order = np.lexsort((idx, ts, nu))  # stable: timestamp ties keep input order
    nu, ni = nu[order], ni[order].astype(np.int32)
    bounds = np.searchsorted(nu, np.arange(len(u_old) + 1))
    seqs = tuple(_freeze(ni[bounds[k]:bounds[k + 1]].copy()) for k in range(len(u_old)))
    return Dataset(
        num_items=len(i_old),
        sequences=seqs,
        user_keys=tuple(user_names[k] for k in u_old),
        item_keys=tuple(item_names[k] for k in i_old),
    )


def _columns(events: Iterable) -> tuple:
    evs = [e if isinstance(e, RawEvent) else RawEvent(*e) for e in events]
    if not evs:
        raise EmptyDatasetError("no events")
    for n, e in enumerate(evs, start=1):
        if not e.user_key or not e.item_key:
            raise EventFormatError(n, repr(e), "empty user or item key")
    ucodes, unames = _encode([e.user_key for e in evs])
    icodes, inames = _encode([e.item_key for e in evs])
    stamps = np.array([e.timestamp for e in evs], dtype=np.int64)
    return ucodes, icodes, stamps, np.arange(len(evs)), unames, inames


def ingest(events: Iterable, core: int = CORE) -> Dataset:
    """Implicit conversion, iterated ``core``-core filtering, dense reindexing, chronological sort."""
    ucodes, icodes, stamps, idx, unames, inames = _columns(events)
    mask = _core_filter(ucodes, icodes, core)
    if not mask.any():
        raise EmptyDatasetError("no qualifying users")
    return _build(ucodes, icodes, stamps, idx, unames, inames, mask)


def truncate_recent(d: Dataset, x: int) -> Dataset:
    """Keep each user's ``x`` most recent items; items that vanish are dropped and ids compacted."""
    if x < 1:
        raise ValueError("x must be >= 1")
    tails = [s[-x:] for s in d.sequences]
    present = np.zeros(d.num_items, dtype=bool)
    for s in tails:
        present[s] = True
    remap = np.cumsum(present) - 1
    seqs = tuple(_freeze(remap[s].astype(np.int32)) for s in tails)
    keys = tuple(k for k, p in zip(d.item_keys, present) if p)
    return Dataset(int(present.sum()), seqs, d.user_keys, keys)


def split(d: Dataset) -> SplitDataset:
    """Last item is the test target, second-to-last the validation target."""
    train, valid, test, excl = [], [], [], []
    for u, s in enumerate(d.sequences):
        if len(s) < 3:
            raise ValueError(f"user {u} ({d.user_keys[u]!r}) has {len(s)} interactions; need at least 3")
        train.append(s[:-2])
        valid.append(s[-2])
        test.append(s[-1])
        excl.append(_freeze(np.unique(s[:-1])))
    return SplitDataset(
        dataset=d,
        train=tuple(train),
        valid_item=_freeze(np.array(valid, dtype=np.int32)),
        test_item=_freeze(np.array(test, dtype=np.int32)),
        _excluded=tuple(excl),
    )


def cold_start_split(events: Iterable, core: int = CORE) -> ColdStartPartition:
    """Split into the k-core part and cold users whose main-item interactions number at least two."""
    ucodes, icodes, stamps, idx, unames, inames = _columns(events)
    mask = _core_filter(ucodes, icodes, core)
    if not mask.any():
        raise EmptyDatasetError("no qualifying users")
    main = _build(ucodes, icodes, stamps, idx, unames, inames, mask)

    main_users = set(main.user_keys)
    item_id = {k: n for n, k in enumerate(main.item_keys)}
    per_user: dict[int, list] = {}
    for n in range(len(ucodes)):
        uname = unames[ucodes[n]]
        if uname in main_users:
            continue
        iid = item_id.get(inames[icodes[n]])
        if iid is None:
            continue
        per_user.setdefault(int(ucodes[n]), []).append((int(stamps[n]), n, iid))

    keys, hists, tests = [], [], []
    for code, evs in per_user.items():  # dict keeps first-appearance order
        if len(evs) < 2:
            continue
        evs.sort()
        seq = [iid for _, _, iid in evs]
        keys.append(unames[code])
        hists.append(_freeze(np.array(seq[:-1][-MAX_COLD_HISTORY:], dtype=np.int32)))
        tests.append(seq[-1])
    return ColdStartPartition(main, tuple(keys), tuple(hists), _freeze(np.array(tests, dtype=np.int32)))


# -- persistence -------------------------------------------------------------

def _blob(keys: Sequence[str]) -> bytes:
    data = "\n".join(keys).encode("utf-8")
    return struct.pack("<Q", len(data)) + data


def dataset_bytes(d: Dataset) -> bytes:
    lengths = np.array([len(s) for s in d.sequences], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype("<i8")
    items = (np.concatenate(d.sequences) if d.sequences else np.zeros(0)).astype("<i4")
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, d.num_users, d.num_items, int(offsets[-1])),
        _blob(d.user_keys),
        _blob(d.item_keys),
        offsets.tobytes(),
        items.tobytes(),
    ]
    return b"".join(parts)


def dataset_hash(d: Dataset) -> str:
    return hashlib.sha256(dataset_bytes(d)).hexdigest()


def save_dataset(d: Dataset, path) -> Path:
    """Write ``path`` (binary) and ``path`` with a ``.json`` suffix (counts sidecar)."""
    path = Path(path)
    path.write_bytes(dataset_bytes(d))
    meta = {"format": "rebusdata", "version": FORMAT_VERSION, **d.stats(), "sha256": dataset_hash(d)}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def _read_blob(buf: bytes, pos: int) -> tuple[tuple, int]:
    (n,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    text = buf[pos:pos + n].decode("utf-8")
    return (tuple(text.split("\n")) if n else ()), pos + n


def load_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise ValueError(f"{path}: truncated file")
    magic, version, n_users, n_items, n_actions = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a rebusdata file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = _HEADER.size
    ukeys, pos = _read_blob(buf, pos)
    ikeys, pos = _read_blob(buf, pos)
    offsets = np.frombuffer(buf, dtype="<i8", count=n_users + 1, offset=pos)
    pos += 8 * (n_users + 1)
    items = np.frombuffer(buf, dtype="<i4", count=n_actions, offset=pos).astype(np.int32)
    seqs = tuple(_freeze(items[offsets[k]:offsets[k + 1]].copy()) for k in range(n_users))
    return Dataset(int(n_items), seqs, ukeys, ikeys)
