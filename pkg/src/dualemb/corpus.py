"""Purchase-log ingestion, vocabularies, splitting and observation building.

File formats (UTF-8, tab separated):

* orders:        ``user_id<TAB>order_id<TAB>time<TAB>item_id``
* item context:  ``item_id<TAB>token token ...``
* user context:  ``user_id<TAB>token token ...``
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400


class CorpusError(ValueError):
    """Raised for malformed input files or an unusable corpus."""


class Interner:
    """Dense integer ids for opaque string keys, with occurrence counts."""

    def __init__(self, keys: Sequence[str] = (), counts: Sequence[int] | None = None):
        self.keys: list[str] = list(keys)
        self.index: dict[str, int] = {k: i for i, k in enumerate(self.keys)}
        self.counts: list[int] = list(counts) if counts is not None else [0] * len(self.keys)

    def add(self, key: str, count: int = 1) -> int:
        i = self.index.get(key)
        if i is None:
            i = len(self.keys)
            self.index[key] = i
            self.keys.append(key)
            self.counts.append(0)
        self.counts[i] += count
        return i

    def get(self, key: str, default: int = -1) -> int:
        return self.index.get(key, default)

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key: str) -> bool:
        return key in self.index


def _csr(lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    if lists:
        ptr[1:] = np.cumsum([len(x) for x in lists])
    idx = np.fromiter((t for x in lists for t in x), dtype=np.int32, count=int(ptr[-1]))
    return ptr, idx


@dataclass
class Vocabulary:
    """Users, items and the two token vocabularies, plus per-entity token lists.

    Token lists are stored CSR-style: the tokens of item ``i`` are
    ``item_tok[item_tok_ptr[i]:item_tok_ptr[i + 1]]``.
    """

    users: Interner
    items: Interner
    item_tokens: Interner
    user_tokens: Interner
    item_tok_ptr: np.ndarray
    item_tok: np.ndarray
    user_tok_ptr: np.ndarray
    user_tok: np.ndarray

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_item_tokens(self) -> int:
        return len(self.item_tokens)

    @property
    def n_user_tokens(self) -> int:
        return len(self.user_tokens)

    def tokens_of_item(self, i: int) -> np.ndarray:
        return self.item_tok[self.item_tok_ptr[i]:self.item_tok_ptr[i + 1]]

    def tokens_of_user(self, u: int) -> np.ndarray:
        return self.user_tok[self.user_tok_ptr[u]:self.user_tok_ptr[u + 1]]

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "items.tsv", "w", encoding="utf-8") as f:
            for i, (key, c) in enumerate(zip(self.items.keys, self.items.counts)):
                toks = " ".join(self.item_tokens.keys[t] for t in self.tokens_of_item(i))
                f.write(f"{key}\t{c}\t{toks}\n")
        with open(d / "users.tsv", "w", encoding="utf-8") as f:
            for u, (key, c) in enumerate(zip(self.users.keys, self.users.counts)):
                toks = " ".join(self.user_tokens.keys[t] for t in self.tokens_of_user(u))
                f.write(f"{key}\t{c}\t{toks}\n")
        for name, table in (("item_tokens.tsv", self.item_tokens), ("user_tokens.tsv", self.user_tokens)):
            with open(d / name, "w", encoding="utf-8") as f:
                for key, c in zip(table.keys, table.counts):
                    f.write(f"{key}\t{c}\n")

    @classmethod
    def load(cls, directory: str | Path) -> "Vocabulary":
        d = Path(directory)

        def read_counts(path: Path) -> Interner:
            keys, counts = [], []
            with open(path, encoding="utf-8") as f:
                for line in f:
                    key, c = line.rstrip("\n").split("\t")
                    keys.append(key)
                    counts.append(int(c))
            return Interner(keys, counts)

        item_tokens = read_counts(d / "item_tokens.tsv")
        user_tokens = read_counts(d / "user_tokens.tsv")

        def read_entities(path: Path, tokens: Interner) -> tuple[Interner, list[list[int]]]:
            keys, counts, lists = [], [], []
            with open(path, encoding="utf-8") as f:
                for line in f:
                    key, c, toks = line.rstrip("\n").split("\t")
                    keys.append(key)
                    counts.append(int(c))
                    lists.append([tokens.index[t] for t in toks.split()])
            return Interner(keys, counts), lists

        items, item_lists = read_entities(d / "items.tsv", item_tokens)
        users, user_lists = read_entities(d / "users.tsv", user_tokens)
        return cls(users, items, item_tokens, user_tokens, *_csr(item_lists), *_csr(user_lists))


@dataclass(frozen=True)
class Events:
    """Column-oriented purchase events sorted by (user, time, file position)."""

    user: np.ndarray
    item: np.ndarray
    time: np.ndarray
    order: np.ndarray

    def __len__(self) -> int:
        return len(self.user)

    def take(self, mask_or_index: np.ndarray) -> "Events":
        return Events(self.user[mask_or_index], self.item[mask_or_index],
                      self.time[mask_or_index], self.order[mask_or_index])

    @staticmethod
    def concat(parts: Sequence["Events"]) -> "Events":
        ev = Events(*(np.concatenate([getattr(p, f) for p in parts])
                      for f in ("user", "item", "time", "order")))
        # stable sort keeps file order within equal (user, time)
        idx = np.lexsort((ev.order, ev.time, ev.user))
        return ev.take(idx)

    def user_slices(self) -> Iterator[tuple[int, int, int]]:
        """Yield ``(user, start, stop)`` for each contiguous user block."""
        if len(self) == 0:
            return
        bounds = np.flatnonzero(np.diff(self.user)) + 1
        starts = np.concatenate(([0], bounds))
        stops = np.concatenate((bounds, [len(self)]))
        for s, e in zip(starts, stops):
            yield int(self.user[s]), int(s), int(e)

    def save(self, path: str | Path) -> None:
        np.savez(path, user=self.user, item=self.item, time=self.time, order=self.order)

    @classmethod
    def load(cls, path: str | Path) -> "Events":
        with np.load(path) as z:
            return cls(z["user"], z["item"], z["time"], z["order"])

    def baskets(self) -> list[np.ndarray]:
        """Items grouped by order, in event order."""
        if len(self) == 0:
            return []
        idx = np.argsort(self.order, kind="stable")
        orders = self.order[idx]
        bounds = np.flatnonzero(np.diff(orders)) + 1
        return np.split(self.item[idx], bounds)


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "last-order"          # last-order | time-cutoff
    train_end: int | None = None
    valid_end: int | None = None
    d1: int = 3
    d2: int = 7
    k: int = 2
    context: str = "window"           # window | days
    time_kind: str = "ordinal"        # ordinal | seconds

    def __post_init__(self):
        if self.mode not in ("last-order", "time-cutoff"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.context not in ("window", "days"):
            raise ValueError(f"unknown context mode {self.context!r}")
        if self.time_kind not in ("ordinal", "seconds"):
            raise ValueError(f"unknown time_kind {self.time_kind!r}")
        if min(self.d1, self.d2, self.k) < 1:
            raise ValueError("d1, d2 and k must be >= 1")
        if self.mode == "time-cutoff":
            if self.train_end is None or self.valid_end is None:
                raise ValueError("time-cutoff split needs train_end and valid_end")
            if not self.train_end < self.valid_end:
                raise ValueError("train_end must be < valid_end")

    @property
    def day_unit(self) -> int:
        return SECONDS_PER_DAY if self.time_kind == "seconds" else 1


@dataclass(frozen=True)
class Observation:
    user: int
    target: int
    context: tuple[int, ...]
    # token lists for (target, *context), in that order
    item_tokens: tuple[tuple[int, ...], ...] = ()
    user_tokens: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.context:
            raise ValueError("observation needs a non-empty context")

    @property
    def items(self) -> tuple[int, ...]:
        return (self.target, *self.context)


@dataclass
class Observations:
    """Columnar observation store; context of obs ``q`` is ``ctx[ctx_ptr[q]:ctx_ptr[q+1]]``
    listed most recent first."""

    user: np.ndarray
    target: np.ndarray
    ctx_ptr: np.ndarray
    ctx: np.ndarray
    time: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.target)

    def context_of(self, q: int) -> np.ndarray:
        return self.ctx[self.ctx_ptr[q]:self.ctx_ptr[q + 1]]

    def get(self, q: int, vocab: Vocabulary | None = None) -> Observation:
        u, t = int(self.user[q]), int(self.target[q])
        ctx = tuple(int(i) for i in self.context_of(q))
        if vocab is None:
            return Observation(u, t, ctx)
        toks = tuple(tuple(int(w) for w in vocab.tokens_of_item(i)) for i in (t, *ctx))
        return Observation(u, t, ctx, toks, tuple(int(x) for x in vocab.tokens_of_user(u)))

    def __iter__(self) -> Iterator[Observation]:
        for q in range(len(self)):
            yield self.get(q)

    @classmethod
    def from_list(cls, obs: Sequence[Observation]) -> "Observations":
        ptr, ctx = _csr([o.context for o in obs])
        return cls(np.array([o.user for o in obs], dtype=np.int32),
                   np.array([o.target for o in obs], dtype=np.int32), ptr, ctx,
                   np.zeros(len(obs), dtype=np.int64))

    def save(self, path: str | Path) -> None:
        np.savez(path, user=self.user, target=self.target, ctx_ptr=self.ctx_ptr,
                 ctx=self.ctx, time=self.time)

    @classmethod
    def load(cls, path: str | Path) -> "Observations":
        with np.load(path) as z:
            return cls(z["user"], z["target"], z["ctx_ptr"], z["ctx"], z["time"])


def _read_tsv(path: Path, ncols: int | None) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if ncols is not None and len(parts) != ncols:
                raise CorpusError(f"{path}:{lineno}: expected {ncols} tab-separated fields, got {len(parts)}")
            yield lineno, parts


def _read_context(path: Path, keys: Interner, tokens: Interner) -> list[list[int]]:
    lists: list[list[int]] = [[] for _ in range(len(keys))]
    for lineno, parts in _read_tsv(path, None):
        if len(parts) != 2 or not parts[0].strip():
            raise CorpusError(f"{path}:{lineno}: expected 'id<TAB>token token ...'")
        k = keys.get(parts[0].strip())
        if k < 0:
            continue
        seen = dict.fromkeys(t.strip() for t in parts[1].split(" ") if t.strip())
        lists[k] = [tokens.add(t) for t in seen]
    return lists


def ingest(orders_path: str | Path, item_context_path: str | Path | None = None,
           user_context_path: str | Path | None = None, min_transactions: int = 10,
           ) -> tuple[Vocabulary, Events]:
    """Read the purchase log and context files.

    Items bought fewer than ``min_transactions`` times are dropped together with
    their events; users keep an index only if one of their events survives.
    """
    orders_path = Path(orders_path)
    raw_users, raw_orders, raw_times, raw_items = [], [], [], []
    for lineno, parts in _read_tsv(orders_path, 4):
        if not all(p.strip() for p in parts):
            raise CorpusError(f"{orders_path}:{lineno}: empty field")
        try:
            t = int(parts[2])
        except ValueError:
            raise CorpusError(f"{orders_path}:{lineno}: time {parts[2]!r} is not an integer") from None
        raw_users.append(parts[0].strip())
        raw_orders.append(parts[1].strip())
        raw_times.append(t)
        raw_items.append(parts[3].strip())

    item_counts = Counter(raw_items)
    items, users, orders = Interner(), Interner(), Interner()
    ev_u, ev_i, ev_t, ev_o = [], [], [], []
    for u, o, t, i in zip(raw_users, raw_orders, raw_times, raw_items):
        if item_counts[i] < min_transactions:
            continue
        ev_u.append(users.add(u))
        ev_i.append(items.add(i))
        ev_t.append(t)
        # order ids are scoped per user
        ev_o.append(orders.add(f"{u}\t{o}"))
    if not ev_u:
        raise CorpusError(f"no events left after filtering items with < {min_transactions} transactions")
    log.info("ingest: %d events, %d users, %d items (dropped %d events)",
             len(ev_u), len(users), len(items), len(raw_items) - len(ev_u))

    item_tokens, user_tokens = Interner(), Interner()
    item_lists = (_read_context(Path(item_context_path), items, item_tokens)
                  if item_context_path else [[] for _ in range(len(items))])
    user_lists = (_read_context(Path(user_context_path), users, user_tokens)
                  if user_context_path else [[] for _ in range(len(users))])

    vocab = Vocabulary(users, items, item_tokens, user_tokens, *_csr(item_lists), *_csr(user_lists))
    ev = Events(np.array(ev_u, dtype=np.int32), np.array(ev_i, dtype=np.int32),
                np.array(ev_t, dtype=np.int64), np.array(ev_o, dtype=np.int64))
    idx = np.lexsort((np.arange(len(ev)), ev.time, ev.user))
    return vocab, ev.take(idx)


def split(events: Events, spec: SplitSpec) -> tuple[Events, Events, Events]:
    """Partition events into (train, valid, test)."""
    n = len(events)
    part = np.zeros(n, dtype=np.int8)  # 0 train, 1 valid, 2 test
    if spec.mode == "time-cutoff":
        part[events.time >= spec.train_end] = 1
        part[events.time >= spec.valid_end] = 2
    else:
        for _, s, e in events.user_slices():
            orders = events.order[s:e]
            # orders in first-appearance order within the (time-sorted) user block
            _, first = np.unique(orders, return_index=True)
            seq = orders[np.sort(first)]
            if len(seq) < 3:
                continue
            part[s:e][orders == seq[-1]] = 2
            part[s:e][orders == seq[-2]] = 1
    return events.take(part == 0), events.take(part == 1), events.take(part == 2)


def build_observations(events: Events, spec: SplitSpec) -> Observations:
    """Turn each purchase with at least one strictly earlier purchase into an observation.

    Window mode keeps the ``k`` most recent earlier purchases; day mode keeps all
    earlier purchases within ``d1`` days. Contexts are listed most recent first.
    """
    users, targets, times, ctx_lists = [], [], [], []
    width = spec.d1 * spec.day_unit
    for u, s, e in events.user_slices():
        items = events.item[s:e]
        times_u = events.time[s:e]
        # first position whose time equals times_u[p], i.e. count of strictly earlier events
        n_before = np.searchsorted(times_u, times_u, side="left")
        if spec.context == "days":
            lo_all = np.searchsorted(times_u, times_u - width, side="left")
        for p in range(e - s):
            hi = int(n_before[p])
            if hi == 0:
                continue
            lo = max(0, hi - spec.k) if spec.context == "window" else int(lo_all[p])
            if lo >= hi:
                continue
            users.append(u)
            targets.append(int(items[p]))
            times.append(int(times_u[p]))
            ctx_lists.append(items[lo:hi][::-1])
    ptr = np.zeros(len(ctx_lists) + 1, dtype=np.int64)
    if ctx_lists:
        ptr[1:] = np.cumsum([len(c) for c in ctx_lists])
        ctx = np.concatenate(ctx_lists).astype(np.int32)
    else:
        ctx = np.zeros(0, dtype=np.int32)
    return Observations(np.array(users, dtype=np.int32), np.array(targets, dtype=np.int32),
                        ptr, ctx, np.array(times, dtype=np.int64))


def write_manifest(path: str | Path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, v in entries.items():
            f.write(f"{k}={v}\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out
