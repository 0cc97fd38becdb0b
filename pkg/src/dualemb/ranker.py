"""Top-K complementary recommendations from a trained store."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import EmbeddingStore


@dataclass(frozen=True)
class Query:
    context_items: tuple[int, ...]
    user: int | None = None
    k: int = 10
    recall_pool: int = 100

    def __post_init__(self):
        if not self.context_items:
            raise ValueError("query needs at least one context item")
        if self.k < 1:
            raise ValueError("k must be >= 1")


RankedList = list[tuple[int, float]]


def complement_scores(store: EmbeddingStore, ctx) -> np.ndarray:
    """Mean-pooled sequence score of every item against ``ctx``."""
    return store.item_out.astype(np.float64) @ store.pooled(ctx)


def user_scores(store: EmbeddingStore, u: int) -> np.ndarray:
    return store.user_side_items.astype(np.float64) @ store.user[u].astype(np.float64)


def _top(scores: np.ndarray, candidates: np.ndarray, k: int) -> RankedList:
    s = scores[candidates]
    # descending score, ascending index on ties
    order = np.lexsort((candidates, -s))[:k]
    return [(int(candidates[o]), float(s[o])) for o in order]


def _candidates(store: EmbeddingStore, ctx, allowed) -> np.ndarray:
    mask = np.ones(store.n_items, dtype=bool) if allowed is None else np.zeros(store.n_items, dtype=bool)
    if allowed is not None:
        mask[np.asarray(list(allowed), dtype=np.int64)] = True
    mask[np.asarray(list(ctx), dtype=np.int64)] = False
    return np.flatnonzero(mask)


def rank_by_complement(q: Query, store: EmbeddingStore, candidates=None) -> RankedList:
    cand = _candidates(store, q.context_items, candidates)
    return _top(complement_scores(store, q.context_items), cand, q.k)


def rank_with_user(q: Query, store: EmbeddingStore, candidates=None) -> RankedList:
    if q.user is None:
        raise ValueError("rank_with_user needs a user; use rank_by_complement for anonymous queries")
    cand = _candidates(store, q.context_items, candidates)
    scores = user_scores(store, q.user) + complement_scores(store, q.context_items)
    return _top(scores, cand, q.k)


def recall_rerank(q: Query, store: EmbeddingStore, candidates=None) -> RankedList:
    """Recall ``recall_pool`` items by complement score, re-rank them with the user term."""
    if q.user is None:
        raise ValueError("recall_rerank needs a user; use rank_by_complement for anonymous queries")
    if q.recall_pool < q.k:
        raise ValueError("recall_pool must be >= k")
    cand = _candidates(store, q.context_items, candidates)
    comp = complement_scores(store, q.context_items)
    pool = np.array([i for i, _ in _top(comp, cand, q.recall_pool)], dtype=np.int64)
    scores = user_scores(store, q.user) + comp
    return _top(scores, pool, q.k)


def rank(q: Query, store: EmbeddingStore, mode: str = "complement", candidates=None) -> RankedList:
    if mode == "complement":
        return rank_by_complement(q, store, candidates)
    if mode == "user":
        return rank_with_user(q, store, candidates)
    if mode == "two-stage":
        return recall_rerank(q, store, candidates)
    raise ValueError(f"unknown ranking mode {mode!r}")
