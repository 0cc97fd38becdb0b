"""Evaluation protocols: within-basket, next-purchase, planted-structure recovery,
and the Jaccard cold-start baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .corpus import Events
from .ranker import Query, complement_scores, rank
from .store import EmbeddingStore


@dataclass
class EvalReport:
    metrics: dict[str, float]
    meta: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.metrics[key]

    def to_kv(self) -> str:
        lines = [f"{k}={v}" for k, v in self.meta.items()]
        lines += [f"{k}={v:.6f}" for k, v in self.metrics.items()]
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> tuple[str, str]:
        """(header, row) for side-by-side run comparison."""
        keys = list(self.meta) + list(self.metrics)
        vals = list(self.meta.values()) + [f"{v:.6f}" for v in self.metrics.values()]
        return "\t".join(keys), "\t".join(str(v) for v in vals)

    def write(self, kv_path: str | Path, tsv_path: str | Path | None = None) -> None:
        Path(kv_path).write_text(self.to_kv(), encoding="utf-8")
        if tsv_path is not None:
            head, row = self.to_tsv()
            Path(tsv_path).write_text(head + "\n" + row + "\n", encoding="utf-8")


def sequence_baskets(events: Events, size: int) -> list[np.ndarray]:
    """Chop each user's purchase sequence into consecutive windows of ``size`` items."""
    out = []
    for _, s, e in events.user_slices():
        items = events.item[s:e]
        for a in range(0, len(items) - size + 1, size):
            out.append(items[a:a + size])
    return out


def within_basket_eval(baskets: Sequence[np.ndarray], store: EmbeddingStore, n_negatives: int = 100,
                       seed: int = 0, candidates: np.ndarray | None = None,
                       holdout: np.ndarray | None = None, require: np.ndarray | None = None,
                       ) -> EvalReport:
    """Hold out each basket item in turn and rank it against sampled negatives.

    The rest of the basket is mean-pooled in item-in space; negatives are drawn
    uniformly (with replacement) from ``candidates`` minus the basket. Ties
    count one half in AUC and against the positive in NDCG. ``holdout`` limits
    which items may be held out; ``require`` keeps only baskets containing at
    least one flagged item.
    """
    rng = np.random.default_rng(seed)
    M = store.n_items
    cand = np.arange(M) if candidates is None else np.asarray(candidates, dtype=np.int64)
    item_out = store.item_out.astype(np.float64)
    item_in = store.item_in.astype(np.float64)
    aucs, ndcgs = [], []
    n_baskets = 0
    for basket in baskets:
        items = np.array(list(dict.fromkeys(int(i) for i in basket)), dtype=np.int64)
        if len(items) < 2:
            continue
        if require is not None and not require[items].any():
            continue
        n_baskets += 1
        in_basket = set(items.tolist())
        for h in range(len(items)):
            pos = items[h]
            if holdout is not None and not holdout[pos]:
                continue
            rest = np.delete(items, h)
            pooled = item_in[rest].mean(axis=0)
            negs = np.empty(n_negatives, dtype=np.int64)
            filled = 0
            while filled < n_negatives:
                draw = cand[rng.integers(len(cand), size=n_negatives)]
                draw = draw[[d not in in_basket for d in draw]]
                take = min(len(draw), n_negatives - filled)
                negs[filled:filled + take] = draw[:take]
                filled += take
            sp = float(item_out[pos] @ pooled)
            sn = item_out[negs] @ pooled
            aucs.append(metrics.auc([sp], sn))
            rank_ = 1 + int((sn >= sp).sum())
            ndcgs.append(1.0 / np.log2(rank_ + 1))
    if not aucs:
        raise ValueError("no evaluable basket (need >= 2 distinct items)")
    return EvalReport({"auc": float(np.mean(aucs)), "ndcg": float(np.mean(ndcgs))},
                      {"task": "within_basket", "negatives": str(n_negatives),
                       "neg_sampling": "uniform-excluding-basket", "seed": str(seed),
                       "baskets": str(n_baskets), "queries": str(len(aucs))})


def next_purchase_eval(history: Events, test: Events, store: EmbeddingStore, d1: int, d2: int,
                       day_unit: int = 86400, ks: Sequence[int] = (5, 10), mode: str = "complement",
                       recall_pool: int = 100, candidates=None,
                       query_filter: Callable[[np.ndarray, np.ndarray], bool] | None = None,
                       ) -> EvalReport:
    """Query at every distinct test purchase time ``t`` of every user.

    Context: the user's purchases in ``[t - d1, t)``; labels: purchases in
    ``[t, t + d2)`` that are not already in the context.
    """
    allev = Events.concat([history, test])
    test_users = set(np.unique(test.user).tolist())
    kmax = max(ks)
    hits = {k: [] for k in ks}
    ndcg = {k: [] for k in ks}
    for u, s, e in allev.user_slices():
        if u not in test_users:
            continue
        items, times = allev.item[s:e], allev.time[s:e]
        qtimes = np.unique(test.time[test.user == u])
        for t in qtimes:
            lo = np.searchsorted(times, t - d1 * day_unit, side="left")
            mid = np.searchsorted(times, t, side="left")
            hi = np.searchsorted(times, t + d2 * day_unit, side="left")
            ctx = items[lo:mid]
            if len(ctx) == 0:
                continue
            labels = np.setdiff1d(items[mid:hi], ctx)
            if len(labels) == 0:
                continue
            if query_filter is not None and not query_filter(ctx, labels):
                continue
            q = Query(tuple(int(i) for i in ctx[::-1]), user=int(u), k=kmax,
                      recall_pool=max(recall_pool, kmax))
            ranked = [i for i, _ in rank(q, store, mode, candidates)]
            flags = np.isin(ranked, labels)
            for k in ks:
                hits[k].append(metrics.hit_at_k(flags, k))
                ndcg[k].append(metrics.ndcg_at_k(flags, k, n_relevant=len(labels)))
    n = len(hits[kmax])
    if n == 0:
        raise ValueError("no next-purchase query had both context and labels")
    out = {}
    for k in ks:
        out[f"hit@{k}"] = float(np.mean(hits[k]))
        out[f"ndcg@{k}"] = float(np.mean(ndcg[k]))
    return EvalReport(out, {"task": "next_purchase", "mode": mode, "d1": str(d1), "d2": str(d2),
                            "queries": str(n)})


@dataclass
class Recovery:
    forward_hit1: float
    reverse_hit10: float
    reverse_chance10: float
    combo_win_rate: float
    forward_ranks: np.ndarray
    reverse_ranks: np.ndarray


def _rank_of(scores: np.ndarray, target: int, exclude) -> int:
    """1-based rank of ``target`` among all items except ``exclude`` (ties: lower index first)."""
    mask = np.ones(len(scores), dtype=bool)
    mask[list(exclude)] = False
    s = scores[target]
    better = (scores > s) | ((scores == s) & (np.arange(len(scores)) < target))
    return int((better & mask).sum()) + 1


def planted_recovery(store: EmbeddingStore, pairs, combos) -> Recovery:
    """Forward/reverse ranking of planted pairs and combo-vs-individual ordering."""
    fwd, rev = [], []
    for a, b in pairs:
        fwd.append(_rank_of(complement_scores(store, [a]), b, [a]))
        rev.append(_rank_of(complement_scores(store, [b]), a, [b]))
    fwd, rev = np.array(fwd), np.array(rev)
    individual = dict(pairs)
    wins = []
    for a, c, d in combos:
        scores = complement_scores(store, [a, c])
        wins.append(scores[d] > scores[individual[a]])
    n_cand = store.n_items - 1
    return Recovery(float(np.mean(fwd == 1)), float(np.mean(rev <= 10)), 10.0 / n_cand,
                    float(np.mean(wins)) if wins else float("nan"), fwd, rev)


def jaccard_assign(cold_tokens: Sequence[Sequence[int]], trained_tokens: Sequence[Sequence[int]],
                   n_tokens: int) -> np.ndarray:
    """Index of the trained item with the largest token Jaccard similarity (ties: lowest index)."""
    from scipy import sparse

    def incidence(lists):
        rows = np.repeat(np.arange(len(lists)), [len(set(x)) for x in lists])
        cols = np.array([t for x in lists for t in sorted(set(x))], dtype=np.int64)
        return sparse.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(len(lists), n_tokens))

    A, B = incidence(cold_tokens), incidence(trained_tokens)
    inter = (A @ B.T).toarray()
    size_a = np.asarray(A.sum(axis=1)).ravel()[:, None]
    size_b = np.asarray(B.sum(axis=1)).ravel()[None, :]
    union = size_a + size_b - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        jac = np.where(union > 0, inter / union, 0.0)
    # argmax returns the first maximum, i.e. the lowest index
    return jac.argmax(axis=1)


def jaccard_baseline(baskets, store: EmbeddingStore, cold_items: np.ndarray,
                     cold_tokens, trained_items: np.ndarray, trained_tokens, n_tokens: int,
                     **eval_kw) -> EvalReport:
    """Give each cold item the item-in row of its most similar trained item, then
    run the cold within-basket protocol."""
    best = jaccard_assign(cold_tokens, trained_tokens, n_tokens)
    s = store.copy()
    s.item_in[cold_items] = store.item_in[trained_items[best]]
    report = cold_within_basket_eval(baskets, s, cold_items, trained_items, **eval_kw)
    report.meta["cold_method"] = "jaccard"
    return report


def cold_within_basket_eval(baskets, store: EmbeddingStore, cold_items: np.ndarray,
                            trained_items: np.ndarray, **eval_kw) -> EvalReport:
    """Within-basket protocol restricted to baskets holding a cold item.

    Only trained items are held out or used as negatives, since cold items have
    no item-out row; cold items contribute through the pooled context.
    """
    M = store.n_items
    is_cold = np.zeros(M, dtype=bool)
    is_cold[cold_items] = True
    report = within_basket_eval(baskets, store, candidates=trained_items, holdout=~is_cold,
                                require=is_cold, **eval_kw)
    report.meta["cold_items"] = str(len(cold_items))
    return report
