"""Item-in embeddings for items never seen in training, inferred from their tokens.

The token likelihood uses a sampled softmax whose denominator includes the
positive token; the iterate is also kept inside a norm ball, so the ascent
cannot run off to infinity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .sampler import SamplingTable
from .store import EmbeddingStore

log = logging.getLogger(__name__)


@dataclass
class ColdStartRequest:
    tokens: tuple[int, ...]
    steps: int = 200
    step_size: float = 0.05
    norm_cap: float | None = None
    negatives: int = 5


def default_norm_cap(store: EmbeddingStore) -> float:
    return float(np.percentile(np.linalg.norm(store.item_in.astype(np.float64), axis=1), 95))


def _project(z: np.ndarray, cap: float) -> np.ndarray:
    n = np.linalg.norm(z)
    return z * (cap / n) if n > cap else z


def objective(z: np.ndarray, word: np.ndarray, tokens, negs) -> float:
    """Sum over tokens of ``s(w, z) - logsumexp over {w} + negatives``."""
    total = 0.0
    for w, neg in zip(tokens, negs):
        s = word[np.concatenate(([w], neg)).astype(np.int64)] @ z
        m = s.max()
        total += s[0] - (m + np.log(np.exp(s - m).sum()))
    return float(total)


def _gradient(z, word, tokens, negs):
    g = np.zeros_like(z)
    for w, neg in zip(tokens, negs):
        rows = word[np.concatenate(([w], neg)).astype(np.int64)]
        s = rows @ z
        p = np.exp(s - s.max())
        p /= p.sum()
        g += rows[0] - p @ rows
    return g


def infer(req: ColdStartRequest, store: EmbeddingStore, sampler: SamplingTable | None = None,
          rng: np.random.Generator | None = None, fixed_negatives=None) -> np.ndarray:
    """Projected gradient ascent from the mean of the tokens' word vectors.

    With ``fixed_negatives`` (one array per token) the same negatives are reused
    at every step; otherwise ``req.negatives`` fresh draws per token per step.
    """
    tokens = [int(w) for w in req.tokens]
    if not tokens:
        raise ValueError("cold-start item has no known tokens")
    if fixed_negatives is None and sampler is None:
        raise ValueError("need a token sampler or fixed negatives")
    rng = rng if rng is not None else np.random.default_rng(0)
    word = store.word.astype(np.float64)
    cap = req.norm_cap if req.norm_cap is not None else default_norm_cap(store)
    z = _project(word[tokens].mean(axis=0), cap)
    for t in range(1, req.steps + 1):
        if fixed_negatives is not None:
            negs = fixed_negatives
        else:
            negs = [sampler.draw(rng, exclude=[w], count=req.negatives) for w in tokens]
        z = _project(z + req.step_size / np.sqrt(t) * _gradient(z, word, tokens, negs), cap)
    return z


def tokens_to_ids(tokens, token_index: dict[str, int]) -> tuple[int, ...]:
    known = tuple(token_index[t] for t in tokens if t in token_index)
    dropped = [t for t in tokens if t not in token_index]
    if dropped:
        log.warning("dropping %d unknown token(s): %s", len(dropped), " ".join(dropped[:10]))
    return known


def infer_items(item_tokens: dict[str, list[str]], token_index: dict[str, int],
                store: EmbeddingStore, sampler: SamplingTable, seed: int = 0,
                steps: int = 200, step_size: float = 0.05,
                norm_cap: float | None = None) -> tuple[list[str], np.ndarray]:
    """Batch inference keyed by raw item id; items with no known token are skipped."""
    cap = norm_cap if norm_cap is not None else default_norm_cap(store)
    rng = np.random.default_rng(seed)
    ids, rows = [], []
    for item, toks in item_tokens.items():
        known = tokens_to_ids(toks, token_index)
        if not known:
            log.warning("cold item %s has no known tokens; skipped", item)
            continue
        ids.append(item)
        rows.append(infer(ColdStartRequest(known, steps, step_size, cap), store, sampler, rng))
    return ids, np.array(rows, dtype=np.float64).reshape(len(ids), store.dim)
