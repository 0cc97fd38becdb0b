"""Negative-sampled binary-logistic training of the dual item embeddings.

The optimiser follows the usual shallow-embedding recipe: one shuffle, ``epochs``
passes with fresh negatives per visit, and a linearly decaying learning rate.
With ``threads > 1`` each epoch is sharded across threads that update the shared
tables without locks.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .corpus import Observation, Observations, Vocabulary
from .sampler import DEFAULT_FLOOR, SamplingTable, build_table
from .store import EmbeddingStore

log = logging.getLogger(__name__)

LR_FLOOR = 1e-4


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    alpha0: float = 0.025
    negatives: int = 5
    threads: int = 1
    seed: int = 0
    dim: int = 32
    user_dim: int | None = None
    tied: bool = True
    use_user_bias: bool = True
    use_item_context: bool = True
    use_user_context: bool = True
    neg_sample_floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be > 0")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def effective_user_dim(self) -> int:
        return self.dim if self.user_dim is None else self.user_dim


@dataclass
class LossBreakdown:
    seq_term: float = 0.0
    item_context_term: float = 0.0
    user_context_term: float = 0.0

    @property
    def total(self) -> float:
        return self.seq_term + self.item_context_term + self.user_context_term


@dataclass
class NegativeSets:
    """Negatives for one observation.

    ``item_tokens[r]`` belongs to the r-th (item, token) pair, enumerating items as
    (target, *context) and each item's tokens in order; ``user_tokens[r]`` to the
    r-th user token.
    """

    items: np.ndarray
    item_tokens: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))
    user_tokens: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))


def learning_rate(step: int, total_steps: int, alpha0: float) -> float:
    """Linear decay from ``alpha0`` towards 0, floored at ``alpha0 * 1e-4``."""
    return alpha0 * max(1.0 - step / total_steps, LR_FLOOR)


def _softplus(x: float) -> float:
    return max(x, 0.0) + np.log1p(np.exp(-abs(x)))


def observation_loss(obs: Observation, negs: NegativeSets, store: EmbeddingStore,
                     config: TrainConfig) -> LossBreakdown:
    """Loss of one observation, evaluated in float64 with plain numpy."""
    f64 = np.float64
    item_in = store.item_in.astype(f64)
    item_out = store.item_out.astype(f64)
    zu = store.user[obs.user].astype(f64)
    us_side = store.user_side_items.astype(f64)
    word = store.word.astype(f64)
    ufeat = store.user_feat.astype(f64)

    pooled = item_in[list(obs.context)].sum(axis=0) / len(obs.context)

    def q(i):
        s = item_out[i] @ pooled
        if config.use_user_bias:
            s += us_side[i] @ zu
        if not np.isfinite(s):
            raise TrainingError(f"non-finite score for item {i}; lower the learning rate")
        return s

    seq = _softplus(-q(obs.target)) + sum(_softplus(q(i)) for i in negs.items)

    wterm = 0.0
    if config.use_item_context:
        r = 0
        for j, toks in zip(obs.items, obs.item_tokens):
            for w in toks:
                wterm += _softplus(-(word[w] @ item_in[j]))
                wterm += sum(_softplus(word[v] @ item_in[j]) for v in negs.item_tokens[r])
                r += 1
    xterm = 0.0
    if config.use_user_context:
        for r, x in enumerate(obs.user_tokens):
            xterm += _softplus(-(ufeat[x] @ zu))
            xterm += sum(_softplus(ufeat[v] @ zu) for v in negs.user_tokens[r])
    return LossBreakdown(float(seq), float(wterm), float(xterm))


def _pack(obs: Observation, negs: NegativeSets, config: TrainConfig):
    items = np.array(obs.items, dtype=np.int64)
    toks_lists = obs.item_tokens if (config.use_item_context and obs.item_tokens) else [()] * len(items)
    tok_ptr = np.zeros(len(items) + 1, dtype=np.int64)
    tok_ptr[1:] = np.cumsum([len(t) for t in toks_lists])
    toks = np.array([w for t in toks_lists for w in t], dtype=np.int64)
    utoks = np.array(obs.user_tokens if config.use_user_context else (), dtype=np.int64)
    wn = np.atleast_2d(np.asarray(negs.item_tokens, dtype=np.int64))
    xn = np.atleast_2d(np.asarray(negs.user_tokens, dtype=np.int64))
    if len(toks) > wn.shape[0] * (wn.shape[1] > 0):
        raise ValueError(f"need {len(toks)} token negative sets, got {len(wn)}")
    if len(utoks) > xn.shape[0] * (xn.shape[1] > 0):
        raise ValueError(f"need {len(utoks)} user-token negative sets, got {len(xn)}")
    # the kernel wants at least one (unused) row
    if wn.size == 0:
        wn = np.zeros((1, 1), dtype=np.int64)
    if xn.size == 0:
        xn = np.zeros((1, 1), dtype=np.int64)
    return items, tok_ptr, toks, utoks, np.asarray(negs.items, dtype=np.int64), wn, xn


def _kernel_call(obs, negs, src: EmbeddingStore, dst: EmbeddingStore, scale: float,
                 config: TrainConfig) -> LossBreakdown:
    items, tok_ptr, toks, utoks, inegs, wn, xn = _pack(obs, negs, config)
    losses = np.zeros(3)
    src_iu = src.item_user if src.item_user is not None else src.item_out
    dst_iu = dst.item_user if dst.item_user is not None else dst.item_out
    code = _kernels.step(src.item_in, src.item_out, src.user, src.word, src.user_feat, src_iu, src.tied,
                         dst.item_in, dst.item_out, dst.user, dst.word, dst.user_feat, dst_iu, scale,
                         obs.user, items, tok_ptr, toks, utoks, inegs, wn, xn,
                         config.use_user_bias, config.use_item_context, config.use_user_context, losses)
    if code == _kernels.NONFINITE:
        raise TrainingError("non-finite score during gradient step; lower the learning rate")
    return LossBreakdown(*losses)


def observation_grad(obs: Observation, negs: NegativeSets, store: EmbeddingStore,
                     config: TrainConfig) -> EmbeddingStore:
    """Analytic gradient of :func:`observation_loss`, shaped like ``store``."""
    grad = store.astype(np.float64)
    for arr in grad.tables().values():
        arr[...] = 0.0
    _kernel_call(obs, negs, store, grad, 1.0, config)
    return grad


def sgd_step(obs: Observation, negs: NegativeSets, store: EmbeddingStore, alpha: float,
             config: TrainConfig) -> LossBreakdown:
    """In-place step ``theta -= alpha * grad``; returns the pre-step loss."""
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    return _kernel_call(obs, negs, store, store, -alpha, config)


@dataclass
class Samplers:
    items: SamplingTable
    words: SamplingTable | None
    user_feats: SamplingTable | None


def build_samplers(obs: Observations, vocab: Vocabulary, config: TrainConfig,
                   item_counts: np.ndarray | None = None) -> Samplers:
    """Item table from training frequencies; token tables count one occurrence per
    (observation, item, token) and (observation, user token)."""
    M = vocab.n_items
    if item_counts is None:
        item_counts = np.bincount(obs.target, minlength=M)
    items = build_table(item_counts, config.neg_sample_floor, "items")
    appear = (np.bincount(obs.target, minlength=M) + np.bincount(obs.ctx, minlength=M)).astype(np.float64)
    words = None
    if config.use_item_context and vocab.n_item_tokens > 0:
        owner = np.repeat(np.arange(M), np.diff(vocab.item_tok_ptr))
        wc = np.bincount(vocab.item_tok, weights=appear[owner], minlength=vocab.n_item_tokens)
        if wc.sum() > 0:
            words = build_table(wc, config.neg_sample_floor, "item_tokens")
    ufeats = None
    if config.use_user_context and vocab.n_user_tokens > 0:
        uappear = np.bincount(obs.user, minlength=vocab.n_users).astype(np.float64)
        owner = np.repeat(np.arange(vocab.n_users), np.diff(vocab.user_tok_ptr))
        xc = np.bincount(vocab.user_tok, weights=uappear[owner], minlength=vocab.n_user_tokens)
        if xc.sum() > 0:
            ufeats = build_table(xc, config.neg_sample_floor, "user_tokens")
    return Samplers(items, words, ufeats)


def draw_negatives(obs: Observation, samplers: Samplers, rng: np.random.Generator,
                   count: int = 5) -> NegativeSets:
    """Fresh negatives; each positive instance is excluded from its own draw."""
    items = samplers.items.draw(rng, exclude=[obs.target], count=count)
    toks = [w for t in obs.item_tokens for w in t]
    if samplers.words is not None and toks:
        wn = np.stack([samplers.words.draw(rng, exclude=[w], count=count) for w in toks])
    else:
        wn = np.zeros((0, count), dtype=np.int64)
    if samplers.user_feats is not None and obs.user_tokens:
        xn = np.stack([samplers.user_feats.draw(rng, exclude=[x], count=count) for x in obs.user_tokens])
    else:
        xn = np.zeros((0, count), dtype=np.int64)
    return NegativeSets(items.astype(np.int64), wn.astype(np.int64), xn.astype(np.int64))


def _empty_table():
    return np.zeros(0, dtype=np.float64), np.zeros(0, dtype=np.int32)


def _seed_state(seed: int) -> np.ndarray:
    # spread nearby seeds apart before they enter splitmix64
    return np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)


@dataclass
class TrainResult:
    store: EmbeddingStore
    epoch_losses: list[LossBreakdown]
    wall_seconds: float


def train(observations: Observations, vocab: Vocabulary, config: TrainConfig,
          item_counts: np.ndarray | None = None,
          on_epoch: Callable[[int, LossBreakdown], None] | None = None,
          store: EmbeddingStore | None = None) -> TrainResult:
    """Fit all tables. Single-thread runs are bitwise reproducible for a fixed seed."""
    n = len(observations)
    if n == 0:
        raise TrainingError("no observations to train on")
    if store is None:
        store = EmbeddingStore.init(vocab.n_items, vocab.n_users, vocab.n_item_tokens,
                                    vocab.n_user_tokens, config.dim, config.effective_user_dim,
                                    tied=config.tied, seed=config.seed)
    store.meta.update({f"train.{k}": str(v) for k, v in asdict(config).items() if k != "threads"})
    samplers = build_samplers(observations, vocab, config, item_counts)
    w_prob, w_alias = (samplers.words.prob, samplers.words.alias) if samplers.words else _empty_table()
    x_prob, x_alias = (samplers.user_feats.prob, samplers.user_feats.alias) if samplers.user_feats else _empty_table()

    perm = np.random.default_rng(config.seed).permutation(n).astype(np.int64)
    total = n * config.epochs
    T = min(config.threads, n)
    bounds = np.linspace(0, n, T + 1).astype(np.int64)
    states = [_seed_state(config.seed + w) for w in range(T)]
    iu = store.item_user if store.item_user is not None else store.item_out
    obs_arrays = (observations.user.astype(np.int64), observations.target.astype(np.int64),
                  observations.ctx_ptr.astype(np.int64), observations.ctx.astype(np.int64),
                  vocab.item_tok_ptr.astype(np.int64), vocab.item_tok.astype(np.int64),
                  vocab.user_tok_ptr.astype(np.int64), vocab.user_tok.astype(np.int64),
                  samplers.items.prob, samplers.items.alias.astype(np.int64),
                  w_prob, w_alias.astype(np.int64), x_prob, x_alias.astype(np.int64), perm)

    def run(w: int, epoch: int):
        losses = np.zeros(3)
        status = np.zeros(2, dtype=np.int64)
        _kernels.train_shard(store.item_in, store.item_out, store.user, store.word, store.user_feat,
                             iu, store.tied, *obs_arrays, bounds[w], bounds[w + 1], epoch * n, total,
                             config.alpha0, config.negatives, config.use_user_bias,
                             config.use_item_context, config.use_user_context,
                             states[w], losses, status)
        return losses, status

    history: list[LossBreakdown] = []
    t0 = time.perf_counter()
    pool = ThreadPoolExecutor(T) if T > 1 else None
    try:
        for epoch in range(config.epochs):
            if pool is None:
                results = [run(0, epoch)]
            else:
                results = list(pool.map(lambda w: run(w, epoch), range(T)))
            for losses, status in results:
                if status[0] == _kernels.NONFINITE:
                    raise TrainingError(
                        f"non-finite score at epoch {epoch + 1}, step {status[1]}; "
                        f"alpha0={config.alpha0} is too large for this corpus")
                if status[0] == _kernels.SAMPLER_EXHAUSTED:
                    raise TrainingError(
                        "negative sampler gave up after 100 rejections; the vocabulary "
                        "is too small or dominated by one entry")
            tot = sum(r[0] for r in results) / n
            lb = LossBreakdown(*tot)
            history.append(lb)
            log.info("epoch %d/%d loss %.5f (seq %.5f, item ctx %.5f, user ctx %.5f)",
                     epoch + 1, config.epochs, lb.total, lb.seq_term, lb.item_context_term,
                     lb.user_context_term)
            if on_epoch is not None:
                on_epoch(epoch, lb)
    finally:
        if pool is not None:
            pool.shutdown()
    wall = time.perf_counter() - t0
    return TrainResult(store, history, wall)
