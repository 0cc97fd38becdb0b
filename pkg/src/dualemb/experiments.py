"""End-to-end experiment drivers shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

import os
import shutil
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import cli
from . import config as cfgmod
from .corpus import Events, SplitSpec, Vocabulary, build_observations, ingest, split
from .evaluator import planted_recovery, sequence_baskets, within_basket_eval
from .ranker import complement_scores
from .synth import SynthSpec, generate_synthetic, item_id, suggested_split
from .trainer import TrainConfig, TrainResult, train


@dataclass
class SyntheticRun:
    spec: SynthSpec
    result: TrainResult
    forward_hit1: float
    reverse_hit10: float
    reverse_chance10: float
    combo_win_rate: float
    forward_top1pct: float          # share of planted targets ranked in the top 1%
    reverse_ks_p: float             # reverse rank among the other sources vs uniform
    within_basket_auc: float
    within_basket_ndcg: float
    seconds: float
    vocab: Vocabulary = field(repr=False, default=None)
    events: tuple[Events, Events, Events] = field(repr=False, default=None)   # train, valid, test
    split: SplitSpec = field(repr=False, default=None)
    pairs: list = field(repr=False, default_factory=list)                     # vocabulary indices
    combos: list = field(repr=False, default_factory=list)

    @property
    def store(self):
        return self.result.store


def reverse_source_ranks(store, pairs) -> np.ndarray:
    """Normalised rank of source ``a`` given ``[b]`` among the other planted sources.

    Sources are all frequent, so they are compared with each other rather than with
    the whole catalog; without a reverse signal the value is uniform on [0, 1].
    """
    src = np.array([a for a, _ in pairs])
    out = []
    for a, b in pairs:
        s = complement_scores(store, [b])
        others = src[src != a]
        out.append(((s[others] > s[a]).sum() + 0.5 * (s[others] == s[a]).sum()) / len(others))
    return np.array(out)


def synthetic_run(work: str | Path, spec: SynthSpec = SynthSpec(), config: TrainConfig = TrainConfig(),
                  basket_size: int = 3) -> SyntheticRun:
    t0 = time.perf_counter()
    paths, truth = generate_synthetic(spec, work)
    vocab, events = ingest(paths["orders"], paths["item_context"], min_transactions=1)
    sp = suggested_split(spec)
    tr, va, te = split(events, sp)
    obs = build_observations(tr, sp)
    result = train(obs, vocab, config, item_counts=np.bincount(tr.item, minlength=vocab.n_items))
    store = result.store
    ix = vocab.items.index
    pairs = [(ix[item_id(a)], ix[item_id(b)]) for a, b in truth.pairs]
    combos = [(ix[item_id(a)], ix[item_id(c)], ix[item_id(d)]) for a, c, d in truth.combos]
    rec = planted_recovery(store, pairs, combos)
    wb = within_basket_eval(sequence_baskets(te, basket_size), store, seed=config.seed)
    top = max(1, int(np.ceil(0.01 * (store.n_items - 1))))
    ks = stats.kstest(reverse_source_ranks(store, pairs), "uniform").pvalue
    return SyntheticRun(spec, result, rec.forward_hit1, rec.reverse_hit10, rec.reverse_chance10,
                        rec.combo_win_rate, float(np.mean(rec.forward_ranks <= top)), float(ks),
                        wb["auc"], wb["ndcg"], time.perf_counter() - t0,
                        vocab, (tr, va, te), sp, pairs, combos)


# -- Instacart ---------------------------------------------------------------

INSTACART_ENV = "DUALEMB_INSTACART_TSV"
PREPARED = [cli.VOCAB_DIR, cli.VOCAB_MANIFEST, cli.OBS_CACHE, cli.COLD_ITEMS, *cli.EVENTS.values()]


def instacart_dir() -> Path | None:
    """Converted Instacart TSVs (see scripts/instacart_to_tsv.py), if available."""
    d = os.environ.get(INSTACART_ENV)
    if d and (Path(d) / "orders.tsv").is_file():
        return Path(d)
    return None


def instacart_config(tsv: Path, threads: int, seed: int = 0, **overrides) -> cfgmod.RunConfig:
    entries = {
        "orders": str(tsv / "orders.tsv"), "item_context": str(tsv / "items.tsv"),
        "min_transactions": "10", "seed": str(seed), "threads": str(threads),
        "split.mode": "last-order", "split.k": "2", "split.context": "window",
        "train.dim": "32", "train.epochs": "30", "train.use_user_context": "false",
        "eval.basket": "order", "eval.labels": str(tsv / "departments.tsv"),
    }
    entries.update({k: str(v) for k, v in overrides.items()})
    return cfgmod.build(entries)


def _clone_prepared(src: Path, dst: Path) -> None:
    dst.mkdir(parents=True, exist_ok=True)
    for name in PREPARED:
        s, d = src / name, dst / name
        if s.is_dir():
            shutil.copytree(s, d, dirs_exist_ok=True)
        else:
            shutil.copy2(s, d)


def _evaluate(cfg, out, task):
    return cli.cmd_evaluate(replace(cfg, eval=replace(cfg.eval, task=task)), out).metrics


def instacart_suite(tsv: Path, work: Path, threads: int = 16, seed: int = 0) -> dict[str, dict[str, float]]:
    """Full model, the two ablations and the cold-start comparison."""
    work.mkdir(parents=True, exist_ok=True)
    out: dict[str, dict[str, float]] = {}
    base = instacart_config(tsv, threads, seed)
    runs = {
        "full": base,
        "no_user": instacart_config(tsv, threads, seed, **{"train.use_user_bias": "false"}),
        "no_context": instacart_config(tsv, threads, seed, **{"train.use_item_context": "false"}),
    }
    cli.cmd_prepare(base, work / "full")
    for name, cfg in runs.items():
        d = work / name
        if name != "full":
            _clone_prepared(work / "full", d)
        t0 = time.perf_counter()
        cli.cmd_train(cfg, d)
        res = {"train_seconds": time.perf_counter() - t0}
        res.update(_evaluate(cfg, d, "within_basket"))
        res.update(_evaluate(cfg, d, "classification"))
        out[name] = res
    cold = instacart_config(tsv, threads, seed, **{"cold.holdout_fraction": "0.05"})
    d = work / "cold"
    cli.cmd_prepare(cold, d)
    cli.cmd_train(cold, d)
    cli.cmd_infer_cold(cold, d)
    out["cold"] = _evaluate(cold, d, "cold_start")
    return out
