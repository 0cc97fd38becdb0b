"""Command-line pipeline: ``prepare | train | evaluate | recommend | infer-cold | synth``.

Every command reads an optional ``--config`` file plus ``--set key=value``
overrides (see ``dualemb.config``) and writes its frozen effective config next
to its artifacts in ``--out``. Exit codes: 0 ok, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import store as storemod
from .coldstart import infer_items
from .corpus import CorpusError, Events, Observations, Vocabulary, build_observations, ingest, \
    read_manifest, split, write_manifest
from .evaluator import EvalReport, cold_within_basket_eval, jaccard_baseline, next_purchase_eval, \
    planted_recovery, sequence_baskets, within_basket_eval
from .metrics import classification_probe
from .ranker import Query, rank
from .store import EmbeddingStore, SnapshotError
from .synth import generate_synthetic, read_truth
from .trainer import TrainingError, build_samplers, train

log = logging.getLogger("dualemb")

VOCAB_DIR = "vocab"
VOCAB_MANIFEST = "vocab.manifest"
OBS_CACHE = "observations.npz"
EVENTS = {"train": "events.train.npz", "valid": "events.valid.npz", "test": "events.test.npz"}
COLD_ITEMS = "cold_items.txt"
MODEL = "model.cemb"
TRAIN_MANIFEST = "train.manifest"
COLD_FRAGMENT = "cold.cemb"
EVAL_TSV = "eval.tsv"
EVAL_KV = "eval.txt"


class UsageError(Exception):
    """Bad input from the caller; exit code 2."""


def _file_hash(path: Path) -> str:
    h = hashlib.blake2b(digest_size=16)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"no {what} given (set '{what.replace(' ', '_')}' or pass the flag)")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _require_artifact(out: Path, name: str, producer: str) -> Path:
    p = out / name
    if not p.exists():
        raise UsageError(f"{p} is missing; run '{producer}' with the same --out first")
    return p


def _freeze(cfg: cfgmod.RunConfig, out: Path, command: str) -> None:
    (out / f"{command}.config").write_text(cfg.to_text(), encoding="utf-8")


def manifest_hash(out: Path) -> str:
    return _file_hash(out / VOCAB_MANIFEST)


# -- commands ---------------------------------------------------------------

def cmd_prepare(cfg: cfgmod.RunConfig, out: Path) -> dict[str, str]:
    orders = _require_file(cfg.orders, "orders")
    item_ctx = _require_file(cfg.item_context, "item context") if cfg.item_context else None
    user_ctx = _require_file(cfg.user_context, "user context") if cfg.user_context else None
    out.mkdir(parents=True, exist_ok=True)
    vocab, events = ingest(orders, item_ctx, user_ctx, cfg.min_transactions)
    tr, va, te = split(events, cfg.split)

    cold = np.zeros(0, dtype=np.int64)
    if cfg.cold.holdout_fraction > 0:
        seen = np.unique(tr.item)
        n_cold = int(round(cfg.cold.holdout_fraction * len(seen)))
        cold = np.sort(np.random.default_rng(cfg.seed).choice(seen, size=n_cold, replace=False))
        tr = tr.take(~np.isin(tr.item, cold))
    obs = build_observations(tr, cfg.split)
    if len(obs) == 0:
        raise CorpusError("the training split yields no observations; check the split settings")

    vocab.save(out / VOCAB_DIR)
    for name, ev in zip(("train", "valid", "test"), (tr, va, te)):
        ev.save(out / EVENTS[name])
    obs.save(out / OBS_CACHE)
    (out / COLD_ITEMS).write_text("".join(vocab.items.keys[i] + "\n" for i in cold), encoding="utf-8")

    entries = {
        "n_items": vocab.n_items, "n_users": vocab.n_users,
        "n_item_tokens": vocab.n_item_tokens, "n_user_tokens": vocab.n_user_tokens,
        "events_train": len(tr), "events_valid": len(va), "events_test": len(te),
        "observations": len(obs), "cold_items": len(cold),
        "orders_blake2b": _file_hash(orders),
        "item_context_blake2b": _file_hash(item_ctx) if item_ctx else "none",
        "user_context_blake2b": _file_hash(user_ctx) if user_ctx else "none",
        "config_blake2b": hashlib.blake2b(cfg.to_text().encode(), digest_size=16).hexdigest(),
    }
    write_manifest(out / VOCAB_MANIFEST, entries)
    _freeze(cfg, out, "prepare")
    log.info("prepared %s: %d items, %d users, %d observations", out, vocab.n_items, vocab.n_users, len(obs))
    return {k: str(v) for k, v in entries.items()}


def _load_prepared(out: Path):
    _require_artifact(out, VOCAB_MANIFEST, "prepare")
    vocab = Vocabulary.load(out / VOCAB_DIR)
    obs = Observations.load(out / OBS_CACHE)
    events = {k: Events.load(out / v) for k, v in EVENTS.items()}
    cold_ids = [line for line in (out / COLD_ITEMS).read_text(encoding="utf-8").splitlines() if line]
    cold = np.array([vocab.items.index[c] for c in cold_ids], dtype=np.int64)
    return vocab, obs, events, cold


def cmd_train(cfg: cfgmod.RunConfig, out: Path) -> EmbeddingStore:
    vocab, obs, events, _ = _load_prepared(out)
    tc = cfg.train_config()
    counts = np.bincount(events["train"].item, minlength=vocab.n_items)
    result = train(obs, vocab, tc, item_counts=counts)
    storemod.save(result.store, out / MODEL)
    entries = {
        "seed": tc.seed, "threads": tc.threads, "observations": len(obs),
        "wall_seconds": f"{result.wall_seconds:.3f}",
        "snapshot_config_hash": f"{result.store.config_hash():016x}",
    }
    entries.update({f"train.{k}": v for k, v in result.store.meta.items() if k.startswith("train.")})
    for e, lb in enumerate(result.epoch_losses, 1):
        entries[f"loss.epoch{e}"] = f"{lb.total:.6f} {lb.seq_term:.6f} {lb.item_context_term:.6f} " \
                                    f"{lb.user_context_term:.6f}"
    write_manifest(out / TRAIN_MANIFEST, entries)
    _freeze(cfg, out, "train")
    return result.store


def _baskets(cfg: cfgmod.RunConfig, events: Events) -> list[np.ndarray]:
    if cfg.eval.basket == "order":
        return events.baskets()
    return sequence_baskets(events, int(cfg.eval.basket.split(":")[1]))


def _read_labels(path: Path, vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    idx, labels = [], []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise UsageError(f"{path}:{n}: expected item_id<TAB>label")
        i = vocab.items.get(parts[0])
        if i >= 0:
            idx.append(i)
            labels.append(parts[1])
    if not idx:
        raise UsageError(f"{path}: no labelled item is in the vocabulary")
    return np.array(idx, dtype=np.int64), np.array(labels)


def _trained_items(vocab: Vocabulary, cold: np.ndarray) -> np.ndarray:
    mask = np.ones(vocab.n_items, dtype=bool)
    mask[cold] = False
    return np.flatnonzero(mask)


def cmd_evaluate(cfg: cfgmod.RunConfig, out: Path) -> EvalReport:
    vocab, obs, events, cold = _load_prepared(out)
    store = storemod.load(_require_artifact(out, MODEL, "train"))
    ev = cfg.eval
    task = ev.task
    if task == "within_basket":
        cand = _trained_items(vocab, cold) if len(cold) else None
        report = within_basket_eval(_baskets(cfg, events["test"]), store, ev.negatives, cfg.seed, candidates=cand)
    elif task == "next_purchase":
        hist = Events.concat([events["train"], events["valid"]])
        report = next_purchase_eval(hist, events["test"], store, cfg.split.d1, cfg.split.d2,
                                    cfg.split.day_unit, ev.k_values, ev.mode, ev.recall_pool)
    elif task == "classification":
        idx, labels = _read_labels(_require_file(ev.labels, "eval labels"), vocab)
        res = classification_probe(store.item_in[idx], labels, ev.label_fraction, cfg.seed)
        report = EvalReport({"micro_f1": res["micro_f1"], "macro_f1": res["macro_f1"], "l2": res["l2"]},
                            {"task": "classification", "items": str(len(idx))})
    elif task == "cold_start":
        if len(cold) == 0:
            raise UsageError("no held-out items; prepare with cold.holdout_fraction > 0")
        ids, rows = storemod.load_fragment(_require_artifact(out, COLD_FRAGMENT, "infer-cold"))
        inferred = store.copy()
        pos = np.array([vocab.items.index[i] for i in ids], dtype=np.int64)
        inferred.item_in[pos] = rows
        trained = _trained_items(vocab, cold)
        baskets = _baskets(cfg, events["test"])
        kw = {"n_negatives": ev.negatives, "seed": cfg.seed}
        r_inf = cold_within_basket_eval(baskets, inferred, cold, trained, **kw)
        toks = lambda items: [vocab.tokens_of_item(int(i)).tolist() for i in items]
        r_jac = jaccard_baseline(baskets, store, cold, toks(cold), trained, toks(trained),
                                 vocab.n_item_tokens, **kw)
        report = EvalReport({"auc_infer": r_inf["auc"], "ndcg_infer": r_inf["ndcg"],
                             "auc_jaccard": r_jac["auc"], "ndcg_jaccard": r_jac["ndcg"]},
                            {"task": "cold_start", "cold_items": str(len(cold)),
                             "baskets": r_inf.meta["baskets"], "negatives": str(ev.negatives)})
    else:  # recovery
        truth = read_truth(_require_file(ev.truth, "eval truth"))
        ix = vocab.items.index
        try:
            pairs = [(ix[a], ix[b]) for a, b in truth["pair"]]
            combos = [(ix[a], ix[c], ix[d]) for (a, c), d in truth["combo"]]
        except KeyError as e:
            raise UsageError(f"planted item {e} is not in the vocabulary") from None
        r = planted_recovery(store, pairs, combos)
        report = EvalReport({"forward_hit1": r.forward_hit1, "reverse_hit10": r.reverse_hit10,
                             "reverse_chance10": r.reverse_chance10, "combo_win_rate": r.combo_win_rate},
                            {"task": "recovery", "pairs": str(len(pairs)), "combos": str(len(combos))})
    report.write(out / EVAL_KV, out / EVAL_TSV)
    _freeze(cfg, out, "evaluate")
    return report


def format_ranked(ranked, vocab: Vocabulary) -> str:
    return "".join(f"{r}\t{vocab.items.keys[i]}\t{s:.9g}\n" for r, (i, s) in enumerate(ranked, 1))


def cmd_recommend(cfg: cfgmod.RunConfig, out: Path, context: list[str], user: str | None,
                  k: int, pool: int, mode: str) -> str:
    vocab = Vocabulary.load(_require_artifact(out, VOCAB_DIR, "prepare"))
    store = storemod.load(_require_artifact(out, MODEL, "train"))
    unknown = [c for c in context if c not in vocab.items]
    if unknown:
        raise UsageError(f"unknown context item(s): {', '.join(unknown)}")
    u = None
    if user is not None:
        if user not in vocab.users:
            raise UsageError(f"unknown user: {user}")
        u = vocab.users.index[user]
    try:
        q = Query(tuple(vocab.items.index[c] for c in context), u, k, pool)
        return format_ranked(rank(q, store, mode), vocab)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _read_item_file(path: Path) -> dict[str, list[str]]:
    out = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        item, sep, toks = line.partition("\t")
        if not sep:
            raise UsageError(f"{path}:{n}: expected item_id<TAB>tokens")
        out[item] = list(dict.fromkeys(t for t in toks.split(" ") if t))
    return out


def cmd_infer_cold(cfg: cfgmod.RunConfig, out: Path, items_file: str | None = None) -> tuple[list[str], np.ndarray]:
    vocab, obs, _, cold = _load_prepared(out)
    store = storemod.load(_require_artifact(out, MODEL, "train"))
    if items_file is not None:
        requested = _read_item_file(_require_file(items_file, "items file"))
    else:
        if len(cold) == 0:
            raise UsageError("no held-out items and no --items file given")
        tok = vocab.item_tokens.keys
        requested = {vocab.items.keys[i]: [tok[w] for w in vocab.tokens_of_item(int(i))] for i in cold}
    samplers = build_samplers(obs, vocab, replace(cfg.train_config(), use_item_context=True))
    if samplers.words is None:
        raise UsageError("the vocabulary has no item tokens; cold-start inference needs them")
    cap = cfg.cold.norm_cap
    if cap is None:
        # held-out rows are untrained noise; keep them out of the percentile
        norms = np.linalg.norm(store.item_in[_trained_items(vocab, cold)].astype(np.float64), axis=1)
        cap = float(np.percentile(norms, 95))
    ids, rows = infer_items(requested, vocab.item_tokens.index, store, samplers.words, cfg.seed,
                            cfg.cold.steps, cfg.cold.step_size, cap)
    storemod.save_fragment(out / COLD_FRAGMENT, ids, rows)
    _freeze(cfg, out, "infer-cold")
    return ids, rows


def cmd_synth(cfg: cfgmod.RunConfig, out: Path) -> dict[str, Path]:
    paths, _ = generate_synthetic(cfg.synth, out)
    _freeze(cfg, out, "synth")
    return paths


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, metavar="DIR", help="artifact directory")
    common.add_argument("--config", metavar="FILE", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="run seed (config key 'seed')")
    common.add_argument("--threads", type=int, help="training threads (config key 'threads')")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="dualemb", description="Dual item embeddings for complementary recommendation.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", parents=[common], help="ingest, split and cache observations")
    sp.add_argument("--orders", metavar="FILE", help="orders TSV: user, order, time, item")
    sp.add_argument("--item-context", metavar="FILE", help="item context TSV: item, tokens")
    sp.add_argument("--user-context", metavar="FILE", help="user context TSV: user, tokens")

    sub.add_parser("train", parents=[common], help="train embeddings and write model.cemb")

    sp = sub.add_parser("evaluate", parents=[common], help="write eval.tsv for one task")
    sp.add_argument("--task", choices=["within_basket", "next_purchase", "classification", "cold_start",
                                       "recovery"], help="evaluation task (config key 'eval.task')")

    sp = sub.add_parser("recommend", parents=[common], help="print top-K complements as TSV")
    sp.add_argument("--context", required=True, metavar="ID[,ID...]", help="context item ids, most recent first")
    sp.add_argument("--user", metavar="ID", help="user id (needed for modes user and two-stage)")
    sp.add_argument("--k", type=int, default=10, help="list length")
    sp.add_argument("--pool", type=int, default=100, help="recall pool size for two-stage")
    sp.add_argument("--mode", choices=["complement", "user", "two-stage"], default="complement")

    sp = sub.add_parser("infer-cold", parents=[common], help="infer item-in rows for cold items")
    sp.add_argument("--items", metavar="FILE",
                    help="item context TSV of cold items (default: the items held out by prepare)")

    sub.add_parser("synth", parents=[common], help="generate a synthetic planted corpus")
    return p


def _config_from_args(args) -> cfgmod.RunConfig:
    overrides = list(args.set)
    for flag, key in (("seed", "seed"), ("threads", "threads"), ("orders", "orders"),
                      ("item_context", "item_context"), ("user_context", "user_context"),
                      ("task", "eval.task")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append(f"{key}={v}")
    return cfgmod.load(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        cfg = _config_from_args(args)
        if args.command == "prepare":
            entries = cmd_prepare(cfg, out)
            print("".join(f"{k}={v}\n" for k, v in entries.items()), end="")
        elif args.command == "train":
            cmd_train(cfg, out)
            m = read_manifest(out / TRAIN_MANIFEST)
            print(f"wrote {out / MODEL} in {m['wall_seconds']}s")
        elif args.command == "evaluate":
            print(cmd_evaluate(cfg, out).to_kv(), end="")
        elif args.command == "recommend":
            ctx = [c for c in args.context.split(",") if c]
            sys.stdout.write(cmd_recommend(cfg, out, ctx, args.user, args.k, args.pool, args.mode))
        elif args.command == "infer-cold":
            ids, _ = cmd_infer_cold(cfg, out, args.items)
            print(f"wrote {len(ids)} item(s) to {out / COLD_FRAGMENT}")
        elif args.command == "synth":
            for name, path in cmd_synth(cfg, out).items():
                print(f"{name}={path}")
    except (UsageError, cfgmod.ConfigError) as e:
        print(f"dualemb {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (CorpusError, TrainingError, SnapshotError, OSError, ValueError) as e:
        print(f"dualemb {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
