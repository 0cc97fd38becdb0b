from dataclasses import replace

import numpy as np
import pytest

from dualemb.corpus import Observation
from dualemb.experiments import synthetic_run
from dualemb.store import EmbeddingStore
from dualemb.synth import SynthSpec
from dualemb.trainer import TrainConfig


def write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def random_store(rng, n_items=6, n_users=3, n_words=5, n_ufeats=4, dim=4, user_dim=None, tied=True,
                 scale=0.5):
    user_dim = dim if user_dim is None else user_dim
    s = EmbeddingStore.init(n_items, n_users, n_words, n_ufeats, dim, user_dim, tied=tied, dtype=np.float64)
    for arr in s.tables().values():
        arr[...] = rng.normal(scale=scale, size=arr.shape)
    return s


def random_observation(rng, n_items=6, n_users=3, n_words=5, n_ufeats=4, k=None):
    k = int(rng.integers(1, 4)) if k is None else k
    items = rng.choice(n_items, size=k + 1, replace=False)
    toks = tuple(tuple(int(w) for w in rng.choice(n_words, size=rng.integers(0, 3), replace=False))
                 for _ in items)
    utoks = tuple(int(x) for x in rng.choice(n_ufeats, size=rng.integers(0, 3), replace=False))
    return Observation(int(rng.integers(n_users)), int(items[0]), tuple(int(i) for i in items[1:]), toks, utoks)


@pytest.fixture(scope="session")
def synthetic(tmp_path_factory):
    """Default planted corpus, trained single-threaded with the default config."""
    return synthetic_run(tmp_path_factory.mktemp("synth"), SynthSpec(), TrainConfig())


@pytest.fixture(scope="session")
def synthetic_noise_heavy(tmp_path_factory):
    """Mostly category-driven purchases with few planted episodes."""
    spec = SynthSpec(noise_rate=0.95, n_users=1000)
    return synthetic_run(tmp_path_factory.mktemp("synth_noise"), spec, TrainConfig())


PAIRS_ONLY = SynthSpec(n_combos=0, n_users=1000)


@pytest.fixture(scope="session")
def synthetic_pairs_only(tmp_path_factory):
    work = tmp_path_factory.mktemp("synth_pairs")
    return work, synthetic_run(work, PAIRS_ONLY, TrainConfig())


def random_negatives(rng, obs, n_items=6, n_words=5, n_ufeats=4, count=5):
    from dualemb.trainer import NegativeSets

    items = rng.choice(np.setdiff1d(np.arange(n_items), [obs.target]), size=count)
    pairs = [w for toks in obs.item_tokens for w in toks]
    wn = np.array([rng.choice(np.setdiff1d(np.arange(n_words), [w]), size=count) for w in pairs],
                  dtype=np.int64).reshape(len(pairs), count)
    xn = np.array([rng.choice(np.setdiff1d(np.arange(n_ufeats), [x]), size=count) for x in obs.user_tokens],
                  dtype=np.int64).reshape(len(obs.user_tokens), count)
    return NegativeSets(items, wn, xn)


def finite_difference_errors(obs, negs, store, config, h=1e-4):
    """Per-table relative error ||analytic - numeric|| / ||numeric||, plus the analytic grad."""
    from dualemb.trainer import observation_grad, observation_loss

    grad = observation_grad(obs, negs, store, config)
    errors = {}
    for name, arr in store.tables().items():
        g = grad.tables()[name]
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = observation_loss(obs, negs, store, config).total
            arr[idx] = old - h
            down = observation_loss(obs, negs, store, config).total
            arr[idx] = old
            num[idx] = (up - down) / (2 * h)
        scale = max(np.linalg.norm(num), np.linalg.norm(g))
        errors[name] = 0.0 if scale == 0 else float(np.linalg.norm(g - num) / scale)
    return errors, grad


def logistic_equivalence_instance(rng, n_items=8, n_users=4, dim=3, n_obs=12):
    """Frozen-table gradient of one item-out row against a hand-built logistic regression.

    Untied store so the intercept ``b = <z_j^IU, z_u>`` does not move with the row.
    Returns (gradient from the trainer, logistic-regression gradient).
    """
    from dualemb.corpus import Observation
    from dualemb.trainer import NegativeSets, TrainConfig, observation_grad

    cfg = TrainConfig(dim=dim, tied=False, use_item_context=False, use_user_context=False)
    store = random_store(rng, n_items=n_items, n_users=n_users, n_words=1, n_ufeats=1, dim=dim, tied=False)
    j = int(rng.integers(n_items))
    total = np.zeros(dim)
    X, b, y = [], [], []
    for _ in range(n_obs):
        u = int(rng.integers(n_users))
        if rng.random() < 0.5:
            target = j
            i = int(rng.choice(np.setdiff1d(np.arange(n_items), [j])))
            negs = rng.choice(np.setdiff1d(np.arange(n_items), [j]), size=5)
        else:
            target = int(rng.choice(np.setdiff1d(np.arange(n_items), [j])))
            i = int(rng.choice(np.setdiff1d(np.arange(n_items), [target])))
            pool = np.setdiff1d(np.arange(n_items), [target])
            negs = rng.choice(pool, size=5)
            negs[0] = j                     # j appears at least once as a negative
        obs = Observation(u, target, (i,))
        total += observation_grad(obs, NegativeSets(negs.astype(np.int64)), store, cfg).item_out[j]
        for cand, label in [(target, 1.0)] + [(int(n), 0.0) for n in negs]:
            if cand == j:
                X.append(store.item_in[i])
                b.append(store.item_user[j] @ store.user[u])
                y.append(label)
    X, b, y = np.array(X), np.array(b), np.array(y)
    p = 1.0 / (1.0 + np.exp(-(X @ store.item_out[j] + b)))
    return total, (p - y) @ X


SYNTH_RUN_KEYS = {
    "min_transactions": "1", "split.mode": "time-cutoff", "split.train_end": str(21 * 86400),
    "split.valid_end": str(24 * 86400), "split.d1": "1", "split.d2": "1", "split.time_kind": "seconds",
    "eval.basket": "window:3",
}


@pytest.fixture(scope="session")
def cold_pipeline(tmp_path_factory):
    """prepare/train/infer-cold on the default synthetic corpus with 5% of items held out."""
    from dualemb import cli, config

    out = tmp_path_factory.mktemp("cold")
    cfg = config.build(SYNTH_RUN_KEYS)
    paths = cli.cmd_synth(cfg, out / "syn")
    cfg = config.build({**SYNTH_RUN_KEYS, "orders": str(paths["orders"]), "item_context": str(paths["item_context"]),
                        "cold.holdout_fraction": "0.05", "eval.task": "cold_start"})
    cli.cmd_prepare(cfg, out)
    cli.cmd_train(cfg, out)
    cli.cmd_infer_cold(cfg, out)
    return cfg, out
