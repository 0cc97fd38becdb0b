"""Ranking metrics and the linear classification probe."""

from __future__ import annotations

import logging
import warnings

import numpy as np

log = logging.getLogger(__name__)

PROBE_GRID = tuple(10.0 ** e for e in range(-4, 3))


def auc(pos_scores, neg_scores) -> float:
    """Fraction of (pos, neg) pairs ordered correctly; ties count one half."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64).ravel())
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc needs at least one positive and one negative score")
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    return float((below + 0.5 * ties).sum() / (pos.size * neg.size))


def dcg_at_k(flags, k: int) -> float:
    rel = np.asarray(flags, dtype=np.float64)[:k]
    return float((rel / np.log2(np.arange(2, rel.size + 2))).sum())


def ndcg_at_k(flags, k: int, n_relevant: int | None = None) -> float:
    """Binary-relevance NDCG of a ranked list of relevance flags.

    ``n_relevant`` is the number of relevant items in the whole universe (defaults
    to the number of flags set); the ideal list places min(n_relevant, k) hits first.
    """
    flags = np.asarray(flags, dtype=bool)
    r = int(flags.sum()) if n_relevant is None else int(n_relevant)
    if r == 0:
        return 0.0
    ideal = dcg_at_k(np.ones(min(r, k)), k)
    return dcg_at_k(flags, k) / ideal


def hit_at_k(flags, k: int) -> int:
    return int(np.asarray(flags, dtype=bool)[:k].any())


def chance_ndcg(n_candidates: int) -> float:
    """Expected NDCG of a single relevant item placed uniformly among ``n_candidates``."""
    ranks = np.arange(1, n_candidates + 1)
    return float(np.mean(1.0 / np.log2(ranks + 1)))


def classification_probe(features: np.ndarray, labels, label_fraction: float = 0.5,
                         seed: int = 0, grid=PROBE_GRID) -> dict[str, float]:
    """One-vs-rest L2 logistic regression on a random ``label_fraction`` of rows.

    The L2 strength is picked from ``grid`` by 5-fold cross-validation on the
    training part; micro and macro F1 are reported on the remaining rows. A class
    missing from the training part is never predicted and drags macro F1 down.
    """
    from sklearn.exceptions import ConvergenceWarning
    from sklearn.linear_model import LogisticRegression
    from sklearn.metrics import f1_score
    from sklearn.model_selection import GridSearchCV, KFold
    from sklearn.multiclass import OneVsRestClassifier

    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(y))
    n_train = int(round(label_fraction * len(y)))
    tr, te = perm[:n_train], perm[n_train:]
    missing = np.setdiff1d(classes, y[tr])
    if missing.size:
        log.warning("classes absent from the training half, never predicted: %s", list(missing))
    if np.unique(y[tr]).size == 1:
        pred = np.full(te.size, y[tr][0])
        best = float("nan")
    else:
        clf = OneVsRestClassifier(LogisticRegression(tol=1e-6, max_iter=2000))
        search = GridSearchCV(clf, {"estimator__C": [1.0 / lam for lam in grid]},
                              cv=KFold(5, shuffle=True, random_state=seed), scoring="f1_micro")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            warnings.simplefilter("ignore", UserWarning)
            search.fit(X[tr], y[tr])
        pred = search.predict(X[te])
        best = 1.0 / search.best_params_["estimator__C"]
    return {
        "micro_f1": float(f1_score(y[te], pred, labels=classes, average="micro", zero_division=0)),
        "macro_f1": float(f1_score(y[te], pred, labels=classes, average="macro", zero_division=0)),
        "l2": best,
    }
