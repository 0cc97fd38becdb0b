"""Synthetic purchase corpora with planted directed complements.

Items fall into categories; every user shops a few preferred categories
("noise" purchases). Interleaved with the noise are planted episodes:

* pair ``a -> b``: ``a`` is bought, then ``b`` follows with probability ``strength``;
* combo ``(a, c) -> d``: two pair sources ``a`` and ``c`` are bought in random
  order, then ``d`` follows with probability ``strength``.

Planted pairs always cross categories, so a reverse query (``b`` asking for
``a``) gets no help from category co-occurrence. One purchase per day; the
orders file uses epoch seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import SECONDS_PER_DAY, SplitSpec


@dataclass(frozen=True)
class SynthSpec:
    n_items: int = 500
    n_users: int = 2000
    n_categories: int = 20
    cats_per_user: int = 1
    brands_per_category: int = 3
    n_pairs: int = 50
    n_combos: int = 25
    strength: float = 1.0
    combo_weight: float = 2.0       # episode draw weight of a combo relative to a pair
    noise_rate: float = 0.85
    min_len: int = 30
    max_len: int = 40
    seed: int = 0

    def __post_init__(self):
        planted = 2 * self.n_pairs + self.n_combos
        if self.n_combos * 2 > self.n_pairs:
            raise ValueError("each combo needs two distinct pair sources")
        if planted >= self.n_items:
            raise ValueError("too many planted items for the catalog")
        if not 0 <= self.strength <= 1 or not 0 <= self.noise_rate <= 1:
            raise ValueError("strength and noise_rate must lie in [0, 1]")
        if self.combo_weight < 0:
            raise ValueError("combo_weight must be >= 0")


@dataclass
class SynthTruth:
    pairs: list[tuple[int, int]]                # (source, target)
    combos: list[tuple[int, int, int]]          # (a, c, target)
    category: np.ndarray                        # item -> category
    noise_items: np.ndarray
    sequences: list[np.ndarray] = field(repr=False, default_factory=list)

    def individual_target(self, a: int) -> int:
        return dict(self.pairs)[a]


def item_id(i: int) -> str:
    return f"i{i:05d}"


def user_id(u: int) -> str:
    return f"u{u:06d}"


def plant(spec: SynthSpec) -> SynthTruth:
    rng = np.random.default_rng(spec.seed)
    category = np.arange(spec.n_items) % spec.n_categories
    perm = rng.permutation(spec.n_items)
    sources = perm[:spec.n_pairs]
    pool = list(perm[spec.n_pairs:])
    pairs = []
    for a in sources:
        # first unused item in a different category
        for pos, b in enumerate(pool):
            if category[b] != category[a]:
                pairs.append((int(a), int(b)))
                pool.pop(pos)
                break
        else:
            raise ValueError("cannot find a cross-category target")
    combo_sources = rng.permutation(spec.n_pairs)[:2 * spec.n_combos]
    combos = []
    for c in range(spec.n_combos):
        a = pairs[combo_sources[2 * c]][0]
        b = pairs[combo_sources[2 * c + 1]][0]
        combos.append((a, b, int(pool.pop(0))))
    noise = np.array(sorted(pool), dtype=np.int64)
    return SynthTruth(pairs, combos, category, noise)


def sequences(spec: SynthSpec, truth: SynthTruth | None = None) -> SynthTruth:
    """Draw one purchase sequence per user."""
    truth = truth or plant(spec)
    rng = np.random.default_rng([spec.seed, 1])
    by_cat = [truth.noise_items[truth.category[truth.noise_items] == c] for c in range(spec.n_categories)]
    by_cat_ok = [c for c in range(spec.n_categories) if len(by_cat[c])]
    episodes = [(a, b) for a, b in truth.pairs] + [((a, c), d) for a, c, d in truth.combos]
    w = np.array([1.0] * len(truth.pairs) + [spec.combo_weight] * len(truth.combos))
    w = w / w.sum() if len(w) else w
    seqs = []
    for _ in range(spec.n_users):
        cats = rng.choice(by_cat_ok, size=min(spec.cats_per_user, len(by_cat_ok)), replace=False)
        mine = np.concatenate([by_cat[c] for c in cats])
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        seq: list[int] = []
        while len(seq) < length:
            if not episodes or rng.random() < spec.noise_rate:
                seq.append(int(rng.choice(mine)))
                continue
            head, tail = episodes[int(rng.choice(len(episodes), p=w))]
            if isinstance(head, tuple):
                seq.extend(head if rng.random() < 0.5 else head[::-1])
            else:
                seq.append(head)
            seq.append(tail if rng.random() < spec.strength else int(rng.choice(mine)))
        seqs.append(np.array(seq, dtype=np.int64))
    truth.sequences = seqs
    return truth


def generate_synthetic(spec: SynthSpec, out_dir: str | Path) -> tuple[dict[str, Path], SynthTruth]:
    """Write ``orders.tsv``, ``items.tsv`` (item context) and ``truth.tsv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = sequences(spec)
    paths = {"orders": out / "orders.tsv", "item_context": out / "items.tsv", "truth": out / "truth.tsv"}
    with open(paths["orders"], "w", encoding="utf-8") as f:
        for u, seq in enumerate(truth.sequences):
            uid = user_id(u)
            for day, i in enumerate(seq):
                f.write(f"{uid}\t{uid}-{day}\t{day * SECONDS_PER_DAY}\t{item_id(int(i))}\n")
    rng = np.random.default_rng([spec.seed, 2])
    brand = rng.integers(spec.brands_per_category, size=spec.n_items)
    with open(paths["item_context"], "w", encoding="utf-8") as f:
        for i in range(spec.n_items):
            c = truth.category[i]
            f.write(f"{item_id(i)}\tcat{c} brand{c}_{brand[i]} name{i}\n")
    with open(paths["truth"], "w", encoding="utf-8") as f:
        for a, b in truth.pairs:
            f.write(f"pair\t{item_id(a)}\t{item_id(b)}\n")
        for a, c, d in truth.combos:
            f.write(f"combo\t{item_id(a)},{item_id(c)}\t{item_id(d)}\n")
        for i in range(spec.n_items):
            f.write(f"category\t{item_id(i)}\tcat{truth.category[i]}\n")
    return paths, truth


def read_truth(path: str | Path) -> dict[str, list]:
    """Planted structure keyed by raw item ids."""
    out: dict[str, list] = {"pair": [], "combo": [], "category": []}
    with open(path, encoding="utf-8") as f:
        for line in f:
            kind, a, b = line.rstrip("\n").split("\t")
            out[kind].append((tuple(a.split(",")) if kind == "combo" else a, b))
    return out


def suggested_split(spec: SynthSpec, k: int = 2) -> SplitSpec:
    """Time-cutoff split leaving every user a test tail."""
    train_days = int(0.7 * spec.min_len)
    valid_days = int(0.8 * spec.min_len)
    return SplitSpec(mode="time-cutoff", train_end=train_days * SECONDS_PER_DAY,
                     valid_end=valid_days * SECONDS_PER_DAY, d1=1, d2=1, k=k,
                     context="window", time_kind="seconds")
