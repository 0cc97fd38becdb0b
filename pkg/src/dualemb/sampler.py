"""Frequency-shaped negative sampling via Vose alias tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_FLOOR = 1e-5
MAX_RETRIES = 100


class SamplerError(ValueError):
    pass


def sampling_weights(counts: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """``max(0, 1 - sqrt(floor / f))`` with ``f = count / total``."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if not total > 0:
        raise SamplerError("counts must sum to a positive total")
    f = counts / total
    w = np.zeros_like(f)
    nz = f > 0
    w[nz] = np.maximum(0.0, 1.0 - np.sqrt(floor / f[nz]))
    return w


def _alias(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(p)
    prob = np.zeros(n, dtype=np.float64)
    alias = np.arange(n, dtype=np.int32)
    scaled = p * n
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    for i in large + small:
        # leftovers are 1 up to rounding; zero-weight columns must never win
        prob[i] = 1.0 if p[i] > 0 else 0.0
    # a zero-probability column aliasing to itself would leak mass to a zero item
    for i in np.flatnonzero(prob == 0.0):
        if p[alias[i]] == 0.0:
            alias[i] = int(np.flatnonzero(p > 0)[0])
    return prob, alias


@dataclass(frozen=True)
class SamplingTable:
    weights: np.ndarray      # normalised probabilities
    prob: np.ndarray         # alias acceptance probabilities
    alias: np.ndarray
    domain: str = "items"

    def __len__(self) -> int:
        return len(self.weights)

    def draw_raw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` unconstrained i.i.d. draws."""
        n = len(self.prob)
        col = rng.integers(0, n, size=size)
        keep = rng.random(size) < self.prob[col]
        return np.where(keep, col, self.alias[col]).astype(np.int32)

    def draw(self, rng: np.random.Generator, exclude=(), count: int = 5) -> np.ndarray:
        """``count`` draws, resampling any hit on ``exclude``."""
        exclude = np.asarray(list(exclude), dtype=np.int64)
        if exclude.size and self.weights[np.unique(exclude)].sum() >= 1.0 - 1e-12:
            raise SamplerError(f"exclusion set covers the whole {self.domain} support")
        out = self.draw_raw(rng, count)
        if exclude.size:
            for _ in range(MAX_RETRIES):
                bad = np.isin(out, exclude)
                if not bad.any():
                    break
                out[bad] = self.draw_raw(rng, int(bad.sum()))
            else:
                raise SamplerError(f"{self.domain}: gave up after {MAX_RETRIES} rejection rounds")
        return out


def build_table(counts, floor: float = DEFAULT_FLOOR, domain: str = "items") -> SamplingTable:
    w = sampling_weights(counts, floor)
    total = w.sum()
    if not total > 0:
        raise SamplerError(
            f"all {domain} sampling weights are zero (every frequency <= {floor}); "
            "lower neg_sample_floor")
    p = w / total
    prob, alias = _alias(p)
    return SamplingTable(p, prob, alias, domain)
