"""Synthetic binary benchmark distributions.

Datasets are kept as distinct patterns with integer multiplicities so that
log-likelihood sums over the training set are exact and order independent.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    """Weighted set of binary patterns.

    ``ll_convention`` records how log-likelihoods over this set are reported:
    ``"sum"`` (total over all samples, used for the toy sets) or ``"mean"``
    (per-sample average, used for larger real-world sets).
    """

    patterns: np.ndarray
    weights: np.ndarray
    name: str = ""
    ll_convention: str = "sum"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.patterns = np.atleast_2d(np.asarray(self.patterns, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.int64).reshape(-1)
        if self.weights.shape[0] != self.patterns.shape[0]:
            raise ValueError("one weight per pattern required")
        if np.any((self.patterns != 0.0) & (self.patterns != 1.0)):
            raise ValueError("patterns must be binary")
        if np.any(self.weights < 0) or self.weights.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        if self.ll_convention not in ("sum", "mean"):
            raise ValueError(f"unknown ll_convention {self.ll_convention!r}")

    @property
    def n_visible(self) -> int:
        return self.patterns.shape[1]

    @property
    def total_weight(self) -> int:
        return int(self.weights.sum())

    def mean(self) -> np.ndarray:
        """Column means of the empirical distribution."""
        return self.weights @ self.patterns / self.total_weight

    def samples(self) -> np.ndarray:
        """Expanded sample matrix, each pattern repeated by its weight."""
        return np.repeat(self.patterns, self.weights, axis=0)

    def pattern_set(self) -> set[tuple[int, ...]]:
        return {tuple(int(v) for v in row) for row in self.patterns[self.weights > 0]}


def _from_counts(rows, name: str, **kw) -> Dataset:
    counts: dict[tuple[int, ...], int] = {}
    for r in rows:
        key = tuple(int(v) for v in r)
        counts[key] = counts.get(key, 0) + 1
    return Dataset(np.array(list(counts), dtype=np.float64),
                   np.array(list(counts.values())), name=name, **kw)


def generate_bars_stripes(D: int) -> Dataset:
    """All D x D Bars & Stripes patterns, weighted by generation probability.

    A pattern is drawn by picking rows or columns with equal probability and
    then each row (column) uniformly on/off, so there are ``2 * 2**D`` equally
    likely draws. The two uniform patterns arise from both orientations and
    carry weight 2. Patterns are flattened row-major.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    draws = []
    for orientation in (0, 1):
        for colors in itertools.product((0, 1), repeat=D):
            img = np.repeat(np.array(colors)[:, None], D, axis=1)
            if orientation == 1:
                img = img.T
            draws.append(img.reshape(-1))
    return _from_counts(draws, name=f"bars_stripes_{D}x{D}")


def generate_shifting_bar(N: int, B: int) -> Dataset:
    """N patterns with a run of B ones starting at each position (wrapping)."""
    if not 0 < B < N:
        raise ValueError("require 0 < B < N")
    pats = np.zeros((N, N))
    for p in range(N):
        pats[p, [(p + k) % N for k in range(B)]] = 1.0
    return Dataset(pats, np.ones(N, dtype=np.int64), name=f"shifting_bar_{N}_{B}")


def flip_dataset(d: Dataset) -> Dataset:
    name = d.name[len("flipped_"):] if d.name.startswith("flipped_") else f"flipped_{d.name}"
    return Dataset(1.0 - d.patterns, d.weights.copy(), name=name,
                   ll_convention=d.ll_convention, meta=dict(d.meta))


def ll_upper_bound(d: Dataset) -> float:
    """Log-likelihood of the empirical distribution itself (an upper bound).

    Returned as a total over samples or per sample according to the dataset's
    ``ll_convention``.
    """
    w = d.weights[d.weights > 0].astype(np.float64)
    total = w.sum()
    ll = float(np.sum(w * np.log(w / total)))
    return ll / total if d.ll_convention == "mean" else ll


def binarize(x, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) > threshold).astype(np.float64)


def read_csv(path, name: str | None = None, ll_convention: str = "mean") -> Dataset:
    """Load a 0/1 matrix from CSV; a non-numeric first row is treated as header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    data = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    return _from_counts(data, name=name or Path(path).stem, ll_convention=ll_convention)


def write_csv(d: Dataset, path, header: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{i}" for i in range(d.n_visible)])
        for row in d.samples():
            w.writerow([int(v) for v in row])


def sample_patterns(d: Dataset, n: int, rng: np.random.Generator, flip_prob: float = 0.0
                    ) -> np.ndarray:
    """``n`` draws from the empirical distribution, each bit flipped with ``flip_prob``."""
    if not 0.0 <= flip_prob <= 1.0:
        raise ValueError("flip_prob must lie in [0, 1]")
    idx = rng.choice(d.patterns.shape[0], size=n, p=d.weights / d.total_weight)
    x = d.patterns[idx]
    if flip_prob > 0.0:
        x = np.where(rng.random(x.shape) < flip_prob, 1.0 - x, x)
    return x
