"""Selection metrics and the rank-based statistics used in result tables."""

import itertools
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import norm, rankdata

from laea.errors import InvalidInput

EXACT_LIMIT = 16


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise InvalidInput("confusion counts must be nonnegative")

    @classmethod
    def from_labels(cls, predicted, actual) -> "ConfusionCounts":
        predicted, actual = _paired(predicted, actual)
        return cls(
            tp=int(np.sum((predicted == 1) & (actual == 1))),
            fp=int(np.sum((predicted == 1) & (actual == 0))),
            fn=int(np.sum((predicted == 0) & (actual == 1))),
            tn=int(np.sum((predicted == 0) & (actual == 0))),
        )


def _paired(predicted, actual) -> tuple[np.ndarray, np.ndarray]:
    predicted = np.asarray(predicted).reshape(-1)
    actual = np.asarray(actual).reshape(-1)
    if predicted.size == 0 or predicted.size != actual.size:
        raise InvalidInput(f"need equal nonempty label lists, got {predicted.size} and {actual.size}")
    return predicted, actual


def accuracy(predicted, actual) -> float:
    """Share of positions where the predicted label equals the real one."""
    predicted, actual = _paired(predicted, actual)
    return float(np.mean(predicted == actual))


def precision_recall_f1(c: ConfusionCounts) -> tuple[float, float, float]:
    """Zero denominators give 0."""
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


class Symbol(str, Enum):
    PLUS = "+"
    MINUS = "-"
    APPROX = "≈"


@dataclass(frozen=True)
class StatOutcome:
    p_value: float
    symbol: Symbol
    exact: bool


def _exact_p(ranks: np.ndarray, na: int, observed: float) -> float:
    sums = np.fromiter(
        (ranks[list(c)].sum() for c in itertools.combinations(range(ranks.size), na)),
        dtype=float,
    )
    lower = np.mean(sums <= observed + 1e-9)
    upper = np.mean(sums >= observed - 1e-9)
    return min(1.0, 2.0 * min(lower, upper))


def _normal_p(ranks: np.ndarray, na: int, nb: int, observed: float) -> float:
    n = na + nb
    _, ties = np.unique(ranks, return_counts=True)
    tie_term = np.sum(ties**3 - ties) / (n * (n - 1))
    variance = na * nb / 12.0 * ((n + 1) - tie_term)
    if variance <= 0:
        return 1.0
    z = max(0.0, abs(observed - na * (n + 1) / 2.0) - 0.5) / math.sqrt(variance)
    return min(1.0, 2.0 * float(norm.sf(z)))


def wilcoxon_rank_sum(a, b, alpha: float = 0.05) -> StatOutcome:
    """Two-sided rank-sum test of `a` against `b` (lower is better).

    Exact enumeration up to 16 pooled observations, tie-corrected normal
    approximation with continuity correction above. `+` means `a` is
    significantly better.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size < 3 or b.size < 3:
        raise InvalidInput("rank-sum test needs at least three values per sample")
    pooled = np.concatenate([a, b])
    exact = pooled.size <= EXACT_LIMIT
    if np.all(pooled == pooled[0]):
        return StatOutcome(1.0, Symbol.APPROX, exact)

    ranks = rankdata(pooled)
    observed = float(ranks[: a.size].sum())
    if exact:
        p = _exact_p(ranks, a.size, observed)
    else:
        p = _normal_p(ranks, a.size, b.size, observed)

    expected = a.size * (pooled.size + 1) / 2.0
    if p < alpha and observed < expected:
        symbol = Symbol.PLUS
    elif p < alpha and observed > expected:
        symbol = Symbol.MINUS
    else:
        symbol = Symbol.APPROX
    return StatOutcome(p, symbol, exact)


def mean_rank(results) -> np.ndarray:
    """Average rank per algorithm over problems.

    `results` is a problems x algorithms matrix of mean objectives; ties
    share the averaged rank.
    """
    matrix = np.atleast_2d(np.asarray(results, dtype=float))
    if matrix.size == 0:
        raise InvalidInput("no results to rank")
    return rankdata(matrix, axis=1).mean(axis=0)
