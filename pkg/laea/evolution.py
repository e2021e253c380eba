"""
Variation operators.

- Variable-width histogram (VWH) model: the reproduction operator of LAEA.
  Per dimension, M-2 equal-width bins cover the population's range and two
  boundary bins reach out to the box bounds with a small pseudo-count, so
  sampling concentrates where the population is while keeping the whole
  box reachable.
- Genetic algorithm step (binary tournament, SBX, polynomial mutation) used
  to collect selection datasets.
- CoDE trial generation: three trials per parent from three DE strategies.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from laea.errors import InvalidInput
from laea.problems import BenchmarkProblem

BOUNDARY_PSEUDO_COUNT = 0.1
DEFAULT_BINS = 15

# CoDE parameter pool as (F, CR)
CODE_PARAMETERS = ((1.0, 0.1), (1.0, 0.9), (0.8, 0.2))
CODE_STRATEGIES = ("rand/1/bin", "rand/2/bin", "current-to-rand/1")


@dataclass
class Solution:
    x: np.ndarray
    objective: Optional[float] = None
    predicted_value: Optional[float] = None
    predicted_label: Optional[int] = None

    @property
    def evaluated(self) -> bool:
        return self.objective is not None


@dataclass
class Population:
    """Ordered solutions with a capacity enforced by the owning algorithm."""

    members: list[Solution] = field(default_factory=list)
    capacity: Optional[int] = None

    @classmethod
    def from_arrays(cls, X, F=None, capacity: Optional[int] = None) -> "Population":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        F = [None] * len(X) if F is None else [float(f) for f in F]
        return cls([Solution(x.copy(), f) for x, f in zip(X, F)], capacity)

    @property
    def X(self) -> np.ndarray:
        return np.array([s.x for s in self.members])

    @property
    def F(self) -> np.ndarray:
        return np.array([s.objective for s in self.members], dtype=float)

    def __len__(self) -> int:
        return len(self.members)


def _coords(pop) -> np.ndarray:
    if isinstance(pop, Population):
        return pop.X
    if len(pop) and isinstance(pop[0], Solution):
        return np.array([s.x for s in pop])
    return np.atleast_2d(np.asarray(pop, dtype=float))


# ---------------------------------------------------------------------------
# Variable-width histogram
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VwhModel:
    """Per-dimension bin edges, shape (dim, M+1), and bin probabilities, shape (dim, M)."""

    edges: np.ndarray
    probabilities: np.ndarray

    @property
    def bins(self) -> int:
        return self.probabilities.shape[1]

    @property
    def dim(self) -> int:
        return self.probabilities.shape[0]


def vwh_fit(pop, problem: BenchmarkProblem, bins: int = DEFAULT_BINS) -> VwhModel:
    """Fit a variable-width histogram to the population coordinates."""
    X = _coords(pop)
    if X.shape[0] < 2:
        raise InvalidInput("histogram needs at least two solutions")
    if bins < 3:
        raise InvalidInput(f"histogram needs at least 3 bins, got {bins}")
    if X.shape[1] != problem.dim:
        raise InvalidInput("population dimension does not match the problem")

    edges = np.empty((problem.dim, bins + 1))
    probabilities = np.empty((problem.dim, bins))
    interior = bins - 2
    for d in range(problem.dim):
        lower, upper = problem.lower[d], problem.upper[d]
        span = upper - lower
        column = X[:, d]
        lo, hi = float(column.min()), float(column.max())
        if lo == hi:
            lo, hi = lo - 1e-6 * span, hi + 1e-6 * span
        # Keep both boundary bins non-empty in width
        lo = min(max(lo, lower + 1e-9 * span), upper - 2e-9 * span)
        hi = max(min(hi, upper - 1e-9 * span), lo + 1e-9 * span)

        edges[d, 0], edges[d, -1] = lower, upper
        edges[d, 1:-1] = np.linspace(lo, hi, interior + 1)

        index = np.clip(np.floor((column - lo) / (hi - lo) * interior), 0, interior - 1).astype(int) + 1
        index[column < lo] = 0
        index[column > hi] = bins - 1
        mass = np.bincount(index, minlength=bins).astype(float)
        mass[0] += BOUNDARY_PSEUDO_COUNT
        mass[-1] += BOUNDARY_PSEUDO_COUNT
        probabilities[d] = mass / mass.sum()
    return VwhModel(edges, probabilities)


def vwh_sample(model: VwhModel, count: int, seed) -> np.ndarray:
    """Draw `count` points: per dimension pick a bin by probability, then uniform inside it."""
    if count < 1:
        raise InvalidInput(f"sample count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    out = np.empty((count, model.dim))
    for d in range(model.dim):
        chosen = rng.choice(model.bins, size=count, p=model.probabilities[d])
        left, right = model.edges[d, chosen], model.edges[d, chosen + 1]
        out[:, d] = np.minimum(left + rng.random(count) * (right - left), model.edges[d, -1])
    return out


# ---------------------------------------------------------------------------
# Genetic algorithm
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaSettings:
    crossover_eta: float = 15.0
    crossover_prob: float = 0.9
    mutation_eta: float = 20.0
    # None means 1/n
    mutation_prob: Optional[float] = None


def _tournament(F: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.integers(0, F.size, size=count)
    b = rng.integers(0, F.size, size=count)
    return np.where(F[b] < F[a], b, a)


def _sbx(p1: np.ndarray, p2: np.ndarray, eta: float, rng: np.random.Generator):
    u = rng.random(p1.shape)
    beta = np.where(
        u <= 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)),
        (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0)),
    )
    c1 = 0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2)
    c2 = 0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2)
    return c1, c2


def _polynomial_mutation(X: np.ndarray, problem: BenchmarkProblem, eta: float, prob: float, rng) -> np.ndarray:
    mask = rng.random(X.shape) < prob
    u = rng.random(X.shape)
    delta = np.where(
        u < 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)) - 1.0,
        1.0 - (2.0 * (1.0 - u)) ** (1.0 / (eta + 1.0)),
    )
    return np.where(mask, X + delta * problem.width, X)


def ga_step(X, F, problem: BenchmarkProblem, settings: GaSettings = GaSettings(), seed=None) -> np.ndarray:
    """One generation of offspring, same size as the parent population."""
    rng = np.random.default_rng(seed)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    F = np.asarray(F, dtype=float).reshape(-1)
    if X.shape[0] != F.size or F.size < 2:
        raise InvalidInput("GA needs at least two evaluated parents")
    n_off = X.shape[0]
    pairs = (n_off + 1) // 2

    winners = X[_tournament(F, 2 * pairs, rng)]
    p1, p2 = winners[0::2], winners[1::2]
    crossed = rng.random(pairs) < settings.crossover_prob
    c1, c2 = _sbx(p1, p2, settings.crossover_eta, rng)
    c1 = np.where(crossed[:, None], c1, p1)
    c2 = np.where(crossed[:, None], c2, p2)
    children = np.empty((2 * pairs, problem.dim))
    children[0::2], children[1::2] = c1, c2

    prob = settings.mutation_prob if settings.mutation_prob is not None else 1.0 / problem.dim
    children = _polynomial_mutation(children[:n_off], problem, settings.mutation_eta, prob, rng)
    return np.clip(children, problem.lower, problem.upper)


# ---------------------------------------------------------------------------
# CoDE trial generation
# ---------------------------------------------------------------------------


def reflect_into_bounds(v: np.ndarray, problem: BenchmarkProblem) -> np.ndarray:
    v = np.where(v < problem.lower, 2.0 * problem.lower - v, v)
    v = np.where(v > problem.upper, 2.0 * problem.upper - v, v)
    return np.clip(v, problem.lower, problem.upper)


def _binomial(target: np.ndarray, mutant: np.ndarray, cr: float, rng) -> np.ndarray:
    mask = rng.random(target.size) < cr
    mask[rng.integers(target.size)] = True
    return np.where(mask, mutant, target)


def code_generate_trials(parent_index: int, pop, problem: BenchmarkProblem, seed=None) -> np.ndarray:
    """Three trial vectors for one parent, shape (3, dim).

    Strategies rand/1/bin, rand/2/bin and current-to-rand/1, each paired
    with an (F, CR) setting drawn at random from the parameter pool.
    """
    rng = np.random.default_rng(seed)
    X = _coords(pop)
    if X.shape[0] < 5:
        raise InvalidInput(f"CoDE needs at least 5 solutions, got {X.shape[0]}")
    if not 0 <= parent_index < X.shape[0]:
        raise InvalidInput(f"parent index {parent_index} out of range")
    target = X[parent_index]
    others = np.delete(np.arange(X.shape[0]), parent_index)
    trials = np.empty((3, problem.dim))

    for k, strategy in enumerate(CODE_STRATEGIES):
        f, cr = CODE_PARAMETERS[rng.integers(len(CODE_PARAMETERS))]
        need = 5 if strategy == "rand/2/bin" else 3
        # rand/2/bin with only four donors draws with replacement
        r = X[rng.choice(others, size=need, replace=others.size < need)]
        if strategy == "rand/1/bin":
            trial = _binomial(target, r[0] + f * (r[1] - r[2]), cr, rng)
        elif strategy == "rand/2/bin":
            trial = _binomial(target, r[0] + f * (r[1] - r[2]) + f * (r[3] - r[4]), cr, rng)
        else:
            trial = target + rng.random() * (r[0] - target) + f * (r[1] - r[2])
        trials[k] = reflect_into_bounds(trial, problem)
    return trials


def stable_best(F: Sequence[float], count: int) -> np.ndarray:
    """Indices of the `count` smallest values, earliest first among ties."""
    return np.argsort(np.asarray(F, dtype=float), kind="stable")[:count]
