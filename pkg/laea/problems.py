"""
Benchmark problems - box-bounded test functions and sampling designs.

Provides the four minimization benchmarks used throughout the experiments
(Ellipsoid, Rosenbrock, Ackley, Griewank), Latin hypercube sampling for
initial designs and the evenly spaced grid used by the 2D case study.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from laea.errors import InvalidInput


class ProblemName(str, Enum):
    ELLIPSOID = "ellipsoid"
    ROSENBROCK = "rosenbrock"
    ACKLEY = "ackley"
    GRIEWANK = "griewank"


# Symmetric box half-widths per function
DEFAULT_BOUNDS: dict[ProblemName, float] = {
    ProblemName.ELLIPSOID: 5.12,
    ProblemName.ROSENBROCK: 2.048,
    ProblemName.ACKLEY: 32.768,
    ProblemName.GRIEWANK: 600.0,
}


def ellipsoid(x: np.ndarray) -> float:
    """Convex quadratic, minimum 0 at the origin."""
    i = np.arange(1, x.size + 1)
    return float(np.sum(i * x**2))


def rosenbrock(x: np.ndarray) -> float:
    """Narrow curved valley, minimum 0 at the all-ones point."""
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def ackley(x: np.ndarray) -> float:
    """Nearly flat outer region with a deep hole, minimum 0 at the origin."""
    n = x.size
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(x**2) / n))
    b = -np.exp(np.sum(np.cos(2.0 * np.pi * x)) / n)
    return float(a + b + 20.0 + np.e)


def griewank(x: np.ndarray) -> float:
    """Many regularly spread local minima, minimum 0 at the origin."""
    i = np.arange(1, x.size + 1)
    return float(1.0 + np.sum(x**2) / 4000.0 - np.prod(np.cos(x / np.sqrt(i))))


_FUNCTIONS = {
    ProblemName.ELLIPSOID: ellipsoid,
    ProblemName.ROSENBROCK: rosenbrock,
    ProblemName.ACKLEY: ackley,
    ProblemName.GRIEWANK: griewank,
}


class Problem(Protocol):
    """What algorithms need from an objective."""

    name: ProblemName
    dim: int
    lower: np.ndarray
    upper: np.ndarray

    def evaluate(self, x) -> float: ...


@dataclass(frozen=True, eq=False)
class BenchmarkProblem:
    """A named benchmark on an explicit box.

    Bounds live on the instance so experiments can rescale a function
    without touching the defaults.
    """

    name: ProblemName
    dim: int
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInput(f"dimension must be positive, got {self.dim}")
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.size != self.dim or upper.size != self.dim:
            raise InvalidInput(f"bounds must have {self.dim} entries")
        if not np.all(lower < upper):
            raise InvalidInput("every lower bound must be below its upper bound")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_name(
        cls,
        name: str | ProblemName,
        dim: int,
        lower: float | None = None,
        upper: float | None = None,
    ) -> "BenchmarkProblem":
        """Build a problem by its lowercase config name, default box unless overridden."""
        try:
            key = name if isinstance(name, ProblemName) else ProblemName(str(name).lower())
        except ValueError:
            choices = ", ".join(p.value for p in ProblemName)
            raise InvalidInput(f"unknown problem '{name}' (choose from {choices})") from None
        half = DEFAULT_BOUNDS[key]
        lo = -half if lower is None else lower
        hi = half if upper is None else upper
        return cls(key, dim, np.full(dim, lo, dtype=float), np.full(dim, hi, dtype=float))

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def evaluate(self, x) -> float:
        return evaluate(self, x)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


def evaluate(problem: BenchmarkProblem, x) -> float:
    """Objective value of `x`. No clamping; out-of-box points are the caller's concern."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != problem.dim:
        raise InvalidInput(f"{problem.name.value} expects {problem.dim} coordinates, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("decision vector has non-finite coordinates")
    return _FUNCTIONS[problem.name](x)


class CountingProblem:
    """Wraps a problem and counts true evaluations."""

    def __init__(self, problem: BenchmarkProblem):
        self.problem = problem
        self.calls = 0

    def __getattr__(self, item):
        return getattr(self.problem, item)

    def evaluate(self, x) -> float:
        self.calls += 1
        return self.problem.evaluate(x)


def lhs_sample(count: int, problem: BenchmarkProblem, seed: int | np.random.Generator) -> np.ndarray:
    """Latin hypercube design of `count` points, shape (count, dim).

    Each dimension is cut into `count` equal strata and every stratum holds
    exactly one point.
    """
    if count < 1:
        raise InvalidInput(f"sample count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    unit = np.empty((count, problem.dim))
    for d in range(problem.dim):
        unit[:, d] = (rng.permutation(count) + rng.random(count)) / count
    return problem.lower + unit * problem.width


def grid_sample(points_per_dim: int, problem: BenchmarkProblem) -> np.ndarray:
    """Full 2D grid including both endpoints, shape (points_per_dim**2, 2).

    Rows vary the second coordinate fastest.
    """
    if problem.dim != 2:
        raise InvalidInput(f"grid sampling is only defined for 2D problems, got dim={problem.dim}")
    if points_per_dim < 1:
        raise InvalidInput(f"points per dimension must be positive, got {points_per_dim}")
    axes = [np.linspace(problem.lower[d], problem.upper[d], points_per_dim) for d in range(2)]
    g1, g2 = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])
