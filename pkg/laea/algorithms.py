"""
Search procedures built on the surrogate protocol.

Functions:
    laea_run: model-assisted EDA; one true evaluation per generation
    code_preselect_run: CoDE where a surrogate picks one of three trials per parent
    ga_collect_run: plain GA that records parents/offspring for selection studies
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from laea.errors import BackendUnavailable, InvalidInput
from laea.evolution import (
    DEFAULT_BINS,
    GaSettings,
    code_generate_trials,
    ga_step,
    stable_best,
    vwh_fit,
    vwh_sample,
)
from laea.problems import BenchmarkProblem, lhs_sample
from laea.surrogate import (
    LabelRule,
    Predictor,
    SurrogateTask,
    assign_labels_topk,
    failure_count,
    predict_batch,
)

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["gen", "fes", "best_f"]
DEFAULT_GA_GENERATIONS = (2, 22, 42)


class LaeaVariant(str, Enum):
    REG_CLA = "RegCla"
    REG_ONLY = "RegOnly"


class WindowPolicy(str, Enum):
    """Which archive members form the surrogate's context."""

    BEST = "best"
    FIRST = "first"
    RECENT = "recent"


class PreselectStrategy(str, Enum):
    RANDOM = "Random"
    REG = "Reg"
    CLA = "Cla"


class Archive:
    """Append-only store of truly evaluated solutions, in insertion order."""

    def __init__(self, dim: int):
        self.dim = dim
        self._X: list[np.ndarray] = []
        self._F: list[float] = []

    def append(self, x, f: float) -> None:
        if not np.isfinite(f):
            raise InvalidInput(f"archive entries need a finite objective, got {f}")
        self._X.append(np.array(x, dtype=float))
        self._F.append(float(f))

    def __len__(self) -> int:
        return len(self._F)

    @property
    def X(self) -> np.ndarray:
        return np.array(self._X).reshape(-1, self.dim)

    @property
    def F(self) -> np.ndarray:
        return np.array(self._F)

    @property
    def best_index(self) -> int:
        return int(np.argmin(self._F))

    @property
    def best_f(self) -> float:
        return min(self._F)

    def window(self, size: int, policy: WindowPolicy = WindowPolicy.BEST) -> tuple[np.ndarray, np.ndarray]:
        """Context rows (X, F); every member when the archive is smaller than `size`."""
        X, F = self.X, self.F
        if policy is WindowPolicy.BEST:
            idx = stable_best(F, size)
        elif policy is WindowPolicy.FIRST:
            idx = np.arange(min(size, len(F)))
        else:
            idx = np.arange(max(0, len(F) - size), len(F))
        return X[idx], F[idx]


@dataclass(frozen=True)
class TracePoint:
    gen: int
    fes: int
    best_f: float


@dataclass
class RunResult:
    algorithm: str
    problem: str
    dim: int
    seed: int
    best_x: list[float]
    best_f: float
    trace: list[TracePoint]
    archive_X: list[list[float]]
    archive_F: list[float]
    failures: int
    config: dict
    complete: bool = True
    unevaluated_sizes: list[int] = field(default_factory=list)
    predict_calls: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(t) for t in self.trace], columns=TRACE_COLUMNS)


def _result(algorithm, problem, seed, archive, trace, failures, config, **extra) -> RunResult:
    best = archive.best_index
    return RunResult(
        algorithm=algorithm,
        problem=problem.name.value,
        dim=problem.dim,
        seed=seed,
        best_x=archive.X[best].tolist(),
        best_f=archive.best_f,
        trace=trace,
        archive_X=archive.X.tolist(),
        archive_F=archive.F.tolist(),
        failures=failures,
        config=config,
        **extra,
    )


def _initialize(problem: BenchmarkProblem, size: int, rng) -> tuple[Archive, np.ndarray, np.ndarray]:
    archive = Archive(problem.dim)
    X = lhs_sample(size, problem, rng)
    F = np.array([problem.evaluate(x) for x in X])
    for x, f in zip(X, F):
        archive.append(x, f)
    return archive, X, F


# ---------------------------------------------------------------------------
# LAEA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaeaConfig:
    problem: BenchmarkProblem
    predictor: Predictor
    seed: int = 0
    pop_size: int = 50
    tau: int = 50
    fes_max: int = 300
    variant: LaeaVariant = LaeaVariant.REG_CLA
    label_ratio: float = 0.3
    window: WindowPolicy = WindowPolicy.BEST
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.pop_size < 4:
            raise InvalidInput(f"population size must be at least 4, got {self.pop_size}")
        if self.tau < 2:
            raise InvalidInput(f"window size must be at least 2, got {self.tau}")
        if self.fes_max <= self.pop_size:
            raise InvalidInput("evaluation budget must exceed the population size")
        if not 0.0 < self.label_ratio < 1.0:
            raise InvalidInput("label ratio must lie in (0, 1)")
        object.__setattr__(self, "variant", LaeaVariant(self.variant))
        object.__setattr__(self, "window", WindowPolicy(self.window))

    def echo(self) -> dict:
        return {
            "problem": self.problem.name.value,
            "dim": self.problem.dim,
            "predictor": getattr(self.predictor, "name", type(self.predictor).__name__),
            "seed": self.seed,
            "pop_size": self.pop_size,
            "tau": self.tau,
            "fes_max": self.fes_max,
            "variant": self.variant.value,
            "label_ratio": self.label_ratio,
            "window": self.window.value,
            "bins": self.bins,
            "init_counts_toward_budget": True,
        }


def assisted_select_value(Q, values) -> int:
    """Index of the smallest predicted value; the first one on ties."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0 or values.size != len(Q):
        raise InvalidInput("need one prediction per candidate")
    return int(np.argmin(values))


def assisted_select_label(Q, labels, cap: int, seed) -> np.ndarray:
    """Candidates predicted as class 1, capped at `cap` by a random subset."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    labels = np.asarray(labels).reshape(-1)
    if labels.size != len(Q):
        raise InvalidInput("need one label per candidate")
    positives = np.flatnonzero(labels == 1)
    if positives.size > cap:
        rng = np.random.default_rng(seed)
        positives = np.sort(rng.choice(positives, size=cap, replace=False))
    return Q[positives]


def laea_run(cfg: LaeaConfig) -> RunResult:
    """Run the model-assisted EDA until the evaluation budget is spent.

    The initial Latin hypercube design counts toward `fes_max`. If the
    backend becomes unreachable the run stops and the result is flagged
    incomplete.
    """
    problem, predictor = cfg.problem, cfg.predictor
    rng = np.random.default_rng(cfg.seed)
    failures_before = failure_count(predictor)
    name = "LAEA" if cfg.variant is LaeaVariant.REG_CLA else "LAEA-Reg"

    archive, pop_X, pop_F = _initialize(problem, cfg.pop_size, rng)
    unevaluated = np.empty((0, problem.dim))
    fes, gen, calls = cfg.pop_size, 0, 0
    trace = [TracePoint(0, fes, archive.best_f)]
    sizes: list[int] = []
    complete = True
    cap = cfg.pop_size // 2

    while fes < cfg.fes_max:
        gen += 1
        model = vwh_fit(np.vstack([pop_X, unevaluated]), problem, cfg.bins)
        Q = vwh_sample(model, cfg.pop_size, rng)
        WX, WF = archive.window(cfg.tau, cfg.window)

        try:
            values = np.array([p.value for p in predict_batch(predictor, WX, WF, Q, SurrogateTask.REG)])
            calls += 1
            if cfg.variant is LaeaVariant.REG_CLA:
                rule = LabelRule.from_topk(WF, cfg.label_ratio)
                context = assign_labels_topk(WF, cfg.label_ratio)
                predicted = predict_batch(predictor, WX, context, Q, SurrogateTask.CLA, rule)
                labels = np.array([p.label for p in predicted])
                calls += 1
        except BackendUnavailable as e:
            logger.error("%s on %s seed %d stopped at generation %d: %s", name, problem.name.value, cfg.seed, gen, e)
            complete = False
            break

        q = assisted_select_value(Q, values)
        if cfg.variant is LaeaVariant.REG_CLA:
            labels[q] = 0
            unevaluated = assisted_select_label(Q, labels, cap, rng)
        else:
            ranked = [i for i in stable_best(values, len(values)) if i != q]
            unevaluated = Q[ranked[:cap]]

        fq = problem.evaluate(Q[q])
        archive.append(Q[q], fq)
        fes += 1

        pool_X = np.vstack([pop_X, Q[q]])
        pool_F = np.append(pop_F, fq)
        keep = stable_best(pool_F, cfg.pop_size)
        pop_X, pop_F = pool_X[keep], pool_F[keep]

        sizes.append(len(unevaluated))
        trace.append(TracePoint(gen, fes, archive.best_f))
        logger.debug("%s gen %d fes %d best %.6g |Pu|=%d", name, gen, fes, archive.best_f, len(unevaluated))

    return _result(
        name,
        problem,
        cfg.seed,
        archive,
        trace,
        failure_count(predictor) - failures_before,
        cfg.echo(),
        complete=complete,
        unevaluated_sizes=sizes,
        predict_calls=calls,
    )


# ---------------------------------------------------------------------------
# CoDE with surrogate pre-selection
# ---------------------------------------------------------------------------


def code_preselect_run(
    problem: BenchmarkProblem,
    predictor: Optional[Predictor],
    strategy: PreselectStrategy,
    budget: int = 300,
    pop_size: int = 50,
    seed: int = 0,
) -> RunResult:
    """CoDE where each parent's three trials are reduced to one before evaluation.

    Random never consults the predictor. Reg keeps the trial with the lowest
    predicted value. Cla keeps a trial predicted as class 1, a random one
    when none is. The parent population is the prediction context.
    """
    strategy = PreselectStrategy(strategy)
    if pop_size < 5:
        raise InvalidInput(f"CoDE needs a population of at least 5, got {pop_size}")
    if budget <= pop_size:
        raise InvalidInput("evaluation budget must exceed the population size")
    if strategy is not PreselectStrategy.RANDOM and predictor is None:
        raise InvalidInput(f"{strategy.value} pre-selection needs a predictor")

    rng = np.random.default_rng(seed)
    pick = np.random.default_rng([seed, 1])
    failures_before = failure_count(predictor) if predictor is not None else 0

    archive, X, F = _initialize(problem, pop_size, rng)
    fes, gen, calls = pop_size, 0, 0
    trace = [TracePoint(0, fes, archive.best_f)]
    complete = True

    while fes < budget:
        gen += 1
        trials = np.stack([code_generate_trials(i, X, problem, rng) for i in range(pop_size)])
        flat = trials.reshape(-1, problem.dim)

        try:
            if strategy is PreselectStrategy.REG:
                values = np.array([p.value for p in predict_batch(predictor, X, F, flat, SurrogateTask.REG)])
                choice = np.argmin(values.reshape(pop_size, 3), axis=1)
                calls += 1
            elif strategy is PreselectStrategy.CLA:
                rule = LabelRule.from_topk(F, 0.5)
                predicted = predict_batch(predictor, X, assign_labels_topk(F, 0.5), flat, SurrogateTask.CLA, rule)
                labels = np.array([p.label for p in predicted]).reshape(pop_size, 3)
                choice = np.array([
                    pick.choice(np.flatnonzero(row == 1)) if row.any() else pick.integers(3) for row in labels
                ])
                calls += 1
            else:
                choice = pick.integers(3, size=pop_size)
        except BackendUnavailable as e:
            logger.error("CoDE-%s on %s seed %d stopped at generation %d: %s", strategy.value, problem.name.value, seed, gen, e)
            complete = False
            break

        next_X, next_F = X.copy(), F.copy()
        for i in range(pop_size):
            if fes >= budget:
                break
            x = trials[i, choice[i]]
            f = problem.evaluate(x)
            archive.append(x, f)
            fes += 1
            if f < F[i]:
                next_X[i], next_F[i] = x, f
        X, F = next_X, next_F
        trace.append(TracePoint(gen, fes, archive.best_f))

    return _result(
        f"CoDE-{strategy.value}",
        problem,
        seed,
        archive,
        trace,
        (failure_count(predictor) - failures_before) if predictor is not None else 0,
        {
            "problem": problem.name.value,
            "dim": problem.dim,
            "strategy": strategy.value,
            "predictor": getattr(predictor, "name", None),
            "budget": budget,
            "pop_size": pop_size,
            "seed": seed,
        },
        complete=complete,
        predict_calls=calls,
    )


# ---------------------------------------------------------------------------
# GA data collection
# ---------------------------------------------------------------------------


def dataset_columns(dim: int) -> list[str]:
    return ["run", "gen", "role"] + [f"x{i + 1}" for i in range(dim)] + ["f"]


def ga_collect_run(
    problem: BenchmarkProblem,
    generations: Sequence[int] = DEFAULT_GA_GENERATIONS,
    repeats: int = 30,
    seed: int = 0,
    pop_size: int = 50,
    settings: GaSettings = GaSettings(),
) -> pd.DataFrame:
    """Record parents and offspring (with true objectives) at chosen generations.

    Generation 1 breeds from the Latin hypercube design; survivors are the
    best `pop_size` of parents and offspring. Run i uses seed + i.
    """
    if not generations or min(generations) < 1:
        raise InvalidInput("recorded generations must be positive")
    if repeats < 1:
        raise InvalidInput("need at least one repetition")
    wanted = set(generations)
    rows = []
    for run in range(repeats):
        rng = np.random.default_rng(seed + run)
        X = lhs_sample(pop_size, problem, rng)
        F = np.array([problem.evaluate(x) for x in X])
        for gen in range(1, max(wanted) + 1):
            children = ga_step(X, F, problem, settings, rng)
            child_F = np.array([problem.evaluate(c) for c in children])
            if gen in wanted:
                rows.extend([run, gen, "parent", *x, f] for x, f in zip(X, F))
                rows.extend([run, gen, "offspring", *c, f] for c, f in zip(children, child_F))
            pool_X, pool_F = np.vstack([X, children]), np.concatenate([F, child_F])
            keep = stable_best(pool_F, pop_size)
            X, F = pool_X[keep], pool_F[keep]
        logger.debug("GA collection run %d on %s-%d done", run, problem.name.value, problem.dim)
    return pd.DataFrame(rows, columns=dataset_columns(problem.dim))
