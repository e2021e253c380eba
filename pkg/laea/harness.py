"""
Experiment harness.

Runs one experiment document end to end and writes everything under its
output directory:

    manifest.json      config echo, git describe, failure tallies, jobs
    records.csv        long format: problem,dim,arm,metric,seed,value
    table.csv          mean/std/rank/symbol per (problem, dim, arm, metric)
    summary.csv        mean rank and +/-/≈ tallies per (arm, metric)
    cells/             one RunResult JSON and trace CSV per (arm, problem, dim, seed)
    points/            per-point predictions of the 2D case study
    datasets/          GA parent/offspring dumps for the selection study
    calls.csv, timing.csv   prompt size and latency study

Experiments: case2d, select-acc, compare, preselect, timing, ga-collect.
"""

import json
import logging
import re
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.stats import rankdata

from laea.algorithms import (
    DEFAULT_GA_GENERATIONS,
    LaeaConfig,
    LaeaVariant,
    PreselectStrategy,
    RunResult,
    WindowPolicy,
    code_preselect_run,
    ga_collect_run,
    laea_run,
)
from laea.backends import BackendConfig, CallLog, OraclePredictor, OracleSpec, echo_complete, make_backend
from laea.config import config
from laea.errors import InvalidInput, InvalidState, PromptStructureError
from laea.metrics import ConfusionCounts, accuracy, mean_rank, precision_recall_f1, wilcoxon_rank_sum
from laea.problems import BenchmarkProblem, ProblemName, grid_sample, lhs_sample
from laea.surrogate import (
    LabelRule,
    Predictor,
    PromptPredictor,
    SurrogateTask,
    assign_labels_median,
    assign_labels_topk,
    failure_count,
    predict_batch,
    render_fixture,
)

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["problem", "dim", "arm", "metric", "seed", "value"]
TABLE_COLUMNS = ["problem", "dim", "arm", "metric", "mean", "std", "rank", "symbol"]
SUMMARY_COLUMNS = ["arm", "metric", "mean_rank", "plus", "minus", "approx"]
POINT_COLUMNS = ["problem", "x1", "x2", "true_label", "pred_label_cla", "pred_label_reg", "true_label_reg"]
TIMING_COLUMNS = ["dim", "beta", "task", "calls", "mean_chars", "mean_approx_tokens", "serial_s", "parallel_s"]

# Metrics where larger is better; everything else is minimized
HIGHER_IS_BETTER = {"acc_cla", "acc_reg"} | {
    f"{mode}_{m}" for mode in ("reg", "cla") for m in ("precision", "recall", "f1")
}


class ExperimentId(str, Enum):
    CASE2D = "case2d"
    SELECT_ACC = "select-acc"
    COMPARE = "compare"
    PRESELECT = "preselect"
    TIMING = "timing"
    GA_COLLECT = "ga-collect"


# ---------------------------------------------------------------------------
# Experiment documents
# ---------------------------------------------------------------------------


class PredictorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["oracle", "backend"] = "oracle"
    oracle: OracleSpec = Field(default_factory=OracleSpec)
    backend: Optional[BackendConfig] = None
    feature_precision: int = Field(3, ge=1)
    value_precision: int = Field(5, ge=1)
    malformed_retries: int = Field(3, ge=0)

    def label(self) -> str:
        if self.kind == "oracle":
            return f"oracle:{self.oracle.mode.value}"
        return f"llm:{(self.backend or BackendConfig()).model}"


class ArmSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    variant: LaeaVariant = LaeaVariant.REG_CLA
    strategy: PreselectStrategy = PreselectStrategy.RANDOM
    predictor: Optional[PredictorSpec] = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(alias="schema")
    experiment: ExperimentId
    problems: list[ProblemName] = Field(default_factory=lambda: list(ProblemName))
    dims: list[int] = Field(default_factory=lambda: [5, 10])
    arms: list[ArmSpec] = Field(default_factory=list)
    seeds: Optional[list[int]] = None
    master_seed: int = 0
    runs: int = Field(30, ge=1)
    budget: int = Field(300, ge=2)
    pop_size: int = Field(50, ge=4)
    tau: int = Field(50, ge=2)
    label_ratio: float = Field(0.3, gt=0.0, lt=1.0)
    window: WindowPolicy = WindowPolicy.BEST
    reference: Optional[str] = None
    output_dir: Optional[str] = None
    dataset_dir: Optional[str] = None
    collect_if_missing: bool = False
    generations: list[int] = Field(default_factory=lambda: list(DEFAULT_GA_GENERATIONS))
    grid_points: int = Field(20, ge=2)
    train_size: int = Field(50, ge=2)
    betas: list[int] = Field(default_factory=lambda: [3, 5])
    timing_parallelism: int = Field(50, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.seeds is not None and not self.seeds:
            raise ValueError("seeds must not be empty")
        if not self.problems or not self.dims or min(self.dims) < 1:
            raise ValueError("need at least one problem and positive dims")
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ValueError("arm names must be unique")
        if self.reference is not None and self.reference not in names:
            raise ValueError(f"reference arm '{self.reference}' is not among the arms")
        if self.experiment is ExperimentId.CASE2D and self.dims != [2]:
            raise ValueError("case2d runs on dims [2] only")
        needs_arms = {ExperimentId.CASE2D, ExperimentId.SELECT_ACC, ExperimentId.COMPARE, ExperimentId.TIMING}
        if self.experiment in needs_arms and not self.arms:
            raise ValueError(f"{self.experiment.value} needs at least one arm")
        if self.experiment in needs_arms and any(a.predictor is None for a in self.arms):
            raise ValueError(f"every {self.experiment.value} arm needs a predictor")
        return self

    @property
    def seed_list(self) -> list[int]:
        """Explicit seeds, or master_seed + i for i < runs."""
        if self.seeds is not None:
            return list(self.seeds)
        return [self.master_seed + i for i in range(self.runs)]

    def echo(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidInput(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise InvalidInput(f"{path} is not valid JSON: {e}") from None
    return parse_config(doc)


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        raise InvalidInput(f"invalid experiment config: {e}") from None


def build_predictor(spec: PredictorSpec, problem: BenchmarkProblem, stream: int = 0, call_log: Optional[CallLog] = None) -> Predictor:
    """Oracle or prompt predictor for one run; `stream` separates oracle noise across seeds."""
    if spec.kind == "oracle":
        return OraclePredictor(spec.oracle, problem, stream)
    backend = make_backend(spec.backend or BackendConfig(), call_log)
    return PromptPredictor(backend, spec.feature_precision, spec.value_precision, malformed_retries=spec.malformed_retries)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            check=True,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.CalledProcessError):
        return "unknown"


def write_manifest(cfg: ExperimentConfig, out_dir: Path, failures: int, jobs: int, extra: Optional[dict] = None) -> Path:
    manifest = {
        "experiment": cfg.experiment.value,
        "config": cfg.echo(),
        "git_describe": git_describe(),
        "failures": failures,
        "jobs": jobs,
        "parallelism": {
            a.name: (a.predictor.backend.parallelism if a.predictor and a.predictor.backend else 1) for a in cfg.arms
        },
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def summarize(
    records: pd.DataFrame,
    arms: list[str],
    problems: list[str],
    dims: list[int],
    reference: Optional[str] = None,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Per-cell mean/std/rank/symbol table and per-arm mean-rank summary.

    Symbols compare each arm against `reference`: "+" means the arm is
    significantly better. Arm order follows `arms`.
    """
    metrics = list(dict.fromkeys(records["metric"]))
    table_rows, summary_rows = [], []
    for metric in metrics:
        sign = -1.0 if metric in HIGHER_IS_BETTER else 1.0
        means_by_cell = []
        symbols = {arm: [] for arm in arms}
        for problem in problems:
            for dim in dims:
                cell = records[(records.problem == problem) & (records.dim == dim) & (records.metric == metric)]
                if cell.empty:
                    continue
                present = [a for a in arms if (cell.arm == a).any()]
                samples = {a: cell[cell.arm == a].sort_values("seed")["value"].to_numpy(dtype=float) for a in present}
                means = np.array([samples[a].mean() for a in present])
                ranks = rankdata(sign * means)
                if len(present) == len(arms):
                    means_by_cell.append(sign * means)
                for arm, mean, rank in zip(present, means, ranks):
                    values = samples[arm]
                    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
                    symbol = ""
                    ref = samples.get(reference) if reference else None
                    if ref is not None and arm != reference and values.size >= 3 and ref.size >= 3:
                        symbol = wilcoxon_rank_sum(sign * values, sign * ref).symbol.value
                        symbols[arm].append(symbol)
                    table_rows.append([problem, dim, arm, metric, float(mean), std, float(rank), symbol])
        if means_by_cell:
            mean_ranks = mean_rank(np.array(means_by_cell))
            for arm, mr in zip(arms, mean_ranks):
                s = symbols[arm]
                summary_rows.append([arm, metric, float(mr), s.count("+"), s.count("-"), s.count("≈")])
    return pd.DataFrame(table_rows, columns=TABLE_COLUMNS), pd.DataFrame(summary_rows, columns=SUMMARY_COLUMNS)


def _write_tables(records: pd.DataFrame, cfg: ExperimentConfig, out_dir: Path, arms: list[str], reference: Optional[str]) -> pd.DataFrame:
    records.to_csv(out_dir / "records.csv", index=False)
    table, summary = summarize(records, arms, [p.value for p in cfg.problems], cfg.dims, reference)
    table.to_csv(out_dir / "table.csv", index=False)
    summary.to_csv(out_dir / "summary.csv", index=False)
    return table


def _records_from_cells(cells_dir: Path) -> pd.DataFrame:
    rows = []
    for path in sorted(cells_dir.glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        rows.append([doc["problem"], doc["dim"], doc["arm"], "best_f", doc["seed"], doc["best_f"]])
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


def build_table(results_dir) -> pd.DataFrame:
    """Re-aggregate a finished results directory into table.csv and summary.csv."""
    results_dir = Path(results_dir)
    manifest_path = results_dir / "manifest.json"
    if not manifest_path.exists():
        raise InvalidState(f"no manifest.json in {results_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    cfg = parse_config(manifest["config"])
    if cfg.experiment in (ExperimentId.TIMING, ExperimentId.GA_COLLECT):
        raise InvalidInput(f"{cfg.experiment.value} results have no table")

    cells = results_dir / "cells"
    if cells.is_dir():
        records = _records_from_cells(cells)
    elif (results_dir / "records.csv").exists():
        records = pd.read_csv(results_dir / "records.csv")
    else:
        raise InvalidState(f"no cells/ or records.csv in {results_dir}")
    if records.empty:
        raise InvalidState(f"no results recorded in {results_dir}")
    return _write_tables(records, cfg, results_dir, manifest["arms"], manifest.get("reference"))


# ---------------------------------------------------------------------------
# 2D case study
# ---------------------------------------------------------------------------


def run_case2d(cfg: ExperimentConfig, out_dir: Path) -> pd.DataFrame:
    """Grid accuracy of each arm as a classifier and as a regressor.

    Classification truth is the training-median rule; the regression mode
    labels the predicted top half of the grid and is scored against the true
    top half.
    """
    points_dir = out_dir / "points"
    points_dir.mkdir(parents=True, exist_ok=True)
    records, failures = [], 0
    for name in cfg.problems:
        problem = BenchmarkProblem.from_name(name, 2)
        grid = grid_sample(cfg.grid_points, problem)
        truth_values = np.array([problem.evaluate(g) for g in grid])
        true_reg = assign_labels_topk(truth_values, 0.5)
        for arm in cfg.arms:
            for seed in cfg.seed_list:
                X = lhs_sample(cfg.train_size, problem, seed)
                Y = np.array([problem.evaluate(x) for x in X])
                true_cla = (truth_values < np.median(Y)).astype(int)
                predictor = build_predictor(arm.predictor, problem, stream=seed)

                rule = LabelRule.from_median(Y)
                cla = predict_batch(predictor, X, assign_labels_median(Y), grid, SurrogateTask.CLA, rule)
                pred_cla = np.array([p.label for p in cla])
                reg = predict_batch(predictor, X, Y, grid, SurrogateTask.REG)
                pred_reg = assign_labels_topk([p.value for p in reg], 0.5)
                failures += failure_count(predictor)

                records.append([problem.name.value, 2, arm.name, "acc_cla", seed, accuracy(pred_cla, true_cla)])
                records.append([problem.name.value, 2, arm.name, "acc_reg", seed, accuracy(pred_reg, true_reg)])
                points = pd.DataFrame(
                    {
                        "problem": problem.name.value,
                        "x1": grid[:, 0],
                        "x2": grid[:, 1],
                        "true_label": true_cla,
                        "pred_label_cla": pred_cla,
                        "pred_label_reg": pred_reg,
                        "true_label_reg": true_reg,
                    },
                    columns=POINT_COLUMNS,
                )
                points.to_csv(points_dir / f"{_slug(arm.name)}__{problem.name.value}__seed{seed}.csv", index=False)
            logger.info("case2d %s %s done", problem.name.value, arm.name)

    frame = pd.DataFrame(records, columns=RECORD_COLUMNS)
    write_manifest(cfg, out_dir, failures, 1, _arm_meta(cfg))
    return _write_tables(frame, cfg, out_dir, [a.name for a in cfg.arms], cfg.reference)


# ---------------------------------------------------------------------------
# Selection accuracy
# ---------------------------------------------------------------------------


def dataset_path(dataset_dir: Path, problem: str, dim: int) -> Path:
    return Path(dataset_dir) / f"{problem}_{dim}.csv"


def _collect(cfg: ExperimentConfig, dataset_dir: Path) -> list[Path]:
    dataset_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in cfg.problems:
        for dim in cfg.dims:
            problem = BenchmarkProblem.from_name(name, dim)
            frame = ga_collect_run(problem, cfg.generations, cfg.runs, cfg.master_seed, cfg.pop_size)
            path = dataset_path(dataset_dir, problem.name.value, dim)
            frame.to_csv(path, index=False)
            written.append(path)
            logger.info("collected %d rows for %s-%d", len(frame), problem.name.value, dim)
    return written


def run_ga_collect(cfg: ExperimentConfig, out_dir: Path) -> list[Path]:
    dataset_dir = Path(cfg.dataset_dir) if cfg.dataset_dir else out_dir / "datasets"
    written = _collect(cfg, dataset_dir)
    write_manifest(cfg, out_dir, 0, 1, {"datasets": [str(p) for p in written]})
    return written


def run_select_acc(cfg: ExperimentConfig, out_dir: Path) -> pd.DataFrame:
    """Precision/recall/F1 of picking the better half of GA offspring."""
    dataset_dir = Path(cfg.dataset_dir) if cfg.dataset_dir else out_dir / "datasets"
    missing = [
        dataset_path(dataset_dir, p.value, d) for p in cfg.problems for d in cfg.dims
        if not dataset_path(dataset_dir, p.value, d).exists()
    ]
    if missing and cfg.collect_if_missing:
        _collect(cfg, dataset_dir)
    elif missing:
        raise InvalidState(f"missing selection dataset(s): {', '.join(str(m) for m in missing)}")

    records, stage_rows, failures = [], [], 0
    for name in cfg.problems:
        for dim in cfg.dims:
            problem = BenchmarkProblem.from_name(name, dim)
            data = pd.read_csv(dataset_path(dataset_dir, problem.name.value, dim))
            xcols = [f"x{i + 1}" for i in range(dim)]
            for arm in cfg.arms:
                for (run, gen), group in data.groupby(["run", "gen"], sort=True):
                    parents = group[group.role == "parent"]
                    offspring = group[group.role == "offspring"]
                    PX, PF = parents[xcols].to_numpy(), parents["f"].to_numpy()
                    U, UF = offspring[xcols].to_numpy(), offspring["f"].to_numpy()
                    truth = assign_labels_topk(UF, 0.5)
                    predictor = build_predictor(arm.predictor, problem, stream=int(run))

                    values = [p.value for p in predict_batch(predictor, PX, PF, U, SurrogateTask.REG)]
                    picked = {"reg": assign_labels_topk(values, 0.5)}
                    labels = predict_batch(predictor, PX, assign_labels_topk(PF, 0.5), U, SurrogateTask.CLA, LabelRule.batch(0.5))
                    picked["cla"] = np.array([p.label for p in labels])
                    failures += failure_count(predictor)

                    for mode, chosen in picked.items():
                        p, r, f1 = precision_recall_f1(ConfusionCounts.from_labels(chosen, truth))
                        for metric, value in (("precision", p), ("recall", r), ("f1", f1)):
                            records.append([problem.name.value, dim, arm.name, f"{mode}_{metric}", int(run), value])
                            stage_rows.append([arm.name, mode, metric, int(gen), value])
            logger.info("select-acc %s-%d done", problem.name.value, dim)

    stages = pd.DataFrame(stage_rows, columns=["arm", "mode", "metric", "gen", "value"])
    stages = stages.groupby(["arm", "mode", "metric", "gen"], sort=False)["value"].agg(["mean", "std"]).reset_index()
    stages.to_csv(out_dir / "stages.csv", index=False)

    frame = pd.DataFrame(records, columns=RECORD_COLUMNS)
    write_manifest(cfg, out_dir, failures, 1, _arm_meta(cfg))
    return _write_tables(frame, cfg, out_dir, [a.name for a in cfg.arms], cfg.reference)


# ---------------------------------------------------------------------------
# Budgeted comparisons (LAEA variants and CoDE pre-selection)
# ---------------------------------------------------------------------------


def _preselect_arms(cfg: ExperimentConfig) -> list[ArmSpec]:
    arms = list(cfg.arms)
    if not any(a.strategy is PreselectStrategy.RANDOM for a in arms):
        arms.insert(0, ArmSpec(name="Random", strategy=PreselectStrategy.RANDOM))
    return arms


def _arms_for(cfg: ExperimentConfig) -> list[ArmSpec]:
    return _preselect_arms(cfg) if cfg.experiment is ExperimentId.PRESELECT else list(cfg.arms)


def _reference_for(cfg: ExperimentConfig) -> Optional[str]:
    if cfg.reference or cfg.experiment is not ExperimentId.PRESELECT:
        return cfg.reference
    return next(a.name for a in _preselect_arms(cfg) if a.strategy is PreselectStrategy.RANDOM)


def _arm_meta(cfg: ExperimentConfig) -> dict:
    return {"arms": [a.name for a in _arms_for(cfg)], "reference": _reference_for(cfg)}


def run_cell(doc: dict, arm_index: int, problem_name: str, dim: int, seed: int, out_dir: str) -> dict:
    """Run one (arm, problem, dim, seed) cell and write its result files.

    Takes the config as a plain dict so it can run in a worker process.
    """
    cfg = parse_config(doc)
    arm = _arms_for(cfg)[arm_index]
    problem = BenchmarkProblem.from_name(problem_name, dim)
    predictor = build_predictor(arm.predictor, problem, stream=seed) if arm.predictor else None

    if cfg.experiment is ExperimentId.COMPARE:
        result: RunResult = laea_run(
            LaeaConfig(
                problem=problem,
                predictor=predictor,
                seed=seed,
                pop_size=cfg.pop_size,
                tau=cfg.tau,
                fes_max=cfg.budget,
                variant=arm.variant,
                label_ratio=cfg.label_ratio,
                window=cfg.window,
            )
        )
    else:
        result = code_preselect_run(problem, predictor, arm.strategy, cfg.budget, cfg.pop_size, seed)

    doc = result.to_dict()
    doc["arm"] = arm.name
    stem = f"{_slug(arm.name)}__{problem.name.value}-{dim}__seed{seed}"
    cells = Path(out_dir) / "cells"
    (cells / f"{stem}.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    result.trace_frame().to_csv(cells / f"{stem}.trace.csv", index=False)
    return {"arm": arm.name, "failures": result.failures, "complete": result.complete}


def run_budgeted(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> pd.DataFrame:
    """compare / preselect: every (arm, problem, dim, seed) cell, then one aggregation pass."""
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    arms = _arms_for(cfg)
    doc = cfg.echo()
    tasks = [
        (doc, i, p.value, d, s, str(out_dir))
        for i in range(len(arms))
        for p in cfg.problems
        for d in cfg.dims
        for s in cfg.seed_list
    ]
    logger.info("%s: %d cells with %d job(s)", cfg.experiment.value, len(tasks), jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_cell, *zip(*tasks)))
    else:
        outcomes = [run_cell(*t) for t in tasks]

    incomplete = sum(not o["complete"] for o in outcomes)
    if incomplete:
        logger.warning("%d cell(s) stopped early because a backend became unavailable", incomplete)
    write_manifest(
        cfg,
        out_dir,
        sum(o["failures"] for o in outcomes),
        jobs,
        {**_arm_meta(cfg), "incomplete_cells": incomplete},
    )
    records = _records_from_cells(out_dir / "cells")
    return _write_tables(records, cfg, out_dir, [a.name for a in arms], _reference_for(cfg))


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------


def run_timing(cfg: ExperimentConfig, out_dir: Path) -> pd.DataFrame:
    """Prompt sizes and serial vs parallel wall time against a backend."""
    arm = cfg.arms[0]
    if arm.predictor.kind != "backend":
        raise InvalidInput("timing needs a backend predictor, not an oracle")
    base = arm.predictor.backend or BackendConfig()
    problem_name = cfg.problems[0]
    log = CallLog()
    rows = []

    for dim in cfg.dims:
        problem = BenchmarkProblem.from_name(problem_name, dim)
        seed = cfg.seed_list[0]
        X = lhs_sample(cfg.train_size, problem, seed)
        Y = np.array([problem.evaluate(x) for x in X])
        U = lhs_sample(cfg.train_size, problem, seed + 1)
        for beta in cfg.betas:
            for task in (SurrogateTask.REG, SurrogateTask.CLA):
                context = Y if task is SurrogateTask.REG else assign_labels_topk(Y, cfg.label_ratio)
                timings = {}
                for mode, parallelism in (("serial", 1), ("parallel", cfg.timing_parallelism)):
                    pass_log = CallLog()
                    backend = make_backend(base.model_copy(update={"parallelism": parallelism}), pass_log)
                    predictor = PromptPredictor(backend, feature_precision=beta, malformed_retries=arm.predictor.malformed_retries)
                    start = time.perf_counter()
                    try:
                        predict_batch(predictor, X, context, U, task)
                    finally:
                        backend.close()
                    timings[mode] = time.perf_counter() - start
                    for record in pass_log.records:
                        log.append(record)
                    if mode == "serial":
                        serial = pass_log.to_frame()
                rows.append([
                    dim, beta, task.value, len(serial),
                    float(serial["chars"].mean()), float(serial["approx_tokens"].mean()),
                    timings["serial"], timings["parallel"],
                ])
                logger.info("timing dim=%d beta=%d %s: %.2fs serial, %.2fs parallel", dim, beta, task.value, timings["serial"], timings["parallel"])

    log.to_csv(out_dir / "calls.csv")
    frame = pd.DataFrame(rows, columns=TIMING_COLUMNS)
    frame.to_csv(out_dir / "timing.csv", index=False)
    write_manifest(cfg, out_dir, 0, 1)
    return frame


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def resolve_output_dir(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return config.get_output_dir() / cfg.experiment.value


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: Optional[int] = None):
    """Dispatch one experiment; returns its table (or timing frame / dataset paths)."""
    out = resolve_output_dir(cfg, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = max(1, jobs if jobs is not None else config.LAEA_JOBS)
    if cfg.experiment is ExperimentId.CASE2D:
        return run_case2d(cfg, out)
    if cfg.experiment is ExperimentId.SELECT_ACC:
        return run_select_acc(cfg, out)
    if cfg.experiment in (ExperimentId.COMPARE, ExperimentId.PRESELECT):
        return run_budgeted(cfg, out, jobs)
    if cfg.experiment is ExperimentId.TIMING:
        return run_timing(cfg, out)
    return run_ga_collect(cfg, out)


def validate_prompt_fixtures(fixtures_dir) -> list[str]:
    """Re-render each *.json fixture and compare with its *.txt golden file."""
    fixtures_dir = Path(fixtures_dir)
    messages = []
    docs = sorted(fixtures_dir.glob("*.json"))
    if not docs:
        return [f"FAILURE: no *.json fixtures in {fixtures_dir}"]
    for path in docs:
        golden = path.with_suffix(".txt")
        if not golden.exists():
            messages.append(f"FAILURE: {path.name} has no golden file {golden.name}")
            continue
        try:
            text = render_fixture(json.loads(path.read_text(encoding="utf-8"))).text
        except (InvalidInput, json.JSONDecodeError) as e:
            messages.append(f"FAILURE: {path.name} could not be rendered: {e}")
            continue
        expected = golden.read_text(encoding="utf-8")
        if text != expected:
            line = next((i + 1 for i, (a, b) in enumerate(zip(text.splitlines(), expected.splitlines())) if a != b), None)
            where = f"line {line}" if line else "length"
            messages.append(f"FAILURE: {path.name} differs from {golden.name} at {where}")
            continue
        try:
            echo_complete("{}", text)
        except PromptStructureError as e:
            messages.append(f"FAILURE: {path.name}: {e}")
            continue
        messages.append(f"SUCCESS: {path.name} matches {golden.name}")
    return messages
