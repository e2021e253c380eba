"""
Surrogate protocol - language models as regression/classification surrogates.

The pipeline for one batch of query points:
1. Preprocessing: min-max scale features (and regression targets) to [0,1]
   with fixed decimal precision
2. Prompt generation: one self-contained prompt per query point
3. Inference: the completion backend answers each prompt
4. Post-processing: pull the JSON answer out of the reply and map it back to
   objective units (regression) or to a 0/1 label (classification)

Classes:
    ScalingTransform: per-column affine map fitted on the training rows
    LabeledDataset: scaled training rows with values or labels
    PromptBundle / Prediction: rendered prompt and parsed answer
    LabelRule: how a threshold-based oracle labels new points
    Predictor: surrogate abstraction (prompt-driven or oracle)
    PromptPredictor: Predictor backed by a completion backend
"""

import ast
import json
import logging
import math
import re
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Literal, Optional

import numpy as np

from laea.errors import InvalidInput, InvalidState, MalformedResponse

logger = logging.getLogger(__name__)

DEFAULT_FEATURE_PRECISION = 3
DEFAULT_VALUE_PRECISION = 5


class SurrogateTask(str, Enum):
    REG = "Reg"
    CLA = "Cla"


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def _round(values, decimals: int) -> np.ndarray:
    """Half-to-even rounding that lands on the double nearest the printed decimal."""
    rounded = np.round(np.asarray(values, dtype=float), decimals)
    canonical = np.vectorize(lambda v: float(f"{v:.{decimals}f}"), otypes=[float])(rounded)
    # + 0.0 turns -0.0 into 0.0 so prompts never show "-0.000"
    return canonical + 0.0


def _affine(values: np.ndarray, lo, hi) -> np.ndarray:
    span = np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)
    degenerate = span == 0
    safe = np.where(degenerate, 1.0, span)
    return np.where(degenerate, 0.5, (values - lo) / safe)


@dataclass(frozen=True, eq=False)
class ScalingTransform:
    """Column-wise map to [0,1] fitted on training rows.

    Query rows reuse the training ranges and are not clamped, so they may
    land slightly outside [0,1]. A constant column maps to 0.5.
    """

    x_min: np.ndarray
    x_max: np.ndarray
    y_min: Optional[float] = None
    y_max: Optional[float] = None
    feature_precision: int = DEFAULT_FEATURE_PRECISION
    value_precision: int = DEFAULT_VALUE_PRECISION

    def __post_init__(self):
        if self.feature_precision < 1 or self.value_precision < 1:
            raise InvalidInput("decimal precision must be at least 1")
        if np.any(self.x_max < self.x_min):
            raise InvalidInput("column maxima must not be below minima")
        if (self.y_min is None) != (self.y_max is None):
            raise InvalidInput("value range needs both ends")
        if self.y_min is not None and self.y_max < self.y_min:
            raise InvalidInput("value maximum must not be below minimum")

    @property
    def dim(self) -> int:
        return int(self.x_min.size)

    @property
    def has_value_range(self) -> bool:
        return self.y_min is not None


def fit_scaling(
    X,
    Y=None,
    feature_precision: int = DEFAULT_FEATURE_PRECISION,
    value_precision: int = DEFAULT_VALUE_PRECISION,
) -> ScalingTransform:
    """Record per-column ranges of X (and the range of Y when given)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0 or X.size == 0:
        raise InvalidInput("cannot fit scaling on an empty feature matrix")
    y_min = y_max = None
    if Y is not None:
        Y = np.asarray(Y, dtype=float).reshape(-1)
        if Y.size == 0:
            raise InvalidInput("cannot fit value scaling on no values")
        y_min, y_max = float(Y.min()), float(Y.max())
    return ScalingTransform(
        x_min=X.min(axis=0),
        x_max=X.max(axis=0),
        y_min=y_min,
        y_max=y_max,
        feature_precision=feature_precision,
        value_precision=value_precision,
    )


def apply_scaling(t: ScalingTransform, v) -> np.ndarray:
    """Scale one vector (or a matrix of row vectors) and round to the feature precision."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != t.dim:
        raise InvalidInput(f"expected {t.dim} features, got {v.shape[-1]}")
    return _round(_affine(v, t.x_min, t.x_max), t.feature_precision)


def scale_values(t: ScalingTransform, y) -> np.ndarray:
    """Scale raw objective values and round to the value precision."""
    if not t.has_value_range:
        raise InvalidState("transform was fitted without values")
    return _round(_affine(np.asarray(y, dtype=float), t.y_min, t.y_max), t.value_precision)


def inverse_scale_value(t: ScalingTransform, scaled: float) -> float:
    """Map a scaled prediction back to objective units."""
    if not t.has_value_range:
        raise InvalidState("transform was fitted without values")
    return float(scaled) * (t.y_max - t.y_min) + t.y_min


# ---------------------------------------------------------------------------
# Label assignment
# ---------------------------------------------------------------------------


def topk_count(n: int, ratio: float) -> int:
    """Positive-class size: at least one, floor(ratio * n) otherwise."""
    if not 0.0 < ratio < 1.0:
        raise InvalidInput(f"label ratio must lie in (0, 1), got {ratio}")
    # Epsilon guards products like 0.3 * 10 = 3.0000000000000004 and 0.57 * 100 = 56.99...
    return max(1, math.floor(ratio * n + 1e-9))


def assign_labels_topk(values, ratio: float) -> np.ndarray:
    """Label the best `ratio` share (lowest values) as 1, the rest 0.

    Stable sort: among tied values the lower input index wins.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise InvalidInput("cannot label an empty list")
    k = topk_count(values.size, ratio)
    labels = np.zeros(values.size, dtype=int)
    labels[np.argsort(values, kind="stable")[:k]] = 1
    return labels


def topk_cut(values, ratio: float) -> float:
    """Largest value that still receives label 1 under `assign_labels_topk`."""
    values = np.sort(np.asarray(values, dtype=float).reshape(-1), kind="stable")
    if values.size == 0:
        raise InvalidInput("cannot label an empty list")
    return float(values[topk_count(values.size, ratio) - 1])


def median_threshold(values) -> float:
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise InvalidInput("cannot take the median of an empty list")
    return float(np.median(values))


def assign_labels_median(values) -> np.ndarray:
    """Label values strictly below the median as 1."""
    values = np.asarray(values, dtype=float).reshape(-1)
    return (values < median_threshold(values)).astype(int)


@dataclass(frozen=True)
class LabelRule:
    """How an oracle decides the class of a query point from its value.

    `threshold` labels 1 when the value is below (or at, if inclusive) a cut
    taken from the training data. `batch_topk` labels the best `ratio` share
    of the query batch itself.
    """

    kind: Literal["threshold", "batch_topk"]
    threshold: Optional[float] = None
    inclusive: bool = False
    ratio: float = 0.5

    @classmethod
    def from_topk(cls, values, ratio: float) -> "LabelRule":
        return cls("threshold", threshold=topk_cut(values, ratio), inclusive=True, ratio=ratio)

    @classmethod
    def from_median(cls, values) -> "LabelRule":
        return cls("threshold", threshold=median_threshold(values), inclusive=False)

    @classmethod
    def batch(cls, ratio: float = 0.5) -> "LabelRule":
        return cls("batch_topk", ratio=ratio)

    def apply(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float).reshape(-1)
        if self.kind == "batch_topk":
            return assign_labels_topk(values, self.ratio)
        if self.inclusive:
            return (values <= self.threshold).astype(int)
        return (values < self.threshold).astype(int)


# ---------------------------------------------------------------------------
# Prompt generation and post-processing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Scaled training rows with either scaled values or 0/1 labels."""

    features: np.ndarray
    values: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if features.shape[0] == 0 or features.size == 0:
            raise InvalidInput("dataset needs at least one row")
        if (self.values is None) == (self.labels is None):
            raise InvalidInput("dataset carries exactly one of values or labels")
        payload = self.values if self.values is not None else self.labels
        if len(payload) != features.shape[0]:
            raise InvalidInput("payload length must match the number of rows")
        if self.labels is not None and not set(np.asarray(self.labels).tolist()) <= {0, 1}:
            raise InvalidInput("labels must be 0 or 1")
        object.__setattr__(self, "features", features)

    @property
    def task(self) -> SurrogateTask:
        return SurrogateTask.REG if self.values is not None else SurrogateTask.CLA


@dataclass(frozen=True, eq=False)
class PromptBundle:
    task: SurrogateTask
    text: str
    candidate: np.ndarray


@dataclass(frozen=True)
class Prediction:
    """One surrogate answer: a value in objective units or a 0/1 label."""

    value: Optional[float] = None
    label: Optional[int] = None
    fallback: bool = False


REGRESSION_HEADER = (
    "Your task is to predict the numerical value of each object based on its attributes. "
    "These attributes and their corresponding values are outcomes of a black box function's "
    "operation within its decision space. The target value for each object is determined by a "
    "specific mapping from these attributes through the black box function. Your objective is to "
    "infer the underlying relationships and patterns within the black box function using the "
    "provided historical data. This task goes beyond simple statistical analyses, such as "
    "calculating means or variances, and requires understanding the complex interactions between "
    "the attributes. Please do not attempt to fit the function using code similar to Python; "
    "instead, directly learn and infer the numerical values.\n"
    "\n"
    "Procedure:\n"
    "1. Analyze the historical data to uncover how attributes relate to the numerical values.\n"
    "2. Use these insights to predict the numerical value for new objects based on their attributes.\n"
    "3. Respond using JSON format, e.g. {'Value': 'approximation result'}\n"
)

REGRESSION_NOTE = "Note:\nRespond in Json with the format {'Value':'approximation result'} only.\n"

CLASSIFICATION_HEADER = (
    "You are tasked with evaluating each object based on its numerical attributes to determine "
    "its category as 'better' or 'worse'. These attributes derive from a black box function's "
    "decision space, with the assessment of the label based on the post-mapping function values. "
    "Your role involves discerning the internal variable relationships of the black box function "
    "from provided historical data, moving beyond mere statistical analyses like calculating "
    "means and variances.\n"
    "\n"
    "Procedure:\n"
    "1. Identify patterns in how attributes are categorized.\n"
    "2. Apply these patterns to assess new objects, determining whether its category is better or worse.\n"
    "3. Respond using JSON format, e.g. {'Class': 'result'}\n"
)

CLASSIFICATION_NOTE = "Note:\nRespond in Json with the format {'Class': 'result'} only.\n"

REQUIRED_BLOCKS = ("Procedure:", "Historical Examples:", "New Evaluation:", "Note:")

CLASS_WORDS = {1: "better", 0: "worse"}


def format_vector(v, precision: int) -> str:
    """Render a scaled vector as `<0.338, 0.531, 0.363>` with fixed decimals."""
    coords = _round(v, precision).reshape(-1)
    return "<" + ", ".join(f"{c:.{precision}f}" for c in coords) + ">"


def render_prompt(
    task: SurrogateTask,
    data: LabeledDataset,
    u,
    feature_precision: int = DEFAULT_FEATURE_PRECISION,
    value_precision: int = DEFAULT_VALUE_PRECISION,
) -> PromptBundle:
    """Render the full prompt for one scaled query vector `u`.

    Historical rows appear in the order given.
    """
    task = SurrogateTask(task)
    if data.features.shape[0] == 0:
        raise InvalidInput("cannot render a prompt without historical examples")
    if data.task is not task:
        raise InvalidInput(f"{task.value} prompt needs a dataset with {'values' if task is SurrogateTask.REG else 'labels'}")
    u = np.asarray(u, dtype=float).reshape(-1)
    query = format_vector(u, feature_precision)

    lines = []
    if task is SurrogateTask.REG:
        for row, value in zip(data.features, data.values):
            lines.append(f"Features: {format_vector(row, feature_precision)} Value: {float(_round(value, value_precision)):.{value_precision}f}")
        header, new_eval, note = REGRESSION_HEADER, f"Features: {query}", REGRESSION_NOTE
    else:
        for row, label in zip(data.features, data.labels):
            lines.append(f"Features: {format_vector(row, feature_precision)}, Class: {CLASS_WORDS[int(label)]}")
        header, new_eval, note = CLASSIFICATION_HEADER, f"{query} better or worse?", CLASSIFICATION_NOTE

    text = (
        header
        + "\nHistorical Examples:\n"
        + "\n".join(lines)
        + "\n\nNew Evaluation:\n"
        + new_eval
        + "\n\n"
        + note
    )
    return PromptBundle(task=task, text=text, candidate=u)


_JSON_OBJECT = re.compile(r"\{[^{}]*\}", re.DOTALL)


def _first_object(text: str) -> dict:
    match = _JSON_OBJECT.search(text or "")
    if not match:
        raise MalformedResponse("no JSON object in reply")
    raw = match.group(0)
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError:
        # Models often answer with Python-style single quotes
        try:
            obj = ast.literal_eval(raw)
        except (ValueError, SyntaxError):
            raise MalformedResponse(f"unparsable object {raw[:80]!r}") from None
    if not isinstance(obj, dict):
        raise MalformedResponse("reply object is not a mapping")
    return {str(k).strip().lower(): v for k, v in obj.items()}


def parse_llm_response(text: str, task: SurrogateTask) -> Prediction:
    """Extract the first JSON object of a reply and read its Value/Class field.

    Regression values stay on the scaled axis; callers inverse-scale.
    """
    task = SurrogateTask(task)
    obj = _first_object(text)
    if task is SurrogateTask.REG:
        if "value" not in obj:
            raise MalformedResponse("reply has no 'Value' key")
        raw = obj["value"]
        if isinstance(raw, bool):
            raise MalformedResponse("boolean is not a value")
        try:
            value = float(str(raw).strip()) if isinstance(raw, str) else float(raw)
        except (TypeError, ValueError):
            raise MalformedResponse(f"non-numeric value {raw!r}") from None
        if not math.isfinite(value):
            raise MalformedResponse(f"non-finite value {raw!r}")
        return Prediction(value=value)

    if "class" not in obj:
        raise MalformedResponse("reply has no 'Class' key")
    word = str(obj["class"]).strip().strip("'\"").lower()
    if word == "better":
        return Prediction(label=1)
    if word == "worse":
        return Prediction(label=0)
    raise MalformedResponse(f"unrecognized class {obj['class']!r}")


@dataclass(frozen=True, eq=False)
class ParsedPrompt:
    task: SurrogateTask
    features: np.ndarray
    payload: list
    query: np.ndarray


_VECTOR = r"<([^<>]*)>"
_REG_ROW = re.compile(rf"^Features: {_VECTOR} Value: (\S+)$")
_CLA_ROW = re.compile(rf"^Features: {_VECTOR}, Class: (better|worse)$")
_REG_QUERY = re.compile(rf"^Features: {_VECTOR}$")
_CLA_QUERY = re.compile(rf"^{_VECTOR} better or worse\?$")


def _vector(raw: str) -> list[float]:
    return [float(c) for c in raw.split(",")]


def parse_prompt(text: str) -> ParsedPrompt:
    """Recover historical rows, payloads and the query from a rendered prompt."""
    try:
        history = text.split("Historical Examples:\n", 1)[1].split("\n\nNew Evaluation:\n", 1)
        rows, rest = history[0], history[1]
        query_line = rest.split("\n", 1)[0]
    except IndexError:
        raise MalformedResponse("prompt lacks historical or evaluation blocks") from None

    features, payload = [], []
    task = None
    for line in rows.splitlines():
        if m := _REG_ROW.match(line):
            task = SurrogateTask.REG
            features.append(_vector(m.group(1)))
            payload.append(float(m.group(2)))
        elif m := _CLA_ROW.match(line):
            task = SurrogateTask.CLA
            features.append(_vector(m.group(1)))
            payload.append(1 if m.group(2) == "better" else 0)
        else:
            raise MalformedResponse(f"unrecognized historical row {line[:60]!r}")

    pattern = _REG_QUERY if task is SurrogateTask.REG else _CLA_QUERY
    m = pattern.match(query_line)
    if task is None or not m:
        raise MalformedResponse("prompt has no recognizable query")
    return ParsedPrompt(task, np.asarray(features), payload, np.asarray(_vector(m.group(1))))


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------


class Predictor(ABC):
    """Surrogate that answers a batch of queries given evaluated context rows."""

    name: str = "predictor"

    @abstractmethod
    def predict(
        self,
        X: np.ndarray,
        Y: np.ndarray,
        U: np.ndarray,
        task: SurrogateTask,
        rule: Optional[LabelRule] = None,
    ) -> list[Prediction]:
        """One prediction per row of U, in order.

        Y holds raw objective values for regression and 0/1 labels for
        classification. `rule` tells threshold-aware predictors (oracles)
        which labeling the caller scores against; prompt predictors ignore it.
        """


class PromptPredictor(Predictor):
    """Runs the scale / render / infer / parse pipeline against a completion backend."""

    def __init__(
        self,
        backend,
        feature_precision: int = DEFAULT_FEATURE_PRECISION,
        value_precision: int = DEFAULT_VALUE_PRECISION,
        parallelism: Optional[int] = None,
        malformed_retries: int = 3,
    ):
        self.backend = backend
        self.feature_precision = feature_precision
        self.value_precision = value_precision
        self.parallelism = parallelism or getattr(backend, "parallelism", 1)
        self.malformed_retries = malformed_retries
        self.name = f"prompt:{getattr(backend, 'name', type(backend).__name__)}"
        self.failures = 0
        self._lock = threading.Lock()

    def predict(self, X, Y, U, task, rule=None) -> list[Prediction]:
        task = SurrogateTask(task)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        Y = np.asarray(Y).reshape(-1)

        if task is SurrogateTask.REG:
            t = fit_scaling(X, Y, self.feature_precision, self.value_precision)
            data = LabeledDataset(apply_scaling(t, X), values=scale_values(t, Y))
            fallback = Prediction(value=float(np.median(Y.astype(float))), fallback=True)
        else:
            t = fit_scaling(X, None, self.feature_precision, self.value_precision)
            data = LabeledDataset(apply_scaling(t, X), labels=Y.astype(int))
            fallback = Prediction(label=0, fallback=True)
        queries = apply_scaling(t, U)

        def check(reply: str) -> None:
            parse_llm_response(reply, task)

        def infer(u: np.ndarray) -> Prediction:
            bundle = render_prompt(task, data, u, self.feature_precision, self.value_precision)
            for attempt in range(self.malformed_retries + 1):
                try:
                    reply = self.backend.complete(bundle.text, task=task, dim=t.dim, check=check)
                    parsed = parse_llm_response(reply, task)
                except MalformedResponse as e:
                    logger.warning("Malformed %s reply (attempt %d/%d): %s", task.value, attempt + 1, self.malformed_retries + 1, e)
                    continue
                if task is SurrogateTask.REG:
                    return Prediction(value=inverse_scale_value(t, parsed.value))
                return parsed
            return fallback

        workers = max(1, min(self.parallelism, len(queries)))
        if workers == 1:
            predictions = [infer(u) for u in queries]
        else:
            # map() keeps input order whatever the completion order
            with ThreadPoolExecutor(max_workers=workers) as pool:
                predictions = list(pool.map(infer, queries))

        failed = sum(p.fallback for p in predictions)
        if failed:
            with self._lock:
                self.failures += failed
            logger.info("%d of %d %s predictions fell back after malformed replies", failed, len(predictions), task.value)
        return predictions


def predict_batch(
    predictor: Predictor,
    X,
    Y,
    U,
    task: SurrogateTask,
    rule: Optional[LabelRule] = None,
) -> list[Prediction]:
    """Predict values or labels for every query row of U given context (X, Y)."""
    task = SurrogateTask(task)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Y = np.asarray(Y).reshape(-1)
    if X.shape[0] == 0 or X.shape[0] != Y.size:
        raise InvalidInput(f"context needs matching non-empty X and Y, got {X.shape[0]} and {Y.size}")
    if U.shape[0] == 0 or U.size == 0:
        raise InvalidInput("no query points to predict")
    if U.shape[1] != X.shape[1]:
        raise InvalidInput("query and context dimensions differ")
    return predictor.predict(X, Y, U, task, rule)


def failure_count(predictor: Predictor) -> int:
    return int(getattr(predictor, "failures", 0))


def render_fixture(doc: dict) -> PromptBundle:
    """Render a prompt from a fixture document holding already-scaled rows."""
    try:
        task = SurrogateTask(doc["task"])
        features = np.asarray(doc["features"], dtype=float)
        if task is SurrogateTask.REG:
            data = LabeledDataset(features, values=np.asarray(doc["values"], dtype=float))
        else:
            data = LabeledDataset(features, labels=np.asarray(doc["labels"], dtype=int))
        return render_prompt(
            task,
            data,
            doc["query"],
            doc.get("feature_precision", DEFAULT_FEATURE_PRECISION),
            doc.get("value_precision", DEFAULT_VALUE_PRECISION),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InvalidInput):
            raise
        raise InvalidInput(f"bad prompt fixture: {e}") from None
