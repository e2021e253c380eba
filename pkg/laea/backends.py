"""
Completion backends and oracle predictors.

Backends turn a rendered prompt into reply text:
- HttpBackend: OpenAI-compatible chat completions (Ollama, vLLM, hosted APIs)
- EchoBackend: returns a canned reply after checking the prompt's blocks
- NearestNeighbourBackend: answers with the closest historical row of the prompt

Oracles skip the language model entirely and answer from the true objective,
bounding surrogate quality from above (perfect) and below (random).

Every backend call appends one CallRecord per attempt to its CallLog.
"""

import json
import logging
import math
import threading
import time
import zlib
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Literal, Optional

import backoff
import httpx
import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from laea.config import config
from laea.errors import (
    BackendUnavailable,
    InvalidInput,
    MalformedResponse,
    PromptStructureError,
)
from laea.problems import BenchmarkProblem
from laea.surrogate import (
    REQUIRED_BLOCKS,
    LabelRule,
    Prediction,
    Predictor,
    SurrogateTask,
    parse_prompt,
)

logger = logging.getLogger(__name__)

CALL_COLUMNS = ["task", "dim", "chars", "approx_tokens", "latency_s", "outcome"]

Outcome = Literal["ok", "malformed", "transport-error"]


def approx_tokens(text: str) -> int:
    """Rough token count: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class BackendConfig(BaseModel):
    """Connection settings for an OpenAI-compatible endpoint."""

    endpoint: str = Field(default_factory=lambda: config.LAEA_ENDPOINT)
    model: str = Field(default_factory=lambda: config.LAEA_MODEL)
    temperature: float = Field(0.0, ge=0.0)
    timeout_s: float = Field(60.0, gt=0.0)
    max_retries: int = Field(3, ge=0)
    parallelism: int = Field(1, ge=1)
    api_key_env: str = Field(default_factory=lambda: config.LAEA_API_KEY_ENV)
    # First backoff wait in seconds; doubles per attempt, full jitter
    backoff_base: float = Field(0.5, ge=0.0)


class OracleMode(str, Enum):
    PERFECT = "perfect"
    NOISY = "noisy"
    RANDOM = "random"


class OracleSpec(BaseModel):
    mode: OracleMode = OracleMode.PERFECT
    sigma: float = Field(0.0, ge=0.0)
    seed: int = 0


# ---------------------------------------------------------------------------
# Call instrumentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CallRecord:
    task: str
    dim: int
    chars: int
    approx_tokens: int
    latency_s: float
    outcome: Outcome
    attempt: int = 1


class CallLog:
    """Append-only, thread-safe list of CallRecords."""

    def __init__(self):
        self._records: list[CallRecord] = []
        self._lock = threading.Lock()

    def append(self, record: CallRecord) -> None:
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def to_frame(self) -> pd.DataFrame:
        rows = [asdict(r) for r in self.records]
        return pd.DataFrame(rows, columns=CALL_COLUMNS + ["attempt"])[CALL_COLUMNS]

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


# ---------------------------------------------------------------------------
# Completion backends
# ---------------------------------------------------------------------------


class CompletionBackend(ABC):
    """Base class for anything that answers a prompt with text."""

    name: str = "backend"

    def __init__(self, parallelism: int = 1, call_log: Optional[CallLog] = None):
        if parallelism < 1:
            raise InvalidInput("parallelism must be at least 1")
        self.parallelism = parallelism
        self.call_log = call_log if call_log is not None else CallLog()

    @abstractmethod
    def complete(
        self,
        prompt: str,
        task: Optional[SurrogateTask] = None,
        dim: int = 0,
        check: Optional[Callable[[str], object]] = None,
    ) -> str:
        """Return the reply text for `prompt`.

        `check` validates the reply; a MalformedResponse it raises is recorded
        against the call and re-raised to the caller.
        """

    def _record(self, prompt: str, task, dim: int, latency: float, outcome: Outcome, attempt: int = 1) -> None:
        self.call_log.append(
            CallRecord(
                task=SurrogateTask(task).value if task is not None else "",
                dim=dim,
                chars=len(prompt),
                approx_tokens=approx_tokens(prompt),
                latency_s=latency,
                outcome=outcome,
                attempt=attempt,
            )
        )

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class LocalBackend(CompletionBackend):
    """Backend answering in-process; exactly one CallRecord per call."""

    @abstractmethod
    def reply(self, prompt: str) -> str:
        """Compute the reply text."""

    def complete(self, prompt, task=None, dim=0, check=None) -> str:
        start = time.perf_counter()
        try:
            text = self.reply(prompt)
            if check is not None:
                check(text)
        except (MalformedResponse, PromptStructureError):
            self._record(prompt, task, dim, time.perf_counter() - start, "malformed")
            raise
        self._record(prompt, task, dim, time.perf_counter() - start, "ok")
        return text


def echo_complete(canned: str, prompt: str) -> str:
    """Return `canned` once `prompt` is confirmed to carry every mandatory block."""
    missing = [block for block in REQUIRED_BLOCKS if block not in prompt]
    if missing:
        raise PromptStructureError(f"prompt is missing: {', '.join(missing)}")
    if prompt.count("New Evaluation:") != 1:
        raise PromptStructureError("prompt must hold exactly one New Evaluation block")
    return canned


class EchoBackend(LocalBackend):
    name = "echo"

    def __init__(self, canned: str, parallelism: int = 1, call_log: Optional[CallLog] = None):
        super().__init__(parallelism, call_log)
        self.canned = canned

    def reply(self, prompt: str) -> str:
        return echo_complete(self.canned, prompt)


def nearest_neighbour_reply(prompt: str) -> str:
    """Answer a rendered prompt with the payload of its closest historical row.

    Euclidean distance on the scaled features; ties go to the earliest row.
    """
    parsed = parse_prompt(prompt)
    distances = np.linalg.norm(parsed.features - parsed.query, axis=1)
    payload = parsed.payload[int(np.argmin(distances))]
    if parsed.task is SurrogateTask.REG:
        return json.dumps({"Value": f"{payload}"})
    return json.dumps({"Class": "better" if payload == 1 else "worse"})


class NearestNeighbourBackend(LocalBackend):
    """1-nearest-neighbour stand-in for a model; used when NO_NETWORK is set."""

    name = "nearest"

    def reply(self, prompt: str) -> str:
        echo_complete("", prompt)
        return nearest_neighbour_reply(prompt)


class TransientError(Exception):
    """Attempt failed in a way worth retrying."""


class HttpBackend(CompletionBackend):
    """OpenAI-compatible chat-completions client.

    Timeouts, transport failures, HTTP 429 and 5xx are retried with
    exponential backoff; other 4xx statuses fail at once. A semaphore caps
    in-flight requests at `cfg.parallelism`.
    """

    name = "http"

    def __init__(self, cfg: BackendConfig, client: Optional[httpx.Client] = None, call_log: Optional[CallLog] = None):
        super().__init__(cfg.parallelism, call_log)
        self.cfg = cfg
        self.name = f"http:{cfg.model}"
        self._own_client = client is None
        self._client = client or httpx.Client(timeout=cfg.timeout_s)
        self._slots = threading.BoundedSemaphore(cfg.parallelism)
        self._lock = threading.Lock()
        self._in_flight = 0
        self.peak_in_flight = 0

    @property
    def url(self) -> str:
        return self.cfg.endpoint.rstrip("/") + "/chat/completions"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = config.get_api_key(self.cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _enter(self) -> None:
        with self._lock:
            self._in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self._in_flight)

    def _leave(self) -> None:
        with self._lock:
            self._in_flight -= 1

    def _attempt(self, prompt: str, task, dim: int, check, attempts: list[int]) -> str:
        attempts[0] += 1
        attempt = attempts[0]
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        }

        with self._slots:
            self._enter()
            start = time.perf_counter()
            try:
                response = self._client.post(self.url, json=body, headers=self._headers(), timeout=self.cfg.timeout_s)
            except httpx.TimeoutException as e:
                self._record(prompt, task, dim, time.perf_counter() - start, "transport-error", attempt)
                raise TransientError(f"timeout after {self.cfg.timeout_s}s") from e
            except httpx.TransportError as e:
                self._record(prompt, task, dim, time.perf_counter() - start, "transport-error", attempt)
                raise TransientError(f"transport error: {type(e).__name__}") from e
            finally:
                self._leave()
        latency = time.perf_counter() - start

        if response.status_code == 429 or response.status_code >= 500:
            self._record(prompt, task, dim, latency, "transport-error", attempt)
            raise TransientError(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            self._record(prompt, task, dim, latency, "transport-error", attempt)
            raise BackendUnavailable(f"{self.url} rejected the request with HTTP {response.status_code}")

        try:
            text = response.json()["choices"][0]["message"]["content"]
            if not isinstance(text, str):
                raise TypeError("content is not text")
            if check is not None:
                check(text)
        except (ValueError, KeyError, IndexError, TypeError, MalformedResponse) as e:
            self._record(prompt, task, dim, latency, "malformed", attempt)
            if isinstance(e, MalformedResponse):
                raise
            raise MalformedResponse(f"unexpected completion payload: {e}") from None

        self._record(prompt, task, dim, latency, "ok", attempt)
        return text

    def _on_backoff(self, details) -> None:
        logger.warning(
            "Completion attempt %d/%d failed (%s); retrying in %.2fs",
            details["tries"],
            self.cfg.max_retries + 1,
            details.get("exception"),
            details["wait"],
        )

    def complete(self, prompt, task=None, dim=0, check=None) -> str:
        if not prompt:
            raise InvalidInput("prompt must not be empty")
        send = backoff.on_exception(
            backoff.expo,
            TransientError,
            max_tries=self.cfg.max_retries + 1,
            factor=self.cfg.backoff_base,
            jitter=backoff.full_jitter,
            on_backoff=self._on_backoff,
        )(self._attempt)
        try:
            return send(prompt, task, dim, check, [0])
        except TransientError as e:
            raise BackendUnavailable(
                f"{self.url} unavailable after {self.cfg.max_retries + 1} attempts: {e}"
            ) from e

    def close(self) -> None:
        if self._own_client:
            self._client.close()


def http_complete(cfg: BackendConfig, prompt: str, client: Optional[httpx.Client] = None) -> str:
    """Single chat completion with retries; returns the assistant text verbatim."""
    with HttpBackend(cfg, client=client) as backend:
        return backend.complete(prompt)


def make_backend(cfg: BackendConfig, call_log: Optional[CallLog] = None) -> CompletionBackend:
    """HTTP backend, or the in-process nearest-neighbour mock when NO_NETWORK is set."""
    if config.no_network():
        logger.info("NO_NETWORK set; using nearest-neighbour mock instead of %s", cfg.endpoint)
        return NearestNeighbourBackend(parallelism=cfg.parallelism, call_log=call_log)
    return HttpBackend(cfg, call_log=call_log)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def oracle_predict(
    spec: OracleSpec,
    problem: BenchmarkProblem,
    X,
    Y,
    U,
    task: SurrogateTask,
    rule: Optional[LabelRule] = None,
    stream: int = 0,
) -> list[Prediction]:
    """Answer from the true objective instead of a model.

    The random stream depends only on (seed, stream, U), so equal calls
    give equal answers. Classification needs the labeling rule the caller
    scores against.
    """
    task = SurrogateTask(task)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Y = np.asarray(Y).reshape(-1)
    if task is SurrogateTask.CLA and rule is None and spec.mode is not OracleMode.RANDOM:
        raise InvalidInput("classification oracle needs a label rule")
    rng = np.random.default_rng([spec.seed, stream, zlib.crc32(np.ascontiguousarray(U).tobytes())])

    if spec.mode is OracleMode.RANDOM:
        if task is SurrogateTask.REG:
            y = Y.astype(float)
            return [Prediction(value=float(v)) for v in rng.uniform(y.min(), y.max(), size=len(U))]
        return [Prediction(label=int(v)) for v in rng.integers(0, 2, size=len(U))]

    values = np.array([problem.evaluate(u) for u in U])
    if spec.mode is OracleMode.NOISY:
        if task is SurrogateTask.REG:
            spread = float(np.ptp(Y.astype(float)))
        else:
            X = np.atleast_2d(np.asarray(X, dtype=float))
            spread = float(np.ptp([problem.evaluate(x) for x in X]))
        values = values + rng.normal(0.0, spec.sigma * spread, size=values.size)

    if task is SurrogateTask.REG:
        return [Prediction(value=float(v)) for v in values]
    return [Prediction(label=int(v)) for v in rule.apply(values)]


class OraclePredictor(Predictor):
    def __init__(self, spec: OracleSpec, problem: BenchmarkProblem, stream: int = 0):
        self.spec = spec
        self.problem = problem
        self.stream = stream
        self.name = f"oracle:{spec.mode.value}"
        self.failures = 0

    def predict(self, X, Y, U, task, rule=None) -> list[Prediction]:
        return oracle_predict(self.spec, self.problem, X, Y, U, task, rule, self.stream)
