import json
import threading
import time
import unittest

import httpx
import numpy as np
from fastapi.testclient import TestClient

from laea.backends import (
    CALL_COLUMNS,
    BackendConfig,
    CallLog,
    EchoBackend,
    HttpBackend,
    NearestNeighbourBackend,
    OracleMode,
    OracleSpec,
    approx_tokens,
    echo_complete,
    http_complete,
    oracle_predict,
)
from laea.errors import BackendUnavailable, InvalidInput, PromptStructureError
from laea.mock_server import create_app
from laea.problems import BenchmarkProblem
from laea.surrogate import LabeledDataset, LabelRule, PromptPredictor, SurrogateTask, predict_batch, render_prompt


def fast_config(**overrides):
    settings = dict(endpoint="http://testserver", model="mock", timeout_s=1.0, max_retries=3, backoff_base=0.0)
    settings.update(overrides)
    return BackendConfig(**settings)


def reg_prompt():
    data = LabeledDataset(np.array([[0.1, 0.2], [0.9, 0.8]]), values=np.array([0.0, 1.0]))
    return render_prompt(SurrogateTask.REG, data, [0.2, 0.2]).text


def cla_prompt():
    data = LabeledDataset(np.array([[0.1, 0.2], [0.9, 0.8]]), labels=np.array([1, 0]))
    return render_prompt(SurrogateTask.CLA, data, [0.85, 0.85]).text


def completion(content):
    return {"id": "x", "object": "chat.completion", "created": 0, "model": "mock",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}


class TestApproxTokens(unittest.TestCase):

    def test_formula(self):
        self.assertEqual(approx_tokens("x" * 4000), 1000)
        self.assertEqual(approx_tokens(""), 0)
        self.assertEqual(approx_tokens("abcde"), 2)


class TestEcho(unittest.TestCase):

    def test_valid_prompts(self):
        self.assertEqual(echo_complete('{"Value":"0.1"}', reg_prompt()), '{"Value":"0.1"}')
        self.assertEqual(echo_complete("c", cla_prompt()), "c")

    def test_missing_block(self):
        broken = reg_prompt().replace("New Evaluation:", "Query:")
        with self.assertRaises(PromptStructureError):
            echo_complete("c", broken)

    def test_records_one_call(self):
        backend = EchoBackend("c")
        backend.complete(reg_prompt(), task=SurrogateTask.REG, dim=2)
        self.assertEqual(len(backend.call_log), 1)
        record = backend.call_log.records[0]
        self.assertEqual((record.task, record.dim, record.outcome), ("Reg", 2, "ok"))
        self.assertEqual(record.chars, len(reg_prompt()))

    def test_nearest_neighbour(self):
        backend = NearestNeighbourBackend()
        self.assertEqual(json.loads(backend.complete(reg_prompt())), {"Value": "0.0"})
        self.assertEqual(json.loads(backend.complete(cla_prompt())), {"Class": "worse"})


class TestHttpBackend(unittest.TestCase):

    def test_passthrough_and_wire_body(self):
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=completion('{"Value": "0.2"}'))

        client = httpx.Client(transport=httpx.MockTransport(handler))
        reply = http_complete(fast_config(endpoint="http://model/v1/"), "hello", client=client)
        self.assertEqual(reply, '{"Value": "0.2"}')
        self.assertEqual(seen["url"], "http://model/v1/chat/completions")
        self.assertEqual(seen["body"], {"model": "mock", "messages": [{"role": "user", "content": "hello"}], "temperature": 0.0})

    def test_timeouts_then_success(self):
        attempts = {"n": 0}

        def handler(request):
            attempts["n"] += 1
            if attempts["n"] <= 2:
                raise httpx.ReadTimeout("slow", request=request)
            return httpx.Response(200, json=completion('{"Value": "0.3"}'))

        backend = HttpBackend(fast_config(), client=httpx.Client(transport=httpx.MockTransport(handler)))
        self.assertEqual(backend.complete("hello"), '{"Value": "0.3"}')
        outcomes = [r.outcome for r in backend.call_log.records]
        self.assertEqual(outcomes, ["transport-error", "transport-error", "ok"])
        self.assertEqual([r.attempt for r in backend.call_log.records], [1, 2, 3])

    def test_persistent_5xx_via_mock_server(self):
        client = TestClient(create_app(fail_first=100, fail_status=503))
        backend = HttpBackend(fast_config(max_retries=2), client=client)
        with self.assertRaises(BackendUnavailable):
            backend.complete(reg_prompt())
        self.assertEqual(len(backend.call_log), 3)

    def test_recovers_after_injected_failures(self):
        client = TestClient(create_app(mode="echo", canned='{"Value": "0.7"}', fail_first=2))
        backend = HttpBackend(fast_config(), client=client)
        self.assertEqual(backend.complete(reg_prompt()), '{"Value": "0.7"}')
        self.assertEqual(len(backend.call_log), 3)

    def test_client_error_not_retried(self):
        client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(401, json={"error": "no"})))
        backend = HttpBackend(fast_config(), client=client)
        with self.assertRaises(BackendUnavailable):
            backend.complete("hello")
        self.assertEqual(len(backend.call_log), 1)

    def test_empty_prompt(self):
        with self.assertRaises(InvalidInput):
            HttpBackend(fast_config(), client=httpx.Client(transport=httpx.MockTransport(lambda r: None))).complete("")

    def test_in_flight_bounded(self):
        state = {"now": 0, "peak": 0}
        lock = threading.Lock()

        def handler(request):
            with lock:
                state["now"] += 1
                state["peak"] = max(state["peak"], state["now"])
            time.sleep(0.01)
            with lock:
                state["now"] -= 1
            return httpx.Response(200, json=completion('{"Value": "0.5"}'))

        cfg = fast_config(parallelism=3)
        backend = HttpBackend(cfg, client=httpx.Client(transport=httpx.MockTransport(handler)))
        X = np.random.default_rng(0).random((10, 2))
        predict_batch(PromptPredictor(backend, parallelism=8), X, X.sum(axis=1), X, SurrogateTask.REG)
        self.assertLessEqual(state["peak"], 3)
        self.assertLessEqual(backend.peak_in_flight, 3)
        self.assertEqual(len(backend.call_log), 10)

    def test_call_log_csv_columns(self):
        log = CallLog()
        EchoBackend("c", call_log=log).complete(cla_prompt(), task="Cla", dim=2)
        frame = log.to_frame()
        self.assertEqual(list(frame.columns), CALL_COLUMNS)
        self.assertEqual(frame.iloc[0]["task"], "Cla")


class TestOracle(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(8)
        self.problem = BenchmarkProblem.from_name("ellipsoid", 4)
        self.X = rng.uniform(-5, 5, size=(30, 4))
        self.Y = np.array([self.problem.evaluate(x) for x in self.X])
        self.U = rng.uniform(-5, 5, size=(12, 4))

    def test_perfect_at_optimum(self):
        predictions = oracle_predict(OracleSpec(), self.problem, self.X, self.Y, np.zeros((1, 4)), "Reg")
        self.assertEqual(predictions[0].value, 0.0)

    def test_random_deterministic(self):
        spec = OracleSpec(mode=OracleMode.RANDOM, seed=3)
        first = oracle_predict(spec, self.problem, self.X, self.Y, self.U, "Reg")
        second = oracle_predict(spec, self.problem, self.X, self.Y, self.U, "Reg")
        self.assertEqual(first, second)
        self.assertTrue(all(self.Y.min() <= p.value <= self.Y.max() for p in first))

    def test_noise_free_noisy_is_perfect(self):
        noisy = oracle_predict(OracleSpec(mode="noisy", sigma=0.0), self.problem, self.X, self.Y, self.U, "Reg")
        perfect = oracle_predict(OracleSpec(mode="perfect"), self.problem, self.X, self.Y, self.U, "Reg")
        self.assertEqual([p.value for p in noisy], [p.value for p in perfect])

    def test_noisy_differs(self):
        noisy = oracle_predict(OracleSpec(mode="noisy", sigma=0.1), self.problem, self.X, self.Y, self.U, "Reg")
        perfect = oracle_predict(OracleSpec(mode="perfect"), self.problem, self.X, self.Y, self.U, "Reg")
        self.assertNotEqual([p.value for p in noisy], [p.value for p in perfect])

    def test_classification_threshold(self):
        rule = LabelRule.from_median(self.Y)
        predictions = oracle_predict(OracleSpec(), self.problem, self.X, self.Y, self.U, "Cla", rule)
        truth = [int(self.problem.evaluate(u) < rule.threshold) for u in self.U]
        self.assertEqual([p.label for p in predictions], truth)

    def test_classification_needs_rule(self):
        with self.assertRaises(InvalidInput):
            oracle_predict(OracleSpec(), self.problem, self.X, self.Y, self.U, "Cla")

    def test_random_labels_binary(self):
        predictions = oracle_predict(OracleSpec(mode="random"), self.problem, self.X, self.Y, self.U, "Cla")
        self.assertTrue({p.label for p in predictions} <= {0, 1})


class TestBackendConfig(unittest.TestCase):

    def test_defaults(self):
        cfg = BackendConfig()
        self.assertEqual(cfg.temperature, 0.0)
        self.assertEqual(cfg.max_retries, 3)
        self.assertEqual(cfg.backoff_base, 0.5)

    def test_invalid(self):
        for bad in ({"parallelism": 0}, {"timeout_s": 0}, {"max_retries": -1}):
            with self.assertRaises(ValueError):
                BackendConfig(**bad)


if __name__ == "__main__":
    unittest.main()
