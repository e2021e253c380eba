import json
import unittest

import numpy as np

from laea.algorithms import (
    Archive,
    LaeaConfig,
    LaeaVariant,
    PreselectStrategy,
    WindowPolicy,
    assisted_select_label,
    assisted_select_value,
    code_preselect_run,
    ga_collect_run,
    laea_run,
)
from laea.backends import EchoBackend, OraclePredictor, OracleSpec
from laea.errors import BackendUnavailable, InvalidInput
from laea.metrics import Symbol, mean_rank, wilcoxon_rank_sum
from laea.problems import BenchmarkProblem, CountingProblem
from laea.surrogate import Predictor, PromptPredictor


class CountingPredictor(Predictor):
    """Perfect oracle that counts predict calls per task."""

    def __init__(self, problem):
        self.inner = OraclePredictor(OracleSpec(), problem)
        self.calls = {"Reg": 0, "Cla": 0}

    def predict(self, X, Y, U, task, rule=None):
        self.calls[task.value] += 1
        return self.inner.predict(X, Y, U, task, rule)


class DownAfter(EchoBackend):

    def __init__(self, working_calls):
        super().__init__('{"Value": "0.5"}')
        self.left = working_calls

    def reply(self, prompt):
        if self.left <= 0:
            raise BackendUnavailable("endpoint went away")
        self.left -= 1
        return super().reply(prompt)


class TestArchive(unittest.TestCase):

    def setUp(self):
        self.archive = Archive(1)
        for f in [5.0, 1.0, 4.0, 2.0, 3.0]:
            self.archive.append([f], f)

    def test_window_policies(self):
        self.assertEqual(self.archive.window(2, WindowPolicy.BEST)[1].tolist(), [1.0, 2.0])
        self.assertEqual(self.archive.window(2, WindowPolicy.FIRST)[1].tolist(), [5.0, 1.0])
        self.assertEqual(self.archive.window(2, WindowPolicy.RECENT)[1].tolist(), [2.0, 3.0])

    def test_small_archive_uses_all(self):
        self.assertEqual(len(self.archive.window(50)[1]), 5)

    def test_rejects_non_finite(self):
        with self.assertRaises(InvalidInput):
            self.archive.append([0.0], float("nan"))


class TestAssistedSelect(unittest.TestCase):

    def test_value_argmin(self):
        Q = np.zeros((3, 2))
        self.assertEqual(assisted_select_value(Q, [0.3, 0.1, 0.2]), 1)
        self.assertEqual(assisted_select_value(Q, [0.5, 0.5, 0.5]), 0)
        self.assertEqual(assisted_select_value(Q[:1], [9.0]), 0)

    def test_label_under_cap(self):
        Q = np.arange(20, dtype=float).reshape(10, 2)
        labels = [0, 1, 0, 1, 0, 0, 1, 0, 0, 0]
        np.testing.assert_array_equal(assisted_select_label(Q, labels, 25, seed=0), Q[[1, 3, 6]])

    def test_label_over_cap(self):
        Q = np.arange(50, dtype=float).reshape(50, 1)
        labels = np.zeros(50, dtype=int)
        labels[:30] = 1
        chosen = assisted_select_label(Q, labels, 25, seed=1)
        self.assertEqual(len(chosen), 25)
        self.assertTrue(np.all(chosen < 30))

    def test_no_positives(self):
        self.assertEqual(len(assisted_select_label(np.zeros((4, 2)), [0, 0, 0, 0], 2, seed=0)), 0)


class TestLaeaRun(unittest.TestCase):

    def test_budget_and_invariants(self):
        problem = BenchmarkProblem.from_name("ellipsoid", 5)
        counted = CountingProblem(problem)
        cfg = LaeaConfig(problem=counted, predictor=OraclePredictor(OracleSpec(), problem), seed=3)
        result = laea_run(cfg)
        self.assertTrue(result.complete)
        self.assertEqual(counted.calls, 300)
        self.assertEqual(len(result.archive_F), 300)
        self.assertEqual(len(result.trace), 251)
        self.assertEqual(result.trace[-1].fes, 300)
        best = [t.best_f for t in result.trace]
        self.assertTrue(all(later <= earlier for earlier, later in zip(best, best[1:])))
        self.assertEqual(result.best_f, min(result.archive_F))
        self.assertTrue(all(size <= 25 for size in result.unevaluated_sizes))

    def test_predict_calls_per_variant(self):
        problem = BenchmarkProblem.from_name("ackley", 3)
        for variant, per_gen in ((LaeaVariant.REG_ONLY, (1, 0)), (LaeaVariant.REG_CLA, (1, 1))):
            predictor = CountingPredictor(problem)
            result = laea_run(LaeaConfig(problem, predictor, seed=1, pop_size=10, tau=10, fes_max=30, variant=variant))
            generations = len(result.trace) - 1
            self.assertEqual(generations, 20)
            self.assertEqual((predictor.calls["Reg"], predictor.calls["Cla"]), (per_gen[0] * generations, per_gen[1] * generations))
            self.assertEqual(result.predict_calls, sum(per_gen) * generations)

    def test_deterministic(self):
        problem = BenchmarkProblem.from_name("griewank", 4)
        make = lambda: LaeaConfig(problem, OraclePredictor(OracleSpec(mode="random", seed=2), problem), seed=7, pop_size=12, tau=20, fes_max=60)
        self.assertEqual(laea_run(make()).to_json(), laea_run(make()).to_json())

    def test_perfect_beats_random(self):
        plus = 0
        for name in ("ellipsoid", "rosenbrock", "ackley", "griewank"):
            problem = BenchmarkProblem.from_name(name, 5)
            finals = {}
            for mode in ("perfect", "random"):
                finals[mode] = [
                    laea_run(LaeaConfig(problem, OraclePredictor(OracleSpec(mode=mode, seed=s), problem), seed=s, variant="RegOnly")).best_f
                    for s in range(10)
                ]
            plus += wilcoxon_rank_sum(finals["perfect"], finals["random"]).symbol is Symbol.PLUS
        self.assertGreaterEqual(plus, 3)

    def test_unavailable_backend_gives_partial_result(self):
        problem = BenchmarkProblem.from_name("rosenbrock", 2)
        predictor = PromptPredictor(DownAfter(working_calls=30))
        result = laea_run(LaeaConfig(problem, predictor, seed=0, pop_size=10, tau=10, fes_max=40, variant="RegOnly"))
        self.assertFalse(result.complete)
        self.assertEqual(len(result.archive_F), 13)

    def test_result_serializes(self):
        problem = BenchmarkProblem.from_name("ackley", 2)
        result = laea_run(LaeaConfig(problem, OraclePredictor(OracleSpec(), problem), pop_size=6, tau=6, fes_max=10))
        doc = json.loads(result.to_json())
        self.assertEqual(doc["config"]["variant"], "RegCla")
        self.assertEqual(list(result.trace_frame().columns), ["gen", "fes", "best_f"])

    def test_invalid_config(self):
        problem = BenchmarkProblem.from_name("ackley", 2)
        oracle = OraclePredictor(OracleSpec(), problem)
        with self.assertRaises(InvalidInput):
            LaeaConfig(problem, oracle, pop_size=3)
        with self.assertRaises(InvalidInput):
            LaeaConfig(problem, oracle, pop_size=50, fes_max=50)


class TestCodePreselect(unittest.TestCase):

    def test_one_evaluation_per_parent(self):
        problem = BenchmarkProblem.from_name("ackley", 3)
        counted = CountingProblem(problem)
        result = code_preselect_run(counted, OraclePredictor(OracleSpec(), problem), "Reg", budget=100, pop_size=20, seed=0)
        self.assertEqual(counted.calls, 100)
        self.assertEqual([t.fes for t in result.trace], [20, 40, 60, 80, 100])
        self.assertEqual(result.predict_calls, 4)

    def test_random_ignores_predictor(self):
        problem = BenchmarkProblem.from_name("rosenbrock", 4)
        bare = code_preselect_run(problem, None, PreselectStrategy.RANDOM, budget=80, pop_size=10, seed=5)
        with_oracle = code_preselect_run(problem, OraclePredictor(OracleSpec(), problem), "Random", budget=80, pop_size=10, seed=5)
        self.assertEqual(bare.archive_F, with_oracle.archive_F)
        self.assertEqual(with_oracle.predict_calls, 0)

    def test_classification_strategy_runs(self):
        problem = BenchmarkProblem.from_name("griewank", 3)
        result = code_preselect_run(problem, OraclePredictor(OracleSpec(), problem), "Cla", budget=60, pop_size=10, seed=2)
        self.assertEqual(len(result.archive_F), 60)

    def test_perfect_reg_beats_random(self):
        rows = []
        for name in ("ellipsoid", "rosenbrock", "ackley", "griewank"):
            for dim in (5, 10):
                problem = BenchmarkProblem.from_name(name, dim)
                oracle = OraclePredictor(OracleSpec(), problem)
                reg = [code_preselect_run(problem, oracle, "Reg", budget=200, pop_size=20, seed=s).best_f for s in range(5)]
                rnd = [code_preselect_run(problem, None, "Random", budget=200, pop_size=20, seed=s).best_f for s in range(5)]
                rows.append([np.mean(reg), np.mean(rnd)])
        reg_rank, random_rank = mean_rank(rows)
        self.assertLess(reg_rank, random_rank)

    def test_population_of_five(self):
        problem = BenchmarkProblem.from_name("ackley", 3)
        result = code_preselect_run(problem, OraclePredictor(OracleSpec(), problem), "Reg", budget=25, pop_size=5, seed=1)
        self.assertEqual(len(result.archive_F), 25)
        with self.assertRaises(InvalidInput):
            code_preselect_run(problem, None, "Random", budget=25, pop_size=4)

    def test_needs_predictor(self):
        with self.assertRaises(InvalidInput):
            code_preselect_run(BenchmarkProblem.from_name("ackley", 2), None, "Reg", budget=40, pop_size=10)


class TestGaCollect(unittest.TestCase):

    def test_layout(self):
        problem = BenchmarkProblem.from_name("ellipsoid", 5)
        frame = ga_collect_run(problem, repeats=2, seed=4, pop_size=10)
        self.assertEqual(list(frame.columns), ["run", "gen", "role", "x1", "x2", "x3", "x4", "x5", "f"])
        self.assertEqual(sorted(frame["gen"].unique().tolist()), [2, 22, 42])
        self.assertEqual(sorted(frame["run"].unique().tolist()), [0, 1])
        sizes = frame.groupby(["run", "gen", "role"]).size()
        self.assertTrue((sizes == 10).all())
        self.assertEqual(len(sizes), 2 * 3 * 2)

    def test_deterministic(self):
        problem = BenchmarkProblem.from_name("ackley", 2)
        first = ga_collect_run(problem, generations=(2, 5), repeats=2, seed=1, pop_size=8)
        second = ga_collect_run(problem, generations=(2, 5), repeats=2, seed=1, pop_size=8)
        self.assertTrue(first.equals(second))


if __name__ == "__main__":
    unittest.main()
