import unittest

import numpy as np

from laea.errors import InvalidInput
from laea.evolution import (
    GaSettings,
    Population,
    VwhModel,
    code_generate_trials,
    ga_step,
    reflect_into_bounds,
    vwh_fit,
    vwh_sample,
)
from laea.problems import BenchmarkProblem, ProblemName, lhs_sample


def box(lower, upper, dim=1):
    return BenchmarkProblem(ProblemName.ELLIPSOID, dim, np.full(dim, lower), np.full(dim, upper))


class TestVwhFit(unittest.TestCase):

    def test_edges_from_population_range(self):
        model = vwh_fit(np.array([[2.0], [2.5], [3.5], [4.0]]), box(0.0, 10.0), bins=4)
        np.testing.assert_allclose(model.edges[0], [0, 2, 3, 4, 10])

    def test_boundary_pseudo_count(self):
        X = np.linspace(2, 4, 10).reshape(-1, 1)
        model = vwh_fit(X, box(0.0, 10.0), bins=5)
        self.assertAlmostEqual(model.probabilities[0, 0], 0.1 / 10.2, places=12)
        self.assertAlmostEqual(model.probabilities[0, -1], 0.1 / 10.2, places=12)

    def test_probabilities_normalized_and_edges_increasing(self):
        problem = BenchmarkProblem.from_name("ackley", 6)
        model = vwh_fit(lhs_sample(30, problem, seed=1), problem)
        np.testing.assert_allclose(model.probabilities.sum(axis=1), 1.0, atol=1e-12)
        self.assertTrue(np.all(np.diff(model.edges, axis=1) > 0))
        np.testing.assert_array_equal(model.edges[:, 0], problem.lower)
        np.testing.assert_array_equal(model.edges[:, -1], problem.upper)

    def test_degenerate_dimension(self):
        X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        model = vwh_fit(X, box(-5.0, 5.0, dim=2))
        self.assertTrue(np.all(np.diff(model.edges[0]) > 0))

    def test_population_on_bound(self):
        X = np.array([[-5.0], [-5.0], [-5.0]])
        model = vwh_fit(X, box(-5.0, 5.0))
        self.assertTrue(np.all(np.diff(model.edges[0]) > 0))

    def test_accepts_population(self):
        problem = box(0.0, 1.0, dim=2)
        pop = Population.from_arrays([[0.2, 0.3], [0.4, 0.9]], [1.0, 2.0])
        self.assertEqual(vwh_fit(pop, problem).dim, 2)

    def test_preconditions(self):
        with self.assertRaises(InvalidInput):
            vwh_fit(np.array([[1.0]]), box(0.0, 2.0))
        with self.assertRaises(InvalidInput):
            vwh_fit(np.array([[1.0], [1.5]]), box(0.0, 2.0), bins=2)


class TestVwhSample(unittest.TestCase):

    def test_samples_in_bounds(self):
        problem = BenchmarkProblem.from_name("griewank", 5)
        model = vwh_fit(lhs_sample(20, problem, seed=3), problem)
        samples = vwh_sample(model, 10_000, seed=4)
        self.assertTrue(np.all(samples >= problem.lower))
        self.assertTrue(np.all(samples <= problem.upper))

    def test_single_bin_mass(self):
        model = VwhModel(np.array([[0.0, 1.0, 2.0, 3.0]]), np.array([[0.0, 1.0, 0.0]]))
        samples = vwh_sample(model, 500, seed=0)
        self.assertTrue(np.all((samples >= 1.0) & (samples <= 2.0)))

    def test_bin_frequency(self):
        model = VwhModel(np.array([[0.0, 1.0, 4.0, 10.0]]), np.array([[0.5, 0.3, 0.2]]))
        samples = vwh_sample(model, 10_000, seed=7)
        self.assertAlmostEqual(np.mean(samples < 1.0), 0.5, delta=0.02)

    def test_converged_population_concentration(self):
        problem = BenchmarkProblem.from_name("ellipsoid", 3)
        n = 50
        X = np.full((n, 3), 1.25) + np.random.default_rng(0).normal(0, 1e-9, size=(n, 3))
        model = vwh_fit(X, problem)
        samples = vwh_sample(model, 10_000, seed=1)
        for d in range(3):
            inside = np.mean((samples[:, d] >= model.edges[d, 1]) & (samples[:, d] <= model.edges[d, -2]))
            self.assertGreaterEqual(inside, 1 - 0.2 / (n + 0.2) - 0.01)

    def test_deterministic(self):
        problem = BenchmarkProblem.from_name("rosenbrock", 4)
        model = vwh_fit(lhs_sample(10, problem, seed=2), problem)
        np.testing.assert_array_equal(vwh_sample(model, 50, seed=9), vwh_sample(model, 50, seed=9))

    def test_refit_stays_in_box(self):
        problem = BenchmarkProblem.from_name("ackley", 2)
        model = vwh_fit(lhs_sample(10, problem, seed=2), problem)
        refit = vwh_fit(vwh_sample(model, 100, seed=3), problem)
        self.assertTrue(np.all(refit.edges[:, 1] >= problem.lower))
        self.assertTrue(np.all(refit.edges[:, -2] <= problem.upper))


class TestGaStep(unittest.TestCase):

    def setUp(self):
        self.problem = BenchmarkProblem.from_name("rosenbrock", 5)
        self.X = lhs_sample(20, self.problem, seed=0)
        self.F = np.array([self.problem.evaluate(x) for x in self.X])

    def test_degenerate_operators_copy_winners(self):
        settings = GaSettings(crossover_prob=0.0, mutation_prob=0.0)
        offspring = ga_step(self.X, self.F, self.problem, settings, seed=1)
        parents = {tuple(x) for x in self.X}
        self.assertEqual(offspring.shape, self.X.shape)
        self.assertTrue(all(tuple(c) in parents for c in offspring))

    def test_in_bounds_and_finite(self):
        offspring = ga_step(self.X, self.F, self.problem, GaSettings(mutation_prob=1.0), seed=2)
        self.assertTrue(np.all(np.isfinite(offspring)))
        self.assertTrue(np.all((offspring >= self.problem.lower) & (offspring <= self.problem.upper)))

    def test_deterministic(self):
        np.testing.assert_array_equal(
            ga_step(self.X, self.F, self.problem, seed=5),
            ga_step(self.X, self.F, self.problem, seed=5),
        )

    def test_odd_population(self):
        self.assertEqual(ga_step(self.X[:7], self.F[:7], self.problem, seed=0).shape, (7, 5))


class TestCodeTrials(unittest.TestCase):

    def setUp(self):
        self.problem = BenchmarkProblem.from_name("ackley", 4)
        self.X = lhs_sample(10, self.problem, seed=1)

    def test_three_trials_in_bounds(self):
        rng = np.random.default_rng(0)
        for i in range(len(self.X)):
            trials = code_generate_trials(i, self.X, self.problem, rng)
            self.assertEqual(trials.shape, (3, 4))
            self.assertTrue(np.all(np.isfinite(trials)))
            self.assertTrue(np.all((trials >= self.problem.lower) & (trials <= self.problem.upper)))

    def test_deterministic(self):
        np.testing.assert_array_equal(
            code_generate_trials(3, self.X, self.problem, seed=8),
            code_generate_trials(3, self.X, self.problem, seed=8),
        )

    def test_population_too_small(self):
        with self.assertRaises(InvalidInput):
            code_generate_trials(0, self.X[:4], self.problem, seed=0)

    def test_five_solutions_suffice(self):
        rng = np.random.default_rng(4)
        for i in range(5):
            trials = code_generate_trials(i, self.X[:5], self.problem, rng)
            self.assertEqual(trials.shape, (3, 4))
            self.assertTrue(np.all((trials >= self.problem.lower) & (trials <= self.problem.upper)))

    def test_reflection(self):
        problem = box(0.0, 1.0, dim=3)
        np.testing.assert_allclose(reflect_into_bounds(np.array([-0.2, 1.3, 5.0]), problem), [0.2, 0.7, 0.0])


if __name__ == "__main__":
    unittest.main()
