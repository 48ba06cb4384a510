import unittest
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import i0

from mfgpy.bases.Grid import ScalarField, make_grid
from mfgpy.bases.Hamiltonian import EpsSchedule
from mfgpy.bases.Problem import CouplingSpec, builtin_problem
from mfgpy.common.errors import BracketFailure, NonConvergence
from mfgpy.routines.solve import (
    NewtonOptions,
    SolverSettings,
    bracket_hbar,
    continuation_solve,
    hopf_cole,
    jacobian,
    linf_bound_k0,
    mass_functional,
    normalize_hbar,
    residual,
    solve_mfg,
    solve_scalar,
    sweep_mass,
)


TWO_PI = 2 * np.pi


class ResidualTestCase(unittest.TestCase):
    def test_trivial_zero(self):
        prob = builtin_problem("trivial", 16)
        u = ScalarField.constant(prob.grid, 0.0)
        np.testing.assert_array_equal(residual(u, prob, 0.0, 0.0).values, 0.0)

    def test_constant_family(self):
        prob = builtin_problem("trivial", 16, dim=2)
        for c in (-2.0, 0.7):
            u = ScalarField.constant(prob.grid, c)
            self.assertLessEqual(np.max(np.abs(residual(u, prob, c, 0.3).values)), 1e-10)

    def _exact_residual_ratios(self, name, sizes):
        norms = []
        for n in sizes:
            prob = builtin_problem(name, n)
            norms.append(np.max(np.abs(residual(prob.exact.u, prob, prob.exact.hbar, 0.0).values)))
        return [coarse / fine for coarse, fine in zip(norms, norms[1:])]

    def test_exact_solution_second_order_1d(self):
        for ratio in self._exact_residual_ratios("manufactured_1d", (32, 64, 128)):
            self.assertAlmostEqual(ratio, 4.0, delta=0.5)

    def test_exact_solution_second_order_2d(self):
        for ratio in self._exact_residual_ratios("manufactured_2d", (32, 64, 128)):
            self.assertAlmostEqual(ratio, 4.0, delta=0.8)


class JacobianTestCase(unittest.TestCase):
    def test_against_finite_differences(self):
        rng = np.random.default_rng(0)
        step = 1e-6
        cases = [("trivial", 16, 1, "linear"), ("manufactured_1d", 16, 1, "cubic"),
                 ("manufactured_2d", 8, 2, "linear"), ("anisotropic_2d", 8, 2, "cubic")]
        for name, n, dim, coupling in cases:
            prob = builtin_problem(name, n, dim=dim, coupling=coupling)
            u = ScalarField(prob.grid, 0.1 * rng.normal(size=prob.grid.shape))
            for eps in (0.5, 0.0):
                J = jacobian(u, prob, eps)
                for _ in range(20):
                    d = rng.normal(size=prob.grid.shape)
                    plus = residual(ScalarField(prob.grid, u.values + step * d), prob, 0.3, eps).values
                    minus = residual(ScalarField(prob.grid, u.values - step * d), prob, 0.3, eps).values
                    fd = ((plus - minus) / (2 * step)).ravel()
                    exact = J @ d.ravel()
                    with self.subTest(problem=name, eps=eps):
                        self.assertLessEqual(np.max(np.abs(fd - exact)), 1e-5 * np.max(np.abs(exact)))


class NewtonTestCase(unittest.TestCase):
    def test_converged_init_takes_no_iterations(self):
        prob = builtin_problem("trivial", 16)
        u, report = solve_scalar(prob, 0.0, 0.0, ScalarField.constant(prob.grid, 0.0))
        self.assertEqual(report.iterations, 0)
        self.assertTrue(report.converged)

    def test_trivial_from_offset(self):
        prob = builtin_problem("trivial", 16)
        u, report = solve_scalar(prob, 0.0, 0.5, ScalarField.constant(prob.grid, 0.3))
        self.assertLessEqual(np.max(np.abs(u.values)), 1e-10)
        self.assertLessEqual(report.iterations, 6)

    def test_constant_solution(self):
        prob = builtin_problem("trivial", 16)
        for hbar in (-3.0, 0.5):
            u, _ = solve_scalar(prob, hbar, 0.0, ScalarField.constant(prob.grid, 0.0))
            np.testing.assert_allclose(u.values, hbar, atol=1e-12)

    def test_max_iter_raises_with_last_iterate(self):
        prob = builtin_problem("manufactured_1d", 32)
        with self.assertRaises(NonConvergence) as ctx:
            solve_scalar(prob, 0.0, 0.0, ScalarField.constant(prob.grid, 0.0),
                         NewtonOptions(max_iter=1), stage=4)
        e = ctx.exception
        self.assertIsInstance(e.last_iterate, ScalarField)
        self.assertEqual(e.report.iterations, 1)
        self.assertEqual(e.stage, 4)
        self.assertTrue(str(e).startswith("stage 4: "))


class ContinuationTestCase(unittest.TestCase):
    def test_trivial_every_stage_zero(self):
        prob = builtin_problem("trivial", 16)
        u, reports = continuation_solve(prob, 0.0)
        self.assertEqual(len(reports), len(EpsSchedule().stages()))
        self.assertTrue(all(r.linf_u == 0.0 and r.increment == 0.0 for r in reports))
        self.assertEqual([r.stage for r in reports], list(range(len(reports))))

    def _assert_increments_shrink(self, prob):
        hbar = prob.exact.hbar if prob.exact is not None else 0.0
        _, reports = continuation_solve(prob, hbar)
        increments = [r.increment for r in reports]
        for k in range(2, len(increments) - 1):
            self.assertLessEqual(increments[k + 1], increments[k] * (1 + 1e-6) + 1e-12)
        self.assertLessEqual(increments[-1], 1e-8)
        self.assertTrue(all(r.converged and r.residual_linf <= 1e-10 for r in reports))

    def test_increments_shrink(self):
        for prob in (builtin_problem("trivial", 32), builtin_problem("manufactured_1d", 64)):
            with self.subTest(problem=prob.name):
                self._assert_increments_shrink(prob)

    @pytest.mark.slow
    def test_increments_shrink_2d(self):
        for name in ("manufactured_2d", "anisotropic_2d"):
            with self.subTest(problem=name):
                self._assert_increments_shrink(builtin_problem(name, 32))

    def test_fine_grid_reaches_tolerance(self):
        # at n=256 the stiffness entries are ~1e5, so L @ u on the raw iterate stalls near 1e-10
        prob = builtin_problem("manufactured_1d", 256)
        u, reports = continuation_solve(prob, 6.5)
        self.assertTrue(all(r.converged and r.residual_linf <= 1e-10 for r in reports))
        self.assertGreater(np.max(np.abs(u.values)), 6.0)

    def _assert_linf_bound(self, prob):
        for hbar in (-1.0, 0.0, 1.0):
            _, reports = continuation_solve(prob, hbar)
            k0 = linf_bound_k0(prob, hbar)
            for r in reports:
                self.assertLessEqual(r.linf_u, k0 + 1e-6)

    def test_linf_bound_along_schedule(self):
        self._assert_linf_bound(builtin_problem("anisotropic_2d", 16))

    @pytest.mark.slow
    def test_linf_bound_along_schedule_n32(self):
        self._assert_linf_bound(builtin_problem("anisotropic_2d", 32))

    def test_uniqueness_from_extreme_inits(self):
        for name in ("trivial", "manufactured_1d"):
            prob = builtin_problem(name, 32)
            hbar = prob.exact.hbar
            k0 = linf_bound_k0(prob, hbar)
            hi, _ = continuation_solve(prob, hbar, init=ScalarField.constant(prob.grid, k0))
            lo, _ = continuation_solve(prob, hbar, init=ScalarField.constant(prob.grid, -k0))
            self.assertLessEqual(np.max(np.abs(hi.values - lo.values)), 1e-8)


class MassTestCase(unittest.TestCase):
    def test_examples(self):
        grid = make_grid(1, 64)
        self.assertAlmostEqual(mass_functional(ScalarField.constant(grid, 0.0)), 1.0, places=14)
        self.assertAlmostEqual(mass_functional(ScalarField.constant(grid, np.log(2))), 0.5, places=14)
        (x,) = grid.coordinates()
        self.assertAlmostEqual(mass_functional(ScalarField(grid, 0.1 * np.cos(TWO_PI * x))), i0(0.1), places=12)

    def test_hopf_cole(self):
        grid = make_grid(1, 8)
        u = ScalarField(grid, np.linspace(-1, 1, 8))
        np.testing.assert_allclose(-np.log(hopf_cole(u).values), u.values, atol=1e-14)

    def test_k0(self):
        self.assertEqual(linf_bound_k0(builtin_problem("trivial", 8), 0.0), 2.0)
        self.assertEqual(linf_bound_k0(builtin_problem("trivial", 8), 3.0), 5.0)
        self.assertEqual(linf_bound_k0(builtin_problem("trivial", 8), 0.0, c_h=1.0), 3.0)
        self.assertAlmostEqual(linf_bound_k0(builtin_problem("anisotropic_2d", 16), 0.1), 2.4, places=12)

    def test_sweep(self):
        prob = builtin_problem("trivial", 16)
        rows = sweep_mass(prob, [-1.0, 0.0, 1.0])
        self.assertEqual([hbar for hbar, _ in rows], [-1.0, 0.0, 1.0])
        for (hbar, mass), expected in zip(rows, (np.e, 1.0, np.exp(-1))):
            self.assertAlmostEqual(mass, expected, places=8)


class BracketTestCase(unittest.TestCase):
    def test_trivial(self):
        self.assertEqual(bracket_hbar(builtin_problem("trivial", 8)), (2.0, -2.0))

    def test_bounded_coupling_has_no_bracket(self):
        # arctan passes the construction check at k0(0) but g(-u) never reaches the bracket offset
        prob = builtin_problem("trivial", 8, coupling="arctan")
        with self.assertRaises(BracketFailure):
            bracket_hbar(prob, max_expansions=3)

    def test_revalidates_coupling_at_endpoints(self):
        # linear on [-3, 3], slope 0.1 outside: fine at k0(0)=2, not coercive at k0(+-2)=4
        def g(s):
            s = np.asarray(s, dtype=float)
            return np.where(np.abs(s) <= 3.0, s, np.sign(s) * (3.0 + 0.1 * (np.abs(s) - 3.0)))

        coupling = CouplingSpec(g=g, g_prime=lambda s: np.where(np.abs(s) <= 3.0, 1.0, 0.1), c_g=1.0, name="kinked")
        prob = replace(builtin_problem("trivial", 8), coupling=coupling)
        with self.assertLogs("mfgpy.routines.solve", level="WARNING") as logs:
            self.assertEqual(bracket_hbar(prob), (2.0, -2.0))
        self.assertTrue(any("coupling assumptions fail" in line for line in logs.output))

    def test_endpoints_revalidate_quietly_for_linear(self):
        with self.assertLogs("mfgpy.routines.solve", level="DEBUG") as logs:
            bracket_hbar(builtin_problem("trivial", 8))
        self.assertEqual(sum("coupling revalidated" in line for line in logs.output), 2)
        self.assertFalse(any(line.startswith("WARNING") for line in logs.output))

    def test_bracket_straddles_one(self):
        solution = solve_mfg(builtin_problem("trivial", 16))
        masses = [mass for _, mass in solution.history]
        self.assertLess(masses[0], 1.0)
        self.assertGreater(masses[1], 1.0)


class NormalizeTestCase(unittest.TestCase):
    def test_trivial(self):
        solution = normalize_hbar(builtin_problem("trivial", 16))
        self.assertLessEqual(abs(solution.hbar), 1e-10)
        self.assertLessEqual(np.max(np.abs(solution.u.values)), 1e-10)
        np.testing.assert_allclose(solution.m.values, 1.0, atol=1e-10)
        self.assertAlmostEqual(solution.mass, 1.0, places=10)
        self.assertEqual(solution.eps_stages, len(EpsSchedule().stages()))

    def test_manufactured_1d(self):
        prob = builtin_problem("manufactured_1d", 64)
        h = prob.grid.h
        solution = solve_mfg(prob)
        self.assertLessEqual(abs(solution.hbar), 10 * h ** 2 + 1e-10)
        self.assertLessEqual(np.max(np.abs(solution.u.values - prob.exact.u.values)), 20 * h ** 2)
        self.assertLessEqual(abs(solution.mass - 1.0), 1e-10)
        self.assertLessEqual(solution.residual_linf, 1e-10)
        self.assertGreater(solution.bisect_iters, 0)
        self.assertLessEqual(np.max(np.abs(solution.u.values)), solution.k0)

    def test_manufactured_1d_fine_grid(self):
        prob = builtin_problem("manufactured_1d", 256)
        h = prob.grid.h
        solution = solve_mfg(prob)
        self.assertLessEqual(np.max(np.abs(solution.u.values - prob.exact.u.values)), 20 * h ** 2)
        self.assertLessEqual(abs(solution.mass - 1.0), 1e-10)
        self.assertLessEqual(solution.residual_linf, 1e-10)

    def test_iterates_follow_history(self):
        solution = solve_mfg(builtin_problem("manufactured_1d", 16))
        self.assertEqual(len(solution.iterates), len(solution.history))
        for u, (_, mass) in zip(solution.iterates, solution.history):
            self.assertAlmostEqual(mass_functional(u), mass, places=12)
        np.testing.assert_array_equal(solution.iterates[-1].values, solution.u.values)

    def test_truncated_coupling_changes_nothing_inside_bound(self):
        prob = builtin_problem("manufactured_1d", 32)
        plain = solve_mfg(prob)
        truncated = solve_mfg(prob, SolverSettings(truncate_coupling=True))
        self.assertLessEqual(np.max(np.abs(plain.u.values - truncated.u.values)), 1e-8)
        self.assertLessEqual(abs(plain.hbar - truncated.hbar), 1e-8)

    def test_bisection_budget(self):
        prob = builtin_problem("manufactured_1d", 16)
        with self.assertRaises(NonConvergence):
            solve_mfg(prob, SolverSettings(bisect_max_iter=2))

    @pytest.mark.slow
    def test_cubic_coupling_2d(self):
        prob = builtin_problem("manufactured_2d", 16, coupling="cubic")
        solution = solve_mfg(prob)
        self.assertLessEqual(abs(solution.mass - 1.0), 1e-10)
        self.assertLessEqual(np.max(np.abs(solution.u.values - prob.exact.u.values)), 0.05)


if "__main__" == __name__:
    unittest.main()
