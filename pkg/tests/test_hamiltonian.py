import unittest

import numpy as np
from numpy.testing import assert_allclose

from mfgpy.bases.Grid import MatrixField, VectorField, make_grid
from mfgpy.bases.Hamiltonian import EpsSchedule, dh_eps_dp, dh_eps_dp_field, h_eps, h_eps_field
from mfgpy.common.errors import ValidationError


def random_spd(rng, d):
    B = rng.normal(size=(d, d))
    return B @ B.T + 0.5 * np.eye(d)


class EpsScheduleTestCase(unittest.TestCase):
    def test_default_stages(self):
        stages = EpsSchedule().stages()
        self.assertEqual(stages[0], 1.0)
        self.assertEqual(stages[-1], 0.0)
        self.assertLessEqual(stages[-2], 1e-8)
        self.assertGreater(stages[-3], 1e-8)
        for prev, cur in zip(stages[:-1], stages[1:-1]):
            self.assertEqual(cur, prev * 0.25)
        self.assertTrue(all(a > b for a, b in zip(stages, stages[1:])))

    def test_positive_eps_min(self):
        self.assertEqual(EpsSchedule(eps_min=0.01).stages(), (1.0, 0.25, 0.0625, 0.015625, 0.00390625))

    def test_validation(self):
        with self.assertRaisesRegex(ValidationError, r"factor must lie in \(0,1\)"):
            EpsSchedule(factor=1.5)
        with self.assertRaises(ValidationError):
            EpsSchedule(eps0=0.0)
        with self.assertRaises(ValidationError):
            EpsSchedule(eps_min=-1.0)


class HamiltonianTestCase(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(42)

    def test_examples(self):
        self.assertEqual(h_eps([0.0], [[1.0]], 0.5), 0.0)
        self.assertEqual(h_eps([2.0], [[1.0]], 0.0), 2.0)
        self.assertAlmostEqual(h_eps([2.0], [[1.0]], 1.0), 4.0 / 6.0)
        self.assertAlmostEqual(h_eps([1.0, 1.0], np.eye(2), 0.0), 1.0)

    def test_bounded_by_one_over_eps(self):
        for eps in (0.25, 1.0, 4.0):
            for scale in (1.0, 1e3, 1e8):
                p = scale * self.rng.normal(size=2)
                self.assertLessEqual(h_eps(p, random_spd(self.rng, 2), eps), 1.0 / eps)

    def test_close_to_quadratic(self):
        for eps in (1e-3, 0.1, 1.0):
            p = self.rng.normal(size=2)
            A = random_spd(self.rng, 2)
            q = p @ A @ p
            self.assertLessEqual(abs(h_eps(p, A, eps) - 0.5 * q), eps * q ** 2 / 4 + 1e-15)

    def test_derivative_against_finite_differences(self):
        step = 1e-6
        for d in (1, 2):
            for eps in (0.0, 0.5, 2.0):
                for _ in range(10):
                    p = self.rng.normal(size=d)
                    A = random_spd(self.rng, d)
                    fd = np.array([
                        (h_eps(p + step * e, A, eps) - h_eps(p - step * e, A, eps)) / (2 * step)
                        for e in np.eye(d)
                    ])
                    exact = dh_eps_dp(p, A, eps)
                    self.assertLessEqual(np.max(np.abs(fd - exact)), 1e-5 * max(1.0, np.max(np.abs(exact))))

    def test_zero_eps_derivative_is_Ap(self):
        p = np.array([0.3, -1.2])
        A = random_spd(self.rng, 2)
        assert_allclose(dh_eps_dp(p, A, 0.0), A @ p)

    def test_field_variants_match_pointwise(self):
        grid = make_grid(2, 8)
        Du = VectorField(grid, self.rng.normal(size=(2, *grid.shape)))
        B = self.rng.normal(scale=0.3, size=(2, 2, *grid.shape))
        A = MatrixField(grid, np.einsum("ik...,jk...->ij...", B, B) + np.eye(2).reshape(2, 2, 1, 1))
        for eps in (0.0, 0.3):
            H = h_eps_field(Du, A, eps)
            dH = dh_eps_dp_field(Du, A, eps)
            for i, j in [(0, 0), (3, 5), (7, 1)]:
                p = Du.values[:, i, j]
                A_x = A.values[:, :, i, j]
                self.assertAlmostEqual(H[i, j], h_eps(p, A_x, eps), places=12)
                assert_allclose(dH[:, i, j], dh_eps_dp(p, A_x, eps), atol=1e-12)


if "__main__" == __name__:
    unittest.main()
