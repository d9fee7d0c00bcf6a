"""Tests for the Lasso and STRidge baselines."""

import numpy as np
import torch
from django.test import SimpleTestCase

from KineticPDE_Discovery.baselines import (
    ALPHA_GRID,
    DICTIONARY,
    build_dictionary_matrix,
    lasso,
    lasso_sweep,
    stridge,
    to_table,
)
from KineticPDE_Discovery.exceptions import ConfigurationError, EmptyModelError
from KineticPDE_Discovery.extract import OperatorWord, exact_table
from KineticPDE_Discovery.grid import DTYPE, make_grid
from KineticPDE_Discovery.solver import Dataset, KineticState, make_physics

from .helpers import small_dataset


def _problem(rows=60, x_true=(1.5, 0.0, -2.0, 0.0, 0.0, 0.7), seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((rows, len(x_true)))
    x_true = np.array(x_true)
    return A, A @ x_true, x_true


class LassoTest(SimpleTestCase):
    """Tests for coordinate-descent Lasso."""

    def test_no_penalty_recovers_least_squares(self):
        A, b, x_true = _problem()
        np.testing.assert_allclose(lasso(A, b, 0.0), x_true, atol=1e-8)

    def test_large_penalty_gives_zero(self):
        A, b, _ = _problem()
        alpha = float(np.abs(A.T @ b).max()) + 1.0
        np.testing.assert_array_equal(lasso(A, b, alpha), np.zeros(A.shape[1]))

    def test_orthonormal_columns_soft_threshold(self):
        """Tests x = soft(Aᵀb, α) when AᵀA = I."""

        rng = np.random.default_rng(1)
        Q, _ = np.linalg.qr(rng.standard_normal((40, 5)))
        b = rng.standard_normal(40)
        alpha = 0.3
        z = Q.T @ b
        expected = np.sign(z) * np.maximum(np.abs(z) - alpha, 0.0)
        np.testing.assert_allclose(lasso(Q, b, alpha), expected, atol=1e-10)

    def test_zero_column_keeps_zero(self):
        A, b, _ = _problem()
        A[:, 1] = 0.0
        self.assertEqual(lasso(A, b, 0.0)[1], 0.0)

    def test_invalid_input(self):
        A, b, _ = _problem()
        with self.assertRaises(ConfigurationError):
            lasso(A, b, -1.0)
        with self.assertRaises(ConfigurationError):
            lasso(np.zeros((0, 0)), np.zeros(0), 0.1)


class StridgeTest(SimpleTestCase):
    """Tests for sequential thresholded ridge regression."""

    def test_exact_support_recovery(self):
        A, b, x_true = _problem()
        x = stridge(A, b, ridge_lambda=0.0, hard_threshold=0.1)
        np.testing.assert_array_equal(x != 0.0, x_true != 0.0)
        np.testing.assert_allclose(x, x_true, atol=1e-8)

    def test_threshold_above_every_coefficient(self):
        A, b, _ = _problem()
        with self.assertRaises(EmptyModelError):
            stridge(A, b, hard_threshold=10.0)

    def test_single_sweep(self):
        A, b, x_true = _problem()
        x = stridge(A, b, ridge_lambda=1e-8, hard_threshold=0.1, sweeps=1)
        np.testing.assert_allclose(x, x_true, atol=1e-6)

    def test_invalid_parameters(self):
        A, b, _ = _problem()
        with self.assertRaises(ConfigurationError):
            stridge(A, b, ridge_lambda=-1.0)
        with self.assertRaises(ConfigurationError):
            stridge(A, b, hard_threshold=0.0)


class DictionaryTest(SimpleTestCase):
    """Tests for the dictionary matrix built from solver data."""

    def test_shape_and_true_columns(self):
        ds = small_dataset(nx=8, nv=4, nt=5)
        dm = build_dictionary_matrix(ds)
        self.assertEqual(dm.shape, (3 * 4 * 8, len(DICTIONARY)))
        self.assertEqual(len(DICTIONARY), 18)
        identity = DICTIONARY.index(OperatorWord.from_code((), "g"))
        np.testing.assert_allclose(dm.A[:, identity], ds.g_seq[1:-1].reshape(-1).numpy())
        central = (ds.g_seq[2:] - ds.g_seq[:-2]) / (2.0 * ds.dt)
        np.testing.assert_allclose(dm.b, central.reshape(-1).numpy())

    def test_constant_data(self):
        """Tests that constant ρ with g = 0 only excites the ρ identity column."""

        grid = make_grid(8, 4)
        state = KineticState(torch.zeros(grid.shape, dtype=DTYPE), torch.full((grid.nx,), 2.0, dtype=DTYPE))
        spec = make_physics(grid, 0.5, sigma_s=1.0, initial_state=state)
        ds = Dataset(
            grid=grid,
            times=1e-3 * np.arange(3),
            g_seq=torch.zeros((3,) + grid.shape, dtype=DTYPE),
            rho_seq=torch.full((3, grid.nx), 2.0, dtype=DTYPE),
            spec=spec,
        )
        dm = build_dictionary_matrix(ds)
        rho_identity = DICTIONARY.index(OperatorWord.from_code((), "rho"))
        np.testing.assert_allclose(dm.A[:, rho_identity], 2.0)
        others = np.delete(dm.A, rho_identity, axis=1)
        self.assertLess(float(np.abs(others).max()), 1e-12)
        np.testing.assert_array_equal(dm.b, 0.0)

    def test_short_dataset(self):
        with self.assertRaises(ConfigurationError):
            build_dictionary_matrix(small_dataset(nt=2))

    def test_sweep_and_table(self):
        ds = small_dataset(epsilon=0.5, nx=8, nv=4, nt=5)
        dm = build_dictionary_matrix(ds)
        alpha, x = lasso_sweep(dm, exact_table(ds.spec), alphas=ALPHA_GRID[-2:])
        self.assertIn(alpha, ALPHA_GRID[-2:])
        table = to_table(dm, x)
        self.assertEqual(table.component, "g")
        self.assertEqual(table.words, list(DICTIONARY))
