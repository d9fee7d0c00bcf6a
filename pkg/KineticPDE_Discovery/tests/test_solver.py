"""Tests for the micro-macro solver and dataset files."""

import json
import math
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
import torch
from django.test import SimpleTestCase

from KineticPDE_Discovery import operators
from KineticPDE_Discovery.exceptions import (
    ConfigurationError,
    CorruptDatasetError,
    DatasetFormatError,
    InstabilityError,
)
from KineticPDE_Discovery.grid import DTYPE, make_grid
from KineticPDE_Discovery.solver import (
    KineticState,
    ars_substeps,
    generate_dataset,
    heat_reference,
    load_dataset,
    make_physics,
    save_dataset,
    step_ars222,
    step_imex1,
)

from .helpers import small_dataset


def _run(spec, grid, dt, steps, step=step_ars222):
    state = spec.initial_state
    for _ in range(steps):
        state = step(state, spec, grid, dt)
    return state


class PhysicsSpecTest(SimpleTestCase):
    """Tests for make_physics validation."""

    def setUp(self):
        self.grid = make_grid(16, 8)

    def test_defaults(self):
        """Tests zero absorption and source and a mean-free initial g."""

        spec = make_physics(self.grid, 0.5, sigma_s=1.0)
        self.assertEqual(float(spec.sigma_a.abs().max()), 0.0)
        self.assertLess(float(operators.average(spec.g0, self.grid).abs().max()), 1e-14)
        torch.testing.assert_close(spec.rho0, 1.0 + 0.5 * torch.sin(2.0 * math.pi * self.grid.centers()))

    def test_invalid_values(self):
        """Tests that out-of-range parameters raise ConfigurationError."""

        for kwargs in ({"epsilon": 0.0}, {"epsilon": 1.5}):
            with self.assertRaises(ConfigurationError):
                make_physics(self.grid, kwargs["epsilon"], sigma_s=1.0)
        with self.assertRaises(ConfigurationError):
            make_physics(self.grid, 0.5, sigma_s=0.0)
        with self.assertRaises(ConfigurationError):
            make_physics(self.grid, 0.5, sigma_s=1.0, sigma_a=-1.0)

    def test_rejects_non_mean_free_g0(self):
        grid = self.grid
        rho0 = torch.ones(grid.nx, dtype=DTYPE)
        g0 = torch.ones(grid.shape, dtype=DTYPE)
        with self.assertRaises(ConfigurationError):
            make_physics(grid, 0.5, sigma_s=1.0, initial_state=KineticState(g0, rho0))


class StepTest(SimpleTestCase):
    """Tests for the time steppers."""

    def test_mass_and_mean_free_conservation(self):
        """Tests mass drift and max|⟨g⟩| over a thousand ARS steps."""

        grid = make_grid(16, 8)
        spec = make_physics(grid, 1.0 / 16, sigma_s=1.0)
        dt = 0.5 * grid.dx**2
        state = spec.initial_state
        mass0 = float(state.rho.sum()) * grid.dx
        for _ in range(1000):
            state = step_ars222(state, spec, grid, dt)
            self.assertLess(float(operators.average(state.g, grid).abs().max()), 1e-10)
        self.assertLess(abs(float(state.rho.sum()) * grid.dx - mass0), 1e-10)

    def test_ars222_is_second_order(self):
        """Tests the self-convergence slope of ARS(2,2,2) in time."""

        grid = make_grid(16, 8)
        spec = make_physics(grid, 1.0, sigma_s=1.0)
        horizon = 0.04
        reference = _run(spec, grid, horizon / 640, 640)
        errors = []
        for steps in (10, 20, 40):
            state = _run(spec, grid, horizon / steps, steps)
            errors.append(float((state.g - reference.g).abs().max() + (state.rho - reference.rho).abs().max()))
        for a, b in zip(errors, errors[1:]):
            self.assertGreaterEqual(math.log2(a / b), 1.9)

    def test_imex1_agrees_with_ars222(self):
        """Tests that the first-order scheme tracks the second-order one."""

        grid = make_grid(16, 8)
        spec = make_physics(grid, 0.5, sigma_s=1.0)
        dt = 0.5 * grid.dx**2
        first = _run(spec, grid, dt, 20, step_imex1)
        second = _run(spec, grid, dt, 20)
        self.assertLess(float((first.rho - second.rho).abs().max()), 5e-2)

    def test_non_finite_state_raises(self):
        """Tests that NaN input surfaces as InstabilityError with dt and ε."""

        grid = make_grid(8, 4)
        spec = make_physics(grid, 0.5, sigma_s=1.0)
        state = KineticState(spec.g0 * float("nan"), spec.rho0)
        with self.assertRaises(InstabilityError) as ctx:
            step_ars222(state, spec, grid, 1e-3)
        self.assertEqual(ctx.exception.dt, 1e-3)
        self.assertEqual(ctx.exception.epsilon, 0.5)


class DiffusionLimitTest(SimpleTestCase):
    """Tests the small-ε behaviour against the heat equation."""

    def test_matches_heat_reference(self):
        """Tests ε=1/2048, σS=1/3 against ∂tρ = ∂xxρ within 2% relative L¹."""

        grid = make_grid(64, 16)
        spec = make_physics(grid, 1.0 / 2048, sigma_s=1.0 / 3.0)
        dt = 0.5 * grid.dx**2
        steps = 200
        ds = generate_dataset(spec, grid, dt, steps + 1)
        reference = heat_reference(spec.rho0, grid, kappa=1.0, t=steps * dt)
        error = float((ds.rho_seq[-1] - reference).abs().sum() / reference.abs().sum())
        self.assertLess(error, 0.02)

    def test_recovery_resolution_stays_bounded(self):
        """Tests the 200-cell, 56-slice diffusion run used for equation recovery."""

        grid = make_grid(200, 16)
        spec = make_physics(grid, 1.0 / 2048, sigma_s=1.0 / 3.0)
        dt = 0.5 * grid.dx**2
        ds = generate_dataset(spec, grid, dt, 56)
        self.assertLess(float(ds.rho_seq.abs().max()), 1.6)
        self.assertLess(float(ds.g_seq.abs().max()), 10.0)
        reference = heat_reference(spec.rho0, grid, kappa=1.0, t=55 * dt)
        error = float((ds.rho_seq[-1] - reference).abs().sum() / reference.abs().sum())
        self.assertLess(error, 0.02)

    def test_heat_reference_at_time_zero(self):
        grid = make_grid(16, 2)
        rho0 = torch.cos(2.0 * math.pi * grid.centers())
        torch.testing.assert_close(heat_reference(rho0, grid, 1.0, 0.0), rho0)


class GenerateDatasetTest(SimpleTestCase):
    """Tests for generate_dataset and subsampling."""

    def test_shapes_and_times(self):
        ds = small_dataset(nx=16, nt=6)
        self.assertEqual(tuple(ds.g_seq.shape), (6, 8, 16))
        self.assertEqual(tuple(ds.rho_seq.shape), (6, 16))
        self.assertAlmostEqual(ds.dt, 0.5 * (1.0 / 16) ** 2)

    def test_first_slice_is_initial_state(self):
        """Tests that slice 0 holds ρ0 and g0."""

        grid = make_grid(16, 8)
        spec = make_physics(grid, 0.5, sigma_s=1.0)
        ds = generate_dataset(spec, grid, 1e-3, 4)
        torch.testing.assert_close(ds.rho_seq[0], spec.rho0)
        torch.testing.assert_close(ds.g_seq[0], spec.g0)

    def test_strides(self):
        """Tests subsampling in x (odd and even strides) and in t."""

        grid = make_grid(24, 4)
        spec = make_physics(grid, 0.5, sigma_s=1.0)
        full = generate_dataset(spec, grid, 1e-3, 6)
        odd = generate_dataset(spec, grid, 1e-3, 6, stride_x=3, stride_t=2)
        self.assertEqual(odd.grid.nx, 8)
        self.assertEqual(odd.nt, 3)
        torch.testing.assert_close(odd.rho_seq, full.rho_seq[::2, 1::3])
        torch.testing.assert_close(odd.g_seq, full.g_seq[::2, :, 2::3])
        even = generate_dataset(spec, grid, 1e-3, 6, stride_x=2)
        torch.testing.assert_close(even.g_seq, full.g_seq[..., 1::2])
        torch.testing.assert_close(even.rho_seq, 0.5 * (full.rho_seq[..., 0::2] + full.rho_seq[..., 1::2]))
        self.assertAlmostEqual(odd.dt, 2e-3)

    def test_coarse_samples_sit_on_the_coarse_grid(self):
        """Tests that ρ0 and σS of a strided dataset match the coarse cell centers."""

        grid = make_grid(24, 4)
        spec = make_physics(grid, 0.5, sigma_s=1.0 + grid.centers())
        ds = generate_dataset(spec, grid, 1e-3, 2, stride_x=3)
        x = ds.grid.centers()
        torch.testing.assert_close(ds.rho_seq[0], 1.0 + 0.5 * torch.sin(2.0 * math.pi * x))
        torch.testing.assert_close(ds.spec.sigma_s, 1.0 + x)
        even = generate_dataset(spec, grid, 1e-3, 2, stride_x=2)
        torch.testing.assert_close(even.spec.sigma_s, 1.0 + even.grid.centers())

    def test_stride_must_divide(self):
        grid = make_grid(16, 4)
        spec = make_physics(grid, 0.5, sigma_s=1.0)
        with self.assertRaises(ConfigurationError):
            generate_dataset(spec, grid, 1e-3, 6, stride_x=3)
        with self.assertRaises(ConfigurationError):
            generate_dataset(spec, grid, 1e-3, 6, stride_t=4)

    def test_substeps_follow_the_transport_limit(self):
        """Tests the ARS substep count in the diffusive and kinetic regimes."""

        grid = make_grid(64, 16)
        dt = 0.5 * grid.dx**2
        self.assertEqual(ars_substeps(make_physics(grid, 1.0 / 2048, sigma_s=1.0), grid, dt), 32)
        small = make_grid(16, 8)
        self.assertEqual(ars_substeps(make_physics(small, 0.5, sigma_s=1.0), small, 0.5 * small.dx**2), 1)

    def test_growth_past_the_bound_raises(self):
        """Tests that a solution growing without NaNs still raises InstabilityError."""

        grid = make_grid(8, 4)
        spec = make_physics(grid, 0.5, sigma_s=1.0)

        def amplify(state, *args):
            return KineticState(state.g * 10.0, state.rho * 10.0)

        with mock.patch("KineticPDE_Discovery.solver.step_ars222", side_effect=amplify):
            with self.assertRaises(InstabilityError) as ctx:
                generate_dataset(spec, grid, 1e-3, 12)
        self.assertEqual(ctx.exception.epsilon, 0.5)


class DatasetFileTest(SimpleTestCase):
    """Tests for the KDS1 dataset format."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "data.kds"
        self.ds = small_dataset(nt=4)

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_then_load(self):
        """Tests that a saved dataset loads back bit for bit."""

        save_dataset(self.ds, self.path, metadata={"note": "x"})
        loaded = load_dataset(self.path)
        torch.testing.assert_close(loaded.g_seq, self.ds.g_seq, rtol=0, atol=0)
        torch.testing.assert_close(loaded.rho_seq, self.ds.rho_seq, rtol=0, atol=0)
        torch.testing.assert_close(loaded.spec.sigma_s, self.ds.spec.sigma_s, rtol=0, atol=0)
        self.assertEqual(loaded.spec.epsilon, self.ds.spec.epsilon)
        np.testing.assert_allclose(loaded.times, self.ds.times)
        sidecar = json.loads(Path(str(self.path) + ".json").read_text())
        self.assertEqual(sidecar["note"], "x")
        self.assertEqual(sidecar["stride_x"], 1)

    def test_header_starts_with_magic(self):
        save_dataset(self.ds, self.path)
        self.assertEqual(self.path.read_bytes()[:4], b"KDS1")

    def test_wrong_magic(self):
        """Tests that a foreign file raises DatasetFormatError."""

        save_dataset(self.ds, self.path)
        raw = bytearray(self.path.read_bytes())
        raw[:4] = b"XXXX"
        self.path.write_bytes(bytes(raw))
        with self.assertRaises(DatasetFormatError):
            load_dataset(self.path)

    def test_truncated_file(self):
        """Tests that a short file raises CorruptDatasetError."""

        save_dataset(self.ds, self.path)
        self.path.write_bytes(self.path.read_bytes()[:-8])
        with self.assertRaises(CorruptDatasetError):
            load_dataset(self.path)
