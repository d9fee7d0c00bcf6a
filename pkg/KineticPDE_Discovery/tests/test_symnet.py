"""Tests for the symbolic operator network."""

import itertools
import tempfile
from pathlib import Path

import torch
from django.test import SimpleTestCase

from KineticPDE_Discovery import operators
from KineticPDE_Discovery.exceptions import AnsatzOverflowError, ConfigurationError, ConstructionError
from KineticPDE_Discovery.grid import DTYPE, make_grid
from KineticPDE_Discovery.operators import OperatorTag, Stencil
from KineticPDE_Discovery.solver import make_physics
from KineticPDE_Discovery.symnet import (
    AffineExpression,
    AnsatzConfig,
    AnsatzModel,
    EpsMode,
    PhysicsMode,
    base_expression,
    compose_odot,
    eps_pred,
    eval_ansatz,
    evaluate_words,
    load_checkpoint,
    network_key,
    piecewise_jumps,
    save_checkpoint,
    spatial_eval,
    vanishes_on_lift,
    with_interval,
)

from .helpers import random_fields, randomize

I, A, P = OperatorTag.IDENTITY, OperatorTag.ADVECTION, OperatorTag.PROJECTION


def _set_readout(network, values):
    with torch.no_grad():
        network.readout.copy_(torch.tensor(values, dtype=DTYPE))


def _as_floats(expression):
    return {word: float(coef) for word, coef in expression.items() if float(coef) != 0.0}


class EpsPredTest(SimpleTestCase):
    """Tests for the ε_pred parametrization."""

    def test_global_mode(self):
        self.assertAlmostEqual(float(eps_pred(0.0)), 0.5)
        self.assertGreater(float(eps_pred(-5.0)), 0.0)
        self.assertLess(float(eps_pred(5.0)), 1.0)

    def test_interval_mode(self):
        """Tests that interval i maps onto [0.1^(i+1), 0.1^i]."""

        self.assertAlmostEqual(float(eps_pred(0.0, EpsMode.INTERVAL, 1)), 0.01 + 0.09 * 0.5)
        self.assertAlmostEqual(float(eps_pred(-30.0, EpsMode.INTERVAL, 2)), 1e-3)
        self.assertAlmostEqual(float(eps_pred(30.0, EpsMode.INTERVAL, 2)), 1e-2)

    def test_with_interval(self):
        cfg = with_interval(AnsatzConfig(), 3)
        self.assertIs(cfg.eps_mode, EpsMode.INTERVAL)
        self.assertEqual(cfg.eps_interval, 3)


class ExpressionTest(SimpleTestCase):
    """Tests for symbolic composition."""

    def _affine(self, weights, bias):
        operands = [base_expression(I), base_expression(A)]
        return AffineExpression(
            ("I", "A"), [torch.tensor(w, dtype=DTYPE) for w in weights], torch.tensor(bias, dtype=DTYPE), operands
        )

    def test_compose_odot_expands_bilinearly(self):
        """Tests (3I + 3A)⊙(2I + 5A) = 6I + 21A + 15AA."""

        c1 = self._affine([2.0, 3.0], 1.0)
        c2 = self._affine([0.0, 5.0], 2.0)
        self.assertEqual(_as_floats(compose_odot(c1, c2)), {(): 6.0, ("A",): 21.0, ("A", "A"): 15.0})

    def test_compose_odot_rejects_mismatched_operands(self):
        c1 = self._affine([1.0, 1.0], 0.0)
        c2 = AffineExpression(("I", "P"), c1.weights, c1.bias, c1.expressions)
        with self.assertRaises(ConstructionError):
            compose_odot(c1, c2)

    def test_compose_odot_of_biases_is_a_multiple_of_identity(self):
        c1 = self._affine([0.0, 0.0], 3.0)
        c2 = self._affine([0.0, 0.0], -2.0)
        self.assertEqual(_as_floats(compose_odot(c1, c2)), {(): -6.0})

    def test_compose_odot_puts_the_first_factor_outside(self):
        """Tests that C1 ⊙ C2 applies C2 first, so A⊙P and P⊙A differ."""

        operands = [base_expression(A), base_expression(P)]
        one = torch.tensor(1.0, dtype=DTYPE)
        zero = torch.tensor(0.0, dtype=DTYPE)
        advect = AffineExpression(("A", "P"), [one, zero], zero, operands)
        project = AffineExpression(("A", "P"), [zero, one], zero, operands)
        self.assertEqual(_as_floats(compose_odot(advect, project)), {("A", "P"): 1.0})
        self.assertEqual(_as_floats(compose_odot(project, advect)), {("P", "A"): 1.0})

    def test_compose_odot_with_a_zero_factor(self):
        c1 = self._affine([2.0, 3.0], 1.0)
        c2 = self._affine([0.0, 0.0], 0.0)
        self.assertEqual(_as_floats(compose_odot(c1, c2)), {})

    def test_vanishes_on_lift(self):
        """Tests the velocity-parity rule on v-independent inputs."""

        self.assertFalse(vanishes_on_lift((), True))
        self.assertFalse(vanishes_on_lift(("A",), False))
        self.assertTrue(vanishes_on_lift(("A",), True))
        self.assertTrue(vanishes_on_lift(("P", "A"), False))
        self.assertFalse(vanishes_on_lift(("A", "A"), True))
        self.assertTrue(vanishes_on_lift(("A", "P", "A"), False))


class SpatialWeightTest(SimpleTestCase):
    """Tests for piecewise-polynomial weights."""

    def test_spatial_eval_picks_the_piece(self):
        coeffs = torch.tensor([[1.0, 2.0, 0.0], [0.0, 0.0, 3.0]], dtype=DTYPE)
        x = torch.tensor([0.25, 0.75], dtype=DTYPE)
        torch.testing.assert_close(spatial_eval(coeffs, x), torch.tensor([1.5, 1.6875], dtype=DTYPE))

    def test_jumps_of_a_continuous_weight(self):
        coeffs = torch.tensor([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]], dtype=DTYPE)
        torch.testing.assert_close(piecewise_jumps(coeffs), torch.zeros((1, 3), dtype=DTYPE))

    def test_jump_of_a_step(self):
        coeffs = torch.tensor([[1.0, 0.0], [0.0, 0.0]], dtype=DTYPE)
        torch.testing.assert_close(piecewise_jumps(coeffs), torch.tensor([[1.0, 0.0]], dtype=DTYPE))

    def test_single_piece_has_no_jumps(self):
        self.assertEqual(tuple(piecewise_jumps(torch.zeros((1, 3), dtype=DTYPE)).shape), (0, 3))


class AnsatzConfigTest(SimpleTestCase):
    """Tests for AnsatzConfig validation."""

    def test_invalid_configs(self):
        for kwargs in (
            {"layers": -1},
            {"base_ops": ()},
            {"base_ops": (I, A, A)},
            {"components": "scalar"},
            {"components": "three"},
            {"equations": ("u",)},
            {"base_ops": (I, A, OperatorTag.SQUARE)},
            {"stencil_order": 3},
            {"spatial_degree": 0},
        ):
            with self.subTest(kwargs=kwargs), self.assertRaises(ConfigurationError):
                AnsatzConfig(**kwargs)

    def test_nonlinear_tags_without_mask(self):
        cfg = AnsatzConfig(base_ops=(I, A, OperatorTag.SQUARE), mean_free_mask=False)
        self.assertFalse(cfg.base_ops[2].linear)

    def test_from_dict_parses_strings(self):
        cfg = AnsatzConfig.from_dict({"base_ops": "I,A,P", "equations": "g", "physics_mode": "scalar"})
        self.assertEqual(cfg.base_ops, (I, A, P))
        self.assertEqual(cfg.equations, ("g",))
        self.assertIs(cfg.physics_mode, PhysicsMode.SCALAR)
        self.assertEqual(AnsatzConfig.from_dict(cfg.to_dict()), cfg)

    def test_branches(self):
        self.assertEqual(len(AnsatzConfig().branches()), 4)
        self.assertEqual(AnsatzConfig(components="scalar", equations=("g",)).branches(), [("g", "g")])


class OperatorNetworkTest(SimpleTestCase):
    """Tests for the expansion of single networks."""

    def setUp(self):
        self.model = AnsatzModel(AnsatzConfig(scales=0, layers=0))

    def test_masked_g_readout(self):
        """Tests that g→g words are wrapped with (I - P) and P is pinned."""

        network = self.model.networks[network_key("g", "g", 0)]
        _set_readout(network, [2.0, 3.0, 7.0])
        self.assertEqual(_as_floats(network.expression()), {(): 2.0, ("A",): 3.0, ("P", "A"): -3.0})

    def test_masked_rho_readout(self):
        """Tests that only advection survives on the lifted ρ input."""

        network = self.model.networks[network_key("g", "rho", 0)]
        _set_readout(network, [2.0, 3.0, 7.0])
        self.assertEqual(_as_floats(network.expression()), {("A",): 3.0})

    def test_collapsed_rho_equation(self):
        """Tests that odd words are dropped from the ρ→ρ branch."""

        network = self.model.networks[network_key("rho", "rho", 0)]
        _set_readout(network, [2.0, 3.0, 7.0])
        self.assertEqual(_as_floats(network.expression()), {(): 2.0, ("P",): 7.0})

    def test_one_layer_produces_compositions(self):
        model = AnsatzModel(AnsatzConfig(scales=0, layers=1, mean_free_mask=False))
        randomize(model, seed=3)
        words = model.networks[network_key("g", "g", 0)].expression().keys()
        self.assertIn(("A", "A"), words)
        self.assertIn(("P", "A"), words)

    def test_dictionary_holds_every_short_word(self):
        """Tests that K layers over n base operators reach every word of length <= 2^K."""

        for ops in ((I,), (I, A), (I, A, P)):
            for layers in (0, 1, 2):
                with self.subTest(n=len(ops), layers=layers):
                    cfg = AnsatzConfig(
                        scales=0,
                        layers=layers,
                        base_ops=ops,
                        components="scalar",
                        equations=("g",),
                        mean_free_mask=False,
                    )
                    model = randomize(AnsatzModel(cfg), seed=layers + 10 * len(ops))
                    words = set(_as_floats(model.networks[network_key("g", "g", 0)].expression()))
                    letters = [tag.value for tag in ops if tag is not I]
                    expected = {
                        word for length in range(2**layers + 1) for word in itertools.product(letters, repeat=length)
                    }
                    self.assertEqual(words, expected)

    def test_second_layer_composes_the_first(self):
        """Tests B2 = B1 ⊙ B1 with B1 = A ⊙ A, read out alone."""

        cfg = AnsatzConfig(scales=0, layers=2, components="scalar", equations=("g",), mean_free_mask=False)
        model = AnsatzModel(cfg)
        network = model.networks[network_key("g", "g", 0)]
        with torch.no_grad():
            for p in network.parameters():
                p.zero_()
            network.weights[0][:, 1] = 1.0
            self.assertEqual(tuple(network.weights[1].shape), (2, 4))
            network.weights[1][:, 3] = 1.0
            network.readout[4] = 1.0
        self.assertEqual(_as_floats(network.expression()), {("A", "A", "A", "A"): 1.0})

    def test_spatial_readout_needs_grid(self):
        """Tests that spatial readouts expand to per-cell coefficients."""

        model = AnsatzModel(AnsatzConfig(scales=0, layers=0, spatial_pieces=2))
        network = model.networks[network_key("g", "g", 0)]
        with self.assertRaises(ConfigurationError):
            network.expression()
        grid = make_grid(8, 4)
        coef = network.expression(grid)[("A",)]
        self.assertEqual(tuple(coef.shape), (8,))


class AnsatzModelTest(SimpleTestCase):
    """Tests for AnsatzModel evaluation and bookkeeping."""

    def test_mean_free_guarantee(self):
        """Tests ⟨F1⟩ = 0 for a hundred random parameter draws."""

        cfg = AnsatzConfig(scales=1, layers=1)
        grid = make_grid(8, 4)
        for seed in range(100):
            model = randomize(AnsatzModel(cfg, seed), seed)
            g, rho = random_fields(grid, seed)
            f1, f2 = eval_ansatz(model, g, rho, grid)
            self.assertLess(float(operators.average(f1, grid).abs().max()), 1e-11)
            self.assertEqual(tuple(f2.shape), (grid.nx,))

    def test_mask_survives_randomization(self):
        model = randomize(AnsatzModel(AnsatzConfig(scales=0, layers=1)), seed=1)
        network = model.networks[network_key("g", "g", 0)]
        self.assertEqual(float(network.readout_weight()[2]), 0.0)
        self.assertEqual(float(network.layer_bias(1)[1]), 0.0)

    def test_single_layer_expansion_matches_direct_evaluation(self):
        """Tests the K = 1 expansion against applying the layers as operators."""

        cfg = AnsatzConfig(scales=0, layers=1, components="scalar", equations=("g",), mean_free_mask=False)
        grid = make_grid(16, 4)
        model = randomize(AnsatzModel(cfg), seed=6)
        network = model.networks[network_key("g", "g", 0)]
        g, _ = random_fields(grid, seed=6)
        weight, bias, readout = network.layer_weight(1), network.layer_bias(1), network.readout_weight()

        def base(u):
            return [operators.apply_operator(tag, u, grid, Stencil.UPWIND) for tag in cfg.base_ops]

        def affine(row, u):
            return sum(w * x for w, x in zip(weight[row], base(u))) + bias[row] * u

        direct = sum(r * x for r, x in zip(readout, base(g))) + readout[-1] * affine(0, affine(1, g))
        f1, _ = eval_ansatz(model, g, None, grid)
        torch.testing.assert_close(f1, direct.detach())

    def test_ansatz_is_linear_in_the_data(self):
        grid = make_grid(8, 4)
        model = randomize(AnsatzModel(AnsatzConfig(scales=1, layers=2)), seed=8)
        g1, rho1 = random_fields(grid, seed=1)
        g2, rho2 = random_fields(grid, seed=2)
        f1, f2 = eval_ansatz(model, 2.0 * g1 - 3.0 * g2, 2.0 * rho1 - 3.0 * rho2, grid)
        a1, a2 = eval_ansatz(model, g1, rho1, grid)
        b1, b2 = eval_ansatz(model, g2, rho2, grid)
        torch.testing.assert_close(f1, 2.0 * a1 - 3.0 * b1)
        torch.testing.assert_close(f2, 2.0 * a2 - 3.0 * b2)

    def test_innermost_projection_vanishes_on_mean_free_g(self):
        """Tests that words ending in P evaluate to zero on a mean-free g."""

        grid = make_grid(8, 4)
        g, _ = random_fields(grid, seed=4)
        values = evaluate_words([("P",), ("A", "P"), ("A", "A", "P")], g, grid, Stencil.UPWIND)
        for word, value in values.items():
            with self.subTest(word=word):
                self.assertLess(float(value.abs().max()), 1e-13)

    def test_scalar_ansatz(self):
        cfg = AnsatzConfig(components="scalar", equations=("g",))
        grid = make_grid(8, 4)
        g, _ = random_fields(grid)
        f1, f2 = eval_ansatz(AnsatzModel(cfg), g, None, grid)
        self.assertEqual(tuple(f1.shape), grid.shape)
        self.assertIsNone(f2)

    def test_batched_evaluation(self):
        """Tests that leading axes are carried through."""

        grid = make_grid(8, 4)
        model = randomize(AnsatzModel(AnsatzConfig()), seed=2)
        g, rho = random_fields(grid, batch=(3, 2))
        f1, f2 = eval_ansatz(model, g, rho, grid)
        self.assertEqual(tuple(f1.shape), (3, 2) + grid.shape)
        f1_single, _ = eval_ansatz(model, g[1, 0], rho[1, 0], grid)
        torch.testing.assert_close(f1[1, 0], f1_single)

    def test_overflow_names_the_scale(self):
        """Tests that ε_pred = 0 overflows at scale m = 1."""

        grid = make_grid(8, 4)
        model = randomize(AnsatzModel(AnsatzConfig(scales=1, layers=0)), seed=4)
        with torch.no_grad():
            model.w_eps.fill_(-400.0)
        g, rho = random_fields(grid)
        with self.assertRaises(AnsatzOverflowError) as ctx:
            eval_ansatz(model, g, rho, grid)
        self.assertEqual(ctx.exception.scale, 1)

    def test_physics_modes(self):
        grid = make_grid(8, 4)
        with self.assertRaises(ConfigurationError):
            AnsatzModel(AnsatzConfig()).sigma_s(grid)
        spec = make_physics(grid, 0.5, sigma_s=2.0)
        known = AnsatzModel(AnsatzConfig()).bind_physics(spec, grid)
        torch.testing.assert_close(known.sigma_s(grid), spec.sigma_s)
        self.assertIs(known.grid, grid)
        scalar = AnsatzModel(AnsatzConfig(physics_mode=PhysicsMode.SCALAR))
        torch.testing.assert_close(scalar.sigma_s(grid), torch.ones(8, dtype=DTYPE))
        spatial = AnsatzModel(AnsatzConfig(physics_mode=PhysicsMode.SPATIAL, spatial_pieces=2))
        torch.testing.assert_close(spatial.sigma_a(grid), torch.zeros(8, dtype=DTYPE))
        self.assertEqual(len(spatial.physics_weights()), 2)

    def test_scale_parameters(self):
        """Tests that every parameter sits in exactly one group."""

        model = AnsatzModel(AnsatzConfig(scales=2, physics_mode=PhysicsMode.SCALAR))
        groups = model.scale_parameters()
        self.assertEqual(set(groups), {0, 1, 2, None})
        self.assertIs(groups[None][0], model.w_eps)
        self.assertEqual(sum(len(p) for p in groups.values()), len(list(model.parameters())))


class CheckpointTest(SimpleTestCase):
    """Tests for the KAC1 checkpoint format."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "checkpoint.kac"

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_then_load(self):
        """Tests that parameters, config, grid and metadata come back exactly."""

        grid = make_grid(8, 4)
        cfg = AnsatzConfig(scales=2, layers=2, physics_mode=PhysicsMode.SCALAR)
        model = randomize(AnsatzModel(cfg, seed=5), seed=5)
        model.bind_physics(make_physics(grid, 0.5, sigma_s=1.5), grid)
        with torch.no_grad():
            model.w_eps.fill_(-1.25)
        save_checkpoint(model, self.path, metadata={"scheme": "ars222"})

        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.cfg, cfg)
        self.assertEqual(loaded.grid.nx, 8)
        self.assertEqual(loaded.grid.nv, 4)
        self.assertEqual(loaded.metadata, {"scheme": "ars222"})
        for name, tensor in model.state_dict().items():
            torch.testing.assert_close(loaded.state_dict()[name], tensor, rtol=0, atol=0)
        self.assertEqual(float(loaded.eps_pred().detach()), float(model.eps_pred().detach()))

    def test_rejects_unknown_keys(self):
        """Tests that keys save_checkpoint never writes raise ConfigurationError."""

        save_checkpoint(AnsatzModel(AnsatzConfig(scales=0, layers=0)), self.path)
        original = self.path.read_text()
        for extra in ("config.colour = red", "grid.nz = 3", "sigma = 1", "state.bogus = scalar 0x1.0p+0"):
            with self.subTest(extra=extra):
                self.path.write_text(original + extra + "\n")
                with self.assertRaises(ConfigurationError):
                    load_checkpoint(self.path)

    def test_rejects_foreign_file(self):
        self.path.write_text("format = XYZ\n")
        with self.assertRaises(ConfigurationError):
            load_checkpoint(self.path)

    def test_rejects_malformed_line(self):
        self.path.write_text("format = KAC1\nnot a pair\n")
        with self.assertRaises(ConfigurationError):
            load_checkpoint(self.path)
