"""The symbolic multiscale operator network.

Each network F^m_{q,p} maps an input field (p = g or lifted ρ) to a
contribution to the right-hand side of equation q. It realizes the recursion

    ξ^(k) = W^k [A_1 .. A_n, B_1 .. B_{k-1}]^T + b^k I
    B_k   = C_1^(k) ⊙ C_2^(k)
    F^m   = W^{K+1} [A_1 .. A_n, B_1 .. B_K]^T

symbolically: every operand is kept as an expression, a map from operator
words to (differentiable) coefficients, so the learned PDE can be read off
directly and the same expansion drives evaluation on data.

A word is a tuple of operator codes, outermost first. Identity is the unit of
composition, so it never appears inside a word and the empty word stands for
Identity itself.
"""

import enum
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import operators
from .exceptions import AnsatzOverflowError, ConfigurationError, ConstructionError
from .grid import DTYPE, make_grid
from .operators import OperatorTag, Stencil

logger = logging.getLogger(__name__)

COMPONENTS = ("g", "rho")
INIT_SCALE = 0.05

IDENTITY_WORD = ()


class EpsMode(enum.Enum):
    GLOBAL = "global"
    INTERVAL = "interval"


class PhysicsMode(enum.Enum):
    """How σS and σA enter the residuals: dataset arrays or trainable."""

    KNOWN = "known"
    SCALAR = "scalar"
    SPATIAL = "spatial"


def interval_bounds(i):
    """The interval [0.1^(i+1), 0.1^i] searched by interval mode i."""

    return 0.1 ** (i + 1), 0.1**i


def eps_pred(w_eps, mode=EpsMode.GLOBAL, interval=0):
    """Maps the raw parameter w_eps to the multiscale separator ε_pred.

    Global mode gives ½(tanh(w)+1) in (0, 1). Interval mode i maps the same
    quantity affinely onto [0.1^(i+1), 0.1^i].
    """

    w = torch.as_tensor(w_eps, dtype=DTYPE)
    unit = 0.5 * (torch.tanh(w) + 1.0)
    if EpsMode(mode) is EpsMode.GLOBAL:
        return unit
    low, high = interval_bounds(interval)
    return low + (high - low) * unit


@dataclass(frozen=True)
class AnsatzConfig:
    """Shape of the symbolic ansatz.

    Attributes:
        scales (int): M; scales m = 0..M are weighted by ε_pred^-m.
        layers (int): K, the number of ⊙-composition layers.
        base_ops (tuple[OperatorTag]): Base operators A_1..A_n.
        components (str): "two_component" (g and ρ coupled) or "scalar"
            (g driven by g alone).
        equations (tuple[str]): Which equations are fitted, from "g", "rho".
        mean_free_mask (bool): Enforce ⟨F1⟩ = 0 structurally.
        stencil_order (int): Upwind order of the g→g advection.
        spatial_pieces (int): Pieces of the readout SpatialWeights; 0 keeps
            readout weights scalar.
        spatial_degree (int): Polynomial degree per piece.
        physics_mode (PhysicsMode): Treatment of σS and σA.
        eps_mode (EpsMode): ε_pred parametrization.
        eps_interval (int): Interval index in interval mode.
    """

    scales: int = 1
    layers: int = 1
    base_ops: tuple = (OperatorTag.IDENTITY, OperatorTag.ADVECTION, OperatorTag.PROJECTION)
    components: str = "two_component"
    equations: tuple = COMPONENTS
    mean_free_mask: bool = True
    stencil_order: int = 1
    spatial_pieces: int = 0
    spatial_degree: int = 2
    physics_mode: PhysicsMode = PhysicsMode.KNOWN
    eps_mode: EpsMode = EpsMode.GLOBAL
    eps_interval: int = 0

    def __post_init__(self):
        object.__setattr__(self, "base_ops", tuple(OperatorTag(t) for t in self.base_ops))
        object.__setattr__(self, "equations", tuple(self.equations))
        object.__setattr__(self, "physics_mode", PhysicsMode(self.physics_mode))
        object.__setattr__(self, "eps_mode", EpsMode(self.eps_mode))
        if self.scales < 0 or self.layers < 0:
            raise ConfigurationError("scales and layers must be non-negative")
        if not self.base_ops:
            raise ConfigurationError("base_ops must not be empty")
        if len(set(self.base_ops)) != len(self.base_ops):
            raise ConfigurationError("base_ops must not repeat an operator")
        if self.components not in ("two_component", "scalar"):
            raise ConfigurationError(f"Unknown components mode {self.components!r}")
        if not self.equations or set(self.equations) - set(COMPONENTS):
            raise ConfigurationError(f"equations must be a non-empty subset of {COMPONENTS}")
        if self.components == "scalar" and self.equations != ("g",):
            raise ConfigurationError("The scalar ansatz only fits the g equation")
        if self.mean_free_mask and not all(tag.linear for tag in self.base_ops):
            raise ConfigurationError("The mean-free mask needs every base operator to be linear")
        if self.stencil_order not in (1, 2):
            raise ConfigurationError("stencil_order must be 1 or 2")
        if self.spatial_pieces < 0 or self.spatial_degree < 1:
            raise ConfigurationError("spatial_pieces must be >= 0 and spatial_degree >= 1")

    @property
    def inputs(self):
        return ("g",) if self.components == "scalar" else COMPONENTS

    def branches(self):
        """(equation, input) pairs that carry networks."""
        return [(q, p) for q in self.equations for p in self.inputs]

    def to_dict(self):
        data = asdict(self)
        data["base_ops"] = ",".join(tag.value for tag in self.base_ops)
        data["equations"] = ",".join(self.equations)
        data["physics_mode"] = self.physics_mode.value
        data["eps_mode"] = self.eps_mode.value
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if isinstance(data.get("base_ops"), str):
            data["base_ops"] = tuple(OperatorTag.parse(t) for t in data["base_ops"].split(",") if t)
        if isinstance(data.get("equations"), str):
            data["equations"] = tuple(e for e in data["equations"].split(",") if e)
        return cls(**data)


def branch_stencil(equation, source, cfg):
    """Advection realization of the (equation, input) branch.

    g→g keeps faces (upwind), ρ→g goes center to face, g→ρ goes face to
    center and ρ→ρ stays on centers (central).
    """

    if equation == "g":
        return Stencil.UPWIND if source == "g" else Stencil.CENTER_TO_FACE
    return Stencil.FACE_TO_CENTER if source == "g" else Stencil.CENTRAL


# ---------------------------------------------------------------------------
# Operator expressions


def _accumulate(target, word, coef):
    if word in target:
        target[word] = target[word] + coef
    else:
        target[word] = coef


def base_expression(tag):
    """The expression of a single base operator."""

    word = IDENTITY_WORD if tag is OperatorTag.IDENTITY else (tag.value,)
    return {word: torch.ones((), dtype=DTYPE)}


@dataclass
class AffineExpression:
    """Σ_i w_i X_i + b·I over a fixed list of operand expressions."""

    operands: tuple
    weights: list
    bias: torch.Tensor
    expressions: list = field(repr=False, default_factory=list)

    def expand(self):
        out = {}
        for weight, expression in zip(self.weights, self.expressions):
            for word, coef in expression.items():
                _accumulate(out, word, weight * coef)
        _accumulate(out, IDENTITY_WORD, self.bias)
        return out


def compose_odot(c1, c2):
    """Expands C1 ⊙ C2 into a sum of composed words.

    The result is Σ w1_i w2_j A_i∘A_j + Σ (w1_i b2 + w2_i b1) A_i + b1 b2 I,
    i.e. the full bilinear expansion including the constant term.

    Raises:
        ConstructionError: If the two factors range over different operands.
    """

    if tuple(c1.operands) != tuple(c2.operands):
        raise ConstructionError(f"Cannot compose over different operand lists: {c1.operands} vs {c2.operands}")
    outer, inner = c1.expand(), c2.expand()
    out = {}
    for word_outer, coef_outer in outer.items():
        for word_inner, coef_inner in inner.items():
            _accumulate(out, word_outer + word_inner, coef_outer * coef_inner)
    return out


def scale_expression(expression, factor):
    return {word: factor * coef for word, coef in expression.items()}


def vanishes_on_lift(word, collapsed):
    """Whether a word is identically zero on a v-independent input.

    Tracks velocity parity from the innermost operator outwards: advection
    flips it, a projection of an odd operand is zero. With ``collapsed`` the
    word is also averaged over v at the end, which kills odd results.
    """

    odd = False
    for code in reversed(word):
        if code == OperatorTag.ADVECTION.value:
            odd = not odd
        elif code == OperatorTag.PROJECTION.value:
            if odd:
                return True
        elif code in (OperatorTag.SQUARE.value, OperatorTag.GAUSSIAN.value):
            odd = False
    return collapsed and odd


# ---------------------------------------------------------------------------
# Spatial weights


def spatial_eval(coeffs, x):
    """Evaluates piecewise polynomials on uniform pieces of [0, 1].

    Args:
        coeffs (torch.Tensor): (..., N_p, deg+1) coefficients a_{i,0..deg}
            of a_{i,0} + a_{i,1} x + ... on piece i.
        x (torch.Tensor): Points in [0, 1].

    Returns:
        torch.Tensor: (..., len(x)) values, each from the piece containing x.
    """

    pieces = coeffs.shape[-2]
    index = torch.clamp((x * pieces).floor().long(), 0, pieces - 1)
    local = coeffs[..., index, :]
    out = local[..., -1]
    for d in range(coeffs.shape[-1] - 2, -1, -1):
        out = out * x + local[..., d]
    return out


def piecewise_jumps(coeffs):
    """Jumps of value and every derivative at the interior breakpoints.

    Returns:
        torch.Tensor: (..., N_p - 1, deg + 1); entry d is the jump of the
        d-th derivative.
    """

    pieces, terms = coeffs.shape[-2], coeffs.shape[-1]
    if pieces < 2:
        return coeffs.new_zeros(coeffs.shape[:-2] + (0, terms))
    breaks = torch.arange(1, pieces, dtype=DTYPE) / pieces
    powers = torch.arange(terms, dtype=DTYPE)
    jumps = []
    for d in range(terms):
        # d-th derivative of x^k is k!/(k-d)! x^(k-d) for k >= d.
        factor = torch.tensor(
            [math.factorial(k) / math.factorial(k - d) if k >= d else 0.0 for k in range(terms)], dtype=DTYPE
        )
        basis = factor * breaks.unsqueeze(-1) ** torch.clamp(powers - d, min=0)
        left = (coeffs[..., :-1, :] * basis).sum(-1)
        right = (coeffs[..., 1:, :] * basis).sum(-1)
        jumps.append(left - right)
    return torch.stack(jumps, dim=-1)


@dataclass
class SpatialWeight:
    """A standalone piecewise-polynomial weight on [0, 1]."""

    coeffs: torch.Tensor

    @property
    def pieces(self):
        return self.coeffs.shape[-2]

    @property
    def degree(self):
        return self.coeffs.shape[-1] - 1

    @property
    def breakpoints(self):
        return np.linspace(0.0, 1.0, self.pieces + 1)

    def evaluate(self, grid):
        return spatial_eval(self.coeffs, grid.centers())


# ---------------------------------------------------------------------------
# Networks


def _uniform(shape, generator):
    return (2.0 * torch.rand(shape, generator=generator, dtype=DTYPE) - 1.0) * INIT_SCALE


class OperatorNetwork(nn.Module):
    """One F^m_{q,p}: K composition layers plus a readout row.

    Layer k holds a 2×(n+k-1) weight (row 0 builds C1, row 1 builds C2) and
    a bias pair. Pinned entries are multiplied by a zero mask, so they stay
    zero through training.
    """

    def __init__(self, cfg, equation, source, generator=None):
        super().__init__()
        self.cfg = cfg
        self.equation = equation
        self.source = source
        n = len(cfg.base_ops)
        masked = cfg.mean_free_mask and equation == "g"

        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for k in range(1, cfg.layers + 1):
            weight_mask = torch.ones((2, n + k - 1), dtype=DTYPE)
            bias_mask = torch.ones(2, dtype=DTYPE)
            for i, tag in enumerate(cfg.base_ops):
                if not tag.linear:
                    weight_mask[:, i] = 0.0
                if masked and tag in (OperatorTag.IDENTITY, OperatorTag.PROJECTION):
                    weight_mask[1, i] = 0.0
            if masked:
                bias_mask[1] = 0.0
            self.register_buffer(f"weight_mask_{k}", weight_mask, persistent=False)
            self.register_buffer(f"bias_mask_{k}", bias_mask, persistent=False)
            self.weights.append(nn.Parameter(_uniform(weight_mask.shape, generator) * weight_mask))
            self.biases.append(nn.Parameter(_uniform(bias_mask.shape, generator) * bias_mask))

        readout_mask = torch.ones(n + cfg.layers, dtype=DTYPE)
        if masked:
            for i, tag in enumerate(cfg.base_ops):
                pinned = (OperatorTag.PROJECTION,) if source == "g" else (OperatorTag.IDENTITY, OperatorTag.PROJECTION)
                if tag in pinned:
                    readout_mask[i] = 0.0
        if cfg.spatial_pieces:
            shape = (n + cfg.layers, cfg.spatial_pieces, cfg.spatial_degree + 1)
            readout_mask = readout_mask.reshape(-1, 1, 1).expand(shape).clone()
        self.register_buffer("readout_mask", readout_mask, persistent=False)
        self.readout = nn.Parameter(_uniform(readout_mask.shape, generator) * readout_mask)

    def layer_weight(self, k):
        return self.weights[k - 1] * getattr(self, f"weight_mask_{k}")

    def layer_bias(self, k):
        return self.biases[k - 1] * getattr(self, f"bias_mask_{k}")

    def readout_weight(self):
        return self.readout * self.readout_mask

    def effective_parameters(self):
        """Masked parameter tensors, in declaration order."""

        out = []
        for k in range(1, self.cfg.layers + 1):
            out.extend([self.layer_weight(k), self.layer_bias(k)])
        out.append(self.readout_weight())
        return out

    def spatial_coefficients(self):
        if not self.cfg.spatial_pieces:
            return None
        return self.readout_weight()

    def expression(self, grid=None):
        """Expands this network into {word: coefficient}.

        Coefficients are 0-d tensors, or (nx,) tensors evaluated on
        ``grid`` when the readout is spatial.
        """

        operand_names = tuple(tag.value for tag in self.cfg.base_ops)
        operands = [base_expression(tag) for tag in self.cfg.base_ops]
        for k in range(1, self.cfg.layers + 1):
            weight, bias = self.layer_weight(k), self.layer_bias(k)
            c1 = AffineExpression(operand_names, list(weight[0]), bias[0], operands)
            c2 = AffineExpression(operand_names, list(weight[1]), bias[1], operands)
            operands = operands + [compose_odot(c1, c2)]
            operand_names = operand_names + (f"B{k}",)

        readout = self.readout_weight()
        if self.cfg.spatial_pieces:
            if grid is None:
                raise ConfigurationError("Spatial readout weights need a grid to expand")
            readout = spatial_eval(readout, grid.centers())

        out = {}
        for weight, expression in zip(readout, operands):
            for word, coef in expression.items():
                _accumulate(out, word, weight * coef)
        return self._finalize(out)

    def _finalize(self, expression):
        lifted = self.source == "rho"
        if lifted:
            collapsed = self.equation == "rho"
            expression = {w: c for w, c in expression.items() if not vanishes_on_lift(w, collapsed)}
        if self.cfg.mean_free_mask and self.equation == "g":
            wrapped = {}
            for word, coef in expression.items():
                _accumulate(wrapped, word, coef)
                if word == IDENTITY_WORD and not lifted:
                    continue
                projected = (OperatorTag.PROJECTION.value,) + word
                if lifted and vanishes_on_lift(projected, False):
                    continue
                _accumulate(wrapped, projected, -coef)
            expression = wrapped
        return expression


def network_key(equation, source, scale):
    return f"{equation}_{source}_m{scale}"


class AnsatzModel(nn.Module):
    """The full multiscale two-component ansatz and its physics terms.

    F1 = Σ_m ε_pred^-m (F^m_{g,g}(g) + F^m_{g,ρ}(lift ρ))
    F2 = ⟨Σ_m ε_pred^-m (F^m_{ρ,g}(g) + F^m_{ρ,ρ}(lift ρ))⟩
    """

    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        generator = torch.Generator().manual_seed(int(seed))
        self.networks = nn.ModuleDict()
        for equation, source in cfg.branches():
            for m in range(cfg.scales + 1):
                self.networks[network_key(equation, source, m)] = OperatorNetwork(cfg, equation, source, generator)
        self.w_eps = nn.Parameter(torch.zeros((), dtype=DTYPE))

        if cfg.physics_mode is PhysicsMode.SCALAR:
            self.sigma_s_param = nn.Parameter(torch.ones((), dtype=DTYPE))
            self.sigma_a_param = nn.Parameter(torch.zeros((), dtype=DTYPE))
        elif cfg.physics_mode is PhysicsMode.SPATIAL:
            pieces = max(cfg.spatial_pieces, 1)
            shape = (pieces, cfg.spatial_degree + 1)
            sigma_s = torch.zeros(shape, dtype=DTYPE)
            sigma_s[:, 0] = 1.0
            self.sigma_s_param = nn.Parameter(sigma_s)
            self.sigma_a_param = nn.Parameter(torch.zeros(shape, dtype=DTYPE))
        self.register_buffer("known_sigma_s", torch.zeros(0, dtype=DTYPE))
        self.register_buffer("known_sigma_a", torch.zeros(0, dtype=DTYPE))
        self.register_buffer("known_source", torch.zeros(0, dtype=DTYPE))
        self.grid = None
        self.metadata = {}

    # -- physics -------------------------------------------------------------

    def bind_physics(self, spec, grid=None):
        """Stores the dataset's σS, σA and G as known arrays, and its grid."""

        self.known_sigma_s = spec.sigma_s.detach().clone()
        self.known_sigma_a = spec.sigma_a.detach().clone()
        self.known_source = spec.source.detach().clone()
        if grid is not None:
            self.grid = grid
        return self

    def _known(self, name, grid):
        values = getattr(self, f"known_{name}")
        if values.numel() == 0:
            raise ConfigurationError(f"{name} is not bound; call bind_physics first")
        if values.numel() != grid.nx:
            raise ConfigurationError(f"Bound {name} has {values.numel()} cells, grid has {grid.nx}")
        return values

    def _physics(self, name, grid):
        mode = self.cfg.physics_mode
        if mode is PhysicsMode.KNOWN:
            return self._known(name, grid)
        param = getattr(self, f"{name}_param")
        if mode is PhysicsMode.SCALAR:
            return param.expand(grid.nx)
        return spatial_eval(param, grid.centers())

    def sigma_s(self, grid):
        return self._physics("sigma_s", grid)

    def sigma_a(self, grid):
        return self._physics("sigma_a", grid)

    def source(self, grid):
        return self._known("source", grid)

    def physics_weights(self):
        """Trainable SpatialWeights of the physics terms, if any."""

        if self.cfg.physics_mode is not PhysicsMode.SPATIAL:
            return []
        return [SpatialWeight(self.sigma_s_param), SpatialWeight(self.sigma_a_param)]

    # -- scales --------------------------------------------------------------

    def eps_pred(self):
        return eps_pred(self.w_eps, self.cfg.eps_mode, self.cfg.eps_interval)

    def scale_parameters(self):
        """Network parameters grouped by scale m; everything else under None."""

        groups = {m: [] for m in range(self.cfg.scales + 1)}
        for key, network in self.networks.items():
            groups[int(key.rsplit("_m", 1)[1])].extend(network.parameters())
        groups[None] = [self.w_eps] + [
            p for name, p in self.named_parameters() if name.startswith(("sigma_s_param", "sigma_a_param"))
        ]
        return groups

    def sparse_parameters(self):
        """Masked network parameters entering the ‖θ‖₁ penalty."""

        out = []
        for network in self.networks.values():
            out.extend(network.effective_parameters())
        return out

    # -- evaluation ----------------------------------------------------------

    def expansion(self, grid=None, per_scale=False):
        """Expanded coefficients per (equation, input) branch.

        Args:
            grid (PhaseGrid): Needed when readout weights are spatial.
            per_scale (bool): Return the unscaled F^m tables keyed by m
                instead of the ε_pred-weighted totals.

        Returns:
            dict: (equation, input) -> {word: coefficient}, or
            m -> that mapping when ``per_scale`` is set.
        """

        tables = build_network(self.cfg, self, grid)
        if per_scale:
            return tables
        eps = self.eps_pred()
        total = {branch: {} for branch in self.cfg.branches()}
        for m, branches in tables.items():
            factor = eps ** (-m)
            for branch, expression in branches.items():
                for word, coef in expression.items():
                    _accumulate(total[branch], word, factor * coef)
        return total

    def evaluate_parts(self, g, rho, grid, expansion=None):
        """Evaluates every branch on data.

        Returns:
            dict: (equation, input) -> field. g-equation parts are FieldG,
            ρ-equation parts are FieldRho (already averaged over v).
        """

        if expansion is None:
            expansion = self.expansion(grid)
        inputs = {"g": g}
        if rho is not None:
            inputs["rho"] = operators.lift(rho, grid)
        parts = {}
        for (equation, source), expression in expansion.items():
            stencil = branch_stencil(equation, source, self.cfg)
            values = evaluate_words(expression.keys(), inputs[source], grid, stencil, self.cfg.stencil_order)
            out = torch.zeros_like(inputs[source])
            for word, coef in expression.items():
                out = out + coef * values[word]
            parts[(equation, source)] = operators.average(out, grid) if equation == "rho" else out
        return parts

    def check_finite(self, parts, g, rho, grid):
        """Raises AnsatzOverflowError naming the first scale that overflows."""

        if all(torch.isfinite(value).all() for value in parts.values()):
            return
        tables = build_network(self.cfg, self, grid)
        eps = self.eps_pred()
        for m, branches in tables.items():
            scaled = {branch: scale_expression(expr, eps ** (-m)) for branch, expr in branches.items()}
            with torch.no_grad():
                scale_parts = self.evaluate_parts(g, rho, grid, scaled)
            if not all(torch.isfinite(value).all() for value in scale_parts.values()):
                raise AnsatzOverflowError(f"Ansatz overflowed at scale m={m}", scale=m)
        raise AnsatzOverflowError("Ansatz overflowed")


def build_network(cfg, model, grid=None):
    """Per-scale operator expressions F^m of every branch.

    Returns:
        dict: m -> {(equation, input): {word: coefficient}}.
    """

    tables = {}
    for m in range(cfg.scales + 1):
        tables[m] = {
            (equation, source): model.networks[network_key(equation, source, m)].expression(grid)
            for equation, source in cfg.branches()
        }
    return tables


def evaluate_words(words, u, grid, stencil, order=1):
    """Evaluates each word on u, sharing common inner suffixes."""

    cache = {IDENTITY_WORD: u}

    def value(word):
        if word not in cache:
            tag = OperatorTag(word[0])
            cache[word] = operators.apply_operator(tag, value(word[1:]), grid, stencil, order)
        return cache[word]

    return {word: value(word) for word in words}


def eval_ansatz(model, g, rho, grid):
    """Evaluates (F1, F2) on data.

    Args:
        model (AnsatzModel): Parameters and configuration.
        g (torch.Tensor): FieldG, optionally with leading batch axes.
        rho (torch.Tensor): Matching FieldRho, or None for the scalar ansatz.
        grid (PhaseGrid): Grid of the data.

    Returns:
        tuple: F1 (FieldG, or None when the g-equation is not fitted) and F2
        (FieldRho, or None).

    Raises:
        AnsatzOverflowError: If a scale produces non-finite values.
    """

    parts = model.evaluate_parts(g, rho, grid)
    model.check_finite(parts, g, rho, grid)
    f1 = f2 = None
    for (equation, _), value in parts.items():
        if equation == "g":
            f1 = value if f1 is None else f1 + value
        else:
            f2 = value if f2 is None else f2 + value
    return f1, f2


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_FORMAT = "KAC1"


def _format_tensor(tensor):
    values = tensor.detach().reshape(-1).tolist()
    shape = "x".join(str(s) for s in tensor.shape) or "scalar"
    return f"{shape} " + " ".join(float(v).hex() for v in values)


def _parse_tensor(text):
    shape_text, *values = text.split()
    shape = () if shape_text == "scalar" else tuple(int(s) for s in shape_text.split("x"))
    data = torch.tensor([float.fromhex(v) for v in values], dtype=DTYPE)
    return data.reshape(shape)


def save_checkpoint(model, path, metadata=None):
    """Writes the model as a human-readable key-value file.

    Floats are stored as hex literals, so a load reproduces them exactly.
    ``metadata`` (for example the fitting scheme) is stored as ``meta.*``
    lines and comes back as ``model.metadata``.
    """

    lines = ["# symbolic ansatz checkpoint", f"format = {CHECKPOINT_FORMAT}"]
    for key, value in model.cfg.to_dict().items():
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"config.{key} = {value}")
    lines.append(f"eps_pred = {float(model.eps_pred().detach())!r}")
    if model.grid is not None:
        lines.append(f"grid.nx = {model.grid.nx}")
        lines.append(f"grid.nv = {model.grid.nv}")
    for key, value in sorted({**model.metadata, **(metadata or {})}.items()):
        lines.append(f"meta.{key} = {value}")
    for name, tensor in model.state_dict().items():
        lines.append(f"state.{name} = {_format_tensor(tensor)}")
    Path(path).write_text("\n".join(lines) + "\n")
    logger.info("Wrote checkpoint %s", path)


CONFIG_FIELDS = frozenset(f.name for f in fields(AnsatzConfig))


def load_checkpoint(path):
    """Reads a checkpoint written by ``save_checkpoint``.

    Raises:
        ConfigurationError: If the file is not a valid checkpoint, including
            any key that ``save_checkpoint`` never writes.
    """

    config, state, grid, meta = {}, {}, {}, {}
    fmt = None
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}:{number}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        prefix, _, name = key.partition(".")
        try:
            if key == "format":
                fmt = value
            elif key == "eps_pred":
                continue
            elif prefix == "config" and name in CONFIG_FIELDS:
                config[name] = value
            elif prefix == "state" and name:
                state[name] = _parse_tensor(value)
            elif prefix == "grid" and name in ("nx", "nv"):
                grid[name] = int(value)
            elif prefix == "meta" and name:
                meta[name] = value
            else:
                raise ConfigurationError(f"{path}:{number}: unknown key '{key}'")
        except ConfigurationError:
            raise
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{number}: cannot parse '{key}': {exc}") from exc
    if fmt != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")

    typed = {}
    for key, value in config.items():
        if value in ("true", "false"):
            typed[key] = value == "true"
        elif key in ("scales", "layers", "stencil_order", "spatial_pieces", "spatial_degree", "eps_interval"):
            typed[key] = int(value)
        else:
            typed[key] = value
    cfg = AnsatzConfig.from_dict(typed)
    model = AnsatzModel(cfg)
    for name in ("known_sigma_s", "known_sigma_a", "known_source"):
        if name in state:
            setattr(model, name, state[name])
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ConfigurationError(f"{path} does not match its configuration: {exc}") from exc
    if grid:
        model.grid = make_grid(grid["nx"], grid["nv"])
    model.metadata = meta
    return model


def with_interval(cfg, interval):
    """A copy of ``cfg`` in interval mode i."""

    return replace(cfg, eps_mode=EpsMode.INTERVAL, eps_interval=interval)
