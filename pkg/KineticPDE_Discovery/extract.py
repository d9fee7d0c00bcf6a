"""Reading the learned PDE off a trained ansatz.

The ansatz is expanded into explicit coefficients per operator word, the
known physics prefactors are folded in, and the result is compared against
the generating equation with the Type-I/Type-II error metrics.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from .exceptions import ConfigurationError, UndefinedMetricError
from .fitloss import FitScheme
from .grid import DTYPE
from .operators import OperatorTag, average, lift
from .symnet import IDENTITY_WORD, EpsMode, PhysicsMode, branch_stencil, evaluate_words, network_key

logger = logging.getLogger(__name__)

DEFAULT_PRUNE_THRESHOLD = 1e-3
CONSTANT_TOLERANCE = 1e-12
EPS_SATURATION = 20.0

FIELD_SYMBOLS = {"g": "g", "rho": "ρ"}


class OperatorWord(NamedTuple):
    """A composition of base operators applied to one input field.

    ``tags`` are outermost first; Identity alone is ``(OperatorTag.IDENTITY,)``.
    """

    tags: tuple
    source: str

    @classmethod
    def from_code(cls, word, source):
        tags = tuple(OperatorTag(code) for code in word) or (OperatorTag.IDENTITY,)
        return cls(tags, source)

    @property
    def code(self):
        """The symbolic-network word (tuple of codes, empty for Identity)."""
        return tuple(tag.value for tag in self.tags if tag is not OperatorTag.IDENTITY)

    def label(self, collapsed=False):
        """Human-readable form, e.g. ``P(v∂x(g))``.

        With ``collapsed`` (ρ-equation terms) a word that still depends on v
        is wrapped in ⟨⟩.
        """

        text = FIELD_SYMBOLS[self.source]
        for tag in reversed(self.code):
            text = f"{OperatorTag(tag).symbol}({text})"
        if collapsed and OperatorTag.ADVECTION.value in self.code:
            text = f"⟨{text}⟩"
        return text


@dataclass
class CoefficientTable:
    """Coefficients of one equation, keyed by OperatorWord.

    Values are floats, or numpy arrays over cells for space-dependent
    coefficients. ``entries`` include the folded physics terms; ``raw`` holds
    the ansatz alone.
    """

    component: str
    entries: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def words(self):
        return list(self.entries)

    def __getitem__(self, word):
        return self.entries[word]

    def get(self, word, default=0.0):
        return self.entries.get(word, default)


def _to_value(coef):
    """Detaches a coefficient; per-cell arrays that are constant become floats."""

    if isinstance(coef, torch.Tensor):
        coef = coef.detach().cpu().numpy()
    values = np.asarray(coef, dtype=np.float64)
    if values.ndim == 0:
        return float(values)
    scale = max(float(np.abs(values).max()), 1.0)
    if float(values.max() - values.min()) <= CONSTANT_TOLERANCE * scale:
        return float(values.mean())
    return values.copy()


def magnitude(value):
    """|c| for scalars, the mean of |c| over cells for arrays."""

    return float(np.mean(np.abs(value)))


def _add(target, word, value):
    target[word] = _to_value(target.get(word, 0.0) + value)


def expand_coefficients(model, scheme=FitScheme.IMEX1, grid=None, component="g"):
    """Expands a trained model into the coefficient table of one equation.

    The ε_pred-weighted sum over scales is accumulated per word. The folded
    table adds the terms the residuals treat as known: -σA on the identity
    word, and for the stiff schemes also -σS/ε_pred² on the g-equation.

    Args:
        model (AnsatzModel): Trained model with physics bound.
        scheme (FitScheme): Scheme the model was trained with.
        grid (PhaseGrid): Grid of the training data; defaults to the grid
            recorded on the model.
        component (str): "g" or "rho".

    Returns:
        CoefficientTable: Folded entries and raw ansatz coefficients.

    Raises:
        ConfigurationError: If the equation is not part of the model.
    """

    if component not in model.cfg.equations:
        raise ConfigurationError(f"The model does not fit the {component} equation")
    scheme = FitScheme(scheme)
    grid = grid if grid is not None else model.grid

    with torch.no_grad():
        expansion = model.expansion(grid)
        raw = {}
        for (equation, source), expression in expansion.items():
            if equation != component:
                continue
            for word, coef in expression.items():
                raw[OperatorWord.from_code(word, source)] = _to_value(coef)

        entries = dict(raw)
        if grid is not None:
            identity = OperatorWord.from_code(IDENTITY_WORD, component)
            _add(entries, identity, -model.sigma_a(grid).detach().numpy())
            if component == "g" and scheme.stiff:
                relax = model.sigma_s(grid) / model.eps_pred() ** 2
                _add(entries, identity, -relax.detach().numpy())
    return CoefficientTable(component, entries, raw)


def exact_table(spec, component="g"):
    """Folded coefficients of the generating equation.

    ``component`` is "g", "rho", or "diffusion" for the limiting ρ-equation
    ∂tρ = (1/(3σS))∂xxρ - σAρ (+ G), which keeps a zero ⟨v∂x(g)⟩ entry.
    """

    eps = spec.epsilon
    sigma_s = _to_value(spec.sigma_s)
    sigma_a = _to_value(spec.sigma_a)
    A, P, L = OperatorTag.ADVECTION.value, OperatorTag.PROJECTION.value, OperatorTag.LAP_X.value
    word = OperatorWord.from_code

    if component == "g":
        entries = {
            word((), "g"): _to_value(-np.asarray(sigma_s) / eps**2 - np.asarray(sigma_a)),
            word((A,), "g"): -1.0 / eps,
            word((P, A), "g"): 1.0 / eps,
            word((A,), "rho"): -1.0 / eps**2,
        }
    elif component == "rho":
        entries = {word((A,), "g"): -1.0, word((), "rho"): _to_value(-np.asarray(sigma_a))}
    elif component == "diffusion":
        entries = {
            word((L,), "rho"): _to_value(1.0 / (3.0 * np.asarray(sigma_s))),
            word((), "rho"): _to_value(-np.asarray(sigma_a)),
            word((A,), "g"): 0.0,
        }
        component = "rho"
    else:
        raise ConfigurationError(f"Unknown component {component!r}")
    return CoefficientTable(component, entries, dict(entries))


def prune(table, threshold=DEFAULT_PRUNE_THRESHOLD):
    """Zeroes entries with |c| < threshold·max|c|; ties at the bound survive."""

    if threshold < 0:
        raise ConfigurationError("threshold must be non-negative")
    largest = max((magnitude(v) for v in table.entries.values()), default=0.0)
    bound = threshold * largest
    entries = {w: (v if magnitude(v) >= bound else 0.0) for w, v in table.entries.items()}
    return CoefficientTable(table.component, entries, dict(table.raw))


def error_metrics(exact, predicted):
    """Type-I and Type-II coefficient errors in percent.

    Type-I is Σ|exact-pred| / Σ|exact| over the union of both word sets.
    Type-II is the mean of |exact-pred|/|exact| over words with a nonzero
    exact coefficient. Array coefficients compare by their mean absolute
    value over cells.

    Raises:
        UndefinedMetricError: If every exact coefficient is zero.
    """

    words = list(dict.fromkeys(list(exact.entries) + list(predicted.entries)))
    total_error = total_exact = 0.0
    relative = []
    for word in words:
        e = np.asarray(exact.get(word), dtype=np.float64)
        p = np.asarray(predicted.get(word), dtype=np.float64)
        error = magnitude(e - p)
        size = magnitude(e)
        total_error += error
        total_exact += size
        if size > 0.0:
            relative.append(error / size)
    if total_exact == 0.0:
        raise UndefinedMetricError("The exact table has no nonzero coefficient")
    return 100.0 * total_error / total_exact, 100.0 * float(np.mean(relative))


def _format_number(value):
    return f"{value:.6g}"


def _format_coefficient(value):
    if isinstance(value, np.ndarray):
        return f"[{_format_number(float(value.min()))},{_format_number(float(value.max()))}]"
    return _format_number(abs(value))


def _term_order(word, value):
    rounded = float(_format_number(magnitude(value)))
    return (word.source != "g", -rounded, len(word.code), word.label())


def _sorted_terms(table):
    terms = [(w, v) for w, v in table.entries.items() if magnitude(v) > 0.0]
    return sorted(terms, key=lambda item: _term_order(*item))


def render_pde(table, component=None):
    """Renders a table as ``∂t g = c₁·Op₁ + …``.

    Terms on g come before terms on ρ, each group by decreasing |c|.
    Space-dependent coefficients appear as their ``[min,max]`` range.
    """

    component = component or table.component
    collapsed = component == "rho"
    parts = []
    for word, value in _sorted_terms(table):
        text = f"{_format_coefficient(value)}·{word.label(collapsed)}"
        negative = not isinstance(value, np.ndarray) and value < 0
        if not parts:
            parts.append(f"-{text}" if negative else text)
        else:
            parts.append(f"- {text}" if negative else f"+ {text}")
    return f"∂t {FIELD_SYMBOLS[component]} = " + (" ".join(parts) if parts else "0")


def _csv_number(value):
    if isinstance(value, np.ndarray):
        value = float(value.mean())
    return repr(float(value))


def write_report_csv(exact, predicted, path):
    """Writes ``word,exact,predicted,abs_error`` rows and the metric summary.

    Returns:
        tuple[float, float]: The Type-I and Type-II errors written.
    """

    type1, type2 = error_metrics(exact, predicted)
    collapsed = exact.component == "rho"
    words = list(dict.fromkeys(list(exact.entries) + list(predicted.entries)))
    words.sort(key=lambda w: _term_order(w, exact.get(w)))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["word", "exact", "predicted", "abs_error"])
        for word in words:
            e, p = exact.get(word), predicted.get(word)
            error = magnitude(np.asarray(e, dtype=np.float64) - np.asarray(p, dtype=np.float64))
            writer.writerow([word.label(collapsed), _csv_number(e), _csv_number(p), repr(error)])
        writer.writerow(["type1_pct", "type2_pct"])
        writer.writerow([repr(type1), repr(type2)])
    logger.info("Wrote report %s (Type-I %.4f%%, Type-II %.4f%%)", path, type1, type2)
    return type1, type2


def write_pde_text(tables, path):
    """Writes one rendered equation per table."""

    lines = [render_pde(table) for table in tables]
    Path(path).write_text("\n".join(lines) + "\n")
    logger.info("Wrote learned PDE %s", path)


def evaluate_table(table, cfg, g, rho, grid, folded=False):
    """Σ coef·word(input) for every entry of a table.

    Args:
        table (CoefficientTable): Table to evaluate.
        cfg (AnsatzConfig): Supplies the advection stencils and order.
        g (torch.Tensor): FieldG data.
        rho (torch.Tensor): FieldRho data, or None.
        grid (PhaseGrid): Grid of the data.
        folded (bool): Use the folded entries instead of the raw ansatz.

    Returns:
        torch.Tensor: FieldG for the g-equation, FieldRho for the ρ-equation.
    """

    inputs = {"g": g, "rho": None if rho is None else lift(rho, grid)}
    out = torch.zeros_like(g)
    for source in ("g", "rho"):
        items = [(w, v) for w, v in (table.entries if folded else table.raw).items() if w.source == source]
        if not items:
            continue
        stencil = branch_stencil(table.component, source, cfg)
        values = evaluate_words([w.code for w, _ in items], inputs[source], grid, stencil, cfg.stencil_order)
        for word, coef in items:
            out = out + torch.as_tensor(coef, dtype=DTYPE) * values[word.code]
    return average(out, grid) if table.component == "rho" else out


def _set_readout(model, equation, source, scale, tag, value):
    network = model.networks[network_key(equation, source, scale)]
    index = model.cfg.base_ops.index(tag)
    with torch.no_grad():
        if model.cfg.spatial_pieces:
            network.readout[index, :, 0] = value
        else:
            network.readout[index] = value


def _eps_parameter(epsilon):
    """w_eps with ½(tanh(w)+1) = ε; ε = 1 saturates to double precision."""

    if epsilon >= 1.0:
        return EPS_SATURATION
    return math.atanh(2.0 * epsilon - 1.0)


def _implant_projected_advection(model, scale, value):
    """Builds +value·P(v∂x(g)) from the first composition layer."""

    cfg = model.cfg
    if not cfg.layers:
        raise ConfigurationError("Without the mean-free mask P(v∂x(g)) needs at least one layer")
    network = model.networks[network_key("g", "g", scale)]
    n = len(cfg.base_ops)
    with torch.no_grad():
        network.weights[0][0, cfg.base_ops.index(OperatorTag.PROJECTION)] = 1.0
        network.weights[0][1, cfg.base_ops.index(OperatorTag.ADVECTION)] = 1.0
        if cfg.spatial_pieces:
            network.readout[n, :, 0] = value
        else:
            network.readout[n] = value


def implant_truth(model, spec, scheme=FitScheme.IMEX1):
    """Sets a model's parameters so that it reproduces the generating equation.

    Every parameter is zeroed, ε_pred is set to ε and each true term is
    placed on the readout of the scale matching its power of 1/ε (clamped
    to the model's largest scale). Needs Identity, Advection and Projection
    among the base operators.

    Returns:
        AnsatzModel: ``model``, modified in place.

    Raises:
        ConfigurationError: If the truth cannot be represented.
    """

    cfg = model.cfg
    needed = (OperatorTag.IDENTITY, OperatorTag.ADVECTION, OperatorTag.PROJECTION)
    if not all(tag in cfg.base_ops for tag in needed):
        raise ConfigurationError("Implanting the truth needs I, A and P among the base operators")
    if cfg.eps_mode is not EpsMode.GLOBAL:
        raise ConfigurationError("Implanting the truth needs the global ε_pred mode")
    scheme = FitScheme(scheme)

    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
        model.w_eps.fill_(_eps_parameter(spec.epsilon))
        eps = spec.epsilon

        def place(equation, source, tag, power, value):
            scale = min(power, cfg.scales)
            _set_readout(model, equation, source, scale, tag, value * eps ** (scale - power))

        if "g" in cfg.equations:
            # Under the mean-free mask the wrap adds P(v∂x(g)) itself.
            place("g", "g", OperatorTag.ADVECTION, 1, -1.0)
            if not cfg.mean_free_mask:
                _implant_projected_advection(model, min(1, cfg.scales), eps ** (min(1, cfg.scales) - 1))
            if "rho" in cfg.inputs:
                place("g", "rho", OperatorTag.ADVECTION, 2, -1.0)
            if not scheme.stiff:
                sigma_s = _to_value(spec.sigma_s)
                if isinstance(sigma_s, np.ndarray):
                    raise ConfigurationError("A space-dependent σS can only be implanted for stiff schemes")
                place("g", "g", OperatorTag.IDENTITY, 2, -sigma_s)
        if "rho" in cfg.equations:
            place("rho", "g", OperatorTag.ADVECTION, 0, -1.0)

        if cfg.physics_mode is not PhysicsMode.KNOWN:
            for name in ("sigma_s", "sigma_a"):
                value = _to_value(getattr(spec, name))
                if isinstance(value, np.ndarray):
                    raise ConfigurationError(f"Cannot implant a space-dependent {name} into trainable physics")
                param = getattr(model, f"{name}_param")
                if param.dim() == 0:
                    param.fill_(value)
                else:
                    param[..., 0] = value
    return model
