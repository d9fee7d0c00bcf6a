"""Residuals of the fitting schemes and the training loss.

Each residual compares consecutive data slices with one step of a time
integrator whose right-hand side is the learned ansatz. The known
absorption σA and source G always enter explicitly; the IMEX family also
treats the relaxation -(σS/ε_pred²)g as the stiff implicit term. Inside F2
the g-input part is staged implicitly (it is evaluated at the newest stage)
and the ρ-input part explicitly.
"""

import enum
from dataclasses import dataclass
from fractions import Fraction

import torch

from . import operators
from .exceptions import ConfigurationError, DimensionError, InstabilityError, ScaleError
from .grid import DTYPE
from .solver import ARS_EXPLICIT, ARS_IMPLICIT
from .symnet import piecewise_jumps

EPS_PRED_FLOOR = 1e-8


class FitScheme(enum.Enum):
    FORWARD_EULER = "fe"
    BACKWARD_EULER = "be"
    IMEX1 = "imex1"
    ARS222 = "ars222"
    BDF1 = "bdf1"
    BDF2 = "bdf2"
    BDF3 = "bdf3"
    BDF4 = "bdf4"

    @property
    def bdf_order(self):
        return int(self.value[3:]) if self.value.startswith("bdf") else None

    @property
    def width(self):
        """Number of consecutive slices one residual consumes."""
        return self.bdf_order + 1 if self.bdf_order else 2

    @property
    def order(self):
        """Formal order of accuracy."""
        if self is FitScheme.ARS222:
            return 2
        return self.bdf_order or 1

    @property
    def stiff(self):
        """Whether the relaxation term is handled by the scheme itself."""
        return self not in (FitScheme.FORWARD_EULER, FitScheme.BACKWARD_EULER)


def _fractions(*values):
    return tuple(float(Fraction(v)) for v in values)


# IMEX-BDF coefficients (α_0..α_q, γ_0..γ_{q-1}, β), normalized so α_q = 1.
BDF_COEFFICIENTS = {
    1: (_fractions("-1", "1"), _fractions("1"), float(Fraction(1))),
    2: (_fractions("1/3", "-4/3", "1"), _fractions("-2/3", "4/3"), float(Fraction(2, 3))),
    3: (_fractions("-2/11", "9/11", "-18/11", "1"), _fractions("6/11", "-18/11", "18/11"), float(Fraction(6, 11))),
    4: (
        _fractions("3/25", "-16/25", "36/25", "-48/25", "1"),
        _fractions("-12/25", "48/25", "-72/25", "48/25"),
        float(Fraction(12, 25)),
    ),
}


@dataclass(frozen=True)
class LossConfig:
    """Loss norm and regularization weights."""

    norm: str = "l1"
    huber_delta: float = 1.0
    gamma_sparse: float = 1e-4
    gamma_cont: float = 1e-3
    gamma_meanfree: float = 0.0

    def __post_init__(self):
        if self.norm not in ("l1", "l2", "huber"):
            raise ConfigurationError(f"Unknown norm {self.norm!r}")
        if self.huber_delta <= 0:
            raise ConfigurationError("huber_delta must be positive")
        for name in ("gamma_sparse", "gamma_cont", "gamma_meanfree"):
            value = getattr(self, name)
            if not value >= 0 or value == float("inf"):
                raise ConfigurationError(f"{name} must be finite and non-negative")


@dataclass
class Residual:
    """Per-step residual fields; either may be None when not fitted."""

    g: torch.Tensor = None
    rho: torch.Tensor = None


class _Terms:
    """Ansatz contributions at one data slice."""

    def __init__(self, model, grid, expansion, g, rho):
        parts = model.evaluate_parts(g, rho, grid, expansion)
        model.check_finite(parts, g, rho, grid)
        self.f1 = parts.get(("g", "g"))
        if ("g", "rho") in parts:
            self.f1 = self.f1 + parts[("g", "rho")]
        self.f2_g = parts.get(("rho", "g"), 0.0)
        self.f2_rho = parts.get(("rho", "rho"), 0.0)

    @property
    def f2(self):
        return self.f2_g + self.f2_rho


class _Context:
    """Shared state of one residual evaluation."""

    def __init__(self, model, grid, dt, expansion=None):
        self.model = model
        self.grid = grid
        self.dt = dt
        self.expansion = model.expansion(grid) if expansion is None else expansion
        self.fits_g = "g" in model.cfg.equations
        self.fits_rho = "rho" in model.cfg.equations
        self.sigma_a = model.sigma_a(grid)
        self.source = model.source(grid) if self.fits_rho else None
        self.eps = model.eps_pred()
        eps = float(self.eps.detach())
        if eps < EPS_PRED_FLOOR:
            raise ScaleError(f"eps_pred={eps:.3e} is below {EPS_PRED_FLOOR}")

    def terms(self, g, rho):
        return _Terms(self.model, self.grid, self.expansion, g, rho)

    def relaxation(self):
        return self.model.sigma_s(self.grid) / self.eps**2


def _split(window_g, window_rho, width, grid):
    if window_g.dim() != 4 or window_g.shape[1] != width or tuple(window_g.shape[-2:]) != grid.shape:
        raise DimensionError(f"Expected g windows of shape (B, {width}, {grid.nv}, {grid.nx}), got {tuple(window_g.shape)}")
    if window_rho is not None and tuple(window_rho.shape) != (window_g.shape[0], width, grid.nx):
        raise DimensionError(f"ρ windows of shape {tuple(window_rho.shape)} do not match g")
    rhos = [None] * width if window_rho is None else [window_rho[:, i] for i in range(width)]
    return [window_g[:, i] for i in range(width)], rhos


def residual_forward_euler(window_g, window_rho, model, grid, dt, expansion=None):
    """K = u^{n+1} - u^n - Δt (F(u^n) - σA u^n [+ G])."""

    ctx = _Context(model, grid, dt, expansion)
    (g0, g1), (r0, r1) = _split(window_g, window_rho, 2, grid)
    old = ctx.terms(g0, r0)
    out = Residual()
    if ctx.fits_g:
        out.g = g1 - g0 - dt * (old.f1 - ctx.sigma_a * g0)
    if ctx.fits_rho:
        out.rho = r1 - r0 - dt * (old.f2 - ctx.sigma_a * r0 + ctx.source)
    return out


def residual_backward_euler(window_g, window_rho, model, grid, dt, expansion=None):
    """K = u^{n+1} - u^n - Δt (F(u^{n+1}) - σA u^{n+1} [+ G])."""

    ctx = _Context(model, grid, dt, expansion)
    (g0, g1), (r0, r1) = _split(window_g, window_rho, 2, grid)
    new = ctx.terms(g1, r1)
    out = Residual()
    if ctx.fits_g:
        out.g = g1 - g0 - dt * (new.f1 - ctx.sigma_a * g1)
    if ctx.fits_rho:
        out.rho = r1 - r0 - dt * (new.f2 - ctx.sigma_a * r1 + ctx.source)
    return out


def residual_imex1(window_g, window_rho, model, grid, dt, expansion=None):
    """First-order IMEX residual.

    K_g = (1 + Δt σS/ε_pred²) g^{n+1} - (1 - Δt σA) g^n - Δt F1(g^n, ρ^n)
    K_ρ = ρ^{n+1} - (1 - Δt σA) ρ^n - Δt G - Δt F2(g^{n+1}, ρ^n)
    """

    ctx = _Context(model, grid, dt, expansion)
    (g0, g1), (r0, r1) = _split(window_g, window_rho, 2, grid)
    old = ctx.terms(g0, r0)
    out = Residual()
    if ctx.fits_g:
        out.g = (1.0 + dt * ctx.relaxation()) * g1 - (1.0 - dt * ctx.sigma_a) * g0 - dt * old.f1
    if ctx.fits_rho:
        mixed = ctx.terms(g1, r0)
        out.rho = r1 - (1.0 - dt * ctx.sigma_a) * r0 - dt * ctx.source - dt * (mixed.f2_g + old.f2_rho)
    return out


def residual_ars222(window_g, window_rho, model, grid, dt, expansion=None):
    """IMEX-ARS(2,2,2) residual.

    The stages are rebuilt from the t_n slice with the ansatz standing in for
    the true right-hand side; the scheme is stiffly accurate, so the last
    stage is the prediction of u^{n+1}.

    Raises:
        InstabilityError: If a stage becomes non-finite.
    """

    ctx = _Context(model, grid, dt, expansion)
    (g0, g1), (r0, r1) = _split(window_g, window_rho, 2, grid)
    relax = ctx.relaxation() if ctx.fits_g else None
    sigma_a = ctx.sigma_a

    explicit_g, stiff_g, explicit_rho, implicit_rho = [], [], [], []
    g_stage, r_stage = g0, r0
    for i in range(len(ARS_IMPLICIT)):
        if i > 0:
            if ctx.fits_g:
                acc = g0
                for j in range(i):
                    acc = acc + dt * (ARS_EXPLICIT[i][j] * explicit_g[j] + ARS_IMPLICIT[i][j] * stiff_g[j])
                g_stage = acc / (1.0 + dt * ARS_IMPLICIT[i][i] * relax)
            else:
                # Unfitted fields are interpolated from the data at the stage time.
                g_stage = g0 + (g1 - g0) * sum(ARS_IMPLICIT[i])
            if ctx.fits_rho:
                acc = r0
                for j in range(i):
                    acc = acc + dt * (ARS_EXPLICIT[i][j] * explicit_rho[j] + ARS_IMPLICIT[i][j] * implicit_rho[j])
                r_stage = acc + dt * ARS_IMPLICIT[i][i] * ctx.terms(g_stage, r_stage).f2_g
            elif r0 is not None:
                r_stage = r0 + (r1 - r0) * sum(ARS_IMPLICIT[i])
            for value in (g_stage, r_stage):
                if value is not None and not torch.isfinite(value).all():
                    raise InstabilityError(f"ARS stage {i} diverged", dt=dt, epsilon=float(model.eps_pred().detach()))
        if i == len(ARS_IMPLICIT) - 1:
            break
        terms = ctx.terms(g_stage, r_stage)
        if ctx.fits_g:
            explicit_g.append(terms.f1 - sigma_a * g_stage)
            stiff_g.append(-relax * g_stage)
        if ctx.fits_rho:
            explicit_rho.append(terms.f2_rho - sigma_a * r_stage + ctx.source)
            implicit_rho.append(terms.f2_g)

    out = Residual()
    if ctx.fits_g:
        out.g = g1 - g_stage
    if ctx.fits_rho:
        out.rho = r1 - r_stage
    return out


def residual_bdf(q, window_g, window_rho, model, grid, dt, expansion=None):
    """IMEX-BDF(q) residual over q+1 consecutive slices.

    K_g = Σ α_i g^{n+i} - Δt Σ_{i<q} γ_i (F1 - σA g)^{n+i} + β Δt (σS/ε_pred²) g^{n+q}
    K_ρ = Σ α_i ρ^{n+i} - Δt Σ_{i<q} γ_i (F2_ρ - σA ρ + G)^{n+i} - β Δt F2_g(g^{n+q})

    Raises:
        ConfigurationError: If q is not in 1..4.
        DimensionError: If the window does not hold q+1 slices.
    """

    if q not in BDF_COEFFICIENTS:
        raise ConfigurationError(f"BDF order must be 1..4, got {q!r}")
    alpha, gamma, beta = BDF_COEFFICIENTS[q]
    ctx = _Context(model, grid, dt, expansion)
    gs, rs = _split(window_g, window_rho, q + 1, grid)
    history = [ctx.terms(gs[i], rs[i]) for i in range(q)]

    out = Residual()
    if ctx.fits_g:
        k = sum(a * g for a, g in zip(alpha, gs))
        for c, terms, g in zip(gamma, history, gs):
            k = k - dt * c * (terms.f1 - ctx.sigma_a * g)
        out.g = k + beta * dt * ctx.relaxation() * gs[q]
    if ctx.fits_rho:
        k = sum(a * r for a, r in zip(alpha, rs))
        for c, terms, r in zip(gamma, history, rs):
            k = k - dt * c * (terms.f2_rho - ctx.sigma_a * r + ctx.source)
        latest = ctx.terms(gs[q], rs[q - 1])
        out.rho = k - beta * dt * latest.f2_g
    return out


def residual(scheme, window_g, window_rho, model, grid, dt, expansion=None):
    """Dispatches to the residual of ``scheme``."""

    scheme = FitScheme(scheme)
    if scheme.bdf_order:
        return residual_bdf(scheme.bdf_order, window_g, window_rho, model, grid, dt, expansion)
    handler = {
        FitScheme.FORWARD_EULER: residual_forward_euler,
        FitScheme.BACKWARD_EULER: residual_backward_euler,
        FitScheme.IMEX1: residual_imex1,
        FitScheme.ARS222: residual_ars222,
    }[scheme]
    return handler(window_g, window_rho, model, grid, dt, expansion)


def pointwise_penalty(values, cfg):
    if cfg.norm == "l1":
        return values.abs()
    if cfg.norm == "l2":
        return values * values
    delta = cfg.huber_delta
    magnitude = values.abs()
    return torch.where(magnitude <= delta, 0.5 * values * values, delta * (magnitude - 0.5 * delta))


def field_norm(values, cfg, measure):
    """Grid-weighted norm per leading index: mean penalty × domain measure.

    Args:
        values (torch.Tensor): (B, ...) residual fields.
        cfg (LossConfig): Selects the pointwise penalty.
        measure (float): 2 for FieldG (v in [-1, 1], x in [0, 1]), 1 for FieldRho.

    Returns:
        torch.Tensor: (B,) norms.
    """

    penalty = pointwise_penalty(values, cfg)
    return penalty.reshape(penalty.shape[0], -1).mean(dim=1) * measure


def admissible_starts(ds, scheme):
    """Start indices n for which the scheme's window fits in the dataset."""

    count = ds.nt - FitScheme(scheme).width + 1
    if count < 1:
        raise ConfigurationError(f"{ds.nt} slices are too few for {FitScheme(scheme).value}")
    return torch.arange(count)


def continuity_penalty(model):
    """Σ |jumps| of value and derivatives over every SpatialWeight."""

    total = torch.zeros((), dtype=DTYPE)
    weights = [n.spatial_coefficients() for n in model.networks.values()]
    weights += [w.coeffs for w in model.physics_weights()]
    for coeffs in weights:
        if coeffs is not None:
            total = total + piecewise_jumps(coeffs).abs().sum()
    return total


def loss_terms(ds, model, cfg, scheme, batch=None):
    """Components of the training loss.

    Returns:
        dict[str, torch.Tensor]: ``data`` (mean over steps of ‖K_g‖ + ‖K_ρ‖),
        ``sparse``, ``continuity`` and ``meanfree``, already weighted by
        their γ.
    """

    scheme = FitScheme(scheme)
    starts = admissible_starts(ds, scheme) if batch is None else torch.as_tensor(batch)
    if starts.numel() == 0:
        raise ConfigurationError("The batch must not be empty")
    grid = ds.grid
    window_g, window_rho = ds.window(starts, scheme.width)
    if model.cfg.components == "scalar":
        window_rho = None
    expansion = model.expansion(grid)
    res = residual(scheme, window_g, window_rho, model, grid, ds.dt, expansion)

    data = torch.zeros(starts.numel(), dtype=window_g.dtype)
    if res.g is not None:
        data = data + field_norm(res.g, cfg, 2.0)
    if res.rho is not None:
        data = data + field_norm(res.rho, cfg, 1.0)

    terms = {"data": data.mean()}
    sparse = sum(p.abs().sum() for p in model.sparse_parameters())
    terms["sparse"] = cfg.gamma_sparse * sparse
    terms["continuity"] = cfg.gamma_cont * continuity_penalty(model)
    meanfree = torch.zeros((), dtype=window_g.dtype)
    if cfg.gamma_meanfree and "g" in model.cfg.equations:
        f1 = _Terms(model, grid, expansion, window_g[:, 0], None if window_rho is None else window_rho[:, 0]).f1
        meanfree = field_norm(ds.dt * operators.average(f1, grid), cfg, 1.0).mean()
    terms["meanfree"] = cfg.gamma_meanfree * meanfree
    return terms


def loss_total(ds, model, cfg, scheme, batch=None):
    """Scalar training loss: data misfit plus every regularization term."""

    return sum(loss_terms(ds, model, cfg, scheme, batch).values())
