"""Reference solver for the micro-macro linear transport system.

    ∂t ρ = -∂x⟨v g⟩ - σA ρ + G
    ∂t g = -(1/ε)(I - ⟨⟩)(v ∂x g) - (1/ε²) v ∂x ρ - (σS/ε²) g - σA g

ρ lives on cell centers and g on faces. The g-advection is first-order
upwind, v∂xρ is the center-to-face difference and the macro flux ∂x⟨vg⟩ is
the face-to-center difference, so the discrete ρ-update telescopes and mass
is conserved exactly.
"""

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from . import operators
from .exceptions import ConfigurationError, CorruptDatasetError, DatasetFormatError, InstabilityError
from .grid import DTYPE, TimeGrid, make_grid
from .operators import Stencil

logger = logging.getLogger(__name__)

# ARS(2,2,2) double Butcher tableau.
ARS_GAMMA = 1.0 - math.sqrt(2.0) / 2.0
ARS_DELTA = 1.0 - 1.0 / (2.0 * ARS_GAMMA)
ARS_EXPLICIT = (
    (0.0, 0.0, 0.0),
    (ARS_GAMMA, 0.0, 0.0),
    (ARS_DELTA, 1.0 - ARS_DELTA, 0.0),
)
ARS_IMPLICIT = (
    (0.0, 0.0, 0.0),
    (0.0, ARS_GAMMA, 0.0),
    (0.0, 1.0 - ARS_GAMMA, ARS_GAMMA),
)
ARS_EXPLICIT_WEIGHTS = (ARS_DELTA, 1.0 - ARS_DELTA, 0.0)
ARS_IMPLICIT_WEIGHTS = (0.0, 1.0 - ARS_GAMMA, ARS_GAMMA)

MEAN_FREE_TOLERANCE = 1e-12
ARS_TRANSPORT_CFL = 0.5
GROWTH_LIMIT = 1e6


class KineticState(NamedTuple):
    """Paired micro and macro fields at one time."""

    g: torch.Tensor
    rho: torch.Tensor


@dataclass(eq=False)
class PhysicsSpec:
    """Generating parameters of a trajectory.

    sigma_s, sigma_a and source are FieldRho tensors on cell centers; rho0 and
    g0 are the initial data.
    """

    epsilon: float
    sigma_s: torch.Tensor
    sigma_a: torch.Tensor
    source: torch.Tensor
    rho0: torch.Tensor
    g0: torch.Tensor

    def validate(self, grid):
        """Checks the physics against a grid.

        Raises:
            ConfigurationError: If ε is outside (0, 1], σS is not strictly
                positive, σA is negative, g0 is not mean-free or a shape is
                off.
        """

        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigurationError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        for name in ("sigma_s", "sigma_a", "source", "rho0"):
            if tuple(getattr(self, name).shape) != (grid.nx,):
                raise ConfigurationError(f"{name} must have shape ({grid.nx},)")
        if tuple(self.g0.shape) != grid.shape:
            raise ConfigurationError(f"g0 must have shape {grid.shape}")
        if float(self.sigma_s.min()) <= 0.0:
            raise ConfigurationError("sigma_s must be strictly positive")
        if float(self.sigma_a.min()) < 0.0:
            raise ConfigurationError("sigma_a must be non-negative")
        drift = float(operators.average(self.g0, grid).abs().max())
        if drift > MEAN_FREE_TOLERANCE:
            raise ConfigurationError(f"g0 is not mean-free: max |<g0>| = {drift:.3e}")
        return self

    @property
    def initial_state(self):
        return KineticState(self.g0, self.rho0)


def default_initial_state(grid, sigma_s):
    """Well-prepared initial data.

    ρ0 = 1 + 0.5 sin(2πx) and g0 = -(v/σS) ∂xρ0 (the leading-order
    Chapman-Enskog profile) with its velocity mean removed.

    Returns:
        KineticState: The initial state.
    """

    x = grid.centers()
    rho0 = 1.0 + 0.5 * torch.sin(2.0 * math.pi * x)
    g0 = -operators.advect(operators.lift(rho0, grid), grid, Stencil.CENTER_TO_FACE) / sigma_s
    g0 = g0 - operators.project(g0, grid)
    return KineticState(g0.contiguous(), rho0)


def make_physics(grid, epsilon, sigma_s, sigma_a=None, source=None, initial_state=None):
    """Assembles and validates a PhysicsSpec from plain arrays.

    Missing σA and G default to zero; missing initial data defaults to
    ``default_initial_state``.
    """

    def as_field(values, default):
        if values is None:
            return torch.full((grid.nx,), default, dtype=DTYPE)
        return torch.as_tensor(values, dtype=DTYPE).expand(grid.nx).clone()

    sigma_s = as_field(sigma_s, 1.0)
    if initial_state is None:
        initial_state = default_initial_state(grid, sigma_s)
    spec = PhysicsSpec(
        epsilon=float(epsilon),
        sigma_s=sigma_s,
        sigma_a=as_field(sigma_a, 0.0),
        source=as_field(source, 0.0),
        rho0=initial_state.rho,
        g0=initial_state.g,
    )
    return spec.validate(grid)


def _explicit_g(g, rho, spec, grid):
    """Non-stiff right-hand side of the g-equation."""

    flux = operators.advect(g, grid, Stencil.UPWIND, order=1)
    transport = (flux - operators.project(flux, grid)) / spec.epsilon
    coupling = operators.advect(operators.lift(rho, grid), grid, Stencil.CENTER_TO_FACE)
    return -transport - coupling / spec.epsilon**2 - spec.sigma_a * g


def _macro_flux(g, grid):
    """-∂x⟨v g⟩ evaluated on cell centers."""

    return -operators.average(operators.advect(g, grid, Stencil.FACE_TO_CENTER), grid)


def _check_finite(state, dt, spec):
    if not (torch.isfinite(state.g).all() and torch.isfinite(state.rho).all()):
        raise InstabilityError(
            f"Solver produced non-finite values with dt={dt!r}, epsilon={spec.epsilon!r}",
            dt=dt,
            epsilon=spec.epsilon,
        )
    return state


def step_imex1(state, spec, grid, dt):
    """One step of the first-order staggered IMEX scheme.

    The relaxation (σS/ε²)g is implicit; ρ is then advanced with the new g.
    """

    g, rho = state
    stiff = dt * spec.sigma_s / spec.epsilon**2
    g_new = (g + dt * _explicit_g(g, rho, spec, grid)) / (1.0 + stiff)
    rho_new = rho + dt * (_macro_flux(g_new, grid) - spec.sigma_a * rho + spec.source)
    return _check_finite(KineticState(g_new, rho_new), dt, spec)


def step_ars222(state, spec, grid, dt):
    """One IMEX-ARS(2,2,2) step of the coupled system.

    Explicit: the transport, v∂xρ coupling, absorption and source terms.
    Implicit: the relaxation -(σS/ε²)g and the macro flux -∂x⟨vg⟩. The
    implicit g-solve is a pointwise division and the macro flux only needs g
    at the same stage, so no linear system is formed.

    Args:
        state (KineticState): Fields at t_n.
        spec (PhysicsSpec): Physical parameters.
        grid (PhaseGrid): The grid.
        dt (float): Step size.

    Returns:
        KineticState: Fields at t_n + dt.

    Raises:
        InstabilityError: If the step produced NaN or Inf.
    """

    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")

    g0, rho0 = state
    relax = spec.sigma_s / spec.epsilon**2
    explicit_g, stiff_g, explicit_rho, implicit_rho = [], [], [], []
    g_stage, rho_stage = g0, rho0
    for i in range(len(ARS_IMPLICIT)):
        if i > 0:
            g_acc = g0
            rho_acc = rho0
            for j in range(i):
                g_acc = g_acc + dt * (ARS_EXPLICIT[i][j] * explicit_g[j] + ARS_IMPLICIT[i][j] * stiff_g[j])
                rho_acc = rho_acc + dt * (ARS_EXPLICIT[i][j] * explicit_rho[j] + ARS_IMPLICIT[i][j] * implicit_rho[j])
            g_stage = g_acc / (1.0 + dt * ARS_IMPLICIT[i][i] * relax)
            rho_stage = rho_acc + dt * ARS_IMPLICIT[i][i] * _macro_flux(g_stage, grid)
        explicit_g.append(_explicit_g(g_stage, rho_stage, spec, grid))
        stiff_g.append(-relax * g_stage)
        explicit_rho.append(-spec.sigma_a * rho_stage + spec.source)
        implicit_rho.append(_macro_flux(g_stage, grid))

    # ARS(2,2,2) is stiffly accurate: the last stage is the new solution.
    return _check_finite(KineticState(g_stage, rho_stage), dt, spec)


def heat_reference(rho0, grid, kappa, t):
    """Exact-in-time solution of ∂tρ = κ·lap_x(ρ) on the periodic grid.

    Each discrete Fourier mode k decays with rate 4κ sin²(πk/nx)/dx².
    """

    k = torch.arange(grid.nx // 2 + 1, dtype=DTYPE)
    symbol = -4.0 * torch.sin(math.pi * k / grid.nx) ** 2 / grid.dx**2
    modes = torch.fft.rfft(rho0)
    return torch.fft.irfft(modes * torch.exp(kappa * symbol * t), n=grid.nx)


@dataclass(eq=False)
class Dataset:
    """Subsampled trajectory plus the parameters that generated it."""

    grid: object
    times: np.ndarray
    g_seq: torch.Tensor
    rho_seq: torch.Tensor
    spec: PhysicsSpec
    stride_x: int = 1
    stride_t: int = 1

    @property
    def nt(self):
        return len(self.times)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def window(self, starts, width):
        """Stacks ``width`` consecutive slices for every start index.

        Returns:
            tuple[torch.Tensor, torch.Tensor]: g of shape (B, width, nv, nx)
            and ρ of shape (B, width, nx).
        """

        index = torch.as_tensor(starts, dtype=torch.long).reshape(-1, 1) + torch.arange(width)
        return self.g_seq[index], self.rho_seq[index]


def _coarse_centers(u, stride):
    """Samples cell-centered values at the coarse centers (k + 1/2)·S·dx.

    Odd strides hit a fine center; even strides land on a fine face and
    average its two neighbouring centers.
    """

    if stride == 1:
        return u
    half = stride // 2
    if stride % 2:
        return u[..., half::stride]
    return 0.5 * (u[..., half - 1 :: stride] + u[..., half::stride])


def _coarse_faces(g, stride):
    """Samples face values at the coarse faces (k + 1)·S·dx, which are fine faces."""

    return g[..., stride - 1 :: stride]


def ars_substeps(spec, grid, dt):
    """Number of ARS(2,2,2) substeps that keep one step of size dt stable.

    Each substep is at most ARS_TRANSPORT_CFL·ε·dx/max|v|, the step the
    explicit transport and v∂xρ coupling tolerate.
    """

    limit = ARS_TRANSPORT_CFL * spec.epsilon * grid.dx / float(np.abs(grid.v_nodes).max())
    return max(1, math.ceil(dt / limit - 1e-9))


def _check_growth(state, bound, dt, spec):
    size = max(float(state.g.abs().max()), float(state.rho.abs().max()))
    if size > bound:
        raise InstabilityError(
            f"Solution grew to {size:.3e}, beyond the bound {bound:.3e}, with dt={dt!r}, epsilon={spec.epsilon!r}",
            dt=dt,
            epsilon=spec.epsilon,
        )


def generate_dataset(spec, grid, dt, nt, stride_x=1, stride_t=1):
    """Runs the ARS(2,2,2) solver and subsamples the trajectory.

    Each step of size dt is split into ``ars_substeps`` ARS(2,2,2) steps.
    Coarse ρ and coefficients sit at the coarse cell centers and coarse g at
    the coarse faces, so the dataset lives on make_grid(nx/stride_x, nv).

    Args:
        spec (PhysicsSpec): Physics and initial data on ``grid``.
        grid (PhaseGrid): Fine generation grid.
        dt (float): Fine time step.
        nt (int): Number of fine time slices, including the initial one.
        stride_x (int): Keep every stride_x-th cell; must divide nx.
        stride_t (int): Keep every stride_t-th slice; must divide nt.

    Returns:
        Dataset: nt/stride_t slices on an (nx/stride_x)-cell grid. The velocity
        grid is never subsampled.

    Raises:
        ConfigurationError: If a stride does not divide its size.
        InstabilityError: If the solver blows up or the solution grows past
            GROWTH_LIMIT times its initial size.
    """

    if stride_x < 1 or grid.nx % stride_x:
        raise ConfigurationError(f"stride_x={stride_x} does not divide nx={grid.nx}")
    if stride_t < 1 or nt % stride_t:
        raise ConfigurationError(f"stride_t={stride_t} does not divide nt={nt}")
    if nt // stride_t < 2:
        raise ConfigurationError("The subsampled dataset needs at least two slices")
    spec.validate(grid)

    coarse = make_grid(grid.nx // stride_x, grid.nv)
    nt_sub = nt // stride_t
    g_seq = torch.empty((nt_sub, coarse.nv, coarse.nx), dtype=DTYPE)
    rho_seq = torch.empty((nt_sub, coarse.nx), dtype=DTYPE)

    state = spec.initial_state
    substeps = ars_substeps(spec, grid, dt)
    bound = GROWTH_LIMIT * max(
        1.0,
        float(state.g.abs().max()),
        float(state.rho.abs().max()),
        dt * (nt - 1) * float(spec.source.abs().max()),
    )
    drift = 0.0
    with torch.no_grad():
        for n in range(nt):
            if n:
                for _ in range(substeps):
                    state = step_ars222(state, spec, grid, dt / substeps)
                _check_growth(state, bound, dt, spec)
            drift = max(drift, float(operators.average(state.g, grid).abs().max()))
            if n % stride_t == 0:
                g_seq[n // stride_t] = _coarse_faces(state.g, stride_x)
                rho_seq[n // stride_t] = _coarse_centers(state.rho, stride_x)
    logger.debug(
        "Generated %d steps (%d substeps each) at epsilon=%g; max |<g>| drift %.3e",
        nt - 1,
        substeps,
        spec.epsilon,
        drift,
    )

    coarse_spec = replace(
        spec,
        sigma_s=_coarse_centers(spec.sigma_s, stride_x).clone(),
        sigma_a=_coarse_centers(spec.sigma_a, stride_x).clone(),
        source=_coarse_centers(spec.source, stride_x).clone(),
        rho0=rho_seq[0].clone(),
        g0=g_seq[0].clone(),
    )
    return Dataset(
        grid=coarse,
        times=TimeGrid(dt=dt * stride_t, nt=nt_sub).times,
        g_seq=g_seq,
        rho_seq=rho_seq,
        spec=coarse_spec,
        stride_x=stride_x,
        stride_t=stride_t,
    )


DATASET_MAGIC = b"KDS1"
DATASET_VERSION = 1
_HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("nv", "<u8"),
        ("nx", "<u8"),
        ("nt", "<u8"),
        ("epsilon", "<f8"),
        ("dt", "<f8"),
        ("dx", "<f8"),
    ]
)


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_dataset(ds, path, metadata=None):
    """Writes a dataset in the KDS1 little-endian format.

    A JSON sidecar next to the file records the strides and any extra
    ``metadata`` (for example the resolved experiment config).
    """

    header = np.zeros((), dtype=_HEADER)
    header["magic"] = DATASET_MAGIC
    header["version"] = DATASET_VERSION
    header["nv"] = ds.grid.nv
    header["nx"] = ds.grid.nx
    header["nt"] = ds.nt
    header["epsilon"] = ds.spec.epsilon
    header["dt"] = ds.dt
    header["dx"] = ds.grid.dx

    path = Path(path)
    with open(path, "wb") as handle:
        handle.write(header.tobytes())
        for array in (ds.spec.sigma_s, ds.spec.sigma_a, ds.spec.source, ds.g_seq, ds.rho_seq):
            handle.write(np.ascontiguousarray(array.detach().numpy(), dtype="<f8").tobytes())

    sidecar = {"stride_x": ds.stride_x, "stride_t": ds.stride_t, **(metadata or {})}
    _sidecar(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    logger.info("Wrote dataset %s (%d slices, nx=%d)", path, ds.nt, ds.grid.nx)


def load_dataset(path):
    """Reads a KDS1 dataset written by ``save_dataset``.

    Raises:
        DatasetFormatError: On a wrong magic or version.
        CorruptDatasetError: If the file is truncated or oversized.
        OSError: If the file cannot be read.
    """

    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.itemsize:
        raise CorruptDatasetError(f"{path} is too short to hold a dataset header")
    header = np.frombuffer(raw[: _HEADER.itemsize], dtype=_HEADER)[0]
    if bytes(header["magic"]) != DATASET_MAGIC:
        raise DatasetFormatError(f"{path} is not a KDS1 dataset")
    if int(header["version"]) != DATASET_VERSION:
        raise DatasetFormatError(f"{path} has unsupported version {int(header['version'])}")

    nv, nx, nt = int(header["nv"]), int(header["nx"]), int(header["nt"])
    counts = (nx, nx, nx, nt * nv * nx, nt * nx)
    expected = _HEADER.itemsize + 8 * sum(counts)
    if len(raw) != expected:
        raise CorruptDatasetError(f"{path} holds {len(raw)} bytes, expected {expected}")

    try:
        grid = make_grid(nx, nv)
        times = TimeGrid(dt=float(header["dt"]), nt=nt).times
    except ConfigurationError as exc:
        raise CorruptDatasetError(f"{path} has invalid sizes: {exc}") from exc
    if abs(grid.dx - float(header["dx"])) > 1e-15:
        raise CorruptDatasetError(f"{path} records dx={float(header['dx'])} for nx={nx}")

    arrays = []
    offset = _HEADER.itemsize
    for count in counts:
        chunk = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays.append(torch.from_numpy(chunk.astype(np.float64)))
        offset += 8 * count
    sigma_s, sigma_a, source, g_flat, rho_flat = arrays
    g_seq = g_flat.reshape(nt, nv, nx)
    rho_seq = rho_flat.reshape(nt, nx)

    strides = {"stride_x": 1, "stride_t": 1}
    if _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text())
        strides = {key: int(meta.get(key, 1)) for key in strides}

    spec = PhysicsSpec(
        epsilon=float(header["epsilon"]),
        sigma_s=sigma_s,
        sigma_a=sigma_a,
        source=source,
        rho0=rho_seq[0].clone(),
        g0=g_seq[0].clone(),
    )
    return Dataset(
        grid=grid,
        times=times,
        g_seq=g_seq,
        rho_seq=rho_seq,
        spec=spec,
        **strides,
    )
