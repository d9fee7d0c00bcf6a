"""Phase-space discretization shared by the solver and the learner.

x lives on the periodic unit interval. ρ sits on cell centers x_j and g on
the staggered faces x_{j+1/2}; velocities are Gauss-Legendre nodes on
[-1, 1].
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import torch

from .exceptions import ConfigurationError

# Every field in the toolkit is carried in double precision.
DTYPE = torch.float64

MAX_QUADRATURE_NODES = 64
NEWTON_TOLERANCE = 1e-14


def _legendre(n, x):
    """Evaluates P_n and P_{n-1} at x with the three-term recurrence."""

    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p, p_prev


def gauss_legendre(n):
    """Computes the n-point Gauss-Legendre rule on [-1, 1].

    Roots of P_n are found by Newton iteration from Chebyshev initial guesses.
    The result is symmetrized so that nodes[i] == -nodes[n-1-i] exactly.

    Args:
        n (int): Number of nodes, 1 <= n <= 64.

    Returns:
        tuple[np.ndarray, np.ndarray]: Nodes in ascending order and their
        positive weights.

    Raises:
        ConfigurationError: If n is outside the supported range.
    """

    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUADRATURE_NODES:
        raise ConfigurationError(
            f"Quadrature size must be an integer in [1, {MAX_QUADRATURE_NODES}], got {n!r}"
        )
    if n == 1:
        return np.zeros(1), np.full(1, 2.0)

    i = np.arange(1, n + 1)
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(100):
        p, p_prev = _legendre(n, x)
        dp = n * (x * p - p_prev) / (x * x - 1.0)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) < NEWTON_TOLERANCE:
            break

    p, p_prev = _legendre(n, x)
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    weights = 2.0 / ((1.0 - x * x) * dp * dp)

    order = np.argsort(x)
    x, weights = x[order], weights[order]
    nodes = 0.5 * (x - x[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return nodes, weights


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Uniform periodic mesh in x times a Gauss-Legendre velocity rule."""

    nx: int
    nv: int
    dx: float
    x_centers: np.ndarray
    x_faces: np.ndarray
    v_nodes: np.ndarray
    v_weights: np.ndarray

    @property
    def shape(self):
        """Shape of a FieldG on this grid."""
        return (self.nv, self.nx)

    @cached_property
    def velocities(self):
        """Velocity nodes as an (nv, 1) tensor, ready to broadcast over x."""
        return torch.tensor(self.v_nodes, dtype=DTYPE).reshape(self.nv, 1)

    @cached_property
    def weights(self):
        """Quadrature weights as an (nv, 1) tensor."""
        return torch.tensor(self.v_weights, dtype=DTYPE).reshape(self.nv, 1)

    def centers(self):
        return torch.tensor(self.x_centers, dtype=DTYPE)

    def faces(self):
        return torch.tensor(self.x_faces, dtype=DTYPE)

    def __repr__(self):
        return f"PhaseGrid(nx={self.nx}, nv={self.nv}, dx={self.dx!r})"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time stepping metadata."""

    dt: float
    nt: int
    t0: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError(f"Time step must be positive, got {self.dt}")
        if self.nt < 2:
            raise ConfigurationError(f"A time grid needs at least two slices, got {self.nt}")

    @property
    def horizon(self):
        return self.dt * (self.nt - 1)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.nt)


def make_grid(nx, nv):
    """Builds the phase grid for nx cells on [0, 1) and nv velocity nodes.

    Args:
        nx (int): Number of cells, at least 4.
        nv (int): Number of velocity nodes, at least 2.

    Returns:
        PhaseGrid: The grid.

    Raises:
        ConfigurationError: If either size is too small.
    """

    if not isinstance(nx, (int, np.integer)) or nx < 4:
        raise ConfigurationError(f"nx must be an integer >= 4, got {nx!r}")
    if not isinstance(nv, (int, np.integer)) or nv < 2:
        raise ConfigurationError(f"nv must be an integer >= 2, got {nv!r}")

    nodes, weights = gauss_legendre(int(nv))
    dx = 1.0 / nx
    centers = (np.arange(nx) + 0.5) * dx
    return PhaseGrid(
        nx=int(nx),
        nv=int(nv),
        dx=dx,
        x_centers=centers,
        x_faces=centers + 0.5 * dx,
        v_nodes=nodes,
        v_weights=weights,
    )
