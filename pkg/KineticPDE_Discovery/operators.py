"""Discrete base operators of the dictionary.

FieldG tensors have shape (..., nv, nx) and FieldRho tensors (..., nx); any
leading axes (typically time) are carried through unchanged. All stencils are
periodic in x.
"""

import enum

import torch

from .exceptions import ConfigurationError, DimensionError


class OperatorTag(enum.Enum):
    """Base operators available to the symbolic network."""

    IDENTITY = "I"
    ADVECTION = "A"
    PROJECTION = "P"
    GRAD_X = "D"
    LAP_X = "L"
    SQUARE = "S"
    GAUSSIAN = "E"

    @property
    def linear(self):
        return self not in (OperatorTag.SQUARE, OperatorTag.GAUSSIAN)

    @property
    def symbol(self):
        return _SYMBOLS[self]

    @classmethod
    def parse(cls, text):
        """Looks a tag up by its one-letter code or its name (case-insensitive)."""

        text = text.strip()
        for tag in cls:
            if text.upper() in (tag.value, tag.name):
                return tag
        raise ConfigurationError(f"Unknown operator tag: {text!r}")


_SYMBOLS = {
    OperatorTag.IDENTITY: "I",
    OperatorTag.ADVECTION: "v∂x",
    OperatorTag.PROJECTION: "P",
    OperatorTag.GRAD_X: "∂x",
    OperatorTag.LAP_X: "∂xx",
    OperatorTag.SQUARE: "sq",
    OperatorTag.GAUSSIAN: "gauss",
}


class Stencil(enum.Enum):
    """Where an advection reads its input and writes its output.

    UPWIND keeps the location and splits by the sign of v. The staggered
    variants move between cell centers and faces with a two-point difference.
    """

    UPWIND = "upwind"
    CENTER_TO_FACE = "center_to_face"
    FACE_TO_CENTER = "face_to_center"
    CENTRAL = "central"


def _check_g(u, grid):
    if u.dim() < 2 or tuple(u.shape[-2:]) != grid.shape:
        raise DimensionError(
            f"Expected a field of shape (..., {grid.nv}, {grid.nx}), got {tuple(u.shape)}"
        )


def _check_x(u, grid):
    if u.dim() < 1 or u.shape[-1] != grid.nx:
        raise DimensionError(f"Expected a last axis of length {grid.nx}, got {tuple(u.shape)}")


def _shift(u, k):
    """Returns u_{j-k} at index j."""
    return torch.roll(u, shifts=k, dims=-1)


def apply_identity(u):
    return u.clone()


def advect_upwind(u, grid, order=1):
    """Applies v·∂x with the upwind stencil chosen by the sign of each v.

    Positive velocities use the backward difference and negative velocities
    the forward difference. ``order=2`` swaps in the three-point
    upwind-biased stencils (3u_j - 4u_{j∓1} + u_{j∓2}) / (2dx).

    Args:
        u (torch.Tensor): FieldG of shape (..., nv, nx).
        grid (PhaseGrid): The grid the field lives on.
        order (int): 1 or 2.

    Returns:
        torch.Tensor: FieldG of the same shape.

    Raises:
        DimensionError: If u does not match the grid.
        ConfigurationError: If the order is not 1 or 2.
    """

    _check_g(u, grid)
    if order == 1:
        backward = (u - _shift(u, 1)) / grid.dx
        forward = (_shift(u, -1) - u) / grid.dx
    elif order == 2:
        backward = (3.0 * u - 4.0 * _shift(u, 1) + _shift(u, 2)) / (2.0 * grid.dx)
        forward = (-3.0 * u + 4.0 * _shift(u, -1) - _shift(u, -2)) / (2.0 * grid.dx)
    else:
        raise ConfigurationError(f"Upwind order must be 1 or 2, got {order!r}")

    v = grid.velocities
    return v * torch.where(v > 0, backward, forward)


def advect_staggered(u, grid, stencil):
    """Applies v·∂x with a location-changing or central stencil.

    CENTER_TO_FACE evaluates (u_{j+1} - u_j)/dx at x_{j+1/2}, FACE_TO_CENTER
    evaluates (u_{j+1/2} - u_{j-1/2})/dx at x_j and CENTRAL uses grad_x.
    """

    _check_g(u, grid)
    if stencil is Stencil.CENTER_TO_FACE:
        derivative = (_shift(u, -1) - u) / grid.dx
    elif stencil is Stencil.FACE_TO_CENTER:
        derivative = (u - _shift(u, 1)) / grid.dx
    elif stencil is Stencil.CENTRAL:
        derivative = grad_x(u, grid)
    else:
        raise ConfigurationError(f"{stencil} is not a staggered stencil")
    return grid.velocities * derivative


def advect(u, grid, stencil=Stencil.UPWIND, order=1):
    if stencil is Stencil.UPWIND:
        return advect_upwind(u, grid, order)
    return advect_staggered(u, grid, stencil)


def average(u, grid):
    """Collapses a FieldG to the FieldRho (1/2)·Σ_i w_i u(v_i, ·)."""

    _check_g(u, grid)
    return 0.5 * (grid.weights * u).sum(dim=-2)


def project(u, grid):
    """⟨u⟩ broadcast back to every velocity row."""

    return average(u, grid).unsqueeze(-2).expand_as(u)


def lift(rho, grid):
    """Views a FieldRho as a FieldG that is constant in v."""

    _check_x(rho, grid)
    return rho.unsqueeze(-2).expand(*rho.shape[:-1], grid.nv, grid.nx)


def grad_x(u, grid):
    """Second-order central first derivative along x."""

    _check_x(u, grid)
    return (_shift(u, -1) - _shift(u, 1)) / (2.0 * grid.dx)


def lap_x(u, grid):
    """Three-point second derivative along x."""

    _check_x(u, grid)
    return (_shift(u, -1) - 2.0 * u + _shift(u, 1)) / (grid.dx * grid.dx)


def apply_operator(tag, u, grid, stencil=Stencil.UPWIND, order=1):
    """Applies one base operator to a FieldG.

    Args:
        tag (OperatorTag): The operator.
        u (torch.Tensor): FieldG input.
        grid (PhaseGrid): Grid of the input.
        stencil (Stencil): Advection realization for this input location.
        order (int): Upwind order when ``stencil`` is UPWIND.

    Returns:
        torch.Tensor: FieldG output.
    """

    if tag is OperatorTag.IDENTITY:
        return apply_identity(u)
    if tag is OperatorTag.ADVECTION:
        return advect(u, grid, stencil, order)
    if tag is OperatorTag.PROJECTION:
        return project(u, grid)
    if tag is OperatorTag.GRAD_X:
        return grad_x(u, grid)
    if tag is OperatorTag.LAP_X:
        return lap_x(u, grid)
    if tag is OperatorTag.SQUARE:
        return u * u
    if tag is OperatorTag.GAUSSIAN:
        return torch.exp(-u * u)
    raise ConfigurationError(f"Unsupported operator {tag!r}")
