"""Small fixtures shared by the test modules."""

import torch

from KineticPDE_Discovery import operators
from KineticPDE_Discovery.grid import DTYPE, make_grid
from KineticPDE_Discovery.solver import generate_dataset, make_physics


def small_dataset(epsilon=0.25, nx=16, nv=8, nt=6, sigma_s=None, sigma_a=None, source=None, stride_x=1):
    """A short ARS(2,2,2) trajectory on a coarse grid."""

    grid = make_grid(nx, nv)
    spec = make_physics(grid, epsilon, sigma_s=sigma_s, sigma_a=sigma_a, source=source)
    return generate_dataset(spec, grid, 0.5 * grid.dx**2, nt, stride_x=stride_x)


def random_fields(grid, seed=0, batch=()):
    """Random mean-free g and random ρ of unit amplitude."""

    generator = torch.Generator().manual_seed(seed)
    g = torch.rand(batch + grid.shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0
    g = g - operators.project(g, grid)
    rho = torch.rand(batch + (grid.nx,), generator=generator, dtype=DTYPE) * 2.0 - 1.0
    return g, rho


def randomize(model, seed=0, scale=1.0):
    """Draws every network parameter uniformly from [-scale, scale]."""

    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for network in model.networks.values():
            for p in network.parameters():
                p.copy_((torch.rand(p.shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * scale)
    return model
