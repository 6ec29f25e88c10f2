import os
import sys

# Add the project root to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from core.errors import GridError
from core.grid import Box, Grid, GridFunction, make_uniform_grid

SHIPPED_SEED = 0
SHIPPED_SIZE = 20
SHIPPED_BOX = (-4.0, 4.0)
# Cells per unit length of the shipped grids; coarser in higher dimension.
SHIPPED_RESOLUTION = {1: 2**6, 2: 2**3, 3: 2**2}
MAX_STEP_GENERATION = 4


@dataclass
class ProbeFunction:
    label: str
    function: GridFunction


def _cube_mask(points: NDArray, lower: NDArray, side: float) -> NDArray:
    return np.all((points >= lower) & (points < lower + side), axis=1)


def dyadic_indicator(grid: Grid, generation: int, coords: tuple[int, ...]) -> GridFunction:
    """1 on the dyadic cube prod [k 2^-g, (k + 1) 2^-g) of the unit tree."""
    side = 2.0**-generation
    lower = np.asarray(coords, dtype=float) * side
    return grid.sample(lambda x: _cube_mask(x, lower, side).astype(float))


def random_dyadic_step(grid: Grid, rng: np.random.Generator, generation: int | None = None) -> GridFunction:
    """
    Piecewise constant on the generation-g dyadic cubes of [0, 1)^n with independent values
    in [-1, 1]. A random generation in 1..MAX_STEP_GENERATION is drawn when none is given.
    """
    n = grid.dimension
    if generation is None:
        generation = int(rng.integers(1, MAX_STEP_GENERATION + 1))
    cells = 2**generation
    table = rng.uniform(-1.0, 1.0, size=(cells,) * n)

    def step(x: NDArray) -> NDArray:
        inside = _cube_mask(x, np.zeros(n), 1.0)
        index = np.clip(np.floor(x * cells).astype(int), 0, cells - 1)
        return np.where(inside, table[tuple(index.T)], 0.0)

    return grid.sample(step)


def smooth_bump(grid: Grid, center: NDArray | float = 0.5, radius: float = 0.5) -> GridFunction:
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.dimension,))

    def bump(x: NDArray) -> NDArray:
        r2 = np.sum((x - center) ** 2, axis=1) / radius**2
        return np.where(r2 < 1, (1 - r2) ** 2, 0.0)

    return grid.sample(bump)


def dipole(grid: Grid, generation: int = 0, coords: tuple[int, ...] | None = None) -> GridFunction:
    """+1 on the lower half of a dyadic cube along axis 0 and -1 on the upper half."""
    side = 2.0**-generation
    lower = np.asarray(coords or (0,) * grid.dimension, dtype=float) * side
    mid = lower[0] + side / 2

    def halves(x: NDArray) -> NDArray:
        inside = _cube_mask(x, lower, side)
        return np.where(inside, np.where(x[:, 0] < mid, 1.0, -1.0), 0.0)

    return grid.sample(halves)


def shipped_grid(n: int = 1) -> Grid:
    if n not in SHIPPED_RESOLUTION:
        raise GridError(f"no shipped grid for dimension {n}")
    return make_uniform_grid(Box.cube(*SHIPPED_BOX, n), 1.0 / SHIPPED_RESOLUTION[n])


def random_step_testset(n: int = 1, seed: int = SHIPPED_SEED, size: int = SHIPPED_SIZE) -> list[ProbeFunction]:
    grid = shipped_grid(n)
    rng = np.random.default_rng(seed)
    return [ProbeFunction(f"step{i}", random_dyadic_step(grid, rng)) for i in range(size)]


def shipped_testset(n: int = 1, seed: int = SHIPPED_SEED, size: int = SHIPPED_SIZE) -> list[ProbeFunction]:
    """
    Functions supported in [0, 1)^n on the box [-4, 4]^n: dyadic indicators, smooth bumps and
    mean-zero dipoles, topped up to `size` with seeded random dyadic steps.
    """
    grid = shipped_grid(n)
    zeros = (0,) * n
    fixed = [
        ProbeFunction("indicator_g0", dyadic_indicator(grid, 0, zeros)),
        ProbeFunction("indicator_g1", dyadic_indicator(grid, 1, zeros)),
        ProbeFunction("indicator_g2", dyadic_indicator(grid, 2, (1,) + (0,) * (n - 1))),
        ProbeFunction("bump", smooth_bump(grid)),
        ProbeFunction("bump_narrow", smooth_bump(grid, 0.25, 0.125)),
        ProbeFunction("dipole_g0", dipole(grid, 0)),
        ProbeFunction("dipole_g1", dipole(grid, 1, (1,) + (0,) * (n - 1))),
    ]
    if size <= len(fixed):
        return fixed[:size]
    rng = np.random.default_rng(seed)
    steps = [ProbeFunction(f"step{i}", random_dyadic_step(grid, rng)) for i in range(size - len(fixed))]
    return fixed + steps


TESTSETS = {
    "shipped": shipped_testset,
    "steps": random_step_testset,
}
