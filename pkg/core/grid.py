import math
from dataclasses import dataclass
from functools import reduce
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.special import gamma

from core.errors import GridError

COMMENSURATE_TOLERANCE = 1e-9
MAX_DIMENSION = 3


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lower) != len(upper) or not lower:
            raise GridError(
                f"Box corners must have the same nonzero length, got {len(lower)} and {len(upper)}"
            )
        for axis, (lo, hi) in enumerate(zip(lower, upper)):
            if not lo < hi:
                raise GridError(f"axis {axis}: lower corner {lo} is not below upper corner {hi}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, lower: float, upper: float, n: int) -> "Box":
        return cls((lower,) * n, (upper,) * n)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def edges(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in zip(self.lower, self.upper))


@dataclass(frozen=True)
class Grid:
    """
    Uniform midpoint grid over a box. Sample k on axis i sits at lower[i] + (k + 1/2) h,
    so every sample is the midpoint of a cell of volume h^n.
    """

    box: Box
    spacing: float
    shape: tuple[int, ...]

    @property
    def dimension(self) -> int:
        return self.box.dimension

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    def axis(self, i: int) -> NDArray:
        return self.box.lower[i] + (np.arange(self.shape[i]) + 0.5) * self.spacing

    def points(self) -> NDArray:
        """All sample locations, shape (size, n), in row-major order."""
        axes = [self.axis(i) for i in range(self.dimension)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dimension)

    def index_of(self, point: Sequence[float]) -> tuple[int, ...]:
        """Index of the cell containing `point` (half-open cells)."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        index = np.floor((point - np.asarray(self.box.lower)) / self.spacing).astype(int)
        if np.any(index < 0) or np.any(index >= np.asarray(self.shape)):
            raise GridError(f"point {tuple(point)} lies outside the grid box")
        return tuple(int(i) for i in index)

    def sample(self, func: Callable[[NDArray], NDArray]) -> "GridFunction":
        return GridFunction(self, np.asarray(func(self.points()), dtype=float))

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.shape))

    def refine(self, factor: int) -> "Grid":
        if factor < 1:
            raise GridError(f"refinement factor must be >= 1, got {factor}")
        return Grid(self.box, self.spacing / factor, tuple(m * factor for m in self.shape))

    def lattice_offset(self, other: "Grid") -> tuple[int, ...]:
        """
        Offset of `other`'s lower corner from this grid's, in cells of this grid.
        Raises if the two lattices are not aligned.
        """
        if other.dimension != self.dimension:
            raise GridError(f"dimension mismatch: {self.dimension} vs {other.dimension}")
        offset = []
        for axis, (mine, theirs) in enumerate(zip(self.box.lower, other.box.lower)):
            ratio = (theirs - mine) / self.spacing
            rounded = round(ratio)
            if abs(ratio - rounded) > COMMENSURATE_TOLERANCE * max(1.0, abs(ratio)):
                raise GridError(f"axis {axis}: grids are not aligned (offset {ratio} cells)")
            offset.append(int(rounded))
        return tuple(offset)


def make_uniform_grid(box: Box, h: float) -> Grid:
    if not h > 0:
        raise GridError(f"spacing must be positive, got {h}")
    if not 1 <= box.dimension <= MAX_DIMENSION:
        raise GridError(f"dimension {box.dimension} outside the supported range 1..{MAX_DIMENSION}")
    shape = []
    for axis, edge in enumerate(box.edges):
        ratio = edge / h
        points = round(ratio)
        if points < 1 or abs(ratio - points) > COMMENSURATE_TOLERANCE * ratio:
            raise GridError(
                f"axis {axis}: edge length {edge} is not an integer multiple of spacing {h}"
            )
        shape.append(int(points))
    return Grid(box, float(h), tuple(shape))


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: NDArray
    # Set by apply_operator: True where the principal-value exclusion removed a source cell.
    flags: NDArray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.size != self.grid.size:
            raise GridError(f"expected {self.grid.size} values for grid of shape {self.grid.shape}, got {values.size}")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise GridError("grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.flags is not None:
            flags = np.array(self.flags, dtype=bool).reshape(self.grid.shape)
            flags.setflags(write=False)
            object.__setattr__(self, "flags", flags)

    def with_values(self, values: NDArray) -> "GridFunction":
        return GridFunction(self.grid, values)

    def _check_grid(self, other: "GridFunction"):
        if other.grid != self.grid:
            raise GridError("grid functions live on different grids")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check_grid(other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check_grid(other)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - float(other))

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            self._check_grid(other)
            return self.with_values(self.values * other.values)
        return self.with_values(self.values * float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def __abs__(self):
        return self.with_values(np.abs(self.values))

    def power(self, q: float) -> "GridFunction":
        return self.with_values(np.abs(self.values) ** q)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def at(self, point: Sequence[float]) -> float:
        return float(self.values[self.grid.index_of(point)])

    def refine(self, factor: int) -> "GridFunction":
        """Same piecewise-constant function sampled on the grid refined by `factor`."""
        values = self.values
        for axis in range(self.grid.dimension):
            values = values.repeat(factor, axis=axis)
        return GridFunction(self.grid.refine(factor), values)


def integrate(u: GridFunction) -> float:
    return u.grid.cell_volume * float(np.sum(u.values))


def lq_norm(u: GridFunction, q: float) -> float:
    q = float(q)
    if not q >= 1:
        raise GridError(f"L^q norms need q >= 1, got {q}")
    if math.isinf(q):
        return u.max_abs()
    return integrate(u.power(q)) ** (1.0 / q)


def unit_ball_volume(n: int) -> float:
    if n < 1:
        raise GridError(f"dimension must be positive, got {n}")
    return math.pi ** (n / 2) / gamma(n / 2 + 1)


@dataclass(frozen=True)
class Cube:
    center: tuple[float, ...]
    side: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.side > 0:
            raise GridError(f"cube side must be positive, got {self.side}")
        object.__setattr__(self, "side", float(self.side))

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def diameter(self) -> float:
        return math.sqrt(self.dimension) * self.side

    @property
    def volume(self) -> float:
        return self.side**self.dimension

    @property
    def lower(self) -> NDArray:
        return np.asarray(self.center) - self.side / 2

    @property
    def upper(self) -> NDArray:
        return np.asarray(self.center) + self.side / 2

    def dilate(self, factor: float) -> "Cube":
        return Cube(self.center, self.side * factor)

    def contains(self, points: NDArray) -> NDArray:
        """Half-open membership test for an (m, n) array of points."""
        points = np.atleast_2d(points)
        return np.all((points >= self.lower) & (points < self.upper), axis=1)

    def contains_cube(self, other: "Cube", atol: float = 0.0) -> bool:
        return bool(
            np.all(other.lower >= self.lower - atol) and np.all(other.upper <= self.upper + atol)
        )

    def coverage(self, grid: Grid) -> NDArray:
        """Fraction of every grid cell covered by this cube, shape grid.shape."""
        h = grid.spacing
        fractions = []
        for i in range(grid.dimension):
            cell_lower = grid.box.lower[i] + np.arange(grid.shape[i]) * h
            overlap = np.minimum(cell_lower + h, self.upper[i]) - np.maximum(cell_lower, self.lower[i])
            fractions.append(np.clip(overlap, 0.0, h) / h)
        return reduce(np.multiply.outer, fractions)


@dataclass(frozen=True, order=True)
class DyadicCube:
    generation: int
    coords: tuple[int, ...]
    base: float = 1.0
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        coords = tuple(int(c) for c in self.coords)
        object.__setattr__(self, "coords", coords)
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * len(coords))
        else:
            object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if not self.base > 0:
            raise GridError(f"dyadic base scale must be positive, got {self.base}")

    @property
    def dimension(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> float:
        return self.base * 2.0 ** (-self.generation)

    @property
    def lower(self) -> NDArray:
        return np.asarray(self.origin) + np.asarray(self.coords) * self.side

    @property
    def center(self) -> NDArray:
        return np.asarray(self.origin) + (np.asarray(self.coords) + 0.5) * self.side

    @property
    def volume(self) -> float:
        return self.side**self.dimension

    @property
    def diameter(self) -> float:
        return math.sqrt(self.dimension) * self.side

    def to_cube(self) -> Cube:
        return Cube(tuple(self.center), self.side)

    def children(self) -> list["DyadicCube"]:
        return [
            DyadicCube(
                self.generation + 1,
                tuple(2 * c + b for c, b in zip(self.coords, bits)),
                self.base,
                self.origin,
            )
            for bits in np.ndindex(*(2,) * self.dimension)
        ]

    def parent(self) -> "DyadicCube":
        return DyadicCube(
            self.generation - 1, tuple(c // 2 for c in self.coords), self.base, self.origin
        )

    def is_ancestor_of(self, other: "DyadicCube") -> bool:
        shift = other.generation - self.generation
        if shift < 0:
            return False
        return all(c >> shift == s for c, s in zip(other.coords, self.coords))

    def cell_slices(self, depth: int) -> tuple[slice, ...]:
        """Index slices of this cube inside a (2^depth,)*n cell array rooted at `origin`."""
        if self.generation > depth:
            raise GridError(f"generation {self.generation} is finer than the cell generation {depth}")
        width = 2 ** (depth - self.generation)
        return tuple(slice(c * width, (c + 1) * width) for c in self.coords)


def dyadic_depth(grid: Grid) -> int:
    """Smallest G with 2^G cells covering every axis of the grid."""
    return max(int(math.ceil(math.log2(m))) if m > 1 else 0 for m in grid.shape)


def dyadic_root(grid: Grid) -> DyadicCube:
    depth = dyadic_depth(grid)
    return DyadicCube(0, (0,) * grid.dimension, grid.spacing * 2**depth, grid.box.lower)


def is_dyadic_root_grid(grid: Grid) -> bool:
    depth = dyadic_depth(grid)
    return all(m == 2**depth for m in grid.shape)


def pad_to_root(values: NDArray, depth: int) -> NDArray:
    padding = [(0, 2**depth - m) for m in values.shape]
    return np.pad(values, padding)


def block_sums(values: NDArray, generation: int, depth: int) -> NDArray:
    """Sums of a (2^depth,)*n array over every dyadic cube of `generation`."""
    n = values.ndim
    width = 2 ** (depth - generation)
    shape = []
    for _ in range(n):
        shape += [2**generation, width]
    return values.reshape(shape).sum(axis=tuple(range(1, 2 * n, 2)))


def upsample(mask: NDArray) -> NDArray:
    """Lift a per-cube array to the next (finer) generation."""
    for axis in range(mask.ndim):
        mask = mask.repeat(2, axis=axis)
    return mask


def write_grid_function_csv(u: GridFunction, path: str | Path):
    columns = [f"axis{i}" for i in range(u.grid.dimension)]
    frame = pd.DataFrame(u.grid.points(), columns=columns)
    frame["value"] = u.values.ravel()
    frame.to_csv(path, index=False, float_format="%.17g")


def read_grid_function_csv(path: str | Path) -> GridFunction:
    try:
        frame = pd.read_csv(path)
    except (OSError, UnicodeDecodeError, pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise GridError(f"{path}: cannot read grid CSV: {e}") from e
    columns = sorted(
        (c for c in frame.columns if isinstance(c, str) and c.startswith("axis") and c[4:].isdigit()),
        key=lambda c: int(c[4:]),
    )
    if not columns or "value" not in frame.columns:
        raise GridError(f"{path}: expected columns axis0..axis{{n-1}},value")
    try:
        frame = frame[columns + ["value"]].astype(float)
    except (TypeError, ValueError) as e:
        raise GridError(f"{path}: non-numeric entries: {e}") from e
    if frame.isna().to_numpy().any():
        raise GridError(f"{path}: missing entries")
    frame = frame.sort_values(columns, kind="mergesort")
    axes = [np.unique(frame[c].to_numpy()) for c in columns]

    spacing = None
    for axis, coords in enumerate(axes):
        if len(coords) < 2:
            continue
        steps = np.diff(coords)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise GridError(f"{path}: axis {axis} samples are not uniformly spaced")
        if spacing is None:
            spacing = float(steps[0])
        elif not math.isclose(spacing, steps[0], rel_tol=1e-9):
            raise GridError(f"{path}: axis {axis} spacing {steps[0]} differs from {spacing}")
    if spacing is None:
        raise GridError(f"{path}: cannot infer the spacing from a single sample per axis")

    box = Box(
        tuple(coords[0] - spacing / 2 for coords in axes),
        tuple(coords[-1] + spacing / 2 for coords in axes),
    )
    grid = make_uniform_grid(box, spacing)
    if len(frame) != grid.size:
        raise GridError(f"{path}: {len(frame)} rows do not fill a {grid.shape} grid")
    return GridFunction(grid, frame["value"].to_numpy())
