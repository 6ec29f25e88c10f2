import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import binary_dilation

from core.errors import DecompositionError, InconsistencyError
from core.grid import (
    Box,
    Cube,
    DyadicCube,
    Grid,
    GridFunction,
    block_sums,
    dyadic_depth,
    dyadic_root,
    integrate,
    is_dyadic_root_grid,
    lq_norm,
    make_uniform_grid,
    pad_to_root,
    upsample,
)

logger = logging.getLogger(__name__)

CZ_DILATE = 2.0  # times sqrt(n)
NTV_DILATE = 17.0  # times sqrt(n)
PROPERTY_RTOL = 1e-12
MEAN_ZERO_RTOL = 1e-12
# Candidate cubes x boundary cells compared per numpy block in the Whitney sweep.
WHITNEY_CHUNK = 1_000_000


@dataclass
class PropertyCheck:
    lhs: float
    rhs: float
    passed: bool = field(init=False)
    note: str = ""

    def __post_init__(self):
        self.passed = bool(self.lhs <= self.rhs * (1 + PROPERTY_RTOL) + 1e-300)

    def to_dict(self) -> dict:
        out = {"lhs": self.lhs, "rhs": self.rhs, "pass": self.passed}
        if self.note:
            out["note"] = self.note
        return out


# ---------------------------------------------------------------------------
# Maximal function
# ---------------------------------------------------------------------------


def _summed_area_table(values: NDArray) -> NDArray:
    """S[i_1, ..., i_n] = sum of values[:i_1, ..., :i_n]."""
    table = values
    for axis in range(values.ndim):
        table = np.cumsum(table, axis=axis)
    return np.pad(table, [(1, 0)] * values.ndim)


def _window_sums(table: NDArray, shape: tuple[int, ...], k: int) -> NDArray:
    """Sums over the centered cubes of 2k + 1 cells, clipped to the box."""
    bounds = [(np.clip(np.arange(m) - k, 0, m), np.clip(np.arange(m) + k + 1, 0, m)) for m in shape]
    sums = np.zeros(shape)
    for corner in itertools.product((0, 1), repeat=len(shape)):
        index = np.ix_(*(bounds[axis][c] for axis, c in enumerate(corner)))
        sign = -1.0 if (len(shape) - sum(corner)) % 2 else 1.0
        sums += sign * table[index]
    return sums


def maximal_function(u: GridFunction) -> GridFunction:
    """
    Centered Hardy-Littlewood maximal function over cubes of side (2k + 1) h, k = 0, 1, ...,
    with u extended by zero outside the box and averages taken over the full cube volume.
    """
    values = u.values
    if np.any(values < 0):
        raise DecompositionError("maximal_function expects a nonnegative input (pass f^q)")
    n = values.ndim
    table = _summed_area_table(values)
    total = float(table[(-1,) * n])
    result = values.copy()
    floor = 0.0
    for k in range(1, max(u.grid.shape)):
        width = (2 * k + 1) ** n
        # no larger cube can beat the current minimum
        if total / width <= floor:
            break
        np.maximum(result, _window_sums(table, u.grid.shape, k) / width, out=result)
        floor = float(result.min())
    return u.with_values(result)


def maximal_weak_type_checks(u: GridFunction, levels: list[float]) -> list[PropertyCheck]:
    """lambda |{M u > lambda}| <= 3^n ||u||_1 at each level."""
    mu = maximal_function(u)
    rhs = 3**u.grid.dimension * integrate(abs(u))
    return [
        PropertyCheck(lam * u.grid.cell_volume * float(np.count_nonzero(mu.values > lam)), rhs, note=f"lambda={lam}")
        for lam in levels
    ]


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------


@dataclass
class BadPiece:
    cube: DyadicCube
    slices: tuple[slice, ...]
    values: NDArray
    mass: float
    whitney: bool = True
    compensator: Cube | None = None
    # Fraction of each cell of the cube covered by the compensator.
    coverage: NDArray | None = None
    # Distance to the complement of Omega, for Whitney cubes.
    distance: float | None = None

    @property
    def volume(self) -> float:
        return self.cube.volume

    def to_grid_function(self, grid: Grid) -> GridFunction:
        values = np.zeros(grid.shape)
        values[self.slices] = self.values
        return GridFunction(grid, values)

    def to_dict(self) -> dict:
        out = {
            "center": [float(c) for c in self.cube.center],
            "side": self.cube.side,
            "generation": self.cube.generation,
            "mass": self.mass,
        }
        if not self.whitney:
            out["whitney"] = False
        if self.compensator is not None:
            out["compensator_side"] = self.compensator.side
        return out


def _local_lq_power(piece: BadPiece, h: float, n: int, q: float) -> float:
    return float(np.sum(np.abs(piece.values) ** q)) * h**n


@dataclass
class CzDecomposition:
    f: GridFunction
    g: GridFunction
    pieces: list[BadPiece]
    height: float
    q: float
    dilate: float

    @property
    def b(self) -> GridFunction:
        return self.f - self.g

    def dilates(self) -> list[Cube]:
        """Q_j* : concentric cubes of side 2 sqrt(n) l(Q_j)."""
        return [p.cube.to_cube().dilate(self.dilate) for p in self.pieces]


@dataclass
class NtvDecomposition:
    f: GridFunction
    g: GridFunction
    pieces: list[BadPiece]
    omega: NDArray
    residue: float
    height: float
    q: float
    dilate: float

    @property
    def b(self) -> GridFunction:
        return self.f - self.g

    @property
    def whitney_cubes(self) -> list[DyadicCube]:
        return [p.cube for p in self.pieces if p.whitney]

    @property
    def compensator_scale(self) -> float:
        """(17 sqrt(n))^(n/q) * height, the amplitude put on E_j."""
        n = self.f.grid.dimension
        return self.dilate ** (n / self.q) * self.height

    def compensators(self) -> GridFunction:
        """Indicator of E = union of the E_j as cell coverage fractions."""
        values = np.zeros(self.f.grid.shape)
        for piece in self.pieces:
            if piece.coverage is not None:
                values[piece.slices] += piece.coverage
        return self.f.with_values(values)

    def dilates(self) -> list[Cube]:
        return [p.cube.to_cube().dilate(self.dilate) for p in self.pieces]


def _check_exponent(q: float, height: float):
    if not q >= 1:
        raise DecompositionError(f"exponent q must be >= 1, got {q}")
    if not height > 0:
        raise DecompositionError(f"height must be positive, got {height}")


# ---------------------------------------------------------------------------
# L^q Calderon-Zygmund decomposition
# ---------------------------------------------------------------------------


def extend_to_root(f: GridFunction, q: float, height: float, max_doublings: int = 30) -> GridFunction:
    """
    Zero-extend f onto a box of 2^G cells per axis anchored at its lower corner, doubling
    the root until the root average of |f|^q is at most height^q.
    """
    _check_exponent(q, height)
    grid = f.grid
    depth = dyadic_depth(grid)
    total = float(np.sum(np.abs(f.values) ** q))
    while total / 2 ** (depth * grid.dimension) > height**q:
        depth += 1
        if depth > dyadic_depth(grid) + max_doublings:
            raise DecompositionError("no dyadic root with average below height^q within the doubling budget")
    side = grid.spacing * 2**depth
    box = Box(grid.box.lower, tuple(lo + side for lo in grid.box.lower))
    root_grid = make_uniform_grid(box, grid.spacing)
    return GridFunction(root_grid, pad_to_root(f.values, depth))


def _stopping_cubes(power: NDArray, threshold: float, depth: int, root: DyadicCube) -> list[DyadicCube]:
    """Maximal dyadic cubes whose average of `power` exceeds threshold."""
    n = power.ndim
    covered = np.zeros((1,) * n, dtype=bool)
    cubes = []
    for generation in range(depth + 1):
        width = 2 ** (depth - generation)
        averages = block_sums(power, generation, depth) / width**n
        chosen = (averages > threshold) & ~covered
        for coords in np.argwhere(chosen):
            cubes.append(DyadicCube(generation, tuple(coords), root.base, root.origin))
        covered |= chosen
        if generation < depth:
            covered = upsample(covered)
    return cubes


def cz_decompose(f: GridFunction, q: float, height: float) -> CzDecomposition:
    _check_exponent(q, height)
    grid = f.grid
    if not is_dyadic_root_grid(grid):
        raise DecompositionError(
            f"grid of shape {grid.shape} is not a dyadic root (2^G cells per axis); use extend_to_root"
        )
    if not lq_norm(f, q) > 0:
        raise DecompositionError("cz_decompose needs a function with nonzero L^q norm")
    depth = dyadic_depth(grid)
    power = np.abs(f.values) ** q
    root_average = float(power.mean())
    if root_average > height**q:
        raise DecompositionError(
            f"root average of |f|^q is {root_average:.6g} > height^q = {height**q:.6g}; choose a larger root"
        )

    root = dyadic_root(grid)
    g = f.values.copy()
    pieces = []
    for cube in _stopping_cubes(power, height**q, depth, root):
        sl = cube.cell_slices(depth)
        local = f.values[sl]
        mean = float(local.mean())
        g[sl] = mean
        b_local = local - mean
        pieces.append(BadPiece(cube, sl, b_local, float(b_local.sum()) * grid.cell_volume))
    logger.info("CZ decomposition at height %.6g selected %d cubes", height, len(pieces))
    return CzDecomposition(f, f.with_values(g), pieces, height, q, CZ_DILATE * math.sqrt(grid.dimension))


def cz_properties(dec: CzDecomposition) -> dict[str, PropertyCheck]:
    f, g, q, height = dec.f, dec.g, dec.q, dec.height
    n, h = f.grid.dimension, f.grid.spacing
    f_q = lq_norm(f, q)
    total_volume = sum(p.volume for p in dec.pieces)
    per_cube = max((_local_lq_power(p, h, n, q) / p.volume for p in dec.pieces), default=0.0)
    mean_defect = max(
        (abs(p.mass) / (p.volume * max(f.max_abs(), 1e-300)) for p in dec.pieces),
        default=0.0,
    )
    b = dec.b
    return {
        "(1)": PropertyCheck(g.max_abs(), 2 ** (n / q) * height, note="sup norm of g"),
        "(1)-lq": PropertyCheck(lq_norm(g, q), f_q, note="L^q norm of g"),
        "(2)": PropertyCheck(total_volume, height**-q * f_q**q, note="total measure of the cubes"),
        "(2)-disjoint": PropertyCheck(float(_overlap_count(dec.pieces)), 0.0, note="overlapping cube pairs"),
        "(3)": PropertyCheck(per_cube, 2 ** (n + q) * height**q, note="max ||b_j||_q^q / |Q_j|"),
        "(4)": PropertyCheck(mean_defect, MEAN_ZERO_RTOL, note="max |int b_j| / (|Q_j| ||f||_inf)"),
        "(5)": PropertyCheck(lq_norm(b, q), 2 ** ((n + q) / q) * f_q, note="L^q norm of b"),
        "(5)-l1": PropertyCheck(lq_norm(b, 1), 2 * height ** (1 - q) * f_q**q, note="L^1 norm of b"),
    }


def _overlap_count(pieces: list[BadPiece]) -> int:
    cubes = [p.cube for p in pieces]
    overlaps = 0
    for i, a in enumerate(cubes):
        for c in cubes[i + 1 :]:
            if a.is_ancestor_of(c) or c.is_ancestor_of(a):
                overlaps += 1
    return overlaps


# ---------------------------------------------------------------------------
# Whitney decomposition
# ---------------------------------------------------------------------------


def _face_gap(lower: NDArray, width: int, size: int) -> NDArray:
    """Gap, in cells, from each cube to the region outside the root."""
    return np.minimum(lower, size - (lower + width)).min(axis=1)


def _squared_gaps(lower: NDArray, width: int, cells: NDArray) -> NDArray:
    """
    Exact squared distances, in cell units, between cubes [lower, lower + width) and
    unit cells; shape (cubes,). Cells is an (m, n) integer array.
    """
    best = np.full(len(lower), np.iinfo(np.int64).max, dtype=np.int64)
    if len(cells) == 0:
        return best
    chunk = max(1, WHITNEY_CHUNK // len(cells))
    for start in range(0, len(lower), chunk):
        lo = lower[start : start + chunk, None, :]
        gaps = np.maximum(0, np.maximum(lo - cells[None, :, :] - 1, cells[None, :, :] - (lo + width)))
        best[start : start + chunk] = np.sum(gaps * gaps, axis=2).min(axis=1)
    return best


@dataclass
class WhitneyResult:
    cubes: list[DyadicCube]
    # Squared distance to the complement of each cube, in cell units.
    squared_distances: list[int]
    residue: NDArray
    boundary_cells: int
    depth: int
    spacing: float

    def distance(self, i: int) -> float:
        return math.sqrt(self.squared_distances[i]) * self.spacing

    def ratios(self) -> list[float]:
        """dist(Q, complement) / diam(Q) for every cube."""
        return [self.distance(i) / cube.diameter for i, cube in enumerate(self.cubes)]


def _omega_mask(omega: GridFunction) -> NDArray:
    values = omega.values
    if not np.all((values == 0) | (values == 1)):
        raise DecompositionError("Omega must be a 0/1 indicator of grid cells")
    return values == 1


def whitney_structure(omega: GridFunction) -> WhitneyResult:
    """Whitney cubes of Omega together with their exact distances and the uncovered residue."""
    mask = _omega_mask(omega)
    grid = omega.grid
    n = grid.dimension
    depth = dyadic_depth(grid)
    root = dyadic_root(grid)
    size = 2**depth
    padded = pad_to_root(mask.astype(np.int64), depth).astype(bool)

    # Complement cells touching Omega; the nearest complement point always lies in one of them
    # or beyond the root faces.
    ring = binary_dilation(padded, structure=np.ones((3,) * n, dtype=bool)) & ~padded
    boundary = np.argwhere(ring).astype(np.int64)

    covered = np.zeros((1,) * n, dtype=bool)
    cubes, distances = [], []
    boundary_cells = 0
    for generation in range(depth + 1):
        width = 2 ** (depth - generation)
        full = block_sums(padded.astype(np.int64), generation, depth) == width**n
        candidates = np.argwhere(full & ~covered)
        chosen = np.zeros_like(covered)
        if len(candidates):
            lower = candidates.astype(np.int64) * width
            sq = _squared_gaps(lower, width, boundary)
            face = _face_gap(lower, width, size).astype(np.int64)
            sq = np.minimum(sq, face * face)
            ok = sq >= 4 * n * width * width
            for coords, dist2 in zip(candidates[ok], sq[ok]):
                cubes.append(DyadicCube(generation, tuple(coords), root.base, root.origin))
                distances.append(int(dist2))
            chosen[tuple(candidates[ok].T)] = True
            if generation == depth:
                boundary_cells = int(np.count_nonzero(~ok))
        covered |= chosen
        if generation < depth:
            covered = upsample(covered)

    residue = padded & ~covered
    residue = residue[tuple(slice(0, m) for m in grid.shape)]
    return WhitneyResult(cubes, distances, residue, boundary_cells, depth, grid.spacing)


def whitney_decompose(omega: GridFunction) -> list[DyadicCube]:
    """
    Maximal dyadic cubes Q inside Omega with 2 diam(Q) <= dist(Q, complement). Their
    parents fail that test, so dist(Q, complement) <= 6 diam(Q) as well.
    """
    return whitney_structure(omega).cubes


def uncovered_residue(omega: GridFunction) -> tuple[float, float]:
    """(measure of Omega cells left uncovered, boundary-cell bound on that measure)."""
    result = whitney_structure(omega)
    cell = omega.grid.cell_volume
    return float(np.count_nonzero(result.residue)) * cell, result.boundary_cells * cell


# ---------------------------------------------------------------------------
# NTV decomposition
# ---------------------------------------------------------------------------


def _touches_boundary(mask: NDArray) -> bool:
    for axis in range(mask.ndim):
        if np.any(np.take(mask, 0, axis=axis)) or np.any(np.take(mask, -1, axis=axis)):
            return True
    return False


def compensator_side(mass: float, n: int, q: float, height: float) -> float:
    """Side of E_j with |E_j| = (17 sqrt(n))^(-n/q) height^-1 mass."""
    volume = mass * (NTV_DILATE * math.sqrt(n)) ** (-n / q) / height
    return volume ** (1.0 / n)


def ntv_decompose(f: GridFunction, q: float, height: float) -> NtvDecomposition:
    _check_exponent(q, height)
    if np.any(f.values < 0):
        raise DecompositionError("ntv_decompose expects a nonnegative function")
    grid = f.grid
    n, h = grid.dimension, grid.spacing
    mf = maximal_function(f.power(q))
    mask = mf.values > height**q
    if _touches_boundary(mask):
        raise DecompositionError("the superlevel set of M(f^q) reaches the grid boundary; enlarge the box")

    structure = whitney_structure(f.with_values(mask.astype(float)))
    depth = structure.depth
    root = dyadic_root(grid)
    cubes = [(cube, structure.distance(i)) for i, cube in enumerate(structure.cubes)]
    cubes += [
        (DyadicCube(depth, tuple(coords), root.base, root.origin), None)
        for coords in np.argwhere(structure.residue)
    ]
    if structure.residue.any():
        logger.warning("%d cells of Omega are below the finest Whitney scale", int(structure.residue.sum()))

    pieces = []
    for cube, distance in cubes:
        sl = cube.cell_slices(depth)
        local = f.values[sl]
        mass = float(local.sum()) * grid.cell_volume
        piece = BadPiece(cube, sl, local.copy(), mass, distance is not None, distance=distance)
        if mass > 0:
            side = compensator_side(mass, n, q, height)
            if side > cube.side * (1 + 1e-12):
                raise InconsistencyError(
                    f"compensating cube of side {side:.6g} does not fit in Q of side {cube.side:.6g}"
                )
            side = min(side, cube.side)
            piece.compensator = Cube(tuple(cube.center), side)
            local_grid = make_uniform_grid(Box(tuple(cube.lower), tuple(cube.lower + cube.side)), h)
            piece.coverage = piece.compensator.coverage(local_grid)
        pieces.append(piece)

    g = np.where(mask, 0.0, f.values)
    logger.info("NTV decomposition at height %.6g: %d Whitney cubes, %d residue cells", height, len(structure.cubes), len(cubes) - len(structure.cubes))
    return NtvDecomposition(
        f,
        f.with_values(g),
        pieces,
        mask,
        float(structure.residue.sum()) * grid.cell_volume,
        height,
        q,
        NTV_DILATE * math.sqrt(n),
    )


def ntv_properties(dec: NtvDecomposition) -> dict[str, PropertyCheck]:
    f, g, q, height = dec.f, dec.g, dec.q, dec.height
    grid = f.grid
    n, h = grid.dimension, grid.spacing
    f_q = lq_norm(f, q)
    dilate = dec.dilate
    total_volume = sum(p.volume for p in dec.pieces)
    per_cube = max((_local_lq_power(p, h, n, q) / p.volume for p in dec.pieces), default=0.0)
    b = dec.b

    outside = 0
    defect = 0.0
    excess = 0.0
    for p in dec.pieces:
        if p.compensator is None:
            continue
        if not p.cube.to_cube().contains_cube(p.compensator, atol=1e-12 * p.cube.side):
            outside += 1
        excess = max(excess, p.compensator.volume / p.volume)
        compensated = float(np.sum(p.coverage)) * grid.cell_volume * dec.compensator_scale
        defect = max(defect, abs(p.mass - compensated) / (p.volume * max(f.max_abs(), 1e-300)))

    return {
        "(1)": PropertyCheck(g.max_abs(), height, note="sup norm of g"),
        "(1)-lq": PropertyCheck(lq_norm(g, q), f_q, note="L^q norm of g"),
        "(2)": PropertyCheck(total_volume, 3**n * height**-q * f_q**q, note="total measure of the cubes"),
        "(2)-disjoint": PropertyCheck(float(_overlap_count(dec.pieces)), 0.0, note="overlapping cube pairs"),
        "(3)": PropertyCheck(per_cube, dilate**n * height**q, note="max ||b_j||_q^q / |Q_j|"),
        "(4)": PropertyCheck(lq_norm(b, q), f_q, note="L^q norm of b"),
        "(4)-l1": PropertyCheck(lq_norm(b, 1), dilate ** (n / q) * 3**n * height ** (1 - q) * f_q**q, note="L^1 norm of b"),
        "E-inside": PropertyCheck(float(outside), 0.0, note="compensating cubes sticking out of Q_j"),
        "E-size": PropertyCheck(excess, 1.0, note="max |E_j| / |Q_j|"),
        "E-mean-zero": PropertyCheck(defect, MEAN_ZERO_RTOL, note="max |int (b_j - c 1_E_j)| / (|Q_j| ||f||_inf)"),
        "g-on-omega": PropertyCheck(float(np.max(np.abs(g.values[dec.omega]), initial=0.0)), 0.0, note="sup of g on Omega"),
    }


def decomposition_report(dec: CzDecomposition | NtvDecomposition) -> dict:
    properties = cz_properties(dec) if isinstance(dec, CzDecomposition) else ntv_properties(dec)
    report = {
        "height": dec.height,
        "q": dec.q,
        "cubes": [p.to_dict() for p in dec.pieces],
        "properties": {key: check.to_dict() for key, check in properties.items()},
    }
    if isinstance(dec, NtvDecomposition):
        report["omega_measure"] = float(dec.omega.sum()) * dec.f.grid.cell_volume
        report["residue_measure"] = dec.residue
    return report
