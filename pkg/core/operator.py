import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from core.errors import OperatorError
from core.grid import Grid, GridFunction, lq_norm
from core.kernels import Kernel
from core.parallel import ordered_map

logger = logging.getLogger(__name__)

# Upper bound on (targets) x (sources) pairs evaluated per block.
APPLY_CHUNK = 2_000_000
ALPHA_DECADES = (-3, 2)
ALPHAS_PER_DECADE = 50


@dataclass(frozen=True)
class OperatorSpec:
    kernel: Kernel
    s: float
    bound: float
    # Principal-value exclusion radius in grid cells.
    exclusion: float = 1.0

    def __post_init__(self):
        if not float(self.s) >= 1:
            raise OperatorError(f"strong exponent s must be >= 1, got {self.s}")
        if not self.bound > 0:
            raise OperatorError(f"strong bound B must be positive, got {self.bound}")
        if not self.exclusion > 0:
            raise OperatorError(f"exclusion factor must be positive, got {self.exclusion}")


def _apply_block(task: tuple[Kernel, NDArray, NDArray, NDArray, float]) -> tuple[NDArray, NDArray]:
    kernel, targets, sources, weights, cutoff = task
    diff = (targets[:, None, :] - sources[None, :, :]).reshape(-1, kernel.dimension)
    excluded = np.linalg.norm(diff, axis=1) < cutoff
    # Any nonzero placeholder keeps the kernel away from 0; excluded terms are zeroed below.
    diff[excluded] = 1.0
    values = kernel(diff)
    values[excluded] = 0.0
    values = values.reshape(len(targets), len(sources))
    return values @ weights, excluded.reshape(len(targets), len(sources)).any(axis=1)


def _aligned_source(f: GridFunction, targets: Grid) -> GridFunction:
    """Refine f to the target spacing; reject coarser or misaligned targets."""
    ratio = f.grid.spacing / targets.spacing
    factor = round(ratio)
    if factor < 1 or abs(ratio - factor) > 1e-9 * ratio:
        raise OperatorError(
            f"target spacing {targets.spacing} must equal the source spacing {f.grid.spacing} "
            "or refine it by an integer factor"
        )
    source = f.refine(factor) if factor > 1 else f
    targets.lattice_offset(source.grid)
    return source


def apply_operator(
    spec: OperatorSpec,
    f: GridFunction,
    targets: Grid | None = None,
    workers: int | None = 1,
    progress: bool = False,
) -> GridFunction:
    """
    Tf(x) = sum over source cells y of K(x - y) f(y) h^n, skipping the cells with
    |x - y| < exclusion * h. The lattice is symmetric about every target, so the excluded
    set is too and the odd part of the kernel cancels in the principal value.
    """
    targets = targets or f.grid
    if targets.dimension != spec.kernel.dimension or f.grid.dimension != spec.kernel.dimension:
        raise OperatorError(
            f"kernel dimension {spec.kernel.dimension} does not match grids of dimension {f.grid.dimension}/{targets.dimension}"
        )
    source = _aligned_source(f, targets)
    support = source.values != 0
    if not support.any():
        return GridFunction(targets, np.zeros(targets.shape), np.zeros(targets.shape, dtype=bool))

    sources = source.grid.points()[support.ravel()]
    weights = source.values[support] * source.grid.cell_volume
    points = targets.points()
    cutoff = spec.exclusion * targets.spacing
    chunk = max(1, APPLY_CHUNK // len(sources))
    tasks = [
        (spec.kernel, points[start : start + chunk], sources, weights, cutoff)
        for start in range(0, len(points), chunk)
    ]
    results = ordered_map(_apply_block, tasks, workers, desc="apply", progress=progress)
    values = np.concatenate([r[0] for r in results])
    flags = np.concatenate([r[1] for r in results])
    logger.debug("applied %s: %d targets x %d sources, %d excluded targets", spec.kernel.label, len(points), len(sources), int(flags.sum()))
    return GridFunction(targets, values, flags)


def distribution_function(u: GridFunction, alpha: float) -> float:
    """|{|u| > alpha}| on the grid."""
    if not alpha > 0:
        raise OperatorError(f"alpha must be positive, got {alpha}")
    return u.grid.cell_volume * float(np.count_nonzero(np.abs(u.values) > alpha))


def log_alpha_grid(
    lo: float = 10.0 ** ALPHA_DECADES[0], hi: float = 10.0 ** ALPHA_DECADES[1], per_decade: int = ALPHAS_PER_DECADE
) -> list[float]:
    if not 0 < lo < hi:
        raise OperatorError(f"alpha grid needs 0 < lo < hi, got {lo}, {hi}")
    count = int(round(math.log10(hi / lo) * per_decade)) + 1
    return list(np.logspace(math.log10(lo), math.log10(hi), count))


@dataclass
class WeakTypeReport:
    alphas: list[float]
    distribution: list[float]
    quasi_norm: float
    argmax_alpha: float
    q: float

    def curve(self) -> list[float]:
        return [a * d ** (1.0 / self.q) for a, d in zip(self.alphas, self.distribution)]

    def to_dict(self) -> dict:
        return {"quasi_norm": self.quasi_norm, "argmax_alpha": self.argmax_alpha, "q": self.q}


def weak_type_quasi_norm(u: GridFunction, q: float, alphas: list[float] | None = None) -> WeakTypeReport:
    """max over the alpha grid of alpha |{|u| > alpha}|^(1/q)."""
    if not q >= 1:
        raise OperatorError(f"q must be >= 1, got {q}")
    alphas = log_alpha_grid() if alphas is None else sorted(float(a) for a in alphas)
    if not alphas:
        raise OperatorError("alpha grid is empty")
    if not alphas[0] > 0:
        raise OperatorError(f"alpha must be positive, got {alphas[0]}")
    if u.grid.size == 0:
        raise OperatorError("cannot measure a function on an empty grid")
    magnitudes = np.sort(np.abs(u.values).ravel())
    # count of |u| > alpha for every alpha at once
    above = len(magnitudes) - np.searchsorted(magnitudes, alphas, side="right")
    distribution = (above * u.grid.cell_volume).tolist()
    curve = np.asarray(alphas) * np.asarray(distribution) ** (1.0 / q)
    best = int(np.argmax(curve))
    return WeakTypeReport(alphas, distribution, float(curve[best]), alphas[best], q)


def strong_ratio(f: GridFunction, tf: GridFunction, s: float) -> float:
    """||Tf||_s / ||f||_s, or 0 for f = 0."""
    norm = lq_norm(f, s)
    return 0.0 if norm == 0 else lq_norm(tf, s) / norm


def operator_norm_lower_bound(
    spec: OperatorSpec,
    s: float,
    probes: list[GridFunction],
    targets: Grid | None = None,
    workers: int | None = 1,
) -> float:
    """
    max over probes of ||Tf||_s / ||f||_s. The grid only sees part of Tf, so this is a
    lower bound for the norm of the discretized operator.
    """
    s = float(s)
    if not s > 1:
        raise OperatorError(f"s must lie in (1, inf], got {s}")
    best, used = 0.0, 0
    for i, probe in enumerate(probes):
        if lq_norm(probe, s) == 0:
            logger.warning("probe %d has zero L^%s norm, skipped", i, s)
            continue
        best = max(best, strong_ratio(probe, apply_operator(spec, probe, targets, workers), s))
        used += 1
    if used == 0:
        raise OperatorError("every probe has zero norm")
    return best


def conjugate(p: float) -> float:
    p = float(p)
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1)


@dataclass(frozen=True)
class PRange:
    lower: float
    upper: float

    def contains(self, p: float) -> bool:
        return self.lower < p < self.upper

    @property
    def is_limited(self) -> bool:
        """True when the interval sits properly inside (1, inf)."""
        return self.lower > 1 and not math.isinf(self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper}


def interpolation_range(q: float, s: float) -> PRange:
    """(min(s', q), max(q', s)): the L^p range reached from weak (q, q) and strong (s, s)."""
    q, s = float(q), float(s)
    if not q >= 1:
        raise OperatorError(f"q must be >= 1, got {q}")
    if not s > q:
        raise OperatorError(f"s must exceed q, got s={s}, q={q}")
    return PRange(min(conjugate(s), q), max(conjugate(q), s))
