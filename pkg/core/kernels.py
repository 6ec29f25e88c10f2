"""
Convolution kernels on R^n minus the origin, and the smoothness seminorms that enter the
weak-type estimates: the classical Hormander quantity, the L^r averaged class H_r and the
Watson annulus classes H^r.

All seminorms are discretized the same way. The sup over R > 0 is a max over a finite R set,
the ball |y| <= R is sampled on a midpoint grid (spacing relative to R), and the outer
integrals run over dyadic shells with a graded midpoint rule whose spacing is relative to
each shell's inner radius. Since |x| >= 2R and |y| <= R keep |x - y| >= R, no sample ever
lands on the singularity.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, field_validator

from core.errors import KernelError
from core.grid import unit_ball_volume
from core.parallel import ordered_map

logger = logging.getLogger(__name__)

SIZE_CHECK_SEED = 20240527
SIZE_CHECK_POINTS = 4096
SIZE_CHECK_RADII = (1e-3, 1e3)
SIZE_RTOL = 1e-9
# Upper bound on (y samples) x (x samples) evaluated in a single vectorized block.
CHUNK_ELEMENTS = 2_000_000


# ---------------------------------------------------------------------------
# Evaluators. Plain classes so kernels survive pickling into worker processes.
# ---------------------------------------------------------------------------


class ZeroEvaluator:
    def __call__(self, x: NDArray) -> NDArray:
        return np.zeros(len(x))


class HilbertEvaluator:
    def __call__(self, x: NDArray) -> NDArray:
        return 1.0 / x[:, 0]


class RieszEvaluator:
    def __init__(self, component: int):
        # 1-based component index, as in the `riesz:i` label
        self.component = component

    def __call__(self, x: NDArray) -> NDArray:
        n = x.shape[1]
        norm = np.linalg.norm(x, axis=1)
        return x[:, self.component - 1] / norm ** (n + 1)


class BumpEvaluator:
    def __call__(self, x: NDArray) -> NDArray:
        sq = np.sum(x * x, axis=1)
        return np.where(sq < 1.0, (1.0 - sq) ** 2, 0.0)


class TabulatedEvaluator:
    """Linear interpolation of (x, K(x)) samples on the line, zero outside the table."""

    def __init__(self, xs: NDArray, values: NDArray):
        order = np.argsort(xs)
        self.xs = np.asarray(xs, dtype=float)[order]
        self.values = np.asarray(values, dtype=float)[order]

    def __call__(self, x: NDArray) -> NDArray:
        return np.interp(x[:, 0], self.xs, self.values, left=0.0, right=0.0)


class ReflectedEvaluator:
    def __init__(self, inner: Callable[[NDArray], NDArray]):
        self.inner = inner

    def __call__(self, x: NDArray) -> NDArray:
        return self.inner(-x)


@dataclass(frozen=True)
class Kernel:
    dimension: int
    evaluator: Callable[[NDArray], NDArray]
    size_constant: float
    homogeneous: bool | None = None
    label: str = "custom"

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise KernelError(f"kernel dimension must be 1, 2 or 3, got {self.dimension}")
        if not self.size_constant > 0:
            raise KernelError(f"size constant A must be positive, got {self.size_constant}")
        check_size_bound(self)

    def __call__(self, x: NDArray) -> NDArray:
        """Vectorized evaluation on an (m, n) array of nonzero points, no checks."""
        return self.evaluator(np.atleast_2d(x))

    def reflected(self) -> "Kernel":
        return Kernel(
            self.dimension,
            ReflectedEvaluator(self.evaluator),
            self.size_constant,
            self.homogeneous,
            f"reflected({self.label})",
        )


def _size_violations(kernel: Kernel, x: NDArray) -> NDArray:
    radius = np.linalg.norm(x, axis=1)
    bound = kernel.size_constant / radius**kernel.dimension
    return np.abs(kernel(x)) > bound * (1 + SIZE_RTOL)


def check_size_bound(kernel: Kernel):
    """Check |K(x)| <= A/|x|^n on a seeded log-uniform cloud of points."""
    rng = np.random.default_rng(SIZE_CHECK_SEED)
    directions = rng.standard_normal((SIZE_CHECK_POINTS, kernel.dimension))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    lo, hi = np.log(SIZE_CHECK_RADII)
    radii = np.exp(rng.uniform(lo, hi, SIZE_CHECK_POINTS))
    cloud = directions * radii[:, None]
    bad = _size_violations(kernel, cloud)
    if np.any(bad):
        x = cloud[np.argmax(bad)]
        raise KernelError(
            f"kernel {kernel.label!r} violates |K(x)| <= A/|x|^n with A={kernel.size_constant} at x={tuple(x)}"
        )


def evaluate_kernel(k: Kernel, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (k.dimension,):
        raise KernelError(f"expected a point of R^{k.dimension}, got shape {x.shape}")
    if not np.linalg.norm(x) > 0:
        raise KernelError("kernels are not defined at x = 0")
    point = x[None, :]
    if _size_violations(k, point)[0]:
        raise KernelError(f"size bound |K(x)| <= {k.size_constant}/|x|^{k.dimension} violated at x={tuple(x)}")
    return float(k(point)[0])


# ---------------------------------------------------------------------------
# Built-in kernels
# ---------------------------------------------------------------------------


def zero_kernel(n: int = 1, size_constant: float = 1.0) -> Kernel:
    return Kernel(n, ZeroEvaluator(), size_constant, True, "zero")


def hilbert_kernel(size_constant: float = 1.0) -> Kernel:
    return Kernel(1, HilbertEvaluator(), size_constant, True, "hilbert")


def riesz_kernel(component: int, n: int = 2, size_constant: float = 1.0) -> Kernel:
    if n not in (2, 3):
        raise KernelError(f"Riesz kernels are provided for n = 2, 3, got {n}")
    if not 1 <= component <= n:
        raise KernelError(f"Riesz component must be in 1..{n}, got {component}")
    return Kernel(n, RieszEvaluator(component), size_constant, True, f"riesz:{component}")


def bump_kernel(n: int = 1, size_constant: float = 1.0) -> Kernel:
    """(1 - |x|^2)^2 on the unit ball. Integrable, so its H_r slices vanish for R >= 1."""
    return Kernel(n, BumpEvaluator(), size_constant, False, "bump")


def tabulated_kernel(xs: NDArray, values: NDArray, size_constant: float, label: str = "custom") -> Kernel:
    if len(xs) < 2 or len(xs) != len(values):
        raise KernelError("a tabulated kernel needs at least two (x, K(x)) samples")
    return Kernel(1, TabulatedEvaluator(xs, values), size_constant, False, label)


# ---------------------------------------------------------------------------
# Seminorms
# ---------------------------------------------------------------------------


class SeminormParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    r_set: list[float] = [2.0**k for k in range(-4, 5)]
    y_spacing: float = 1e-3
    rho: float = 1e4
    outer_spacing: float = 1e-2
    convergence_check: bool = True

    @field_validator("r_set")
    @classmethod
    def _sorted_positive(cls, value: list[float]) -> list[float]:
        if not value:
            raise ValueError("R set must be nonempty")
        if any(not R > 0 for R in value):
            raise ValueError(f"R set must contain positive radii, got {value}")
        return sorted(value)

    @field_validator("rho")
    @classmethod
    def _rho_above_two(cls, value: float) -> float:
        if not value > 2:
            raise ValueError(f"rho must exceed 2, got {value}")
        return value

    @field_validator("y_spacing", "outer_spacing")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError(f"relative spacings must lie in (0, 1], got {value}")
        return value


@dataclass
class SeminormEstimate:
    value: float
    slices: list[tuple[float, float]]
    truncation_error: float
    params: SeminormParams
    family: str = "hr"
    r: float = math.inf

    @property
    def relative_truncation(self) -> float:
        if self.value == 0:
            return 0.0 if self.truncation_error == 0 else math.inf
        return self.truncation_error / self.value

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "r": self.r,
            "value": self.value,
            "slices": [{"R": R, "value": v} for R, v in self.slices],
            "truncation_error": self.truncation_error,
            "params": self.params.model_dump(),
        }


def _check_r(r: float) -> float:
    r = float(r)
    if not r >= 1:
        raise KernelError(f"seminorm exponent r must be >= 1, got {r}")
    return r


def _ball_samples(n: int, R: float, spacing: float) -> NDArray:
    """Midpoints of a cube lattice over [-R, R]^n that fall in the closed ball |y| <= R."""
    m = max(1, math.ceil(1.0 / spacing - 1e-9))
    axis = (np.arange(-m, m) + 0.5) * (R / m)
    mesh = np.stack(np.meshgrid(*[axis] * n, indexing="ij"), axis=-1).reshape(-1, n)
    return mesh[np.linalg.norm(mesh, axis=1) <= R]


def _shell_lattice(n: int, inner: float, outer: float, spacing: float) -> tuple[NDArray, float]:
    """Midpoints with inner <= |x| < outer of a lattice of step spacing * inner, plus the cell volume."""
    step = spacing * inner
    m = max(1, math.ceil(outer / step - 1e-9))
    axis = (np.arange(-m, m) + 0.5) * step
    mesh = np.stack(np.meshgrid(*[axis] * n, indexing="ij"), axis=-1).reshape(-1, n)
    radius = np.linalg.norm(mesh, axis=1)
    return mesh[(radius >= inner) & (radius < outer)], step**n


def _shell_bounds(start: float, stop: float) -> list[tuple[float, float]]:
    bounds = []
    inner = start
    while inner < stop * (1 - 1e-12):
        outer = min(2 * inner, stop)
        bounds.append((inner, outer))
        inner = outer
    return bounds


def difference_integrals(kernel: Kernel, ys: NDArray, points: NDArray, weight: float, r: float) -> NDArray:
    """
    For every y: the integral of |K(x - y) - K(x)|^r over the sample points (r < inf),
    or the max of |K(x - y) - K(x)| over them (r = inf).
    """
    out = np.zeros(len(ys))
    if len(points) == 0:
        return out
    base = kernel(points)
    chunk = max(1, CHUNK_ELEMENTS // len(points))
    for start in range(0, len(ys), chunk):
        block = ys[start : start + chunk]
        shifted = (points[None, :, :] - block[:, None, :]).reshape(-1, kernel.dimension)
        diff = np.abs(kernel(shifted).reshape(len(block), -1) - base)
        if math.isinf(r):
            out[start : start + len(block)] = diff.max(axis=1)
        else:
            out[start : start + len(block)] = (diff**r).sum(axis=1) * weight
    return out


def _lr_average(values: NDArray, r: float) -> float:
    """L^r average with respect to the normalized counting measure on the y samples."""
    if math.isinf(r):
        return float(values.max())
    return float(np.mean(values**r) ** (1.0 / r))


def _hr_slice(task: tuple[Kernel, float, float, SeminormParams]) -> tuple[float, float]:
    kernel, R, r, params = task
    n = kernel.dimension
    ys = _ball_samples(n, R, params.y_spacing)
    inner = np.zeros(len(ys))
    for lo, hi in _shell_bounds(2 * R, params.rho * R):
        points, weight = _shell_lattice(n, lo, hi, params.outer_spacing)
        inner += difference_integrals(kernel, ys, points, weight, 1.0)
    value = _lr_average(inner, r)
    truncation = 0.0
    if params.convergence_check:
        points, weight = _shell_lattice(n, params.rho * R, 2 * params.rho * R, params.outer_spacing)
        tail = difference_integrals(kernel, ys, points, weight, 1.0)
        truncation = abs(_lr_average(inner + tail, r) - value)
    return value, truncation


def _watson_annuli(rho: float) -> int:
    # last m with 2^(m+1) <= rho
    return int(math.floor(math.log2(rho))) - 1


def _watson_slice(task: tuple[Kernel, float, float, SeminormParams]) -> tuple[float, float]:
    kernel, R, r, params = task
    n = kernel.dimension
    ys = _ball_samples(n, R, params.y_spacing)
    # n / r' with r' the conjugate exponent; r = 1 gives 0, r = inf gives n
    exponent = n * (1.0 - 1.0 / r)

    def annulus_term(m: int) -> NDArray:
        radius = 2.0**m * R
        points, weight = _shell_lattice(n, radius, 2 * radius, params.outer_spacing)
        reduced = difference_integrals(kernel, ys, points, weight, r)
        if not math.isinf(r):
            reduced = reduced ** (1.0 / r)
        return radius**exponent * reduced

    last = _watson_annuli(params.rho)
    total = np.zeros(len(ys))
    for m in range(1, last + 1):
        total += annulus_term(m)
    value = float(total.max())
    truncation = 0.0
    if params.convergence_check:
        truncation = float((total + annulus_term(last + 1)).max()) - value
    return value, truncation


def _hormander_slice(task: tuple[Kernel, float, float, SeminormParams]) -> tuple[float, float]:
    kernel, R, _, params = task
    n = kernel.dimension
    ys = _ball_samples(n, R, params.y_spacing)
    ys = ys[np.linalg.norm(ys, axis=1) > 0]
    best, truncation = 0.0, 0.0
    # Shells are built once at |y| = 1 and rescaled: region |x| >= 2|y| up to rho |y|.
    shells = [_shell_lattice(n, lo, hi, params.outer_spacing) for lo, hi in _shell_bounds(2.0, params.rho)]
    tail_shell = _shell_lattice(n, params.rho, 2 * params.rho, params.outer_spacing)
    for y in ys:
        scale = float(np.linalg.norm(y))
        integral = sum(
            difference_integrals(kernel, y[None, :], points * scale, weight * scale**n, 1.0)[0]
            for points, weight in shells
        )
        if integral > best:
            best = integral
            if params.convergence_check:
                points, weight = tail_shell
                truncation = difference_integrals(kernel, y[None, :], points * scale, weight * scale**n, 1.0)[0]
    return float(best), float(truncation)


_SLICES = {"hr": _hr_slice, "watson": _watson_slice, "hormander": _hormander_slice}


def _estimate(
    family: str, k: Kernel, r: float, p: SeminormParams, workers: int | None, progress: bool
) -> SeminormEstimate:
    if not p.r_set:
        raise KernelError("R set must be nonempty")
    if family == "watson" and _watson_annuli(p.rho) < 1:
        raise KernelError(f"watson seminorm needs rho >= 4 for at least one annulus, got {p.rho}")
    tasks = [(k, R, r, p) for R in p.r_set]
    results = ordered_map(_SLICES[family], tasks, workers, desc=f"{family} slices", progress=progress)
    slices = [(R, value) for R, (value, _) in zip(p.r_set, results)]
    estimate = SeminormEstimate(
        value=max(value for _, value in slices),
        slices=slices,
        truncation_error=max(trunc for _, trunc in results),
        params=p,
        family=family,
        r=r,
    )
    logger.info("%s seminorm of %s at r=%s: %.6g (truncation %.2g)", family, k.label, r, estimate.value, estimate.truncation_error)
    return estimate


def hr_seminorm(
    k: Kernel, r: float, p: SeminormParams | None = None, workers: int | None = 1, progress: bool = False
) -> SeminormEstimate:
    """
    [K]_{H_r}: max over R of the L^r average, over |y| <= R with respect to dy / (v_n R^n),
    of the outer integral of |K(x - y) - K(x)| over |x| >= 2R. r = inf gives the sup over y.
    """
    return _estimate("hr", k, _check_r(r), p or SeminormParams(), workers, progress)


def watson_seminorm(
    k: Kernel, r: float, p: SeminormParams | None = None, workers: int | None = 1, progress: bool = False
) -> SeminormEstimate:
    """
    [K]_{H^r}: max over R and |y| <= R of the sum over dyadic annuli 2^m R <= |x| < 2^(m+1) R,
    m >= 1, of (2^m R)^(n/r') times the L^r norm of K(x - y) - K(x) on the annulus.
    """
    return _estimate("watson", k, _check_r(r), p or SeminormParams(), workers, progress)


def hormander_seminorm(
    k: Kernel, p: SeminormParams | None = None, workers: int | None = 1, progress: bool = False
) -> SeminormEstimate:
    """Classical [K]_H: sup over y of the integral of |K(x - y) - K(x)| over |x| >= 2|y|."""
    return _estimate("hormander", k, math.inf, p or SeminormParams(), workers, progress)


def watson_holder_constant(n: int, r1: float, r2: float) -> float:
    """Constant in watson(k, r1) <= c * watson(k, r2) for r1 <= r2."""
    return (unit_ball_volume(n) * (2**n - 1)) ** (1.0 / r1 - 1.0 / r2)


def quadrature_tolerance(value: float) -> float:
    return 1e-6 + 1e-3 * value


@dataclass
class SeminormProfile:
    family: str
    estimates: list[SeminormEstimate] = field(default_factory=list)

    @property
    def rs(self) -> list[float]:
        return [e.r for e in self.estimates]

    @property
    def values(self) -> list[float]:
        return [e.value for e in self.estimates]

    @property
    def nondecreasing(self) -> bool:
        """The H_r inclusion chain: values grow with r up to quadrature tolerance."""
        values = self.values
        return all(a <= b + quadrature_tolerance(b) for a, b in zip(values, values[1:]))


def seminorm_profile(
    k: Kernel,
    rs: list[float],
    p: SeminormParams | None = None,
    family: str = "hr",
    workers: int | None = 1,
    progress: bool = False,
) -> SeminormProfile:
    if family not in ("hr", "watson"):
        raise KernelError(f"profiles are defined for the hr and watson families, got {family!r}")
    compute = hr_seminorm if family == "hr" else watson_seminorm
    rs = sorted(_check_r(r) for r in rs)
    return SeminormProfile(family, [compute(k, r, p, workers, progress) for r in rs])
