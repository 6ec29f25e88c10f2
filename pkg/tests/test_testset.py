import numpy as np
import pytest

from core.errors import GridError
from core.grid import integrate, lq_norm
from tasks.testset import (
    SHIPPED_SIZE,
    TESTSETS,
    dipole,
    dyadic_indicator,
    random_step_testset,
    shipped_grid,
    shipped_testset,
    smooth_bump,
)


def test_shipped_testset_shape():
    probes = shipped_testset(1)
    assert len(probes) == SHIPPED_SIZE
    assert [p.label for p in probes[:3]] == ["indicator_g0", "indicator_g1", "indicator_g2"]
    assert probes[-1].label == "step12"
    assert len({p.label for p in probes}) == SHIPPED_SIZE


def test_shipped_testset_is_seeded():
    first = shipped_testset(1, seed=3)
    second = shipped_testset(1, seed=3)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.function.values, b.function.values)
    other = shipped_testset(1, seed=4)
    assert not np.array_equal(first[-1].function.values, other[-1].function.values)


@pytest.mark.parametrize("n", [1, 2])
def test_supports_inside_unit_cube(n):
    grid = shipped_grid(n)
    points = grid.points()
    outside = ~np.all((points >= 0) & (points < 1), axis=1)
    for probe in shipped_testset(n, size=10):
        values = probe.function.values.ravel()
        assert not np.any(values[outside]), probe.label
        assert lq_norm(probe.function, 1) > 0


def test_dyadic_indicator_measure():
    grid = shipped_grid(1)
    assert integrate(dyadic_indicator(grid, 0, (0,))) == pytest.approx(1.0)
    assert integrate(dyadic_indicator(grid, 2, (1,))) == pytest.approx(0.25)


def test_dipole_has_mean_zero():
    grid = shipped_grid(2)
    assert integrate(dipole(grid)) == pytest.approx(0.0, abs=1e-12)
    assert integrate(dipole(grid, 1, (1, 0))) == pytest.approx(0.0, abs=1e-12)
    assert abs(dipole(grid)).max_abs() == 1.0


def test_smooth_bump_peak():
    grid = shipped_grid(1)
    bump = smooth_bump(grid)
    assert 0.99 < bump.max_abs() <= 1.0
    assert bump.at([-0.5]) == 0.0


def test_random_steps_bounded():
    for probe in random_step_testset(1, seed=1, size=5):
        assert probe.function.max_abs() <= 1.0


def test_testset_registry():
    assert set(TESTSETS) == {"shipped", "steps"}
    assert len(TESTSETS["steps"](1, 0, 4)) == 4
    assert len(TESTSETS["shipped"](1, 0, 3)) == 3


def test_no_grid_beyond_three_dimensions():
    with pytest.raises(GridError):
        shipped_grid(4)
