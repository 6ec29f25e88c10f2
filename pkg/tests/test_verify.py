import logging
import math

import numpy as np
import pytest

from core.errors import OperatorError
from core.grid import Box, make_uniform_grid
from core.kernels import SeminormEstimate, SeminormParams
from core.operator import OperatorSpec
from core.verify import (
    NTV_LINF_NOTE,
    Method,
    ProofStep,
    gamma_factor,
    theorem_constant,
    trace_cz_proof,
    trace_ntv_proof,
    trace_proof,
    verify_lp_range,
    verify_theorem1,
)
from tasks.testset import random_dyadic_step, shipped_grid, shipped_testset, smooth_bump

LN3 = math.log(3.0)


def interval(grid, lo=0.0, hi=1.0):
    return grid.sample(lambda x: ((x[:, 0] >= lo) & (x[:, 0] < hi)).astype(float))


def test_theorem_constants():
    assert theorem_constant(1, 1.0, 2.0, "cz") == pytest.approx(14.0)
    assert theorem_constant(1, 1.0, 2.0, Method.NTV) == pytest.approx(28574.0)
    assert theorem_constant(1, 1.0, math.inf, "cz") == pytest.approx(20.0)
    assert theorem_constant(1, 1.0, math.inf, "ntv") == pytest.approx(840.0)


def test_gamma_factor():
    assert gamma_factor(1, 1.0, 2.0, "cz") == 1.0
    assert gamma_factor(1, 1.0, math.inf, "cz") == pytest.approx(1 / 8)
    assert gamma_factor(2, 2.0, math.inf, "cz") == pytest.approx(1 / 8)
    assert gamma_factor(3, 1.0, math.inf, "ntv") == 0.25


def test_theorem_constant_rejections():
    with pytest.raises(OperatorError, match="exceed"):
        theorem_constant(1, 2.0, 2.0, "cz")
    with pytest.raises(OperatorError):
        theorem_constant(1, 0.5, 2.0, "cz")
    with pytest.raises(OperatorError, match="unknown proof method"):
        theorem_constant(1, 1.0, 2.0, "stein")


def test_proof_step_tolerance():
    assert ProofStep("a", "x", 1.0, 1.0).passed
    assert ProofStep("a", "x", 1.005, 1.0).passed
    assert not ProofStep("a", "x", 1.02, 1.0).passed
    assert ProofStep("a", "x", 0.0, 0.0).passed
    out = ProofStep("a", "x", 1.0, 2.0, note="n").to_dict()
    assert out == {"name": "a", "anchor": "x", "lhs": 1.0, "rhs": 2.0, "tol": 1e-2, "pass": True, "note": "n"}


def test_cz_trace_on_interval(hilbert_spec):
    grid = make_uniform_grid(Box((0.0,), (8.0,)), 2.0**-6)
    trace = trace_cz_proof(hilbert_spec, interval(grid), 1.0, 1.0, seminorm=LN3)
    assert trace.overall, [step.name for step in trace.failed()]
    assert trace.gamma == pytest.approx(1 / (math.pi + LN3))
    assert trace.constant == pytest.approx(14.0)
    names = [step.name for step in trace.steps]
    for name in ("split", "good-chebyshev", "bad-mean-zero-fubini", "supremum", "total"):
        assert name in names
    assert trace.step("containment").lhs == 0.0
    assert trace.notes == []
    out = trace.to_dict()
    assert out["method"] == "cz" and out["overall"] is True
    assert len(out["steps"]) == len(trace.steps)


def test_ntv_trace_on_interval(hilbert_spec):
    grid = make_uniform_grid(Box((-1.0,), (3.0,)), 2.0**-6)
    trace = trace_ntv_proof(hilbert_spec, interval(grid), 2.0, 1.0, seminorm=LN3)
    assert trace.overall, [step.name for step in trace.failed()]
    assert trace.constant == pytest.approx(28574.0)
    names = [step.name for step in trace.steps]
    for name in ("I", "II-final", "III-final", "dilate-meets-complement", "total"):
        assert name in names
    assert trace.step("containment").lhs <= 0.5 + 1e-12


def test_cz_trace_with_bounded_operator(bump_linf_spec):
    grid = make_uniform_grid(Box((0.0,), (8.0,)), 2.0**-6)
    trace = trace_cz_proof(bump_linf_spec, interval(grid), 1.0, 1.0, seminorm=1.0)
    assert trace.gamma == pytest.approx(1 / 24)
    names = [step.name for step in trace.steps]
    assert "good-Linf-bound" in names and "good-chebyshev" not in names
    for name in ("good-Linf-bound", "good-threshold", "good-final", "total"):
        assert trace.step(name).passed
    assert trace.step("good-final").lhs == 0.0
    assert trace.overall, [step.name for step in trace.failed()]
    assert trace.step("containment").lhs == 0.0


def test_ntv_trace_with_bounded_operator(bump_linf_spec):
    grid = make_uniform_grid(Box((-1.0,), (3.0,)), 2.0**-6)
    # same height as the L^2 trace above
    alpha = 12 * 2 / (math.pi + LN3)
    trace = trace_ntv_proof(bump_linf_spec, interval(grid), alpha, 1.0, seminorm=1.0)
    assert trace.overall, [step.name for step in trace.failed()]
    assert trace.gamma == pytest.approx(1 / 12)
    assert trace.constant == pytest.approx(840.0)
    names = [step.name for step in trace.steps]
    assert "III-Linf-bound" in names and "III-final" not in names
    assert trace.notes == [NTV_LINF_NOTE]
    assert trace.to_dict()["notes"] == [NTV_LINF_NOTE]
    assert trace.step("total").note == NTV_LINF_NOTE


@pytest.mark.parametrize("seed", range(10))
def test_cz_trace_on_random_steps(hilbert_spec, seed):
    f = random_dyadic_step(shipped_grid(1), np.random.default_rng(seed))
    trace = trace_cz_proof(hilbert_spec, f, 1.0, 1.0, seminorm=LN3)
    assert trace.overall, [step.name for step in trace.failed()]


@pytest.mark.parametrize("seed", range(10))
def test_ntv_trace_on_random_steps(hilbert_spec, seed):
    grid = make_uniform_grid(Box((-1.0,), (3.0,)), 2.0**-6)
    u = abs(random_dyadic_step(grid, np.random.default_rng(seed)))
    f = u * (1 / u.max_abs())
    trace = trace_ntv_proof(hilbert_spec, f, 2.0, 1.0, seminorm=LN3)
    assert trace.overall, [step.name for step in trace.failed()]


def test_trace_dispatch_and_rejections(hilbert_spec, unit_grid):
    f = interval(unit_grid, 0.0, 0.5)
    with pytest.raises(OperatorError, match="alpha"):
        trace_proof("cz", hilbert_spec, f, 0.0, 1.0, seminorm=LN3)
    with pytest.raises(OperatorError, match="exceed"):
        trace_proof(Method.NTV, hilbert_spec, f, 1.0, 2.0, seminorm=LN3)
    with pytest.raises(KeyError):
        trace_cz_proof(hilbert_spec, f, 1.0, 1.0, seminorm=LN3).step("no-such-step")


def test_verify_zero_kernel_passes(zero_spec, unit_grid):
    report = verify_theorem1(zero_spec, 1.0, [interval(unit_grid, 0.0, 0.5)], seminorm=0.0)
    assert report.max_ratio == 0.0
    assert report.margin == math.inf
    assert report.verdict == "pass"
    assert report.labels == ["f0"]


def test_verify_hilbert_on_interval(hilbert_spec):
    grid = make_uniform_grid(Box((-4.0,), (4.0,)), 2.0**-6)
    report = verify_theorem1(hilbert_spec, 1.0, [interval(grid)], labels=["interval"], seminorm=LN3)
    # the weak quasi-norm of H 1_[0,1] is 2, reached only as alpha -> 0
    assert 1.9 / (math.pi + LN3) <= report.max_ratio <= 2.01 / (math.pi + LN3)
    assert report.threshold == pytest.approx(14.0)
    assert report.margin > 25
    assert report.verdict == "pass"
    out = report.to_dict()
    assert out["testset"] == ["interval"]
    assert out["B"] == math.pi
    assert out["per_function_max_ratio"] == [report.max_ratio]


def test_verify_shipped_testset(hilbert_spec):
    probes = shipped_testset(1)
    report = verify_theorem1(
        hilbert_spec,
        1.0,
        [p.function for p in probes],
        labels=[p.label for p in probes],
        seminorm=LN3,
    )
    assert len(report.ratios) == 20
    assert report.verdict == "pass"
    assert report.margin >= 10
    assert 0 < report.empirical_bound <= math.pi * 1.01
    assert report.notes == []


def test_verify_ntv_threshold(hilbert_spec, unit_grid):
    report = verify_theorem1(hilbert_spec, 1.0, [interval(unit_grid, 0.0, 0.5)], method="ntv", seminorm=LN3)
    assert report.threshold == pytest.approx(28574.0)
    assert report.to_dict()["method"] == "ntv"


def test_verify_flags_a_declared_bound_below_the_data(hilbert, caplog):
    grid = make_uniform_grid(Box((-4.0,), (4.0,)), 2.0**-6)
    spec = OperatorSpec(hilbert, 2.0, 0.5)
    with caplog.at_level(logging.WARNING, logger="core.verify"):
        report = verify_theorem1(spec, 1.0, [interval(grid)], seminorm=LN3)
    assert report.empirical_bound > 1.0
    assert len(report.notes) == 1 and "exceeds the declared B" in report.notes[0]
    assert "exceeds the declared B" in caplog.text
    out = report.to_dict()
    assert out["empirical_B"] == report.empirical_bound
    assert out["notes"] == report.notes


def test_verify_ntv_records_the_linf_omission(bump_linf_spec, unit_grid):
    report = verify_theorem1(bump_linf_spec, 1.0, [interval(unit_grid, 0.0, 0.5)], method="ntv", seminorm=1.0)
    assert report.threshold == pytest.approx(840.0)
    assert report.empirical_bound <= 2.0
    assert report.notes == [NTV_LINF_NOTE]
    cz = verify_theorem1(bump_linf_spec, 1.0, [interval(unit_grid, 0.0, 0.5)], seminorm=1.0)
    assert cz.notes == []


def test_verify_inconclusive_on_truncated_seminorm(hilbert_spec, unit_grid):
    estimate = SeminormEstimate(1.0, [(1.0, 1.0)], 0.5, SeminormParams())
    report = verify_theorem1(hilbert_spec, 1.0, [interval(unit_grid, 0.0, 0.5)], seminorm=estimate)
    assert report.truncation_error == 0.5
    assert report.verdict == "inconclusive"


def test_verify_rejections(hilbert_spec, unit_grid):
    with pytest.raises(OperatorError, match="empty"):
        verify_theorem1(hilbert_spec, 1.0, [], seminorm=LN3)
    with pytest.raises(OperatorError, match="exceed"):
        verify_theorem1(hilbert_spec, 2.0, [unit_grid.zeros()], seminorm=LN3)


def test_lp_range_is_stable_under_refinement(hilbert):
    spec = OperatorSpec(hilbert, 4.0, math.pi)
    grid = make_uniform_grid(Box((-4.0,), (4.0,)), 2.0**-5)
    testset = [interval(grid), smooth_bump(grid)]
    report = verify_lp_range(spec, 2.0, testset, [1.5, 2.0])
    assert report.lower == pytest.approx(4 / 3)
    assert report.upper == 4.0
    assert report.stable
    assert all(0 < r for r in report.ratios)
    assert report.ratios[1] <= math.pi
    samples = report.to_dict()["samples"]
    assert [s["p"] for s in samples] == [1.5, 2.0]


def test_lp_range_rejects_p_outside(hilbert):
    spec = OperatorSpec(hilbert, 4.0, math.pi)
    grid = make_uniform_grid(Box((0.0,), (1.0,)), 2.0**-4)
    with pytest.raises(OperatorError, match="outside"):
        verify_lp_range(spec, 2.0, [interval(grid, 0.0, 0.5)], [5.0])
    with pytest.raises(OperatorError, match="outside"):
        verify_lp_range(spec, 2.0, [interval(grid, 0.0, 0.5)], [4 / 3])
