import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stmr import diagnostics
from stmr.assembly import (
    DiscreteInitial,
    IndicatorDiagonal,
    ProblemSpec,
    SinPi,
    SmoothManufactured,
    TrialImage,
    outflow_trace_sq,
)
from stmr.linops import CGNotConverged
from stmr.solver import (
    XRieszPreconditioner,
    build_system,
    solve_ben,
    solve_mr,
    solve_mr_weak_outflow,
    test_space as make_test_space,
    trial_space,
)
from stmr.spaces import LEFT, RIGHT, TensorSpace, c0_space

CONFIGS = [
    dict(epsilon=1.0),
    dict(epsilon=1e-3),
    dict(epsilon=1e-6),
    dict(epsilon=1e-2, gamma={LEFT}),
    dict(epsilon=1e-3, e=1.0),
]


def roundtrip_problem(base: dict, X, w):
    w0 = w.reshape(X.shape)[0]
    return ProblemSpec(**base, forcing=TrialImage(X, w), u0=DiscreteInitial(X.space, w0))


def test_space_dimensions():
    p = ProblemSpec(1.0)
    Y = make_test_space(p, 4, "i")
    assert Y.dim == (2 * 4) * (5 - 2)
    assert make_test_space(p, 4, "ii").space.n_cells == 12
    with pytest.raises(ValueError):
        make_test_space(p, 4, "iii")


@pytest.mark.parametrize("base", CONFIGS)
@pytest.mark.parametrize("option", ["i", "ii"])
def test_projector_property(base, option):
    n = 6
    X = trial_space(ProblemSpec(**base), n)
    rng = np.random.default_rng(42)
    for _ in range(10):
        w = rng.standard_normal(X.dim)
        p = roundtrip_problem(base, X, w)
        sys = build_system(p, X, make_test_space(p, n, option))
        out = solve_mr(sys)
        assert np.linalg.norm(out.coefficients - w) <= 1e-9 * np.linalg.norm(w)
        assert out.estimator <= 1e-6 * (1 + np.linalg.norm(w))


def test_projector_property_cg():
    n = 8
    X = trial_space(ProblemSpec(0.1), n)
    w = np.random.default_rng(0).standard_normal(X.dim)
    p = roundtrip_problem(dict(epsilon=0.1), X, w)
    out = solve_mr(build_system(p, X, make_test_space(p, n)), method="cg", tol=1e-13)
    assert np.linalg.norm(out.coefficients - w) <= 1e-9 * np.linalg.norm(w)
    assert out.iterations > 1


@pytest.mark.parametrize("method", ["direct", "cg"])
def test_zero_data_zero_solution(method):
    p = ProblemSpec(1e-3)
    sys = build_system(p, trial_space(p, 8), make_test_space(p, 8))
    out = solve_mr(sys, method=method)
    assert not np.any(out.coefficients)
    assert out.estimator == 0.0
    assert not np.any(solve_ben(sys).coefficients)


def test_zero_data_weak_outflow():
    p = ProblemSpec(1e-3, e=1.0, weak_outflow=True)
    out = solve_mr_weak_outflow(p, trial_space(p, 8), make_test_space(p, 8))
    assert not np.any(out.coefficients)


def test_normal_operator_symmetric_and_consistent():
    p = ProblemSpec(1.0, forcing=SmoothManufactured(), u0=SinPi())
    sys = build_system(p, trial_space(p, 6), make_test_space(p, 6))
    N = sys.normal_operator()
    rng = np.random.default_rng(1)
    for _ in range(5):
        w, v = rng.standard_normal((2, sys.X.dim))
        assert abs(w @ N.apply(v) - v @ N.apply(w)) <= 1e-12 * np.linalg.norm(w) * np.linalg.norm(v) * 10
        np.testing.assert_allclose(sys.apply_normal(v), N.apply(v), rtol=1e-11, atol=1e-11)


def test_cg_matches_direct():
    p = ProblemSpec(0.1, forcing=SmoothManufactured(), u0=SinPi())
    sys = build_system(p, trial_space(p, 8), make_test_space(p, 8))
    d = solve_mr(sys)
    c = solve_mr(sys, method="cg", tol=1e-12)
    np.testing.assert_allclose(c.coefficients, d.coefficients, rtol=1e-8, atol=1e-10)
    assert c.final_residual <= 1e-12
    assert c.estimator == pytest.approx(d.estimator, rel=1e-8)


def test_cg_failure_surfaces_history():
    p = ProblemSpec(1e-6, forcing=SmoothManufactured(), u0=SinPi())
    sys = build_system(p, trial_space(p, 8), make_test_space(p, 8))
    with pytest.raises(CGNotConverged) as info:
        solve_mr(sys, method="cg", max_iter=5)
    assert len(info.value.history) == 6


def test_unknown_method():
    p = ProblemSpec(1.0)
    with pytest.raises(ValueError):
        solve_mr(build_system(p, trial_space(p, 4), make_test_space(p, 4)), method="lu")


def test_preconditioner_inverts_riesz_map():
    p = ProblemSpec(0.3, e=1.0)
    sys = build_system(p, trial_space(p, 5), make_test_space(p, 5))
    P = XRieszPreconditioner(sys)
    I = np.eye(sys.X.dim)
    Pinv = np.stack([P(c) for c in I], axis=1)
    np.testing.assert_allclose(Pinv, Pinv.T, atol=1e-10 * np.abs(Pinv).max())
    assert np.linalg.eigvalsh(0.5 * (Pinv + Pinv.T)).min() > 0


@pytest.mark.parametrize("eps", [1.0, 1e-3])
@pytest.mark.parametrize("n", [8, 16])
def test_mr_equals_ben(eps, n):
    p = ProblemSpec(eps, forcing=SmoothManufactured(), u0=SinPi())
    for option in ("i", "ii"):
        sys = build_system(p, trial_space(p, n), make_test_space(p, n, option))
        a = solve_mr(sys).coefficients
        b = solve_ben(sys).coefficients
        assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(a)


def test_ben_multiplier_tracks_solution():
    # b = 0 and Y = X: the multiplier block is a discretization of u itself
    diffs = []
    for n in (4, 8, 16):
        p = ProblemSpec(1.0, b=0.0, forcing=SmoothManufactured(), u0=SinPi())
        X = trial_space(p, n)
        out = solve_ben(build_system(p, X, X))
        diffs.append(np.linalg.norm(out.multiplier - out.coefficients) / np.linalg.norm(out.coefficients))
    assert diffs[-1] < 1e-3
    assert diffs[0] > diffs[1] > diffs[2]


def test_ben_rejects_weak_outflow():
    p = ProblemSpec(1.0, e=1.0, weak_outflow=True)
    with pytest.raises(ValueError):
        solve_ben(build_system(p, trial_space(p, 4), make_test_space(p, 4)))


@pytest.mark.parametrize("eps", [1.0, 1e-1, 1e-3, 1e-6])
def test_quasi_optimality_sanity(eps):
    p = ProblemSpec(eps, forcing=SmoothManufactured(), u0=SinPi())
    for n in (8, 16, 32):
        X = trial_space(p, n)
        sys = build_system(p, X, make_test_space(p, n))
        out = solve_mr(sys)
        interp = X.interpolate(SmoothManufactured.exact)
        assert out.estimator <= diagnostics.estimator(sys, interp) * (1 + 1e-12)


def test_monotone_functional_under_refinement():
    p = ProblemSpec(1e-2, forcing=IndicatorDiagonal(), gamma={LEFT})
    values = []
    for n in (4, 8, 16, 32):
        sys = build_system(p, trial_space(p, n), make_test_space(p, n))
        values.append(sys.functional(solve_mr(sys).coefficients))
    assert all(b <= a for a, b in zip(values, values[1:]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1.0, 1e-3]), st.booleans())
def test_solution_minimizes_functional(seed, eps, weak):
    # the quadratic J(w) grows by exactly (d' N d) away from the minimizer
    p = ProblemSpec(eps, e=1.0 if weak else 0.0, weak_outflow=weak,
                    forcing=IndicatorDiagonal(), u0=SinPi())
    sys = build_system(p, trial_space(p, 4), make_test_space(p, 4))
    w = solve_mr(sys).coefficients
    d = np.random.default_rng(seed).standard_normal(w.size)
    gap = sys.functional(w + d) - sys.functional(w)
    assert gap > 0
    assert gap == pytest.approx(float(d @ sys.apply_normal(d)), rel=1e-8)


def test_weak_outflow_large_eps():
    p = ProblemSpec(1.0, e=1.0, u0=SinPi(), weak_outflow=True)
    X = trial_space(p, 16)
    assert RIGHT not in X.space.essential_bc
    out = solve_mr_weak_outflow(p, X, make_test_space(p, 16))
    trace = np.sqrt(outflow_trace_sq(X, out.coefficients))
    assert trace <= out.estimator


def test_weak_outflow_preconditions():
    strong = ProblemSpec(1.0, e=1.0)
    with pytest.raises(ValueError):
        solve_mr_weak_outflow(strong, trial_space(strong, 4), make_test_space(strong, 4))
    weak = ProblemSpec(1.0, e=1.0, weak_outflow=True)
    X = TensorSpace(c0_space(4), c0_space(4, (LEFT, RIGHT)))
    with pytest.raises(ValueError):
        solve_mr_weak_outflow(weak, X, make_test_space(weak, 4))


def test_report_fields():
    p = ProblemSpec(1e-1, forcing=SmoothManufactured(), u0=SinPi())
    sys = build_system(p, trial_space(p, 8), make_test_space(p, 8))
    out = solve_mr(sys, denominator=2.0)
    assert out.relative_error == pytest.approx(out.estimator / 2.0)
    assert out.estimator >= 0 and out.wall_time >= 0 and out.iterations == 1
    assert out.final_residual < 1e-10
