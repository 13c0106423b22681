"""Fixed-point machinery for the drawdown mass functional M = K(M).

The exponential-ratio kernel is the regression anchor: M(x) = x(1 - e^{-x})
solves its equation exactly, so both iteration schemes can be checked for
residual, accuracy, and the sup-norm distance to the identity (= 1/e).
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import bubblekit as bk
from bubblekit.errors import NonConvergenceError
from bubblekit.volterra import GridFunction, apply_operator

GRID = np.geomspace(1e-2, 50.0, 400)


def closed_solution(x):
    return x * (1.0 - np.exp(-x))


# --- GridFunction -----------------------------------------------------------

def test_grid_function_identity_and_ratio():
    f = GridFunction.identity(GRID)
    assert np.allclose(f.values, GRID)
    assert np.allclose(f.ratio(), 1.0)


def test_grid_function_rel_distance():
    f = GridFunction.identity(GRID)
    g = GridFunction(GRID, 0.5 * GRID)
    assert f.rel_distance(g) == pytest.approx(0.5)


def test_grid_function_from_callable():
    f = GridFunction.from_callable(GRID, closed_solution)
    assert f.values[-1] == pytest.approx(closed_solution(GRID[-1]))


# --- solvers on the closed-form anchor ---------------------------------------

@pytest.mark.parametrize("solver", [bk.picard_from_identity,
                                    bk.contraction_solve],
                         ids=["picard", "contraction"])
def test_solver_reaches_closed_solution(solver):
    # Errors are measured relative to the state (the same normalization
    # the solvers use for their residual): values scale like x, so
    # |M - truth|/x is the grid-uniform notion of relative error.
    ker = bk.ExponentialRatioKernel()
    sol, report = solver(ker, GRID, tol=1e-10, max_iter=400)
    assert report.converged
    truth = closed_solution(GRID)
    rel_err = np.max(np.abs(sol.values - truth) / GRID)
    assert rel_err < 1e-4
    assert report.sup_residual <= 1e-8


def test_solution_stays_in_class_i():
    ker = bk.ExponentialRatioKernel()
    sol, _ = bk.contraction_solve(ker, GRID)
    assert np.all(sol.values >= -1e-15)
    assert np.all(sol.values <= GRID * (1 + 1e-12))


def test_identity_distance_is_inverse_e():
    # sup_x |x - x(1-e^{-x})| = sup x e^{-x} = 1/e at x = 1.
    ker = bk.ExponentialRatioKernel()
    sol, _ = bk.contraction_solve(ker, GRID)
    dist = np.max(np.abs(GRID - sol.values))
    assert dist == pytest.approx(np.exp(-1.0), abs=1e-3)


def test_picard_iterates_decrease_monotonically():
    ker = bk.ExponentialRatioKernel()
    _sol, report = bk.picard_from_identity(ker, GRID, tol=1e-10)
    assert report.monotone
    assert report.scheme == "ratio-coordinates"


def test_contraction_reports_observed_factor():
    ker = bk.ExponentialRatioKernel()
    _sol, report = bk.contraction_solve(ker, GRID)
    assert report.scheme == "deficit-coordinates"
    assert report.contraction_observed is not None
    assert 0.0 < report.contraction_observed < 1.0


def test_non_convergence_carries_partial_result():
    ker = bk.ExponentialRatioKernel()
    with pytest.raises(NonConvergenceError) as exc:
        bk.picard_from_identity(ker, GRID, tol=1e-12, max_iter=3)
    assert exc.value.report.converged is False
    assert exc.value.report.iterations == 3
    assert isinstance(exc.value.best, GridFunction)
    # the partial iterate is already inside class I
    assert np.all(exc.value.best.values <= GRID * (1 + 1e-12))


def test_solve_report_round_trips_to_json():
    import json

    ker = bk.ExponentialRatioKernel()
    _sol, report = bk.contraction_solve(ker, GRID)
    blob = json.loads(json.dumps(report.to_json_dict()))
    assert blob["converged"] is True
    assert blob["scheme"] == "deficit-coordinates"
    assert blob["sup_residual"] == pytest.approx(report.sup_residual)


# --- operator properties ------------------------------------------------------

KERNELS = [bk.AffineDropKernel(), bk.ExponentialRatioKernel(),
           bk.GaussianLogStepKernel(sigma=0.7)]


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
def test_operator_is_monotone(kernel):
    """M1 <= M2 pointwise implies K(M1) <= K(M2) pointwise."""
    grid = np.geomspace(1e-2, 50.0, 200)
    rng = np.random.default_rng(31)
    for _ in range(20):
        r1 = rng.uniform(0.0, 1.0, len(grid))
        r2 = np.minimum(r1 + rng.uniform(0.0, 1.0, len(grid)), 1.0)
        m1 = GridFunction(grid, r1 * grid)
        m2 = GridFunction(grid, r2 * grid)
        k1 = apply_operator(m1, kernel)
        k2 = apply_operator(m2, kernel)
        assert np.all(k1.values <= k2.values + 1e-9)


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
def test_operator_maps_class_i_into_itself(kernel):
    grid = np.geomspace(1e-2, 50.0, 120)
    rng = np.random.default_rng(5)
    m = GridFunction(grid, rng.uniform(0.0, 1.0, len(grid)) * grid)
    km = apply_operator(m, kernel)
    assert np.all(km.values >= -1e-12)
    assert np.all(km.values <= grid * (1 + 1e-9))


@given(scale=st.floats(0.1, 1.0))
@settings(max_examples=20, deadline=None)
def test_operator_homogeneous_in_scaling(scale):
    """K is linear: K(c M) = c K(M) for constants c in [0, 1]."""
    grid = np.geomspace(0.1, 20.0, 60)
    ker = bk.AffineDropKernel()
    m = GridFunction.identity(grid)
    k1 = apply_operator(GridFunction(grid, scale * m.values), ker)
    k2 = apply_operator(m, ker)
    assert np.allclose(k1.values, scale * k2.values, rtol=1e-9, atol=1e-12)


# --- subsolution certificates -------------------------------------------------

def test_call_function_certified_on_affine_drop():
    # (x-3)^+ is convex, so Jensen makes it a subsolution of any
    # martingale kernel: the certificate must hold on the whole grid.
    grid = np.geomspace(0.5, 40.0, 160)
    ok, margin, arg = bk.certify_subsolution(bk.CallFunction(3.0),
                                             bk.AffineDropKernel(), grid)
    assert ok
    assert margin >= -1e-9
    # below x = 1.5 the whole one-step support sits under the strike, so
    # the margin is exactly zero there: that's where the minimum binds
    assert arg <= 1.5


def test_call_margin_matches_hand_value_at_six():
    # At x = 6 the affine-drop density is 2/21 on [6, 12] and the atom
    # sits at 2 < 3, so K((y-3)^+)(6) = (2/21) * [(y-3)^2/2]_6^12 = 24/7
    # and the margin is 24/7 - 3 = 3/7.
    ok, margin, arg = bk.certify_subsolution(bk.CallFunction(3.0),
                                             bk.AffineDropKernel(),
                                             np.array([6.0]))
    assert ok
    assert arg == 6.0
    assert margin == pytest.approx(3.0 / 7.0, abs=1e-9)


def test_supersolution_is_not_certified():
    # The identity is a strict supersolution for a mass-losing kernel:
    # K(id) < id wherever the kernel loses mass, so certification fails.
    grid = np.geomspace(0.5, 40.0, 80)
    ker = bk.double_or_floor_kernel(0.5)
    excess = GridFunction(grid, grid * 1.0)
    ok, margin, _arg = bk.certify_subsolution(excess, ker, grid)
    assert not ok
    assert margin < 0
