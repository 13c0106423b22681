"""Kernel family invariants: mass/mean conservation, diagnostics, sampling.

Every kernel in the library must be an exact one-step martingale kernel:
unit mass and mean x from every state x.  The diagnostics a(x) (strict
down-move probability) and b_eps(x) (relative recovery below x(1+eps))
have closed forms for the simple families, which anchor the generic
quadrature path.
"""

import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import bubblekit as bk
from bubblekit.errors import KernelInvariantError

STATES = st.floats(min_value=0.05, max_value=50.0,
                   allow_nan=False, allow_infinity=False)

DENSITY_KERNELS = [
    bk.AffineDropKernel(),
    bk.ExponentialRatioKernel(),
    bk.GaussianLogStepKernel(sigma=0.7),
]

ALL_KERNELS = DENSITY_KERNELS + [
    bk.double_or_floor_kernel(0.5),
    bk.binomial_kernel(1.5, 0.5, 0.5),
    bk.TwoPointKernel(0.5, lambda x: 0.25 / np.asarray(x, float)),
]


@pytest.mark.parametrize("kernel", ALL_KERNELS, ids=lambda k: k.kind)
@pytest.mark.parametrize("x", [0.5, 1.0, 4.0])
def test_mass_and_mean_conserved(kernel, x):
    mass, mean = kernel.mass_mean(x)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(x, abs=1e-8 * max(x, 1.0))


@pytest.mark.parametrize("kernel", ALL_KERNELS, ids=lambda k: k.kind)
def test_validate_accepts_built_ins(kernel):
    for x in (0.5, 1.0, 2.0, 8.0):
        kernel.validate(x)


def test_validate_rejects_broken_kernel():
    class Drifting(bk.MarkovKernel):
        kind = "drifting"
        has_density = False

        def atoms(self, x):
            return [(0.5 * x, 0.5), (2.0 * x, 0.5)]  # mean 1.25x, not x

    with pytest.raises(KernelInvariantError):
        Drifting().validate(1.0)


# --- closed-form diagnostics ------------------------------------------------

def test_affine_drop_diagnostics_closed_form():
    # density 2/(3(x+1)) on [x, 2x] plus one sub-diagonal atom:
    # a(x) = (x+3)/(3(x+1)), and the atom sits at (x+3)/... * loc < x
    # with b(x) = loc * a(x) / x.
    ker = bk.AffineDropKernel()
    for x in (0.5, 1.0, 6.0):
        a = bk.probability_down(ker, x)
        assert a == pytest.approx((x + 3) / (3 * (x + 1)), rel=1e-10)
        (loc, w), = ker.atoms(x)
        assert loc < x and w == pytest.approx(a, rel=1e-12)
        b = bk.relative_recovery(ker, x, 0.0)
        assert b == pytest.approx(loc * w / x, rel=1e-10)


def test_double_or_floor_diagnostics():
    ker = bk.double_or_floor_kernel(0.5)
    # From x > floor: down to 0.5 w.p. 1/2, up to 2x w.p. 1/2.
    assert bk.probability_down(ker, 2.0) == pytest.approx(0.5)
    assert bk.relative_recovery(ker, 2.0, 0.0) == pytest.approx(0.125)
    # At the floor itself the "down" branch is not a strict decrease.
    assert bk.probability_down(ker, 0.5) == 0.0


def test_exponential_ratio_diagnostics_oracle():
    # Independent quadrature of the displayed density at x = 1:
    # a(1) = 1 - mass_above, b(1) = 1 - mean_above with
    # density (e/2)(1-e^{-1})e^{-y}/(1-e^{-y}) on [1, inf).
    from scipy.integrate import quad

    pref = 0.5 * np.e * (1.0 - np.exp(-1.0))
    mass_above = quad(lambda y: pref * np.exp(-y) / (1 - np.exp(-y)),
                      1.0, np.inf, limit=400)[0]
    mean_above = quad(lambda y: y * pref * np.exp(-y) / (1 - np.exp(-y)),
                      1.0, np.inf, limit=400)[0]
    ker = bk.ExponentialRatioKernel()
    assert bk.probability_down(ker, 1.0) == pytest.approx(
        1.0 - mass_above, rel=1e-8)
    assert bk.relative_recovery(ker, 1.0, 0.0) == pytest.approx(
        1.0 - mean_above, rel=1e-8)


@given(x=STATES, eps1=st.floats(0.0, 1.0), eps2=st.floats(0.0, 1.0))
@settings(max_examples=60, deadline=None)
def test_recovery_monotone_in_eps(x, eps1, eps2):
    """b_eps(x) is nondecreasing in eps: a larger cut collects more mass."""
    lo, hi = sorted((eps1, eps2))
    ker = bk.AffineDropKernel()
    assert (bk.relative_recovery(ker, x, lo)
            <= bk.relative_recovery(ker, x, hi) + 1e-12)


@given(x=STATES)
@settings(max_examples=40, deadline=None)
def test_down_probability_dominates_recovery(x):
    """0 <= b(x) <= a(x) < 1 for every state."""
    ker = bk.ExponentialRatioKernel()
    a = bk.probability_down(ker, x)
    b = bk.relative_recovery(ker, x, 0.0)
    assert 0.0 <= b <= a + 1e-12
    assert a < 1.0


def test_diagnose_rows_match_pointwise_calls():
    ker = bk.AffineDropKernel()
    xs = np.array([0.5, 1.0, 2.0, 4.0])
    diag = bk.diagnose(ker, xs, eps=0.5)
    for row, x in zip(diag.rows(), xs):
        assert row[0] == pytest.approx(x)
        assert row[1] == pytest.approx(bk.probability_down(ker, x), rel=1e-9)
        assert row[2] == pytest.approx(bk.relative_recovery(ker, x, 0.0),
                                       rel=1e-9)
        assert row[3] == pytest.approx(bk.relative_recovery(ker, x, 0.5),
                                       rel=1e-9)


# --- sampling ---------------------------------------------------------------

@pytest.mark.parametrize("kernel", DENSITY_KERNELS, ids=lambda k: k.kind)
def test_sample_step_matches_cdf(kernel):
    """One-step samples follow the kernel law.

    Atoms and density are checked separately (one-sample KS assumes a
    continuous law): atom frequencies within 5 sigma of their weights,
    and the non-atom draws against the normalized body CDF.
    """
    from scipy import stats

    rng = np.random.default_rng(42)
    n = 5000
    draws = np.array([bk.sample_step(kernel, 1.0, rng) for _ in range(n)])
    atoms = kernel.atoms(1.0)
    w_tot = sum(w for _loc, w in atoms)
    body = np.ones(n, dtype=bool)
    for loc, w in atoms:
        at = np.isclose(draws, loc, rtol=1e-9, atol=0.0)
        body &= ~at
        assert at.mean() == pytest.approx(
            w, abs=5 * np.sqrt(w * (1 - w) / n) + 1e-12)

    def body_cdf(z):
        z = np.atleast_1d(z)
        dens = np.array([kernel.cdf(1.0, zz)
                         - sum(w for loc, w in atoms if loc <= zz)
                         for zz in z])
        return dens / (1.0 - w_tot)

    stat = stats.kstest(draws[body], body_cdf).statistic
    assert stat < 0.035


def test_sample_step_two_point_exact_support():
    ker = bk.double_or_floor_kernel(0.5)
    rng = np.random.default_rng(7)
    draws = {bk.sample_step(ker, 1.0, rng) for _ in range(200)}
    assert draws <= {0.5, 1.5}
    assert len(draws) == 2


# --- tabulated kernels ------------------------------------------------------

def _affine_table(n_states=17, n_ords=200):
    ad = bk.AffineDropKernel()
    states = np.geomspace(0.5, 8.0, n_states)
    ords = np.geomspace(0.4, 16.5, n_ords)
    vals = np.array([[float(ad.density(x, y)) for y in ords] for x in states])
    return states, ords, vals


def test_tabulated_kernel_is_martingale_everywhere():
    """Atom completion balances every interpolated state exactly."""
    states, ords, vals = _affine_table()
    tk = bk.TabulatedKernel(states, ords, vals)
    for x in np.geomspace(0.5, 8.0, 25):
        mass, mean = tk.mass_mean(float(x))
        assert mass == pytest.approx(1.0, abs=1e-9)
        assert mean == pytest.approx(float(x), abs=1e-9 * max(x, 1.0))
        (loc, w), = tk.atoms(float(x))
        assert 0.0 < loc < x and 0.0 < w < 1.0


def test_tabulated_moments_match_quadrature():
    """The piecewise-log-linear closed-form moments agree with quadrature."""
    from scipy.integrate import quad

    states, ords, vals = _affine_table()
    tk = bk.TabulatedKernel(states, ords, vals)
    x = 4.0
    for power in (0, 1):
        exact = tk.density_moment(x, 2.0, 9.0, power=power)
        brute = 0.0
        edges = np.geomspace(2.0, 9.0, 60)
        for lo, hi in zip(edges[:-1], edges[1:]):
            brute += quad(lambda y: tk.density(x, y) * y ** power,
                          lo, hi, limit=200)[0]
        assert exact == pytest.approx(brute, rel=1e-7)


def test_tabulated_tracks_source_kernel_diagnostics():
    states, ords, vals = _affine_table()
    tk = bk.TabulatedKernel(states, ords, vals)
    ad = bk.AffineDropKernel()
    for x in (0.6, 1.0, 4.0):
        assert bk.probability_down(tk, x) == pytest.approx(
            bk.probability_down(ad, x), abs=5e-3)
        assert bk.relative_recovery(tk, x, 0.0) == pytest.approx(
            bk.relative_recovery(ad, x, 0.0), abs=1e-2)


def test_tabulated_rejects_unbalanceable_table():
    # A table whose density mean already exceeds the state cannot be
    # completed by a sub-diagonal atom.
    states = np.array([1.0, 2.0])
    ords = np.geomspace(0.5, 8.0, 50)
    vals = np.zeros((2, 50))
    for i, x in enumerate(states):
        inside = (ords >= 1.5 * x) & (ords <= 2.0 * x)
        vals[i, inside] = 2.0 / np.ptp(ords[inside])
    tk = bk.TabulatedKernel(states, ords, vals)
    with pytest.raises(KernelInvariantError):
        tk.atoms(1.0)


def test_tabulated_roundtrip_through_csv(tmp_path):
    from bubblekit.config import load_tabulated_csv

    states, ords, vals = _affine_table(9, 80)
    path = tmp_path / "table.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [repr(float(y)) for y in ords])
        for x, row in zip(states, vals):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in row])
    s2, o2, v2 = load_tabulated_csv(str(path))
    np.testing.assert_array_equal(s2, states)
    np.testing.assert_array_equal(o2, ords)
    np.testing.assert_array_equal(v2, vals)
