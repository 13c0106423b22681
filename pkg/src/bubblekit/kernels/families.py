"""Built-in kernel families.

Every family is a martingale kernel: mass 1 and mean x at each valid
state.  Families whose natural description only covers [x, inf) (a
density of "where the process goes when it does not fall") are completed
with a single balancing atom strictly below the diagonal at

    y* = (x - mean_above) / (1 - mass_above),    weight 1 - mass_above,

which restores mass and mean without touching anything the down-move
diagnostics or the fixed-point operator read on [x, inf).
"""

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import ndtr, ndtri

from ..errors import KernelInvariantError
from ..quadrature import integrate
from .base import MarkovKernel

_TINY = np.finfo(float).tiny
_UCLIP = 1e-16


class TwoPointKernel(MarkovKernel):
    """Kernel with one down atom and one up atom at every state.

    Parameterized by the down probability profile a(x) and the relative
    recovery profile b(x): the two atoms sit at b(x)x/a(x) (weight a(x))
    and (1-b(x))x/(1-a(x)) (weight 1-a(x)), which pins mass and mean by
    construction.  States where the two atoms coincide (b = a forces both
    onto x) are absorbing and consume no randomness when sampled.
    """

    kind = "two-point-complete"
    has_density = False

    def __init__(self, prob_down_fn, recovery_fn, state_floor=0.0):
        self._a = prob_down_fn if callable(prob_down_fn) else (
            lambda x, _v=float(prob_down_fn): np.full_like(np.asarray(x, float), _v))
        self._b = recovery_fn if callable(recovery_fn) else (
            lambda x, _v=float(recovery_fn): np.full_like(np.asarray(x, float), _v))
        self.state_floor = state_floor

    def coefficients(self, x):
        """(a(x), b(x)) profiles, vectorized; checked to 0 <= b <= a < 1."""
        x = np.asarray(x, dtype=float)
        a = np.asarray(self._a(x), dtype=float)
        b = np.asarray(self._b(x), dtype=float)
        bad = ~((b >= 0) & (b <= a) & (a < 1))
        if np.any(bad):
            i = int(np.argmax(np.atleast_1d(bad)))
            xv = np.atleast_1d(x)[i]
            raise KernelInvariantError(
                f"two-point profiles violate 0 <= b <= a < 1 at state "
                f"{xv:g}: a={np.atleast_1d(a)[i]:g}, b={np.atleast_1d(b)[i]:g}")
        if np.any((a > 0) & (b == 0)):
            raise KernelInvariantError(
                "two-point kernel needs b > 0 wherever a > 0 "
                "(down atom at 0 is not a positive state)")
        return a, b

    def atoms(self, x):
        a, b = self.coefficients(x)
        a, b = float(a), float(b)
        if a == 0.0:
            return [(x, 1.0)]
        down = b * x / a
        up = (1.0 - b) * x / (1.0 - a)
        if down == up:            # absorbing state (b = a)
            return [(x, 1.0)]
        return [(down, a), (up, 1.0 - a)]

    def _branch_values(self, x):
        a, b = self.coefficients(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            down = np.where(a > 0, b * x / np.where(a > 0, a, 1.0), x)
            up = (1.0 - b) * x / (1.0 - a)
        return a, down, up

    def absorbed_mask(self, x):
        _a, down, up = self._branch_values(np.asarray(x, dtype=float))
        return down == up

    def sample_steps(self, x, streams, lanes):
        x = np.asarray(x, dtype=float)
        a, down, up = self._branch_values(x)
        out = x.copy()
        live = down != up          # absorbing lanes consume no uniforms
        idx = np.flatnonzero(live)
        if idx.size:
            u = streams.take(lanes[idx])
            out[idx] = np.where(u < a[idx], down[idx], up[idx])
        return out


def double_or_floor_kernel(floor=0.5):
    """Two-point kernel that falls to a fixed floor or rallies, 50/50.

    a(x) = 1/2 and b(x) = floor/(2x): the down atom is pinned at ``floor``
    and the up atom at 2x - floor.  Valid for states x >= floor; the floor
    itself is absorbing.
    """
    if floor <= 0:
        raise ValueError("floor must be positive")
    return TwoPointKernel(0.5, lambda x: floor / (2.0 * np.asarray(x, float)),
                          state_floor=floor)


def binomial_kernel(up=1.5, down=0.5, p_up=0.5):
    """Two-point kernel with constant multiplicative factors.

    Requires the martingale balance p_up*up + (1-p_up)*down = 1.
    """
    if not (0 < p_up < 1 and 0 < down < 1 < up):
        raise ValueError("need 0 < down < 1 < up and p_up in (0, 1)")
    if abs(p_up * up + (1 - p_up) * down - 1.0) > 1e-12:
        raise KernelInvariantError(
            "binomial factors are not mean-one: "
            f"{p_up}*{up} + {1-p_up}*{down} != 1")
    a = 1.0 - p_up
    return TwoPointKernel(a, a * down)


class DegenerateKernel(MarkovKernel):
    """The kernel that stays put: K(x, .) = point mass at x."""

    kind = "degenerate"
    has_density = False

    def atoms(self, x):
        return [(x, 1.0)]

    def absorbed_mask(self, x):
        return np.ones(np.asarray(x, dtype=float).shape, dtype=bool)

    def sample_steps(self, x, streams, lanes):
        return np.asarray(x, dtype=float).copy()


class AffineDropKernel(MarkovKernel):
    """Uniform density 2/(3(x+1)) on [x, 2x], completed below.

    The balancing atom lands at 3x/(3+x) with weight (3+x)/(3(1+x)), so
    the down-move probability decays to 1/3 and the relative recovery to
    0 like 1/x while x*b(x) stays bounded by 1.
    """

    kind = "affine-drop"
    has_density = True

    def atoms(self, x):
        return [(3.0 * x / (3.0 + x), (3.0 + x) / (3.0 * (1.0 + x)))]

    def density(self, x, y):
        y = np.asarray(y, dtype=float)
        inside = (y >= x) & (y <= 2.0 * x)
        return np.where(inside, 2.0 / (3.0 * (x + 1.0)), 0.0)

    def support(self, x):
        return (x, 2.0 * x)

    def sample_steps(self, x, streams, lanes):
        x = np.asarray(x, dtype=float)
        u = streams.take(lanes)
        w = (3.0 + x) / (3.0 * (1.0 + x))
        body = x * (1.0 + (u - w) / (1.0 - w))
        return np.where(u < w, 3.0 * x / (3.0 + x), body)


# ---------------------------------------------------------------------------
# exponential-ratio family


def _er_quad_pair(x):
    """(mass_above, mean_above) of the raw density by quadrature.

    Uses the substitution y = x t so the integrand stays O(1) for tiny x.
    """
    pref = 0.5 * np.e * (-np.expm1(-x))

    def mass_ig(t):
        return pref * np.exp(-t) / (-np.expm1(-x * t))

    def mean_ig(t):
        return pref * x * t * np.exp(-t) / (-np.expm1(-x * t))

    top = 80.0
    mass = integrate(mass_ig, 1.0, top)
    mean = integrate(mean_ig, 1.0, top)
    return mass, mean


def _er_residual_mean_series(x, terms=40):
    """x - mean_above with the e^{-x} factor pulled out (no cancellation).

    mean_above(x) = x(1 - e^{-x}) + sum over the m >= 1 geometric tail of
    the ratio expansion; valid and exponentially convergent for x >= 6.
    """
    m = np.arange(1, terms + 1, dtype=float)
    cm = m + 1.0 / x
    s = np.sum(np.exp(-(m - 1.0) * x) * (x / cm + 1.0 / cm ** 2))
    return np.exp(-x) * (x - 0.5 * (-np.expm1(-x)) / x * s)


_ER_SERIES_FROM = 8.0


def _er_completion_exact(x):
    """(atom location, atom weight) for the exponential-ratio kernel.

    Source of truth: adaptive quadrature below the series crossover,
    cancellation-free series above it.
    """
    mass_above, mean_above = _er_quad_pair(x)
    weight = 1.0 - mass_above
    if x >= _ER_SERIES_FROM:
        resid_mean = _er_residual_mean_series(x)
    else:
        resid_mean = x - mean_above
    loc = max(resid_mean / weight, _TINY)
    return loc, weight


class _ERTables:
    """Once-per-process splines of the completion integrals in log-state."""

    U_LO, U_HI, N = np.log(1e-12), np.log(200.0), 1536

    def __init__(self):
        u = np.linspace(self.U_LO, self.U_HI, self.N)
        xs = np.exp(u)
        mass = np.empty(self.N)
        logb = np.empty(self.N)
        for i, x in enumerate(xs):
            ma, me = _er_quad_pair(x)
            mass[i] = ma
            resid = (_er_residual_mean_series(x) if x >= _ER_SERIES_FROM
                     else x - me)
            logb[i] = np.log(resid / x)
        self.mass_above = CubicSpline(u, mass)
        self.log_recovery = CubicSpline(u, logb)
        self.edge = (mass[0], logb[0])

    def completion(self, x):
        """Vectorized (atom location, weight); table + asymptotic tails."""
        x = np.asarray(x, dtype=float)
        u = np.log(np.maximum(x, _TINY))
        inside = np.clip(u, self.U_LO, self.U_HI)
        mass = np.where(u < self.U_LO, self.edge[0], self.mass_above(inside))
        logb = np.where(u < self.U_LO, self.edge[1], self.log_recovery(inside))
        # beyond the table the density ratio is 1 up to e^{-x}: closed tails
        far = u > self.U_HI
        if np.any(far):
            xf = x[far]
            mass = np.array(mass, copy=True)
            logb = np.array(logb, copy=True)
            mass[far] = 0.5 * (-np.expm1(-xf))
            with np.errstate(divide="ignore"):
                logb[far] = -xf  # b ~ e^{-x}; location clamps at _TINY anyway
        weight = 1.0 - mass
        loc = np.maximum(x * np.exp(logb) / weight, _TINY)
        return loc, weight


_ER_TABLES = None


def _er_tables():
    global _ER_TABLES
    if _ER_TABLES is None:
        _ER_TABLES = _ERTables()
    return _ER_TABLES


class ExponentialRatioKernel(MarkovKernel):
    """Density (e/2) ((1-e^{-x})/(1-e^{-y})) (1/x) e^{-y/x} on [x, inf).

    All explicit mass goes (weakly) up; the balancing atom carries the
    down-move.  The down probability stays above 1/2 at every state while
    x b(x) <= x e^{-x} <= 1/e, the regime where the fixed-point operator
    is a contraction.  Sampling uses the exact envelope k <= g/2 with
    g = shifted Exp(1/x): with one branch uniform and one proposal round
    the fall-through probability is exactly the atom weight, so no
    completion integral enters the accept/reject path.
    """

    kind = "exponential-ratio"
    has_density = True

    def atoms(self, x):
        loc, w = _er_completion_exact(float(x))
        return [(loc, w)]

    def density(self, x, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        inside = y >= x
        if np.any(inside):
            yy = y[inside]
            out[inside] = (0.5 * np.e * (-np.expm1(-x)) / (-np.expm1(-yy))
                           / x * np.exp(-yy / x))
        return out

    def support(self, x):
        return (x, 30.0 * x)

    def sample_steps(self, x, streams, lanes):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        u0 = streams.take(lanes)
        branch = np.flatnonzero(u0 < 0.5)
        settle = np.flatnonzero(u0 >= 0.5)
        accepted = np.zeros(len(x), dtype=bool)
        if branch.size:
            u1 = streams.take(lanes[branch])
            u2 = streams.take(lanes[branch])
            y = x[branch] * (1.0 - np.log1p(-u1))
            ratio = np.expm1(-x[branch]) / np.expm1(-y)
            ok = u2 <= ratio
            out[branch[ok]] = y[ok]
            accepted[branch[ok]] = True
        rest = np.concatenate((settle, branch[~accepted[branch]]))
        if rest.size:
            loc, _w = _er_tables().completion(x[rest])
            out[rest] = loc
        return out


# ---------------------------------------------------------------------------


class GaussianLogStepKernel(MarkovKernel):
    """Multiplicative lognormal step with state-dependent volatility.

    log(S_1/x) ~ Normal(-sigma^2/2, sigma^2) with sigma = sigma(log x).
    Closed-form diagnostics: a(x) = Phi(sigma/2) and b_eps(x) =
    Phi(log(1+eps)/sigma - sigma/2); the quadrature path reproduces both
    (pinned in tests).  Sampling is exact with one uniform per step.
    """

    kind = "gaussian-log-step"
    has_density = True
    _ZCUT = 8.5

    def __init__(self, sigma=1.0, state_floor=0.0):
        if callable(sigma):
            self._sigma = sigma
        else:
            sv = float(sigma)
            if sv <= 0:
                raise ValueError("sigma must be positive")
            self._sigma = lambda u, _v=sv: np.full_like(np.asarray(u, float), _v)
        self.state_floor = state_floor

    def sigma_at(self, x):
        x = np.asarray(x, dtype=float)
        s = np.asarray(self._sigma(np.log(x)), dtype=float)
        if np.any(s <= 0):
            raise KernelInvariantError("sigma(log x) must stay positive")
        return s

    def density(self, x, y):
        s = float(self.sigma_at(x))
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        pos = y > 0
        z = (np.log(y[pos] / x) + 0.5 * s * s) / s
        out[pos] = np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * s * y[pos])
        return out

    def support(self, x):
        s = float(self.sigma_at(x))
        # upper cut covers the mean integrand's lognormal tilt as well
        return (x * np.exp(-0.5 * s * s - self._ZCUT * s),
                x * np.exp(0.5 * s * s + self._ZCUT * s))

    def sample_steps(self, x, streams, lanes):
        x = np.asarray(x, dtype=float)
        s = self.sigma_at(x)
        u = np.clip(streams.take(lanes), _UCLIP, 1.0 - _UCLIP)
        return x * np.exp(s * ndtri(u) - 0.5 * s * s)


class TabulatedKernel(MarkovKernel):
    """Kernel density given on a rectangular (state, ordinate) table.

    Values are interpolated bilinearly in log-log coordinates and treated
    as zero outside the tabulated ordinate range.  When ``completion`` is
    "atom" the table only needs to describe the density on [x, inf); the
    usual balancing atom is added per state (and must land strictly below
    the diagonal).  With "none" the table itself must integrate to a
    martingale kernel at validation tolerance.
    """

    kind = "tabulated"
    has_density = True

    def __init__(self, states, ordinates, values, completion="atom"):
        states = np.asarray(states, dtype=float)
        ordinates = np.asarray(ordinates, dtype=float)
        values = np.asarray(values, dtype=float)
        if states.ndim != 1 or ordinates.ndim != 1:
            raise ValueError("states and ordinates must be 1-d")
        if values.shape != (len(states), len(ordinates)):
            raise ValueError("values must have shape (len(states), len(ordinates))")
        if np.any(states <= 0) or np.any(np.diff(states) <= 0):
            raise ValueError("states must be positive and increasing")
        if np.any(ordinates <= 0) or np.any(np.diff(ordinates) <= 0):
            raise ValueError("ordinates must be positive and increasing")
        if np.any(values < 0):
            raise KernelInvariantError("tabulated density has negative entries")
        if completion not in ("atom", "none"):
            raise ValueError("completion must be 'atom' or 'none'")
        self._lx = np.log(states)
        self._ly = np.log(ordinates)
        self._v = values
        self._ylim = (ordinates[0], ordinates[-1])
        self.completion = completion
        self.state_floor = states[0]
        self.state_ceiling = states[-1]
        self._atom_cache = {}

    def _row(self, x):
        lx = np.log(x)
        if not (self._lx[0] - 1e-12 <= lx <= self._lx[-1] + 1e-12):
            raise KernelInvariantError(
                f"tabulated kernel queried at state {x:g} outside its "
                f"table range [{np.exp(self._lx[0]):g}, {np.exp(self._lx[-1]):g}]")
        i = np.clip(np.searchsorted(self._lx, lx) - 1, 0, len(self._lx) - 2)
        t = np.clip((lx - self._lx[i]) / (self._lx[i + 1] - self._lx[i]), 0.0, 1.0)
        return (1.0 - t) * self._v[i] + t * self._v[i + 1]

    def density(self, x, y):
        row = self._row(float(x))
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        pos = (y >= self._ylim[0]) & (y <= self._ylim[1])
        if np.any(pos):
            out[pos] = np.interp(np.log(y[pos]), self._ly, row)
        return out

    def support(self, x):
        return self._ylim

    def density_moment(self, x, lo, hi, power=0, tol=None):
        """Exact integral of y^power k(x, y) over [lo, hi].

        At fixed x the density is piecewise linear in t = log y, so each
        ordinate segment contributes a closed-form e^{(power+1) t}
        primitive; no adaptive quadrature, no kink trouble.
        """
        lo = max(lo, self._ylim[0])
        hi = min(hi, self._ylim[1])
        if hi <= lo:
            return 0.0
        row = self._row(float(x))
        ly = self._ly
        ta_all, tb_all = np.log(lo), np.log(hi)
        q = power + 1
        i0 = max(int(np.searchsorted(ly, ta_all, side="right")) - 1, 0)
        i1 = min(int(np.searchsorted(ly, tb_all, side="left")),
                 len(ly) - 1)
        total = 0.0
        for i in range(i0, i1):
            ta = max(ta_all, ly[i])
            tb = min(tb_all, ly[i + 1])
            if tb <= ta:
                continue
            a = row[i]
            slope = (row[i + 1] - row[i]) / (ly[i + 1] - ly[i])

            def prim(t):
                lin = a + slope * (t - ly[i])
                return np.exp(q * t) * (lin / q - slope / (q * q))

            total += prim(tb) - prim(ta)
        return float(total)

    def atoms(self, x):
        if self.completion == "none":
            return []
        key = float(x)
        hit = self._atom_cache.get(key)
        if hit is not None:
            return [hit]
        mass_tab = self.density_moment(x, self._ylim[0], self._ylim[1], 0)
        mean_tab = self.density_moment(x, self._ylim[0], self._ylim[1], 1)
        w = 1.0 - mass_tab
        if w <= 0:
            raise KernelInvariantError(
                f"tabulated density already carries mass {mass_tab:g} >= 1 "
                f"at state {x:g}; cannot complete")
        loc = (x - mean_tab) / w
        if not (0 < loc < x):
            raise KernelInvariantError(
                f"completion atom at state {x:g} lands at {loc:g}, not "
                "strictly below the diagonal; the tabulated density is too "
                "heavy above the diagonal to balance (refine the table)")
        if len(self._atom_cache) > 4096:
            self._atom_cache.clear()
        self._atom_cache[key] = (loc, w)
        return [(loc, w)]
