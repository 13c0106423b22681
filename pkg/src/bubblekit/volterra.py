"""Default-function solvers: the fixed-point equation on [x, inf).

The expected drawdown loss M(x) = x - E_x[S at the first strict drop]
solves M(x) = integral over [x, inf) of M(y) K(x, dy).  Solutions are
sought in the class I of grid functions with 0 <= M(x) <= x.

Discretization: values live on a log-spaced grid; between nodes the ratio
M(x)/x is interpolated linearly in log x, and beyond the top node the
ratio is frozen (call-style payoffs below the grid bottom never matter:
the operator only reads [x, inf)).  The operator is precomputed as panel
Gauss-Legendre rules in log-ordinate with panel edges pinned to the grid
nodes, so one application is an interpolation plus a dot product.

Two solvers:

* :func:`picard_from_identity` iterates downward from the identity, the
  maximal-solution construction;

* :func:`contraction_solve` runs the call-anchored iteration in deficit
  coordinates d(x) = x - M(x), where the map d -> x b(x) + K[d] is a
  sup-norm contraction with factor (1 - inf a); the tail closure freezes
  the deficit at the top node, which keeps the contraction argument
  intact on the truncated domain (ratio-frozen closure does not: kernels
  whose up-moves escape the grid then lose the contraction and the
  Picard scheme can stall, which it reports honestly).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (HypothesisViolationError, MonotonicityViolationError,
                     NonConvergenceError, TailMassError)
from .kernels.base import probability_down, relative_recovery
from .quadrature import QUAD_TOL, integrate, log_grid, panel_rule_log, subdivided_edges

__all__ = [
    "GridFunction", "CallFunction", "SolveReport", "DefaultOperator",
    "apply_operator", "picard_from_identity", "contraction_solve",
    "certify_subsolution", "default_ratio_profile", "log_grid",
]

#: slack for monotonicity checks of Picard iterates, scaled by max(1, x)
MONOTONE_SLACK = 1e-9


class GridFunction:
    """Function in the class I (0 <= M(x) <= x) sampled on a log grid.

    Evaluation interpolates the ratio M/x linearly in log x and freezes
    the ratio beyond either end of the grid.
    """

    __slots__ = ("grid", "values", "_u", "_ratio")

    def __init__(self, grid, values, clamp=False):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or len(grid) < 2:
            raise ValueError("grid must be 1-d with at least 2 nodes")
        if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be positive and strictly increasing")
        if values.shape != grid.shape:
            raise ValueError("values must match the grid shape")
        if clamp:
            values = np.clip(values, 0.0, grid)
        elif np.any(values < 0) or np.any(values > grid * (1 + 1e-12) + 1e-300):
            raise ValueError("values must lie in [0, x] on the grid")
        self.grid = grid
        self.values = values
        self._u = np.log(grid)
        self._ratio = values / grid

    @classmethod
    def identity(cls, grid):
        grid = np.asarray(grid, dtype=float)
        return cls(grid, grid.copy())

    @classmethod
    def zero(cls, grid):
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.zeros_like(grid))

    @classmethod
    def from_callable(cls, grid, fn, clamp=True):
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.asarray([fn(x) for x in grid], dtype=float),
                   clamp=clamp)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        r = np.interp(np.log(np.maximum(y, 1e-300)), self._u, self._ratio)
        return r * y

    def ratio(self):
        return self._ratio.copy()

    def rel_distance(self, other):
        """Relative sup distance max |M - N| / x on the shared grid."""
        if not np.array_equal(other.grid, self.grid):
            raise ValueError("grid functions live on different grids")
        return float(np.max(np.abs(self.values - other.values) / self.grid))


class CallFunction:
    """Call payoff (x - anchor)^+ with its kink advertised for quadrature."""

    def __init__(self, anchor):
        if anchor < 0:
            raise ValueError("anchor must be nonnegative")
        self.anchor = float(anchor)
        self.kinks = (self.anchor,)

    def __call__(self, y):
        return np.maximum(np.asarray(y, dtype=float) - self.anchor, 0.0)


@dataclass
class SolveReport:
    """Outcome bookkeeping for a solver run (JSON-ready via to_json_dict)."""

    converged: bool
    iterations: int
    sup_residual: float
    last_delta: float
    monotone: bool
    scheme: str
    contraction_observed: float | None = None
    alpha: float | None = None
    beta: float | None = None
    hypothesis_source: str | None = None
    notes: dict = field(default_factory=dict)

    def to_json_dict(self):
        out = {
            "converged": self.converged,
            "iterations": self.iterations,
            "sup_residual": self.sup_residual,
            "last_delta": self.last_delta,
            "monotone": self.monotone,
            "scheme": self.scheme,
        }
        if self.contraction_observed is not None:
            out["contraction_observed"] = self.contraction_observed
        if self.alpha is not None:
            out["alpha"] = self.alpha
            out["beta"] = self.beta
            out["hypothesis_source"] = self.hypothesis_source
        if self.notes:
            out["notes"] = self.notes
        return out


class DefaultOperator:
    """Precomputed discretization of M -> integral of M(y) K(x, dy), y >= x.

    Per grid node the sub-probability measure K(x_j, dy) restricted to
    [x_j, inf) is reduced to atoms plus weighted quadrature nodes; one
    operator application per evaluator is then a vectorized interpolation
    and a segmented dot product.
    """

    def __init__(self, kernel, grid, order=16, max_tail_mass=None):
        grid = np.asarray(grid, dtype=float)
        if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be positive and strictly increasing")
        self.kernel = kernel
        self.grid = grid
        top = grid[-1]
        nodes_all = []
        wd_all = []
        indptr = [0]
        atom_locs, atom_ws, atom_ptr = [], [], [0]
        escape = np.zeros(len(grid))
        for j, x in enumerate(grid):
            for loc, w in kernel.atoms(x):
                if loc >= x:
                    atom_locs.append(loc)
                    atom_ws.append(w)
                    if loc > top:
                        escape[j] += w
            atom_ptr.append(len(atom_locs))
            n_added = 0
            if kernel.has_density:
                lo, hi = kernel.support(x)
                lo = max(lo, x)
                if hi > lo:
                    edges = subdivided_edges(lo, hi, grid)
                    yn, wn = panel_rule_log(edges, order=order)
                    dens = kernel.density(x, yn)
                    wd = wn * dens
                    nodes_all.append(yn)
                    wd_all.append(wd)
                    escape[j] += float(wd[yn > top].sum())
                    n_added = len(yn)
            indptr.append(indptr[-1] + n_added)
        self._nodes = (np.concatenate(nodes_all) if nodes_all
                       else np.empty(0))
        self._wd = np.concatenate(wd_all) if wd_all else np.empty(0)
        self._indptr = np.asarray(indptr)
        self._atom_locs = np.asarray(atom_locs, dtype=float)
        self._atom_ws = np.asarray(atom_ws, dtype=float)
        self._atom_ptr = np.asarray(atom_ptr)
        self.tail_mass = escape
        if max_tail_mass is not None and np.any(escape > max_tail_mass):
            j = int(np.argmax(escape))
            raise TailMassError(
                f"kernel mass {escape[j]:.3e} escapes the grid top from "
                f"state {grid[j]:g} (budget {max_tail_mass:.3e}); extend "
                "the grid", x=float(grid[j]), mass=float(escape[j]))

    def apply_to(self, evaluator):
        """Apply the operator to any vectorized evaluator y -> f(y)."""
        out = np.zeros(len(self.grid))
        if len(self._nodes):
            contrib = self._wd * evaluator(self._nodes)
            # reduceat needs in-range indices and yields garbage for empty
            # segments; clamp, then zero the empties
            idx = np.minimum(self._indptr[:-1], len(contrib) - 1)
            sums = np.add.reduceat(contrib, idx)
            sums[np.diff(self._indptr) == 0] = 0.0
            out += sums
        if len(self._atom_locs):
            av = self._atom_ws * evaluator(self._atom_locs)
            aidx = np.minimum(self._atom_ptr[:-1], len(av) - 1)
            asums = np.add.reduceat(av, aidx)
            asums[np.diff(self._atom_ptr) == 0] = 0.0
            out += asums
        return out

    def apply(self, M):
        """K applied to a GridFunction, clamped back into the class I."""
        vals = self.apply_to(M)
        return GridFunction(self.grid, np.clip(vals, 0.0, self.grid))


def apply_operator(M, kernel, operator=None, max_tail_mass=None):
    """One application of the default operator to a grid function."""
    op = operator or DefaultOperator(kernel, M.grid, max_tail_mass=max_tail_mass)
    return op.apply(M)


def _check_monotone(new, old, grid, direction, iteration):
    """direction=-1: expect new <= old; +1: expect new >= old."""
    slack = MONOTONE_SLACK * np.maximum(1.0, grid)
    drift = (new - old) * direction
    bad = drift < -slack
    if np.any(bad):
        j = int(np.argmax(bad))
        word = "increase" if direction < 0 else "decrease"
        raise MonotonicityViolationError(
            f"Picard iterate {iteration} shows a spurious {word} of "
            f"{-drift[j]:.3e} at grid node {j} (x = {grid[j]:g})", index=j)


def picard_from_identity(kernel, grid, tol=1e-9, max_iter=500,
                         max_tail_mass=None, operator=None):
    """Iterate K downward from the identity; the maximal-solution scheme.

    Returns (GridFunction, SolveReport).  Iterates must be nonincreasing
    (the identity is a supersolution); a violation beyond slack raises
    MonotonicityViolationError.  Failure to meet ``tol`` within
    ``max_iter`` raises NonConvergenceError carrying the report and the
    best iterate (``.best`` on the exception).
    """
    grid = np.asarray(grid, dtype=float)
    op = operator or DefaultOperator(kernel, grid, max_tail_mass=max_tail_mass)
    vals = grid.copy()
    deltas = []
    for it in range(1, max_iter + 1):
        nxt = np.clip(op.apply_to(GridFunction(grid, vals)), 0.0, grid)
        _check_monotone(nxt, vals, grid, -1, it)
        delta = float(np.max(np.abs(nxt - vals) / grid))
        deltas.append(delta)
        vals = nxt
        if delta <= tol:
            resid = float(np.max(np.abs(
                np.clip(op.apply_to(GridFunction(grid, vals)), 0, grid) - vals
            ) / grid))
            report = SolveReport(
                converged=True, iterations=it, sup_residual=resid,
                last_delta=delta, monotone=True, scheme="ratio-coordinates",
                contraction_observed=_observed_factor(deltas))
            return GridFunction(grid, vals), report
    report = SolveReport(
        converged=False, iterations=max_iter, sup_residual=deltas[-1],
        last_delta=deltas[-1], monotone=True, scheme="ratio-coordinates",
        contraction_observed=_observed_factor(deltas),
        notes={"trend_last_deltas": deltas[-5:]})
    err = NonConvergenceError(
        f"Picard iteration still moving {deltas[-1]:.3e} (rel sup) after "
        f"{max_iter} sweeps; tol {tol:.1e}.  Trend of last deltas: "
        + ", ".join(f"{d:.3e}" for d in deltas[-5:]), report=report)
    err.best = GridFunction(grid, vals)
    raise err


def _observed_factor(deltas):
    pairs = [(a, b) for a, b in zip(deltas, deltas[1:]) if a > 0]
    if not pairs:
        return None
    return float(max(b / a for a, b in pairs[-10:] if a > 0))


def contraction_solve(kernel, grid, tol=1e-9, max_iter=500, alpha=None,
                      beta=None, max_tail_mass=None, operator=None):
    """Call-anchored iteration in deficit coordinates d(x) = x - M(x).

    The hypotheses inf a = alpha > 0 and sup x b(x) = beta < infinity may
    be supplied (a user certificate) or measured on the grid; either way
    they are validated pointwise on the grid and recorded in the report.
    The iteration starts from the call deficit min(x, beta/alpha), whose
    payoff (x - beta/alpha)^+ is a subsolution, and contracts in the sup
    norm with factor at most (1 - alpha).
    """
    grid = np.asarray(grid, dtype=float)
    a_grid = np.array([probability_down(kernel, x) for x in grid])
    b_grid = np.array([relative_recovery(kernel, x, 0.0) for x in grid])
    source = "grid-estimated"
    if alpha is None:
        alpha = float(a_grid.min())
    else:
        source = "declared"
        low = float(a_grid.min())
        if low < alpha - 1e-12:
            raise HypothesisViolationError(
                f"declared down-move floor alpha = {alpha:g} is falsified "
                f"on the grid: min a = {low:.6g}")
    if beta is None:
        beta = float((grid * b_grid).max())
    else:
        high = float((grid * b_grid).max())
        if high > beta + 1e-12:
            raise HypothesisViolationError(
                f"declared recovery cap beta = {beta:g} is falsified on "
                f"the grid: max x b(x) = {high:.6g}")
    if alpha <= 0:
        raise HypothesisViolationError(
            "contraction needs a positive down-move floor; the grid shows "
            f"min a = {alpha:.3e}")
    anchor = beta / alpha
    if anchor > grid[-1] / 10:
        raise HypothesisViolationError(
            f"call anchor beta/alpha = {anchor:g} is not small against the "
            f"grid top {grid[-1]:g}; x b(x) does not look bounded (beta "
            f"{source} = {beta:g}).  Extend the grid or supply a certified "
            "beta")

    op = operator or DefaultOperator(kernel, grid, max_tail_mass=max_tail_mass)
    u = np.log(grid)
    # forcing term x b(x) at quadrature consistency: x - K[id]
    forcing = grid - op.apply_to(lambda y: np.asarray(y, dtype=float))

    def apply_deficit(d):
        reader = lambda y: np.interp(np.log(np.maximum(y, 1e-300)), u, d)
        return forcing + op.apply_to(reader)

    d = np.minimum(grid, anchor)
    deltas = []
    monotone = True
    for it in range(1, max_iter + 1):
        nxt = np.clip(apply_deficit(d), 0.0, grid)
        # call start is a subsolution: deficits should not increase
        slack = MONOTONE_SLACK * np.maximum(1.0, grid)
        if np.any(nxt - d > slack):
            monotone = False
        delta = float(np.max(np.abs(nxt - d) / grid))
        deltas.append(delta)
        d = nxt
        if delta <= tol:
            resid = float(np.max(np.abs(np.clip(apply_deficit(d), 0, grid) - d)
                                 / grid))
            report = SolveReport(
                converged=True, iterations=it, sup_residual=resid,
                last_delta=delta, monotone=monotone,
                scheme="deficit-coordinates",
                contraction_observed=_observed_factor(deltas),
                alpha=float(alpha), beta=float(beta),
                hypothesis_source=source)
            return GridFunction(grid, np.clip(grid - d, 0.0, grid)), report
    report = SolveReport(
        converged=False, iterations=max_iter, sup_residual=deltas[-1],
        last_delta=deltas[-1], monotone=monotone,
        scheme="deficit-coordinates",
        contraction_observed=_observed_factor(deltas), alpha=float(alpha),
        beta=float(beta), hypothesis_source=source,
        notes={"trend_last_deltas": deltas[-5:]})
    err = NonConvergenceError(
        f"deficit iteration still moving {deltas[-1]:.3e} after {max_iter} "
        f"sweeps (tol {tol:.1e}); observed contraction "
        f"{report.contraction_observed}", report=report)
    err.best = GridFunction(grid, np.clip(grid - d, 0.0, grid))
    raise err


def certify_subsolution(candidate, kernel, grid, slack=None, operator=None):
    """Check K(M) >= M - slack on the grid; returns (ok, margin, argmin_x).

    ``candidate`` is a GridFunction (checked through the shared panel
    operator) or an exact callable (checked by per-node adaptive
    quadrature, honoring a ``kinks`` attribute so payoff corners land on
    quadrature breakpoints).  The margin is min K(M) - M over the grid,
    positive for a strict subsolution.
    """
    grid = np.asarray(grid, dtype=float)
    if slack is None:
        slack = 10 * QUAD_TOL * np.maximum(1.0, grid)
    else:
        slack = np.broadcast_to(np.asarray(slack, dtype=float), grid.shape)
    if isinstance(candidate, GridFunction):
        op = operator or DefaultOperator(kernel, grid)
        kvals = op.apply_to(candidate)
        mvals = candidate.values
    else:
        kinks = tuple(getattr(candidate, "kinks", ()))
        kvals = np.empty(len(grid))
        mvals = np.asarray([float(candidate(x)) for x in grid])
        for j, x in enumerate(grid):
            total = 0.0
            for loc, w in kernel.atoms(x):
                if loc >= x:
                    total += w * float(candidate(loc))
            if kernel.has_density:
                lo, hi = kernel.support(x)
                lo = max(lo, x)
                if hi > lo:
                    total += integrate(
                        lambda y: candidate(y) * kernel.density(x, y),
                        lo, hi, points=kinks)
            kvals[j] = total
    gap = kvals - mvals
    j = int(np.argmin(gap))
    margin = float(gap[j])
    ok = bool(np.all(gap >= -slack))
    return ok, margin, float(grid[j])


def default_ratio_profile(M):
    """Ratio profile M(x)/x with its running maximum over the tail.

    Returns (x, ratio, tail_max) where tail_max[j] = max of ratio from j
    to the top of the grid; limsup of the ratio equal to 1 is the
    signature of a nontrivial default function.
    """
    ratio = M.ratio()
    tail_max = np.maximum.accumulate(ratio[::-1])[::-1]
    return M.grid.copy(), ratio, tail_max
