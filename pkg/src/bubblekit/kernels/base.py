"""Kernel base class and sub-diagonal diagnostics.

Conventions used throughout:

* a kernel at state x is an atom list plus an optional density; both parts
  live on (0, inf).  Mass must sum to 1 and the mean must equal x (the
  process is a nonnegative martingale), checked by :meth:`MarkovKernel.validate`
  at tolerance ``10 * QUAD_TOL``.

* "down" means *strictly* below the current state: an atom sitting exactly
  at x does not count as a down-move.  The same strictness applies at the
  upper limit x(1+eps) of the recovery integral.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import KernelInvariantError
from ..quadrature import QUAD_TOL, integrate, panel_rule_log, subdivided_edges

# Mass/mean bookkeeping is allowed one order of magnitude above the
# quadrature tolerance.
VALIDATE_TOL = 10 * QUAD_TOL


class MarkovKernel:
    """One-step transition law K(x, dy) of a nonnegative martingale.

    Subclasses describe their law through :meth:`atoms` (finitely many
    point masses) and, when ``has_density`` is true, a ``density``
    evaluated on the window returned by :meth:`support`.  Everything else
    (diagnostics, validation, generic sampling) is derived here.
    """

    kind = "abstract"
    has_density = False
    #: smallest state at which the kernel is defined
    state_floor = 0.0

    # -- law description ------------------------------------------------
    def atoms(self, x):
        """Point masses at state x as a list of (location, weight)."""
        return []

    def density(self, x, y):
        """Density of the absolutely continuous part at state x.

        ``y`` may be an ndarray; must return zeros outside support(x).
        """
        raise NotImplementedError

    def support(self, x):
        """(lo, hi) window holding all density mass up to < QUAD_TOL tails."""
        raise NotImplementedError

    # -- derived quantities ----------------------------------------------
    def density_moment(self, x, lo, hi, power=0, tol=QUAD_TOL):
        """Integral of y^power k(x, y) dy over [lo, hi], density part only.

        The default is adaptive quadrature; kernels whose density has a
        cheap exact primitive (tabulated families) override this, and
        every diagnostic integral in the package routes through it.
        """
        if not self.has_density or hi <= lo:
            return 0.0
        if power == 0:
            return integrate(lambda y: self.density(x, y), lo, hi, tol)
        return integrate(lambda y: y ** power * self.density(x, y),
                         lo, hi, tol)

    def mass_mean(self, x, tol=QUAD_TOL):
        """Total mass and mean of K(x, .), atoms plus quadrature."""
        mass = 0.0
        mean = 0.0
        for loc, w in self.atoms(x):
            mass += w
            mean += w * loc
        if self.has_density:
            lo, hi = self.support(x)
            mass += self.density_moment(x, lo, hi, 0, tol)
            mean += self.density_moment(x, lo, hi, 1, tol)
        return mass, mean

    def validate(self, x, tol=VALIDATE_TOL):
        """Check structural invariants at state x; raise on violation."""
        if x <= 0:
            raise KernelInvariantError(f"state must be positive, got {x!r}")
        if x < self.state_floor:
            raise KernelInvariantError(
                f"{self.kind} kernel is only defined for states >= "
                f"{self.state_floor:g}, got {x:g}")
        for loc, w in self.atoms(x):
            if not (loc > 0):
                raise KernelInvariantError(
                    f"{self.kind}: atom location {loc!r} at state {x:g} "
                    "is not positive")
            if w < -tol or w > 1 + tol:
                raise KernelInvariantError(
                    f"{self.kind}: atom weight {w!r} at state {x:g} "
                    "outside [0, 1]")
        mass, mean = self.mass_mean(x)
        if abs(mass - 1.0) > tol:
            raise KernelInvariantError(
                f"{self.kind}: mass at state {x:g} is {mass:.12f}, "
                f"off by {mass - 1.0:.3e} (tol {tol:.1e})")
        if abs(mean - x) > tol * max(1.0, x):
            raise KernelInvariantError(
                f"{self.kind}: mean at state {x:g} is {mean:.12f}, "
                f"off by {mean - x:.3e} (tol {tol:.1e} relative)")

    def cdf(self, x, z):
        """P[S_1 <= z | S_0 = x] by atoms plus adaptive quadrature."""
        p = sum(w for loc, w in self.atoms(x) if loc <= z)
        if self.has_density:
            lo, hi = self.support(x)
            if z > lo:
                p += self.density_moment(x, lo, min(z, hi), 0)
        return p

    # -- sampling ---------------------------------------------------------
    def absorbed_mask(self, x):
        """Boolean mask of states the kernel leaves in place almost surely.

        Absorbed lanes are skipped by the path simulator and consume no
        randomness.  ``None`` (the default) means nothing is absorbed.
        """
        return None

    def step_values(self, step_index, x, streams, lanes):
        """Time-homogeneous transition: delegates to :meth:`sample_steps`."""
        return self.sample_steps(x, streams, lanes)

    def sample_steps(self, x, streams, lanes):
        """Draw one transition per lane; generic numeric inverse CDF.

        ``x`` holds the current states of ``lanes`` (global path ids used
        by ``streams`` for per-path uniform accounting).  Families with a
        tractable structure override this with a vectorized exact sampler;
        the fallback here does a per-lane quantile lookup on a panelized
        CDF and is only meant for small batches (tabulated kernels, ad-hoc
        experiments).
        """
        u = streams.take(lanes)
        out = np.empty_like(np.asarray(x, dtype=float))
        for i, (xi, ui) in enumerate(zip(np.atleast_1d(x), np.atleast_1d(u))):
            out[i] = self._numeric_quantile(float(xi), float(ui))
        return out

    def _numeric_quantile(self, x, u, n_panels=400):
        """Invert the mixture CDF at state x on a dense panel table."""
        events = sorted(self.atoms(x))
        if self.has_density:
            lo, hi = self.support(x)
            width = np.log(hi / lo) if lo > 0 else None
            edges = subdivided_edges(lo, hi, np.asarray([]),
                                     max_step=width / n_panels)
            nodes, weights = panel_rule_log(edges, order=8)
            dens = weights * self.density(x, nodes)
        else:
            nodes = np.asarray([])
            dens = np.asarray([])
        # walk atoms and density cells in y-order, accumulating mass
        cum = 0.0
        di = 0
        for loc, w in events:
            while di < len(nodes) and nodes[di] < loc:
                cum += dens[di]
                if cum >= u:
                    return nodes[di]
                di += 1
            cum += w
            if cum >= u:
                return loc
        while di < len(nodes):
            cum += dens[di]
            if cum >= u:
                return nodes[di]
            di += 1
        # u beyond accumulated mass (roundoff): return top of support
        if len(nodes):
            return float(nodes[-1])
        return events[-1][0]


class _GeneratorStream:
    """Adapter presenting one numpy Generator as a lane-stream pool."""

    def __init__(self, rng):
        self._rng = rng

    def take(self, lanes):
        return self._rng.random(len(lanes))


def sample_step(kernel, x, rng):
    """Draw a single transition from K(x, .) using a numpy Generator.

    Scalar convenience around the vectorized ``sample_steps``; the draw
    is deterministic given the generator state.
    """
    lanes = np.zeros(1, dtype=np.int64)
    vals = kernel.sample_steps(np.asarray([float(x)]),
                               _GeneratorStream(rng), lanes)
    return float(vals[0])


# ---------------------------------------------------------------------------
# sub-diagonal diagnostics


def probability_down(kernel, x, tol=QUAD_TOL):
    """P[S_1 < S_0 | S_0 = x]: kernel mass strictly below the diagonal.

    Atoms exactly at x do not count.  Density mass is integrated over
    support(x) intersected with (0, x).
    """
    p = sum(w for loc, w in kernel.atoms(x) if loc < x)
    if kernel.has_density:
        lo, hi = kernel.support(x)
        if lo < min(x, hi):
            p += kernel.density_moment(x, lo, min(x, hi), 0, tol)
    return p


def relative_recovery(kernel, x, eps=0.0, tol=QUAD_TOL):
    """E[(S_1/x) 1{S_1 < x(1+eps)} | S_0 = x].

    For eps = 0 this is the mean relative size of a strict down-move; it
    grows with eps as mass up to x(1+eps) (exclusive) is admitted.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    top = x * (1.0 + eps)
    val = sum(w * loc for loc, w in kernel.atoms(x) if loc < top) / x
    if kernel.has_density:
        lo, hi = kernel.support(x)
        if lo < min(top, hi):
            val += kernel.density_moment(x, lo, min(top, hi), 1, tol) / x
    return val


@dataclass(frozen=True)
class KernelDiagnostics:
    """Sub-diagonal profile of a kernel along a state grid.

    ``prob_down`` is P[S_1 < x], ``recovery`` is the relative recovery at
    eps = 0 and ``recovery_eps`` at the stated ``eps``.  Satisfies
    0 <= recovery <= prob_down < 1 and recovery <= recovery_eps pointwise.
    """

    x: np.ndarray
    prob_down: np.ndarray
    recovery: np.ndarray
    eps: float
    recovery_eps: np.ndarray

    def rows(self):
        for i in range(len(self.x)):
            yield (self.x[i], self.prob_down[i], self.recovery[i],
                   self.recovery_eps[i])


def diagnose(kernel, xs, eps=0.0):
    """Evaluate the sub-diagonal diagnostics on a grid of states."""
    xs = np.asarray(xs, dtype=float)
    a = np.array([probability_down(kernel, x) for x in xs])
    b = np.array([relative_recovery(kernel, x, 0.0) for x in xs])
    be = (np.array([relative_recovery(kernel, x, eps) for x in xs])
          if eps > 0 else b.copy())
    return KernelDiagnostics(x=xs, prob_down=a, recovery=b, eps=eps,
                             recovery_eps=be)
