"""Quadrature helpers shared by kernel diagnostics and the Volterra operator.

Two regimes:

* pointwise adaptive integrals (diagnostics, certification) delegate to
  QUADPACK via :func:`scipy.integrate.quad`, wrapped so a failed tolerance
  surfaces as :class:`~bubblekit.errors.QuadratureError` with the achieved
  residual attached;

* the fixed-point operator needs thousands of re-evaluations against the
  same kernel, so it uses precomputed Gauss-Legendre panel rules laid out
  in log-ordinate, with panel edges aligned to the solver grid (the interp
  kinks sit exactly on panel boundaries, keeping per-panel integrands
  smooth).
"""

import functools

import numpy as np
from scipy.integrate import quad

from .errors import QuadratureError

# Default absolute/relative tolerance for all adaptive integrals.
QUAD_TOL = 1e-10


def integrate(f, a, b, tol=QUAD_TOL, points=None):
    """Adaptive integral of ``f`` over the finite interval [a, b].

    Returns the value; raises QuadratureError when QUADPACK's error
    estimate misses ``tol`` by more than an order of magnitude (mild
    roundoff-limited overshoot is tolerated: these integrands are smooth
    and the estimate is conservative).
    """
    if b <= a:
        return 0.0
    kwargs = {"epsabs": tol, "epsrel": tol, "limit": 300, "full_output": 1}
    if points is not None:
        pts = [p for p in points if a < p < b]
        if pts:
            kwargs["points"] = pts
    out = quad(f, a, b, **kwargs)
    val, abserr = out[0], out[1]
    if abserr > 10 * max(tol, tol * abs(val)):
        raise QuadratureError(
            f"integral on [{a:g}, {b:g}] reached abs error {abserr:.3e} "
            f"(requested {tol:.1e})",
            residual=abserr,
        )
    return val


def log_grid(lo, hi, n):
    """Geometric (log-uniform) grid of n points on [lo, hi], lo > 0."""
    if not (0 < lo < hi):
        raise ValueError("log grid needs 0 < lo < hi")
    if n < 2:
        raise ValueError("log grid needs at least 2 nodes")
    return np.exp(np.linspace(np.log(lo), np.log(hi), n))


@functools.lru_cache(maxsize=8)
def _leggauss(order):
    return np.polynomial.legendre.leggauss(order)


def panel_rule_log(breaks, order=16):
    """Composite Gauss-Legendre rule in log-ordinate.

    ``breaks`` are strictly increasing positive panel edges.  Returns
    ``(nodes, weights)`` such that sum(w * f(nodes)) approximates
    ``integral of f(y) dy`` over [breaks[0], breaks[-1]]: each panel is
    mapped to t = log y, and the Jacobian dy = y dt is folded into the
    weights.
    """
    breaks = np.asarray(breaks, dtype=float)
    if breaks.ndim != 1 or len(breaks) < 2:
        raise ValueError("need at least two panel edges")
    if np.any(breaks <= 0) or np.any(np.diff(breaks) <= 0):
        raise ValueError("panel edges must be positive and increasing")
    t = np.log(breaks)
    gx, gw = _leggauss(order)
    mid = 0.5 * (t[1:] + t[:-1])          # (P,)
    half = 0.5 * (t[1:] - t[:-1])         # (P,)
    tn = mid[:, None] + half[:, None] * gx[None, :]     # (P, order)
    wn = half[:, None] * gw[None, :]                    # (P, order)
    nodes = np.exp(tn).ravel()
    weights = (wn * np.exp(tn)).ravel()
    return nodes, weights


def subdivided_edges(lo, hi, anchors, max_step=None):
    """Panel edges on [lo, hi]: anchors inside, gaps capped at max_step.

    ``anchors`` is a sorted array of preferred edge locations (the solver
    grid).  Stretches of [lo, hi] not covered by anchors are split into
    log-uniform panels no wider than ``max_step`` (in log-ordinate); if
    max_step is None it defaults to the median anchor log-spacing, or a
    tenth of the span when no anchors fall inside.
    """
    if hi <= lo:
        raise ValueError("empty panel range")
    anchors = np.asarray(anchors, dtype=float)
    inner = anchors[(anchors > lo) & (anchors < hi)]
    edges = np.concatenate(([lo], inner, [hi]))
    lt = np.log(edges)
    if max_step is None:
        if len(anchors) > 1:
            max_step = np.median(np.diff(np.log(anchors)))
        else:
            max_step = (lt[-1] - lt[0]) / 10
        max_step = max(max_step, 1e-3)
    out = [lt[0]]
    for right in lt[1:]:
        gap = right - out[-1]
        if gap > max_step:
            k = int(np.ceil(gap / max_step))
            out.extend(out[-1] + gap * np.arange(1, k + 1) / k)
        else:
            out.append(right)
    return np.exp(np.asarray(out))
