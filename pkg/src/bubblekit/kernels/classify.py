"""Analytic bubble criteria on Markov kernels, driven by certificates.

The mathematical criteria are asymptotic (liminf of the recovery profile,
convergence of the log-scale recovery integral), which finitely many
kernel evaluations can falsify but never prove.  The protocol here:

* the caller declares closed-form bounds (certificates) with explicit
  anchors;
* every claim is checked pointwise on the tail grid — any violation
  raises :class:`~bubblekit.errors.CertificateRejectionError`;
* a verdict of "Bubble" or "NoBubble" is only issued when a validated
  certificate covers the asymptotic part; otherwise the verdict is
  "Indeterminate" with the grid evidence attached.

Routes:

* recovery floor (b bounded below by a positive constant on the tail)
  => NoBubble, any kernel;
* for two-point kernels the sharp dichotomy applies to b itself:
  a validated integrable decay bound => Bubble, a validated divergent
  floor => NoBubble;
* generic kernels: a declared down-move floor from the anchor x_a, an
  eventually-nonincreasing b_eps profile, a validated integrable decay
  bound on b_eps, and unboundedness of the paths => Bubble.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from ..errors import CertificateRejectionError
from .base import diagnose

#: slack applied when comparing quadrature-accurate diagnostics to bounds
VALIDATION_SLACK = 1e-9

_DECAY_FAMILIES = ("power", "log-power", "gauss-log")


@dataclass(frozen=True)
class DecayBound:
    """Claimed upper bound g(x) on a recovery profile for x >= x_from.

    Families (u = log x): power C e^{-rate u}; log-power C u^{-rate};
    gauss-log C e^{-rate u^2}.  The bound certifies a *finite* log-scale
    tail integral, so the rate must make g(e^u) integrable.
    """

    family: str
    coeff: float
    rate: float
    x_from: float

    def __post_init__(self):
        if self.family not in _DECAY_FAMILIES:
            raise ValueError(f"unknown decay family {self.family!r}")
        if self.coeff <= 0 or self.rate <= 0:
            raise ValueError("decay bound needs positive coeff and rate")
        if self.family == "log-power" and self.x_from <= 1.0:
            raise ValueError("log-power bounds need x_from > 1")

    def integrable(self):
        if self.family == "log-power":
            return self.rate > 1.0
        return True  # power and gauss-log with rate > 0

    def value(self, x):
        u = np.log(np.asarray(x, dtype=float))
        if self.family == "power":
            return self.coeff * np.exp(-self.rate * u)
        if self.family == "log-power":
            return self.coeff * u ** (-self.rate)
        return self.coeff * np.exp(-self.rate * u * u)

    def log_tail_integral(self, x_from=None):
        """Closed form of the integral of g(e^u) du from log(x_from) up."""
        u0 = math.log(self.x_from if x_from is None else x_from)
        if self.family == "power":
            return self.coeff * math.exp(-self.rate * u0) / self.rate
        if self.family == "log-power":
            if self.rate <= 1.0:
                return math.inf
            return self.coeff * u0 ** (1.0 - self.rate) / (self.rate - 1.0)
        q = self.rate
        return self.coeff * 0.5 * math.sqrt(math.pi / q) * erfc(math.sqrt(q) * u0)


@dataclass(frozen=True)
class FloorBound:
    """Claimed lower bound on the recovery profile for x >= x_from.

    ``constant`` floors assert liminf b >= coeff > 0.  ``log-power``
    floors (coeff (log x)^{-rate}, rate <= 1) assert a divergent
    log-scale integral, which only carries verdict weight for two-point
    kernels where the dichotomy is sharp.
    """

    coeff: float
    x_from: float
    family: str = "constant"
    rate: float = 0.0

    def __post_init__(self):
        if self.family not in ("constant", "log-power"):
            raise ValueError(f"unknown floor family {self.family!r}")
        if self.coeff <= 0:
            raise ValueError("floor bound needs a positive coeff")
        if self.family == "log-power" and self.x_from <= 1.0:
            raise ValueError("log-power floors need x_from > 1")

    def divergent(self):
        return self.family == "constant" or self.rate <= 1.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            return np.full_like(x, self.coeff)
        return self.coeff * np.log(x) ** (-self.rate)


@dataclass(frozen=True)
class BubbleCertificates:
    """User-declared asymptotic claims feeding the classifier.

    ``down_floor``/``x_a`` anchor the standing assumption that the
    down-move probability stays above a positive level from x_a on.
    ``unbounded`` declares that the paths admit no deterministic a.s.
    bound; left as None it is inferred for kernels whose up-moves keep a
    uniform multiplicative margin on the tail grid.
    """

    recovery_floor: FloorBound | None = None
    recovery_decay: DecayBound | None = None       # bound on b (two-point route)
    recovery_eps_decay: DecayBound | None = None   # bound on b_eps (generic route)
    down_floor: float | None = None
    x_a: float | None = None
    unbounded: bool | None = None


@dataclass(frozen=True)
class BubbleVerdict:
    """Classifier outcome: verdict, the route that fired, grid evidence."""

    verdict: str
    route: str
    evidence: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {"verdict": self.verdict, "route": self.route,
                "evidence": self.evidence}


def _reject(name, x, observed, claimed, direction):
    raise CertificateRejectionError(
        f"certificate {name} falsified at x = {x:g}: observed {observed:.6g} "
        f"{direction} claimed {claimed:.6g}",
        point=float(x), observed=float(observed), claimed=float(claimed))


def _check_upper(name, xs, values, bound):
    """Validate values <= bound.value on grid points past the anchor."""
    sel = xs >= bound.x_from
    if not np.any(sel):
        raise CertificateRejectionError(
            f"certificate {name} anchors at x_from = {bound.x_from:g}, "
            "beyond the tail grid; nothing can be checked")
    claimed = bound.value(xs[sel])
    bad = values[sel] > claimed + VALIDATION_SLACK
    if np.any(bad):
        i = int(np.argmax(bad))
        _reject(name, xs[sel][i], values[sel][i], claimed[i], ">")


def _check_lower(name, xs, values, bound):
    sel = xs >= bound.x_from
    if not np.any(sel):
        raise CertificateRejectionError(
            f"certificate {name} anchors at x_from = {bound.x_from:g}, "
            "beyond the tail grid; nothing can be checked")
    claimed = bound.value(xs[sel])
    bad = values[sel] < claimed - VALIDATION_SLACK
    if np.any(bad):
        i = int(np.argmax(bad))
        _reject(name, xs[sel][i], values[sel][i], claimed[i], "<")


def _monotone_tail_start(xs, values, slack=1e-12):
    """First grid index from which values are nonincreasing to the end."""
    rises = np.flatnonzero(np.diff(values) > slack * max(1.0, values.max()))
    return 0 if len(rises) == 0 else int(rises[-1]) + 1


def classify_markov_bubble(kernel, tail_grid, eps=0.5, certificates=None):
    """Decide Bubble / NoBubble / Indeterminate for a Markov kernel.

    ``tail_grid`` is the increasing grid of states on which every claim
    is validated (log-spaced grids make the evidence integral a uniform
    trapezoid in u = log x).  Returns a :class:`BubbleVerdict`; raises
    CertificateRejectionError when a declared bound is falsified.
    """
    xs = np.asarray(tail_grid, dtype=float)
    if xs.ndim != 1 or len(xs) < 4:
        raise ValueError("tail grid needs at least 4 increasing states")
    if np.any(xs <= 0) or np.any(np.diff(xs) <= 0):
        raise ValueError("tail grid must be positive and increasing")
    certs = certificates or BubbleCertificates()

    diag = diagnose(kernel, xs, eps=eps)
    a, b, beps = diag.prob_down, diag.recovery, diag.recovery_eps
    u = np.log(xs)
    two_point = not kernel.has_density

    mono_from = _monotone_tail_start(xs, beps)
    evidence = {
        "eps": eps,
        "grid": [float(xs[0]), float(xs[-1]), len(xs)],
        "min_prob_down": float(a.min()),
        "max_prob_down": float(a.max()),
        "min_recovery": float(b.min()),
        "max_recovery": float(b.max()),
        "min_recovery_eps": float(beps.min()),
        "recovery_eps_monotone_from": float(xs[mono_from]),
        "grid_recovery_eps_log_integral": float(np.trapezoid(beps, u)),
        "grid_recovery_log_integral": float(np.trapezoid(b, u)),
    }

    certified = []

    # --- NoBubble routes -------------------------------------------------
    if certs.recovery_floor is not None:
        fb = certs.recovery_floor
        _check_lower("recovery_floor", xs, b, fb)
        if fb.family == "constant":
            certified.append(("NoBubble",
                              "recovery profile bounded below by "
                              f"{fb.coeff:g} from x = {fb.x_from:g}: "
                              "expected relative recovery diverges"))
        elif two_point and fb.divergent():
            certified.append(("NoBubble",
                              "two-point dichotomy: validated floor with "
                              "divergent log-scale recovery integral"))
        # a convergent-side floor certifies nothing

    # --- Bubble routes ----------------------------------------------------
    unbounded = certs.unbounded
    if unbounded is None:
        # geometric margin check: uniform up-move mass at (1+eps)x
        up_mass = np.array([1.0 - kernel.cdf(x, x * (1.0 + eps)) for x in xs])
        evidence["min_up_move_mass"] = float(up_mass.min())
        unbounded = bool(up_mass.min() > 1e-6)

    if certs.down_floor is not None:
        if certs.x_a is None:
            raise ValueError("a down_floor certificate needs its anchor x_a")
        if certs.down_floor <= 0:
            raise ValueError("down_floor must be positive")
        sel = xs >= certs.x_a
        if not np.any(sel):
            raise CertificateRejectionError(
                f"down-move floor anchors at x_a = {certs.x_a:g}, beyond "
                "the tail grid; nothing can be checked")
        low = a[sel].min()
        if low < certs.down_floor - VALIDATION_SLACK:
            _reject("down_floor", xs[sel][int(np.argmin(a[sel]))], low,
                    certs.down_floor, "<")

    if two_point and certs.recovery_decay is not None:
        db = certs.recovery_decay
        if not db.integrable():
            raise CertificateRejectionError(
                "recovery_decay bound has a divergent log-scale integral; "
                "it cannot certify a bubble")
        _check_upper("recovery_decay", xs, b, db)
        if certs.down_floor is None:
            evidence["note_down_floor"] = (
                "two-point route used grid evidence for the down-move "
                "floor; declare down_floor/x_a to certify it")
        if not unbounded:
            raise CertificateRejectionError(
                "two-point bubble route requires unbounded paths; the "
                "up-move margin check failed and no declaration was given")
        tail = db.log_tail_integral(max(db.x_from, float(xs[0])))
        evidence["certified_recovery_tail_integral"] = float(tail)
        certified.append(("Bubble",
                          "two-point dichotomy: validated decay bound gives "
                          "a finite log-scale recovery integral"))

    if certs.recovery_eps_decay is not None:
        db = certs.recovery_eps_decay
        if not db.integrable():
            raise CertificateRejectionError(
                "recovery_eps_decay bound has a divergent log-scale "
                "integral; it cannot certify a bubble")
        _check_upper("recovery_eps_decay", xs, beps, db)
        ok = (certs.down_floor is not None and unbounded
              and mono_from <= (3 * len(xs)) // 4)
        if ok:
            tail = db.log_tail_integral(max(db.x_from, float(xs[mono_from])))
            evidence["certified_recovery_eps_tail_integral"] = float(tail)
            certified.append(("Bubble",
                              "validated down-move floor, eventually "
                              "nonincreasing recovery-eps profile, and "
                              "integrable decay bound"))
        else:
            missing = []
            if certs.down_floor is None:
                missing.append("down_floor/x_a")
            if not unbounded:
                missing.append("unbounded paths")
            if mono_from > (3 * len(xs)) // 4:
                missing.append("nonincreasing tail of recovery_eps")
            evidence["bubble_route_missing"] = ", ".join(missing)

    # --- resolve -----------------------------------------------------------
    verdicts = {v for v, _ in certified}
    if len(verdicts) > 1:
        raise CertificateRejectionError(
            "certificates certify contradictory verdicts on this grid; "
            "extend the tail grid to expose the inconsistency")
    if certified:
        verdict, route = certified[0]
        return BubbleVerdict(verdict=verdict, route=route, evidence=evidence)
    return BubbleVerdict(
        verdict="Indeterminate",
        route="no validated certificate covers the asymptotics",
        evidence=evidence)
