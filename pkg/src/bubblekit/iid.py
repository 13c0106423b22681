"""Independent multiplicative-factor models and series criteria.

A model here is S_k = x0 * X_1 * ... * X_k with independent mean-one
nonnegative factors X_k.  Whether such a process loses mass at a
drawdown is decided entirely by two series built from the per-step laws:

    a_k = P[X_k < 1],          b_k = E[X_k 1{X_k < 1}],

namely: bubble  iff  sum a_k diverges and sum b_k converges.  Divergence
or convergence of an infinite series is not decidable from finitely many
terms, so verdicts are certificate-driven: the user declares the tail
behavior together with a closed-form comparison bound, the implementation
falsifies the bound against the computed prefix (partial sums at every
index), and only a surviving certificate can fire a verdict.  The
convergent-a branch goes through Kakutani's uniform-integrability
criterion; divergent b kills the survival product prod(1 - b_k).
"""

import numpy as np
from scipy.special import log_ndtr

from .errors import CertificateRejectionError, DegenerateModelError
from .kernels.classify import BubbleVerdict
from .quadrature import integrate

__all__ = [
    "DiscreteFactorLaw", "ContinuousFactorLaw", "SeriesBound",
    "TailDeclaration", "IIDReturnModel", "iid_bubble_check",
    "survival_product", "survival_product_limit_bounds",
    "appendix_product", "appendix_product_lower_bound",
    "harmonic_ladder_model", "iid_binomial_model", "geometric_down_model",
]

_MEAN_TOL = 1e-10


class DiscreteFactorLaw:
    """Finite-support law of one factor X_k with E[X_k] = 1."""

    def __init__(self, values, probs):
        values = np.asarray(values, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if values.shape != probs.shape or values.ndim != 1:
            raise ValueError("values and probs must be 1-d of equal length")
        if np.any(values < 0):
            raise DegenerateModelError("factor values must be nonnegative")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise DegenerateModelError("probs must be a distribution")
        mean = float(values @ probs)
        if abs(mean - 1.0) > _MEAN_TOL:
            raise DegenerateModelError(
                f"factor law has mean {mean:.12f}, not 1")
        order = np.argsort(values, kind="stable")
        self.values = values[order]
        self.probs = probs[order]
        self._cum = np.cumsum(self.probs)
        self.a = float(self.probs[self.values < 1.0].sum())
        self.b = float((self.values * self.probs)[self.values < 1.0].sum())
        if self.a >= 1.0:
            raise DegenerateModelError(
                "P[X < 1] = 1 is incompatible with a mean-one factor")

    def sample(self, u):
        idx = np.searchsorted(self._cum, u, side="right")
        return self.values[np.minimum(idx, len(self.values) - 1)]


class ContinuousFactorLaw:
    """Density-described factor law; needs a quantile for simulation.

    ``density`` is a vectorized pdf supported on [lo, hi]; a and b come
    from adaptive quadrature.  ``quantile`` (inverse CDF, vectorized) is
    only required when the model is simulated.
    """

    def __init__(self, density, lo, hi, quantile=None):
        if not (0 <= lo < hi):
            raise ValueError("need 0 <= lo < hi")
        self._density = density
        self._lohi = (float(lo), float(hi))
        self._quantile = quantile
        mass = integrate(density, lo, hi)
        mean = integrate(lambda v: v * density(v), lo, hi)
        if abs(mass - 1.0) > 1e-8 or abs(mean - 1.0) > 1e-8:
            raise DegenerateModelError(
                f"factor density has mass {mass:.10f}, mean {mean:.10f}")
        top = min(1.0, hi)
        self.a = integrate(density, lo, top) if lo < top else 0.0
        self.b = (integrate(lambda v: v * density(v), lo, top)
                  if lo < top else 0.0)
        if self.a >= 1.0 - 1e-12:
            raise DegenerateModelError(
                "P[X < 1] = 1 is incompatible with a mean-one factor")

    def sample(self, u):
        if self._quantile is None:
            raise DegenerateModelError(
                "continuous factor law has no quantile; cannot simulate")
        return np.asarray(self._quantile(u), dtype=float)


class SeriesBound:
    """Closed-form comparison sequence c/k^p, c*r^k, or the constant c."""

    def __init__(self, family, coeff, rate=0.0):
        if family not in ("power", "geometric", "constant"):
            raise ValueError("family must be power, geometric, or constant")
        if coeff <= 0:
            raise ValueError("bound coefficient must be positive")
        if family == "geometric" and not (0 < rate < 1):
            raise ValueError("geometric bounds need rate in (0, 1)")
        self.family = family
        self.coeff = float(coeff)
        self.rate = float(rate)

    def terms(self, ks):
        ks = np.asarray(ks, dtype=float)
        if self.family == "power":
            return self.coeff / ks ** self.rate
        if self.family == "geometric":
            return self.coeff * self.rate ** ks
        return np.full_like(ks, self.coeff)

    def summable(self):
        if self.family == "power":
            return self.rate > 1.0
        return self.family == "geometric"

    def tail_sum(self, k_from):
        """Upper bound on the sum of terms for k > k_from (finite case)."""
        if not self.summable():
            raise ValueError("bound is not summable; no finite tail sum")
        if self.family == "geometric":
            return self.coeff * self.rate ** (k_from + 1) / (1.0 - self.rate)
        # integral comparison: sum_{k>k0} c k^-p <= c k0^{1-p}/(p-1)
        return self.coeff * k_from ** (1.0 - self.rate) / (self.rate - 1.0)


class TailDeclaration:
    """User certificate about one of the two series.

    ``series`` is "down-prob" (the a_k) or "recovery" (the b_k); the
    ``claim`` is "divergent" with a minorizing bound or "convergent" with
    a dominating bound, active from index ``k_from`` on.  A divergent
    claim needs a non-summable bound, a convergent claim a summable one.
    """

    def __init__(self, series, claim, bound, k_from=1):
        if series not in ("down-prob", "recovery"):
            raise ValueError("series must be 'down-prob' or 'recovery'")
        if claim not in ("divergent", "convergent"):
            raise ValueError("claim must be 'divergent' or 'convergent'")
        if k_from < 1:
            raise ValueError("k_from must be at least 1")
        if claim == "divergent" and bound.summable():
            raise ValueError("a divergent claim needs a non-summable bound")
        if claim == "convergent" and not bound.summable():
            raise ValueError("a convergent claim needs a summable bound")
        self.series = series
        self.claim = claim
        self.bound = bound
        self.k_from = int(k_from)

    def check_prefix(self, seq, slack=1e-9):
        """Falsify the claim against computed terms seq[k_from..N].

        Divergent claims require every partial sum of the series to
        dominate the bound's partial sum (minorization); convergent
        claims require the reverse.  Raises on the first violated prefix.
        """
        n = len(seq)
        if n < self.k_from:
            raise ValueError("prefix shorter than the certificate's k_from")
        ks = np.arange(self.k_from, n + 1)
        got = np.cumsum(np.asarray(seq, dtype=float)[self.k_from - 1:])
        ref = np.cumsum(self.bound.terms(ks))
        if self.claim == "divergent":
            bad = got < ref - slack
        else:
            bad = got > ref + slack
        if np.any(bad):
            i = int(np.argmax(bad))
            side = "<" if self.claim == "divergent" else ">"
            raise CertificateRejectionError(
                f"declared {self.claim} {self.series} tail falsified at "
                f"k = {int(ks[i])}: partial sum {got[i]:.6g} {side} bound "
                f"partial sum {ref[i]:.6g}",
                point=int(ks[i]), observed=float(got[i]), claimed=float(ref[i]))


class IIDReturnModel:
    """Independent-factor multiplicative model with declared tails.

    ``factor_law(k)`` returns the law of X_k (1-based); laws are built
    lazily and cached.  ``declared_tails`` maps "down-prob"/"recovery" to
    :class:`TailDeclaration`; either entry may be absent, but verdicts
    fire only on certified series.
    """

    def __init__(self, factor_law, declared_tails=None, name="iid-returns"):
        self._factor_law = factor_law
        self.declared_tails = dict(declared_tails or {})
        for key, decl in self.declared_tails.items():
            if decl.series != key:
                raise ValueError(
                    f"declaration filed under {key!r} talks about "
                    f"{decl.series!r}")
        self.kind = name
        self._laws = {}

    def law(self, k):
        k = int(k)
        if k < 1:
            raise ValueError("factor index is 1-based")
        hit = self._laws.get(k)
        if hit is None:
            hit = self._factor_law(k)
            self._laws[k] = hit
        return hit

    def a_seq(self, n):
        return np.array([self.law(k).a for k in range(1, n + 1)])

    def b_seq(self, n):
        return np.array([self.law(k).b for k in range(1, n + 1)])

    def step_values(self, step_index, x, streams, lanes):
        u = streams.take(lanes)
        return np.asarray(x, dtype=float) * self.law(step_index).sample(u)

    def absorbed_mask(self, x):
        return None


def iid_bubble_check(model, partial_N=1000):
    """Certificate-checked bubble verdict for an independent-factor model.

    Bubble requires a certified divergent down-probability series and a
    certified convergent recovery series.  A certified convergent
    down-probability series (uniform integrability) or a certified
    divergent recovery series (vanishing survival product) each force
    NoBubble.  Anything less certified is Indeterminate; raw partial
    sums never decide.
    """
    if partial_N < 1:
        raise ValueError("partial_N must be at least 1")
    a = model.a_seq(partial_N)
    b = model.b_seq(partial_N)
    if np.any(b > a + 1e-12) or np.any(a >= 1.0):
        raise DegenerateModelError(
            "factor laws violate 0 <= b_k <= a_k < 1 on the prefix")
    evidence = {
        "partial_N": partial_N,
        "partial_sum_down_prob": float(a.sum()),
        "partial_sum_recovery": float(b.sum()),
        "max_down_prob": float(a.max()),
        "max_recovery": float(b.max()),
    }
    claims = {}
    for key in ("down-prob", "recovery"):
        decl = model.declared_tails.get(key)
        if decl is None:
            continue
        seq = a if key == "down-prob" else b
        decl.check_prefix(seq)
        claims[key] = decl.claim
        evidence[f"certified_{key}"] = decl.claim
    if claims.get("down-prob") == "divergent" and \
            claims.get("recovery") == "convergent":
        tail = model.declared_tails["recovery"].bound.tail_sum(partial_N)
        evidence["recovery_tail_bound"] = float(tail)
        return BubbleVerdict("Bubble", "independent-increments", evidence)
    if claims.get("down-prob") == "convergent":
        return BubbleVerdict("NoBubble", "kakutani", evidence)
    if claims.get("recovery") == "divergent":
        return BubbleVerdict("NoBubble", "recovery-divergent", evidence)
    return BubbleVerdict("Indeterminate", "none", evidence)


def survival_product(model, k_start, N):
    """prod_{k=k_start..N} (1 - b_k), accumulated in log space.

    This is the mass fraction a monotone run keeps through step N;
    nonincreasing in N, with a positive limit exactly when sum b_k
    converges.
    """
    if N < k_start:
        return 1.0
    b = np.array([model.law(k).b for k in range(k_start, N + 1)])
    if np.any(b >= 1.0):
        raise DegenerateModelError(
            "b_k = 1 encountered; survival product degenerates")
    return float(np.exp(np.sum(np.log1p(-b))))


def survival_product_limit_bounds(model, k_start, N):
    """(lower, upper) bracket on the infinite survival product.

    The partial product at N is the upper bound (terms are <= 1).  The
    lower bound charges the tail with the certified dominating bound on
    b_k via log(1 - t) >= -t/(1 - t).
    """
    partial = survival_product(model, k_start, N)
    decl = model.declared_tails.get("recovery")
    if decl is None or decl.claim != "convergent":
        raise ValueError(
            "tail bound needs a convergent recovery certificate")
    t_edge = float(decl.bound.terms(np.asarray([N + 1]))[0])
    if t_edge >= 1.0:
        raise DegenerateModelError("dominating bound reaches 1 past N")
    tail = decl.bound.tail_sum(max(N, decl.k_from))
    lower = partial * float(np.exp(-tail / (1.0 - t_edge)))
    return lower, partial


def appendix_product(N):
    """prod_{k=1..N} Phi(sqrt(k)/2), in log space.

    The probability that a lognormal martingale sampled along quadratic
    times only ever decreases; monotone nonincreasing in N with a
    positive limit (about 0.1416714851).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    ks = np.arange(1, N + 1, dtype=float)
    return float(np.exp(np.sum(log_ndtr(np.sqrt(ks) / 2.0))))


def appendix_product_lower_bound(N):
    """prod_{k=1..N} (1 - (2/sqrt(2 pi k)) e^{-k/8}): the closed-form
    minorant of :func:`appendix_product` (each factor bounds Phi from
    below via the Gaussian tail inequality)."""
    if N < 1:
        raise ValueError("N must be at least 1")
    ks = np.arange(1, N + 1, dtype=float)
    terms = 2.0 / np.sqrt(2.0 * np.pi * ks) * np.exp(-ks / 8.0)
    if np.any(terms >= 1.0):
        raise DegenerateModelError("minorant factor fell to 0")
    return float(np.exp(np.sum(np.log1p(-terms))))


# ---------------------------------------------------------------------------
# built-in models


def harmonic_ladder_model():
    """X_k = 1/k with probability 1/k, else 1 + 1/k (a bubble).

    Down-probabilities a_k = 1/k for k >= 2 (the k = 1 factor is the
    constant 1, so a_1 = 0: its "down" value sits exactly at 1) and
    recoveries b_k = 1/k^2; the certificates therefore start at k = 2.
    """
    def law(k):
        return DiscreteFactorLaw([1.0 / k, 1.0 + 1.0 / k],
                                 [1.0 / k, 1.0 - 1.0 / k])

    tails = {
        "down-prob": TailDeclaration(
            "down-prob", "divergent", SeriesBound("power", 1.0, 1.0),
            k_from=2),
        "recovery": TailDeclaration(
            "recovery", "convergent", SeriesBound("power", 1.0, 2.0),
            k_from=2),
    }
    return IIDReturnModel(law, tails, name="harmonic-ladder")


def iid_binomial_model(up=1.5, down=0.5, p_up=0.5):
    """I.i.d. two-point factors (never a bubble: b_k is constant > 0)."""
    if not (0 < down < 1 < up and 0 < p_up < 1):
        raise ValueError("need 0 < down < 1 < up and p_up in (0, 1)")
    law0 = DiscreteFactorLaw([down, up], [1.0 - p_up, p_up])
    tails = {
        "recovery": TailDeclaration(
            "recovery", "divergent", SeriesBound("constant", law0.b)),
    }
    return IIDReturnModel(lambda k: law0, tails, name="iid-binomial")


def geometric_down_model(ratio=0.5, down=0.5):
    """a_k = ratio^k (summable): uniformly integrable, never a bubble."""
    if not (0 < ratio < 1 and 0 < down < 1):
        raise ValueError("need ratio and down in (0, 1)")

    def law(k):
        q = ratio ** k
        return DiscreteFactorLaw(
            [down, (1.0 - down * q) / (1.0 - q)], [q, 1.0 - q])

    tails = {
        "down-prob": TailDeclaration(
            "down-prob", "convergent", SeriesBound("geometric", 1.0, ratio)),
    }
    return IIDReturnModel(law, tails, name="geometric-down")
