"""Analytic bubble verdicts from kernel diagnostics and certificates.

The classifier inspects a(x) and b_eps(x) on a tail grid.  Sufficient
routes: a divergent down-move log-integral with a summable recovery
integral gives Bubble; a recovery floor forces NoBubble; two-point
kernels get the exact dichotomy.  Certificates are always validated
against the grid before use — a falsified claim raises instead of
silently classifying.
"""

import numpy as np
import pytest

import bubblekit as bk
from bubblekit.errors import CertificateRejectionError

GRID = np.geomspace(1.0, 60.0, 40)


def _two_point_certs():
    return bk.BubbleCertificates(
        recovery_decay=bk.DecayBound(family="power", coeff=0.25, rate=1.0,
                                     x_from=1.0),
        down_floor=0.5,
        x_a=1.0,
        unbounded=True,
    )


def test_double_or_floor_is_bubble():
    verdict = bk.classify_markov_bubble(bk.double_or_floor_kernel(0.5), GRID,
                                        certificates=_two_point_certs())
    assert verdict.verdict == "Bubble"
    assert "two-point" in verdict.route


def test_binomial_kernel_is_not_a_bubble():
    # Constant multiplicative factors keep b(x) bounded below: recoveries
    # never die out, so no mass escapes.
    ker = bk.binomial_kernel(1.5, 0.5, 0.5)
    certs = bk.BubbleCertificates(
        recovery_floor=bk.FloorBound(coeff=0.2, x_from=1.0))
    verdict = bk.classify_markov_bubble(ker, GRID, certificates=certs)
    assert verdict.verdict == "NoBubble"


def test_falsified_certificate_is_rejected():
    # Claiming a 0.9 down-move floor against a kernel with a(x) = 1/2
    # must raise, not classify.
    certs = bk.BubbleCertificates(down_floor=0.9, x_a=1.0)
    with pytest.raises(CertificateRejectionError):
        bk.classify_markov_bubble(bk.double_or_floor_kernel(0.5), GRID,
                                  certificates=certs)


def test_falsified_decay_bound_is_rejected():
    # b(x) for the floor chain is 0.25/x; a claimed 0.1/x bound is false.
    certs = bk.BubbleCertificates(
        recovery_decay=bk.DecayBound(family="power", coeff=0.1, rate=1.0,
                                     x_from=1.0))
    with pytest.raises(CertificateRejectionError):
        bk.classify_markov_bubble(bk.double_or_floor_kernel(0.5), GRID,
                                  certificates=certs)


def test_degenerate_grid_is_refused():
    with pytest.raises(ValueError):
        bk.classify_markov_bubble(bk.AffineDropKernel(), np.array([1.0, 2.0]))


def test_affine_drop_without_certificates_is_indeterminate():
    # b_eps(x) tends to a positive constant for this kernel, so the
    # generic epsilon-decay route cannot fire; with no certificates the
    # honest verdict is Indeterminate (the criteria are sufficient only).
    verdict = bk.classify_markov_bubble(bk.AffineDropKernel(), GRID, eps=0.5)
    assert verdict.verdict == "Indeterminate"
    assert verdict.evidence["min_recovery_eps"] > 0.1


def test_evidence_reports_grid_extremes():
    ker = bk.double_or_floor_kernel(0.5)
    verdict = bk.classify_markov_bubble(ker, GRID,
                                        certificates=_two_point_certs())
    ev = verdict.evidence
    assert ev["min_prob_down"] == pytest.approx(0.5, abs=1e-12)
    assert ev["max_prob_down"] == pytest.approx(0.5, abs=1e-12)
    assert ev["grid"] == [pytest.approx(GRID[0]), pytest.approx(GRID[-1]),
                          len(GRID)]


def test_verdict_serializes_round_trip():
    import json

    verdict = bk.classify_markov_bubble(bk.AffineDropKernel(), GRID, eps=0.5)
    blob = json.dumps(verdict.to_json_dict())
    back = json.loads(blob)
    assert back["verdict"] == verdict.verdict
    assert back["route"] == verdict.route
