"""TOML run configuration: strict parsing into models, grids, and runs.

Every analysis the CLI exposes is driven by one TOML file with the
sections below; unknown sections or keys are rejected outright so a
typo'd tolerance can never silently fall back to a default.

    [kernel]        family = "exponential-ratio" | "double-or-floor" |
                    "binomial" | "affine-drop" | "gaussian-log-step" |
                    "two-point" | "tabulated" | "inverse-bessel" |
                    "gbm-barrier"  (+ family parameters, see _KERNEL_KEYS)
    [iid]           model = "harmonic-ladder" | "iid-binomial" |
                    "geometric-down"  (+ model parameters)
    [grid]          lo, hi, n  — log-spaced evaluation grid
    [run]           x0, steps, paths, seed, k, run_start, threshold, eps
    [solve]         scheme ("contraction" | "picard"), tol, max_iter,
                    alpha, beta
    [schedule]      variant ("relative-barrier" | "deterministic-barrier"),
                    alpha, beta, b0, dt
    [certificates]  down_floor, x_a, unbounded, recovery_floor { ... },
                    recovery_decay { ... }, recovery_eps_decay { ... }

Tabulated kernels load their density from CSV: a header row
``x,<y1>,<y2>,...`` naming the ordinate grid, then one row per state.
"""

import csv
import os

import numpy as np

try:
    import tomllib as _toml
except ImportError:  # python < 3.11
    import tomli as _toml

from .ctdiscretize import (DeterministicBarrierSchedule, GBMBarrierKernel,
                           InverseBesselKernel, RelativeBarrierSchedule)
from .errors import ConfigError
from .iid import geometric_down_model, harmonic_ladder_model, iid_binomial_model
from .kernels import (AffineDropKernel, BubbleCertificates, DecayBound,
                      ExponentialRatioKernel, FloorBound,
                      GaussianLogStepKernel, TabulatedKernel, TwoPointKernel,
                      binomial_kernel, double_or_floor_kernel)
from .quadrature import log_grid

__all__ = ["load_config", "RunConfig", "load_tabulated_csv"]

_SECTIONS = {"kernel", "iid", "grid", "run", "solve", "schedule",
             "certificates"}

_KERNEL_KEYS = {
    "double-or-floor": {"floor"},
    "binomial": {"up", "down", "p_up"},
    "affine-drop": set(),
    "exponential-ratio": set(),
    "gaussian-log-step": {"sigma"},
    "two-point": {"a", "xb"},
    "tabulated": {"csv", "completion"},
    "inverse-bessel": {"alpha", "beta"},
    "gbm-barrier": {"alpha", "beta", "sigma"},
}

_IID_KEYS = {
    "harmonic-ladder": set(),
    "iid-binomial": {"up", "down", "p_up"},
    "geometric-down": {"ratio", "down"},
}

_GRID_KEYS = {"lo", "hi", "n"}
_RUN_KEYS = {"x0", "steps", "paths", "seed", "k", "run_start", "threshold",
             "eps"}
_SOLVE_KEYS = {"scheme", "tol", "max_iter", "alpha", "beta"}
_SCHEDULE_KEYS = {"variant", "alpha", "beta", "b0", "dt"}
_CERT_KEYS = {"down_floor", "x_a", "unbounded", "recovery_floor",
              "recovery_decay", "recovery_eps_decay"}
_BOUND_KEYS = {"family", "coeff", "rate", "x_from"}


def _reject_unknown(mapping, allowed, context):
    extra = sorted(set(mapping) - allowed)
    if extra:
        raise ConfigError(
            f"unknown key(s) in [{context}]: {', '.join(extra)}; "
            f"allowed: {', '.join(sorted(allowed))}")


def _need(mapping, key, context):
    if key not in mapping:
        raise ConfigError(f"[{context}] requires key '{key}'")
    return mapping[key]


def load_tabulated_csv(path):
    """Read a density table (header 'x,y1,y2,...') into a TabulatedKernel."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read kernel CSV {path!r}: {exc}") from exc
    if len(rows) < 2 or len(rows[0]) < 3:
        raise ConfigError(f"kernel CSV {path!r} needs a header row "
                          "'x,y1,y2,...' and at least one state row")
    try:
        ordinates = np.array([float(v) for v in rows[0][1:]])
        body = np.array([[float(v) for v in row] for row in rows[1:]])
    except ValueError as exc:
        raise ConfigError(f"kernel CSV {path!r}: non-numeric cell "
                          f"({exc})") from exc
    return body[:, 0], ordinates, body[:, 1:]


class RunConfig:
    """Validated configuration; builders construct objects on demand."""

    def __init__(self, raw, base_dir="."):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a table")
        _reject_unknown(raw, _SECTIONS, "config")
        for name in _SECTIONS:
            if name in raw and not isinstance(raw[name], dict):
                raise ConfigError(f"[{name}] must be a table")
        self.raw = raw
        self.base_dir = base_dir
        for section, allowed in (("grid", _GRID_KEYS), ("run", _RUN_KEYS),
                                 ("solve", _SOLVE_KEYS),
                                 ("schedule", _SCHEDULE_KEYS),
                                 ("certificates", _CERT_KEYS)):
            _reject_unknown(raw.get(section, {}), allowed, section)

    # -- generic accessors -------------------------------------------------

    def _num(self, section, key, default, kind=float, positive=False):
        val = self.raw.get(section, {}).get(key, default)
        if val is None:
            return None
        try:
            val = kind(val)
        except (TypeError, ValueError):
            raise ConfigError(f"[{section}] {key} must be a number, "
                              f"got {val!r}") from None
        if positive and val <= 0:
            raise ConfigError(f"[{section}] {key} must be positive")
        return val

    # -- sections ----------------------------------------------------------

    def kernel(self):
        sec = self.raw.get("kernel")
        if sec is None:
            raise ConfigError("this subcommand needs a [kernel] section")
        family = _need(sec, "family", "kernel")
        if family not in _KERNEL_KEYS:
            raise ConfigError(f"[kernel] unknown family {family!r}; have "
                              f"{', '.join(sorted(_KERNEL_KEYS))}")
        _reject_unknown(sec, _KERNEL_KEYS[family] | {"family"}, "kernel")
        g = sec.get
        try:
            if family == "double-or-floor":
                return double_or_floor_kernel(float(g("floor", 0.5)))
            if family == "binomial":
                return binomial_kernel(float(g("up", 1.5)),
                                       float(g("down", 0.5)),
                                       float(g("p_up", 0.5)))
            if family == "affine-drop":
                return AffineDropKernel()
            if family == "exponential-ratio":
                return ExponentialRatioKernel()
            if family == "gaussian-log-step":
                return GaussianLogStepKernel(float(g("sigma", 1.0)))
            if family == "two-point":
                a = float(_need(sec, "a", "kernel"))
                xb = float(_need(sec, "xb", "kernel"))
                return TwoPointKernel(lambda x: a, lambda x: xb / x)
            if family == "inverse-bessel":
                return InverseBesselKernel(float(g("alpha", 1.0)),
                                           float(g("beta", 1.0)))
            if family == "gbm-barrier":
                return GBMBarrierKernel(float(g("alpha", 1.0)),
                                        float(g("beta", 1.0)),
                                        float(g("sigma", 1.0)))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[kernel] bad parameter: {exc}") from exc
        # tabulated
        path = _need(sec, "csv", "kernel")
        if not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        states, ordinates, values = load_tabulated_csv(path)
        return TabulatedKernel(states, ordinates, values,
                               completion=str(g("completion", "atom")))

    def iid_model(self):
        sec = self.raw.get("iid")
        if sec is None:
            raise ConfigError("this subcommand needs an [iid] section")
        model = _need(sec, "model", "iid")
        if model not in _IID_KEYS:
            raise ConfigError(f"[iid] unknown model {model!r}; have "
                              f"{', '.join(sorted(_IID_KEYS))}")
        _reject_unknown(sec, _IID_KEYS[model] | {"model"}, "iid")
        g = sec.get
        try:
            if model == "harmonic-ladder":
                return harmonic_ladder_model()
            if model == "iid-binomial":
                return iid_binomial_model(float(g("up", 1.5)),
                                          float(g("down", 0.5)),
                                          float(g("p_up", 0.5)))
            return geometric_down_model(float(g("ratio", 0.5)),
                                        float(g("down", 0.5)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[iid] bad parameter: {exc}") from exc

    def grid(self, lo=1e-2, hi=50.0, n=400):
        lo = self._num("grid", "lo", lo, positive=True)
        hi = self._num("grid", "hi", hi, positive=True)
        n = self._num("grid", "n", n, kind=int, positive=True)
        if hi <= lo:
            raise ConfigError("[grid] needs lo < hi")
        if n < 4:
            raise ConfigError("[grid] needs at least 4 nodes")
        return log_grid(lo, hi, n)

    def run_value(self, key, default, kind=float, positive=False):
        return self._num("run", key, default, kind=kind, positive=positive)

    def solve_options(self):
        sec = self.raw.get("solve", {})
        scheme = sec.get("scheme", "contraction")
        if scheme not in ("contraction", "picard"):
            raise ConfigError("[solve] scheme must be 'contraction' or "
                              f"'picard', got {scheme!r}")
        return {
            "scheme": scheme,
            "tol": self._num("solve", "tol", 1e-9, positive=True),
            "max_iter": self._num("solve", "max_iter", 500, kind=int,
                                  positive=True),
            "alpha": self._num("solve", "alpha", None, positive=True),
            "beta": self._num("solve", "beta", None, positive=True),
        }

    def schedule(self):
        sec = self.raw.get("schedule", {})
        variant = sec.get("variant", "relative-barrier")
        if variant == "relative-barrier":
            return RelativeBarrierSchedule(
                alpha=self._num("schedule", "alpha", 1.0, positive=True),
                beta=self._num("schedule", "beta", 1.0, positive=True))
        if variant == "deterministic-barrier":
            return DeterministicBarrierSchedule(
                b0=self._num("schedule", "b0", 2.0, positive=True))
        raise ConfigError("[schedule] variant must be 'relative-barrier' or "
                          f"'deterministic-barrier', got {variant!r}")

    def substep_dt(self):
        return self._num("schedule", "dt", None, positive=True)

    def certificates(self):
        sec = self.raw.get("certificates")
        if sec is None:
            return None

        def bound(key, cls):
            tab = sec.get(key)
            if tab is None:
                return None
            if not isinstance(tab, dict):
                raise ConfigError(f"[certificates] {key} must be a table")
            _reject_unknown(tab, _BOUND_KEYS, f"certificates.{key}")
            try:
                if cls is FloorBound:
                    return FloorBound(coeff=float(tab["coeff"]),
                                      x_from=float(tab["x_from"]),
                                      family=str(tab.get("family",
                                                         "constant")),
                                      rate=float(tab.get("rate", 0.0)))
                return DecayBound(family=str(tab["family"]),
                                  coeff=float(tab["coeff"]),
                                  rate=float(tab["rate"]),
                                  x_from=float(tab["x_from"]))
            except KeyError as exc:
                raise ConfigError(f"[certificates] {key} missing "
                                  f"{exc.args[0]!r}") from exc
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[certificates] {key}: {exc}") from exc

        unbounded = sec.get("unbounded")
        if unbounded is not None and not isinstance(unbounded, bool):
            raise ConfigError("[certificates] unbounded must be a boolean")
        return BubbleCertificates(
            recovery_floor=bound("recovery_floor", FloorBound),
            recovery_decay=bound("recovery_decay", DecayBound),
            recovery_eps_decay=bound("recovery_eps_decay", DecayBound),
            down_floor=self._num("certificates", "down_floor", None,
                                 positive=True),
            x_a=self._num("certificates", "x_a", None, positive=True),
            unbounded=unbounded,
        )


def load_config(path):
    """Parse and validate a TOML run configuration file."""
    try:
        with open(path, "rb") as fh:
            raw = _toml.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid TOML: {exc}") from exc
    return RunConfig(raw, base_dir=os.path.dirname(os.path.abspath(path)))
