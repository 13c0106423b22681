"""Command-line front end: analyses in, CSV/JSON artifacts out.

Subcommands
    kernel-report   diagnostics table (x, a, b, b_eps) + verdict JSON
    solve-default   mass-functional table (x, M, M/x) + solve-report JSON
    simulate        drawdown estimate JSON + horizon-ladder table
    iid-check       independent-returns verdict JSON + series-prefix table
    bessel          inverse-Bessel mass-loss report JSON + ladder table

Every run is driven by a TOML config (see :mod:`bubblekit.config`);
common numeric knobs can be overridden on the command line.  All
randomness is seeded explicitly, so documented invocations reproduce
bit-for-bit.  Exit codes: 0 success, 2 configuration error, 3
non-convergence, 4 certificate rejection.
"""

import argparse
import csv
import json
import os
import sys

from .config import RunConfig, load_config
from .ctdiscretize import RelativeBarrierSchedule, bessel_bubble_report
from .errors import (BubblekitError, CertificateRejectionError, ConfigError,
                     HypothesisViolationError, NonConvergenceError)
from .iid import iid_bubble_check, survival_product
from .kernels import classify_markov_bubble, diagnose
from .montecarlo import (DrawdownEstimate, drawdowns, estimate_mass_loss,
                         estimate_monotone_run, mass_loss_ladder, simulate)
from .volterra import SolveReport, contraction_solve, picard_from_identity

__all__ = ["main", "build_parser", "read_table", "read_estimate",
           "read_solve_report", "read_verdict"]


# ---------------------------------------------------------------------------
# artifact writers/readers (round-trip tested)


def _write_table(out_dir, stem, fmt, header, rows):
    rows = [list(r) for r in rows]
    path = os.path.join(out_dir, f"{stem}.{fmt}")
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, float) else v
                            for v in row])
    else:
        payload = [dict(zip(header, row)) for row in rows]
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return path


def _write_json(out_dir, name, obj):
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_table(path):
    """Read a table artifact back: (header, list of numeric rows)."""
    if path.endswith(".json"):
        with open(path) as fh:
            payload = json.load(fh)
        if not payload:
            return [], []
        header = list(payload[0])
        return header, [[row[k] for k in header] for row in payload]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    out = []
    for row in rows[1:]:
        out.append([float(v) if _floatish(v) else v for v in row])
    return header, out


def _floatish(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def read_estimate(path):
    """Re-parse an estimate JSON artifact into a DrawdownEstimate."""
    with open(path) as fh:
        d = json.load(fh)
    return DrawdownEstimate(
        estimand=d["estimand"], estimate=d["value"],
        std_error=d["std_error"], n_paths=d["N"], horizon=d["n"],
        seed=d["seed"], n_censored=d.get("n_censored", 0),
        n_event=d.get("n_event", -1))


def read_solve_report(path):
    """Re-parse a solve-report JSON artifact into a SolveReport."""
    with open(path) as fh:
        d = json.load(fh)
    return SolveReport(
        converged=d["converged"], iterations=d["iterations"],
        sup_residual=d["sup_residual"], last_delta=d["last_delta"],
        monotone=d["monotone"], scheme=d["scheme"],
        contraction_observed=d.get("contraction_observed"),
        alpha=d.get("alpha"), beta=d.get("beta"),
        hypothesis_source=d.get("hypothesis_source"),
        notes=d.get("notes", {}))


def read_verdict(path):
    """Re-parse a verdict JSON artifact into a BubbleVerdict."""
    from .kernels import BubbleVerdict
    with open(path) as fh:
        d = json.load(fh)
    return BubbleVerdict(verdict=d["verdict"], route=d["route"],
                         evidence=d.get("evidence", {}))


# ---------------------------------------------------------------------------
# subcommands


def _load(args):
    cfg = load_config(args.config) if args.config else RunConfig({})
    for section, key, value in (
            ("run", "seed", args.seed), ("run", "paths", args.paths),
            ("run", "steps", args.steps), ("solve", "tol", args.tol),
            ("solve", "max_iter", args.max_iter)):
        if value is not None:
            cfg.raw.setdefault(section, {})[key] = value
    os.makedirs(args.out, exist_ok=True)
    return cfg


def cmd_kernel_report(args):
    cfg = _load(args)
    kernel = cfg.kernel()
    grid = cfg.grid(lo=0.5, hi=50.0, n=48)
    eps = cfg.run_value("eps", 0.5, positive=True)
    diag = diagnose(kernel, grid, eps=eps)
    table = _write_table(args.out, "kernel_report", args.format,
                         ["x", "a", "b", "b_eps"], diag.rows())
    verdict = classify_markov_bubble(kernel, grid, eps=eps,
                                     certificates=cfg.certificates())
    vpath = _write_json(args.out, "kernel_verdict.json",
                        verdict.to_json_dict())
    print(f"verdict: {verdict.verdict} ({verdict.route})")
    print(f"wrote {table}\nwrote {vpath}")
    return 0


def cmd_solve_default(args):
    cfg = _load(args)
    kernel = cfg.kernel()
    grid = cfg.grid()
    opts = cfg.solve_options()
    solver = (contraction_solve if opts["scheme"] == "contraction"
              else picard_from_identity)
    kwargs = {"tol": opts["tol"], "max_iter": opts["max_iter"]}
    if opts["scheme"] == "contraction":
        kwargs.update(alpha=opts["alpha"], beta=opts["beta"])
    try:
        M, report = solver(kernel, grid, **kwargs)
    except NonConvergenceError as exc:
        report = exc.report
        rpath = _write_json(args.out, "solve_report.json",
                            report.to_json_dict())
        best = getattr(exc, "best", None)
        if best is not None:
            _write_table(args.out, "solution", args.format,
                         ["x", "M", "M_over_x"],
                         zip(best.grid, best.values, best.ratio()))
        print(f"did not converge after {report.iterations} iterations "
              f"(last delta {report.last_delta:.3g}); wrote {rpath}",
              file=sys.stderr)
        return 3
    table = _write_table(args.out, "solution", args.format,
                         ["x", "M", "M_over_x"],
                         zip(M.grid, M.values, M.ratio()))
    rpath = _write_json(args.out, "solve_report.json", report.to_json_dict())
    print(f"converged in {report.iterations} iterations, sup residual "
          f"{report.sup_residual:.3g}")
    print(f"wrote {table}\nwrote {rpath}")
    return 0


def _ladder_rows(estimates):
    for e in estimates:
        yield [e.estimand, e.horizon, e.estimate, e.std_error,
               e.n_censored, e.n_event]


def cmd_simulate(args):
    cfg = _load(args)
    if "kernel" in cfg.raw:
        model = cfg.kernel()
    elif "iid" in cfg.raw:
        model = cfg.iid_model()
    else:
        raise ConfigError("simulate needs a [kernel] or [iid] section")
    x0 = cfg.run_value("x0", 1.0, positive=True)
    n = cfg.run_value("steps", 60, kind=int, positive=True)
    N = cfg.run_value("paths", 10000, kind=int, positive=True)
    seed = cfg.run_value("seed", 0, kind=int)
    k = cfg.run_value("k", 1, kind=int, positive=True)
    run_start = cfg.run_value("run_start", 0, kind=int)
    threshold = cfg.run_value("threshold", None)
    batch = simulate(model, x0, n, N, seed)
    record = drawdowns(batch, k_max=k, run_start=run_start,
                       threshold=threshold)
    est = estimate_mass_loss(batch, record, k=k)
    epath = _write_json(args.out, "estimate.json", est.to_json_dict())
    ladder = mass_loss_ladder(batch, record, k=k)
    ladder += estimate_monotone_run(batch, record, run_start=run_start,
                                    threshold=threshold)
    tpath = _write_table(args.out, "ladder", args.format,
                         ["estimand", "horizon", "value", "std_error",
                          "n_censored", "n_event"], _ladder_rows(ladder))
    print(f"{est.estimand}: {est.estimate:.6g} +- {est.std_error:.3g} "
          f"(N={est.n_paths}, censored {est.n_censored})")
    print(f"wrote {epath}\nwrote {tpath}")
    return 0


def cmd_iid_check(args):
    cfg = _load(args)
    model = cfg.iid_model()
    prefix = cfg.run_value("steps", 1000, kind=int, positive=True)
    verdict = iid_bubble_check(model, partial_N=prefix)
    vpath = _write_json(args.out, "iid_verdict.json", verdict.to_json_dict())
    ks = range(1, min(prefix, 200) + 1)
    a = model.a_seq(len(ks))
    b = model.b_seq(len(ks))
    rows = [[k, float(a[k - 1]), float(b[k - 1]),
             survival_product(model, 1, k)] for k in ks]
    tpath = _write_table(args.out, "iid_series", args.format,
                         ["k", "a_k", "b_k", "survival_product"], rows)
    print(f"verdict: {verdict.verdict} ({verdict.route})")
    print(f"wrote {vpath}\nwrote {tpath}")
    return 0


def cmd_bessel(args):
    cfg = _load(args)
    schedule = cfg.schedule()
    if not isinstance(schedule, RelativeBarrierSchedule):
        raise ConfigError("the bessel subcommand analyzes the relative-"
                          "barrier schedule; set [schedule] variant "
                          "accordingly (or omit it)")
    x0 = cfg.run_value("x0", 1.0, positive=True)
    n = cfg.run_value("steps", 100, kind=int, positive=True)
    N = cfg.run_value("paths", 10000, kind=int, positive=True)
    seed = cfg.run_value("seed", 0, kind=int)
    report = bessel_bubble_report(x0, schedule.alpha, schedule.beta, n, N,
                                  seed)
    rpath = _write_json(args.out, "bessel_report.json",
                        report.to_json_dict())
    tpath = _write_table(args.out, "bessel_ladder", args.format,
                         ["estimand", "horizon", "value", "std_error",
                          "n_censored", "n_event"],
                         _ladder_rows(report.monotone_run))
    loss = report.mass_loss
    sig = (abs(loss.estimate / loss.std_error)
           if loss.std_error > 0 else float("inf"))
    print(f"mass loss at first drawdown: {loss.estimate:.6g} "
          f"+- {loss.std_error:.3g} ({sig:.1f} sigma)")
    print(f"wrote {rpath}\nwrote {tpath}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bubblekit",
        description="Detect and quantify lost martingale mass at drawdowns.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    commands = {
        "kernel-report": (cmd_kernel_report,
                          "kernel diagnostics table and bubble verdict"),
        "solve-default": (cmd_solve_default,
                          "solve the mass functional M = K(M)"),
        "simulate": (cmd_simulate,
                     "Monte-Carlo drawdown mass-loss estimates"),
        "iid-check": (cmd_iid_check,
                      "independent-returns bubble dichotomy"),
        "bessel": (cmd_bessel,
                   "inverse-Bessel relative-barrier mass-loss report"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--paths", type=int, help="override [run] paths")
        p.add_argument("--steps", type=int, help="override [run] steps")
        p.add_argument("--tol", type=float, help="override [solve] tol")
        p.add_argument("--max-iter", type=int, dest="max_iter",
                       help="override [solve] max_iter")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="table artifact format")
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CertificateRejectionError as exc:
        print(f"certificate rejected: {exc}", file=sys.stderr)
        return 4
    except (NonConvergenceError, HypothesisViolationError) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return 3
    except BubblekitError as exc:
        # invalid kernels/models are configuration-class failures
        print(f"invalid setup: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
