"""Configuration loading and the command-line surface.

Every artifact a subcommand writes must re-parse into the type that
produced it (the round-trip invariant), configs reject unknown keys
loudly, and the exit-code contract is 0 success / 2 config error /
3 non-convergence / 4 certificate rejection.
"""

import json
import os

import numpy as np
import pytest

import bubblekit as bk
from bubblekit import cli
from bubblekit.config import RunConfig, load_config
from bubblekit.errors import ConfigError

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# --- config parsing -------------------------------------------------------------

def test_unknown_section_rejected(tmp_path):
    path = _write(tmp_path, "[portfolio]\nweight = 1.0\n")
    with pytest.raises(ConfigError, match="portfolio"):
        load_config(path)


def test_unknown_kernel_key_rejected(tmp_path):
    path = _write(tmp_path,
                  '[kernel]\nfamily = "double-or-floor"\nfloor = 0.5\n'
                  'drift = 0.1\n')
    with pytest.raises(ConfigError, match="drift"):
        load_config(path).kernel()


def test_unknown_family_lists_choices(tmp_path):
    path = _write(tmp_path, '[kernel]\nfamily = "levy"\n')
    with pytest.raises(ConfigError, match="exponential-ratio"):
        load_config(path).kernel()


def test_kernel_and_grid_construction(tmp_path):
    path = _write(tmp_path,
                  '[kernel]\nfamily = "exponential-ratio"\n'
                  '[grid]\nlo = 0.1\nhi = 10.0\nn = 16\n')
    cfg = load_config(path)
    ker = cfg.kernel()
    assert ker.kind == "exponential-ratio"
    grid = cfg.grid()
    assert len(grid) == 16
    assert grid[0] == pytest.approx(0.1)
    assert grid[-1] == pytest.approx(10.0)


def test_iid_model_construction(tmp_path):
    path = _write(tmp_path, '[iid]\nmodel = "harmonic-ladder"\n')
    model = load_config(path).iid_model()
    assert model.kind == "harmonic-ladder"


def test_tabulated_kernel_relative_csv(tmp_path):
    import shutil

    shutil.copy(os.path.join(CONFIGS, "affine_table.csv"),
                tmp_path / "table.csv")
    path = _write(tmp_path,
                  '[kernel]\nfamily = "tabulated"\ncsv = "table.csv"\n'
                  'completion = "atom"\n')
    ker = load_config(path).kernel()
    ker.validate(1.0)


def test_run_value_type_checking(tmp_path):
    path = _write(tmp_path, '[run]\npaths = "many"\n')
    cfg = load_config(path)
    with pytest.raises(ConfigError):
        cfg.run_value("paths", 100, kind=int, positive=True)


def test_certificates_from_config(tmp_path):
    path = _write(tmp_path, """
[kernel]
family = "double-or-floor"
floor = 0.5
[certificates]
down_floor = 0.5
x_a = 1.0
unbounded = true
[certificates.recovery_decay]
family = "power"
coeff = 0.25
rate = 1.0
x_from = 1.0
""")
    certs = load_config(path).certificates()
    assert certs.down_floor == 0.5
    assert certs.recovery_decay.coeff == 0.25


# --- golden configs end-to-end ----------------------------------------------------

def _run(argv):
    return cli.main(argv)


def test_solve_default_golden(tmp_path):
    out = str(tmp_path / "out")
    rc = _run(["solve-default", "--config",
               os.path.join(CONFIGS, "solve_default.toml"), "--out", out])
    assert rc == 0
    header, rows = cli.read_table(os.path.join(out, "solution.csv"))
    assert header == ["x", "M", "M_over_x"]
    assert len(rows) == 400
    report = cli.read_solve_report(os.path.join(out, "solve_report.json"))
    assert report.converged
    assert report.sup_residual < 1e-8
    # solved values match the closed form of this kernel
    xs = np.array([r[0] for r in rows])
    ms = np.array([r[1] for r in rows])
    assert np.max(np.abs(ms - xs * (1 - np.exp(-xs))) / xs) < 1e-4


def test_kernel_report_golden(tmp_path):
    out = str(tmp_path / "out")
    rc = _run(["kernel-report", "--config",
               os.path.join(CONFIGS, "kernel_report.toml"), "--out", out])
    assert rc == 0
    verdict = cli.read_verdict(os.path.join(out, "kernel_verdict.json"))
    assert verdict.verdict == "Bubble"
    header, rows = cli.read_table(os.path.join(out, "kernel_report.csv"))
    assert header[:4] == ["x", "a", "b", "b_eps"]
    a = np.array([r[1] for r in rows])
    np.testing.assert_allclose(a, 0.5, atol=1e-12)


def test_simulate_golden(tmp_path):
    out = str(tmp_path / "out")
    rc = _run(["simulate", "--config",
               os.path.join(CONFIGS, "simulate.toml"), "--out", out])
    assert rc == 0
    est = cli.read_estimate(os.path.join(out, "estimate.json"))
    assert est.estimate == pytest.approx(0.5, abs=1e-12)
    assert est.n_paths == 100000


def test_iid_check_golden(tmp_path):
    out = str(tmp_path / "out")
    rc = _run(["iid-check", "--config",
               os.path.join(CONFIGS, "iid_check.toml"), "--out", out])
    assert rc == 0
    verdict = cli.read_verdict(os.path.join(out, "iid_verdict.json"))
    assert verdict.verdict == "Bubble"
    assert verdict.route == "independent-increments"
    header, rows = cli.read_table(os.path.join(out, "iid_series.csv"))
    assert header == ["k", "a_k", "b_k", "survival_product"]
    # survival column telescopes to (k+1)/(2k)
    last = rows[-1]
    assert last[3] == pytest.approx((last[0] + 1) / (2 * last[0]), rel=1e-9)


def test_tabulated_report_golden(tmp_path):
    out = str(tmp_path / "out")
    rc = _run(["kernel-report", "--config",
               os.path.join(CONFIGS, "tabulated_report.toml"), "--out", out])
    assert rc == 0
    verdict = cli.read_verdict(os.path.join(out, "kernel_verdict.json"))
    assert verdict.verdict == "Indeterminate"


def test_bessel_golden_smoke(tmp_path):
    # trimmed-down version of the shipped config (full run in acceptance)
    cfgtext = """
[kernel]
family = "inverse-bessel"
alpha = 1.0
beta = 1.0
[schedule]
variant = "relative-barrier"
alpha = 1.0
beta = 1.0
[run]
x0 = 1.0
steps = 10
paths = 400
seed = 7
"""
    path = _write(tmp_path, cfgtext)
    out = str(tmp_path / "out")
    rc = _run(["bessel", "--config", path, "--out", out])
    assert rc == 0
    with open(os.path.join(out, "bessel_report.json")) as fh:
        blob = json.load(fh)
    assert blob["model"] == "inverse-bessel-discretized"
    assert blob["mass_loss"]["N"] == 400
    header, _rows = cli.read_table(os.path.join(out, "bessel_ladder.csv"))
    assert "estimand" in header


# --- flag overrides and exit codes --------------------------------------------------

def test_flag_overrides_seed_and_paths(tmp_path):
    out = str(tmp_path / "out")
    rc = _run(["simulate", "--config",
               os.path.join(CONFIGS, "simulate.toml"), "--out", out,
               "--seed", "99", "--paths", "500"])
    assert rc == 0
    est = cli.read_estimate(os.path.join(out, "estimate.json"))
    assert est.seed == 99
    assert est.n_paths == 500


def test_json_format_round_trip(tmp_path):
    out = str(tmp_path / "out")
    rc = _run(["simulate", "--config",
               os.path.join(CONFIGS, "simulate.toml"), "--out", out,
               "--paths", "200", "--format", "json"])
    assert rc == 0
    header, rows = cli.read_table(os.path.join(out, "ladder.json"))
    assert "estimand" in header
    assert rows


def test_config_error_exit_2(tmp_path):
    path = _write(tmp_path, '[kernel]\nfamily = "double-or-floor"\nbogus = 1\n')
    rc = _run(["simulate", "--config", path, "--out", str(tmp_path / "o")])
    assert rc == 2


def test_missing_config_exit_2(tmp_path):
    rc = _run(["simulate", "--config", str(tmp_path / "nope.toml"),
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_non_convergence_exit_3_writes_partial(tmp_path):
    path = _write(tmp_path, """
[kernel]
family = "exponential-ratio"
[grid]
lo = 1e-2
hi = 50.0
n = 60
[solve]
tol = 1e-12
max_iter = 2
""")
    out = str(tmp_path / "out")
    rc = _run(["solve-default", "--config", path, "--out", out])
    assert rc == 3
    report = cli.read_solve_report(os.path.join(out, "solve_report.json"))
    assert not report.converged
    assert report.iterations == 2
    # partial solution still written for inspection
    header, rows = cli.read_table(os.path.join(out, "solution.csv"))
    assert len(rows) == 60


def test_certificate_rejection_exit_4(tmp_path):
    path = _write(tmp_path, """
[kernel]
family = "double-or-floor"
floor = 0.5
[grid]
lo = 1.0
hi = 50.0
n = 24
[certificates]
down_floor = 0.9
x_a = 1.0
""")
    rc = _run(["kernel-report", "--config", path,
               "--out", str(tmp_path / "o")])
    assert rc == 4


def test_estimate_round_trip_preserves_fields(tmp_path):
    batch = bk.simulate(bk.double_or_floor_kernel(0.5), 1.0, 12, 64,
                        master_seed=5)
    est = bk.estimate_mass_loss(batch)
    p = tmp_path / "est.json"
    p.write_text(json.dumps(est.to_json_dict()))
    back = cli.read_estimate(str(p))
    assert back == est
