"""Command-line interface: subcommands, config handling, exit codes."""

import os
import subprocess
import sys

import numpy as np
import pytest

from bilevel_tv import cli
from bilevel_tv.grids import blur_kernel, convolve
from bilevel_tv.imageio import read_csv, read_pgm
from bilevel_tv.solvers import read_trace
from bilevel_tv.verify import CheckResult


def run_cli(*argv):
    return cli.main(list(argv))


def test_gen_data_denoise_outputs(tmp_path):
    out = tmp_path / "data"
    assert run_cli("gen-data", "--problem", "denoise", "--n", "32", "--seed", "1",
                   "--out", str(out)) == 0
    for name in ("truth.csv", "truth.pgm", "observed.csv", "observed.pgm", "data.txt"):
        assert (out / name).exists()
    b, n = read_csv(out / "truth.csv")
    z, _ = read_csv(out / "observed.csv")
    assert n == 32
    assert abs(float(np.std(z - b)) - 0.1) < 0.01
    read_pgm(out / "truth.pgm")
    meta = dict(line.split("=", 1) for line in (out / "data.txt").read_text().splitlines())
    assert meta["problem"] == "denoise"
    assert meta["seed"] == "1"


def test_gen_data_deconv_is_blur_of_truth(tmp_path):
    out = tmp_path / "data"
    assert run_cli("gen-data", "--problem", "deconv", "--n", "16", "--noise", "0",
                   "--out", str(out)) == 0
    b, n = read_csv(out / "truth.csv")
    z, _ = read_csv(out / "observed.csv")
    k = blur_kernel([0.15, 0.1, 0.75])
    assert k.sum() == pytest.approx(1.0)
    assert np.allclose(z, convolve(k, b, n), atol=1e-12)


def test_run_denoise_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert run_cli("run", "--set", "problem=denoise", "--set", "n=16",
                   "--set", "n_steps=200", "--set", "trace_every=50",
                   "--out", str(out)) == 0
    text = capsys.readouterr().out
    assert "relative error" in text
    for name in ("trace.csv", "restored.csv", "restored.pgm", "alpha.csv", "run_config.txt"):
        assert (out / name).exists()
    cols, rows = read_trace(out / "trace.csv")
    assert rows[0]["k"] == 0
    assert rows[-1]["k"] == 200
    u, n = read_csv(out / "restored.csv")
    assert n == 16
    cfgtext = (out / "run_config.txt").read_text()
    assert "problem=denoise" in cfgtext
    assert "n_steps=200" in cfgtext
    # per-method auto resolution landed in the echoed config
    assert "sigma=2e-06" in cfgtext


def test_run_uses_generated_data_dir(tmp_path):
    data = tmp_path / "data"
    run_cli("gen-data", "--problem", "denoise", "--n", "16", "--out", str(data))
    out = tmp_path / "run"
    assert run_cli("run", "--set", "problem=denoise", "--set", f"data={data}",
                   "--set", "n_steps=100", "--out", str(out)) == 0
    _, rows = read_trace(out / "trace.csv")
    assert rows[-1]["k"] == 100


def test_run_config_file_and_override_precedence(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("problem=denoise\nn=16\nn_steps=50\n# comment\ntrace_every=25\n")
    out = tmp_path / "run"
    assert run_cli("run", "--config", str(cfg), "--set", "n_steps=75",
                   "--out", str(out)) == 0
    _, rows = read_trace(out / "trace.csv")
    assert rows[-1]["k"] == 75


def test_run_unknown_key_exits_one(tmp_path, capsys):
    assert run_cli("run", "--set", "problem=denoise", "--set", "bogus=1",
                   "--out", str(tmp_path / "x")) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_run_requires_valid_problem(capsys):
    assert run_cli("run", "--set", "problem=sharpen") == 1
    assert "problem" in capsys.readouterr().err


def test_run_requires_valid_method(capsys):
    assert run_cli("run", "--set", "problem=denoise", "--set", "method=newton") == 1
    assert "method" in capsys.readouterr().err


def test_run_implicit_method_small(tmp_path):
    out = tmp_path / "run"
    assert run_cli("run", "--set", "problem=denoise", "--set", "n=16",
                   "--set", "method=implicit", "--set", "n_steps=3",
                   "--set", "trace_every=1", "--out", str(out)) == 0
    _, rows = read_trace(out / "trace.csv")
    assert rows[-1]["k"] == 3


def test_run_numerical_failure_exits_two(tmp_path, capsys):
    assert run_cli("run", "--set", "problem=denoise", "--set", "n=16",
                   "--set", "method=implicit", "--set", "n_steps=2",
                   "--set", "krylov_max_iter=1", "--set", "krylov_tol=1e-16",
                   "--out", str(tmp_path / "x")) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_run_deconv_small(tmp_path):
    out = tmp_path / "run"
    assert run_cli("run", "--set", "problem=deconv", "--set", "n=8",
                   "--set", "n_steps=50", "--set", "trace_every=25",
                   "--out", str(out)) == 0
    alpha_line = (out / "alpha.csv").read_text().strip()
    assert len(alpha_line.split(",")) == 4


def test_verify_subcommand_writes_csv(tmp_path, capsys):
    out = tmp_path / "verify"
    assert run_cli("verify", "--suite", "norms", "--out", str(out)) == 0
    text = capsys.readouterr().out
    assert "PASS" in text
    assert "checks passed" in text
    lines = (out / "verify.csv").read_text().splitlines()
    assert lines[0] == "name,metric,bound,passed"
    assert len(lines) == 4


def test_verify_failure_exits_two(monkeypatch, capsys):
    failing = {"norms": lambda: [CheckResult("forced", 1.0, 0.5, False)]}
    monkeypatch.setattr(cli, "run_suites",
                        lambda names=None: [r for n in (names or failing) for r in failing[n]()])
    assert run_cli("verify", "--suite", "norms") == 2
    assert "FAIL" in capsys.readouterr().out


def test_report_compares_against_reference(tmp_path, capsys):
    short = tmp_path / "short"
    long = tmp_path / "long"
    run_cli("run", "--set", "problem=denoise", "--set", "n=16",
            "--set", "n_steps=100", "--set", "trace_every=25", "--out", str(short))
    run_cli("run", "--set", "problem=denoise", "--set", "n=16",
            "--set", "n_steps=300", "--set", "trace_every=100", "--out", str(long))
    rep = tmp_path / "report"
    assert run_cli("report", "--reference", str(long), "--out", str(rep), str(short)) == 0
    assert (rep / "short_report.csv").exists()
    summary = (rep / "summary.csv").read_text().splitlines()
    assert summary[0] == "run,steps,resource,final_e_alpha_rel"
    assert summary[1].startswith("short,100,")
    lines = (rep / "short_report.csv").read_text().splitlines()
    assert lines[0] == "k,resource,wall_s,e_alpha_rel,e_u_rel,grad_norm,J,R"
    # the short run's parameter error against the longer limit shrinks
    first = float(lines[1].split(",")[3])
    last = float(lines[-1].split(",")[3])
    assert last < first


def test_report_rejects_short_reference(tmp_path, capsys):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_cli("run", "--set", "problem=denoise", "--set", "n=16",
            "--set", "n_steps=100", "--set", "trace_every=50", "--out", str(a))
    run_cli("run", "--set", "problem=denoise", "--set", "n=16",
            "--set", "n_steps=120", "--set", "trace_every=60", "--out", str(b))
    assert run_cli("report", "--reference", str(b), "--out", str(tmp_path / "r"), str(a)) == 1
    assert "too short" in capsys.readouterr().err


def test_usage_error_exits_one():
    with pytest.raises(SystemExit) as exc:
        cli.build_parser().parse_args(["run", "--bogus"])
    assert exc.value.code == 1


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "bilevel_tv.cli", "verify", "--suite", "norms"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert "checks passed" in proc.stdout


def test_read_config_diagnostics(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("problem=denoise\nnot a pair\n")
    with pytest.raises(ValueError, match=":2"):
        cli.read_config(path)


def test_resolve_config_types():
    cfg = cli.resolve_config({"problem": "deconv"}, ["sigma=1e-8", "line_search=1"])
    assert cfg["sigma"] == 1e-8
    assert cfg["line_search"] is True
    assert cfg["tau"] is None  # auto, resolved per method at run time
    assert isinstance(cfg["alpha0"], np.ndarray)
    with pytest.raises(ValueError, match="n_steps"):
        cli.resolve_config({"problem": "denoise"}, ["n_steps=many"])
    with pytest.raises(ValueError, match="--set"):
        cli.resolve_config({"problem": "denoise"}, ["oops"])
