"""Configuration parsing, artifact format, determinism and exit codes of the CLI."""

import os

import numpy as np
import pytest

from bvwave.cli import (EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main, parse_config, read_config_text,
                        read_csv, write_csv)
from bvwave.errors import ConfigError


def test_dirac_defaults():
    cfg = parse_config("dirac")
    assert cfg.grid.dim == 2 and cfg.options["l"] == 3 and cfg.options["alpha"] == 1.0
    assert cfg.grid.nt == 257


def test_cantor_defaults():
    cfg = parse_config("cantor")
    assert cfg.params.nu == 0.5 and cfg.params.tol_gamma == 3.8e-6
    assert cfg.params.kappa(1e-3) == 0.0


def test_config_file_and_override(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# dirac in 1d\ngrid.dim = 1\ngrid.nx = 17  # coarse\ngrid.nt = 33\n")
    cfg = parse_config("dirac", str(path), ["grid.nt=65"])
    assert cfg.grid.dim == 1 and cfg.grid.nx == (17,) and cfg.grid.nt == 65


@pytest.mark.parametrize("override, needle", [
    (["grid.bogus=1"], "grid.bogus"),
    (["problem.eps=0.1"], "problem.eps"),
    (["grid.nt=abc"], "grid.nt"),
    (["path.nu=2"], "path"),
    (["problem.variant=open"], "problem.variant"),
])
def test_bad_keys_name_the_key(override, needle):
    with pytest.raises(ConfigError, match=needle.replace(".", r"\.")):
        parse_config("dirac", overrides=override)


def test_custom_requires_grid():
    with pytest.raises(ConfigError, match=r"grid\.nt required"):
        parse_config("custom", overrides=["grid.nx=9", "grid.T=1"])


def test_duplicate_and_malformed_lines():
    with pytest.raises(ConfigError, match="duplicate"):
        read_config_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match="key = value"):
        read_config_text("just words\n")


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    data = rng.standard_normal((20, 3)) * 10.0 ** rng.integers(-300, 300, (20, 3))
    path = tmp_path / "x.csv"
    write_csv(str(path), ["a", "b", "c"], data)
    header, back = read_csv(str(path))
    assert header == ["a", "b", "c"]
    assert np.array_equal(back, data)
    assert b"\r" not in path.read_bytes()


def _smoke_args(out):
    return ["dirac", "--out", str(out), "--override", "grid.dim=1",
            "--override", "grid.nx=33", "--override", "grid.nt=129",
            "--override", "problem.variant=discrete", "--override", "path.tol_gamma=1e-8"]


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    code = main(_smoke_args(out))
    return code, out


def test_smoke_run_artifacts(smoke_run):
    code, out = smoke_run
    assert code == EXIT_OK
    for name in ("control.csv", "derivative.csv", "adjoint.csv", "newton_history.csv",
                 "value_function.csv", "diagnostics.csv", "summary.txt"):
        assert os.path.exists(out / name)
    header, ctrl = read_csv(str(out / "control.csv"))
    assert header == ["t", "u_1"]
    t, u = ctrl[:, 0], ctrl[:, 1]
    # the manufactured control steps 0 -> 1 -> 0 -> 1 at t = 1/3, 1, 5/3
    for a, b, level in ((0.0, 0.3, 0.0), (0.37, 0.95, 1.0), (1.05, 1.62, 0.0),
                        (1.72, 2.0, 1.0)):
        sel = (t > a) & (t < b)
        assert np.max(np.abs(u[sel] - level)) < 0.02
    _, hist = read_csv(str(out / "newton_history.csv"))
    for gamma in np.unique(hist[:, 0]):
        assert hist[hist[:, 0] == gamma][-1, 2] <= 1e-6


def test_rerun_is_byte_identical(smoke_run, tmp_path):
    _, first = smoke_run
    assert main(_smoke_args(tmp_path)) == EXIT_OK
    for name in sorted(os.listdir(first)):
        assert (first / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_zero_custom_problem(tmp_path):
    code = main(["custom", "--out", str(tmp_path), "--override", "grid.nx=9",
                 "--override", "grid.nt=17", "--override", "grid.T=1",
                 "--override", "problem.alpha=1"])
    assert code == EXIT_OK
    _, ctrl = read_csv(str(tmp_path / "control.csv"))
    assert np.all(ctrl[:, 1] == 0.0)


def test_exit_codes(tmp_path, capsys):
    assert main(["dirac", "--override", "grid.nope=1"]) == EXIT_CONFIG
    assert "grid.nope" in capsys.readouterr().err
    code = main(["dirac", "--out", str(tmp_path), "--override", "grid.dim=1",
                 "--override", "grid.nx=17", "--override", "grid.nt=65",
                 "--override", "newton.max_iters=1", "--override", "path.tol_gamma=1e-3"])
    assert code == EXIT_SOLVER
    assert "FLAGGED" in (tmp_path / "summary.txt").read_text()
