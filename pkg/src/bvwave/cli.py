"""Batch command line interface: configuration, orchestration and CSV output.

Configuration files are flat ``key = value`` text with dotted keys::

    # comment
    grid.nx = 65
    path.nu = 0.1

Every key can also be given with ``--override key=value``.  Unknown keys are
rejected.  Exit codes: 0 success, 2 configuration error, 3 solver failure
(including a Newton stage that hit its iteration budget).
"""

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import compute_adjoint_functional, control_values
from .errors import ConfigError, SolverError, ValidationError
from .types import ControlComponent, DerivativeControl, ExactControl, Grid, \
    RegularizationParams

log = logging.getLogger(__name__)

PROBLEMS = ("dirac", "cantor", "custom")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _floats(text):
    return tuple(float(s) for s in text.replace(",", " ").split())


def _triples(text):
    """``"a:b:s, a:b:s"`` -> ``((a, b, s), ...)``."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        parts = item.split(":")
        if len(parts) != 3:
            raise ValueError(f"expected start:end:sign, got {item!r}")
        out.append((float(parts[0]), float(parts[1]), int(float(parts[2]))))
    return tuple(out)


def _pairs(text):
    """``"t:w, t:w"`` -> ``((t, w), ...)``."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        parts = item.split(":")
        if len(parts) != 2:
            raise ValueError(f"expected location:weight, got {item!r}")
        out.append((float(parts[0]), float(parts[1])))
    return tuple(out)


def _choice(*allowed):
    def parse(text):
        if text not in allowed:
            raise ValueError(f"expected one of {allowed}")
        return text
    return parse


# key -> (parser, problems the key applies to)
_ALL = PROBLEMS
KEYS = {
    "grid.dim": (int, _ALL),
    "grid.lo": (_floats, _ALL),
    "grid.hi": (_floats, _ALL),
    "grid.nx": (_floats, _ALL),
    "grid.nt": (int, _ALL),
    "grid.T": (float, _ALL),
    "problem.alpha": (float, _ALL),
    "problem.l": (int, ("dirac",)),
    "problem.variant": (_choice("closed", "discrete"), ("dirac",)),
    "problem.scale": (float, ("cantor",)),
    "problem.rise": (_floats, ("cantor",)),
    "problem.fall": (_floats, ("cantor",)),
    "problem.plateaus": (_triples, ("cantor", "custom")),
    "problem.eps": (float, ("cantor", "custom")),
    "problem.g_scale": (float, ("cantor", "custom")),
    "problem.g_half_width": (float, ("cantor", "custom")),
    "problem.atoms": (_pairs, ("custom",)),
    "problem.offset": (float, ("custom",)),
    "problem.f_radius": (float, ("custom",)),
    "path.gamma0": (float, _ALL),
    "path.nu": (float, _ALL),
    "path.tol_gamma": (float, _ALL),
    "path.c_kappa": (float, _ALL),
    "path.kappa_exp": (float, _ALL),
    "newton.tol": (float, _ALL),
    "newton.max_iters": (int, _ALL),
    "krylov.tol": (float, _ALL),
    "krylov.max_iters": (int, _ALL),
    "krylov.restart": (int, _ALL),
    "krylov.atol": (float, _ALL),
    "run.seed": (int, _ALL),
    "run.out": (str, _ALL),
}

_PATH_DEFAULTS = {"path.gamma0": 1.0, "path.nu": 0.1, "path.c_kappa": 1.0,
                  "path.kappa_exp": 4.0, "newton.tol": 1e-6, "newton.max_iters": 50,
                  "krylov.tol": 1e-10, "krylov.max_iters": 2000, "krylov.restart": 50,
                  "run.seed": 0, "run.out": "out"}

DEFAULTS = {
    "dirac": {"grid.dim": 2, "grid.lo": (-1.0,), "grid.hi": (1.0,), "grid.nx": (33.0,),
              "grid.nt": 257, "grid.T": 2.0, "problem.l": 3, "problem.alpha": 1.0,
              "problem.variant": "closed", "path.tol_gamma": 1e-8},
    "cantor": {"grid.dim": 2, "grid.lo": (-2.0,), "grid.hi": (2.0,), "grid.nx": (33.0,),
               "grid.nt": 513, "grid.T": 5.0, "path.nu": 0.5, "path.tol_gamma": 3.8e-6,
               "path.c_kappa": 0.0},
    "custom": {"grid.dim": 1, "grid.lo": (-1.0,), "grid.hi": (1.0,),
               "path.tol_gamma": 1e-6, "problem.eps": 0.1},
}

REQUIRED = {"custom": ("grid.nx", "grid.nt", "grid.T")}


@dataclass(frozen=True)
class RunConfig:
    """Validated run description."""

    problem: str
    grid: Grid
    params: RegularizationParams
    options: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0


def read_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into a dict of raw strings."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key}")
        raw[key] = value
    return raw


def _convert(problem, raw):
    values = {}
    for key, text in raw.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key}")
        parser, problems = KEYS[key]
        if problem not in problems:
            raise ConfigError(f"key {key} does not apply to problem {problem}")
        try:
            values[key] = parser(text)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {key}: {text!r} ({exc})") from None
    return values


def parse_config(problem, path=None, overrides=(), out=None):
    """Build a :class:`RunConfig` from an optional file and ``key=value`` overrides.

    Raises
    ------
    ConfigError
        Malformed input, unknown keys or an invalid combination; the message
        names the offending key.
    """
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}; choose from {PROBLEMS}")
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw.update(read_config_text(fh.read(), str(path)))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        raw[key] = value
    if out is not None:
        raw["run.out"] = out

    values = dict(_PATH_DEFAULTS)
    values.update(DEFAULTS[problem])
    values.update(_convert(problem, raw))
    for key in REQUIRED.get(problem, ()):
        if key not in values:
            raise ConfigError(f"{key} required")

    try:
        grid = _make_grid(values)
    except ValidationError as exc:
        raise ConfigError(f"grid: {exc}") from None
    try:
        params = RegularizationParams(
            gamma0=values["path.gamma0"], nu=values["path.nu"],
            tol_gamma=values["path.tol_gamma"], tol_newton=values["newton.tol"],
            c_kappa=values["path.c_kappa"], kappa_exp=values["path.kappa_exp"],
            max_newton_iters=values["newton.max_iters"], krylov_tol=values["krylov.tol"],
            krylov_max_iters=values["krylov.max_iters"],
            krylov_restart=values["krylov.restart"], krylov_atol=values.get("krylov.atol"))
    except ValidationError as exc:
        raise ConfigError(f"path/newton/krylov: {exc}") from None
    options = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("problem.")}
    config = RunConfig(problem, grid, params, options, values["run.out"], values["run.seed"])
    build_problem(config)  # validates problem preconditions
    return config


def _make_grid(values):
    dim = values["grid.dim"]
    nx = values["grid.nx"]
    if any(n != int(n) for n in nx):
        raise ValidationError("grid.nx must be integers")
    nx = tuple(int(n) for n in nx)

    def per_axis(key, vals):
        if len(vals) == 1:
            return vals * dim
        if len(vals) != dim:
            raise ValidationError(f"{key} needs 1 or {dim} entries")
        return vals

    return Grid(dim, per_axis("grid.lo", values["grid.lo"]),
                per_axis("grid.hi", values["grid.hi"]), per_axis("grid.nx", nx),
                values["grid.T"], values["grid.nt"])


def build_problem(config: RunConfig):
    """Instantiate the manufactured problem described by ``config``."""
    from .manufactured import build_cantor_example, build_dirac_example, \
        build_dirac_example_discrete, build_plateau_example
    opt = config.options
    try:
        if config.problem == "dirac":
            builder = build_dirac_example_discrete if opt["variant"] == "discrete" \
                else build_dirac_example
            return builder(config.grid.dim, opt["l"], opt["alpha"], config.grid)
        if config.problem == "cantor":
            params = {k: opt[k] for k in ("plateaus", "eps", "rise", "fall", "scale",
                                         "g_scale", "g_half_width") if k in opt}
            prob = build_cantor_example(config.grid, params)
            return prob
        atoms = opt.get("atoms", ())
        ec = ExactControl((ControlComponent(atoms=atoms, offset=opt.get("offset", 0.0)),))
        return build_plateau_example(config.grid, opt.get("plateaus", ()), opt["eps"], ec,
                                     g_scale=opt.get("g_scale", 1.0),
                                     g_half_width=opt.get("g_half_width", 0.5),
                                     f_radius=opt.get("f_radius", _default_radius(config.grid)),
                                     alpha=opt.get("alpha"), kind="custom")
    except ValidationError as exc:
        raise ConfigError(f"problem: {exc}") from None


def _default_radius(grid):
    return 0.5 * min(hi - lo for lo, hi in zip(grid.space_lo, grid.space_hi)) * 0.9


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path, header, rows):
    """Atomically write a CSV file with ``%.17g`` numbers and LF line endings."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(x if isinstance(x, str) else _fmt(x) for x in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".txt")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def read_csv(path):
    """Reload a CSV written by :func:`write_csv` as ``(header, array)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        rows = [[float(x) for x in line.rstrip("\n").split(",")] for line in fh if line.strip()]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_artifacts(out, data, dc, reports, diag, config, status):
    """Write all CSV artifacts and the run summary into ``out``."""
    grid = data.geometry
    t = grid.times
    m = data.m
    u = control_values(dc, grid.tau)
    psi = compute_adjoint_functional(data, dc).psi
    comp = range(1, m + 1)

    write_csv(os.path.join(out, "control.csv"), ["t"] + [f"u_{i}" for i in comp],
              (np.r_[t[n], u[:, n]] for n in range(grid.nt)))
    write_csv(os.path.join(out, "derivative.csv"), ["t"] + [f"v_{i}" for i in comp],
              (np.r_[t[n], dc.v[:, n]] for n in range(grid.nt)))
    alpha = data.alpha
    header = ["t"] + [f"psi_{i}" for i in comp] + [f"alpha_{i}" for i in comp] + \
        [f"at_bound_{i}" for i in comp]
    rows = []
    for n in range(grid.nt):
        at_bound = [int(abs(psi[j, n]) >= alpha[j]) for j in range(m)]
        rows.append([t[n], *psi[:, n], *alpha, *at_bound])
    write_csv(os.path.join(out, "adjoint.csv"), header, rows)

    rows = []
    for r in reports:
        for it, res in enumerate(r.residuals):
            kry = r.krylov_iters[it - 1] if it > 0 else 0
            rows.append([r.gamma, it, res, kry])
    write_csv(os.path.join(out, "newton_history.csv"),
              ["gamma", "iter", "residual_norm", "krylov_iters"], rows)

    rows = [[r.gamma, r.value, r.costs.get("tracking", np.nan), r.costs.get("tv", np.nan),
             r.costs.get("h1", np.nan), r.costs.get("offset", np.nan), int(r.converged)]
            for r in reports]
    write_csv(os.path.join(out, "value_function.csv"),
              ["gamma", "V", "tracking", "tv", "h1", "offset", "converged"], rows)

    rows = []
    for key in ("sparsity_mass", "psi_sup", "psi_sup_ratio", "sign_separation",
                "tv_trapezoid", "tv_discrete", "l1_error", "l1_exact", "tv_gap"):
        if key in diag:
            for j, val in enumerate(np.atleast_1d(diag[key]), 1):
                rows.append([key, str(j), val])
    for key in ("value_monotone", "value_concave"):
        if key in diag:
            rows.append([key, "0", int(diag[key])])
    if "cost_gap" in diag and len(diag["cost_gap"]):
        rows.append(["cost_gap_final", "0", diag["cost_gap"][0]])
    write_csv(os.path.join(out, "diagnostics.csv"), ["quantity", "component", "value"],
              rows)

    lines = [f"problem: {config.problem}",
             f"status: {status}",
             f"grid: dim={grid.dim} nx={grid.nx} nt={grid.nt} T={grid.T!r}",
             f"stages: {len(reports)}",
             f"seed: {config.seed}"]
    for r in reports:
        flag = " FLAGGED" if r.flagged else ""
        lines.append(f"gamma={r.gamma:.6e} newton={r.iterations} "
                     f"residual={r.final_residual:.6e} drift={r.adjoint_drift:.3e} "
                     f"V={r.value:.17g}{flag}")
    write_text(os.path.join(out, "summary.txt"), "\n".join(lines) + "\n")


def run(config: RunConfig):
    """Run path following for ``config`` and write artifacts; return the exit code."""
    from .ssn import PathFollowingError, diagnostics, path_following
    os.makedirs(config.out, exist_ok=True)
    if not os.access(config.out, os.W_OK):
        log.error("output directory %s is not writable", config.out)
        return EXIT_CONFIG
    problem = build_problem(config)
    data = problem.data
    status = "ok"
    try:
        dc, reports = path_following(data, config.params)
    except PathFollowingError as exc:
        log.error("%s", exc)
        dc = exc.control if exc.control is not None else \
            DerivativeControl.zeros(data.m, data.geometry.nt)
        reports = exc.reports
        status = f"aborted: {exc}"
    except SolverError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    flagged = [r.gamma for r in reports if r.flagged or not r.converged]
    if flagged and status == "ok":
        status = "flagged stages at gamma=" + ",".join(f"{g:.3e}" for g in flagged)
    exact_cost = problem.discrete_cost if problem.discrete_cost is not None \
        else problem.exact_cost
    diag = diagnostics(data, reports, dc, config.params, problem.exact_control, exact_cost)
    write_artifacts(config.out, data, dc, reports, diag, config, status)
    return EXIT_OK if status == "ok" else EXIT_SOLVER


def build_parser():
    parser = argparse.ArgumentParser(prog="bvwave",
                                     description="BV-in-time optimal control of the wave "
                                                 "equation by semi-smooth Newton path following.")
    sub = parser.add_subparsers(dest="problem", required=True)
    for name in PROBLEMS:
        p = sub.add_parser(name, help=f"run the {name} problem")
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", help="output directory (overrides run.out)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a configuration key; repeatable")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = parse_config(args.problem, args.config, args.override, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
