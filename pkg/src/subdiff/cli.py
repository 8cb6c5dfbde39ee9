"""Command-line front end: ``subdiff <command> --config cfg.json --out DIR``.

Exit codes: 0 success, 1 a check failed or a solver error, 2 invalid config.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import USING_NUMBA, set_threads
from .adjoint import OptimizerError, duality_gap, finite_difference_check, optimize, solve_adjoint, solve_linearized
from .config import ConfigError, ProblemConfig, dumps, load_config, shipped_configs
from .control import tracking_terms
from .forward import SolverError, mild_residual
from .fracops import ScalarTrajectory, rl_integral
from .specfun import MittagLefflerError
from .verify import format_table, run_verify

log = logging.getLogger("subdiff")

COMMANDS = ("basis", "forward", "adjoint", "gradcheck", "optimize", "verify")


def _write(out: Path, name: str, text: str) -> None:
    with open(out / name, "w", newline="\n") as fh:
        fh.write(text)


def _mode_table(cfg: ProblemConfig) -> str:
    b = cfg.basis
    rows = ["x," + ",".join(f"phi_{n + 1}" for n in range(b.n_modes))]
    xs = list(b.grid.nodes)
    if b.grid.has_boundary:
        xs += [0.0, b.grid.length]
    for x, row in zip(xs, b.mode_values):
        rows.append(",".join([f"{x:.17g}"] + [f"{v:.17g}" for v in row]))
    return "\n".join(rows) + "\n"


def cmd_basis(cfg: ProblemConfig, out: Path) -> int:
    b = cfg.basis
    G = b.mode_values.T @ (b.weights[:, None] * b.mode_values)
    rep = {"command": "basis", "spec": b.spec.to_dict(), "n_modes": b.n_modes,
           "eigenvalues": b.eigenvalues.tolist(), "wavenumbers": b.wavenumbers.tolist(),
           "cos_coef": b.cos_coef.tolist(), "sin_coef": b.sin_coef.tolist(),
           "gram_max_deviation": float(np.max(np.abs(G - np.eye(b.n_modes))))}
    _write(out, "physical.csv", _mode_table(cfg))
    _write(out, "report.json", dumps(rep))
    return 0


def _forward(cfg: ProblemConfig):
    prob = cfg.problem()
    traj, rep = prob.state(cfg.z0)
    return prob, traj, rep


def cmd_forward(cfg: ProblemConfig, out: Path) -> int:
    _, traj, rep = _forward(cfg)
    d = {"command": "forward", "status": traj.status, **rep.to_dict()}
    if traj.completed:
        d["mild_residual_max"] = float(mild_residual(traj, cfg.idx, cfg.nl, cfg.B, cfg.z0).max())
        d["cost"] = cfg.problem().cost(cfg.z0, cfg.cost, traj)
    _write(out, "trajectory.csv", traj.to_csv())
    _write(out, "physical.csv", traj.physical_csv())
    _write(out, "report.json", dumps(d))
    return 0


def cmd_adjoint(cfg: ProblemConfig, out: Path) -> int:
    prob, traj, rep = _forward(cfg)
    if not traj.completed:
        raise SolverError(f"forward solve blew up at t={rep.blowup_time}; no adjoint")
    _, psi = tracking_terms(traj.states, cfg.basis, cfg.cost)
    w = solve_adjoint(traj, cfg.nl, psi, cfg.grid, cfg.idx, cfg.adjoint_scheme)
    h = cfg.z0.with_values(np.random.default_rng(cfg.seed).standard_normal(cfg.z0.values.shape))
    eta = solve_linearized(traj, cfg.nl, cfg.B, h, cfg.grid, cfg.idx)
    term = max(abs(rl_integral(ScalarTrajectory(cfg.grid, w.states[:, n]), 1.0 - cfg.idx.gamma, "right").values[-1])
               for n in range(cfg.basis.n_modes))
    d = {"command": "adjoint", "scheme": cfg.adjoint_scheme, "cost": prob.cost(cfg.z0, cfg.cost, traj),
         "duality_gap": duality_gap(psi, eta, w, h, cfg.B), "terminal_condition": term}
    _write(out, "trajectory.csv", w.to_csv())
    _write(out, "physical.csv", w.physical_csv())
    _write(out, "report.json", dumps(d))
    return 0


def cmd_gradcheck(cfg: ProblemConfig, out: Path) -> int:
    res = finite_difference_check(cfg.problem(), cfg.cost, cfg.z0, cfg.gradcheck_eps, cfg.seed)
    res["command"] = "gradcheck"
    res["passed"] = res["min_relative_error"] <= 1e-3
    _write(out, "report.json", dumps(res))
    return 0 if res["passed"] else 1


def cmd_optimize(cfg: ProblemConfig, out: Path) -> int:
    prob = cfg.problem()
    z, rep = optimize(prob, cfg.cost, cfg.aset, cfg.optim, cfg.z0)
    traj, _ = prob.state(z)
    d = {"command": "optimize", **rep.to_dict()}
    _write(out, "trajectory.csv", traj.to_csv())
    _write(out, "physical.csv", traj.physical_csv())
    _write(out, "control.csv", z.to_csv())
    _write(out, "report.json", dumps(d))
    return 0


def cmd_verify(cfg: ProblemConfig, out: Path) -> int:
    results = run_verify(cfg)
    ok = all(r.passed for r in results)
    _write(out, "verify.json", dumps({"passed": ok, "checks": [r.to_dict() for r in results]}))
    print(format_table(results))
    return 0 if ok else 1


_HANDLERS = {"basis": cmd_basis, "forward": cmd_forward, "adjoint": cmd_adjoint,
             "gradcheck": cmd_gradcheck, "optimize": cmd_optimize, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subdiff", description="Fractional-in-time semilinear solver and optimal control.")
    p.add_argument("--version", action="version", version=f"subdiff {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="problem config (JSON); default: the shipped default config")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto (overrides the config)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("SUBDIFF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")

    path = args.config or shipped_configs()["default"]
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        print(f"config error at {exc.path}: {exc.msg}", file=sys.stderr)
        return 2
    if args.threads is not None and args.threads < 0:
        print("config error at --threads: must be >= 0", file=sys.stderr)
        return 2
    threads = cfg.threads if args.threads is None else args.threads
    used = set_threads(threads)
    log.info("numba=%s threads=%d", USING_NUMBA, used)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out, "resolved_config.json", dumps(cfg.resolved()))
    try:
        return _HANDLERS[args.command](cfg, out)
    except (SolverError, OptimizerError, MittagLefflerError, ArithmeticError) as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
