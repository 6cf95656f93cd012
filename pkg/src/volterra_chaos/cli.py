"""Experiment driver.

Builds systems from a flat key=value config (dotted keys, '#' comments),
runs resolvents/solvers/verifications, and writes CSV reports.  CLI
flags override config keys; --set key=value applies individual
overrides.  All outputs use 17-significant-digit decimals so reruns are
byte-identical.

Exit codes: 0 ok, 2 config error, 3 non-convergence, 4 verification
failure.  The default output directory comes from the
VOLTERRA_CHAOS_OUT environment variable (fallback ./out).

Config grammar (one `key = value` per line):

    grid.s, grid.t, grid.m        interval endpoints and cell count
    chaos.n                       truncation order N
    system.kind                   fractional-bs | noisy-memory | custom
    system.alpha, system.mu, system.sigma, system.x0, system.layout
    noisy.j, noisy.k, noisy.l1, noisy.l2   constant coefficient values
    custom.j_csv, custom.k_csv    kernel CSV paths (arity-2 tables)
    tol.resolvent, tol.solution, tol.duality
    mc.paths, mc.steps, mc.seed, mc.bias, mc.euler_sigma
    output.dir
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

_SCHEMA = {
    "grid.s": (float, 0.0),
    "grid.t": (float, 1.0),
    "grid.m": (int, 64),
    "chaos.n": (int, 4),
    "system.kind": (str, "fractional-bs"),
    "system.alpha": (float, 0.75),
    "system.mu": (float, 0.4),
    "system.sigma": (float, 0.3),
    "system.x0": (float, 1.0),
    "system.layout": (str, "dense"),
    "noisy.j": (float, 0.0),
    "noisy.k": (float, 0.0),
    "noisy.l1": (float, 0.0),
    "noisy.l2": (float, 0.0),
    "custom.j_csv": (str, ""),
    "custom.k_csv": (str, ""),
    "tol.resolvent": (float, 1e-10),
    "tol.solution": (float, 1e-8),
    "tol.duality": (float, 1e-10),
    "mc.paths": (int, 10000),
    "mc.steps": (int, 0),
    "mc.seed": (int, 0),
    "mc.bias": (float, 0.02),
    "mc.euler_sigma": (float, float("nan")),
    "output.dir": (str, ""),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        if key in self.values:
            return self.values[key]
        return _SCHEMA[key][1]

    def set(self, key: str, raw: str):
        if key not in _SCHEMA:
            raise ConfigError("unknown config key %r" % key)
        typ = _SCHEMA[key][0]
        try:
            self.values[key] = typ(raw)
        except ValueError as exc:
            raise ConfigError("bad value for %s: %s" % (key, exc)) from exc


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected key = value" % ln)
        key, _, raw = line.partition("=")
        cfg.set(key.strip(), raw.strip())
    return cfg


def _load_config(args) -> ExperimentConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    else:
        cfg = ExperimentConfig()
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError("--set needs key=value, got %r" % item)
        key, _, raw = item.partition("=")
        cfg.set(key.strip(), raw.strip())
    if args.out:
        cfg.set("output.dir", args.out)
    return cfg


def _outdir(cfg: ExperimentConfig) -> str:
    path = (cfg["output.dir"]
            or os.environ.get("VOLTERRA_CHAOS_OUT", "")
            or "out")
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# system construction (imports deferred so --threads can cap BLAS first)

def _build_system(cfg: ExperimentConfig):
    from .simplex_grid import Grid
    from .solvers import build_fractional_bs, build_noisy_memory
    grid = Grid(cfg["grid.s"], cfg["grid.t"], cfg["grid.m"])
    n = cfg["chaos.n"]
    kind = cfg["system.kind"]
    if kind == "fractional-bs":
        return build_fractional_bs(cfg["system.alpha"], cfg["system.mu"],
                                   cfg["system.sigma"], cfg["system.x0"],
                                   grid, n, cfg["system.layout"])
    if kind == "noisy-memory":
        return build_noisy_memory(cfg["noisy.j"], cfg["noisy.k"],
                                  cfg["noisy.l1"], cfg["noisy.l2"],
                                  None, None, cfg["system.x0"],
                                  cfg["system.alpha"], grid, max(n, 2))
    if kind == "custom":
        return _build_custom(cfg, grid, n)
    raise ConfigError("unknown system.kind %r" % kind)


def _build_custom(cfg: ExperimentConfig, grid, n: int):
    import numpy as np
    from .chaos_core import AstKernel, ChaosProcess, StarKernel
    from .det_kernels import DetKernel, read_kernel_csv
    if not cfg["custom.j_csv"] or not cfg["custom.k_csv"]:
        raise ConfigError("custom systems need custom.j_csv and "
                          "custom.k_csv")

    def load(path):
        with open(path) as fh:
            k = read_kernel_csv(fh)
        if k.grid != grid or k.arity != 2:
            raise ConfigError("%s: expected an arity-2 kernel on the "
                              "configured grid" % path)
        return k

    j0 = load(cfg["custom.j_csv"])
    k1 = load(cfg["custom.k_csv"])
    j = AstKernel(grid, [j0] + [DetKernel.zeros(grid, o + 2)
                                for o in range(1, n + 1)])
    k = StarKernel(ChaosProcess(grid, [DetKernel.zeros(grid, 1), k1]
                                + [DetKernel.zeros(grid, o + 1)
                                   for o in range(2, n + 1)]))
    from .solvers import LinearSystem
    from .chaos_core import ChaosProcess as CP
    phi = CP.deterministic(grid, np.full((grid.m, 1, 1),
                                         cfg["system.x0"]), n)
    return LinearSystem(j, k, "custom"), phi


def _fail_report(outdir: str, note: str):
    from .resolvents import REPORT_CSV_HEADER
    with open(os.path.join(outdir, "resolvent_report.csv"), "w") as fh:
        fh.write(REPORT_CSV_HEADER + ",note\n")
        fh.write("false,0,inf,inf,0,,%s\n" % note.replace(",", ";"))


def _write_value_report(path: str, rows):
    """rows: iterable of (quantity, value, passed)."""
    with open(path, "w") as fh:
        fh.write("quantity,value,pass\n")
        for quantity, value, passed in rows:
            fh.write("%s,%.17g,%s\n"
                     % (quantity, value, "true" if passed else "false"))


# ---------------------------------------------------------------------------
# subcommands

def cmd_resolve(cfg: ExperimentConfig) -> int:
    from .det_kernels import write_kernel_csv
    from .chaos_core import write_process_csv
    from .resolvents import (ExistenceUndeterminedError,
                             InternalConsistencyError, write_report_csv)
    outdir = _outdir(cfg)
    sys_, _phi = _build_system(cfg)
    try:
        q, r, report = sys_.resolvent(cfg["tol.resolvent"])
    except (ExistenceUndeterminedError, InternalConsistencyError) as exc:
        _fail_report(outdir, str(exc))
        print("non-convergence: %s" % exc, file=sys.stderr)
        return 3
    with open(os.path.join(outdir, "resolvent_report.csv"), "w") as fh:
        write_report_csv(report, fh)
    with open(os.path.join(outdir, "resolvent_q.csv"), "w") as fh:
        for c in q.bcoeffs:
            write_kernel_csv(c, fh)
    with open(os.path.join(outdir, "resolvent_r.csv"), "w") as fh:
        write_process_csv(r.base, fh)
    if not report.converged:
        print("resolvent did not converge", file=sys.stderr)
        return 3
    return 0


def cmd_solve(cfg: ExperimentConfig, backward: bool) -> int:
    from .chaos_core import ChaosProcess, write_process_csv
    from .solvers import (bsvie_residual, solve_bsvie, solve_svie,
                          svie_residual)
    outdir = _outdir(cfg)
    sys_, phi = _build_system(cfg)
    tol = cfg["tol.resolvent"]
    if backward:
        psi = phi  # terminal free term: reuse the configured free term
        y = solve_bsvie(sys_, psi, tol)
        res = bsvie_residual(sys_, psi, y)
        name, sol = "bsvie", y
    else:
        y = solve_svie(sys_, phi, tol)
        res = svie_residual(sys_, phi, y)
        name, sol = "svie", y
    with open(os.path.join(outdir, "%s_solution.csv" % name), "w") as fh:
        write_process_csv(sol.densified(), fh)
    ok = res <= cfg["tol.solution"]
    _write_value_report(os.path.join(outdir, "%s_report.csv" % name),
                        [("%s_residual" % name, res, ok)])
    if not ok:
        print("%s residual %.3g exceeds tolerance" % (name, res),
              file=sys.stderr)
        return 4
    return 0


def cmd_duality(cfg: ExperimentConfig) -> int:
    from .chaos_core import random_process
    from .solvers import duality_gap
    outdir = _outdir(cfg)
    sys_, phi = _build_system(cfg)
    psi = random_process(sys_.grid, sys_.n_max, seed=cfg["mc.seed"])
    gap = duality_gap(sys_, phi, psi, cfg["tol.resolvent"])
    ok = gap <= cfg["tol.duality"]
    _write_value_report(os.path.join(outdir, "duality_report.csv"),
                        [("duality_gap", gap, ok)])
    if not ok:
        print("duality gap %.3g exceeds tolerance" % gap, file=sys.stderr)
        return 4
    return 0


def cmd_mc_verify(cfg: ExperimentConfig) -> int:
    import math
    from .monte_carlo import (compare_moments, euler_svie,
                              fractional_step_matrix, reconstruct,
                              simulate_paths, write_moment_csv)
    from .solvers import solve_svie
    outdir = _outdir(cfg)
    if cfg["system.kind"] != "fractional-bs":
        raise ConfigError("mc-verify supports system.kind=fractional-bs")
    sys_, phi = _build_system(cfg)
    grid = sys_.grid
    steps = cfg["mc.steps"] or 2 * grid.m
    if steps % grid.m:
        raise ConfigError("mc.steps must be a multiple of grid.m")
    x = solve_svie(sys_, phi, cfg["tol.resolvent"])
    batch = simulate_paths(grid, steps // grid.m, cfg["mc.paths"],
                           cfg["mc.seed"])
    chaos = reconstruct(x, batch, grid.m - 1)
    euler_sigma = cfg["mc.euler_sigma"]
    if math.isnan(euler_sigma):
        euler_sigma = cfg["system.sigma"]
    jm = fractional_step_matrix(cfg["system.alpha"], cfg["system.mu"],
                                batch)
    km = fractional_step_matrix(cfg["system.alpha"], euler_sigma, batch)
    # the chaos value at the last cell is a cell average; evaluate the
    # Euler recursion at the step nearest that cell's midpoint
    step = min(batch.steps - 1, int((grid.m - 0.5) * batch.refine))
    eul = euler_svie(jm, km, cfg["system.x0"], batch, step=step)
    bias = cfg["mc.bias"]
    reports = [
        compare_moments(chaos, eul, "mean", bias * abs(float(eul.mean()))),
        compare_moments(chaos ** 2, eul ** 2, "second_moment",
                        bias * abs(float((eul ** 2).mean()))),
    ]
    with open(os.path.join(outdir, "mc_report.csv"), "w") as fh:
        write_moment_csv(reports, fh)
    if not all(r.passed for r in reports):
        print("Monte Carlo verification failed", file=sys.stderr)
        return 4
    return 0


def cmd_fbs_example(cfg: ExperimentConfig) -> int:
    import numpy as np
    from scipy.integrate import quad
    from .mittag_leffler import e_alpha
    from .solvers import mean_trajectory, solve_svie
    outdir = _outdir(cfg)
    cfg.set("system.kind", "fractional-bs")
    sys_, phi = _build_system(cfg)
    grid = sys_.grid
    x = solve_svie(sys_, phi, cfg["tol.resolvent"])
    mean = mean_trajectory(x)[:, 0]
    alpha, mu, x0 = cfg["system.alpha"], cfg["system.mu"], cfg["system.x0"]
    oracle = np.empty(grid.m)
    for i in range(grid.m):
        a = grid.s_start + i * grid.h
        val, _err = quad(lambda t: e_alpha(alpha, mu * (t - grid.s_start)
                                           ** alpha), a, a + grid.h,
                         limit=200)
        oracle[i] = x0 * val / grid.h
    rel = np.abs(mean - oracle) / np.maximum(np.abs(oracle), 1e-300)
    with open(os.path.join(outdir, "fbs_mean.csv"), "w") as fh:
        fh.write("cell,t_mid,mean,oracle,rel_err\n")
        for i in range(grid.m):
            fh.write("%d,%.17g,%.17g,%.17g,%.17g\n"
                     % (i, grid.midpoints[i], mean[i], oracle[i], rel[i]))
    worst = float(rel.max())
    ok = worst <= 0.02
    _write_value_report(os.path.join(outdir, "fbs_report.csv"),
                        [("mean_max_rel_err", worst, ok)])
    if not ok:
        print("mean deviates %.3g from the closed form" % worst,
              file=sys.stderr)
        return 4
    return 0


def cmd_noisy_memory(cfg: ExperimentConfig) -> int:
    from .chaos_core import random_process
    from .solvers import (bsvie_residual, duality_gap, solve_bsvie,
                          solve_svie, svie_residual)
    outdir = _outdir(cfg)
    cfg.set("system.kind", "noisy-memory")
    sys_, phi = _build_system(cfg)
    tol = cfg["tol.resolvent"]
    x = solve_svie(sys_, phi, tol)
    psi = random_process(sys_.grid, sys_.n_max, seed=cfg["mc.seed"])
    y = solve_bsvie(sys_, psi, tol)
    rows = [
        ("svie_residual", svie_residual(sys_, phi, x), True),
        ("bsvie_residual", bsvie_residual(sys_, psi, y), True),
        ("duality_gap", duality_gap(sys_, phi, psi, tol), True),
    ]
    rows = [(q, v, v <= cfg["tol.solution"] if q != "duality_gap"
             else v <= cfg["tol.duality"]) for q, v, _ in rows]
    _write_value_report(os.path.join(outdir, "noisy_memory_report.csv"),
                        rows)
    if not all(ok for _q, _v, ok in rows):
        print("noisy-memory verification failed", file=sys.stderr)
        return 4
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="volterra-chaos",
        description="Finite-chaos Volterra kernel experiments")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", help="output directory (overrides output.dir "
                   "and VOLTERRA_CHAOS_OUT)")
    p.add_argument("--threads", type=int, default=0,
                   help="cap BLAS/OpenMP worker threads")
    p.add_argument("command", choices=[
        "resolve", "solve-svie", "solve-bsvie", "duality-check",
        "mc-verify", "fbs-example", "noisy-memory"])
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = _load_config(args)
        if args.command == "resolve":
            return cmd_resolve(cfg)
        if args.command == "solve-svie":
            return cmd_solve(cfg, backward=False)
        if args.command == "solve-bsvie":
            return cmd_solve(cfg, backward=True)
        if args.command == "duality-check":
            return cmd_duality(cfg)
        if args.command == "mc-verify":
            return cmd_mc_verify(cfg)
        if args.command == "fbs-example":
            return cmd_fbs_example(cfg)
        return cmd_noisy_memory(cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:  # classify module errors by taxonomy
        from .simplex_grid import DomainError
        from .resolvents import (ExistenceUndeterminedError,
                                 InternalConsistencyError,
                                 NonConvergenceError, PreconditionError)
        if isinstance(exc, (DomainError, PreconditionError)):
            print("config error: %s" % exc, file=sys.stderr)
            return 2
        if isinstance(exc, (ExistenceUndeterminedError,
                            InternalConsistencyError, NonConvergenceError)):
            print("non-convergence: %s" % exc, file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())
