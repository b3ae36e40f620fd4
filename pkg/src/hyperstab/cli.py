"""Command-line driver: synthesize, simulate, verify and sweep scenarios.

Commands take one or more scenario files and run them in parallel, each
writing into its own ``<out>/<scenario name>/`` directory; printed output is
buffered per scenario so runs stay byte-reproducible.  Exit codes: 0 all
good, 1 at least one verification check failed, 2 configuration or I/O
error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import (
    CFLError,
    build_kernel,
    build_z_source,
    gamma_source,
    kernel_oracle_solve,
    kernel_residual,
    write_kernel_tables_csv,
)
from .scenario import Scenario, ScenarioError, load_scenario
from .simulator import (
    ClosedLoopSpec,
    commutation_check,
    simulate,
    vanish_time,
    write_norms_csv,
    write_trajectory_csv,
)
from .system_model import (
    Grid,
    StateVector,
    naive_time,
    optimal_time,
    transit_time,
)
from .transforms import FeedbackLaw, IntegralOperator, apply_fredholm, inverse_kernel, invert_fredholm

__all__ = ["main"]


def _fmt(v: float) -> str:
    return f"{v:.17g}"


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _feedback_law(scn: Scenario, grid: Grid, op: IntegralOperator | None) -> FeedbackLaw:
    if scn.feedback_kind == "zero":
        return FeedbackLaw.zero()
    if scn.feedback_kind == "riesz":
        return FeedbackLaw.riesz(scn.load_riesz_tables(grid), grid)
    return FeedbackLaw.fredholm(op)


def _nonzero_initial(scn: Scenario, grid: Grid) -> StateVector:
    state = scn.initial_state(grid)
    if state.sup_norm() == 0.0:
        rng = np.random.default_rng(scn.seed)
        state = StateVector(
            grid, scn.m, rng.uniform(-1.0, 1.0, (scn.n, grid.n_nodes))
        )
    return state


def _closed_loop(scn: Scenario, grid: Grid, op: IntegralOperator | None) -> ClosedLoopSpec:
    system = scn.system()
    if scn.dynamics == "plant":
        return ClosedLoopSpec.plant(system, _feedback_law(scn, grid, op))
    if scn.dynamics == "gamma_target":
        return ClosedLoopSpec.gamma_target(
            system, gamma_source(scn.cascade()), _feedback_law(scn, grid, op)
        )
    return ClosedLoopSpec.z_target(system, build_z_source(scn.cascade()))


def _cmd_synthesize(scn: Scenario, outdir: Path) -> tuple[int, list[str]]:
    grid = scn.grid()
    system = scn.system()
    g = scn.cascade()
    kernel = build_kernel(system, g, grid)
    op = IntegralOperator.from_kernel(kernel)
    theta = inverse_kernel(op)

    outdir.mkdir(parents=True, exist_ok=True)
    write_kernel_tables_csv(kernel.tables, grid, outdir / "kernel.csv")
    theta.write_csv(outdir / "inverse_kernel.csv")
    with open(outdir / "feedback_trace.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["i", "j", "x", "y", "value"])
        for (i, j) in kernel.pairs():
            row = kernel.outflow_trace(i, j)
            for q, yv in enumerate(grid.nodes):
                wr.writerow([i, j, _fmt(1.0), _fmt(yv), _fmt(row[q])])

    lines = [
        f"[{scn.name}] T_opt = {optimal_time(system, grid)!r}",
        f"[{scn.name}] t_F = {naive_time(system, grid)!r}",
        f"[{scn.name}] wrote kernel.csv, inverse_kernel.csv, feedback_trace.csv "
        f"to {outdir}",
    ]
    return 0, lines


def _cmd_simulate(scn: Scenario, outdir: Path) -> tuple[int, list[str]]:
    grid = scn.grid()
    op = None
    if scn.feedback_kind == "fredholm":
        op = IntegralOperator.from_kernel(build_kernel(scn.system(), scn.cascade(), grid))
    spec = _closed_loop(scn, grid, op)
    traj = simulate(
        spec,
        scn.initial_state(grid),
        scn.t_final,
        grid,
        scheme=scn.scheme,
        dt=scn.resolve_dt(grid),
        snapshot_stride=scn.snapshot_stride,
    )
    outdir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, outdir / "trajectory.csv")
    write_norms_csv(traj, outdir / "norms.csv")

    lines = [f"[{scn.name}] simulated {scn.dynamics} to t={scn.t_final!r} "
             f"(N={grid.n_cells}, dt={traj.dt!r})"]
    if traj.initial_sup() > 0.0:
        vt = vanish_time(traj, scn.tol("vanish_rel"))
        lines.append(
            f"[{scn.name}] vanish_time(tol={scn.tol('vanish_rel'):g}) = "
            f"{'none' if vt is None else repr(vt)}"
        )
    lines.append(f"[{scn.name}] final sup norm = {float(traj.sup[-1, 2])!r}")
    lines.append(f"[{scn.name}] wrote trajectory.csv, norms.csv to {outdir}")
    return 0, lines


def _cmd_verify(scn: Scenario, outdir: Path) -> tuple[int, list[str]]:
    grid = scn.grid()
    system = scn.system()
    g = scn.cascade()
    dt = scn.resolve_dt(grid)
    topt = optimal_time(system, grid)
    tf = naive_time(system, grid)
    # long enough to see settling past both control times, upwind slack included
    t_run = max(scn.t_final, tf + 0.25, 1.3 * topt)
    checks: list[Check] = []

    lower_sum = sum(transit_time(system.speeds[i], grid) for i in range(system.m - 1))
    checks.append(
        Check(
            "times",
            topt > 0 and tf >= topt - 1e-12 and abs((tf - topt) - lower_sum) <= 1e-12,
            f"T_opt={topt!r}, t_F={tf!r}",
        )
    )

    kernel = build_kernel(system, g, grid)
    op = IntegralOperator.from_kernel(kernel)
    res = kernel_residual(system, g, kernel, grid)
    bmax = max((max(r.boundary_x0_max, r.boundary_y0_max) for r in res.values()), default=0.0)
    checks.append(Check("kernel_boundary", bmax <= 1e-12, f"max mismatch {bmax:.3g}"))
    imax = max((r.interior_max for r in res.values()), default=0.0)
    band = g.tabulate(grid.nodes)
    gmax = float(np.max(np.abs(band))) if band.size else 0.0
    itol = scn.tol("kernel_interior_coeff") * grid.dx * max(1.0, gmax)
    checks.append(
        Check("kernel_interior", imax <= itol, f"max residual {imax:.3g} (tol {itol:.3g})")
    )

    oracle = kernel_oracle_solve(system, g, grid)
    gap_max = gap_mean = 0.0
    for key, tab in oracle.items():
        diff = np.abs(tab - kernel.tables[key])
        gap_max = max(gap_max, float(diff.max()))
        gap_mean = max(gap_mean, float(diff.mean()))
    checks.append(
        Check(
            "kernel_oracle_gap",
            gap_mean <= scn.tol("kernel_gap"),
            f"mean gap {gap_mean:.3g} (tol {scn.tol('kernel_gap'):g}), max gap {gap_max:.3g}",
        )
    )

    rng = np.random.default_rng(scn.seed + 1)
    rt_err = tr_err = 0.0
    for _ in range(5):
        z = StateVector(grid, scn.m, rng.uniform(-1, 1, (scn.n, grid.n_nodes)))
        gam = apply_fredholm(op, z)
        back = invert_fredholm(op, gam)
        rt_err = max(rt_err, float(np.max(np.abs(back.data - z.data))) / z.sup_norm())
        tr_err = max(tr_err, float(np.max(np.abs(gam.data[:, 0] - z.data[:, 0]))))
    checks.append(
        Check("round_trip", rt_err <= scn.tol("roundtrip"), f"rel sup error {rt_err:.3g}")
    )
    checks.append(Check("trace_preservation", tr_err == 0.0, f"mismatch {tr_err:.3g}"))

    theta = inverse_kernel(op)
    nn = grid.n_nodes
    w = grid.trapezoid_weights()
    dim = scn.m * nn
    forward = np.eye(dim)
    backward = np.eye(dim)
    for (i, j), tab in kernel.tables.items():
        forward[(i - 1) * nn : i * nn, (j - 1) * nn : j * nn] -= tab * w[None, :]
    for (i, j), tab in theta.tables.items():
        backward[(i - 1) * nn : i * nn, (j - 1) * nn : j * nn] -= tab * w[None, :]
    id_err = float(np.max(np.abs(backward @ forward - np.eye(dim))))
    checks.append(
        Check(
            "inverse_identity",
            id_err <= scn.tol("inverse_identity"),
            f"sup deviation {id_err:.3g}",
        )
    )

    z0 = _nonzero_initial(scn, grid)
    z_traj = simulate(
        ClosedLoopSpec.z_target(system, build_z_source(g)),
        z0, t_run, grid, scheme=scn.scheme, dt=dt, snapshot_stride=10**9,
    )
    if scn.scheme == "integer_shift":
        late = z_traj.times >= topt + 2 * z_traj.dt + 1e-12
        tail = float(z_traj.sup_total[late].max()) if np.any(late) else 0.0
        z_ok = tail <= 1e-12 * z_traj.initial_sup()
        z_detail = f"sup after T_opt+2dt = {tail:.3g}"
    else:
        vt = vanish_time(z_traj, scn.tol("vanish_rel"))
        slack = scn.tol("upwind_vanish_slack_frac") * topt
        z_ok = vt is not None and vt <= topt + slack
        z_detail = f"vanish_time = {'none' if vt is None else repr(vt)} (limit {topt + slack!r})"
    checks.append(Check("z_vanish_by_T_opt", z_ok, z_detail))

    gamma0 = apply_fredholm(op, z0)
    g_traj = simulate(
        ClosedLoopSpec.gamma_target(system, gamma_source(g), _feedback_law(scn, grid, op)),
        gamma0, t_run, grid, scheme=scn.scheme, dt=dt, snapshot_stride=10**9,
    )
    vt = vanish_time(g_traj, scn.tol("vanish_rel"))
    if scn.scheme == "integer_shift":
        slack = scn.tol("vanish_slack_steps") * g_traj.dt
    else:
        slack = scn.tol("upwind_vanish_slack_frac") * topt
    g_ok = vt is not None and vt <= topt + slack
    checks.append(
        Check(
            "gamma_vanish_by_T_opt",
            g_ok,
            f"vanish_time(tol={scn.tol('vanish_rel'):g}) = "
            f"{'none' if vt is None else repr(vt)} (limit {topt + slack!r}, "
            f"feedback {scn.feedback_kind})",
        )
    )

    dev = commutation_check(system, g, kernel, z0, t_run, grid, scheme=scn.scheme, dt=dt)
    cm_tol = scn.tol("commutation_rel") * gamma0.sup_norm()
    checks.append(
        Check("commutation", dev <= cm_tol, f"max deviation {dev:.3g} (tol {cm_tol:.3g})")
    )

    lines = [
        f"[{scn.name}] verify: N={grid.n_cells}, scheme={scn.scheme}, "
        f"dt={'auto' if dt is None else repr(dt)}, t_run={t_run!r}",
    ]
    lines += [f"[{scn.name}] {c.line()}" for c in checks]
    n_fail = sum(not c.passed for c in checks)
    lines.append(
        f"[{scn.name}] {len(checks) - n_fail}/{len(checks)} checks passed"
    )

    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.txt").write_text("\n".join(lines) + "\n")
    return (0 if n_fail == 0 else 1), lines


def _order(prev: float, cur: float) -> str:
    if not (math.isfinite(prev) and math.isfinite(cur)) or prev <= 1e-13 or cur <= 1e-13:
        return "n/a"
    if prev == cur:
        return "n/a"
    return _fmt(math.log2(prev / cur))


def _cmd_sweep(scn: Scenario, outdir: Path, grids: list[int]) -> tuple[int, list[str]]:
    if len(grids) < 2:
        raise ScenarioError(["sweep: need at least two grid sizes"])
    rows = []
    for n_cells in grids:
        grid = scn.grid(n_cells)
        system = scn.system()
        g = scn.cascade()
        dt = scn.resolve_dt(grid)
        kernel = build_kernel(system, g, grid)
        op = IntegralOperator.from_kernel(kernel)
        oracle = kernel_oracle_solve(system, g, grid)
        gap_max = gap_mean = 0.0
        for key, tab in oracle.items():
            diff = np.abs(tab - kernel.tables[key])
            gap_max = max(gap_max, float(diff.max()))
            gap_mean = max(gap_mean, float(diff.mean()))

        z0 = _nonzero_initial(scn, grid)
        dev = commutation_check(
            system, g, kernel, z0, scn.t_final, grid, scheme=scn.scheme, dt=dt
        )

        spec = _closed_loop(scn, grid, op)
        u0 = _nonzero_initial(scn, grid)
        traj = simulate(
            spec, u0, scn.t_final, grid,
            scheme=scn.scheme, dt=dt, snapshot_stride=10**9,
        )
        vt = vanish_time(traj, scn.tol("vanish_rel"))
        if scn.dynamics == "gamma_target" and scn.feedback_kind == "zero" and scn.m >= 2:
            expected = naive_time(system, grid)
        else:
            expected = optimal_time(system, grid)
        verr = abs(vt - expected) if vt is not None else math.nan
        rows.append(
            {
                "n_cells": n_cells,
                "dt": traj.dt,
                "kernel_gap_max": gap_max,
                "kernel_gap_mean": gap_mean,
                "commutation_dev": dev,
                "vanish_time": vt,
                "vanish_err": verr,
            }
        )

    metric_cols = ["kernel_gap_max", "kernel_gap_mean", "commutation_dev", "vanish_err"]
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "sweep.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        header = ["n_cells", "dt", "kernel_gap_max", "kernel_gap_mean",
                  "commutation_dev", "vanish_time", "vanish_err"]
        header += [f"order_{c}" for c in metric_cols]
        wr.writerow(header)
        for k, row in enumerate(rows):
            out = [
                row["n_cells"],
                _fmt(row["dt"]),
                _fmt(row["kernel_gap_max"]),
                _fmt(row["kernel_gap_mean"]),
                _fmt(row["commutation_dev"]),
                "n/a" if row["vanish_time"] is None else _fmt(row["vanish_time"]),
                "n/a" if math.isnan(row["vanish_err"]) else _fmt(row["vanish_err"]),
            ]
            for c in metric_cols:
                if k == 0 or math.isnan(rows[k][c]) or math.isnan(rows[k - 1][c]):
                    out.append("n/a")
                else:
                    out.append(_order(rows[k - 1][c], rows[k][c]))
            wr.writerow(out)

    lines = [f"[{scn.name}] sweep over N = {grids} written to {outdir / 'sweep.csv'}"]
    for row in rows:
        lines.append(
            f"[{scn.name}]   N={row['n_cells']}: kernel gap max {row['kernel_gap_max']:.3g} "
            f"/ mean {row['kernel_gap_mean']:.3g}, commutation {row['commutation_dev']:.3g}, "
            f"vanish {row['vanish_time'] if row['vanish_time'] is not None else 'none'}"
        )
    return 0, lines


def _run_one(cmd: str, path: str, out_root: Path, grids: list[int] | None) -> tuple[int, list[str]]:
    try:
        scn = load_scenario(path)
    except ScenarioError as exc:
        return 2, [f"[{Path(path).stem}] configuration error:"] + [
            f"[{Path(path).stem}]   {v}" for v in exc.violations
        ]
    outdir = out_root / scn.name
    try:
        if cmd == "synthesize":
            return _cmd_synthesize(scn, outdir)
        if cmd == "simulate":
            return _cmd_simulate(scn, outdir)
        if cmd == "verify":
            return _cmd_verify(scn, outdir)
        return _cmd_sweep(scn, outdir, grids or [])
    except ScenarioError as exc:
        return 2, [f"[{scn.name}] configuration error: {exc}"]
    except (ValueError, CFLError, OSError) as exc:
        return 2, [f"[{scn.name}] error: {exc}"]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hyperstab",
        description="Synthesize, simulate and certify finite-time stabilizing "
        "boundary feedback for coupled hyperbolic transport systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("synthesize", "tabulate the transform kernel, its inverse and the feedback trace"),
        ("simulate", "march the configured closed loop and export the trajectory"),
        ("verify", "run the certification checks; exit 1 on any failure"),
        ("sweep", "repeat the metrics over several grid sizes"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("configs", nargs="+", help="scenario file(s)")
        p.add_argument("--out", default="out", help="output directory root")
        p.add_argument("--quiet", action="store_true", help="suppress stdout")
        if name == "sweep":
            p.add_argument(
                "--grids", required=True,
                help="comma-separated cell counts, e.g. 100,200,400",
            )
    args = parser.parse_args(argv)

    grids = None
    if args.command == "sweep":
        try:
            grids = [int(v) for v in args.grids.split(",") if v]
        except ValueError:
            print(f"--grids: expected integers, got {args.grids!r}", file=sys.stderr)
            return 2

    out_root = Path(args.out)
    paths = list(args.configs)
    if len(paths) == 1:
        results = [_run_one(args.command, paths[0], out_root, grids)]
    else:
        with ThreadPoolExecutor(max_workers=min(8, len(paths))) as pool:
            results = list(
                pool.map(lambda p: _run_one(args.command, p, out_root, grids), paths)
            )

    code = 0
    for rc, lines in results:
        code = max(code, rc)
        if not args.quiet:
            stream = sys.stderr if rc == 2 else sys.stdout
            for line in lines:
                print(line, file=stream)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
