"""Scenario-driven command line: ``stokestrack <subcommand> --scenario FILE --out DIR``.

Exit status: 0 on success, 1 when a checked invariant or threshold fails,
2 for unreadable or invalid scenarios, 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import closed_loop as cl
from .control import (ControlMatrixError, FitError, OutsideGridError, build_control_law, density_study, load_law,
                      node_errors, save_law)
from .dynamics import (ResistanceError, concentric_sphere_drag, elementary_solutions, resistance_matrix,
                       volume_form_check)
from .geometry import Pose, in_q_delta
from .scenario import Scenario, ScenarioError
from .stokes import FluxError, SolverError, solve_log

COMMANDS = ("resistance", "fit-controls", "track", "free-run", "switch-off", "convergence")


# absolute slack, relative to the quantity's scale, for comparisons of values at roundoff level
ROUNDOFF = 1e-12


class CheckFailed(RuntimeError):
    pass


def nonincreasing_within(values, slack):
    return all(b <= a + slack for a, b in zip(values, values[1:]))


# -- output helpers ------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header_lines, columns: dict):
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    with open(path, "w", newline="\n") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        f.write(",".join(names) + "\n")
        for i in range(n):
            f.write(",".join(_fmt(columns[k][i]) for k in names) + "\n")


class Run:
    """Per-invocation context: scenario, output directory, provenance and summary."""

    def __init__(self, command, scenario: Scenario, out, mode, seed):
        self.command, self.scenario, self.mode, self.seed = command, scenario, mode, seed
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.rng = np.random.default_rng(seed)
        self.summary = {}

    def header(self):
        return [f"stokestrack {self.command}", f"scenario_sha256={self.scenario.digest()}",
                f"mode={self.mode} seed={self.seed}", f"config={self.scenario.echo()}"]

    def csv(self, name, columns):
        path = self.out / name
        write_csv(path, self.header(), columns)
        return path

    def emit(self, **items):
        self.summary.update(items)


def _attach_solve_log(path, header):
    """Route per-solve lines to ``path``; returns a callable that undoes the routing."""
    path.write_text("".join(f"# {h}\n" for h in header) + "residual,condition\n")
    handler = logging.FileHandler(path, mode="a")
    handler.setFormatter(logging.Formatter("%(message)s"))
    level, propagate = solve_log.level, solve_log.propagate
    solve_log.addHandler(handler)
    solve_log.setLevel(logging.INFO)
    solve_log.propagate = False

    def detach():
        solve_log.removeHandler(handler)
        handler.close()
        solve_log.setLevel(level)
        solve_log.propagate = propagate

    return detach


# -- subcommands ---------------------------------------------------------------

def _law(run: Run, law_path=None):
    if law_path:
        return load_law(law_path)
    sc = run.scenario
    return build_control_law(sc.shape(), sc.domain(), sc.solver_config(), sc.basis(), sc.grid(),
                              sc.control.eps, sc.bounds())


def cmd_resistance(run: Run, law_path=None):
    sc = run.scenario
    shape, domain, config = sc.shape(), sc.domain(), sc.solver_config()
    poses = []
    for p in sc.run.resistance_poses:
        p = np.asarray(p, dtype=float)
        poses.append(Pose.from_euler(p[:3], p[3:] if len(p) == 6 else np.zeros(3)))
    while len(poses) < len(sc.run.resistance_poses) + sc.run.random_poses:
        h = run.rng.uniform(-1, 1, 3) * domain.radius
        pose = Pose.from_euler(h, run.rng.uniform(-np.pi / 2, np.pi / 2, 3))
        if in_q_delta(shape, pose, domain, config.solid_nodes):
            poses.append(pose)
    cols = {k: [] for k in ["pose", "h1", "h2", "h3", "asymmetry", "min_eig"]
            + [f"K{i}{j}" for i in range(1, 7) for j in range(1, 7)] + [f"eig{i}" for i in range(1, 7)]
            + ["trans_dev_free", "rot_dev_free", "trans_dev_concentric", "rot_dev_concentric",
               "volume_discrepancy", "max_residual"]}
    worst = 0.0
    for k, pose in enumerate(poses):
        if not in_q_delta(shape, pose, domain, config.solid_nodes):
            raise CheckFailed(f"pose {k} (h={pose.h}) is outside Q_delta")
        elem = elementary_solutions(shape, pose, domain, config)
        res = resistance_matrix(elem)
        K, eig = res.K, res.eigenvalues
        row = {"pose": k, "h1": pose.h[0], "h2": pose.h[1], "h3": pose.h[2], "asymmetry": res.asymmetry,
               "min_eig": eig.min(), "max_residual": float(elem.residuals.max())}
        row.update({f"K{i + 1}{j + 1}": K[i, j] for i in range(6) for j in range(6)})
        row.update({f"eig{i + 1}": eig[i] for i in range(6)})
        nan = float("nan")
        row.update(trans_dev_free=nan, rot_dev_free=nan, trans_dev_concentric=nan, rot_dev_concentric=nan)
        if shape.kind == "sphere":
            a = shape.radius
            t, r = np.mean(np.diag(K)[:3]), np.mean(np.diag(K)[3:])
            row["trans_dev_free"] = t / (6 * np.pi * a) - 1
            row["rot_dev_free"] = r / (8 * np.pi * a**3) - 1
            if np.linalg.norm(pose.h) == 0:
                ct, cr = concentric_sphere_drag(a, domain.radius)
                row["trans_dev_concentric"] = t / ct - 1
                row["rot_dev_concentric"] = r / cr - 1
        row["volume_discrepancy"] = nan
        if sc.run.volume_samples:
            row["volume_discrepancy"] = volume_form_check(elem, 1, 1, sc.run.volume_samples, run.rng)[0]
        for key in cols:
            cols[key].append(row[key])
        worst = max(worst, res.asymmetry)
    run.csv("resistance.csv", cols)
    run.emit(poses=len(poses), max_asymmetry=worst, min_eig=min(cols["min_eig"]))


def cmd_fit_controls(run: Run, law_path=None):
    sc = run.scenario
    law = _law(run)
    save_law(law, run.out / "law.npz", {"scenario_sha256": sc.digest()})
    errors = node_errors(law.K, law.coefficients, law.tables)
    coords = law.grid.node_coords()
    cols = {"node": list(range(len(law.grid)))}
    for d in range(coords.shape[1]):
        cols[f"z{law.grid.dims[d] + 1}"] = coords[:, d]
    cols.update(residual=law.residuals, B_minus_K=errors,
                min_eig_K=[np.linalg.eigvalsh(K).min() for K in law.K],
                cond_B=law.conditions, solve_residual=law.solve_residuals)
    run.csv("fit_report.csv", cols)
    centre = int(np.argmin(np.linalg.norm(coords[:, :3] if coords.shape[1] >= 3 else coords, axis=1)))
    density = density_study(sc.shape(), law.grid.node_pose(centre), sc.domain(), sc.solver_config(), sc.basis(48))
    run.csv("density.csv", density)
    nonincreasing = nonincreasing_within(density["residual"], ROUNDOFF * np.linalg.norm(law.K[centre]))
    run.emit(nodes=len(law.grid), eps_bar=law.eps_bar, max_residual=float(law.residuals.max()),
             max_B_minus_K=float(errors.max()), max_cond_B=float(law.conditions.max()),
             density_nonincreasing=nonincreasing)
    if not np.all(errors <= law.eps_bar):
        raise CheckFailed("|B - K| exceeds eps_bar at a grid node")
    if not nonincreasing:
        raise CheckFailed("fit residual increased over nested bases")


def cmd_track(run: Run, law_path=None):
    sc = run.scenario
    law = _law(run, law_path)
    traj = sc.trajectory()
    cl.validate_trajectory(law, traj)
    rec = cl.track(law, traj, sc.run.dt, run.mode)
    run.csv("track.csv", rec.columns())
    err = rec.sup_errors()
    run.emit(sup_err_h=err["h"], sup_err_R=err["R"], sup_err_v=err["v"], sup_err_omega=err["omega"],
             max_cost=float(rec.cost.max()), max_mu=float(np.abs(rec.mu).max()), truncated=rec.truncated,
             steps=len(rec) - 1)
    if rec.truncated:
        raise CheckFailed("trajectory left the covered region; run truncated")
    if err["h"] > sc.run.max_position_error:
        raise CheckFailed(f"sup position error {err['h']:.3e} above {sc.run.max_position_error:.3e}")


def cmd_free_run(run: Run, law_path=None):
    sc = run.scenario
    law = _law(run, law_path)
    rec = cl.free_run(law, sc.initial_state(), sc.run.T, sc.run.dt, run.mode)
    energy = np.array([cl.kinetic_energy(law.shape, rec.state(k).pose, rec.state(k).qdot) for k in range(len(rec))])
    cols = rec.columns()
    for key in ("mu1", "mu2", "mu3", "mu4", "mu5", "mu6", "cost", "err_h", "err_R", "err_v", "err_omega"):
        cols.pop(key)
    cols["energy"] = energy
    run.csv("free_run.csv", cols)
    decreasing = bool(np.all(np.diff(energy) <= 0)) if energy[0] > 0 else True
    run.emit(energy_initial=energy[0], energy_final=energy[-1], energy_decreasing=decreasing,
             truncated=rec.truncated)
    if rec.truncated:
        raise CheckFailed("free trajectory left the covered region")
    if not decreasing:
        raise CheckFailed("kinetic energy increased along the free trajectory")


def cmd_switch_off(run: Run, law_path=None):
    sc = run.scenario
    law = _law(run, law_path)
    n = None if run.mode == "fast" else 11
    so = cl.switch_off_experiment(law, sc.run.T, sc.initial_state(), sc.run.dt, run.mode, n)
    cols = {"t": so.t, "h1": so.h[:, 0], "h2": so.h[:, 1], "h3": so.h[:, 2], "mu_norm": so.mu_norm,
            "Kqdot_norm": so.Kqdot_norm, "rate_norm": so.rate_norm}
    run.csv("switch_off.csv", cols)
    run.emit(max_mu=so.max_mu, max_Kqdot=so.max_Kqdot, ratio=so.ratio)
    if so.ratio > sc.run.switch_off_tol:
        raise CheckFailed(f"max |mu| / max |K q'| = {so.ratio:.3e} above {sc.run.switch_off_tol:.1e}")


def tracking_convergence(law, traj, dts, mode="fast"):
    """Sup position errors for a list of time steps, with successive ratios."""
    errs = [cl.track(law, traj, dt, mode).sup_errors()["h"] for dt in dts]
    ratios = [float("nan")] + [a / b if b > 0 else float("inf") for a, b in zip(errs, errs[1:])]
    return errs, ratios


def error_floor(traj):
    scale = max(np.abs(p.h).max() for p, _, _ in traj.samples(21))
    return 1e-12 * max(1.0, scale)


def cmd_convergence(run: Run, law_path=None):
    sc = run.scenario
    law = _law(run, law_path)
    traj = sc.trajectory()
    cl.validate_trajectory(law, traj)
    dts = [sc.run.dt / 2**k for k in range(sc.run.dt_levels)]
    errs, ratios = tracking_convergence(law, traj, dts, run.mode)
    floor = error_floor(traj)
    run.csv("convergence.csv", {"dt": dts, "sup_err_h": errs, "ratio": ratios})
    above = [r for r, e in zip(ratios[1:], errs[1:]) if e > floor]
    run.emit(min_ratio=min(above) if above else float("nan"), floor=floor, finest_error=errs[-1])
    if any(r < 8 for r in above):
        raise CheckFailed("tracking error improved by less than 8x when halving dt")


HANDLERS = {"resistance": cmd_resistance, "fit-controls": cmd_fit_controls, "track": cmd_track,
            "free-run": cmd_free_run, "switch-off": cmd_switch_off, "convergence": cmd_convergence}


def parser():
    p = argparse.ArgumentParser(prog="stokestrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scenario", required=True, help="scenario TOML file")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--mode", choices=("fast", "full"), help="override run.mode")
        s.add_argument("--seed", type=int, help="override run.seed")
        s.add_argument("--law", help="law archive from fit-controls (otherwise built from the scenario)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        sc = Scenario.load(args.scenario)
        changes = {k: v for k, v in (("mode", args.mode), ("seed", args.seed)) if v is not None}
        if changes:
            sc = sc.with_run(**changes)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run = Run(args.command, sc, args.out, sc.run.mode, sc.run.seed)
    detach = _attach_solve_log(run.out / "solver_log.csv", run.header())
    start = time.perf_counter()
    status = 0
    try:
        HANDLERS[args.command](run, args.law)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        status = 1
    except (SolverError, FluxError, ResistanceError, FitError, ControlMatrixError, OutsideGridError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        status = 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = 2
    finally:
        detach()
    run.emit(status=status, runtime_s=f"{time.perf_counter() - start:.3f}")
    for key, value in run.summary.items():
        print(f"{key}={_fmt(value)}")
    return status


if __name__ == "__main__":
    sys.exit(main())
