"""Build the default law, track the circle at several time steps, and compare fast and full evaluation."""
import argparse
import time

import numpy as np

from stokestrack.closed_loop import controlled_rhs, interpolation_bound, track, validate_trajectory
from stokestrack.control import build_control_law
from stokestrack.scenario import Scenario


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--scenario", default="scenarios/default.toml")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--spot", type=int, default=5, help="full-mode spot checks along the dt run")
    args = p.parse_args()
    sc = Scenario.load(args.scenario)
    start = time.perf_counter()
    law = build_control_law(sc.shape(), sc.domain(), sc.solver_config(), sc.basis(), sc.grid(), sc.control.eps,
                            sc.bounds())
    print(f"law built in {time.perf_counter() - start:.1f}s, eps_bar={law.eps_bar:.3e}")
    traj = sc.trajectory()
    validate_trajectory(law, traj)
    prev, rec0 = None, None
    for k in range(args.levels):
        dt = sc.run.dt / 2**k
        rec = track(law, traj, dt)
        err = rec.sup_errors()["h"]
        ratio = f"{prev / err:.2f}" if prev else "-"
        print(f"dt={dt:g} sup_err_h={err:.6e} ratio={ratio} max_cost={rec.cost.max():.3f}")
        prev, rec0 = err, rec0 or rec
    for k in np.linspace(0, len(rec0) - 1, args.spot).round().astype(int):
        s = rec0.state(k)
        ref = traj.at(rec0.t[k])[2]
        fast = controlled_rhs(law, s, ref, "fast")
        full = controlled_rhs(law, s, ref, "full")
        mixed = controlled_rhs(law, s, ref, "fast", plant="full")
        print(f"t={rec0.t[k]:.2f} |a_full-a_fast|={np.linalg.norm(full.qddot - fast.qddot):.2e} "
              f"|a_mixed-a_fast|={np.linalg.norm(mixed.qddot - fast.qddot):.2e} "
              f"bound={interpolation_bound(law, s, fast.mu):.2e}")


if __name__ == "__main__":
    main()
