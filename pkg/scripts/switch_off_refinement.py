"""Gain along a free trajectory on nested pose grids, in fast and full evaluation."""
import argparse
import time

import numpy as np

from stokestrack.closed_loop import switch_off_experiment
from stokestrack.control import PoseGrid, build_control_basis, build_control_law
from stokestrack.geometry import DomainGeometry, Pose, RigidState, SolidShape
from stokestrack.stokes import SolverConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--counts", type=int, nargs="+", default=[2, 3, 5])
    p.add_argument("--coarse", action="store_true", help="use the coarse test discretization with 12 fields")
    p.add_argument("--samples", type=int, default=11)
    args = p.parse_args()
    sphere, domain = SolidShape.sphere(0.1, 1.0), DomainGeometry()
    if args.coarse:
        config, nb = SolverConfig((12, 24), (24, 48), 120, 500), 12
    else:
        config, nb = SolverConfig(), 24
    basis = build_control_basis(domain, config, nb)
    state0 = RigidState(Pose(np.zeros(3)), np.array([0.05, 0.0, 0.0]), np.zeros(3))
    print("count,fast_ratio,full_ratio,build_s")
    for n in args.counts:
        start = time.perf_counter()
        grid = PoseGrid([-0.35, -0.35, -0.1], [0.35, 0.35, 0.1], (n, n, n))
        law = build_control_law(sphere, domain, config, basis, grid, eps=1e-3)
        build = time.perf_counter() - start
        fast = switch_off_experiment(law, 1.0, state0, mode="fast").ratio
        full = switch_off_experiment(law, 1.0, state0, mode="full", n_samples=args.samples).ratio
        print(f"{n},{fast:.3e},{full:.3e},{build:.1f}")


if __name__ == "__main__":
    main()
