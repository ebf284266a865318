"""Drag on a centred sphere against the free-space and concentric-sphere values as the domain grows."""
import argparse

import numpy as np

from stokestrack.dynamics import concentric_sphere_drag, elementary_solutions, resistance_matrix
from stokestrack.geometry import DomainGeometry, Pose, SolidShape
from stokestrack.stokes import SolverConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--a", type=float, default=0.1)
    p.add_argument("--radii", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    args = p.parse_args()
    sphere = SolidShape.sphere(args.a, 1.0)
    print("R,trans_dev_free,rot_dev_free,trans_dev_concentric,rot_dev_concentric")
    for R in args.radii:
        K = resistance_matrix(elementary_solutions(sphere, Pose(np.zeros(3)), DomainGeometry(R), SolverConfig())).K
        t, r = np.mean(np.diag(K)[:3]), np.mean(np.diag(K)[3:])
        ct, cr = concentric_sphere_drag(args.a, R)
        print(f"{R:g},{t / (6 * np.pi * args.a) - 1:.6e},{r / (8 * np.pi * args.a**3) - 1:.6e},"
              f"{t / ct - 1:.6e},{r / cr - 1:.6e}")


if __name__ == "__main__":
    main()
