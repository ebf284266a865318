"""Fit residual and traction-span residual over nested control bases, at the centre and off-centre."""
import argparse

import numpy as np

from stokestrack.control import build_control_basis, density_study
from stokestrack.geometry import DomainGeometry, Pose, SolidShape
from stokestrack.stokes import SolverConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[6, 12, 24, 48])
    p.add_argument("--ellipsoid", action="store_true", help="use semi-axes (0.12, 0.09, 0.07)")
    args = p.parse_args()
    shape = (SolidShape.ellipsoid((0.12, 0.09, 0.07), 1.0) if args.ellipsoid else SolidShape.sphere(0.1, 1.0))
    domain, config = DomainGeometry(), SolverConfig()
    basis = build_control_basis(domain, config, max(args.sizes))
    print("h1,h2,h3,n_basis,residual,relative,traction_residual")
    for h in ([0.0, 0.0, 0.0], [0.3, 0.1, -0.05]):
        rows = density_study(shape, Pose(h), domain, config, basis, args.sizes)
        for i, n in enumerate(rows["n_basis"]):
            print(f"{h[0]:g},{h[1]:g},{h[2]:g},{n},{rows['residual'][i]:.3e},{rows['relative'][i]:.3e},"
                  f"{rows['traction_residual'][i]:.3e}")


if __name__ == "__main__":
    main()
