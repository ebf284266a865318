"""Trajectory tracking of a rigid body in a bounded Stokes flow by boundary control on a cap."""
from .geometry import DomainGeometry, Pose, RigidState, SolidShape
from .stokes import FluidSystem, SolverConfig, StokesSolution

__all__ = ["DomainGeometry", "FluidSystem", "Pose", "RigidState", "SolidShape", "SolverConfig", "StokesSolution"]
