"""Scenario files: one TOML document with geometry, solver, control and run blocks.

Unknown keys are errors, and every validation message names the offending field.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli

from .closed_loop import Circle, Line, Rest, Spline, Trajectory
from .control import BoundSet, PoseGrid, build_control_basis
from .geometry import DomainGeometry, Pose, RigidState, SolidShape
from .stokes import SolverConfig


class ScenarioError(ValueError):
    pass


def _positive(block, name, value):
    if not value > 0:
        raise ScenarioError(f"{block}.{name} must be > 0 (got {value})")


@dataclass(frozen=True)
class GeometryBlock:
    solid: str = "sphere"
    semi_axes: tuple = (0.1, 0.1, 0.1)
    mass: float = 1.0
    inertia0: tuple | None = None
    domain_radius: float = 1.0
    gamma_cap: float = 2.0 * math.pi / 3.0
    delta: float = 0.1
    solid_nodes: tuple = (16, 32)
    outer_nodes: tuple = (32, 64)

    def validate(self):
        if self.solid not in ("sphere", "ellipsoid"):
            raise ScenarioError(f"geometry.solid must be 'sphere' or 'ellipsoid' (got {self.solid!r})")
        if len(self.semi_axes) != 3:
            raise ScenarioError("geometry.semi_axes needs 3 entries")
        for a in self.semi_axes:
            _positive("geometry", "semi_axes", a)
        if self.solid == "sphere" and len(set(self.semi_axes)) != 1:
            raise ScenarioError("geometry.semi_axes must be equal for a sphere")
        for name in ("mass", "domain_radius", "delta"):
            _positive("geometry", name, getattr(self, name))
        if not 0 < self.gamma_cap < math.pi:
            raise ScenarioError(f"geometry.gamma_cap must lie in (0, pi) (got {self.gamma_cap})")
        for name in ("solid_nodes", "outer_nodes"):
            v = getattr(self, name)
            if len(v) != 2 or min(v) < 4:
                raise ScenarioError(f"geometry.{name} must be two integers >= 4 (got {list(v)})")
        if self.inertia0 is not None:
            I = np.asarray(self.inertia0, dtype=float)
            if I.shape != (3, 3) or not np.allclose(I, I.T) or np.linalg.eigvalsh(I).min() <= 0:
                raise ScenarioError("geometry.inertia0 must be a symmetric positive definite 3x3 matrix")


@dataclass(frozen=True)
class SolverBlock:
    solid_sources: int = 200
    outer_sources: int = 800
    inner_factor: float = 0.5
    outer_factor: float = 1.4
    regularization: float = 1e-12
    flux_tol: float = 1e-10

    def validate(self):
        for f in fields(self):
            _positive("solver", f.name, getattr(self, f.name))
        if not self.inner_factor < 1:
            raise ScenarioError(f"solver.inner_factor must be < 1 (got {self.inner_factor})")
        if not self.outer_factor > 1:
            raise ScenarioError(f"solver.outer_factor must be > 1 (got {self.outer_factor})")


@dataclass(frozen=True)
class BoundsBlock:
    v_max: float = 3.0
    omega_max: float = 3.0
    a_max: float = 15.0
    alpha_max: float = 15.0

    def validate(self):
        for f in fields(self):
            _positive("control.bounds", f.name, getattr(self, f.name))


@dataclass(frozen=True)
class ControlBlock:
    n_basis: int = 24
    bump_radius: float = 1.2
    bump_power: int = 8
    window_power: int = 8
    eps: float = 1e-3
    grid_lows: tuple = (-0.35, -0.35, -0.1)
    grid_highs: tuple = (0.35, 0.35, 0.1)
    grid_counts: tuple = (3, 3, 3)
    grid_dims: tuple | None = None
    bounds: BoundsBlock = field(default_factory=BoundsBlock)

    def validate(self):
        if self.n_basis < 6:
            raise ScenarioError(f"control.n_basis must be >= 6 (got {self.n_basis})")
        for name in ("bump_radius", "bump_power", "window_power", "eps"):
            _positive("control", name, getattr(self, name))
        n = len(self.grid_lows)
        if not n == len(self.grid_highs) == len(self.grid_counts):
            raise ScenarioError("control.grid_lows, grid_highs and grid_counts must have equal length")
        if self.grid_dims is not None and len(self.grid_dims) != n:
            raise ScenarioError("control.grid_dims must match the grid length")
        if any(c < 1 for c in self.grid_counts):
            raise ScenarioError("control.grid_counts entries must be >= 1")
        if any(hi < lo for lo, hi in zip(self.grid_lows, self.grid_highs)):
            raise ScenarioError("control.grid_highs must be >= control.grid_lows")
        self.bounds.validate()


@dataclass(frozen=True)
class RunBlock:
    trajectory: str = "circle"
    T: float = 1.0
    dt: float = 1e-2
    mode: str = "fast"
    seed: int = 0
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.3
    period: float = 1.0
    spin: float = 0.0
    start: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    times: tuple = (0.0, 1.0)
    waypoints: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    initial_h: tuple = (0.0, 0.0, 0.0)
    initial_velocity: tuple = (0.05, 0.0, 0.0)
    initial_omega: tuple = (0.0, 0.0, 0.0)
    max_position_error: float = 3e-4
    switch_off_tol: float = 1e-4
    dt_levels: int = 3
    resistance_poses: tuple = ((0.0, 0.0, 0.0),)
    random_poses: int = 0
    volume_samples: int = 0

    def validate(self):
        if self.trajectory not in ("rest", "line", "circle", "spline"):
            raise ScenarioError(f"run.trajectory must be rest, line, circle or spline (got {self.trajectory!r})")
        if self.mode not in ("fast", "full"):
            raise ScenarioError(f"run.mode must be 'fast' or 'full' (got {self.mode!r})")
        for name in ("T", "dt", "radius", "period", "max_position_error", "switch_off_tol"):
            _positive("run", name, getattr(self, name))
        if self.seed < 0:
            raise ScenarioError("run.seed must be non-negative")
        if self.dt_levels < 2:
            raise ScenarioError("run.dt_levels must be >= 2")
        if self.random_poses < 0 or self.volume_samples < 0:
            raise ScenarioError("run.random_poses and run.volume_samples must be >= 0")
        if self.trajectory == "spline":
            if len(self.times) != len(self.waypoints) or len(self.times) < 2:
                raise ScenarioError("run.times and run.waypoints must have the same length >= 2")
            if any(len(w) != 3 for w in self.waypoints):
                raise ScenarioError("run.waypoints entries must be 3-vectors")


BLOCKS = {"geometry": GeometryBlock, "solver": SolverBlock, "control": ControlBlock, "run": RunBlock}


def _tuplify(v):
    if isinstance(v, (list, tuple)):
        return tuple(_tuplify(x) for x in v)
    return v


def _coerce(block, name, default, value):
    """Match the default's numeric type so that e.g. ``mass = 1`` reads as a float."""
    if isinstance(default, bool) or value is None:
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ScenarioError(f"{block}.{name} must be a number (got {value!r})")
        return float(value)
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ScenarioError(f"{block}.{name} must be an integer (got {value!r})")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise ScenarioError(f"{block}.{name} must be a string (got {value!r})")
    if isinstance(default, tuple) and not isinstance(value, (list, tuple)):
        raise ScenarioError(f"{block}.{name} must be an array (got {value!r})")
    return _tuplify(value)


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ScenarioError(f"{prefix} must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ScenarioError(f"unknown key {prefix}.{unknown[0]}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        if hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, f"{prefix}.{name}")
        else:
            kwargs[name] = _coerce(prefix, name, default, value)
    return cls(**kwargs)


@dataclass(frozen=True)
class Scenario:
    geometry: GeometryBlock = field(default_factory=GeometryBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    control: ControlBlock = field(default_factory=ControlBlock)
    run: RunBlock = field(default_factory=RunBlock)
    source: str = ""

    def __post_init__(self):
        for name in BLOCKS:
            getattr(self, name).validate()

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_dict(cls, data, source=""):
        unknown = sorted(set(data) - set(BLOCKS))
        if unknown:
            raise ScenarioError(f"unknown block {unknown[0]}")
        blocks = {name: _build(c, data.get(name, {}), name) for name, c in BLOCKS.items()}
        return cls(**blocks, source=source)

    @classmethod
    def load(cls, path):
        text = Path(path).read_text()
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
        return cls.from_dict(data, source=text)

    def with_run(self, **changes):
        return replace(self, run=replace(self.run, **changes))

    # -- provenance -----------------------------------------------------------
    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in BLOCKS}

    def echo(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.echo().encode()).hexdigest()

    # -- model objects ----------------------------------------------------------
    def shape(self) -> SolidShape:
        g = self.geometry
        if g.solid == "sphere":
            return SolidShape.sphere(g.semi_axes[0], g.mass, g.inertia0)
        return SolidShape.ellipsoid(g.semi_axes, g.mass, g.inertia0)

    def domain(self) -> DomainGeometry:
        g = self.geometry
        return DomainGeometry(g.domain_radius, g.gamma_cap, g.delta)

    def solver_config(self) -> SolverConfig:
        s = self.solver
        return SolverConfig(self.geometry.solid_nodes, self.geometry.outer_nodes, s.solid_sources, s.outer_sources,
                            s.inner_factor, s.outer_factor, s.regularization, s.flux_tol)

    def basis(self, n_basis=None):
        c = self.control
        return build_control_basis(self.domain(), self.solver_config(), n_basis or c.n_basis,
                                   c.bump_radius, c.bump_power, c.window_power)

    def grid(self, counts=None) -> PoseGrid:
        c = self.control
        dims = c.grid_dims
        if dims is None:
            dims = (0, 1, 2) if len(c.grid_lows) == 3 else tuple(range(len(c.grid_lows)))
        return PoseGrid(c.grid_lows, c.grid_highs, counts or c.grid_counts, tuple(dims))

    def bounds(self) -> BoundSet:
        return BoundSet(**asdict(self.control.bounds))

    def trajectory(self) -> Trajectory:
        r = self.run
        if r.trajectory == "rest":
            return Rest("rest", r.T, Pose(r.initial_h))
        if r.trajectory == "line":
            return Line("line", r.T, np.array(r.start), np.array(r.velocity))
        if r.trajectory == "circle":
            return Circle("circle", r.T, np.array(r.center), r.radius, r.period, r.spin)
        return Spline("spline", r.T, np.array(r.times), np.array(r.waypoints))

    def initial_state(self) -> RigidState:
        r = self.run
        return RigidState(Pose(r.initial_h), r.initial_velocity, r.initial_omega)

