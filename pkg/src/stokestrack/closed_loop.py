"""Free and controlled solid dynamics, trajectory tracking and fluid reconstruction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .control import ControlLaw, OutsideGridError, control_cost, mu
from .dynamics import acceleration_from_force, elementary_solutions, mass_matrix, momentum_rate
from .geometry import Patch, Pose, RigidState, axis_rotation, hat, project_rotation
from .stokes import FluidSystem, StokesSolution, rigid_field

log = logging.getLogger(__name__)


# -- reference trajectories ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Reference motion on ``[0, T]``; ``at(t)`` returns ``(pose, q', q'')``."""
    kind: str
    T: float

    def at(self, t):
        raise NotImplementedError

    def initial_state(self) -> RigidState:
        pose, qdot, _ = self.at(0.0)
        return RigidState(pose, qdot[:3], qdot[3:])

    def samples(self, n=101):
        return [self.at(t) for t in np.linspace(0.0, self.T, n)]


@dataclass(frozen=True, eq=False)
class Rest(Trajectory):
    pose: Pose = field(default_factory=lambda: Pose(np.zeros(3)))

    def at(self, t):
        return self.pose, np.zeros(6), np.zeros(6)


@dataclass(frozen=True, eq=False)
class Line(Trajectory):
    start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))

    def at(self, t):
        v = np.asarray(self.velocity, dtype=float)
        return Pose(np.asarray(self.start) + v * t, self.R), np.concatenate([v, np.zeros(3)]), np.zeros(6)


@dataclass(frozen=True, eq=False)
class Circle(Trajectory):
    """Uniform circle in the plane ``x3 = center[2]``, optionally spinning about e3 at rate ``spin``."""
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.3
    period: float = 1.0
    spin: float = 0.0

    def at(self, t):
        w = 2.0 * np.pi / self.period
        c, s = np.cos(w * t), np.sin(w * t)
        r = self.radius
        h = np.asarray(self.center) + r * np.array([c, s, 0.0])
        v = r * w * np.array([-s, c, 0.0])
        a = -r * w * w * np.array([c, s, 0.0])
        R = axis_rotation([0.0, 0.0, 1.0], self.spin * t)
        omega = np.array([0.0, 0.0, self.spin])
        return Pose(h, R), np.concatenate([v, omega]), np.concatenate([a, np.zeros(3)])


@dataclass(frozen=True, eq=False)
class Spline(Trajectory):
    """Clamped cubic spline through position waypoints at fixed orientation."""
    times: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    waypoints: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("spline times must be strictly increasing")
        if abs(times[0]) > 0 or abs(times[-1] - self.T) > 1e-12:
            raise ValueError("spline times must span [0, T]")
        object.__setattr__(self, "_spline", CubicSpline(times, np.asarray(self.waypoints, dtype=float),
                                                        bc_type="clamped"))

    def at(self, t):
        sp = self._spline
        z = np.zeros(3)
        return Pose(sp(t), self.R), np.concatenate([sp(t, 1), z]), np.concatenate([sp(t, 2), z])


def validate_trajectory(law: ControlLaw, traj: Trajectory, n=201):
    """Reject references that leave the covered region or the bound set."""
    for pose, qdot, qddot in traj.samples(n):
        if not law.grid.contains(pose):
            raise ValueError(f"reference pose h={np.round(pose.h, 6)} leaves the covered grid region")
        if not law.bounds.contains(qdot, qddot):
            raise ValueError("reference velocity/acceleration outside the bound set")


# -- right-hand sides ----------------------------------------------------------

def kinetic_energy(shape, pose, qdot):
    return 0.5 * float(qdot @ mass_matrix(shape, pose) @ qdot)


def free_rhs(law: ControlLaw, state: RigidState, mode="fast", tables=None):
    """``(q', q'')`` of the uncontrolled motion ``d/dt(M q') = -K q'``."""
    tables = tables or law.tables_at(state.pose, mode)
    qdot = state.qdot
    return qdot, acceleration_from_force(law.shape, state.pose, state.omega, -tables.K @ qdot)


@dataclass(frozen=True, eq=False)
class ControlledStep:
    qddot: np.ndarray
    mu: np.ndarray
    g: np.ndarray
    force: np.ndarray
    K: np.ndarray
    B: np.ndarray


def plant_force(law: ControlLaw, state: RigidState, g, mode="fast", tables=None, gain=None):
    """Hydrodynamic force/torque ``-K q' - (int Sigma(u^c[g]) n . phi_j)_j`` on the solid."""
    tables = tables or law.tables_at(state.pose, mode)
    if mode == "fast":
        return -tables.K @ state.qdot - gain.B @ gain.mu
    system = tables.system
    C, _ = system.solve_coefficients(system.bc_from_parts(outer_values=g)[None], check=True)
    return -tables.K @ state.qdot - system.integrals_of(C[0])


def controlled_rhs(law: ControlLaw, state: RigidState, qddot_ref, mode="fast", plant=None) -> ControlledStep:
    """Acceleration of the solid under the feedback evaluated at the current state.

    ``mode`` selects how the law evaluates B and K; ``plant`` (default: same as
    ``mode``) selects how the resulting hydrodynamic force is computed.  With
    ``plant="full"`` the control is applied to a fresh Stokes solve.
    """
    plant = plant or mode
    tables = law.tables_at(state.pose, mode)
    gain = mu(law, state.pose, state.qdot, qddot_ref, mode, tables)
    if plant == mode:
        ptables = tables
    else:
        ptables = law.tables_at(state.pose, plant)
    force = plant_force(law, state, gain.g, plant, ptables, gain)
    qddot = acceleration_from_force(law.shape, state.pose, state.omega, force)
    return ControlledStep(qddot, gain.mu, gain.g, force, ptables.K, gain.B)


def interpolation_bound(law: ControlLaw, state: RigidState, mu_fast, fast=None, full=None):
    """Bound on the acceleration gap between fast tables and a fresh solve at ``state``.

    ``|M^-1| (|K~ - K| |q'| + |B~ - B| |mu~|)`` in spectral norms.
    """
    fast = fast or law.tables_at(state.pose, "fast")
    full = full or law.tables_at(state.pose, "full")
    A = law.blended_coefficients(state.pose)
    dK = np.linalg.norm(fast.K - full.K, 2)
    dB = np.linalg.norm((A @ fast.table).T - (A @ full.table).T, 2)
    Minv = np.linalg.norm(np.linalg.inv(mass_matrix(law.shape, state.pose)), 2)
    return float(Minv * (dK * np.linalg.norm(state.qdot) + dB * np.linalg.norm(mu_fast)))


# -- integration ---------------------------------------------------------------

def _unpack(y):
    R = project_rotation(y[3:12].reshape(3, 3))
    return RigidState(Pose(y[:3], R), y[12:15], y[15:18])


def _pack(state: RigidState):
    return np.concatenate([state.pose.h, state.pose.R.ravel(), state.v, state.omega])


def _deriv(state: RigidState, qddot):
    return np.concatenate([state.v, (hat(state.omega) @ state.pose.R).ravel(), qddot])


def rk4_step(accel, t, state: RigidState, dt):
    """Classical RK4 on ``(h, R, v, omega)``; stage and final rotations are projected onto SO(3).

    ``accel(t, state)`` returns ``q''``.
    """
    y = _pack(state)
    k1 = _deriv(state, accel(t, state))
    s2 = _unpack(y + 0.5 * dt * k1)
    k2 = _deriv(s2, accel(t + 0.5 * dt, s2))
    s3 = _unpack(y + 0.5 * dt * k2)
    k3 = _deriv(s3, accel(t + 0.5 * dt, s3))
    s4 = _unpack(y + dt * k3)
    k4 = _deriv(s4, accel(t + dt, s4))
    return _unpack(y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


@dataclass(frozen=True, eq=False)
class SimulationRecord:
    t: np.ndarray
    h: np.ndarray
    R: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    mu: np.ndarray
    cost: np.ndarray
    err_h: np.ndarray
    err_R: np.ndarray
    err_v: np.ndarray
    err_omega: np.ndarray
    truncated: bool = False
    mode: str = "fast"

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time stamps must increase")

    def __len__(self):
        return len(self.t)

    def state(self, k) -> RigidState:
        return RigidState(Pose(self.h[k], self.R[k]), self.v[k], self.omega[k])

    def sup_errors(self):
        return {"h": float(self.err_h.max()), "R": float(self.err_R.max()),
                "v": float(self.err_v.max()), "omega": float(self.err_omega.max())}

    def columns(self):
        cols = {"t": self.t}
        for name, arr in (("h", self.h), ("v", self.v), ("omega", self.omega)):
            for i in range(3):
                cols[f"{name}{i + 1}"] = arr[:, i]
        for i in range(3):
            for j in range(3):
                cols[f"R{i + 1}{j + 1}"] = self.R[:, i, j]
        for i in range(6):
            cols[f"mu{i + 1}"] = self.mu[:, i]
        cols["cost"] = self.cost
        for name in ("err_h", "err_R", "err_v", "err_omega"):
            cols[name] = getattr(self, name)
        return cols


def _record(rows, truncated, mode):
    arr = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return SimulationRecord(arr["t"], arr["h"], arr["R"], arr["v"], arr["omega"], arr["mu"], arr["cost"],
                            arr["err_h"], arr["err_R"], arr["err_v"], arr["err_omega"], truncated, mode)


def _steps(T, dt):
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a whole number of steps of dt={dt}")
    return n


def track(law: ControlLaw, traj: Trajectory, dt=1e-2, mode="fast", state0: RigidState | None = None,
          plant=None) -> SimulationRecord:
    """Integrate the controlled motion from the reference's initial state and record tracking errors."""
    n = _steps(traj.T, dt)
    state = state0 or traj.initial_state()

    def accel(t, s):
        return controlled_rhs(law, s, traj.at(t)[2], mode, plant).qddot

    rows, truncated = [], False
    for k in range(n + 1):
        t = k * dt
        ref_pose, ref_qdot, ref_qddot = traj.at(t)
        try:
            step = controlled_rhs(law, state, ref_qddot, mode, plant)
        except OutsideGridError:
            truncated = True
            log.warning("state left the covered region at t=%.4f; run truncated", t)
            break
        rows.append({
            "t": t, "h": state.pose.h, "R": state.pose.R, "v": state.v, "omega": state.omega,
            "mu": step.mu, "cost": control_cost(step.g, law.basis.disc),
            "err_h": np.linalg.norm(state.pose.h - ref_pose.h),
            "err_R": np.linalg.norm(state.pose.R - ref_pose.R),
            "err_v": np.linalg.norm(state.v - ref_qdot[:3]),
            "err_omega": np.linalg.norm(state.omega - ref_qdot[3:]),
        })
        if k == n:
            break
        try:
            state = rk4_step(accel, t, state, dt)
        except OutsideGridError:
            truncated = True
            log.warning("RK4 stage left the covered region after t=%.4f; run truncated", t)
            break
    return _record(rows, truncated, mode)


def free_run(law: ControlLaw, state0: RigidState, T, dt=1e-2, mode="fast") -> SimulationRecord:
    """Uncontrolled motion; error columns hold zeros and ``mu`` the zero control."""
    n = _steps(T, dt)

    def accel(t, s):
        return free_rhs(law, s, mode)[1]

    rows, truncated, state = [], False, state0
    for k in range(n + 1):
        rows.append({"t": k * dt, "h": state.pose.h, "R": state.pose.R, "v": state.v, "omega": state.omega,
                     "mu": np.zeros(6), "cost": 0.0, "err_h": 0.0, "err_R": 0.0,
                     "err_v": 0.0, "err_omega": 0.0})
        if k == n:
            break
        try:
            state = rk4_step(accel, k * dt, state, dt)
        except OutsideGridError:
            truncated = True
            break
    return _record(rows, truncated, mode)


# -- switch-off ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SwitchOff:
    t: np.ndarray
    h: np.ndarray
    mu_norm: np.ndarray
    Kqdot_norm: np.ndarray
    rate_norm: np.ndarray
    mode: str = "fast"

    @property
    def max_mu(self):
        return float(self.mu_norm.max())

    @property
    def max_Kqdot(self):
        return float(self.Kqdot_norm.max())

    @property
    def ratio(self):
        return self.max_mu / self.max_Kqdot if self.max_Kqdot > 0 else 0.0


def switch_off_experiment(law: ControlLaw, T, state0: RigidState, dt=1e-2, mode="fast", n_samples=None):
    """Gains along a free trajectory, with the free acceleration as the reference ``q''``.

    The trajectory is integrated with the law's interpolated tables.  In
    ``fast`` mode the gain is evaluated against the same tables, so it
    measures cancellation in the law's own model.  In ``full`` mode the free
    acceleration at each sampled state comes from a fresh Stokes solve, so the
    gain measures the mismatch between the interpolated and the true K.
    """
    run = free_run(law, state0, T, dt, "fast")
    ks = np.arange(len(run))
    if n_samples is not None:
        ks = np.unique(np.linspace(0, len(run) - 1, n_samples).round().astype(int))
    mus, kqs, rates = [], [], []
    for k in ks:
        s = run.state(k)
        tables = law.tables_at(s.pose, mode)
        _, qddot = free_rhs(law, s, mode, tables)
        gain = mu(law, s.pose, s.qdot, qddot, "fast")
        mus.append(np.linalg.norm(gain.mu))
        kqs.append(np.linalg.norm(tables.K @ s.qdot))
        rates.append(np.linalg.norm(momentum_rate(law.shape, s.pose, s.omega, qddot)))
    return SwitchOff(run.t[ks], run.h[ks], np.array(mus), np.array(kqs), np.array(rates), mode)


# -- fluid reconstruction ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FluidField:
    solution: StokesSolution
    system: FluidSystem
    bc_residual: dict  # per patch, relative to the largest boundary datum

    def velocity(self, x):
        return self.solution.velocity(x)

    def pressure(self, x):
        return self.solution.pressure(x)

    def divergence(self, x):
        """Trace of the analytic velocity gradient."""
        return np.trace(self.solution.gradient(x), axis1=1, axis2=2)


def reconstruct_fluid(law: ControlLaw, state: RigidState, g, system: FluidSystem | None = None) -> FluidField:
    """``u = sum_i q'_i V_i + u^c[g]`` with boundary-condition residuals per patch."""
    pose, qdot = state.pose, state.qdot
    system = system or FluidSystem(law.shape, pose, law.domain, law.config)
    elem = elementary_solutions(law.shape, pose, law.domain, law.config, system=system)
    g = np.asarray(g, dtype=float).reshape(len(system.outer), 3)
    Cg, _ = system.solve_coefficients(system.bc_from_parts(outer_values=g)[None])
    sol = system.solution(qdot @ elem.coefficients + Cg[0])
    data = system.bc_from_parts(rigid_field(system.solid.points, pose, qdot), g)
    err = np.linalg.norm(sol.velocity(system.disc.points) - data, axis=1)
    scale = max(float(np.abs(data).max()), np.finfo(float).tiny)
    tags = system.disc.tags
    res = {p.name: float(err[tags == p].max() / scale) if np.any(tags == p) else 0.0 for p in Patch}
    return FluidField(sol, system, res)


def check_probes(shape, pose, domain, x):
    x = np.atleast_2d(x)
    if np.any(shape.contains(pose, x)):
        raise ValueError("probe inside the solid")
    if np.any(np.linalg.norm(x, axis=1) >= domain.radius):
        raise ValueError("probe outside the domain")
    return x


def probe_points(shape, pose, domain, n, rng, margin=0.05):
    """Random fluid points at least ``margin`` away from both boundaries."""
    out = []
    while sum(len(o) for o in out) < n:
        x = rng.uniform(-domain.radius, domain.radius, size=(4 * n, 3))
        body = (x - pose.h) @ pose.R / (shape.semi_axes + margin)
        keep = (np.linalg.norm(x, axis=1) < domain.radius - margin) & (np.sum(body**2, axis=1) > 1.0)
        out.append(x[keep])
    return np.vstack(out)[:n]


def divergence(field_fn, x, step=1e-3):
    """Fourth-order central differences of ``div u``."""
    x = np.atleast_2d(x)
    div = np.zeros(len(x))
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        u = [field_fn(x + c * e)[:, k] for c in (-2, -1, 1, 2)]
        div += (u[0] - 8 * u[1] + 8 * u[2] - u[3]) / (12 * step)
    return div
