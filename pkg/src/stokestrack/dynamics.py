"""Per-pose rigid-body objects: elementary solutions, resistance and mass matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DomainGeometry, Pose, SolidShape
from .stokes import FluidSystem, SolverConfig, StokesSolution, elementary_field_values

ASYMMETRY_TOL = 1e-2


class ResistanceError(RuntimeError):
    pass


def elementary_velocity(i, pose: Pose, x):
    """Rigid velocity number ``i`` (1-based): unit translations 1..3, unit rotations 4..6."""
    if not 1 <= i <= 6:
        raise IndexError(f"elementary velocity index {i} outside 1..6")
    x = np.asarray(x, dtype=float)
    if i <= 3:
        return np.eye(3)[i - 1].copy()
    return np.cross(np.eye(3)[i - 4], x - pose.h)


@dataclass(frozen=True, eq=False)
class ElementarySolutions:
    system: FluidSystem
    coefficients: np.ndarray  # (6, 3 Ns)
    residuals: np.ndarray  # (6,)

    def __getitem__(self, i) -> StokesSolution:
        """Solution ``V_i`` for ``i`` in 1..6."""
        return self.system.solution(self.coefficients[i - 1], self.residuals[i - 1])

    def combined(self, qdot) -> StokesSolution:
        """``sum_i qdot_i V_i`` as one solution."""
        return self.system.solution(np.asarray(qdot) @ self.coefficients)


def elementary_solutions(shape: SolidShape, pose: Pose, domain: DomainGeometry,
                         config: SolverConfig = SolverConfig(), system: FluidSystem | None = None):
    system = system or FluidSystem(shape, pose, domain, config)
    phis = elementary_field_values(pose, system.solid.points)
    bcs = np.array([system.bc_from_parts(solid_values=phi) for phi in phis])
    C, res = system.solve_coefficients(bcs)
    return ElementarySolutions(system, C, res)


@dataclass(frozen=True, eq=False)
class ResistanceMatrix:
    K: np.ndarray
    raw: np.ndarray
    asymmetry: float

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.K)


def resistance_matrix(elem: ElementarySolutions, check=True) -> ResistanceMatrix:
    raw = elem.system.integrals_of(elem.coefficients)
    asym = float(np.linalg.norm(raw - raw.T) / np.linalg.norm(raw))
    K = 0.5 * (raw + raw.T)
    if check:
        if asym > ASYMMETRY_TOL:
            raise ResistanceError(f"resistance asymmetry {asym:.3e} exceeds {ASYMMETRY_TOL}; refine the discretization")
        if np.linalg.eigvalsh(K).min() <= 0:
            raise ResistanceError("resistance matrix is not positive definite; refine the discretization")
    return ResistanceMatrix(K, raw, asym)


def concentric_sphere_drag(a, R):
    """Translational and rotational drag of a sphere of radius ``a`` at the centre of a fixed sphere of radius ``R``.

    Returns ``(force per unit speed, torque per unit rate)``; both tend to
    ``6 pi a`` and ``8 pi a^3`` as ``R`` grows.
    """
    lam = a / R
    trans = 6.0 * np.pi * a * (1 - lam**5) / (1 - 9 * lam / 4 + 5 * lam**3 / 2 - 9 * lam**5 / 4 + lam**6)
    rot = 8.0 * np.pi * a**3 / (1 - lam**3)
    return trans, rot


def strain_rate(grad):
    return 0.5 * (grad + np.swapaxes(grad, -1, -2))


def sample_fluid(shape, pose, domain, n, rng):
    """Uniform points in the fluid region by rejection from the ball."""
    pts = []
    count = 0
    while count < n:
        m = int(1.3 * (n - count)) + 16
        x = rng.uniform(-domain.radius, domain.radius, size=(m, 3))
        keep = (np.sum(x * x, axis=1) < domain.radius**2) & ~shape.contains(pose, x)
        pts.append(x[keep])
        count += int(keep.sum())
    return np.vstack(pts)[:n]


def fluid_volume(shape, domain):
    return 4.0 / 3.0 * np.pi * domain.radius**3 - shape.volume()


def sample_near_solid(shape, pose, domain, n, rng):
    """Points with radial density ``~ r^-2`` about the solid centre, plus their sampling density.

    Strain of the elementary flows decays like ``r^-2``, so this makes the
    integrand of the dissipation roughly flat.  Points outside the fluid keep
    their density and are given zero weight by the caller.
    """
    r0 = float(shape.semi_axes.min())
    r1 = domain.radius + float(np.linalg.norm(pose.h))
    u = rng.uniform(size=n)
    r = 1.0 / (1.0 / r0 - u * (1.0 / r0 - 1.0 / r1))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x = pose.h + r[:, None] * d
    density = (r0 * r1 / (r1 - r0)) / (4.0 * np.pi * r**4)
    inside = (np.sum(x * x, axis=1) < domain.radius**2) & ~shape.contains(pose, x)
    return x, density, inside


def volume_form_check(elem: ElementarySolutions, i=1, j=1, n_samples=20_000, rng=None, K_surface=None):
    """Gap between ``2 int D(V_i):D(V_j)`` (importance-sampled) and the surface entry ``K_ij``.

    The gap is scaled by ``sqrt(K_ii K_jj)`` so near-zero off-diagonal entries are
    judged on the same footing as the diagonal.  Returns
    ``(discrepancy, volume estimate, surface value)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    system = elem.system
    surface = system.integrals_of(elem.coefficients)
    if K_surface is None:
        K_surface = surface[i - 1, j - 1]
    x, density, inside = sample_near_solid(system.shape, system.pose, system.domain, n_samples, rng)
    x, density = x[inside], density[inside]
    Di = strain_rate(elem[i].gradient(x))
    Dj = Di if i == j else strain_rate(elem[j].gradient(x))
    vol = 2.0 * np.sum(np.einsum("tik,tik->t", Di, Dj) / density) / n_samples
    scale = np.sqrt(abs(surface[i - 1, i - 1] * surface[j - 1, j - 1]))
    disc = abs(vol - K_surface) / scale
    return disc, vol, K_surface


def inertia(shape: SolidShape, pose: Pose):
    return pose.R @ shape.inertia0 @ pose.R.T


def mass_matrix(shape: SolidShape, pose: Pose):
    M = np.zeros((6, 6))
    M[:3, :3] = shape.mass * np.eye(3)
    M[3:, 3:] = inertia(shape, pose)
    return M


def momentum_rate(shape: SolidShape, pose: Pose, omega, qddot):
    """``d/dt (M(q) q')`` given the accelerations; the rotational part carries ``omega x (I omega)``."""
    I = inertia(shape, pose)
    omega = np.asarray(omega, dtype=float)
    qddot = np.asarray(qddot, dtype=float)
    return np.concatenate([shape.mass * qddot[:3], I @ qddot[3:] + np.cross(omega, I @ omega)])


def acceleration_from_force(shape: SolidShape, pose: Pose, omega, force):
    """Invert :func:`momentum_rate`: accelerations for which ``d/dt(M q') = force``."""
    I = inertia(shape, pose)
    omega = np.asarray(omega, dtype=float)
    force = np.asarray(force, dtype=float)
    return np.concatenate([force[:3] / shape.mass, np.linalg.solve(I, force[3:] - np.cross(omega, I @ omega))])
