"""Domain, solid, and boundary discretization.

The fluid occupies a ball of radius ``R_Omega`` minus the rigid solid.  The
control patch is the polar cap ``x3 / R_Omega > cos(gamma_cap)`` of the outer
sphere.  All boundary normals point out of the fluid: into the solid on the
solid surface, radially outward on the outer sphere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.special import elliprg

ORTHO_TOL = 1e-10


class Patch(IntEnum):
    SOLID = 0
    GAMMA = 1
    WALL = 2


def hat(w):
    """Skew matrix with ``hat(w) @ x == cross(w, x)``."""
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def rotation_from_euler(theta):
    """Product of the three elementary factors, in the order theta1, theta2, theta3.

    The middle factor carries the sign convention ``[[c, 0, -s], [0, 1, 0], [s, 0, c]]``.
    """
    t1, t2, t3 = np.asarray(theta, dtype=float)
    c1, s1 = np.cos(t1), np.sin(t1)
    c2, s2 = np.cos(t2), np.sin(t2)
    c3, s3 = np.cos(t3), np.sin(t3)
    r1 = np.array([[c1, -s1, 0.0], [s1, c1, 0.0], [0.0, 0.0, 1.0]])
    r2 = np.array([[c2, 0.0, -s2], [0.0, 1.0, 0.0], [s2, 0.0, c2]])
    r3 = np.array([[1.0, 0.0, 0.0], [0.0, c3, -s3], [0.0, s3, c3]])
    return r1 @ r2 @ r3


def euler_from_rotation(R):
    """Inverse of :func:`rotation_from_euler` on the chart ``|theta2| < pi/2``."""
    R = np.asarray(R, dtype=float)
    t2 = np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    t3 = np.arctan2(R[2, 1], R[2, 2])
    t1 = np.arctan2(R[1, 0], R[0, 0])
    return np.array([t1, t2, t3])


def project_rotation(M):
    """Closest rotation matrix in Frobenius norm (polar factor)."""
    U, _, Vt = np.linalg.svd(M)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def advance_rotation(R, omega, dt):
    """One RK4 step of ``dR/dt = hat(omega) R`` at constant omega, then re-projection."""
    W = hat(omega)
    k1 = W @ R
    k2 = W @ (R + 0.5 * dt * k1)
    k3 = W @ (R + 0.5 * dt * k2)
    k4 = W @ (R + dt * k3)
    return project_rotation(R + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


def axis_rotation(axis, angle):
    """Rodrigues formula for a rotation by ``angle`` about ``axis``."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = hat(k)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * K @ K


@dataclass(frozen=True, eq=False)
class Pose:
    h: np.ndarray
    R: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(3)
        R = np.array(self.R, dtype=float).reshape(3, 3)
        if np.linalg.norm(R.T @ R - np.eye(3)) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("R is not a rotation matrix")
        h.flags.writeable = False
        R.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "R", R)

    @classmethod
    def from_euler(cls, h, theta):
        return cls(h, rotation_from_euler(theta))

    def apply(self, x):
        """Map body-frame points to the lab frame."""
        return self.h + np.asarray(x) @ self.R.T

    def compose(self, other: "Pose") -> "Pose":
        """``self`` applied after ``other``."""
        return Pose(self.h + self.R @ other.h, self.R @ other.R)


@dataclass(frozen=True, eq=False)
class RigidState:
    pose: Pose
    v: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.array(self.v, dtype=float).reshape(3))
        object.__setattr__(self, "omega", np.array(self.omega, dtype=float).reshape(3))

    @property
    def qdot(self):
        return np.concatenate([self.v, self.omega])


@dataclass(frozen=True, eq=False)
class SolidShape:
    kind: str
    semi_axes: np.ndarray
    mass: float
    inertia0: np.ndarray

    def __post_init__(self):
        axes = np.array(self.semi_axes, dtype=float).reshape(3)
        inertia = np.array(self.inertia0, dtype=float).reshape(3, 3)
        if self.kind not in ("sphere", "ellipsoid"):
            raise ValueError(f"unknown solid kind {self.kind!r}")
        if self.kind == "sphere" and not np.allclose(axes, axes[0]):
            raise ValueError("sphere needs equal semi-axes")
        if np.any(axes <= 0):
            raise ValueError("semi-axes must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not np.allclose(inertia, inertia.T) or np.linalg.eigvalsh(inertia).min() <= 0:
            raise ValueError("inertia0 must be symmetric positive definite")
        object.__setattr__(self, "semi_axes", axes)
        object.__setattr__(self, "inertia0", inertia)

    @classmethod
    def sphere(cls, radius, mass, inertia0=None):
        if inertia0 is None:
            inertia0 = 0.4 * mass * radius**2 * np.eye(3)
        return cls("sphere", np.full(3, float(radius)), float(mass), inertia0)

    @classmethod
    def ellipsoid(cls, semi_axes, mass, inertia0=None):
        a1, a2, a3 = np.asarray(semi_axes, dtype=float)
        if inertia0 is None:
            inertia0 = 0.2 * mass * np.diag([a2**2 + a3**2, a1**2 + a3**2, a1**2 + a2**2])
        return cls("ellipsoid", np.array([a1, a2, a3]), float(mass), inertia0)

    @property
    def radius(self):
        """Largest semi-axis; the exact radius for a sphere."""
        return float(self.semi_axes.max())

    def area(self):
        a, b, c = self.semi_axes
        return 4.0 * np.pi * float(elliprg(a * a * b * b, b * b * c * c, a * a * c * c))

    def volume(self):
        return 4.0 / 3.0 * np.pi * float(np.prod(self.semi_axes))

    def contains(self, pose: Pose, x):
        """Boolean mask of points inside the closed solid."""
        body = (np.atleast_2d(x) - pose.h) @ pose.R
        return np.sum((body / self.semi_axes) ** 2, axis=1) <= 1.0


@dataclass(frozen=True)
class DomainGeometry:
    radius: float = 1.0
    gamma_cap: float = 2.0 * np.pi / 3.0
    delta: float = 0.1

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("domain radius must be positive")
        if not 0.0 < self.gamma_cap < np.pi:
            raise ValueError("gamma_cap must lie in (0, pi)")
        if not self.delta > 0:
            raise ValueError("delta must be positive")


@dataclass(frozen=True, eq=False)
class BoundaryDiscretization:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    tags: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    def __len__(self):
        return len(self.weights)

    def select(self, patch):
        return self.tags == patch

    def __add__(self, other: "BoundaryDiscretization"):
        n = len(self)
        return BoundaryDiscretization(
            np.vstack([self.points, other.points]),
            np.vstack([self.normals, other.normals]),
            np.concatenate([self.weights, other.weights]),
            np.concatenate([self.tags, other.tags]),
            np.vstack([self.edges, other.edges + n]),
        )


def _latlong(n_theta, n_phi, rule="midpoint"):
    """Latitude-longitude nodes, per-node weights of the parameter domain, and neighbour edges.

    ``midpoint``: equispaced polar angles with weight ``dtheta dphi`` (the caller
    supplies the surface jacobian).  ``gauss``: Gauss-Legendre nodes in
    ``cos(theta)`` with weights that already include ``sin(theta)``.
    """
    if n_theta < 4 or n_phi < 4:
        raise ValueError("need at least 4 nodes per angular direction")
    dph = 2.0 * np.pi / n_phi
    if rule == "midpoint":
        dth = np.pi / n_theta
        th = (np.arange(n_theta) + 0.5) * dth
        wth = np.full(n_theta, dth)
    elif rule == "gauss":
        x, wth = np.polynomial.legendre.leggauss(n_theta)
        th = np.arccos(-x)
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    ph = np.arange(n_phi) * dph
    T, P = np.meshgrid(th, ph, indexing="ij")
    W = np.repeat(wth * dph, n_phi)
    idx = np.arange(n_theta * n_phi).reshape(n_theta, n_phi)
    edges = np.vstack([
        np.stack([idx[:-1].ravel(), idx[1:].ravel()], axis=1),
        np.stack([idx.ravel(), np.roll(idx, -1, axis=1).ravel()], axis=1),
    ])
    return T.ravel(), P.ravel(), W, edges


def reference_solid_boundary(shape: SolidShape, resolution=(16, 32)):
    """Body-frame discretization of the solid surface, centred at the origin."""
    T, P, dA, edges = _latlong(*resolution)
    a1, a2, a3 = shape.semi_axes
    st, ct, sp, cp = np.sin(T), np.cos(T), np.sin(P), np.cos(P)
    x = np.stack([a1 * st * cp, a2 * st * sp, a3 * ct], axis=1)
    dth = np.stack([a1 * ct * cp, a2 * ct * sp, -a3 * st], axis=1)
    dph = np.stack([-a1 * st * sp, a2 * st * cp, np.zeros_like(T)], axis=1)
    jac = np.linalg.norm(np.cross(dth, dph), axis=1)
    grad = x / shape.semi_axes**2
    outward = grad / np.linalg.norm(grad, axis=1, keepdims=True)
    tags = np.full(len(T), Patch.SOLID, dtype=int)
    return BoundaryDiscretization(x, -outward, jac * dA, tags, edges)


def solid_boundary(shape: SolidShape, pose: Pose, resolution=(16, 32)):
    """Solid surface nodes moved rigidly to ``pose``; normals point into the solid."""
    ref = reference_solid_boundary(shape, resolution)
    return BoundaryDiscretization(
        pose.apply(ref.points), ref.normals @ pose.R.T, ref.weights, ref.tags, ref.edges
    )


def outer_boundary(domain: DomainGeometry, resolution=(32, 64)):
    """Outer sphere with Gauss-Legendre latitudes, so fluxes of smooth data are integrated to roundoff."""
    T, P, dA, edges = _latlong(*resolution, rule="gauss")
    n = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=1)
    w = domain.radius**2 * dA
    tags = np.where(n[:, 2] > np.cos(domain.gamma_cap), Patch.GAMMA, Patch.WALL).astype(int)
    return BoundaryDiscretization(domain.radius * n, n, w, tags, edges)


def clearance(shape: SolidShape, pose: Pose, domain: DomainGeometry, resolution=(16, 32)):
    """Distance from the solid to the outer sphere (negative on overlap)."""
    if shape.kind == "sphere":
        return domain.radius - float(np.linalg.norm(pose.h)) - shape.radius
    pts = solid_boundary(shape, pose, resolution).points
    return float(np.min(domain.radius - np.linalg.norm(pts, axis=1)))


def in_q_delta(shape, pose, domain, resolution=(16, 32)):
    return clearance(shape, pose, domain, resolution) >= domain.delta


def fibonacci_sphere(n):
    """Quasi-uniform unit vectors."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + 5.0**0.5) * k
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
