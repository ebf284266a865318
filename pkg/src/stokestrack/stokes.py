"""Stationary Stokes Dirichlet solver by Stokeslet collocation (method of fundamental solutions).

Viscosity is 1.  Sources sit on a shrunken copy of the solid surface and on
a sphere outside the domain; strengths are fitted to the Dirichlet data at
every boundary node by Tikhonov-regularised normal equations.  The outer
block of the normal matrix does not depend on the solid pose and is cached.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .geometry import (
    BoundaryDiscretization,
    DomainGeometry,
    Patch,
    Pose,
    SolidShape,
    fibonacci_sphere,
    outer_boundary,
    solid_boundary,
)

log = logging.getLogger(__name__)
# one CSV line (residual, condition) per right-hand side; route it with a handler
solve_log = logging.getLogger(__name__ + ".solves")

_C_U = 1.0 / (8.0 * np.pi)
_C_P = 1.0 / (4.0 * np.pi)


class SolverError(RuntimeError):
    def __init__(self, message, condition=np.nan):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class FluxError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    solid_nodes: tuple = (16, 32)
    outer_nodes: tuple = (32, 64)
    solid_sources: int = 200
    outer_sources: int = 800
    inner_factor: float = 0.5
    outer_factor: float = 1.4
    regularization: float = 1e-12
    flux_tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "solid_nodes", tuple(int(n) for n in self.solid_nodes))
        object.__setattr__(self, "outer_nodes", tuple(int(n) for n in self.outer_nodes))
        if not 0.0 < self.inner_factor < 1.0:
            raise ValueError("inner_factor must lie in (0, 1)")
        if not self.outer_factor > 1.0:
            raise ValueError("outer_factor must exceed 1")
        if self.solid_sources < 4 or self.outer_sources < 4:
            raise ValueError("need at least 4 sources per surface")


def stokeslet_kernel(source, strength, x):
    """Velocity, pressure and velocity gradient ``g[i, k] = d u_i / d x_k`` of one Stokeslet."""
    r = np.asarray(x, dtype=float) - np.asarray(source, dtype=float)
    f = np.asarray(strength, dtype=float)
    d = np.linalg.norm(r)
    if d == 0.0:
        raise ValueError("Stokeslet evaluated at its own source point")
    rf = r @ f
    u = _C_U * (f / d + rf * r / d**3)
    p = _C_P * rf / d**3
    g = _C_U * (-np.outer(f, r) + rf * np.eye(3) + np.outer(r, f) - 3.0 * rf * np.outer(r, r) / d**2) / d**3
    return u, p, g


def _offsets(x, sources):
    r = np.asarray(x)[:, None, :] - np.asarray(sources)[None, :, :]
    d = np.sqrt(np.einsum("tsk,tsk->ts", r, r))
    if np.any(d == 0.0):
        raise ValueError("evaluation point coincides with a source")
    return r, d


def velocity_matrix(x, sources):
    """Dense map from stacked strengths (3 Ns) to stacked velocities (3 Nt)."""
    r, d = _offsets(x, sources)
    G = (np.eye(3) / d[..., None, None] + r[..., :, None] * r[..., None, :] / d[..., None, None] ** 3) * _C_U
    return G.transpose(0, 2, 1, 3).reshape(3 * len(r), 3 * r.shape[1])


def pressure_matrix(x, sources):
    r, d = _offsets(x, sources)
    return (_C_P * r / d[..., None] ** 3).reshape(len(r), -1)


def traction_matrix(x, normals, sources):
    """Map strengths to raw traction Sigma n (pressure not yet normalised)."""
    r, d = _offsets(x, sources)
    rn = np.einsum("tsk,tk->ts", r, normals)
    T = (-3.0 * _C_P) * r[..., :, None] * r[..., None, :] * (rn / d**5)[..., None, None]
    return T.transpose(0, 2, 1, 3).reshape(3 * len(r), 3 * r.shape[1])


def _chunks(n, size=2048):
    for i in range(0, n, size):
        yield slice(i, min(i + size, n))


@dataclass(frozen=True, eq=False)
class StokesSolution:
    sources: np.ndarray
    strengths: np.ndarray
    pressure_offset: float = 0.0
    residual: float = 0.0
    condition: float = np.nan

    def velocity(self, x):
        x = np.atleast_2d(x)
        out = np.empty((len(x), 3))
        for sl in _chunks(len(x)):
            r, d = _offsets(x[sl], self.sources)
            rf = np.einsum("tsk,sk->ts", r, self.strengths)
            out[sl] = _C_U * (np.einsum("ts,sk->tk", 1.0 / d, self.strengths)
                              + np.einsum("ts,tsk->tk", rf / d**3, r))
        return out

    def pressure(self, x):
        x = np.atleast_2d(x)
        out = np.empty(len(x))
        for sl in _chunks(len(x)):
            r, d = _offsets(x[sl], self.sources)
            rf = np.einsum("tsk,sk->ts", r, self.strengths)
            out[sl] = _C_P * np.sum(rf / d**3, axis=1)
        return out - self.pressure_offset

    def gradient(self, x):
        """``g[t, i, k] = d u_i / d x_k`` at each point."""
        x = np.atleast_2d(x)
        out = np.empty((len(x), 3, 3))
        f = self.strengths
        for sl in _chunks(len(x), 1024):
            r, d = _offsets(x[sl], self.sources)
            d3 = 1.0 / d**3
            rf = np.einsum("tsk,sk->ts", r, f)
            rd3 = r * d3[..., None]
            a = np.matmul(f.T, rd3)  # a[t, i, k] = sum_s f_si r_tsk / d^3
            g = np.swapaxes(a, 1, 2) - a
            g += np.sum(rf * d3, axis=1)[:, None, None] * np.eye(3)
            g -= 3.0 * np.matmul(np.swapaxes(r * (rf * d3 / d**2)[..., None], 1, 2), r)
            out[sl] = _C_U * g
        return out

    def stress(self, x):
        g = self.gradient(x)
        p = self.pressure(x)
        return -p[:, None, None] * np.eye(3) + g + g.transpose(0, 2, 1)

    def __add__(self, other):
        return combine([self, other], [1.0, 1.0])

    def scaled(self, alpha):
        return combine([self], [alpha])


def combine(solutions, coefficients):
    """Linear combination of solutions sharing one source set."""
    src = solutions[0].sources
    strengths = sum(c * s.strengths for c, s in zip(coefficients, solutions))
    offset = sum(c * s.pressure_offset for c, s in zip(coefficients, solutions))
    return StokesSolution(src, strengths, float(offset), np.nan, solutions[0].condition)


def rigid_field(x, pose: Pose, qdot):
    """Velocity of the rigid motion ``v + omega x (x - h)``; ``qdot = (v, omega)``."""
    qdot = np.asarray(qdot, dtype=float)
    return qdot[:3] + np.cross(qdot[3:], np.atleast_2d(x) - pose.h)


def elementary_field_values(pose: Pose, x):
    """Array ``(6, n, 3)`` of the elementary rigid velocities at points ``x``."""
    x = np.atleast_2d(x)
    out = np.zeros((6, len(x), 3))
    for i in range(3):
        out[i, :, i] = 1.0
        out[3 + i] = np.cross(np.eye(3)[i], x - pose.h)
    return out


@lru_cache(maxsize=2)
def _outer_blocks(radius, gamma_cap, delta, outer_nodes, outer_sources, outer_factor):
    domain = DomainGeometry(radius, gamma_cap, delta)
    disc = outer_boundary(domain, outer_nodes)
    src = outer_factor * radius * fibonacci_sphere(outer_sources)
    A = velocity_matrix(disc.points, src)
    F = A.T @ A
    return disc, src, A, F


class FluidSystem:
    """Collocation system for one solid pose; factorised once, solved for many data."""

    def __init__(self, shape: SolidShape, pose: Pose, domain: DomainGeometry, config: SolverConfig = SolverConfig()):
        self.shape, self.pose, self.domain, self.config = shape, pose, domain, config
        outer, out_src, A_oo, F = _outer_blocks(
            domain.radius, domain.gamma_cap, domain.delta,
            config.outer_nodes, config.outer_sources, config.outer_factor,
        )
        solid = solid_boundary(shape, pose, config.solid_nodes)
        self.solid = solid
        self.outer = outer
        self.disc = solid + outer
        self.n_solid = len(solid)
        dirs = fibonacci_sphere(config.solid_sources)
        sol_src = pose.apply(config.inner_factor * dirs * shape.semi_axes)
        self.sources = np.vstack([sol_src, out_src])
        self.ns = 3 * len(sol_src)

        A_ss = velocity_matrix(solid.points, sol_src)
        A_so = velocity_matrix(solid.points, out_src)
        A_os = velocity_matrix(outer.points, sol_src)
        self._blocks = (A_ss, A_so, A_os, A_oo)
        G = np.empty((self.ns + F.shape[0],) * 2)
        ns = self.ns
        G[:ns, :ns] = A_ss.T @ A_ss + A_os.T @ A_os
        G[:ns, ns:] = A_ss.T @ A_so + A_os.T @ A_oo
        G[ns:, :ns] = G[:ns, ns:].T
        G[ns:, ns:] = F + A_so.T @ A_so
        lam = config.regularization * np.trace(G)
        G[np.diag_indices_from(G)] += lam
        try:
            self._chol = sla.cho_factor(G, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SolverError("normal matrix not positive definite", _diag_condition(G)) from exc
        diag = np.abs(np.diag(self._chol[0]))
        self.condition = float((diag.max() / diag.min()) ** 2)
        if not np.isfinite(self.condition):
            raise SolverError("collocation system is rank deficient", self.condition)

        # traction at solid nodes with the pressure normalised to zero weighted mean
        P = pressure_matrix(solid.points, self.sources)
        w = solid.weights
        pbar = (w @ P) / w.sum()
        TM = traction_matrix(solid.points, solid.normals, self.sources)
        TM += np.outer(solid.normals.ravel(), pbar)
        self._traction = TM
        self._pbar = pbar
        phi = elementary_field_values(pose, solid.points) * w[None, :, None]
        self._integrals = phi.reshape(6, -1) @ TM

    # -- boundary data -------------------------------------------------------
    def flux(self, bc):
        bc = np.asarray(bc).reshape(len(self.disc), 3)
        return float(np.sum(self.disc.weights * np.einsum("nk,nk->n", bc, self.disc.normals)))

    def check_flux(self, bc):
        bc = np.asarray(bc).reshape(len(self.disc), 3)
        l2 = np.sqrt(np.sum(self.disc.weights * np.sum(bc**2, axis=1)))
        flux = self.flux(bc)
        if abs(flux) > self.config.flux_tol * max(l2, np.finfo(float).tiny):
            raise FluxError(f"boundary data carries net flux {flux:.3e} (L2 norm {l2:.3e})")

    def bc_from_parts(self, solid_values=None, outer_values=None):
        """Stack per-patch values into one data array over ``self.disc``."""
        bc = np.zeros((len(self.disc), 3))
        if solid_values is not None:
            bc[: self.n_solid] = solid_values
        if outer_values is not None:
            bc[self.n_solid:] = outer_values
        return bc

    # -- linear algebra ------------------------------------------------------
    def _apply(self, c):
        A_ss, A_so, A_os, A_oo = self._blocks
        ns = self.ns
        top = A_ss @ c[:ns] + A_so @ c[ns:]
        bot = A_os @ c[:ns] + A_oo @ c[ns:]
        return np.concatenate([top, bot])

    def solve_coefficients(self, bcs, check=True):
        """Strength vectors for a stack of data arrays ``(k, n_nodes, 3)``.

        Returns ``(coefficients (k, 3 Ns), relative residuals (k,))``.
        """
        bcs = np.asarray(bcs, dtype=float).reshape(-1, len(self.disc), 3)
        if check:
            for bc in bcs:
                self.check_flux(bc)
        b = bcs.reshape(len(bcs), -1).T
        m = 3 * self.n_solid
        A_ss, A_so, A_os, A_oo = self._blocks
        rhs = np.vstack([A_ss.T @ b[:m] + A_os.T @ b[m:], A_so.T @ b[:m] + A_oo.T @ b[m:]])
        C = sla.cho_solve(self._chol, rhs, check_finite=False)
        res = np.abs(self._apply(C) - b).max(axis=0)
        scale = np.abs(b).max(axis=0)
        rel = np.where(scale > 0, res / np.where(scale > 0, scale, 1.0), res)
        for r in rel:
            solve_log.info("%.6e,%.6e", r, self.condition)
        return C.T, rel

    def solution(self, coefficients, residual=np.nan):
        c = np.asarray(coefficients)
        return StokesSolution(self.sources, c.reshape(-1, 3).copy(), float(self._pbar @ c), float(residual), self.condition)

    def solve(self, bc, check=True):
        C, rel = self.solve_coefficients(bc, check)
        log.debug("stokes solve residual %.3e condition %.3e", rel[0], self.condition)
        return self.solution(C[0], rel[0])

    # -- post-processing -----------------------------------------------------
    def traction_of(self, coefficients):
        """Traction ``(n_solid, 3)`` at the solid nodes, normals out of the fluid."""
        return (self._traction @ np.asarray(coefficients)).reshape(self.n_solid, 3)

    def integrals_of(self, coefficients):
        """``(int Sigma n . phi_j)_j`` for one ``(3Ns,)`` or many ``(k, 3Ns)`` strength vectors."""
        return (self._integrals @ np.asarray(coefficients).T).T

    def boundary_values(self, coefficients):
        return self._apply(np.asarray(coefficients)).reshape(len(self.disc), 3)


def _diag_condition(G):
    d = np.abs(np.diag(G))
    return float(d.max() / max(d.min(), np.finfo(float).tiny))


def solve_dirichlet(system: FluidSystem, bc) -> StokesSolution:
    return system.solve(bc)


def traction(sol: StokesSolution, disc: BoundaryDiscretization):
    """``Sigma(u, p) n`` at the SOLID nodes of ``disc``."""
    mask = disc.select(Patch.SOLID)
    S = sol.stress(disc.points[mask])
    return np.einsum("tik,tk->ti", S, disc.normals[mask])


def traction_integrals(sol: StokesSolution, disc: BoundaryDiscretization, pose: Pose):
    mask = disc.select(Patch.SOLID)
    t = traction(sol, disc)
    phi = elementary_field_values(pose, disc.points[mask])
    return np.einsum("n,jnk,nk->j", disc.weights[mask], phi, t)
