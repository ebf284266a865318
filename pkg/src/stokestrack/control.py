"""Boundary control synthesis on the cap Gamma.

A finite family of zero-flux bump fields on Gamma is fitted, pose by pose on
a lattice, so that the hydrodynamic force/torque it induces reproduces the
resistance matrix.  Fitted coefficients are blended across the lattice with
multilinear hat functions, which gives a Lipschitz feedback law.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import elementary_solutions, mass_matrix, momentum_rate, resistance_matrix
from .geometry import (
    BoundaryDiscretization,
    DomainGeometry,
    Patch,
    Pose,
    SolidShape,
    euler_from_rotation,
    fibonacci_sphere,
    outer_boundary,
)
from .stokes import FluidSystem, SolverConfig

log = logging.getLogger(__name__)

LAW_FORMAT_VERSION = 1
COND_LIMIT = 1e8


class FitError(RuntimeError):
    pass


class OutsideGridError(ValueError):
    pass


class ControlMatrixError(RuntimeError):
    pass


# -- basis ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ControlBasis:
    disc: BoundaryDiscretization  # outer nodes
    values: np.ndarray  # (N_b, n_outer, 3)
    centers: np.ndarray
    directions: np.ndarray

    def __len__(self):
        return len(self.values)

    def fluxes(self):
        return np.einsum("n,bnk,nk->b", self.disc.weights, self.values, self.disc.normals)

    def gram(self):
        return np.einsum("n,ank,bnk->ab", self.disc.weights, self.values, self.values)

    def field(self, coefficients):
        """Node values of ``sum_b c_b g_b``; ``coefficients`` may be stacked ``(k, N_b)``."""
        return np.tensordot(coefficients, self.values, axes=(-1, 0))

    def prefix(self, n):
        """The first ``n`` fields; bases built with the same settings are nested."""
        return ControlBasis(self.disc, self.values[:n], self.centers, self.directions[:n])


def _angle(x, c):
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    return np.arccos(np.clip(u @ c, -1.0, 1.0))


def _bump(d, radius, power):
    return np.clip(1.0 - (d / radius) ** 2, 0.0, None) ** power


def bump_centers(domain: DomainGeometry, bump_radius, count, n_candidates=4000):
    """Nested quasi-uniform centres: farthest-point order starting at the cap pole."""
    reach = domain.gamma_cap - bump_radius
    if reach <= 0:
        raise ValueError("bump radius does not fit inside the control cap")
    cand = fibonacci_sphere(n_candidates)
    cand = cand[np.arccos(np.clip(cand[:, 2], -1, 1)) <= reach]
    cand = np.vstack([[0.0, 0.0, 1.0], cand])
    chosen = [0]
    dist = _angle(cand, cand[0])
    while len(chosen) < min(count, len(cand)):
        k = int(np.argmax(dist))
        chosen.append(k)
        dist = np.minimum(dist, _angle(cand, cand[k]))
    return cand[chosen]


def build_control_basis(domain: DomainGeometry, config: SolverConfig, n_basis,
                        bump_radius=1.2, bump_power=8, window_power=8, max_centers=32):
    if n_basis < 6:
        raise ValueError("need at least 6 control fields")
    if n_basis > 3 * max_centers:
        raise ValueError(f"{n_basis} fields exceed the {3 * max_centers} available on the bump-centre grid")
    disc = outer_boundary(domain, config.outer_nodes)
    gamma = disc.select(Patch.GAMMA)
    centers = bump_centers(domain, bump_radius, (n_basis + 2) // 3)
    window = _bump(_angle(disc.points, np.array([0.0, 0.0, 1.0])), domain.gamma_cap, window_power) * gamma
    wsum = np.sum(disc.weights * window)
    values = np.zeros((n_basis, len(disc), 3))
    directions = np.arange(n_basis) % 3
    for b in range(n_basis):
        values[b, :, directions[b]] = _bump(_angle(disc.points, centers[b // 3]), bump_radius, bump_power)
        flux = np.sum(disc.weights * np.einsum("nk,nk->n", values[b], disc.normals))
        values[b] -= (flux / wsum) * window[:, None] * disc.normals
        values[b] *= gamma[:, None]
    basis = ControlBasis(disc, values, centers, directions)
    if np.any(basis.values[:, ~gamma] != 0.0):
        raise AssertionError("control field leaks outside Gamma")
    if np.max(np.abs(basis.fluxes())) > 1e-12 * max(1.0, np.abs(values).max()):
        raise AssertionError("flux projection failed")
    return basis


def basis_traction_table(basis: ControlBasis, system: FluidSystem):
    """``T[b, j]``: force/torque integral on the solid of the control flow with data ``g_b``.

    Returns ``(table, residuals, coefficients)``.
    """
    if len(basis.disc) != len(system.outer):
        raise ValueError("basis and system use different outer discretizations")
    bcs = np.array([system.bc_from_parts(outer_values=v) for v in basis.values])
    C, res = system.solve_coefficients(bcs)
    return system.integrals_of(C), res, C


@dataclass(frozen=True, eq=False)
class Fit:
    coefficients: np.ndarray  # (6, N_b)
    residual: float

    def matrix(self, table):
        return self.coefficients @ table


def fit_residual(B, K):
    """Largest row deviation ``max_j |B_j - K_j|``."""
    return float(np.linalg.norm(np.asarray(B) - K, axis=1).max())


def fit_controls_at_pose(table, K, eps=np.inf):
    """Least-squares coefficients with ``coefficients @ table ~ K``.

    The Frobenius least-squares problem decouples by rows, so it also minimises
    the reported residual, the largest row deviation.
    """
    coef, *_ = np.linalg.lstsq(table.T, K.T, rcond=None)
    coef = coef.T
    residual = fit_residual(coef @ table, K)
    if residual > eps:
        raise FitError(f"fit residual {residual:.3e} exceeds eps={eps:.3e}; enlarge the control basis")
    return Fit(coef, residual)


def traction_density_residual(system: FluidSystem, target_coefficients, control_coefficients):
    """Relative weighted-L2 distance from each target traction to the span of control tractions."""
    w = np.repeat(np.sqrt(system.solid.weights), 3)
    Y = (system._traction @ np.asarray(target_coefficients).T) * w[:, None]
    X = (system._traction @ np.asarray(control_coefficients).T) * w[:, None]
    sol, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return np.linalg.norm(X @ sol - Y, axis=0) / np.linalg.norm(Y, axis=0)


def density_study(shape, pose, domain, config, basis: ControlBasis, sizes=(6, 12, 24, 48)):
    """Fit residuals over nested prefixes of ``basis`` at one pose.

    Besides the 6x6 fit residual, reports the largest relative distance from an
    elementary traction on the solid to the span of the control tractions,
    which keeps decreasing after the 6x6 fit has become exact.
    """
    pt = pose_tables(shape, pose, domain, config, basis)
    normK = float(np.linalg.norm(pt.K))
    rows = {"n_basis": [], "residual": [], "relative": [], "traction_residual": []}
    for n in sizes:
        if n > len(basis):
            raise ValueError(f"basis has only {len(basis)} fields")
        r = fit_controls_at_pose(pt.table[:n], pt.K).residual
        rows["n_basis"].append(n)
        rows["residual"].append(r)
        rows["relative"].append(r / normK)
        rows["traction_residual"].append(float(traction_density_residual(
            pt.system, pt.elementary, pt.basis_coefficients[:n]).max()))
    return rows


def control_cost(g, disc: BoundaryDiscretization):
    """Discrete H^1/2 surrogate on Gamma: L2 norm plus a first-difference seminorm."""
    g = np.asarray(g).reshape(len(disc), 3)
    gamma = disc.select(Patch.GAMMA)
    l2 = np.sqrt(np.sum(disc.weights[gamma] * np.sum(g[gamma] ** 2, axis=1)))
    e = disc.edges[gamma[disc.edges[:, 0]] | gamma[disc.edges[:, 1]]]
    dg = g[e[:, 0]] - g[e[:, 1]]
    dx = np.linalg.norm(disc.points[e[:, 0]] - disc.points[e[:, 1]], axis=1)
    wbar = 0.5 * (disc.weights[e[:, 0]] + disc.weights[e[:, 1]])
    semi = np.sqrt(np.sum(wbar * np.sum(dg**2, axis=1) / dx**2))
    return float(l2 + semi)


# -- pose lattice ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PoseGrid:
    """Rectangular lattice over pose coordinates ``z = (h, theta)``.

    ``dims`` lists which of the six coordinates are gridded; spheres only grid h.
    """
    lows: np.ndarray
    highs: np.ndarray
    counts: tuple
    dims: tuple = (0, 1, 2)
    tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "lows", np.asarray(self.lows, dtype=float))
        object.__setattr__(self, "highs", np.asarray(self.highs, dtype=float))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if not len(self.lows) == len(self.highs) == len(self.counts) == len(self.dims):
            raise ValueError("grid spec lengths disagree")
        if any(c < 1 for c in self.counts) or np.any(self.highs < self.lows):
            raise ValueError("bad grid spec")

    @property
    def axes(self):
        return [np.linspace(lo, hi, c) if c > 1 else np.array([lo])
                for lo, hi, c in zip(self.lows, self.highs, self.counts)]

    @property
    def spacing(self):
        return np.array([(hi - lo) / (c - 1) if c > 1 else np.inf
                         for lo, hi, c in zip(self.lows, self.highs, self.counts)])

    def __len__(self):
        return int(np.prod(self.counts))

    def node_coords(self):
        return np.array(list(itertools.product(*self.axes)))

    def coords(self, pose: Pose):
        z = np.concatenate([pose.h, euler_from_rotation(pose.R)])
        return z[list(self.dims)]

    def node_pose(self, k, template: Pose | None = None):
        z = np.zeros(6)
        if template is not None:
            z[:3] = template.h
            z[3:] = euler_from_rotation(template.R)
        z[list(self.dims)] = self.node_coords()[k]
        return Pose.from_euler(z[:3], z[3:])

    def weights(self, pose: Pose):
        """Corner node indices and multilinear hat weights at ``pose``."""
        z = self.coords(pose)
        per_dim = []
        for zi, lo, hi, c in zip(z, self.lows, self.highs, self.counts):
            if zi < lo - self.tol or zi > hi + self.tol:
                raise OutsideGridError(f"pose coordinate {zi:.6g} outside [{lo:.6g}, {hi:.6g}]")
            if c == 1:
                per_dim.append([(0, 1.0)])
                continue
            s = (min(max(zi, lo), hi) - lo) / (hi - lo) * (c - 1)
            i = min(int(np.floor(s)), c - 2)
            t = s - i
            per_dim.append([(i, 1.0 - t), (i + 1, t)])
        idx, wts = [], []
        for combo in itertools.product(*per_dim):
            w = float(np.prod([c[1] for c in combo]))
            if w == 0.0:
                continue
            idx.append(int(np.ravel_multi_index([c[0] for c in combo], self.counts)))
            wts.append(w)
        return np.array(idx, dtype=int), np.array(wts)

    def contains(self, pose: Pose):
        z = self.coords(pose)
        return bool(np.all(z >= self.lows - self.tol) and np.all(z <= self.highs + self.tol))

    def cell_centers(self):
        mids = [0.5 * (a[1:] + a[:-1]) if len(a) > 1 else a for a in self.axes]
        return np.array(list(itertools.product(*mids)))


# -- the law -------------------------------------------------------------------

@dataclass(frozen=True)
class BoundSet:
    """Box limits on velocities and accelerations (the compact set of admissible (q', q''))."""
    v_max: float = 3.0
    omega_max: float = 3.0
    a_max: float = 15.0
    alpha_max: float = 15.0

    def contains(self, qdot, qddot):
        qdot, qddot = np.asarray(qdot), np.asarray(qddot)
        return bool(np.all(np.abs(qdot[:3]) <= self.v_max) and np.all(np.abs(qdot[3:]) <= self.omega_max)
                    and np.all(np.abs(qddot[:3]) <= self.a_max) and np.all(np.abs(qddot[3:]) <= self.alpha_max))


@dataclass(frozen=True, eq=False)
class PoseTables:
    """Everything the law needs at one pose."""
    pose: Pose
    K: np.ndarray
    table: np.ndarray
    system: FluidSystem | None = None
    elementary: np.ndarray | None = None  # (6, 3 Ns) strengths of V_i
    basis_coefficients: np.ndarray | None = None  # (N_b, 3 Ns) strengths of u^c[g_b]
    asymmetry: float = 0.0
    residual: float = 0.0


def pose_tables(shape, pose, domain, config, basis: ControlBasis, check=True) -> PoseTables:
    system = FluidSystem(shape, pose, domain, config)
    elem = elementary_solutions(shape, pose, domain, config, system=system)
    res = resistance_matrix(elem, check=check)
    table, tres, C = basis_traction_table(basis, system)
    return PoseTables(pose, res.K, table, system, elem.coefficients, C, res.asymmetry,
                      float(max(elem.residuals.max(), tres.max())))


@dataclass(frozen=True, eq=False)
class ControlLaw:
    shape: SolidShape
    domain: DomainGeometry
    config: SolverConfig
    basis: ControlBasis
    grid: PoseGrid
    coefficients: np.ndarray  # (L, 6, N_b)
    K: np.ndarray  # (L, 6, 6)
    tables: np.ndarray  # (L, N_b, 6)
    residuals: np.ndarray  # (L,) largest row deviation of the fit
    conditions: np.ndarray  # (L,) condition numbers of B at the nodes
    eps_bar: float
    bounds: BoundSet = field(default_factory=BoundSet)
    template: Pose | None = None
    solve_residuals: np.ndarray | None = None

    def blend(self, pose: Pose):
        return self.grid.weights(pose)

    def blended_coefficients(self, pose: Pose):
        idx, w = self.blend(pose)
        return np.tensordot(w, self.coefficients[idx], axes=1)

    def fields(self, pose: Pose):
        """Node values ``(6, n_outer, 3)`` of the blended controls at ``pose``."""
        return self.basis.field(self.blended_coefficients(pose))

    def interpolated(self, pose: Pose):
        idx, w = self.blend(pose)
        return (np.tensordot(w, self.K[idx], axes=1), np.tensordot(w, self.tables[idx], axes=1))

    def tables_at(self, pose: Pose, mode="fast"):
        if mode == "fast":
            K, T = self.interpolated(pose)
            return PoseTables(pose, K, T)
        if mode == "full":
            self.grid.weights(pose)  # raises outside the covered region
            return pose_tables(self.shape, pose, self.domain, self.config, self.basis, check=False)
        raise ValueError(f"unknown evaluation mode {mode!r}")


def control_matrix(law: ControlLaw, pose: Pose, mode="fast", tables: PoseTables | None = None):
    """``B[j, i]``: j-th force/torque integral of the flow driven by blended control i."""
    tables = tables or law.tables_at(pose, mode)
    B = (law.blended_coefficients(pose) @ tables.table).T
    cond = np.linalg.cond(B)
    if not cond <= COND_LIMIT:
        raise ControlMatrixError(f"control matrix condition {cond:.3e} above {COND_LIMIT:.0e}: eps_bar too large")
    return B


@dataclass(frozen=True, eq=False)
class Gain:
    mu: np.ndarray
    g: np.ndarray  # node values on the outer boundary
    B: np.ndarray
    K: np.ndarray
    tables: PoseTables


def mu(law: ControlLaw, pose: Pose, qdot, qddot, mode="fast", tables: PoseTables | None = None) -> Gain:
    """Feedback gain ``mu = -B^{-1} (d/dt(M q') + K q')`` and the control ``g = sum mu_i gbar_i``."""
    tables = tables or law.tables_at(pose, mode)
    B = control_matrix(law, pose, mode, tables)
    qdot = np.asarray(qdot, dtype=float)
    rate = momentum_rate(law.shape, pose, qdot[3:], qddot)
    m = -np.linalg.solve(B, rate + tables.K @ qdot)
    g = np.tensordot(m, law.fields(pose), axes=1)
    return Gain(m, g, B, tables.K, tables)


def build_control_law(shape: SolidShape, domain: DomainGeometry, config: SolverConfig,
                      basis: ControlBasis, grid: PoseGrid, eps=np.inf, bounds: BoundSet = BoundSet(),
                      template: Pose | None = None, progress=None) -> ControlLaw:
    L = len(grid)
    nb = len(basis)
    coefs = np.zeros((L, 6, nb))
    Ks = np.zeros((L, 6, 6))
    tables = np.zeros((L, nb, 6))
    residuals = np.zeros(L)
    conds = np.zeros(L)
    solve_res = np.zeros(L)
    for k in range(L):
        pose = grid.node_pose(k, template)
        pt = pose_tables(shape, pose, domain, config, basis)
        try:
            fit = fit_controls_at_pose(pt.table, pt.K, eps)
        except FitError as exc:
            raise FitError(f"grid node {k} at h={pose.h}: {exc}") from exc
        coefs[k], Ks[k], tables[k] = fit.coefficients, pt.K, pt.table
        residuals[k] = fit.residual
        conds[k] = np.linalg.cond(fit.matrix(pt.table))
        solve_res[k] = pt.residual
        log.info("node %d/%d h=%s fit residual %.3e cond %.3e", k + 1, L, np.round(pose.h, 4), fit.residual, conds[k])
        if progress:
            progress(k, L)
    eps_bar = select_eps_bar(eps, Ks, coefs, tables)
    return ControlLaw(shape, domain, config, basis, grid, coefs, Ks, tables, residuals, conds,
                      eps_bar, bounds, template, solve_res)


def node_errors(Ks, coefs, tables):
    """Spectral norms ``|B_l - K_l|`` at the nodes."""
    return np.array([np.linalg.norm((A @ T).T - K, 2) for K, A, T in zip(Ks, coefs, tables)])


def select_eps_bar(eps, Ks, coefs, tables):
    """Tolerance certified at every node: ``|B_l - K_l| <= eps_bar < min-eig(K_l) / 2``.

    Halving the requested tolerance and refitting cannot change a least-squares
    fit, so a node that misses the invertibility margin is reported directly.
    An infinite request certifies the largest node error.
    """
    errors = node_errors(Ks, coefs, tables)
    margins = np.array([np.linalg.eigvalsh(K).min() / 2 for K in Ks])
    if np.any(errors >= margins):
        bad = int(np.argmax(errors - margins))
        raise FitError(f"grid node {bad}: |B-K| = {errors[bad]:.3e} leaves no invertibility margin "
                       f"(min-eig(K)/2 = {margins[bad]:.3e}); enlarge the control basis")
    eps_bar = float(eps) if np.isfinite(eps) else float(errors.max())
    while eps_bar >= margins.min():
        eps_bar /= 2.0
    eps_bar = max(eps_bar, float(errors.max()))
    return eps_bar


# -- archive -------------------------------------------------------------------

def save_law(law: ControlLaw, path, extra=None):
    meta = {
        "version": LAW_FORMAT_VERSION,
        "shape": {"kind": law.shape.kind, "semi_axes": law.shape.semi_axes.tolist(), "mass": law.shape.mass,
                  "inertia0": law.shape.inertia0.tolist()},
        "domain": asdict(law.domain),
        "solver": asdict(law.config),
        "grid": {"lows": law.grid.lows.tolist(), "highs": law.grid.highs.tolist(),
                 "counts": list(law.grid.counts), "dims": list(law.grid.dims)},
        "bounds": asdict(law.bounds),
        "eps_bar": law.eps_bar,
        "extra": extra or {},
    }
    template = np.zeros((0,)) if law.template is None else np.concatenate([law.template.h, law.template.R.ravel()])
    np.savez_compressed(
        path, meta=np.array(json.dumps(meta)), basis_values=law.basis.values, basis_centers=law.basis.centers,
        basis_directions=law.basis.directions, coefficients=law.coefficients, K=law.K, tables=law.tables,
        residuals=law.residuals, conditions=law.conditions, template=template,
        solve_residuals=law.solve_residuals if law.solve_residuals is not None else np.zeros(0),
    )


def load_law(path) -> ControlLaw:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != LAW_FORMAT_VERSION:
            raise ValueError(f"unsupported law archive version {meta['version']}")
        s = meta["shape"]
        shape = SolidShape(s["kind"], s["semi_axes"], s["mass"], s["inertia0"])
        domain = DomainGeometry(**meta["domain"])
        config = SolverConfig(**meta["solver"])
        disc = outer_boundary(domain, config.outer_nodes)
        basis = ControlBasis(disc, data["basis_values"], data["basis_centers"], data["basis_directions"])
        g = meta["grid"]
        grid = PoseGrid(g["lows"], g["highs"], g["counts"], tuple(g["dims"]))
        t = data["template"]
        template = Pose(t[:3], t[3:].reshape(3, 3)) if len(t) else None
        sr = data["solve_residuals"]
        return ControlLaw(shape, domain, config, basis, grid, data["coefficients"], data["K"], data["tables"],
                          data["residuals"], data["conditions"], meta["eps_bar"], BoundSet(**meta["bounds"]),
                          template, sr if len(sr) else None)
