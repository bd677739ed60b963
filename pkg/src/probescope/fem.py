"""Complex P1 finite elements for the Helmholtz boundary-value problems.

Sign conventions.  ``nu`` is the unit normal pointing out of the obstacle.
The discrete operator on a region is

    K = A - k^2 M - B_lambda

with ``A`` the stiffness, ``M`` the mass and ``B_lambda`` the
lambda-weighted boundary mass on the obstacle interface.  A solution of
``dw/dnu + lambda w = g`` on the interface with Dirichlet data on the outer
boundary satisfies, on every free row, ``(K w)_i = -int g phi_i dS``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import hankel1

from .errors import EigenvalueProximityWarning, SolverError
from .geometry import ImpedanceSpec
from .mesh import EXTERIOR, INTERFACE, OUTER, TriMesh, exterior_submesh
from .quadrature import edge_points, gauss_segment

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


# ---------------------------------------------------------------------------
# fundamental solution
# ---------------------------------------------------------------------------

def hankel_G(k: float, r):
    """Fundamental solution G_k(r): (i/4) H0^(1)(kr) for k > 0, -log(r)/(2 pi) for k = 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("hankel_G needs r > 0")
    if k == 0:
        return -np.log(r) / (2 * math.pi) + 0j
    return 0.25j * hankel1(0, k * r)


def hankel_dG(k: float, r):
    """Radial derivative dG_k/dr."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("hankel_dG needs r > 0")
    if k == 0:
        return -1.0 / (2 * math.pi * r) + 0j
    return -0.25j * k * hankel1(1, k * r)


def G_and_grad(k: float, y: np.ndarray, x) -> tuple[np.ndarray, np.ndarray]:
    """G_k(y - x) and its gradient in y; y is (Q, 2)."""
    d = np.atleast_2d(y) - np.asarray(x, dtype=float)
    r = np.hypot(d[:, 0], d[:, 1])
    g = hankel_G(k, r)
    dg = hankel_dG(k, r)
    return g, (dg / r)[:, None] * d


# ---------------------------------------------------------------------------
# functions and forms
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FeFunction:
    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError(f"{self.values.shape[0]} coefficients for {self.mesh.n_nodes} nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite coefficients")

    def __call__(self, pts) -> np.ndarray:
        """Evaluate at points by barycentric interpolation (nan outside the mesh)."""
        pts = np.atleast_2d(pts)
        tri = self.mesh.locate(pts)
        out = np.full(len(pts), np.nan + 0j)
        ok = tri >= 0
        t = self.mesh.triangles[tri[ok]]
        p = self.mesh.nodes[t]
        lam = _barycentric(p, pts[ok])
        out[ok] = np.sum(lam * self.values[t], axis=1)
        return out

    def __add__(self, other: "FeFunction") -> "FeFunction":
        return FeFunction(self.mesh, self.values + other.values)

    def __sub__(self, other: "FeFunction") -> "FeFunction":
        return FeFunction(self.mesh, self.values - other.values)

    def restrict(self, sub: TriMesh) -> "FeFunction":
        return FeFunction(sub, self.values[sub.parent_nodes])

    def to_csv(self, path) -> None:
        rows = ["node,x,y,re,im"]
        for i, ((x, y), v) in enumerate(zip(self.mesh.nodes, self.values)):
            rows.append(f"{i},{x:.17g},{y:.17g},{v.real:.17g},{v.imag:.17g}")
        Path(path).write_text("\n".join(rows) + "\n")


def _barycentric(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    v0, v1, v2 = b - a, c - a, x - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    return np.c_[1 - l1 - l2, l1, l2]


def interpolate(mesh: TriMesh, func: Callable[[np.ndarray], np.ndarray]) -> FeFunction:
    return FeFunction(mesh, func(mesh.nodes))


def _triangle_mask(mesh: TriMesh, region) -> np.ndarray:
    if region in (None, "full"):
        return np.ones(mesh.n_triangles, dtype=bool)
    if region == "exterior":
        return mesh.triangle_tags == EXTERIOR
    if region == "interior":
        return mesh.triangle_tags != EXTERIOR
    if isinstance(region, tuple) and region[0] == "interior":
        return mesh.triangle_tags == region[1] + 1
    raise ValueError(f"unknown region {region!r}")


def stiffness_matrix(mesh: TriMesh, region=None) -> sp.csr_matrix:
    t = mesh.triangles[_triangle_mask(mesh, region)]
    p = mesh.nodes[t]
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    ke = (bx[:, :, None] * bx[:, None, :] + by[:, :, None] * by[:, None, :]) / (4 * area)[:, None, None]
    return _scatter(mesh.n_nodes, t, ke)


def mass_matrix(mesh: TriMesh, region=None) -> sp.csr_matrix:
    t = mesh.triangles[_triangle_mask(mesh, region)]
    area = mesh.areas[_triangle_mask(mesh, region)]
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh.n_nodes, t, area[:, None, None] * ref[None])


def _scatter(n: int, t: np.ndarray, ke: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(t, t.shape[1], axis=1).ravel()
    cols = np.tile(t, (1, t.shape[1])).ravel()
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def boundary_mass(mesh: TriMesh, tag=INTERFACE, weight=None, order: int = 3) -> sp.csr_matrix:
    """int_{tag} weight phi_i phi_j dS by Gauss quadrature on each edge.

    ``weight`` is None (1), a per-component complex array (interface tags),
    or a callable of the quadrature points.
    """
    e = mesh.tagged_edges(tag)
    n = mesh.n_nodes
    if not len(e):
        return sp.csr_matrix((n, n), dtype=complex)
    a, b = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    ln = np.hypot(*(b - a).T)
    s, w = gauss_segment(order)
    if weight is None:
        wq = np.ones((len(e), order))
    elif callable(weight):
        pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        wq = np.asarray(weight(pts.reshape(-1, 2))).reshape(len(e), order)
    else:
        comp = mesh.edge_tags[mesh._edge_mask(tag)] - 1
        wq = np.repeat(np.asarray(weight)[comp][:, None], order, axis=1)
    phi = np.stack([1 - s, s])  # (2, order)
    ke = np.einsum("eq,iq,jq,q->eij", wq * ln[:, None], phi, phi, w)
    return _scatter(n, e, ke.astype(complex))


def edge_load(mesh: TriMesh, g: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray], tag=INTERFACE,
              order: int = 3, singular_point=None) -> np.ndarray:
    """Load vector int_{tag} g phi_i dS.

    ``g(points, normals, component)`` returns the boundary datum; normals are
    the unit normals pointing out of the obstacle (right of each edge).
    Quadrature is refined dyadically towards ``singular_point`` if given.
    """
    e = mesh.tagged_edges(tag)
    comp = mesh.edge_tags[mesh._edge_mask(tag)] - 1
    out = np.zeros(mesh.n_nodes, dtype=complex)
    if not len(e):
        return out
    a, b = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    pts, wts, eid, s = edge_points(a, b, n=order, center=singular_point)
    t = b - a
    nrm = np.c_[t[:, 1], -t[:, 0]] / np.hypot(*t.T)[:, None]
    vals = np.asarray(g(pts, nrm[eid], comp[eid]), dtype=complex) * wts
    np.add.at(out, e[eid, 0], vals * (1 - s))
    np.add.at(out, e[eid, 1], vals * s)
    return out


def edge_normals(mesh: TriMesh, tag=INTERFACE) -> np.ndarray:
    e = mesh.tagged_edges(tag)
    t = mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]]
    return np.c_[t[:, 1], -t[:, 0]] / np.hypot(*t.T)[:, None]


@dataclass(eq=False)
class AssembledForms:
    A: sp.csr_matrix
    M: sp.csr_matrix
    B_lambda: sp.csr_matrix
    B_one: sp.csr_matrix
    k: float

    @property
    def K(self) -> sp.csr_matrix:
        return (self.A - self.k**2 * self.M - self.B_lambda).tocsr()

    def B_tag(self, mesh: TriMesh, tag, weight=None) -> sp.csr_matrix:
        return boundary_mass(mesh, tag, weight)


def assemble(mesh: TriMesh, region: str = "full", impedance: Optional[ImpedanceSpec] = None,
             k: float = 0.0) -> AssembledForms:
    """Forms on the full mesh or on the exterior submesh.

    For ``region='exterior'`` the matrices live on the exterior submesh
    numbering (a prefix of the parent's); the lambda-weighted interface mass
    is included.  The full region carries no Robin term.
    """
    if k < 0:
        raise ValueError("wavenumber must be non-negative")
    if region == "exterior":
        sub = exterior_submesh(mesh) if mesh.parent_nodes is None else mesh
        has_if = sub.has_tag(INTERFACE)
        lam = impedance.values(sub.n_components) if (impedance is not None and has_if) else None
        n = sub.n_nodes
        B_l = boundary_mass(sub, INTERFACE, lam) if lam is not None else sp.csr_matrix((n, n), dtype=complex)
        B_1 = boundary_mass(sub, INTERFACE) if has_if else sp.csr_matrix((n, n), dtype=complex)
        return AssembledForms(stiffness_matrix(sub), mass_matrix(sub), B_l, B_1, k)
    if region == "full":
        n = mesh.n_nodes
        zero = sp.csr_matrix((n, n), dtype=complex)
        B_1 = boundary_mass(mesh, INTERFACE) if mesh.has_tag(INTERFACE) else zero
        return AssembledForms(stiffness_matrix(mesh), mass_matrix(mesh), zero, B_1, k)
    raise ValueError(f"unknown region {region!r}")


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

@dataclass
class HelmholtzProblem:
    k: float
    dirichlet_data: np.ndarray
    robin_load: Optional[np.ndarray] = None
    impedance: Optional[ImpedanceSpec] = None

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("wavenumber must be non-negative")
        self.dirichlet_data = np.asarray(self.dirichlet_data, dtype=complex)
        if not np.all(np.isfinite(self.dirichlet_data)):
            raise ValueError("non-finite Dirichlet data")


class HelmholtzOperator:
    """Factorized Dirichlet/Robin Helmholtz operator on one region of a mesh.

    The LU factorization is computed once and reused for every right-hand
    side; ``solve`` may be called concurrently.
    """

    def __init__(self, mesh: TriMesh, region: str = "full", impedance: Optional[ImpedanceSpec] = None,
                 k: float = 0.0, check_eigenvalue: bool = True):
        self.parent = mesh
        self.mesh = exterior_submesh(mesh) if region == "exterior" and mesh.parent_nodes is None else mesh
        self.region = region
        self.k = float(k)
        self.impedance = impedance
        self.forms = assemble(mesh, region, impedance, k)
        self.K = self.forms.K.astype(complex).tocsr()
        nb = self.mesh.n_outer
        self.nb = nb
        self.K_ff = self.K[nb:, nb:].tocsc()
        self.K_fb = self.K[nb:, :nb].tocsr()
        self.K_bf = self.K[:nb, nb:].tocsr()
        self.K_bb = self.K[:nb, :nb].tocsr()
        try:
            self.lu = spla.splu(self.K_ff, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"singular Helmholtz system: {exc}", condition=math.inf) from exc
        self.nearest_eigenvalue = None
        if check_eigenvalue and region == "full" and self.k > 0:
            self.nearest_eigenvalue = self._nearest_dirichlet_eigenvalue()
            mu = self.nearest_eigenvalue
            if abs(mu - self.k**2) <= 0.01 * abs(mu):
                msg = (f"k^2={self.k**2:.6g} lies within 1% of the discrete Dirichlet eigenvalue {mu:.6g}")
                logger.warning(msg)
                warnings.warn(msg, EigenvalueProximityWarning, stacklevel=2)

    def _nearest_dirichlet_eigenvalue(self, iters: int = 12) -> float:
        # inverse iteration with the existing factorization (shift = k^2)
        M = self.forms.M[self.nb:, self.nb:]
        rng = np.random.default_rng(0)
        x = rng.standard_normal(M.shape[0]) + 0j
        nu = 0.0
        for _ in range(iters):
            y = self.lu.solve(M @ x)
            nu = np.vdot(x, M @ y) / np.vdot(x, M @ x)
            x = y / np.sqrt(abs(np.vdot(y, M @ y)))
        return float(self.k**2 + (1.0 / nu).real)

    def condition_estimate(self) -> float:
        n = self.K_ff.shape[0]
        inv = spla.LinearOperator((n, n), matvec=self.lu.solve, rmatvec=lambda x: self.lu.solve(x, trans="H"),
                                  dtype=complex)
        return float(spla.onenormest(self.K_ff) * spla.onenormest(inv))

    def solve(self, dirichlet: np.ndarray, robin_load: Optional[np.ndarray] = None) -> FeFunction:
        """Solve with outer-boundary values ``dirichlet`` and interface load int g phi_i."""
        f = np.asarray(dirichlet, dtype=complex)
        if f.shape[-1] != self.nb:
            raise ValueError(f"Dirichlet data has {f.shape[-1]} values for {self.nb} boundary nodes")
        rhs = -(self.K_fb @ f)
        if robin_load is not None:
            rhs = rhs - np.asarray(robin_load, dtype=complex)[self.nb:self.mesh.n_nodes]
        u_f = self.lu.solve(rhs)
        scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
        res = np.linalg.norm(self.K_ff @ u_f - rhs) / scale
        if res > RESIDUAL_TOL:
            # one step of iterative refinement before giving up
            u_f = u_f + self.lu.solve(rhs - self.K_ff @ u_f)
            res = np.linalg.norm(self.K_ff @ u_f - rhs) / scale
            if res > RESIDUAL_TOL:
                raise SolverError(f"relative residual {res:.2e} exceeds {RESIDUAL_TOL}", self.condition_estimate())
        return FeFunction(self.mesh, np.r_[f, u_f])

    def solve_many(self, dirichlet: np.ndarray) -> np.ndarray:
        """Columns of ``dirichlet`` (nb, m) -> solution coefficients (n, m)."""
        F = np.asarray(dirichlet, dtype=complex)
        U_f = self.lu.solve(np.asarray(-(self.K_fb @ F)))
        return np.vstack([F, U_f])

    def neumann_functional(self, u: FeFunction) -> np.ndarray:
        """Row block (K u) on outer nodes: the weak DtN functional <Lambda f, phi_i>."""
        return self.K_bb @ u.values[:self.nb] + self.K_bf @ u.values[self.nb:]


def solve_obstacle_problem(mesh: TriMesh, problem: HelmholtzProblem) -> FeFunction:
    """Weak solution of (Delta + k^2) u = 0 off D, du/dnu + lambda u = g on dD, u = f on dOmega.

    ``problem.robin_load`` is the vector int g phi_i over the interface (None
    for the homogeneous impedance condition).
    """
    op = HelmholtzOperator(mesh, "exterior", problem.impedance, problem.k)
    return op.solve(problem.dirichlet_data, problem.robin_load)


def solve_background(mesh: TriMesh, k: float, f: np.ndarray) -> FeFunction:
    """(Delta + k^2) v = 0 in Omega, v = f on the outer boundary (obstacle ignored)."""
    return HelmholtzOperator(mesh, "full", None, k).solve(f)


@dataclass(frozen=True)
class Energies:
    dirichlet: float
    mass: float
    boundary: float


def energy(u: FeFunction, region=None, tag=INTERFACE) -> Energies:
    """(int |grad u|^2, int |u|^2, int_tag |u|^2 dS), exact for P1 functions."""
    mesh = u.mesh
    A = stiffness_matrix(mesh, region)
    M = mass_matrix(mesh, region)
    x = u.values
    bd = 0.0
    if mesh.has_tag(tag):
        B = boundary_mass(mesh, tag)
        bd = float(np.vdot(x, B @ x).real)
    return Energies(float(np.vdot(x, A @ x).real), float(np.vdot(x, M @ x).real), bd)


def write_solution_csv(u: FeFunction, path) -> None:
    u.to_csv(path)


def outer_trace(mesh: TriMesh, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    return np.asarray(func(mesh.nodes[:mesh.n_outer]), dtype=complex)


__all__ = [
    "AssembledForms", "Energies", "FeFunction", "G_and_grad", "HelmholtzOperator", "HelmholtzProblem",
    "assemble", "boundary_mass", "edge_load", "edge_normals", "energy", "hankel_G", "hankel_dG",
    "interpolate", "mass_matrix", "outer_trace", "solve_background", "solve_obstacle_problem",
    "stiffness_matrix", "OUTER", "INTERFACE",
]
