"""Poincare and trace constants, smallness conditions and energy diagnostics.

Constants come from generalized eigenproblems on the assembled P1 forms:

* zero-trace Poincare constant on the exterior region (Dirichlet on the outer
  boundary, natural on the obstacle boundary): ``C0 = 1 / sqrt(min eig)``;
* mean-value Poincare constant of an obstacle component: ``1 / sqrt(mu_2)``
  with ``mu_2`` the first nonzero Neumann eigenvalue;
* trace constant ``K``: the largest ``mu`` of ``B u = mu (eps A + M / eps) u``
  maximized over a sample of ``eps``.

Everything else in this module evaluates both sides of the energy
inequalities on computed fields so they can be audited.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dtn import DtnPair
from .errors import ConvergenceError
from .fem import FeFunction, G_and_grad, boundary_mass, mass_matrix, stiffness_matrix
from .geometry import ImpedanceSpec, ObstacleSpec, Shape
from .mesh import INTERFACE, OUTER, TriMesh, exterior_submesh, interior_submesh, mesh_domain, refine_uniform
from .probe import NeedleSequence, ProbeContext, reflected_field, reflected_solution
from .quadrature import adaptive_triangle_points, edge_points, triangle_points

logger = logging.getLogger(__name__)

DENSE_LIMIT = 3000
EIG_TOL = 1e-10
EPS_SAMPLE = tuple(np.round(np.arange(1, 10) / 10, 1))
EPS_GRID = tuple(np.arange(1, 100) / 100)


# ---------------------------------------------------------------------------
# generalized eigenvalues
# ---------------------------------------------------------------------------

def _extreme_eig(A: sp.spmatrix, M: sp.spmatrix, which: str, count: int = 1) -> np.ndarray:
    """Smallest (``which='SA'``) or largest (``'LA'``) eigenvalues of A u = mu M u, ascending.

    A and M are real symmetric with M positive definite.  Dense LAPACK below
    ``DENSE_LIMIT`` unknowns, ARPACK (shift-invert for the smallest) above.
    """
    n = A.shape[0]
    if n < DENSE_LIMIT:
        lo, hi = (0, count - 1) if which == "SA" else (n - count, n - 1)
        return sla.eigh(A.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[lo, hi])
    try:
        if which == "SA":
            vals = spla.eigsh(A.tocsc(), k=count, M=M.tocsc(), sigma=-1e-3, which="LM", tol=EIG_TOL,
                              return_eigenvectors=False)
        else:
            vals = spla.eigsh(A.tocsc(), k=count, M=M.tocsc(), which="LA", tol=EIG_TOL,
                              return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"eigensolver did not converge: {exc}") from exc
    return np.sort(vals)


def _real_forms(mesh: TriMesh):
    return stiffness_matrix(mesh).real.tocsr(), mass_matrix(mesh).real.tocsr()


def estimate_poincare_C0(mesh: TriMesh) -> float:
    """Zero-trace Poincare constant of the exterior region.

    ``mesh`` may be a parent mesh with obstacle (its exterior part is used)
    or an obstacle-free mesh (then this is the Dirichlet constant of the
    whole domain).
    """
    sub = exterior_submesh(mesh) if mesh.has_tag(INTERFACE) and mesh.parent_nodes is None else mesh
    A, M = _real_forms(sub)
    nb = sub.n_outer
    lam = _extreme_eig(A[nb:, nb:], M[nb:, nb:], "SA")[0]
    return float(1.0 / math.sqrt(lam))


def estimate_poincare_mean(mesh: TriMesh) -> float:
    """Mean-value Poincare constant 1/sqrt(mu_2) on the whole of ``mesh`` (Neumann everywhere)."""
    A, M = _real_forms(mesh)
    vals = _extreme_eig(A, M, "SA", count=2)
    if vals[0] > 1e-8 * max(vals[1], 1.0):
        raise ConvergenceError(f"first Neumann eigenvalue {vals[0]:.3e} is not zero; mesh disconnected?")
    return float(1.0 / math.sqrt(vals[1]))


def trace_constant_profile(mesh: TriMesh, tag, eps: Sequence[float] = EPS_SAMPLE) -> np.ndarray:
    """Largest mu of B u = mu (eps A + M / eps) u for each eps."""
    A, M = _real_forms(mesh)
    B = boundary_mass(mesh, tag).real.tocsr()
    out = []
    for e in eps:
        Q = (e * A + M / e).tocsr()
        out.append(_extreme_eig(B, Q, "LA")[0])
    return np.array(out)


def estimate_trace_constant(mesh: TriMesh, tag=INTERFACE, eps: Sequence[float] = EPS_SAMPLE) -> float:
    """K with int_tag |u|^2 <= K (eps int |grad u|^2 + int |u|^2 / eps) for every sampled eps."""
    return float(np.max(trace_constant_profile(mesh, tag, eps)))


# ---------------------------------------------------------------------------
# constants report and smallness conditions
# ---------------------------------------------------------------------------

@dataclass
class ConditionsReport:
    k: float
    L: float
    eps_grid: list
    holds_exterior: bool
    holds_obstacle: bool
    holds_reflected: bool
    eps_exterior: list
    eps_obstacle: list
    eps_reflected: list
    eps_star_exterior: float
    eps_star_obstacle: float
    common_eps: list
    max_L: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("eps_grid")
        return d


@dataclass
class ConstantsReport:
    C0: float
    C_U: list
    K_ext: float
    K_D: float
    L: float
    k: float
    epsilon_star: float = math.nan
    conditions: Optional[ConditionsReport] = None
    h: float = math.nan

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "conditions"}
        d["conditions"] = None if self.conditions is None else self.conditions.to_dict()
        return d


def _lhs_exterior(c: ConstantsReport, k, L, eps):
    return 2 * c.K_ext * L * eps + (k**2 + 2 * c.K_ext * L / eps) * c.C0**2


def _lhs_obstacle(c: ConstantsReport, k, L, eps):
    cu = np.asarray(c.C_U, dtype=float)[:, None]
    return np.min(1 - 2 * c.K_D * L * eps - 2 * (k**2 + 2 * c.K_D * L / eps) * cu**2 * 4.0, axis=0)


def _lhs_reflected(c: ConstantsReport, k, L, eps):
    cu = np.asarray(c.C_U, dtype=float)[:, None]
    return np.min(1 - c.K_D * L * eps - 2 * (k**2 + c.K_D * L / eps) * cu**2 * 4.0, axis=0)


def conditions_at(constants: ConstantsReport, k: float, L: float, eps) -> dict:
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    return {"exterior": _lhs_exterior(constants, k, L, eps) <= 1.0,
            "obstacle": _lhs_obstacle(constants, k, L, eps) > 0.0,
            "reflected": _lhs_reflected(constants, k, L, eps) > 0.0}


def max_admissible_L(constants: ConstantsReport, k: float, eps: Sequence[float] = EPS_GRID,
                     rtol: float = 1e-10) -> float:
    """Largest L for which some grid eps satisfies the exterior and obstacle conditions (bisection; 0 if none)."""
    def ok(L):
        c = conditions_at(constants, k, L, eps)
        return bool(np.any(c["exterior"] & c["obstacle"]))

    if not ok(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while ok(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            return math.inf
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def check_smallness(constants: ConstantsReport, k: Optional[float] = None, L: Optional[float] = None,
                    eps: Sequence[float] = EPS_GRID) -> ConditionsReport:
    """Scan eps on the grid for the three smallness conditions; report satisfiable eps and the max admissible L.

    ``exterior``: 2 K_ext L eps + (k^2 + 2 K_ext L / eps) C0^2 <= 1;
    ``obstacle``: min_j 1 - 2 K_D L eps - 8 (k^2 + 2 K_D L / eps) C_U[j]^2 > 0;
    ``reflected``: min_j 1 - K_D L eps - 8 (k^2 + K_D L / eps) C_U[j]^2 > 0.
    """
    k = constants.k if k is None else float(k)
    L = constants.L if L is None else float(L)
    e = np.asarray(eps, dtype=float)
    c = conditions_at(constants, k, L, e)
    l27, l28 = _lhs_exterior(constants, k, L, e), _lhs_obstacle(constants, k, L, e)
    both = c["exterior"] & c["obstacle"]
    return ConditionsReport(
        k=k, L=L, eps_grid=e.tolist(),
        holds_exterior=bool(c["exterior"].any()), holds_obstacle=bool(c["obstacle"].any()), holds_reflected=bool(c["reflected"].any()),
        eps_exterior=e[c["exterior"]].tolist(), eps_obstacle=e[c["obstacle"]].tolist(), eps_reflected=e[c["reflected"]].tolist(),
        eps_star_exterior=float(e[np.argmin(l27)]), eps_star_obstacle=float(e[np.argmax(l28)]),
        common_eps=e[both].tolist(), max_L=max_admissible_L(constants, k, eps))


def estimate_constants(mesh: TriMesh, impedance: ImpedanceSpec, k: float,
                       eps: Sequence[float] = EPS_SAMPLE) -> ConstantsReport:
    """All constants of the smallness conditions on one mesh, plus the conditions themselves."""
    ext = exterior_submesh(mesh)
    C0 = estimate_poincare_C0(mesh)
    C_U = [estimate_poincare_mean(interior_submesh(mesh, j)) for j in range(mesh.n_components)]
    K_ext = estimate_trace_constant(ext, INTERFACE, eps)
    K_D = estimate_trace_constant(interior_submesh(mesh), INTERFACE, eps)
    rep = ConstantsReport(C0=C0, C_U=C_U, K_ext=K_ext, K_D=K_D, L=impedance.bound, k=float(k),
                          h=mesh.quality().h_max)
    rep.conditions = check_smallness(rep)
    common = rep.conditions.common_eps
    rep.epsilon_star = float(common[len(common) // 2]) if common else rep.conditions.eps_star_exterior
    return rep


# ---------------------------------------------------------------------------
# audits of the constant-defining inequalities
# ---------------------------------------------------------------------------

def random_fe_functions(mesh: TriMesh, n: int, rng: np.random.Generator, zero_outer: bool = False) -> np.ndarray:
    """(n_nodes, n) complex test functions: a mix of nodal noise and random smooth plane-wave sums."""
    P = mesh.nodes
    out = np.empty((mesh.n_nodes, n), dtype=complex)
    for i in range(n):
        kind = i % 3
        if kind == 0:
            v = rng.standard_normal(len(P)) + 1j * rng.standard_normal(len(P))
        else:
            freq = (1.0 if kind == 1 else 8.0) * rng.standard_normal((4, 2))
            amp = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            v = np.exp(1j * P @ freq.T) @ amp + (rng.standard_normal() if kind == 1 else 0.0)
        if zero_outer:
            v[:mesh.n_outer] = 0.0
        out[:, i] = v
    return out


def _quad(X, Mat, Y=None):
    Y = X if Y is None else Y
    return np.real(np.sum(np.conj(X) * (Mat @ Y), axis=0))


@dataclass
class InequalityAudit:
    name: str
    n_samples: int
    max_ratio: float
    passed: bool


def audit_constants(mesh: TriMesh, constants: ConstantsReport, n: int = 100, seed: int = 0,
                    eps: Sequence[float] = EPS_SAMPLE) -> list[InequalityAudit]:
    """Evaluate each constant-defining inequality on ``n`` random FE functions.

    ``max_ratio`` is the largest observed left side / right side; the audit
    passes when it does not exceed 1 (plus rounding).
    """
    rng = np.random.default_rng(seed)
    out = []
    tol = 1 + 1e-9
    ext = exterior_submesh(mesh)
    A, M = _real_forms(ext)
    X = random_fe_functions(ext, n, rng, zero_outer=True)
    r = _quad(X, M) / (constants.C0**2 * _quad(X, A))
    out.append(InequalityAudit("poincare_zero_trace", n, float(r.max()), bool(r.max() <= tol)))
    for j, cu in enumerate(constants.C_U):
        sub = interior_submesh(mesh, j)
        A, M = _real_forms(sub)
        X = random_fe_functions(sub, n, rng)
        area = sub.area
        mean = np.sum(M @ X, axis=0) / area
        Y = X - mean[None, :]
        r = _quad(Y, M) / (cu**2 * 4.0 * _quad(X, A))
        out.append(InequalityAudit(f"poincare_mean[{j}]", n, float(r.max()), bool(r.max() <= tol)))
    for name, sub, K in (("trace_exterior", ext, constants.K_ext), ("trace_obstacle", interior_submesh(mesh),
                                                                    constants.K_D)):
        A, M = _real_forms(sub)
        B = boundary_mass(sub, INTERFACE).real.tocsr()
        X = random_fe_functions(sub, n, rng)
        ratios = [_quad(X, B) / (K * (e * _quad(X, A) + _quad(X, M) / e)) for e in eps]
        m = float(np.max(ratios))
        out.append(InequalityAudit(name, n, m, bool(m <= tol)))
    return out


def refinement_stability(domain: Shape, obstacle: ObstacleSpec, k: float, h: float = 0.04,
                         eps: Sequence[float] = EPS_SAMPLE) -> dict:
    """Constants on a mesh and on its uniform refinement; relative changes per constant."""
    m1 = mesh_domain(domain, obstacle, h)
    m2 = refine_uniform(m1)
    c1 = estimate_constants(m1, obstacle.impedance, k, eps)
    c2 = estimate_constants(m2, obstacle.impedance, k, eps)
    rel = {"C0": abs(c2.C0 - c1.C0) / c1.C0, "K_ext": abs(c2.K_ext - c1.K_ext) / c1.K_ext,
           "K_D": abs(c2.K_D - c1.K_D) / c1.K_D}
    for j, (a, b) in enumerate(zip(c1.C_U, c2.C_U)):
        rel[f"C_U[{j}]"] = abs(b - a) / a
    return {"coarse": c1.to_dict(), "fine": c2.to_dict(), "rel_change": rel,
            "max_rel_change": max(rel.values())}


# ---------------------------------------------------------------------------
# basic-inequality chain on computed fields
# ---------------------------------------------------------------------------

@dataclass
class ChainRecord:
    """``checks[name] = (left, right)``; each bound requires right <= left."""

    gap: float
    checks: dict
    passed: bool


def chain_audit(pair: DtnPair, constants: ConstantsReport, F: np.ndarray, eps: Optional[Sequence[float]] = None
                ) -> list[ChainRecord]:
    """Right sides of the lower bounds for Re gap built from trace, Poincare and
    mean-value constants; each must not exceed the computed Re gap.

    Check names, suffixed by ``@eps``: ``trace`` (trace inequality applied to
    the impedance terms), ``poincare`` (plus the zero-trace Poincare bound on
    the exterior), ``reduced`` (exterior gradient term dropped), ``mean_value``
    (mean-value Poincare on each component with A_j = D_j; needs the
    smallness conditions, so only on the report's ``common_eps``) and
    ``obstacle_energy`` (trace bound for the obstacle energy with Re lambda,
    compared against that energy instead of the gap).
    """
    mesh = pair.mesh
    k, L = constants.k, constants.L
    eps_all = np.asarray(EPS_SAMPLE if eps is None else eps, dtype=float)
    adm = np.asarray(constants.conditions.common_eps if constants.conditions else [], dtype=float)
    A_ext = stiffness_matrix(exterior_submesh(mesh)).real
    M_ext = mass_matrix(exterior_submesh(mesh)).real
    A_D, M_D = stiffness_matrix(mesh, "interior").real, mass_matrix(mesh, "interior").real
    B_re = boundary_mass(mesh, INTERFACE, pair.impedance.values(mesh.n_components).real).real
    comps = [(stiffness_matrix(mesh, ("interior", j)).real, mass_matrix(mesh, ("interior", j)).real)
             for j in range(mesh.n_components)]
    out = []
    KE, KD, C0 = constants.K_ext, constants.K_D, constants.C0
    for f in np.asarray(F, dtype=complex).T:
        g = pair.gap(f, with_parts=False).real
        v, u = pair.solve_pair(f)
        e = u.values - v.values[:pair.n_ext]
        vv = v.values
        ge, me = float(np.vdot(e, A_ext @ e).real), float(np.vdot(e, M_ext @ e).real)
        gd, md = float(np.vdot(vv, A_D @ vv).real), float(np.vdot(vv, M_D @ vv).real)
        lhs_obst = gd - k**2 * md + float(np.vdot(vv, B_re @ vv).real)
        chk = {}
        for ep in eps_all:
            if 2 * KE * L * ep <= 1 and 2 * KD * L * ep < 1:
                chk[f"reduced@{ep:g}"] = (g, -(k**2 + 2 * KE * L / ep) * me + (1 - 2 * KD * L * ep) * gd
                                      - (k**2 + 2 * KD * L / ep) * md)
            chk[f"trace@{ep:g}"] = (g, (1 - 2 * KE * L * ep) * ge - (k**2 + 2 * KE * L / ep) * me
                                  + (1 - 2 * KD * L * ep) * gd - (k**2 + 2 * KD * L / ep) * md)
            chk[f"poincare@{ep:g}"] = (g, (1 - 2 * KE * L * ep - (k**2 + 2 * KE * L / ep) * C0**2) * ge
                                  + (1 - 2 * KD * L * ep) * gd - (k**2 + 2 * KD * L / ep) * md)
            chk[f"obstacle_energy@{ep:g}"] = (lhs_obst, (1 - KD * L * ep) * gd - (k**2 + KD * L / ep) * md)
        for ep in adm:
            s = 0.0
            for (Aj, Mj), cu in zip(comps, constants.C_U):
                gj = float(np.vdot(vv, Aj @ vv).real)
                mass_j = float(Mj.sum())
                mean_j = complex(np.sum(Mj @ vv) / mass_j)
                s += (1 - 2 * KD * L * ep - 2 * (k**2 + 2 * KD * L / ep) * cu**2 * 4.0) * gj \
                    - 2 * (k**2 + 2 * KD * L / ep) * mass_j * abs(mean_j) ** 2
            chk[f"mean_value@{ep:g}"] = (g, s)
        ok = all(r <= l + 1e-9 * max(abs(l), abs(r), 1e-300) for l, r in chk.values())
        out.append(ChainRecord(g, chk, ok))
    return out


# ---------------------------------------------------------------------------
# reflected-solution energy diagnostics
# ---------------------------------------------------------------------------

@dataclass
class EnergyRecord:
    x: tuple
    dist: float
    grad_w: float
    mass_w: float
    trace_w: float
    grad_G_D: float
    mass_G_D: float
    data_factor: float
    trace_ratio: float
    lower_bound_ratio: float


@dataclass
class EnergyDiagnostics:
    records: list
    strictly_increasing: bool
    kernel_increasing: bool
    kernel_dominates_mass: bool
    lower_bound_min_ratio: float

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def _kernel_energies_D(ctx: ProbeContext, x) -> tuple[float, float]:
    m = ctx.mesh
    tri = m.nodes[m.triangles[m.triangle_tags != 0]]
    pts, w = adaptive_triangle_points(tri, x, ratio=3.0, max_level=10)
    g, gg = G_and_grad(ctx.k, pts, x)
    return float(np.sum(w * np.sum(np.abs(gg) ** 2, axis=1))), float(np.sum(w * np.abs(g) ** 2))


def _interface_points(ctx: ProbeContext, center=None, order: int = 4):
    e = ctx.mesh.tagged_edges(INTERFACE)
    a, b = ctx.mesh.nodes[e[:, 0]], ctx.mesh.nodes[e[:, 1]]
    pts, wts, eid, s = edge_points(a, b, n=order, center=center)
    t = b - a
    nrm = np.c_[t[:, 1], -t[:, 0]] / np.hypot(*t.T)[:, None]
    return pts, wts, nrm[eid]


def reflection_data_factor(ctx: ProbeContext, value_grad: Optional[Callable], y0, singular_point=None) -> float:
    """int_dD |y - y0|^(1/2) |dv/dnu| + k^2 |int_D v| + L int_dD |v| for an analytic solution v.

    ``value_grad(pts) -> (v, grad v)``; ``None`` stands for v = 0.
    """
    if value_grad is None or ctx.empty:
        return 0.0
    y0 = np.asarray(y0, dtype=float)
    pts, w, nrm = _interface_points(ctx, singular_point)
    v, gv = value_grad(pts)
    dn = np.sum(gv * nrm, axis=1)
    t1 = float(np.sum(w * np.sqrt(np.hypot(*(pts - y0).T)) * np.abs(dn)))
    t3 = float(np.sum(w * np.abs(v)))
    m = ctx.mesh
    tri = m.nodes[m.triangles[m.triangle_tags != 0]]
    if singular_point is None:
        qp, qw = triangle_points(tri)
        qp, qw = qp.reshape(-1, 2), qw.reshape(-1)
    else:
        qp, qw = adaptive_triangle_points(tri, singular_point, ratio=3.0, max_level=10)
    t2 = abs(complex(np.sum(qw * value_grad(qp)[0])))
    return t1 + ctx.k**2 * t2 + ctx.obstacle.impedance.bound * t3


def _obstacle_energy_ratio(ctx: ProbeContext, grad2, mass2, re_lam_trace2) -> float:
    num = grad2 - ctx.k**2 * mass2 + re_lam_trace2
    return num / math.sqrt(grad2 + mass2)


def reflected_energy_sweep(ctx: ProbeContext, points: np.ndarray) -> EnergyDiagnostics:
    """Energies of the reflected solutions of the point source along an approach to the obstacle.

    ``lower_bound_ratio`` is |grad w| divided by the left side of the
    energy lower bound for v = G(. - x); it must stay bounded below.
    """
    ext = ctx.exterior
    A = stiffness_matrix(ext).real
    M = mass_matrix(ext).real
    B = boundary_mass(ext, INTERFACE).real
    recs = []
    lam = ctx.obstacle.impedance.values(ctx.mesh.n_components)
    for x in np.atleast_2d(points):
        w = reflected_solution(x, ctx).values
        gw, mw, tw = (float(np.vdot(w, Q @ w).real) for Q in (A, M, B))
        gG, mG = _kernel_energies_D(ctx, x)
        pts, wq, _ = _interface_points(ctx, x)
        comp = _edge_component_of_points(ctx, pts)
        reG = float(np.sum(wq * lam[comp].real * np.abs(G_and_grad(ctx.k, pts, x)[0]) ** 2))
        fac = reflection_data_factor(ctx, lambda p: G_and_grad(ctx.k, p, x), x, singular_point=x)
        lhs_e = _obstacle_energy_ratio(ctx, gG, mG, reG)
        recs.append(EnergyRecord(tuple(map(float, x)), float(ctx.obstacle.boundary_distance(x)), gw, mw, tw, gG, mG,
                                 fac, tw / (math.sqrt(gw) * fac) if fac > 0 else math.nan,
                                 math.sqrt(gw) / lhs_e if lhs_e > 0 else math.nan))
    gw = np.array([r.grad_w for r in recs])
    gG = np.array([r.grad_G_D for r in recs])
    mG = np.array([r.mass_G_D for r in recs])
    inc = bool(np.all(np.diff(gw) > 0))
    kinc = bool(np.all(np.diff(gG) > 0))
    dom = bool(np.all(np.diff(gG) > np.diff(mG)))
    l41 = np.array([r.lower_bound_ratio for r in recs])
    return EnergyDiagnostics(recs, inc, kinc, dom, float(np.nanmin(l41)) if len(l41) else math.nan)


def _edge_component_of_points(ctx: ProbeContext, pts: np.ndarray) -> np.ndarray:
    if ctx.mesh.n_components == 1:
        return np.zeros(len(pts), dtype=int)
    d = np.array([[c.boundary_distance(p) for c in ctx.obstacle.components] for p in pts])
    return np.argmin(d, axis=1)


# ---------------------------------------------------------------------------
# obstacle-energy vs reflected-energy audit on background solutions
# ---------------------------------------------------------------------------

def reflected_of_fe(ctx: ProbeContext, v: np.ndarray) -> np.ndarray:
    """Reflected solution of a discrete background solution ``v`` (parent numbering).

    The impedance data -(dv/dnu + lambda v) is taken in the discrete weak
    sense: the normal-derivative functional is the interior form applied to v.
    """
    m = ctx.mesh
    K_D = stiffness_matrix(m, "interior") - ctx.k**2 * mass_matrix(m, "interior")
    lam = ctx.obstacle.impedance.values(m.n_components)
    B = boundary_mass(m, INTERFACE, lam)
    load = -(K_D @ v + B @ v)
    n_ext = ctx.exterior.n_nodes
    return ctx.operator.solve(np.zeros(m.n_outer), load[:n_ext]).values


@dataclass
class EnergyRatioAudit:
    ratios: np.ndarray
    C_fit: float
    holdout_max: float
    slack: float
    passed: bool


def energy_ratio_audit(ctx: ProbeContext, n: int = 50, seed: int = 0, holdout: float = 0.5,
                  slack: float = 0.5) -> EnergyRatioAudit:
    """Ratio (int_D |grad v|^2 - k^2 |v|^2 + int_dD Re(lambda) |v|^2) / (|v|_{H1(D)} |grad w|)
    over random background solutions v and their reflected solutions w.

    C is fitted as the max ratio over the first part of the sample; the audit
    passes when the held-out ratios stay below (1 + slack) * C.
    """
    rng = np.random.default_rng(seed)
    m = ctx.mesh
    P = m.nodes[:m.n_outer]
    A_D, M_D = stiffness_matrix(m, "interior").real, mass_matrix(m, "interior").real
    B_re = boundary_mass(m, INTERFACE, ctx.obstacle.impedance.values(m.n_components).real).real
    A_ext = stiffness_matrix(ctx.exterior).real
    ratios = []
    for i in range(n):
        freq = 3.0 * rng.standard_normal((3, 2))
        amp = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        f = np.exp(1j * P @ freq.T) @ amp
        v = ctx.pair.background.solve(f).values
        w = reflected_of_fe(ctx, v)
        g2, m2 = float(np.vdot(v, A_D @ v).real), float(np.vdot(v, M_D @ v).real)
        lhs = _obstacle_energy_ratio(ctx, g2, m2, float(np.vdot(v, B_re @ v).real))
        ratios.append(lhs / math.sqrt(float(np.vdot(w, A_ext @ w).real)))
    ratios = np.array(ratios)
    n_fit = max(1, int(round(n * (1 - holdout))))
    C = float(ratios[:n_fit].max())
    hold = float(ratios[n_fit:].max()) if n_fit < n else C
    return EnergyRatioAudit(ratios, C, hold, slack, bool(hold <= (1 + slack) * C))


# ---------------------------------------------------------------------------
# needle-sequence diagnostics on the obstacle
# ---------------------------------------------------------------------------

def _obstacle_quadrature(ctx: ProbeContext, tip=None):
    m = ctx.mesh
    tri = m.nodes[m.triangles[m.triangle_tags != 0]]
    if tip is not None and ctx.obstacle.boundary_distance(tip) < 0.2:
        return adaptive_triangle_points(tri, tip, ratio=2.0, max_level=6)
    p, w = triangle_points(tri)
    return p.reshape(-1, 2), w.reshape(-1)


def obstacle_energies(ctx: ProbeContext, seq: NeedleSequence) -> tuple[np.ndarray, np.ndarray]:
    """(int_D |v_n|^2, int_D |grad v_n|^2) for every term."""
    pts, w = _obstacle_quadrature(ctx, seq.tip)
    mass, grad = [], []
    for i in range(len(seq)):
        mass.append(float(np.sum(w * np.abs(seq.evaluate(pts, i)) ** 2)))
        grad.append(float(np.sum(w * np.sum(np.abs(seq.gradient(pts, i)) ** 2, axis=1))))
    return np.array(mass), np.array(grad)


@dataclass
class DominanceReport:
    ratios: np.ndarray
    grad_energy: np.ndarray
    bounded: bool
    increasing_tail: bool
    convergent: bool


def gradient_dominance_check(ctx: ProbeContext, seq: NeedleSequence, tail: int = 3,
                             rel_tol: float = 0.02) -> DominanceReport:
    """int_D |v_n|^2 / int_D |grad v_n|^2 per term; bounded when tail max <= 2 x median."""
    mass, grad = obstacle_energies(ctx, seq)
    r = mass / grad
    t = r[-tail:]
    bounded = bool(t.max() <= 2.0 * np.median(r))
    inc = len(grad) >= tail and bool(np.all(np.diff(grad[-tail:]) > 0))
    conv = bool((t.max() - t.min()) <= rel_tol * abs(t).max())
    return DominanceReport(r, grad, bounded, inc, conv)


@dataclass
class ReflectedBlowupReport:
    grad_v_D: np.ndarray
    grad_w: np.ndarray
    v_blowup: bool
    w_increasing_tail: bool
    condition_reflected: bool

    @property
    def consistent(self) -> bool:
        """The implication holds on the computed tail (vacuous when its premise fails)."""
        return (not (self.v_blowup and self.condition_reflected)) or self.w_increasing_tail


def reflected_blowup_chain(ctx: ProbeContext, seq: NeedleSequence, constants: Optional[ConstantsReport] = None,
                    tail: int = 3) -> ReflectedBlowupReport:
    """Energies of v_n on D and of their reflected solutions."""
    _, grad = obstacle_energies(ctx, seq)
    A = stiffness_matrix(ctx.exterior).real
    gw = []
    for i in range(len(seq)):
        w = reflected_field(ctx, lambda p, i=i: (seq.evaluate(p, i), seq.gradient(p, i))).values
        gw.append(float(np.vdot(w, A @ w).real))
    gw = np.array(gw)
    vb = len(grad) >= tail and bool(np.all(np.diff(grad[-tail:]) > 0)) and grad[-1] > 10 * grad[0]
    wi = len(gw) >= tail and bool(np.all(np.diff(gw[-tail:]) > 0))
    c48 = bool(constants.conditions.holds_reflected) if constants is not None and constants.conditions else False
    return ReflectedBlowupReport(grad, gw, bool(vb), bool(wi), c48)
