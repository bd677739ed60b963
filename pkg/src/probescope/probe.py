"""Needle sequences, indicator sequences, the indicator function and grid reconstruction.

A needle sequence for a tip ``x`` and a polyline ``needle`` is a list of
exact Helmholtz solutions

    v_n(y) = sum_j c_j G_k(y - z_j),      z_j outside the closed domain,

fitted by Tikhonov-regularized collocation to ``G_k(. - x)`` on the outer
boundary and on the offset curve at distance ``d_n`` from the needle.  The
indicator sequence pairs the traces of ``v_n`` with the gap of the two
Dirichlet-to-Neumann maps.  The indicator function itself is assembled from
the reflected solution, i.e. the exterior field that corrects
``G_k(. - x)`` to satisfy the impedance condition on the obstacle.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla
from shapely.geometry import LineString

from .dtn import DtnPair
from .errors import GeometryError
from .fem import FeFunction, G_and_grad, HelmholtzOperator, edge_load, hankel_G, hankel_dG
from .geometry import (Needle, ObstacleSpec, Shape, needle_hits, rotated_needle, shape_center,
                       straight_needle, validate_needle)
from .mesh import INTERFACE, TriMesh, exterior_submesh, mesh_domain
from .quadrature import adaptive_triangle_points, disk_points, edge_points, geometric_breaks, polar_sector_points

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# problem context
# ---------------------------------------------------------------------------

class ProbeContext:
    """Mesh, factorized operators and geometry shared by all probe computations."""

    def __init__(self, domain: Shape, obstacle: ObstacleSpec, k: float, h: float = 0.02,
                 h_interface: Optional[float] = None, mesh: Optional[TriMesh] = None):
        self.domain = domain
        self.obstacle = obstacle
        self.k = float(k)
        self.mesh = mesh if mesh is not None else mesh_domain(domain, obstacle, h, h_interface=h_interface)
        self.pair = DtnPair(self.mesh, obstacle.impedance, self.k)
        self.exterior = None if self.pair.empty else exterior_submesh(self.mesh)

    @property
    def empty(self) -> bool:
        return self.pair.empty

    @property
    def outer_points(self) -> np.ndarray:
        return self.mesh.nodes[:self.mesh.n_outer]

    @property
    def operator(self) -> Optional[HelmholtzOperator]:
        return self.pair.obstacle

    def interface_h(self) -> float:
        return self.mesh.interface_edge_length() if not self.empty else 0.0

    def lambda_on_edges(self) -> np.ndarray:
        comp = self.mesh.edge_tags[self.mesh._edge_mask(INTERFACE)] - 1
        return self.obstacle.impedance.values(self.mesh.n_components)[comp]


# ---------------------------------------------------------------------------
# needle sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NeedleParams:
    """Construction parameters; lengths in units of the domain radius R unless noted."""

    n_max: int = 8
    n_sources: int = 256
    source_radius: float = 1.5
    d0: float = 0.2
    rho: float = 0.7
    alpha: float = 1e-10
    residual_tol: Optional[float] = None
    spacing: float = 1.0 / 3.0

    def __post_init__(self):
        if self.n_max < 1 or self.n_sources < 1:
            raise ValueError("n_max and n_sources must be positive")
        if self.source_radius <= 1.0:
            raise ValueError("sources must lie outside the closed domain (source_radius > 1)")
        if not 0 < self.rho < 1 or self.d0 <= 0 or self.alpha < 0:
            raise ValueError("need d0 > 0, 0 < rho < 1, alpha >= 0")


@dataclass
class NeedleTerm:
    n: int
    source_points: np.ndarray
    coefficients: np.ndarray
    tube_radius: float
    fit_residual: float
    n_collocation: int = 0
    singular_range: tuple = (math.nan, math.nan)


@dataclass
class NeedleSequence:
    tip: np.ndarray
    needle: Needle
    k: float
    terms: list = field(default_factory=list)
    flagged: list = field(default_factory=list)
    params: Optional[NeedleParams] = None

    def __len__(self) -> int:
        return len(self.terms)

    def evaluate(self, pts, i: int = -1) -> np.ndarray:
        term = self.terms[i]
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return _mfs_matrix(self.k, pts, term.source_points) @ term.coefficients

    def gradient(self, pts, i: int = -1) -> np.ndarray:
        """(Q, 2) complex gradient of v_n."""
        term = self.terms[i]
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = pts[:, None, :] - term.source_points[None]
        r = np.hypot(d[..., 0], d[..., 1])
        dg = hankel_dG(self.k, r) / r
        return np.stack([(dg * d[..., 0]) @ term.coefficients, (dg * d[..., 1]) @ term.coefficients], axis=1)

    def traces(self, mesh: TriMesh) -> np.ndarray:
        """(n_outer, n_terms) boundary data f_n."""
        P = mesh.nodes[:mesh.n_outer]
        if not self.terms:
            return np.zeros((len(P), 0), dtype=complex)
        B = _mfs_matrix(self.k, P, self.terms[0].source_points)
        return np.column_stack([B @ t.coefficients for t in self.terms])

    def helmholtz_residual(self, pts, i: int = -1, step: float = 1e-3) -> np.ndarray:
        """Five-point finite-difference Delta v + k^2 v, O(step^2) for an exact solution."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ex, ey = np.array([step, 0.0]), np.array([0.0, step])
        v0 = self.evaluate(pts, i)
        lap = (self.evaluate(pts + ex, i) + self.evaluate(pts - ex, i) + self.evaluate(pts + ey, i)
               + self.evaluate(pts - ey, i) - 4 * v0) / step**2
        return lap + self.k**2 * v0


def _mfs_matrix(k: float, pts: np.ndarray, src: np.ndarray) -> np.ndarray:
    r = np.hypot(pts[:, None, 0] - src[None, :, 0], pts[:, None, 1] - src[None, :, 1])
    return hankel_G(k, r)


_BOUNDARY_BLOCKS: dict = {}


def _boundary_block(k: float, bd: np.ndarray, src: np.ndarray) -> np.ndarray:
    """MFS rows for the outer collocation points; shared by every term and probe point."""
    key = (float(k), bd.shape, hash(bd.tobytes()), hash(src.tobytes()))
    A = _BOUNDARY_BLOCKS.get(key)
    if A is None:
        if len(_BOUNDARY_BLOCKS) >= 8:
            _BOUNDARY_BLOCKS.clear()
        A = _BOUNDARY_BLOCKS[key] = _mfs_matrix(k, bd, src)
    return A


def source_circle(domain: Shape, n: int, factor: float) -> np.ndarray:
    c = shape_center(domain)
    R = factor * domain.bounding_radius(c)
    t = 2 * math.pi * np.arange(n) / n
    return c + R * np.c_[np.cos(t), np.sin(t)]


def tube_points(needle: Needle, d: float, domain: Shape, spacing: float) -> np.ndarray:
    """Points of {dist(., needle) = d} inside the domain, roughly ``spacing`` apart."""
    ring = LineString(needle.points).buffer(d, quad_segs=32).exterior
    n = max(int(math.ceil(ring.length / spacing)), 16)
    s = np.linspace(0.0, ring.length, n, endpoint=False)
    pts = np.array([ring.interpolate(t).coords[0] for t in s])
    return pts[domain.contains(pts)]


def outer_points(domain: Shape, mesh: Optional[TriMesh], n_min: int) -> np.ndarray:
    """Outer-boundary collocation points: mesh nodes and edge midpoints, or a polygonization."""
    if mesh is not None:
        P = mesh.nodes[:mesh.n_outer]
        mid = 0.5 * (P + np.roll(P, -1, axis=0))
        pts = np.empty((2 * len(P), 2))
        pts[0::2], pts[1::2] = P, mid
        if len(pts) >= n_min:
            return pts
    return domain.polygonize(domain.perimeter / n_min)


def tikhonov_solve(A: np.ndarray, g: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """argmin |A c - g|^2 + alpha |c|^2 via the SVD; also returns the singular values."""
    U, S, Vh = sla.svd(A, full_matrices=False, lapack_driver="gesdd")
    filt = S / (S**2 + alpha)
    return Vh.conj().T @ (filt * (U.conj().T @ g)), S


def build_needle_sequence(x, needle: Needle, k: float, mesh: Optional[TriMesh], domain: Shape,
                          params: NeedleParams = NeedleParams()) -> NeedleSequence:
    """Fit v_1, ..., v_{n_max} to G_k(. - x) off shrinking tubes around the needle.

    Lengths ``d0`` and the source radius are relative to the domain radius.
    A term whose relative collocation misfit exceeds ``residual_tol`` is
    flagged and ends the sequence.
    """
    x = np.asarray(x, dtype=float)
    if np.hypot(*(needle.tip - x)) > 1e-12:
        raise GeometryError("the needle tip must be the probe point")
    validate_needle(needle, domain)
    R = domain.bounding_radius(shape_center(domain))
    src = source_circle(domain, params.n_sources, params.source_radius)
    bd_all = outer_points(domain, mesh, 2 * params.n_sources)
    A_bd = _boundary_block(k, bd_all, src)
    dist_bd = needle.distance(bd_all)
    seq = NeedleSequence(x, needle, float(k), params=params)
    for n in range(1, params.n_max + 1):
        d = params.d0 * R * params.rho**n
        keep = dist_bd > d
        tube = tube_points(needle, d, domain, params.spacing * d)
        C = np.r_[bd_all[keep], tube]
        A = np.r_[A_bd[keep], _mfs_matrix(k, tube, src)]
        g = hankel_G(k, np.hypot(*(C - x).T))
        alpha = params.alpha * float(np.vdot(g, g).real)
        c, S = tikhonov_solve(A, g, alpha)
        res = float(np.linalg.norm(A @ c - g) / np.linalg.norm(g))
        term = NeedleTerm(n, src, c, d, res, len(C), (float(S[-1]), float(S[0])))
        if params.residual_tol is not None and res > params.residual_tol:
            logger.info("needle term %d flagged: misfit %.3e > %.3e; sequence truncated", n, res,
                        params.residual_tol)
            seq.flagged.append(term)
            break
        seq.terms.append(term)
    return seq


# ---------------------------------------------------------------------------
# indicator sequence and classification
# ---------------------------------------------------------------------------

CONVERGED, BLOWUP, UNDECIDED = "converged", "blowup", "undecided"


@dataclass
class Classification:
    label: str
    limit: Optional[float] = None

    def __str__(self):
        return f"{self.label}({self.limit:.6g})" if self.label == CONVERGED else self.label


@dataclass
class IndicatorSeries:
    values: np.ndarray
    gaps: np.ndarray
    classification: Classification
    tube_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fit_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def classify_series(values: Sequence[float], scale_ref: Optional[float] = None, rel_tol: float = 0.02,
                    factor: float = 10.0, tail: int = 3) -> Classification:
    """Converged if the last ``tail`` values vary by at most ``rel_tol`` relative;
    blowup if they increase strictly and the last exceeds ``factor * scale_ref``.

    Without a scale reference the first value of the series plays its role.
    """
    v = np.asarray(values, dtype=float)
    if len(v) < tail:
        return Classification(UNDECIDED)
    last = v[-tail:]
    mag = np.max(np.abs(last))
    if mag == 0:
        return Classification(CONVERGED, 0.0)
    if (last.max() - last.min()) <= rel_tol * mag:
        return Classification(CONVERGED, float(v[-1]))
    ref = abs(v[0]) if scale_ref is None else abs(scale_ref)
    if np.all(np.diff(last) > 0) and last[-1] > factor * ref:
        return Classification(BLOWUP)
    return Classification(UNDECIDED)


def indicator_sequence(ctx: ProbeContext, seq: NeedleSequence, scale_ref: Optional[float] = None,
                       dense: bool = True) -> IndicatorSeries:
    """I_n = Re <(Lambda_0 - Lambda_D) f_n, conj f_n> with f_n the trace of v_n."""
    F = seq.traces(ctx.mesh)
    if F.shape[1] == 0:
        gaps = np.zeros(0, dtype=complex)
    elif ctx.empty:
        gaps = np.zeros(F.shape[1], dtype=complex)
    else:
        gaps = ctx.pair.gap_values_dense(F) if dense else ctx.pair.gap_values(F)
    vals = gaps.real.copy()
    return IndicatorSeries(vals, gaps, classify_series(vals, scale_ref),
                           np.array([t.tube_radius for t in seq.terms]),
                           np.array([t.fit_residual for t in seq.terms]))


# ---------------------------------------------------------------------------
# reflected solution and the indicator function
# ---------------------------------------------------------------------------

def _check_probe_point(ctx: ProbeContext, x: np.ndarray, min_edges: float = 2.0) -> None:
    if not ctx.domain.contains(x)[0]:
        raise GeometryError(f"probe point {tuple(x)} is not inside the domain")
    if ctx.empty:
        return
    if ctx.obstacle.contains(x, closed=True)[0]:
        raise GeometryError(f"probe point {tuple(x)} lies in the closed obstacle")
    dist = ctx.obstacle.boundary_distance(x)
    need = min_edges * ctx.interface_h()
    if dist < need:
        raise GeometryError(f"probe point at distance {dist:.4g} from the obstacle; quadrature needs "
                            f"at least {need:.4g} ({min_edges:g} interface edge lengths)")


def reflected_field(ctx: ProbeContext, value_grad: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
                    singular_point=None) -> FeFunction:
    """Exterior solution with w = 0 outside and dw/dnu + lambda w = -(dv/dnu + lambda v) on the obstacle.

    ``value_grad(pts)`` returns v and its gradient at boundary quadrature points.
    """
    if ctx.empty:
        return FeFunction(ctx.mesh, np.zeros(ctx.mesh.n_nodes))
    lam = ctx.obstacle.impedance.values(ctx.mesh.n_components)

    def robin(pts, nrm, comp):
        v, gv = value_grad(pts)
        return -(np.sum(gv * nrm, axis=1) + lam[comp] * v)

    load = edge_load(ctx.mesh, robin, INTERFACE, order=4, singular_point=singular_point)
    n_ext = ctx.exterior.n_nodes
    return ctx.operator.solve(np.zeros(ctx.mesh.n_outer), load[:n_ext])


def reflected_solution(x, ctx: ProbeContext) -> FeFunction:
    """Reflected solution w_x for the point source at ``x`` (zero function when D is empty)."""
    x = np.asarray(x, dtype=float)
    _check_probe_point(ctx, x)
    return reflected_field(ctx, lambda p: G_and_grad(ctx.k, p, x), singular_point=x)


@dataclass
class IndicatorFunctionSample:
    x: np.ndarray
    value: float
    w: Optional[FeFunction]
    terms: dict

    @property
    def terms_sum(self) -> float:
        return float(sum(v for k, v in self.terms.items() if k in _SUM_KEYS))


_SUM_KEYS = ("reflected_energy", "interior_energy", "boundary_re", "boundary_im")


def _interface_quadrature(ctx: ProbeContext, center, order: int = 4):
    e = ctx.mesh.tagged_edges(INTERFACE)
    a, b = ctx.mesh.nodes[e[:, 0]], ctx.mesh.nodes[e[:, 1]]
    pts, wts, eid, s = edge_points(a, b, n=order, center=center)
    t = b - a
    nrm = np.c_[t[:, 1], -t[:, 0]] / np.hypot(*t.T)[:, None]
    return e, pts, wts, eid, s, nrm[eid]


def interior_kernel_energy(ctx: ProbeContext, x) -> tuple[float, float]:
    """int_D |grad G|^2 - k^2 |G|^2 by adaptive volume quadrature, and its
    boundary-integral form Re int_dD conj(G) dG/dnu (Green's first identity)."""
    x = np.asarray(x, dtype=float)
    if ctx.empty:
        return 0.0, 0.0
    m = ctx.mesh
    tri = m.nodes[m.triangles[m.triangle_tags != 0]]
    pts, w = adaptive_triangle_points(tri, x, ratio=3.0, max_level=10)
    g, gg = G_and_grad(ctx.k, pts, x)
    vol = float(np.sum(w * (np.sum(np.abs(gg) ** 2, axis=1) - ctx.k**2 * np.abs(g) ** 2)))
    _, bp, bw, _, _, nrm = _interface_quadrature(ctx, x)
    g, gg = G_and_grad(ctx.k, bp, x)
    bnd = float(np.sum(bw * np.conj(g) * np.sum(gg * nrm, axis=1)).real)
    return vol, bnd


def indicator_terms(ctx: ProbeContext, x, w: FeFunction, value_grad=None) -> dict:
    """The four groups of the indicator formula for a field v (default G_k(. - x))."""
    x = np.asarray(x, dtype=float)
    if value_grad is None:
        def value_grad(p):
            return G_and_grad(ctx.k, p, x)
    ext = ctx.exterior
    K = ctx.pair._a_ext
    wv = w.values
    e, bp, bw, eid, s, _ = _interface_quadrature(ctx, x)
    wq = wv[e[eid, 0]] * (1 - s) + wv[e[eid, 1]] * s
    v, _ = value_grad(bp)
    lam = ctx.lambda_on_edges()[eid]
    vol, bnd = interior_kernel_energy(ctx, x)
    return {
        "reflected_energy": float(np.vdot(wv, K @ wv).real),
        "interior_energy": vol,
        "interior_energy_boundary_form": bnd,
        "boundary_re": float(np.sum(bw * lam.real * (np.abs(v) ** 2 - np.abs(wq) ** 2))),
        "boundary_im": float(np.sum(bw * (-2.0 * lam.imag * (wq * np.conj(v)).imag))),
        "n_exterior_nodes": ext.n_nodes,
    }


def indicator_function(x, ctx: ProbeContext) -> IndicatorFunctionSample:
    """I(x) from the reflected solution; zero when the obstacle is empty."""
    x = np.asarray(x, dtype=float)
    if ctx.empty:
        if not ctx.domain.contains(x)[0]:
            raise GeometryError("probe point is not inside the domain")
        return IndicatorFunctionSample(x, 0.0, None, {k: 0.0 for k in _SUM_KEYS})
    w = reflected_solution(x, ctx)
    terms = indicator_terms(ctx, x, w)
    value = float(sum(terms[k] for k in _SUM_KEYS))
    return IndicatorFunctionSample(x, value, w, terms)


def indicator_sweep(ctx: ProbeContext, points: np.ndarray, threads: int = 1) -> list[IndicatorFunctionSample]:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(lambda p: indicator_function(p, ctx), points))
    return [indicator_function(p, ctx) for p in points]


def ray_points(a, direction, distances: Sequence[float]) -> np.ndarray:
    """Points a + dist * direction (direction pointing away from the obstacle)."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.hypot(*d)
    return np.array([a + t * d for t in distances])


def write_sweep_csv(path, distances: Sequence[float], samples: Sequence[IndicatorFunctionSample]) -> None:
    keys = list(_SUM_KEYS) + ["interior_energy_boundary_form"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dist", "x", "y", "I"] + keys)
        for d, s in zip(distances, samples):
            w.writerow([f"{d:.17g}", f"{s.x[0]:.17g}", f"{s.x[1]:.17g}", f"{s.value:.17g}"]
                       + [f"{s.terms.get(k, 0.0):.17g}" for k in keys])


# ---------------------------------------------------------------------------
# blowup of needle sequences on cones and balls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cone:
    vertex: tuple
    axis: tuple
    aperture: float
    radius: float


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float


@dataclass
class GrowthReport:
    energies: np.ndarray
    increasing_tail: bool
    growth: float
    cauchy_tail: float


def region_quadrature(region: Union[Cone, Ball], domain: Shape, nr: int = 24, nt: int = 48):
    """Quadrature on region intersected with the domain (points outside get weight 0)."""
    if isinstance(region, Cone):
        ax = math.atan2(region.axis[1], region.axis[0])
        h = 0.5 * region.aperture
        breaks = geometric_breaks(region.radius * 1e-6, region.radius, 2.0)
        pts, w = polar_sector_points(region.vertex, region.radius, ax - h, ax + h, nr, nt, breaks)
    else:
        breaks = geometric_breaks(region.radius * 1e-3, region.radius, 2.0)
        pts, w = disk_points(region.center, region.radius, nr, nt, breaks)
    w = np.where(domain.contains(pts), w, 0.0)
    return pts, w


def needle_blowup_check(seq: NeedleSequence, region: Union[Cone, Ball], domain: Shape,
                        tail: int = 3) -> GrowthReport:
    """int_{region} |grad v_n|^2 for each term, with the monotone-tail statistic."""
    pts, w = region_quadrature(region, domain)
    E = np.array([float(np.sum(w * np.sum(np.abs(seq.gradient(pts, i)) ** 2, axis=1)))
                  for i in range(len(seq))])
    inc = len(E) >= tail and bool(np.all(np.diff(E[-tail:]) > 0))
    growth = float(E[-1] / E[0]) if len(E) and E[0] > 0 else math.nan
    cauchy = float(abs(E[-1] - E[-2]) / abs(E[-1])) if len(E) >= 2 and E[-1] != 0 else math.nan
    return GrowthReport(E, inc, growth, cauchy)


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------

INSIDE, OUTSIDE = 1, 0
UNDECIDED_FLAG = -1


@dataclass
class PointResult:
    x: np.ndarray
    flag: int
    series: list
    needles: list
    last_value: float
    n_used: int


@dataclass
class Reconstruction:
    points: np.ndarray
    flags: np.ndarray
    results: list
    boundary_estimate: np.ndarray
    delta: float
    scale_ref: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "flag", "last_indicator_value", "n_used"])
            for r in self.results:
                w.writerow([f"{r.x[0]:.17g}", f"{r.x[1]:.17g}", r.flag, f"{r.last_value:.17g}", r.n_used])


def grid_points(domain: Shape, delta: float, margin: Optional[float] = None) -> np.ndarray:
    """Lattice points of spacing delta strictly inside the domain, at least ``margin`` from its boundary."""
    c = shape_center(domain)
    R = domain.bounding_radius(c)
    m = int(math.ceil(R / delta))
    ax = np.arange(-m, m + 1) * delta
    X, Y = np.meshgrid(c[0] + ax, c[1] + ax, indexing="xy")
    P = np.c_[X.ravel(), Y.ravel()]
    P = P[domain.contains(P)]
    margin = 0.25 * delta if margin is None else margin
    keep = np.array([domain.boundary_distance(p) >= margin for p in P], dtype=bool)
    return P[keep]


def policy_needles(x, ctx: ProbeContext, fallback_angle: float = 0.5 * math.pi) -> list[Needle]:
    """Default needle (nearest boundary point) and its rotated fallback; grazing needles are re-aimed."""
    out = []
    for ang in (0.0, fallback_angle, -fallback_angle, math.pi):
        try:
            nd = straight_needle(x, None, ctx.domain) if ang == 0.0 else rotated_needle(x, ctx.domain, ang)
        except GeometryError:
            continue
        if not ctx.empty and needle_hits(nd, ctx.obstacle) == "grazes_boundary_only":
            continue
        out.append(nd)
        if len(out) == 2:
            break
    return out


def _probe_point(x, ctx: ProbeContext, params: NeedleParams):
    needles = policy_needles(x, ctx)
    series = []
    for nd in needles[:1]:
        seq = build_needle_sequence(x, nd, ctx.k, ctx.mesh, ctx.domain, params)
        series.append(indicator_sequence(ctx, seq))
    return needles, series


def boundary_transitions(points: np.ndarray, flags: np.ndarray, delta: float) -> np.ndarray:
    """Midpoints of lattice neighbours with flags inside/outside."""
    key = {tuple(np.round(p / delta).astype(int)): i for i, p in enumerate(points)}
    out = []
    for (i, j), a in key.items():
        for di, dj in ((1, 0), (0, 1)):
            b = key.get((i + di, j + dj))
            if b is None:
                continue
            fa, fb = flags[a], flags[b]
            if {fa, fb} == {INSIDE, OUTSIDE}:
                out.append(0.5 * (points[a] + points[b]))
    return np.array(out).reshape(-1, 2)


def reconstruct(ctx: ProbeContext, delta: float, params: NeedleParams = NeedleParams(), threads: int = 1,
                points: Optional[np.ndarray] = None) -> Reconstruction:
    """Probe every lattice point with its policy needle(s) and classify.

    Pass one computes the series on the default needle; converged limits
    give the scale reference (their median).  Points left undecided are
    re-probed with the fallback needle.  A point is inside when every
    attempted needle blows up and outside when some needle converges.
    """
    P = grid_points(ctx.domain, delta) if points is None else np.atleast_2d(points)
    if ctx.empty:
        # the gap vanishes identically: every indicator sequence is the zero sequence
        res = [PointResult(x, OUTSIDE, [], [], 0.0, 0) for x in P]
        return Reconstruction(P, np.full(len(P), OUTSIDE, dtype=int), res, np.zeros((0, 2)), delta, 0.0)
    ctx.pair.gap_form()

    def first(x):
        return _probe_point(x, ctx, params)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            first_pass = list(ex.map(first, P))
    else:
        first_pass = [first(x) for x in P]
    conv = [s[0].classification.limit for _, s in first_pass
            if s and s[0].classification.label == CONVERGED and s[0].classification.limit is not None]
    conv = [abs(c) for c in conv if c != 0]
    scale = float(np.median(conv)) if conv else 0.0

    def finish(item):
        x, (needles, series) = item
        labels = [classify_series(s.values, scale if scale > 0 else None) for s in series]
        if labels and labels[0].label == UNDECIDED and len(needles) > 1:
            seq = build_needle_sequence(x, needles[1], ctx.k, ctx.mesh, ctx.domain, params)
            s2 = indicator_sequence(ctx, seq)
            series.append(s2)
            labels.append(classify_series(s2.values, scale if scale > 0 else None))
        names = [c.label for c in labels]
        if CONVERGED in names:
            flag = OUTSIDE
        elif names and all(n == BLOWUP for n in names):
            flag = INSIDE
        else:
            flag = UNDECIDED_FLAG
        last = series[-1].values[-1] if series and len(series[-1].values) else math.nan
        n_used = len(series[-1].values) if series else 0
        for s, c in zip(series, labels):
            s.classification = c
        return PointResult(x, flag, series, needles[:len(series)], float(last), n_used)

    items = list(zip(P, first_pass))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(finish, items))
    else:
        results = [finish(it) for it in items]
    flags = np.array([r.flag for r in results], dtype=int)
    return Reconstruction(P, flags, results, boundary_transitions(P, flags, delta), delta, scale)


def hausdorff_to_obstacle(points: np.ndarray, obstacle: ObstacleSpec, n: int = 4000) -> float:
    """Symmetric Hausdorff distance between a point set and the obstacle boundary."""
    if not len(points):
        return math.inf
    bd = np.vstack([c.polygonize(c.perimeter / n) for c in obstacle.components])
    d = np.hypot(points[:, None, 0] - bd[None, :, 0], points[:, None, 1] - bd[None, :, 1])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))
