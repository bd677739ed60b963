"""Conforming triangulations of Omega with the obstacle boundary as an interface.

Node numbering convention (relied upon by the DtN code):

* nodes ``0 .. n_outer-1`` are the outer boundary nodes in counter-clockwise
  cyclic order;
* the next block holds every remaining node touched by an exterior triangle;
* interior-only nodes come last.

Hence the exterior submesh is a prefix of the parent mesh and both share
the outer boundary discretization index-for-index.

Tags are small integers: triangles ``0`` = exterior, ``j+1`` = interior of
obstacle component ``j``; edges ``0`` = outer boundary, ``j+1`` = interface
of component ``j``.  Tagged edges are oriented so that the triangle they
bound (the Omega triangle for outer edges, the obstacle triangle for
interface edges) lies on their left.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import triangle as _triangle

from .errors import GeometryError
from .geometry import ObstacleSpec, Shape

logger = logging.getLogger(__name__)

OUTER = "outer_boundary"
INTERFACE = "obstacle_interface"
EXTERIOR = 0

# area cap relative to an equilateral triangle of side h; keeps h_max <= 1.5 h
_AREA_FACTOR = 0.8
_MIN_ANGLE_DEG = 30.0


@dataclass(frozen=True)
class MeshQuality:
    h_max: float
    h_mean: float
    min_angle: float
    n_nodes: int
    n_triangles: int


@dataclass(eq=False)
class TriMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    triangle_tags: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    n_outer: int
    n_components: int = 0
    parent_nodes: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def outer_nodes(self) -> np.ndarray:
        return np.arange(self.n_outer)

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            p = self.nodes[self.triangles]
            d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
            self._cache["areas"] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._cache["areas"]

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def tagged_edges(self, tag) -> np.ndarray:
        """Edges for ``'outer_boundary'``, ``'obstacle_interface'`` (all components) or ``(INTERFACE, j)``."""
        return self.edges[self._edge_mask(tag)]

    def _edge_mask(self, tag) -> np.ndarray:
        if tag == OUTER:
            return self.edge_tags == 0
        if tag == INTERFACE:
            return self.edge_tags > 0
        if isinstance(tag, tuple) and tag[0] == INTERFACE:
            return self.edge_tags == tag[1] + 1
        raise KeyError(f"unknown edge tag {tag!r}")

    def has_tag(self, tag) -> bool:
        try:
            return bool(self._edge_mask(tag).any())
        except KeyError:
            return False

    def edge_component(self, tag=INTERFACE) -> np.ndarray:
        return self.edge_tags[self._edge_mask(tag)] - 1

    def interface_nodes(self) -> np.ndarray:
        return np.unique(self.tagged_edges(INTERFACE))

    @property
    def n_exterior_nodes(self) -> int:
        ext = self.triangles[self.triangle_tags == EXTERIOR]
        return int(ext.max()) + 1 if len(ext) else 0

    def quality(self) -> MeshQuality:
        p = self.nodes[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        lens = np.linalg.norm(e, axis=2)
        angles = []
        for i in range(3):
            a, b = -e[:, i - 1], e[:, i]
            cosang = np.sum(a * b, axis=1) / (lens[:, i - 1] * lens[:, i])
            angles.append(np.arccos(np.clip(cosang, -1, 1)))
        return MeshQuality(float(lens.max()), float(lens.mean()), float(np.min(angles)),
                           self.n_nodes, self.n_triangles)

    def interface_edge_length(self) -> float:
        e = self.tagged_edges(INTERFACE)
        if not len(e):
            return 0.0
        return float(np.max(np.hypot(*(self.nodes[e[:, 1]] - self.nodes[e[:, 0]]).T)))

    def all_edges(self) -> np.ndarray:
        t = self.triangles
        e = np.sort(np.r_[t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.n_nodes - len(self.all_edges()) + self.n_triangles

    def locate(self, pts) -> np.ndarray:
        """Index of a triangle containing each point (-1 if none)."""
        from matplotlib.tri import Triangulation

        if "trifinder" not in self._cache:
            tri = Triangulation(self.nodes[:, 0], self.nodes[:, 1], self.triangles)
            self._cache["trifinder"] = tri.get_trifinder()
        pts = np.atleast_2d(pts)
        return self._cache["trifinder"](pts[:, 0], pts[:, 1])


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def _build_tagged_edges(triangles: np.ndarray, tri_tags: np.ndarray):
    """Outer edges (one triangle) and interface edges (tag change), left-oriented."""
    owner: dict = {}
    for ti, (a, b, c) in enumerate(triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            owner.setdefault(_edge_key(u, v), []).append((ti, u, v))
    edges, tags = [], []
    for key, own in owner.items():
        if len(own) == 1:
            _, u, v = own[0]
            edges.append((u, v))
            tags.append(0)
        elif len(own) == 2:
            (t1, u1, v1), (t2, u2, v2) = own
            g1, g2 = tri_tags[t1], tri_tags[t2]
            if g1 != g2:
                if g1 != EXTERIOR and g2 != EXTERIOR:
                    raise GeometryError("two obstacle components share an edge")
                # orient with the obstacle triangle on the left
                u, v, g = (u1, v1, g1) if g1 != EXTERIOR else (u2, v2, g2)
                edges.append((u, v))
                tags.append(int(g))
        else:
            raise GeometryError("non-manifold edge in triangulation")
    return np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(tags, dtype=np.int64)


def _chain_loops(edges: np.ndarray) -> list[np.ndarray]:
    nxt = {int(a): int(b) for a, b in edges}
    if len(nxt) != len(edges):
        raise GeometryError("boundary is not a disjoint union of simple loops")
    loops, seen = [], set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, cur = [], start
        while cur not in seen:
            seen.add(cur)
            loop.append(cur)
            cur = nxt.get(cur)
            if cur is None:
                raise GeometryError("open boundary chain")
        if cur != start:
            raise GeometryError("boundary loops are not simple")
        loops.append(np.array(loop, dtype=np.int64))
    return loops


def _connected(triangles: np.ndarray) -> bool:
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components

    if len(triangles) == 0:
        return True
    n = int(triangles.max()) + 1
    r = np.r_[triangles[:, 0], triangles[:, 1], triangles[:, 2]]
    c = np.r_[triangles[:, 1], triangles[:, 2], triangles[:, 0]]
    g = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    used = np.unique(triangles)
    ncomp, labels = connected_components(g, directed=False)
    return len(np.unique(labels[used])) == 1


def _finalize(nodes, triangles, tri_tags, n_components, check_quality=True) -> TriMesh:
    """Renumber nodes per the module convention and build tags."""
    triangles = np.asarray(triangles, dtype=np.int64)
    tri_tags = np.asarray(tri_tags, dtype=np.int64)
    # drop unused nodes
    used = np.unique(triangles)
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes, triangles = np.asarray(nodes, dtype=float)[used], remap[triangles]
    # counter-clockwise triangles
    p = nodes[triangles]
    det = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = det < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    edges, etags = _build_tagged_edges(triangles, tri_tags)
    outer_loops = _chain_loops(edges[etags == 0])
    if len(outer_loops) != 1:
        raise GeometryError(f"outer boundary must be a single loop, found {len(outer_loops)}")
    outer = outer_loops[0]
    # start the loop at the node with the largest x (ties: smallest y) for stable numbering
    xs = nodes[outer]
    k = int(np.lexsort((xs[:, 1], -xs[:, 0]))[0])
    outer = np.roll(outer, -k)

    ext_nodes = np.unique(triangles[tri_tags == EXTERIOR])
    rest_ext = np.setdiff1d(ext_nodes, outer)
    interior_only = np.setdiff1d(np.arange(len(nodes)), np.union1d(ext_nodes, outer))
    order = np.r_[outer, rest_ext, interior_only]
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    mesh = TriMesh(nodes=nodes[order], triangles=inv[triangles], triangle_tags=tri_tags,
                   edges=inv[edges], edge_tags=etags, n_outer=len(outer), n_components=n_components)
    _check_invariants(mesh)
    return mesh


def _check_invariants(mesh: TriMesh) -> None:
    if np.any(mesh.areas <= 0):
        raise GeometryError("degenerate or negatively oriented triangle")
    ext = mesh.triangles[mesh.triangle_tags == EXTERIOR]
    if len(ext) == 0:
        raise GeometryError("no exterior triangles")
    if not _connected(ext):
        raise GeometryError("Omega minus closure(D) is not connected")
    all_e = np.sort(np.r_[mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]], axis=1)
    _, counts = np.unique(all_e, axis=0, return_counts=True)
    if counts.max() > 2:
        raise GeometryError("non-conforming triangulation")


def mesh_domain(outer: Shape, obstacle: Optional[ObstacleSpec] = None, h_target: float = 0.05,
                h_interface: Optional[float] = None, min_angle: float = _MIN_ANGLE_DEG) -> TriMesh:
    """Triangulate ``outer`` with every obstacle boundary resolved as interface edges.

    ``h_interface`` (default ``h_target``) sets the polygonization spacing of
    the obstacle boundaries; the interior is graded between the two sizes.
    """
    if not h_target > 0:
        raise ValueError("h_target must be positive")
    obstacle = obstacle or ObstacleSpec()
    hi = h_target if h_interface is None else float(h_interface)
    if not obstacle.empty:
        obstacle.validate(outer, h=min(h_target, hi))

    loops = [outer.polygonize(h_target)] + [c.polygonize(hi) for c in obstacle.components]
    verts, segs, off = [], [], 0
    for lp in loops:
        n = len(lp)
        verts.append(lp)
        idx = off + np.arange(n)
        segs.append(np.c_[idx, np.roll(idx, -1)])
        off += n
    regions = [[*c.inner_point(), j + 1, 0.0] for j, c in enumerate(obstacle.components)]
    pslg = {"vertices": np.vstack(verts), "segments": np.vstack(segs)}
    if regions:
        pslg["regions"] = np.array(regions)
    area = _AREA_FACTOR * math.sqrt(3) / 4 * h_target**2
    opts = f"pq{min_angle:g}a{area:.15f}" + ("A" if regions else "")
    out = _triangle.triangulate(pslg, opts)
    if regions:
        tags = np.rint(out["triangle_attributes"][:, 0]).astype(np.int64)
    else:
        tags = np.zeros(len(out["triangles"]), dtype=np.int64)
    mesh = _finalize(out["vertices"], out["triangles"], tags, len(obstacle.components))
    q = mesh.quality()
    logger.debug("mesh: %d nodes, %d triangles, h_max=%.4g, min angle=%.1f deg",
                 q.n_nodes, q.n_triangles, q.h_max, math.degrees(q.min_angle))
    return mesh


def exterior_submesh(mesh: TriMesh) -> TriMesh:
    """The triangles of Omega minus closure(D); interface edges become its Robin boundary."""
    if "exterior" in mesh._cache:
        return mesh._cache["exterior"]
    keep = mesh.triangle_tags == EXTERIOR
    n_ext = mesh.n_exterior_nodes
    sub = TriMesh(nodes=mesh.nodes[:n_ext], triangles=mesh.triangles[keep], triangle_tags=mesh.triangle_tags[keep],
                  edges=mesh.edges.copy(), edge_tags=mesh.edge_tags.copy(), n_outer=mesh.n_outer,
                  n_components=mesh.n_components, parent_nodes=np.arange(n_ext))
    mesh._cache["exterior"] = sub
    return sub


def interior_submesh(mesh: TriMesh, component: Optional[int] = None) -> TriMesh:
    """Triangles of D (or of the single component ``D_j``), renumbered.

    Interface edges keep their tags; they are the boundary of the submesh.
    ``n_outer`` is 0.
    """
    key = ("interior", component)
    if key in mesh._cache:
        return mesh._cache[key]
    keep = mesh.triangle_tags > 0 if component is None else mesh.triangle_tags == component + 1
    tris = mesh.triangles[keep]
    if not len(tris):
        raise GeometryError("mesh has no interior triangles for that component")
    used = np.unique(tris)
    remap = -np.ones(mesh.n_nodes, dtype=np.int64)
    remap[used] = np.arange(len(used))
    emask = mesh.edge_tags > 0 if component is None else mesh.edge_tags == component + 1
    sub = TriMesh(nodes=mesh.nodes[used], triangles=remap[tris], triangle_tags=mesh.triangle_tags[keep],
                  edges=remap[mesh.edges[emask]], edge_tags=mesh.edge_tags[emask], n_outer=0,
                  n_components=mesh.n_components, parent_nodes=used)
    mesh._cache[key] = sub
    return sub


@dataclass(frozen=True)
class BoundaryLoop:
    nodes: np.ndarray
    arclength: np.ndarray
    length: float
    component: Optional[int] = None


def boundary_nodes(mesh: TriMesh, tag) -> list[BoundaryLoop]:
    """Cyclically ordered node loops of a tagged boundary with arc-length parameter."""
    if not mesh.has_tag(tag):
        raise KeyError(f"mesh has no edges tagged {tag!r}")
    mask = mesh._edge_mask(tag)
    out = []
    for comp in np.unique(mesh.edge_tags[mask]):
        loops = _chain_loops(mesh.edges[mask & (mesh.edge_tags == comp)])
        for lp in loops:
            seg = np.hypot(*(mesh.nodes[np.roll(lp, -1)] - mesh.nodes[lp]).T)
            out.append(BoundaryLoop(lp, np.r_[0.0, np.cumsum(seg)[:-1]], float(seg.sum()),
                                    None if comp == 0 else int(comp) - 1))
    return out


def winding_number(points: np.ndarray, p) -> int:
    d = points - np.asarray(p)
    ang = np.arctan2(d[:, 1], d[:, 0])
    dang = np.diff(np.r_[ang, ang[:1]])
    dang = (dang + np.pi) % (2 * np.pi) - np.pi
    return int(round(dang.sum() / (2 * np.pi)))


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Red refinement: every triangle split into four; tags inherited.

    New boundary nodes are placed at edge midpoints (no snapping to curves).
    """
    t = mesh.triangles
    e = np.sort(np.r_[t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.reshape(3, -1).T
    mids = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    nodes = np.r_[mesh.nodes, mids]
    m = mesh.n_nodes + inv
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    mab, mbc, mca = m[:, 0], m[:, 1], m[:, 2]
    tris = np.r_[np.c_[a, mab, mca], np.c_[mab, b, mbc], np.c_[mca, mbc, c], np.c_[mab, mbc, mca]]
    tags = np.tile(mesh.triangle_tags, 4)
    return _finalize(nodes, tris, tags, mesh.n_components)


def write_mesh(mesh: TriMesh, path) -> None:
    """Plain-text export: NODES / TRIANGLES / EDGES sections, 0-based ids."""
    lines = [f"NODES {mesh.n_nodes}"]
    lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.nodes)]
    lines.append(f"TRIANGLES {mesh.n_triangles}")
    lines += [f"{i} {a} {b} {c} {g}" for i, ((a, b, c), g) in enumerate(zip(mesh.triangles, mesh.triangle_tags))]
    lines.append(f"EDGES {len(mesh.edges)}")
    lines += [f"{a} {b} {g}" for (a, b), g in zip(mesh.edges, mesh.edge_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    """Import a plain-text mesh; triangle tags drive the interface, edge tags are re-derived."""
    toks = Path(path).read_text().split("\n")
    it = iter([ln.split() for ln in toks if ln.strip()])
    nodes = tris = tags = None
    for head in it:
        if head[0] == "NODES":
            n = int(head[1])
            rows = [next(it) for _ in range(n)]
            nodes = np.zeros((n, 2))
            for r in rows:
                nodes[int(r[0])] = float(r[1]), float(r[2])
        elif head[0] == "TRIANGLES":
            m = int(head[1])
            rows = [next(it) for _ in range(m)]
            tris = np.zeros((m, 3), dtype=np.int64)
            tags = np.zeros(m, dtype=np.int64)
            for r in rows:
                i = int(r[0])
                tris[i] = int(r[1]), int(r[2]), int(r[3])
                tags[i] = int(r[4]) if len(r) > 4 else 0
        elif head[0] == "EDGES":
            for _ in range(int(head[1])):
                next(it)
        else:
            raise ValueError(f"unexpected section {head[0]!r} in mesh file")
    if nodes is None or tris is None:
        raise ValueError("mesh file needs NODES and TRIANGLES sections")
    return _finalize(nodes, tris, tags, int(tags.max()) if len(tags) else 0)
