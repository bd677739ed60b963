"""Analytic shapes, impedance data and needles.

Everything here is a small immutable value type.  Shapes know their exact
support function, how to polygonize their boundary at a target spacing and
how to classify a segment against their open interior / closure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import shapely
from shapely.geometry import LineString
from shapely.geometry import Polygon as _ShapelyPolygon

from .errors import GeometryError

_TOL = 1e-12

Point2 = tuple[float, float]


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"non-finite point {p!r}")
    return a


def _unit(omega) -> np.ndarray:
    w = np.asarray(omega, dtype=float).reshape(2)
    nrm = np.hypot(*w)
    if abs(nrm - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit vector, got |omega|={nrm}")
    return w


def _segment_point_distance(p, q, c) -> float:
    d = q - p
    dd = float(d @ d)
    if dd == 0.0:
        return float(np.hypot(*(c - p)))
    s = min(1.0, max(0.0, float((c - p) @ d) / dd))
    return float(np.hypot(*(p + s * d - c)))


@dataclass(frozen=True)
class Disk:
    center: Point2
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(map(float, _as_point(self.center))))
        if not self.radius > 0:
            raise GeometryError(f"disk radius must be positive, got {self.radius}")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def perimeter(self) -> float:
        return 2 * math.pi * self.radius

    def support(self, omega) -> float:
        w = _unit(omega)
        return float(np.dot(self.center, w)) + self.radius

    def contains(self, pts, closed: bool = False) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        r = np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1])
        tol = _TOL * max(1.0, self.radius)
        return r <= self.radius + tol if closed else r < self.radius - tol

    def polygonize(self, h: float) -> np.ndarray:
        n = max(8, math.ceil(self.perimeter / h))
        t = 2 * math.pi * np.arange(n) / n
        return np.c_[self.center[0] + self.radius * np.cos(t), self.center[1] + self.radius * np.sin(t)]

    def translate(self, d) -> "Disk":
        d = _as_point(d)
        return Disk((self.center[0] + d[0], self.center[1] + d[1]), self.radius)

    def scale(self, s: float) -> "Disk":
        return Disk((s * self.center[0], s * self.center[1]), s * self.radius)

    def inner_point(self) -> np.ndarray:
        return np.array(self.center)

    def nearest_boundary_point(self, p) -> np.ndarray:
        p = _as_point(p)
        c = np.array(self.center)
        d = p - c
        r = np.hypot(*d)
        if r == 0.0:
            d, r = np.array([1.0, 0.0]), 1.0
        return c + self.radius * d / r

    def boundary_distance(self, p) -> float:
        p = _as_point(p)
        return abs(float(np.hypot(*(p - self.center))) - self.radius)

    def bounding_radius(self, about=None) -> float:
        about = self.center if about is None else about
        return float(np.hypot(*(np.asarray(self.center) - about))) + self.radius

    def classify_segment(self, p, q) -> str:
        """'misses', 'hits_open' or 'grazes' for the closed segment [p, q]."""
        dmin = _segment_point_distance(_as_point(p), _as_point(q), np.asarray(self.center))
        tol = 1e-10 * max(1.0, self.radius)
        if dmin > self.radius + tol:
            return "misses"
        if dmin < self.radius - tol:
            return "hits_open"
        return "grazes"


@dataclass(frozen=True)
class Ellipse:
    center: Point2
    semi_axes: tuple[float, float]
    rotation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(map(float, _as_point(self.center))))
        a, b = map(float, self.semi_axes)
        if not (a > 0 and b > 0):
            raise GeometryError(f"ellipse semi-axes must be positive, got {self.semi_axes}")
        object.__setattr__(self, "semi_axes", (a, b))
        object.__setattr__(self, "rotation", float(self.rotation))

    def _frame(self):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array([[c, -s], [s, c]])

    def _to_unit(self, pts) -> np.ndarray:
        # affine map sending the ellipse to the unit disk
        pts = np.atleast_2d(np.asarray(pts, dtype=float)) - self.center
        local = pts @ self._frame()
        return local / np.array(self.semi_axes)

    @property
    def area(self) -> float:
        return math.pi * self.semi_axes[0] * self.semi_axes[1]

    @property
    def perimeter(self) -> float:
        t = np.linspace(0, 2 * math.pi, 4097)
        pts = self._param(t)
        return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))

    def _param(self, t) -> np.ndarray:
        a, b = self.semi_axes
        local = np.c_[a * np.cos(t), b * np.sin(t)]
        return local @ self._frame().T + self.center

    def support(self, omega) -> float:
        w = _unit(omega)
        wl = self._frame().T @ w
        a, b = self.semi_axes
        return float(np.dot(self.center, w)) + math.hypot(a * wl[0], b * wl[1])

    def contains(self, pts, closed: bool = False) -> np.ndarray:
        r = np.hypot(*self._to_unit(pts).T)
        return r <= 1 + _TOL if closed else r < 1 - _TOL

    def polygonize(self, h: float) -> np.ndarray:
        # equal arc-length resampling of a fine parametrization
        t = np.linspace(0, 2 * math.pi, 8193)
        pts = self._param(t)
        s = np.r_[0.0, np.cumsum(np.hypot(*np.diff(pts, axis=0).T))]
        n = max(8, math.ceil(s[-1] / h))
        targets = s[-1] * np.arange(n) / n
        tt = np.interp(targets, s, t)
        return self._param(tt)

    def translate(self, d) -> "Ellipse":
        d = _as_point(d)
        return Ellipse((self.center[0] + d[0], self.center[1] + d[1]), self.semi_axes, self.rotation)

    def scale(self, s: float) -> "Ellipse":
        return Ellipse((s * self.center[0], s * self.center[1]),
                       (s * self.semi_axes[0], s * self.semi_axes[1]), self.rotation)

    def inner_point(self) -> np.ndarray:
        return np.array(self.center)

    def nearest_boundary_point(self, p) -> np.ndarray:
        p = _as_point(p)
        t = np.linspace(0, 2 * math.pi, 4096, endpoint=False)
        pts = self._param(t)
        i = int(np.argmin(np.hypot(*(pts - p).T)))
        dt = 2 * math.pi / 4096
        # golden-section polish on the bracketing parameter interval
        lo, hi = t[i] - dt, t[i] + dt
        g = (math.sqrt(5) - 1) / 2
        for _ in range(60):
            m1, m2 = hi - g * (hi - lo), lo + g * (hi - lo)
            d1 = np.hypot(*(self._param([m1])[0] - p))
            d2 = np.hypot(*(self._param([m2])[0] - p))
            if d1 < d2:
                hi = m2
            else:
                lo = m1
        return self._param([(lo + hi) / 2])[0]

    def boundary_distance(self, p) -> float:
        return float(np.hypot(*(self.nearest_boundary_point(p) - _as_point(p))))

    def bounding_radius(self, about=None) -> float:
        about = self.center if about is None else about
        return float(np.hypot(*(np.asarray(self.center) - about))) + max(self.semi_axes)

    def classify_segment(self, p, q) -> str:
        pu, qu = self._to_unit([p, q])
        dmin = _segment_point_distance(pu, qu, np.zeros(2))
        if dmin > 1 + 1e-10:
            return "misses"
        if dmin < 1 - 1e-10:
            return "hits_open"
        return "grazes"


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[Point2, ...]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise GeometryError("polygon has non-finite vertices")
        if not _ShapelyPolygon(v).is_valid or not LineString(np.r_[v, v[:1]]).is_simple:
            raise GeometryError("polygon must be simple (non-self-intersecting)")
        if _signed_area(v) <= 0:
            raise GeometryError("polygon must be positively (counter-clockwise) oriented")
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))

    @property
    def _v(self) -> np.ndarray:
        return np.asarray(self.vertices)

    @property
    def _shp(self) -> _ShapelyPolygon:
        return _ShapelyPolygon(self._v)

    @property
    def area(self) -> float:
        return _signed_area(self._v)

    @property
    def perimeter(self) -> float:
        v = self._v
        return float(np.sum(np.hypot(*(np.roll(v, -1, axis=0) - v).T)))

    def support(self, omega) -> float:
        return float(np.max(self._v @ _unit(omega)))

    def contains(self, pts, closed: bool = False) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        geoms = shapely.points(pts)
        poly = self._shp
        return shapely.covers(poly, geoms) if closed else shapely.contains_properly(poly, geoms)

    def polygonize(self, h: float) -> np.ndarray:
        v = self._v
        out = []
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            n = max(1, math.ceil(np.hypot(*(b - a)) / h))
            s = np.arange(n)[:, None] / n
            out.append(a + s * (b - a))
        return np.vstack(out)

    def translate(self, d) -> "Polygon":
        return Polygon(tuple(map(tuple, (self._v + _as_point(d)).tolist())))

    def scale(self, s: float) -> "Polygon":
        return Polygon(tuple(map(tuple, (s * self._v).tolist())))

    def inner_point(self) -> np.ndarray:
        p = self._shp.representative_point()
        return np.array([p.x, p.y])

    def nearest_boundary_point(self, p) -> np.ndarray:
        ring = self._shp.exterior
        q = ring.interpolate(ring.project(shapely.Point(*_as_point(p))))
        return np.array([q.x, q.y])

    def boundary_distance(self, p) -> float:
        return float(self._shp.exterior.distance(shapely.Point(*_as_point(p))))

    def bounding_radius(self, about=None) -> float:
        about = self._v.mean(axis=0) if about is None else np.asarray(about)
        return float(np.max(np.hypot(*(self._v - about).T)))

    @property
    def center(self) -> Point2:
        c = self._shp.centroid
        return (c.x, c.y)

    def classify_segment(self, p, q) -> str:
        line = LineString([_as_point(p), _as_point(q)])
        m = self._shp.relate(line)
        # DE-9IM: interior(poly) against interior / boundary of the segment
        if m[0] != "F" or m[1] != "F":
            return "hits_open"
        if m[3] != "F" or m[4] != "F":
            return "grazes"
        return "misses"


Shape = Union[Disk, Ellipse, Polygon]


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def shape_center(shape: Shape) -> np.ndarray:
    return np.asarray(shape.center, dtype=float)


@dataclass(frozen=True)
class ImpedanceSpec:
    """Piecewise-constant impedance, one complex value per obstacle component.

    ``re`` and ``im`` are either scalars (same value on every component) or
    sequences with one entry per component.
    """

    re: Union[float, tuple[float, ...]] = 0.0
    im: Union[float, tuple[float, ...]] = 1.0

    def __post_init__(self):
        for name in ("re", "im"):
            val = getattr(self, name)
            if isinstance(val, (list, tuple, np.ndarray)):
                object.__setattr__(self, name, tuple(float(x) for x in val))
            else:
                object.__setattr__(self, name, float(val))
        ims = self.im if isinstance(self.im, tuple) else (self.im,)
        if min(ims) <= 0:
            raise GeometryError("impedance imaginary part must be bounded below by a positive constant")

    @classmethod
    def constant(cls, value: complex) -> "ImpedanceSpec":
        value = complex(value)
        return cls(value.real, value.imag)

    def value(self, component: int) -> complex:
        re = self.re[component] if isinstance(self.re, tuple) else self.re
        im = self.im[component] if isinstance(self.im, tuple) else self.im
        return complex(re, im)

    def values(self, n_components: int) -> np.ndarray:
        return np.array([self.value(j) for j in range(n_components)], dtype=complex)

    @property
    def c_min(self) -> float:
        ims = self.im if isinstance(self.im, tuple) else (self.im,)
        return min(ims)

    @property
    def bound(self) -> float:
        """L = ||Re lambda||_inf + ||Im lambda||_inf."""
        res = self.re if isinstance(self.re, tuple) else (self.re,)
        ims = self.im if isinstance(self.im, tuple) else (self.im,)
        return max(abs(r) for r in res) + max(abs(i) for i in ims)

    def scaled(self, s: float) -> "ImpedanceSpec":
        f = (lambda v: tuple(s * x for x in v) if isinstance(v, tuple) else s * v)
        return ImpedanceSpec(f(self.re), f(self.im))


@dataclass(frozen=True)
class ObstacleSpec:
    components: tuple[Shape, ...] = ()
    impedance: ImpedanceSpec = field(default_factory=ImpedanceSpec)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        for j, re_im in enumerate((self.impedance.re, self.impedance.im)):
            if isinstance(re_im, tuple) and len(re_im) != len(self.components):
                raise GeometryError("impedance has a per-component list of the wrong length")

    @property
    def empty(self) -> bool:
        return len(self.components) == 0

    def contains(self, pts, closed: bool = False) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts), dtype=bool)
        for c in self.components:
            out |= c.contains(pts, closed=closed)
        return out

    def boundary_distance(self, p) -> float:
        if self.empty:
            return math.inf
        return min(c.boundary_distance(p) for c in self.components)

    def translate(self, d) -> "ObstacleSpec":
        return ObstacleSpec(tuple(c.translate(d) for c in self.components), self.impedance)

    @property
    def area(self) -> float:
        return sum(c.area for c in self.components)

    def validate(self, domain: Shape, h: float = 1e-2) -> None:
        """Closures pairwise disjoint and strictly inside ``domain``."""
        hs = min(h, 1e-2)
        dom = _ShapelyPolygon(domain.polygonize(hs / 4))
        polys = []
        for j, c in enumerate(self.components):
            p = _ShapelyPolygon(c.polygonize(hs / 4))
            if not dom.contains_properly(p) or dom.exterior.distance(p) <= 0:
                raise GeometryError(f"obstacle component {j} is not strictly inside the domain")
            polys.append(p)
        for i in range(len(polys)):
            for j in range(i + 1, len(polys)):
                if polys[i].distance(polys[j]) <= 0:
                    raise GeometryError(f"obstacle components {i} and {j} have intersecting closures")


def support_function_exact(shape, omega) -> float:
    """sup over the shape of x . omega; unions (ObstacleSpec / sequences) take the max."""
    if isinstance(shape, ObstacleSpec):
        shape = shape.components
    if isinstance(shape, (list, tuple)):
        if not shape:
            raise GeometryError("support function of an empty set is undefined")
        return max(c.support(omega) for c in shape)
    return shape.support(omega)


@dataclass(frozen=True)
class Needle:
    """Injective polyline from a point of the outer boundary to the tip."""

    vertices: tuple[Point2, ...]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise GeometryError("needle needs at least two vertices")
        if not np.all(np.isfinite(v)):
            raise GeometryError("needle has non-finite vertices")
        if len(v) > 2 and not LineString(v).is_simple:
            raise GeometryError("needle polyline must be injective")
        if np.any(np.hypot(*np.diff(v, axis=0).T) == 0):
            raise GeometryError("needle has repeated vertices")
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))

    @property
    def tip(self) -> np.ndarray:
        return np.asarray(self.vertices[-1])

    @property
    def anchor(self) -> np.ndarray:
        return np.asarray(self.vertices[0])

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.vertices)

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.points, axis=0).T)))

    def segments(self):
        v = self.points
        return list(zip(v[:-1], v[1:]))

    def point_at(self, s) -> np.ndarray:
        """Point at arc-length fraction s in [0, 1] measured from the anchor; s may be an array."""
        v = self.points
        seg = np.hypot(*np.diff(v, axis=0).T)
        acc = np.r_[0.0, np.cumsum(seg)]
        target = np.asarray(s, dtype=float) * acc[-1]
        i = np.minimum(np.searchsorted(acc, target, side="right") - 1, len(seg) - 1)
        t = (target - acc[i]) / seg[i]
        return v[i] + t[..., None] * (v[i + 1] - v[i])

    def distance(self, pts) -> np.ndarray:
        """Euclidean distance from each point to the polyline."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        best = np.full(len(pts), np.inf)
        for a, b in self.segments():
            d = b - a
            s = np.clip(((pts - a) @ d) / (d @ d), 0.0, 1.0)
            best = np.minimum(best, np.hypot(*(a + s[:, None] * d - pts).T))
        return best


def validate_needle(needle: Needle, domain: Shape) -> None:
    tol = 1e-9 * max(1.0, domain.bounding_radius())
    if domain.boundary_distance(needle.anchor) > tol:
        raise GeometryError("needle must start on the outer boundary")
    if not domain.contains(needle.tip)[0]:
        raise GeometryError("needle tip must lie strictly inside the domain")
    # sample interior points of the polyline; exact for convex domains, dense check otherwise
    s = np.linspace(0, 1, 2001)[1:]
    pts = needle.point_at(s)
    if not np.all(domain.contains(pts)):
        raise GeometryError("needle leaves the domain")


def straight_needle(tip, boundary_anchor=None, domain: Shape = None) -> Needle:
    """Two-vertex needle from ``boundary_anchor`` on the domain boundary to ``tip``.

    The anchor defaults to the boundary point nearest to the tip.
    """
    if domain is None:
        raise TypeError("straight_needle requires the domain shape")
    tip = _as_point(tip)
    if boundary_anchor is None:
        boundary_anchor = domain.nearest_boundary_point(tip)
    needle = Needle((tuple(_as_point(boundary_anchor)), tuple(tip)))
    validate_needle(needle, domain)
    return needle


def needle_hits(needle: Needle, obstacle: ObstacleSpec) -> str:
    """Classify sigma(]0,1]) against D and its closure.

    Returns ``'misses_closure'``, ``'hits_open_D'`` or ``'grazes_boundary_only'``.
    """
    grazes = False
    for a, b in needle.segments():
        for comp in obstacle.components:
            cls = comp.classify_segment(a, b)
            if cls == "hits_open":
                return "hits_open_D"
            grazes |= cls == "grazes"
    return "grazes_boundary_only" if grazes else "misses_closure"


def rotated_needle(tip, domain: Shape, angle: float) -> Needle:
    """Straight needle whose direction from the tip is the default one rotated by ``angle``."""
    tip = _as_point(tip)
    base = domain.nearest_boundary_point(tip) - tip
    nb = np.hypot(*base)
    base = base / nb if nb > 0 else np.array([1.0, 0.0])
    c, s = math.cos(angle), math.sin(angle)
    d = np.array([c * base[0] - s * base[1], s * base[0] + c * base[1]])
    anchor = ray_exit(domain, tip, d)
    return straight_needle(tip, anchor, domain)


def ray_exit(domain: Shape, p, d) -> np.ndarray:
    """First boundary point hit by the ray p + t d, t > 0 (bisection on containment)."""
    p = _as_point(p)
    d = np.asarray(d, dtype=float) / np.hypot(*d)
    hi = 2.0 * domain.bounding_radius(p) + 1.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if domain.contains(p + mid * d, closed=True)[0]:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    q = p + lo * d
    if isinstance(domain, Disk):
        # snap exactly onto the circle
        q = domain.nearest_boundary_point(q)
    return q


def directions(m: int, offset: float = 0.0) -> np.ndarray:
    t = offset + 2 * math.pi * np.arange(m) / m
    return np.c_[np.cos(t), np.sin(t)]


def shape_from_dict(d: dict) -> Shape:
    kind = d.get("type")
    if kind == "disk":
        return Disk(tuple(d["center"]), float(d["radius"]))
    if kind == "ellipse":
        return Ellipse(tuple(d["center"]), tuple(d["semi_axes"]), float(d.get("rotation", 0.0)))
    if kind == "polygon":
        return Polygon(tuple(map(tuple, d["vertices"])))
    raise ValueError(f"unknown shape type {kind!r}")


def shape_to_dict(s: Shape) -> dict:
    if isinstance(s, Disk):
        return {"type": "disk", "center": list(s.center), "radius": s.radius}
    if isinstance(s, Ellipse):
        return {"type": "ellipse", "center": list(s.center), "semi_axes": list(s.semi_axes),
                "rotation": s.rotation}
    return {"type": "polygon", "vertices": [list(v) for v in s.vertices]}


def obstacle_from_dict(d: dict) -> ObstacleSpec:
    comps = tuple(shape_from_dict(c) for c in d.get("components", []))
    lam = d.get("impedance", {"re": 0.0, "im": 1.0})
    re, im = lam.get("re", 0.0), lam.get("im", 1.0)
    return ObstacleSpec(comps, ImpedanceSpec(tuple(re) if isinstance(re, list) else re,
                                             tuple(im) if isinstance(im, list) else im))


def obstacle_to_dict(o: ObstacleSpec) -> dict:
    lam = o.impedance
    return {"components": [shape_to_dict(c) for c in o.components],
            "impedance": {"re": list(lam.re) if isinstance(lam.re, tuple) else lam.re,
                       "im": list(lam.im) if isinstance(lam.im, tuple) else lam.im}}


def needle_to_dict(n: Needle) -> dict:
    return {"vertices": [list(v) for v in n.vertices]}


def needle_from_dict(d: dict) -> Needle:
    return Needle(tuple(map(tuple, d["vertices"])))


def as_shapes(obj) -> Sequence[Shape]:
    if isinstance(obj, ObstacleSpec):
        return obj.components
    if isinstance(obj, (list, tuple)):
        return obj
    return (obj,)
