"""Quadrature rules for analytic integrands on edges, triangles, disks and cones."""

from __future__ import annotations

import math

import numpy as np

# Dunavant degree-6 rule (12 points), barycentric coordinates and weights (sum 1)
_D6 = np.array([
    [0.249286745170910, 0.249286745170910, 0.501426509658179, 0.116786275726379],
    [0.249286745170910, 0.501426509658179, 0.249286745170910, 0.116786275726379],
    [0.501426509658179, 0.249286745170910, 0.249286745170910, 0.116786275726379],
    [0.063089014491502, 0.063089014491502, 0.873821971016996, 0.050844906370207],
    [0.063089014491502, 0.873821971016996, 0.063089014491502, 0.050844906370207],
    [0.873821971016996, 0.063089014491502, 0.063089014491502, 0.050844906370207],
    [0.310352451033784, 0.636502499121399, 0.053145049844817, 0.082851075618374],
    [0.636502499121399, 0.053145049844817, 0.310352451033784, 0.082851075618374],
    [0.053145049844817, 0.310352451033784, 0.636502499121399, 0.082851075618374],
    [0.636502499121399, 0.310352451033784, 0.053145049844817, 0.082851075618374],
    [0.310352451033784, 0.053145049844817, 0.636502499121399, 0.082851075618374],
    [0.053145049844817, 0.636502499121399, 0.310352451033784, 0.082851075618374],
])
TRI_BARY = _D6[:, :3]
TRI_W = _D6[:, 3]


def gauss_segment(n: int):
    """Gauss-Legendre nodes on [0, 1] and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_points(tri_pts: np.ndarray):
    """Quadrature points (T, 12, 2) and weights (T, 12) for triangles (T, 3, 2)."""
    pts = np.einsum("qi,tid->tqd", TRI_BARY, tri_pts)
    d1 = tri_pts[:, 1] - tri_pts[:, 0]
    d2 = tri_pts[:, 2] - tri_pts[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return pts, area[:, None] * TRI_W[None, :]


def _split4(tri: np.ndarray) -> np.ndarray:
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return np.concatenate([np.stack(t, axis=1) for t in
                           ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))])


def adaptive_triangle_points(tri_pts: np.ndarray, center, ratio: float = 3.0, max_level: int = 12,
                             min_size: float = 0.0):
    """Quadrature points refined towards a (near-)singular point ``center``.

    A triangle is split in four while its diameter exceeds ``distance / ratio``.
    Returns flat arrays of points (Q, 2) and weights (Q,).
    """
    center = np.asarray(center, dtype=float)
    done_pts, done_w = [], []
    cur = np.asarray(tri_pts, dtype=float)
    for level in range(max_level + 1):
        if not len(cur):
            break
        diam = np.max(np.stack([np.hypot(*(cur[:, i] - cur[:, (i + 1) % 3]).T) for i in range(3)]), axis=0)
        cent = cur.mean(axis=1)
        dist = np.maximum(np.hypot(*(cent - center).T) - diam, 0.0)
        refine = (diam * ratio > dist) & (diam > min_size) & (level < max_level)
        p, w = triangle_points(cur[~refine])
        done_pts.append(p.reshape(-1, 2))
        done_w.append(w.reshape(-1))
        cur = _split4(cur[refine])
    return np.concatenate(done_pts), np.concatenate(done_w)


def edge_points(a: np.ndarray, b: np.ndarray, n: int = 3, center=None, ratio: float = 3.0,
                max_level: int = 20):
    """Gauss points on segments a->b (E, 2); optional dyadic refinement towards ``center``.

    Returns points (Q, 2), weights (Q,) (arc-length measure), and for each
    point the edge index and the local coordinate s in [0, 1].
    """
    s, w = gauss_segment(n)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    idx = np.arange(len(a))
    s0 = np.zeros(len(a))
    s1 = np.ones(len(a))
    out = []
    for level in range(max_level + 1):
        if not len(idx):
            break
        pa = a[idx] + s0[:, None] * (b[idx] - a[idx])
        pb = a[idx] + s1[:, None] * (b[idx] - a[idx])
        ln = np.hypot(*(pb - pa).T)
        if center is None or level == max_level:
            refine = np.zeros(len(idx), dtype=bool)
        else:
            mid = 0.5 * (pa + pb)
            dist = np.maximum(np.hypot(*(mid - center).T) - ln / 2, 0.0)
            refine = ln * ratio > dist
        keep = ~refine
        ss = s0[keep, None] + (s1 - s0)[keep, None] * s[None, :]
        pts = a[idx[keep], None, :] + ss[..., None] * (b[idx[keep]] - a[idx[keep]])[:, None, :]
        out.append((pts.reshape(-1, 2), (ln[keep, None] * w[None, :]).reshape(-1),
                    np.repeat(idx[keep], n), ss.reshape(-1)))
        sm = 0.5 * (s0[refine] + s1[refine])
        idx = np.r_[idx[refine], idx[refine]]
        s0, s1 = np.r_[s0[refine], sm], np.r_[sm, s1[refine]]
    return tuple(np.concatenate(c) for c in zip(*out))


def polar_sector_points(center, radius: float, theta0: float, theta1: float, nr: int = 64,
                        nt: int = 64, r_split=None):
    """Gauss product rule on the sector {r < radius, theta0 < theta < theta1}.

    ``r_split`` is an optional increasing list of radii where the radial rule
    is broken (composite Gauss), useful when the integrand varies on several scales.
    """
    center = np.asarray(center, dtype=float)
    breaks = [0.0] + sorted(r for r in (r_split or []) if 0 < r < radius) + [radius]
    xr, wr = gauss_segment(nr)
    xt, wt = gauss_segment(nt)
    pts, wts = [], []
    th = theta0 + (theta1 - theta0) * xt
    for r0, r1 in zip(breaks[:-1], breaks[1:]):
        r = r0 + (r1 - r0) * xr
        R, T = np.meshgrid(r, th, indexing="ij")
        W = np.outer(wr * (r1 - r0) * r, wt * (theta1 - theta0))
        pts.append(np.c_[center[0] + (R * np.cos(T)).ravel(), center[1] + (R * np.sin(T)).ravel()])
        wts.append(W.ravel())
    return np.concatenate(pts), np.concatenate(wts)


def geometric_breaks(r_min: float, r_max: float, factor: float = 2.0) -> list[float]:
    out, r = [], r_min
    while r < r_max:
        out.append(r)
        r *= factor
    return out


def disk_points(center, radius: float, nr: int = 48, nt: int = 96, r_split=None):
    return polar_sector_points(center, radius, 0.0, 2 * math.pi, nr, nt, r_split)
