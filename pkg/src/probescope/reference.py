"""Closed-form reference solutions used to validate the finite element solver.

The concentric annulus ``a < r < b`` with Dirichlet data on ``r = b`` and the
impedance condition ``du/dr + lambda u = 0`` on ``r = a`` separates in polar
coordinates; each Fourier mode is a combination of ``J_n(kr)`` and ``Y_n(kr)``
(or ``r^n``, ``r^-n`` and ``log r`` when ``k = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy import special

from .fem import FeFunction
from .mesh import TriMesh
from .quadrature import TRI_BARY, triangle_points


def _radial_pair(n: int, k: float):
    """Two radial solutions of mode n and their r-derivatives, as functions of r."""
    n = abs(n)
    if k > 0:
        return ((lambda r: special.jv(n, k * r), lambda r: k * special.jvp(n, k * r)),
                (lambda r: special.yv(n, k * r), lambda r: k * special.yvp(n, k * r)))
    if n == 0:
        return ((lambda r: np.ones_like(r), lambda r: np.zeros_like(r)),
                (lambda r: np.log(r), lambda r: 1.0 / r))
    return ((lambda r: r**n, lambda r: n * r ** (n - 1)),
            (lambda r: r ** (-n), lambda r: -n * r ** (-n - 1)))


@dataclass(frozen=True)
class AnnulusSolution:
    """u(r, theta) = sum_n (A_n f_n(r) + B_n g_n(r)) exp(i n theta)."""

    k: float
    inner: float
    outer: float
    modes: tuple  # (n, A_n, B_n)

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        r = np.hypot(pts[:, 0], pts[:, 1])
        th = np.arctan2(pts[:, 1], pts[:, 0])
        out = np.zeros(len(pts), dtype=complex)
        for n, A, B in self.modes:
            (f, _), (g, _) = _radial_pair(n, self.k)
            out += (A * f(r) + B * g(r)) * np.exp(1j * n * th)
        return out


def annulus_solution(k: float, inner: float, outer: float, impedance: complex,
                     coefficients: Mapping[int, complex]) -> AnnulusSolution:
    """Solve mode by mode for Dirichlet data sum_n c_n exp(i n theta) on the outer circle.

    The impedance condition uses the normal pointing out of the inner disk,
    i.e. ``du/dr + impedance * u = 0`` at ``r = inner``.
    """
    modes = []
    for n, c in sorted(coefficients.items()):
        (f, fp), (g, gp) = _radial_pair(n, k)
        a, b = float(inner), float(outer)
        M = np.array([[f(np.array(b)), g(np.array(b))],
                      [fp(np.array(a)) + impedance * f(np.array(a)), gp(np.array(a)) + impedance * g(np.array(a))]],
                     dtype=complex)
        A, B = np.linalg.solve(M, np.array([c, 0.0], dtype=complex))
        modes.append((int(n), complex(A), complex(B)))
    return AnnulusSolution(float(k), float(inner), float(outer), tuple(modes))


def fourier_coefficients(f: Callable[[np.ndarray], np.ndarray], n_max: int, n_theta: int = 1024) -> dict:
    """c_n, |n| <= n_max, of a function of the angle by the FFT (trapezoidal rule)."""
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    c = np.fft.fft(f(th)) / n_theta
    return {n: complex(c[n % n_theta]) for n in range(-n_max, n_max + 1)}


def l2_error(u: FeFunction, exact: Callable[[np.ndarray], np.ndarray], relative: bool = True) -> float:
    """L2 norm of u - exact over the mesh of u by the 12-point triangle rule."""
    mesh: TriMesh = u.mesh
    p = mesh.nodes[mesh.triangles]
    pts, w = triangle_points(p)
    uh = np.einsum("qi,ti->tq", TRI_BARY, u.values[mesh.triangles])
    ex = exact(pts.reshape(-1, 2)).reshape(uh.shape)
    err = float(np.sqrt(np.sum(w * np.abs(uh - ex) ** 2)))
    if not relative:
        return err
    return err / float(np.sqrt(np.sum(w * np.abs(ex) ** 2)))
