"""Weak Dirichlet-to-Neumann pairings and the gap functional.

Both maps are evaluated through the volume bilinear forms, never through
numerical normal derivatives:

    <Lambda f, h> = psi^T K u

where ``u`` solves the problem with data ``f`` and ``psi`` is any discrete
extension of ``h``.  Because ``K u`` vanishes on free rows, the value does
not depend on the extension, and the gap identity with the four grouped
energy terms plus the imaginary impedance term holds exactly at the discrete
level (up to the solver residual).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .fem import FeFunction, HelmholtzOperator, boundary_mass, mass_matrix, stiffness_matrix
from .geometry import ImpedanceSpec
from .mesh import INTERFACE, TriMesh, exterior_submesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DtnGap:
    """<(Lambda_0 - Lambda_D) f, conj(f)> and its decomposition.

    ``parts`` keys: ``exterior`` (energy of u - v off D), ``interior``
    (energy of v in D), ``boundary_re`` (Re lambda term), ``boundary_im``
    (-2 Im lambda Im((u - v) conj v) term) and ``imaginary``
    (i int Im lambda |u|^2).
    """

    value: complex
    parts: dict = field(default_factory=dict)

    @property
    def real(self) -> float:
        return float(self.value.real)

    @property
    def parts_sum(self) -> complex:
        return complex(sum(self.parts.values()))


def pair_dtn(mesh: TriMesh, region: str, impedance: Optional[ImpedanceSpec], k: float, f, h,
             extension: Optional[np.ndarray] = None, operator: Optional[HelmholtzOperator] = None) -> complex:
    """<Lambda f, h> (bilinear, no conjugation).

    ``region='full'`` gives Lambda_0, ``'exterior'`` gives Lambda_D.  The
    extension of ``h`` defaults to zero at all non-boundary nodes.
    """
    op = operator or HelmholtzOperator(mesh, region, impedance, k)
    u = op.solve(f)
    h = np.asarray(h, dtype=complex)
    if extension is None:
        return complex(h @ op.neumann_functional(u))
    psi = np.asarray(extension, dtype=complex)
    if not np.allclose(psi[:op.nb], h):
        raise ValueError("extension does not match h on the outer boundary")
    return complex(psi @ (op.K @ u.values))


class DtnPair:
    """Factorized Lambda_0 and Lambda_D sharing one parent mesh."""

    def __init__(self, mesh: TriMesh, impedance: Optional[ImpedanceSpec], k: float):
        self.mesh = mesh
        self.impedance = impedance
        self.k = float(k)
        self.empty = not mesh.has_tag(INTERFACE)
        self.background = HelmholtzOperator(mesh, "full", None, k)
        self.obstacle = None if self.empty else HelmholtzOperator(mesh, "exterior", impedance, k)
        self.n_outer = mesh.n_outer
        self._gap_form = None
        if not self.empty:
            ext = exterior_submesh(mesh)
            self.n_ext = ext.n_nodes
            self._a_ext = (stiffness_matrix(ext) - self.k**2 * mass_matrix(ext)).tocsr()
            kd = stiffness_matrix(mesh, "interior") - self.k**2 * mass_matrix(mesh, "interior")
            self._a_int = kd.tocsr()
            lam = impedance.values(mesh.n_components)
            self._b_re = boundary_mass(mesh, INTERFACE, lam.real)[:self.n_ext, :self.n_ext].tocsr()
            self._b_im = boundary_mass(mesh, INTERFACE, lam.imag)[:self.n_ext, :self.n_ext].tocsr()

    @property
    def outer_points(self) -> np.ndarray:
        return self.mesh.nodes[:self.n_outer]

    def solve_pair(self, f) -> tuple[FeFunction, Optional[FeFunction]]:
        v = self.background.solve(f)
        u = None if self.empty else self.obstacle.solve(f)
        return v, u

    def gap(self, f, with_parts: bool = True) -> DtnGap:
        f = np.asarray(f, dtype=complex)
        if self.empty:
            return DtnGap(0j, {"exterior": 0.0, "interior": 0.0, "boundary_re": 0.0, "boundary_im": 0.0,
                               "imaginary": 0j})
        v, u = self.solve_pair(f)
        fb = np.conj(f)
        lhs = fb @ self.background.neumann_functional(v) - fb @ self.obstacle.neumann_functional(u)
        parts = self.parts(u.values, v.values) if with_parts else {}
        return DtnGap(complex(lhs), parts)

    def parts(self, u: np.ndarray, v: np.ndarray) -> dict:
        n = self.n_ext
        e = u - v[:n]
        vv = v[:n]
        return {
            "exterior": float(np.vdot(e, self._a_ext @ e).real),
            "interior": float(np.vdot(v, self._a_int @ v).real),
            "boundary_re": float((np.vdot(vv, self._b_re @ vv) - np.vdot(e, self._b_re @ e)).real),
            "boundary_im": float(-2.0 * np.vdot(vv, self._b_im @ e).imag),
            "imaginary": 1j * float(np.vdot(u, self._b_im @ u).real),
        }

    def gap_values(self, F: np.ndarray, threads: int = 1, chunk: int = 32) -> np.ndarray:
        """Gap values for the columns of F (n_outer, m), batched through the factorizations."""
        F = np.asarray(F, dtype=complex)
        if F.ndim == 1:
            F = F[:, None]
        m = F.shape[1]
        if self.empty:
            return np.zeros(m, dtype=complex)
        bounds = [(i, min(i + chunk, m)) for i in range(0, m, chunk)]

        def work(b):
            Fc = F[:, b[0]:b[1]]
            V = self.background.solve_many(Fc)
            U = self.obstacle.solve_many(Fc)
            nb = self.n_outer
            n0 = self.background.K_bb @ V[:nb] + self.background.K_bf @ V[nb:]
            nd = self.obstacle.K_bb @ U[:nb] + self.obstacle.K_bf @ U[nb:]
            return np.sum(np.conj(Fc) * (n0 - nd), axis=0)

        if threads > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                res = list(ex.map(work, bounds))
        else:
            res = [work(b) for b in bounds]
        return np.concatenate(res)

    def gap_form(self) -> np.ndarray:
        """Dense N_0 - N_D over outer nodes (cached): gap(f) = conj(f) @ (N_0 - N_D) @ f."""
        if self._gap_form is None:
            n = self.n_outer
            self._gap_form = np.zeros((n, n), dtype=complex) if self.empty else \
                self.dtn_matrix("0") - self.dtn_matrix("D")
        return self._gap_form

    def gap_values_dense(self, F: np.ndarray) -> np.ndarray:
        """Same as ``gap_values`` through the cached dense form; cheap for many columns."""
        F = np.asarray(F, dtype=complex)
        if F.ndim == 1:
            F = F[:, None]
        return np.sum(np.conj(F) * (self.gap_form() @ F), axis=0)

    def dtn_matrix(self, which: str = "D") -> np.ndarray:
        """Dense matrix N with N[i, j] = <Lambda e_j, e_i> over outer nodes."""
        op = self.background if which == "0" or self.empty else self.obstacle
        eye = np.eye(self.n_outer, dtype=complex)
        U = op.solve_many(eye)
        nb = self.n_outer
        return np.asarray(op.K_bb @ U[:nb] + op.K_bf @ U[nb:])


def dtn_gap(mesh: TriMesh, impedance: Optional[ImpedanceSpec], k: float, f, pair: Optional[DtnPair] = None) -> DtnGap:
    return (pair or DtnPair(mesh, impedance, k)).gap(f)


def verify_gap_identity(mesh: TriMesh, impedance: ImpedanceSpec, k: float, f,
                        pair: Optional[DtnPair] = None) -> dict:
    """Compare the gap from the two pairings with the five-term energy expression."""
    g = dtn_gap(mesh, impedance, k, f, pair)
    lhs = g.value
    rhs = g.parts_sum
    scale = max(abs(lhs), abs(rhs))
    rel = abs(lhs - rhs) / scale if scale > 0 else 0.0
    return {"lhs": lhs, "rhs": rhs, "parts": g.parts, "rel_err": float(rel)}


def write_dtn_matrix_csv(N: np.ndarray, path) -> None:
    """Row-major, Re/Im interleaved."""
    lines = []
    for row in N:
        inter = np.empty(2 * len(row))
        inter[0::2], inter[1::2] = row.real, row.imag
        lines.append(",".join(f"{x:.17g}" for x in inter))
    Path(path).write_text("\n".join(lines) + "\n")
