"""Support-function recovery from exponentially growing boundary data.

For a direction ``omega`` and its rotation ``omega_perp`` the plane wave

    v(x) = exp(x . (tau omega + i sqrt(tau^2 + k^2) omega_perp))

solves the Helmholtz equation exactly.  Feeding its trace into the gap
functional and damping by ``exp(-2 tau t)`` gives an indicator whose growth
rate in ``tau`` is twice the support function of the obstacle.  Traces are
stored with a real normalization shift ``s`` so that their magnitudes stay
below one; the shift is undone analytically.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection

from .dtn import DtnPair
from .errors import GeometryError
from .mesh import TriMesh

logger = logging.getLogger(__name__)

EXP_LIMIT = 700.0
UNIT_TOL = 1e-14


@dataclass(frozen=True)
class CgoParams:
    omega: tuple
    omega_perp: tuple
    tau: float
    k: float
    shift: Optional[float] = None

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        wp = np.asarray(self.omega_perp, dtype=float)
        if abs(np.hypot(*w) - 1) > UNIT_TOL or abs(np.hypot(*wp) - 1) > UNIT_TOL:
            raise ValueError("omega and omega_perp must be unit vectors")
        if abs(w @ wp) > UNIT_TOL:
            raise ValueError(f"omega . omega_perp = {w @ wp:.3e}, expected 0")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.k < 0:
            raise ValueError("wavenumber must be non-negative")
        object.__setattr__(self, "omega", (float(w[0]), float(w[1])))
        object.__setattr__(self, "omega_perp", (float(wp[0]), float(wp[1])))

    @classmethod
    def from_angle(cls, theta: float, tau: float, k: float, shift: Optional[float] = None) -> "CgoParams":
        """omega at angle theta, omega_perp its counter-clockwise rotation."""
        c, s = math.cos(theta), math.sin(theta)
        return cls((c, s), (-s, c), tau, k, shift)

    @property
    def zeta(self) -> np.ndarray:
        """Complex wave vector tau omega + i sqrt(tau^2 + k^2) omega_perp."""
        w, wp = np.asarray(self.omega), np.asarray(self.omega_perp)
        return self.tau * w + 1j * math.sqrt(self.tau**2 + self.k**2) * wp

    def dispersion_residual(self) -> complex:
        """zeta . zeta + k^2, zero up to rounding for a valid parameter set."""
        z = self.zeta
        return complex(z @ z + self.k**2)


def _shift_for(mesh: TriMesh, omega) -> float:
    return float(np.max(mesh.nodes[:mesh.n_outer] @ np.asarray(omega, dtype=float)))


def cgo_trace(params: CgoParams, mesh: TriMesh) -> np.ndarray:
    """exp(x . zeta - tau s) at the outer boundary nodes.

    ``s`` defaults to the discrete support function of the outer boundary
    in direction omega, which keeps every magnitude at most one.
    """
    x = mesh.nodes[:mesh.n_outer]
    s = _shift_for(mesh, params.omega) if params.shift is None else float(params.shift)
    expo = x @ params.zeta - params.tau * s
    worst = float(np.max(expo.real))
    if worst > EXP_LIMIT:
        raise OverflowError(f"trace exponent reaches {worst:.1f} > {EXP_LIMIT}; use a larger shift "
                            f"(at least {s + (worst - EXP_LIMIT) / params.tau:.6g})")
    return np.exp(expo)


def _gaps(pair: DtnPair, params_list: Sequence[CgoParams], threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Real gap of each shifted trace, and the shift actually used."""
    mesh = pair.mesh
    shifts = np.array([_shift_for(mesh, p.omega) if p.shift is None else float(p.shift) for p in params_list])
    if pair.empty:
        return np.zeros(len(params_list)), shifts
    F = np.column_stack([cgo_trace(p, mesh) for p in params_list])
    return pair.gap_values(F, threads=threads).real, shifts


def enclosure_indicator(pair: DtnPair, params: CgoParams, t: float) -> float:
    """exp(-2 tau t) Re <(Lambda_0 - Lambda_D) f, conj f> for the unshifted trace f."""
    g, s = _gaps(pair, [params])
    if g[0] == 0:
        return 0.0
    return float(g[0] * math.exp(-2 * params.tau * (t - s[0])))


def log_abs_indicator(re_gap: np.ndarray, shift, tau: np.ndarray, t: float) -> np.ndarray:
    """log|I(tau, t)| from shifted gaps, without forming the exponentials."""
    with np.errstate(divide="ignore"):
        return np.log(np.abs(re_gap)) - 2 * np.asarray(tau) * (t - np.asarray(shift))


@dataclass
class LineFit:
    tau: list
    log_abs: list
    used: list
    slope: float
    intercept: float
    r2: float
    stderr: float
    fit_from: float


@dataclass
class SupportEstimate:
    omega: tuple
    h_hat: float
    fit: LineFit
    regime_checks: dict = field(default_factory=dict)
    low_confidence: bool = False
    notes: list = field(default_factory=list)
    re_gap: list = field(default_factory=list)
    shift: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    A = np.c_[x, np.ones_like(x)]
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    n = len(x)
    stderr = math.sqrt(float(np.sum(resid**2)) / (n - 2) / np.sum((x - x.mean()) ** 2)) if n > 2 else math.inf
    return float(slope), float(icpt), r2, stderr


def _stable_points(re_gap: np.ndarray, log_abs: np.ndarray, rel_floor: float) -> tuple[np.ndarray, bool]:
    """Points above the magnitude floor in the trailing run of constant sign."""
    ok = np.isfinite(log_abs) & (log_abs > np.max(log_abs[np.isfinite(log_abs)]) + math.log(rel_floor))
    sign = np.sign(re_gap)
    final = sign[ok][-1] if ok.any() else 0
    trailing = np.zeros_like(ok)
    for i in range(len(sign) - 1, -1, -1):
        if not ok[i]:
            continue
        if sign[i] != final:
            break
        trailing[i] = True
    flips = int(np.sum(np.diff(sign[ok]) != 0)) if ok.sum() > 1 else 0
    return trailing, flips > 0


def regime_check(tau: np.ndarray, re_gap: np.ndarray, shift: float, t: float, mask: np.ndarray) -> dict:
    """Monotonicity of |I(tau, t)| over the masked tau points."""
    la = log_abs_indicator(re_gap[mask], shift, tau[mask], t)
    d = np.diff(la)
    return {
        "t": float(t),
        "log_abs": la.tolist(),
        "decreasing": bool(np.all(d < 0)),
        "increasing": bool(np.all(d > 0)),
        "first": float(np.exp(la[0])),
        "last": float(np.exp(la[-1])),
        "ratio_last_first": float(np.exp(la[-1] - la[0])),
    }


def estimate_support(pair: DtnPair, omega, tau_grid: Sequence[float], k: Optional[float] = None,
                     fit_from: Optional[float] = None, margin: float = 0.2, rel_floor: float = 1e-12,
                     threads: int = 1, re_gap: Optional[np.ndarray] = None) -> SupportEstimate:
    """Slope of log|I(tau, 0)| against 2 tau over the upper part of the tau grid.

    ``fit_from`` is the smallest tau entering the line fit; by default the
    midpoint of the grid, since at small tau the slowly varying prefactor of
    the indicator still biases the slope upwards.  The regime diagnostics
    evaluate |I(tau, t)| at ``t = h_hat +/- margin`` on the same points.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if len(tau) < 5 or np.any(np.diff(tau) <= 0):
        raise ValueError("tau grid must be increasing with at least 5 points")
    omega = np.asarray(omega, dtype=float)
    omega = omega / np.hypot(*omega)
    kk = pair.k if k is None else float(k)
    theta = math.atan2(omega[1], omega[0])
    params = [CgoParams.from_angle(theta, float(t_), kk) for t_ in tau]
    shift = _shift_for(pair.mesh, params[0].omega)
    if re_gap is None:
        re_gap, _ = _gaps(pair, params, threads)
    re_gap = np.asarray(re_gap, dtype=float)
    if fit_from is None:
        fit_from = 0.5 * (tau[0] + tau[-1])
    notes = []
    if np.all(re_gap == 0):
        fit = LineFit(tau.tolist(), [-math.inf] * len(tau), [False] * len(tau), math.nan, math.nan, math.nan,
                      math.inf, float(fit_from))
        return SupportEstimate((float(omega[0]), float(omega[1])), math.nan, fit, {}, True,
                               ["indicator vanishes identically"], re_gap.tolist(), shift)
    la0 = log_abs_indicator(re_gap, shift, tau, 0.0)
    stable, oscillating = _stable_points(re_gap, la0, rel_floor)
    if oscillating:
        notes.append("sign of Re gap changes on the grid")
    used = stable & (tau >= fit_from - 1e-12)
    if used.sum() < 3:
        used = stable
        notes.append("fit window too short; all stable points used")
    low = oscillating or used.sum() < 3 or stable.sum() < 5
    x, y = 2 * tau[used], la0[used]
    if len(x) >= 2:
        slope, icpt, r2, se = _line_fit(x, y)
    else:
        slope, icpt, r2, se = math.nan, math.nan, math.nan, math.inf
        notes.append("fewer than two usable points")
    fit = LineFit(tau.tolist(), la0.tolist(), used.tolist(), slope, icpt, r2, se, float(fit_from))
    checks = {}
    if np.isfinite(slope):
        checks["above"] = regime_check(tau, re_gap, shift, slope + margin, used)
        checks["below"] = regime_check(tau, re_gap, shift, slope - margin, used)
        local = np.diff(y) / np.diff(x)
        checks["threshold_band"] = [float(local.min()), float(local.max())] if len(local) else []
        checks["pass"] = bool(checks["above"]["decreasing"] and checks["below"]["increasing"])
    est = SupportEstimate((float(omega[0]), float(omega[1])), slope, fit, checks, bool(low), notes,
                          re_gap.tolist(), shift)
    logger.info("omega=(%.3f, %.3f): h_hat=%.4f r2=%.5f", omega[0], omega[1], slope, r2)
    return est


def estimate_support_many(pair: DtnPair, omegas: np.ndarray, tau_grid: Sequence[float], threads: int = 1,
                          **kwargs) -> list[SupportEstimate]:
    """All directions in one batched sweep over the shared factorizations."""
    tau = np.asarray(tau_grid, dtype=float)
    params = [CgoParams.from_angle(math.atan2(w[1], w[0]), float(t), pair.k) for w in omegas for t in tau]
    g, _ = _gaps(pair, params, threads)
    g = g.reshape(len(omegas), len(tau))
    return [estimate_support(pair, w, tau, re_gap=g[i], **kwargs) for i, w in enumerate(omegas)]


def convex_hull(omegas: np.ndarray, h_hat: np.ndarray) -> np.ndarray:
    """Vertices (counter-clockwise) of the intersection of {x : x . omega_j <= h_j}."""
    W = np.asarray(omegas, dtype=float)
    h = np.asarray(h_hat, dtype=float)
    if len(W) < 3 or not np.all(np.isfinite(h)):
        raise GeometryError("need at least three finite support values")
    # Chebyshev centre: maximize r with W x + r |w| <= h
    norms = np.hypot(W[:, 0], W[:, 1])
    res = linprog([0, 0, -1], A_ub=np.c_[W, norms], b_ub=h, bounds=[(None, None), (None, None), (0, None)])
    if not res.success or res.x[2] <= 1e-12:
        diag = ", ".join(f"({w[0]:.3f},{w[1]:.3f}):{v:.4f}" for w, v in zip(W, h))
        raise GeometryError(f"support estimates define an empty or degenerate hull; per-direction h: {diag}")
    center = res.x[:2]
    hs = HalfspaceIntersection(np.c_[W, -h], center)
    pts = hs.intersections
    ang = np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0])
    pts = pts[np.argsort(ang)]
    keep = np.r_[True, np.hypot(*np.diff(pts, axis=0).T) > 1e-12]
    return pts[keep]


def polygon_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def write_direction_csv(est: SupportEstimate, path, t_values: Sequence[float] = (0.0,)) -> None:
    tau = np.asarray(est.fit.tau)
    g = np.asarray(est.re_gap)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "t", "I", "log_abs_I"])
        for t in t_values:
            la = log_abs_indicator(g, est.shift, tau, t)
            for tt, gg, l in zip(tau, g, la):
                val = math.copysign(math.exp(l), gg) if np.isfinite(l) else 0.0
                w.writerow([f"{tt:.17g}", f"{t:.17g}", f"{val:.17g}", f"{l:.17g}"])


def write_hull_json(path, omegas: np.ndarray, h_hat: Sequence[float], vertices: np.ndarray) -> None:
    data = {
        "directions": [[float(a), float(b)] for a, b in np.asarray(omegas)],
        "h_hat": [float(v) for v in h_hat],
        "vertices": [[float(a), float(b)] for a, b in np.asarray(vertices)],
    }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
