"""Config-driven experiment runner.

Every run reads one JSON config (schema below; unknown keys are rejected),
applies ``--override key.path=value`` edits, and writes its data files plus
a ``manifest.json`` into the output directory.  Data files depend only on
the effective config and the seed; the manifest also carries timings.

Exit codes: 0 success, 2 config error, 3 geometry error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, ConvergenceError, GeometryError, SolverError

logger = logging.getLogger("probescope")

TASKS = ("forward", "verify", "constants", "probe", "enclosure", "sweep")
EXIT_CONFIG, EXIT_GEOMETRY, EXIT_SOLVER = 2, 3, 4

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_SHAPE = {
    "type": "object",
    "properties": {
        "type": {"enum": ["disk", "ellipse", "polygon"]},
        "center": _POINT,
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "semi_axes": _POINT,
        "rotation": {"type": "number"},
        "vertices": {"type": "array", "items": _POINT, "minItems": 3},
    },
    "required": ["type"],
    "additionalProperties": False,
}
_NUM_OR_LIST = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]}
_NEEDLE = {
    "type": "object",
    "properties": {
        "n_max": {"type": "integer", "minimum": 1},
        "n_sources": {"type": "integer", "minimum": 1},
        "source_radius": {"type": "number"},
        "d0": {"type": "number", "exclusiveMinimum": 0},
        "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "alpha": {"type": "number", "minimum": 0},
        "residual_tol": {"type": ["number", "null"]},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "task": {"enum": list(TASKS)},
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
        "domain": _SHAPE,
        "obstacle": {
            "type": "object",
            "properties": {
                "components": {"type": "array", "items": _SHAPE},
                "impedance": {"type": "object", "properties": {"re": _NUM_OR_LIST, "im": _NUM_OR_LIST},
                              "additionalProperties": False},
            },
            "additionalProperties": False,
        },
        "k": {"type": "number", "minimum": 0},
        "mesh": {
            "type": "object",
            "properties": {"h_target": {"type": "number", "exclusiveMinimum": 0},
                           "h_interface": {"type": ["number", "null"], "exclusiveMinimum": 0}},
            "required": ["h_target"],
            "additionalProperties": False,
        },
        "forward": {
            "type": "object",
            "properties": {
                "data": {"enum": ["constant", "plane_wave", "fourier"]},
                "value": {"type": "number"},
                "direction": _POINT,
                "modes": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "number"},
                                                                     "minItems": 2, "maxItems": 2}},
                "h_levels": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "write_solution": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {"n_random": {"type": "integer", "minimum": 1},
                           "write_dtn_matrix": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "constants": {
            "type": "object",
            "properties": {
                "eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
                "audit_samples": {"type": "integer", "minimum": 0},
                "refinement_h": {"type": ["number", "null"]},
                "calibration": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "probe": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["reconstruct", "points", "diagnostics"]},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "points": {"type": "array", "items": _POINT},
                "needle": _NEEDLE,
                "allow_unverified": {"type": "boolean"},
                "regions": {
                    "type": "object",
                    "properties": {"cone_radius": {"type": "number"}, "cone_aperture": {"type": "number"},
                                   "ball_radius": {"type": "number"}, "off_center": _POINT,
                                   "off_radius": {"type": "number"}},
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "enclosure": {
            "type": "object",
            "properties": {
                "directions": {"type": "integer", "minimum": 3},
                "tau": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "n_tau": {"type": "integer", "minimum": 5},
                "fit_from": {"type": ["number", "null"]},
                "margin": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "rays": {"type": "array", "items": {
                    "type": "object",
                    "properties": {"anchor": _POINT, "direction": _POINT,
                                   "distances": {"type": "array", "items": {"type": "number"}}},
                    "required": ["anchor", "direction", "distances"],
                    "additionalProperties": False}},
                "circles": {"type": "array", "items": {
                    "type": "object",
                    "properties": {"center": _POINT, "radius": {"type": "number"}, "n": {"type": "integer"}},
                    "required": ["center", "radius", "n"],
                    "additionalProperties": False}},
                "energy_diagnostics": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["domain", "k", "mesh"],
    "additionalProperties": False,
}

DEFAULTS = {
    "seed": 0,
    "output_dir": "out",
    "obstacle": {"components": [], "impedance": {"re": 0.0, "im": 1.0}},
    "forward": {"data": "constant", "value": 1.0, "h_levels": [], "write_solution": True},
    "verify": {"n_random": 10, "write_dtn_matrix": False},
    "constants": {"audit_samples": 100, "refinement_h": None, "calibration": False},
    "probe": {"mode": "reconstruct", "delta": 0.05, "allow_unverified": False,
              "regions": {"cone_radius": 0.1, "cone_aperture": 1.0, "ball_radius": 0.05, "off_radius": 0.1}},
    "enclosure": {"directions": 16, "tau": [2.0, 12.0], "n_tau": 21, "fit_from": None, "margin": 0.2},
    "sweep": {"rays": [], "circles": [], "energy_diagnostics": True},
}


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in top.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def apply_override(cfg: dict, item: str) -> None:
    """``a.b.c=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    node = cfg
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = val


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def load_config(path, overrides: Optional[list] = None) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for item in overrides or []:
        apply_override(raw, item)
    validate_config(raw)
    return _merge(DEFAULTS, raw)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# building objects from a config
# ---------------------------------------------------------------------------

def build_geometry(cfg: dict):
    from .geometry import obstacle_from_dict, shape_from_dict

    return shape_from_dict(cfg["domain"]), obstacle_from_dict(cfg["obstacle"])


def build_context(cfg: dict):
    from .probe import ProbeContext

    domain, obstacle = build_geometry(cfg)
    m = cfg["mesh"]
    return ProbeContext(domain, obstacle, cfg["k"], h=m["h_target"], h_interface=m.get("h_interface"))


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, complex to [re, im], non-finite to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(float(obj.real)), _clean(float(obj.imag))]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


class Outputs:
    """Tracks emitted files for the manifest."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def json(self, name: str, data) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")
        return p

    def csv(self, name: str, header: list, rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([f"{x:.17g}" if isinstance(x, (float, np.floating)) else x for x in r])
        return p


def write_manifest(out: Outputs, cfg: dict, timings: dict, status: str) -> Path:
    import scipy

    files = []
    for name in sorted(set(out.files)):
        p = out.root / name
        if p.exists():
            files.append({"name": name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
    data = {
        "config_hash": config_hash(cfg),
        "config": cfg,
        "status": status,
        "versions": {"probescope": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "timings": timings,
        "files": files,
    }
    fd, tmp = tempfile.mkstemp(dir=out.root, prefix=".manifest.", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")
    final = out.root / "manifest.json"
    os.replace(tmp, final)
    return final


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

def _boundary_data(cfg: dict, mesh) -> np.ndarray:
    fc = cfg["forward"]
    P = mesh.nodes[:mesh.n_outer]
    kind = fc.get("data", "constant")
    if kind == "constant":
        return np.full(len(P), complex(fc.get("value", 1.0)))
    if kind == "plane_wave":
        d = np.asarray(fc.get("direction", [1.0, 0.0]), dtype=float)
        d = d / np.hypot(*d)
        return np.exp(1j * cfg["k"] * (P @ d))
    th = np.arctan2(P[:, 1], P[:, 0])
    out = np.zeros(len(P), dtype=complex)
    for n, (re, im) in fc.get("modes", {}).items():
        out += complex(re, im) * np.exp(1j * int(n) * th)
    return out


def _annulus_reference(cfg: dict, domain, obstacle):
    """Closed-form solution when the geometry is two concentric disks and the data are Fourier modes."""
    from .geometry import Disk
    from .reference import annulus_solution

    comps = obstacle.components
    if not (isinstance(domain, Disk) and len(comps) == 1 and isinstance(comps[0], Disk)):
        return None
    if np.hypot(*np.subtract(domain.center, comps[0].center)) > 1e-14 or np.hypot(*domain.center) > 1e-14:
        return None
    fc = cfg["forward"]
    if fc.get("data", "constant") == "constant":
        modes = {0: complex(fc.get("value", 1.0))}
    elif fc["data"] == "fourier":
        modes = {int(n): complex(*v) for n, v in fc.get("modes", {}).items()}
    else:
        return None
    return annulus_solution(cfg["k"], comps[0].radius, domain.radius, obstacle.impedance.value(0), modes)


def task_forward(cfg: dict, out: Outputs, threads: int) -> dict:
    """Solve at h_target and at every extra mesh size in ``forward.h_levels`` (each a fresh mesh)."""
    from .fem import HelmholtzOperator
    from .mesh import mesh_domain
    from .reference import l2_error

    domain, obstacle = build_geometry(cfg)
    ref = _annulus_reference(cfg, domain, obstacle)
    hs = [cfg["mesh"]["h_target"]] + list(cfg["forward"].get("h_levels", []))
    levels = []
    for lev, h in enumerate(hs):
        hi = cfg["mesh"].get("h_interface") if lev == 0 else None
        m = mesh_domain(domain, obstacle, h, hi)
        region = "full" if obstacle.empty else "exterior"
        op = HelmholtzOperator(m, region, None if obstacle.empty else obstacle.impedance, cfg["k"])
        u = op.solve(_boundary_data(cfg, op.mesh))
        rec = {"h": h, "h_max": m.quality().h_max, "n_nodes": op.mesh.n_nodes}
        if ref is not None:
            rec["rel_l2_error"] = l2_error(u, ref)
        levels.append(rec)
        if lev == 0 and cfg["forward"].get("write_solution", True):
            u.to_csv(out.path("solution.csv"))
    report: dict[str, Any] = {"levels": levels, "reference": "annulus" if ref is not None else None}
    if ref is not None and len(levels) > 1:
        e = [r["rel_l2_error"] for r in levels]
        report["error_ratios"] = [e[i] / e[i + 1] for i in range(len(e) - 1)]
    out.json("forward.json", report)
    return report


def task_verify(cfg: dict, out: Outputs, threads: int) -> dict:
    from .dtn import write_dtn_matrix_csv
    from .fem import boundary_mass
    from .mesh import INTERFACE

    ctx = build_context(cfg)
    rng = np.random.default_rng(cfg["seed"])
    P = ctx.outer_points
    th = np.arctan2(P[:, 1], P[:, 0])
    pair = ctx.pair
    rows = []
    for i in range(cfg["verify"]["n_random"]):
        c = rng.standard_normal(9) + 1j * rng.standard_normal(9)
        f = sum(c[n] * np.exp(1j * (n - 4) * th) for n in range(9))
        g = pair.gap(f)
        lhs, rhs = g.value, g.parts_sum
        rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
        if pair.empty:
            im_ref = 0.0
        else:
            _, u = pair.solve_pair(f)
            B = boundary_mass(ctx.exterior, INTERFACE, pair.impedance.values(ctx.mesh.n_components).imag)
            im_ref = float(np.vdot(u.values, B @ u.values).real)
        im_rel = abs(lhs.imag - im_ref) / max(abs(im_ref), 1e-300) if im_ref else abs(lhs.imag)
        rows.append({"sample": i, "lhs": lhs, "rhs": rhs, "rel_err": rel, "imag": lhs.imag,
                     "imag_boundary_integral": im_ref, "imag_rel_err": im_rel, "parts": g.parts})
    report = {"samples": rows, "max_rel_err": max(r["rel_err"] for r in rows),
              "max_imag_rel_err": max(r["imag_rel_err"] for r in rows)}
    out.json("verify.json", report)
    if cfg["verify"].get("write_dtn_matrix") and not pair.empty:
        write_dtn_matrix_csv(pair.gap_form(), out.path("gap_form.csv"))
    return report


def task_constants(cfg: dict, out: Outputs, threads: int) -> dict:
    from .analysis import (EPS_SAMPLE, audit_constants, estimate_constants, estimate_poincare_C0,
                           estimate_poincare_mean, refinement_stability, trace_constant_profile)
    from .mesh import OUTER, mesh_domain

    domain, obstacle = build_geometry(cfg)
    if obstacle.empty:
        raise GeometryError("the constants task needs an obstacle")
    cc = cfg["constants"]
    eps = tuple(cc.get("eps") or EPS_SAMPLE)
    mesh = mesh_domain(domain, obstacle, cfg["mesh"]["h_target"], cfg["mesh"].get("h_interface"))
    rep = estimate_constants(mesh, obstacle.impedance, cfg["k"], eps)
    report: dict[str, Any] = {"constants": rep.to_dict()}
    if cc.get("audit_samples", 0):
        report["audits"] = [a.__dict__ for a in audit_constants(mesh, rep, cc["audit_samples"], cfg["seed"], eps)]
    if cc.get("refinement_h"):
        report["refinement"] = refinement_stability(domain, obstacle, cfg["k"], cc["refinement_h"], eps)
    if cc.get("calibration"):
        free = mesh_domain(domain, None, cfg["mesh"]["h_target"])
        report["calibration"] = {"C0_domain": estimate_poincare_C0(free),
                                 "C_mean_domain": estimate_poincare_mean(free),
                                 "K_domain_profile": trace_constant_profile(free, OUTER, eps).tolist(),
                                 "eps": list(eps)}
    out.json("constants.json", report)
    return report


def _needle_params(cfg: dict):
    from .probe import NeedleParams

    return NeedleParams(**cfg["probe"].get("needle", {}))


def task_probe(cfg: dict, out: Outputs, threads: int) -> dict:
    from .analysis import estimate_constants
    from .probe import (build_needle_sequence, hausdorff_to_obstacle, indicator_function, indicator_sequence,
                        policy_needles, reconstruct)

    ctx = build_context(cfg)
    pc = cfg["probe"]
    params = _needle_params(cfg)
    report: dict[str, Any] = {}
    if not ctx.empty:
        const = estimate_constants(ctx.mesh, ctx.obstacle.impedance, ctx.k)
        cond = const.conditions
        report["smallness"] = {"exterior": cond.holds_exterior, "obstacle": cond.holds_obstacle,
                               "common_eps": cond.common_eps, "max_L": cond.max_L, "L": const.L}
        certified = bool(cond.common_eps)
        if not certified and not pc.get("allow_unverified", False):
            raise GeometryError("smallness conditions not certified for this config; set probe.allow_unverified")
        report["certified"] = certified
    if pc["mode"] == "reconstruct":
        rec = reconstruct(ctx, pc["delta"], params, threads)
        rec.write_csv(out.path("reconstruction.csv"))
        out.csv("boundary_estimate.csv", ["x", "y"], rec.boundary_estimate.tolist())
        flags = rec.flags
        report.update({"n_points": int(len(flags)), "n_inside": int((flags == 1).sum()),
                       "n_outside": int((flags == 0).sum()), "n_undecided": int((flags == -1).sum()),
                       "scale_ref": rec.scale_ref})
        if not ctx.empty:
            report["hausdorff"] = hausdorff_to_obstacle(rec.boundary_estimate, ctx.obstacle)
    elif pc["mode"] == "diagnostics":
        report["points"] = _needle_diagnostics(ctx, pc, params)
    else:
        rows = []
        for i, x in enumerate(pc.get("points", [])):
            x = np.asarray(x, dtype=float)
            nd = policy_needles(x, ctx)[0]
            seq = build_needle_sequence(x, nd, ctx.k, ctx.mesh, ctx.domain, params)
            s = indicator_sequence(ctx, seq)
            try:
                I = indicator_function(x, ctx).value
            except GeometryError:
                I = math.nan
            out.csv(f"series_{i:03d}.csv", ["n", "tube_radius", "fit_residual", "I_n", "gap_re", "gap_im"],
                    [[n + 1, s.tube_radii[n], s.fit_residuals[n], s.values[n], s.gaps[n].real, s.gaps[n].imag]
                     for n in range(len(s.values))])
            rows.append({"x": x.tolist(), "classification": s.classification.label,
                         "limit": s.classification.limit, "last": float(s.values[-1]) if len(s.values) else None,
                         "indicator_function": I})
        report["points"] = rows
    out.json("probe.json", report)
    return report


def _needle_diagnostics(ctx, pc: dict, params) -> list:
    """Energy growth of each needle sequence near the needle, plus the obstacle-side energy chain."""
    from .analysis import estimate_constants, gradient_dominance_check, reflected_blowup_chain
    from .probe import Ball, Cone, build_needle_sequence, needle_blowup_check, policy_needles

    reg = pc["regions"]
    const = None if ctx.empty else estimate_constants(ctx.mesh, ctx.obstacle.impedance, ctx.k)
    rows = []
    for x in pc.get("points", []):
        x = np.asarray(x, dtype=float)
        nd = policy_needles(x, ctx)[0]
        seq = build_needle_sequence(x, nd, ctx.k, ctx.mesh, ctx.domain, params)
        pts = nd.points
        axis = pts[-1] - pts[-2]
        cone = Cone(tuple(x), tuple(axis / np.hypot(*axis)), reg["cone_aperture"], reg["cone_radius"])
        mid = nd.point_at(0.5)
        rec: dict[str, Any] = {"x": x, "needle": pts}
        for name, region in (("cone", cone), ("mid_ball", Ball(tuple(mid), reg["ball_radius"]))):
            g = needle_blowup_check(seq, region, ctx.domain)
            rec[name] = {"energies": g.energies, "increasing_tail": g.increasing_tail, "growth": g.growth}
        if "off_center" in reg:
            g = needle_blowup_check(seq, Ball(tuple(reg["off_center"]), reg["off_radius"]), ctx.domain)
            rec["off_needle"] = {"energies": g.energies, "cauchy_tail": g.cauchy_tail}
        if not ctx.empty:
            d = gradient_dominance_check(ctx, seq)
            rec["dominance"] = {"ratios": d.ratios, "bounded": d.bounded}
            c = reflected_blowup_chain(ctx, seq, const)
            rec["reflected_chain"] = {"grad_v_D": c.grad_v_D, "grad_w": c.grad_w, "v_blowup": c.v_blowup,
                                      "w_increasing_tail": c.w_increasing_tail,
                                      "condition_reflected": c.condition_reflected, "consistent": c.consistent}
        rows.append(rec)
    return rows


def _covered_fraction(vertices: np.ndarray, obstacle) -> float:
    from shapely.geometry import Polygon as SPoly

    hull = SPoly(vertices)
    comps = [SPoly(c.polygonize(c.perimeter / 2000)) for c in obstacle.components]
    total = sum(c.area for c in comps)
    return float(sum(hull.intersection(c).area for c in comps) / total)


def task_enclosure(cfg: dict, out: Outputs, threads: int) -> dict:
    from .enclosure import convex_hull, estimate_support_many, polygon_area, write_direction_csv, write_hull_json
    from .geometry import directions, support_function_exact

    ctx = build_context(cfg)
    ec = cfg["enclosure"]
    W = directions(ec["directions"])
    tau = np.linspace(ec["tau"][0], ec["tau"][1], ec["n_tau"])
    ests = estimate_support_many(ctx.pair, W, tau, threads=threads, fit_from=ec.get("fit_from"),
                                 margin=ec["margin"])
    h = np.array([e.h_hat for e in ests])
    rows = []
    for j, e in enumerate(ests):
        write_direction_csv(e, out.path(f"direction_{j:02d}.csv"),
                            (0.0, e.h_hat - ec["margin"], e.h_hat + ec["margin"]) if np.isfinite(e.h_hat) else (0.0,))
        truth = support_function_exact(ctx.obstacle, e.omega) if not ctx.empty else None
        rows.append({"omega": e.omega, "h_hat": e.h_hat, "h_true": truth, "r2": e.fit.r2,
                     "regime_pass": e.regime_checks.get("pass"), "low_confidence": e.low_confidence,
                     "notes": e.notes})
    report: dict[str, Any] = {"directions": rows}
    try:
        V = convex_hull(W, h)
        write_hull_json(out.path("hull.json"), W, h, V)
        report["hull_area"] = polygon_area(V)
        report["hull_vertices"] = V
        if not ctx.empty:
            report["obstacle_area_covered"] = _covered_fraction(V, ctx.obstacle)
    except GeometryError as exc:
        report["hull_error"] = str(exc)
    out.json("enclosure.json", report)
    return report


def task_sweep(cfg: dict, out: Outputs, threads: int) -> dict:
    from .analysis import reflected_energy_sweep
    from .probe import indicator_sweep, ray_points, write_sweep_csv

    ctx = build_context(cfg)
    sc = cfg["sweep"]
    report: dict[str, Any] = {"rays": [], "circles": []}
    for i, ray in enumerate(sc.get("rays", [])):
        pts = ray_points(ray["anchor"], ray["direction"], ray["distances"])
        samples = indicator_sweep(ctx, pts, threads)
        write_sweep_csv(out.path(f"ray_{i:02d}.csv"), ray["distances"], samples)
        vals = [s.value for s in samples]
        rec = {"values": vals, "strictly_increasing_toward_obstacle": bool(np.all(np.diff(vals) > 0)),
               "final_over_initial": vals[-1] / vals[0] if vals[0] else math.nan}
        if sc.get("energy_diagnostics", True) and not ctx.empty:
            d = reflected_energy_sweep(ctx, pts)
            rec["reflected_energy"] = d.column("grad_w")
            rec["reflected_energy_increasing"] = d.strictly_increasing
            rec["lower_bound_ratio"] = d.column("lower_bound_ratio")
            rec["trace_ratio"] = d.column("trace_ratio")
        report["rays"].append(rec)
    for i, c in enumerate(sc.get("circles", [])):
        t = 2 * np.pi * np.arange(c["n"]) / c["n"]
        pts = np.asarray(c["center"]) + c["radius"] * np.c_[np.cos(t), np.sin(t)]
        samples = indicator_sweep(ctx, pts, threads)
        dist = [ctx.obstacle.boundary_distance(p) for p in pts]
        write_sweep_csv(out.path(f"circle_{i:02d}.csv"), dist, samples)
        vals = np.array([s.value for s in samples])
        report["circles"].append({"values": vals, "max_over_min": float(vals.max() / vals.min())
                                  if vals.min() > 0 else math.inf})
    out.json("sweep.json", report)
    return report


TASK_FUNCS = {"forward": task_forward, "verify": task_verify, "constants": task_constants,
              "probe": task_probe, "enclosure": task_enclosure, "sweep": task_sweep}


def run(cfg: dict, out_dir=None, threads: Optional[int] = None) -> tuple[int, dict]:
    """Run the task of an already validated and merged config; returns (exit status, report)."""
    out_dir = out_dir or os.environ.get("PROBESCOPE_OUT") or cfg["output_dir"]
    out = Outputs(Path(out_dir))
    threads = threads or os.cpu_count() or 1
    np.random.seed(cfg["seed"] % 2**32)
    t0 = time.perf_counter()
    status, report = 0, {}
    try:
        report = TASK_FUNCS[cfg["task"]](cfg, out, threads)
        state = "ok"
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        status, state = EXIT_CONFIG, f"config error: {exc}"
    except GeometryError as exc:
        logger.error("geometry error: %s", exc)
        status, state = EXIT_GEOMETRY, f"geometry error: {exc}"
    except (SolverError, ConvergenceError) as exc:
        logger.error("solver failure: %s", exc)
        status, state = EXIT_SOLVER, f"solver failure: {exc}"
    write_manifest(out, cfg, {"total_s": time.perf_counter() - t0, "threads": threads}, state)
    return status, report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probescope", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="task", required=True)
    for name in TASKS:
        p = sub.add_parser(name, help=f"run the {name} task")
        p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides config and PROBESCOPE_OUT)")
        p.add_argument("--threads", type=int, default=None, help="worker pool size (default: CPU count)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="edit a config entry, e.g. mesh.h_target=0.01 (repeatable)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.override)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    if "task" in cfg and cfg["task"] != args.task:
        logger.warning("config task %r overridden by subcommand %r", cfg["task"], args.task)
    cfg["task"] = args.task
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.override:
        cfg["overrides"] = list(args.override)
    status, _ = run(cfg, args.out, args.threads)
    return status


if __name__ == "__main__":
    sys.exit(main())
