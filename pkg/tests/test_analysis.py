import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import jn_zeros, jnp_zeros

from probescope.analysis import (ConstantsReport, audit_constants, chain_audit, check_smallness, conditions_at,
                                 energy_ratio_audit, estimate_constants, estimate_poincare_C0,
                                 estimate_poincare_mean, max_admissible_L, reflected_energy_sweep,
                                 refinement_stability, trace_constant_profile)
from probescope.dtn import DtnPair
from probescope.geometry import Disk, ImpedanceSpec, ObstacleSpec
from probescope.mesh import INTERFACE, interior_submesh, mesh_domain
from probescope.probe import ray_points

J01 = jn_zeros(0, 1)[0]
J11P = jnp_zeros(1, 1)[0]


def test_dirichlet_poincare_of_the_disk_matches_bessel_zero(free_mesh):
    # first Dirichlet eigenvalue of the unit disk is j_{0,1}^2
    assert estimate_poincare_C0(free_mesh) == pytest.approx(1 / J01, rel=1e-2)


@pytest.mark.parametrize("a", [0.3, 0.5])
def test_neumann_mean_poincare_of_a_disk_matches_bessel_zero(a):
    # first nonzero Neumann eigenvalue of a disk of radius a is (j'_{1,1} / a)^2
    m = mesh_domain(Disk((0, 0), a), None, a / 12)
    assert estimate_poincare_mean(m) == pytest.approx(a / J11P, rel=1e-2)


@pytest.fixture(scope="module")
def constants(coarse_mesh, disk_obstacle):
    return estimate_constants(coarse_mesh, disk_obstacle.impedance, 1.0)


def test_trace_constant_is_at_least_the_constant_function_bound(coarse_mesh):
    # u = 1 on a disk of radius a: 2 pi a <= K pi a^2 / eps, so K >= 2 eps / a
    sub = interior_submesh(coarse_mesh)
    eps = [0.1, 0.5, 0.9]
    prof = trace_constant_profile(sub, INTERFACE, eps)
    assert np.all(prof >= 2 * np.array(eps) / 0.3 * (1 - 1e-2))


def test_constants_report_fields(constants):
    assert constants.C0 > 0 and constants.K_ext > 0 and constants.K_D > 0
    assert len(constants.C_U) == 1
    assert constants.C_U[0] == pytest.approx(0.3 / J11P, rel=3e-2)
    assert constants.L == pytest.approx(0.5 + 1.0)  # |Re| + |Im|
    d = constants.to_dict()
    assert set(d["conditions"]) >= {"holds_exterior", "holds_obstacle", "holds_reflected", "max_L"}


def test_constant_defining_inequalities_hold_on_random_functions(coarse_mesh, constants):
    audits = audit_constants(coarse_mesh, constants, n=40, seed=3)
    assert {a.name for a in audits} == {"poincare_zero_trace", "poincare_mean[0]", "trace_exterior",
                                        "trace_obstacle"}
    for a in audits:
        assert a.passed, a
        assert 0 < a.max_ratio <= 1 + 1e-9


@given(st.floats(0.0, 1.0), st.floats(0.0, 2.0))
def test_conditions_are_monotone_in_the_impedance_bound(s, k):
    c = ConstantsReport(C0=0.4, C_U=[0.15], K_ext=2.0, K_D=7.0, L=1.0, k=k)
    L = 0.2
    eps = np.linspace(0.01, 0.99, 99)
    hi = conditions_at(c, k, L, eps)
    lo = conditions_at(c, k, s * L, eps)
    for name in hi:
        # shrinking L can only make a condition easier to satisfy
        assert np.all(lo[name] | ~hi[name])


def test_max_admissible_L_is_the_threshold():
    c = ConstantsReport(C0=0.4, C_U=[0.15], K_ext=2.0, K_D=7.0, L=1.0, k=0.5)
    Lmax = max_admissible_L(c, 0.5)
    assert 0 < Lmax < math.inf
    eps = np.arange(1, 100) / 100
    at = lambda L: conditions_at(c, 0.5, L, eps)
    ok = lambda L: bool(np.any(at(L)["exterior"] & at(L)["obstacle"]))
    assert ok(0.99 * Lmax) and not ok(1.01 * Lmax)
    # large wavenumber breaks the exterior condition even at L = 0
    assert max_admissible_L(c, 10.0) == 0.0
    rep = check_smallness(c, L=0.5 * Lmax)
    assert rep.holds_exterior and rep.holds_obstacle and rep.common_eps


def test_chain_audit_bounds_stay_below_the_gap(coarse_mesh, constants, rng):
    pair = DtnPair(coarse_mesh, ImpedanceSpec(0.5, 1.0), 1.0)
    th = np.arctan2(*pair.outer_points[:, ::-1].T)
    F = np.column_stack([np.exp(1j * n * th) * (rng.standard_normal() + 1j) for n in range(-3, 4)])
    recs = chain_audit(pair, constants, F)
    assert len(recs) == 7
    for j, r in enumerate(recs):
        assert r.passed, {n: v for n, v in r.checks.items() if v[1] > v[0]}
        assert r.gap == pytest.approx(pair.gap(F[:, j], with_parts=False).real)


def test_refinement_stability_small_change():
    obs = ObstacleSpec((Disk((0.0, 0.0), 0.3),), ImpedanceSpec(0.0, 0.01))
    rep = refinement_stability(Disk((0, 0), 1.0), obs, 0.5, h=0.12)
    assert rep["max_rel_change"] < 0.05
    assert set(rep["rel_change"]) == {"C0", "K_ext", "K_D", "C_U[0]"}


def test_reflected_energy_grows_toward_the_obstacle(bench_ctx):
    P = ray_points((0.3, 0.0), (1.0, 0.0), [0.3, 0.15, 0.07])
    d = reflected_energy_sweep(bench_ctx, P)
    assert d.kernel_increasing and d.kernel_dominates_mass
    assert d.strictly_increasing
    assert np.allclose(d.column("dist"), [0.3, 0.15, 0.07], atol=1e-12)
    assert d.lower_bound_min_ratio > 0


def test_energy_ratio_audit_holdout(bench_ctx):
    a = energy_ratio_audit(bench_ctx, n=12, seed=2)
    assert len(a.ratios) == 12 and np.all(np.isfinite(a.ratios))
    assert a.passed
