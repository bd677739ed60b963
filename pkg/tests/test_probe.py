import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from probescope.errors import GeometryError
from probescope.fem import interpolate
from probescope.geometry import Disk, ImpedanceSpec, ObstacleSpec, straight_needle
from probescope.probe import (BLOWUP, CONVERGED, INSIDE, OUTSIDE, UNDECIDED, Ball, Cone, NeedleParams,
                              ProbeContext, boundary_transitions, build_needle_sequence, classify_series,
                              grid_points, hausdorff_to_obstacle, indicator_function, indicator_sequence,
                              interior_kernel_energy, needle_blowup_check, policy_needles, ray_points,
                              reconstruct, reflected_field, reflected_solution, region_quadrature,
                              source_circle, tikhonov_solve, tube_points, write_sweep_csv)

UNIT = Disk((0.0, 0.0), 1.0)


def test_needle_params_validation():
    with pytest.raises(ValueError):
        NeedleParams(source_radius=0.9)
    with pytest.raises(ValueError):
        NeedleParams(rho=1.0)
    with pytest.raises(ValueError):
        NeedleParams(n_max=0)


def test_tikhonov_matches_regularized_normal_equations(rng):
    A = rng.standard_normal((40, 12)) + 1j * rng.standard_normal((40, 12))
    g = rng.standard_normal(40) + 0j
    alpha = 0.3
    c, S = tikhonov_solve(A, g, alpha)
    ref = np.linalg.solve(A.conj().T @ A + alpha * np.eye(12), A.conj().T @ g)
    assert np.allclose(c, ref, atol=1e-12)
    assert np.allclose(tikhonov_solve(A, g, 0.0)[0], np.linalg.lstsq(A, g, rcond=None)[0], atol=1e-10)
    assert S[0] >= S[-1] > 0


def test_sources_lie_outside_the_domain():
    src = source_circle(UNIT, 64, 1.5)
    assert np.allclose(np.hypot(*src.T), 1.5)
    assert not UNIT.contains(src, closed=True).any()


@given(st.floats(0.01, 0.2))
def test_tube_points_sit_at_the_tube_radius(d):
    nd = straight_needle((0.3, 0.1), None, UNIT)
    P = tube_points(nd, d, UNIT, d / 3)
    assert len(P) > 0
    assert np.allclose(nd.distance(P), d, rtol=2e-3)
    assert UNIT.contains(P).all()


@pytest.fixture(scope="module")
def seq(free_mesh):
    x = np.array([0.5, 0.1])
    return build_needle_sequence(x, straight_needle(x, None, UNIT), 0.7, free_mesh, UNIT, NeedleParams(n_max=4))


def test_needle_terms_are_exact_helmholtz_solutions(seq):
    pts = np.array([[-0.4, 0.2], [0.0, -0.5], [0.2, 0.6]])
    for i in range(len(seq)):
        r = seq.helmholtz_residual(pts, i)
        assert np.all(np.abs(r) <= 1e-4 * np.abs(seq.evaluate(pts, i)))


def test_needle_tube_radii_shrink_geometrically(seq):
    r = np.array([t.tube_radius for t in seq.terms])
    assert len(r) == 4
    assert np.allclose(r[1:] / r[:-1], 0.7)
    assert r[0] == pytest.approx(0.2 * 0.7)
    assert all(np.isfinite(t.fit_residual) for t in seq.terms)


def test_needle_gradient_by_finite_differences(seq):
    p = np.array([[-0.3, 0.25]])
    e = 1e-6
    g = seq.gradient(p)
    fd = [(seq.evaluate(p + d) - seq.evaluate(p - d))[0] / (2 * e) for d in (np.array([e, 0]), np.array([0, e]))]
    assert np.allclose(g[0], fd, rtol=1e-6)


def test_needle_tip_must_match_probe_point(free_mesh):
    nd = straight_needle((0.5, 0.1), None, UNIT)
    with pytest.raises(GeometryError):
        build_needle_sequence((0.0, 0.0), nd, 1.0, free_mesh, UNIT)


def test_residual_tolerance_truncates_sequence(free_mesh):
    x = np.array([0.5, 0.1])
    s = build_needle_sequence(x, straight_needle(x, None, UNIT), 0.7, free_mesh, UNIT,
                              NeedleParams(n_max=3, residual_tol=1e-12))
    assert len(s) == 0 and len(s.flagged) == 1


def test_classification_rules():
    assert classify_series([1.0, 1.001, 1.0005]).label == CONVERGED
    assert classify_series([1.0, 5.0, 20.0]).label == BLOWUP
    assert classify_series([1.0, 5.0, 20.0], scale_ref=10.0).label == UNDECIDED
    assert classify_series([1.0, 2.0]).label == UNDECIDED
    assert classify_series([1.0, 0.5, 0.8]).label == UNDECIDED
    c = classify_series([0.0, 0.0, 0.0])
    assert c.label == CONVERGED and c.limit == 0.0


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=10), st.floats(0.1, 100))
def test_classification_is_scale_invariant(vals, s):
    a = classify_series(vals)
    b = classify_series([s * v for v in vals])
    assert a.label == b.label


def test_empty_obstacle_indicator_is_zero(free_mesh, seq):
    ctx = ProbeContext(UNIT, ObstacleSpec(), 0.7, mesh=free_mesh)
    s = indicator_sequence(ctx, seq)
    assert np.all(s.values == 0) and s.classification.label == CONVERGED
    assert indicator_function((0.2, 0.2), ctx).value == 0.0
    rec = reconstruct(ctx, 0.25)
    assert np.all(rec.flags == OUTSIDE) and len(rec.boundary_estimate) == 0


def test_probe_point_checks(bench_ctx):
    with pytest.raises(GeometryError):
        reflected_solution((0.0, 0.0), bench_ctx)  # inside D
    with pytest.raises(GeometryError):
        reflected_solution((0.305, 0.0), bench_ctx)  # too close to the boundary for the quadrature
    with pytest.raises(GeometryError):
        reflected_solution((1.5, 0.0), bench_ctx)  # outside the domain


def test_reflected_field_corrects_smooth_fields_to_the_impedance_problem():
    # dual route: v + w must equal the obstacle solution with the same outer data
    obs = ObstacleSpec((Disk((0.1, 0.0), 0.35),), ImpedanceSpec(0.5, 1.0))
    ctx = ProbeContext(UNIT, obs, 2.0, h=0.04)
    d = np.array([0.6, -0.8])
    k = ctx.k

    def vg(p):
        v = np.exp(1j * k * p @ d)
        return v, 1j * k * v[:, None] * d[None, :]

    w = reflected_field(ctx, vg)
    v = interpolate(ctx.exterior, lambda p: vg(p)[0])
    u = ctx.operator.solve(vg(ctx.outer_points)[0])
    err = np.linalg.norm(v.values + w.values - u.values) / np.linalg.norm(u.values)
    assert err < 5e-3


def test_indicator_kernel_energy_green_identity(bench_ctx):
    vol, bnd = interior_kernel_energy(bench_ctx, (0.45, 0.1))
    assert vol == pytest.approx(bnd, rel=1e-6)


def test_indicator_function_positive_and_decomposed(bench_ctx):
    s = indicator_function((0.5, 0.2), bench_ctx)
    assert s.value > 0
    assert s.value == pytest.approx(s.terms_sum)
    assert s.terms["reflected_energy"] > 0


def test_ray_points_and_sweep_csv(tmp_path, bench_ctx):
    P = ray_points((0.3, 0.0), (2.0, 0.0), [0.2, 0.1])
    assert np.allclose(P, [[0.5, 0.0], [0.4, 0.0]])
    samples = [indicator_function(p, bench_ctx) for p in P]
    write_sweep_csv(tmp_path / "s.csv", [0.2, 0.1], samples)
    rows = (tmp_path / "s.csv").read_text().strip().split("\n")
    assert rows[0].startswith("dist,x,y,I") and len(rows) == 3


def test_region_quadrature_measures_areas():
    pts, w = region_quadrature(Cone((0.0, 0.0), (1.0, 0.0), 0.8, 0.3), UNIT)
    assert w.sum() == pytest.approx(0.5 * 0.8 * 0.09, rel=1e-10)
    pts, w = region_quadrature(Ball((0.1, 0.1), 0.2), UNIT)
    assert w.sum() == pytest.approx(math.pi * 0.04, rel=1e-10)
    # a ball sticking out of the domain loses the outside part
    pts, w = region_quadrature(Ball((1.0, 0.0), 0.2), UNIT)
    assert 0.3 * math.pi * 0.04 < w.sum() < 0.6 * math.pi * 0.04


def test_needle_blowup_report_shapes(seq):
    rep = needle_blowup_check(seq, Ball((-0.5, 0.0), 0.1), UNIT)
    assert len(rep.energies) == len(seq)
    assert np.all(rep.energies > 0)
    assert math.isfinite(rep.cauchy_tail)


def test_grid_points_spacing_and_margin():
    P = grid_points(UNIT, 0.1)
    assert np.all(np.hypot(*P.T) <= 1 - 0.025 + 1e-12)
    d = np.abs(P[:, None, :] - P[None]).sum(axis=2)
    d[d == 0] = np.inf
    assert d.min() == pytest.approx(0.1)


def test_boundary_transitions_on_synthetic_flags():
    P = grid_points(UNIT, 0.1)
    flags = np.where(np.hypot(*P.T) < 0.3, INSIDE, OUTSIDE)
    B = boundary_transitions(P, flags, 0.1)
    assert len(B) > 0
    assert np.all(np.abs(np.hypot(*B.T) - 0.3) <= 0.1)
    assert hausdorff_to_obstacle(B, ObstacleSpec((Disk((0, 0), 0.3),))) <= 0.1


def test_hausdorff_of_boundary_samples_is_half_the_gap():
    # symmetric distance: the worst boundary point sits midway between two samples
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    P = 0.3 * np.c_[np.cos(t), np.sin(t)]
    assert hausdorff_to_obstacle(P, ObstacleSpec((Disk((0, 0), 0.3),))) == pytest.approx(0.3 * np.pi / 400, rel=1e-2)
    assert hausdorff_to_obstacle(np.zeros((0, 2)), ObstacleSpec((Disk((0, 0), 0.3),))) == math.inf


def test_policy_needles_avoid_grazing(bench_ctx):
    # the default needle from (0.0, 0.3 + tiny) heads up; the fallbacks must not graze the obstacle
    for nd in policy_needles((0.0, 0.5), bench_ctx):
        assert np.allclose(nd.tip, [0.0, 0.5])


def test_cached_boundary_rows_reproduce_a_fresh_fit(free_mesh):
    from probescope.fem import hankel_G
    from probescope.probe import _mfs_matrix, outer_points

    x = np.array([0.4, 0.2])
    nd = straight_needle(x, None, UNIT)
    p = NeedleParams(n_max=2)
    seq = build_needle_sequence(x, nd, 0.7, free_mesh, UNIT, p)
    src = source_circle(UNIT, p.n_sources, p.source_radius)
    bd = outer_points(UNIT, free_mesh, 2 * p.n_sources)
    for n, term in enumerate(seq.terms, 1):
        d = p.d0 * p.rho**n
        C = np.r_[bd[nd.distance(bd) > d], tube_points(nd, d, UNIT, p.spacing * d)]
        g = hankel_G(0.7, np.hypot(*(C - x).T))
        c, _ = tikhonov_solve(_mfs_matrix(0.7, C, src), g, p.alpha * np.vdot(g, g).real)
        assert np.array_equal(c, term.coefficients)
