import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from probescope.errors import SolverError
from probescope.fem import (FeFunction, G_and_grad, HelmholtzOperator, HelmholtzProblem, assemble, boundary_mass,
                            edge_load, energy, hankel_dG, hankel_G, interpolate, mass_matrix, solve_background,
                            solve_obstacle_problem, stiffness_matrix)
from probescope.geometry import Disk, ImpedanceSpec, ObstacleSpec
from probescope.mesh import INTERFACE, OUTER, boundary_nodes, exterior_submesh, mesh_domain
from probescope.reference import annulus_solution, l2_error


@pytest.mark.parametrize("k", [0.3, 1.0, 7.5])
@pytest.mark.parametrize("r", [1e-3, 0.2, 1.7])
def test_fundamental_solution_against_mpmath(k, r):
    # G = (i/4) H0(kr); H0 = J0 + i Y0 evaluated independently in arbitrary precision
    h0 = complex(mpmath.besselj(0, k * r) + 1j * mpmath.bessely(0, k * r))
    h1 = complex(mpmath.besselj(1, k * r) + 1j * mpmath.bessely(1, k * r))
    assert complex(hankel_G(k, r)) == pytest.approx(0.25j * h0, rel=1e-12)
    assert complex(hankel_dG(k, r)) == pytest.approx(-0.25j * k * h1, rel=1e-12)


def test_laplace_fundamental_solution():
    assert complex(hankel_G(0.0, math.e)) == pytest.approx(-1 / (2 * math.pi))
    with pytest.raises(ValueError):
        hankel_G(1.0, 0.0)


@given(st.floats(0.1, 5.0), st.floats(0.05, 2.0))
def test_fundamental_solution_satisfies_helmholtz(k, r):
    # radial Helmholtz operator by centred differences: G'' + G'/r + k^2 G = 0
    d = 1e-4 * r
    g = lambda s: complex(hankel_G(k, s))
    lap = (g(r + d) - 2 * g(r) + g(r - d)) / d**2 + complex(hankel_dG(k, r)) / r
    assert abs(lap + k**2 * g(r)) <= 1e-4 * max(1.0, abs(g(r)) / r**2)


def test_gradient_of_G_by_finite_differences():
    x = np.array([0.1, -0.2])
    y = np.array([[0.4, 0.3]])
    _, grad = G_and_grad(2.0, y, x)
    eps = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = eps
        fd = (G_and_grad(2.0, y + e, x)[0] - G_and_grad(2.0, y - e, x)[0]) / (2 * eps)
        assert complex(grad[0, i]) == pytest.approx(complex(fd[0]), rel=1e-7)


def test_stiffness_and_mass_on_affine_and_quadratic_functions(free_mesh):
    A, M = stiffness_matrix(free_mesh), mass_matrix(free_mesh)
    one = np.ones(free_mesh.n_nodes)
    x = free_mesh.nodes[:, 0]
    assert abs(one @ A @ one) < 1e-11  # constants have no energy
    assert x @ A @ x == pytest.approx(free_mesh.area, rel=1e-12)  # |grad x|^2 = 1, exact for P1
    assert one @ M @ one == pytest.approx(free_mesh.area, rel=1e-12)
    assert (A - A.T).count_nonzero() == 0 or abs(A - A.T).max() < 1e-14
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


def _loop(mesh, tag):
    return mesh.nodes[boundary_nodes(mesh, tag)[0].nodes]


def _perimeter(P):
    return float(np.sum(np.hypot(*(np.roll(P, -1, 0) - P).T)))


def test_boundary_mass_perimeters(coarse_mesh, disk_obstacle):
    n = coarse_mesh.n_nodes
    one = np.ones(n)
    outer = _perimeter(_loop(coarse_mesh, OUTER))
    assert (one @ boundary_mass(coarse_mesh, OUTER) @ one).real == pytest.approx(outer, rel=1e-13)
    B = boundary_mass(coarse_mesh, INTERFACE, np.array([2 + 3j]))
    assert one @ B @ one == pytest.approx((2 + 3j) * _perimeter(_loop(coarse_mesh, INTERFACE)), rel=1e-13)
    # quadratic weight is integrated exactly by the 3-point rule: int_{dOmega} x^2 ds vs edge-wise closed form
    x = coarse_mesh.nodes[:, 0]
    Bx = boundary_mass(coarse_mesh, OUTER, lambda p: p[:, 0] ** 2)
    e = coarse_mesh.tagged_edges(OUTER)
    a, b = coarse_mesh.nodes[e[:, 0]], coarse_mesh.nodes[e[:, 1]]
    L = np.hypot(*(b - a).T)
    assert (one @ Bx @ one).real == pytest.approx(np.sum(L * (a[:, 0] ** 2 + a[:, 0] * b[:, 0] + b[:, 0] ** 2) / 3))


def test_edge_load_normals_point_out_of_obstacle(coarse_mesh, disk_obstacle):
    c = np.asarray(disk_obstacle.components[0].center)
    # divergence theorem on the interface polygon: int nu . (x - c) ds = 2 |D_h| for the outward normal
    b = edge_load(coarse_mesh, lambda p, nrm, comp: np.sum(nrm * (p - c), axis=1))
    x, y = _loop(coarse_mesh, INTERFACE).T
    area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert b.sum().real == pytest.approx(2 * area, rel=1e-12)


def test_exterior_forms_live_on_the_submesh(coarse_mesh, disk_obstacle):
    f = assemble(coarse_mesh, "exterior", disk_obstacle.impedance, 2.0)
    ext = exterior_submesh(coarse_mesh)
    assert f.K.shape == (ext.n_nodes, ext.n_nodes)
    one = np.ones(ext.n_nodes)
    assert one @ f.M @ one == pytest.approx(ext.area, rel=1e-12)


def test_plane_wave_reproduced_without_obstacle(free_mesh):
    k = 3.0
    d = np.array([0.6, 0.8])
    exact = lambda p: np.exp(1j * k * p @ d)
    u = solve_background(free_mesh, k, exact(free_mesh.nodes[:free_mesh.n_outer]))
    assert l2_error(u, exact) < 5e-3


def test_annulus_bessel_oracle_and_second_order_rate():
    # independent reference: separable Bessel series for concentric disks
    dom = Disk((0, 0), 1.0)
    obs = ObstacleSpec((Disk((0, 0), 0.5),), ImpedanceSpec(0.3, 1.5))
    k = 2.0
    modes = {0: 1.0, 2: 0.5 - 0.25j, -3: 0.2j}
    ref = annulus_solution(k, 0.5, 1.0, 0.3 + 1.5j, modes)
    errs = []
    for h in (0.1, 0.05):
        m = mesh_domain(dom, obs, h)
        op = HelmholtzOperator(m, "exterior", obs.impedance, k)
        u = op.solve(ref(op.mesh.nodes[:op.nb]))
        errs.append(l2_error(u, ref))
    assert errs[1] < 3e-3
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_annulus_reference_satisfies_its_boundary_conditions():
    lam = 0.7 + 2j
    ref = annulus_solution(1.3, 0.4, 1.0, lam, {0: 1.0, 1: 2j})
    th = np.linspace(0, 2 * np.pi, 7)
    outer = np.c_[np.cos(th), np.sin(th)]
    assert np.allclose(ref(outer), 1.0 + 2j * np.exp(1j * th))
    r, d = 0.4, 1e-6
    p = lambda s: s * np.c_[np.cos(th), np.sin(th)]
    du = (ref(p(r + d)) - ref(p(r - d))) / (2 * d)
    assert np.allclose(du + lam * ref(p(r)), 0, atol=1e-7)


def test_robin_load_solves_inhomogeneous_impedance_problem():
    # u = J0(k r) with g = du/dnu + lam u on the interface
    from scipy.special import j0, j1

    k, a, lam = 1.5, 0.4, 0.2 + 1j
    dom = Disk((0, 0), 1.0)
    obs = ObstacleSpec((Disk((0, 0), a),), ImpedanceSpec.constant(lam))
    m = mesh_domain(dom, obs, 0.05)
    exact = lambda p: j0(k * np.hypot(*p.T)) + 0j
    g = lambda p, nrm, comp: -k * j1(k * a) + lam * j0(k * a)
    load = edge_load(m, g)
    u = solve_obstacle_problem(m, HelmholtzProblem(k, exact(m.nodes[:m.n_outer]), load, obs.impedance))
    assert l2_error(u, exact) < 2e-3


def test_operator_rejects_bad_input(coarse_mesh, disk_obstacle):
    op = HelmholtzOperator(coarse_mesh, "exterior", disk_obstacle.impedance, 1.0)
    with pytest.raises(ValueError):
        op.solve(np.ones(op.nb + 1))
    with pytest.raises(ValueError):
        HelmholtzProblem(-1.0, np.ones(3))
    with pytest.raises(ValueError):
        HelmholtzProblem(1.0, np.array([np.nan]))
    with pytest.raises(ValueError):
        assemble(coarse_mesh, "nowhere")


def test_solve_many_matches_solve(coarse_mesh, disk_obstacle, rng):
    op = HelmholtzOperator(coarse_mesh, "exterior", disk_obstacle.impedance, 1.0)
    F = rng.standard_normal((op.nb, 3)) + 1j * rng.standard_normal((op.nb, 3))
    U = op.solve_many(F)
    for j in range(3):
        assert np.allclose(U[:, j], op.solve(F[:, j]).values, atol=1e-12)


def test_energy_is_exact_for_linear_functions(free_mesh):
    u = interpolate(free_mesh, lambda p: 2 * p[:, 0] - p[:, 1] + 0j)
    e = energy(u)
    assert e.dirichlet == pytest.approx(5 * free_mesh.area, rel=1e-12)
    assert e.boundary == 0.0


def test_fe_function_validation_and_evaluation(free_mesh):
    with pytest.raises(ValueError):
        FeFunction(free_mesh, np.ones(3))
    u = interpolate(free_mesh, lambda p: p[:, 0] + 2j * p[:, 1])
    pts = np.array([[0.1, 0.2], [-0.3, 0.05]])
    assert np.allclose(u(pts), pts[:, 0] + 2j * pts[:, 1])
    assert np.isnan(u([[3.0, 0.0]])[0])


def test_dirichlet_eigenvalue_raises_or_warns():
    # k^2 = j_{0,1}^2 is a Dirichlet eigenvalue of the unit disk: the pure-Dirichlet problem is near-singular
    import warnings

    from probescope.errors import EigenvalueProximityWarning

    m = mesh_domain(Disk((0, 0), 1.0), None, 0.1)
    A, M = stiffness_matrix(m).toarray(), mass_matrix(m).toarray()
    from scipy.linalg import eigh

    free = np.arange(m.n_outer, m.n_nodes)
    lam1 = eigh(A[np.ix_(free, free)], M[np.ix_(free, free)], eigvals_only=True, subset_by_index=[0, 0])[0]
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        try:
            HelmholtzOperator(m, "full", None, math.sqrt(lam1))
        except SolverError:
            return
    assert any(issubclass(x.category, EigenvalueProximityWarning) for x in w)
