import numpy as np
import pytest
from scipy.sparse.linalg import spsolve
from scipy.special import iv

from vosub.elliptic import (AssembledSystem, apply_resolvent, assemble, pcg, solve_dirichlet, solve_S,
                            variational_flux)
from vosub.errors import SolverError
from vosub.geometry import OrderField, ScalarField, build_disk_mesh, build_square_mesh


def test_matrix_symmetric_and_rows_sum_to_reaction(disk3):
    sig = ScalarField(1 + disk3.vertices[:, 0] ** 2)
    A = assemble(disk3, sig, 0.0).matrix
    assert abs(A - A.T).max() < 1e-13
    assert np.abs(A @ np.ones(disk3.n_vertices)).max() < 1e-12
    A2 = assemble(disk3, sig, 3.0).matrix
    assert (A2 @ np.ones(disk3.n_vertices)).sum() == pytest.approx(3 * disk3.areas.sum())


def test_linear_functions_reproduced():
    m = build_square_mesh(6)
    x, y = m.vertices.T
    B = m.boundary_vertices
    exact = 1 + 2 * x - 3 * y
    u = solve_dirichlet(assemble(m, 2.5, 0.0), None, exact[B])
    assert np.abs(u - exact).max() < 1e-12


def test_total_flux_balances_source(disk3):
    # -lap u = 1, u = 0: int d_nu u = -|Omega|
    sys_ = assemble(disk3, 1.0, 0.0)
    u = solve_dirichlet(sys_, 1.0, 0.0)
    assert variational_flux(sys_, u, 1.0).total() == pytest.approx(-disk3.areas.sum(), rel=1e-10)


def test_poisson_against_closed_form():
    # -lap u = 1 on the disk, u = 0: u = (1 - r^2) / 4, d_nu u = -1/2
    m = build_disk_mesh(4)
    sys_ = assemble(m, 1.0, 0.0)
    u = solve_dirichlet(sys_, 1.0, 0.0)
    r2 = (m.vertices**2).sum(1)
    assert np.abs(u - (1 - r2) / 4).max() < 2e-3
    f = variational_flux(sys_, u, 1.0).density
    assert np.median(np.abs(f + 0.5)) < 0.01


@pytest.mark.parametrize("c", [0.3, 1.0, 4.0])
def test_bessel_lifting(c):
    # -lap u + c u = 0, u = 1 on the unit circle: u = I0(sqrt(c) r) / I0(sqrt(c))
    m = build_disk_mesh(4)
    u = solve_S(m, 1.0, c, np.ones(m.boundary_vertices.size))
    r = np.hypot(*m.vertices.T)
    k = np.sqrt(c)
    assert np.abs(u - iv(0, k * r) / iv(0, k)).max() < 1e-3


def test_discrete_maximum_principle(disk3, rng):
    phi = rng.uniform(-1, 2, disk3.boundary_vertices.size)
    u = solve_S(disk3, 1.0, 0.0, phi)
    assert u.max() <= phi.max() + 1e-12 and u.min() >= phi.min() - 1e-12
    # positive reaction shrinks toward zero
    u2 = solve_S(disk3, 1.0, 5.0, np.abs(phi))
    assert u2.min() >= 0 and u2.max() <= np.abs(phi).max() + 1e-12


def test_pcg_matches_direct(disk3):
    sys_ = assemble(disk3, 1.0, 1.0)
    I = disk3.interior_vertices
    A = sys_.matrix[I][:, I].tocsr()
    b = np.cos(disk3.vertices[I, 0])
    x, it, rel = pcg(A, b)
    assert rel <= 1e-10
    assert np.allclose(x, spsolve(A.tocsc(), b), atol=1e-9)


def test_cg_path_and_failure(disk3):
    direct = assemble(disk3, 1.0, 1.0, method="direct")
    cg = assemble(disk3, 1.0, 1.0, method="cg")
    g = np.ones(disk3.boundary_vertices.size)
    assert np.allclose(solve_dirichlet(direct, 1.0, g), solve_dirichlet(cg, 1.0, g), atol=1e-8)
    assert cg.last_info["method"] == "cg"


def test_cg_failure_raises(disk3, monkeypatch):
    import vosub.elliptic as el
    monkeypatch.setattr(el, "pcg", lambda A, b, **kw: (np.zeros_like(b), 1, 1.0))
    with pytest.raises(SolverError):
        solve_dirichlet(assemble(disk3, 1.0, 1.0, method="cg"), 1.0, 0.0)


def test_resolvent_independent_of_order_at_one(disk3):
    f = np.sin(disk3.vertices[:, 1])
    a1 = OrderField.constant(disk3, 0.4)
    a2 = OrderField.from_values(disk3, np.linspace(0.45, 0.8, disk3.n_triangles))
    u1 = apply_resolvent(disk3, 1.0, 0.5, 2.0, a1, 1.0, f)
    u2 = apply_resolvent(disk3, 1.0, 0.5, 2.0, a2, 1.0, f)
    assert np.abs(u1 - u2).max() < 1e-14


def test_invalid_coefficients(disk2):
    with pytest.raises(ValueError):
        assemble(disk2, -1.0, 0.0)
    with pytest.raises(ValueError):
        assemble(disk2, 1.0, -1.0)
    assert isinstance(assemble(disk2, 1.0, 0.0), AssembledSystem)
