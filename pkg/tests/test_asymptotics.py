import math

import numpy as np
import pytest

from vosub.asymptotics import (cascade_one, cascade_zero, choose_p0, estimate_CA, first_order_remainder,
                               fit_slope, neumann_series, neumann_truncation_residual, remainder_probe_one,
                               remainder_probe_zero, taylor_order_bound, write_cascade_flux, write_remainder)
from vosub.elliptic import solve_dirichlet
from vosub.forward import CoefficientSet, boundary_flux, log_grid, solve_Uhat_direct
from vosub.geometry import Excitation, OrderField, Partition, boundary_point_index, build_partition_order, \
    tag_rings_sectors


@pytest.fixture(scope="module")
def two_sub(disk3):
    m = tag_rings_sectors(disk3, (), 2, 0.0)
    cfg = CoefficientSet(m, 1.0, 1.0, 0.0, build_partition_order(m, Partition(((0, 0.4), (1, 0.7)))))
    return m, cfg, Excitation.constant(m, {2: 1.0})


def test_cascade_sums_to_solution(two_sub):
    # at p -> 0 the full cascade approaches p**(M+1) U
    m, cfg, exc = two_sub
    p = 1e-3
    c = cascade_zero(cfg, exc, p, 6)
    total = sum(c.fields.values())
    U = p**3 * solve_Uhat_direct(cfg, exc, p)
    assert np.abs(total - U).max() < 1e-6 * np.abs(U).max()
    x0 = boundary_point_index(m, (1, 0))
    F = p**3 * boundary_flux(cfg, exc, p)[m.boundary_position[x0]]
    assert c.total_flux(x0) == pytest.approx(F, rel=1e-6)
    assert c.total_density().shape == (m.boundary_vertices.size,)


def test_cascade_first_term_is_lifting(two_sub):
    m, cfg, exc = two_sub
    c = cascade_zero(cfg, exc, 0.01, 1)
    lift = solve_dirichlet(cfg.system(0.0), None, 2.0 * np.ones(m.boundary_vertices.size))
    assert np.allclose(c.fields[(2, 0)], lift)
    with pytest.raises(ValueError):
        cascade_zero(cfg, exc, 0.01, 0)
    with pytest.raises(ValueError):
        cascade_one(cfg, exc, 2.0, 1)


def test_cascade_one_sums_to_solution(two_sub):
    m, cfg, exc = two_sub
    p = 1.05
    c = cascade_one(cfg, exc, p, 10)
    U = p**3 * solve_Uhat_direct(cfg, exc, p)
    assert np.abs(sum(c.fields.values()) - U).max() < 1e-8 * np.abs(U).max()


def test_fit_slope_longest_run():
    x = np.logspace(-4, 0, 12)
    y = 3 * x**1.5
    y[:3] = 1e-20
    s, mask = fit_slope(x, y, 1e-12)
    assert s == pytest.approx(1.5) and mask.sum() == 9
    s, _ = fit_slope(x[:5], y[:5], 1e-12)
    assert math.isnan(s)


def test_remainder_rates(two_sub, tmp_path):
    m, cfg, exc = two_sub
    x0 = boundary_point_index(m, (1, 0))
    for N in (1, 2):
        pz = remainder_probe_zero(cfg, exc, x0, N, log_grid(1e-6, 1e-2, 9))
        assert pz.ok and pz.slope >= N * 0.4 - 0.1
        po = remainder_probe_one(cfg, exc, x0, N, log_grid(1e-3, 0.3, 8))
        assert po.ok and po.slope == pytest.approx(N, abs=0.1)
    write_remainder(pz, tmp_path)
    rows = (tmp_path / "remainder.csv").read_text().splitlines()
    assert rows[0] == "p,absR,bound" and len(rows) == 10
    assert np.all(pz.bound()[pz.fit_mask] >= pz.absR[pz.fit_mask] * (1 - 1e-12))
    with pytest.raises(ValueError):
        remainder_probe_one(cfg, exc, x0, 1, [0.5])


def test_neumann_series_and_bounds(two_sub):
    m, cfg, exc = two_sub
    f = np.ones(m.n_vertices)
    p = 0.01
    r = [neumann_truncation_residual(cfg, f, p, N) for N in (1, 2, 3)]
    assert r[0] > r[1] > r[2]
    assert r[0] == pytest.approx(first_order_remainder(cfg, f, p), rel=1e-8)
    assert neumann_series(cfg, f, p, 1).max() > 0
    CA = estimate_CA(cfg)
    # Dirichlet Laplacian on the unit disk: ||A^-1|| = 1 / j0**2
    assert 0.5 / 2.405**2 < CA <= 1.01 / 2.405**2
    p0 = choose_p0(cfg)
    assert p0 == pytest.approx(min(0.1, (2 * CA) ** (-1 / 0.4)))


def test_taylor_order_bound(disk2):
    a = OrderField.constant(disk2, 0.5)
    for d in (0.1, 0.01):
        b = taylor_order_bound(a, 1 + d)
        assert b == pytest.approx(abs((1 + d) ** 0.5 - 1 - 0.5 * d))
        assert b <= 0.5 * 0.5 * d**2 * (1 - d) ** -1.5


def test_cascade_csv(two_sub, tmp_path):
    m, cfg, exc = two_sub
    x0 = boundary_point_index(m, (1, 0))
    write_cascade_flux([cascade_zero(cfg, exc, p, 2) for p in (1e-3, 1e-2)], x0, tmp_path)
    rows = (tmp_path / "cascade_flux.csv").read_text().splitlines()
    assert rows[0] == "k,l,p,flux" and len(rows) == 5
