import numpy as np
import pytest
from scipy.special import gamma

from vosub.forward import CoefficientSet, boundary_flux, weighted_data
from vosub.geometry import Excitation, OrderField, boundary_point_index, build_disk_mesh, tag_rings_sectors
from vosub.timedomain import FluxSeries, L1Weights, l1_step_solve, laplace_at, weighted_time_integral, \
    write_flux_series


def test_l1_weights_telescope():
    W = L1Weights.build([0.3, 0.7, 0.3], 0.01, 50)
    assert np.allclose(W.orders, [0.3, 0.7])
    for a, row in zip(W.orders, W.table):
        # sum_{m<n} w[m] = n**(1-a) / Gamma(2-a)
        assert row[:50].sum() == pytest.approx(50 ** (1 - a) / gamma(2 - a), rel=1e-12)
        assert np.all(np.diff(row) < 0)
    assert np.allclose(W.scale(), 0.01 ** -W.orders)


def test_l1_exact_for_linear_in_time():
    # Caputo derivative of t is t**(1-a) / Gamma(2-a); the L1 rule is exact for it
    a, tau, n = 0.6, 0.1, 40
    W = L1Weights.build([a], tau, n)
    u = tau * np.arange(n + 1)
    dU = np.diff(u)
    approx = W.scale()[0] * np.dot(W.table[0][:n], dU[::-1])
    assert approx == pytest.approx((n * tau) ** (1 - a) / gamma(2 - a), rel=1e-12)


@pytest.fixture(scope="module")
def coarse_series():
    m = tag_rings_sectors(build_disk_mesh(2), (), 2, 0.0)
    a = OrderField.from_values(m, np.where(m.triangle_tags == 0, 0.45, 0.7))
    cfg = CoefficientSet(m, 1.0, 1.0, 0.2, a)
    exc = Excitation.constant(m, {2: 1.0})
    return cfg, exc, l1_step_solve(cfg, exc, 0.01, 10.0)


def test_time_domain_matches_laplace_side(coarse_series):
    cfg, exc, s = coarse_series
    assert s.flux.shape == (1001, cfg.mesh.boundary_vertices.size)
    assert np.all(s.flux[0] == 0)
    F1 = boundary_flux(cfg, exc, 1.0)
    lap = laplace_at(s, 1.0)
    # T = 10 cuts the e^-t weight at ~5e-5 times a t**3 tail
    assert np.abs(lap / F1 - 1).max() < 0.02
    wi = weighted_time_integral(s)
    D = weighted_data(cfg, exc).D
    assert np.abs(wi.values / D - 1).max() < 0.05
    assert wi.tail_estimate > 0


def test_series_selection_and_csv(coarse_series, tmp_path):
    cfg, exc, s = coarse_series
    x0 = boundary_point_index(cfg.mesh, (1, 0))
    sub = s.select([x0])
    assert np.array_equal(sub.at(x0), s.at(x0))
    with pytest.raises(ValueError):
        s.at(0)
    write_flux_series(s, tmp_path, [x0])
    rows = (tmp_path / "flux_series.csv").read_text().splitlines()
    assert rows[0] == "t,vertex,flux" and len(rows) == 1002


def test_tracked_subset_matches_full(coarse_series):
    cfg, exc, s = coarse_series
    x0 = boundary_point_index(cfg.mesh, (0, 1))
    part = l1_step_solve(cfg, exc, 0.01, 10.0, tracked=[x0], block=64)
    assert np.allclose(part.at(x0), s.at(x0), rtol=1e-10, atol=1e-12)


def test_laplace_of_known_series():
    t = 0.01 * np.arange(4001)
    s = FluxSeries(0.01, 40.0, np.array([0]), t[:, None] ** 2, np.ones(1), 2)
    assert laplace_at(s, 1.0)[0] == pytest.approx(2.0, rel=1e-4)
    assert weighted_time_integral(s).values[0] == pytest.approx(6.0, rel=1e-4)


def test_step_arguments(coarse_series):
    cfg, exc, _ = coarse_series
    with pytest.raises(ValueError):
        l1_step_solve(cfg, exc, 0.01, 5.0)
    with pytest.raises(ValueError):
        l1_step_solve(cfg, exc, 0.3, 10.0)
    with pytest.raises(ValueError):
        l1_step_solve(cfg, exc, -1.0, 10.0)
    with pytest.raises(ValueError):
        l1_step_solve(cfg, exc, 0.01, 10.0, tracked=[0])
