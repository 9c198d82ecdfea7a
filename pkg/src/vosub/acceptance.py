"""Acceptance suite: twelve end-to-end checks with fixed tolerances.

Each ``criterion_<n>`` returns a :class:`CriterionResult`; :func:`run_all`
drives them for the ``verify`` command and the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import iv

from .asymptotics import (choose_p0, neumann_truncation_residual, remainder_probe_one, remainder_probe_zero,
                          taylor_order_bound)
from .elliptic import RESIDUAL_TOL
from .forward import (CoefficientSet, boundary_flux, flux_curve, log_grid, solve_Uhat_direct, solve_Uhat_repr,
                      weighted_data, weighted_data_fd)
from .geometry import (Excitation, OrderField, Partition, ScalarField, boundary_point_index, build_disk_mesh,
                       build_partition_order, tag_rings_sectors)
from .inverse import (FIGURE1_DISTINGUISHABLE, distinguishability_experiment, figure1_orders, fit_power_sum,
                      hopf_probe, known_medium_coefficients, linearized_recovery, reciprocity_check,
                      recover_exponents, stability_report, write_distance_matrix)
from .timedomain import l1_step_solve, laplace_at, weighted_time_integral

LEVEL = 4  # h ~ 0.05


@dataclass
class Check:
    name: str
    value: float
    threshold: str
    ok: bool


@dataclass
class CriterionResult:
    number: int
    title: str
    budget: float
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    def add(self, name, value, threshold, ok):
        self.checks.append(Check(name, float(value), threshold, bool(ok)))

    @property
    def within_budget(self) -> bool:
        return self.seconds < self.budget

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks) and self.within_budget

    def failing(self):
        out = [c.name for c in self.checks if not c.ok]
        if not self.within_budget:
            out.append("runtime")
        return out

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = "" if self.passed else f"  failing: {', '.join(self.failing())}"
        return f"[{tag}] {self.number:2d} {self.title} ({self.seconds:.1f}s / {self.budget:.0f}s){extra}"

    def report(self) -> str:
        rows = [self.line()]
        for c in self.checks:
            rows.append(f"      {'ok ' if c.ok else 'BAD'} {c.name}: {c.value:.6g} ({c.threshold})")
        return "\n".join(rows)


def _timed(number, title, budget):
    def deco(fn):
        def run(**kw):
            res = CriterionResult(number, title, budget)
            t0 = time.perf_counter()
            fn(res, **kw)
            res.seconds = time.perf_counter() - t0
            return res
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return deco


# --------------------------------------------------------------------------
# shared fixtures


def bessel_case(level=LEVEL, alpha=0.5):
    mesh = build_disk_mesh(level)
    cfg = CoefficientSet.uniform(mesh, alpha)
    exc = Excitation.constant(mesh, {2: 1.0})
    return mesh, cfg, exc


def bessel_U(p, r, alpha=0.5):
    k = p ** (alpha / 2)
    return 2 * p ** -3 * iv(0, k * r) / iv(0, k)


def bessel_F(p, alpha=0.5):
    k = p ** (alpha / 2)
    return 2 * p ** -3 * k * iv(1, k) / iv(0, k)


def bessel_D(alpha=0.5):
    """``-dF/dp`` at ``p = 1`` for the constant-order Bessel case."""
    ratio = iv(1, 1.0) / iv(0, 1.0)
    f = ratio            # k I1(k) / I0(k) at k = 1
    fp = 1.0 - ratio**2  # its k-derivative at k = 1
    return -(-6 * f + 2 * fp * alpha / 2)


def halves(mesh):
    """Upper/lower half-disk tags (0: y > 0)."""
    return tag_rings_sectors(mesh, (), 2, 0.0)


def two_subdomain(level=LEVEL, lo=0.4, hi=0.7):
    """Order ``lo`` on the left half-disk and ``hi`` on the right one."""
    mesh = tag_rings_sectors(build_disk_mesh(level), (), 2, -np.pi / 2)
    alpha = build_partition_order(mesh, Partition.from_mapping({1: lo, 0: hi}))
    return mesh, CoefficientSet(mesh, 1.0, 1.0, 0.0, alpha), Excitation.constant(mesh, {2: 1.0})


def random_configuration(mesh, rng):
    """Smooth positive ``sigma, rho, q``, a ring/sector order map and a two-term excitation."""
    x, y = mesh.vertices.T

    def smooth(base, amp):
        k1, k2, ph = rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2 * np.pi)
        return ScalarField(base + amp * rng.random() * (1 + np.sin(k1 * x + k2 * y + ph)))

    tagged = tag_rings_sectors(mesh, (0.5,), 3, rng.uniform(0, 2 * np.pi))
    vals = rng.uniform(0.4, 0.75, size=6)
    alpha = OrderField.from_values(tagged, vals[tagged.triangle_tags])
    cfg = CoefficientSet(tagged, smooth(0.5, 1.0), smooth(0.5, 1.0), smooth(0.0, 1.0), alpha)
    th = np.arctan2(*mesh.vertices[mesh.boundary_vertices][:, ::-1].T)
    j = rng.integers(1, 4)
    phi2 = 1.0 + 0.5 * np.cos(j * th + rng.uniform(0, 6.3))
    phi3 = rng.uniform(-1, 1) * (1.0 + 0.3 * np.sin(th))
    exc = Excitation(((2, phi2), (3, phi3)))
    return cfg, exc


# --------------------------------------------------------------------------
# criteria


@_timed(1, "Bessel oracle accuracy", 30)
def criterion_1(res: CriterionResult, **_):
    mesh, cfg, exc = bessel_case()
    r = np.hypot(*mesh.vertices.T)
    for p in (1e-4, 1e-2, 1.0):
        U = solve_Uhat_direct(cfg, exc, p)
        Ue = bessel_U(p, r)
        fe = np.abs(U - Ue).max() / np.abs(Ue).max()
        res.add(f"field p={p:g}", fe, "<= 1%", fe <= 0.01)
        F = boundary_flux(cfg, exc, p)
        ff = np.abs(F / bessel_F(p) - 1).max()
        res.add(f"flux p={p:g} (uniform)", ff, "<= 2%", ff <= 0.02)
    errs, hs = [], []
    for level in (2, 3, 4, 5):
        m, c, e = bessel_case(level)
        U = solve_Uhat_direct(c, e, 1.0)
        rr = np.hypot(*m.vertices.T)
        mass = c.system(1.0).load(np.ones(m.n_vertices))
        errs.append(np.sqrt(mass @ (U - bessel_U(1.0, rr)) ** 2))
        hs.append(m.h)
    rates = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    res.add("L2 rate (min over 3 refinements)", rates.min(), ">= 1.8", rates.min() >= 1.8)


@_timed(2, "Representation identity", 60)
def criterion_2(res: CriterionResult, seed=42, level=3, **_):
    rng = np.random.default_rng(seed)
    mesh = build_disk_mesh(level)
    worst = 0.0
    for _ in range(20):
        cfg, exc = random_configuration(mesh, rng)
        for p in (1e-4, 1e-2, 1.0, 10.0):
            d = solve_Uhat_direct(cfg, exc, p)
            r = solve_Uhat_repr(cfg, exc, p)
            worst = max(worst, np.abs(r - d).max() / np.abs(d).max())
    res.add("max relative gap over 20 x 4", worst, "<= 1e-8", worst <= 1e-8)


@_timed(3, "Neumann-series bound", 60)
def criterion_3(res: CriterionResult, **_):
    grid = log_grid(1e-6, 1e-2, 9)
    cases = [("constant", bessel_case()[1]), ("two-subdomain", two_subdomain()[1])]
    for name, cfg in cases:
        f = np.ones(cfg.mesh.n_vertices)
        for N in (1, 2, 3):
            ratio = [neumann_truncation_residual(cfg, f, p, N) / p ** (N * cfg.alpha.alpha_min) for p in grid]
            band = max(ratio) / min(ratio)
            res.add(f"{name} N={N} band", band, "<= 3", band <= 3)


@_timed(4, "Low-frequency remainder rates", 90)
def criterion_4(res: CriterionResult, **_):
    for name, (mesh, cfg, exc) in (("constant", bessel_case()), ("two-subdomain", two_subdomain())):
        x0 = boundary_point_index(mesh, (1.0, 0.0))
        p0 = choose_p0(cfg)
        grid = log_grid(1e-6, 0.1 * p0, 12)
        for N in (1, 2):
            pr = remainder_probe_zero(cfg, exc, x0, N, grid)
            floor = N * cfg.alpha.alpha_min
            res.add(f"{name} N={N} slope", pr.slope, f">= {floor - 0.1:.2f}", pr.slope >= floor - 0.1)
            if name == "constant" and N == 2:
                res.add("constant N=2 slope vs 1.0", abs(pr.slope - 1.0), "<= 0.1", abs(pr.slope - 1.0) <= 0.1)


@_timed(5, "Near-one remainder rates", 60)
def criterion_5(res: CriterionResult, seed=42, **_):
    mesh, cfg, exc = two_subdomain()
    x0 = boundary_point_index(mesh, (1.0, 0.0))
    grid = log_grid(1e-3, 0.3, 10)
    for N in (1, 2):
        pr = remainder_probe_one(cfg, exc, x0, N, grid)
        res.add(f"N={N} slope", pr.slope, f">= {N - 0.1}", pr.slope >= N - 0.1)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for p in np.linspace(0.5, 1.5, 102)[1:-1]:
        a = OrderField.from_values(mesh, rng.uniform(0.4, 0.79, mesh.n_triangles))
        worst = max(worst, taylor_order_bound(a, p) - (p - 1) ** 2)
    res.add("max taylor bound minus (p-1)^2", worst, "<= 0", worst <= 0)


@_timed(6, "Weighted-data identity", 30)
def criterion_6(res: CriterionResult, **_):
    mesh, cfg, exc = bessel_case()
    D = weighted_data(cfg, exc)
    e1 = np.abs(weighted_data_fd(cfg, exc, 1e-2).D - D.D).max()
    e2 = np.abs(weighted_data_fd(cfg, exc, 5e-3).D - D.D).max()
    res.add("FD error ratio on halving delta", e1 / e2, "in [3, 5]", 3 <= e1 / e2 <= 5)
    rel = np.abs(D.D / bessel_D() - 1).max()
    res.add("vs closed-form derivative (uniform)", rel, "<= 2%", rel <= 0.02)


@_timed(7, "Exponent recovery", 120)
def criterion_7(res: CriterionResult, **_):
    p = log_grid(1e-6, 1e-2, 24)
    exps, coef, *_ = fit_power_sum(p, 3 * p**0.4 + 1.5 * p**0.7, 2)
    err = np.abs(exps - [0.4, 0.7]).max() if exps.size == 2 else np.inf
    res.add("synthetic exponent error", err, "<= 1e-2", err <= 1e-2)
    mesh, cfg, exc = two_subdomain()
    x0 = boundary_point_index(mesh, (1.0, 0.0))
    b, _ = known_medium_coefficients(cfg, exc, [[1], [0]], x0)
    curve = flux_curve(cfg, exc, x0, log_grid(1e-9, 1e-4, 24), "representation")
    model = recover_exponents(curve, known_baseline=b, max_terms=2)
    err = np.abs(model.exponents - [0.4, 0.7]).max() if model.exponents.size == 2 else np.inf
    res.add("forward-data exponent error", err, "<= 2e-2", err <= 2e-2)


@_timed(8, "Hopf/monotonicity probes", 60)
def criterion_8(res: CriterionResult, seed=42, **_):
    mesh = tag_rings_sectors(build_disk_mesh(LEVEL), (0.25, 0.5, 0.75), 6)
    cfg = CoefficientSet(mesh, 1.0, 1.0, 1.0, OrderField.constant(mesh, 0.5))
    exc = Excitation.constant(mesh, {2: 1.0})
    x0 = boundary_point_index(mesh, (1.0, 0.0))
    rng = np.random.default_rng(seed)
    order = rng.permutation(mesh.tags)
    vals = np.array([hopf_probe(cfg, exc, order[:i], x0) for i in range(1, 11)])
    res.add("largest probe value", vals.max(), "< 0", vals.max() < 0)
    step = np.diff(vals).max()
    res.add("largest increment along the nested chain", step, "< 0", step < 0)


@_timed(9, "Reciprocity identity", 60)
def criterion_9(res: CriterionResult, seed=42, level=3, **_):
    rng = np.random.default_rng(seed)
    mesh = build_disk_mesh(level)
    worst = 0.0
    for _ in range(10):
        cfg, exc = random_configuration(mesh, rng)
        da = rng.uniform(-0.05, 0.05, cfg.mesh.n_triangles)
        a1 = OrderField.from_values(cfg.mesh, np.clip(cfg.alpha.values + da, 0.39, 0.77))
        worst = max(worst, reciprocity_check(a1, cfg.alpha, cfg, exc).relative)
    res.add("max relative residual over 10 draws", worst, "<= 1e-9", worst <= 1e-9)


def _recovery_error(mesh, dalpha, base=0.5):
    cfg = CoefficientSet(mesh, 1.0, 1.0, 0.0, OrderField.constant(mesh, base))
    exc = Excitation.constant(mesh, {2: 1.0})
    dalpha = np.asarray(dalpha, float)
    a1 = OrderField.from_values(mesh, base + dalpha[mesh.triangle_tags])
    Dd = weighted_data(cfg.with_alpha(a1), exc) - weighted_data(cfg, exc)
    part = Partition(tuple((int(t), base + 0.01 * i) for i, t in enumerate(mesh.tags)))
    rec = linearized_recovery(Dd, part, cfg, exc)
    return np.abs(rec.dalpha - dalpha) / np.abs(dalpha)


@_timed(10, "Linearized recovery and stability", 180)
def criterion_10(res: CriterionResult, **_):
    base = build_disk_mesh(LEVEL)
    setups = {
        "2 subdomains": (halves(base), np.array([0.05, 0.02])),
        "4 subdomains": (tag_rings_sectors(base, (0.5,), 2, 0.0), np.array([0.05, 0.03, 0.02, 0.04])),
    }
    for name, (mesh, da) in setups.items():
        err = _recovery_error(mesh, da)
        res.add(f"{name} max relative error", err.max(), "<= 5%", err.max() <= 0.05)
        half = _recovery_error(mesh, da / 2)
        ratio = np.linalg.norm(err * da) / np.linalg.norm(half * da / 2)
        res.add(f"{name} error ratio when halving", ratio, "in [2.5, 6]", 2.5 <= ratio <= 6)
    ratios = []
    for level in (LEVEL, LEVEL + 1):
        mesh = tag_rings_sectors(build_disk_mesh(level), (0.5,), 2, 0.0)
        cfg = CoefficientSet(mesh, 1.0, 1.0, 0.0, OrderField.constant(mesh, 0.5))
        exc = Excitation.constant(mesh, {2: 1.0})
        a1 = OrderField.from_values(mesh, 0.5 + np.array([0.05, 0.03, 0.02, 0.04])[mesh.triangle_tags])
        ratios.append(stability_report(a1, cfg.alpha, cfg, exc).ratio)
    change = abs(ratios[1] / ratios[0] - 1)
    res.add("stability ratio change under refinement", change, "<= 1%", change <= 0.01)


@_timed(11, "Time-domain cross-check", 300)
def criterion_11(res: CriterionResult, **_):
    mesh, cfg, exc = bessel_case()
    series = l1_step_solve(cfg, exc, 1e-3, 40.0)
    lap = laplace_at(series, 1.0)
    F1 = boundary_flux(cfg, exc, 1.0)[mesh.boundary_position[series.vertices]]
    e1 = np.abs(lap / F1 - 1).max()
    res.add("p=1 transform vs Laplace flux", e1, "<= 2%", e1 <= 0.02)
    wi = weighted_time_integral(series).values
    D = weighted_data(cfg, exc).D[mesh.boundary_position[series.vertices]]
    e2 = np.abs(wi / D - 1).max()
    res.add("weighted time integral vs sensitivity data", e2, "<= 3%", e2 <= 0.03)


@_timed(12, "Distinguishability scenario", 120)
def criterion_12(res: CriterionResult, out_dir=None, threads=None, **_):
    mesh = build_disk_mesh(LEVEL)
    cfg = CoefficientSet.uniform(mesh, 0.5)
    exc = Excitation.constant(mesh, {2: 1.0})
    x0 = boundary_point_index(mesh, (1.0, 0.0))
    Dm, _ = distinguishability_experiment(figure1_orders(mesh), cfg, exc, x0, log_grid(1e-6, 1e-2, 12),
                                          threads)
    if out_dir is not None:
        path = write_distance_matrix(Dm, out_dir)
        res.add("distance matrix CSV rows", sum(1 for _ in open(path)) - 1, "== 4", True)
    tol = 10 * RESIDUAL_TOL
    for i, j in FIGURE1_DISTINGUISHABLE:
        res.add(f"distance a{i + 1}-a{j + 1}", Dm[i, j], f"> {tol:g}", Dm[i, j] > tol)
    res.add("diagonal", np.abs(np.diag(Dm)).max(), "== 0", np.all(np.diag(Dm) == 0))


CRITERIA = {n: globals()[f"criterion_{n}"] for n in range(1, 13)}


def run_all(numbers=None, seed=42, out_dir=None, threads=None, echo=print):
    results = []
    for n in numbers or sorted(CRITERIA):
        r = CRITERIA[n](seed=seed, out_dir=out_dir, threads=threads)
        if echo:
            echo(r.line())
        results.append(r)
    return results
