"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line in the summary."""
import math
import time

import numpy as np
import pytest

from sqgpatch.cli import diagnostics_csv
from sqgpatch.contour import APRIORI_LOG, CHECK_APRIORI
from sqgpatch.curvekit import Domain, PatchFamily, circle, ellipse, make_state, polygon_area
from sqgpatch.evolve import EvolveConfig, advect_tracers, fit_distance_envelope, run
from sqgpatch.fields import (
    KernelSpec,
    near_boundary_scaling_probe,
    normal_velocity_on_boundary,
    uhold_bound,
    uinf_bound,
    velocity_at,
    velocity_oracle,
)
from sqgpatch.lembench import check_sobolev_ratios, random_field, run_bench
from sqgpatch.metrics import GaussianTest, StudyConfig, convergence_study, hausdorff_distance, weak_form_residual

# pinned tolerances
DISK_UN_TOL = 5e-6
DISK_HAUSDORFF_TOL = 1e-3
AREA_DRIFT_TOL = 1e-4
AXIS_U2_TOL = 1e-12
ORACLE_REL_TOL = 1e-4
BETA_SLOPE, BETA_SLOPE_TOL = 1.0, 0.2
GRAD_SLOPE_TOL = 0.1
VERTICAL_SLOPE, VERTICAL_SLOPE_TOL = 1.0, 0.05
JACOBIAN_TOL = 1e-3
SCALE_INV_TOL = 1e-10
REFINE_TOL = 0.01
WEAK_FORM_TOL = 5e-3

# runtime budgets in seconds
BUDGET = {1: 120, 2: 10, 3: 300, 4: 300, 5: 600, 6: 300, 7: 60, 8: 120, 9: 120, 10: 300}

SCENARIO_ALPHA = 0.1
SCENARIO_FAMILY = PatchFamily([0.3, 0.15])


def scenario_state(M):
    return make_state([circle((-1.25, 0.0), 1.0, M), ellipse((1.2, 0.1), 0.8, 0.6, 0.4, M)])


def scenario_run(M, cadence, dt=None):
    cfg = EvolveConfig(t_end=1.0, dt=dt, cadence=cadence, resample_every=10)
    t0 = time.perf_counter()
    res = run(scenario_state(M), SCENARIO_FAMILY, SCENARIO_ALPHA, None, cfg)
    return res, time.perf_counter() - t0


def area_drift(res):
    a0 = np.abs(res.diagnostics[0].areas)
    return np.abs(np.array([d.areas for d in res.diagnostics]) - a0).max(axis=0) / a0


@pytest.fixture(scope="module", autouse=True)
def fresh_apriori_log():
    APRIORI_LOG.reset()
    yield


@pytest.fixture(scope="module")
def scenario():
    r256, t256 = scenario_run(256, 0.1)
    dt512 = 0.5 * 1.0 / r256.steps
    r512, t512 = scenario_run(512, 0.05, dt=dt512)
    return {"256": r256, "512": r512, "t256": t256, "t512": t512}


def random_halfplane_state(rng, n_patches, M=128):
    curves = []
    x0 = rng.uniform(-1.0, 1.0)
    for k in range(n_patches):
        a = rng.uniform(0.4, 1.0)
        b = rng.uniform(0.4, a)
        cx = x0 + 2.5 * k
        cy = a + rng.uniform(0.2, 1.5)
        curves.append(ellipse((cx, cy), a, b, rng.uniform(0, math.pi), M))
    th = rng.uniform(0.3, 1.5, n_patches) * rng.choice([-1.0, 1.0], n_patches)
    return make_state(curves, Domain.HalfPlane), PatchFamily(list(th), Domain.HalfPlane)


def random_state(rng, M=64):
    n = int(rng.integers(1, 3))
    curves = [ellipse((2.6 * k, rng.uniform(-0.3, 0.3)), rng.uniform(0.6, 1.0), rng.uniform(0.4, 0.6),
                      rng.uniform(0, math.pi), M) for k in range(n)]
    th = list(rng.uniform(0.3, 1.5, n) * rng.choice([-1.0, 1.0], n))
    return make_state(curves), PatchFamily(th)


# ---------------------------------------------------------------------------


@pytest.mark.criterion(1)
def test_c01_disk_equilibrium(record_property):
    t0 = time.perf_counter()
    parts, ok = [], True
    for alpha in (0.05, 0.25, 0.45):
        st = make_state([circle(M=512)])
        fam = PatchFamily([1.0])
        un = float(np.abs(normal_velocity_on_boundary(st, fam, KernelSpec(alpha))[0]).max())
        res = run(st, fam, alpha, None, EvolveConfig(t_end=1.0))
        end = res.trajectory[-1]
        dH = hausdorff_distance(end, st)
        drift = abs(polygon_area(end.curves[0]) / polygon_area(st.curves[0]) - 1)
        ok &= (un < DISK_UN_TOL and dH < DISK_HAUSDORFF_TOL and drift < AREA_DRIFT_TOL
               and not res.verdict.tripped and end.time == 1.0)
        parts.append(f"a={alpha}: |u.n|={un:.1e} dH={dH:.1e} area={drift:.1e}")
    elapsed = time.perf_counter() - t0
    record_property("detail", "; ".join(parts) + f"; {elapsed:.0f}s/{BUDGET[1]}s")
    assert ok
    assert elapsed < BUDGET[1]


@pytest.mark.criterion(2)
def test_c02_half_plane_tangency(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    x = np.stack([np.linspace(-6, 8, 100), np.zeros(100)], 1)
    for i in range(10):
        st, fam = random_halfplane_state(rng, 1 + i % 2)
        k = KernelSpec(float(rng.uniform(0.05, 0.45)), Domain.HalfPlane)
        worst = max(worst, float(np.abs(velocity_at(x, st, fam, k)[:, 1]).max()))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max |u2| on axis {worst:.1e} (tol {AXIS_U2_TOL:g}); {elapsed:.1f}s")
    assert worst < AXIS_U2_TOL
    assert elapsed < BUDGET[2]


@pytest.mark.criterion(3)
def test_c03_velocity_oracle(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        st, fam = random_state(rng)
        k = KernelSpec(float(rng.uniform(0.05, 0.45)))
        z = st.curves[int(rng.integers(st.N))].samples
        # a point inside, near or outside a patch: a random multiple of a boundary node about its centre
        c = z.mean(axis=0)
        x = c + rng.uniform(0.3, 1.6) * (z[int(rng.integers(z.shape[0]))] - c)
        u = velocity_at(x, st, fam, k)
        uo = velocity_oracle(x, st, fam, k)
        worst = max(worst, float(np.linalg.norm(u - uo) / np.linalg.norm(uo)))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max rel error {worst:.1e} (tol {ORACLE_REL_TOL:g}); {elapsed:.0f}s")
    assert worst < ORACLE_REL_TOL
    assert elapsed < BUDGET[3]


@pytest.mark.criterion(4)
def test_c04_area_conservation(scenario, record_property):
    d256 = area_drift(scenario["256"])
    d512 = area_drift(scenario["512"])
    elapsed = scenario["t256"] + scenario["t512"]
    ok_runs = not scenario["256"].verdict.tripped and not scenario["512"].verdict.tripped
    record_property("detail", f"drift M=256 {d256.max():.1e}, M=512 {d512.max():.1e} "
                              f"(ratio {(d512 / d256).max():.2g}); {elapsed:.0f}s")
    assert ok_runs
    assert d256.max() < AREA_DRIFT_TOL
    assert np.all(d512 <= d256 / 2)
    assert elapsed < BUDGET[4]


@pytest.mark.criterion(5)
def test_c05_beta_first_order(record_property):
    t0 = time.perf_counter()
    cfg = StudyConfig(scenario_state(256), SCENARIO_FAMILY, SCENARIO_ALPHA,
                      EvolveConfig(t_end=0.25, resample_every=10), (0.08, 0.04, 0.02, 0.01))
    table = convergence_study("BetaSweep", cfg)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"slope {table.slope:.3f} (target {BETA_SLOPE} +- {BETA_SLOPE_TOL}); "
                              f"distances {', '.join(f'{d:.2e}' for d in table.distances)}; {elapsed:.0f}s")
    assert len(table.distances) == 4
    assert abs(table.slope - BETA_SLOPE) <= BETA_SLOPE_TOL
    assert elapsed < BUDGET[5]


@pytest.mark.criterion(6)
def test_c06_velocity_bounds(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    states = [
        (make_state([circle(M=256)]), PatchFamily([1.0]), KernelSpec(0.25)),
        (scenario_state(256), SCENARIO_FAMILY, KernelSpec(SCENARIO_ALPHA)),
    ]
    st, fam = random_halfplane_state(rng, 2)
    states.append((st, fam, KernelSpec(0.35, Domain.HalfPlane)))
    inf_ratio = hold_ratio = 0.0
    for st, fam, k in states:
        lo = np.min([z.min(axis=0) for z in st.arrays()], axis=0) - 1.0
        hi = np.max([z.max(axis=0) for z in st.arrays()], axis=0) + 1.0
        if st.domain == Domain.HalfPlane:
            lo[1] = 0.0
        X = rng.uniform(lo, hi, size=(300, 2))
        U = velocity_at(X, st, fam, k)
        inf_ratio = max(inf_ratio, float(np.linalg.norm(U, axis=1).max() / uinf_bound(fam, st, k)))
        i, j = rng.integers(0, len(X), size=(2, 1000))
        m = i != j
        q = (np.linalg.norm(U[i[m]] - U[j[m]], axis=1)
             / np.linalg.norm(X[i[m]] - X[j[m]], axis=1) ** (1 - 2 * k.alpha))
        hold_ratio = max(hold_ratio, float(q.max() / uhold_bound(fam, st, k)))
    slopes = {}
    for alpha in (0.1, 0.25, 0.4):
        st, fam, k = make_state([circle(M=256)]), PatchFamily([1.0]), KernelSpec(alpha)
        res = near_boundary_scaling_probe(st, fam, k, (1.0, 0.0), np.geomspace(1e-3, 1e-1, 7))
        slopes[alpha] = res.grad_slope
    slope_err = max(abs(s + 2 * a) for a, s in slopes.items())
    elapsed = time.perf_counter() - t0
    record_property("detail", f"|u|/bound {inf_ratio:.2f}, holder/bound {hold_ratio:.2f}, "
                              f"grad slopes {', '.join(f'{s:.3f}' for s in slopes.values())} "
                              f"(-2a +- {GRAD_SLOPE_TOL}); {elapsed:.0f}s")
    assert inf_ratio <= 1.0
    assert hold_ratio <= 1.0
    assert slope_err < GRAD_SLOPE_TOL
    assert elapsed < BUDGET[6]


@pytest.mark.criterion(7)
def test_c07_vertical_linear_scaling(record_property):
    t0 = time.perf_counter()
    st = make_state([circle((0.0, 3.0), 1.0, 256)], Domain.HalfPlane)
    res = near_boundary_scaling_probe(st, PatchFamily([1.0], Domain.HalfPlane), KernelSpec(0.05, Domain.HalfPlane),
                                      None, None, x1=1.0, heights=np.geomspace(1e-3, 1e-1, 7))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"slope {res.u2_slope:.4f} ({VERTICAL_SLOPE} +- {VERTICAL_SLOPE_TOL}); {elapsed:.1f}s")
    assert abs(res.u2_slope - VERTICAL_SLOPE) < VERTICAL_SLOPE_TOL
    assert elapsed < BUDGET[7]


@pytest.mark.criterion(8)
def test_c08_flow_map_incompressible(record_property):
    t0 = time.perf_counter()
    fam, ker = PatchFamily([1.0]), KernelSpec(0.25)
    res = run(make_state([circle(M=256)]), fam, 0.25, None, EvolveConfig(t_end=1.0, cadence=0.05))
    # interior and exterior seeds, some close to the boundary
    seeds = [[0.5, 0.0], [0.0, -0.9], [0.0, 0.99], [2.0, 0.0], [-1.05, 0.0], [0.0, 1.01]]
    paths = advect_tracers(seeds, res.trajectory, fam, ker, jacobian=True)
    jac = max(float(np.abs(p.jacobian_estimate - 1).max()) for p in paths)
    B = fit_distance_envelope(paths)
    crossed = any(p.crossed for p in paths)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max |det - 1| {jac:.1e} (tol {JACOBIAN_TOL:g}), B {B:.3g}; {elapsed:.0f}s")
    assert jac < JACOBIAN_TOL
    assert math.isfinite(B)
    assert not crossed
    assert elapsed < BUDGET[8]


@pytest.mark.criterion(9)
def test_c09_inequality_bench(record_property):
    t0 = time.perf_counter()
    entries = {e.check: e for e in run_bench(seed=0, corpus_size=100)}
    d_ratio = entries["derivative_bound"].max_ratio
    bv_ratio = entries["bv_bound"].max_ratio
    scale_err = refine_err = 0.0
    for i in range(10):
        f = random_field((9, i))
        base = np.array(check_sobolev_ratios(f, 2, 1 / 6))
        for lam in (0.5, 2.0, 10.0):
            scale_err = max(scale_err, float(np.abs(np.array(check_sobolev_ratios(f.scaled(lam), 2, 1 / 6))
                                                    / base - 1).max()))
        ref = np.array(check_sobolev_ratios(f.refined(2), 2, 1 / 6))
        refine_err = max(refine_err, float(np.abs(ref / base - 1).max()))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"f' ratio {d_ratio:.3f}, bv ratio {bv_ratio:.3f}, scale {scale_err:.1e}, "
                              f"refine {refine_err:.1e}; {elapsed:.0f}s")
    assert d_ratio <= 1.0 and bv_ratio <= 1.0
    assert scale_err < SCALE_INV_TOL
    assert refine_err < REFINE_TOL
    assert elapsed < BUDGET[9]


@pytest.mark.criterion(10)
def test_c10_weak_form(scenario, record_property):
    t0 = time.perf_counter()
    f = GaussianTest((0.0, 0.0), 1.0)
    ker = KernelSpec(SCENARIO_ALPHA)
    coarse = weak_form_residual(scenario["256"].trajectory, SCENARIO_FAMILY, ker, f).relative.max()
    fine = weak_form_residual(scenario["512"].trajectory, SCENARIO_FAMILY, ker, f).relative.max()
    elapsed = time.perf_counter() - t0
    record_property("detail", f"relative residual {coarse:.1e} -> {fine:.1e} refined (tol {WEAK_FORM_TOL:g}); "
                              f"{elapsed:.0f}s")
    assert coarse < WEAK_FORM_TOL
    assert fine < coarse
    assert elapsed < BUDGET[10]


@pytest.mark.criterion(12)
def test_c12_determinism(scenario, record_property):
    first = diagnostics_csv(scenario["256"].diagnostics, 2)
    again, _ = scenario_run(256, 0.1)
    same = diagnostics_csv(again.diagnostics, 2) == first
    record_property("detail", f"{len(first.splitlines()) - 1} rows, identical: {same}")
    assert same


@pytest.mark.criterion(11)
def test_c11_apriori_bound(record_property):
    log = APRIORI_LOG
    record_property("detail", f"{log.evaluations} checked evaluations, max ratio {log.max_ratio:.2e}, "
                              f"violations {log.violations}")
    assert CHECK_APRIORI
    assert log.evaluations > 0
    assert log.violations == 0
