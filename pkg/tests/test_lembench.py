import json
import math

import numpy as np
import pytest

from sqgpatch.lembench import (
    ScalarField,
    bench_report_json,
    check_bv_bound,
    check_derivative_bound,
    check_sobolev_ratios,
    h3_norm,
    holder_c1gamma_norm,
    random_field,
    run_bench,
)

# dense-grid oracles, evaluated analytically
# 1 + cos: norm = 2 + 1 + 1, ratio sqrt(1 - cos)/4 -> sqrt(2)/4 at the touching point
ONE_PLUS_COS_RATIO = math.sqrt(2) / 4
# 1.01 + cos, beta = 1/6: int |f'| / f^(2/3) = 6 (2.01^(1/3) - 0.01^(1/3)), ||f||_H3 = sqrt(2.01^2 + pi)
BV_RATIO = 6 * (2.01 ** (1 / 3) - 0.01 ** (1 / 3)) / (10 * math.sqrt(2.01 ** 2 + math.pi) ** (1 / 3))


def field(fn, M=256, **kw):
    return ScalarField.from_function(fn, M, **kw)


def test_field_validation():
    with pytest.raises(ValueError):
        ScalarField(np.ones(7))
    with pytest.raises(ValueError):
        field(lambda x: np.cos(100 * x), M=256)
    with pytest.raises(ValueError):
        field(lambda x: 1 + np.cos(x), enforced_min=0.5)
    f = field(lambda x: 2 + np.cos(x), enforced_min=0.5)
    assert f.samples.flags.writeable is False


def test_derivatives_exact():
    f = field(lambda x: np.cos(3 * x))
    x = np.linspace(-np.pi, np.pi, 256, endpoint=False)
    assert np.abs(f.derivative(1) + 3 * np.sin(3 * x)).max() < 1e-12
    assert np.abs(f.derivative(3) - 27 * np.sin(3 * x)).max() < 1e-8   # roundoff grows like k^3


def test_holder_norm_examples():
    assert abs(holder_c1gamma_norm(field(lambda x: 0 * x - 2.5), 0.5) - 2.5) < 1e-14
    assert abs(holder_c1gamma_norm(field(np.cos, M=1024), 1.0) - 3.0) < 1e-3
    f = field(lambda x: np.cos(x) + 0.3 * np.sin(2 * x))
    for lam in (0.5, 3.0):
        assert abs(holder_c1gamma_norm(f.scaled(lam), 0.7) - lam * holder_c1gamma_norm(f, 0.7)) < 1e-12
    with pytest.raises(ValueError):
        holder_c1gamma_norm(f, 0.0)


def test_h3_norm():
    f = field(np.cos)
    assert abs(h3_norm(f) - math.sqrt(1 + math.pi)) < 1e-12


def test_derivative_bound_examples():
    assert check_derivative_bound(field(lambda x: 0 * x + 1), 1.0) == 0.0
    r = check_derivative_bound(field(lambda x: 1 + np.cos(x), M=4096), 1.0)
    assert r <= 1.0
    assert abs(r - ONE_PLUS_COS_RATIO) < 1e-3
    with pytest.raises(ValueError):
        check_derivative_bound(field(np.cos), 1.0)


def test_derivative_bound_zero_convention():
    # sin^2 touches zero with vanishing derivative: finite ratio
    assert np.isfinite(check_derivative_bound(field(lambda x: np.sin(x) ** 2), 0.5))


def test_bv_examples():
    assert check_bv_bound(field(lambda x: 0 * x + 1), 1 / 6) == 0.0
    r = check_bv_bound(field(lambda x: 1.01 + np.cos(x), M=8192), 1 / 6)
    assert r < 1
    assert abs(r - BV_RATIO) < 1e-3 * BV_RATIO
    with pytest.raises(ValueError):
        check_bv_bound(field(lambda x: 2 + np.cos(x)), 0.3)
    with pytest.raises(ValueError):
        check_bv_bound(field(lambda x: 1 + np.cos(x)), 0.1)


@pytest.mark.parametrize("lam", [0.5, 2.0, 10.0])
def test_scale_invariance(lam):
    f = random_field(3, 256)
    g = f.scaled(lam)
    assert abs(check_bv_bound(g, 1 / 6) - check_bv_bound(f, 1 / 6)) < 1e-10
    assert abs(check_derivative_bound(g, 1.0) - check_derivative_bound(f, 1.0)) < 1e-10
    for a, b in zip(check_sobolev_ratios(g, 3, 0.1), check_sobolev_ratios(f, 3, 0.1)):
        assert abs(a - b) < 1e-10 * max(1.0, abs(b))


def test_sobolev_constant_field():
    assert check_sobolev_ratios(field(lambda x: 0 * x + 1), 2, 0.1) == (0.0, 0.0)
    with pytest.raises(ValueError):
        check_sobolev_ratios(field(lambda x: 2 + np.cos(x)), 0, 0.1)


def test_random_field_properties():
    f = random_field((1, 2), 256)
    assert f.samples.min() > 0
    assert np.array_equal(f.samples, random_field((1, 2), 256).samples)
    assert random_field(5, 256, positive=False).samples.min() >= 0
    with pytest.raises(ValueError):
        random_field(0, 64, modes=8)


def test_corpus_explicit_bounds():
    entries = {e.check: e for e in run_bench(seed=0, corpus_size=100)}
    assert entries["derivative_bound"].max_ratio <= 1.0
    assert entries["bv_bound"].max_ratio <= 1.0
    assert all(np.isfinite(e.max_ratio) for e in entries.values())
    doc = json.loads(bench_report_json(list(entries.values())))
    assert set(doc["bv_bound"]) == {"max_ratio", "argmax_field_seed", "grid_size", "fields"}
    assert doc["bv_bound"]["grid_size"] == 256


def test_sobolev_refinement_stable():
    worst = 0.0
    for i in range(100):
        f = random_field((0, i), 256)
        r1 = check_sobolev_ratios(f, 2, 1 / 6)
        r2 = check_sobolev_ratios(f.refined(2), 2, 1 / 6)
        worst = max(worst, *(abs(b - a) / a for a, b in zip(r1, r2)))
    assert worst < 0.01
