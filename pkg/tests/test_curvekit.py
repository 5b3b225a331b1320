import json
import math

import numpy as np
import pytest
from scipy import integrate

from sqgpatch.curvekit import (
    ContourState,
    Curve,
    DegenerateCurveError,
    Domain,
    GeometryError,
    PatchFamily,
    arc_length,
    c2_norm,
    circle,
    constant_speed_reparametrize,
    delta_functional,
    ellipse,
    f_functional,
    grid,
    h3_norm,
    load_snapshot,
    make_state,
    polygon_area,
    save_snapshot,
    spectral_derivative,
    speed,
    state_to_dict,
    trig_eval,
    triple_norm,
    upsample,
    validate_patch_family,
)
from sqgpatch.metrics import hausdorff_distance

H3_CIRCLE = math.sqrt(1 + 2 * math.pi)
# perimeter of (2 cos, sin) by adaptive quadrature, computed once
ELLIPSE_PERIMETER = integrate.quad(lambda t: math.hypot(2 * math.sin(t), math.cos(t)), 0, 2 * math.pi,
                                   epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def test_grid_size_must_be_power_of_two():
    with pytest.raises(ValueError):
        Curve(np.zeros((24, 2)))
    with pytest.raises(ValueError):
        Curve(np.zeros((8, 2)))


def test_spectral_derivative_circle():
    xi = grid(64)
    d = spectral_derivative(circle(M=64), 1)
    assert np.abs(d - np.stack([-np.sin(xi), np.cos(xi)], 1)).max() < 1e-12


def test_spectral_derivative_constant():
    z = np.ones((32, 2))
    assert np.abs(spectral_derivative(z, 1)).max() < 1e-14


def test_spectral_derivative_third_order():
    xi = grid(64)
    z = np.stack([np.cos(3 * xi), np.zeros_like(xi)], 1)
    d = spectral_derivative(z, 3)
    assert np.abs(d - np.stack([27 * np.sin(3 * xi), 0 * xi], 1)).max() < 1e-10


def test_spectral_derivative_order_range():
    with pytest.raises(ValueError):
        spectral_derivative(circle(M=32), 5)


def test_trig_eval_matches_samples_and_derivative():
    z = ellipse((0.1, 0.2), 1.3, 0.7, 0.4, 64).samples
    xi = grid(64)
    assert np.abs(trig_eval(z, xi) - z).max() < 1e-13
    s = np.linspace(-3, 3, 17)
    exact = np.stack([np.cos(s), np.sin(s)], 1)
    assert np.abs(trig_eval(circle(M=32).samples, s) - exact).max() < 1e-13
    assert np.abs(trig_eval(circle(M=32).samples, s, 1) - exact @ [[0, 1], [-1, 0]]).max() < 1e-13


def test_upsample_exact_on_band_limited():
    zf = upsample(circle(M=32), 4)
    assert np.abs(zf - circle(M=128).samples).max() < 1e-14


def test_h3_norm_unit_circle():
    assert abs(h3_norm(make_state([circle(M=256)])) - H3_CIRCLE) < 1e-8


def test_h3_norm_empty_state():
    assert h3_norm(ContourState(())) == 0.0


def test_h3_norm_scaling():
    assert abs(h3_norm(make_state([circle(M=256).scaled(2.0)])) - 2 * H3_CIRCLE) < 1e-8


def test_f_functional_unit_circle():
    assert abs(f_functional(make_state([circle(M=512)])) - math.pi / 2) < 1e-6


def test_f_functional_floor():
    assert f_functional(make_state([circle(M=256).scaled(4.0)])) == 1.0


def test_f_functional_ignores_cross_pairs():
    st = make_state([circle((0, 0), 1, 256), circle((3, 0), 1, 256)])
    assert abs(f_functional(st) - math.pi / 2) < 1e-6


def test_f_functional_coincident_samples():
    z = circle(M=32).samples.copy()
    z[5] = z[4]
    with pytest.raises(DegenerateCurveError):
        f_functional(make_state([z]))


def test_delta_single_curve():
    assert delta_functional(make_state([circle(M=64)])) == 1.0


def test_delta_capped():
    assert delta_functional(make_state([circle((0, 0), 1, 64), circle((4, 0), 1, 64)])) == 1.0


def test_delta_gap():
    st = make_state([circle((0, 0), 1, 512), circle((2.5, 0), 1, 512)])
    assert abs(delta_functional(st) - 0.5) < 1e-6


def test_triple_norm_unit_circle():
    r = triple_norm(make_state([circle(M=512)]))
    assert abs(r.h3 - H3_CIRCLE) < 1e-8
    assert r.delta_inv == 1.0
    assert abs(r.f_functional - math.pi / 2) < 1e-6
    assert abs(r.triple - 5.2695) < 1e-3
    assert r.triple == r.h3 + r.delta_inv + r.f_functional


def test_triple_norm_two_circles():
    r = triple_norm(make_state([circle((0, 0), 1, 512), circle((2.5, 0), 1, 512)]))
    # the L-infinity part uses |z| itself: the second circle contributes 3.5^2
    h3 = math.sqrt((1 + 2 * math.pi) + (3.5 ** 2 + 2 * math.pi))
    assert abs(r.h3 - h3) < 1e-8
    assert abs(r.delta_inv - 2.0) < 1e-5
    assert abs(r.triple - (h3 + 2 + math.pi / 2)) < 1e-5
    # two origin-centred circles would give sqrt(2 (1 + 2 pi))
    assert abs(h3_norm(make_state([circle(M=512), circle(M=512).scaled(1.0)])) ** 2
               - 2 * (1 + 2 * math.pi)) < 1e-8


def test_empty_family_rejected():
    with pytest.raises(ValueError):
        PatchFamily([])
    with pytest.raises(ValueError):
        PatchFamily([1.0, 0.0])


def test_c2_norm_circle():
    assert abs(c2_norm(make_state([circle(M=64)])) - 1.0) < 1e-12


def test_reparametrize_constant_speed_circle_is_identity():
    c = circle(M=128)
    assert np.abs(constant_speed_reparametrize(c).samples - c.samples).max() < 1e-10


def test_reparametrize_ellipse():
    y = constant_speed_reparametrize(ellipse((0, 0), 2.0, 1.0, 0.0, 256))
    sp = speed(y)
    assert abs(sp.mean() - ELLIPSE_PERIMETER / (2 * math.pi)) < 1e-6
    assert abs(ELLIPSE_PERIMETER / (2 * math.pi) - 1.54196) < 1e-5
    assert np.ptp(sp) / sp.mean() < 1e-6


def test_reparametrize_nonuniform_circle():
    xi = grid(256)
    z = np.stack([np.cos(xi + np.sin(xi)), np.sin(xi + np.sin(xi))], 1)
    y = constant_speed_reparametrize(z)
    assert np.abs(np.linalg.norm(y.samples, axis=1) - 1).max() < 1e-8
    ang = np.unwrap(np.arctan2(y.samples[:, 1], y.samples[:, 0]))
    # uniform circle samples up to a rotation
    assert np.ptp(np.diff(ang)) < 1e-8
    uni = make_state([Curve(y.samples)])
    rot = np.mean(ang - xi)
    ref = make_state([np.stack([np.cos(xi + rot), np.sin(xi + rot)], 1)])
    assert hausdorff_distance(uni, ref) < 1e-8


def test_reparametrize_anchor():
    e = ellipse((0.3, -0.2), 1.5, 0.8, 0.3, 128)
    y = constant_speed_reparametrize(e)
    j0 = 64
    assert np.array_equal(y.samples[j0], e.samples[j0])


def test_reparametrize_rejects_self_intersection():
    xi = grid(128)
    eight = np.stack([np.sin(xi), np.sin(xi) * np.cos(xi)], 1)
    with pytest.raises(GeometryError):
        constant_speed_reparametrize(eight)


def test_reparametrize_idempotent():
    y = constant_speed_reparametrize(ellipse((0, 0), 1.4, 0.9, 0.2, 256))
    assert np.abs(constant_speed_reparametrize(y).samples - y.samples).max() < 1e-10


def test_validate_two_disjoint_circles_half_plane():
    st = make_state([circle((0, 2), 1, 64), circle((3, 2), 1, 64)], Domain.HalfPlane)
    assert validate_patch_family(st, PatchFamily([1, 1], Domain.HalfPlane)).valid


def test_validate_figure_eight():
    xi = grid(128)
    st = make_state([np.stack([np.sin(xi), np.sin(xi) * np.cos(xi)], 1)])
    v = validate_patch_family(st, PatchFamily([1.0]))
    assert not v.valid
    assert any("self" in s for s in v.violations)


def test_validate_boundary_exit():
    st = make_state([circle((0, 0.5), 1, 64)], Domain.HalfPlane)
    v = validate_patch_family(st, PatchFamily([1.0], Domain.HalfPlane))
    assert not v.valid


def test_validate_orientation_and_overlap():
    st = make_state([circle(M=64, clockwise=True)])
    assert not validate_patch_family(st, PatchFamily([1.0])).valid
    st = make_state([circle((0, 0), 1, 64), circle((1, 0), 1, 64)])
    assert not validate_patch_family(st, PatchFamily([1.0, 1.0])).valid


def test_polygon_area_examples():
    assert abs(polygon_area(circle(M=256)) - math.pi) < 1e-6
    assert abs(polygon_area(circle(M=256, clockwise=True)) + math.pi) < 1e-6
    assert abs(polygon_area(ellipse((0, 0), 2, 1, 0, 256)) - 2 * math.pi) < 1e-6


def test_orientation_flag():
    assert circle(M=32).ccw
    assert not circle(M=32, clockwise=True).ccw
    assert not circle(M=32).reversed().ccw


def test_arc_length_circle():
    assert abs(arc_length(circle(M=64)) - 2 * math.pi) < 1e-12


def test_snapshot_round_trip(tmp_path):
    st = make_state([circle((0, 2), 1, 32), ellipse((3, 2), 1, 0.5, 0.2, 32)], Domain.HalfPlane, time=0.25)
    p = tmp_path / "s.json"
    save_snapshot(st, p)
    doc = json.loads(p.read_text())
    assert set(doc) == {"grid_size", "curves", "time", "domain"}
    assert doc["domain"] == "half-plane"
    back = load_snapshot(p)
    assert back.time == 0.25 and back.domain == Domain.HalfPlane
    for a, b in zip(st.arrays(), back.arrays()):
        assert np.array_equal(a, b)
    assert state_to_dict(make_state([circle(M=16)]))["domain"] == "plane"
