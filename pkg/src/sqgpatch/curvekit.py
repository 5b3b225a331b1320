"""Periodic curve representation, spectral calculus and patch functionals.

Every curve is stored as ``M`` samples ``z(xi_j)`` on the uniform grid
``xi_j = -pi + 2*pi*j/M``.  Derivatives, arc length and off-grid values all
come from the trigonometric interpolant of those samples.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.spatial import cKDTree

from . import kernels

TWO_PI = 2.0 * np.pi


class GeometryError(ValueError):
    """Raised for curves that violate a geometric precondition."""


class DegenerateCurveError(GeometryError):
    """Two samples of one curve coincide."""


class Domain(str, enum.Enum):
    WholePlane = "plane"
    HalfPlane = "half-plane"

    @classmethod
    def parse(cls, value) -> "Domain":
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name):
                return member
        raise ValueError(f"unknown domain {value!r}")


def grid(M: int) -> np.ndarray:
    return -np.pi + TWO_PI * np.arange(M) / M


def _check_grid_size(M: int) -> None:
    if M < 16 or M & (M - 1):
        raise ValueError(f"grid size must be a power of two >= 16, got {M}")


def _as_samples(obj) -> np.ndarray:
    if isinstance(obj, Curve):
        return obj.samples
    return np.asarray(obj, dtype=float)


@dataclass(frozen=True)
class Curve:
    """Closed curve sampled on the uniform periodic grid (no repeated endpoint)."""

    samples: np.ndarray

    def __post_init__(self):
        z = np.array(self.samples, dtype=float)
        if z.ndim != 2 or z.shape[1] != 2:
            raise ValueError("samples must have shape (M, 2)")
        _check_grid_size(z.shape[0])
        z.setflags(write=False)
        object.__setattr__(self, "samples", z)

    @property
    def grid_size(self) -> int:
        return self.samples.shape[0]

    @property
    def ccw(self) -> bool:
        """Orientation flag: sign of the enclosed signed area."""
        return polygon_area(self) > 0

    def translated(self, v) -> "Curve":
        return Curve(self.samples + np.asarray(v, dtype=float))

    def scaled(self, lam: float) -> "Curve":
        return Curve(lam * self.samples)

    def reversed(self) -> "Curve":
        # z(-xi) keeps the grid: index j -> -j mod M
        return Curve(np.roll(self.samples[::-1], 1, axis=0))


@dataclass(frozen=True)
class ContourState:
    curves: tuple
    time: float = 0.0
    domain: Domain = Domain.WholePlane

    def __post_init__(self):
        curves = tuple(c if isinstance(c, Curve) else Curve(c) for c in self.curves)
        sizes = {c.grid_size for c in curves}
        if len(sizes) > 1:
            raise ValueError(f"all curves must share one grid size, got {sorted(sizes)}")
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "domain", Domain.parse(self.domain))
        object.__setattr__(self, "time", float(self.time))

    @property
    def N(self) -> int:
        return len(self.curves)

    @property
    def grid_size(self) -> int:
        return self.curves[0].grid_size if self.curves else 0

    def arrays(self) -> list[np.ndarray]:
        return [c.samples for c in self.curves]

    def with_samples(self, arrays: Sequence[np.ndarray], time: float | None = None) -> "ContourState":
        return ContourState(
            tuple(Curve(a) for a in arrays),
            self.time if time is None else time,
            self.domain,
        )

    def min_height(self) -> float:
        """h[Z]: the smallest second coordinate over all samples."""
        return min(float(c.samples[:, 1].min()) for c in self.curves)


@dataclass(frozen=True)
class PatchFamily:
    strengths: np.ndarray
    domain: Domain = Domain.WholePlane

    def __post_init__(self):
        th = np.array(self.strengths, dtype=float).reshape(-1)
        if th.size < 1:
            raise ValueError("a patch family needs at least one patch")
        if np.any(th == 0):
            raise ValueError("patch strengths must be nonzero")
        th.setflags(write=False)
        object.__setattr__(self, "strengths", th)
        object.__setattr__(self, "domain", Domain.parse(self.domain))

    @property
    def N(self) -> int:
        return self.strengths.size

    @property
    def Theta(self) -> float:
        return float(np.abs(self.strengths).sum())


@dataclass(frozen=True)
class NormReport:
    h3: float
    c2: float
    delta_inv: float
    f_functional: float
    triple: float


# ---------------------------------------------------------------------------
# spectral calculus


def _fourier(z: np.ndarray):
    M = z.shape[0]
    c = np.fft.fft(z, axis=0) / M
    k = np.fft.fftfreq(M, 1.0 / M)
    return c, k


@lru_cache(maxsize=64)
def _deriv_multiplier(M: int, order: int) -> np.ndarray:
    m = (1j * np.arange(M // 2 + 1)) ** order
    if order % 2:
        m[-1] = 0.0
    m.setflags(write=False)
    return m


def _derivs_from_rfft(c: np.ndarray, M: int, order: int) -> np.ndarray:
    mult = _deriv_multiplier(M, order)
    if c.ndim == 2:
        mult = mult[:, None]
    return np.fft.irfft(c * mult, n=M, axis=0)


def spectral_derivative(curve, order: int = 1) -> np.ndarray:
    """``order``-th derivative of the trigonometric interpolant, on the grid.

    Accepts a :class:`Curve`, an ``(M, 2)`` array or a scalar ``(M,)`` field.
    """
    if order not in (1, 2, 3, 4):
        raise ValueError("order must be 1, 2, 3 or 4")
    z = _as_samples(curve)
    M = z.shape[0]
    _check_grid_size(M)
    return _derivs_from_rfft(np.fft.rfft(z, axis=0), M, order)


def trig_eval(samples, xi, deriv: int = 0) -> np.ndarray:
    """Evaluate the interpolant (or a derivative) at arbitrary parameters."""
    z = _as_samples(samples)
    M = z.shape[0]
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    nyq = M // 2
    c = np.fft.rfft(z, axis=0) / M
    k = np.arange(nyq + 1)
    mult = (1j * k) ** deriv
    ck = c[1:nyq] * (2.0 * mult[1:nyq]).reshape((-1,) + (1,) * (z.ndim - 1))
    s = xi + np.pi
    out = []
    for start in range(0, s.size, 1024):
        ss = s[start:start + 1024]
        # e^{i k s} for k = 1..nyq-1 by repeated multiplication (error grows like k eps)
        E = np.cumprod(np.broadcast_to(np.exp(1j * ss)[:, None], (ss.size, nyq - 1)), axis=1)
        val = np.real(E @ ck)
        if deriv == 0:
            val = val + np.real(c[0])
        # the Nyquist mode is interpolated as a cosine
        cos_d = [np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), np.sin][deriv % 4]
        val = val + np.multiply.outer(nyq ** deriv * cos_d(nyq * ss), np.real(c[nyq]))
        out.append(val)
    return np.concatenate(out, axis=0)


def upsample(samples, factor: int) -> np.ndarray:
    """Samples of the interpolant on the grid refined by ``factor``."""
    z = _as_samples(samples)
    if factor == 1:
        return np.array(z)
    M = z.shape[0]
    Mf = M * factor
    c = np.fft.fft(z, axis=0)
    cf = np.zeros((Mf,) + z.shape[1:], dtype=complex)
    h = M // 2
    cf[:h] = c[:h]
    cf[-h + 1:] = c[-h + 1:]
    cf[h] = 0.5 * c[h]
    cf[-h] = 0.5 * c[h]
    # grid starts at -pi for every M, so no phase shift is needed
    return np.real(np.fft.ifft(cf, axis=0)) * factor


def speed(curve) -> np.ndarray:
    return np.linalg.norm(spectral_derivative(curve, 1), axis=1)


def arc_length(curve) -> float:
    s = speed(curve)
    return float(s.sum() * TWO_PI / s.size)


def outward_normal(curve) -> np.ndarray:
    """Unit outer normal of a counter-clockwise curve: (t2, -t1)/|t|."""
    dz = spectral_derivative(curve, 1)
    n = np.stack([dz[:, 1], -dz[:, 0]], axis=1)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# norms and functionals


def polygon_area(curve) -> float:
    """Signed enclosed area, positive for counter-clockwise curves.

    Trapezoidal sum of (x y' - y x')/2 with spectral derivatives; exact for
    trigonometric polynomials of degree < M/2 and invariant under
    reparametrization up to spectral accuracy.
    """
    z = _as_samples(curve)
    dz = spectral_derivative(z, 1)
    integrand = z[:, 0] * dz[:, 1] - z[:, 1] * dz[:, 0]
    return float(0.5 * integrand.sum() * TWO_PI / z.shape[0])


def h3_norm(state: ContourState) -> float:
    total = 0.0
    for c in state.curves:
        z = c.samples
        sup2 = float(np.max(np.sum(z * z, axis=1)))
        d3 = spectral_derivative(z, 3)
        l2 = float(np.sum(d3 * d3) * TWO_PI / z.shape[0])
        total += sup2 + l2
    return float(np.sqrt(total))


def c2_norm(state: ContourState) -> float:
    best = 0.0
    for c in state.curves:
        z = c.samples
        best = max(best, float(np.sqrt(np.max(np.sum(z * z, axis=1)))))
        cz = np.fft.rfft(z, axis=0)
        for j in (1, 2):
            d = _derivs_from_rfft(cz, z.shape[0], j)
            best = max(best, float(np.sqrt(np.max(np.sum(d * d, axis=1)))))
    return best


def _chord_arc_sup(z: np.ndarray) -> float:
    val = kernels.chord_arc_sup(z)
    if not np.isfinite(val):
        raise DegenerateCurveError("two samples of a curve coincide")
    return val


def f_functional(state: ContourState) -> float:
    best = 1.0
    for c in state.curves:
        best = max(best, _chord_arc_sup(c.samples))
    return best


def _seg_point_dist(P: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Distances from points P (n,2) to segments A->B (m,2); result (n, m)."""
    AB = B - A
    L2 = np.sum(AB * AB, axis=1)
    L2 = np.where(L2 == 0.0, 1.0, L2)
    AP = P[:, None, :] - A[None, :, :]
    t = np.clip(np.einsum("nmk,mk->nm", AP, AB) / L2, 0.0, 1.0)
    Q = A[None] + t[..., None] * AB[None]
    return np.linalg.norm(P[:, None, :] - Q, axis=2)


def _point_polygon_distance_dense(P: np.ndarray, poly: np.ndarray) -> np.ndarray:
    A = poly
    B = np.roll(poly, -1, axis=0)
    out = np.empty(P.shape[0])
    step = max(1, 2_000_000 // max(1, A.shape[0]))
    for s in range(0, P.shape[0], step):
        out[s:s + step] = _seg_point_dist(P[s:s + step], A, B).min(axis=1)
    return out


def point_polygon_distance(P, poly: np.ndarray) -> np.ndarray:
    """Distance from each point to the closed sample polygon.

    A segment within distance D of a point has an endpoint within D + L/2,
    so only segments touching the vertices inside that ball are examined.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    poly = np.asarray(poly, dtype=float)
    M = poly.shape[0]
    if P.shape[0] * M <= 4096:
        return _point_polygon_distance_dense(P, poly)
    B = np.roll(poly, -1, axis=0)
    half = 0.5 * float(np.linalg.norm(B - poly, axis=1).max())
    tree = cKDTree(poly)
    dnn, _ = tree.query(P)
    balls = tree.query_ball_point(P, dnn + half * (1 + 1e-12) + 1e-300)
    counts = np.fromiter((len(b) for b in balls), dtype=np.intp, count=P.shape[0])
    verts = np.fromiter((v for b in balls for v in b), dtype=np.intp, count=int(counts.sum()))
    pts = np.repeat(np.arange(P.shape[0]), counts)
    # each vertex v contributes segments v -> v+1 and v-1 -> v
    pts = np.concatenate([pts, pts])
    segs = np.concatenate([verts, (verts - 1) % M])
    A, Bs, X = poly[segs], B[segs], P[pts]
    AB = Bs - A
    L2 = np.sum(AB * AB, axis=1)
    L2 = np.where(L2 == 0.0, 1.0, L2)
    t = np.clip(np.sum((X - A) * AB, axis=1) / L2, 0.0, 1.0)
    d = np.linalg.norm(X - (A + t[:, None] * AB), axis=1)
    out = np.full(P.shape[0], np.inf)
    np.minimum.at(out, pts, d)
    return out


def _segments_intersect(A1, B1, A2, B2) -> np.ndarray:
    """Proper or touching intersection test between every pair of segments."""
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    a1, b1 = A1[:, None], B1[:, None]
    a2, b2 = A2[None], B2[None]
    d1 = orient(a2, b2, a1)
    d2 = orient(a2, b2, b1)
    d3 = orient(a1, b1, a2)
    d4 = orient(a1, b1, b2)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0)


def polygon_gap(za: np.ndarray, zb: np.ndarray) -> float:
    """Minimum distance between two closed sample polygons (0 if they cross)."""
    Ab, Bb = zb, np.roll(zb, -1, axis=0)
    Aa, Ba = za, np.roll(za, -1, axis=0)
    lmax = max(np.linalg.norm(Ba - Aa, axis=1).max(), np.linalg.norm(Bb - Ab, axis=1).max())
    # crossing segments would put a vertex pair within lmax of each other
    dv, _ = cKDTree(zb).query(za)
    if dv.min() <= lmax and _segments_intersect(Aa, Ba, Ab, Bb).any():
        return 0.0
    return min(_min_distance(za, zb, lmax), _min_distance(zb, za, lmax))


def _min_distance(pts: np.ndarray, poly: np.ndarray, lmax: float) -> float:
    # a vertex can only beat the best vertex gap if dnn - lmax/2 does
    dnn, _ = cKDTree(poly).query(pts)
    keep = dnn - 0.5 * lmax <= dnn.min()
    return float(point_polygon_distance(pts[keep], poly).min())


def delta_functional(state: ContourState, refine: int = 4) -> float:
    """min{ min over curve pairs of the boundary gap, 1 }; 1 for a single curve.

    The gap is measured between sample polygons of the interpolant refined by
    ``refine``, an upper approximation of the true gap.
    """
    if state.N < 1:
        raise ValueError("delta functional needs at least one curve")
    if state.N == 1:
        return 1.0
    polys = [upsample(c.samples, refine) for c in state.curves]
    best = 1.0
    for i in range(state.N):
        for k in range(i + 1, state.N):
            best = min(best, polygon_gap(polys[i], polys[k]))
    return best


def triple_norm(state: ContourState) -> NormReport:
    if state.N < 1:
        raise ValueError("triple norm needs at least one curve")
    h3 = h3_norm(state)
    delta = delta_functional(state)
    if delta <= 0.0:
        raise GeometryError("patch boundaries touch")
    f = f_functional(state)
    dinv = 1.0 / delta
    return NormReport(h3=h3, c2=c2_norm(state), delta_inv=dinv, f_functional=f, triple=h3 + dinv + f)


# ---------------------------------------------------------------------------
# reparametrization


_SPEED_REFINE = 4


def _cumulative_arclength(z: np.ndarray, table_factor: int = 8):
    """Return (mean speed, S, speed(xi), dense table).

    ``S(xi)`` is the arc length from xi = 0; the table holds S on the grid
    refined by ``table_factor`` with the closing point xi = pi appended.
    """
    # the speed |z'| is not band-limited; integrate it on a finer grid
    z = upsample(z, _SPEED_REFINE)
    M = z.shape[0]
    table_factor = max(1, table_factor // _SPEED_REFINE)
    s = speed(z)
    cs = np.fft.fft(s) / M
    k = np.fft.fftfreq(M, 1.0 / M)
    mean = float(np.real(cs[0]))
    integ = np.zeros_like(cs)
    nz = k != 0
    integ[nz] = cs[nz] / (1j * k[nz])
    integ[M // 2] = 0.0
    periodic = np.real(np.fft.ifft(integ * M))

    def S(xi):
        xi = np.atleast_1d(xi)
        p = trig_eval(periodic, xi)
        p0 = trig_eval(periodic, [0.0])[0]
        return mean * xi + p - p0

    def sp(xi):
        return trig_eval(s, np.atleast_1d(xi))

    Mf = M * table_factor
    dense = -np.pi + TWO_PI * np.arange(Mf + 1) / Mf
    fine = upsample(periodic, table_factor)
    fine = np.append(fine, fine[0])
    p0 = trig_eval(periodic, [0.0])[0]
    table = mean * dense + fine - p0
    return mean, S, sp, (dense, table)


def constant_speed_reparametrize(curve, check_simple: bool = True) -> Curve:
    """Constant-speed parametrization of the same closed curve, anchored at xi = 0."""
    z = _as_samples(curve)
    M = z.shape[0]
    if check_simple and not is_simple(z):
        raise GeometryError("curve self-intersects")
    mean, S, sp, (dense, table) = _cumulative_arclength(z)
    if mean <= 0:
        raise GeometryError("curve has zero length")
    xi = grid(M)
    # monotone cubic inverse of the cumulative arc length on a dense table
    inv = PchipInterpolator(table, dense)
    target = mean * xi
    sigma = inv(target)
    for _ in range(8):
        r = S(sigma) - target
        sigma = sigma - r / sp(sigma)
        if np.max(np.abs(r)) < 1e-15 * max(1.0, mean):
            break
    j0 = M // 2  # xi = 0 is kept as the anchor
    sigma[j0] = 0.0
    out = trig_eval(z, sigma)
    out[j0] = z[j0]
    return Curve(out)


# ---------------------------------------------------------------------------
# validation


def is_simple(z: np.ndarray) -> bool:
    """True if no two non-adjacent segments of the sample polygon meet."""
    z = _as_samples(z)
    M = z.shape[0]
    A, B = z, np.roll(z, -1, axis=0)
    hit = _segments_intersect(A, B, A, B)
    idx = np.arange(M)
    sep = np.abs(idx[:, None] - idx[None, :])
    sep = np.minimum(sep, M - sep)
    hit &= sep > 1
    return not bool(hit.any())


@dataclass
class ValidationVerdict:
    violations: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid


def validate_patch_family(state: ContourState, family: PatchFamily) -> ValidationVerdict:
    v = ValidationVerdict()
    if state.N != family.N:
        v.violations.append(f"state has {state.N} curves but family has {family.N} strengths")
    if state.domain != family.domain:
        v.violations.append("state and family disagree on the domain")
    for k, c in enumerate(state.curves):
        if not is_simple(c.samples):
            v.violations.append(f"curve {k}: self-intersection")
        if polygon_area(c) <= 0:
            v.violations.append(f"curve {k}: wrong orientation (clockwise)")
        if state.domain == Domain.HalfPlane and c.samples[:, 1].min() <= 0:
            v.violations.append(f"curve {k}: boundary exit (sample with x2 <= 0)")
    for i in range(state.N):
        for k in range(i + 1, state.N):
            a, b = state.curves[i].samples, state.curves[k].samples
            if _segments_intersect(a, np.roll(a, -1, 0), b, np.roll(b, -1, 0)).any():
                v.violations.append(f"curves {i} and {k} intersect")
    return v


# ---------------------------------------------------------------------------
# shapes


def circle(center=(0.0, 0.0), radius: float = 1.0, M: int = 256, clockwise: bool = False) -> Curve:
    xi = grid(M)
    s = -1.0 if clockwise else 1.0
    return Curve(np.stack([center[0] + radius * np.cos(xi), center[1] + s * radius * np.sin(xi)], axis=1))


def ellipse(center=(0.0, 0.0), a: float = 1.0, b: float = 1.0, angle: float = 0.0, M: int = 256) -> Curve:
    xi = grid(M)
    p = np.stack([a * np.cos(xi), b * np.sin(xi)], axis=1)
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])
    return Curve(p @ R.T + np.asarray(center, dtype=float))


# ---------------------------------------------------------------------------
# snapshot format


def state_to_dict(state: ContourState) -> dict:
    return {
        "grid_size": state.grid_size,
        "curves": [c.samples.tolist() for c in state.curves],
        "time": state.time,
        "domain": state.domain.value,
    }


def state_from_dict(doc: dict) -> ContourState:
    curves = [np.asarray(c, dtype=float) for c in doc["curves"]]
    M = int(doc["grid_size"])
    for c in curves:
        if c.shape != (M, 2):
            raise ValueError(f"curve shape {c.shape} does not match grid_size {M}")
    return ContourState(tuple(Curve(c) for c in curves), float(doc.get("time", 0.0)), Domain.parse(doc["domain"]))


def save_snapshot(state: ContourState, path) -> None:
    Path(path).write_text(json.dumps(state_to_dict(state)))


def load_snapshot(path) -> ContourState:
    return state_from_dict(json.loads(Path(path).read_text()))


def make_state(curves: Iterable, domain=Domain.WholePlane, time: float = 0.0) -> ContourState:
    return ContourState(tuple(curves), time, domain)
