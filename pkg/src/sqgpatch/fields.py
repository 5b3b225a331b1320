"""Velocity of patch vorticities and related probes.

The velocity is

    u(x) = sum_k theta_k * int_{Omega_k} K(x - y) dy      (minus K(x - ybar) on the half-plane)

with ``K(w) = w_perp / |w|^(2+2 alpha)`` and ``w_perp = (w2, -w1)``; the
positive pre-factor of the law is taken to be 1.  The divergence theorem turns
each area integral into ``-(1/(2 alpha)) int dz(eta) / |x - z(eta)|^(2 alpha) deta``,
which is the default evaluation path.  ``velocity_oracle`` integrates the
area form directly with adaptive quadrature and is kept for verification.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import roots_jacobi, roots_legendre

from . import kernels
from .curvekit import (
    TWO_PI,
    ContourState,
    Domain,
    PatchFamily,
    outward_normal,
    polygon_area,
    spectral_derivative,
    trig_eval,
    upsample,
)


class NearSingularWarning(RuntimeWarning):
    """Evaluation point lies on a sampled boundary."""


class ProbeRejected(ValueError):
    """Probe geometry reaches another boundary or leaves the domain."""


@dataclass(frozen=True)
class KernelSpec:
    alpha: float
    domain: Domain = Domain.WholePlane
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha out of (0, 0.5): {self.alpha}")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        object.__setattr__(self, "domain", Domain.parse(self.domain))


@dataclass
class VelocityProbe:
    point: np.ndarray
    value: np.ndarray
    gradient: np.ndarray | None = None


def reflect(p: np.ndarray) -> np.ndarray:
    q = np.array(p, dtype=float, copy=True)
    q[..., 1] *= -1.0
    return q


# ---------------------------------------------------------------------------
# boundary-integral evaluator

_UP = 16          # refinement used for moderately close targets
_FAR = 4.0        # trapezoid is used when dist >= _FAR * (max speed) * spacing
_PANEL_N = 16


class _Source:
    """One closed source curve with cached derivatives and refinements."""

    def __init__(self, z: np.ndarray, dz: np.ndarray, theta: float):
        self.z = np.ascontiguousarray(z)
        self.dz = np.ascontiguousarray(dz)
        self.theta = theta
        self.M = z.shape[0]
        self.h = TWO_PI / self.M
        self.vmax = float(np.linalg.norm(dz, axis=1).max())
        self._fine = None

    @property
    def fine(self):
        if self._fine is None:
            zf = upsample(self.z, _UP)
            dzf = upsample(self.dz, _UP)
            self._fine = (np.ascontiguousarray(zf), np.ascontiguousarray(dzf))
        return self._fine

    def node_distance(self, x: np.ndarray) -> np.ndarray:
        d2 = np.full(x.shape[0], np.inf)
        for s in range(0, self.M, 256):
            zz = self.z[s:s + 256]
            d2 = np.minimum(d2, ((x[:, None, :] - zz[None]) ** 2).sum(-1).min(axis=1))
        return np.sqrt(d2)

    def nearest_param(self, x: np.ndarray):
        """Parameter of the closest boundary point and its distance."""
        d2 = ((self.z - x) ** 2).sum(axis=1)
        j = int(np.argmin(d2))
        eta = -np.pi + j * self.h
        for _ in range(30):
            zz = trig_eval(self.z, [eta])[0]
            d1 = trig_eval(self.z, [eta], 1)[0]
            d2v = trig_eval(self.z, [eta], 2)[0]
            g = np.dot(zz - x, d1)
            gp = np.dot(d1, d1) + np.dot(zz - x, d2v)
            if gp <= 0:
                break
            step = g / gp
            step = float(np.clip(step, -self.h, self.h))
            eta -= step
            if abs(step) < 1e-15:
                break
        zz = trig_eval(self.z, [eta])[0]
        return eta, float(np.linalg.norm(zz - x))


def _graded_nodes(s_min: float, jacobi_exp: float | None):
    """Nodes/weights on (0, pi] graded geometrically towards 0.

    With ``jacobi_exp`` the innermost panel carries the weight s**jacobi_exp,
    which the caller must divide out of its integrand there.
    """
    edges = [0.0, s_min]
    while edges[-1] < np.pi / 2:
        edges.append(edges[-1] * 2.0)
    edges[-1] = np.pi
    xg, wg = roots_legendre(_PANEL_N)
    nodes, weights, inner = [], [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if a == 0.0 and jacobi_exp is not None:
            xj, wj = roots_jacobi(_PANEL_N, 0.0, jacobi_exp)
            # int_0^b f(s) s^e ds with s = b (1+t)/2
            nodes.append(0.5 * b * (xj + 1.0))
            weights.append(wj * (0.5 * b) ** (1.0 + jacobi_exp))
            inner.append(np.ones(_PANEL_N, bool))
        else:
            nodes.append(0.5 * (b - a) * xg + 0.5 * (a + b))
            weights.append(0.5 * (b - a) * wg)
            inner.append(np.zeros(_PANEL_N, bool))
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(inner)


def _near_integral(src: _Source, x: np.ndarray, alpha: float, beta: float, gradient: bool):
    """Graded quadrature of the boundary integrand around the closest parameter."""
    eta0, d = src.nearest_param(x)
    on_boundary = d <= 1e-12 * max(1.0, src.vmax)
    if on_boundary and gradient:
        raise ValueError("velocity gradient is unbounded on the boundary")
    if on_boundary and beta == 0.0:
        warnings.warn("evaluation point lies on a patch boundary; using graded quadrature",
                      NearSingularWarning, stacklevel=4)
        s, w, inner = _graded_nodes(1e-3, -2.0 * alpha)
    else:
        s_min = max(0.25 * d / max(src.vmax, 1e-300), 1e-14)
        s, w, inner = _graded_nodes(min(s_min, 1e-1), None)
    eta = np.concatenate([eta0 + s, eta0 - s])
    ww = np.concatenate([w, w])
    inn = np.concatenate([inner, inner])
    zz = trig_eval(src.z, eta)
    dd = trig_eval(src.z, eta, 1)
    diff = x[None, :] - zz
    r2 = (diff ** 2).sum(axis=1) + beta * beta
    sabs = np.abs(np.concatenate([s, s]))
    if gradient:
        k = r2 ** (-alpha - 1.0)
        G = np.einsum("p,pa,pb->ab", ww * k, dd, diff)
        return G
    k = r2 ** (-alpha)
    if on_boundary and beta == 0.0:
        # weight s^(-2 alpha) is carried by the Jacobi rule on the inner panel
        k = np.where(inn, (r2 / np.maximum(sabs, 1e-300) ** 2) ** (-alpha), k)
    return (ww * k) @ dd


def _sources(state: ContourState, family: PatchFamily, kernel: KernelSpec):
    out = []
    for c, th in zip(state.curves, family.strengths):
        z = c.samples
        dz = spectral_derivative(z, 1)
        out.append(_Source(z, dz, float(th)))
        if kernel.domain == Domain.HalfPlane:
            out.append(_Source(reflect(z), reflect(dz), float(th)))
    return out


def _boundary_eval(x: np.ndarray, srcs, kernel: KernelSpec, gradient: bool) -> np.ndarray:
    a, b = kernel.alpha, kernel.beta
    shape = (x.shape[0], 2, 2) if gradient else (x.shape[0], 2)
    total = np.zeros(shape)
    fn = kernels.boundary_grad_sum if gradient else kernels.boundary_sum
    for src in srcs:
        # boundary_sum carries -1/(2 alpha); the gradient form carries +1
        coef = src.theta if gradient else -src.theta / (2.0 * a)
        d = src.node_distance(x)
        est = np.maximum(d - src.vmax * src.h, 0.0)
        far = est >= _FAR * src.vmax * src.h
        mid = ~far & (est >= _FAR * src.vmax * src.h / _UP)
        near = ~far & ~mid
        if far.any():
            total[far] += coef * fn(x[far], src.z, src.dz, a, b, src.h)
        if mid.any():
            zf, dzf = src.fine
            total[mid] += coef * fn(x[mid], zf, dzf, a, b, src.h / _UP)
        for i in np.flatnonzero(near):
            total[i] += coef * _near_integral(src, x[i], a, b, gradient)
    return total


def velocity_at(x, state: ContourState, family: PatchFamily, kernel: KernelSpec,
                oracle: bool = False, **oracle_kw) -> np.ndarray:
    """Velocity at one point ``(2,)`` or a batch ``(n, 2)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if oracle:
        out = np.array([velocity_oracle(p, state, family, kernel, **oracle_kw) for p in X])
    elif state.N == 0:
        out = np.zeros_like(X)
    else:
        out = _boundary_eval(X, _sources(state, family, kernel), kernel, gradient=False)
    return out[0] if single else out


def velocity_gradient(x, state: ContourState, family: PatchFamily, kernel: KernelSpec,
                      analytic: bool = False, step: float | None = None) -> np.ndarray:
    """Jacobian ``du_a/dx_b`` at one point or a batch.

    Central differences with step ``1e-5 (1 + |x|)`` by default; ``analytic``
    integrates the differentiated kernel instead (needed close to boundaries).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if state.N == 0:
        out = np.zeros((X.shape[0], 2, 2))
    elif analytic:
        out = _boundary_eval(X, _sources(state, family, kernel), kernel, gradient=True)
    else:
        srcs = _sources(state, family, kernel)
        out = np.empty((X.shape[0], 2, 2))
        for i, p in enumerate(X):
            hstep = step if step is not None else 1e-5 * (1.0 + np.linalg.norm(p))
            pts = np.array([p + [hstep, 0], p - [hstep, 0], p + [0, hstep], p - [0, hstep]])
            u = _boundary_eval(pts, srcs, kernel, gradient=False)
            out[i, :, 0] = (u[0] - u[1]) / (2 * hstep)
            out[i, :, 1] = (u[2] - u[3]) / (2 * hstep)
    return out[0] if single else out


def probe(x, state, family, kernel, with_gradient: bool = False) -> VelocityProbe:
    x = np.asarray(x, dtype=float)
    g = velocity_gradient(x, state, family, kernel, analytic=True) if with_gradient else None
    return VelocityProbe(point=x, value=velocity_at(x, state, family, kernel), gradient=g)


def normal_velocity_on_boundary(state: ContourState, family: PatchFamily, kernel: KernelSpec) -> list:
    """u . n at every sample of every curve.

    The target tangent is subtracted inside the integrand, which makes the
    self-interaction regular and leaves the normal component unchanged.
    """
    a, b = kernel.alpha, kernel.beta
    out = []
    curves = [c.samples for c in state.curves]
    derivs = [spectral_derivative(z, 1) for z in curves]
    for k, zk in enumerate(curves):
        M = zk.shape[0]
        h = TWO_PI / M
        n = outward_normal(zk)
        u = np.zeros((M, 2))
        for i, (zi, dzi, th) in enumerate(zip(curves, derivs, family.strengths)):
            blocks = [(zi, dzi, 1 if i == k else -1)]
            if kernel.domain == Domain.HalfPlane:
                blocks.append((reflect(zi), reflect(dzi), -1))
            for sz, sdz, skip in blocks:
                s, _ = kernels.pair_sum(zk, derivs[k], sz, sdz, a, b, h, skip)
                u += (th / (2.0 * a)) * s
        out.append(np.einsum("ij,ij->i", u, n))
    return out


# ---------------------------------------------------------------------------
# area-quadrature oracle


def _interp_shape(z: np.ndarray):
    def f(xi):
        return trig_eval(z, [xi])[0], trig_eval(z, [xi], 1)[0]
    return f


def _point_in_polygon(p, poly) -> bool:
    x, y = p
    xs, ys = poly[:, 0], poly[:, 1]
    xs2, ys2 = np.roll(xs, -1), np.roll(ys, -1)
    cond = (ys > y) != (ys2 > y)
    xint = xs + (y - ys) * (xs2 - xs) / np.where(ys2 == ys, 1.0, ys2 - ys)
    return bool(np.count_nonzero(cond & (x < xint)) % 2)


def _patch_area_integral(x, shape, poly, alpha, beta, epsabs, epsrel) -> np.ndarray:
    """int_Omega K(x - y) dy by nested adaptive quadrature over the star map
    y = c + rho (z(xi) - c), rho in [0, 1]."""
    sgn = 1.0 if polygon_area(poly) > 0 else -1.0
    dist = np.min(np.linalg.norm(poly - x, axis=1))
    inside = _point_in_polygon(x, poly) or dist < 1e-12
    c = np.array(x, dtype=float) if inside else _centroid(poly)
    # the star map needs z - c to sweep monotonically
    zc = poly - c
    dzs = spectral_derivative(poly, 1)
    if np.any(sgn * (zc[:, 0] * dzs[:, 1] - zc[:, 1] * dzs[:, 0]) < -1e-12):
        raise ValueError("oracle needs a patch that is star-shaped about the chosen centre")
    singular_center = inside and beta == 0.0

    def outer(xi):
        z, dz = shape(xi)
        w = z - c
        jac = sgn * (w[0] * dz[1] - w[1] * dz[0])
        if singular_center:
            r2 = w @ w
            if r2 < 1e-28:
                return np.zeros(2)
            # K(-rho w) rho jac = -rho^(-2 alpha) w_perp jac / |w|^(2+2 alpha)
            fac = -jac / r2 ** (1.0 + alpha)
            val, _ = integrate.quad(lambda rho: 1.0, 0.0, 1.0, weight="alg", wvar=(-2.0 * alpha, 0.0),
                                    epsabs=epsabs, epsrel=epsrel)
            return fac * val * np.array([w[1], -w[0]])

        def inner(rho):
            wv = x - c - rho * w
            q = (wv @ wv + beta * beta) ** (1.0 + alpha)
            return np.array([wv[1], -wv[0]]) * rho * jac / q

        val, _ = integrate.quad_vec(inner, 0.0, 1.0, epsabs=epsabs, epsrel=epsrel)
        return val

    val, _ = integrate.quad_vec(outer, -np.pi, np.pi, epsabs=epsabs, epsrel=epsrel, limit=400)
    return val


def _centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    cr = x * y2 - x2 * y
    A = cr.sum() / 2
    return np.array([((x + x2) * cr).sum(), ((y + y2) * cr).sum()]) / (6 * A)


def velocity_oracle(x, state: ContourState, family: PatchFamily, kernel: KernelSpec,
                    shapes=None, epsabs: float = 1e-11, epsrel: float = 1e-10) -> np.ndarray:
    """Velocity by adaptive 2-D quadrature of the area integral.

    ``shapes`` optionally supplies, per curve, a callable ``xi -> (z, z')``
    (for example the exact parametrization of a circle); otherwise the
    trigonometric interpolant of the samples is used.
    """
    x = np.asarray(x, dtype=float)
    u = np.zeros(2)
    for k, (c, th) in enumerate(zip(state.curves, family.strengths)):
        shape = shapes[k] if shapes is not None else _interp_shape(c.samples)
        u += th * _patch_area_integral(x, shape, c.samples, kernel.alpha, kernel.beta, epsabs, epsrel)
        if kernel.domain == Domain.HalfPlane:
            def rshape(xi, shape=shape):
                z, dz = shape(xi)
                return reflect(z), reflect(dz)
            u -= th * _patch_area_integral(x, rshape, reflect(c.samples), kernel.alpha, kernel.beta,
                                           epsabs, epsrel)
    return u


# ---------------------------------------------------------------------------
# a priori bounds


def _omega_norms(state: ContourState, family: PatchFamily):
    areas = np.array([abs(polygon_area(c)) for c in state.curves])
    linf = float(np.abs(family.strengths).max())
    l1 = float((np.abs(family.strengths) * areas).sum())
    return linf, l1


def uinf_bound(family: PatchFamily, state: ContourState, kernel: KernelSpec) -> float:
    """2 pi/(1 - 2 alpha) ||omega||_inf + 2 ||omega||_1."""
    linf, l1 = _omega_norms(state, family)
    return 2.0 * np.pi / (1.0 - 2.0 * kernel.alpha) * linf + 2.0 * l1


def uhold_bound(family: PatchFamily, state: ContourState, kernel: KernelSpec) -> float:
    """Bound on the C^(1 - 2 alpha) norm: 8 pi/(alpha (1 - 2 alpha)) ||omega||_inf + 2 ||omega||_1."""
    a = kernel.alpha
    linf, l1 = _omega_norms(state, family)
    return 8.0 * np.pi / (a * (1.0 - 2.0 * a)) * linf + 2.0 * l1


# ---------------------------------------------------------------------------
# scaling probes


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class ScalingProbe:
    """Fitted exponents of the near-boundary probes (``nan`` when not run)."""

    u2_slope: float = float("nan")
    u2_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    normal_quotients: np.ndarray = field(default_factory=lambda: np.empty(0))
    normal_quotient_max: float = float("nan")
    grad_slope: float = float("nan")
    grad_values: np.ndarray = field(default_factory=lambda: np.empty(0))


def vertical_velocity_scaling(state, family, kernel, x1: float, heights):
    """|u2(x1, h)| over heights h above the axis and its log-log slope."""
    if kernel.domain != Domain.HalfPlane:
        raise ProbeRejected("vertical velocity probe needs the half-plane")
    heights = np.asarray(heights, dtype=float)
    if state.N and heights.max() >= state.min_height():
        raise ProbeRejected("probe heights reach a patch")
    pts = np.stack([np.full_like(heights, x1), heights], axis=1)
    u2 = np.abs(velocity_at(pts, state, family, kernel)[:, 1])
    slope = _fit_slope(heights, u2) if np.all(u2 > 0) else float("nan")
    return slope, u2


def _boundary_point(state, P):
    """Closest curve, parameter, point and outward normal to ``P``."""
    best = None
    for k, c in enumerate(state.curves):
        src = _Source(c.samples, spectral_derivative(c.samples, 1), 1.0)
        eta, d = src.nearest_param(np.asarray(P, float))
        if best is None or d < best[0]:
            best = (d, k, eta)
    _, k, eta = best
    z = state.curves[k].samples
    p = trig_eval(z, [eta])[0]
    t = trig_eval(z, [eta], 1)[0]
    n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
    if polygon_area(z) < 0:
        n = -n
    return k, p, n


def _check_clearance(state, P, n, radii, side):
    from .curvekit import point_polygon_distance
    for r in radii:
        q = P + side * r * n
        d = min(point_polygon_distance(q[None], c.samples)[0] for c in state.curves)
        if d < 0.5 * r:
            raise ProbeRejected(f"probe radius {r} reaches another boundary")
        if state.domain == Domain.HalfPlane and q[1] <= 0:
            raise ProbeRejected("probe leaves the half-plane")


def normal_difference_quotients(state, family, kernel, P, radii, side: float = 1.0):
    """|(u(P + r n) - u(P)) . n| / r for a boundary point P with outward normal n."""
    _, p, n = _boundary_point(state, P)
    radii = np.asarray(radii, dtype=float)
    _check_clearance(state, p, n, radii, side)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearSingularWarning)
        u0 = velocity_at(p, state, family, kernel)
    pts = p[None] + side * radii[:, None] * n[None]
    u = velocity_at(pts, state, family, kernel)
    return np.abs((u - u0) @ n) / radii


def gradient_decay(state, family, kernel, P, distances, side: float = 1.0):
    """|grad u| at distance d from boundary point P along the normal; slope vs d."""
    _, p, n = _boundary_point(state, P)
    d = np.asarray(distances, dtype=float)
    _check_clearance(state, p, n, d, side)
    pts = p[None] + side * d[:, None] * n[None]
    G = velocity_gradient(pts, state, family, kernel, analytic=True)
    g = np.linalg.norm(G, axis=(1, 2))
    slope = _fit_slope(d, g) if np.all(g > 0) else float("nan")
    return slope, g


def near_boundary_scaling_probe(state, family, kernel, P, radii, x1=None, heights=None,
                                side: float = 1.0) -> ScalingProbe:
    """Run the three near-boundary probes and fit their exponents.

    ``radii`` serve both the normal difference quotients and the gradient
    distances at boundary point ``P``; the vertical-velocity probe runs on
    the half-plane at abscissa ``x1`` over ``heights``.
    """
    out = ScalingProbe()
    if np.all(family.strengths == 0):
        return out
    if kernel.domain == Domain.HalfPlane and heights is not None:
        out.u2_slope, out.u2_values = vertical_velocity_scaling(
            state, family, kernel, P[0] if x1 is None else x1, heights)
    if P is not None:
        q = normal_difference_quotients(state, family, kernel, P, radii, side)
        out.normal_quotients = q
        out.normal_quotient_max = float(q.max())
        out.grad_slope, out.grad_values = gradient_decay(state, family, kernel, P, radii, side)
    return out
