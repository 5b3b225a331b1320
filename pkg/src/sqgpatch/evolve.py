"""Time integration, blow-up monitoring and tracer advection."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .contour import Plain, RegularizationSpec, rhs
from .curvekit import (
    ContourState,
    Domain,
    GeometryError,
    PatchFamily,
    arc_length,
    constant_speed_reparametrize,
    delta_functional,
    point_polygon_distance,
    polygon_area,
    polygon_gap,
    state_to_dict,
    triple_norm,
    validate_patch_family,
)
from .fields import KernelSpec, _point_in_polygon, velocity_at


class NumericalFailure(RuntimeError):
    """Non-finite values appeared in the right-hand side."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump


class DomainExit(GeometryError):
    """A half-plane curve reached the axis."""


class VerdictKind(str, enum.Enum):
    NONE = "None"
    BoundariesTouch = "BoundariesTouch"
    SelfTouch = "SelfTouch"
    H3Blowup = "H3Blowup"
    NodeDegeneracy = "NodeDegeneracy"


@dataclass(frozen=True)
class BlowupVerdict:
    kind: VerdictKind = VerdictKind.NONE
    time: float = 0.0
    detail: str = ""

    @property
    def tripped(self) -> bool:
        return self.kind != VerdictKind.NONE


@dataclass(frozen=True)
class Thresholds:
    F_max: float = 50.0
    delta_min: float = 1e-3
    h3_max: float = 1e4
    min_seg_frac: float = 0.05

    def __post_init__(self):
        for name in ("F_max", "delta_min", "h3_max", "min_seg_frac"):
            if not getattr(self, name) > 0:
                raise ValueError(f"threshold {name} must be positive")


@dataclass(frozen=True)
class EvolveConfig:
    """``dt=None`` selects the step from the CFL guard (RK4) or from ``rtol`` (RK45)."""

    t_end: float
    dt: float | None = None
    scheme: str = "RK4"
    cadence: float | None = None
    resample_every: int = 0
    thresholds: Thresholds = field(default_factory=Thresholds)
    cfl: float = 0.5
    rtol: float = 1e-8
    max_steps: int = 1_000_000
    monitor_every: int = 10
    stability_every: int = 200

    def __post_init__(self):
        if self.scheme not in ("RK4", "RK45"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.cadence is not None and not self.cadence > 0:
            raise ValueError("cadence must be positive")
        if self.resample_every < 0:
            raise ValueError("resample_every must be nonnegative")
        if self.stability_every < 1:
            raise ValueError("stability_every must be at least 1")
        if self.monitor_every < 1:
            raise ValueError("monitor_every must be at least 1")
        if not 0 < self.cfl <= 0.5:
            raise ValueError("cfl factor must lie in (0, 0.5]")


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    h3: float
    c2: float
    delta_inv: float
    F: float
    triple: float
    areas: tuple
    min_gap: float
    arclens: tuple


@dataclass
class RunResult:
    trajectory: list
    diagnostics: list
    verdict: BlowupVerdict
    steps: int = 0


def min_segment(state: ContourState) -> float:
    return min(float(np.linalg.norm(np.roll(z, -1, axis=0) - z, axis=1).min()) for z in state.arrays())


def _min_gap(state: ContourState) -> float:
    arr = state.arrays()
    best = math.inf
    for i in range(len(arr)):
        for k in range(i + 1, len(arr)):
            best = min(best, polygon_gap(arr[i], arr[k]))
    return best


def diagnostics(state: ContourState) -> DiagnosticsRecord:
    nr = triple_norm(state)
    return DiagnosticsRecord(
        t=state.time, h3=nr.h3, c2=nr.c2, delta_inv=nr.delta_inv, F=nr.f_functional, triple=nr.triple,
        areas=tuple(polygon_area(z) for z in state.arrays()),
        min_gap=_min_gap(state),
        arclens=tuple(arc_length(z) for z in state.arrays()),
    )


def _cheap_monitor(state: ContourState, thresholds: Thresholds) -> BlowupVerdict:
    t = state.time
    if state.domain == Domain.HalfPlane and state.min_height() < thresholds.delta_min:
        return BlowupVerdict(VerdictKind.BoundariesTouch, t, f"axis gap = {state.min_height():.3e}")
    for k, z in enumerate(state.arrays()):
        seg = np.linalg.norm(np.roll(z, -1, axis=0) - z, axis=1)
        if seg.min() < thresholds.min_seg_frac * seg.mean():
            return BlowupVerdict(VerdictKind.NodeDegeneracy, t,
                                 f"curve {k}: min/mean segment = {seg.min() / seg.mean():.3e}")
    return BlowupVerdict()


def monitor(state: ContourState, thresholds: Thresholds) -> BlowupVerdict:
    """Map threshold breaches to a verdict; boundary contact is checked first."""
    t = state.time
    if state.N > 1:
        d = delta_functional(state)
        if d < thresholds.delta_min:
            return BlowupVerdict(VerdictKind.BoundariesTouch, t, f"delta = {d:.3e}")
    v = _cheap_monitor(state, thresholds)
    if v.tripped:
        return v
    try:
        nr = triple_norm(state)
    except GeometryError as exc:
        return BlowupVerdict(VerdictKind.SelfTouch, t, str(exc))
    if nr.f_functional > thresholds.F_max:
        return BlowupVerdict(VerdictKind.SelfTouch, t, f"F = {nr.f_functional:.3e}")
    if nr.h3 > thresholds.h3_max:
        return BlowupVerdict(VerdictKind.H3Blowup, t, f"h3 = {nr.h3:.3e}")
    return BlowupVerdict()


# ---------------------------------------------------------------------------
# stepping

_DP_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_DP_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class _Field:
    def __init__(self, state, family, alpha, reg):
        self.template, self.family, self.alpha, self.reg = state, family, alpha, reg

    def __call__(self, Y: np.ndarray, t: float) -> np.ndarray:
        st = self.template.with_samples(list(Y), t)
        out = rhs(st, self.family, self.alpha, self.reg).as_array()
        if not np.all(np.isfinite(out)):
            raise NumericalFailure(f"non-finite right-hand side at t = {t}", dump=state_to_dict(st))
        return out


def spectral_radius_estimate(f, Y: np.ndarray, t: float, f0: np.ndarray | None = None,
                             iters: int = 12, seed: int = 0) -> float:
    """Largest |eigenvalue| of the linearized field, by power iteration on
    finite-difference Jacobian-vector products.

    The spectrum is close to the imaginary axis and comes in conjugate pairs,
    so the growth over two applications is used.
    """
    f0 = f(Y, t) if f0 is None else f0
    scale = 1e-7 * (1.0 + float(np.abs(Y).max()))
    v = np.random.default_rng(seed).standard_normal(Y.shape)
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(iters):
        w = (f(Y + scale * v, t) - f0) / scale
        w2 = (f(Y + scale * w / max(np.linalg.norm(w), 1e-300), t) - f0) / scale
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        rho = float(np.sqrt(nw * np.linalg.norm(w2)))
        v = w2 / max(np.linalg.norm(w2), 1e-300)
    return rho


# RK4 is stable on the imaginary axis up to |lambda dt| = 2.83; keep a margin.
_STABILITY_NUMBER = 2.0


def _rk4(f, Y, t, dt, k1=None):
    k1 = f(Y, t) if k1 is None else k1
    k2 = f(Y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(Y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(Y + dt * k3, t + dt)
    return Y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _dp45(f, Y, t, dt, k1=None):
    ks = [f(Y, t) if k1 is None else k1]
    for s in range(1, 7):
        inc = sum(a * k for a, k in zip(_DP_A[s], ks))
        ks.append(f(Y + dt * inc, t + _DP_C[s] * dt))
    y5 = Y + dt * sum(b * k for b, k in zip(_DP_B5, ks))
    y4 = Y + dt * sum(b * k for b, k in zip(_DP_B4, ks))
    return y5, y5 - y4


def _check_domain(state: ContourState):
    if state.domain == Domain.HalfPlane and state.min_height() <= 0:
        raise DomainExit(f"curve left the half-plane at t = {state.time}")


def step(state: ContourState, family: PatchFamily, alpha: float, reg: RegularizationSpec | None,
         dt: float, scheme: str = "RK4") -> ContourState:
    """One explicit Runge-Kutta step (classical RK4 or the 5th-order Dormand-Prince solution)."""
    if dt == 0:
        return state
    f = _Field(state, family, alpha, reg or Plain())
    Y = np.stack(state.arrays())
    if scheme == "RK4":
        Yn = _rk4(f, Y, state.time, dt)
    elif scheme == "RK45":
        Yn, _ = _dp45(f, Y, state.time, dt)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    out = state.with_samples(list(Yn), state.time + dt)
    _check_domain(out)
    return out


def _resample(state: ContourState) -> ContourState:
    return state.with_samples([constant_speed_reparametrize(c, check_simple=False).samples for c in state.curves])


def run(state: ContourState, family: PatchFamily, alpha: float, reg: RegularizationSpec | None,
        config: EvolveConfig) -> RunResult:
    """Integrate to ``config.t_end`` or until a monitor trips.

    States and diagnostics are recorded at t = 0 and at every cadence point;
    steps are shortened so that they land on those points exactly.
    """
    verdict = validate_patch_family(state, family)
    if not verdict.valid:
        raise ValueError("invalid patch family: " + "; ".join(verdict.violations))
    reg = reg or Plain()
    th = config.thresholds
    cadence = config.cadence if config.cadence is not None else (config.t_end or 1.0)
    n_marks = max(1, int(round(config.t_end / cadence))) if config.t_end > 0 else 0
    marks = [state.time + min(config.t_end, (i + 1) * cadence) for i in range(n_marks)]

    traj, diags = [state], [diagnostics(state)]
    v = monitor(state, th)
    if v.tripped or config.t_end == 0:
        return RunResult(traj, diags, v, 0)

    f = _Field(state, family, alpha, reg)
    Y = np.stack(state.arrays())
    t = state.time
    steps = 0
    dt_try = config.dt
    cur = state
    dt_stab = math.inf
    for mark in marks:
        while t < mark - 1e-14 * max(1.0, abs(mark)):
            if steps >= config.max_steps:
                raise RuntimeError(f"step budget exhausted at t = {t}")
            k1 = f(Y, t)
            if config.scheme == "RK4" and steps % config.stability_every == 0:
                rho = spectral_radius_estimate(f, Y, t, k1)
                dt_stab = _STABILITY_NUMBER / rho if rho > 0 else math.inf
            speed = float(np.linalg.norm(k1, axis=2).max())
            dt_cfl = config.cfl * min_segment(cur) / speed if speed > 0 else math.inf
            dt = min(dt_try if dt_try is not None else math.inf, dt_cfl, dt_stab, mark - t)
            if config.scheme == "RK4":
                Yn = _rk4(f, Y, t, dt, k1)
            else:
                while True:
                    Yn, err = _dp45(f, Y, t, dt, k1)
                    scale = 1.0 + np.abs(Y).max()
                    e = float(np.abs(err).max()) / (config.rtol * scale)
                    fac = 0.9 * e ** -0.2 if e > 0 else 5.0
                    if e <= 1.0:
                        dt_try = dt * min(5.0, max(0.2, fac)) if config.dt is None else config.dt
                        break
                    dt *= max(0.2, fac)
            t = mark if abs(mark - (t + dt)) < 1e-14 * max(1.0, abs(mark)) else t + dt
            Y = Yn
            steps += 1
            cur = state.with_samples(list(Y), t)
            _check_domain(cur)
            if config.resample_every and steps % config.resample_every == 0:
                cur = _resample(cur)
                Y = np.stack(cur.arrays())
            at_mark = t == mark
            v = monitor(cur, th) if (at_mark or steps % config.monitor_every == 0) else _cheap_monitor(cur, th)
            if v.tripped:
                traj.append(cur)
                diags.append(diagnostics(cur))
                return RunResult(traj, diags, v, steps)
        traj.append(cur)
        diags.append(diagnostics(cur))
    return RunResult(traj, diags, BlowupVerdict(), steps)


# ---------------------------------------------------------------------------
# tracers


@dataclass
class TracerPath:
    seed: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    dist_to_boundary: np.ndarray
    jacobian_estimate: np.ndarray | None = None
    crossed: bool = False


def _boundary_distance(x: np.ndarray, state: ContourState) -> np.ndarray:
    return np.min([point_polygon_distance(x, z) for z in state.arrays()], axis=0)


def _inside_flags(x: np.ndarray, state: ContourState) -> np.ndarray:
    return np.array([[_point_in_polygon(p, z) for z in state.arrays()] for p in x])


def advect_tracers(seeds, trajectory, family: PatchFamily, kernel: KernelSpec,
                   substeps: int = 4, jacobian: bool = False, cluster_h: float = 1e-4,
                   oracle: bool = False) -> list:
    """RK4 advection of seeds through the stored trajectory.

    The velocity between two snapshots is the linear interpolation in time of
    the velocities of the two snapshots.  With ``jacobian`` each seed carries a
    cluster of four satellites at distance ``cluster_h`` whose central
    differences give det(D Phi_t).  ``oracle`` evaluates velocities with the
    area-quadrature oracle instead of the boundary integral.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    n = seeds.shape[0]
    if jacobian:
        offs = cluster_h * np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
        X = np.concatenate([seeds[:, None, :], seeds[:, None, :] + offs[None]], axis=1).reshape(-1, 2)
    else:
        X = seeds.copy()
    stride = 5 if jacobian else 1

    def vel(x, a, b, lam):
        ua = velocity_at(x, a, family, kernel, oracle=oracle)
        if lam == 0.0:
            return ua
        ub = velocity_at(x, b, family, kernel, oracle=oracle)
        return (1 - lam) * ua + lam * ub

    times = [trajectory[0].time]
    pos = [X.copy()]
    inside0 = _inside_flags(seeds, trajectory[0])
    crossed = np.zeros(n, bool)
    dist = [_boundary_distance(seeds, trajectory[0])]
    for a, b in zip(trajectory[:-1], trajectory[1:]):
        T = b.time - a.time
        h = T / substeps
        for s in range(substeps):
            l0 = s / substeps
            lm = (s + 0.5) / substeps
            l1 = (s + 1) / substeps
            k1 = vel(X, a, b, l0)
            k2 = vel(X + 0.5 * h * k1, a, b, lm)
            k3 = vel(X + 0.5 * h * k2, a, b, lm)
            k4 = vel(X + h * k3, a, b, l1)
            X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        times.append(b.time)
        pos.append(X.copy())
        centers = X[::stride]
        dist.append(_boundary_distance(centers, b))
        crossed |= np.any(_inside_flags(centers, b) != inside0, axis=1)
    P = np.stack(pos)
    D = np.stack(dist)
    out = []
    for i in range(n):
        jac = None
        if jacobian:
            c = P[:, stride * i:stride * (i + 1)]
            col1 = (c[:, 1] - c[:, 2]) / (2 * cluster_h)
            col2 = (c[:, 3] - c[:, 4]) / (2 * cluster_h)
            jac = col1[:, 0] * col2[:, 1] - col1[:, 1] * col2[:, 0]
        out.append(TracerPath(seed=seeds[i], times=np.array(times), positions=P[:, stride * i],
                              dist_to_boundary=D[:, i], jacobian_estimate=jac, crossed=bool(crossed[i])))
    return out


def fit_distance_envelope(paths) -> float:
    """Smallest B >= 0 with log d_t >= log d_0 - B t along every path."""
    B = 0.0
    for p in paths:
        t = p.times - p.times[0]
        d = p.dist_to_boundary
        if np.any(d <= 0):
            return math.inf
        m = t > 0
        if m.any():
            B = max(B, float(np.max((np.log(d[0]) - np.log(d[m])) / t[m])))
    return B
