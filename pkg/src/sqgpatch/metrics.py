"""Distances between contour states, weak-form residuals and convergence studies."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import shapely
from scipy.spatial import cKDTree
from scipy.special import erf, roots_legendre

from .contour import BetaKernel, Mollified, Plain
from .curvekit import (
    TWO_PI,
    ContourState,
    PatchFamily,
    constant_speed_reparametrize,
    point_polygon_distance,
    spectral_derivative,
    trig_eval,
    upsample,
)
from .evolve import EvolveConfig, run
from .fields import KernelSpec, velocity_at


def _check_pair(a: ContourState, b: ContourState):
    if a.N != b.N:
        raise ValueError(f"states have different patch counts ({a.N} vs {b.N})")


# ---------------------------------------------------------------------------
# distances


def _curve_hausdorff(za: np.ndarray, zb: np.ndarray) -> float:
    return float(max(point_polygon_distance(za, zb).max(), point_polygon_distance(zb, za).max()))


def _project_distance(P: np.ndarray, z: np.ndarray, seed_factor: int = 8, iters: int = 20) -> np.ndarray:
    """Distance from each point of P to the trigonometric interpolant of z
    (Newton on (z(s) - p) . z'(s) = 0 from the nearest refined vertex)."""
    M = z.shape[0]
    Mf = M * seed_factor
    zf = upsample(z, seed_factor)
    _, idx = cKDTree(zf).query(P)
    s = -np.pi + TWO_PI * idx / Mf
    for _ in range(iters):
        d = trig_eval(z, s) - P
        d1 = trig_eval(z, s, 1)
        d2 = trig_eval(z, s, 2)
        g = np.einsum("ij,ij->i", d, d1)
        gp = np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", d, d2)
        step = np.clip(g / np.where(gp > 0, gp, np.inf), -TWO_PI / Mf, TWO_PI / Mf)
        s = s - step
        if np.max(np.abs(step)) < 1e-15:
            break
    return np.linalg.norm(trig_eval(z, s) - P, axis=1)


def hausdorff_distance(a: ContourState, b: ContourState, refine: int = 8, per_patch: bool = False,
                       exact: bool = False):
    """Index-matched Hausdorff distance: max over k of the symmetric
    vertex-to-polygon Hausdorff distance between curve k of each state,
    both refined by ``refine`` through their interpolants.

    ``exact`` measures from the refined vertices to the interpolating curves
    themselves instead of their polygons, which removes the O((h/refine)^2)
    chord sag from the result.
    """
    _check_pair(a, b)
    d = []
    for x, y in zip(a.arrays(), b.arrays()):
        xf, yf = upsample(x, refine), upsample(y, refine)
        if exact:
            d.append(float(max(_project_distance(xf, y).max(), _project_distance(yf, x).max())))
        else:
            d.append(_curve_hausdorff(xf, yf))
    return d if per_patch else max(d, default=0.0)


@dataclass(frozen=True)
class SymDiffResult:
    area: float
    per_patch: tuple
    method: str            # "clip" or "monte_carlo"
    stderr: float = 0.0
    seed: int | None = None


_SNAP = 1e-12


def _polygon(z: np.ndarray):
    try:
        return shapely.set_precision(shapely.Polygon(z), _SNAP)
    except shapely.errors.GEOSException:
        return None


def _mc_symdiff(za, zb, n: int, seed: int):
    lo = np.minimum(za.min(0), zb.min(0))
    hi = np.maximum(za.max(0), zb.max(0))
    rng = np.random.default_rng(seed)
    pts = lo + (hi - lo) * rng.random((n, 2))
    # make_valid splits self-crossing rings into their even-odd pieces
    pa = shapely.contains_xy(shapely.make_valid(shapely.Polygon(za)), pts[:, 0], pts[:, 1])
    pb = shapely.contains_xy(shapely.make_valid(shapely.Polygon(zb)), pts[:, 0], pts[:, 1])
    frac = np.mean(pa != pb)
    box = float(np.prod(hi - lo))
    return box * frac, box * math.sqrt(frac * (1 - frac) / n)


def symmetric_difference(a: ContourState, b: ContourState, refine: int = 4,
                         mc_samples: int = 400_000, seed: int = 12345) -> SymDiffResult:
    """Sum over k of area(Omega_k xor tilde Omega_k) by polygon clipping.

    Polygons whose clipping is degenerate (invalid geometry) fall back to a
    seeded Monte Carlo estimate, reported with its standard error.
    """
    _check_pair(a, b)
    per, method, var = [], "clip", 0.0
    for x, y in zip(a.arrays(), b.arrays()):
        za, zb = upsample(x, refine), upsample(y, refine)
        pa, pb = _polygon(za), _polygon(zb)
        if pa is not None and pb is not None and pa.is_valid and pb.is_valid:
            try:
                per.append(float(shapely.symmetric_difference(pa, pb).area))
                continue
            except shapely.errors.GEOSException:
                pass
        area, se = _mc_symdiff(za, zb, mc_samples, seed)
        per.append(area)
        var += se * se
        method = "monte_carlo"
    return SymDiffResult(sum(per), tuple(per), method, math.sqrt(var), seed if method == "monte_carlo" else None)


def symmetric_difference_area(a: ContourState, b: ContourState, refine: int = 4) -> float:
    return symmetric_difference(a, b, refine).area


def l2_curve_distance(a: ContourState, b: ContourState, per_patch: bool = False):
    """sqrt( sum_k trapezoid |z_k - z~_k|^2 )."""
    _check_pair(a, b)
    if a.grid_size != b.grid_size:
        raise ValueError("grid sizes differ")
    h = TWO_PI / a.grid_size if a.N else 0.0
    sq = [float(np.sum((x - y) ** 2) * h) for x, y in zip(a.arrays(), b.arrays())]
    return [math.sqrt(v) for v in sq] if per_patch else math.sqrt(sum(sq))


@dataclass
class ComparisonReport:
    hausdorff: float
    sym_diff_area: float
    l2_distance: float
    per_patch: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def compare_states(a: ContourState, b: ContourState) -> ComparisonReport:
    hd = hausdorff_distance(a, b, per_patch=True)
    sd = symmetric_difference(a, b)
    l2 = l2_curve_distance(a, b, per_patch=True) if a.grid_size == b.grid_size else [math.nan] * a.N
    per = [{"hausdorff": h, "sym_diff_area": s, "l2_distance": d} for h, s, d in zip(hd, sd.per_patch, l2)]
    return ComparisonReport(
        hausdorff=max(hd, default=0.0),
        sym_diff_area=sd.area,
        l2_distance=math.sqrt(sum(d * d for d in l2)),
        per_patch=per,
    )


# ---------------------------------------------------------------------------
# weak form


@dataclass(frozen=True)
class GaussianTest:
    """f(x) = exp(-|x - center|^2 / width^2)."""

    center: tuple = (0.0, 0.0)
    width: float = 1.0

    def __call__(self, x):
        d = np.asarray(x, float) - np.asarray(self.center)
        return np.exp(-np.sum(d * d, axis=-1) / self.width ** 2)

    def grad(self, x):
        d = np.asarray(x, float) - np.asarray(self.center)
        return (-2.0 / self.width ** 2) * d * self(x)[..., None]

    def x1_antiderivative(self, x):
        """F with dF/dx1 = f."""
        x = np.asarray(x, float)
        c, w = self.center, self.width
        return (0.5 * math.sqrt(math.pi) * w * erf((x[..., 0] - c[0]) / w)
                * np.exp(-((x[..., 1] - c[1]) ** 2) / w ** 2))


@dataclass(frozen=True)
class LinearTest:
    """f(x) = a . x + b."""

    a: tuple = (1.0, 0.0)
    b: float = 0.0

    def __call__(self, x):
        return np.asarray(x, float) @ np.asarray(self.a) + self.b

    def grad(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(np.asarray(self.a, float), x.shape).copy()

    def x1_antiderivative(self, x):
        x = np.asarray(x, float)
        return 0.5 * self.a[0] * x[..., 0] ** 2 + (self.a[1] * x[..., 1] + self.b) * x[..., 0]


def patch_integral(z: np.ndarray, testfn) -> float:
    """int_Omega f by Green's theorem: the contour integral of F dx2 with dF/dx1 = f."""
    dz = spectral_derivative(z, 1)
    return float(np.sum(testfn.x1_antiderivative(z) * dz[:, 1]) * TWO_PI / z.shape[0])


def _area_nodes(z: np.ndarray, n_rho: int, refine: int):
    """Quadrature nodes/weights on the patch through y = c + rho (z(xi) - c)."""
    zf = upsample(z, refine)
    dzf = spectral_derivative(zf, 1)
    c = zf.mean(axis=0)
    w = zf - c
    jac = w[:, 0] * dzf[:, 1] - w[:, 1] * dzf[:, 0]
    if np.any(jac * np.sign(jac.sum()) <= 0):
        raise ValueError("area quadrature needs a patch star-shaped about its centroid")
    r, wr = roots_legendre(n_rho)
    rho = 0.5 * (r + 1.0)
    wrho = 0.5 * wr
    h = TWO_PI / zf.shape[0]
    pts = c + rho[:, None, None] * w[None]
    wts = (wrho * rho)[:, None] * np.abs(jac)[None] * h
    return pts.reshape(-1, 2), wts.ravel()


@dataclass
class WeakFormSeries:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray

    @property
    def relative(self) -> np.ndarray:
        scale = np.maximum(np.abs(self.lhs), np.abs(self.rhs))
        return np.where(scale > 0, self.residual / np.where(scale > 0, scale, 1.0), self.residual)


def weak_form_rhs(state: ContourState, family: PatchFamily, kernel: KernelSpec, testfn,
                  n_rho: int = 16, refine: int = 1) -> float:
    """sum_k theta_k int_{Omega_k} u . grad f, by area quadrature."""
    total = 0.0
    for z, th in zip(state.arrays(), family.strengths):
        pts, wts = _area_nodes(z, n_rho, refine)
        u = velocity_at(pts, state, family, kernel)
        total += th * float(np.sum(wts * np.einsum("ij,ij->i", u, testfn.grad(pts))))
    return total


def weak_form_residual(trajectory, family: PatchFamily, kernel: KernelSpec, testfn,
                       n_rho: int = 16, refine: int = 1) -> WeakFormSeries:
    """|d/dt sum theta_k int f - sum theta_k int u . grad f| at interior snapshot times.

    The time derivative is the centred difference over neighbouring snapshots.
    """
    if len(trajectory) < 3:
        raise ValueError("need at least three snapshots")
    I = np.array([sum(th * patch_integral(z, testfn) for z, th in zip(s.arrays(), family.strengths))
                  for s in trajectory])
    t = np.array([s.time for s in trajectory])
    lhs = (I[2:] - I[:-2]) / (t[2:] - t[:-2])
    rhs = np.array([weak_form_rhs(s, family, kernel, testfn, n_rho, refine) for s in trajectory[1:-1]])
    return WeakFormSeries(t[1:-1], lhs, rhs, np.abs(lhs - rhs))


# ---------------------------------------------------------------------------
# existence time


@dataclass(frozen=True)
class ExistenceEstimate:
    T_est: float
    alpha: float
    N: int
    Theta: float
    M_norm: float
    Cbar: float


def existence_time_estimate(alpha: float, N: int, Theta: float, M_norm: float, Cbar: float = 1.0) -> ExistenceEstimate:
    """T = (Cbar N Theta)^-1 M^(-6 - 2 alpha)."""
    if not (alpha > 0 and N > 0 and Theta > 0 and Cbar > 0):
        raise ValueError("alpha, N, Theta and Cbar must be positive")
    if M_norm < 2:
        raise ValueError("M_norm must be at least 2")
    T = 1.0 / (Cbar * N * Theta) * M_norm ** (-6.0 - 2.0 * alpha)
    return ExistenceEstimate(T, alpha, N, Theta, M_norm, Cbar)


# ---------------------------------------------------------------------------
# convergence studies

STUDY_KINDS = ("BetaSweep", "EpsilonSweep", "GridRefine", "SplitStepHausdorff")


@dataclass
class StudyConfig:
    state: ContourState
    family: PatchFamily
    alpha: float
    evolve: EvolveConfig
    params: tuple
    epsilon_c0: float = 1.0
    drift_const: float = 10.0
    ref_norm_M: float = 2.0
    refine_core: int = 1


@dataclass
class ConvergenceTable:
    kind: str
    params: list
    distances: list
    slope: float
    target: float | None
    excluded: list = field(default_factory=list)
    distance_name: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "distance", "slope"])
        for p, d in zip(self.params, self.distances):
            w.writerow([repr(float(p)), repr(float(d)), repr(float(self.slope))])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind, "distance": self.distance_name,
            "params": [float(p) for p in self.params], "distances": [float(d) for d in self.distances],
            "slope": self.slope, "target": self.target,
            "excluded": [{"param": float(p), "reason": r} for p, r in self.excluded],
        }, indent=2)


def fit_loglog(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def _final(cfg: StudyConfig, state, reg, evolve=None):
    res = run(state, cfg.family, cfg.alpha, reg, evolve or cfg.evolve)
    if res.verdict.tripped:
        return None, f"{res.verdict.kind.value} at t = {res.verdict.time:.4g}"
    return res, None


def _resize(state: ContourState, M: int) -> ContourState:
    """Same curves on a grid of size M; the grids nest, so coarsening is subsampling."""
    out = []
    for z in state.arrays():
        n = z.shape[0]
        if M >= n:
            out.append(upsample(z, M // n))
        else:
            out.append(z[:: n // M])
    return state.with_samples(out)


def convergence_study(kind: str, cfg: StudyConfig) -> ConvergenceTable:
    """Matched runs over ``cfg.params`` and the log-log slope of their distances.

    BetaSweep / EpsilonSweep: final-time L2 curve distance of each regularized
    run to the plain run (target slope 1 for beta, none for epsilon).
    GridRefine: Hausdorff distance between final states of successive grids.
    SplitStepHausdorff: params are times; the distance is the Hausdorff
    distance at each time between the run from the initial state and the run
    from its constant-speed reparametrization (target 1/(2 alpha), reported).
    """
    if kind not in STUDY_KINDS:
        raise ValueError(f"unknown study kind {kind!r}")
    params = [float(p) for p in cfg.params]
    if len(params) < 3:
        raise ValueError("a convergence study needs at least three parameter values")
    dists, kept, excluded = [], [], []

    if kind in ("BetaSweep", "EpsilonSweep"):
        ref, why = _final(cfg, cfg.state, Plain(cfg.refine_core))
        if ref is None:
            raise RuntimeError(f"reference run tripped a monitor: {why}")
        zref = ref.trajectory[-1]
        for p in params:
            reg = BetaKernel(p, cfg.refine_core) if kind == "BetaSweep" else Mollified(
                p, drift_const=cfg.drift_const, ref_norm_M=cfg.ref_norm_M, c0=cfg.epsilon_c0,
                refine=cfg.refine_core)
            res, why = _final(cfg, cfg.state, reg)
            if res is None:
                excluded.append((p, why))
                continue
            kept.append(p)
            dists.append(l2_curve_distance(res.trajectory[-1], zref))
        target = 1.0 if kind == "BetaSweep" else None
        slope = fit_loglog(kept, dists)
        name = "l2_curve_distance"
    elif kind == "GridRefine":
        finals = []
        for p in params:
            res, why = _final(cfg, _resize(cfg.state, int(p)), Plain(cfg.refine_core))
            if res is None:
                excluded.append((p, why))
                finals.append(None)
            else:
                finals.append(res.trajectory[-1])
        for i in range(1, len(params)):
            if finals[i] is None or finals[i - 1] is None:
                continue
            kept.append(params[i])
            dists.append(hausdorff_distance(finals[i - 1], finals[i]))
        # distance ~ M^-p: report p as a positive rate
        s = fit_loglog(kept, dists)
        slope = -s if not math.isnan(s) else s
        target = 1.0
        name = "hausdorff_successive"
    else:
        times = sorted(params)
        evo = replace(cfg.evolve, t_end=times[-1], cadence=None)
        marks = {}
        for label, start in (("a", cfg.state), ("b", _reparametrized(cfg.state))):
            res = _run_marks(cfg, start, times, evo)
            marks[label] = res
        for t in times:
            a, b = marks["a"].get(t), marks["b"].get(t)
            if a is None or b is None:
                excluded.append((t, "monitor tripped before this time"))
                continue
            kept.append(t)
            dists.append(hausdorff_distance(a, b, refine=4, exact=True))
        slope = fit_loglog(kept, dists)
        target = 1.0 / (2.0 * cfg.alpha)
        name = "hausdorff_split"
    return ConvergenceTable(kind, kept, dists, slope, target, excluded, name)


def _reparametrized(state: ContourState) -> ContourState:
    return state.with_samples([constant_speed_reparametrize(c).samples for c in state.curves])


def _run_marks(cfg: StudyConfig, start: ContourState, times, evo: EvolveConfig) -> dict:
    out, cur, t0 = {}, start, start.time
    for t in times:
        res = run(cur, cfg.family, cfg.alpha, Plain(cfg.refine_core), replace(evo, t_end=t - (cur.time - t0)))
        if res.verdict.tripped:
            break
        cur = res.trajectory[-1]
        out[t] = cur
    return out
