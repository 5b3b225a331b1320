"""Command line drivers: configuration, subcommands and artifact writers."""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .contour import BetaKernel, Mollified, Plain
from .curvekit import (
    ContourState,
    Curve,
    Domain,
    PatchFamily,
    circle,
    ellipse,
    save_snapshot,
    upsample,
)
from .evolve import EvolveConfig, Thresholds, advect_tracers, fit_distance_envelope, run
from .fields import KernelSpec, velocity_at
from .lembench import bench_report_json, run_bench

EXIT_OK, EXIT_ERROR, EXIT_TRIPPED = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PatchConfig:
    name: str
    theta: float
    shape: str                      # "circle", "ellipse" or "samples"
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    a: float = 1.0
    b: float = 1.0
    angle: float = 0.0
    samples_file: str = ""


@dataclass(frozen=True)
class RegConfig:
    kind: str = "Plain"
    beta: float = 0.0
    epsilon: float = 0.0
    drift_const: float = 10.0
    ref_norm_M: float = 2.0
    c0: float = 1.0
    refine: int = 1


@dataclass(frozen=True)
class EvolveSettings:
    t_end: float = 1.0
    dt: float | None = None
    scheme: str = "RK4"
    resample_every: int = 0
    cfl: float = 0.5
    rtol: float = 1e-8
    monitor_every: int = 10
    F_max: float = 50.0
    delta_min: float = 1e-3
    h3_max: float = 1e4
    min_seg_frac: float = 0.05


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    cadence: float | None = None
    emit_svg: bool = False


@dataclass(frozen=True)
class StudySettings:
    params: tuple = ()
    epsilon_c0: float = 1.0


@dataclass(frozen=True)
class TraceSettings:
    seeds: tuple = ()
    substeps: int = 4
    jacobian: bool = False


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    patches: tuple
    domain: str = "WholePlane"
    grid_size: int = 256
    regularization: RegConfig = field(default_factory=RegConfig)
    evolve: EvolveSettings = field(default_factory=EvolveSettings)
    output: OutputConfig = field(default_factory=OutputConfig)
    study: StudySettings = field(default_factory=StudySettings)
    trace: TraceSettings = field(default_factory=TraceSettings)
    probes: tuple = ()
    rng_seed: int = 0


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _point(v):
    return isinstance(v, (list, tuple)) and len(v) == 2 and all(_is_num(x) for x in v)


class _Reader:
    """Strict reader over one JSON object: collects errors with their paths."""

    def __init__(self, obj, path: str, errors: list):
        self.path, self.errors = path, errors
        self.obj = obj if isinstance(obj, dict) else {}
        if not isinstance(obj, dict):
            errors.append(f"{path}: expected an object")
        self.seen = set()

    def get(self, key, check, what, default=None, required=False):
        self.seen.add(key)
        if key not in self.obj:
            if required:
                self.errors.append(f"{self.path}.{key}: required")
            return default
        v = self.obj[key]
        if not check(v):
            self.errors.append(f"{self.path}.{key}: expected {what}")
            return default
        return v

    def finish(self):
        for k in self.obj:
            if k not in self.seen:
                self.errors.append(f"{self.path}.{k}: unknown key")


def _parse_patch(obj, path, errors) -> PatchConfig | None:
    r = _Reader(obj, path, errors)
    name = r.get("name", lambda v: isinstance(v, str) and v, "a non-empty string", required=True)
    theta = r.get("theta", _is_num, "a number", required=True)
    if theta == 0:
        errors.append(f"{path}.theta: must be nonzero")
    shape = r.get("shape", lambda v: isinstance(v, dict) and len(v) == 1, "an object with one shape key",
                  required=True)
    r.finish()
    if shape is None or name is None or theta is None:
        return None
    kind, spec = next(iter(shape.items()))
    sp = f"{path}.shape.{kind}"
    if kind == "circle":
        s = _Reader(spec, sp, errors)
        c = s.get("center", _point, "[x, y]", (0.0, 0.0))
        rad = s.get("radius", lambda v: _is_num(v) and v > 0, "a positive number", 1.0)
        s.finish()
        return PatchConfig(name, float(theta), "circle", tuple(map(float, c)), radius=float(rad))
    if kind == "ellipse":
        s = _Reader(spec, sp, errors)
        c = s.get("center", _point, "[x, y]", (0.0, 0.0))
        a = s.get("a", lambda v: _is_num(v) and v > 0, "a positive number", 1.0)
        b = s.get("b", lambda v: _is_num(v) and v > 0, "a positive number", 1.0)
        ang = s.get("angle", _is_num, "a number", 0.0)
        s.finish()
        return PatchConfig(name, float(theta), "ellipse", tuple(map(float, c)), a=float(a), b=float(b),
                           angle=float(ang))
    if kind == "samples_file":
        if not isinstance(spec, str) or not spec:
            errors.append(f"{sp}: expected a file path")
            return None
        return PatchConfig(name, float(theta), "samples", samples_file=spec)
    errors.append(f"{path}.shape: unknown shape {kind!r}")
    return None


def _dataclass_from(cls, obj, path, errors, checks):
    r = _Reader(obj, path, errors)
    kw = {}
    for key, (check, what) in checks.items():
        v = r.get(key, check, what)
        if v is not None:
            kw[key] = tuple(v) if isinstance(v, list) else v
    r.finish()
    return cls(**kw)


_POS = (lambda v: _is_num(v) and v > 0, "a positive number")
_NONNEG = (lambda v: _is_num(v) and v >= 0, "a nonnegative number")
_POSINT = (lambda v: _is_int(v) and v > 0, "a positive integer")
_NONNEGINT = (lambda v: _is_int(v) and v >= 0, "a nonnegative integer")


def parse_config(text: str) -> RunConfig:
    """Validate a JSON configuration; raises ConfigError listing every problem."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"$: invalid JSON ({e.msg} at line {e.lineno})"]) from None
    errors: list[str] = []
    r = _Reader(doc, "$", errors)
    alpha = r.get("alpha", _is_num, "a number", required=True)
    if alpha is not None and not 0 < alpha < 0.5:
        errors.append("$.alpha: alpha out of (0, 0.5)")
    domain = r.get("domain", lambda v: v in ("WholePlane", "HalfPlane"), '"WholePlane" or "HalfPlane"',
                   "WholePlane")
    M = r.get("grid_size", lambda v: _is_int(v) and v >= 16 and not v & (v - 1), "a power of two >= 16", 256)
    raw = r.get("patches", lambda v: isinstance(v, list) and v, "a non-empty list", [], required=True)
    patches = []
    for i, p in enumerate(raw):
        pc = _parse_patch(p, f"$.patches[{i}]", errors)
        if pc is not None:
            patches.append(pc)
    names = [p.name for p in patches]
    for n in sorted({n for n in names if names.count(n) > 1}):
        errors.append(f"$.patches: duplicate patch name {n!r}")

    reg = _dataclass_from(RegConfig, r.get("regularization", lambda v: True, "", {}), "$.regularization", errors, {
        "kind": (lambda v: v in ("Plain", "BetaKernel", "Mollified"), '"Plain", "BetaKernel" or "Mollified"'),
        "beta": _NONNEG, "epsilon": _NONNEG, "drift_const": _NONNEG, "ref_norm_M": _POS, "c0": _POS,
        "refine": (lambda v: _is_int(v) and v > 0 and not v & (v - 1), "a power of two"),
    })
    if reg.kind == "BetaKernel" and not reg.beta > 0:
        errors.append("$.regularization.beta: must be positive for BetaKernel")
    if reg.kind == "Mollified":
        try:
            Mollified(reg.epsilon, reg.drift_const, reg.ref_norm_M, reg.c0)
        except ValueError as e:
            errors.append(f"$.regularization: {e}")
    evo = _dataclass_from(EvolveSettings, r.get("evolve", lambda v: True, "", {}), "$.evolve", errors, {
        "t_end": _NONNEG, "dt": _POS, "scheme": (lambda v: v in ("RK4", "RK45"), '"RK4" or "RK45"'),
        "resample_every": _NONNEGINT, "cfl": _POS, "rtol": _POS, "monitor_every": _POSINT,
        "F_max": _POS, "delta_min": _POS, "h3_max": _POS, "min_seg_frac": _POS,
    })
    out = _dataclass_from(OutputConfig, r.get("output", lambda v: True, "", {}), "$.output", errors, {
        "dir": (lambda v: isinstance(v, str) and v, "a non-empty string"), "cadence": _POS,
        "emit_svg": (lambda v: isinstance(v, bool), "a boolean"),
    })
    study = _dataclass_from(StudySettings, r.get("study", lambda v: True, "", {}), "$.study", errors, {
        "params": (lambda v: isinstance(v, list) and all(_is_num(x) and x > 0 for x in v), "a list of positive numbers"),
        "epsilon_c0": _POS,
    })
    trace = _dataclass_from(TraceSettings, r.get("trace", lambda v: True, "", {}), "$.trace", errors, {
        "seeds": (lambda v: isinstance(v, list) and all(_point(x) for x in v), "a list of [x, y] points"),
        "substeps": _POSINT, "jacobian": (lambda v: isinstance(v, bool), "a boolean"),
    })
    trace = TraceSettings(tuple(tuple(map(float, s)) for s in trace.seeds), trace.substeps, trace.jacobian)
    probes = r.get("probes", lambda v: isinstance(v, list) and all(_point(x) for x in v), "a list of [x, y] points", [])
    seed = r.get("rng_seed", _is_int, "an integer", 0)
    r.finish()
    if errors:
        raise ConfigError(errors)
    return RunConfig(
        alpha=float(alpha), patches=tuple(patches), domain=domain, grid_size=M, regularization=reg,
        evolve=evo, output=out, study=StudySettings(tuple(float(p) for p in study.params), study.epsilon_c0),
        trace=trace, probes=tuple(tuple(map(float, p)) for p in probes), rng_seed=seed,
    )


def _patch_doc(p: PatchConfig) -> dict:
    if p.shape == "circle":
        shape = {"circle": {"center": list(p.center), "radius": p.radius}}
    elif p.shape == "ellipse":
        shape = {"ellipse": {"center": list(p.center), "a": p.a, "b": p.b, "angle": p.angle}}
    else:
        shape = {"samples_file": p.samples_file}
    return {"name": p.name, "theta": p.theta, "shape": shape}


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items() if v is not None}
    return obj


def serialize(cfg: RunConfig) -> str:
    """JSON text that parse_config maps back to ``cfg``."""
    doc = {
        "alpha": cfg.alpha, "domain": cfg.domain, "grid_size": cfg.grid_size,
        "patches": [_patch_doc(p) for p in cfg.patches],
        "regularization": _plain(asdict(cfg.regularization)),
        "evolve": _plain(asdict(cfg.evolve)),
        "output": _plain(asdict(cfg.output)),
        "study": _plain(asdict(cfg.study)),
        "trace": _plain(asdict(cfg.trace)),
        "probes": _plain(cfg.probes),
        "rng_seed": cfg.rng_seed,
    }
    return json.dumps(doc, indent=2)


# ---------------------------------------------------------------------------
# building library objects


def build_state(cfg: RunConfig, base: Path | None = None) -> tuple[ContourState, PatchFamily]:
    M = cfg.grid_size
    curves = []
    for p in cfg.patches:
        if p.shape == "circle":
            curves.append(circle(p.center, p.radius, M))
        elif p.shape == "ellipse":
            curves.append(ellipse(p.center, p.a, p.b, p.angle, M))
        else:
            path = Path(p.samples_file)
            if base is not None and not path.is_absolute():
                path = base / path
            z = np.loadtxt(path, delimiter=",", ndmin=2)
            if z.shape[0] != M:
                if M % z.shape[0]:
                    raise ValueError(f"{path}: {z.shape[0]} samples do not divide grid_size {M}")
                z = upsample(z, M // z.shape[0])
            curves.append(Curve(z))
    dom = Domain.parse(cfg.domain)
    return ContourState(tuple(curves), 0.0, dom), PatchFamily([p.theta for p in cfg.patches], dom)


def build_reg(cfg: RunConfig, refine_core: int | None = None):
    r = cfg.regularization
    refine = refine_core or r.refine
    if r.kind == "BetaKernel":
        return BetaKernel(r.beta, refine)
    if r.kind == "Mollified":
        return Mollified(r.epsilon, r.drift_const, r.ref_norm_M, r.c0, refine)
    return Plain(refine)


def build_evolve(cfg: RunConfig) -> EvolveConfig:
    e = cfg.evolve
    return EvolveConfig(
        t_end=e.t_end, dt=e.dt, scheme=e.scheme, cadence=cfg.output.cadence, resample_every=e.resample_every,
        thresholds=Thresholds(e.F_max, e.delta_min, e.h3_max, e.min_seg_frac),
        cfl=e.cfl, rtol=e.rtol, monitor_every=e.monitor_every,
    )


def build_kernel(cfg: RunConfig) -> KernelSpec:
    beta = cfg.regularization.beta if cfg.regularization.kind == "BetaKernel" else 0.0
    return KernelSpec(cfg.alpha, cfg.domain, beta)


# ---------------------------------------------------------------------------
# writers


def _fmt(v) -> str:
    return format(float(v), ".17g")


def diagnostics_header(N: int) -> list[str]:
    return (["t", "h3", "c2", "delta_inv", "F", "triple"] + [f"area_{k}" for k in range(1, N + 1)]
            + ["min_gap"] + [f"arclen_{k}" for k in range(1, N + 1)])


def diagnostics_csv(records, N: int) -> str:
    lines = [",".join(diagnostics_header(N))]
    for d in records:
        row = [d.t, d.h3, d.c2, d.delta_inv, d.F, d.triple, *d.areas, d.min_gap, *d.arclens]
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SvgStyle:
    viewbox: tuple = (-2.0, -2.0, 4.0, 4.0)     # (x, y, width, height) in model coordinates
    positive_fill: str = "#c0392b"
    negative_fill: str = "#2e86c1"
    opacity: float = 0.6
    stroke: str = "#222222"
    stroke_width: float = 0.01
    size_px: int = 600


def trajectory_viewbox(trajectory, pad: float = 0.1) -> tuple:
    pts = np.concatenate([z for s in trajectory for z in s.arrays()])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    if trajectory[0].domain == Domain.HalfPlane:
        lo[1] = min(lo[1], 0.0)
    span = hi - lo
    m = pad * max(span.max(), 1e-12)
    return (float(lo[0] - m), float(lo[1] - m), float(span[0] + 2 * m), float(span[1] + 2 * m))


def emit_svg(snapshot: ContourState, thetas, style: SvgStyle = SvgStyle()) -> str:
    """One filled path per patch (in patch order), optional axis line; y is flipped for display."""
    x0, y0, w, h = style.viewbox
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.size_px}" '
           f'height="{int(round(style.size_px * h / w))}" viewBox="{x0:.6g} {-(y0 + h):.6g} {w:.6g} {h:.6g}">']
    if snapshot.domain == Domain.HalfPlane:
        out.append(f'<line class="axis" x1="{x0:.6g}" y1="0" x2="{x0 + w:.6g}" y2="0" '
                   f'stroke="#555555" stroke-width="{style.stroke_width:.6g}" stroke-dasharray="0.05,0.05"/>')
    for k, (z, th) in enumerate(zip(snapshot.arrays(), thetas)):
        fill = style.positive_fill if th > 0 else style.negative_fill
        d = "M " + " L ".join(f"{x:.6f},{-y:.6f}" for x, y in z) + " Z"
        out.append(f'<path id="patch{k + 1}" d="{d}" fill="{fill}" fill-opacity="{style.opacity}" '
                   f'stroke="{style.stroke}" stroke-width="{style.stroke_width:.6g}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: Path, refine_core: int | None = None, oracle: bool = False,
                 base: Path | None = None) -> int:
    state, fam = build_state(cfg, base)
    res = run(state, fam, cfg.alpha, build_reg(cfg, refine_core), build_evolve(cfg))
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnostics.csv").write_text(diagnostics_csv(res.diagnostics, state.N))
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    for i, s in enumerate(res.trajectory):
        save_snapshot(s, snaps / f"snapshot_{i:05d}.json")
    if cfg.output.emit_svg:
        style = SvgStyle(viewbox=trajectory_viewbox(res.trajectory))
        for i, s in enumerate(res.trajectory):
            (snaps / f"frame_{i:05d}.svg").write_text(emit_svg(s, fam.strengths, style))
    if cfg.probes:
        kern = build_kernel(cfg)
        P = np.array(cfg.probes, dtype=float)
        lines = ["t,x,y,u1,u2"]
        for s in res.trajectory:
            U = velocity_at(P, s, fam, kern, oracle=oracle)
            lines += [",".join(_fmt(v) for v in (s.time, p[0], p[1], u[0], u[1])) for p, u in zip(P, U)]
        (out / "probes.csv").write_text("\n".join(lines) + "\n")
    summary = {"command": "simulate", "steps": res.steps, "t_final": res.trajectory[-1].time,
               "verdict": {"kind": res.verdict.kind.value, "time": res.verdict.time, "detail": res.verdict.detail},
               "snapshots": len(res.trajectory)}
    _write_json(out / "summary.json", summary)
    return EXIT_TRIPPED if res.verdict.tripped else EXIT_OK


_STUDY = {"beta": "BetaSweep", "epsilon": "EpsilonSweep", "grid": "GridRefine", "hausdorff": "SplitStepHausdorff"}


def cmd_converge(cfg: RunConfig, kind: str, out: Path, refine_core: int | None = None,
                 base: Path | None = None) -> int:
    if kind not in _STUDY:
        raise ValueError(f"unknown study {kind!r}")
    state, fam = build_state(cfg, base)
    evo = build_evolve(cfg)
    sc = metrics.StudyConfig(state, fam, cfg.alpha, evo, cfg.study.params, epsilon_c0=cfg.study.epsilon_c0,
                             drift_const=cfg.regularization.drift_const, ref_norm_M=cfg.regularization.ref_norm_M,
                             refine_core=refine_core or cfg.regularization.refine)
    table = metrics.convergence_study(_STUDY[kind], sc)
    out.mkdir(parents=True, exist_ok=True)
    (out / "convergence.csv").write_text(table.to_csv())
    (out / "convergence.json").write_text(table.to_json() + "\n")
    _write_json(out / "summary.json", {"command": "converge", "kind": table.kind, "slope": table.slope,
                                       "target": table.target, "points": len(table.params),
                                       "excluded": [[p, r] for p, r in table.excluded]})
    return EXIT_OK


def cmd_bench(seed: int, corpus_size: int, out: Path, grid_size: int = 256) -> int:
    entries = run_bench(seed, corpus_size, grid_size)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_report.json").write_text(bench_report_json(entries) + "\n")
    return EXIT_OK


def cmd_trace(cfg: RunConfig, seeds, out: Path, oracle: bool = False, base: Path | None = None) -> int:
    if not seeds:
        raise ValueError("no tracer seeds given")
    state, fam = build_state(cfg, base)
    res = run(state, fam, cfg.alpha, build_reg(cfg), build_evolve(cfg))
    kern = build_kernel(cfg)
    paths = advect_tracers(seeds, res.trajectory, fam, kern, cfg.trace.substeps, cfg.trace.jacobian,
                           oracle=oracle)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["seed,t,x,y,dist,jacobian"]
    for i, p in enumerate(paths):
        for j, t in enumerate(p.times):
            jac = p.jacobian_estimate[j] if p.jacobian_estimate is not None else math.nan
            lines.append(",".join([str(i)] + [_fmt(v) for v in (t, *p.positions[j], p.dist_to_boundary[j], jac)]))
    (out / "tracers.csv").write_text("\n".join(lines) + "\n")
    B = fit_distance_envelope([p for p in paths if not p.crossed])
    _write_json(out / "summary.json", {
        "command": "trace", "tracers": len(paths), "crossed": [i for i, p in enumerate(paths) if p.crossed],
        "envelope_B": B, "verdict": {"kind": res.verdict.kind.value, "time": res.verdict.time}})
    return EXIT_TRIPPED if res.verdict.tripped else EXIT_OK


def _parse_seeds(text: str):
    pts = []
    for item in text.split(";"):
        if item.strip():
            x, y = (float(v) for v in item.split(","))
            pts.append((x, y))
    return pts


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sqgpatch", description="Patch dynamics for the modified SQG family.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (default: output.dir of the config)")

    p = sub.add_parser("simulate", help="evolve a configuration and write diagnostics")
    common(p)
    p.add_argument("--oracle", action="store_true", help="probe velocities with the area-quadrature oracle")
    p.add_argument("--refine-core", type=int, default=None, help="source refinement factor of the contour RHS")
    p = sub.add_parser("converge", help="run a convergence study")
    p.add_argument("kind", choices=sorted(_STUDY))
    common(p)
    p.add_argument("--refine-core", type=int, default=None)
    p = sub.add_parser("bench", help="run the inequality bench over a random corpus")
    common(p, config=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus-size", type=int, default=100)
    p.add_argument("--grid-size", type=int, default=256)
    p = sub.add_parser("trace", help="advect tracers through a simulated trajectory")
    common(p)
    p.add_argument("--seeds", default=None, help='tracer seeds "x,y;x,y" (default: trace.seeds of the config)')
    p.add_argument("--oracle", action="store_true", help="advect with the area-quadrature oracle velocity")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bench":
            return cmd_bench(args.seed, args.corpus_size, Path(args.out or "out"), args.grid_size)
        cpath = Path(args.config)
        cfg = parse_config(cpath.read_text(encoding="utf-8"))
        out = Path(args.out or cfg.output.dir)
        base = cpath.parent
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.refine_core, args.oracle, base)
        if args.command == "converge":
            return cmd_converge(cfg, args.kind, out, args.refine_core, base)
        seeds = _parse_seeds(args.seeds) if args.seeds else list(cfg.trace.seeds)
        return cmd_trace(cfg, seeds, out, args.oracle, base)
    except ConfigError as e:
        for msg in e.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, RuntimeError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
