"""Numerical bench for inequalities on nonnegative periodic H^3 functions."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .curvekit import TWO_PI, grid

_DERIV_ZERO = 1e-10


@dataclass(frozen=True)
class ScalarField:
    """Samples of a periodic function on the xi-grid.

    ``enforced_min`` (if given) is a lower bound the samples must respect.
    The spectrum must vanish at wavenumbers >= M/4 so that the spectral
    derivatives used by the checks are exact.
    """

    samples: np.ndarray
    enforced_min: float | None = None

    def __post_init__(self):
        f = np.array(self.samples, dtype=float).reshape(-1)
        M = f.size
        if M < 8 or M % 2:
            raise ValueError("grid size must be even and at least 8")
        c = np.fft.rfft(f)
        tail = np.abs(c[M // 4:]).max(initial=0.0)
        if tail > 1e-9 * max(np.abs(c).max(), 1e-300):
            raise ValueError("field is not band-limited below M/4")
        if self.enforced_min is not None:
            if not self.enforced_min > 0:
                raise ValueError("enforced_min must be positive")
            if f.min() < self.enforced_min:
                raise ValueError(f"min(f) = {f.min():.3g} is below enforced_min {self.enforced_min:.3g}")
        f.setflags(write=False)
        object.__setattr__(self, "samples", f)

    @classmethod
    def from_function(cls, fn, M: int, enforced_min: float | None = None) -> "ScalarField":
        return cls(fn(grid(M)), enforced_min)

    @property
    def M(self) -> int:
        return self.samples.size

    @property
    def h(self) -> float:
        return TWO_PI / self.M

    def derivative(self, order: int = 1) -> np.ndarray:
        M = self.M
        k = np.arange(M // 2 + 1, dtype=float)
        c = np.fft.rfft(self.samples) * (1j * k) ** order
        c[-1] = 0.0
        return np.fft.irfft(c, n=M)

    def scaled(self, lam: float) -> "ScalarField":
        em = None if self.enforced_min is None else self.enforced_min * lam
        return ScalarField(lam * self.samples, em)

    def refined(self, factor: int = 2) -> "ScalarField":
        M = self.M
        c = np.fft.rfft(self.samples)
        cf = np.zeros(M * factor // 2 + 1, dtype=complex)
        cf[: c.size] = c
        return ScalarField(np.fft.irfft(cf, n=M * factor) * factor, self.enforced_min)


def h3_norm(f: ScalarField) -> float:
    """sqrt(sup f^2 + int (f''')^2)."""
    d3 = f.derivative(3)
    return float(np.sqrt(np.max(f.samples ** 2) + np.sum(d3 * d3) * f.h))


def _holder_seminorm(g: np.ndarray, gamma: float) -> float:
    M = g.size
    h = TWO_PI / M
    best = 0.0
    for l in range(1, M // 2 + 1):
        # geodesic distance on the circle is l h for shifts up to M/2
        diff = np.abs(g - np.roll(g, l)).max()
        best = max(best, diff / (l * h) ** gamma)
    return best


def holder_c1gamma_norm(f: ScalarField, gamma: float) -> float:
    """sup|f| + sup|f'| + Holder seminorm of f' over all grid pairs."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    d1 = f.derivative(1)
    return float(np.abs(f.samples).max() + np.abs(d1).max() + _holder_seminorm(d1, gamma))


def check_derivative_bound(f: ScalarField, gamma: float) -> float:
    """max over the grid of |f'| / (2 ||f||_{C^{1,gamma}}^{1/(1+gamma)} f^{gamma/(1+gamma)}).

    Where f = 0 the ratio is 0 if f' vanishes there (to roundoff) and inf otherwise.
    """
    vals = f.samples
    if vals.min() < -1e-13 * max(1.0, np.abs(vals).max()):
        raise ValueError("field must be nonnegative")
    vals = np.maximum(vals, 0.0)
    d1 = np.abs(f.derivative(1))
    if d1.max() == 0.0:
        return 0.0
    norm = holder_c1gamma_norm(f, gamma)
    den = 2.0 * norm ** (1.0 / (1.0 + gamma)) * vals ** (gamma / (1.0 + gamma))
    zero_tol = _DERIV_ZERO * max(norm, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, d1 / den, np.where(d1 <= zero_tol, 0.0, np.inf))
    return float(r.max())


def _require_positive(f: ScalarField):
    if f.samples.min() <= 0:
        raise ValueError("field must be strictly positive")


def _check_beta(beta: float):
    if not 0 <= beta <= 1.0 / 6.0:
        raise ValueError("beta must lie in [0, 1/6]")


def check_bv_bound(f: ScalarField, beta: float) -> float:
    """int |f'| / f^(beta + 1/2) divided by 10 ||f||_{H^3}^(1/2 - beta)."""
    _check_beta(beta)
    _require_positive(f)
    lhs = float(np.sum(np.abs(f.derivative(1)) / f.samples ** (beta + 0.5)) * f.h)
    return lhs / (10.0 * h3_norm(f) ** (0.5 - beta))


def check_sobolev_ratios(f: ScalarField, n: int, beta: float) -> tuple[float, float]:
    """(int |f'|^n / f^(beta + n/2)) / ||f||^(n/2 - beta) and (int f''^2 / f^beta) / ||f||^(2 - beta)."""
    _check_beta(beta)
    _require_positive(f)
    if n < 1:
        raise ValueError("n must be at least 1")
    N3 = h3_norm(f)
    d1, d2 = f.derivative(1), f.derivative(2)
    l1 = float(np.sum(np.abs(d1) ** n / f.samples ** (beta + n / 2.0)) * f.h)
    l2 = float(np.sum(d2 * d2 / f.samples ** beta) * f.h)
    return l1 / N3 ** (n / 2.0 - beta), l2 / N3 ** (2.0 - beta)


# ---------------------------------------------------------------------------
# corpus


def random_field(seed, M: int = 256, modes: int | None = None, positive: bool = True) -> ScalarField:
    """g^2 + shift with g a random trigonometric polynomial of degree < M/8.

    The shift is a random fraction in [1e-3, 1e-1] of max g^2 (zero if
    ``positive`` is false), so some fields come close to touching zero.
    """
    rng = np.random.default_rng(seed)
    K = modes or max(2, M // 16)
    if K >= M // 8:
        raise ValueError("modes must stay below M/8")
    k = np.arange(1, K + 1)
    decay = 1.0 / k ** 2
    a = rng.normal(size=K) * decay
    b = rng.normal(size=K) * decay
    xi = grid(M)
    g = rng.normal() * 0.5 + (a[:, None] * np.cos(k[:, None] * xi) + b[:, None] * np.sin(k[:, None] * xi)).sum(0)
    f = g * g
    shift = 10.0 ** rng.uniform(-3, -1) * f.max() if positive else 0.0
    return ScalarField(f + shift)


@dataclass
class BenchEntry:
    check: str
    max_ratio: float
    argmax_seed: list
    grid_size: int
    fields: int


def run_bench(seed: int = 0, corpus_size: int = 100, M: int = 256, gamma: float = 1.0,
              beta: float = 1.0 / 6.0, n: int = 2) -> list[BenchEntry]:
    """Evaluate every check over a seeded corpus; field i uses seed (seed, i)."""
    rows = {"derivative_bound": [], "bv_bound": [], "sobolev_1": [], "sobolev_2": []}
    for i in range(corpus_size):
        fs = (seed, i)
        f = random_field(fs, M)
        rows["derivative_bound"].append((check_derivative_bound(f, gamma), fs))
        rows["bv_bound"].append((check_bv_bound(f, beta), fs))
        r1, r2 = check_sobolev_ratios(f, n, beta)
        rows["sobolev_1"].append((r1, fs))
        rows["sobolev_2"].append((r2, fs))
    out = []
    for name, vals in rows.items():
        r, fs = max(vals, key=lambda t: t[0])
        out.append(BenchEntry(name, r, list(fs), M, corpus_size))
    return out


def bench_report_json(entries: list[BenchEntry]) -> str:
    return json.dumps({e.check: {"max_ratio": e.max_ratio, "argmax_field_seed": e.argmax_seed,
                                 "grid_size": e.grid_size, "fields": e.fields} for e in entries}, indent=2)
