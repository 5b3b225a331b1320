"""Right-hand side of the contour equation and its regularizations.

For curve k at grid point xi_j the plain field is

    (1/(2 alpha)) sum_{i, m} theta_i h sum_p (z_k'(xi_j) - y'(xi_p)) / |z_k(xi_j) - y(xi_p)|^(2 alpha)

with ``y = z_i`` (m = 1) and, on the half-plane, ``y = reflect(z_i)`` (m = 2).
The self term ``p = j`` of the (k, k, 1) block is a removable singularity and
is set to zero.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from . import kernels
from .curvekit import (
    TWO_PI,
    ContourState,
    Curve,
    Domain,
    GeometryError,
    PatchFamily,
    c2_norm,
    delta_functional,
    f_functional,
    spectral_derivative,
    upsample,
)


class CollisionError(GeometryError):
    """Two boundary samples are closer than 1e-14."""


class AprioriBoundViolation(AssertionError):
    pass


_COLLISION_R2 = 1e-28

# The a priori bound check is opt-in; test builds switch it on.
CHECK_APRIORI = os.environ.get("SQGPATCH_CHECK_APRIORI", "") not in ("", "0")


@dataclass
class AprioriLog:
    """Running record of ||RHS||_inf / bound over every checked evaluation."""

    evaluations: int = 0
    max_ratio: float = 0.0
    violations: int = 0

    def reset(self):
        self.evaluations, self.max_ratio, self.violations = 0, 0.0, 0


APRIORI_LOG = AprioriLog()


@dataclass(frozen=True)
class Plain:
    refine: int = 1


@dataclass(frozen=True)
class BetaKernel:
    beta: float
    refine: int = 1

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class Mollified:
    epsilon: float
    drift_const: float = 10.0
    ref_norm_M: float = 2.0
    c0: float = 1.0
    refine: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.drift_const < 0:
            raise ValueError("drift_const must be nonnegative")
        if self.ref_norm_M < 2:
            raise ValueError("ref_norm_M must be at least 2")
        guard = self.c0 * (4.0 * self.ref_norm_M) ** -2
        if not self.epsilon < guard:
            raise ValueError(f"epsilon {self.epsilon} violates the guard epsilon < c0 (4 M)^-2 = {guard:.6g}")


RegularizationSpec = Plain | BetaKernel | Mollified


@dataclass
class RhsField:
    values: list
    blocks: list = field(default_factory=list)

    def max_norm(self) -> float:
        return max((float(np.linalg.norm(v, axis=1).max()) for v in self.values), default=0.0)

    def as_array(self) -> np.ndarray:
        return np.stack(self.values)


def _assemble(curves, family: PatchFamily, alpha: float, beta: float, domain: Domain, refine: int = 1):
    if refine < 1 or refine & (refine - 1):
        raise ValueError("refine must be a power of two")
    M = curves[0].shape[0]
    h = TWO_PI / M
    derivs = [spectral_derivative(z, 1) for z in curves]
    sources = []
    for i, (z, dz) in enumerate(zip(curves, derivs)):
        zs, dzs = (upsample(z, refine), upsample(dz, refine)) if refine > 1 else (z, dz)
        sources.append((i, 1, zs, dzs))
        if domain == Domain.HalfPlane:
            rz, rdz = zs.copy(), dzs.copy()
            rz[:, 1] *= -1
            rdz[:, 1] *= -1
            sources.append((i, 2, rz, rdz))
    out, blocks = [], []
    for k, (zk, dzk) in enumerate(zip(curves, derivs)):
        acc = np.zeros((M, 2))
        for i, m, sz, sdz in sources:
            skip = refine if (i == k and m == 1) else 0
            s, mn = kernels.pair_sum(zk, dzk, sz, sdz, alpha, beta, h / refine, skip)
            if beta == 0.0 and mn < _COLLISION_R2:
                raise CollisionError(f"curves {k} and {i} (image {m}) touch at grid resolution")
            acc += (family.strengths[i] / (2.0 * alpha)) * s
            blocks.append((k, i, m))
        out.append(acc)
    return out, blocks


def apriori_rhs_bound(state: ContourState, family: PatchFamily, alpha: float, delta_refine: int = 4) -> float:
    """4 pi Theta / (alpha (1 - 2 alpha)) (1/delta + F)^(2 alpha) ||Z||_C2."""
    dinv = 1.0 / delta_functional(state, refine=delta_refine)
    F = f_functional(state)
    return 4.0 * np.pi * family.Theta / (alpha * (1.0 - 2.0 * alpha)) * (dinv + F) ** (2 * alpha) * c2_norm(state)


def _check(state, family, alpha, field_: RhsField):
    # the sample polygon is enough here: the bound has a wide margin and this runs on every evaluation
    bound = apriori_rhs_bound(state, family, alpha, delta_refine=1)
    ratio = field_.max_norm() / bound
    APRIORI_LOG.evaluations += 1
    APRIORI_LOG.max_ratio = max(APRIORI_LOG.max_ratio, ratio)
    if ratio > 1.0:
        APRIORI_LOG.violations += 1
        raise AprioriBoundViolation(f"||RHS||_inf exceeds the a priori bound by factor {ratio:.4g}")


def contour_rhs(state: ContourState, family: PatchFamily, alpha: float, refine_core: int = 1) -> RhsField:
    """Plain contour field.  ``refine_core > 1`` evaluates the source curves on a
    grid ``refine_core`` times finer (spectral upsampling), which shrinks the
    error of the dropped self-interaction point."""
    if state.N != family.N:
        raise ValueError("state and family sizes differ")
    vals, blocks = _assemble(state.arrays(), family, alpha, 0.0, state.domain, refine_core)
    f = RhsField(vals, blocks)
    if CHECK_APRIORI:
        _check(state, family, alpha, f)
    return f


def contour_rhs_beta(state: ContourState, family: PatchFamily, alpha: float, beta: float,
                     refine_core: int = 1) -> RhsField:
    if not beta > 0:
        raise ValueError("beta must be positive")
    vals, blocks = _assemble(state.arrays(), family, alpha, beta, state.domain, refine_core)
    f = RhsField(vals, blocks)
    if CHECK_APRIORI:
        _check(state, family, alpha, f)
    return f


# ---------------------------------------------------------------------------
# mollifier


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def _quad(**kw) -> float:
    # the bump is tiny near its support edge; roundoff notices are expected there
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(lambda x: float(_bump(x)), 0.0, 1.0, epsabs=1e-15, epsrel=1e-13,
                              limit=200, **kw)[0]


@lru_cache(maxsize=None)
def _bump_mass() -> float:
    return 2.0 * _quad()


@lru_cache(maxsize=64)
def mollifier_symbol(M: int, epsilon: float) -> np.ndarray:
    """Fourier multipliers of phi_eps for wavenumbers 0..M/2 (rfft layout)."""
    mass = _bump_mass()
    out = np.empty(M // 2 + 1)
    for k in range(M // 2 + 1):
        s = k * epsilon
        if s == 0:
            out[k] = 1.0
            continue
        # phi is even: phi_hat(s) = 2 int_0^1 phi(x) cos(s x) dx
        out[k] = 2.0 * _quad(weight="cos", wvar=s) / mass
    out.setflags(write=False)
    return out


def _mollify_array(z: np.ndarray, epsilon: float) -> np.ndarray:
    M = z.shape[0]
    sym = mollifier_symbol(M, float(epsilon))
    return np.fft.irfft(np.fft.rfft(z, axis=0) * sym[:, None], n=M, axis=0)


def mollify_curve(curve, epsilon: float):
    """Periodic convolution with phi_eps(x) = phi(x/eps)/eps."""
    if not 0 < epsilon < np.pi:
        raise ValueError("epsilon must lie in (0, pi)")
    if isinstance(curve, Curve):
        return Curve(_mollify_array(curve.samples, epsilon))
    return _mollify_array(np.asarray(curve, dtype=float), epsilon)


def drift_term(family: PatchFamily, domain: Domain, spec: Mollified, alpha: float) -> float:
    if Domain.parse(domain) != Domain.HalfPlane:
        return 0.0
    return spec.drift_const * family.Theta * spec.epsilon * spec.ref_norm_M ** (3.0 + 2.0 * alpha)


def contour_rhs_mollified(state: ContourState, family: PatchFamily, alpha: float, spec: Mollified) -> RhsField:
    eps = spec.epsilon
    smooth = [_mollify_array(z, eps) for z in state.arrays()]
    vals, blocks = _assemble(smooth, family, alpha, 0.0, state.domain, spec.refine)
    d = drift_term(family, state.domain, spec, alpha)
    out = []
    for v in vals:
        g = _mollify_array(v, eps)
        g[:, 1] += d
        out.append(g)
    return RhsField(out, blocks)


def rhs(state: ContourState, family: PatchFamily, alpha: float, reg: RegularizationSpec | None = None) -> RhsField:
    reg = reg or Plain()
    if isinstance(reg, Plain):
        return contour_rhs(state, family, alpha, reg.refine)
    if isinstance(reg, BetaKernel):
        return contour_rhs_beta(state, family, alpha, reg.beta, reg.refine)
    if isinstance(reg, Mollified):
        return contour_rhs_mollified(state, family, alpha, reg)
    raise TypeError(f"unknown regularization {reg!r}")
