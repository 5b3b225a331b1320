"""Pure-NumPy versions of the O(targets x sources) kernel sums.

These define the reference semantics; ``_kernels_c`` must agree with them to
rounding.  Summation over sources is done per target row in index order.
"""
import numpy as np

_CHUNK = 1 << 21


def _rows(n_t, n_s):
    return max(1, _CHUNK // max(1, n_s))


def pair_sum(tz, tdz, sz, sdz, alpha, beta, weight, skip_stride):
    """out[j] = weight * sum_p (tdz[j] - sdz[p]) / (|tz[j]-sz[p]|^2 + beta^2)^alpha.

    With ``skip_stride > 0`` the source ``p = j * skip_stride`` is left out
    (the removable self-interaction point).  Returns ``(out, min_r2)`` where
    ``min_r2`` is the smallest squared distance over the summed pairs.
    """
    tz = np.ascontiguousarray(tz, dtype=float)
    sz = np.ascontiguousarray(sz, dtype=float)
    n_t, n_s = tz.shape[0], sz.shape[0]
    out = np.empty((n_t, 2))
    min_r2 = np.inf
    step = _rows(n_t, n_s)
    b2 = beta * beta
    for s in range(0, n_t, step):
        e = min(n_t, s + step)
        dx = tz[s:e, None, 0] - sz[None, :, 0]
        dy = tz[s:e, None, 1] - sz[None, :, 1]
        r2 = dx * dx + dy * dy
        if skip_stride > 0:
            rows = np.arange(e - s)
            cols = (np.arange(s, e) * skip_stride)
            r2[rows, cols] = np.inf
        if r2.size:
            min_r2 = min(min_r2, float(r2.min()))
        w = np.where(np.isinf(r2), 0.0, (r2 + b2) ** (-alpha)) if skip_stride > 0 else (r2 + b2) ** (-alpha)
        wsum = w.sum(axis=1)
        out[s:e, 0] = tdz[s:e, 0] * wsum - w @ sdz[:, 0]
        out[s:e, 1] = tdz[s:e, 1] * wsum - w @ sdz[:, 1]
    return out * weight, min_r2


def boundary_sum(x, sz, sdz, alpha, beta, weight):
    """out[i] = weight * sum_p sdz[p] / (|x[i]-sz[p]|^2 + beta^2)^alpha."""
    x = np.ascontiguousarray(x, dtype=float)
    n_t, n_s = x.shape[0], sz.shape[0]
    out = np.empty((n_t, 2))
    step = _rows(n_t, n_s)
    b2 = beta * beta
    for s in range(0, n_t, step):
        e = min(n_t, s + step)
        dx = x[s:e, None, 0] - sz[None, :, 0]
        dy = x[s:e, None, 1] - sz[None, :, 1]
        w = (dx * dx + dy * dy + b2) ** (-alpha)
        out[s:e] = w @ sdz
    return out * weight


def boundary_grad_sum(x, sz, sdz, alpha, beta, weight):
    """G[i, a, b] = weight * sum_p sdz[p, a] (x[i]-sz[p])_b / (|x[i]-sz[p]|^2 + beta^2)^(alpha+1)."""
    x = np.ascontiguousarray(x, dtype=float)
    n_t, n_s = x.shape[0], sz.shape[0]
    out = np.empty((n_t, 2, 2))
    step = _rows(n_t, n_s)
    b2 = beta * beta
    for s in range(0, n_t, step):
        e = min(n_t, s + step)
        dx = x[s:e, None, 0] - sz[None, :, 0]
        dy = x[s:e, None, 1] - sz[None, :, 1]
        w = (dx * dx + dy * dy + b2) ** (-alpha - 1.0)
        for a in range(2):
            out[s:e, a, 0] = (w * dx) @ sdz[:, a]
            out[s:e, a, 1] = (w * dy) @ sdz[:, a]
    return out * weight


def chord_arc_sup(z):
    """max over pairs (j, j - l), l = 1..M/2, of (l h) / |z_j - z_(j-l)|; inf on coincident samples."""
    z = np.asarray(z, dtype=float)
    M = z.shape[0]
    h = 2.0 * np.pi / M
    best = 0.0
    for l in range(1, M // 2 + 1):
        d2 = np.sum((z - np.roll(z, l, axis=0)) ** 2, axis=1)
        if np.any(d2 == 0.0):
            return np.inf
        best = max(best, float((l * h) ** 2 / d2.min()))
    return float(np.sqrt(best))
