"""Error exponents for mismatched DMCs, computed from dual programs.

Covers random-coding exponents for the iid and constant-composition
ensembles, the constant-composition expurgated exponent, and the exponent
of the distance-constrained recursive codebook construction, plus
exponent-vs-rate curve sampling.  Every exponent here is evaluated through
a concave supremum over tilt parameters; the matching primal minimizations
are implemented only in the oracle module as small-scale certificates.

Rates and exponents are in nats throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ProblemError, log_with_support
from .optim import StallError, ascend_concave, maximize_concave_1d
from .rates import _coerce, _reduce_support

NEG_INF = -math.inf
RHO_CAP = float(2 ** 20)
RATE_COND_SLACK = 1e-6
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class RgvSpec:
    """Additive codeword distance and threshold for the recursive
    (distance-avoiding) constant-composition construction.

    ``d[x, xbar]`` need not be symmetric; the achievability direction covers
    non-symmetric distances.
    """
    d: np.ndarray
    delta: float

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        if self.d.ndim != 2 or self.d.shape[0] != self.d.shape[1]:
            raise ProblemError("distance must be a square matrix over the input alphabet")
        if not np.all(np.isfinite(self.d)):
            raise ProblemError("distance entries must be finite")
        self.delta = float(self.delta)


@dataclass
class ExponentCurve:
    """Sampled exponent-vs-rate curve for one coding ensemble."""
    samples: list
    ensemble: str

    def __post_init__(self):
        if self.ensemble not in ("iid", "cc", "ex_cc", "rgv"):
            raise ProblemError(f"unknown ensemble tag {self.ensemble!r}")
        self.samples = [(float(r), max(0.0, float(e))) for r, e in self.samples]

    def rows(self):
        """(rate, exponent) pairs ready for delimited output."""
        return list(self.samples)

    def __iter__(self):
        return iter(self.samples)


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(a - safe).sum(axis=axis)) + np.squeeze(safe, axis=axis)
    return np.where(np.isfinite(np.squeeze(m, axis=axis)), out,
                    np.squeeze(m, axis=axis))


def _softmax(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    e = np.exp(a - np.where(np.isfinite(m), m, 0.0))
    tot = e.sum(axis=axis, keepdims=True)
    return e / np.where(tot > 0, tot, 1.0)


def _slog(logq: np.ndarray, mask: np.ndarray, s: float) -> np.ndarray:
    """s * log q with q^s -> 1{q > 0} as s -> 0 (zero cells stay excluded)."""
    return np.where(mask, s * np.where(mask, logq, 0.0), NEG_INF)


def _prepare(q_in, w, m):
    q, wmat, qmat = _coerce(q_in, w, m)
    q, wmat, qmat, _ = _reduce_support(q, wmat, qmat)
    dead_pair = (wmat > 0) & (qmat == 0)
    return q, wmat, qmat, bool(dead_pair.any())


def _golden_max(g, lo: float, hi: float, tol: float = 1e-6):
    """Ternary/golden maximization of a unimodal function on [lo, hi]."""
    a, b = float(lo), float(hi)
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = g(x1), g(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = g(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = g(x1)
    xm = 0.5 * (a + b)
    cands = [(g(lo), lo), (g(hi), hi), (g(xm), xm), (f1, x1), (f2, x2)]
    best = max(cands, key=lambda t: t[0])
    return best[1], best[0]


def _ascend(f, grad, z0, project, tol=1e-9):
    try:
        z, val, _ = ascend_concave(f, grad, z0, project, tol=tol)
    except StallError as err:
        z, val = err.x, err.value
    return z, val


# ---------------------------------------------------------------------------
# iid random-coding exponent


def _e0_iid_core(q, wmat, qmat, rho: float, tol: float = 1e-9):
    logq, mask = log_with_support(qmat)
    log_q_in = np.log(q)
    logw = np.where(wmat > 0, np.log(np.where(wmat > 0, wmat, 1.0)), NEG_INF)
    lq_safe = np.where(mask, logq, 0.0)

    def f(s):
        num = log_q_in[:, None] + _slog(logq, mask, s)
        col = _lse(num, axis=0)
        expo = log_q_in[:, None] + logw + rho * (col[None, :] - s * lq_safe)
        expo = np.where(wmat > 0, expo, NEG_INF)
        return -float(_lse(expo.reshape(-1), axis=0))

    s_star, val, rep = maximize_concave_1d(f, 0.0, tol=tol)
    return max(val, 0.0), s_star, rep.boundary


def e0_iid(q_in, w, m, rho: float, tol: float = 1e-9) -> float:
    """Gallager-style exponent function of the iid ensemble at slope rho."""
    if not 0.0 <= rho <= 1.0:
        raise ProblemError(f"rho={rho} outside [0, 1]")
    q, wmat, qmat, dead = _prepare(q_in, w, m)
    if rho == 0.0 or dead:
        return 0.0
    val, _, _ = _e0_iid_core(q, wmat, qmat, rho, tol)
    return val


def er_iid(q_in, w, m, rate: float, rho_tol: float = 1e-6) -> float:
    """iid random-coding exponent at a rate (nats)."""
    if rate < 0:
        raise ProblemError(f"rate={rate} must be nonnegative")
    q, wmat, qmat, dead = _prepare(q_in, w, m)
    if dead:
        return 0.0

    def g(rho):
        if rho <= 0:
            return 0.0
        val, _, _ = _e0_iid_core(q, wmat, qmat, rho)
        return val - rho * rate

    _, best = _golden_max(g, 0.0, 1.0, tol=rho_tol)
    return max(best, 0.0)


# ---------------------------------------------------------------------------
# constant-composition random-coding exponent


def _e0_cc_opt(q, wmat, qmat, rho: float, z0: Optional[np.ndarray] = None,
               tol: float = 1e-9):
    """sup over (s, a) of the per-input-averaged exponent function.

    Returns (value, argmax vector [s, a...]).
    """
    nx = len(q)
    logq, mask = log_with_support(qmat)
    log_q_in = np.log(q)
    logw = np.where(wmat > 0, np.log(np.where(wmat > 0, wmat, 1.0)), NEG_INF)
    lq_safe = np.where(mask, logq, 0.0)
    wsup = wmat > 0

    def parts(z):
        s, a = z[0], z[1:]
        b = log_q_in[:, None] + _slog(logq, mask, s) + a[:, None]
        col = _lse(b, axis=0)
        u = col[None, :] - s * lq_safe - a[:, None]
        expo = np.where(wsup, logw + rho * u, NEG_INF)
        per_x = _lse(expo, axis=1)
        return b, expo, per_x

    def f(z):
        _, _, per_x = parts(z)
        return -float(np.dot(q, per_x))

    def grad(z):
        b, expo, _ = parts(z)
        sigma = _softmax(b, axis=0)
        tau = _softmax(expo, axis=1)
        m_y = q @ tau
        ga = -rho * ((sigma * m_y[None, :]).sum(axis=1) - q)
        c_y = np.where(sigma > 0, sigma * lq_safe, 0.0).sum(axis=0)
        own = float(np.sum(q[:, None] * tau * lq_safe))
        gs = -rho * (float(m_y @ c_y) - own)
        return np.concatenate(([gs], ga))

    def project(z):
        out = z.copy()
        out[0] = max(out[0], 0.0)
        out[1:] -= float(np.dot(q, out[1:]))
        return out

    if z0 is None:
        z0 = np.concatenate(([1.0], np.zeros(nx)))
    z, val = _ascend(f, grad, project(np.asarray(z0, dtype=float)), project, tol=tol)
    return max(val, 0.0), z


def e0_cc(q_in, w, m, rho: float, tol: float = 1e-9) -> float:
    """Exponent function of the constant-composition ensemble at slope rho."""
    if not 0.0 <= rho <= 1.0:
        raise ProblemError(f"rho={rho} outside [0, 1]")
    q, wmat, qmat, dead = _prepare(q_in, w, m)
    if rho == 0.0 or dead:
        return 0.0
    val, _ = _e0_cc_opt(q, wmat, qmat, rho, tol=tol)
    return val


def er_cc(q_in, w, m, rate: float, rho_tol: float = 1e-6) -> float:
    """Constant-composition random-coding exponent at a rate (nats)."""
    if rate < 0:
        raise ProblemError(f"rate={rate} must be nonnegative")
    q, wmat, qmat, dead = _prepare(q_in, w, m)
    if dead:
        return 0.0
    warm = {"z": None}

    def g(rho):
        if rho <= 0:
            return 0.0
        val, z = _e0_cc_opt(q, wmat, qmat, rho, z0=warm["z"])
        warm["z"] = z
        return val - rho * rate

    _, best = _golden_max(g, 0.0, 1.0, tol=rho_tol)
    return max(best, 0.0)


# ---------------------------------------------------------------------------
# expurgated exponents


def _ex_cc_opt(q, wmat, qmat, rho: float, z0: Optional[np.ndarray] = None,
               tol: float = 1e-9):
    """sup over (s, a) of the pairwise expurgated exponent function."""
    nx = len(q)
    logq, mask = log_with_support(qmat)
    log_q_in = np.log(q)
    logw = np.where(wmat > 0, np.log(np.where(wmat > 0, wmat, 1.0)), NEG_INF)
    lq_safe = np.where(mask, logq, 0.0)
    wsup = wmat > 0
    # D[x, xbar, y] = log q(xbar, y) - log q(x, y) on the channel support
    dd = np.where(mask, logq, NEG_INF)[None, :, :] - lq_safe[:, None, :]
    dd_live = np.isfinite(dd)
    dd_fin = np.where(dd_live, dd, 0.0)

    def parts(z):
        s, a = z[0], z[1:]
        srat = np.where(dd_live, s * dd_fin, NEG_INF)
        t = np.where(wsup[:, None, :], logw[:, None, :] + srat, NEG_INF)
        g_pair = _lse(t, axis=2)
        h = log_q_in[None, :] + (a[None, :] - a[:, None] + g_pair) / rho
        return t, g_pair, h

    def f(z):
        _, _, h = parts(z)
        return -rho * float(np.dot(q, _lse(h, axis=1)))

    def grad(z):
        t, _, h = parts(z)
        sigma = _softmax(h, axis=1)
        wy = _softmax(t, axis=2)
        dmean = (wy * dd_fin).sum(axis=2)
        gs = -float(np.sum(q[:, None] * sigma * dmean))
        ga = -(q @ sigma) + q
        return np.concatenate(([gs], ga))

    def project(z):
        out = z.copy()
        out[0] = max(out[0], 0.0)
        out[1:] -= float(np.dot(q, out[1:]))
        return out

    if z0 is None:
        z0 = np.concatenate(([1.0], np.zeros(nx)))
    z, val = _ascend(f, grad, project(np.asarray(z0, dtype=float)), project, tol=tol)
    return max(val, 0.0), z


def ex_cc(q_in, w, m, rho: float, tol: float = 1e-9) -> float:
    """Expurgated exponent function of the constant-composition ensemble."""
    if rho < 1.0:
        raise ProblemError(f"rho={rho} must be >= 1")
    q, wmat, qmat, dead = _prepare(q_in, w, m)
    if dead:
        return 0.0
    val, _ = _ex_cc_opt(q, wmat, qmat, rho, tol=tol)
    return val


def eex_cc(q_in, w, m, rate: float, rho_tol: float = 1e-7) -> float:
    """Constant-composition expurgated exponent at a rate (nats).

    The slope search is unbounded above; it is capped at 2^20, which is
    reached only for rate exactly zero.
    """
    if rate < 0:
        raise ProblemError(f"rate={rate} must be nonnegative")
    q, wmat, qmat, dead = _prepare(q_in, w, m)
    if dead:
        return 0.0
    warm = {"z": None}

    def g(rho):
        val, z = _ex_cc_opt(q, wmat, qmat, rho, z0=warm["z"])
        warm["z"] = z
        return val - rho * rate

    _, best, _ = maximize_concave_1d(g, 1.0, tol=rho_tol, cap=RHO_CAP)
    return max(best, 0.0)


def _ex_iid_core(q, wmat, qmat, rho: float, tol: float = 1e-9):
    logq, mask = log_with_support(qmat)
    log_q_in = np.log(q)
    logw = np.where(wmat > 0, np.log(np.where(wmat > 0, wmat, 1.0)), NEG_INF)
    lq_safe = np.where(mask, logq, 0.0)
    wsup = wmat > 0
    dd = np.where(mask, logq, NEG_INF)[None, :, :] - lq_safe[:, None, :]
    dd_live = np.isfinite(dd)
    dd_fin = np.where(dd_live, dd, 0.0)

    def f(s):
        srat = np.where(dd_live, s * dd_fin, NEG_INF)
        t = np.where(wsup[:, None, :], logw[:, None, :] + srat, NEG_INF)
        g_pair = _lse(t, axis=2)
        h = log_q_in[:, None] + log_q_in[None, :] + g_pair / rho
        return -rho * float(_lse(h.reshape(-1), axis=0))

    _, val, _ = maximize_concave_1d(f, 0.0, tol=tol)
    return max(val, 0.0)


def eex_iid(q_in, w, m, rate: float, rho_tol: float = 1e-7) -> float:
    """iid-ensemble expurgated exponent at a rate (nats).

    Single-log variant of the pairwise exponent; at rate zero it meets the
    constant-composition value because the input-shift terms cancel in
    pairs as the slope grows.
    """
    if rate < 0:
        raise ProblemError(f"rate={rate} must be nonnegative")
    q, wmat, qmat, dead = _prepare(q_in, w, m)
    if dead:
        return 0.0

    def g(rho):
        return _ex_iid_core(q, wmat, qmat, rho) - rho * rate

    _, best, _ = maximize_concave_1d(g, 1.0, tol=rho_tol, cap=RHO_CAP)
    return max(best, 0.0)


# ---------------------------------------------------------------------------
# distance-constrained recursive construction


def _e0_rgv_opt(q, wmat, qmat, dmat, delta: float, rho: float,
                z0: Optional[np.ndarray] = None, tol: float = 1e-9):
    """sup over (s, r, a) of the distance-penalized exponent function."""
    nx = len(q)
    logq, mask = log_with_support(qmat)
    log_q_in = np.log(q)
    logw = np.where(wmat > 0, np.log(np.where(wmat > 0, wmat, 1.0)), NEG_INF)
    lq_safe = np.where(mask, logq, 0.0)
    wsup = wmat > 0
    dgap = dmat - delta

    def parts(z):
        s, r, a = z[0], z[1], z[2:]
        # b[x, xbar, y]: numerator terms of the per-(x, y) tilt average
        b = (log_q_in[None, :, None] + _slog(logq, mask, s)[None, :, :] +
             a[None, :, None] + r * dgap[:, :, None])
        col = _lse(b, axis=1)
        u = col - s * lq_safe - a[:, None]
        expo = np.where(wsup, logw + rho * u, NEG_INF)
        return b, expo

    def f(z):
        _, expo = parts(z)
        return -float(np.dot(q, _lse(expo, axis=1)))

    def grad(z):
        b, expo = parts(z)
        sigma = _softmax(b, axis=1)
        tau = _softmax(expo, axis=1)
        mean_lq = (sigma * lq_safe[None, :, :]).sum(axis=1)
        gs = -rho * float(np.sum(q[:, None] * tau * (mean_lq - lq_safe)))
        gr = -rho * float(np.sum(q[:, None] * tau *
                                 (sigma * dgap[:, :, None]).sum(axis=1)))
        wt = (q[:, None] * tau)[:, None, :]
        ga = -rho * ((wt * sigma).sum(axis=(0, 2)) - q)
        return np.concatenate(([gs, gr], ga))

    def project(z):
        out = z.copy()
        out[0] = max(out[0], 0.0)
        out[1] = max(out[1], 0.0)
        out[2:] -= float(np.dot(q, out[2:]))
        return out

    if z0 is None:
        z0 = np.concatenate(([1.0, 0.0], np.zeros(nx)))
    z, val = _ascend(f, grad, project(np.asarray(z0, dtype=float)), project, tol=tol)
    return max(val, 0.0), z


def rgv_rate_bound(q_in, spec: RgvSpec) -> float:
    """Largest rate admissible for the recursive construction (nats).

    Dual of the smallest mutual information among couplings of the input
    law with itself whose mean distance stays below the threshold; +inf
    when no such coupling exists.
    """
    q = np.asarray(q_in.p if hasattr(q_in, "p") else q_in, dtype=float)
    keep = q > 0
    q = q[keep]
    dmat = spec.d[np.ix_(keep, keep)]
    dgap = dmat - spec.delta
    floor = max(float(np.dot(q, dgap.min(axis=1))),
                float(np.dot(q, dgap.min(axis=0))))
    if floor > 0:
        return math.inf
    log_q_in = np.log(q)
    nx = len(q)

    def parts(z):
        r, a = z[0], z[1:]
        phi = float(np.dot(q, a))
        h = log_q_in[None, :] + a[None, :] - phi - r * dgap
        return h

    def f(z):
        return -float(np.dot(q, _lse(parts(z), axis=1)))

    def grad(z):
        sigma = _softmax(parts(z), axis=1)
        gr = float(np.sum(q[:, None] * sigma * dgap))
        ga = -(q @ sigma) + q
        return np.concatenate(([gr], ga))

    def project(z):
        out = z.copy()
        out[0] = max(out[0], 0.0)
        return out

    z0 = np.concatenate(([1.0], np.zeros(nx)))
    _, val = _ascend(f, grad, z0, project, tol=1e-10)
    # any feasible coupling caps the bound at log |support|; far beyond that
    # the constraint set must be empty
    if val > math.log(nx) + 1e-6:
        return math.inf
    return max(val, 0.0)


def rgv_exponent(q_in, w, m, spec: RgvSpec, rate: float,
                 rho_tol: float = 1e-6):
    """Exponent of the distance-avoiding construction and its rate check.

    Returns (exponent nats, rate_condition_ok).
    """
    if rate < 0:
        raise ProblemError(f"rate={rate} must be nonnegative")
    q_raw = np.asarray(q_in.p if hasattr(q_in, "p") else q_in, dtype=float)
    if spec.d.shape[0] != len(q_raw):
        raise ProblemError("distance matrix and input alphabet sizes disagree")
    q, wmat, qmat, dead = _prepare(q_in, w, m)
    keep = q_raw > 0
    dmat = spec.d[np.ix_(keep, keep)]
    ok = rate <= rgv_rate_bound(q_raw, spec) - RATE_COND_SLACK
    if dead:
        return 0.0, ok
    warm = {"z": None}

    def g(rho):
        if rho <= 0:
            return 0.0
        val, z = _e0_rgv_opt(q, wmat, qmat, dmat, spec.delta, rho, z0=warm["z"])
        warm["z"] = z
        return val - rho * rate

    _, best = _golden_max(g, 0.0, 1.0, tol=rho_tol)
    return max(best, 0.0), ok


def metric_distance(w, m, s: float) -> np.ndarray:
    """Additive distance induced by the channel and an s-tilted metric ratio.

    Entry (x, xbar) is minus the log-mean of (q(xbar, Y)/q(x, Y))^s under
    W(.|x); with a matched metric and s = 1/2 this is the Bhattacharyya
    distance.
    """
    wmat = np.asarray(w.w if hasattr(w, "w") else w, dtype=float)
    qmat = np.asarray(m.q if hasattr(m, "q") else m, dtype=float)
    logq, mask = log_with_support(qmat)
    lq_safe = np.where(mask, logq, 0.0)
    logw = np.where(wmat > 0, np.log(np.where(wmat > 0, wmat, 1.0)), NEG_INF)
    dd = np.where(mask, logq, NEG_INF)[None, :, :] - lq_safe[:, None, :]
    srat = np.where(np.isfinite(dd), s * np.where(np.isfinite(dd), dd, 0.0), NEG_INF)
    t = np.where((wmat > 0)[:, None, :], logw[:, None, :] + srat, NEG_INF)
    return -_lse(t, axis=2)


# ---------------------------------------------------------------------------
# curves


def exponent_curve(q_in, w, m, ensemble: str, r_grid: Sequence[float],
                   rgv_spec: Optional[RgvSpec] = None) -> ExponentCurve:
    """Sample an exponent-vs-rate curve on an ascending rate grid (nats)."""
    grid = [float(r) for r in r_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ProblemError("rate grid must be sorted ascending")
    if ensemble == "iid":
        f = lambda r: er_iid(q_in, w, m, r)
    elif ensemble == "cc":
        f = lambda r: er_cc(q_in, w, m, r)
    elif ensemble == "ex_cc":
        f = lambda r: eex_cc(q_in, w, m, r)
    elif ensemble == "rgv":
        if rgv_spec is None:
            raise ProblemError("rgv curves need an RgvSpec")
        f = lambda r: rgv_exponent(q_in, w, m, rgv_spec, r)[0]
    else:
        raise ProblemError(f"unknown ensemble tag {ensemble!r}")
    return ExponentCurve([(r, f(r)) for r in grid], ensemble)
