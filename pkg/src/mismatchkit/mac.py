"""Achievable rates for the two-user mismatched multiple-access channel.

The region is cut out by three conditions.  Each per-sender bound is a
constant-composition rate for the channel from that sender to the pair
(other sender's symbol, output), so those reduce to the single-user solvers
by flattening the pair into one output alphabet.  The sum-rate condition
couples the two rates through mutual-information side constraints; it splits
into two one-constraint conditions, each evaluated here through a dual: a
family of concave inner problems indexed by a tilt rho in [0, 1], sampled on
a fixed grid and refined by golden section.  Rates are in nats throughout.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from . import optim, rates
from .core import (
    MacProblem,
    ProblemError,
    RateResult,
    kl_divergence,
    log_with_support,
)

RHO_GRID = np.linspace(0.0, 1.0, 33)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
NEG_INF = float("-inf")


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    """log-sum-exp that tolerates all-(-inf) slices."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def _softmax(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a - m)
    tot = e.sum(axis=axis, keepdims=True)
    return e / np.where(tot > 0, tot, 1.0)


def _flat_single(p: MacProblem, user: int):
    """Single-sender view: channel and metric from user's symbol to the
    flattened pair (other symbol, output)."""
    if user == 1:
        w = p.q2.p[None, :, None] * p.w3
        q3 = p.q3
        q_in = p.q1.p
    elif user == 2:
        w = (p.q1.p[:, None, None] * p.w3).transpose(1, 0, 2)
        q3 = p.q3.transpose(1, 0, 2)
        q_in = p.q2.p
    else:
        raise ProblemError(f"user must be 1 or 2, got {user!r}")
    n = q_in.shape[0]
    return q_in, w.reshape(n, -1), q3.reshape(n, -1)


def mac_single_bound(p: MacProblem, user: int) -> RateResult:
    """Largest rate for one sender alone, the other sender's codebook known.

    Computed as the constant-composition rate of the flattened single-user
    problem: primal KL projection and gradient-ascent dual, with the gap
    between them reported.  The primal certificate is returned as a joint
    distribution over (x1, x2, y).
    """
    q_in, wflat, qflat = _flat_single(p, user)
    res = rates.lm_primal(q_in, wflat, qflat)
    cert = res.certificate
    if isinstance(cert, dict) and "p_tilde" in cert:
        n1, n2, ny = p.shape
        n_lead = n1 if user == 1 else n2
        xs = q_in > 0
        ys = (q_in @ wflat) > 0
        full = np.zeros((n_lead, wflat.shape[1]))
        full[np.ix_(np.flatnonzero(xs), np.flatnonzero(ys))] = cert["p_tilde"]
        joint = full.reshape(n_lead, (n2 if user == 1 else n1), ny)
        if user == 2:
            joint = joint.transpose(1, 0, 2)
        cert = dict(cert, p_tilde=joint)
    return RateResult(res.value, form=res.form, certificate=cert,
                      gap=res.gap, report=res.report, zero_rate=res.zero_rate,
                      boundary=res.boundary)


# ---------------------------------------------------------------------------
# Sum-rate condition.


def _cache(p: MacProblem) -> dict:
    c = getattr(p, "_mac_cache", None)
    if c is None:
        c = {}
        object.__setattr__(p, "_mac_cache", c)
    return c


def _lead_view(p: MacProblem, lead: int):
    """Static arrays for one dual curve, lead sender's axis first.

    Returns (q_out, q_in, logq, mask, py, mbar) where q_out weights the outer
    average (lead sender), q_in the inner one.  When the true law puts mass
    on a zero-metric cell the mean constraint is vacuous; the metric is then
    replaced by the constant 1, which reproduces the marginal-only condition.
    """
    c = _cache(p)
    key = ("view", lead)
    if key in c:
        return c[key]
    if lead == 1:
        qo, qi, q3 = p.q1.p, p.q2.p, p.q3
        pj = p.q1.p[:, None, None] * p.q2.p[None, :, None] * p.w3
    else:
        qo, qi = p.q2.p, p.q1.p
        q3 = p.q3.transpose(1, 0, 2)
        pj = (p.q1.p[:, None, None] * p.q2.p[None, :, None] * p.w3).transpose(1, 0, 2)
    logq, mask = log_with_support(q3)
    if float(pj[~mask].sum()) > 0:
        logq = np.zeros_like(q3)
        mask = np.ones_like(mask)
        mbar = 0.0
    else:
        mbar = float(np.sum(pj * np.where(mask, logq, 0.0)))
    py = pj.sum(axis=(0, 1))
    c[key] = (qo, qi, logq, mask, py, mbar)
    return c[key]


def _g_value(p: MacProblem, lead: int, rho: float, z0: Optional[np.ndarray] = None):
    """Inner supremum of one sum-rate dual curve at fixed rho.

    Maximizes over the tilt s >= 0 and the two shift vectors; concave, so
    projected gradient ascent applies.  Returns (value, argmax)."""
    qo, qi, logq, mask, py, mbar = _lead_view(p, lead)
    n_o, n_i = qo.shape[0], qi.shape[0]
    log_qo = np.log(np.where(qo > 0, qo, 1.0))
    log_qi = np.log(np.where(qi > 0, qi, 1.0))
    log_qo[qo == 0] = NEG_INF
    log_qi[qi == 0] = NEG_INF

    def split(z):
        return max(float(z[0]), 0.0), z[1:1 + n_o], z[1 + n_o:]

    def parts(z):
        s, ao, ai = split(z)
        inner = np.where(mask, s * logq, NEG_INF) + log_qi[None, :, None] + ai[None, :, None]
        log_b = _lse(inner, axis=1)
        outer = log_qo[:, None] + ao[:, None] + rho * log_b
        log_d = _lse(outer, axis=0)
        return s, ao, ai, inner, log_b, outer, log_d

    def f(z):
        s, ao, ai, _, _, _, log_d = parts(z)
        val = rho * s * mbar + rho * float(qi @ ai) + float(qo @ ao)
        return val - float(py @ log_d)

    def grad(z):
        s, ao, ai, inner, log_b, outer, log_d = parts(z)
        sig_o = _softmax(outer, axis=0)
        sig_i = _softmax(inner, axis=1)
        w_o = sig_o * py[None, :]
        pair = w_o[:, None, :] * sig_i
        g_ao = qo - w_o.sum(axis=1)
        g_ai = rho * (qi - pair.sum(axis=(0, 2)))
        g_s = rho * (mbar - float(np.sum(pair * np.where(mask, logq, 0.0))))
        return np.concatenate(([g_s], g_ao, g_ai))

    def project(z):
        out = z.copy()
        out[0] = max(out[0], 0.0)
        out[1:1 + n_o] -= float(qo @ out[1:1 + n_o])
        out[1 + n_o:] -= float(qi @ out[1 + n_o:])
        return out

    if z0 is None:
        z0 = np.zeros(1 + n_o + n_i)
        z0[0] = 1.0
    try:
        z, val, _ = optim.ascend_concave(f, grad, z0, project=project, tol=1e-9)
    except optim.StallError as err:
        z, val = err.x, err.value
    return float(val), z


def _g_memo(p: MacProblem, lead: int, rho: float) -> float:
    c = _cache(p)
    key = ("g", lead, float(rho))
    if key not in c:
        warm = c.get(("z", lead))
        val, z = _g_value(p, lead, float(rho), warm)
        c[key] = val
        c[("z", lead)] = z
    return c[key]


def _grid_values(p: MacProblem, lead: int) -> np.ndarray:
    c = _cache(p)
    key = ("grid", lead)
    if key not in c:
        c.pop(("z", lead), None)
        c[key] = np.array([_g_memo(p, lead, rho) for rho in RHO_GRID])
    return c[key]


def _golden_max(g: Callable, lo: float, hi: float, tol: float = 1e-4):
    best_x, best_v = lo, g(lo)
    for x in (hi,):
        v = g(x)
        if v > best_v:
            best_x, best_v = x, v
    a, b = lo, hi
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
    for x, v in ((x1, f1), (x2, f2)):
        if v > best_v:
            best_x, best_v = x, v
    return best_x, best_v


def _sum_rate_bound(p: MacProblem, lead: int, r_other: float,
                    refine: bool = True) -> float:
    """Dual bound on the lead sender's rate given the other sender's rate:
    sup over rho of g(rho) - rho * r_other."""
    vals = _grid_values(p, lead)
    h = vals - RHO_GRID * r_other
    i = int(np.argmax(h))
    best = float(h[i])
    if not refine:
        return best
    lo = float(RHO_GRID[max(i - 1, 0)])
    hi = float(RHO_GRID[min(i + 1, len(RHO_GRID) - 1)])
    _, ref = _golden_max(lambda rho: _g_memo(p, lead, rho) - rho * r_other, lo, hi)
    return max(best, float(ref))


def mac_sum_condition(p: MacProblem, r1: float, r2: float):
    """Check the sum-rate condition at the rate pair (r1, r2), in nats.

    The condition splits into two parts, each keeping one of the two
    mutual-information side constraints; each part is evaluated through its
    dual curve over rho in [0, 1] (fixed grid plus golden refinement around
    the best point).  The pair passes when either part does.  Returns
    (holds, margin) where margin is the slack of the better part; the
    condition holds iff margin >= 0.
    """
    if r1 < 0 or r2 < 0:
        raise ProblemError(f"rates must be nonnegative, got ({r1!r}, {r2!r})")
    bound_1 = _sum_rate_bound(p, 1, r2)
    bound_2 = _sum_rate_bound(p, 2, r1)
    margin = max(bound_1 - r1, bound_2 - r2)
    return margin >= 0.0, float(margin)


def mac_weakened_sum_bound(p: MacProblem) -> RateResult:
    """Sum-rate threshold with the mutual-information constraints dropped.

    Minimizes the divergence to the product of the three true marginals over
    couplings that keep those marginals and the metric mean, via KL
    projection.  The reported gap compares against the rho = 1 point of the
    sum-rate dual, where the two split curves coincide.
    """
    q1, q2 = p.q1.p, p.q2.p
    pj = q1[:, None, None] * q2[None, :, None] * p.w3
    py = pj.sum(axis=(0, 1))
    base = q1[:, None, None] * q2[None, :, None] * py[None, None, :]
    logq, mask = log_with_support(p.q3)
    kwargs = {}
    if float(pj[~mask].sum()) == 0.0:
        mbar = float(np.sum(pj * np.where(mask, logq, 0.0)))
        kwargs = dict(loglin=np.where(mask, logq, 0.0), target_mean=mbar,
                      support=mask)
    p_star, s, _, rep = optim.i_projection(
        base, marginals=[((0,), q1), ((1,), q2), ((2,), py)], **kwargs)
    val = kl_divergence(p_star, base)
    dual = _g_memo(p, 1, 1.0)
    return RateResult(max(val, 0.0), form="primal",
                      certificate={"p_tilde": p_star, "s": s},
                      gap=val - dual,
                      report={"iterations": rep.iterations,
                              "converged": rep.converged})


def mac_region_boundary(p: MacProblem, n_angles: int = 64,
                        which: str = "constrained"):
    """Trace the rate-region boundary by bisecting along rays from the origin.

    Rays sweep the open first quadrant; along each, the largest scaling that
    keeps both per-sender bounds and the sum-rate condition is found by
    bisection (membership is monotone along rays).  ``which`` selects the
    full condition set ("constrained") or the variant whose sum threshold
    drops the mutual-information constraints ("weakened").  During tracing
    the sum condition uses the grid dual without refinement, so the traced
    points always satisfy the refined condition as well.  Returns a list of
    (r1, r2) pairs in nats.
    """
    if n_angles < 8:
        raise ProblemError(f"n_angles must be at least 8, got {n_angles!r}")
    if which not in ("constrained", "weakened"):
        raise ProblemError(f"unknown boundary variant {which!r}")
    b1 = mac_single_bound(p, 1).value
    b2 = mac_single_bound(p, 2).value
    if which == "weakened":
        w = mac_weakened_sum_bound(p).value
    else:
        _grid_values(p, 1)
        _grid_values(p, 2)

    def member(r1, r2):
        if r1 > b1 + 1e-12 or r2 > b2 + 1e-12:
            return False
        if which == "weakened":
            return r1 + r2 <= w + 1e-12
        return (_sum_rate_bound(p, 1, r2, refine=False) >= r1 - 1e-12 or
                _sum_rate_bound(p, 2, r1, refine=False) >= r2 - 1e-12)

    points = []
    for j in range(n_angles):
        theta = (j + 0.5) * (math.pi / 2.0) / n_angles
        cx, cy = math.cos(theta), math.sin(theta)
        t_hi = min(b1 / cx, b2 / cy)
        if member(t_hi * cx, t_hi * cy):
            points.append((t_hi * cx, t_hi * cy))
            continue
        lo, hi = 0.0, t_hi
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if member(mid * cx, mid * cy):
                lo = mid
            else:
                hi = mid
        points.append((lo * cx, lo * cy))
    return points
