"""Structured random-coding rates for single-user mismatched channels.

Superposition coding splits each message into a cloud center over an
auxiliary alphabet and a satellite around it.  The satellite rate is a
conditional version of the constant-composition bound; the cloud rate is
limited by a sum condition whose dual is a family of concave problems
indexed by a tilt rho in [0, 1], handled with the same grid-plus-golden
scheme as the multiple-access sum condition.  Refined superposition coding
re-draws the satellites once per auxiliary symbol and can only raise the
total.  Expurgated parallel coding pushes a two-sender product codebook
through a combining map; its per-sender bounds are KL projections and its
sum condition reuses the superposition dual in both identification orders.
Rates are in nats throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple, Optional

import numpy as np

from . import optim, rates
from .core import (
    Dmc,
    InputDist,
    Metric,
    ProblemError,
    RateResult,
    SizeGuardError,
    conditional_mutual_information,
    kl_divergence,
    log_with_support,
    mutual_information,
)
from .mac import NEG_INF, RHO_GRID, _golden_max, _lse, _softmax


@dataclass(frozen=True)
class ScInput:
    """Auxiliary alphabet size and joint law over (auxiliary, input) pairs.

    ``rates`` may carry a rate splitting (r0, r1) or (r0, per-symbol
    satellite rates); the solvers return their own splitting, so the field
    is descriptive only.
    """

    nu: int
    q_ux: np.ndarray
    rates: Optional[tuple] = None

    def __post_init__(self):
        q = np.asarray(self.q_ux, dtype=float)
        if q.ndim != 2 or q.shape[0] != self.nu:
            raise ProblemError(
                f"joint law must be {self.nu} x |X|, got shape {q.shape}")
        if np.any(q < 0):
            idx = np.unravel_index(int(np.argmin(q)), q.shape)
            raise ProblemError(f"joint law negative at {idx}")
        s = float(q.sum())
        if abs(s - 1.0) > 1e-6:
            raise ProblemError(f"joint law sums to {s!r}, not 1")
        object.__setattr__(self, "q_ux", q / s)
        if self.rates is not None:
            r0, r1 = self.rates
            if r0 < 0 or np.any(np.asarray(r1, dtype=float) < 0):
                raise ProblemError("rates must be nonnegative")

    @property
    def nx(self) -> int:
        return self.q_ux.shape[1]

    @property
    def q_u(self) -> np.ndarray:
        return self.q_ux.sum(axis=1)


@dataclass(frozen=True)
class ExpParSpec:
    """Two-sender parallel codebook pushed through a combining map.

    ``psi`` is an integer table of shape (nx1, nx2) giving the channel input
    fed when the senders pick (x1, x2); its range must fit the channel's
    input alphabet, which is checked at solve time.
    """

    nx1: int
    nx2: int
    psi: np.ndarray
    q1: InputDist
    q2: InputDist

    def __post_init__(self):
        psi = np.asarray(self.psi)
        if psi.shape != (self.nx1, self.nx2):
            raise ProblemError(
                f"combining map must be {self.nx1} x {self.nx2}, got {psi.shape}")
        if not np.issubdtype(psi.dtype, np.integer) or np.any(psi < 0):
            raise ProblemError("combining map must hold nonnegative integers")
        object.__setattr__(self, "psi", psi)
        q1 = self.q1 if isinstance(self.q1, InputDist) else InputDist(self.q1)
        q2 = self.q2 if isinstance(self.q2, InputDist) else InputDist(self.q2)
        if q1.n != self.nx1 or q2.n != self.nx2:
            raise ProblemError("sender distributions do not match the map shape")
        object.__setattr__(self, "q1", q1)
        object.__setattr__(self, "q2", q2)


class _ScArrays(NamedTuple):
    nu_full: int
    u_idx: np.ndarray
    q_ux: np.ndarray
    q_u: np.ndarray
    q_xu: np.ndarray
    log_qxu: np.ndarray
    logq: np.ndarray
    mask: np.ndarray
    mbar: float
    vacuous: bool
    pj: np.ndarray
    p_uy: np.ndarray
    p_y: np.ndarray


def _sc_arrays(w, m, sc: ScInput) -> _ScArrays:
    """Static arrays for one superposition instance, zero-mass auxiliary
    symbols dropped.  When the true law puts mass on a zero-metric cell the
    mean constraint is vacuous and the metric is replaced by the constant 1.
    """
    _, wmat, qmat = rates._coerce(sc.q_ux.sum(axis=0), w, m)
    keep = sc.q_u > 0
    q_ux = sc.q_ux[keep]
    q_u = q_ux.sum(axis=1)
    q_xu = q_ux / q_u[:, None]
    log_qxu = np.log(np.where(q_ux > 0, q_xu, 1.0))
    log_qxu[q_ux == 0] = NEG_INF
    pj = q_ux[:, :, None] * wmat[None, :, :]
    logq, mask = log_with_support(qmat)
    vacuous = float(pj[:, ~mask].sum()) > 0
    if vacuous:
        logq = np.zeros_like(qmat)
        mask = np.ones_like(mask)
        mbar = 0.0
    else:
        mbar = float(np.sum(pj * np.where(mask, logq, 0.0)[None, :, :]))
    return _ScArrays(sc.nu, np.flatnonzero(keep), q_ux, q_u, q_xu, log_qxu,
                     logq, mask, mbar, vacuous, pj, pj.sum(axis=1),
                     pj.sum(axis=(0, 1)))


# ---------------------------------------------------------------------------
# Satellite rate bound.


def _sc_r1_dual(a: _ScArrays):
    """Supremum over the tilt s >= 0 and a shift on (u, x) of the conditional
    decoding-rate dual; concave, so projected gradient ascent applies."""
    nu, nx = a.q_ux.shape
    slog = np.where(a.mask, a.logq, 0.0)

    def split(z):
        return max(float(z[0]), 0.0), z[1:].reshape(nu, nx)

    def parts(z):
        s, sh = split(z)
        inner = a.log_qxu[:, :, None] + sh[:, :, None] \
            + np.where(a.mask, s * a.logq, NEG_INF)[None, :, :]
        return s, sh, inner, _lse(inner, axis=1)

    def f(z):
        s, sh, _, log_b = parts(z)
        val = s * a.mbar + float(np.sum(a.q_ux * sh))
        lb = np.where(a.p_uy > 0, log_b, 0.0)
        return val - float(np.sum(a.p_uy * lb))

    def grad(z):
        s, sh, inner, _ = parts(z)
        wgt = a.p_uy[:, None, :] * _softmax(inner, axis=1)
        g_sh = a.q_ux - wgt.sum(axis=2)
        g_s = a.mbar - float(np.sum(wgt * slog[None, :, :]))
        return np.concatenate(([g_s], g_sh.ravel()))

    def project(z):
        out = z.copy()
        out[0] = max(out[0], 0.0)
        sh = out[1:].reshape(nu, nx)
        sh -= (a.q_xu * sh).sum(axis=1, keepdims=True)
        return out

    z0 = np.zeros(1 + nu * nx)
    z0[0] = 1.0
    try:
        z, val, report = optim.ascend_concave(f, grad, z0, project=project, tol=1e-9)
    except optim.StallError as err:
        z, val, report = err.x, err.value, err.report
    s, _ = split(z)
    return max(float(val), 0.0), s, report


def _sc_r1_primal(a: _ScArrays):
    """Feasibility-penalized conditional-gradient pass over the couplings
    with the (u, x) marginal pinned, then an exact repair by KL projection.
    Returns (rate at the repaired point, repaired coupling)."""
    nu, nx = a.q_ux.shape
    sup = (a.q_ux > 0)[:, :, None] & a.mask[None, :, :] & (a.p_uy > 0)[:, None, :]
    logq3 = np.where(sup, a.logq[None, :, :], 0.0)
    log_qu = np.log(a.q_u)
    log_qux = np.log(np.where(a.q_ux > 0, a.q_ux, 1.0))

    def mi_grad(p):
        puy = p.sum(axis=1)
        return np.where(
            sup,
            np.log(np.clip(p, 1e-30, None)) + log_qu[:, None, None]
            - log_qux[:, :, None] - np.log(np.clip(puy, 1e-30, None))[:, None, :],
            0.0)

    def lp_oracle(g):
        pick = np.where(sup, g, np.inf).argmin(axis=2)
        v = np.zeros_like(a.pj)
        np.put_along_axis(v, pick[:, :, None], a.q_ux[:, :, None], axis=2)
        return v

    p = a.pj.copy()
    for lam in (1e2, 1e3, 1e4):
        def obj(x, lam=lam):
            duy = x.sum(axis=1) - a.p_uy
            hinge = max(a.mbar - float(np.sum(x * logq3)), 0.0)
            return conditional_mutual_information(np.clip(x, 0.0, None)) \
                + lam * (float(np.sum(duy * duy)) + hinge * hinge)

        def gradient(x, lam=lam):
            duy = x.sum(axis=1) - a.p_uy
            hinge = max(a.mbar - float(np.sum(x * logq3)), 0.0)
            return mi_grad(x) + 2.0 * lam * (duy[:, None, :] - hinge * logq3)

        p, _, _ = optim.frank_wolfe_min(obj, gradient, lp_oracle, p,
                                        tol=1e-10, cap=6000)

    base = np.where(sup, np.clip(p, 1e-12, None), 0.0)
    base /= base.sum()
    loglin = None if a.vacuous else \
        np.broadcast_to(a.logq[None, :, :], base.shape).copy()
    p_fix, _, _, _ = optim.i_projection(
        base, loglin=loglin, target_mean=None if loglin is None else a.mbar,
        marginals=[((0, 1), a.q_ux), ((0, 2), a.p_uy)], support=sup)
    return conditional_mutual_information(p_fix), p_fix


def sc_r1_bound(w, m, sc: ScInput) -> RateResult:
    """Largest satellite rate for a fixed cloud law, in nats.

    Minimum conditional divergence rate over couplings that keep the joint
    (auxiliary, input) law, the joint (auxiliary, output) law, and the
    metric mean; same-cloud confusions share the true auxiliary-output
    composition, which is what the dual's conditional normalizer encodes.
    The dual ascent value is reported; the penalized primal pass provides
    the certificate coupling and the gap between the two routes.
    """
    a = _sc_arrays(w, m, sc)
    val, s, report = _sc_r1_dual(a)
    primal, p_fix = _sc_r1_primal(a)
    full = np.zeros((a.nu_full,) + p_fix.shape[1:])
    full[a.u_idx] = p_fix
    return RateResult(val, form="dual", certificate={"p_tilde": full, "s": s},
                      gap=float(primal) - val, report=report)


# ---------------------------------------------------------------------------
# Cloud-center sum condition.


class _SumDual:
    """Cached dual curve rho -> g(rho) for the cloud-center sum bound.

    The bound on the cloud rate given satellite rate r1 is
    sup over rho of g(rho) - rho * r1, evaluated on the fixed grid with a
    golden-section polish around the best point.
    """

    def __init__(self, a: _ScArrays):
        self.a = a
        self._memo = {}
        self._warm = None
        self._grid = None

    def _solve(self, rho: float):
        a = self.a
        nu, nx = a.q_ux.shape
        log_qu = np.log(a.q_u)
        slog = np.where(a.mask, a.logq, 0.0)

        def split(z):
            return max(float(z[0]), 0.0), z[1:].reshape(nu, nx)

        def parts(z):
            s, sh = split(z)
            inner = a.log_qxu[:, :, None] + sh[:, :, None] \
                + np.where(a.mask, s * a.logq, NEG_INF)[None, :, :]
            outer = log_qu[:, None] + rho * _lse(inner, axis=1)
            return s, sh, inner, outer, _lse(outer, axis=0)

        def f(z):
            s, sh, _, _, log_d = parts(z)
            val = rho * (s * a.mbar + float(np.sum(a.q_ux * sh)))
            ld = np.where(a.p_y > 0, log_d, 0.0)
            return val - float(a.p_y @ ld)

        def grad(z):
            s, sh, inner, outer, _ = parts(z)
            w_u = _softmax(outer, axis=0) * a.p_y[None, :]
            wgt = w_u[:, None, :] * _softmax(inner, axis=1)
            g_sh = rho * (a.q_ux - wgt.sum(axis=2))
            g_s = rho * (a.mbar - float(np.sum(wgt * slog[None, :, :])))
            return np.concatenate(([g_s], g_sh.ravel()))

        def project(z):
            out = z.copy()
            out[0] = max(out[0], 0.0)
            out[1:] -= float(np.sum(a.q_ux * out[1:].reshape(nu, nx)))
            return out

        z0 = self._warm
        if z0 is None:
            z0 = np.zeros(1 + nu * nx)
            z0[0] = 1.0
        try:
            z, val, _ = optim.ascend_concave(f, grad, z0, project=project, tol=1e-9)
        except optim.StallError as err:
            z, val = err.x, err.value
        self._warm = z
        return float(val)

    def g(self, rho: float) -> float:
        key = float(rho)
        if key not in self._memo:
            self._memo[key] = 0.0 if key == 0.0 else self._solve(key)
        return self._memo[key]

    def grid(self) -> np.ndarray:
        if self._grid is None:
            self._grid = np.array([self.g(rho) for rho in RHO_GRID])
        return self._grid

    def value(self, r1: float) -> float:
        h = self.grid() - RHO_GRID * r1
        i = int(np.argmax(h))
        lo = float(RHO_GRID[max(i - 1, 0)])
        hi = float(RHO_GRID[min(i + 1, len(RHO_GRID) - 1)])
        _, ref = _golden_max(lambda rho: self.g(rho) - rho * r1, lo, hi)
        return max(float(h[i]), float(ref))


def sc_rate(w, m, sc: ScInput):
    """Best total rate of two-layer coding at a fixed cloud law, in nats.

    The satellite rate runs up to its conditional bound; for each candidate
    the cloud rate is capped by the sum-condition dual.  The split search is
    a coarse grid over the satellite rate plus golden-section refinement.
    Returns (total, (cloud rate, satellite rate)).
    """
    r1_cap = float(sc_r1_bound(w, m, sc).value)
    sd = _SumDual(_sc_arrays(w, m, sc))
    sd.grid()

    def total(r1):
        return r1 + sd.value(r1)

    best_r1, best = 0.0, total(0.0)
    if r1_cap > 1e-12:
        cand = np.linspace(0.0, r1_cap, 9)
        vals = [total(float(r)) for r in cand]
        i = int(np.argmax(vals))
        if vals[i] > best:
            best_r1, best = float(cand[i]), float(vals[i])
        lo = float(cand[max(i - 1, 0)])
        hi = float(cand[min(i + 1, len(cand) - 1)])
        x, v = _golden_max(total, lo, hi, tol=1e-6)
        if v > best:
            best_r1, best = float(x), float(v)
    return best, (best - best_r1, best_r1)


# ---------------------------------------------------------------------------
# Refined superposition coding.


def _rsc_support(a: _ScArrays):
    """Cells a competing-cloud coupling may occupy: codeword-pair support,
    metric-positive pairs, and outputs the channel can produce.  The
    auxiliary-output joint is free, unlike the satellite bound."""
    return (a.q_ux > 0)[:, :, None] & a.mask[None, :, :] & (a.p_y > 0)[None, None, :]


def _dykstra_factory(a: _ScArrays):
    """Projection onto couplings with the codeword-pair marginal and the
    output marginal pinned, the metric mean kept, and nonnegativity;
    alternating projections with corrections on the two non-affine pieces."""
    sup = _rsc_support(a)
    logq3 = np.where(sup, a.logq[None, :, :], 0.0)
    lnorm = float(np.sum(logq3 * logq3))
    cnt_y = np.maximum(sup.sum(axis=2), 1)
    cnt_ux = np.maximum(sup.sum(axis=(0, 1)), 1)

    def project(p0):
        p = np.where(sup, p0, 0.0)
        e_h = np.zeros_like(p)
        e_n = np.zeros_like(p)
        for _ in range(80):
            p = p + np.where(sup, ((a.q_ux - p.sum(axis=2)) / cnt_y)[:, :, None], 0.0)
            p = p + np.where(sup, ((a.p_y - p.sum(axis=(0, 1))) / cnt_ux)[None, None, :], 0.0)
            if lnorm > 0:
                z = p + e_h
                viol = a.mbar - float(np.sum(z * logq3))
                p = z + (viol / lnorm) * logq3 if viol > 0 else z
                e_h = z - p
            z = p + e_n
            p = np.maximum(z, 0.0)
            e_n = z - p
            res = max(float(np.abs(p.sum(axis=2) - a.q_ux).max()),
                      float(np.abs(p.sum(axis=(0, 1)) - a.p_y).max()),
                      max(a.mbar - float(np.sum(p * logq3)), 0.0) if lnorm > 0 else 0.0)
            if res < 1e-11:
                break
        return p

    return project


def _lifted_start(a: _ScArrays, certs) -> np.ndarray:
    """Feasible coupling assembled from the per-symbol constant-composition
    minimizers; it attains every satellite bound simultaneously, so at the
    default splitting it already zeroes the excess objective."""
    x0 = np.empty_like(a.pj)
    for u, cert in enumerate(certs):
        py_u = a.p_uy[u] / a.q_u[u]
        if isinstance(cert, dict) and "p_tilde" in cert:
            xs = np.flatnonzero(a.q_xu[u] > 0)
            ys = np.flatnonzero(py_u > 0)
            full = np.zeros(a.pj.shape[1:])
            full[np.ix_(xs, ys)] = np.asarray(cert["p_tilde"])
        else:
            full = a.q_xu[u][:, None] * py_u[None, :]
        x0[u] = a.q_u[u] * full
    return x0


def _rsc_cloud_bound(a: _ScArrays, r1u: np.ndarray, x0: np.ndarray,
                     max_iter: int = 30000, patience: int = 3000,
                     tol: float = 1e-10):
    """Cloud rate bound: over couplings with the codeword-pair marginal and
    the output marginal pinned plus the metric mean, minimize the
    auxiliary-output rate plus the worst excess of the per-symbol
    conditional rates over the satellite rates.  The excess subsets make a
    max of convex pieces (empty subset included, standing in for the clip at
    zero), solved by projected subgradient descent."""
    nu = a.q_ux.shape[0]
    sup = _rsc_support(a)
    log_qux = np.where(sup, np.log(np.where(a.q_ux > 0, a.q_ux, 1.0))[:, :, None], 0.0)
    log_qu = np.log(a.q_u)
    log_qupy = log_qu[:, None] + np.log(np.where(a.p_y > 0, a.p_y, 1.0))[None, :]

    def aux_terms(p):
        muy = p.sum(axis=1)
        pos = muy > 0
        log_m = np.log(np.where(pos, muy, 1.0))
        base = float(np.sum(np.where(pos, muy * (log_m - log_qupy), 0.0)))
        return log_m, base

    pieces = []
    for size in range(nu + 1):
        for group in combinations(range(nu), size):
            kv = np.zeros(nu, dtype=bool)
            kv[list(group)] = True
            offset = float(np.sum(a.q_u[kv] * r1u[kv]))

            def val(p, kv=kv, offset=offset):
                log_m, base = aux_terms(p)
                cells = sup & kv[:, None, None] & (p > 0)
                t = np.where(
                    cells,
                    p * (np.log(np.where(cells, p, 1.0)) - log_qux
                         - log_m[:, None, :] + log_qu[:, None, None]),
                    0.0)
                return base + float(t.sum()) - offset

            def sub(p, kv=kv):
                log_m3 = np.log(np.clip(p.sum(axis=1), 1e-12, None))[:, None, :]
                g = np.where(sup, log_m3 - log_qupy[:, None, :] + 1.0, 0.0)
                g += np.where(sup & kv[:, None, None],
                              np.log(np.clip(p, 1e-12, None)) - log_qux
                              - log_m3 + log_qu[:, None, None],
                              0.0)
                return g

            pieces.append((val, sub))

    _, best, report = optim.subgradient_min_max(
        pieces, _dykstra_factory(a), x0, tol=tol,
        max_iter=max_iter, patience=patience)
    return max(float(best), 0.0), report


def rsc_rate(w, m, sc: ScInput, refine: bool = False):
    """Best total rate of refined two-layer coding at a fixed cloud law.

    Satellite rates default to their per-symbol constant-composition bounds,
    which never lowers the total; ``refine`` sweeps them over a coordinate
    grid anyway.  Returns (total, (cloud rate, per-symbol satellite rates
    over the full auxiliary alphabet)).
    """
    a = _sc_arrays(w, m, sc)
    nu = a.q_ux.shape[0]
    if nu > 4:
        raise SizeGuardError(
            f"refined superposition enumerates 2^|U| subsets; |U|={nu} exceeds 4")
    per_u = [rates.lm_primal(a.q_xu[u], w, m) for u in range(nu)]
    lm_u = np.array([r.value for r in per_u])
    x0 = _lifted_start(a, [r.certificate for r in per_u])

    def total_at(r1u, probe=False):
        budget = {"max_iter": 4000, "patience": 400, "tol": 1e-7} if probe else {}
        cloud, _ = _rsc_cloud_bound(a, r1u, x0, **budget)
        return cloud + float(a.q_u @ r1u), cloud

    best_r1u = lm_u.copy()
    best, best_cloud = total_at(best_r1u)
    if refine:
        # cheap budget while probing; a probe win only counts once the full
        # solve of that split confirms it
        cur, cur_val = best_r1u.copy(), best
        for _ in range(2):
            for u in range(nu):
                if lm_u[u] <= 0:
                    continue
                for frac in (0.25, 0.5, 0.75):
                    trial = cur.copy()
                    trial[u] = frac * lm_u[u]
                    tot, _ = total_at(trial, probe=True)
                    if tot > cur_val + 1e-9:
                        cur, cur_val = trial, tot
        if not np.array_equal(cur, best_r1u):
            tot, cloud = total_at(cur)
            if tot > best:
                best_r1u, best, best_cloud = cur, tot, cloud
    full = np.zeros(a.nu_full)
    full[a.u_idx] = best_r1u
    return best, (best_cloud, full)


# ---------------------------------------------------------------------------
# Sum channel.


def sum_channel_rate(i1: float, i2: float):
    """Total rate of switching between two subchannels with per-subchannel
    rates i1, i2 in nats, plus the optimizing share of the first subchannel.
    A rate of -inf marks an unusable subchannel."""
    for v in (i1, i2):
        if not (v >= 0.0 or v == NEG_INF):
            raise ProblemError(f"subchannel rates must be nonnegative, got {v!r}")
    if i1 == NEG_INF and i2 == NEG_INF:
        raise ProblemError("at least one subchannel rate must be finite")
    rate = float(np.logaddexp(i1, i2))
    return rate, float(math.exp(i1 - rate))


# ---------------------------------------------------------------------------
# Expurgated parallel coding.


class _ExpArrays(NamedTuple):
    wmat: np.ndarray
    qmat: np.ndarray
    pj: np.ndarray
    logq: np.ndarray
    mask: np.ndarray
    mbar: float
    vacuous: bool
    p_x1y: np.ndarray
    p_x2y: np.ndarray
    p_y: np.ndarray


def _exp_arrays(w, m, spec: ExpParSpec) -> _ExpArrays:
    wmat = w.w if isinstance(w, Dmc) else np.asarray(w, dtype=float)
    qmat = m.q if isinstance(m, Metric) else np.asarray(m, dtype=float)
    if wmat.shape != qmat.shape:
        raise ProblemError("channel and metric shapes disagree")
    if int(spec.psi.max()) >= wmat.shape[0]:
        raise ProblemError(
            f"combining map exceeds the input alphabet of size {wmat.shape[0]}")
    wpsi = wmat[spec.psi]
    qpsi = qmat[spec.psi]
    pj = spec.q1.p[:, None, None] * spec.q2.p[None, :, None] * wpsi
    logq, mask = log_with_support(qpsi)
    vacuous = float(pj[~mask].sum()) > 0
    if vacuous:
        logq = np.zeros_like(qpsi)
        mask = np.ones_like(mask)
        mbar = 0.0
    else:
        mbar = float(np.sum(pj * np.where(mask, logq, 0.0)))
    return _ExpArrays(wmat, qmat, pj, logq, mask, mbar, vacuous,
                      pj.sum(axis=1), pj.sum(axis=0), pj.sum(axis=(0, 1)))


def _exp_single(e: _ExpArrays, spec: ExpParSpec, sender: int) -> float:
    """Per-sender bound: conditional divergence rate given the other
    sender's symbol, as a KL projection onto the pinned pair marginal, the
    pinned (other symbol, output) law, and the metric mean."""
    prod = np.outer(spec.q1.p, spec.q2.p)
    if sender == 1:
        base = spec.q1.p[:, None, None] * e.p_x2y[None, :, :]
        marginals = [((0, 1), prod), ((1, 2), e.p_x2y)]
    else:
        base = e.p_x1y[:, None, :] * spec.q2.p[None, :, None]
        marginals = [((0, 1), prod), ((0, 2), e.p_x1y)]
    p_star, _, _, _ = optim.i_projection(
        base, loglin=None if e.vacuous else e.logq,
        target_mean=None if e.vacuous else e.mbar,
        marginals=marginals, support=e.mask)
    return kl_divergence(p_star, base)


def _weakened_sum_bound(w, m, spec: ExpParSpec) -> float:
    """Sum bound with both mutual-information side constraints dropped; it
    collapses to the single-sender rate of the pushed-forward input law."""
    e = _exp_arrays(w, m, spec)
    prod = np.outer(spec.q1.p, spec.q2.p)
    base = prod[:, :, None] * e.p_y[None, None, :]
    p_star, _, _, _ = optim.i_projection(
        base, loglin=None if e.vacuous else e.logq,
        target_mean=None if e.vacuous else e.mbar,
        marginals=[((0, 1), prod), ((2,), e.p_y)], support=e.mask)
    return kl_divergence(p_star, base)


def _identified_cloud_law(spec: ExpParSpec, nx: int, cloud: int) -> np.ndarray:
    """Joint (auxiliary, input) law when one sender plays the cloud center
    and the map output is the channel input."""
    q1, q2 = spec.q1.p, spec.q2.p
    if cloud == 2:
        q_ux = np.zeros((spec.nx2, nx))
        for x1 in range(spec.nx1):
            for x2 in range(spec.nx2):
                q_ux[x2, spec.psi[x1, x2]] += q1[x1] * q2[x2]
    else:
        q_ux = np.zeros((spec.nx1, nx))
        for x1 in range(spec.nx1):
            for x2 in range(spec.nx2):
                q_ux[x1, spec.psi[x1, x2]] += q1[x1] * q2[x2]
    return q_ux


def _branch_total(sd: _SumDual, cap_sat: float, cap_cloud: float) -> float:
    """Best total over the satellite sender's rate in [0, cap_sat] with the
    cloud sender capped by both its own bound and the sum condition."""

    def h(r):
        return r + min(cap_cloud, sd.value(r))

    cand = np.linspace(0.0, max(cap_sat, 0.0), 33)
    vals = [h(float(r)) for r in cand]
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo = float(cand[max(i - 1, 0)])
    hi = float(cand[min(i + 1, len(cand) - 1)])
    _, ref = _golden_max(h, lo, hi, tol=1e-7)
    return max(best, float(ref))


def expurgated_parallel_rate(w, m, spec: ExpParSpec) -> float:
    """Best total rate of expurgated two-sender product coding, in nats.

    Each sender's own bound is a KL projection; the sum condition is
    evaluated through the two-layer reduction with either sender playing the
    cloud center, and the better order is kept.
    """
    e = _exp_arrays(w, m, spec)
    nx = e.wmat.shape[0]
    e1 = _exp_single(e, spec, 1)
    e2 = _exp_single(e, spec, 2)
    totals = []
    for cloud, cap_sat, cap_cloud in ((2, e1, e2), (1, e2, e1)):
        q_ux = _identified_cloud_law(spec, nx, cloud)
        sd = _SumDual(_sc_arrays(e.wmat, e.qmat, ScInput(q_ux.shape[0], q_ux)))
        sd.grid()
        totals.append(_branch_total(sd, cap_sat, cap_cloud))
    return float(max(totals))
