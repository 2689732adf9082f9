"""Brute-force and Monte-Carlo oracles.

Everything here is deliberately independent of the solver modules: grid
search enumerates joint types on a 1/N lattice and Monte-Carlo simulates the
actual random-coding experiment, so their outputs can vouch for the
optimization-based answers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Dmc, DmcProblem, Metric, SizeGuardError, log_with_support

Z95 = 1.959963984540054


# ---------------------------------------------------------------------------
# Lattice enumeration of joint distributions
# ---------------------------------------------------------------------------


def _family_bounds(shape, keep, target, n):
    keep = tuple(sorted(keep))
    t = np.asarray(target, dtype=float).reshape(-1)
    lo = np.maximum(np.ceil(n * t - 0.5 - 1e-9).astype(int), 0)
    hi = np.floor(n * t + 0.5 + 1e-9).astype(int)
    # Membership: flat slice index of each cell under the kept axes.
    cells = np.array(list(np.ndindex(*shape)), dtype=int)
    kept_shape = tuple(shape[ax] for ax in keep)
    memb = np.ravel_multi_index(tuple(cells[:, ax] for ax in keep), kept_shape)
    return memb, lo, hi


def _enumerate_counts(n, n_cells, fams):
    """Yield count vectors summing to n that respect per-slice [lo, hi] bounds.

    fams is a list of (memb, lo, hi) with memb mapping cell -> slice.  A
    depth-first scan with capacity pruning; every leaf satisfies all bounds
    exactly, so a final feasibility re-check is unnecessary.
    """
    counts = np.zeros(n_cells, dtype=int)
    got = [np.zeros(len(lo), dtype=int) for _, lo, _ in fams]
    # remaining[j][i, s]: cells at positions >= i in family j's slice s.
    remaining = []
    for memb, lo, _ in fams:
        rem = np.zeros((n_cells + 1, len(lo)), dtype=int)
        for i in range(n_cells - 1, -1, -1):
            rem[i] = rem[i + 1]
            rem[i, memb[i]] += 1
        remaining.append(rem)

    def rec(pos, budget):
        if pos == n_cells:
            if budget == 0:
                yield counts.copy()
            return
        ub = budget
        lb = 0
        for j, (memb, lo, hi) in enumerate(fams):
            s = memb[pos]
            ub = min(ub, hi[s] - got[j][s])
            if remaining[j][pos + 1, s] == 0:
                lb = max(lb, lo[s] - got[j][s])
        if lb > ub:
            return
        for c in range(lb, ub + 1):
            counts[pos] = c
            ok = True
            for j, (memb, lo, hi) in enumerate(fams):
                got[j][memb[pos]] += c
                need = np.maximum(lo - got[j], 0)
                need[remaining[j][pos + 1] == 0] = 0
                room = np.minimum(hi - got[j], budget - c)
                room[remaining[j][pos + 1] == 0] = 0
                if need.sum() > budget - c or room.sum() < budget - c:
                    ok = False
            if ok:
                yield from rec(pos + 1, budget - c)
            for j, (memb, _, _) in enumerate(fams):
                got[j][memb[pos]] -= c
        counts[pos] = 0

    yield from rec(0, n)


def _lattice_points(shape, constraints, n, support=None):
    """All joint pmfs on the 1/n lattice meeting the constraints.

    Marginal constraints hold within 1/(2n) (nearest-count rounding); mean
    constraints are enforced without slack so every returned point whose mean
    coefficients are finite is genuinely feasible.  Returns an (m, *shape)
    array.
    """
    shape = tuple(int(d) for d in shape)
    n_full = int(np.prod(shape))
    sup = np.ones(n_full, dtype=bool) if support is None else np.asarray(support, dtype=bool).reshape(-1)
    fams = []
    means = []
    for con in constraints:
        kind = con[0]
        if kind == "marginal":
            _, keep, target = con
            memb, lo, hi = _family_bounds(shape, keep, target, n)
            fams.append((memb, lo, hi))
        elif kind in ("mean_ge", "mean_le"):
            _, coeffs, target = con
            means.append((kind, np.asarray(coeffs, dtype=float).reshape(-1), float(target)))
        else:
            raise ValueError(f"unknown constraint kind {kind!r}")
    # Forced-zero cells become slices with hi = 0 via a dedicated family.
    live = np.where(sup)[0]
    if len(live) == 0:
        return np.zeros((0,) + shape)
    sub_fams = []
    for memb, lo, hi in fams:
        # A slice whose support is entirely masked off cannot reach lo > 0.
        covered = np.zeros(len(lo), dtype=bool)
        covered[np.unique(memb[live])] = True
        if np.any(~covered & (lo > 0)):
            return np.zeros((0,) + shape)
        sub_fams.append((memb[live], lo, hi))
    rows = []
    for cnt in _enumerate_counts(n, len(live), sub_fams):
        full = np.zeros(n_full, dtype=float)
        full[live] = cnt / n
        rows.append(full)
    if not rows:
        return np.zeros((0,) + shape)
    pts = np.array(rows)
    keep_mask = np.ones(len(pts), dtype=bool)
    for kind, coeffs, target in means:
        finite = np.isfinite(coeffs)
        # Mass on a -inf coefficient cell sends the mean to -inf.
        off = pts[:, ~finite].sum(axis=1) > 0
        vals = pts[:, finite] @ coeffs[finite]
        if kind == "mean_ge":
            keep_mask &= np.where(off, False, vals >= target - 1e-12)
        else:
            keep_mask &= np.where(off, True, vals <= target + 1e-12)
    return pts[keep_mask].reshape(-1, *shape)


def grid_primal_min(shape, objective: Callable, constraints: Sequence = (),
                    n: int = 40, support=None):
    """Exhaustive minimum of ``objective`` over lattice joint distributions.

    Constraints: ("marginal", keep_axes, target) pins the marginal onto
    ``keep_axes`` within 1/(2n); ("mean_ge"/"mean_le", coeffs, target) are
    linear mean constraints enforced exactly.  ``objective`` receives a batch
    array of shape (m, \\*shape) and returns m values.  Returns the minimum
    (+inf when no lattice point is feasible).
    """
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) > 9:
        raise SizeGuardError(f"grid restricted to 9 cells, got {np.prod(shape)}")
    if n > 60:
        raise SizeGuardError(f"grid resolution capped at 60, got {n}")
    pts = _lattice_points(shape, constraints, n, support=support)
    if len(pts) == 0:
        return math.inf
    vals = np.asarray(objective(pts), dtype=float)
    return float(np.min(vals))


# Batch objectives used by the grid oracles and their tests.


def batch_kl(p: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Row-wise KL divergence of a batch against a fixed reference."""
    ref = np.asarray(ref, dtype=float)
    flat = p.reshape(len(p), -1)
    rflat = ref.reshape(-1)
    out = np.full(len(p), math.inf)
    ok = ~np.any((flat > 0) & (rflat[None, :] <= 0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(flat > 0, flat * (np.log(np.where(flat > 0, flat, 1.0)) -
                                           np.log(np.where(rflat[None, :] > 0, rflat[None, :], 1.0))), 0.0)
    out[ok] = terms[ok].sum(axis=1)
    return out


def batch_mutual_information(p: np.ndarray) -> np.ndarray:
    """Row-wise I(X;Y) of a batch of joint pmfs shaped (m, nx, ny)."""
    px = p.sum(axis=2)
    py = p.sum(axis=1)
    prod = px[:, :, None] * py[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) -
                                     np.log(np.where(prod > 0, prod, 1.0))), 0.0)
    return np.maximum(terms.sum(axis=(1, 2)), 0.0)


# ---------------------------------------------------------------------------
# Error-exponent primal programs on the lattice
# ---------------------------------------------------------------------------


def _metric_mean_info(pts: np.ndarray, logq: np.ndarray, mask: np.ndarray):
    """Mean of log-metric per row; second output flags rows with -inf mean."""
    flat = pts.reshape(len(pts), -1)
    lflat = logq.reshape(-1)
    mflat = mask.reshape(-1)
    vals = flat[:, mflat] @ lflat[mflat]
    neginf = flat[:, ~mflat].sum(axis=1) > 1e-15
    return vals, neginf


def _pair_exponent(problem: DmcProblem, q_in, rate, n, cc):
    """min over (P, Ptilde) of D(P || Q x W) + [penalty(Ptilde) - R]^+.

    The penalty is D(Ptilde || Q x P_Y) for the iid ensemble and
    I(X;Y) for constant composition; Ptilde shares P's output marginal and
    must reach P's metric mean.  Ptilde rows are bucketed by column counts so
    the inner minimization is a sorted-prefix lookup.
    """
    w, q = problem.dmc.w, problem.metric.q
    q_in = np.asarray(q_in, dtype=float)
    nx, ny = w.shape
    logq, qmask = log_with_support(q)
    base = q_in[:, None] * w
    row_con = [("marginal", (0,), q_in)] if cc else []
    sup_p = (base > 0).reshape(-1)
    pts_p = _lattice_points((nx, ny), row_con, n, support=sup_p)
    sup_t = np.repeat(q_in > 0, ny)
    pts_t = _lattice_points((nx, ny), row_con, n, support=sup_t)
    if len(pts_p) == 0 or len(pts_t) == 0:
        return math.inf
    d_p = batch_kl(pts_p, base)
    mean_p, neginf_p = _metric_mean_info(pts_p, logq, qmask)
    col_p = np.rint(pts_p.sum(axis=1) * n).astype(int)
    mean_t, neginf_t = _metric_mean_info(pts_t, logq, qmask)
    col_t = np.rint(pts_t.sum(axis=1) * n).astype(int)
    if cc:
        pen_t = batch_mutual_information(pts_t)
    else:
        py_t = pts_t.sum(axis=1)
        ref = q_in[None, :, None] * py_t[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(pts_t > 0,
                             pts_t * (np.log(np.where(pts_t > 0, pts_t, 1.0)) -
                                      np.log(np.where(ref > 0, ref, 1.0))), 0.0)
        bad = np.any((pts_t > 0) & (ref <= 0), axis=(1, 2))
        pen_t = np.where(bad, math.inf, terms.sum(axis=(1, 2)))
    buckets = {}
    for i in range(len(pts_t)):
        key = tuple(col_t[i])
        buckets.setdefault(key, []).append(i)
    for key, idxs in buckets.items():
        idxs = np.array(idxs)
        m = np.where(neginf_t[idxs], -math.inf, mean_t[idxs])
        order = np.argsort(-m, kind="stable")
        idxs = idxs[order]
        m = m[order]
        prefix = np.minimum.accumulate(pen_t[idxs])
        buckets[key] = (m, prefix)
    best = math.inf
    for i in range(len(pts_p)):
        if not np.isfinite(d_p[i]):
            continue
        key = tuple(col_p[i])
        if key not in buckets:
            continue
        m_sorted, prefix = buckets[key]
        thresh = -math.inf if neginf_p[i] else mean_p[i] - 1e-12
        k = int(np.searchsorted(-m_sorted, -thresh, side="right"))
        if k == 0:
            continue
        inner = prefix[k - 1]
        total = d_p[i] + max(inner - rate, 0.0)
        best = min(best, total)
    return best


def _triple_exponent(problem: DmcProblem, q_in, rate, n, which):
    """Lattice minimum of the pairwise-codeword exponent programs.

    The scan runs over joint types of (codeword, competitor, output) with
    both codeword marginals pinned to the input distribution, the competitor
    metric at least the true one, and pairwise mutual information at most R.
    """
    w, q = problem.dmc.w, problem.metric.q
    q_in = np.asarray(q_in, dtype=float)
    nx, ny = w.shape
    logq, qmask = log_with_support(q)
    shape = (nx, nx, ny)
    cons = [("marginal", (0,), q_in), ("marginal", (1,), q_in)]
    sup = np.broadcast_to((q_in[:, None] * w > 0)[:, None, :], shape).reshape(-1)
    pts = _lattice_points(shape, cons, n, support=sup)
    if len(pts) == 0:
        return math.inf
    lq_true = np.broadcast_to(logq[:, None, :], shape)
    m_true = np.broadcast_to(qmask[:, None, :], shape)
    lq_comp = np.broadcast_to(logq[None, :, :], shape)
    m_comp = np.broadcast_to(qmask[None, :, :], shape)
    mean_true, neginf_true = _metric_mean_info(pts, lq_true, m_true)
    mean_comp, neginf_comp = _metric_mean_info(pts, lq_comp, m_comp)
    ok = np.where(neginf_true, True,
                  ~neginf_comp & (mean_comp >= mean_true - 1e-12))
    pxx = pts.sum(axis=3)
    i_xx = batch_mutual_information(pxx)
    ok &= i_xx <= rate + 1e-12
    if not ok.any():
        return math.inf
    pts = pts[ok]
    if which == "ex_cc":
        ref = q_in[:, None, None] * q_in[None, :, None] * w[:, None, :]
        vals = batch_kl(pts, ref) - rate
    else:
        # Conditional divergence of the output law given the codeword, plus
        # the clipped competitor-information penalty.
        px = pts.sum(axis=(2, 3))
        pxy = pts.sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(
                pxy > 0,
                pxy * (np.log(np.where(pxy > 0, pxy, 1.0)) -
                       np.log(np.where(px[:, :, None] > 0, px[:, :, None], 1.0)) -
                       np.log(np.where(w[None, :, :] > 0, w[None, :, :], 1.0))),
                0.0,
            )
        bad = np.any((pxy > 0) & (w[None, :, :] <= 0), axis=(1, 2))
        d_cond = np.where(bad, math.inf, cond.sum(axis=(1, 2)))
        # I(competitor; output, codeword) = H(competitor) + H(X,Y) - H(all).
        pxbar = pts.sum(axis=(1, 3))
        h_comp = _batch_entropy(pxbar)
        h_xy = _batch_entropy(pts.sum(axis=2).reshape(len(pts), -1))
        h_all = _batch_entropy(pts.reshape(len(pts), -1))
        i_comp = np.maximum(h_comp + h_xy - h_all, 0.0)
        vals = d_cond + np.maximum(i_comp - rate, 0.0)
    return float(np.min(vals))


def _batch_entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -t.sum(axis=1)


def grid_exponent_primal(problem: DmcProblem, q_in, rate: float, which: str,
                         n: int = 40) -> float:
    """Lattice evaluation of a primal error-exponent program.

    ``which``: "er_iid"/"er_cc" for the random-coding exponents, "ex_cc" for
    the expurgated exponent, "e_ck" for the combined form that dominates
    both.  Rates in nats.
    """
    nx, ny = problem.dmc.w.shape
    if max(nx, ny) > 3:
        raise SizeGuardError("exponent grid restricted to alphabets of size 3")
    if n > 40:
        raise SizeGuardError(f"exponent grid resolution capped at 40, got {n}")
    if which == "er_iid":
        return _pair_exponent(problem, q_in, rate, n, cc=False)
    if which == "er_cc":
        return _pair_exponent(problem, q_in, rate, n, cc=True)
    if which in ("ex_cc", "e_ck"):
        return _triple_exponent(problem, q_in, rate, n, which)
    raise ValueError(f"unknown exponent form {which!r}")


# ---------------------------------------------------------------------------
# Monte-Carlo decoding experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McEstimate:
    p_err: float
    ci_low: float
    ci_high: float
    errors: int
    trials: int


def nearest_type(q_in: np.ndarray, n: int) -> np.ndarray:
    """Integer composition of n closest to n*q_in, largest remainder first.

    Remainder ties resolve toward the lower symbol index.
    """
    q_in = np.asarray(q_in, dtype=float)
    scaled = n * q_in
    base = np.floor(scaled).astype(int)
    short = n - int(base.sum())
    rem = scaled - base
    order = sorted(range(len(q_in)), key=lambda i: (-rem[i], i))
    for i in order[:short]:
        base[i] += 1
    return base


def _wilson_interval(k: int, n: int):
    if n == 0:
        return 0.0, 1.0
    p = k / n
    z2 = Z95 * Z95
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = Z95 * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def monte_carlo_error(w, metric, q_in, ensemble: str = "iid", n: int = 8,
                      M: int = 16, trials: int = 2000, seed: int = 0) -> McEstimate:
    """Empirical error rate of maximum-metric decoding over random codebooks.

    Each trial draws a fresh codebook (iid rows from q_in, or uniformly
    random permutations of the nearest type for "cc"), sends message 0, and
    decodes by the highest metric sum with ties counted as errors.  Trials
    are split into fixed 256-trial chunks with independently seeded
    generators, so the estimate is deterministic and chunk-parallelizable.
    """
    if n > 16:
        raise SizeGuardError(f"blocklength capped at 16, got {n}")
    if M > 4096:
        raise SizeGuardError(f"codebook size capped at 4096, got {M}")
    if trials > 10**6:
        raise SizeGuardError(f"trials capped at 1e6, got {trials}")
    if ensemble not in ("iid", "cc"):
        raise ValueError(f"unknown ensemble {ensemble!r}")
    wmat = w.w if isinstance(w, Dmc) else np.asarray(w, dtype=float)
    qmat = metric.q if isinstance(metric, Metric) else np.asarray(metric, dtype=float)
    q_in = np.asarray(q_in, dtype=float)
    nx, ny = wmat.shape
    with np.errstate(divide="ignore"):
        log_metric = np.where(qmat > 0, np.log(np.where(qmat > 0, qmat, 1.0)), -math.inf)
    type_counts = nearest_type(q_in, n) if ensemble == "cc" else None
    if ensemble == "cc":
        type_base = np.repeat(np.arange(nx), type_counts)
    errors = 0
    chunk = 256
    n_chunks = (trials + chunk - 1) // chunk
    for ci in range(n_chunks):
        b = min(chunk, trials - ci * chunk)
        rng = np.random.default_rng([seed, ci])
        if ensemble == "iid":
            books = rng.choice(nx, size=(b, M, n), p=q_in)
        else:
            books = np.tile(type_base, (b, M, 1))
            perm = rng.random((b, M, n)).argsort(axis=2)
            books = np.take_along_axis(books, perm, axis=2)
        x = books[:, 0, :]
        u = rng.random((b, n, 1))
        cdf = np.cumsum(wmat, axis=1)
        y = (u > cdf[x]).sum(axis=2)
        scores = log_metric[books, y[:, None, :]].sum(axis=2)
        if M > 1:
            rival = scores[:, 1:].max(axis=1)
            errors += int(np.sum(rival >= scores[:, 0]))
        # Scores of -inf for the true message lose every tie by convention,
        # which the >= comparison already captures.
    lo, hi = _wilson_interval(errors, trials)
    return McEstimate(errors / trials, lo, hi, errors, trials)
