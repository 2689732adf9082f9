"""Single-user achievable rates under mismatched decoding.

The two rate families are the iid-ensemble rate (gmi_*) and the
constant-composition rate (lm_*), each available in a primal form (a KL
projection) and a dual form (a concave supremum over tilt and shift
variables).  The duals are the trusted compute path; the primals serve as
independent cross-checks and populate the gap field.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (Dmc, DmcProblem, InputDist, Metric, ProblemError,
                   RateResult, log_with_support, mutual_information,
                   output_marginal, product_extension)
from . import optim

NEG_INF = -math.inf


def _coerce(q_in, w, m):
    q = q_in.p if isinstance(q_in, InputDist) else np.asarray(q_in, dtype=float)
    wmat = w.w if isinstance(w, Dmc) else np.asarray(w, dtype=float)
    qmat = m.q if isinstance(m, Metric) else np.asarray(m, dtype=float)
    if q.shape[0] != wmat.shape[0] or wmat.shape != qmat.shape:
        raise ProblemError("input distribution, channel, and metric shapes disagree")
    return q, wmat, qmat


def _reduce_support(q, wmat, qmat):
    """Drop zero-probability inputs and zero-probability outputs."""
    xs = q > 0
    py_full = q @ wmat
    ys = py_full > 0
    return q[xs], wmat[np.ix_(xs, ys)], qmat[np.ix_(xs, ys)], py_full[ys]


def _spow(logq, mask, s):
    """q^s with the continuity convention q^0 = 1{q > 0}."""
    return np.where(mask, np.exp(s * logq), 0.0)


def positivity_check(q_in, w, m) -> bool:
    """True when the decoding metric supports any positive rate.

    The criterion compares the metric's mean under the true joint law with
    its mean under the independent law, with minus-infinity conventions for
    zero metric entries.
    """
    q, wmat, qmat = _coerce(q_in, w, m)
    joint = q[:, None] * wmat
    py = q @ wmat
    prod = q[:, None] * py[None, :]
    logq, mask = log_with_support(qmat)
    if float(joint[~mask].sum()) > 0:
        return False
    lhs = float(np.sum(joint * np.where(mask, logq, 0.0)))
    if float(prod[~mask].sum()) > 0:
        return True
    rhs = float(np.sum(prod * np.where(mask, logq, 0.0)))
    return lhs > rhs + 1e-12


def _zero_rate(form: str) -> RateResult:
    return RateResult(0.0, form=form, certificate={"positivity": False},
                      zero_rate=True)


def gmi_dual(q_in, w, m, tol: float = 1e-9) -> RateResult:
    """iid-ensemble achievable rate, dual form: a 1-D concave supremum."""
    q, wmat, qmat = _coerce(q_in, w, m)
    if not positivity_check(q, wmat, qmat):
        return _zero_rate("dual")
    q, wmat, qmat, py = _reduce_support(q, wmat, qmat)
    joint = q[:, None] * wmat
    logq, mask = log_with_support(qmat)
    lq_true = float(np.sum(joint * np.where(mask, logq, 0.0)))
    log_q_in = np.log(q)

    def f(s):
        expo = log_q_in[:, None] + np.where(mask, s * logq, NEG_INF)
        zmax = expo.max(axis=0)
        lse = zmax + np.log(np.exp(expo - zmax[None, :]).sum(axis=0))
        return s * lq_true - float((joint.sum(axis=0) * lse).sum())

    s_star, val, rep = optim.maximize_concave_1d(f, 0.0, tol=tol)
    return RateResult(max(val, 0.0), form="dual", certificate={"s": s_star},
                      report={"evals": rep.iterations}, boundary=rep.boundary)


def gmi_primal(q_in, w, m) -> RateResult:
    """iid-ensemble rate, primal form: KL projection onto the output
    marginal and the metric-mean halfspace."""
    q, wmat, qmat = _coerce(q_in, w, m)
    if not positivity_check(q, wmat, qmat):
        return _zero_rate("primal")
    q, wmat, qmat, py = _reduce_support(q, wmat, qmat)
    joint = q[:, None] * wmat
    logq, mask = log_with_support(qmat)
    t = float(np.sum(joint * np.where(mask, logq, 0.0)))
    base = q[:, None] * py[None, :]
    p_star, s, _, rep = optim.i_projection(
        base, loglin=np.where(mask, logq, 0.0), target_mean=t,
        marginals=[((1,), py)], support=mask)
    with np.errstate(divide="ignore"):
        val = float(np.sum(np.where(p_star > 0,
                                    p_star * (np.log(np.where(p_star > 0, p_star, 1.0)) -
                                              np.log(base)), 0.0)))
    dual = gmi_dual(q, wmat, qmat)
    return RateResult(max(val, 0.0), form="primal",
                      certificate={"p_tilde": p_star, "s": s},
                      gap=val - dual.value,
                      report={"iterations": rep.iterations,
                              "converged": rep.converged})


def _lm_dual_core(q, wmat, qmat, py, tol):
    joint = q[:, None] * wmat
    logq, mask = log_with_support(qmat)
    lq_true = float(np.sum(joint * np.where(mask, logq, 0.0)))
    log_q_in = np.log(q)
    pyw = joint.sum(axis=0)
    nx = len(q)

    def split(z):
        return max(z[0], 0.0), z[1:]

    def f(z):
        s, a = split(z)
        expo = (log_q_in[:, None] + a[:, None] +
                np.where(mask, s * logq, NEG_INF))
        zmax = expo.max(axis=0)
        lse = zmax + np.log(np.exp(expo - zmax[None, :]).sum(axis=0))
        return s * lq_true + float(q @ a) - float(pyw @ lse)

    def grad(z):
        s, a = split(z)
        expo = (log_q_in[:, None] + a[:, None] +
                np.where(mask, s * logq, NEG_INF))
        zmax = expo.max(axis=0)
        wts = np.exp(expo - zmax[None, :])
        wts /= wts.sum(axis=0, keepdims=True)
        ga = q - (wts * pyw[None, :]).sum(axis=1)
        slq = np.where(mask, logq, 0.0)
        gs = lq_true - float(pyw @ (wts * slq).sum(axis=0))
        return np.concatenate(([gs], ga))

    def project(z):
        out = z.copy()
        out[0] = max(out[0], 0.0)
        out[1:] -= float(q @ out[1:])
        return out

    z0 = np.zeros(nx + 1)
    z0[0] = 1.0
    try:
        z, val, rep = optim.ascend_concave(f, grad, z0, project=project,
                                           tol=tol, max_iter=20000)
        converged = rep.converged
    except optim.StallError as e:
        z, val = e.x, e.value
        converged = True  # stalled at numerical precision of the line search
    s, a = split(z)
    return val, s, a, converged


def lm_dual(q_in, w, m, tol: float = 1e-9) -> RateResult:
    """Constant-composition rate, dual form: concave ascent over the metric
    tilt s and the input shift a(.) under the gauge E_Q[a] = 0."""
    q, wmat, qmat = _coerce(q_in, w, m)
    if not positivity_check(q, wmat, qmat):
        return _zero_rate("dual")
    q, wmat, qmat, py = _reduce_support(q, wmat, qmat)
    val, s, a, converged = _lm_dual_core(q, wmat, qmat, py, tol)
    return RateResult(max(val, 0.0), form="dual",
                      certificate={"s": s, "a": a},
                      report={"converged": converged})


def lm_primal(q_in, w, m) -> RateResult:
    """Constant-composition rate, primal form: minimum mutual information
    over couplings with both marginals pinned and the metric-mean
    constraint."""
    q, wmat, qmat = _coerce(q_in, w, m)
    if not positivity_check(q, wmat, qmat):
        return _zero_rate("primal")
    q, wmat, qmat, py = _reduce_support(q, wmat, qmat)
    joint = q[:, None] * wmat
    logq, mask = log_with_support(qmat)
    t = float(np.sum(joint * np.where(mask, logq, 0.0)))
    base = q[:, None] * py[None, :]
    p_star, s, _, rep = optim.i_projection(
        base, loglin=np.where(mask, logq, 0.0), target_mean=t,
        marginals=[((0,), q), ((1,), py)], support=mask)
    val = mutual_information(p_star)
    dual = lm_dual(q, wmat, qmat)
    return RateResult(max(val, 0.0), form="primal",
                      certificate={"p_tilde": p_star, "s": s},
                      gap=val - dual.value,
                      report={"iterations": rep.iterations,
                              "converged": rep.converged})


def lm_dual_b_form(q_in, w, m, tol: float = 1e-9) -> RateResult:
    """Constant-composition rate through the output-shift dual, which swaps
    the roles of the two alphabets relative to lm_dual."""
    q, wmat, qmat = _coerce(q_in, w, m)
    if not positivity_check(q, wmat, qmat):
        return _zero_rate("dual-b")
    q, wmat, qmat, py = _reduce_support(q, wmat, qmat)
    joint = q[:, None] * wmat
    logq, mask = log_with_support(qmat)
    lq_true = float(np.sum(joint * np.where(mask, logq, 0.0)))
    log_py = np.log(py)
    px_w = joint.sum(axis=1)
    ny = len(py)

    def split(z):
        return max(z[0], 0.0), z[1:]

    def f(z):
        s, b = split(z)
        expo = (log_py[None, :] + b[None, :] +
                np.where(mask, s * logq, NEG_INF))
        zmax = expo.max(axis=1)
        lse = zmax + np.log(np.exp(expo - zmax[:, None]).sum(axis=1))
        return s * lq_true + float(joint.sum(axis=0) @ b) - float(px_w @ lse)

    def grad(z):
        s, b = split(z)
        expo = (log_py[None, :] + b[None, :] +
                np.where(mask, s * logq, NEG_INF))
        zmax = expo.max(axis=1)
        wts = np.exp(expo - zmax[:, None])
        wts /= wts.sum(axis=1, keepdims=True)
        gb = joint.sum(axis=0) - (wts * px_w[:, None]).sum(axis=0)
        slq = np.where(mask, logq, 0.0)
        gs = lq_true - float(px_w @ (wts * slq).sum(axis=1))
        return np.concatenate(([gs], gb))

    def project(z):
        out = z.copy()
        out[0] = max(out[0], 0.0)
        out[1:] -= float(py @ out[1:])
        return out

    z0 = np.zeros(ny + 1)
    z0[0] = 1.0
    try:
        z, val, rep = optim.ascend_concave(f, grad, z0, project=project,
                                           tol=tol, max_iter=20000)
    except optim.StallError as e:
        z, val = e.x, e.value
    s, b = split(z)
    return RateResult(max(val, 0.0), form="dual-b",
                      certificate={"s": s, "b": b})


def fixed_cost_lm(q_in, w, m, costs: Sequence = (), tol: float = 1e-9) -> RateResult:
    """Achievable rate with a fixed list of auxiliary input costs.

    The shift is restricted to the span of the given cost vectors; an empty
    list reduces to the iid-ensemble rate and the span of an optimal shift
    recovers the constant-composition rate.
    """
    q, wmat, qmat = _coerce(q_in, w, m)
    if not positivity_check(q, wmat, qmat):
        return _zero_rate("fixed-cost")
    a_mat = np.asarray([np.asarray(c, dtype=float) for c in costs], dtype=float)
    if a_mat.size and a_mat.shape[1] != len(q):
        raise ProblemError("cost vectors must live on the input alphabet")
    if a_mat.size and not np.all(np.isfinite(a_mat)):
        raise ProblemError("cost vectors must be finite")
    keep = q > 0
    a_mat = a_mat[:, keep] if a_mat.size else a_mat.reshape(0, int(keep.sum()))
    q, wmat, qmat, py = _reduce_support(q, wmat, qmat)
    joint = q[:, None] * wmat
    logq, mask = log_with_support(qmat)
    lq_true = float(np.sum(joint * np.where(mask, logq, 0.0)))
    log_q_in = np.log(q)
    pyw = joint.sum(axis=0)
    n_costs = len(a_mat)

    def split(z):
        return max(z[0], 0.0), (z[1:] @ a_mat if n_costs else np.zeros(len(q)))

    def f(z):
        s, a = split(z)
        expo = (log_q_in[:, None] + a[:, None] +
                np.where(mask, s * logq, NEG_INF))
        zmax = expo.max(axis=0)
        lse = zmax + np.log(np.exp(expo - zmax[None, :]).sum(axis=0))
        return s * lq_true + float((joint.sum(axis=1)) @ a) - float(pyw @ lse)

    def grad(z):
        s, a = split(z)
        expo = (log_q_in[:, None] + a[:, None] +
                np.where(mask, s * logq, NEG_INF))
        zmax = expo.max(axis=0)
        wts = np.exp(expo - zmax[None, :])
        wts /= wts.sum(axis=0, keepdims=True)
        ga_full = joint.sum(axis=1) - (wts * pyw[None, :]).sum(axis=1)
        slq = np.where(mask, logq, 0.0)
        gs = lq_true - float(pyw @ (wts * slq).sum(axis=0))
        gr = a_mat @ ga_full if n_costs else np.zeros(0)
        return np.concatenate(([gs], gr))

    def project(z):
        out = z.copy()
        out[0] = max(out[0], 0.0)
        return out

    z0 = np.zeros(1 + n_costs)
    z0[0] = 1.0
    try:
        z, val, rep = optim.ascend_concave(f, grad, z0, project=project,
                                           tol=tol, max_iter=20000)
    except optim.StallError as e:
        z, val = e.x, e.value
    s, _ = split(z)
    return RateResult(max(val, 0.0), form="fixed-cost",
                      certificate={"s": s, "r": z[1:].copy()})


def matched_equivalence_check(q_in, w, m, which: str = "lm") -> str:
    """Classify whether the metric attains the matched rate.

    Returns "exact" when a finite metric transform reproduces maximum
    likelihood on the support, "boundary" when only an unbounded-tilt limit
    does, and "no" otherwise.  ``which`` selects the constant-composition
    ("lm", input and output shifts) or iid ("gmi", output shift only)
    transform family.
    """
    q, wmat, qmat = _coerce(q_in, w, m)
    if not positivity_check(q, wmat, qmat):
        return "no"
    py = q @ wmat
    xs, ys = np.where(q > 0)[0], np.where(py > 0)[0]
    logq, mask = log_with_support(qmat)
    use_a = which == "lm"
    nx, ny = len(xs), len(ys)
    rows = []
    rhs = []
    cells_a = [(x, y) for x in xs for y in ys if wmat[x, y] > 0]
    if any(not mask[x, y] for x, y in cells_a):
        return "no"
    n_unknown = 1 + (nx if use_a else 0) + ny
    xi = {x: i for i, x in enumerate(xs)}
    yi = {y: i for i, y in enumerate(ys)}
    for x, y in cells_a:
        row = np.zeros(n_unknown)
        row[0] = logq[x, y]
        if use_a:
            row[1 + xi[x]] = 1.0
        row[n_unknown - ny + yi[y]] = 1.0
        rows.append(row)
        rhs.append(math.log(wmat[x, y]))
    A = np.array(rows)
    bvec = np.array(rhs)
    sol, _, rank, _ = np.linalg.lstsq(A, bvec, rcond=None)
    residual = float(np.max(np.abs(A @ sol - bvec)))
    if residual > 1e-9:
        return "no"
    # Null directions of the fitted system allow trading s against shifts.
    _, sv, vt = np.linalg.svd(A)
    null = vt[rank:] if rank < n_unknown else np.zeros((0, n_unknown))
    s_fit = sol[0]
    s_adjustable = null.size and np.max(np.abs(null[:, 0])) > 1e-9
    if s_fit < -1e-9 and not s_adjustable:
        return "no"
    cells_b = [(x, y) for x in xs for y in ys
               if wmat[x, y] <= 0 and mask[x, y]]
    if not cells_b:
        return "exact"
    if null.size == 0:
        return "no"
    # Boundary needs a null direction strictly decreasing the transformed
    # metric on every q-positive zero-channel cell, without driving s < 0.
    mrows = []
    for x, y in cells_b:
        row = np.zeros(n_unknown)
        row[0] = logq[x, y]
        if use_a:
            row[1 + xi[x]] = 1.0
        row[n_unknown - ny + yi[y]] = 1.0
        mrows.append(row @ null.T)
    mat = np.array(mrows)
    ds_row = null[:, 0]

    def make_piece(v):
        return (lambda c, v=v: float(v @ c), lambda c, v=v: v.copy())

    def ball(c):
        nrm = float(np.linalg.norm(c))
        return c / nrm if nrm > 1.0 else c

    pieces = [make_piece(v) for v in mat]
    if abs(s_fit) < 1e-9 or s_fit < 0:
        pieces.append(make_piece(-ds_row))
    c0 = np.full(null.shape[0], 1.0 / math.sqrt(null.shape[0]))
    _, best, _ = optim.subgradient_min_max(pieces, ball, c0,
                                           max_iter=5000, patience=400)
    return "boundary" if best < -1e-9 else "no"


def binary_mismatch_capacity(w, m, tol: float = 1e-10) -> float:
    """Mismatch capacity of a 2x2 channel, in nats.

    Equals the matched capacity when the metric's log cross-ratio has the
    same sign as the channel's, and zero otherwise.
    """
    wmat = w.w if isinstance(w, Dmc) else np.asarray(w, dtype=float)
    qmat = m.q if isinstance(m, Metric) else np.asarray(m, dtype=float)
    if wmat.shape != (2, 2) or qmat.shape != (2, 2):
        raise ProblemError("binary closed form needs 2x2 channel and metric")

    def cross_sign(mat):
        with np.errstate(divide="ignore"):
            lg = np.where(mat > 0, np.log(np.where(mat > 0, mat, 1.0)), NEG_INF)
        v = lg[0, 0] + lg[1, 1] - lg[0, 1] - lg[1, 0]
        if math.isnan(v):
            return 0
        if v > 1e-12:
            return 1
        if v < -1e-12:
            return -1
        return 0

    if cross_sign(qmat) != cross_sign(wmat):
        return 0.0
    c, _, _ = optim.blahut_arimoto_capacity(wmat, tol=tol)
    return c


def multiletter_rate(w, m, k: int, q_k, which: str = "lm") -> RateResult:
    """Rate of the k-letter product channel at a joint input law, per letter."""
    w_in = w if isinstance(w, Dmc) else Dmc(np.asarray(w, dtype=float))
    m_in = m if isinstance(m, Metric) else Metric(np.asarray(m, dtype=float))
    w_k, m_k = product_extension(w_in, m_in, k)
    q_k = q_k.p if isinstance(q_k, InputDist) else np.asarray(q_k, dtype=float)
    if len(q_k) != w_k.nx:
        raise ProblemError(f"input law must live on the {k}-letter alphabet")
    fn = lm_dual if which == "lm" else gmi_dual
    res = fn(q_k, w_k, m_k)
    return RateResult(res.value / k, form=f"{res.form}-{k}letter",
                      certificate=res.certificate, zero_rate=res.zero_rate,
                      boundary=res.boundary, report={"k": k})


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    cond = u - css / idx > 0
    rho = int(np.nonzero(cond)[0][-1]) + 1
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def optimize_input(rate_fn: Callable, dim: int, n_starts: int = 8,
                   grid_step: Optional[float] = None, seed: int = 0):
    """Best input distribution found by multi-start local search.

    Finite-difference projected gradient ascent from uniform plus seeded
    Dirichlet starts, optionally preceded by a 1-D or 2-D simplex grid scan.
    The result is a local optimum, not a certified global one.
    """
    rng = np.random.default_rng(seed)
    starts = [np.full(dim, 1.0 / dim)]
    for _ in range(max(n_starts - 1, 0)):
        starts.append(rng.dirichlet(np.full(dim, 0.6)))
    if grid_step is not None:
        if dim == 2:
            grid = [np.array([p, 1.0 - p])
                    for p in np.arange(0.0, 1.0 + grid_step / 2, grid_step)]
        elif dim == 3:
            pts = np.arange(0.0, 1.0 + grid_step / 2, grid_step)
            grid = [np.array([p1, p2, 1.0 - p1 - p2])
                    for p1 in pts for p2 in pts if p1 + p2 <= 1.0 + 1e-12]
        else:
            raise ProblemError("grid scan supported for dimensions 2 and 3 only")
        best_g, best_gv = None, -math.inf
        for g in grid:
            v = rate_fn(np.maximum(g, 0.0) / max(g.sum(), 1e-300))
            if v > best_gv:
                best_g, best_gv = g, v
        starts.insert(0, best_g)

    def local(q0):
        x = _project_simplex(np.asarray(q0, dtype=float))
        fx = rate_fn(x)
        step = 0.1
        for _ in range(200):
            g = np.zeros(dim)
            h = 1e-6
            for i in range(dim):
                e = np.zeros(dim)
                e[i] = h
                g[i] = (rate_fn(_project_simplex(x + e)) -
                        rate_fn(_project_simplex(x - e))) / (2 * h)
            improved = False
            while step > 1e-12:
                xn = _project_simplex(x + step * g)
                fn_ = rate_fn(xn)
                if fn_ > fx + 1e-12:
                    x, fx = xn, fn_
                    step *= 2.0
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
        return x, fx

    best_q, best_v = None, -math.inf
    for q0 in starts:
        qf, vf = local(q0)
        if vf > best_v:
            best_q, best_v = qf, vf
    return best_q, best_v
