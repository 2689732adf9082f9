"""Reusable optimization primitives.

Five solvers cover every program in the toolkit:

* :func:`maximize_concave_1d` for scalar suprema (tilt exponents, Gallager
  parameters) with bracketing by doubling and golden-section refinement;
* :func:`ascend_concave` projected gradient ascent for the multivariate dual
  objectives in (s, a, b) coordinates;
* :func:`frank_wolfe_min` conditional gradient over polytopes whose linear
  subproblems have closed-form vertex oracles;
* :func:`i_projection` Sinkhorn-style scaling for KL minimization under fixed
  marginals plus one linear-mean constraint, with an outer bisection on the
  tilt exponent;
* :func:`blahut_arimoto_capacity` and :func:`subgradient_min_max` for the
  capacity subproblem and max-of-convex-pieces minimizations.

No general-purpose LP or QP solver is used anywhere: every polytope in scope
admits either a closed-form vertex oracle or a scaling algorithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import InfeasibleError, ProblemError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
S_CAP = 2.0**40


class StallError(RuntimeError):
    """Ascent stopped improving before reaching its tolerance."""

    def __init__(self, message: str, x=None, value=None, report=None):
        super().__init__(message)
        self.x = x
        self.value = value
        self.report = report


@dataclass(frozen=True)
class DualParams:
    """Dual variables of the rate and exponent programs.

    s is the metric tilt, a and b the input/output shifts, rho the Gallager
    parameter, r the auxiliary-cost weights.  Unused slots stay None.
    """

    s: float = 0.0
    a: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    rho: Optional[float] = None
    r: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    converged: bool
    boundary: bool = False
    final_step: float = 0.0
    trace_len: int = 0


def maximize_concave_1d(f: Callable[[float], float], lo: float, tol: float = 1e-9,
                        cap: float = S_CAP, step0: float = 1.0):
    """Maximize a concave function on [lo, inf).

    Brackets by doubling the offset from lo until f decreases or the offset
    exceeds ``cap`` (boundary flag set, value at the cap returned), then
    golden-section to interval width tol.  Returns (argmax, max, report).
    """

    def ev(x: float) -> float:
        v = f(x)
        if math.isnan(v):
            raise ProblemError(f"objective returned NaN at {x!r}")
        return v

    evals = 0
    f_lo = ev(lo)
    evals += 1
    offsets = [0.0, step0]
    while offsets[-1] < cap:
        offsets.append(min(2.0 * offsets[-1], cap))
    xs = [lo + o for o in offsets]
    fs = [f_lo]
    hit_cap = True
    for i in range(1, len(xs)):
        fi = ev(xs[i])
        evals += 1
        fs.append(fi)
        if fi < fs[i - 1]:
            hit_cap = False
            break
    if hit_cap:
        return xs[-1], fs[-1], SolveReport(evals, True, boundary=True)
    # Concavity puts the maximum inside [x_{i-2}, x_i] (or [lo, x_1] if i == 1).
    left = xs[i - 2] if i >= 2 else lo
    right = xs[i]
    a, b = left, right
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = ev(c), ev(d)
    evals += 2
    while (b - a) > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = ev(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = ev(d)
        evals += 1
    x_star = (a + b) / 2.0
    f_star = ev(x_star)
    evals += 1
    # The bracket endpoints may beat the midpoint when the max sits at lo.
    for xe, fe in ((a, None), (b, None), (lo, f_lo)):
        fe = ev(xe) if fe is None else fe
        if fe > f_star:
            x_star, f_star = xe, fe
    return x_star, f_star, SolveReport(evals, True, boundary=False)


def ascend_concave(f: Callable, grad: Callable, x0: np.ndarray,
                   project: Optional[Callable] = None, tol: float = 1e-8,
                   max_iter: int = 5000):
    """Projected gradient ascent with backtracking for concave objectives.

    ``project`` maps a point back to the feasible slice (clamping tilts at 0,
    re-centering shift gauges); identity when omitted.  Stops when the probe
    movement norm ||project(x + u*g) - x||/u falls below tol.  Fifty failed
    backtracking halvings in one line search raise :class:`StallError`
    carrying the best iterate.
    """
    proj = project if project is not None else (lambda z: z)
    x = proj(np.asarray(x0, dtype=float).copy())
    fx = f(x)
    if math.isnan(fx):
        raise ProblemError("objective returned NaN at the starting point")
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        g = np.asarray(grad(x), dtype=float)
        u = 1e-6
        probe = proj(x + u * g)
        pg_norm = float(np.linalg.norm(probe - x)) / u
        if pg_norm <= tol:
            return x, fx, SolveReport(it, True, final_step=step)
        accepted = False
        for _ in range(50):
            xn = proj(x + step * g)
            fn = f(xn)
            if not math.isnan(fn) and fn > fx + 1e-4 * min(0.0, float(g @ (xn - x))) and fn > fx:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise StallError(
                f"no improving step after 50 backtracks (iteration {it})",
                x=x, value=fx, report=SolveReport(it, False, final_step=step),
            )
        x, fx = xn, fn
        step *= 2.0
    return x, fx, SolveReport(max_iter, False, final_step=step)


def frank_wolfe_min(obj: Callable, grad: Callable, lp_oracle: Callable,
                    x0: np.ndarray, tol: float = 1e-7, cap: int = 20000):
    """Conditional gradient over a polytope with an exact vertex oracle.

    Standard step 2/(t+2); stops when the linearized duality gap
    <grad(x), x - v> drops to tol.  Returns (best x, best value, report).
    """
    x = np.asarray(x0, dtype=float).copy()
    fx = obj(x)
    best_x, best_f = x.copy(), fx
    gap = math.inf
    t = 0
    for t in range(cap):
        g = grad(x)
        v = lp_oracle(g)
        gap = float(np.sum(g * (x - v)))
        if gap <= tol:
            if fx < best_f:
                best_x, best_f = x.copy(), fx
            return best_x, best_f, SolveReport(t + 1, True, final_step=2.0 / (t + 2.0))
        step = 2.0 / (t + 2.0)
        x = x + step * (v - x)
        fx = obj(x)
        if fx < best_f:
            best_x, best_f = x.copy(), fx
    return best_x, best_f, SolveReport(cap, False, final_step=2.0 / (cap + 1.0))


# ---------------------------------------------------------------------------
# I-projection: Sinkhorn scalings + outer tilt bisection
# ---------------------------------------------------------------------------


def _marginal_axes(shape: tuple, keep: tuple) -> tuple:
    return tuple(ax for ax in range(len(shape)) if ax not in keep)


def _expand(arr: np.ndarray, shape: tuple, keep: tuple) -> np.ndarray:
    """Broadcast an array indexed by the kept axes back to the full shape."""
    idx = [None] * len(shape)
    for pos, ax in enumerate(sorted(keep)):
        idx[ax] = slice(None)
    return np.asarray(arr)[tuple(idx[ax] if idx[ax] is not None else None for ax in range(len(shape)))]


class _ScalingState:
    """Log-domain IPF over an arbitrary list of fixed-marginal families."""

    def __init__(self, log_base: np.ndarray, support: np.ndarray,
                 marginals: Sequence[tuple], loglin: Optional[np.ndarray]):
        self.shape = log_base.shape
        self.support = support
        self.neg_inf = -1e300
        self.log_base = np.where(support, log_base, self.neg_inf)
        self.loglin = np.zeros(self.shape) if loglin is None else np.asarray(loglin, dtype=float)
        self.marginals = []
        for keep, target in marginals:
            keep = tuple(sorted(keep))
            target = np.asarray(target, dtype=float)
            self.marginals.append((keep, target))
        self.shifts = [np.zeros(t.shape) for _, t in self.marginals]

    def log_p(self, s: float) -> np.ndarray:
        lp = self.log_base + s * self.loglin
        for (keep, _), shift in zip(self.marginals, self.shifts):
            lp = lp + _expand(shift, self.shape, keep)
        return np.where(self.support, lp, self.neg_inf)

    def _log_marginal(self, lp: np.ndarray, keep: tuple) -> np.ndarray:
        axes = _marginal_axes(self.shape, keep)
        if not axes:
            return lp
        m = np.max(lp, axis=axes)
        safe = np.where(m <= self.neg_inf / 2, 0.0, m)
        with np.errstate(divide="ignore"):
            out = safe + np.log(np.sum(np.exp(lp - _expand(safe, self.shape, keep)), axis=axes))
        return np.where(m <= self.neg_inf / 2, self.neg_inf, out)

    def fit(self, s: float, inner_tol: float = 1e-12, max_sweeps: int = 20000) -> np.ndarray:
        """Run IPF sweeps at tilt s until every marginal matches its target."""
        if not self.marginals:
            lp = self.log_p(s)
            flat = lp[self.support]
            z = np.max(flat)
            total = z + math.log(np.sum(np.exp(flat - z)))
            p = np.zeros(self.shape)
            p[self.support] = np.exp(lp[self.support] - total)
            return p
        with np.errstate(divide="ignore"):
            log_targets = [
                np.where(t > 0, np.log(np.where(t > 0, t, 1.0)), self.neg_inf)
                for _, t in self.marginals
            ]
        for sweep in range(max_sweeps):
            err = 0.0
            for j, (keep, target) in enumerate(self.marginals):
                lp = self.log_p(s)
                lm = self._log_marginal(lp, keep)
                adj = np.where(
                    lm <= self.neg_inf / 2,
                    np.where(target > 0, math.inf, 0.0),
                    log_targets[j] - lm,
                )
                if np.any(np.isinf(adj) & (adj > 0)):
                    raise InfeasibleError(
                        "a fixed marginal requires mass on an empty support slice"
                    )
                self.shifts[j] = self.shifts[j] + adj
            lp = self.log_p(s)
            for j, (keep, target) in enumerate(self.marginals):
                cur = np.exp(np.clip(self._log_marginal(lp, keep), self.neg_inf, 50.0))
                err = max(err, float(np.max(np.abs(cur - target))))
            if err <= inner_tol:
                break
        p = np.exp(np.clip(self.log_p(s), self.neg_inf, 50.0))
        p[~self.support] = 0.0
        total = p.sum()
        if not (0.5 < total < 2.0):
            raise InfeasibleError(f"scaling failed to normalize (total {total!r})")
        return p / total


def i_projection(base: np.ndarray, loglin: Optional[np.ndarray] = None,
                 target_mean: Optional[float] = None,
                 marginals: Sequence[tuple] = (),
                 support: Optional[np.ndarray] = None,
                 inner_tol: float = 1e-12, outer_tol: float = 1e-9,
                 s_cap: float = S_CAP):
    """KL-projection of ``base`` onto marginal and mean constraints.

    Minimizes KL(P || base) over tensors P with P >= 0 supported inside
    ``support``, fixed marginals (each entry of ``marginals`` is a pair
    ``(axes_to_keep, target)``), and, when ``loglin``/``target_mean`` are
    given, the linear constraint E_P[loglin] >= target_mean.  The minimizer
    has the exponential-tilt form base * e^{s loglin} * prod(scalings); the
    inner loop alternates marginal scalings, the outer loop bisects the tilt
    s >= 0 until the mean constraint holds with equality when active (s = 0
    when inactive).

    Returns (P, s, shifts, report).  Raises InfeasibleError with the
    achievable mean range when no tilt in [0, s_cap] reaches target_mean.
    """
    base = np.asarray(base, dtype=float)
    sup = base > 0
    if support is not None:
        sup = sup & np.asarray(support, dtype=bool)
    # Slices whose fixed marginal is zero carry no mass.
    for keep, target in marginals:
        target = np.asarray(target, dtype=float)
        sup = sup & _expand(target > 0, base.shape, tuple(sorted(keep)))
    if not sup.any():
        raise InfeasibleError("empty support after restriction")
    with np.errstate(divide="ignore"):
        log_base = np.where(sup, np.log(np.where(sup, base, 1.0)), 0.0)
    state = _ScalingState(log_base, sup, marginals, loglin)

    def mean_at(s: float):
        p = state.fit(s, inner_tol=inner_tol)
        return p, float(np.sum(p * state.loglin))

    if loglin is None or target_mean is None:
        p = state.fit(0.0, inner_tol=inner_tol)
        return p, 0.0, state.shifts, SolveReport(1, True)

    evals = 1
    p0, m0 = mean_at(0.0)
    if m0 >= target_mean - outer_tol:
        return p0, 0.0, state.shifts, SolveReport(evals, True)
    s_lo, s_hi = 0.0, 1.0
    m_lo = m0
    while True:
        p_hi, m_hi = mean_at(s_hi)
        evals += 1
        if m_hi >= target_mean:
            break
        if s_hi >= s_cap:
            raise InfeasibleError(
                f"mean constraint unreachable: target {target_mean!r} outside"
                f" achievable range", achievable=(m0, m_hi),
            )
        s_lo, m_lo = s_hi, m_hi
        s_hi = min(2.0 * s_hi, s_cap)
    p = p_hi
    s_mid = s_hi
    while abs(s_hi - s_lo) > 1e-14 * (1.0 + s_hi):
        s_mid = 0.5 * (s_lo + s_hi)
        p, m_mid = mean_at(s_mid)
        evals += 1
        if abs(m_mid - target_mean) <= outer_tol:
            return p, s_mid, state.shifts, SolveReport(evals, True)
        if m_mid < target_mean:
            s_lo = s_mid
        else:
            s_hi = s_mid
    p, m_fin = mean_at(s_hi)
    converged = abs(m_fin - target_mean) <= max(outer_tol, 1e-7)
    return p, s_hi, state.shifts, SolveReport(evals, converged, boundary=not converged)


def blahut_arimoto_capacity(v, tol: float = 1e-10, max_iter: int = 200000):
    """Channel capacity by alternating maximization with the classic bracket.

    Stops when the upper/lower capacity bracket gap falls below tol; returns
    (capacity nats, maximizing input distribution, report).
    """
    from .core import CondDist

    mat = v.v if isinstance(v, CondDist) else np.asarray(v, dtype=float)
    nx = mat.shape[0]
    q = np.full(nx, 1.0 / nx)
    sup = mat > 0
    with np.errstate(divide="ignore"):
        log_v = np.where(sup, np.log(np.where(sup, mat, 1.0)), 0.0)
    lower = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        py = q @ mat
        with np.errstate(divide="ignore"):
            log_py = np.where(py > 0, np.log(np.where(py > 0, py, 1.0)), 0.0)
        d = np.sum(np.where(sup, mat * (log_v - log_py[None, :]), 0.0), axis=1)
        upper = float(np.max(d))
        z = float(np.max(d))
        lower = z + math.log(float(q @ np.exp(d - z)))
        if upper - lower <= tol:
            return lower, q, SolveReport(it, True)
        q = q * np.exp(d - z)
        q = q / q.sum()
    return lower, q, SolveReport(max_iter, False)


def subgradient_min_max(pieces: Sequence[tuple], project: Callable,
                        x0: np.ndarray, tol: float = 1e-9,
                        max_iter: int = 20000, patience: int = 500):
    """Minimize max_i f_i(x) by projected subgradient with best-iterate tracking.

    ``pieces`` is a list of (value, subgradient) callables of convex
    functions; ``project`` maps onto the feasible set.  Steps follow c/sqrt(t)
    with c calibrated from the initial subgradient norm.  Returns
    (best x, best value, report).
    """

    def eval_max(x):
        vals = [f(x) for f, _ in pieces]
        k = int(np.argmax(vals))
        return vals[k], k

    x = project(np.asarray(x0, dtype=float).copy())
    fx, k = eval_max(x)
    best_x, best_f = x.copy(), fx
    g0 = np.asarray(pieces[k][1](x), dtype=float)
    c = 1.0 / max(float(np.linalg.norm(g0)), 1e-12)
    since_improve = 0
    it = 0
    for it in range(1, max_iter + 1):
        fx, k = eval_max(x)
        if fx < best_f - tol:
            best_x, best_f = x.copy(), fx
            since_improve = 0
        else:
            best_f = min(best_f, fx)
            since_improve += 1
            if since_improve >= patience:
                return best_x, best_f, SolveReport(it, True)
        g = np.asarray(pieces[k][1](x), dtype=float)
        x = project(x - (c / math.sqrt(it)) * g)
    return best_x, best_f, SolveReport(max_iter, False)
