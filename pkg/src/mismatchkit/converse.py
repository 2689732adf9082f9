"""Single-letter upper bound on the mismatch capacity.

The bound compares the decoder's scores on pairs of outputs: for each pair
(y, ybar) only the inputs that maximize the log-metric difference may carry
mass.  Couplings over output pairs supported on those maximizers, with the
true channel as their first marginal, form a convex polytope; the bound is
the smallest matched capacity among their second marginals.  That capacity
is convex in the coupling and is minimized by conditional gradient steps
whose linear subproblems split across (input, output) fibers, with an
alternating-projection subgradient fallback.  Rates are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import optim
from .core import Dmc, InfeasibleError, Metric, ProblemError, product_extension

TIE_TOL = 1e-12
CHECK_TOL = 1e-9


@dataclass(frozen=True)
class MaximalSets:
    """Boolean table member[x, y, ybar] marking the inputs that maximize
    log q(x, ybar) - log q(x, y) for each output pair."""

    member: np.ndarray

    def __post_init__(self):
        mem = np.asarray(self.member, dtype=bool)
        if mem.ndim != 3 or mem.shape[1] != mem.shape[2]:
            raise ProblemError(f"membership table has shape {mem.shape}")
        if not mem.any(axis=0).all():
            raise ProblemError("every output pair needs at least one input")
        object.__setattr__(self, "member", mem)

    @property
    def nx(self) -> int:
        return self.member.shape[0]

    @property
    def ny(self) -> int:
        return self.member.shape[1]


@dataclass(frozen=True)
class MaximalJoint:
    """Conditional coupling p[x, y, ybar] = P(y, ybar | x) over output pairs."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 3 or p.shape[1] != p.shape[2]:
            raise ProblemError(f"coupling has shape {p.shape}")
        if np.any(p < 0):
            raise ProblemError("coupling entries must be nonnegative")
        sums = p.sum(axis=(1, 2))
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ProblemError("each input's coupling must sum to 1")
        object.__setattr__(self, "p", p / sums[:, None, None])

    @property
    def channel_marginal(self) -> np.ndarray:
        """P(y|x), which feasible couplings pin to the true channel."""
        return self.p.sum(axis=2)

    @property
    def aux_channel(self) -> np.ndarray:
        """P(ybar|x), the auxiliary channel whose capacity is the bound."""
        return self.p.sum(axis=1)


def _mats(w, m):
    wmat = w.w if isinstance(w, Dmc) else Dmc(np.asarray(w, dtype=float)).w
    qmat = m.q if isinstance(m, Metric) else Metric(np.asarray(m, dtype=float)).q
    if qmat.shape != wmat.shape:
        raise ProblemError(
            f"metric shape {qmat.shape} does not match channel {wmat.shape}")
    return wmat, qmat


def maximal_input_sets(m) -> MaximalSets:
    """Inputs maximizing the log-metric difference for every output pair.

    Zero metric entries follow a fixed convention: a zero at the first
    output with a positive entry at the second scores +inf, the reverse
    scores -inf, and inputs scoring 0/0 are left out of the argmax unless
    the pair excludes every input, in which case they all qualify.
    """
    qmat = m.q if isinstance(m, Metric) else Metric(np.asarray(m, dtype=float)).q
    pos = qmat > 0
    logq = np.log(np.where(pos, qmat, 1.0))
    pos_y = pos[:, :, None]
    pos_b = pos[:, None, :]
    score = np.where(pos_y & pos_b, logq[:, None, :] - logq[:, :, None],
                     np.where(pos_b, np.inf, -np.inf))
    included = pos_y | pos_b
    top = np.max(np.where(included, score, -np.inf), axis=0)
    member = included & (score >= top[None, :, :] - TIE_TOL)
    empty = ~included.any(axis=0)
    if empty.any():
        member |= empty[None, :, :]
    return MaximalSets(member)


def verify_maximal(p, m, w) -> bool:
    """Check the two feasibility families: the first output marginal equals
    the channel, and mass sits only on maximizing inputs."""
    pj = p.p if isinstance(p, MaximalJoint) else MaximalJoint(np.asarray(p, dtype=float)).p
    wmat, _ = _mats(w, m)
    if pj.shape != (wmat.shape[0], wmat.shape[1], wmat.shape[1]):
        raise ProblemError(
            f"coupling shape {pj.shape} does not match channel {wmat.shape}")
    member = maximal_input_sets(m).member
    if np.abs(pj.sum(axis=2) - wmat).max() > CHECK_TOL:
        return False
    return float(np.where(member, 0.0, pj).max()) <= CHECK_TOL


def _feasible_start(wmat, member, spread: bool) -> np.ndarray:
    """Coupling that keeps each output in place when allowed, or spreads the
    channel mass uniformly over the allowed second outputs."""
    nx, ny = wmat.shape
    mass = np.zeros((nx, ny, ny))
    for x in range(nx):
        for y in range(ny):
            if wmat[x, y] <= 0:
                continue
            allowed = member[x, y]
            if not allowed.any():
                raise InfeasibleError(
                    f"no admissible second output for input {x}, output {y}")
            if not spread and allowed[y]:
                mass[x, y, y] = wmat[x, y]
            else:
                mass[x, y, allowed] = wmat[x, y] / int(allowed.sum())
    return mass


def _capacity_oracle():
    """Capacity of the second marginal plus its derivative in the coupling.

    The value and gradient land at the same iterate, so one solve serves
    both; the gradient coefficient follows from fixing the maximizing input
    law, with vanished cells and unused inputs contributing zero.
    """
    cache = {}

    def solve(mass):
        key = mass.tobytes()
        if cache.get("key") != key:
            v = mass.sum(axis=1)
            cap, qstar, _ = optim.blahut_arimoto_capacity(v, tol=1e-11)
            pbar = qstar @ v
            coef = qstar[:, None] * (np.log(np.clip(v, 1e-30, None))
                                     - np.log(np.clip(pbar, 1e-30, None))[None, :])
            cache.update(key=key, cap=cap, coef=coef)
        return cache["cap"], cache["coef"]

    return solve


def single_letter_upper_bound(w, m, tol: float = 1e-6):
    """Minimize the auxiliary-channel capacity over admissible couplings.

    Returns (bound in nats, witness coupling, report).  The objective is
    convex, so a linearized gap below tol certifies the value to that
    accuracy; a non-converged report still carries a valid upper bound,
    since every feasible coupling bounds the minimum from above.
    """
    wmat, qmat = _mats(w, m)
    member = maximal_input_sets(qmat).member
    missing = (wmat > 0) & ~member.any(axis=2)
    if missing.any():
        x, y = np.argwhere(missing)[0]
        raise InfeasibleError(
            f"no admissible second output for input {x}, output {y}")

    solve = _capacity_oracle()

    def obj(mass):
        return solve(mass)[0]

    def grad(mass):
        return np.broadcast_to(solve(mass)[1][:, None, :], mass.shape)

    def lp_oracle(g):
        pick = np.where(member, g, np.inf).argmin(axis=2)
        v = np.zeros_like(g)
        np.put_along_axis(v, pick[:, :, None], wmat[:, :, None], axis=2)
        return v

    best_x, best_f, best_rep = None, np.inf, None
    for spread in (False, True):
        x0 = _feasible_start(wmat, member, spread)
        bx, bf, rep = optim.frank_wolfe_min(obj, grad, lp_oracle, x0,
                                            tol=tol, cap=4000)
        if bf < best_f:
            best_x, best_f, best_rep = bx, bf, rep
        if rep.converged:
            break

    if not best_rep.converged:
        fallback = _projection_factory(wmat, member)
        bx, bf, rep = optim.subgradient_min_max(
            [(obj, lambda mass: grad(mass).copy())], fallback, best_x,
            tol=1e-10, max_iter=5000, patience=500)
        if bf < best_f:
            best_x, best_f, best_rep = bx, bf, rep

    return float(best_f), MaximalJoint(best_x), best_rep


def _projection_factory(wmat, member):
    """Exact Euclidean projection onto the coupling polytope, which splits
    into one scaled simplex per (input, output) fiber."""
    nx, ny = wmat.shape
    flat_mask = member.reshape(nx * ny, ny)
    targets = wmat.reshape(nx * ny)
    idx = np.arange(1, ny + 1)
    rows = np.arange(nx * ny)

    def project(p0):
        z = np.where(flat_mask, np.asarray(p0).reshape(nx * ny, ny), -np.inf)
        u = -np.sort(-z, axis=1)
        finite = np.isfinite(u)
        csum = np.cumsum(np.where(finite, u, 0.0), axis=1)
        cond = finite & (u * idx[None, :] > csum - targets[:, None])
        rho = cond.sum(axis=1)
        safe = np.maximum(rho, 1)
        tau = (csum[rows, safe - 1] - targets) / safe
        p = np.maximum(z - tau[:, None], 0.0)
        p[rho == 0] = 0.0
        return p.reshape(nx, ny, ny)

    return project


def multiletter_bound_check(w, m, k: int = 2, tol: float = 1e-6):
    """Bound on the product channel against the single-letter value; the two
    agree per letter, so the pair doubles as a solver consistency check."""
    wmat, qmat = _mats(w, m)
    single, _, _ = single_letter_upper_bound(wmat, qmat, tol=tol)
    wk, mk = product_extension(Dmc(wmat), Metric(qmat), k)
    multi, _, _ = single_letter_upper_bound(wk, mk, tol=tol)
    return single, multi / k
