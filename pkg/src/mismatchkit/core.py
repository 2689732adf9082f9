"""Channel, metric, and distribution types plus basic information measures.

Everything downstream builds on the objects defined here: a discrete
memoryless channel ``Dmc`` (row-stochastic matrix ``w[x, y]``), a nonnegative
decoding ``Metric`` ``q[x, y]`` whose product the decoder maximizes, and
probability containers with simplex invariants.  All information quantities
are returned in nats; conversion to bits happens only at the CLI boundary.

Zero probabilities and zero metric entries are handled by explicit support
masks (see :func:`log_with_support`); raw ``-inf`` values never enter the
optimizers in :mod:`mismatchkit.optim`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

LOG2 = math.log(2.0)

# Simplex tolerances: strict at construction, looser after arithmetic.
SIMPLEX_TOL = 1e-12
SIMPLEX_TOL_LOOSE = 1e-10
# parse_problem renormalizes rows only this close to 1; anything worse is rejected.
ROW_SUM_TOL = 1e-9


class ProblemError(ValueError):
    """Malformed problem data: shape, sign, or stochasticity violations."""


class InfeasibleError(ValueError):
    """Empty constraint set.  Carries the achievable range when known."""

    def __init__(self, message: str, achievable: Optional[tuple] = None):
        super().__init__(message)
        self.achievable = achievable


class SizeGuardError(ValueError):
    """A dense-storage or enumeration size guard was exceeded."""


def _freeze(obj, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=float)
    arr.setflags(write=False)
    object.__setattr__(obj, name, arr)


def _as_array(x: Any) -> np.ndarray:
    if isinstance(x, (Dmc, CondDist)):
        return x.w if isinstance(x, Dmc) else x.v
    if isinstance(x, Metric):
        return x.q
    if isinstance(x, (InputDist, JointDist)):
        return x.p
    return np.asarray(x, dtype=float)


def _check_simplex_vector(p: np.ndarray, tol: float, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ProblemError(f"{what}: expected a vector, got shape {p.shape}")
    if np.any(p < -tol):
        k = int(np.argmin(p))
        raise ProblemError(f"{what}: negative entry {p[k]!r} at index {k}")
    s = float(p.sum())
    if abs(s - 1.0) > max(tol, ROW_SUM_TOL):
        raise ProblemError(f"{what}: sums to {s!r}, not 1")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


@dataclass(frozen=True)
class Dmc:
    """Discrete memoryless channel W(y|x); rows indexed by input x."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2:
            raise ProblemError(f"channel matrix must be 2-D, got shape {w.shape}")
        if np.any(w < -SIMPLEX_TOL) or np.any(w > 1 + SIMPLEX_TOL):
            x, y = np.unravel_index(int(np.argmin(w)), w.shape)
            raise ProblemError(f"channel entry out of [0,1] at row {x}, column {y}")
        sums = w.sum(axis=1)
        bad = np.where(np.abs(sums - 1.0) > ROW_SUM_TOL)[0]
        if bad.size:
            raise ProblemError(f"channel row {int(bad[0])} sums to {sums[bad[0]]!r}, not 1")
        w = np.clip(w, 0.0, None)
        w = w / w.sum(axis=1, keepdims=True)
        _freeze(self, "w", w)

    @property
    def nx(self) -> int:
        return self.w.shape[0]

    @property
    def ny(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class Metric:
    """Nonnegative decoding metric q(x,y); every row needs a positive entry."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 2:
            raise ProblemError(f"metric matrix must be 2-D, got shape {q.shape}")
        if np.any(q < 0):
            x, y = np.unravel_index(int(np.argmin(q)), q.shape)
            raise ProblemError(f"metric entry negative at row {x}, column {y}")
        if np.any(q.max(axis=1) == 0):
            x = int(np.argmin(q.max(axis=1)))
            raise ProblemError(f"metric row {x} is identically zero")
        _freeze(self, "q", q)

    @property
    def shape(self) -> tuple:
        return self.q.shape


@dataclass(frozen=True)
class InputDist:
    """Probability vector over the input alphabet."""

    p: np.ndarray

    def __post_init__(self):
        _freeze(self, "p", _check_simplex_vector(self.p, SIMPLEX_TOL, "input distribution"))

    @property
    def n(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class JointDist:
    """Joint probability tensor; rank 2 for X×Y, rank 3 for X1×X2×Y or U×X×Y."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.any(p < -SIMPLEX_TOL_LOOSE):
            idx = np.unravel_index(int(np.argmin(p)), p.shape)
            raise ProblemError(f"joint distribution negative at {idx}")
        s = float(p.sum())
        if abs(s - 1.0) > 1e-8:
            raise ProblemError(f"joint distribution sums to {s!r}, not 1")
        p = np.clip(p, 0.0, None)
        _freeze(self, "p", p / p.sum())

    @property
    def rank(self) -> int:
        return self.p.ndim


@dataclass(frozen=True)
class CondDist:
    """Conditional distribution V(y|x); each row a simplex point."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 2:
            raise ProblemError(f"conditional must be 2-D, got shape {v.shape}")
        if np.any(v < -SIMPLEX_TOL):
            x, y = np.unravel_index(int(np.argmin(v)), v.shape)
            raise ProblemError(f"conditional negative at row {x}, column {y}")
        sums = v.sum(axis=1)
        bad = np.where(np.abs(sums - 1.0) > ROW_SUM_TOL)[0]
        if bad.size:
            raise ProblemError(f"conditional row {int(bad[0])} sums to {sums[bad[0]]!r}, not 1")
        v = np.clip(v, 0.0, None)
        _freeze(self, "v", v / v.sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class MacProblem:
    """Two-sender multiple-access problem: W(y|x1,x2), q(x1,x2,y), inputs Q1, Q2."""

    w3: np.ndarray
    q3: np.ndarray
    q1: InputDist
    q2: InputDist

    def __post_init__(self):
        w3 = np.asarray(self.w3, dtype=float)
        q3 = np.asarray(self.q3, dtype=float)
        if w3.ndim != 3 or q3.shape != w3.shape:
            raise ProblemError(
                f"MAC tensors must be 3-D with equal shapes, got {w3.shape} and {q3.shape}"
            )
        sums = w3.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            x1, x2 = np.unravel_index(int(np.argmax(np.abs(sums - 1.0))), sums.shape)
            raise ProblemError(f"W(.|{x1},{x2}) sums to {sums[x1, x2]!r}, not 1")
        if np.any(q3 < 0):
            idx = np.unravel_index(int(np.argmin(q3)), q3.shape)
            raise ProblemError(f"MAC metric negative at {idx}")
        w3 = np.clip(w3, 0.0, None)
        w3 = w3 / w3.sum(axis=2, keepdims=True)
        _freeze(self, "w3", w3)
        _freeze(self, "q3", q3)
        if self.q1.n != w3.shape[0] or self.q2.n != w3.shape[1]:
            raise ProblemError("MAC input distributions do not match tensor shape")

    @property
    def shape(self) -> tuple:
        return self.w3.shape


@dataclass(frozen=True)
class RateResult:
    """A computed rate in nats plus the evidence behind it.

    ``certificate`` holds the optimizer (a primal joint distribution or dual
    parameters), ``gap`` the primal-dual gap when both routes were computed,
    and ``report`` the solver diagnostics.  ``zero_rate`` marks values clamped
    to zero because the positivity test failed; ``boundary`` marks suprema
    approached at a parameter cap.
    """

    value: float
    form: str
    certificate: Any = None
    gap: Optional[float] = None
    report: Any = None
    zero_rate: bool = False
    boundary: bool = False

    def __post_init__(self):
        if self.value < -1e-9 and not self.zero_rate:
            raise ProblemError(f"negative rate {self.value!r} without a zero-rate flag")
        if self.gap is not None and self.gap < -1e-6:
            raise ProblemError(f"primal-dual gap {self.gap!r} below -1e-6")

    @property
    def value_bits(self) -> float:
        return self.value / LOG2

    def to_dict(self) -> dict:
        return {
            "value_bits": self.value_bits,
            "value_nats": self.value,
            "form": self.form,
            "certificate": to_jsonable(self.certificate),
            "gap": self.gap,
            "report": to_jsonable(self.report),
        }


def to_jsonable(obj: Any) -> Any:
    """Recursively convert arrays and dataclass-like objects for JSON output."""
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "__dataclass_fields__"):
        return {k: to_jsonable(getattr(obj, k)) for k in obj.__dataclass_fields__}
    return repr(obj)


# ---------------------------------------------------------------------------
# Information measures
# ---------------------------------------------------------------------------


def xlogx(p: np.ndarray) -> np.ndarray:
    """Entrywise p*log(p) with 0*log(0) = 0."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def entropy(p) -> float:
    """Shannon entropy in nats; rejects negative entries."""
    p = _as_array(p)
    if np.any(p < 0):
        k = int(np.argmin(p))
        raise ProblemError(f"entropy: negative entry {p.ravel()[np.argmin(p)]!r} at index {k}")
    return float(-xlogx(p).sum())


def mutual_information(pxy) -> float:
    """I(X;Y) in nats for a 2-D joint; zero cells contribute zero."""
    p = _as_array(pxy)
    if p.ndim != 2:
        raise ProblemError(f"mutual_information expects rank 2, got {p.ndim}")
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mask = p > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask, p / np.outer(px, py), 1.0)
        val = float(np.sum(np.where(mask, p * np.log(np.where(mask, ratio, 1.0)), 0.0)))
    return max(val, 0.0)


def conditional_mutual_information(puxy: np.ndarray) -> float:
    """I(X;Y|U) in nats for a rank-3 joint indexed (u, x, y)."""
    p = _as_array(puxy)
    if p.ndim != 3:
        raise ProblemError(f"expected rank 3, got {p.ndim}")
    total = 0.0
    for u in range(p.shape[0]):
        pu = p[u].sum()
        if pu > 0:
            total += pu * mutual_information(p[u] / pu)
    return total


def kl_divergence(p, q) -> float:
    """D(p||q) in nats; +inf when p has mass outside the support of q."""
    pa, qa = _as_array(p), _as_array(q)
    if pa.shape != qa.shape:
        raise ProblemError(f"KL shape mismatch: {pa.shape} vs {qa.shape}")
    if np.any((pa > 0) & (qa <= 0)):
        return math.inf
    mask = pa > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.sum(np.where(mask, pa * np.log(np.where(mask, pa, 1.0) / np.where(mask, qa, 1.0)), 0.0))
    return float(val)


def output_marginal(q_in, w) -> np.ndarray:
    """P_Y(y) = sum_x Q(x) W(y|x)."""
    qv = _as_array(q_in)
    wv = _as_array(w)
    if qv.shape[0] != wv.shape[0]:
        raise ProblemError(f"dimension mismatch: |X|={qv.shape[0]} vs rows {wv.shape[0]}")
    return qv @ wv


def log_with_support(q: np.ndarray) -> tuple:
    """Return (log q filled with 0 off-support, boolean support mask).

    The fill value is arbitrary; callers must consult the mask.  This keeps
    -inf out of optimizer arithmetic.
    """
    q = np.asarray(q, dtype=float)
    support = q > 0
    out = np.zeros_like(q)
    out[support] = np.log(q[support])
    return out, support


# ---------------------------------------------------------------------------
# Metric transforms and channel constructions
# ---------------------------------------------------------------------------


def transform_metric(m: Metric, s: float, a=None, b=None) -> Metric:
    """Entrywise q^s * e^{a(x)} * e^{b(y)} with s >= 0.

    Zero entries stay zero: for s > 0 because 0^s = 0, and at s = 0 by
    convention, so the support (and hence the decoder's tie structure) is
    preserved by every transform in the family.
    """
    if s < 0:
        raise ProblemError(f"transform exponent s={s!r} must be nonnegative")
    q = _as_array(m)
    support = q > 0
    out = np.zeros_like(q)
    out[support] = np.exp(s * np.log(q[support]))
    if a is not None:
        out = out * np.exp(np.asarray(a, dtype=float))[:, None]
    if b is not None:
        out = out * np.exp(np.asarray(b, dtype=float))[None, :]
    return Metric(out)


def product_extension(w: Dmc, m: Metric, k: int):
    """k-fold memoryless product (W^k, q^k), lexicographic index order.

    The first symbol is the most significant index digit, so entry
    ((x1..xk),(y1..yk)) is the product of the per-letter entries.
    """
    if k < 1:
        raise ProblemError(f"product extension order k={k} must be >= 1")
    if (w.nx * w.ny) ** k > 1e7:
        raise SizeGuardError(f"product extension would need {(w.nx * w.ny) ** k:.3g} entries")
    wk = w.w
    qk = m.q
    for _ in range(k - 1):
        wk = np.kron(wk, w.w)
        qk = np.kron(qk, m.q)
    return Dmc(wk), Metric(qk)


def erasures_only_metric(w: Dmc) -> Metric:
    """Indicator metric of the channel support: q = 1{W > 0}."""
    return Metric((w.w > 0).astype(float))


def zero_error_transform(w: Dmc):
    """Noiseless channel on X paired with the row-overlap adjacency metric.

    A(x, x') = 1 iff some output has positive probability under both rows.
    """
    adjacency = (w.w @ w.w.T > 0).astype(float)
    return Dmc(np.eye(w.nx)), Metric(adjacency)


def detect_output_symmetry(w: Dmc, m: Metric):
    """Best-effort common output partition of (W, q), or None.

    Outputs are grouped by the multiset of their (W, q) column pairs; each
    candidate block is then checked for the row-permutation property.  Sound
    but incomplete: partitions that need a joint search return None.
    """
    if m.q.shape != w.w.shape:
        raise ProblemError(f"metric shape {m.q.shape} does not match channel {w.w.shape}")
    pairs = np.stack([np.round(w.w, 10), np.round(m.q, 10)], axis=-1)
    col_sig = {}
    for y in range(w.ny):
        sig = tuple(sorted(map(tuple, pairs[:, y, :])))
        col_sig.setdefault(sig, []).append(y)
    blocks = [sorted(ys) for ys in col_sig.values()]
    for block in blocks:
        sub = pairs[:, block, :]
        row_sigs = {tuple(sorted(map(tuple, sub[x]))) for x in range(w.nx)}
        if len(row_sigs) != 1:
            return None
    return sorted(blocks)


# ---------------------------------------------------------------------------
# Problem file parsing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DmcProblem:
    """A channel and its decoding metric, parsed from one problem file."""

    dmc: Dmc
    metric: Metric

    def __post_init__(self):
        if self.metric.q.shape != self.dmc.w.shape:
            raise ProblemError(
                f"metric shape {self.metric.q.shape} does not match channel {self.dmc.w.shape}"
            )


def _parse_matrix(raw, rows: int, cols: int, what: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (rows, cols):
        raise ProblemError(f"{what}: expected shape {(rows, cols)}, got {arr.shape}")
    return arr


def _parse_stochastic(raw, rows: int, cols: int, what: str) -> np.ndarray:
    arr = _parse_matrix(raw, rows, cols, what)
    for x in range(rows):
        row = arr[x]
        neg = np.where(row < 0)[0]
        if neg.size:
            raise ProblemError(f"{what}: negative entry at row {x}, column {int(neg[0])}")
        s = row.sum()
        if abs(s - 1.0) > ROW_SUM_TOL:
            raise ProblemError(f"{what}: row {x} sums to {s!r}, not 1")
        arr[x] = row / s
    return arr


def parse_problem(text):
    """Parse a JSON problem description into typed objects.

    Accepts bytes, str, or an already-decoded dict.  Rows are renormalized
    only when within 1e-9 of 1; anything worse is rejected with the offending
    row named.  Supported kinds: dmc, mac, rd, dist, sc, exppar.
    """
    if isinstance(text, (bytes, str)):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ProblemError(f"not valid JSON: {e}") from None
    else:
        data = text
    if not isinstance(data, dict) or "kind" not in data:
        raise ProblemError("problem file must be a JSON object with a 'kind' field")
    kind = data["kind"]
    try:
        if kind == "dmc":
            nx, ny = int(data["X"]), int(data["Y"])
            w = _parse_stochastic(data["W"], nx, ny, "W")
            q = _parse_matrix(data["q"], nx, ny, "q")
            if np.any(q < 0):
                x, y = np.unravel_index(int(np.argmin(q)), q.shape)
                raise ProblemError(f"q: negative entry at row {x}, column {y}")
            return DmcProblem(Dmc(w), Metric(q))
        if kind == "mac":
            n1, n2, ny = int(data["X1"]), int(data["X2"]), int(data["Y"])
            w3 = np.asarray(data["W"], dtype=float)
            q3 = np.asarray(data["q"], dtype=float)
            if w3.shape != (n1, n2, ny):
                raise ProblemError(f"W: expected shape {(n1, n2, ny)}, got {w3.shape}")
            if q3.shape != (n1, n2, ny):
                raise ProblemError(f"q: expected shape {(n1, n2, ny)}, got {q3.shape}")
            for x1 in range(n1):
                _parse_stochastic(w3[x1], n2, ny, f"W[{x1}]")
            q1 = InputDist(np.asarray(data.get("Q1", np.full(n1, 1.0 / n1)), dtype=float))
            q2 = InputDist(np.asarray(data.get("Q2", np.full(n2, 1.0 / n2)), dtype=float))
            return MacProblem(w3, q3, q1, q2)
        if kind == "rd":
            from .ratedist import RdProblem

            nx, nxhat = int(data["X"]), int(data["Xhat"])
            source = _check_simplex_vector(np.asarray(data["source"], dtype=float), SIMPLEX_TOL, "source")
            d0 = _parse_matrix(data["d0"], nx, nxhat, "d0")
            d1 = _parse_matrix(data.get("d1", data["d0"]), nx, nxhat, "d1")
            q_hat = data.get("Q")
            if q_hat is None:
                q_hat = np.full(nxhat, 1.0 / nxhat)
            return RdProblem(source, d0, d1, InputDist(np.asarray(q_hat, dtype=float)))
        if kind == "dist":
            return InputDist(np.asarray(data["p"], dtype=float))
        if kind == "sc":
            from .multiuser import ScInput

            nu = int(data["U"])
            qux = np.asarray(data["Qux"], dtype=float)
            if qux.shape[0] != nu:
                raise ProblemError(f"Qux: expected {nu} rows, got {qux.shape[0]}")
            return ScInput(JointDist(qux))
        if kind == "exppar":
            from .multiuser import ExpParSpec

            psi = np.asarray(data["psi"], dtype=int)
            q1 = InputDist(np.asarray(data["Q1"], dtype=float))
            q2 = InputDist(np.asarray(data["Q2"], dtype=float))
            return ExpParSpec(psi, q1, q2)
    except KeyError as e:
        raise ProblemError(f"missing field {e} for kind {kind!r}") from None
    raise ProblemError(f"unknown problem kind {kind!r}")
