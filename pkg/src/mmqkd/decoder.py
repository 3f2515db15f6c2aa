"""Belief-propagation syndrome decoding with one or several parity-check matrices.

Each family member keeps its own variable-to-check and check-to-variable
message tables and updates them from its own Tanner graph only. Members
meet in the soft decision, where the check-to-variable messages of every
member are added to the channel log-ratio. With one member this is plain
BP, shuffled BP or layered BP depending on the schedule.

Log-ratios use ``L = log(P(bit=0) / P(bit=1))``, so a positive soft value
decides 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .codes import CodeFamily
from .errors import DimensionError, FamilyMismatch, InvalidErrorRate
from .estimation import SyndromeSet
from .gf2 import bitblock, mat_vec_mul

LLR_CLAMP = 30.0
ATANH_CLAMP = 1.0 - 1e-12
# tanh factors smaller than this count as zero in running check products
TINY = 1e-150

SCHEDULES = ("flooding", "shuffled", "layered")
CONVERGENCE_MODES = ("all", "random_one")
EXCHANGES = ("member", "joint")
_SCHEDULE_CODE = {"flooding": 0, "shuffled": 1, "layered": 2}


@dataclass
class _Graph:
    """Member Tanner graphs concatenated into flat arrays for the kernels."""

    row_ptr: np.ndarray    # (u, m+1), member-local edge ids
    edge_var: np.ndarray   # (E,)
    edge_chk: np.ndarray   # (E,)
    col_ptr: np.ndarray    # (u, n+1), member-local positions in col_edges
    col_edges: np.ndarray  # (E,), member-local edge ids
    offset: np.ndarray     # (u+1,)


def _graph(family: CodeFamily) -> _Graph:
    g = family._cache.get("graph")
    if g is None:
        sizes = [h.num_edges for h in family.codes]
        offset = np.zeros(family.u + 1, dtype=np.int64)
        np.cumsum(sizes, out=offset[1:])
        g = _Graph(
            row_ptr=np.stack([h.row_ptr for h in family.codes]),
            edge_var=np.concatenate([h.edge_var for h in family.codes]),
            edge_chk=np.concatenate([h.edge_chk for h in family.codes]),
            col_ptr=np.stack([h.col_ptr for h in family.codes]),
            col_edges=np.concatenate([h.col_edges for h in family.codes]),
            offset=offset,
        )
        family._cache["graph"] = g
    return g


@dataclass
class DecoderState:
    """Messages of every family member plus the channel log-ratios.

    ``v2c`` and ``c2v`` are flat over all members: member ``k`` owns the
    slice ``offset[k]:offset[k+1]``, in that member's row-major edge order.
    """

    family: CodeFamily
    channel_llr: np.ndarray
    v2c: np.ndarray
    c2v: np.ndarray
    y: np.ndarray
    hard: np.ndarray
    iteration: int = 0
    offset: np.ndarray = field(default=None, repr=False)

    def edge(self, k: int, j: int, i: int) -> int:
        """Flat index of the edge joining check ``j`` and variable ``i`` in member ``k``."""
        h = self.family.codes[k]
        a, b = h.row_ptr[j], h.row_ptr[j + 1]
        hit = np.flatnonzero(h.edge_var[a:b] == i)
        if hit.size == 0:
            raise KeyError(f"member {k} has no edge ({j}, {i})")
        return int(self.offset[k] + a + hit[0])


@dataclass
class DecodeResult:
    success: bool
    corrected_key: np.ndarray
    iterations_used: int
    schedule: str
    u: int
    n_c: list[int] = field(default_factory=list)
    n_m: list[int] = field(default_factory=list)
    # filled only with record_soft=True: (iterations, n) and (iterations, u, n)
    soft_history: np.ndarray | None = None
    member_soft_history: np.ndarray | None = None
    # messages as they stood when decoding stopped
    state: DecoderState | None = field(default=None, repr=False)

    @property
    def per_iteration(self) -> list[tuple[int, int]]:
        return list(zip(self.n_c, self.n_m))


def channel_llr(y, e: float) -> np.ndarray:
    """``log((1-e)/e)`` for received zeros, its negative for received ones."""
    if not 0.0 < e < 0.5:
        raise InvalidErrorRate(f"error rate must lie in (0, 0.5), got {e}")
    mag = math.log((1.0 - e) / e)
    return np.where(np.asarray(y) == 0, mag, -mag).astype(np.float64)


def initialize(y, e: float, family: CodeFamily) -> DecoderState:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != family.n:
        raise DimensionError(f"key length {y.shape} does not match n={family.n}")
    lp = channel_llr(y, e)
    g = _graph(family)
    v2c = np.clip(lp[g.edge_var], -LLR_CLAMP, LLR_CLAMP)
    return DecoderState(family, lp, v2c, np.zeros_like(v2c), bitblock(y),
                        np.array(y, dtype=np.uint8), 0, g.offset)


def _clamp(x: float) -> float:
    return max(-LLR_CLAMP, min(LLR_CLAMP, x))


def c2v_message(state: DecoderState, k: int, j: int, i: int, z_j: int) -> float:
    """Check ``j`` of member ``k`` to variable ``i``, from the current v2c table."""
    h = state.family.codes[k]
    target = state.edge(k, j, i)
    prod = 1.0
    for e in range(state.offset[k] + h.row_ptr[j], state.offset[k] + h.row_ptr[j + 1]):
        if e != target:
            prod *= math.tanh(state.v2c[e] / 2.0)
    prod = max(-ATANH_CLAMP, min(ATANH_CLAMP, prod))
    sign = -1.0 if z_j else 1.0
    return _clamp(sign * 2.0 * math.atanh(prod))


def v2c_message(state: DecoderState, k: int, i: int, j: int) -> float:
    """Variable ``i`` to check ``j`` of member ``k``; excludes ``j`` and other members."""
    h = state.family.codes[k]
    state.edge(k, j, i)
    total = state.channel_llr[i]
    for t in range(h.col_ptr[i], h.col_ptr[i + 1]):
        e = int(h.col_edges[t])
        if h.edge_chk[e] != j:
            total += state.c2v[state.offset[k] + e]
    return _clamp(total)


def soft_decision(state: DecoderState, i: int) -> float:
    """Channel log-ratio plus every member's incoming check messages."""
    total = state.channel_llr[i]
    for k, h in enumerate(state.family.codes):
        for t in range(h.col_ptr[i], h.col_ptr[i + 1]):
            total += state.c2v[state.offset[k] + h.col_edges[t]]
    return float(total)


def hard_decision(L: float, channel_bit: int) -> int:
    if L > 0:
        return 0
    if L < 0:
        return 1
    return int(channel_bit)


def convergence_check(y, family: CodeFamily, alice: SyndromeSet, mode: str = "all",
                      rng: np.random.Generator | None = None) -> bool:
    """Compare Bob's syndromes with Alice's: one random member, or all of them."""
    if mode not in CONVERGENCE_MODES:
        raise ValueError(f"mode must be one of {CONVERGENCE_MODES}")
    if alice.u != family.u:
        raise FamilyMismatch("syndrome count differs from family size")
    if mode == "random_one":
        rng = rng if rng is not None else np.random.default_rng()
        members = [int(rng.integers(family.u))]
    else:
        members = range(family.u)
    return all(np.array_equal(mat_vec_mul(family.codes[k], y), alice.syndromes[k])
               for k in members)


# kernels ------------------------------------------------------------------

@numba.njit(cache=True, inline="always")
def _clampf(x):
    if x > LLR_CLAMP:
        return LLR_CLAMP
    if x < -LLR_CLAMP:
        return -LLR_CLAMP
    return x


@numba.njit(cache=True, inline="always")
def _tanh_half(v):
    # tanh(v / 2) through one exp; |v| <= LLR_CLAMP keeps exp finite
    ev = math.exp(v)
    return (ev - 1.0) / (ev + 1.0)


@numba.njit(cache=True, inline="always")
def _c2v_value(sign, prod):
    if prod > ATANH_CLAMP:
        prod = ATANH_CLAMP
    elif prod < -ATANH_CLAMP:
        prod = -ATANH_CLAMP
    # 2 * atanh(prod) through one log
    return _clampf(sign * math.log((1.0 + prod) / (1.0 - prod)))


@numba.njit(cache=True)
def _check_row(a, b, sign, tv, c2v, buf):
    # c2v for every edge of one check from prefix and suffix products
    p = 1.0
    for e in range(a, b):
        buf[e - a] = p
        p *= tv[e]
    p = 1.0
    for e in range(b - 1, a - 1, -1):
        c2v[e] = _c2v_value(sign, buf[e - a] * p)
        p *= tv[e]


@numba.njit(cache=True)
def _refresh_variable(i, k, a, b, o, col_edges, lp, c2v, v2c, tv, S, joint, skip):
    s = 0.0
    for t in range(a, b):
        s += c2v[col_edges[t] + o]
    S[k, i] = s
    base = lp[i] + s
    if joint:
        for k2 in range(S.shape[0]):
            if k2 != k:
                base += S[k2, i]
    for t in range(a, b):
        e = col_edges[t] + o
        if e != skip:
            v = _clampf(base - c2v[e])
            v2c[e] = v
            tv[e] = _tanh_half(v)


@numba.njit(cache=True)
def _flood_checks(k, row_ptr, offset, syn, c2v, tv, buf):
    o = offset[k]
    for j in range(row_ptr.shape[1] - 1):
        sign = -1.0 if syn[k, j] else 1.0
        _check_row(row_ptr[k, j] + o, row_ptr[k, j + 1] + o, sign, tv, c2v, buf)


@numba.njit(cache=True)
def _flood_sums(k, col_ptr, col_edges, offset, c2v, S):
    o = offset[k]
    for i in range(col_ptr.shape[1] - 1):
        s = 0.0
        for t in range(col_ptr[k, i] + o, col_ptr[k, i + 1] + o):
            s += c2v[col_edges[t] + o]
        S[k, i] = s


@numba.njit(cache=True)
def _flood_variables(k, col_ptr, col_edges, offset, lp, c2v, v2c, tv, S, joint):
    o = offset[k]
    u = S.shape[0]
    for i in range(col_ptr.shape[1] - 1):
        base = lp[i]
        if joint:
            for k2 in range(u):
                base += S[k2, i]
        else:
            base += S[k, i]
        for t in range(col_ptr[k, i] + o, col_ptr[k, i + 1] + o):
            e = col_edges[t] + o
            v = _clampf(base - c2v[e])
            v2c[e] = v
            tv[e] = _tanh_half(v)


@numba.njit(cache=True)
def _iterate(schedule, joint, row_ptr, edge_var, edge_chk, col_ptr, col_edges,
             offset, syn, lp, c2v, v2c, tv, S, buf):
    u = row_ptr.shape[0]
    m = row_ptr.shape[1] - 1
    n = col_ptr.shape[1] - 1
    if schedule == 0:
        # every member's checks, then every member's variables
        for k in range(u):
            _flood_checks(k, row_ptr, offset, syn, c2v, tv, buf)
        for k in range(u):
            _flood_sums(k, col_ptr, col_edges, offset, c2v, S)
        for k in range(u):
            _flood_variables(k, col_ptr, col_edges, offset, lp, c2v, v2c, tv, S, joint)
    elif schedule == 1:
        # running per-check products; factors below TINY are counted, not multiplied
        P = np.empty(m)
        Z = np.empty(m, dtype=np.int64)
        for k in range(u):
            o = offset[k]
            for j in range(m):
                p = 1.0
                z = 0
                for e in range(row_ptr[k, j] + o, row_ptr[k, j + 1] + o):
                    if abs(tv[e]) < TINY:
                        z += 1
                    else:
                        p *= tv[e]
                P[j] = p
                Z[j] = z
            for i in range(n):
                a = col_ptr[k, i] + o
                b = col_ptr[k, i + 1] + o
                for t in range(a, b):
                    e = col_edges[t] + o
                    j = edge_chk[e]
                    old = tv[e]
                    if abs(old) < TINY:
                        prod = P[j] if Z[j] == 1 else 0.0
                    else:
                        prod = P[j] / old if Z[j] == 0 else 0.0
                    sign = -1.0 if syn[k, j] else 1.0
                    c2v[e] = _c2v_value(sign, prod)
                    # take the old factor out; the refreshed one goes back below
                    if abs(old) < TINY:
                        Z[j] -= 1
                    else:
                        P[j] /= old
                _refresh_variable(i, k, a, b, o, col_edges, lp, c2v, v2c, tv, S, joint, -1)
                for t in range(a, b):
                    e = col_edges[t] + o
                    j = edge_chk[e]
                    if abs(tv[e]) < TINY:
                        Z[j] += 1
                    else:
                        P[j] *= tv[e]
    else:
        # each check pulls fresh v2c from the running totals lp + S, then
        # pushes its new c2v back into them
        for k in range(u):
            o = offset[k]
            for j in range(m):
                ra = row_ptr[k, j] + o
                rb = row_ptr[k, j + 1] + o
                for e in range(ra, rb):
                    i = edge_var[e]
                    base = lp[i] + S[k, i]
                    if joint:
                        for k2 in range(u):
                            if k2 != k:
                                base += S[k2, i]
                    v = _clampf(base - c2v[e])
                    v2c[e] = v
                    tv[e] = _tanh_half(v)
                sign = -1.0 if syn[k, j] else 1.0
                for e in range(ra, rb):
                    buf[e - ra] = c2v[e]
                _check_row(ra, rb, sign, tv, c2v, buf[rb - ra:])
                for e in range(ra, rb):
                    S[k, edge_var[e]] += c2v[e] - buf[e - ra]


@numba.njit(cache=True)
def _syndrome_ok(k, row_ptr, edge_var, offset, syn, bits):
    o = offset[k]
    m = row_ptr.shape[1] - 1
    for j in range(m):
        par = 0
        for e in range(row_ptr[k, j] + o, row_ptr[k, j + 1] + o):
            par ^= bits[edge_var[e]]
        if par != syn[k, j]:
            return False
    return True


@numba.njit(cache=True)
def _converged(check_all, choice, row_ptr, edge_var, offset, syn, bits):
    u = row_ptr.shape[0]
    if check_all:
        for k in range(u):
            if not _syndrome_ok(k, row_ptr, edge_var, offset, syn, bits):
                return False
        return True
    return _syndrome_ok(choice, row_ptr, edge_var, offset, syn, bits)


@numba.njit(cache=True)
def _decode_kernel(schedule, joint, row_ptr, edge_var, edge_chk, col_ptr, col_edges, offset,
                   syn, lp, y, c2v, v2c, hard, truth, has_truth, max_iter, check_all,
                   choices, record, nc, nm, soft_hist, member_hist):
    u = row_ptr.shape[0]
    n = lp.shape[0]
    E = v2c.shape[0]
    tv = np.empty(E)
    for e in range(E):
        tv[e] = _tanh_half(v2c[e])
    maxdeg = 1
    for k in range(u):
        for j in range(row_ptr.shape[1] - 1):
            d = row_ptr[k, j + 1] - row_ptr[k, j]
            if d > maxdeg:
                maxdeg = d
    buf = np.empty(2 * maxdeg)
    S = np.zeros((u, n))
    if _converged(check_all, choices[0], row_ptr, edge_var, offset, syn, hard):
        return 0, True
    for it in range(1, max_iter + 1):
        _iterate(schedule, joint, row_ptr, edge_var, edge_chk, col_ptr, col_edges,
                 offset, syn, lp, c2v, v2c, tv, S, buf)
        ncor = 0
        nmis = 0
        for i in range(n):
            L = lp[i]
            for k in range(u):
                L += S[k, i]
            if L > 0:
                bit = 0
            elif L < 0:
                bit = 1
            else:
                bit = y[i]
            if has_truth and bit != hard[i]:
                if bit == truth[i]:
                    ncor += 1
                else:
                    nmis += 1
            hard[i] = bit
            if record:
                soft_hist[it - 1, i] = L
                for k in range(u):
                    member_hist[it - 1, k, i] = lp[i] + S[k, i]
        nc[it - 1] = ncor
        nm[it - 1] = nmis
        if _converged(check_all, choices[it], row_ptr, edge_var, offset, syn, hard):
            return it, True
    return max_iter, False


def decode(y, e: float, family: CodeFamily, alice: SyndromeSet, schedule: str = "flooding",
           max_iterations: int = 100, truth=None, mode: str = "all", seed=None,
           record_soft: bool = False, exchange: str = "member") -> DecodeResult:
    """Reconcile Bob's key ``y`` against Alice's syndromes.

    Before the first iteration and after every iteration the hard decisions
    are tested with the stopping rule (``mode="all"`` checks every member,
    ``"random_one"`` one member drawn with ``seed``). ``success`` is only
    reported when the final key satisfies every member's syndrome.

    With ``truth`` (Alice's key) the number of wrong-to-right (``n_c``) and
    right-to-wrong (``n_m``) flips is recorded per iteration.
    """
    if schedule not in SCHEDULES:
        raise ValueError(f"schedule must be one of {SCHEDULES}")
    if mode not in CONVERGENCE_MODES:
        raise ValueError(f"mode must be one of {CONVERGENCE_MODES}")
    if max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    if exchange not in EXCHANGES:
        raise ValueError(f"exchange must be one of {EXCHANGES}")
    if alice.family_id != family.family_id or alice.u != family.u:
        raise FamilyMismatch("syndromes were not computed with this family")
    state = initialize(y, e, family)
    g = _graph(family)
    syn = np.stack([np.asarray(z, dtype=np.uint8) for z in alice.syndromes])
    if syn.shape != (family.u, family.m):
        raise DimensionError("syndrome shape does not match the family")
    has_truth = truth is not None
    truth_arr = (np.asarray(truth, dtype=np.uint8) if has_truth
                 else np.zeros(family.n, dtype=np.uint8))
    if truth_arr.shape != (family.n,):
        raise DimensionError("truth length does not match n")
    choices = np.random.default_rng(seed).integers(family.u, size=max_iterations + 1)
    nc = np.zeros(max_iterations, dtype=np.int64)
    nm = np.zeros(max_iterations, dtype=np.int64)
    rows = max_iterations if record_soft else 1
    soft_hist = np.zeros((rows, family.n if record_soft else 1))
    member_hist = np.zeros((rows, family.u, family.n if record_soft else 1))
    y_arr = np.asarray(state.y, dtype=np.uint8)
    iters, stopped = _decode_kernel(
        _SCHEDULE_CODE[schedule], exchange == "joint", g.row_ptr, g.edge_var, g.edge_chk, g.col_ptr,
        g.col_edges, g.offset, syn, state.channel_llr, y_arr, state.c2v, state.v2c,
        state.hard, truth_arr, has_truth, max_iterations, mode == "all", choices,
        record_soft, nc, nm, soft_hist, member_hist)
    iters = int(iters)
    state.iteration = iters
    key = bitblock(state.hard)
    success = bool(stopped) and (mode == "all" or all(
        np.array_equal(mat_vec_mul(h, key), z) for h, z in zip(family.codes, alice.syndromes)))
    return DecodeResult(
        success=success,
        corrected_key=key,
        iterations_used=iters,
        schedule=schedule,
        u=family.u,
        n_c=nc[:iters].tolist() if has_truth else [],
        n_m=nm[:iters].tolist() if has_truth else [],
        soft_history=soft_hist[:iters] if record_soft else None,
        member_soft_history=member_hist[:iters] if record_soft else None,
        state=state,
    )
