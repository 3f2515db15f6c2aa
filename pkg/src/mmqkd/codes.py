"""LDPC base-matrix construction, multi-matrix families and alist I/O."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba
import numpy as np

from .errors import (ConstructionFailed, ConsistencyError, DimensionError,
                     InfeasibleSpec, ParseError)
from .gf2 import ParityCheckMatrix, gf2_rank, systematic_decompose

log = logging.getLogger(__name__)

WAVE_LAYOUTS = ("compact", "separated")


@dataclass(frozen=True)
class DegreeSpec:
    """Degree multisets of a bipartite Tanner graph.

    ``variable_degrees[i]`` is the target column weight of variable ``i`` and
    ``check_degrees[j]`` the target row weight of check ``j``.
    """

    n: int
    m: int
    variable_degrees: tuple[int, ...]
    check_degrees: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "variable_degrees", tuple(int(d) for d in self.variable_degrees))
        object.__setattr__(self, "check_degrees", tuple(int(d) for d in self.check_degrees))

    @classmethod
    def regular(cls, n: int, m: int, col_degree: int = 3) -> "DegreeSpec":
        """Column-regular spec; row degrees are spread as evenly as possible."""
        edges = n * col_degree
        base, extra = divmod(edges, m)
        rows = tuple(base + 1 if j < extra else base for j in range(m))
        return cls(n, m, (col_degree,) * n, rows)

    @classmethod
    def from_profile(cls, n: int, m: int, profile: dict[int, float],
                     seed: int = 0) -> "DegreeSpec":
        """Irregular spec from a node-perspective column-degree profile.

        ``profile`` maps a degree to the fraction of variables having it.
        Counts are rounded and the remainder assigned to the most common
        degree; variables are shuffled so high-degree columns are spread
        over the whole block.
        """
        degs = sorted(profile)
        counts = {d: int(round(profile[d] * n)) for d in degs}
        main = max(degs, key=lambda d: profile[d])
        counts[main] += n - sum(counts.values())
        var = np.concatenate([np.full(counts[d], d, dtype=np.int64) for d in degs])
        np.random.default_rng(seed).shuffle(var)
        edges = int(var.sum())
        base, extra = divmod(edges, m)
        rows = tuple(base + 1 if j < extra else base for j in range(m))
        return cls(n, m, tuple(var.tolist()), rows)

    def validate(self) -> None:
        """Raise ``InfeasibleSpec`` unless a simple bipartite graph realizes the spec."""
        v = np.asarray(self.variable_degrees, dtype=np.int64)
        c = np.asarray(self.check_degrees, dtype=np.int64)
        if v.size != self.n or c.size != self.m:
            raise InfeasibleSpec("degree list lengths do not match (n, m)")
        if v.sum() != c.sum():
            raise InfeasibleSpec(
                f"edge counts differ: variables {int(v.sum())}, checks {int(c.sum())}")
        if (v.size and v.min() < 1) or (c.size and c.min() < 1):
            raise InfeasibleSpec("every degree must be at least 1")
        if (v.size and v.max() > self.m) or (c.size and c.max() > self.n):
            raise InfeasibleSpec("a degree exceeds the opposite dimension")
        # Gale-Ryser
        a = np.sort(c)[::-1]
        prefix = np.cumsum(a)
        for k in range(1, a.size + 1):
            if prefix[k - 1] > np.minimum(v, k).sum():
                raise InfeasibleSpec("degree sequences fail the Gale-Ryser condition")


def four_cycle_count(H: ParityCheckMatrix) -> int:
    """Number of unordered row pairs sharing two or more columns."""
    A = H.csr.astype(np.int64)
    overlap = (A @ A.T).tocoo()
    mask = (overlap.row < overlap.col) & (overlap.data >= 2)
    return int(mask.sum())


@numba.njit(cache=True)
def _peg_kernel(order, vdeg, cap, maxrow, maxcol, ties, max_depth):
    m, n = cap.size, vdeg.size
    chk_vars = np.empty((m, maxrow), dtype=np.int64)
    ccount = np.zeros(m, dtype=np.int64)
    var_chks = np.empty((n, maxcol), dtype=np.int64)
    vcount = np.zeros(n, dtype=np.int64)
    cvis = np.zeros(m, dtype=np.int64)
    vvis = np.zeros(n, dtype=np.int64)
    front = np.empty(m, dtype=np.int64)
    nxt = np.empty(m, dtype=np.int64)
    cand = np.empty(m, dtype=np.int64)
    stamp = 0
    draw = 0
    cycles = 0
    for v in order:
        for k in range(vdeg[v]):
            nc = 0
            level = -1
            if k == 0:
                for c in range(m):
                    if cap[c] > 0:
                        cand[nc] = c
                        nc += 1
            else:
                stamp += 1
                vvis[v] = stamp
                nf = 0
                for i in range(vcount[v]):
                    c = var_chks[v, i]
                    cvis[c] = stamp
                    front[nf] = c
                    nf += 1
                avail = 0
                for c in range(m):
                    if cap[c] > 0 and cvis[c] != stamp:
                        avail += 1
                depth = 0
                while avail > 0:
                    nn = 0
                    reached = 0
                    for i in range(nf):
                        c = front[i]
                        for j in range(ccount[c]):
                            w = chk_vars[c, j]
                            if vvis[w] == stamp:
                                continue
                            vvis[w] = stamp
                            for t in range(vcount[w]):
                                c2 = var_chks[w, t]
                                if cvis[c2] != stamp:
                                    cvis[c2] = stamp
                                    nxt[nn] = c2
                                    nn += 1
                                    if cap[c2] > 0:
                                        reached += 1
                    depth += 1
                    limit = m if vdeg[v] == 2 else max_depth
                    if reached < avail and (nn == 0 or depth >= limit):
                        # unreached checks close no cycle shorter than the depth limit
                        for c in range(m):
                            if cap[c] > 0 and cvis[c] != stamp:
                                cand[nc] = c
                                nc += 1
                        break
                    if reached == avail:
                        # everything is reached: take the farthest checks
                        for i in range(nn):
                            if cap[nxt[i]] > 0:
                                cand[nc] = nxt[i]
                                nc += 1
                        level = depth
                        break
                    avail -= reached
                    front, nxt = nxt, front
                    nf = nn
            if nc == 0:
                return chk_vars, ccount, cycles, False
            best = 0
            for i in range(nc):
                if cap[cand[i]] > best:
                    best = cap[cand[i]]
            nt = 0
            for i in range(nc):
                if cap[cand[i]] == best:
                    cand[nt] = cand[i]
                    nt += 1
            c = cand[int(ties[draw] * nt)]
            draw += 1
            if level == 1:
                cycles += 1
            cap[c] -= 1
            chk_vars[c, ccount[c]] = v
            ccount[c] += 1
            var_chks[v, vcount[v]] = c
            vcount[v] += 1
    return chk_vars, ccount, cycles, True


def _peg_attempt(spec: DegreeSpec, rng: np.random.Generator, max_depth: int):
    vdeg = np.asarray(spec.variable_degrees, dtype=np.int64)
    cap = np.asarray(spec.check_degrees, dtype=np.int64).copy()
    # low-degree variables first; ties in random order
    order = np.lexsort((rng.random(spec.n), vdeg)).astype(np.int64)
    ties = rng.random(int(vdeg.sum()))
    chk_vars, ccount, cycles, ok = _peg_kernel(order, vdeg, cap, int(cap.max()),
                                               int(vdeg.max()), ties, max_depth)
    if not ok:
        return None, int(cycles)
    rows = [chk_vars[c, :ccount[c]].tolist() for c in range(spec.m)]
    return ParityCheckMatrix(spec.m, spec.n, rows), int(cycles)


def build_base_matrix(spec: DegreeSpec, seed: int = 0, *, full_rank: bool = True,
                      max_restarts: int = 20, max_depth: int = 2) -> ParityCheckMatrix:
    """Build a parity-check matrix realizing ``spec`` exactly.

    Progressive edge growth: variables are taken in order of increasing
    degree, and each new edge goes to a check outside the variable's current
    Tanner-graph neighbourhood, or failing that to one of the farthest
    checks, preferring the most remaining capacity. The neighbourhood search
    stops at ``max_depth`` expansions, after which every unreached check is
    acceptable; depth 2 avoids cycles of length 4 and 6 where possible while
    keeping the check capacities balanced. Edges that still close a 4-cycle
    are counted and logged.
    Degree-2 columns search without the depth limit, so they only join
    separate trees while any are left; with fewer of them than checks they
    contain no cycle.
    Attempts that strand an edge, or that are rank deficient while
    ``full_rank`` is set, are retried up to ``max_restarts`` times.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    for attempt in range(max_restarts + 1):
        H, cycles = _peg_attempt(spec, rng, max_depth)
        if H is None:
            log.debug("attempt %d stranded an edge; restarting", attempt)
            continue
        if full_rank and gf2_rank(H) < spec.m:
            log.debug("attempt %d is rank deficient; restarting", attempt)
            continue
        if cycles:
            log.warning("placed %d edges that close a 4-cycle", cycles)
        return H
    raise ConstructionFailed(
        f"no {'full-rank ' if full_rank else ''}realization after {max_restarts + 1} attempts")


# families -----------------------------------------------------------------

@dataclass(frozen=True)
class CodeFamily:
    """``u`` same-shape parity-check matrices sharing their independent columns."""

    codes: tuple[ParityCheckMatrix, ...]
    independent_positions: tuple[int, ...]
    wave_layout: str = "separated"
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.codes:
            raise DimensionError("a family needs at least one matrix")
        shape = self.codes[0].shape
        if any(h.shape != shape for h in self.codes):
            raise DimensionError("family members must share one shape")
        object.__setattr__(self, "codes", tuple(self.codes))
        object.__setattr__(self, "independent_positions",
                           tuple(sorted(int(p) for p in self.independent_positions)))

    @property
    def u(self) -> int:
        return len(self.codes)

    @property
    def m(self) -> int:
        return self.codes[0].m

    @property
    def n(self) -> int:
        return self.codes[0].n

    @cached_property
    def family_id(self) -> str:
        h = hashlib.sha1()
        for code in self.codes:
            for part in code._key()[2:]:
                h.update(part)
        h.update(repr(self.independent_positions).encode())
        return h.hexdigest()[:16]

    @cached_property
    def check_degrees(self) -> np.ndarray:
        """Row weights, shape ``(u, m)``."""
        return np.stack([h.row_degrees for h in self.codes])

    def restrict(self, u: int) -> "CodeFamily":
        """The family formed by the first ``u`` members."""
        if not 1 <= u <= self.u:
            raise DimensionError(f"cannot restrict a {self.u}-member family to {u}")
        return CodeFamily(self.codes[:u], self.independent_positions,
                          self.wave_layout, self.seed)

    @classmethod
    def single(cls, H: ParityCheckMatrix) -> "CodeFamily":
        sf = systematic_decompose(H)
        return cls((H,), tuple(sf.independent_positions), "compact", 0)

    def save(self, directory) -> Path:
        """Write member alists and a plain-text manifest into ``directory``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for k, code in enumerate(self.codes):
            (d / f"member_{k:02d}.alist").write_text(write_alist(code))
        lines = [
            f"u {self.u}",
            f"seed {self.seed}",
            f"wave_layout {self.wave_layout}",
            "independent_positions " + " ".join(map(str, self.independent_positions)),
        ]
        (d / "manifest.txt").write_text("\n".join(lines) + "\n")
        return d

    @classmethod
    def load(cls, directory) -> "CodeFamily":
        d = Path(directory)
        meta = {}
        for lineno, line in enumerate((d / "manifest.txt").read_text().splitlines(), 1):
            if not line.strip():
                continue
            key, _, value = line.partition(" ")
            meta[key] = value.strip()
        try:
            u = int(meta["u"])
            seed = int(meta["seed"])
            layout = meta["wave_layout"]
            positions = [int(t) for t in meta["independent_positions"].split()]
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad family manifest: {exc}") from exc
        codes = [read_alist((d / f"member_{k:02d}.alist").read_text()) for k in range(u)]
        return cls(tuple(codes), tuple(positions), layout, seed)


def _group_permutation(positions: np.ndarray, degrees: np.ndarray, usage: np.ndarray,
                       layout: str, rng: np.random.Generator) -> np.ndarray:
    """Source columns for ``positions`` drawn from the same position group."""
    if layout == "compact":
        src = positions.copy()
        for d in np.unique(degrees[positions]):
            cls_pos = positions[degrees[positions] == d]
            src[np.isin(positions, cls_pos)] = rng.permutation(cls_pos)
        return src
    # separated: heaviest columns go to the least used positions
    cols = positions[np.lexsort((rng.random(positions.size), -degrees[positions]))]
    slots = positions[np.lexsort((rng.random(positions.size), usage[positions]))]
    src = np.empty_like(positions)
    where = {int(p): k for k, p in enumerate(positions)}
    for slot, col in zip(slots.tolist(), cols.tolist()):
        src[where[slot]] = col
    return src


def derive_family(base: ParityCheckMatrix, u: int, wave_layout: str = "separated",
                  seed: int = 0) -> CodeFamily:
    """Derive ``u`` matrices from ``base`` by column rearrangement.

    The ``m`` linearly independent columns of ``base`` are found once by
    systematic decomposition. Every further member permutes the columns of
    ``base`` within that independent group and, separately, within the
    remaining group, so all members keep the same independent positions and
    the same degree multisets.

    With ``wave_layout="compact"`` each column only trades places with
    columns of equal degree, so high-degree positions coincide across
    members. With ``"separated"`` the heaviest columns are steered to the
    positions that previous members loaded least.
    """
    if u < 1:
        raise ValueError("u must be at least 1")
    if wave_layout not in WAVE_LAYOUTS:
        raise ValueError(f"wave_layout must be one of {WAVE_LAYOUTS}")
    sf = systematic_decompose(base)
    indep = np.array(sorted(sf.independent_positions), dtype=np.int64)
    is_indep = np.zeros(base.n, dtype=bool)
    is_indep[indep] = True
    rest = np.flatnonzero(~is_indep)
    degrees = np.asarray(base.col_degrees, dtype=np.int64)
    usage = degrees.astype(np.float64).copy()
    rng = np.random.default_rng(seed)
    codes = [base]
    for _ in range(1, u):
        source = np.arange(base.n)
        for group in (indep, rest):
            if group.size:
                source[group] = _group_permutation(group, degrees, usage, wave_layout, rng)
        member = base.permute_columns(source)
        usage += degrees[source]
        codes.append(member)
    return CodeFamily(tuple(codes), tuple(indep.tolist()), wave_layout, seed)


# alist --------------------------------------------------------------------

def write_alist(H: ParityCheckMatrix) -> str:
    """Canonical alist text: 1-based, sorted, no zero padding."""
    cd, rd = H.col_degrees, H.row_degrees
    lines = [
        f"{H.n} {H.m}",
        f"{int(cd.max()) if H.n else 0} {int(rd.max()) if H.m else 0}",
        " ".join(map(str, cd.tolist())),
        " ".join(map(str, rd.tolist())),
    ]
    lines += [" ".join(str(j + 1) for j in col) for col in H.cols]
    lines += [" ".join(str(i + 1) for i in row) for row in H.rows]
    return "\n".join(lines) + "\n"


def read_alist(text: str) -> ParityCheckMatrix:
    """Parse alist text, accepting zero padding in the adjacency lines."""
    lines = text.splitlines()
    pos = 0

    def ints(count=None):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError("unexpected end of input", None)
        lineno = pos + 1
        try:
            vals = [int(t) for t in lines[pos].split()]
        except ValueError as exc:
            raise ParseError(f"non-integer token ({exc})", lineno) from None
        if count is not None and len(vals) != count:
            raise ParseError(f"expected {count} integers, found {len(vals)}", lineno)
        pos += 1
        return vals, lineno

    (n, m), ln = ints(2)
    if n < 0 or m < 0:
        raise ParseError("negative dimension", ln)
    (max_c, max_r), _ = ints(2)
    col_deg, ln_c = ints(n)
    row_deg, ln_r = ints(m)
    cols, rows = [], []
    for i in range(n):
        vals, ln = ints()
        idx = [v for v in vals if v != 0]
        if len(idx) != col_deg[i] or len(vals) > max(max_c, col_deg[i]):
            raise ParseError(f"variable {i + 1}: expected {col_deg[i]} check indices", ln)
        if any(v < 1 or v > m for v in idx):
            raise ParseError(f"variable {i + 1}: check index out of range", ln)
        cols.append([v - 1 for v in idx])
    for j in range(m):
        vals, ln = ints()
        idx = [v for v in vals if v != 0]
        if len(idx) != row_deg[j] or len(vals) > max(max_r, row_deg[j]):
            raise ParseError(f"check {j + 1}: expected {row_deg[j]} variable indices", ln)
        if any(v < 1 or v > n for v in idx):
            raise ParseError(f"check {j + 1}: variable index out of range", ln)
        rows.append([v - 1 for v in idx])
    if any(line.strip() for line in lines[pos:]):
        raise ParseError("trailing content after the check lists", pos + 1)
    try:
        return ParityCheckMatrix.from_adjacency(m, n, rows, cols)
    except ConsistencyError:
        raise
    except DimensionError as exc:
        raise ConsistencyError(str(exc)) from exc


def build_family(n: int, rate: float, u: int, wave_layout: str = "separated",
                 seed: int = 0, spec: DegreeSpec | None = None) -> CodeFamily:
    """Base matrix of the given length and rate followed by ``derive_family``."""
    m = int(round(n * (1 - rate)))
    if spec is None:
        spec = DegreeSpec.regular(n, m, 3)
    base = build_base_matrix(spec, seed)
    return derive_family(base, u, wave_layout, seed)
