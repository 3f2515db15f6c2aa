"""QBER estimation from syndrome differences, and the sampling baseline.

Each syndrome bit difference is 1 exactly when an odd number of the
check's variables are in error, so for a check of degree ``d`` and a
candidate error rate ``e`` it is Bernoulli with parameter
``p(e, d) = (1 - (1 - 2e)**d) / 2``. The estimator maximizes the joint
log-likelihood of all differences over a grid of candidate rates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codes import CodeFamily
from .entropy import inverse_binary_entropy
from .errors import DimensionError, EmptySample, FamilyMismatch
from .gf2 import bitblock, mat_vec_mul

METHODS = ("multi_syndrome", "single_syndrome", "sampling")
DEFAULT_GRID_STEP = 1e-4


@dataclass(frozen=True)
class SyndromeSet:
    syndromes: tuple[np.ndarray, ...]
    family_id: str

    @property
    def u(self) -> int:
        return len(self.syndromes)


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    method: str
    disclosed_bits: int
    log_likelihood_at_estimate: float
    grid_step: float
    # likelihood still increasing at the top of the grid
    above_threshold: bool = False


def default_threshold(m: int, n: int) -> float:
    """Shannon limit of a rate ``1 - m/n`` code: the ``e`` with ``h(e) = m/n``."""
    return inverse_binary_entropy(m / n)


def compute_syndromes(x, family: CodeFamily) -> SyndromeSet:
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != family.n:
        raise DimensionError(f"key length {x.shape} does not match n={family.n}")
    return SyndromeSet(tuple(mat_vec_mul(h, x) for h in family.codes), family.family_id)


def syndrome_delta(zA: SyndromeSet, zB: SyndromeSet) -> list[np.ndarray]:
    if zA.family_id != zB.family_id or zA.u != zB.u:
        raise FamilyMismatch("syndrome sets come from different families")
    out = []
    for a, b in zip(zA.syndromes, zB.syndromes):
        if a.shape != b.shape:
            raise FamilyMismatch("syndrome lengths differ")
        out.append(bitblock(np.bitwise_xor(a, b)))
    return out


def odd_error_prob(e_prime, d):
    """Probability that a degree-``d`` check sees an odd number of flips.

    Vectorized over both arguments. Uses ``-expm1(d * log1p(-2e)) / 2`` on
    [0, 1/2] to avoid cancellation at small ``e``.
    """
    e = np.asarray(e_prime, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        low = -np.expm1(d * np.log1p(-2.0 * np.minimum(e, 0.5))) / 2.0
        high = (1.0 - (1.0 - 2.0 * e) ** d) / 2.0
    out = np.where(e <= 0.5, low, high)
    return float(out) if out.ndim == 0 else out


def _degree_counts(deltas: Sequence[np.ndarray], family: CodeFamily):
    if len(deltas) != family.u:
        raise FamilyMismatch(f"{len(deltas)} deltas for a {family.u}-member family")
    degs, ones = [], []
    for dz, code in zip(deltas, family.codes):
        dz = np.asarray(dz)
        if dz.shape != (code.m,):
            raise DimensionError(f"delta of shape {dz.shape} for m={code.m}")
        degs.append(code.row_degrees)
        ones.append(dz.astype(bool))
    deg = np.concatenate(degs)
    one = np.concatenate(ones)
    top = int(deg.max()) + 1 if deg.size else 1
    n1 = np.bincount(deg[one], minlength=top)
    n0 = np.bincount(deg[~one], minlength=top)
    used = np.flatnonzero((n1 + n0) > 0)
    return used, n1[used].astype(np.float64), n0[used].astype(np.float64)


def _loglik_grid(grid: np.ndarray, degrees, n1, n0) -> np.ndarray:
    p = odd_error_prob(grid[:, None], degrees[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(n1 > 0, n1 * np.log(p), 0.0)
        t0 = np.where(n0 > 0, n0 * np.log1p(-p), 0.0)
    return (t1 + t0).sum(axis=1)


def log_likelihood(e_prime: float, deltas: Sequence[np.ndarray], family: CodeFamily) -> float:
    """Log of the product over members and checks of each difference bit's probability.

    Returns ``-inf`` when some observed bit has probability zero.
    """
    degrees, n1, n0 = _degree_counts(deltas, family)
    return float(_loglik_grid(np.array([float(e_prime)]), degrees, n1, n0)[0])


def estimate_qber_mle(deltas: Sequence[np.ndarray], family: CodeFamily,
                      threshold: float | None = None,
                      grid_step: float = DEFAULT_GRID_STEP) -> EstimateReport:
    """Maximum-likelihood QBER over ``{grid_step, 2*grid_step, ...} <= threshold``.

    The point 0 is added when every difference bit is zero. Ties go to the
    smaller rate. ``threshold`` defaults to the Shannon limit of the
    family's rate.
    """
    if threshold is None:
        threshold = default_threshold(family.m, family.n)
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    if not 0 < threshold <= 0.5:
        raise ValueError("threshold must lie in (0, 0.5]")
    degrees, n1, n0 = _degree_counts(deltas, family)
    k_max = int(np.floor(threshold / grid_step + 1e-9))
    grid = grid_step * np.arange(1, k_max + 1, dtype=np.float64)
    if n1.sum() == 0:
        grid = np.concatenate([[0.0], grid])
    ll = _loglik_grid(grid, degrees, n1, n0)
    best = int(np.argmax(ll))
    above = False
    if best == grid.size - 1 and grid[best] + grid_step <= 0.5:
        nxt = _loglik_grid(np.array([grid[best] + grid_step]), degrees, n1, n0)[0]
        above = bool(nxt > ll[best])
    method = "single_syndrome" if family.u == 1 else "multi_syndrome"
    return EstimateReport(float(grid[best]), method, 0, float(ll[best]), grid_step, above)


def estimate_qber_single(deltas: Sequence[np.ndarray], family: CodeFamily,
                         threshold: float | None = None,
                         grid_step: float = DEFAULT_GRID_STEP) -> EstimateReport:
    """The one-syndrome estimator: ``estimate_qber_mle`` on the first member only."""
    if threshold is None:
        threshold = default_threshold(family.m, family.n)
    return estimate_qber_mle(list(deltas)[:1], family.restrict(1), threshold, grid_step)


def estimate_qber_sampling(x_sample, y_sample) -> EstimateReport:
    """Fraction of disagreeing positions in a publicly compared sample."""
    x = np.asarray(x_sample)
    y = np.asarray(y_sample)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError("samples must be 1-D and of equal length")
    if x.size == 0:
        raise EmptySample("cannot estimate from an empty sample")
    rate = float(np.count_nonzero(x != y)) / x.size
    return EstimateReport(rate, "sampling", int(x.size), float("nan"), 0.0)
