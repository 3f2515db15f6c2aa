"""Two-party reconciliation session, leakage accounting and efficiency."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .codes import CodeFamily
from .decoder import CONVERGENCE_MODES, EXCHANGES, SCHEDULES, DecodeResult, decode
from .entropy import binary_entropy
from .errors import DimensionError, FamilyMismatch, ZeroEntropy
from .estimation import (EstimateReport, SyndromeSet, compute_syndromes,
                         default_threshold, estimate_qber_mle, estimate_qber_sampling,
                         estimate_qber_single, syndrome_delta)
from .gf2 import bitblock, gf2_rank, mat_vec_mul, vstack

__all__ = [
    "InfeasibleRate",
    "SessionParams",
    "ReconcileOutcome",
    "binary_entropy",
    "reconciliation_efficiency",
    "leakage_audit",
    "discard_leakage",
    "alice_encode",
    "bob_reconcile",
]

ESTIMATORS = ("multi_syndrome", "single_syndrome", "sampling")


class InfeasibleRate(UserWarning):
    """Efficiency at or below 1: the code rate exceeds the Shannon limit for ``e``."""


def reconciliation_efficiency(m: int, n: int, e: float, alpha: float = 1.0) -> float:
    """``f = alpha * m / (n * h(e))``; warns with ``InfeasibleRate`` when ``f <= 1``."""
    if e == 0:
        raise ZeroEntropy("h(0) = 0, efficiency is undefined")
    if not 0 < e < 0.5:
        raise ValueError(f"error rate must lie in (0, 0.5), got {e}")
    if alpha < 1:
        raise ValueError("alpha must be at least 1")
    f = alpha * m / (n * binary_entropy(e))
    if f <= 1 + 1e-9:
        warnings.warn(f"f = {f:.6f} <= 1 at e = {e}", InfeasibleRate, stacklevel=2)
    return f


def leakage_audit(family: CodeFamily) -> tuple[int, float]:
    """GF(2) rank of all members stacked, and that rank divided by ``m``.

    The rank counts the independent parity bits disclosed by all syndromes
    together; it equals ``m`` only when every extra syndrome is a function
    of the first.
    """
    hit = family._cache.get("audit")
    if hit is None:
        rank = gf2_rank(family.codes[0]) if family.u == 1 else gf2_rank(vstack(family.codes))
        hit = (int(rank), rank / family.m)
        family._cache["audit"] = hit
    return hit


def discard_leakage(key, family: CodeFamily) -> np.ndarray:
    """Drop the bits at the family's independent positions, keeping order."""
    key = np.asarray(key)
    if key.ndim != 1 or key.shape[0] != family.n:
        raise DimensionError(f"key length {key.shape} does not match n={family.n}")
    keep = np.ones(family.n, dtype=bool)
    keep[list(family.independent_positions)] = False
    return bitblock(key[keep])


def alice_encode(x, family: CodeFamily) -> SyndromeSet:
    return compute_syndromes(x, family)


@dataclass(frozen=True)
class SessionParams:
    family: CodeFamily
    threshold: float | None = None
    max_iterations: int = 100
    schedule: str = "flooding"
    estimator: str = "multi_syndrome"
    convergence_mode: str = "all"
    grid_step: float = 1e-4
    seed: int | None = None
    exchange: str = "member"

    def __post_init__(self):
        if self.threshold is None:
            object.__setattr__(self, "threshold",
                               default_threshold(self.family.m, self.family.n))
        if not 0 < self.threshold <= 0.5:
            raise ValueError("threshold must lie in (0, 0.5]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.convergence_mode not in CONVERGENCE_MODES:
            raise ValueError(f"convergence_mode must be one of {CONVERGENCE_MODES}")
        if self.exchange not in EXCHANGES:
            raise ValueError(f"exchange must be one of {EXCHANGES}")


@dataclass
class ReconcileOutcome:
    status: str  # "Success" | "DecodeFailure" | "Aborted"
    corrected_key: np.ndarray | None
    estimate_report: EstimateReport
    decode_result: DecodeResult | None
    leakage_bits: int
    alpha: float
    efficiency_f: float
    decode_error_rate: float | None = None


def bob_reconcile(y, alice: SyndromeSet, params: SessionParams,
                  alice_sample: tuple | None = None, truth=None) -> ReconcileOutcome:
    """Bob's side of one session: estimate, gate, decode, verify, discard.

    ``alice_sample`` is ``(positions, alice_bits)`` and is required only by
    the sampling estimator. ``truth`` (Alice's key, simulation only) turns
    on the per-iteration correction counts and never influences decoding.
    An estimate of zero is raised to ``1/(2n)`` before decoding.
    """
    family = params.family
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != family.n:
        raise DimensionError(f"key length {y.shape} does not match n={family.n}")
    if alice.family_id != family.family_id or alice.u != family.u:
        raise FamilyMismatch("Alice's syndromes belong to a different family")

    if params.estimator == "sampling":
        if alice_sample is None:
            raise ValueError("the sampling estimator needs Alice's sample")
        positions, bits = alice_sample
        report = estimate_qber_sampling(bits, y[np.asarray(positions)])
    else:
        deltas = syndrome_delta(alice, compute_syndromes(y, family))
        est = estimate_qber_mle if params.estimator == "multi_syndrome" else estimate_qber_single
        report = est(deltas, family, params.threshold, params.grid_step)

    rank, _ = leakage_audit(family)
    leakage = max(family.m, rank)
    alpha = leakage / family.m

    if report.estimate > params.threshold or report.above_threshold:
        return ReconcileOutcome("Aborted", None, report, None, leakage, alpha, math.nan)

    e = max(report.estimate, 1.0 / (2 * family.n))
    e = min(e, 0.5 - 1e-9)
    result = decode(y, e, family, alice, params.schedule, params.max_iterations, truth=truth,
                    mode=params.convergence_mode, seed=params.seed, exchange=params.exchange)
    verified = result.success and all(
        np.array_equal(mat_vec_mul(h, result.corrected_key), z)
        for h, z in zip(family.codes, alice.syndromes))
    if not verified:
        return ReconcileOutcome("DecodeFailure", None, report, result, leakage, alpha,
                                math.nan, e)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InfeasibleRate)
        f = reconciliation_efficiency(family.m, family.n, e, alpha)
    return ReconcileOutcome("Success", discard_leakage(result.corrected_key, family), report,
                            result, leakage, alpha, f, e)
