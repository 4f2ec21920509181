"""Bayesian subspace estimation from sequences of two-bit round outcomes.

A reference table holds smoothed estimates of the per-round outcome
distribution for each hidden state.  With a uniform prior and independent
rounds, the posterior odds after a sequence of outcomes are the product of
per-round likelihood ratios; everything here works in the log domain so that
thousand-round sequences with strongly floored tables stay finite.

The adaptive reader accumulates ``sum_j llr(v_j)`` where
``llr(v) = log p_hat(v|S-) - log p_hat(v|S+)`` (see
``ReferenceTable.log_likelihood_ratio``) and stops as soon as the sum exceeds
``log(t)`` or drops below ``-log(t)``.  Both comparisons are strict: a ratio
exactly equal to the threshold keeps reading.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from itertools import islice
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from .model import ALL_OUTCOMES, RoundOutcome, Subspace

DEFAULT_SMOOTHING_FLOOR = 1e-5
DEFAULT_ROUND_CAP = 50
COLUMN_SUM_TOL = 1e-12


class EmptyColumn(ValueError):
    """Raised when a reference column has no observations at all."""


class SourceExhausted(RuntimeError):
    """Raised when a lazy round source ends before the reader can stop."""


class LengthMismatch(ValueError):
    """Raised when a fixed-length readout receives the wrong number of rounds."""


@dataclass(frozen=True)
class ReferenceTable:
    """Smoothed per-round outcome distribution ``p_hat[v, s]`` for each state.

    ``p_hat`` has shape (4, 2) with rows indexed by the outcome encoding and
    columns by subspace index.  Each column sums to one; no entry is smaller
    than the smoothing floor up to the final renormalization (worst case
    ``floor / (1 + 4*floor)``).
    """

    p_hat: np.ndarray
    smoothing_floor: float
    source_totals: tuple[int, int]

    def __post_init__(self) -> None:
        arr = np.asarray(self.p_hat, dtype=float)
        if arr.shape != (4, 2):
            raise ValueError(f"p_hat must have shape (4, 2), got {arr.shape}")
        if not (0.0 < self.smoothing_floor < 0.25):
            raise ValueError(f"smoothing floor must lie in (0, 1/4), got {self.smoothing_floor}")
        sums = arr.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > COLUMN_SUM_TOL):
            raise ValueError(f"columns must sum to 1, got {sums}")
        least_allowed = self.smoothing_floor / (1.0 + 4.0 * self.smoothing_floor)
        if np.any(arr < least_allowed):
            raise ValueError("table entries fell below the smoothing floor")
        arr.flags.writeable = False
        object.__setattr__(self, "p_hat", arr)
        log_p = np.log(arr)
        log_p.flags.writeable = False
        object.__setattr__(self, "_log_p", log_p)

    def probability(self, v: RoundOutcome | int, s: Subspace | int) -> float:
        return float(self.p_hat[int(v), int(s)])

    def log_likelihood_ratio(self, v: RoundOutcome | int) -> float:
        """Per-round evidence ``log p_hat(v|S-) - log p_hat(v|S+)``.

        The adaptive reader stops when the running sum of this quantity
        exceeds ``math.log(threshold)`` in magnitude, so callers constructing
        edge cases can reproduce the comparison exactly.
        """
        row = self._log_p[int(v)]
        return float(row[Subspace.S_MINUS]) - float(row[Subspace.S_PLUS])

    @property
    def log_likelihood_ratios(self) -> np.ndarray:
        """All four per-outcome evidences as a vector, index = outcome encoding."""
        return self._log_p[:, int(Subspace.S_MINUS)] - self._log_p[:, int(Subspace.S_PLUS)]

    # -- serialization -------------------------------------------------------

    def to_csv(self, csv_path: str | Path, sidecar_path: str | Path) -> None:
        """Write the table as CSV plus a JSON sidecar with floor and totals."""
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["v_bit1", "v_bit2", "subspace", "p_hat"])
            for v in ALL_OUTCOMES:
                for s in Subspace:
                    writer.writerow([v.bit1, v.bit2, s.label, repr(self.probability(v, s))])
        sidecar = {
            "smoothing_floor": self.smoothing_floor,
            "source_totals": {
                "plus": self.source_totals[0],
                "minus": self.source_totals[1],
            },
        }
        Path(sidecar_path).write_text(json.dumps(sidecar, indent=2), encoding="utf-8")

    @classmethod
    def from_csv(cls, csv_path: str | Path, sidecar_path: str | Path) -> "ReferenceTable":
        arr = np.zeros((4, 2))
        with open(csv_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            required = {"v_bit1", "v_bit2", "subspace", "p_hat"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise ValueError(
                    f"reference CSV needs columns {sorted(required)}, got {reader.fieldnames}"
                )
            for row in reader:
                v = RoundOutcome.from_bits(int(row["v_bit1"]), int(row["v_bit2"]))
                s = Subspace.from_label(row["subspace"])
                arr[int(v), int(s)] = float(row["p_hat"])
        sidecar = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
        totals = (
            int(sidecar["source_totals"]["plus"]),
            int(sidecar["source_totals"]["minus"]),
        )
        return cls(p_hat=arr, smoothing_floor=float(sidecar["smoothing_floor"]), source_totals=totals)


def build_reference(counts, floor: float = DEFAULT_SMOOTHING_FLOOR) -> ReferenceTable:
    """Turn raw reference counts into a smoothed table.

    ``counts`` is a (4, 2) array of outcome tallies per subspace.  Each entry
    becomes ``max(count/total, floor)`` and columns are renormalized, so
    unseen outcomes get a small positive probability instead of zero.
    """
    arr = np.asarray(counts, dtype=float)
    if arr.shape != (4, 2):
        raise ValueError(f"reference counts must have shape (4, 2), got {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("reference counts must be nonnegative")
    if not (0.0 < floor < 0.25):
        raise ValueError(f"floor must lie in (0, 1/4), got {floor}")
    totals = arr.sum(axis=0)
    if np.any(totals < 1):
        raise EmptyColumn(f"each subspace column needs at least one count, totals {totals}")
    p = np.maximum(arr / totals[None, :], floor)
    p /= p.sum(axis=0, keepdims=True)
    return ReferenceTable(
        p_hat=p,
        smoothing_floor=floor,
        source_totals=(int(totals[0]), int(totals[1])),
    )


class Posterior(tuple):
    """Posterior pair ``(p_minus, p_plus)``; plain tuple with named access."""

    __slots__ = ()

    def __new__(cls, p_minus: float, p_plus: float):
        return super().__new__(cls, (p_minus, p_plus))

    @property
    def p_minus(self) -> float:
        return self[0]

    @property
    def p_plus(self) -> float:
        return self[1]


def _total_log_ratio(seq: Iterable[RoundOutcome | int], table: ReferenceTable) -> float:
    return math.fsum(table.log_likelihood_ratio(v) for v in seq)


def posterior(seq: Sequence[RoundOutcome | int], table: ReferenceTable) -> Posterior:
    """Posterior state probabilities under a uniform prior; empty input gives (1/2, 1/2)."""
    llr = _total_log_ratio(seq, table)
    if llr >= 0.0:
        p_minus = 1.0 / (1.0 + math.exp(-llr))
    else:
        e = math.exp(llr)
        p_minus = e / (1.0 + e)
    return Posterior(p_minus, 1.0 - p_minus)


def map_estimate(seq: Sequence[RoundOutcome | int], table: ReferenceTable) -> Subspace:
    """Most probable state given the sequence; exact ties resolve to ``S_PLUS``."""
    llr = _total_log_ratio(seq, table)
    return Subspace.S_MINUS if llr > 0.0 else Subspace.S_PLUS


def fixed_n_readout(
    seq: Sequence[RoundOutcome | int], table: ReferenceTable, rounds: int
) -> Subspace:
    """MAP readout over exactly ``rounds`` outcomes; wrong length raises LengthMismatch."""
    if len(seq) != rounds:
        raise LengthMismatch(f"expected {rounds} rounds, got {len(seq)}")
    return map_estimate(seq, table)


class StopReason(Enum):
    THRESHOLD_HIGH = "threshold_high"
    THRESHOLD_LOW = "threshold_low"
    ROUND_CAP = "round_cap"


@dataclass(frozen=True)
class AdaptiveResult:
    """Outcome of an adaptive readout.

    ``log_ratio`` is the accumulated posterior log-odds for ``S-`` over
    ``S+`` at the moment reading stopped.
    """

    estimate: Subspace
    rounds_used: int
    log_ratio: float
    stopped_by: StopReason


def adaptive_readout(
    rounds: Iterable[RoundOutcome | int],
    table: ReferenceTable,
    threshold_t: float,
    cap: int = DEFAULT_ROUND_CAP,
) -> AdaptiveResult:
    """Consume rounds until the posterior odds ratio strictly exceeds the threshold.

    Stops with THRESHOLD_HIGH when the running ratio goes above ``t`` and
    THRESHOLD_LOW when it drops below ``1/t``; a ratio exactly equal to either
    boundary keeps reading.  After ``cap`` rounds the MAP estimate over the
    consumed prefix is returned with ROUND_CAP.  If the source ends first,
    SourceExhausted is raised.
    """
    if not threshold_t > 1.0:
        raise ValueError(f"threshold must exceed 1, got {threshold_t}")
    if cap < 1:
        raise ValueError(f"cap must be at least 1, got {cap}")
    log_t = math.log(threshold_t)
    log_ratio = 0.0
    used = 0
    iterator: Iterator = iter(rounds)
    while True:
        try:
            v = next(iterator)
        except StopIteration:
            raise SourceExhausted(
                f"round source ended after {used} rounds, before a stopping condition"
            ) from None
        log_ratio += table.log_likelihood_ratio(v)
        used += 1
        if log_ratio > log_t:
            return AdaptiveResult(Subspace.S_MINUS, used, log_ratio, StopReason.THRESHOLD_HIGH)
        if log_ratio < -log_t:
            return AdaptiveResult(Subspace.S_PLUS, used, log_ratio, StopReason.THRESHOLD_LOW)
        if used >= cap:
            estimate = Subspace.S_MINUS if log_ratio > 0.0 else Subspace.S_PLUS
            return AdaptiveResult(estimate, used, log_ratio, StopReason.ROUND_CAP)


# -- readout policies (used by the double-readout simulator) -------------------


@dataclass(frozen=True)
class PolicyDecision:
    estimate: Subspace
    rounds_used: int
    cap_hit: bool


@dataclass(frozen=True)
class FixedRoundsPolicy:
    """Readout that always consumes a fixed number of rounds and takes the MAP."""

    table: ReferenceTable
    rounds: int

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError(f"rounds must be at least 1, got {self.rounds}")

    @property
    def max_rounds(self) -> int:
        return self.rounds

    def run(self, source: Iterator[RoundOutcome | int]) -> PolicyDecision:
        seq = list(islice(source, self.rounds))
        estimate = fixed_n_readout(seq, self.table, self.rounds)
        return PolicyDecision(estimate, self.rounds, False)


@dataclass(frozen=True)
class AdaptivePolicy:
    """Readout that stops once the posterior odds ratio crosses a threshold."""

    table: ReferenceTable
    threshold: float
    cap: int = DEFAULT_ROUND_CAP

    @property
    def max_rounds(self) -> int:
        return self.cap

    def run(self, source: Iterator[RoundOutcome | int]) -> PolicyDecision:
        result = adaptive_readout(source, self.table, self.threshold, self.cap)
        return PolicyDecision(
            result.estimate, result.rounds_used, result.stopped_by is StopReason.ROUND_CAP
        )


ReadoutPolicy = Union[FixedRoundsPolicy, AdaptivePolicy]
