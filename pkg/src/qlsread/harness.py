"""End-to-end experiment orchestration: sweeps, bounds pipeline, trial gating.

The fixed-length sweep mirrors the post-processing analysis of a single long
dataset: every trial carries ``2 * max(n)`` rounds, and each sweep point re-
reads the same data using rounds ``1..n`` as the heralding readout and rounds
``n+1..2n`` as the test readout, so points are intentionally correlated.

The adaptive sweep re-reads identical per-trial streams for every threshold,
matching a post-processed reanalysis of one dataset; the bounds pipeline
feeds simulated double-readout counts through the point sandwich and the
union-bound confidence machinery.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .bounds import (
    BoundsReport,
    binomial_exact_lower,
    binomial_exact_upper,
    bounds_report,
)
from .estimator import AdaptivePolicy, DEFAULT_ROUND_CAP, ReadoutPolicy, ReferenceTable
from .model import DoubleReadoutCounts, Subspace, flip
from .sim import DOMAIN_SWEEP, GenerativeConfig, simulate_double_readout, simulate_outcome_matrix

# One-sided significance for the 68% error bars (the Gaussian-motivated level).
CI68_SIGNIFICANCE = 0.317 / 2
DEFAULT_VALIDATION_THRESHOLD = 0.5


class SweepAxis(Enum):
    FIXED_ROUNDS = "fixed_rounds"
    THRESHOLD_RATIO = "threshold_ratio"


@dataclass(frozen=True)
class SweepPoint:
    """One sweep point; the CP interval brackets the mean infidelity.

    The interval endpoints are the averages of the per-state exact binomial
    bounds (each side at the 68% one-sided level), so the mean point estimate
    always lies inside.
    """

    axis_value: float
    infidelity_plus: float
    infidelity_minus: float
    infidelity_mean: float
    mean_rounds: float
    ci_68_low: float
    ci_68_high: float
    cap_hits: int = 0


@dataclass(frozen=True)
class SweepResult:
    sweep_axis: SweepAxis
    points: tuple[SweepPoint, ...]

    def __post_init__(self) -> None:
        values = [p.axis_value for p in self.points]
        if sorted(values) != values:
            raise ValueError("sweep points must be sorted by axis value")
        for p in self.points:
            for inf in (p.infidelity_plus, p.infidelity_minus, p.infidelity_mean):
                if not (0.0 <= inf <= 1.0):
                    raise ValueError(f"infidelity out of range at {p.axis_value}: {inf}")
            if p.mean_rounds < 1.0:
                raise ValueError(f"mean rounds below 1 at {p.axis_value}")
            if not (p.ci_68_low <= p.infidelity_mean <= p.ci_68_high):
                raise ValueError(f"CP interval must contain the point estimate at {p.axis_value}")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "axis",
                    "axis_value",
                    "infidelity_plus",
                    "infidelity_minus",
                    "infidelity_mean",
                    "mean_rounds",
                    "ci_68_low",
                    "ci_68_high",
                    "cap_hits",
                ]
            )
            for p in self.points:
                writer.writerow(
                    [
                        self.sweep_axis.value,
                        repr(p.axis_value),
                        repr(p.infidelity_plus),
                        repr(p.infidelity_minus),
                        repr(p.infidelity_mean),
                        repr(p.mean_rounds),
                        repr(p.ci_68_low),
                        repr(p.ci_68_high),
                        p.cap_hits,
                    ]
                )


def _infidelity_point(
    counts: DoubleReadoutCounts, axis_value: float, mean_rounds: float, cap_hits: int
) -> SweepPoint:
    lows = {}
    highs = {}
    infids = {}
    for x in (0, 1):
        k = counts.cell(flip(x), x, x)
        n = counts.total(x)
        infids[x] = k / n
        lows[x] = binomial_exact_lower(k, n, CI68_SIGNIFICANCE)
        highs[x] = binomial_exact_upper(k, n, CI68_SIGNIFICANCE)
    mean = 0.5 * (infids[0] + infids[1])
    return SweepPoint(
        axis_value=axis_value,
        infidelity_plus=infids[0],
        infidelity_minus=infids[1],
        infidelity_mean=mean,
        mean_rounds=mean_rounds,
        ci_68_low=0.5 * (lows[0] + lows[1]),
        ci_68_high=0.5 * (highs[0] + highs[1]),
        cap_hits=cap_hits,
    )


def herald_test_counts(
    outcome_matrices: dict[int, np.ndarray], table: ReferenceTable, n: int
) -> DoubleReadoutCounts:
    """Re-read a 2n-round dataset: rounds 1..n herald, rounds n+1..2n test."""
    arr = np.zeros((2, 2, 2), dtype=np.int64)
    llr_values = table.log_likelihood_ratios
    for p, matrix in outcome_matrices.items():
        llr = llr_values[matrix[:, : 2 * n]]
        cums = np.cumsum(llr, axis=1)
        herald = (cums[:, n - 1] > 0.0).astype(np.int8)
        test = ((cums[:, 2 * n - 1] - cums[:, n - 1]) > 0.0).astype(np.int8)
        cells = np.bincount(2 * test + herald, minlength=4)
        for o_prime in (0, 1):
            for o in (0, 1):
                arr[o_prime, o, p] += cells[2 * o_prime + o]
    return DoubleReadoutCounts(arr)


def run_fixed_sweep(
    config: GenerativeConfig,
    table: ReferenceTable,
    n_values: Sequence[int],
    trials: dict[Subspace | int, int],
    workers: int = 1,
) -> SweepResult:
    """Infidelity versus fixed repetition count, reusing one dataset for all points.

    For each ``n`` the infidelity of state ``x`` is the leading-order
    disagreement rate ``n(flip(x), x, x) / N_x`` between the heralding readout
    (first ``n`` rounds) and the test readout (next ``n`` rounds).
    """
    n_values = sorted(int(n) for n in n_values)
    if not n_values or n_values[0] < 1:
        raise ValueError("n_values must be positive integers")
    max_n = n_values[-1]
    matrices = {
        int(p): simulate_outcome_matrix(
            config, int(p), int(count), 2 * max_n, domain=DOMAIN_SWEEP, workers=workers
        )
        for p, count in trials.items()
    }
    points = []
    for n in n_values:
        counts = herald_test_counts(matrices, table, n)
        points.append(_infidelity_point(counts, float(n), float(n), 0))
    return SweepResult(sweep_axis=SweepAxis.FIXED_ROUNDS, points=tuple(points))


def run_adaptive_sweep(
    config: GenerativeConfig,
    table: ReferenceTable,
    thresholds: Sequence[float],
    trials: dict[Subspace | int, int],
    cap: int = DEFAULT_ROUND_CAP,
    workers: int = 1,
) -> SweepResult:
    """Infidelity versus stopping threshold for adaptive double readout.

    Every threshold re-reads identical per-trial streams (the analog of
    re-analyzing one recorded dataset), so mean rounds grow deterministically
    with the threshold.
    """
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds or thresholds[0] <= 1.0:
        raise ValueError("thresholds must exceed 1")
    points = []
    for t in thresholds:
        policy = AdaptivePolicy(table=table, threshold=t, cap=cap)
        result = simulate_double_readout(config, policy, trials, workers=workers)
        points.append(
            _infidelity_point(result.counts, t, result.mean_rounds_test, result.cap_hits)
        )
    return SweepResult(sweep_axis=SweepAxis.THRESHOLD_RATIO, points=tuple(points))


def run_bounds_pipeline(
    config: GenerativeConfig,
    table: ReferenceTable,
    policy: ReadoutPolicy,
    trials: dict[Subspace | int, int],
    alpha_list: Sequence[float],
    beta: float | None,
    c: float,
    workers: int = 1,
) -> tuple[list[BoundsReport], DoubleReadoutCounts]:
    """Simulate double-readout counts once and bound both states at each level.

    ``beta=None`` optimizes the significance split per report.  Returns the
    reports together with the simulated counts so callers can persist both.
    """
    result = simulate_double_readout(config, policy, trials, workers=workers)
    reports = []
    for x in (Subspace.S_PLUS, Subspace.S_MINUS):
        for alpha in alpha_list:
            reports.append(bounds_report(result.counts, float(alpha), beta, c, x))
    return reports, result.counts


def bounds_reports_json(reports: Iterable[BoundsReport], counts: DoubleReadoutCounts) -> str:
    rows = []
    for report in reports:
        row = report.to_dict()
        row["n_totals"] = {"plus": counts.total(0), "minus": counts.total(1)}
        rows.append(row)
    return json.dumps(rows, indent=2)


def bounds_reports_csv(
    reports: Iterable[BoundsReport], counts: DoubleReadoutCounts, path: str | Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["x", "c", "alpha", "beta", "r_hat", "f", "g", "lower", "upper", "n_plus", "n_minus"]
        )
        for report in reports:
            writer.writerow(
                [
                    report.x.label,
                    repr(report.c),
                    repr(report.alpha),
                    repr(report.beta),
                    repr(report.r_hat_cell),
                    repr(report.f_point),
                    repr(report.g_point),
                    repr(report.lower_cb),
                    repr(report.upper_cb),
                    counts.total(0),
                    counts.total(1),
                ]
            )


# -- validation-window gating ----------------------------------------------------


@dataclass(frozen=True)
class ValidationRecord:
    """A trial payload plus the outcome of the two pre-trial validation checks."""

    payload: Any
    check_plus: bool
    check_minus: bool


@dataclass(frozen=True)
class DiscardedWindow:
    """Range of trial indices dropped by the gating rule (inclusive)."""

    start: int
    stop: int
    fraction_plus: float
    fraction_minus: float


def apply_validation_window(
    records: Iterable[ValidationRecord],
    window: int = 100,
    threshold_fraction: float = DEFAULT_VALIDATION_THRESHOLD,
) -> tuple[list[ValidationRecord], list[DiscardedWindow]]:
    """Gate trials on the sliding pass fraction of per-state validation checks.

    Tracks the pass fraction of each state's checks over the last ``window``
    trials (fewer while the history is still filling).  Whenever either
    fraction drops strictly below ``threshold_fraction``, the whole current
    window of trials is discarded and tracking restarts.  Returns the
    surviving records in order plus a log of discarded index ranges.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if not (0.0 < threshold_fraction <= 1.0):
        raise ValueError(f"threshold_fraction must lie in (0, 1], got {threshold_fraction}")
    kept: list[ValidationRecord] = []
    discards: list[DiscardedWindow] = []
    pending: deque[tuple[int, ValidationRecord]] = deque()
    plus_history: deque[bool] = deque(maxlen=window)
    minus_history: deque[bool] = deque(maxlen=window)
    for index, record in enumerate(records):
        pending.append((index, record))
        plus_history.append(record.check_plus)
        minus_history.append(record.check_minus)
        fraction_plus = sum(plus_history) / len(plus_history)
        fraction_minus = sum(minus_history) / len(minus_history)
        if fraction_plus < threshold_fraction or fraction_minus < threshold_fraction:
            discards.append(
                DiscardedWindow(pending[0][0], index, fraction_plus, fraction_minus)
            )
            pending.clear()
            plus_history.clear()
            minus_history.clear()
        elif len(pending) > window:
            kept.append(pending.popleft()[1])
    kept.extend(record for _, record in pending)
    return kept, discards
