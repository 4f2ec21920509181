"""Readout-error bounds: point sandwich, exact binomial intervals, union-bound composition.

The observable disagreement rate ``r(flip(x), x | x)`` equals the combined
error ``F(x)`` only to leading order.  Under the diagonal-dominance
assumption (every diagonal model probability at least ``c > 1/2``) the
higher-order contamination can be bracketed by polynomials in three
observable cells, giving the sandwich

    r_hat - l(r_hat, c, x)  <=  F(x)  <=  r_hat + u(r_hat, c, x).

Confidence bounds replace each cell by an exact (Clopper-Pearson style)
binomial bound and combine them with a union bound: the leading cell gets
significance ``alpha - 3*beta`` and each of the three cells feeding the bias
polynomial gets ``beta``.  ``beta_star`` picks the ``beta`` that makes the
upper bound tightest for a given count table; ``sensitivity_grid`` measures
how much is lost by freezing ``beta`` instead of re-optimizing per table.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.special as sp

from .model import (
    ConditionalRates,
    DoubleReadoutCounts,
    Subspace,
    flip,
    rates_from_counts,
)

DEFAULT_C = 0.95
BISECTION_TOL = 1e-13
BISECTION_MAX_ITER = 200
BETA_GRID_SIZE = 200
BETA_GRID_FLOOR = 1e-6
_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# Per-preparation totals used for the synthetic tuning counts and the
# sensitivity grid.
TUNING_TOTAL_PLUS = 25000
TUNING_TOTAL_MINUS = 100000


class InvalidC(ValueError):
    """Raised when the diagonal-dominance parameter does not satisfy c > 1/2."""


class InvalidBeta(ValueError):
    """Raised when the significance split violates 0 < 3*beta < alpha."""


class BisectionError(ArithmeticError):
    """Raised if interval bisection fails to converge (numerical failure)."""


def tuning_counts() -> DoubleReadoutCounts:
    """Synthetic count table used to choose the default significance split.

    Built from round targets ``r_hat(disagree) ~ 1e-4`` and
    ``r_hat(both wrong) ~ 1e-2`` at totals 25000 / 100000; deterministic, no
    sampling involved.
    """
    return DoubleReadoutCounts.from_cells(
        {
            (1, 1, 1): 98980,
            (0, 1, 1): 10,
            (1, 0, 1): 10,
            (0, 0, 1): 1000,
            (1, 1, 0): 250,
            (1, 0, 0): 2,
            (0, 1, 0): 2,
            (0, 0, 0): 24746,
        }
    )


def _check_c(c: float) -> float:
    c = float(c)
    if not (0.5 < c <= 1.0):
        raise InvalidC(f"c must lie in (1/2, 1], got {c}")
    return c


def _check_alpha_beta(alpha: float, beta: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not (0.0 < 3.0 * beta < alpha):
        raise InvalidBeta(f"need 0 < 3*beta < alpha, got beta={beta}, alpha={alpha}")


def _bias_cells(x: int) -> tuple[tuple[int, int, int], tuple[int, int, int], tuple[int, int, int]]:
    """The three rate cells feeding the bias polynomials for state ``x``.

    Returns ``(disagree, both_wrong, other_disagree)`` index triples
    ``(o_prime, o, p)``; for ``x=0`` these are ``r(1,0|0)``, ``r(1,1|0)`` and
    ``r(0,1|1)``, and the ``x=1`` case is the full 0<->1 relabeling.
    """
    nx = flip(x)
    return (nx, x, x), (nx, nx, x), (x, nx, nx)


def _u_from_cells(disagree, both_wrong, other, c):
    c3 = c**3
    c6 = c3 * c3
    return disagree * (disagree + both_wrong + other) / c6 + both_wrong * disagree**2 * (
        disagree + other
    ) / (c6 * c6)


def _l_from_cells(disagree, both_wrong, other, c):
    c3 = c**3
    c6 = c3 * c3
    return (both_wrong / c3) * (
        other / c3 + disagree**2 / c6 + disagree * other / c6
    ) + (disagree**2 / c6) * (disagree / c3 + other / c3)


def u_bias(rates: ConditionalRates, c: float, x: Subspace | int) -> float:
    """Upward bias bound ``u(r, c, x)`` on the disagreement rate."""
    c = _check_c(c)
    x = int(x)
    cells = _bias_cells(x)
    return float(_u_from_cells(*(rates.cell(*ix) for ix in cells), c))


def l_bias(rates: ConditionalRates, c: float, x: Subspace | int) -> float:
    """Downward bias bound ``l(r, c, x)`` on the disagreement rate."""
    c = _check_c(c)
    x = int(x)
    cells = _bias_cells(x)
    return float(_l_from_cells(*(rates.cell(*ix) for ix in cells), c))


def point_bounds(counts: DoubleReadoutCounts, c: float, x: Subspace | int) -> tuple[float, float]:
    """Point sandwich ``(f, g)`` with ``f = max(0, r_hat - l)`` and ``g = r_hat + u``."""
    c = _check_c(c)
    x = int(x)
    rates = rates_from_counts(counts)
    r_hat = rates.cell(flip(x), x, x)
    f = max(0.0, r_hat - l_bias(rates, c, x))
    g = r_hat + u_bias(rates, c, x)
    return f, g


# -- exact binomial confidence bounds -----------------------------------------


def _check_k_n_sig(k: int, n: int, significance: float) -> tuple[int, int, float]:
    k = int(k)
    n = int(n)
    significance = float(significance)
    if n < 1 or not (0 <= k <= n):
        raise ValueError(f"need 0 <= k <= n with n >= 1, got k={k}, n={n}")
    if not (0.0 < significance < 1.0):
        raise ValueError(f"significance must lie in (0, 1), got {significance}")
    return k, n, significance


def binomial_exact_upper(k: int, n: int, significance: float) -> float:
    """Smallest ``p`` with ``P(Bin(n, p) <= k) <= significance``, by CDF bisection.

    This is the exact one-sided upper confidence bound for a binomial
    proportion; ``k == n`` returns 1.
    """
    k, n, significance = _check_k_n_sig(k, n, significance)
    if k == n:
        return 1.0
    lo, hi = 0.0, 1.0
    iterations = 0
    while hi - lo > BISECTION_TOL:
        if iterations >= BISECTION_MAX_ITER:
            raise BisectionError(
                f"upper-bound bisection did not converge for k={k}, n={n}, sig={significance}"
            )
        mid = 0.5 * (lo + hi)
        if sp.bdtr(float(k), n, mid) <= significance:
            hi = mid
        else:
            lo = mid
        iterations += 1
    return hi


def binomial_exact_lower(k: int, n: int, significance: float) -> float:
    """Largest ``p`` with ``P(Bin(n, p) >= k) <= significance``; ``k == 0`` returns 0."""
    k, n, significance = _check_k_n_sig(k, n, significance)
    if k == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    iterations = 0
    while hi - lo > BISECTION_TOL:
        if iterations >= BISECTION_MAX_ITER:
            raise BisectionError(
                f"lower-bound bisection did not converge for k={k}, n={n}, sig={significance}"
            )
        mid = 0.5 * (lo + hi)
        if sp.bdtrc(float(k - 1), n, mid) <= significance:
            lo = mid
        else:
            hi = mid
        iterations += 1
    return lo


def _cp_upper_vec(k, n: int, significance) -> np.ndarray:
    """Vectorized version of binomial_exact_upper (k and/or significance arrays)."""
    k_arr = np.asarray(k, dtype=float)
    sig_arr = np.asarray(significance, dtype=float)
    k_b, sig_b = np.broadcast_arrays(k_arr, sig_arr)
    lo = np.zeros(k_b.shape)
    hi = np.ones(k_b.shape)
    for _ in range(44):
        mid = 0.5 * (lo + hi)
        below = sp.bdtr(k_b, n, mid) <= sig_b
        hi = np.where(below, mid, hi)
        lo = np.where(below, lo, mid)
    return np.where(k_b >= n, 1.0, hi)


def _cp_lower_vec(k, n: int, significance) -> np.ndarray:
    """Vectorized version of binomial_exact_lower."""
    k_arr = np.asarray(k, dtype=float)
    sig_arr = np.asarray(significance, dtype=float)
    k_b, sig_b = np.broadcast_arrays(k_arr, sig_arr)
    lo = np.zeros(k_b.shape)
    hi = np.ones(k_b.shape)
    for _ in range(44):
        mid = 0.5 * (lo + hi)
        below = sp.bdtrc(np.maximum(k_b - 1.0, 0.0), n, mid) <= sig_b
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.where(k_b <= 0, 0.0, lo)


# -- union-bound confidence bounds on F(x) ------------------------------------


def _cell_counts(
    counts: DoubleReadoutCounts, x: int
) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    """(count, total) pairs for the disagree / both-wrong / other cells of state x."""
    cells = _bias_cells(x)
    out = []
    for o_prime, o, p in cells:
        out.append((counts.cell(o_prime, o, p), counts.total(p)))
    return tuple(out)


def confidence_upper(
    counts: DoubleReadoutCounts,
    alpha: float,
    beta: float,
    c: float,
    x: Subspace | int,
) -> float:
    """Level ``1 - alpha`` upper confidence bound for the combined error of state ``x``.

    The disagreement cell is bounded at significance ``alpha - 3*beta``; the
    bias polynomial is evaluated at per-cell upper bounds of significance
    ``beta`` each (the polynomial is monotone in every cell, so this is a
    valid union-bound composition).
    """
    c = _check_c(c)
    _check_alpha_beta(alpha, beta)
    x = int(x)
    (k_dis, n_dis), (k_bw, n_bw), (k_ot, n_ot) = _cell_counts(counts, x)
    main = binomial_exact_upper(k_dis, n_dis, alpha - 3.0 * beta)
    dis_up = binomial_exact_upper(k_dis, n_dis, beta)
    bw_up = binomial_exact_upper(k_bw, n_bw, beta)
    ot_up = binomial_exact_upper(k_ot, n_ot, beta)
    return main + float(_u_from_cells(dis_up, bw_up, ot_up, c))


def confidence_lower(
    counts: DoubleReadoutCounts,
    alpha: float,
    beta: float,
    c: float,
    x: Subspace | int,
) -> float:
    """Level ``1 - alpha`` lower confidence bound for the combined error, clamped at 0.

    The subtracted bias ``l`` must be maximized for validity; since it is
    monotone increasing in every cell, its cells take *upper* bounds at
    significance ``beta``.
    """
    c = _check_c(c)
    _check_alpha_beta(alpha, beta)
    x = int(x)
    (k_dis, n_dis), (k_bw, n_bw), (k_ot, n_ot) = _cell_counts(counts, x)
    main = binomial_exact_lower(k_dis, n_dis, alpha - 3.0 * beta)
    dis_up = binomial_exact_upper(k_dis, n_dis, beta)
    bw_up = binomial_exact_upper(k_bw, n_bw, beta)
    ot_up = binomial_exact_upper(k_ot, n_ot, beta)
    return max(0.0, main - float(_l_from_cells(dis_up, bw_up, ot_up, c)))


# -- beta optimization ---------------------------------------------------------


def _beta_grid(alpha: float) -> np.ndarray:
    return np.geomspace(BETA_GRID_FLOOR, alpha / 3.0 * (1.0 - 1e-9), BETA_GRID_SIZE)


@lru_cache(maxsize=8192)
def _coarse_upper_curve(
    k_dis: int, n_dis: int, k_bw: int, n_bw: int, k_ot: int, n_ot: int, alpha: float, c: float
) -> tuple[np.ndarray, np.ndarray]:
    """Upper-bound objective on the coarse beta grid (cached; used by beta_star)."""
    betas = _beta_grid(alpha)
    main = _cp_upper_vec(k_dis, n_dis, alpha - 3.0 * betas)
    dis_up = _cp_upper_vec(k_dis, n_dis, betas)
    bw_up = _cp_upper_vec(k_bw, n_bw, betas)
    ot_up = _cp_upper_vec(k_ot, n_ot, betas)
    values = main + _u_from_cells(dis_up, bw_up, ot_up, c)
    return betas, values


def beta_star(counts: DoubleReadoutCounts, alpha: float, c: float, x: Subspace | int) -> float:
    """Significance split minimizing the upper confidence bound.

    Scans a 200-point log-uniform grid over ``(0, alpha/3)`` and refines the
    bracketing interval with a golden-section search; ties resolve to the
    smallest beta.
    """
    c = _check_c(c)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    x = int(x)
    (k_dis, n_dis), (k_bw, n_bw), (k_ot, n_ot) = _cell_counts(counts, x)
    betas, values = _coarse_upper_curve(k_dis, n_dis, k_bw, n_bw, k_ot, n_ot, alpha, c)
    i = int(np.argmin(values))
    best_beta = float(betas[i])
    best_value = float(values[i])

    def objective(beta: float) -> float:
        return confidence_upper(counts, alpha, beta, c, x)

    a = float(betas[max(i - 1, 0)])
    b = float(betas[min(i + 1, len(betas) - 1)])
    x1 = b - _INV_GOLDEN * (b - a)
    x2 = a + _INV_GOLDEN * (b - a)
    f1 = objective(x1)
    f2 = objective(x2)
    while b - a > 1e-6 * b:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_GOLDEN * (b - a)
            f1 = objective(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_GOLDEN * (b - a)
            f2 = objective(x2)
    refined = 0.5 * (a + b)
    refined_value = objective(refined)
    if refined_value < best_value or (refined_value == best_value and refined < best_beta):
        return refined
    return best_beta


# -- reporting -----------------------------------------------------------------


@dataclass(frozen=True)
class BoundsReport:
    """One row of the bounds pipeline: point sandwich plus confidence bounds."""

    x: Subspace
    c: float
    alpha: float
    beta: float
    f_point: float
    g_point: float
    lower_cb: float
    upper_cb: float
    r_hat_cell: float

    def __post_init__(self) -> None:
        _check_alpha_beta(self.alpha, self.beta)
        if not (self.f_point <= self.r_hat_cell <= self.g_point):
            raise ValueError(
                f"point sandwich violated: f={self.f_point}, r_hat={self.r_hat_cell}, g={self.g_point}"
            )
        if self.lower_cb > self.f_point or self.upper_cb < self.g_point:
            raise ValueError(
                f"confidence bounds must contain the point sandwich: "
                f"[{self.lower_cb}, {self.upper_cb}] vs [{self.f_point}, {self.g_point}]"
            )

    def to_dict(self) -> dict:
        return {
            "x": self.x.label,
            "c": self.c,
            "alpha": self.alpha,
            "beta": self.beta,
            "f": self.f_point,
            "g": self.g_point,
            "lower": self.lower_cb,
            "upper": self.upper_cb,
            "r_hat": self.r_hat_cell,
        }


def bounds_report(
    counts: DoubleReadoutCounts,
    alpha: float,
    beta: float | None,
    c: float,
    x: Subspace | int,
) -> BoundsReport:
    """Assemble a BoundsReport; ``beta=None`` optimizes the split via beta_star."""
    x = Subspace(int(x))
    if beta is None:
        beta = beta_star(counts, alpha, c, x)
    rates = rates_from_counts(counts)
    f_point, g_point = point_bounds(counts, c, x)
    return BoundsReport(
        x=x,
        c=c,
        alpha=alpha,
        beta=beta,
        f_point=f_point,
        g_point=g_point,
        lower_cb=confidence_lower(counts, alpha, beta, c, x),
        upper_cb=confidence_upper(counts, alpha, beta, c, x),
        r_hat_cell=rates.cell(flip(int(x)), int(x), int(x)),
    )


# -- sensitivity of the frozen beta ---------------------------------------------


@dataclass(frozen=True)
class GridPoint:
    """One sensitivity-grid evaluation at a synthetic count table."""

    rate_both_wrong_plus: float  # target r_hat(1,1|0)
    rate_disagree_plus: float  # target r_hat(1,0|0)
    rate_disagree_minus: float  # target r_hat(0,1|1)
    beta_star: float
    bound_at_beta0: float
    bound_at_beta_star: float
    percent_loss: float


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def grid_counts(
    rate_both_wrong_plus: float,
    rate_disagree_plus: float,
    rate_disagree_minus: float,
    total_plus: int = TUNING_TOTAL_PLUS,
    total_minus: int = TUNING_TOTAL_MINUS,
) -> DoubleReadoutCounts:
    """Synthetic counts realizing the three grid rates, mirrored across preparations.

    The mirrored cells are ``r(0,1|0) = r(1,0|0)``, ``r(0,0|1) = r(1,1|0)``
    and ``r(1,0|1) = r(0,1|1)``; the agreeing diagonal cells absorb the
    remainder so the totals stay fixed.
    """
    n_110 = _round_half_up(rate_both_wrong_plus * total_plus)
    n_100 = _round_half_up(rate_disagree_plus * total_plus)
    n_010 = n_100
    n_011 = _round_half_up(rate_disagree_minus * total_minus)
    n_101 = n_011
    n_001 = _round_half_up(rate_both_wrong_plus * total_minus)
    n_000 = total_plus - (n_110 + n_100 + n_010)
    n_111 = total_minus - (n_001 + n_011 + n_101)
    if n_000 < 0 or n_111 < 0:
        raise ValueError("grid rates too large for the requested totals")
    return DoubleReadoutCounts.from_cells(
        {
            (1, 1, 0): n_110,
            (1, 0, 0): n_100,
            (0, 1, 0): n_010,
            (0, 0, 0): n_000,
            (0, 1, 1): n_011,
            (1, 0, 1): n_101,
            (0, 0, 1): n_001,
            (1, 1, 1): n_111,
        }
    )


def sensitivity_grid(
    beta0: float,
    alpha: float,
    c: float,
    x: Subspace | int = Subspace.S_PLUS,
    total_plus: int = TUNING_TOTAL_PLUS,
    total_minus: int = TUNING_TOTAL_MINUS,
) -> tuple[float, list[GridPoint]]:
    """Percent loss of a frozen ``beta0`` over a 10x10x10 grid of synthetic counts.

    The grid spans ``r_hat(1,1|0)`` in [3e-3, 3e-2], ``r_hat(1,0|0)`` in
    [3e-5, 3e-4] and ``r_hat(0,1|1)`` in [3e-6, 3e-5], ten uniformly spaced
    values in each direction.  For each table the loss is
    ``(upper(beta0) - upper(beta_star)) / r_hat(flip(x), x | x)``.  Returns
    the maximum loss and the full 1000-row table.
    """
    c = _check_c(c)
    x = int(x)
    both_wrong_values = np.linspace(3e-3, 3e-2, 10)
    disagree_plus_values = np.linspace(3e-5, 3e-4, 10)
    disagree_minus_values = np.linspace(3e-6, 3e-5, 10)
    rows: list[GridPoint] = []
    max_loss = 0.0
    for bw in both_wrong_values:
        for dp in disagree_plus_values:
            for dm in disagree_minus_values:
                counts = grid_counts(bw, dp, dm, total_plus, total_minus)
                best = beta_star(counts, alpha, c, x)
                bound_star = confidence_upper(counts, alpha, best, c, x)
                bound0 = confidence_upper(counts, alpha, beta0, c, x)
                denom = counts.cell(flip(x), x, x) / counts.total(x)
                numer = bound0 - bound_star
                if denom > 0.0:
                    loss = numer / denom
                elif abs(numer) < 1e-15:
                    loss = 0.0
                else:
                    warnings.warn(
                        "percent loss undefined: zero disagreement rate with nonzero "
                        "bound difference; reporting +inf",
                        RuntimeWarning,
                        stacklevel=2,
                    )
                    loss = math.inf
                rows.append(
                    GridPoint(
                        rate_both_wrong_plus=float(bw),
                        rate_disagree_plus=float(dp),
                        rate_disagree_minus=float(dm),
                        beta_star=best,
                        bound_at_beta0=bound0,
                        bound_at_beta_star=bound_star,
                        percent_loss=loss,
                    )
                )
                if loss > max_loss:
                    max_loss = loss
    return max_loss, rows


def write_grid_csv(rows: list[GridPoint], path: str | Path) -> None:
    """Grid report CSV: one row per grid point."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "r_11_0",
                "r_10_0",
                "r_01_1",
                "beta_star",
                "bound_at_beta0",
                "bound_at_beta_star",
                "percent_loss",
            ]
        )
        for row in rows:
            writer.writerow(
                [
                    repr(row.rate_both_wrong_plus),
                    repr(row.rate_disagree_plus),
                    repr(row.rate_disagree_minus),
                    repr(row.beta_star),
                    repr(row.bound_at_beta0),
                    repr(row.bound_at_beta_star),
                    repr(row.percent_loss),
                ]
            )
