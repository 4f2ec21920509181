"""Domain types and exact arithmetic for the coarse classical readout model.

The readout experiment is abstracted to a classical process with a two-valued
hidden state (the qubit "subspace").  A trial intends to prepare state ``p``,
actually prepares ``s`` with conditional probability ``Q(s|p)``, reads out an
outcome ``o`` with probability ``Y(o|s)``, may hop to a new hidden state ``s'``
with probability ``A(s'|o, s)``, and finally reads out ``o'`` with probability
``Y(o'|s')``.  Only the joint outcome rates ``r(o', o | p)`` are observable.

Index convention used throughout the package (fixed, see README):

* subspace ``S+`` <-> index 0 and ``S-`` <-> index 1,
* preparation label ``p`` uses the same indices (``p=0`` intends ``S+``),
* ``flip(x) == 1 - x``.

The quantity of interest is ``true_F(model, x) = Y(flip(x)|x) + A(flip(x)|x, x)``,
the single-readout error plus the post-readout hop probability, which the
bounds module brackets from observable rates alone.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

RATE_NORMALIZATION_TOL = 1e-12


class ZeroTotal(ValueError):
    """Raised when a per-preparation count total is zero and a rate is requested."""


class Subspace(IntEnum):
    """The two-valued hidden state.  ``S_PLUS == 0`` and ``S_MINUS == 1``."""

    S_PLUS = 0
    S_MINUS = 1

    @property
    def other(self) -> "Subspace":
        return Subspace(1 - int(self))

    @property
    def label(self) -> str:
        return "plus" if self is Subspace.S_PLUS else "minus"

    @classmethod
    def from_label(cls, text: str) -> "Subspace":
        t = text.strip().lower()
        if t in ("plus", "s+", "splus", "0"):
            return cls.S_PLUS
        if t in ("minus", "s-", "sminus", "1"):
            return cls.S_MINUS
        raise ValueError(f"unknown subspace label: {text!r}")


def flip(x: int) -> int:
    """Negation on subspace/bit indices: ``flip(0) == 1`` and ``flip(1) == 0``."""
    return 1 - int(x)


class RoundOutcome(IntEnum):
    """Two-bit fluorescence outcome of one repetition, encoded as ``2*bit1 + bit2``."""

    BITS_00 = 0
    BITS_01 = 1
    BITS_10 = 2
    BITS_11 = 3

    @property
    def bit1(self) -> int:
        return int(self) >> 1

    @property
    def bit2(self) -> int:
        return int(self) & 1

    @property
    def bits(self) -> tuple[int, int]:
        return (self.bit1, self.bit2)

    @classmethod
    def from_bits(cls, bit1: int, bit2: int) -> "RoundOutcome":
        if bit1 not in (0, 1) or bit2 not in (0, 1):
            raise ValueError(f"bits must be 0 or 1, got ({bit1}, {bit2})")
        return cls(2 * bit1 + bit2)

    @classmethod
    def from_string(cls, text: str) -> "RoundOutcome":
        t = text.strip()
        if len(t) != 2 or any(ch not in "01" for ch in t):
            raise ValueError(f"outcome string must be two bits, got {text!r}")
        return cls.from_bits(int(t[0]), int(t[1]))

    def __str__(self) -> str:
        return f"{self.bit1}{self.bit2}"


ALL_OUTCOMES = tuple(RoundOutcome)


def _check_probability(value: float, name: str) -> float:
    v = float(value)
    if not (0.0 <= v <= 1.0) or not np.isfinite(v):
        raise ValueError(f"{name} must be a probability in [0, 1], got {value!r}")
    return v


@dataclass(frozen=True)
class CoarseModel:
    """Eight-parameter classical model of two back-to-back readouts.

    Only the off-diagonal (error) probabilities are stored; diagonal entries
    are derived, so every conditional distribution is normalized by
    construction.

    prep_flip[p]
        probability ``Q(flip(p)|p)`` of preparing the wrong state.
    readout_flip[s]
        probability ``Y(flip(s)|s)`` of reading the wrong outcome.
    hop_flip[o][s]
        probability ``A(flip(s)|o, s)`` of switching hidden state after a
        readout that returned outcome ``o`` while in state ``s``.
    """

    prep_flip: tuple[float, float]
    readout_flip: tuple[float, float]
    hop_flip: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self) -> None:
        for p in (0, 1):
            _check_probability(self.prep_flip[p], f"prep_flip[{p}]")
            _check_probability(self.readout_flip[p], f"readout_flip[{p}]")
            for o in (0, 1):
                _check_probability(self.hop_flip[o][p], f"hop_flip[{o}][{p}]")

    def q(self, s: int, p: int) -> float:
        """Preparation table ``Q(s|p)``."""
        return self.prep_flip[p] if s != p else 1.0 - self.prep_flip[p]

    def y(self, o: int, s: int) -> float:
        """Readout table ``Y(o|s)``."""
        return self.readout_flip[s] if o != s else 1.0 - self.readout_flip[s]

    def a(self, s_next: int, o: int, s: int) -> float:
        """Hidden-state transition table ``A(s'|o, s)``."""
        return self.hop_flip[o][s] if s_next != s else 1.0 - self.hop_flip[o][s]

    def satisfies_c(self, c: float) -> bool:
        """Whether all diagonal probabilities clear ``c``: ``Y(x|x), Q(x|x), A(x|x,x) >= c``.

        Requires ``c > 1/2``; the bound derivation in the bounds module is
        meaningless otherwise.
        """
        if not c > 0.5:
            raise ValueError(f"c must exceed 1/2, got {c}")
        for x in (0, 1):
            if self.q(x, x) < c or self.y(x, x) < c or self.a(x, x, x) < c:
                return False
        return True


@dataclass(frozen=True)
class ConditionalRates:
    """Observable double-readout rates ``r(o', o | p)``, normalized per preparation.

    ``table[o_prime, o, p]`` holds the probability of first outcome ``o`` and
    second outcome ``o_prime`` when preparation ``p`` was intended.
    """

    table: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.table, dtype=float)
        if arr.shape != (2, 2, 2):
            raise ValueError(f"rate table must have shape (2, 2, 2), got {arr.shape}")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("rates must lie in [0, 1]")
        sums = arr.sum(axis=(0, 1))
        if np.any(np.abs(sums - 1.0) > RATE_NORMALIZATION_TOL):
            raise ValueError(f"rates must sum to 1 per preparation, got sums {sums}")
        arr.flags.writeable = False
        object.__setattr__(self, "table", arr)

    def cell(self, o_prime: int, o: int, p: int) -> float:
        return float(self.table[o_prime, o, p])


@dataclass(frozen=True)
class DoubleReadoutCounts:
    """Observed counts ``n(o', o, p)`` from back-to-back readouts (8 cells).

    ``counts[o_prime, o, p]`` is the number of trials with intended
    preparation ``p`` whose first readout returned ``o`` and second ``o'``.
    """

    counts: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.counts)
        if arr.shape != (2, 2, 2):
            raise ValueError(f"count table must have shape (2, 2, 2), got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            arr_int = np.asarray(arr, dtype=np.int64)
            if np.any(arr_int != arr):
                raise ValueError("counts must be integers")
            arr = arr_int
        else:
            arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise ValueError("counts must be nonnegative")
        arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)

    @classmethod
    def zeros(cls) -> "DoubleReadoutCounts":
        return cls(np.zeros((2, 2, 2), dtype=np.int64))

    @classmethod
    def from_cells(cls, cells: dict[tuple[int, int, int], int]) -> "DoubleReadoutCounts":
        """Build from a ``{(o_prime, o, p): count}`` mapping; missing cells are 0."""
        arr = np.zeros((2, 2, 2), dtype=np.int64)
        for (o_prime, o, p), value in cells.items():
            arr[o_prime, o, p] = value
        return cls(arr)

    def cell(self, o_prime: int, o: int, p: int) -> int:
        return int(self.counts[o_prime, o, p])

    def total(self, p: int) -> int:
        """Trials taken with intended preparation ``p``."""
        return int(self.counts[:, :, p].sum())

    def __add__(self, other: "DoubleReadoutCounts") -> "DoubleReadoutCounts":
        return DoubleReadoutCounts(self.counts + other.counts)

    # -- serialization ------------------------------------------------------

    def to_csv(self, path: str | Path) -> None:
        """Write the 8 cells as CSV with header ``o_prime,o,prep,count``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["o_prime", "o", "prep", "count"])
            for o_prime in (0, 1):
                for o in (0, 1):
                    for p in (0, 1):
                        writer.writerow([o_prime, o, p, self.cell(o_prime, o, p)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "DoubleReadoutCounts":
        arr = np.zeros((2, 2, 2), dtype=np.int64)
        seen = np.zeros((2, 2, 2), dtype=bool)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            required = {"o_prime", "o", "prep", "count"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise ValueError(
                    f"counts CSV must have columns {sorted(required)}, got {reader.fieldnames}"
                )
            for row in reader:
                o_prime = int(row["o_prime"])
                o = int(row["o"])
                p = int(row["prep"])
                for name, v in (("o_prime", o_prime), ("o", o), ("prep", p)):
                    if v not in (0, 1):
                        raise ValueError(f"{name} must be 0 or 1, got {v}")
                if seen[o_prime, o, p]:
                    raise ValueError(f"duplicate cell ({o_prime}, {o}, {p}) in counts CSV")
                seen[o_prime, o, p] = True
                arr[o_prime, o, p] = int(row["count"])
        if not seen.all():
            raise ValueError("counts CSV must contain all 8 cells")
        return cls(arr)

    def to_json(self) -> str:
        """JSON object keyed ``n_<o'><o>_<p>``, one key per cell."""
        obj = {
            f"n_{o_prime}{o}_{p}": self.cell(o_prime, o, p)
            for o_prime in (0, 1)
            for o in (0, 1)
            for p in (0, 1)
        }
        return json.dumps(obj, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DoubleReadoutCounts":
        obj = json.loads(text)
        arr = np.zeros((2, 2, 2), dtype=np.int64)
        for o_prime in (0, 1):
            for o in (0, 1):
                for p in (0, 1):
                    key = f"n_{o_prime}{o}_{p}"
                    if key not in obj:
                        raise ValueError(f"missing key {key} in counts JSON")
                    arr[o_prime, o, p] = int(obj[key])
        return cls(arr)


def load_counts(path: str | Path) -> DoubleReadoutCounts:
    """Read counts from a ``.csv`` or ``.json`` file, deciding by suffix."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return DoubleReadoutCounts.from_json(path.read_text(encoding="utf-8"))
    return DoubleReadoutCounts.from_csv(path)


# -- operations --------------------------------------------------------------


def exact_rates(model: CoarseModel) -> ConditionalRates:
    """Exact observable rates of a model: ``r(o',o|p) = sum_{s,s'} Q(s|p) Y(o|s) A(s'|o,s) Y(o'|s')``."""
    table = np.zeros((2, 2, 2))
    for p in (0, 1):
        for o in (0, 1):
            for o_prime in (0, 1):
                total = 0.0
                for s in (0, 1):
                    for s_next in (0, 1):
                        total += (
                            model.q(s, p)
                            * model.y(o, s)
                            * model.a(s_next, o, s)
                            * model.y(o_prime, s_next)
                        )
                table[o_prime, o, p] = total
    # Remove float summation residue so the normalized-rates invariant holds exactly.
    table /= table.sum(axis=(0, 1), keepdims=True)
    return ConditionalRates(table)


def true_F(model: CoarseModel, x: Subspace | int) -> float:
    """The combined error ``Y(flip(x)|x) + A(flip(x)|x, x)`` reported for state ``x``."""
    x = int(x)
    return model.y(flip(x), x) + model.a(flip(x), x, x)


def rates_from_counts(counts: DoubleReadoutCounts) -> ConditionalRates:
    """Mean-estimator rates ``r_hat(o',o|p) = n(o',o,p) / N_p``.

    Raises ZeroTotal if either preparation has no trials.
    """
    arr = counts.counts.astype(float)
    totals = arr.sum(axis=(0, 1))
    if np.any(totals <= 0):
        raise ZeroTotal(f"every preparation needs at least one trial, totals {totals}")
    return ConditionalRates(arr / totals[None, None, :])


def counts_csv_string(counts: DoubleReadoutCounts) -> str:
    """Counts CSV as a string (same layout as DoubleReadoutCounts.to_csv)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["o_prime", "o", "prep", "count"])
    for o_prime in (0, 1):
        for o in (0, 1):
            for p in (0, 1):
                writer.writerow([o_prime, o, p, counts.cell(o_prime, o, p)])
    return buf.getvalue()
