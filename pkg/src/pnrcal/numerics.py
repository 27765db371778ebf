"""Cancellation-safe combinatorial and probability primitives.

Everything here is pure and reentrant.  The occupancy and Stirling routines
deliberately avoid the textbook alternating-sum formulas, which lose all
precision in 64-bit floats well before the photon numbers this package needs.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

__all__ = [
    "DEFAULT_STIRLING_BOUND",
    "StirlingBoundError",
    "log_binomial",
    "stirling2",
    "occupancy_prob",
    "occupancy_table",
    "kahan_sum",
    "CompensatedSum",
]

DEFAULT_STIRLING_BOUND = 200

# math.comb is exact; past this the log-gamma route is accurate to a few ulp
# anyway and avoids huge intermediates.
_EXACT_COMB_LIMIT = 60

_EPS = 2.0 ** -53


class StirlingBoundError(ValueError):
    """Requested Stirling number exceeds the configured growth cap."""


def log_binomial(n: int, k: int) -> float:
    """Natural log of the binomial coefficient C(n, k).

    Returns -inf when k > n (the "zero otherwise" convention).  Exact up to
    one rounding for n <= 60 via the integer coefficient; log-gamma beyond.
    """
    if n < 0 or k < 0:
        raise ValueError(f"log_binomial requires nonnegative arguments, got ({n}, {k})")
    if k > n:
        return -math.inf
    if k == 0 or k == n:
        return 0.0
    if n <= _EXACT_COMB_LIMIT:
        return math.log(math.comb(n, k))
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


# Row m holds S(m, k) for k = 0..m, exact integers.  Grown on demand.
_stirling_rows: list[list[int]] = [[1]]


def stirling2(m: int, k: int, bound: int = DEFAULT_STIRLING_BOUND) -> int:
    """Stirling number of the second kind S(m, k), exact.

    Computed by the recurrence S(m, k) = k*S(m-1, k) + S(m-1, k-1) in integer
    arithmetic; the alternating-sum definition cancels catastrophically in
    floats near m ~ 25 and is never used.  Raises StirlingBoundError when m
    exceeds ``bound`` (growth cap, default 200).
    """
    if m < 0 or k < 0:
        raise ValueError(f"stirling2 requires nonnegative arguments, got ({m}, {k})")
    if m > bound:
        raise StirlingBoundError(f"stirling2 called with m={m} above bound={bound}")
    if k > m:
        return 0
    while len(_stirling_rows) <= m:
        prev = _stirling_rows[-1]
        mm = len(_stirling_rows)
        row = [0] * (mm + 1)
        row[mm] = 1
        for kk in range(1, mm):
            row[kk] = kk * prev[kk] + prev[kk - 1]
        _stirling_rows.append(row)
    return _stirling_rows[m][k]


def occupancy_table(n_elements: int, m_max: int) -> np.ndarray:
    """Table of occupancy probabilities for uniform balls-into-boxes.

    Entry [k, m] is the probability that m photons thrown uniformly at
    n_elements detector elements land on exactly k distinct elements.  Shape
    is (min(m_max, n_elements)+1, m_max+1); columns sum to 1.

    Built by the forward recurrence
        P(k, m) = P(k, m-1)*k/N + P(k-1, m-1)*(N-k+1)/N,  P(0, 0) = 1,
    which is mathematically identical to the binomial/Stirling closed form
    but involves only nonnegative terms.
    """
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    if m_max < 0:
        raise ValueError("m_max must be >= 0")
    k_top = min(m_max, n_elements)
    table = np.zeros((k_top + 1, m_max + 1))
    table[0, 0] = 1.0
    n = float(n_elements)
    ks = np.arange(k_top + 1, dtype=float)
    stay = ks / n                      # photon lands on an already-hit element
    grow = (n - ks + 1.0) / n          # photon opens element number k
    for m in range(1, m_max + 1):
        prev = table[:, m - 1]
        col = prev * stay
        col[1:] += prev[:-1] * grow[1:]
        table[:, m] = col
    return table


def occupancy_prob(k: int, m: int, n_elements: int) -> float:
    """Probability that m uniform photons occupy exactly k of N elements.

    Out-of-range combinations (k > m, k > N, or k = 0 with m > 0) return 0,
    mirroring the zero convention of the binomial closed form.
    """
    if k < 0 or m < 0:
        raise ValueError(f"occupancy_prob requires nonnegative k, m, got ({k}, {m})")
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    if k > m or k > n_elements:
        return 0.0
    return float(occupancy_table(n_elements, m)[k, m])


class CompensatedSum:
    """Neumaier compensated accumulator.

    Tracks the running sum, the rounding compensation, and the sum of
    absolute values (used by callers to bound the residual error of a badly
    cancelling series).
    """

    __slots__ = ("_total", "_comp", "abs_total", "count")

    def __init__(self) -> None:
        self._total = 0.0
        self._comp = 0.0
        self.abs_total = 0.0
        self.count = 0

    def add(self, value: float) -> None:
        t = self._total + value
        if abs(self._total) >= abs(value):
            self._comp += (self._total - t) + value
        else:
            self._comp += (value - t) + self._total
        self._total = t
        self.abs_total += abs(value)
        self.count += 1

    @property
    def value(self) -> float:
        return self._total + self._comp

    def error_bound(self) -> float:
        """Conservative absolute error bound for the accumulated sum."""
        return 2.0 * _EPS * abs(self.value) + 3.0 * self.count * _EPS * _EPS * self.abs_total


def kahan_sum(terms: Iterable[float]) -> float:
    """Compensated (Neumaier) summation of a finite sequence.

    The result is within 2 ulp of the magnitude sum of the exact total, which
    in particular survives cancellations like [1e16, 1.0, -1e16] -> 1.0 that
    naive accumulation loses.
    """
    acc = CompensatedSum()
    for value in terms:
        acc.add(float(value))
    return acc.value
