"""Photon-number distributions of the light sources feeding the detector.

All constructors return a truncated, explicitly normalized probability
vector over photon number.  Truncation points are chosen from analytic tail
bounds so that the discarded mass never exceeds ``tail_tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DEFAULT_TAIL_TOL",
    "PhotonDistribution",
    "fock",
    "smsv",
    "tmsv_combined",
    "thermal",
    "make_source",
]

DEFAULT_TAIL_TOL = 1e-12

_SUM_SLACK = 1e-9  # numerical slack on top of the declared truncation budget


@dataclass(frozen=True)
class PhotonDistribution:
    """Truncated probability vector over photon number.

    ``probs[n]`` is the probability of n photons; ``declared_mean`` is the
    analytic mean of the untruncated state.  The vector sums to 1 within
    ``tail_tol`` (mass outside the truncation window).
    """

    probs: np.ndarray
    declared_mean: float
    tail_tol: float = DEFAULT_TAIL_TOL
    label: str = "custom"

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a nonempty 1-d vector")
        if probs.min() < -1e-15 or probs.max() > 1.0 + 1e-12:
            raise ValueError("probabilities must lie in [0, 1]")
        total = probs.sum()
        if not (1.0 - self.tail_tol - _SUM_SLACK <= total <= 1.0 + _SUM_SLACK):
            raise ValueError(
                f"distribution sums to {total!r}, outside [1 - tail_tol, 1]"
            )
        if self.declared_mean < 0:
            raise ValueError("declared_mean must be >= 0")
        probs = np.clip(probs, 0.0, 1.0)
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        """Empirical mean of the truncated vector."""
        return float(np.arange(self.probs.size) @ self.probs)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw photon numbers by inverse CDF from the truncated vector."""
        cdf = np.cumsum(self.probs)
        cdf[-1] = max(cdf[-1], 1.0)  # absorb truncation residue in the top bin
        return np.searchsorted(cdf, rng.random(size), side="right").astype(np.int64)


def fock(n: int) -> PhotonDistribution:
    """State with exactly n photons."""
    if n < 0:
        raise ValueError("photon number must be >= 0")
    probs = np.zeros(n + 1)
    probs[n] = 1.0
    return PhotonDistribution(probs, declared_mean=float(n), tail_tol=0.0, label=f"fock({n})")


def smsv(mean: float, tail_tol: float = DEFAULT_TAIL_TOL) -> PhotonDistribution:
    """Single-mode squeezed vacuum with the given mean photon number.

    Only even photon numbers are populated.  Terms are generated by the
    stable ratio recurrence P(n+2)/P(n) = tanh^2(r) * (n+1)/(n+2) (direct
    factorials overflow past n ~ 170); with mean = sinh^2(r) the ratio base
    is tanh^2(r) = mean/(1+mean).  The loop stops once the geometric tail
    bound P(n+2)/(1 - tanh^2 r) drops below ``tail_tol``.
    """
    if mean < 0:
        raise ValueError("mean must be >= 0")
    if mean == 0.0:
        return PhotonDistribution(np.ones(1), 0.0, tail_tol, label="smsv")
    q = mean / (1.0 + mean)          # tanh^2 of the squeezing parameter
    inv_tail = 1.0 + mean            # 1/(1-q) = cosh^2
    terms = [1.0 / math.sqrt(1.0 + mean)]
    n = 0
    while True:
        nxt = terms[-1] * q * (n + 1) / (n + 2)
        if nxt * inv_tail <= tail_tol:
            break
        terms.append(nxt)
        n += 2
    probs = np.zeros(n + 1)
    probs[0::2] = terms
    return PhotonDistribution(probs, declared_mean=mean, tail_tol=tail_tol, label="smsv")


def tmsv_combined(mean_per_mode: float, tail_tol: float = DEFAULT_TAIL_TOL) -> PhotonDistribution:
    """Two-mode squeezed vacuum after spatially combining both modes.

    Photons arrive in pairs: P(2n) = (1-x) x^n with x = mean/(1+mean) for the
    per-mode mean, odd entries exactly zero.  The declared mean is the total
    photon number hitting the detector, 2 * mean_per_mode.
    """
    if mean_per_mode < 0:
        raise ValueError("mean_per_mode must be >= 0")
    x = mean_per_mode / (1.0 + mean_per_mode)
    pair_probs = _geometric_terms(x, tail_tol)
    probs = np.zeros(2 * (len(pair_probs) - 1) + 1)
    probs[0::2] = pair_probs
    return PhotonDistribution(
        probs, declared_mean=2.0 * mean_per_mode, tail_tol=tail_tol, label="tmsv"
    )


def thermal(mean: float, tail_tol: float = DEFAULT_TAIL_TOL) -> PhotonDistribution:
    """Single-mode thermal statistics (one arm of a two-mode squeezed state)."""
    if mean < 0:
        raise ValueError("mean must be >= 0")
    x = mean / (1.0 + mean)
    probs = np.asarray(_geometric_terms(x, tail_tol))
    return PhotonDistribution(probs, declared_mean=mean, tail_tol=tail_tol, label="thermal")


def make_source(kind: str, mean: float, tail_tol: float = DEFAULT_TAIL_TOL) -> PhotonDistribution:
    """Source factory keyed by name.

    ``mean`` is always the mean photon number incident on the detector; for
    ``tmsv`` that is the spatially combined beam, i.e. twice the per-mode
    mean, and for ``fock`` it must be an integer photon number.
    """
    if kind == "fock":
        n = int(round(mean))
        if abs(mean - n) > 1e-9:
            raise ValueError(f"fock source needs an integer photon number, got {mean}")
        return fock(n)
    if kind == "smsv":
        return smsv(mean, tail_tol)
    if kind == "tmsv":
        return tmsv_combined(mean / 2.0, tail_tol)
    if kind == "thermal":
        return thermal(mean, tail_tol)
    raise ValueError(f"unknown source kind {kind!r}")


def _geometric_terms(x: float, tail_tol: float) -> list[float]:
    """Terms (1-x) x^n for n = 0.. until the exact tail x^(n+1) <= tail_tol."""
    if not 0.0 <= x < 1.0:
        raise ValueError("geometric parameter must lie in [0, 1)")
    terms = [1.0 - x]
    tail = x
    while tail > tail_tol:
        terms.append(terms[-1] * x)
        tail *= x
    return terms
