"""Analytic model of a multiplexed photon-number-resolving detector.

The detector is an array of N single-photon elements, each of which clicks
at most once per gate.  Four effects distort the incident photon statistics,
each represented by a column-stochastic transfer matrix:

  * loss        -- each photon independently survives with probability eta;
  * finite size -- photons landing on the same element yield one click;
  * dark counts -- idle elements click spuriously with probability d;
  * cross-talk  -- firing elements ignite idle nearest neighbors with
                   probability x, folded into the mean-field effective
                   neighbor count of a square array.

The detected click distribution is the ordered product (cross-talk o dark o
finite-size o loss) applied to the incident distribution.  For Fock input a
closed-form triple sum gives the same probabilities; the matrix product is
the numerically robust reference path and the closed form is the fast path
for single (clicks, photons) queries plus an independent consistency check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Literal

import numpy as np
from scipy.stats import binom

from .numerics import CompensatedSum, log_binomial, occupancy_table
from .sources import PhotonDistribution

__all__ = [
    "DetectorParams",
    "TransferMatrix",
    "NumericalInstabilityError",
    "CrosstalkRegimeWarning",
    "loss_matrix",
    "finite_size_matrix",
    "dark_matrix",
    "crosstalk_matrix",
    "composed_matrix",
    "detected_distribution",
    "fock_closed_form",
    "spd_click_probability",
    "odds",
]

_EPS = 2.0 ** -53

# Soft boundary of the perturbative cross-talk regime; the model drops
# quadratic-and-higher cross-talk terms so large x is physically suspect.
_XTALK_SOFT_LIMIT = 0.2


class NumericalInstabilityError(ArithmeticError):
    """The compensated evaluation cannot certify the requested accuracy."""


class CrosstalkRegimeWarning(UserWarning):
    """Cross-talk probability outside the perturbative regime of the model."""


@dataclass(frozen=True)
class DetectorParams:
    """Static character of one multiplexed detector.

    n_elements  number of single-photon elements (1 = plain SPD)
    eta         detection efficiency per photon
    dark        per-element dark-count probability per gate
    xtalk       nearest-neighbor cross-talk probability per firing element
    """

    n_elements: int
    eta: float
    dark: float = 0.0
    xtalk: float = 0.0

    def __post_init__(self) -> None:
        if self.n_elements < 1:
            raise ValueError("n_elements must be >= 1")
        for name in ("eta", "dark", "xtalk"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.xtalk > _XTALK_SOFT_LIMIT:
            warnings.warn(
                f"xtalk={self.xtalk} is outside the x << 1 regime the "
                "cross-talk model assumes",
                CrosstalkRegimeWarning,
                stacklevel=2,
            )
        if self.xtalk_eff > 1.0:
            raise ValueError(
                f"effective cross-talk {self.xtalk_eff:.3f} exceeds 1; the "
                "per-element ignition probability would not be a probability"
            )

    @property
    def xtalk_eff(self) -> float:
        """Cross-talk probability scaled by the mean free-neighbor count.

        Equals 4*x*(N - sqrt(N))/(N - 1), the average number of nearest
        neighbors of a random element on a sqrt(N) x sqrt(N) array times x;
        defined as 0 for a single element, which has no neighbors.
        """
        n = self.n_elements
        if n == 1:
            return 0.0
        return 4.0 * self.xtalk * (n - math.sqrt(n)) / (n - 1)


@dataclass(frozen=True)
class TransferMatrix:
    """Column-stochastic conditional-probability matrix.

    ``entries[out, in]`` is P(out | in); every column sums to 1.
    """

    entries: np.ndarray
    effect: str

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2:
            raise ValueError("entries must be a 2-d matrix")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def out_dim(self) -> int:
        return self.entries.shape[0]

    @property
    def in_dim(self) -> int:
        return self.entries.shape[1]

    def apply(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.in_dim,):
            raise ValueError(
                f"{self.effect} matrix expects input of length {self.in_dim}, "
                f"got {vec.shape}"
            )
        return self.entries @ vec

    def column_sum_error(self) -> float:
        """Largest deviation of any column sum from 1."""
        return float(np.abs(self.entries.sum(axis=0) - 1.0).max())


def loss_matrix(eta: float, n_max: int) -> TransferMatrix:
    """Binomial thinning of n incident photons down to m surviving ones."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    idx = np.arange(n_max + 1)
    entries = binom.pmf(idx[:, None], idx[None, :], eta)
    return TransferMatrix(entries, effect="loss")


def finite_size_matrix(n_elements: int, n_max: int) -> TransferMatrix:
    """Occupancy of k distinct elements by m photons spread uniformly over N."""
    return TransferMatrix(occupancy_table(n_elements, n_max), effect="finite_size")


def dark_matrix(n_elements: int, dark: float) -> TransferMatrix:
    """Spurious clicks: p-k of the N-k idle elements fire with probability d."""
    if not 0.0 <= dark <= 1.0:
        raise ValueError("dark must lie in [0, 1]")
    idx = np.arange(n_elements + 1)
    # columns are k (photon clicks), rows p (total clicks); p-k extra clicks
    # out of N-k idle elements is a plain binomial
    entries = binom.pmf(idx[:, None] - idx[None, :], n_elements - idx[None, :], dark)
    return TransferMatrix(entries, effect="dark")


def crosstalk_matrix(n_elements: int, xtalk: float) -> TransferMatrix:
    """Ignitions of idle neighbors by the p elements already firing.

    Each of the p firers generates at most one cross-talk event, with
    probability x_eff*(1 - p/N) (mean-field availability of neighbors), so
    the click count grows from p to s with a binomial weight on s - p.  The
    binomial support extends to s = 2p; any mass beyond s = N (a detector
    cannot report more clicks than elements) is folded into s = N, keeping
    the columns exactly stochastic.  The folded mass is O(x_eff^2 * p) in the
    x << 1 regime.
    """
    params = DetectorParams(n_elements=n_elements, eta=1.0, xtalk=xtalk)
    n = n_elements
    p_idx = np.arange(n + 1)
    q = params.xtalk_eff * (1.0 - p_idx / n)
    s_full = np.arange(2 * n + 1)
    full = binom.pmf(s_full[:, None] - p_idx[None, :], p_idx[None, :], q[None, :])
    entries = full[: n + 1].copy()
    entries[n] += full[n + 1 :].sum(axis=0)
    return TransferMatrix(entries, effect="crosstalk")


def _transfer_chain(params: DetectorParams, n_max: int) -> list[TransferMatrix]:
    """The four matrices in application order (loss first)."""
    n = params.n_elements
    k_top = min(n_max, n)
    dark_full = dark_matrix(n, params.dark)
    dark_sliced = TransferMatrix(dark_full.entries[:, : k_top + 1], effect="dark")
    return [
        loss_matrix(params.eta, n_max),
        finite_size_matrix(n, n_max),
        dark_sliced,
        crosstalk_matrix(n, params.xtalk),
    ]


def composed_matrix(params: DetectorParams, n_max: int) -> TransferMatrix:
    """Full incident-photon-number to click-count matrix, shape (N+1, n_max+1)."""
    chain = _transfer_chain(params, n_max)
    entries = chain[0].entries
    for stage in chain[1:]:
        entries = stage.entries @ entries
    return TransferMatrix(entries, effect="composed")


def detected_distribution(
    p_real: PhotonDistribution, params: DetectorParams
) -> PhotonDistribution:
    """Click-count distribution for an incident photon distribution.

    Applies loss, finite size, dark counts and cross-talk in that order; the
    ordering of loss before finite size matters (a lost photon cannot
    saturate an element).  The output is indexed by click count 0..N and
    sums to the input sum.
    """
    vec = p_real.probs
    for stage in _transfer_chain(params, p_real.n_max):
        vec = stage.apply(vec)
    mean = float(np.arange(vec.size) @ vec)
    return PhotonDistribution(
        vec, declared_mean=mean, tail_tol=p_real.tail_tol + 1e-10, label="clicks"
    )


def _jsum_float(p: int, n: int, n_elements: int, eta: float, dark: float):
    """Alternating inner sum of the Fock closed form, compensated.

    Returns (value, absolute error bound).  The terms are the signed
    products C(p,j) * (1-d)^(N-j) * (1-eta+j*eta/N)^n; their cancellation is
    severe for large p, which the caller detects through the bound.  The
    bound covers both the summation itself and the rounding of each term
    (the powers contribute about (3n + N) ulp of relative error apiece).
    """
    acc = CompensatedSum()
    n_el = float(n_elements)
    for j in range(p + 1):
        term = (
            math.comb(p, j)
            * (1.0 - dark) ** (n_elements - j)
            * (1.0 - eta + j * eta / n_el) ** n
        )
        acc.add(term if (p - j) % 2 == 0 else -term)
    term_rounding = (3.0 * n + n_elements + 6.0) * _EPS * acc.abs_total
    return acc.value, term_rounding + acc.error_bound()


def _jsum_exact(p: int, n: int, n_elements: int, eta: float, dark: float) -> Fraction:
    """Exact-rational inner sum; floats enter as their exact dyadic values."""
    eta_f = Fraction(eta)
    omd = 1 - Fraction(dark)
    total = Fraction(0)
    for j in range(p + 1):
        base = 1 - eta_f + Fraction(j) * eta_f / n_elements
        term = math.comb(p, j) * omd ** (n_elements - j) * base**n
        total += term if (p - j) % 2 == 0 else -term
    return total


class _JsumCache:
    """Per-call cache of inner sums; they depend on p only, never on s."""

    def __init__(self, n: int, params: "DetectorParams") -> None:
        self.n = n
        self.params = params
        self._float: dict[int, tuple[float, float]] = {}
        self._exact: dict[int, Fraction] = {}

    def float_value(self, p: int) -> tuple[float, float]:
        if p not in self._float:
            self._float[p] = _jsum_float(
                p, self.n, self.params.n_elements, self.params.eta, self.params.dark
            )
        return self._float[p]

    def exact_value(self, p: int) -> Fraction:
        if p not in self._exact:
            self._exact[p] = _jsum_exact(
                p, self.n, self.params.n_elements, self.params.eta, self.params.dark
            )
        return self._exact[p]


def _xtalk_log_weight(p: int, s: int, q: float) -> float:
    """log of C(p, s-p) q^(s-p) (1-q)^(2p-s); -inf outside the support."""
    ell = s - p
    if ell < 0 or ell > p:
        return -math.inf
    if q == 0.0:
        return 0.0 if ell == 0 else -math.inf
    if q == 1.0:
        return 0.0 if ell == p else -math.inf
    return log_binomial(p, ell) + ell * math.log(q) + (2 * p - s) * math.log1p(-q)


# Absolute accuracy target of one direct closed-form evaluation; chosen so a
# complement over N such evaluations stays well inside 1e-9.
_CLOSED_FORM_BUDGET = 1e-11


def _closed_form_direct(
    s: int, n: int, params: DetectorParams, mode: str, cache: _JsumCache
) -> tuple[float, float]:
    """Direct triple sum for s clicks from an n-photon Fock state.

    Returns (value, error bound).  Valid as written for s < N; the s = N row
    additionally collects the folded cross-talk mass, handled by the caller.
    """
    n_el = params.n_elements
    xt = params.xtalk_eff
    p_lo = (s + 1) // 2
    p_hi = min(s, n_el)
    budget = _CLOSED_FORM_BUDGET / max(p_hi - p_lo + 1, 1)
    total = CompensatedSum()
    err = 0.0
    for p in range(p_lo, p_hi + 1):
        q = xt * (1.0 - p / n_el)
        lw_xt = _xtalk_log_weight(p, s, q)
        if lw_xt == -math.inf:
            continue
        weight = math.exp(lw_xt + log_binomial(n_el, p))
        jsum, jerr = cache.float_value(p)
        unstable = not math.isfinite(weight) or jerr * weight > budget
        if mode != "float64" and unstable:
            # the element binomial is kept inside the exact product so the
            # single float rounding happens on the O(<=1) contribution
            exact = math.comb(n_el, p) * cache.exact_value(p)
            contribution = math.exp(lw_xt) * float(exact)
            err += (abs(lw_xt) + 4.0) * _EPS * abs(contribution)
        else:
            contribution = weight * jsum
            err += jerr * weight + (abs(lw_xt) + 4.0) * _EPS * abs(contribution)
        total.add(contribution)
    return total.value, err + total.error_bound()


def _closed_form_exact(s: int, n: int, params: DetectorParams) -> Fraction:
    """Fully rational direct evaluation (cross-talk weight from dyadic x_eff)."""
    n_el = params.n_elements
    q_base = Fraction(params.xtalk_eff)
    total = Fraction(0)
    for p in range((s + 1) // 2, min(s, n_el) + 1):
        ell = s - p
        if ell > p:
            continue
        q = q_base * (n_el - p) / n_el
        weight = math.comb(p, ell) * q**ell * (1 - q) ** (2 * p - s)
        total += math.comb(n_el, p) * weight * _jsum_exact(
            p, n, n_el, params.eta, params.dark
        )
    return total


def fock_closed_form(
    s: int,
    n: int,
    params: DetectorParams,
    mode: Literal["auto", "float64", "exact"] = "auto",
) -> float:
    """Probability of s clicks from an n-photon Fock state, closed form.

    Evaluates the analytic triple sum (cross-talk binomial x element
    binomial x alternating efficiency/dark sum) rather than the transfer
    matrices, with the alternating inner sum done by compensated summation.
    Mass the cross-talk support places above s = N is folded into s = N,
    matching the matrix path.

    Modes:
      auto     compensated float64, escalating individual inner sums to
               exact rational arithmetic when the running error bound
               threatens the ~1e-10 absolute accuracy target (default);
      float64  pure compensated float64, raising NumericalInstabilityError
               when the accumulated error bound exceeds 1e-8 of the result;
      exact    full rational arithmetic, for test oracles (slow for large N).
    """
    n_el = params.n_elements
    if not 0 <= s <= n_el:
        raise ValueError(f"click count s={s} outside [0, {n_el}]")
    if n < 0:
        raise ValueError("photon number must be >= 0")
    if mode not in ("auto", "float64", "exact"):
        raise ValueError(f"unknown mode {mode!r}")

    fold = s == n_el and params.xtalk_eff > 0.0
    if mode == "exact":
        if fold:
            value = 1 - sum(
                (_closed_form_exact(sp, n, params) for sp in range(n_el)), Fraction(0)
            )
        else:
            value = _closed_form_exact(s, n, params)
        return min(max(float(value), 0.0), 1.0)

    cache = _JsumCache(n, params)
    if fold:
        # a detector cannot click more than N times: the s = N probability is
        # the complement of all lower click counts
        acc = CompensatedSum()
        err = 0.0
        for sp in range(n_el):
            value, err_sp = _closed_form_direct(sp, n, params, mode, cache)
            acc.add(value)
            err += err_sp
        result = 1.0 - acc.value
        err += acc.error_bound()
    else:
        result, err = _closed_form_direct(s, n, params, mode, cache)
    if mode == "float64" and err > 1e-8 * abs(result):
        raise NumericalInstabilityError(
            f"closed form for (s={s}, n={n}, N={n_el}) carries error bound "
            f"{err:.2e} against result {result:.2e}; use the matrix path or "
            "auto/exact mode"
        )
    return min(max(result, 0.0), 1.0)


def spd_click_probability(
    kind: str, eta: float, dark: float, mean: float = 0.0, n: int | None = None
) -> float:
    """Click probability of a single-element detector (N = 1) per gate.

    Closed forms per source:
      fock   1 - (1-d)(1-eta)^n                  (pass photon number ``n``)
      tmsv   1 - (1-d)(1-x)/(1 - x(1-eta)^2)     with x from per-mode mean/2
      smsv   1 - (1-d)/sqrt(1 + (2 eta - eta^2) mean)

    ``mean`` is the mean photon number incident on the detector; for TMSV
    this is the combined two-mode beam, twice the per-mode mean.
    """
    if not 0.0 <= eta <= 1.0 or not 0.0 <= dark <= 1.0:
        raise ValueError("eta and dark must lie in [0, 1]")
    if kind == "fock":
        if n is None or n < 0:
            raise ValueError("fock source needs a nonnegative photon number n")
        return 1.0 - (1.0 - dark) * (1.0 - eta) ** n
    if mean < 0:
        raise ValueError("mean must be >= 0")
    if kind == "tmsv":
        x = mean / (2.0 + mean)  # per-mode mean is mean/2
        return 1.0 - (1.0 - dark) * (1.0 - x) / (1.0 - x * (1.0 - eta) ** 2)
    if kind == "smsv":
        return 1.0 - (1.0 - dark) / math.sqrt(1.0 + (2.0 * eta - eta * eta) * mean)
    raise ValueError(f"unknown source kind {kind!r}")


def odds(
    kind: str,
    eta: float,
    t: float,
    dark: float,
    mean: float,
    form: Literal["exact", "quadratic"] = "exact",
) -> float:
    """Detection odds P(click)/P(no click) of an SPD under attenuation t.

    ``eta`` is the fixed detector efficiency, ``t`` the attenuator
    transmission (the model only ever sees the product eta*t), ``mean`` the
    unattenuated mean photon number at the detector.  The quadratic form is
    the small-mean expansion; for TMSV it is already exact, for SMSV the
    exact form carries the square root.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("transmission t must lie in [0, 1]")
    if mean < 0:
        raise ValueError("mean must be >= 0")
    if form not in ("exact", "quadratic"):
        raise ValueError(f"unknown odds form {form!r}")
    if kind == "tmsv" or form == "quadratic":
        if kind not in ("smsv", "tmsv"):
            raise ValueError(f"odds defined for smsv/tmsv, got {kind!r}")
        et = eta * t
        return ((1.0 - et / 2.0) * et * mean + dark) / (1.0 - dark)
    if kind == "smsv":
        et = eta * t
        return math.sqrt(1.0 + (2.0 - et) * et * mean) / (1.0 - dark) - 1.0
    raise ValueError(f"odds defined for smsv/tmsv, got {kind!r}")
