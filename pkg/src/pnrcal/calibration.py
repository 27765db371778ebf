"""Reference-free efficiency extraction from attenuation scans.

The click/no-click odds of a single-photon detector under squeezed-vacuum
light are quadratic in the attenuator transmission, with curvature set by
the nonlinear loss of the detector.  A weighted quadratic fit of odds
against transmission therefore yields the detection efficiency as
eta = -2*a2/a1 without any reference detector.  This module also carries
the exact (square-root) single-mode fit, the classic two-detector
coincidence estimator for comparison, and a multi-scan consistency report.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScanData",
    "FitResult",
    "ExactFitResult",
    "KlyshkoResult",
    "SweepSummary",
    "FitError",
    "SingularDesignError",
    "FitConvergenceError",
    "DegenerateScanPointError",
    "EfficiencyRangeWarning",
    "odds_point",
    "fit_quadratic",
    "fit_quadratic_odds",
    "fit_exact_smsv",
    "klyshko_estimate",
    "power_sweep_report",
]


class FitError(RuntimeError):
    """Base class for calibration fit failures."""


class SingularDesignError(FitError):
    """Too few distinct transmission values to determine a quadratic."""


class FitConvergenceError(FitError):
    """Nonlinear fit failed to converge; carries the last iterate."""

    def __init__(self, message: str, last_params: np.ndarray, iterations: int,
                 last_step: float, chi2: float):
        super().__init__(message)
        self.last_params = last_params
        self.iterations = iterations
        self.last_step = last_step
        self.chi2 = chi2


class DegenerateScanPointError(ValueError):
    """A scan point with clicks == trials has infinite odds."""


class EfficiencyRangeWarning(UserWarning):
    """Fitted efficiency fell outside [0, 1]; data inconsistent with model."""


@dataclass(frozen=True)
class ScanData:
    """One attenuation scan: click counts vs attenuator transmission."""

    t: np.ndarray
    clicks: np.ndarray
    trials: np.ndarray
    source_kind: str = "unknown"
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        clicks = np.asarray(self.clicks, dtype=np.int64)
        trials = np.asarray(self.trials, dtype=np.int64)
        if not (t.shape == clicks.shape == trials.shape) or t.ndim != 1:
            raise ValueError("t, clicks, trials must be 1-d arrays of equal length")
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise ValueError("transmissions must lie in [0, 1]")
        if np.unique(t).size != t.size:
            raise ValueError("transmission values must be distinct")
        if (trials < 1).any():
            raise ValueError("every point needs at least one trial")
        if (clicks < 0).any() or (clicks > trials).any():
            raise ValueError("clicks must lie in [0, trials] per point")
        for name, arr in (("t", t), ("clicks", clicks), ("trials", trials)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.t.size


@dataclass(frozen=True)
class FitResult:
    """Quadratic odds fit a2*t^2 + a1*t + a0 with extracted efficiency."""

    a0: float
    a1: float
    a2: float
    covariance: np.ndarray
    eta_hat: float
    eta_sigma: float
    chi2_per_dof: float
    n_points: int
    model: str = "quadratic"

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.a0, self.a1, self.a2])

    def predict(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.a0 + self.a1 * t + self.a2 * t * t


@dataclass(frozen=True)
class ExactFitResult:
    """Nonlinear square-root odds fit over (eta, mean, dark)."""

    eta_hat: float
    eta_sigma: float
    mean_hat: float
    mean_sigma: float
    dark_hat: float
    dark_sigma: float
    covariance: np.ndarray
    chi2_per_dof: float
    iterations: int
    model: str = "exact_smsv"

    def predict(self, t: np.ndarray) -> np.ndarray:
        return _smsv_odds_model(np.asarray(t, dtype=float),
                                np.array([self.eta_hat, self.mean_hat, self.dark_hat]))


@dataclass(frozen=True)
class KlyshkoResult:
    eta1: float
    eta2: float
    sigma1: float
    sigma2: float


def odds_point(clicks: int, trials: int) -> tuple[float, float]:
    """Odds of a click and its variance for one scan point.

    odds = clicks/(trials - clicks); the variance follows from the binomial
    variance of the click proportion by the delta method,
    Var = p/(T*(1-p)^3).  A zero-click point keeps odds 0 but receives the
    rule-of-one variance (p -> 1/T) so it cannot acquire infinite weight.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= clicks <= trials:
        raise ValueError("clicks must lie in [0, trials]")
    if clicks == trials:
        raise DegenerateScanPointError(
            f"point with clicks == trials == {trials} has infinite odds"
        )
    odds = clicks / (trials - clicks)
    p_hat = max(clicks, 1) / trials
    variance = p_hat / (trials * (1.0 - p_hat) ** 3)
    return odds, variance


def _odds_arrays(scan: ScanData) -> tuple[np.ndarray, np.ndarray]:
    if (scan.clicks == scan.trials).any():
        bad = int(np.argmax(scan.clicks == scan.trials))
        raise DegenerateScanPointError(
            f"scan point t={scan.t[bad]} saturated (clicks == trials)"
        )
    odds = scan.clicks / (scan.trials - scan.clicks)
    p_hat = np.maximum(scan.clicks, 1) / scan.trials
    variance = p_hat / (scan.trials * (1.0 - p_hat) ** 3)
    return odds, variance


def fit_quadratic_odds(
    t: np.ndarray, odds: np.ndarray, variance: np.ndarray, n_points: int | None = None
) -> FitResult:
    """Weighted least-squares quadratic in t through precomputed odds.

    Solved through a QR decomposition of the weighted design matrix (never
    the raw normal equations); the coefficient covariance is the inverse
    weighted Gram matrix and the efficiency uncertainty follows from the
    delta method on eta = -2*a2/a1.
    """
    t = np.asarray(t, dtype=float)
    odds = np.asarray(odds, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if t.size < 4:
        raise FitError("quadratic fit with uncertainty needs at least 4 points")
    if (variance <= 0).any():
        raise ValueError("variances must be positive")
    if np.unique(t[variance < np.inf]).size < 3:
        raise SingularDesignError("need at least 3 distinct transmissions")

    w_sqrt = 1.0 / np.sqrt(variance)
    design = np.column_stack([np.ones_like(t), t, t * t]) * w_sqrt[:, None]
    q_mat, r_mat = np.linalg.qr(design)
    diag = np.abs(np.diag(r_mat))
    if diag.min() <= 1e-12 * diag.max():
        raise SingularDesignError("design matrix is numerically rank deficient")
    coef = np.linalg.solve(r_mat, q_mat.T @ (odds * w_sqrt))
    r_inv = np.linalg.solve(r_mat, np.eye(3))
    covariance = r_inv @ r_inv.T

    a0, a1, a2 = (float(c) for c in coef)
    eta_hat = -2.0 * a2 / a1
    # delta method: d(eta)/da1 = 2 a2/a1^2, d(eta)/da2 = -2/a1
    g1 = 2.0 * a2 / (a1 * a1)
    g2 = -2.0 / a1
    eta_var = (
        g1 * g1 * covariance[1, 1]
        + g2 * g2 * covariance[2, 2]
        + 2.0 * g1 * g2 * covariance[1, 2]
    )
    eta_sigma = float(np.sqrt(max(eta_var, 0.0)))
    residual = odds - (a0 + a1 * t + a2 * t * t)
    dof = t.size - 3
    chi2_per_dof = float((residual * residual / variance).sum() / dof)
    if not 0.0 <= eta_hat <= 1.0:
        warnings.warn(
            f"extracted efficiency {eta_hat:.4g} outside [0, 1]; the scan is "
            "inconsistent with the odds model",
            EfficiencyRangeWarning,
            stacklevel=2,
        )
    return FitResult(
        a0=a0, a1=a1, a2=a2, covariance=covariance, eta_hat=float(eta_hat),
        eta_sigma=eta_sigma, chi2_per_dof=chi2_per_dof,
        n_points=n_points if n_points is not None else t.size,
    )


def fit_quadratic(scan: ScanData) -> FitResult:
    """Quadratic odds-vs-transmission fit of one scan (the default method)."""
    odds, variance = _odds_arrays(scan)
    return fit_quadratic_odds(scan.t, odds, variance)


def _smsv_odds_model(t: np.ndarray, params: np.ndarray) -> np.ndarray:
    eta, mean, dark = params
    et = eta * t
    return np.sqrt(1.0 + (2.0 - et) * et * mean) / (1.0 - dark) - 1.0


def _smsv_odds_jacobian(t: np.ndarray, params: np.ndarray) -> np.ndarray:
    eta, mean, dark = params
    et = eta * t
    root = np.sqrt(1.0 + (2.0 - et) * et * mean)
    d_eta = mean * t * (1.0 - et) / (root * (1.0 - dark))
    d_mean = (2.0 - et) * et / (2.0 * root * (1.0 - dark))
    d_dark = root / (1.0 - dark) ** 2
    return np.column_stack([d_eta, d_mean, d_dark])


_SMSV_LOWER = np.array([0.0, 0.0, 0.0])
_SMSV_UPPER = np.array([1.0, np.inf, 0.999])


def _lm_minimize(
    t: np.ndarray,
    odds: np.ndarray,
    w_sqrt: np.ndarray,
    start: np.ndarray,
    max_iter: int,
    step_tol: float,
):
    """One damped least-squares descent from ``start``.

    Returns (params, chi2, iterations, last relative step, converged).
    Convergence requires both a sub-tolerance step and a vanishing scaled
    gradient, so a temporarily over-damped iteration cannot masquerade as a
    minimum; parameters pinned at zero are exempt from the gradient test
    (their scale factor vanishes), which is the correct boundary condition.
    """

    def chi2_of(p: np.ndarray) -> float:
        r = (_smsv_odds_model(t, p) - odds) * w_sqrt
        return float(r @ r)

    params = start.copy()
    chi2 = chi2_of(params)
    lam = 1e-3
    growth = 2.0
    rel_step = np.inf
    iteration = 0
    for iteration in range(1, max_iter + 1):
        jac = _smsv_odds_jacobian(t, params) * w_sqrt[:, None]
        resid = (_smsv_odds_model(t, params) - odds) * w_sqrt
        grad = jac.T @ resid
        hess = jac.T @ jac
        damp = np.maximum(np.diag(hess), 1e-30)
        accepted = False
        for _ in range(60):
            if lam > 1e30:
                break  # damping exhausted: no float step can descend
            try:
                step = np.linalg.solve(hess + lam * np.diag(damp), -grad)
            except np.linalg.LinAlgError:
                lam *= growth
                growth *= 2.0
                continue
            trial = np.clip(params + step, _SMSV_LOWER, _SMSV_UPPER)
            trial_chi2 = chi2_of(trial)
            actual = chi2 - trial_chi2
            delta = trial - params
            predicted = float(delta @ (lam * damp * delta - grad))
            if actual > 0.0:
                rel_step = float(
                    np.linalg.norm(delta) / max(float(np.linalg.norm(trial)), 1e-30)
                )
                params, chi2 = trial, trial_chi2
                # Nielsen damping update: collapse lambda fast on good steps
                ratio = actual / predicted if predicted > 0 else 1.0
                lam *= max(1.0 / 3.0, 1.0 - (2.0 * ratio - 1.0) ** 3)
                lam = max(lam, 1e-14)
                growth = 2.0
                accepted = True
                break
            lam *= growth
            growth *= 2.0
        if accepted and rel_step < step_tol:
            return params, chi2, iteration, rel_step, True
        if not accepted:
            # damping exhausted: no descent direction left at float precision
            return params, chi2, iteration, rel_step, True
    return params, chi2, iteration, rel_step, False


def fit_exact_smsv(
    scan: ScanData, max_iter: int = 100, step_tol: float = 1e-10
) -> ExactFitResult:
    """Weighted nonlinear fit of the exact square-root odds model.

    Fits (eta, mean, dark) by damped (Levenberg-style) least squares,
    initialized from the quadratic fit; the efficiency/mean valley is narrow,
    so a handful of deterministic restarts around the seed guard against
    stalls.  Converges when the relative step drops below ``step_tol``;
    raises FitConvergenceError with the best iterate otherwise.
    """
    if scan.source_kind not in ("smsv", "unknown"):
        raise FitError(
            f"the square-root odds model describes smsv scans, not "
            f"{scan.source_kind!r}"
        )
    odds, variance = _odds_arrays(scan)
    t = scan.t
    w_sqrt = 1.0 / np.sqrt(variance)

    quad = fit_quadratic_odds(t, odds, variance)
    dark0 = min(max(quad.a0 / (1.0 + quad.a0), 0.0), 0.5) if quad.a0 > 0 else 0.0
    eta0 = min(max(quad.eta_hat, 1e-3), 1.0)
    mean0 = max(quad.a1 * (1.0 - dark0) / eta0, 1e-8)

    # the efficiency/mean valley can trap a single descent; all starts are
    # cheap, so run them and keep the best converged minimum
    best = None
    for eta_scale, mean_scale in ((1, 1), (1, 2), (1, 0.5), (0.5, 2), (2, 0.5)):
        start = np.array(
            [min(eta0 * eta_scale, 1.0), mean0 * mean_scale, dark0]
        )
        run = _lm_minimize(t, odds, w_sqrt, start, max_iter, step_tol)
        if best is None:
            best = run
        elif run[4] and (not best[4] or run[1] < best[1]):
            best = run
    params, chi2, iterations, rel_step, converged = best
    if not converged:
        raise FitConvergenceError(
            f"exact fit did not converge in {max_iter} iterations",
            last_params=params, iterations=iterations, last_step=rel_step, chi2=chi2,
        )

    jac = _smsv_odds_jacobian(t, params) * w_sqrt[:, None]
    hess = jac.T @ jac
    try:
        covariance = np.linalg.inv(hess)
    except np.linalg.LinAlgError as exc:
        raise FitConvergenceError(
            "exact fit converged to a degenerate solution",
            last_params=params, iterations=iterations, last_step=rel_step, chi2=chi2,
        ) from exc
    sigmas = np.sqrt(np.maximum(np.diag(covariance), 0.0))
    dof = max(t.size - 3, 1)
    return ExactFitResult(
        eta_hat=float(params[0]), eta_sigma=float(sigmas[0]),
        mean_hat=float(params[1]), mean_sigma=float(sigmas[1]),
        dark_hat=float(params[2]), dark_sigma=float(sigmas[2]),
        covariance=covariance, chi2_per_dof=chi2 / dof,
        iterations=iterations,
    )


def klyshko_estimate(
    singles1: int, singles2: int, coincidences: int
) -> KlyshkoResult:
    """Two-detector twin-beam efficiency estimate.

    The standard coincidence estimator: eta1 = C/S2 and eta2 = C/S1, exact
    in the single-pair limit.  Uncertainties are Poisson-propagated ratios;
    a zero coincidence count falls back to the rule-of-one numerator.
    """
    if singles1 <= 0 or singles2 <= 0:
        raise ZeroDivisionError("both singles counts must be positive")
    if coincidences < 0 or coincidences > min(singles1, singles2):
        raise ValueError("coincidences must lie in [0, min(singles)]")
    eta1 = coincidences / singles2
    eta2 = coincidences / singles1
    c_eff = max(coincidences, 1)
    sigma1 = (c_eff / singles2) * np.sqrt(1.0 / c_eff + 1.0 / singles2)
    sigma2 = (c_eff / singles1) * np.sqrt(1.0 / c_eff + 1.0 / singles1)
    return KlyshkoResult(eta1=eta1, eta2=eta2, sigma1=float(sigma1), sigma2=float(sigma2))


@dataclass(frozen=True)
class ScanFitEntry:
    label: str
    fit: FitResult | None
    error: str | None = None


@dataclass(frozen=True)
class SweepSummary:
    """Cross-scan consistency of independently fitted efficiencies."""

    entries: tuple[ScanFitEntry, ...]
    eta_values: np.ndarray
    eta_std: float
    mean_eta_sigma: float
    inconsistent: bool


def power_sweep_report(
    scans: list[ScanData], labels: list[str] | None = None
) -> SweepSummary:
    """Fit several scans independently and compare the extracted efficiencies.

    The sample standard deviation across scans should be statistically
    consistent with the per-fit uncertainties; the report flags the sweep
    when the spread exceeds twice the mean fit sigma.  Per-scan fit failures
    are recorded, not raised.
    """
    if len(scans) < 2:
        raise ValueError("a sweep needs at least 2 scans")
    if labels is None:
        labels = [f"scan{i + 1}" for i in range(len(scans))]
    entries = []
    for label, scan in zip(labels, scans):
        try:
            entries.append(ScanFitEntry(label=label, fit=fit_quadratic(scan)))
        except (FitError, ValueError) as exc:
            entries.append(ScanFitEntry(label=label, fit=None, error=str(exc)))
    fits = [e.fit for e in entries if e.fit is not None]
    if len(fits) < 2:
        raise FitError("fewer than 2 scans produced a usable fit")
    etas = np.array([f.eta_hat for f in fits])
    sigmas = np.array([f.eta_sigma for f in fits])
    eta_std = float(np.std(etas, ddof=1))
    mean_sigma = float(sigmas.mean())
    return SweepSummary(
        entries=tuple(entries),
        eta_values=etas,
        eta_std=eta_std,
        mean_eta_sigma=mean_sigma,
        inconsistent=eta_std > 2.0 * mean_sigma,
    )
