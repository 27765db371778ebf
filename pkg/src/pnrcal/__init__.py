"""Multiplexed photon-number-resolving detector model and self-calibration.

Library layout:
  numerics     cancellation-safe combinatorial primitives
  sources      photon-number statistics of the input states
  detector     transfer matrices, closed-form click probabilities, odds
  montecarlo   grid-level stochastic oracle and synthetic scan generators
  calibration  odds fitting and efficiency extraction
  cli          command-line front end (CSV + figure output)
"""

from .calibration import (
    ExactFitResult,
    FitResult,
    KlyshkoResult,
    ScanData,
    SweepSummary,
    fit_exact_smsv,
    fit_quadratic,
    klyshko_estimate,
    odds_point,
    power_sweep_report,
)
from .detector import (
    DetectorParams,
    TransferMatrix,
    crosstalk_matrix,
    dark_matrix,
    detected_distribution,
    finite_size_matrix,
    fock_closed_form,
    loss_matrix,
    odds,
    spd_click_probability,
)
from .montecarlo import (
    GridDetector,
    PairCounts,
    ShotOutcome,
    SimulatedHistogram,
    simulate_histogram,
    simulate_pair_coincidences,
    simulate_scan,
    simulate_shot,
    synthetic_scan,
)
from .sources import PhotonDistribution, fock, make_source, smsv, thermal, tmsv_combined

__version__ = "0.1.0"

__all__ = [
    "DetectorParams",
    "TransferMatrix",
    "PhotonDistribution",
    "ScanData",
    "FitResult",
    "ExactFitResult",
    "KlyshkoResult",
    "SweepSummary",
    "GridDetector",
    "ShotOutcome",
    "SimulatedHistogram",
    "PairCounts",
    "fock",
    "smsv",
    "tmsv_combined",
    "thermal",
    "make_source",
    "loss_matrix",
    "finite_size_matrix",
    "dark_matrix",
    "crosstalk_matrix",
    "detected_distribution",
    "fock_closed_form",
    "spd_click_probability",
    "odds",
    "simulate_shot",
    "simulate_histogram",
    "simulate_scan",
    "simulate_pair_coincidences",
    "synthetic_scan",
    "odds_point",
    "fit_quadratic",
    "fit_exact_smsv",
    "klyshko_estimate",
    "power_sweep_report",
]
