"""Stochastic oracle for the detector model.

Simulates the physical processes directly - photon loss, uniform landing on
an explicit sqrt(N) x sqrt(N) element grid, element saturation, dark counts
and geometric nearest-neighbor cross-talk - with none of the mean-field
shortcuts the analytic transfer matrices take.  Agreement between the two
is therefore evidence, not tautology.

Reproducibility contract: all randomness derives from fixed-size shot
chunks seeded by counter-keyed substreams of the master seed, so results
are bit-identical for a given seed regardless of how many worker threads
aggregate the chunks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .calibration import ScanData
from .detector import DetectorParams, spd_click_probability
from .sources import DEFAULT_TAIL_TOL, PhotonDistribution, make_source

__all__ = [
    "GridDetector",
    "ShotOutcome",
    "SimulatedHistogram",
    "PairCounts",
    "simulate_shot",
    "simulate_histogram",
    "simulate_scan",
    "simulate_pair_coincidences",
    "synthetic_scan",
]

CHUNK_SHOTS = 1 << 16


@dataclass(frozen=True)
class GridDetector:
    """Detector realized as a square grid of single-photon elements."""

    side: int
    params: DetectorParams

    def __post_init__(self) -> None:
        if self.side < 1:
            raise ValueError("grid side must be >= 1")
        if self.side * self.side != self.params.n_elements:
            raise ValueError(
                f"params.n_elements={self.params.n_elements} is not side^2={self.side**2}"
            )

    @classmethod
    def from_params(cls, params: DetectorParams) -> "GridDetector":
        side = math.isqrt(params.n_elements)
        if side * side != params.n_elements:
            raise ValueError(
                f"n_elements={params.n_elements} is not a perfect square; "
                "the grid simulator needs a square array"
            )
        return cls(side=side, params=params)

    def neighbors(self, element: int) -> list[int]:
        """Von Neumann neighbors of an element, respecting the grid edge."""
        side = self.side
        row, col = divmod(element, side)
        out = []
        if col > 0:
            out.append(element - 1)
        if col < side - 1:
            out.append(element + 1)
        if row > 0:
            out.append(element - side)
        if row < side - 1:
            out.append(element + side)
        return out


@dataclass(frozen=True)
class ShotOutcome:
    """Result of one detector gate, with per-cause diagnostics."""

    clicks: int
    n_incident: int
    n_detected_signal: int  # photons surviving loss (collisions not yet removed)
    n_dark: int             # idle elements fired by dark counts
    n_crosstalk: int        # successful ignitions of idle neighbors


def simulate_shot(det: GridDetector, n_photons: int, rng: np.random.Generator) -> ShotOutcome:
    """One gate of the full physical pipeline, readable reference version.

    Stages follow the model ordering: loss, landing/saturation, dark counts,
    then a single cross-talk pass in which every element fired so far
    attempts each idle neighbor independently (cross-talk does not cascade;
    two firers may ignite the same neighbor, which still fires only once).
    """
    params = det.params
    n_el = params.n_elements
    survivors = int(rng.binomial(n_photons, params.eta)) if n_photons else 0
    if survivors:
        fired = set(rng.integers(0, n_el, size=survivors).tolist())
    else:
        fired = set()
    darks = set()
    if params.dark > 0.0:
        for element in range(n_el):
            if element not in fired and rng.random() < params.dark:
                darks.add(element)
    snapshot = fired | darks
    ignited = set()
    n_crosstalk = 0
    if params.xtalk > 0.0 and snapshot:
        for element in sorted(snapshot):
            for neighbor in det.neighbors(element):
                if neighbor not in snapshot and rng.random() < params.xtalk:
                    ignited.add(neighbor)
                    n_crosstalk += 1
    clicks = len(snapshot | ignited)
    return ShotOutcome(
        clicks=clicks,
        n_incident=n_photons,
        n_detected_signal=survivors,
        n_dark=len(darks),
        n_crosstalk=n_crosstalk,
    )


@dataclass(frozen=True)
class SimulatedHistogram:
    """Empirical click histogram plus aggregate cause diagnostics."""

    counts: np.ndarray
    shots: int
    total_incident: int
    total_signal: int
    total_dark: int
    total_crosstalk: int

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.shots

    def distribution(self) -> PhotonDistribution:
        return PhotonDistribution(
            self.frequencies,
            declared_mean=float(np.arange(self.counts.size) @ self.frequencies),
            tail_tol=0.0,
            label="mc_clicks",
        )


def _distinct_landing(
    m: np.ndarray, n_elements: int, rng: np.random.Generator, want_keys: bool
):
    """Distinct elements hit per shot for m uniformly landing photons.

    Returns (k, keys): k[i] counts distinct elements in shot i; keys are the
    unique shot*N+element codes (only when want_keys, for the cross-talk
    geometry).
    """
    shots = m.size
    if n_elements == 1:
        k = np.minimum(m, 1).astype(np.int64)
        if not want_keys:
            return k, None
        hit = np.flatnonzero(k)
        return k, hit  # element index is 0, so key == shot index
    total = int(m.sum())
    if total == 0:
        return np.zeros(shots, dtype=np.int64), (np.empty(0, dtype=np.int64) if want_keys else None)
    shot_ids = np.repeat(np.arange(shots, dtype=np.int64), m)
    elements = rng.integers(0, n_elements, size=total, dtype=np.int64)
    keys = np.unique(shot_ids * n_elements + elements)
    k = np.bincount(keys // n_elements, minlength=shots)
    return k, (keys if want_keys else None)


def _crosstalk_pass(
    keys: np.ndarray, side: int, xtalk: float, shots: int, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Vectorized single cross-talk pass over the fired-element keys.

    ``keys`` are sorted unique shot*N+element codes of every element firing
    before cross-talk.  Returns per-shot final click counts and the number
    of successful ignition attempts.
    """
    n_el = side * side
    clicks_before = np.bincount(keys // n_el, minlength=shots)
    if xtalk <= 0.0 or keys.size == 0 or n_el == 1:
        return clicks_before, 0
    element = keys % n_el
    row = element // side
    col = element % side
    ignited_parts = []
    n_success = 0
    for offset, valid in (
        (-1, col > 0),
        (+1, col < side - 1),
        (-side, row > 0),
        (+side, row < side - 1),
    ):
        candidates = keys[valid] + offset
        if candidates.size == 0:
            continue
        pos = np.searchsorted(keys, candidates)
        pos = np.minimum(pos, keys.size - 1)
        idle = keys[pos] != candidates
        candidates = candidates[idle]
        fired_mask = rng.random(candidates.size) < xtalk
        hits = candidates[fired_mask]
        n_success += int(hits.size)
        if hits.size:
            ignited_parts.append(hits)
    if not ignited_parts:
        return clicks_before, n_success
    ignited = np.unique(np.concatenate(ignited_parts))
    # ignited elements were idle, so the union with keys is a disjoint add
    extra = np.bincount(ignited // n_el, minlength=shots)
    return clicks_before + extra, n_success


def _simulate_chunk(
    det: GridDetector, source: PhotonDistribution, size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate one chunk of shots; returns (histogram, diagnostics)."""
    params = det.params
    n_el = params.n_elements
    n = source.sample(rng, size)
    m = rng.binomial(n, params.eta) if params.eta > 0.0 else np.zeros(size, dtype=np.int64)
    need_geometry = params.xtalk > 0.0 and n_el > 1
    k_signal, keys = _distinct_landing(m, n_el, rng, want_keys=need_geometry)

    if not need_geometry:
        if params.dark > 0.0:
            k_dark = rng.binomial(n_el - k_signal, params.dark)
        else:
            k_dark = np.zeros(size, dtype=np.int64)
        clicks = k_signal + k_dark
        n_crosstalk = 0
    else:
        # darks drawn over all N elements; hits on already-fired elements are
        # absorbed, which leaves exactly Binomial(N - k, d) new clicks
        k_dark_all = rng.binomial(n_el, params.dark, size=size) if params.dark > 0.0 else None
        if k_dark_all is not None and k_dark_all.any():
            dark_parts = []
            for shot in np.flatnonzero(k_dark_all):
                elements = rng.choice(n_el, size=int(k_dark_all[shot]), replace=False)
                dark_parts.append(shot * n_el + np.sort(elements))
            dark_keys = np.concatenate(dark_parts)
            all_keys = np.union1d(keys, dark_keys)
            k_dark = np.bincount(all_keys // n_el, minlength=size) - np.bincount(
                keys // n_el, minlength=size
            )
        else:
            all_keys = keys
            k_dark = np.zeros(size, dtype=np.int64)
        clicks, n_crosstalk = _crosstalk_pass(
            all_keys, det.side, params.xtalk, size, rng
        )

    histogram = np.bincount(clicks, minlength=n_el + 1).astype(np.int64)
    diag = np.array(
        [int(n.sum()), int(m.sum()), int(np.asarray(k_dark).sum()), int(n_crosstalk)],
        dtype=np.int64,
    )
    return histogram, diag


def _chunk_plan(shots: int) -> list[int]:
    sizes = [CHUNK_SHOTS] * (shots // CHUNK_SHOTS)
    if shots % CHUNK_SHOTS:
        sizes.append(shots % CHUNK_SHOTS)
    return sizes


def _as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def simulate_histogram(
    det: GridDetector,
    source: PhotonDistribution,
    shots: int,
    seed,
    threads: int = 1,
) -> SimulatedHistogram:
    """Empirical click distribution over ``shots`` gates.

    Each shot draws a photon number from ``source`` and runs the grid
    pipeline.  Work is split into fixed-size chunks with counter-derived
    substreams; the integer aggregation makes the result independent of
    ``threads``.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    sizes = _chunk_plan(shots)
    children = _as_seedseq(seed).spawn(len(sizes))

    def run(index: int) -> tuple[np.ndarray, np.ndarray]:
        return _simulate_chunk(det, source, sizes[index], np.random.default_rng(children[index]))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(sizes))))
    else:
        results = [run(i) for i in range(len(sizes))]
    histogram = np.zeros(det.params.n_elements + 1, dtype=np.int64)
    diag = np.zeros(4, dtype=np.int64)
    for part_hist, part_diag in results:
        histogram += part_hist
        diag += part_diag
    return SimulatedHistogram(
        counts=histogram,
        shots=shots,
        total_incident=int(diag[0]),
        total_signal=int(diag[1]),
        total_dark=int(diag[2]),
        total_crosstalk=int(diag[3]),
    )


def simulate_scan(
    det: GridDetector,
    source_kind: str,
    mean: float,
    t_values: np.ndarray,
    shots_per_point: int,
    seed,
    threads: int = 1,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> ScanData:
    """Attenuation scan: one click histogram per transmission value.

    Attenuation enters as eta -> eta*t.  The scan records click/no-click
    counts per point (for N > 1 a click means at least one firing element;
    the full histograms are kept in the metadata).
    """
    t_values = np.asarray(t_values, dtype=float)
    source = make_source(source_kind, mean, tail_tol)
    children = _as_seedseq(seed).spawn(t_values.size)
    clicks = np.zeros(t_values.size, dtype=np.int64)
    trials = np.full(t_values.size, shots_per_point, dtype=np.int64)
    histograms = []
    for i, t in enumerate(t_values):
        det_t = GridDetector(det.side, replace(det.params, eta=det.params.eta * t))
        hist = simulate_histogram(det_t, source, shots_per_point, children[i], threads)
        clicks[i] = shots_per_point - int(hist.counts[0])
        histograms.append(hist.counts)
    meta = {
        "mode": "mc",
        "source": source_kind,
        "mean": mean,
        "true_eta": det.params.eta,
        "dark": det.params.dark,
        "xtalk": det.params.xtalk,
        "n_elements": det.params.n_elements,
        "seed": seed if isinstance(seed, int) else None,
        "histograms": histograms,
    }
    return ScanData(t=t_values, clicks=clicks, trials=trials,
                    source_kind=source_kind, meta=meta)


@dataclass(frozen=True)
class PairCounts:
    """Twin-beam coincidence tallies for the two-detector method."""

    singles1: int
    singles2: int
    coincidences: int
    shots: int


def simulate_pair_coincidences(
    eta1: float,
    eta2: float,
    mean_per_mode: float,
    shots: int,
    seed,
    threads: int = 1,
) -> PairCounts:
    """Photon-pair counting with two detectors of efficiency eta1, eta2.

    Each gate draws a pair number from thermal statistics; each arm thins
    its photons independently and clicks when at least one survives.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    source = make_source("thermal", mean_per_mode)
    sizes = _chunk_plan(shots)
    children = _as_seedseq(seed).spawn(len(sizes))

    def run(index: int) -> np.ndarray:
        rng = np.random.default_rng(children[index])
        n = source.sample(rng, sizes[index])
        click1 = rng.binomial(n, eta1) >= 1
        click2 = rng.binomial(n, eta2) >= 1
        return np.array(
            [int(click1.sum()), int(click2.sum()), int((click1 & click2).sum())],
            dtype=np.int64,
        )

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    totals = np.sum(parts, axis=0)
    return PairCounts(
        singles1=int(totals[0]), singles2=int(totals[1]),
        coincidences=int(totals[2]), shots=shots,
    )


def synthetic_scan(
    source_kind: str,
    eta: float,
    mean: float,
    dark: float,
    t_values: np.ndarray,
    trials: int,
    seed,
    mode: str = "analytic",
    n_elements: int = 1,
    xtalk: float = 0.0,
    threads: int = 1,
) -> ScanData:
    """Synthetic attenuation scan at known ground-truth parameters.

    ``analytic`` mode draws binomial click counts around the closed-form SPD
    click probability (fast, exact statistics, N = 1 only); ``mc`` mode runs
    the full grid simulation.
    """
    t_values = np.asarray(t_values, dtype=float)
    if mode == "mc":
        det = GridDetector.from_params(
            DetectorParams(n_elements=n_elements, eta=eta, dark=dark, xtalk=xtalk)
        )
        scan = simulate_scan(det, source_kind, mean, t_values, trials, seed, threads)
        scan.meta["true_eta"] = eta
        return scan
    if mode != "analytic":
        raise ValueError(f"unknown scan mode {mode!r}")
    if n_elements != 1 or xtalk != 0.0:
        raise ValueError("analytic scan mode models a single-element detector")
    if source_kind not in ("smsv", "tmsv"):
        raise ValueError("analytic scan mode supports smsv and tmsv sources")
    children = _as_seedseq(seed).spawn(t_values.size)
    clicks = np.zeros(t_values.size, dtype=np.int64)
    for i, t in enumerate(t_values):
        p = spd_click_probability(source_kind, eta * t, dark, mean)
        rng = np.random.default_rng(children[i])
        clicks[i] = rng.binomial(trials, p)
    meta = {
        "mode": "analytic",
        "source": source_kind,
        "mean": mean,
        "true_eta": eta,
        "dark": dark,
        "seed": seed if isinstance(seed, int) else None,
    }
    return ScanData(
        t=t_values, clicks=clicks, trials=np.full(t_values.size, trials, dtype=np.int64),
        source_kind=source_kind, meta=meta,
    )
