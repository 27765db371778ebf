"""Command-line front end.

Subcommands: matrix | predict | simulate | synth-scan | calibrate | sweep |
klyshko.  All data outputs are UTF-8 CSV with 17-significant-digit floats
(lossless round-trip); the calibrate and sweep report paths additionally
render a PNG figure next to the CSV.

Exit codes: 0 success, 1 usage/config/input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .calibration import (
    FitError,
    ScanData,
    fit_exact_smsv,
    fit_quadratic,
    klyshko_estimate,
    power_sweep_report,
    _odds_arrays,
)
from .config import ConfigError, RunConfig, load_config
from .detector import (
    DetectorParams,
    NumericalInstabilityError,
    composed_matrix,
    crosstalk_matrix,
    dark_matrix,
    detected_distribution,
    finite_size_matrix,
    loss_matrix,
)
from .montecarlo import (
    GridDetector,
    simulate_histogram,
    simulate_pair_coincidences,
    synthetic_scan,
)
from .sources import make_source

COLUMN_SUM_TOL = 1e-12


class CsvFormatError(ValueError):
    """Malformed CSV input, with file/line context in the message."""


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path: Path, header: list[str], rows, comments=()) -> Path:
    lines = [f"# {comment}" for comment in comments]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_scan_csv(path: Path, scan: ScanData) -> Path:
    comments = [
        f"{key}={value}"
        for key, value in scan.meta.items()
        if key != "histograms" and value is not None
    ]
    comments.append(f"source_kind={scan.source_kind}")
    rows = zip(scan.t, scan.clicks, scan.trials)
    return _write_csv(path, ["t", "clicks", "trials"], rows, comments)


def read_scan_csv(path: str | Path) -> ScanData:
    """Parse a t,clicks,trials CSV back into a ScanData.

    Raises CsvFormatError with the offending line number on malformed input.
    """
    path = Path(path)
    meta: dict = {}
    t, clicks, trials = [], [], []
    header_seen = False
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            continue
        if not header_seen:
            if [c.strip() for c in stripped.split(",")] != ["t", "clicks", "trials"]:
                raise CsvFormatError(
                    f"{path}:{lineno}: expected header 't,clicks,trials', got {stripped!r}"
                )
            header_seen = True
            continue
        cells = stripped.split(",")
        if len(cells) != 3:
            raise CsvFormatError(f"{path}:{lineno}: expected 3 columns, got {len(cells)}")
        try:
            t.append(float(cells[0]))
            clicks.append(int(cells[1]))
            trials.append(int(cells[2]))
        except ValueError as exc:
            raise CsvFormatError(f"{path}:{lineno}: {exc}") from exc
    if not header_seen:
        raise CsvFormatError(f"{path}:1: missing 't,clicks,trials' header")
    if not t:
        raise CsvFormatError(f"{path}: no data rows")
    source_kind = meta.pop("source_kind", meta.get("source", "unknown"))
    try:
        return ScanData(
            t=np.array(t), clicks=np.array(clicks), trials=np.array(trials),
            source_kind=source_kind, meta=meta,
        )
    except ValueError as exc:
        raise CsvFormatError(f"{path}: {exc}") from exc


def _detector_params(config: RunConfig) -> DetectorParams:
    return DetectorParams(
        n_elements=config.n_elements, eta=config.eta,
        dark=config.dark, xtalk=config.xtalk,
    )


def _matrix_rows(entries: np.ndarray):
    return (row for row in entries)


def cmd_matrix(args, config: RunConfig) -> int:
    params = _detector_params(config)
    named = [
        ("loss", loss_matrix(config.eta, config.n_max)),
        ("finite_size", finite_size_matrix(config.n_elements, config.n_max)),
        ("dark", dark_matrix(config.n_elements, config.dark)),
        ("crosstalk", crosstalk_matrix(config.n_elements, config.xtalk)),
        ("composed", composed_matrix(params, config.n_max)),
    ]
    failures = []
    for name, matrix in named:
        err = matrix.column_sum_error()
        if args.check:
            status = "ok" if err <= COLUMN_SUM_TOL else "FAIL"
            print(f"{name}: max |column sum - 1| = {err:.3e} [{status}]")
            if err > COLUMN_SUM_TOL:
                failures.append(name)
        header = [str(i) for i in range(matrix.in_dim)]
        out = Path(f"{config.out}_{name}.csv")
        _write_csv(out, header, _matrix_rows(matrix.entries),
                   comments=[f"effect={name}", f"shape={matrix.out_dim}x{matrix.in_dim}"])
        print(f"wrote {out}")
    if failures:
        print(f"column-sum check failed for: {', '.join(failures)}", file=sys.stderr)
        return 2
    return 0


def cmd_predict(args, config: RunConfig) -> int:
    params = _detector_params(config)
    source = make_source(config.source, config.source_mean(), config.tail_tol)
    detected = detected_distribution(source, params)
    out = Path(f"{config.out}_predict.csv")
    _write_csv(
        out, ["s", "probability"], enumerate(detected.probs),
        comments=[
            f"source={config.source}", f"mean={_fmt(source.declared_mean)}",
            f"n_elements={config.n_elements}", f"eta={_fmt(config.eta)}",
            f"dark={_fmt(config.dark)}", f"xtalk={_fmt(config.xtalk)}",
        ],
    )
    print(f"wrote {out}")
    return 0


def cmd_simulate(args, config: RunConfig) -> int:
    params = _detector_params(config)
    try:
        det = GridDetector.from_params(params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    source = make_source(config.source, config.source_mean(), config.tail_tol)
    hist = simulate_histogram(det, source, config.shots, config.seed, config.threads)
    freq = hist.frequencies
    sigma5 = 5.0 * np.sqrt(freq * (1.0 - freq) / hist.shots)
    out = Path(f"{config.out}_simulate.csv")
    _write_csv(
        out, ["s", "count", "frequency", "freq_sigma5"],
        zip(range(freq.size), hist.counts, freq, sigma5),
        comments=[
            f"source={config.source}", f"mean={_fmt(config.source_mean())}",
            f"n_elements={config.n_elements}", f"eta={_fmt(config.eta)}",
            f"dark={_fmt(config.dark)}", f"xtalk={_fmt(config.xtalk)}",
            f"shots={config.shots}", f"seed={config.seed}",
            f"total_incident={hist.total_incident}",
            f"total_signal={hist.total_signal}",
            f"total_dark={hist.total_dark}",
            f"total_crosstalk={hist.total_crosstalk}",
        ],
    )
    print(f"wrote {out}")
    return 0


def cmd_synth_scan(args, config: RunConfig) -> int:
    try:
        scan = synthetic_scan(
            config.source, config.eta, config.source_mean(), config.dark,
            config.scan_transmissions(), config.trials, config.seed,
            mode=config.scan_mode, n_elements=config.n_elements,
            xtalk=config.xtalk, threads=config.threads,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(f"{config.out}_scan.csv")
    write_scan_csv(out, scan)
    print(f"wrote {out}")
    return 0


def _report_scan_fits(scans, labels, exact_smsv: bool):
    """Fit every scan; returns (table rows, odds-figure series)."""
    rows = []
    figure_series = []
    for label, scan in zip(labels, scans):
        fit = fit_quadratic(scan)
        rows.append((label, scan.source_kind, "quadratic", fit))
        curve = fit
        if exact_smsv and scan.source_kind in ("smsv", "unknown"):
            curve = fit_exact_smsv(scan)
            rows.append((label, scan.source_kind, "exact", curve))
        odds, variance = _odds_arrays(scan)
        figure_series.append((label, scan.t, odds, np.sqrt(variance), curve))
    return rows, figure_series


def _print_fit_table(rows) -> list[str]:
    lines = [f"{'scan':24s} {'source':8s} {'fit':10s} {'eta':>9s} {'sigma':>9s} {'chi2/dof':>9s}"]
    dark_notes = []
    for label, kind, method, fit in rows:
        lines.append(
            f"{label:24s} {kind:8s} {method:10s} {fit.eta_hat:9.5f} "
            f"{fit.eta_sigma:9.5f} {fit.chi2_per_dof:9.3f}"
        )
        if method == "quadratic":
            dark_est = fit.a0 / (1.0 + fit.a0) if fit.a0 > -1.0 else float("nan")
            dark_notes.append(f"{label}: d ~ {dark_est:.3g} from the fit offset "
                              "(mixes dark counts with any t-independent background)")
    lines.append("uncertainties are 1 sigma")
    lines.extend(dark_notes)
    for line in lines:
        print(line)
    return lines


def cmd_calibrate(args, config: RunConfig) -> int:
    scans = [read_scan_csv(path) for path in args.scans]
    labels = [Path(path).stem for path in args.scans]
    rows, figure_series = _report_scan_fits(scans, labels, args.exact_smsv)
    lines = _print_fit_table(rows)
    Path(f"{config.out}_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for label, scan, (_, t, odds, odds_sigma, fit) in zip(labels, scans, figure_series):
        out = Path(f"{config.out}_odds_{label}.csv")
        _write_csv(
            out, ["t", "odds", "odds_sigma", "fit_odds"],
            zip(t, odds, odds_sigma, fit.predict(t)),
            comments=[f"scan={label}", f"source={scan.source_kind}",
                      f"fit={'exact' if args.exact_smsv else 'quadratic'}"],
        )
        print(f"wrote {out}")
    if not args.no_figures:
        figure = plotting.save_odds_figure(f"{config.out}_odds.png", figure_series)
        print(f"wrote {figure}")
    return 0


def cmd_sweep(args, config: RunConfig) -> int:
    if args.scans:
        if len(args.scans) < 2:
            raise ConfigError("sweep needs at least 2 scan files")
        scans = [read_scan_csv(path) for path in args.scans]
        labels = [Path(path).stem for path in args.scans]
    else:
        if config.means is None or len(config.means) < 2:
            raise ConfigError("sweep needs at least 2 scans (means=... in the config)")
        seed_base = np.random.SeedSequence(config.seed)
        children = seed_base.spawn(len(config.means))
        scans = [
            synthetic_scan(
                config.source, config.eta, mean, config.dark,
                config.scan_transmissions(), config.trials, children[i],
                mode=config.scan_mode, threads=config.threads,
            )
            for i, mean in enumerate(config.means)
        ]
        labels = [f"mean={mean:g}" for mean in config.means]
    summary = power_sweep_report(scans, labels)

    rows = []
    figure_series = []
    for entry, scan in zip(summary.entries, scans):
        if entry.fit is None:
            print(f"{entry.label}: fit failed ({entry.error})")
            continue
        rows.append((entry.label, entry.fit.eta_hat, entry.fit.eta_sigma,
                     entry.fit.chi2_per_dof))
        odds, variance = _odds_arrays(scan)
        figure_series.append((entry.label, scan.t, odds, np.sqrt(variance), entry.fit))
    out = Path(f"{config.out}_sweep.csv")
    _write_csv(out, ["scan", "eta_hat", "eta_sigma", "chi2_per_dof"], rows)
    print(f"wrote {out}")
    print(f"cross-scan std of eta: {summary.eta_std:.5f}")
    print(f"mean fit sigma:        {summary.mean_eta_sigma:.5f}")
    if summary.inconsistent:
        print("INCONSISTENT: cross-scan spread exceeds twice the mean fit sigma")
    else:
        print("consistent: spread within twice the mean fit sigma")
    if not args.no_figures:
        figure = plotting.save_sweep_figure(f"{config.out}_sweep.png", figure_series)
        print(f"wrote {figure}")
    return 0


def cmd_klyshko(args, config: RunConfig) -> int:
    pair = simulate_pair_coincidences(
        config.eta, config.eta2, config.pair_mean, config.shots,
        config.seed, config.threads,
    )
    estimate = klyshko_estimate(pair.singles1, pair.singles2, pair.coincidences)
    print(f"shots={pair.shots} singles1={pair.singles1} singles2={pair.singles2} "
          f"coincidences={pair.coincidences}")
    print(f"eta1 = C/S2 = {estimate.eta1:.5f} +- {estimate.sigma1:.5f}")
    print(f"eta2 = C/S1 = {estimate.eta2:.5f} +- {estimate.sigma2:.5f}")
    out = Path(f"{config.out}_klyshko.csv")
    _write_csv(
        out,
        ["singles1", "singles2", "coincidences", "shots",
         "eta1", "eta1_sigma", "eta2", "eta2_sigma"],
        [(pair.singles1, pair.singles2, pair.coincidences, pair.shots,
          estimate.eta1, estimate.sigma1, estimate.eta2, estimate.sigma2)],
        comments=[f"true_eta1={_fmt(config.eta)}", f"true_eta2={_fmt(config.eta2)}",
                  f"pair_mean={_fmt(config.pair_mean)}", f"seed={config.seed}"],
    )
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--threads", type=int, help="worker threads for simulation")
    common.add_argument("--out", help="output path prefix")
    common.add_argument("--gate-ns", type=float, dest="gate_ns",
                        help="gate length in ns (converts dark_hz to per-gate d)")

    parser = argparse.ArgumentParser(
        prog="pnrcal",
        description="Multiplexed photon-counting detector model and "
                    "reference-free efficiency calibration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("matrix", parents=[common],
                       help="export the four transfer matrices and their composition")
    p.add_argument("--check", action="store_true",
                   help="verify column stochasticity before writing")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("predict", parents=[common],
                       help="analytic click distribution for the configured source")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", parents=[common],
                       help="Monte Carlo click histogram on the element grid")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth-scan", parents=[common],
                       help="generate a synthetic attenuation scan")
    p.set_defaults(func=cmd_synth_scan)

    p = sub.add_parser("calibrate", parents=[common],
                       help="fit scan CSVs and extract detector efficiency")
    p.add_argument("scans", nargs="+", help="scan CSV files (t,clicks,trials)")
    p.add_argument("--exact-smsv", action="store_true", dest="exact_smsv",
                   help="additionally fit the exact square-root SMSV model")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", parents=[common],
                       help="fit several scans and report cross-scan consistency")
    p.add_argument("scans", nargs="*", help="scan CSV files (or use means=... config)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("klyshko", parents=[common],
                       help="two-detector coincidence calibration on synthetic pairs")
    p.set_defaults(func=cmd_klyshko)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        config = load_config(
            args.config, args.set, seed=args.seed, threads=args.threads,
            out=args.out, gate_ns=args.gate_ns,
        )
        return args.func(args, config)
    except (ConfigError, CsvFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FitError, NumericalInstabilityError, ValueError, ZeroDivisionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
