"""End-to-end tests of the command-line interface."""

import numpy as np
import pytest

from pnrcal.cli import main, read_scan_csv, write_scan_csv, CsvFormatError
from pnrcal.calibration import ScanData


def run(*argv):
    return main(list(argv))


def read_matrix_csv(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            rows.append(line.strip().split(","))
    header, data = rows[0], rows[1:]
    return header, np.array([[float(c) for c in row] for row in data])


def read_table_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [l.strip() for l in fh if l.strip() and not l.startswith("#")]
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


class TestMatrixCommand:
    def test_writes_all_effects_and_checks(self, tmp_path, capsys):
        out = tmp_path / "m"
        code = run("matrix", "--check", "--set", "n_elements=9", "--set", "eta=0.7",
                   "--set", "xtalk=0.05", "--set", "n_max=6", "--out", str(out))
        assert code == 0
        printed = capsys.readouterr().out
        assert printed.count("[ok]") == 5
        for name in ("loss", "finite_size", "dark", "crosstalk", "composed"):
            assert (tmp_path / f"m_{name}.csv").exists()

    def test_composed_reduces_to_finite_size(self, tmp_path):
        out = tmp_path / "m"
        assert run("matrix", "--set", "n_elements=4", "--set", "eta=1", "--set",
                   "dark=0", "--set", "xtalk=0", "--set", "n_max=8",
                   "--out", str(out)) == 0
        _, composed = read_matrix_csv(tmp_path / "m_composed.csv")
        _, fs = read_matrix_csv(tmp_path / "m_finite_size.csv")
        np.testing.assert_allclose(composed, fs, atol=1e-14)

    def test_single_element_dimensions(self, tmp_path):
        out = tmp_path / "m"
        assert run("matrix", "--set", "n_elements=1", "--set", "n_max=5",
                   "--out", str(out)) == 0
        _, loss = read_matrix_csv(tmp_path / "m_loss.csv")
        _, dark = read_matrix_csv(tmp_path / "m_dark.csv")
        _, composed = read_matrix_csv(tmp_path / "m_composed.csv")
        assert loss.shape == (6, 6)
        assert dark.shape == (2, 2)
        assert composed.shape == (2, 6)

    def test_column_sums_within_tolerance(self, tmp_path):
        out = tmp_path / "m"
        assert run("matrix", "--set", "n_elements=16", "--set", "eta=0.4",
                   "--set", "dark=0.01", "--set", "xtalk=0.12", "--set", "n_max=12",
                   "--out", str(out)) == 0
        for name in ("loss", "finite_size", "dark", "crosstalk", "composed"):
            _, entries = read_matrix_csv(tmp_path / f"m_{name}.csv")
            assert np.abs(entries.sum(axis=0) - 1).max() < 1e-12


class TestPredictCommand:
    def test_vacuum(self, tmp_path):
        out = tmp_path / "p"
        assert run("predict", "--set", "source=fock", "--set", "fock_n=0",
                   "--set", "dark=0", "--set", "n_elements=4", "--out", str(out)) == 0
        _, rows = read_table_csv(tmp_path / "p_predict.csv")
        assert float(rows[0][1]) == 1.0

    def test_saturation(self, tmp_path):
        out = tmp_path / "p"
        assert run("predict", "--set", "source=fock", "--set", "fock_n=2",
                   "--set", "eta=1", "--set", "dark=0", "--set", "n_elements=1",
                   "--out", str(out)) == 0
        _, rows = read_table_csv(tmp_path / "p_predict.csv")
        assert float(rows[1][1]) == pytest.approx(1.0, abs=1e-12)

    def test_enumeration_value(self, tmp_path):
        out = tmp_path / "p"
        assert run("predict", "--set", "source=fock", "--set", "fock_n=3",
                   "--set", "eta=1", "--set", "dark=0", "--set", "n_elements=4",
                   "--out", str(out)) == 0
        _, rows = read_table_csv(tmp_path / "p_predict.csv")
        assert float(rows[2][1]) == pytest.approx(0.5625, abs=1e-12)


class TestSimulateCommand:
    def test_byte_identical_across_threads(self, tmp_path):
        args = ["simulate", "--set", "n_elements=9", "--set", "eta=0.6",
                "--set", "xtalk=0.05", "--set", "source=tmsv", "--set", "mean=0.8",
                "--set", "shots=120000", "--seed", "99"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(*args, "--threads", "1", "--out", str(out1)) == 0
        assert run(*args, "--threads", "4", "--out", str(out2)) == 0
        assert (tmp_path / "a_simulate.csv").read_bytes() == \
               (tmp_path / "b_simulate.csv").read_bytes()

    def test_matches_predict_within_printed_bounds(self, tmp_path):
        shared = ["--set", "n_elements=4", "--set", "eta=0.55", "--set", "dark=0.001",
                  "--set", "source=thermal", "--set", "mean=0.9"]
        assert run("predict", *shared, "--out", str(tmp_path / "p")) == 0
        assert run("simulate", *shared, "--set", "shots=150000", "--seed", "5",
                   "--out", str(tmp_path / "s")) == 0
        _, pred_rows = read_table_csv(tmp_path / "p_predict.csv")
        _, sim_rows = read_table_csv(tmp_path / "s_simulate.csv")
        for pred, sim in zip(pred_rows, sim_rows):
            p = float(pred[1])
            freq, bound = float(sim[2]), float(sim[3])
            assert abs(freq - p) <= bound + 6 / 150000

    def test_rejects_non_square_grid(self, tmp_path):
        code = run("simulate", "--set", "n_elements=5", "--out", str(tmp_path / "x"))
        assert code == 1


class TestSynthScanCommand:
    def test_default_grid_size(self, tmp_path):
        out = tmp_path / "s"
        assert run("synth-scan", "--seed", "3", "--out", str(out)) == 0
        scan = read_scan_csv(tmp_path / "s_scan.csv")
        assert len(scan) == 40

    def test_zero_transmission_row(self, tmp_path):
        out = tmp_path / "s"
        assert run("synth-scan", "--set", "t_values=0,0.5,1", "--set", "dark=0",
                   "--set", "trials=5000", "--seed", "3", "--out", str(out)) == 0
        scan = read_scan_csv(tmp_path / "s_scan.csv")
        assert scan.clicks[scan.t == 0.0][0] == 0

    def test_deterministic_output(self, tmp_path):
        args = ["synth-scan", "--set", "scan_mode=mc", "--set", "trials=20000",
                "--seed", "11"]
        assert run(*args, "--threads", "1", "--out", str(tmp_path / "a")) == 0
        assert run(*args, "--threads", "3", "--out", str(tmp_path / "b")) == 0
        assert (tmp_path / "a_scan.csv").read_bytes() == \
               (tmp_path / "b_scan.csv").read_bytes()

    def test_round_trip_preserves_values(self, tmp_path):
        scan = ScanData(
            t=np.array([0.1, 1 / 3, 0.77777, 1.0]),
            clicks=np.array([3, 17, 170, 1234]),
            trials=np.array([10**6] * 4),
            source_kind="tmsv",
            meta={"seed": 5},
        )
        path = tmp_path / "scan.csv"
        write_scan_csv(path, scan)
        back = read_scan_csv(path)
        np.testing.assert_array_equal(back.t, scan.t)
        np.testing.assert_array_equal(back.clicks, scan.clicks)
        np.testing.assert_array_equal(back.trials, scan.trials)
        assert back.source_kind == "tmsv"


class TestCalibrateCommand:
    def make_scan(self, tmp_path, eta=0.174, source="tmsv", mean=0.5, seed=8):
        out = tmp_path / "scan"
        assert run("synth-scan", "--set", f"source={source}", "--set", f"eta={eta}",
                   "--set", f"mean={mean}", "--set", "trials=1000000",
                   "--seed", str(seed), "--out", str(out)) == 0
        return tmp_path / "scan_scan.csv"

    def test_recovers_efficiency(self, tmp_path, capsys):
        scan_path = self.make_scan(tmp_path)
        out = tmp_path / "cal"
        assert run("calibrate", str(scan_path), "--no-figures", "--out", str(out)) == 0
        printed = capsys.readouterr().out
        assert "quadratic" in printed
        header, rows = read_table_csv(tmp_path / "cal_odds_scan_scan.csv")
        assert header == ["t", "odds", "odds_sigma", "fit_odds"]
        assert len(rows) == 40
        report = (tmp_path / "cal_report.txt").read_text()
        eta_fit = float(report.splitlines()[1].split()[3])
        assert abs(eta_fit - 0.174) < 0.03

    def test_exact_smsv_flag(self, tmp_path, capsys):
        scan_path = self.make_scan(tmp_path, eta=0.113, source="smsv", seed=9)
        out = tmp_path / "cal"
        assert run("calibrate", str(scan_path), "--exact-smsv", "--no-figures",
                   "--out", str(out)) == 0
        printed = capsys.readouterr().out
        assert "exact" in printed

    def test_figure_rendered(self, tmp_path):
        scan_path = self.make_scan(tmp_path)
        out = tmp_path / "cal"
        assert run("calibrate", str(scan_path), "--out", str(out)) == 0
        png = tmp_path / "cal_odds.png"
        assert png.exists() and png.stat().st_size > 1000

    def test_table_layout_for_two_detectors(self, tmp_path, capsys):
        scan1 = self.make_scan(tmp_path, eta=0.174, seed=8)
        scan2_dir = tmp_path / "second"
        scan2_dir.mkdir()
        scan2 = self.make_scan(scan2_dir, eta=0.127, seed=9)
        assert run("calibrate", str(scan1), str(scan2), "--no-figures",
                   "--out", str(tmp_path / "pair")) == 0
        lines = capsys.readouterr().out.splitlines()
        table = [l for l in lines if "tmsv" in l]
        assert len(table) == 2

    def test_malformed_csv_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,clicks,trials\n0.5,12,100\noops\n", encoding="utf-8")
        assert run("calibrate", str(bad), "--no-figures",
                   "--out", str(tmp_path / "x")) == 1
        assert "bad.csv:3" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run("calibrate", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "x")) == 1

    def test_saturated_scan_is_numerical_failure(self, tmp_path):
        bad = tmp_path / "sat.csv"
        bad.write_text(
            "t,clicks,trials\n0.1,10,100\n0.4,20,100\n0.7,50,100\n1,100,100\n",
            encoding="utf-8",
        )
        assert run("calibrate", str(bad), "--no-figures",
                   "--out", str(tmp_path / "x")) == 2


class TestSweepCommand:
    def test_synthesized_sweep(self, tmp_path, capsys):
        out = tmp_path / "sw"
        assert run("sweep", "--set", "means=0.3,0.36,0.43,0.48,0.5",
                   "--set", "eta=0.172", "--set", "trials=500000",
                   "--seed", "21", "--no-figures", "--out", str(out)) == 0
        printed = capsys.readouterr().out
        assert "cross-scan std" in printed
        _, rows = read_table_csv(tmp_path / "sw_sweep.csv")
        assert len(rows) == 5

    def test_single_scan_rejected(self, tmp_path):
        scan = tmp_path / "scan.csv"
        scan.write_text("t,clicks,trials\n0.1,1,100\n0.4,2,100\n0.7,3,100\n1,4,100\n",
                        encoding="utf-8")
        assert run("sweep", str(scan), "--out", str(tmp_path / "x")) == 1

    def test_mixed_efficiencies_flagged(self, tmp_path, capsys):
        for eta, name in ((0.1, "a"), (0.2, "b")):
            assert run("synth-scan", "--set", f"eta={eta}", "--set", "mean=0.5",
                       "--set", "trials=1000000", "--seed", "5",
                       "--out", str(tmp_path / name)) == 0
        assert run("sweep", str(tmp_path / "a_scan.csv"), str(tmp_path / "b_scan.csv"),
                   "--no-figures", "--out", str(tmp_path / "sw")) == 0
        assert "INCONSISTENT" in capsys.readouterr().out


class TestKlyshkoCommand:
    def test_report_matches_library(self, tmp_path, capsys):
        out = tmp_path / "k"
        assert run("klyshko", "--set", "eta=0.174", "--set", "eta2=0.12",
                   "--set", "pair_mean=0.005", "--set", "shots=500000",
                   "--seed", "33", "--out", str(out)) == 0
        printed = capsys.readouterr().out
        assert "eta1 = C/S2" in printed
        header, rows = read_table_csv(tmp_path / "k_klyshko.csv")
        record = dict(zip(header, rows[0]))
        assert int(record["coincidences"]) <= min(
            int(record["singles1"]), int(record["singles2"])
        )
        assert abs(float(record["eta1"]) - 0.174) < 5 * float(record["eta1_sigma"])


class TestConfigHandling:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("bogus_key = 3\n", encoding="utf-8")
        assert run("predict", "--config", str(cfg), "--out", str(tmp_path / "x")) == 1

    def test_config_file_with_overrides(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment line\neta = 0.4\nn_elements = 4\n", encoding="utf-8")
        out = tmp_path / "p"
        assert run("predict", "--config", str(cfg), "--set", "eta=0.5",
                   "--out", str(out)) == 0
        text = (tmp_path / "p_predict.csv").read_text()
        assert "eta=0.5" in text

    def test_gate_ns_conversion(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("dark_hz = 1000\n", encoding="utf-8")
        out = tmp_path / "p"
        assert run("predict", "--config", str(cfg), "--gate-ns", "100",
                   "--out", str(out)) == 0
        text = (tmp_path / "p_predict.csv").read_text()
        assert "dark=0.0001" in text

    def test_dark_hz_without_gate_rejected(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("dark_hz = 1000\n", encoding="utf-8")
        assert run("predict", "--config", str(cfg), "--out", str(tmp_path / "x")) == 1

    def test_bad_usage_exit_code(self, capsys):
        assert run("no-such-command") == 1
        capsys.readouterr()


class TestCsvParsing:
    def test_missing_header(self, tmp_path):
        bad = tmp_path / "x.csv"
        bad.write_text("0.1,2,3\n", encoding="utf-8")
        with pytest.raises(CsvFormatError, match="header"):
            read_scan_csv(bad)

    def test_wrong_column_count(self, tmp_path):
        bad = tmp_path / "x.csv"
        bad.write_text("t,clicks,trials\n0.1,2\n", encoding="utf-8")
        with pytest.raises(CsvFormatError, match="x.csv:2"):
            read_scan_csv(bad)

    def test_empty_data(self, tmp_path):
        bad = tmp_path / "x.csv"
        bad.write_text("t,clicks,trials\n", encoding="utf-8")
        with pytest.raises(CsvFormatError, match="no data rows"):
            read_scan_csv(bad)
