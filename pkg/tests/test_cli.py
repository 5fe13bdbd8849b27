import json

import pytest

from voltguard.cli import main
from voltguard.faultsim import (
    calibration_to_dict,
    default_calibration,
    load_calibration,
)


def run(argv):
    return main(argv)


class TestVerify:
    def test_healthy_build_exits_zero(self, capsys):
        assert run(["verify", "--trials", "60", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "checksum-soundness" in out and "pass" in out

    def test_too_tight_tau_exits_nonzero(self, capsys):
        # 1e-16 sits below the summation noise floor: false positives
        code = run(["verify", "--trials", "60", "--seed", "1", "--tau", "1e-16"])
        assert code != 0
        assert "FAIL" in capsys.readouterr().out


class TestSweep:
    def test_sweep_outputs(self, tmp_path, capsys):
        out = tmp_path / "o"
        code = run(["sweep", "--model", "lenet", "--seed", "3", "--inputs", "25",
                    "--out", str(out)])
        assert code == 0
        text = capsys.readouterr().out
        assert "PoFF estimate" in text

        sweep = (out / "sweep.csv").read_text().strip().split("\n")
        assert sweep[0] == "voltage_mv,power_w,detected_rate,actual_rate,agreement"
        rows = [line.split(",") for line in sweep[1:]]
        # power at nominal matches the table anchor
        assert float(rows[0][0]) == 960.0 and float(rows[0][1]) == 142.0
        # no detections above the PoFF
        for r in rows:
            if float(r[0]) >= 835.0:
                assert float(r[2]) == 0.0
        # PoFF row within one step of 835
        detect_vs = [float(r[0]) for r in rows if float(r[2]) > 0]
        assert abs(max(detect_vs) - 835.0) <= 5.0

        power = (out / "power_curve.csv").read_text().strip().split("\n")
        assert power[0] == "voltage_mv,power_w_abft_on,power_w_abft_off"
        # golden outputs are cached in the output directory
        assert (out / "golden_lenet_seed3.npy").exists()

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run(["sweep", "--model", "lenet", "--seed", "4", "--inputs", "10",
                        "--out", str(d)]) == 0
        assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
        assert (a / "power_curve.csv").read_bytes() == (b / "power_curve.csv").read_bytes()

    def test_missing_calibration_is_error(self, tmp_path, capsys):
        cal = calibration_to_dict(default_calibration())
        cal["faults"].pop("1780")
        cal["power"]["latency_ms"].pop("1780")
        p = tmp_path / "cal.json"
        p.write_text(json.dumps(cal))
        code = run(["sweep", "--model", "lenet", "--seed", "1", "--inputs", "5",
                    "--calib", str(p), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "error" in capsys.readouterr().err


class TestGovern:
    def test_nominal_short_run(self, tmp_path, capsys):
        out = tmp_path / "g"
        code = run(["govern", "--model", "lenet", "--seed", "5", "--inputs", "40",
                    "--out", str(out)])
        assert code == 0
        text = capsys.readouterr().out
        assert "settled voltage" in text and "savings vs nominal" in text
        log = (out / "governor.csv").read_text().strip().split("\n")
        assert log[0] == "step,voltage_mv,accepted,retries,energy_j"
        assert len(log) == 41
        # a 40-input run stays near nominal: zero retries anywhere
        assert all(line.split(",")[3] == "0" for line in log[1:])

    def test_single_input_nominal_zero_retries(self, tmp_path):
        out = tmp_path / "g1"
        assert run(["govern", "--model", "lenet", "--seed", "6", "--inputs", "1",
                    "--out", str(out)]) == 0
        row = (out / "governor.csv").read_text().strip().split("\n")[1]
        step, v, accepted, retries, _ = row.split(",")
        assert (step, v, accepted, retries) == ("0", "960.0", "true", "0")

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run(["govern", "--model", "lenet", "--seed", "7", "--inputs", "30",
                        "--out", str(d)]) == 0
        assert (a / "governor.csv").read_bytes() == (b / "governor.csv").read_bytes()

    def test_disabled_faults_settle_at_floor(self, tmp_path, capsys):
        cal = calibration_to_dict(default_calibration())
        for rec in cal["faults"].values():
            rec["p_max"] = 0.0
        p = tmp_path / "nofault.json"
        p.write_text(json.dumps(cal))
        out = tmp_path / "g"
        code = run(["govern", "--model", "lenet", "--seed", "8", "--inputs", "680",
                    "--calib", str(p), "--out", str(out)])
        assert code == 0
        assert "final voltage:     800.0 mV" in capsys.readouterr().out
        rows = (out / "governor.csv").read_text().strip().split("\n")[1:]
        assert all(r.split(",")[3] == "0" for r in rows), "retried without faults"


class TestBench:
    def test_reports_wall_clock_and_analytic(self, capsys):
        assert run(["bench", "--model", "lenet", "--seed", "1", "--runs", "2"]) == 0
        out = capsys.readouterr().out
        assert "checks off" in out and "checks on" in out
        assert "analytic ABFT op-count overhead, lenet" in out
        assert "analytic ABFT op-count overhead, vgg16" in out

    def test_deterministic_predictions(self, lenet, lenet_cks, gov_cfg):
        # ABFT-off runs of the same seed/model agree exactly
        from voltguard.layers import forward
        from voltguard.tensor import random_tensor
        import numpy as np

        x = random_tensor(lenet.input_shape, 123)
        assert np.array_equal(forward(lenet, x), forward(lenet, x))


class TestHelp:
    def test_csv_schemas_documented(self):
        from voltguard.cli import build_parser

        text = build_parser().format_help()
        assert "voltage_mv,power_w,detected_rate,actual_rate" in text.replace("\n", "")


class TestDumpDefaultConfig:
    def test_emits_parseable_defaults(self, capsys):
        assert run(["dump-default-config"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["nominal_mv"] == 960.0
        assert set(doc["faults"]) == {"1680", "1780", "1820"}
        assert doc["power"]["latency_ms"]["1780"]["abft_on"] == 181.36

    def test_file_round_trips_into_loader(self, tmp_path):
        p = tmp_path / "defaults.json"
        assert run(["dump-default-config", "--out-file", str(p)]) == 0
        assert load_calibration(p) == default_calibration()


class TestModelFileFlow:
    def test_sweep_on_saved_model_file(self, tmp_path, lenet):
        from voltguard.layers import save_model

        path = save_model(lenet, tmp_path / "m")
        out = tmp_path / "o"
        assert run(["sweep", "--model", path, "--seed", "3", "--inputs", "5",
                    "--out", str(out)]) == 0
        assert (out / "sweep.csv").exists()
