import numpy as np
import pytest

from voltguard.faultsim import (
    Calibration,
    default_calibration,
    energy_per_inference,
    fold_seed,
    scaled_params,
)
from voltguard.governor import (
    GovernorConfig,
    checked_inference,
    energy_summary,
    govern,
    governor_csv,
    power_curve_csv,
    settled_voltage_mv,
    sweep_csv,
    total_energy_j,
    voltage_descent,
)
from voltguard.layers import golden_run
from voltguard.tensor import max_abs_diff, random_tensor


def make_inputs(model, n, seed=5):
    return [random_tensor(model.input_shape, fold_seed(seed, 9000, i)) for i in range(n)]


def nofault_calibration():
    cal = default_calibration()
    faults = {f: scaled_params(p, 0.0) for f, p in cal.faults.items()}
    return Calibration(power=cal.power, faults=faults, nominal_mv=cal.nominal_mv)


class TestCheckedInference:
    def test_nominal_first_pass(self, lenet, lenet_cks, gov_cfg):
        x = make_inputs(lenet, 1)[0]
        rep = checked_inference(lenet, lenet_cks, x, gov_cfg.operating_point(960),
                                gov_cfg, seed=3)
        assert rep.accepted and rep.retries == 0 and not rep.crashed
        assert rep.prediction == golden_run(lenet, x)[1]
        assert all(v.passed for v in rep.verdicts)

    def test_below_poff_retries_then_recovers_golden(self, lenet, lenet_cks, gov_cfg):
        # at PoFF - 15 mV faults appear; the retry ladder climbs back up
        op = gov_cfg.operating_point(820)
        inputs = make_inputs(lenet, 12, seed=7)
        retried = [
            checked_inference(lenet, lenet_cks, x, op, gov_cfg, seed=fold_seed(7, i))
            for i, x in enumerate(inputs)
        ]
        assert any(r.retries > 0 for r in retried), "no fault at 820 mV across 12 runs"
        for x, r in zip(inputs, retried):
            assert r.accepted
            assert r.prediction == golden_run(lenet, x)[1]

    def test_crash_contract(self, lenet, lenet_cks, gov_cfg):
        rep = checked_inference(lenet, lenet_cks, make_inputs(lenet, 1)[0],
                                gov_cfg.operating_point(770), gov_cfg, seed=1)
        assert rep.crashed and rep.prediction is None and not rep.accepted

    def test_energy_sums_over_passes(self, lenet, lenet_cks, gov_cfg):
        # retries cost energy: total equals the per-pass energies at the
        # climbing voltages
        op = gov_cfg.operating_point(820)
        for i, x in enumerate(make_inputs(lenet, 12, seed=7)):
            rep = checked_inference(lenet, lenet_cks, x, op, gov_cfg, seed=fold_seed(7, i))
            expected = sum(
                energy_per_inference(gov_cfg.calibration.power,
                                     gov_cfg.operating_point(min(960, 820 + 5 * k)),
                                     abft=True)
                for k in range(rep.retries + 1)
            )
            assert rep.energy_j == pytest.approx(expected)

    def test_rejected_after_max_retries(self, lenet, lenet_cks):
        # with no retry headroom and heavy faults, the report is withheld
        cfg = GovernorConfig(max_retries=0, parallel=False)
        x = make_inputs(lenet, 1)[0]
        rep = checked_inference(lenet, lenet_cks, x, cfg.operating_point(790), cfg, seed=2)
        assert not rep.crashed
        assert not rep.accepted and rep.prediction is None
        assert rep.retries == 0 and rep.output is not None

    def test_retry_clamped_to_start_voltage(self, lenet, lenet_cks):
        cfg = GovernorConfig(start_mv=825.0, parallel=False)
        reps = [
            checked_inference(lenet, lenet_cks, x, cfg.operating_point(825), cfg,
                              seed=fold_seed(11, i))
            for i, x in enumerate(make_inputs(lenet, 20, seed=11))
        ]
        faulted = [r for r in reps if r.retries > 0]
        assert faulted
        for r in faulted:
            assert r.op.voltage_mv <= 825.0


@pytest.fixture(scope="module")
def descent(lenet, lenet_cks, gov_cfg):
    return voltage_descent(lenet, lenet_cks, make_inputs(lenet, 60), gov_cfg, seed=5)


class TestVoltageDescent:

    def test_poff_within_one_step(self, descent):
        assert abs(descent.poff_estimate_mv - 835.0) <= 5.0

    def test_poff_above_crash(self, descent):
        assert descent.crash_estimate_mv is not None
        assert descent.poff_estimate_mv > descent.crash_estimate_mv

    def test_clean_above_poff(self, descent):
        for rec in descent.sweep:
            if rec.voltage_mv >= 835.0:
                assert rec.detected_rate == 0.0
                assert rec.actual_rate == 0.0
                assert rec.agreement == 1.0

    def test_detected_dominates_actual(self, descent):
        # ABFT flags check-path faults too, so detections exceed real errors
        for rec in descent.sweep:
            assert rec.detected_rate >= rec.actual_rate

    def test_dmr_detections_start_below_abft(self, descent):
        abft_vs = [r.voltage_mv for r in descent.sweep if r.abft_detected_rate > 0]
        dmr_vs = [r.voltage_mv for r in descent.sweep if r.dmr_detected_rate > 0]
        assert abft_vs and dmr_vs
        assert max(dmr_vs) < max(abft_vs)

    def test_empty_testset_rejected(self, lenet, lenet_cks, gov_cfg):
        with pytest.raises(ValueError):
            voltage_descent(lenet, lenet_cks, [], gov_cfg)


class TestGovern:
    def test_settles_in_band(self, lenet, lenet_cks, gov_cfg):
        base = make_inputs(lenet, 100)
        stream = [base[i % 100] for i in range(1600)]
        run = govern(lenet, lenet_cks, stream, gov_cfg, seed=5)
        assert 835.0 <= settled_voltage_mv(run) <= 845.0
        assert all(r.accepted for r in run.reports)
        assert not any(r.crashed for r in run.reports)

    def test_start_below_poff_retracts_to_band(self, lenet, lenet_cks):
        cfg = GovernorConfig(start_mv=820.0, parallel=False)
        base = make_inputs(lenet, 50)
        stream = [base[i % 50] for i in range(400)]
        run = govern(lenet, lenet_cks, stream, cfg, seed=6)
        volts = [row[1] for row in run.log]
        assert max(volts) > 820.0, "never retracted upward"
        assert 825.0 <= settled_voltage_mv(run) <= 845.0
        assert not any(r.crashed for r in run.reports)

    def test_no_faults_descends_to_floor(self, lenet, lenet_cks):
        cfg = GovernorConfig(calibration=nofault_calibration(), parallel=False)
        x = make_inputs(lenet, 1)[0]
        n = 680   # (960-800)/5 steps x 20 accepts, plus slack
        run = govern(lenet, lenet_cks, [x] * n, cfg, seed=7)
        assert run.final_voltage_mv == cfg.floor_mv
        assert all(r.retries == 0 for r in run.reports)
        volts = [row[1] for row in run.log]
        assert all(b <= a for a, b in zip(volts, volts[1:])), "retracted without faults"

    def test_energy_accounting(self, lenet, lenet_cks, gov_cfg):
        base = make_inputs(lenet, 20)
        run = govern(lenet, lenet_cks, base, gov_cfg, seed=8)
        assert total_energy_j(run) == pytest.approx(sum(r.energy_j for r in run.reports))
        summ = energy_summary(run, gov_cfg)
        assert summ["inputs"] == 20
        assert summ["baseline_nominal_abft_j"] == pytest.approx(142.0 * 181.36 / 1000)

    def test_deterministic_across_parallelism(self, lenet, lenet_cks):
        base = make_inputs(lenet, 30)
        stream = [base[i % 30] for i in range(120)]
        cfg_s = GovernorConfig(start_mv=840.0, parallel=False)
        cfg_p = GovernorConfig(start_mv=840.0, parallel=True)
        run_s = govern(lenet, lenet_cks, stream, cfg_s, seed=9)
        run_p = govern(lenet, lenet_cks, stream, cfg_p, seed=9)
        assert run_s.log == run_p.log
        assert governor_csv(run_s) == governor_csv(run_p)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GovernorConfig(step_mv=0)
        with pytest.raises(ValueError):
            GovernorConfig(step_mv=10, retract_mv=5)


class TestCsvOutput:
    def test_sweep_csv_schema(self, lenet, lenet_cks, gov_cfg):
        res = voltage_descent(lenet, lenet_cks, make_inputs(lenet, 5), gov_cfg, seed=10)
        text = sweep_csv(res.sweep)
        lines = text.strip().split("\n")
        assert lines[0] == "voltage_mv,power_w,detected_rate,actual_rate,agreement"
        assert len(lines) == len(res.sweep) + 1
        first = lines[1].split(",")
        assert float(first[0]) == 960.0
        assert float(first[1]) == 142.0

    def test_governor_csv_schema(self, lenet, lenet_cks, gov_cfg):
        run = govern(lenet, lenet_cks, make_inputs(lenet, 3), gov_cfg, seed=11)
        lines = governor_csv(run).strip().split("\n")
        assert lines[0] == "step,voltage_mv,accepted,retries,energy_j"
        assert len(lines) == 4
        assert lines[1].startswith("0,960.0,true,0,")

    def test_power_curve_csv(self):
        cal = default_calibration()
        lines = power_curve_csv(cal, 1780.0, 960.0, 785.0, 5.0).strip().split("\n")
        assert lines[0] == "voltage_mv,power_w_abft_on,power_w_abft_off"
        v, on, off = (float(t) for t in lines[1].split(","))
        assert v == 960.0 and off == 142.0
        assert on == pytest.approx(142.0 * 0.99)
