"""Closed-loop undervolting governor and the voltage-descent
characterization protocol.

checked_inference runs one input through the engine with every linear layer
checksum-verified and every nonlinear layer DMR-compared; any failed verdict
discards the pass, raises the voltage one step, and re-runs from the first
layer.  govern() wraps that in the steady-state descend/retract policy;
voltage_descent() sweeps the voltage with retries disabled to locate the
point of first failure and the crash point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .abft import AbftConfig, WeightChecksums, conv_checked, fc_checked
from .dmr import DEFAULT_TOL_ULPS, dmr_execute
from .faultsim import (
    Calibration,
    ExecContext,
    OperatingPoint,
    SimulatedCrash,
    default_calibration,
    energy_per_inference,
    fold_seed,
    power,
)
from .layers import ModelGraph, golden_run
from .tensor import max_abs_diff


@dataclass(frozen=True)
class GovernorConfig:
    start_mv: float = 960.0
    step_mv: float = 5.0
    retract_mv: float = 10.0
    max_retries: int = 3
    frequency_mhz: float = 1780.0
    window: int = 20             # clean accepts before the next down-step
    floor_mv: float = 800.0      # hard stop for descent
    dmr_tol_ulps: float = DEFAULT_TOL_ULPS
    error_criterion_abs: float = 1e-13   # "actual error" bar vs the golden run
    parallel: bool = False
    abft: AbftConfig = field(default_factory=AbftConfig)
    calibration: Calibration = field(default_factory=default_calibration)

    def __post_init__(self):
        if self.step_mv <= 0:
            raise ValueError("step must be positive")
        if self.retract_mv < self.step_mv:
            raise ValueError("retract margin must be >= step")

    def operating_point(self, voltage_mv: float) -> OperatingPoint:
        return OperatingPoint(voltage_mv, self.frequency_mhz)


@dataclass
class InferenceReport:
    prediction: int | None
    accepted: bool
    verdicts: list
    retries: int
    op: OperatingPoint | None
    energy_j: float
    crashed: bool
    output: np.ndarray | None = None    # raw final-pass output (characterization)


@dataclass(frozen=True)
class SweepRecord:
    voltage_mv: float
    power_w: float
    detected_rate: float       # fraction of inferences with any failed verdict
    actual_rate: float         # fraction with raw output off golden by > criterion
    agreement: float           # fraction matching the golden argmax
    abft_detected_rate: float = 0.0
    dmr_detected_rate: float = 0.0


@dataclass
class DescentResult:
    poff_estimate_mv: float | None
    crash_estimate_mv: float | None
    sweep: list


@dataclass
class GovernRun:
    reports: list
    log: list                   # (step, voltage_mv, accepted, retries, energy_j)
    final_voltage_mv: float


def checked_inference(model: ModelGraph, cks: WeightChecksums, x: np.ndarray,
                      op: OperatingPoint, cfg: GovernorConfig, seed: int) -> InferenceReport:
    """One governed inference with up to cfg.max_retries re-executions.

    A failed pass is fully discarded; the retry runs from layer 0 at one
    step higher voltage (clamped to the start voltage) with the retry
    number folded into the fault keys.  Each pass, including rejected
    ones, is charged its simulated energy.
    """
    params = cfg.calibration.fault_params(op.frequency_mhz)
    v = op.voltage_mv
    energy = 0.0
    last_verdicts: list = []
    last_out = None
    cur = op
    for retry in range(cfg.max_retries + 1):
        cur = OperatingPoint(v, op.frequency_mhz)
        try:
            ctx = ExecContext(op=cur, params=params, seed=seed, retry=retry,
                              parallel=cfg.parallel)
        except SimulatedCrash:
            return InferenceReport(prediction=None, accepted=False, verdicts=[],
                                   retries=retry, op=cur, energy_j=energy, crashed=True)
        out = x
        verdicts = []
        for idx, ld in enumerate(model.layers):
            if ld.kind == "conv":
                out, verdict = conv_checked(out, ld, cks, cfg.abft, ctx, idx)
            elif ld.kind == "fc":
                out, verdict = fc_checked(out, ld, cks, cfg.abft, ctx, idx)
            else:
                out, verdict = dmr_execute(out, ld.kind, ctx, idx, spec=ld.spec,
                                           tol_ulps=cfg.dmr_tol_ulps)
            verdicts.append(verdict)
        energy += energy_per_inference(cfg.calibration.power, cur, abft=True)
        if all(vd.passed for vd in verdicts):
            return InferenceReport(prediction=int(np.argmax(out)), accepted=True,
                                   verdicts=verdicts, retries=retry, op=cur,
                                   energy_j=energy, crashed=False, output=out)
        last_verdicts, last_out = verdicts, out
        v = min(cfg.start_mv, v + cfg.step_mv)
    return InferenceReport(prediction=None, accepted=False, verdicts=last_verdicts,
                           retries=cfg.max_retries, op=cur, energy_j=energy,
                           crashed=False, output=last_out)


def voltage_descent(model: ModelGraph, cks: WeightChecksums, testset: list,
                    cfg: GovernorConfig, seed: int = 0,
                    goldens: list | None = None) -> DescentResult:
    """Characterization sweep: descend past the PoFF down to the crash point.

    Retries are disabled so the recorded rates reflect the raw fault model.
    Rejected inferences keep their raw outputs; "actual" errors and
    prediction agreement are measured against fault-free golden runs
    (precomputed (output, prediction) pairs may be passed in).
    """
    if not testset:
        raise ValueError("testset must be non-empty")
    char_cfg = replace(cfg, max_retries=0)
    if goldens is None:
        goldens = [golden_run(model, x) for x in testset]
    sweep: list[SweepRecord] = []
    crash_v = None
    v = cfg.start_mv
    while v >= 600.0:
        op = cfg.operating_point(v)
        n = len(testset)
        detected = actual = agree = abft_hits = dmr_hits = 0
        crashed = False
        for i, x in enumerate(testset):
            rep = checked_inference(model, cks, x, op, char_cfg, fold_seed(seed, i))
            if rep.crashed:
                crashed = True
                break
            fails = [vd for vd in rep.verdicts if not vd.passed]
            if fails:
                detected += 1
            if any(vd.kind != "dmr" for vd in fails):
                abft_hits += 1
            if any(vd.kind == "dmr" for vd in fails):
                dmr_hits += 1
            g_out, g_pred = goldens[i]
            if max_abs_diff(rep.output, g_out) > cfg.error_criterion_abs:
                actual += 1
            if int(np.argmax(rep.output)) == g_pred:
                agree += 1
        if crashed:
            crash_v = v
            break
        sweep.append(SweepRecord(
            voltage_mv=v,
            power_w=power(cfg.calibration.power, op),
            detected_rate=detected / n,
            actual_rate=actual / n,
            agreement=agree / n,
            abft_detected_rate=abft_hits / n,
            dmr_detected_rate=dmr_hits / n,
        ))
        v -= cfg.step_mv
    detections = [r.voltage_mv for r in sweep if r.detected_rate > 0]
    poff = max(detections) if detections else None
    if poff is not None and crash_v is not None and not poff > crash_v:
        raise RuntimeError(f"PoFF {poff} mV not above crash {crash_v} mV")
    return DescentResult(poff_estimate_mv=poff, crash_estimate_mv=crash_v, sweep=sweep)


def govern(model: ModelGraph, cks: WeightChecksums, inputs: list,
           cfg: GovernorConfig, seed: int = 0) -> GovernRun:
    """Steady-state loop: step down after each window of clean accepts,
    retract by the margin on any failed verdict, hold at the floor.

    Retraction is capped at the nominal voltage (or the start voltage if
    configured higher), so a run started below the PoFF climbs back up
    instead of pinning to its low start.
    """
    ceiling = max(cfg.start_mv, cfg.calibration.nominal_mv)
    reports: list[InferenceReport] = []
    log = []
    v = cfg.start_mv
    consec = 0
    for i, x in enumerate(inputs):
        rep = checked_inference(model, cks, x, cfg.operating_point(v), cfg,
                                fold_seed(seed, i))
        reports.append(rep)
        log.append((i, v, rep.accepted, rep.retries, rep.energy_j))
        if rep.crashed:
            break
        if rep.accepted and rep.retries == 0:
            consec += 1
            if consec >= cfg.window and v - cfg.step_mv >= cfg.floor_mv:
                v -= cfg.step_mv
                consec = 0
        else:
            v = min(ceiling, v + cfg.retract_mv)
            consec = 0
    return GovernRun(reports=reports, log=log, final_voltage_mv=v)


# ---------------------------------------------------------------------------
# run summaries
# ---------------------------------------------------------------------------

def settled_voltage_mv(run: GovernRun) -> float:
    """Median held voltage over the second half of the run."""
    volts = [row[1] for row in run.log]
    tail = volts[len(volts) // 2 :]
    return float(np.median(tail))


def total_energy_j(run: GovernRun) -> float:
    return float(sum(rep.energy_j for rep in run.reports))


def energy_summary(run: GovernRun, cfg: GovernorConfig) -> dict:
    """Mean per-input energy vs the two nominal baselines.

    The savings figure is ambiguous in principle, so both definitions are
    reported: against the checked engine at nominal voltage
    (savings_vs_nominal_abft) and against the unchecked engine at nominal
    (savings_vs_nominal_noabft).
    """
    cal = cfg.calibration
    nominal = OperatingPoint(cal.nominal_mv, cfg.frequency_mhz)
    base_on = energy_per_inference(cal.power, nominal, abft=True)
    base_off = energy_per_inference(cal.power, nominal, abft=False)
    n = len(run.reports)
    mean_e = total_energy_j(run) / n if n else 0.0
    return {
        "inputs": n,
        "mean_energy_j": mean_e,
        "baseline_nominal_abft_j": base_on,
        "baseline_nominal_noabft_j": base_off,
        "savings_vs_nominal_abft": 1.0 - mean_e / base_on,
        "savings_vs_nominal_noabft": 1.0 - mean_e / base_off,
        "retries": sum(rep.retries for rep in run.reports),
        "settled_voltage_mv": settled_voltage_mv(run),
    }


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

SWEEP_CSV_HEADER = "voltage_mv,power_w,detected_rate,actual_rate,agreement"
GOVERNOR_CSV_HEADER = "step,voltage_mv,accepted,retries,energy_j"
POWER_CSV_HEADER = "voltage_mv,power_w_abft_on,power_w_abft_off"


def sweep_csv(sweep) -> str:
    lines = [SWEEP_CSV_HEADER]
    for r in sweep:
        lines.append(f"{r.voltage_mv!r},{r.power_w!r},{r.detected_rate!r},"
                     f"{r.actual_rate!r},{r.agreement!r}")
    return "\n".join(lines) + "\n"


def governor_csv(run: GovernRun) -> str:
    lines = [GOVERNOR_CSV_HEADER]
    for step, v, accepted, retries, energy in run.log:
        lines.append(f"{step},{v!r},{str(accepted).lower()},{retries},{energy!r}")
    return "\n".join(lines) + "\n"


def power_curve_csv(cal: Calibration, frequency_mhz: float,
                    v_hi: float, v_lo: float, step_mv: float) -> str:
    """Power vs voltage with the ABFT-on column scaled by the measured
    ~1% draw reduction."""
    lines = [POWER_CSV_HEADER]
    v = v_hi
    while v >= v_lo:
        p = power(cal.power, (v, frequency_mhz))
        lines.append(f"{v!r},{p * cal.power.abft_power_factor!r},{p!r}")
        v -= step_mv
    return "\n".join(lines) + "\n"
