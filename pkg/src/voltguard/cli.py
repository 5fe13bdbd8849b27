"""Command-line front end: property verification, voltage sweeps, governed
runs, overhead benchmarks, and calibration dumps.

Every subcommand is deterministic given (config file, seed): two runs emit
byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .abft import AbftConfig, abft_overhead, precompute_weight_checksums
from .faultsim import (
    MissingCalibrationError,
    calibration_to_dict,
    default_calibration,
    fold_seed,
    load_calibration,
)
from .governor import (
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
from .layers import (
    build_lenet,
    build_vgg16,
    forward,
    golden_run,
    lenet_plan,
    load_model,
    vgg16_plan,
)
from .suites import run_all
from .tensor import F32, F64, random_tensor


def _dtype(args):
    return F32 if args.precision == "f32" else F64


def _load_model(args):
    dtype = _dtype(args)
    if args.model == "lenet":
        return build_lenet(args.seed, dtype)
    if args.model == "vgg16":
        return build_vgg16(args.seed, dtype)
    return load_model(args.model)


def _calibration(args):
    return load_calibration(args.calib) if args.calib else default_calibration()


def _abft_config(args):
    cfg = AbftConfig.for_dtype(_dtype(args))
    tau = getattr(args, "tau", None)
    floor = getattr(args, "floor", None)
    if tau is not None:
        cfg = AbftConfig(tau=tau, floor=floor if floor is not None else 10.0 * tau)
    elif floor is not None:
        cfg = AbftConfig(tau=cfg.tau, floor=floor)
    return cfg

def _governor_config(args, cal):
    return GovernorConfig(
        frequency_mhz=args.freq,
        abft=_abft_config(args),
        calibration=cal,
        parallel=not args.no_parallel,
    )


def _testset(model, seed, n):
    return [random_tensor(model.input_shape, fold_seed(seed, 9000, i))
            for i in range(n)]


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    results = run_all(args.trials, _abft_config(args), args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        extra = f"  ({r.detail})" if r.detail else ""
        print(f"{r.name:<{width}}  {status}  {r.trials - r.failures}/{r.trials}{extra}")
    return 0 if all(r.passed for r in results) else 1


def cmd_sweep(args) -> int:
    try:
        cal = _calibration(args)
        model = _load_model(args)
        cks = precompute_weight_checksums(model)
        cfg = _governor_config(args, cal)
        params = cal.fault_params(args.freq)
        testset = _testset(model, args.seed, args.inputs)
        out = _ensure_out(args)

        golden_path = os.path.join(out, f"golden_{model.name}_seed{args.seed}.npy")
        if os.path.exists(golden_path):
            outputs = np.load(golden_path)
            goldens = [(outputs[i], int(np.argmax(outputs[i]))) for i in range(len(testset))]
        else:
            goldens = [golden_run(model, x) for x in testset]
            np.save(golden_path, np.stack([g[0] for g in goldens]))

        result = voltage_descent(model, cks, testset, cfg, seed=args.seed,
                                 goldens=goldens)
    except MissingCalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    sweep_path = os.path.join(out, "sweep.csv")
    with open(sweep_path, "w", encoding="utf-8") as f:
        f.write(sweep_csv(result.sweep))
    power_path = os.path.join(out, "power_curve.csv")
    with open(power_path, "w", encoding="utf-8") as f:
        f.write(power_curve_csv(cal, args.freq, cfg.start_mv,
                                params.v_crash_mv + cfg.step_mv, cfg.step_mv))
    print(f"PoFF estimate:  {result.poff_estimate_mv} mV")
    print(f"crash estimate: {result.crash_estimate_mv} mV")
    print(f"wrote {sweep_path} and {power_path}")
    return 0


def cmd_govern(args) -> int:
    try:
        cal = _calibration(args)
        model = _load_model(args)
        cks = precompute_weight_checksums(model)
        cfg = _governor_config(args, cal)
        inputs = _testset(model, args.seed, min(args.inputs, 100))
        stream = [inputs[i % len(inputs)] for i in range(args.inputs)]
        run = govern(model, cks, stream, cfg, seed=args.seed)
    except MissingCalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = _ensure_out(args)
    log_path = os.path.join(out, "governor.csv")
    with open(log_path, "w", encoding="utf-8") as f:
        f.write(governor_csv(run))

    crashed = any(rep.crashed for rep in run.reports)
    summary = energy_summary(run, cfg)
    print(f"inputs:            {summary['inputs']}")
    print(f"settled voltage:   {settled_voltage_mv(run):.1f} mV")
    print(f"final voltage:     {run.final_voltage_mv:.1f} mV")
    print(f"total energy:      {total_energy_j(run):.2f} J")
    print(f"mean energy/inf:   {summary['mean_energy_j']:.3f} J")
    print(f"savings vs nominal (ABFT-on baseline):  {summary['savings_vs_nominal_abft']*100:.1f}%")
    print(f"savings vs nominal (ABFT-off baseline): {summary['savings_vs_nominal_noabft']*100:.1f}%")
    print(f"retries:           {summary['retries']}")
    print(f"wrote {log_path}")
    if crashed:
        print("run crashed", file=sys.stderr)
        return 3
    return 0


def cmd_bench(args) -> int:
    cal = _calibration(args)
    model = _load_model(args)
    cks = precompute_weight_checksums(model)
    cfg = _governor_config(args, cal)
    x = random_tensor(model.input_shape, fold_seed(args.seed, 9000, 0))
    op = cfg.operating_point(cal.nominal_mv)

    t0 = time.perf_counter()
    for _ in range(args.runs):
        forward(model, x)
    t_plain = (time.perf_counter() - t0) / args.runs

    t0 = time.perf_counter()
    for _ in range(args.runs):
        checked_inference(model, cks, x, op, cfg, seed=args.seed)
    t_checked = (time.perf_counter() - t0) / args.runs

    print(f"model: {model.name}  runs: {args.runs}  precision: {args.precision}")
    print(f"wall-clock per inference, checks off: {t_plain*1000:.2f} ms")
    print(f"wall-clock per inference, checks on:  {t_checked*1000:.2f} ms")
    print(f"wall-clock overhead: {(t_checked/t_plain - 1)*100:.1f}%  (machine-dependent)")
    for name, plan_fn in (("lenet", lenet_plan), ("vgg16", vgg16_plan)):
        ratio = abft_overhead(plan_fn()[1])
        print(f"analytic ABFT op-count overhead, {name}: {ratio*100:.2f}%")
    return 0


def cmd_dump_default_config(args) -> int:
    text = json.dumps(calibration_to_dict(default_calibration()), indent=2, sort_keys=True)
    if args.out_file:
        with open(args.out_file, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        print(f"wrote {args.out_file}")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--model", default="lenet",
                   help="lenet, vgg16, or a path to a model config JSON")
    p.add_argument("--seed", type=int, default=1, help="run seed")
    p.add_argument("--freq", type=float, default=1780.0, help="clock frequency, MHz")
    p.add_argument("--calib", default=None, help="calibration JSON path")
    p.add_argument("--out", default="out", help="output directory for CSV files")
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--no-parallel", action="store_true",
                   help="disable the engine's internal DMR parallelism")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="voltguard",
        description="Checksum-guarded DNN inference with a simulated undervolting governor.",
        epilog=(
            "CSV schemas: sweep.csv has voltage_mv,power_w,detected_rate,actual_rate,"
            "agreement; power_curve.csv has voltage_mv,power_w_abft_on,power_w_abft_off; "
            "governor.csv has step,voltage_mv,accepted,retries,energy_j. "
            "All outputs are UTF-8 CSV with a header row."
        ),
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the property suites")
    _add_common(p)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--tau", type=float, default=None,
                   help="override checksum relative tolerance (floor follows as 10*tau)")
    p.add_argument("--floor", type=float, default=None,
                   help="override checksum absolute floor")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="voltage-descent characterization")
    _add_common(p)
    p.add_argument("--inputs", type=int, default=100, help="synthetic test-set size")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("govern", help="closed-loop governed run")
    _add_common(p)
    p.add_argument("--inputs", type=int, default=200, help="number of inferences")
    p.set_defaults(func=cmd_govern)

    p = sub.add_parser("bench", help="wall-clock and analytic overhead report")
    _add_common(p)
    p.add_argument("--runs", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dump-default-config", help="emit the default calibration JSON")
    p.add_argument("--out-file", default=None, help="write to a file instead of stdout")
    p.set_defaults(func=cmd_dump_default_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
