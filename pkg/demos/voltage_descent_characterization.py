"""Characterize the simulated accelerator: descend the voltage until errors
appear (point of first failure), then keep going until it crashes.

Retries are disabled here so the recorded rates reflect the raw fault
model.  Linear layers fail first; the dual-executed nonlinear layers only
start disagreeing ~25 mV lower; the crash point sits well below both, which
is exactly why checksum detections make a safe early-warning signal.
"""

import voltguard as vg

model = vg.build_lenet(seed=1)
checksums = vg.precompute_weight_checksums(model)
cfg = vg.GovernorConfig(frequency_mhz=1780, parallel=True)

testset = [vg.random_tensor(model.input_shape, vg.fold_seed(0, i)) for i in range(40)]

print("sweeping 960 mV downward at 1780 MHz (40 inputs per step)...")
result = vg.voltage_descent(model, checksums, testset, cfg, seed=0)

print(f"\n{'mV':>5} {'W':>7} {'detected':>9} {'checksum':>9} {'dmr':>6} "
      f"{'actual':>7} {'agree':>6}")
for rec in result.sweep:
    if rec.voltage_mv > 845 and rec.detected_rate == 0:
        continue   # the long quiet stretch above the PoFF
    print(f"{rec.voltage_mv:5.0f} {rec.power_w:7.1f} {rec.detected_rate:9.2f} "
          f"{rec.abft_detected_rate:9.2f} {rec.dmr_detected_rate:6.2f} "
          f"{rec.actual_rate:7.2f} {rec.agreement:6.2f}")

print(f"\npoint of first failure: {result.poff_estimate_mv:.0f} mV")
print(f"crash point:            {result.crash_estimate_mv:.0f} mV")
print(f"margin between them:    {result.poff_estimate_mv - result.crash_estimate_mv:.0f} mV")

nominal = vg.OperatingPoint(960, 1780)
at_poff = vg.OperatingPoint(result.poff_estimate_mv, 1780)
pm = cfg.calibration.power
print(f"\npower at nominal: {vg.power(pm, nominal):.0f} W; "
      f"at the PoFF: {vg.power(pm, at_poff):.0f} W "
      f"({100 * (1 - vg.power(pm, at_poff) / vg.power(pm, nominal)):.0f}% lower)")
