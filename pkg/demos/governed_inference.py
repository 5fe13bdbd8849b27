"""The closed loop: run checked inferences, descend the voltage while the
checks stay clean, retract when anything trips.

Every inference is accepted only if all its checksum and DMR verdicts pass;
a failed pass is discarded and re-run one step higher.  The loop converges
to a small band just above the point of first failure and never hands back
a silently corrupted prediction.
"""

import voltguard as vg

model = vg.build_lenet(seed=1)
checksums = vg.precompute_weight_checksums(model)
cfg = vg.GovernorConfig(frequency_mhz=1780, parallel=True)

pool = [vg.random_tensor(model.input_shape, vg.fold_seed(3, i)) for i in range(100)]
stream = [pool[i % 100] for i in range(1800)]

print("governing 1800 inferences, starting at 960 mV...")
run = vg.govern(model, checksums, stream, cfg, seed=3)

# how the held voltage evolved
for step in range(0, len(run.log), 150):
    _, v, accepted, retries, _ = run.log[step]
    print(f"  step {step:4d}: {v:5.0f} mV  retries={retries}")

summary = vg.energy_summary(run, cfg)
print(f"\nsettled voltage: {summary['settled_voltage_mv']:.0f} mV "
      f"(PoFF for this calibration is 835 mV)")
print(f"mean energy per inference: {summary['mean_energy_j']:.2f} J")
print(f"nominal baselines: {summary['baseline_nominal_abft_j']:.2f} J checked, "
      f"{summary['baseline_nominal_noabft_j']:.2f} J unchecked")
print(f"savings vs nominal checked run:   {100 * summary['savings_vs_nominal_abft']:.1f}%")
print(f"savings vs nominal unchecked run: {100 * summary['savings_vs_nominal_noabft']:.1f}%")
print(f"detections handled by retries: {summary['retries']}")

# no accepted prediction may disagree with the fault-free reference
goldens = [vg.golden_run(model, x)[1] for x in pool]
wrong = sum(
    rep.accepted and rep.prediction != goldens[i % 100]
    for i, rep in enumerate(run.reports)
)
print(f"accepted-but-wrong predictions: {wrong}")
