"""Why checksum verification is nearly free on big models.

The online check for a layer with M output channels costs one extra
single-kernel convolution (or one dot product) against M for the layer
itself, so its share of the arithmetic shrinks like 1/M.  Tiny networks
pay a visible toll; VGG-16-sized ones pay well under one percent.
"""

import time

import voltguard as vg
from voltguard.abft import abft_overhead, checksum_op_count
from voltguard.layers import forward_op_count, lenet_plan, vgg16_plan

print("checksum share of a conv layer's arithmetic vs output channels")
print(f"{'M':>5} {'forward ops':>12} {'check ops':>10} {'share':>8}")
for m in (2, 4, 8, 16, 64, 256):
    spec = vg.ConvSpec(m_out=m, ch_in=16, kernel=3, stride=1, h_in=12)
    fwd, chk = forward_op_count(spec), checksum_op_count(spec)
    print(f"{m:5d} {fwd:12d} {chk:10d} {100 * chk / fwd:7.2f}%")

print("\nwhole-model analytic overhead")
for name, plan_fn in (("lenet", lenet_plan), ("vgg16", vgg16_plan)):
    print(f"  {name:6s}: {100 * abft_overhead(plan_fn()[1]):.2f}%")

# wall-clock on this machine (not comparable across machines, the op-count
# figures above are the portable claim)
model = vg.build_lenet(seed=1)
checksums = vg.precompute_weight_checksums(model)
cfg = vg.GovernorConfig(parallel=False)
x = vg.random_tensor(model.input_shape, 7)
nominal = cfg.operating_point(960)

runs = 20
t0 = time.perf_counter()
for _ in range(runs):
    vg.forward(model, x)
plain = (time.perf_counter() - t0) / runs

t0 = time.perf_counter()
for _ in range(runs):
    vg.checked_inference(model, checksums, x, nominal, cfg, seed=7)
checked = (time.perf_counter() - t0) / runs

print(f"\nlenet wall clock: {1000 * plain:.2f} ms plain, {1000 * checked:.2f} ms "
      f"checked (+{100 * (checked / plain - 1):.0f}% on this machine)")
print("note: the checked path also duplicates every nonlinear layer (DMR), so")
print("wall clock overstates the checksum cost relative to the op counts above")
