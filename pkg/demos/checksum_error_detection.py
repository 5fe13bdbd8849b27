"""Checksum identities on linear layers, and what a bit flip does to them.

A convolution's output, summed over its output channels, must equal a
single convolution of the same input with the channel-summed kernel.  That
identity costs one extra (single-kernel) convolution per layer and exposes
any corrupted output element.  Nonlinear layers get the same protection
from running two independent implementations and comparing.
"""

import numpy as np

import voltguard as vg

# --- a small convolution layer with random weights --------------------------

spec = vg.ConvSpec(m_out=8, ch_in=3, kernel=3, stride=1, h_in=10)
weights = vg.random_tensor((8, 3, 3, 3), seed=1)
bias = vg.random_tensor((8,), seed=2)
layer = vg.LayerDesc("conv", spec, weights, bias)
image = vg.random_tensor((3, 10, 10), seed=3)

model = vg.ModelGraph("demo", (3, 10, 10), [layer])
cks = vg.precompute_weight_checksums(model)
cfg = vg.AbftConfig()

print("== fault-free convolution ==")
out, verdict = vg.conv_checked(image, layer, cks, cfg, vg.ExecContext.nofault())
print(f"output shape {out.shape}; checksum discrepancy {verdict.discrepancy:.3e} "
      f"(tolerance {cfg.tolerance(verdict.scale):.3e}) -> pass={verdict.passed}")

# --- flip one mantissa bit of one output element ----------------------------

# element (channel 5, x=2, y=7), mantissa bit 35
e = spec.e_out
flat_index = (5 * e + 2) * e + 7
flipping = vg.ExecContext(forced={(0, "conv", 0): [(flat_index, 35)]})

out_bad, verdict_bad = vg.conv_checked(image, layer, cks, cfg, flipping)
delta = np.abs(out_bad - out)
print("\n== after a single bit flip in the output ==")
print(f"corrupted elements: {(delta > 0).sum()} (magnitude {delta.max():.3e})")
print(f"checksum discrepancy {verdict_bad.discrepancy:.3e} -> pass={verdict_bad.passed}")

# the checksum is spatially local: only the flipped element's (x, y) cell moves
cell_moved = np.abs(vg.channel_sum(out_bad, 0) - vg.channel_sum(out, 0)) > 0
x_hit, y_hit = (int(v) for v in np.argwhere(cell_moved)[0])
print(f"perturbed checksum cells: {cell_moved.sum()} at ({x_hit}, {y_hit})")

# --- the same story for a nonlinear layer via dual execution ----------------

print("\n== dual-modular redundancy on softmax ==")
logits = vg.random_tensor((10,), seed=4, dist="normal")
_, clean = vg.dmr_execute(logits, "softmax", vg.ExecContext.nofault())
print(f"fault-free: discrepancy {clean.discrepancy:.3e} -> pass={clean.passed}")

flip_one_variant = vg.ExecContext(forced={(0, "softmax", 0): [(3, 40)]})
_, caught = vg.dmr_execute(logits, "softmax", flip_one_variant)
print(f"flip in one variant: discrepancy {caught.discrepancy:.3e} -> pass={caught.passed}")

# two-way redundancy is blind to identical faults in both copies, which is
# why the two variants are implemented (and fault-keyed) independently
flip_both = vg.ExecContext(forced={
    (0, "softmax", 0): [(3, 40)],
    (0, "softmax", 1): [(3, 40)],
})
_, blind = vg.dmr_execute(logits, "softmax", flip_both)
print(f"same flip in both variants: pass={blind.passed}  (the documented blind spot)")
