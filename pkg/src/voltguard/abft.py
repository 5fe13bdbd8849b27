"""Checksum precomputation, online evaluation, and verification for the
linear layers.

The invariants being checked:

  fc:    sum_m C[m]        ==  A . (sum_m B[:, m])  +  sum_m bias[m]
  conv:  sum_m O[m, :, :]  ==  conv(D, sum_m W[m])  +  sum_m bias[m]

Both sides are computed under the same fault-injection context, so a fault
in the check path also trips the comparison (a safe-side false positive).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .faultsim import ExecContext
from .layers import ConvSpec, FcSpec, LayerDesc, ModelGraph, conv2d, conv2d_core, fc
from .tensor import InvalidShapeError, channel_sum, max_abs_diff

#: default tolerances per element precision; tau is relative to the checksum
#: magnitude, the floor is absolute. These sit ~2 orders above the measured
#: fixed-order summation noise and ~5x below the smallest in-range bit flip.
DEFAULT_TAU = {"f64": 1e-13, "f32": 1e-4}
DEFAULT_FLOOR = {"f64": 1e-12, "f32": 1e-6}


@dataclass(frozen=True)
class AbftConfig:
    """Checksum comparison rule: pass iff discrepancy <= tau*scale + floor
    (relative mode) or discrepancy <= floor (absolute mode)."""

    tau: float = DEFAULT_TAU["f64"]
    floor: float = DEFAULT_FLOOR["f64"]
    mode: str = "relative"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.mode not in ("relative", "absolute"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def for_dtype(cls, dtype) -> "AbftConfig":
        key = "f32" if np.dtype(dtype) == np.float32 else "f64"
        return cls(tau=DEFAULT_TAU[key], floor=DEFAULT_FLOOR[key])

    def tolerance(self, scale: float) -> float:
        if self.mode == "absolute":
            return self.floor
        return self.tau * scale + self.floor


@dataclass(frozen=True)
class ChecksumVerdict:
    layer: int
    kind: str               # conv | fc | dmr
    passed: bool
    discrepancy: float
    scale: float


class WeightChecksums:
    """Precomputed per-layer weight/bias checksums, keyed by layer index.

    conv layers store (W_sigma = sum_m W[m], b_sigma = sum_m bias);
    fc layers store (b_check[k] = sum_m B[k, m], bias_sum = sum_m bias).
    """

    def __init__(self):
        self.conv: dict[int, tuple[np.ndarray, float]] = {}
        self.fc: dict[int, tuple[np.ndarray, float]] = {}


def precompute_weight_checksums(model: ModelGraph) -> WeightChecksums:
    """Offline step: fold each linear layer's weights over the output dim.

    Uses the engine's fixed ascending-order reduction, so W_sigma equals
    channel_sum(W, axis=0) bit-exactly and recomputation is idempotent.
    """
    cks = WeightChecksums()
    for idx, ld in enumerate(model.layers):
        if ld.kind == "conv":
            w_sigma = channel_sum(ld.weights, axis=0)
            b_sigma = channel_sum(ld.bias, axis=0)
            cks.conv[idx] = (w_sigma, float(b_sigma))
        elif ld.kind == "fc":
            b_check = channel_sum(ld.weights, axis=1)
            bias_sum = channel_sum(ld.bias, axis=0)
            cks.fc[idx] = (b_check, float(bias_sum))
    if not cks.conv and not cks.fc:
        raise ValueError("model has no linear layers to checksum")
    return cks


def verify(out_ck: np.ndarray, in_ck: np.ndarray, cfg: AbftConfig,
           layer: int = 0, kind: str = "conv") -> ChecksumVerdict:
    """Compare output-side and input-side checksums element-wise.

    discrepancy is the max absolute cell difference (max, not sum, so
    cancellation between cells cannot mask a fault); scale is
    max(|out_ck|, |in_ck|, 1.0).
    """
    out_ck = np.asarray(out_ck)
    in_ck = np.asarray(in_ck)
    if out_ck.shape != in_ck.shape:
        raise InvalidShapeError(f"checksum shapes differ: {out_ck.shape} vs {in_ck.shape}")
    disc = max_abs_diff(out_ck, in_ck)
    scale = max(float(np.abs(out_ck).max()), float(np.abs(in_ck).max()), 1.0)
    return ChecksumVerdict(
        layer=layer,
        kind=kind,
        passed=disc <= cfg.tolerance(scale),
        discrepancy=disc,
        scale=scale,
    )


def fc_checked(A: np.ndarray, desc: LayerDesc, cks: WeightChecksums, cfg: AbftConfig,
               ctx: ExecContext, layer: int = 0) -> tuple[np.ndarray, ChecksumVerdict]:
    """fc() plus the checksum test of its output.

    The check value A . b_check + bias_sum runs under the same context as
    the main path (op kind "fc_check"), so the check itself can be hit.
    """
    C = fc(A, desc, ctx, layer)
    b_check, bias_sum = cks.fc[layer] if layer in cks.fc else _fc_checksums(desc)
    flat = A.reshape(-1)
    # same accumulation shape as the main path: start from the bias term,
    # then fold the products in ascending k
    acc = np.array([bias_sum], dtype=C.dtype)
    prods = flat * b_check
    for k in range(prods.shape[0]):
        acc[0] = acc[0] + prods[k]
    c_check = ctx.inject(layer, "fc_check", 0, acc)
    out_sum = channel_sum(C, axis=0).reshape(1)
    verdict = verify(out_sum, c_check, cfg, layer=layer, kind="fc")
    return C, verdict


def conv_checked(D: np.ndarray, desc: LayerDesc, cks: WeightChecksums, cfg: AbftConfig,
                 ctx: ExecContext, layer: int = 0) -> tuple[np.ndarray, ChecksumVerdict]:
    """conv2d() plus the E x E checksum-matrix test of its output.

    input checksum  = conv(D, W_sigma) + b_sigma   (one summed kernel)
    output checksum = sum over output channels of O
    A fault at output position (m, x, y) perturbs only checksum cell (x, y).
    """
    O = conv2d(D, desc, ctx, layer)
    if layer in cks.conv:
        w_sigma, b_sigma = cks.conv[layer]
    else:
        w_sigma, b_sigma = _conv_checksums(desc)
    in_ck = conv2d_core(D, w_sigma[None], np.array([b_sigma], dtype=D.dtype), desc.spec.stride)
    in_ck = ctx.inject(layer, "conv_check", 0, in_ck)[0]
    out_ck = channel_sum(O, axis=0)
    verdict = verify(out_ck, in_ck, cfg, layer=layer, kind="conv")
    return O, verdict


def _conv_checksums(desc: LayerDesc):
    return channel_sum(desc.weights, axis=0), float(channel_sum(desc.bias, axis=0))


def _fc_checksums(desc: LayerDesc):
    return channel_sum(desc.weights, axis=1), float(channel_sum(desc.bias, axis=0))


# ---------------------------------------------------------------------------
# analytic checksum op counts (the 1/N overhead story)
# ---------------------------------------------------------------------------

def checksum_op_count(spec) -> int:
    """Arithmetic ops added per inference by the online checksum of one layer.

    Weight checksums are precomputed offline and excluded.  conv: one
    single-kernel convolution + the output-channel fold + the E^2 compare.
    fc: one dot product + the output fold + one compare.
    """
    if isinstance(spec, ConvSpec):
        e2 = spec.e_out ** 2
        check_conv = 2 * e2 * spec.ch_in * spec.kernel ** 2 + e2
        out_fold = (spec.m_out - 1) * e2
        return check_conv + out_fold + e2
    if isinstance(spec, FcSpec):
        return (2 * spec.k_in + 1) + (spec.m_out - 1) + 1
    raise TypeError(f"not a linear layer spec: {spec!r}")


def abft_overhead(plan: list) -> float:
    """Checksum ops / forward ops over a [(kind, spec), ...] layer plan."""
    from .layers import forward_op_count

    fwd = 0
    chk = 0
    for kind, spec in plan:
        if kind in ("conv", "fc"):
            fwd += forward_op_count(spec)
            chk += checksum_op_count(spec)
    return chk / fwd


# ---------------------------------------------------------------------------
# verdict CSV rows
# ---------------------------------------------------------------------------

VERDICT_CSV_HEADER = "layer_id,kind,pass,discrepancy,scale"


def verdict_csv(verdicts) -> str:
    """Render verdicts (checksum or DMR) as CSV text with a header row."""
    buf = io.StringIO()
    buf.write(VERDICT_CSV_HEADER + "\n")
    for v in verdicts:
        buf.write(f"{v.layer},{v.kind},{str(v.passed).lower()},{v.discrepancy!r},{v.scale!r}\n")
    return buf.getvalue()
