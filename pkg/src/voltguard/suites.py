"""Self-check suites: checksum soundness, fault-detection coverage,
convolution linearity, oracle equivalence, and DMR variant agreement.

The naive oracles here are deliberately independent scalar-loop
implementations; the engine is required to match them bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abft import AbftConfig, ChecksumVerdict, conv_checked, fc_checked, verify
from .dmr import DEFAULT_TOL_ULPS, dmr_execute
from .faultsim import ExecContext, fold_seed
from .layers import (
    ConvSpec,
    FcSpec,
    LayerDesc,
    conv2d,
    conv2d_core,
    fc,
    nonlinear,
)
from .tensor import channel_sum, max_abs_diff, random_tensor

#: elements whose magnitude sits below this fraction of the layer's RMS are
#: the documented detection blind spot (their in-range bit flips fall under
#: the comparison floor) and are excluded from coverage trials.
ELIGIBLE_RMS_FRACTION = 1.0 / 8.0
DMR_ELIGIBLE_SCALE_FRACTION = 1.0 / 1024.0


@dataclass
class SuiteResult:
    name: str
    trials: int
    failures: int
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def naive_conv2d(D: np.ndarray, W: np.ndarray, B: np.ndarray, stride: int) -> np.ndarray:
    """Scalar six-loop convolution, ascending (k, i, j) accumulation."""
    M, Ch, R, _ = W.shape
    U = stride
    E = (D.shape[1] - R) // U + 1
    out = np.empty((M, E, E), dtype=D.dtype)
    for m in range(M):
        for x in range(E):
            for y in range(E):
                s = B[m]
                for k in range(Ch):
                    for i in range(R):
                        for j in range(R):
                            s = s + D[k, U * x + i, U * y + j] * W[m, k, i, j]
                out[m, x, y] = s
    return out


def naive_fc(A: np.ndarray, W: np.ndarray, bias: np.ndarray) -> np.ndarray:
    K, M = W.shape
    out = np.empty(M, dtype=A.dtype)
    for m in range(M):
        s = bias[m]
        for k in range(K):
            s = s + A[k] * W[k, m]
        out[m] = s
    return out


# ---------------------------------------------------------------------------
# random layer construction
# ---------------------------------------------------------------------------

def random_conv_case(seed: int, lo: int = 4, hi: int = 128):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(lo, hi + 1))
    ch = int(rng.integers(lo, hi + 1))
    r = int(rng.choice([1, 3]))
    e = int(rng.integers(2, 7))
    u = int(rng.choice([1, 2]))
    h = (e - 1) * u + r
    spec = ConvSpec(m, ch, r, u, h)
    w = random_tensor((m, ch, r, r), fold_seed(seed, 1))
    b = random_tensor((m,), fold_seed(seed, 2))
    d = random_tensor((ch, h, h), fold_seed(seed, 3))
    return LayerDesc("conv", spec, w, b), d


def random_fc_case(seed: int, lo: int = 4, hi: int = 128):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(lo, hi + 1))
    m = int(rng.integers(lo, hi + 1))
    spec = FcSpec(k, m)
    w = random_tensor((k, m), fold_seed(seed, 1))
    b = random_tensor((m,), fold_seed(seed, 2))
    a = random_tensor((k,), fold_seed(seed, 3))
    return LayerDesc("fc", spec, w, b), a


class _AdHocChecksums:
    """WeightChecksums stand-in for a single unregistered layer."""

    def __init__(self, ld: LayerDesc):
        if ld.kind == "conv":
            self.conv = {0: (channel_sum(ld.weights, 0), float(channel_sum(ld.bias, 0)))}
            self.fc = {}
        else:
            self.fc = {0: (channel_sum(ld.weights, 1), float(channel_sum(ld.bias, 0)))}
            self.conv = {}


def checked_layer(ld: LayerDesc, x: np.ndarray, cfg: AbftConfig,
                  ctx: ExecContext) -> tuple[np.ndarray, ChecksumVerdict]:
    cks = _AdHocChecksums(ld)
    if ld.kind == "conv":
        return conv_checked(x, ld, cks, cfg, ctx, 0)
    return fc_checked(x, ld, cks, cfg, ctx, 0)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def soundness_suite(trials: int, cfg: AbftConfig, seed: int = 0) -> SuiteResult:
    """Fault-free random linear layers must never fail their verdict."""
    failures = 0
    worst = 0.0
    ctx = ExecContext.nofault()
    for t in range(trials):
        sub = fold_seed(seed, 101, t)
        ld, x = random_conv_case(sub) if t % 2 == 0 else random_fc_case(sub)
        _, verdict = checked_layer(ld, x, cfg, ctx)
        if not verdict.passed:
            failures += 1
        worst = max(worst, verdict.discrepancy / cfg.tolerance(verdict.scale))
    return SuiteResult("checksum-soundness", trials, failures,
                       f"worst discrepancy/tolerance = {worst:.3e}")


def _flip_site(out: np.ndarray, rng: np.random.Generator,
               eligible_fraction: float, bit_lo: int, bit_hi: int):
    """Pick a representative-magnitude element and a mantissa bit to flip."""
    flat = np.abs(out.reshape(-1))
    rms = float(np.sqrt(np.mean(flat ** 2)))
    eligible = np.flatnonzero(flat >= eligible_fraction * rms)
    if eligible.size == 0:
        eligible = np.array([int(np.argmax(flat))])
    elem = int(eligible[rng.integers(eligible.size)])
    bit = int(rng.integers(bit_lo, bit_hi + 1))
    return elem, bit


def detection_suite(trials: int, cfg: AbftConfig, seed: int = 0,
                    bit_lo: int = 20, bit_hi: int = 51) -> SuiteResult:
    """Single bit flips in linear-layer outputs must always fail the verdict.

    Flips land on representative-magnitude elements (>= RMS/8); smaller
    elements are the documented blind spot below the comparison floor.
    """
    failures = 0
    worst = np.inf
    for t in range(trials):
        sub = fold_seed(seed, 202, t)
        rng = np.random.default_rng(fold_seed(sub, 4))
        is_conv = t % 2 == 0
        ld, x = random_conv_case(sub) if is_conv else random_fc_case(sub)
        clean = (conv2d if is_conv else fc)(x, ld, ExecContext.nofault(), 0)
        elem, bit = _flip_site(clean, rng, ELIGIBLE_RMS_FRACTION, bit_lo, bit_hi)
        opname = "conv" if is_conv else "fc"
        ctx = ExecContext(forced={(0, opname, 0): [(elem, bit)]})
        _, verdict = checked_layer(ld, x, cfg, ctx)
        if verdict.passed:
            failures += 1
        else:
            worst = min(worst, verdict.discrepancy / cfg.tolerance(verdict.scale))
    return SuiteResult("fault-detection", trials, failures,
                       f"smallest discrepancy/tolerance = {worst:.3e}")


def linearity_suite(trials: int, cfg: AbftConfig, seed: int = 0) -> SuiteResult:
    """conv(D, W1) + conv(D, W2) must equal conv(D, W1 + W2) within tolerance."""
    failures = 0
    worst = 0.0
    for t in range(trials):
        sub = fold_seed(seed, 303, t)
        ld, d = random_conv_case(sub)
        w2 = random_tensor(ld.weights.shape, fold_seed(sub, 7))
        zero_b = np.zeros_like(ld.bias)
        lhs = (conv2d_core(d, ld.weights, zero_b, ld.spec.stride)
               + conv2d_core(d, w2, zero_b, ld.spec.stride))
        rhs = conv2d_core(d, ld.weights + w2, zero_b, ld.spec.stride)
        disc = max_abs_diff(lhs, rhs)
        scale = max(float(np.abs(lhs).max()), float(np.abs(rhs).max()), 1.0)
        ratio = disc / cfg.tolerance(scale)
        worst = max(worst, ratio)
        if ratio > 1.0:
            failures += 1
    return SuiteResult("conv-linearity", trials, failures,
                       f"worst discrepancy/tolerance = {worst:.3e}")


def oracle_suite(trials: int, seed: int = 0) -> SuiteResult:
    """Engine conv2d/fc must match the scalar-loop oracles bit-exactly."""
    failures = 0
    ctx = ExecContext.nofault()
    for t in range(trials):
        sub = fold_seed(seed, 404, t)
        if t % 2 == 0:
            ld, d = random_conv_case(sub, hi=24)
            got = conv2d(d, ld, ctx, 0)
            ref = naive_conv2d(d, ld.weights, ld.bias, ld.spec.stride)
        else:
            ld, a = random_fc_case(sub, hi=64)
            got = fc(a, ld, ctx, 0)
            ref = naive_fc(a, ld.weights, ld.bias)
        if not np.array_equal(got, ref):
            failures += 1
    return SuiteResult("oracle-equivalence", trials, failures)


def variant_agreement_suite(trials: int, seed: int = 0,
                            tol_ulps: float = DEFAULT_TOL_ULPS) -> SuiteResult:
    """Variant A vs B: bit-exact for relu/maxpool, a few ulp for softmax."""
    failures = 0
    worst = 0.0
    ctx = ExecContext.nofault()
    kinds = ("relu", "maxpool", "softmax")
    for t in range(trials):
        sub = fold_seed(seed, 505, t)
        rng = np.random.default_rng(sub)
        kind = kinds[t % 3]
        if kind == "maxpool":
            c = int(rng.integers(1, 9))
            h = 2 * int(rng.integers(1, 9))
            x = random_tensor((c, h, h), fold_seed(sub, 1), "normal")
        elif kind == "relu":
            x = random_tensor((int(rng.integers(2, 257)),), fold_seed(sub, 1), "normal")
        else:
            x = random_tensor((int(rng.integers(2, 129)),), fold_seed(sub, 1), "normal")
        a = nonlinear(x, kind, "A", ctx)
        b = nonlinear(x, kind, "B", ctx)
        if kind in ("relu", "maxpool"):
            if not np.array_equal(a, b):
                failures += 1
            continue
        disc = max_abs_diff(a, b)
        scale = max(float(np.abs(a).max()), float(np.abs(b).max()))
        ulps = disc / float(np.spacing(scale))
        worst = max(worst, ulps)
        if ulps > tol_ulps:
            failures += 1
    return SuiteResult("variant-agreement", trials, failures,
                       f"worst softmax disagreement = {worst:.1f} ulp")


def dmr_suite(trials: int, seed: int = 0,
              tol_ulps: float = DEFAULT_TOL_ULPS,
              bit_lo: int = 20, bit_hi: int = 51) -> SuiteResult:
    """Fault-free DMR must pass; any single-variant flip must be caught.

    Trials alternate: even = fault-free (false-positive check), odd =
    forced flip into variant A's output on a representative-magnitude
    element (detection check).
    """
    failures = 0
    kinds = ("relu", "maxpool", "softmax")
    for t in range(trials):
        sub = fold_seed(seed, 606, t)
        rng = np.random.default_rng(sub)
        kind = kinds[t % 3]
        if kind == "maxpool":
            x = random_tensor((int(rng.integers(1, 7)), 8, 8), fold_seed(sub, 1), "normal")
        else:
            x = random_tensor((int(rng.integers(4, 129)),), fold_seed(sub, 1), "normal")
        if t % 2 == 0:
            _, verdict = dmr_execute(x, kind, ExecContext.nofault(), 0, tol_ulps=tol_ulps)
            if not verdict.passed:
                failures += 1
        else:
            clean = nonlinear(x, kind, "A", ExecContext.nofault(), 0)
            flat = np.abs(clean.reshape(-1))
            scale = float(flat.max())
            eligible = np.flatnonzero(flat >= DMR_ELIGIBLE_SCALE_FRACTION * scale)
            elem = int(eligible[rng.integers(eligible.size)])
            bit = int(rng.integers(bit_lo, bit_hi + 1))
            ctx = ExecContext(forced={(0, kind, 0): [(elem, bit)]})
            _, verdict = dmr_execute(x, kind, ctx, 0, tol_ulps=tol_ulps)
            if verdict.passed:
                failures += 1
    return SuiteResult("dmr-execution", trials, failures)


def run_all(trials: int, cfg: AbftConfig, seed: int = 0) -> list[SuiteResult]:
    oracle_trials = max(10, min(trials, 200))
    return [
        soundness_suite(trials, cfg, seed),
        detection_suite(trials, cfg, seed),
        linearity_suite(max(10, trials // 10), cfg, seed),
        oracle_suite(oracle_trials, seed),
        variant_agreement_suite(trials, seed),
        dmr_suite(trials, seed),
    ]
