"""Simulated accelerator: voltage-dependent bit-flip faults, crash behavior,
and calibrated power/latency/energy models.

Fault decisions are a pure function of
(seed, layer id, op kind, variant id, element index, retry number), realized
with a splitmix64-style counter hash, so results never depend on execution
order or thread count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

_GOLD = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_BIT_SALT = 0x5851F42D4C957F2D

#: op kinds routed through the linear-path fault curve
LINEAR_OPS = ("conv", "conv_check", "fc", "fc_check")
NONLINEAR_OPS = ("relu", "maxpool", "softmax")

_OPCODES = {name: i + 1 for i, name in enumerate(LINEAR_OPS + NONLINEAR_OPS)}


class SimulatedCrash(RuntimeError):
    """Voltage at or below the crash point: the whole inference aborts."""


class MissingCalibrationError(LookupError):
    """No latency/fault calibration for the requested frequency."""


# ---------------------------------------------------------------------------
# deterministic hashing
# ---------------------------------------------------------------------------

def _mix64(z: int) -> int:
    z = (z + _GOLD) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def fold_seed(*parts: int) -> int:
    """Fold integers into one 64-bit key (order-sensitive)."""
    h = 0
    for p in parts:
        h = _mix64(h ^ (int(p) & _MASK))
    return h


def _mix_indices(key: int, idx: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2**64 on arrays; same recurrence as _mix64
    z = idx * np.uint64(_GOLD) + np.uint64(key & _MASK)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


# ---------------------------------------------------------------------------
# model types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatingPoint:
    """(voltage mV, frequency MHz) pair, the governor's control variable."""

    voltage_mv: float
    frequency_mhz: float

    def __post_init__(self):
        if not 600.0 <= self.voltage_mv <= 1200.0:
            raise ValueError(f"voltage {self.voltage_mv} mV outside [600, 1200]")
        if self.frequency_mhz <= 0:
            raise ValueError("frequency must be positive")


@dataclass(frozen=True)
class FaultModelParams:
    """Per-frequency fault curve: PoFF/crash voltages and flip distribution.

    Linear ops start failing at v_poff_linear_mv; nonlinear ops at the lower
    v_poff_nonlinear_mv (linear layers fail first).  Below v_crash_mv the
    simulated device crashes outright.
    """

    frequency_mhz: float
    v_poff_linear_mv: float
    v_poff_nonlinear_mv: float
    v_crash_mv: float
    p_max: float = 1e-3
    gamma: float = 2.0
    bit_lo: int = 20          # default f64 range: mantissa bits only; an
    bit_hi: int = 51          # aggressive mode may raise bit_hi to 62 to
    bit_lo_f32: int = 9       # include exponent bits (sign stays excluded)
    bit_hi_f32: int = 22
    seed: int = 0

    def __post_init__(self):
        if not self.v_crash_mv < self.v_poff_nonlinear_mv < self.v_poff_linear_mv:
            raise ValueError("require v_crash < v_poff_nonlinear < v_poff_linear")
        if not 0.0 <= self.p_max <= 1.0:
            raise ValueError("p_max must be in [0, 1] (0 disables faults)")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not (0 <= self.bit_lo <= self.bit_hi <= 62):
            raise ValueError("f64 bit range must satisfy 0 <= lo <= hi <= 62")
        if not (0 <= self.bit_lo_f32 <= self.bit_hi_f32 <= 30):
            raise ValueError("f32 bit range must satisfy 0 <= lo <= hi <= 30")


@dataclass(frozen=True)
class PowerModel:
    """Two-parameter quadratic power model plus a measured latency table."""

    p_static_w: float
    p_dyn_ref_w: float
    v_ref_mv: float
    f_ref_mhz: float
    abft_power_factor: float = 0.99   # ABFT-on draws ~1% less power
    #: frequency MHz -> (ms per inference ABFT off, ms ABFT on)
    latency_ms: dict = field(default_factory=dict)


def fault_probability(params: FaultModelParams, op: OperatingPoint, path: str) -> float:
    """Per-op-site fault probability at an operating point.

    Zero at or above the path's PoFF; rises as p_max * ((poff - V) /
    (poff - crash))^gamma below it; raises SimulatedCrash at or below the
    crash voltage.
    """
    v = op.voltage_mv
    if v <= params.v_crash_mv:
        raise SimulatedCrash(f"{v} mV <= crash point {params.v_crash_mv} mV")
    if path == "linear":
        poff = params.v_poff_linear_mv
    elif path == "nonlinear":
        poff = params.v_poff_nonlinear_mv
    else:
        raise ValueError(f"unknown path {path!r}")
    if v >= poff:
        return 0.0
    frac = (poff - v) / (poff - params.v_crash_mv)
    return params.p_max * frac ** params.gamma


def power(model: PowerModel, op) -> float:
    """Device power in watts: p_static + p_dyn_ref * (V/v_ref)^2 * (f/f_ref).

    `op` is an OperatingPoint or a plain (voltage_mv, frequency_mhz) pair
    (the latter admits hypothetical points outside the valid voltage range).
    """
    if isinstance(op, OperatingPoint):
        v, f = op.voltage_mv, op.frequency_mhz
    else:
        v, f = op
    return model.p_static_w + model.p_dyn_ref_w * (v / model.v_ref_mv) ** 2 * (f / model.f_ref_mhz)


def latency_ms(model: PowerModel, frequency_mhz: float, abft: bool) -> float:
    try:
        off_ms, on_ms = model.latency_ms[int(frequency_mhz)]
    except KeyError:
        raise MissingCalibrationError(
            f"no latency calibration for {frequency_mhz} MHz"
        ) from None
    return on_ms if abft else off_ms


def energy_per_inference(model: PowerModel, op, abft: bool) -> float:
    """Joules per inference: power(op) x latency(frequency, abft) / 1000."""
    f = op.frequency_mhz if isinstance(op, OperatingPoint) else op[1]
    return power(model, op) * latency_ms(model, f, abft) / 1000.0


# ---------------------------------------------------------------------------
# execution context (fault-injection hooks)
# ---------------------------------------------------------------------------

@dataclass
class ExecContext:
    """Immutable per-pass context every layer op consults for fault decisions.

    `forced` maps (layer, op, variant) -> list of (flat element index,
    bit index) flips applied unconditionally; it exists for tests and
    characterization, not for the simulated physics.
    """

    op: OperatingPoint | None = None
    params: FaultModelParams | None = None
    seed: int = 0
    retry: int = 0
    parallel: bool = False
    forced: dict | None = None

    def __post_init__(self):
        if self.params is not None and self.op is not None:
            # raises SimulatedCrash below the crash point
            self._p_linear = fault_probability(self.params, self.op, "linear")
            self._p_nonlinear = fault_probability(self.params, self.op, "nonlinear")
        else:
            self._p_linear = 0.0
            self._p_nonlinear = 0.0

    @classmethod
    def nofault(cls, parallel: bool = False) -> "ExecContext":
        return cls(parallel=parallel)

    def probability(self, opname: str) -> float:
        return self._p_linear if opname in LINEAR_OPS else self._p_nonlinear

    def _site_key(self, layer: int, opname: str, variant: int) -> int:
        return fold_seed(self.seed, layer, _OPCODES[opname], variant, self.retry)

    def _bit_range(self, dtype) -> tuple[int, int]:
        if self.params is None:
            return (20, 51)
        if dtype == np.float32:
            return (self.params.bit_lo_f32, self.params.bit_hi_f32)
        return (self.params.bit_lo, self.params.bit_hi)

    def inject(self, layer: int, opname: str, variant: int, values: np.ndarray) -> np.ndarray:
        """Apply the context's fault decisions to a freshly computed array.

        Mutates `values` in place (callers own the array) and returns it.
        """
        p = self.probability(opname)
        forced = None if self.forced is None else self.forced.get((layer, opname, variant))
        if p <= 0.0 and not forced:
            return values
        flat = values.reshape(-1)
        uview = flat.view(np.uint32 if values.dtype == np.float32 else np.uint64)
        if p > 0.0:
            key = self._site_key(layer, opname, variant)
            idx = np.arange(flat.size, dtype=np.uint64)
            draws = _mix_indices(key, idx)
            thresh = int(p * 2.0 ** 64)
            mask = np.ones(flat.size, bool) if thresh > _MASK else draws < np.uint64(thresh)
            if mask.any():
                lo, hi = self._bit_range(values.dtype)
                nbits = hi - lo + 1
                sel = idx[mask]
                bits = np.uint64(lo) + _mix_indices(key ^ _BIT_SALT, sel) % np.uint64(nbits)
                uview[mask] ^= (np.uint64(1) << bits).astype(uview.dtype)
        if forced:
            for elem, bit in forced:
                uview[elem] ^= uview.dtype.type(1 << bit)
        return values


def maybe_inject(ctx: ExecContext, site, value: float) -> float:
    """Scalar form of the injection rule for a single op site.

    site is (layer, opname, variant, element index).  Computes exactly the
    same deterministic decision the array path makes for that element.
    """
    layer, opname, variant, elem = site
    arr = np.full(int(elem) + 1, value, dtype=np.float64)
    out = ctx.inject(layer, opname, variant, arr)
    return float(out[int(elem)])


# ---------------------------------------------------------------------------
# calibration bundle and JSON round-trip
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    power: PowerModel
    faults: dict            # frequency MHz -> FaultModelParams
    nominal_mv: float = 960.0

    def fault_params(self, frequency_mhz: float) -> FaultModelParams:
        try:
            return self.faults[int(frequency_mhz)]
        except KeyError:
            raise MissingCalibrationError(
                f"no fault calibration for {frequency_mhz} MHz"
            ) from None


def default_calibration() -> Calibration:
    """Default calibration anchored to the three measured frequencies.

    Power fit: p_static=20 W, p_dyn_ref=122 W referenced at (960 mV,
    1780 MHz).  Linear-PoFF voltages are the measured minima; the
    nonlinear-PoFF and crash voltages are free simulator parameters set
    25 / 55 mV below them.
    """
    pm = PowerModel(
        p_static_w=20.0,
        p_dyn_ref_w=122.0,
        v_ref_mv=960.0,
        f_ref_mhz=1780.0,
        latency_ms={
            1820: (171.90, 178.08),
            1780: (175.19, 181.36),
            1680: (183.42, 189.86),
        },
    )
    faults = {}
    for f, v_min in ((1820, 850.0), (1780, 835.0), (1680, 800.0)):
        faults[f] = FaultModelParams(
            frequency_mhz=float(f),
            v_poff_linear_mv=v_min,
            v_poff_nonlinear_mv=v_min - 25.0,
            v_crash_mv=v_min - 55.0,
        )
    return Calibration(power=pm, faults=faults)


def calibration_to_dict(cal: Calibration) -> dict:
    return {
        "nominal_mv": cal.nominal_mv,
        "power": {
            "p_static_w": cal.power.p_static_w,
            "p_dyn_ref_w": cal.power.p_dyn_ref_w,
            "v_ref_mv": cal.power.v_ref_mv,
            "f_ref_mhz": cal.power.f_ref_mhz,
            "abft_power_factor": cal.power.abft_power_factor,
            "latency_ms": {
                str(f): {"abft_off": off, "abft_on": on}
                for f, (off, on) in sorted(cal.power.latency_ms.items())
            },
        },
        "faults": {
            str(int(p.frequency_mhz)): {
                "v_poff_linear_mv": p.v_poff_linear_mv,
                "v_poff_nonlinear_mv": p.v_poff_nonlinear_mv,
                "v_crash_mv": p.v_crash_mv,
                "p_max": p.p_max,
                "gamma": p.gamma,
                "bit_lo": p.bit_lo,
                "bit_hi": p.bit_hi,
                "bit_lo_f32": p.bit_lo_f32,
                "bit_hi_f32": p.bit_hi_f32,
            }
            for p in cal.faults.values()
        },
    }


def calibration_from_dict(d: dict) -> Calibration:
    pw = d["power"]
    pm = PowerModel(
        p_static_w=float(pw["p_static_w"]),
        p_dyn_ref_w=float(pw["p_dyn_ref_w"]),
        v_ref_mv=float(pw["v_ref_mv"]),
        f_ref_mhz=float(pw["f_ref_mhz"]),
        abft_power_factor=float(pw.get("abft_power_factor", 0.99)),
        latency_ms={
            int(f): (float(v["abft_off"]), float(v["abft_on"]))
            for f, v in pw["latency_ms"].items()
        },
    )
    faults = {}
    for f, v in d["faults"].items():
        faults[int(f)] = FaultModelParams(
            frequency_mhz=float(f),
            v_poff_linear_mv=float(v["v_poff_linear_mv"]),
            v_poff_nonlinear_mv=float(v["v_poff_nonlinear_mv"]),
            v_crash_mv=float(v["v_crash_mv"]),
            p_max=float(v.get("p_max", 1e-3)),
            gamma=float(v.get("gamma", 2.0)),
            bit_lo=int(v.get("bit_lo", 20)),
            bit_hi=int(v.get("bit_hi", 51)),
            bit_lo_f32=int(v.get("bit_lo_f32", 9)),
            bit_hi_f32=int(v.get("bit_hi_f32", 22)),
        )
    return Calibration(power=pm, faults=faults, nominal_mv=float(d.get("nominal_mv", 960.0)))


def save_calibration(path, cal: Calibration) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(calibration_to_dict(cal), f, indent=2, sort_keys=True)
        f.write("\n")


def load_calibration(path) -> Calibration:
    with open(path, encoding="utf-8") as f:
        return calibration_from_dict(json.load(f))


def scaled_params(params: FaultModelParams, p_max: float) -> FaultModelParams:
    """Copy of params with a different p_max (0 disables faults but keeps
    the crash point)."""
    return replace(params, p_max=p_max)
