"""Checksum-guarded DNN inference with a simulated undervolting governor.

Linear layers are verified online through checksum identities, nonlinear
layers through dual-modular-redundant execution, and a closed-loop governor
drives the simulated accelerator's voltage down to just above its point of
first failure while rejecting and re-running any inference whose checks
fail.
"""

from .abft import (
    AbftConfig,
    ChecksumVerdict,
    WeightChecksums,
    abft_overhead,
    checksum_op_count,
    conv_checked,
    fc_checked,
    precompute_weight_checksums,
    verdict_csv,
    verify,
)
from .dmr import DEFAULT_TOL_ULPS, DmrVerdict, dmr_execute
from .faultsim import (
    Calibration,
    ExecContext,
    FaultModelParams,
    MissingCalibrationError,
    OperatingPoint,
    PowerModel,
    SimulatedCrash,
    default_calibration,
    energy_per_inference,
    fault_probability,
    fold_seed,
    load_calibration,
    maybe_inject,
    power,
    save_calibration,
)
from .governor import (
    DescentResult,
    GovernorConfig,
    GovernRun,
    InferenceReport,
    SweepRecord,
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
    ConvSpec,
    FcSpec,
    InvalidSpecError,
    LayerDesc,
    ModelGraph,
    PoolSpec,
    build_lenet,
    build_vgg16,
    conv2d,
    fc,
    forward,
    forward_op_count,
    golden_run,
    load_model,
    nonlinear,
    save_model,
)
from .tensor import (
    InvalidAxisError,
    InvalidShapeError,
    channel_sum,
    load_tensor,
    max_abs_diff,
    random_tensor,
    save_tensor,
)

__version__ = "0.1.0"
