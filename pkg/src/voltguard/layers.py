"""Reference DNN layers (conv / fc / relu / maxpool / softmax) and the
LeNet / VGG-16 graph builders used in the experiments.

Linear layers accumulate in a fixed ascending-index order so they match a
naive scalar-loop oracle bit for bit.  Nonlinear layers exist in two
mathematically equivalent but computationally distinct variants (A and B)
for dual-modular-redundant execution.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .faultsim import ExecContext, fold_seed
from .tensor import (
    F64,
    InvalidShapeError,
    channel_sum,
    load_tensor,
    random_tensor,
    save_tensor,
)

LINEAR_KINDS = ("conv", "fc")
NONLINEAR_KINDS = ("relu", "maxpool", "softmax")


class InvalidSpecError(ValueError):
    """Layer geometry violates its spec (e.g. inexact output-size division)."""


@dataclass(frozen=True)
class ConvSpec:
    """No-padding square convolution: M out channels, Ch in channels,
    R x R kernel, stride U, H x H input, E x E output with E = (H-R+U)/U."""

    m_out: int
    ch_in: int
    kernel: int
    stride: int
    h_in: int

    def __post_init__(self):
        if min(self.m_out, self.ch_in, self.kernel, self.stride, self.h_in) < 1:
            raise InvalidSpecError("all conv dims must be >= 1")
        if self.kernel > self.h_in:
            raise InvalidSpecError(f"kernel {self.kernel} exceeds input {self.h_in}")
        if (self.h_in - self.kernel) % self.stride != 0:
            raise InvalidSpecError(
                f"(H-R+U)/U not exact for H={self.h_in} R={self.kernel} U={self.stride}"
            )

    @property
    def e_out(self) -> int:
        return (self.h_in - self.kernel) // self.stride + 1


@dataclass(frozen=True)
class FcSpec:
    k_in: int
    m_out: int

    def __post_init__(self):
        if self.k_in < 1 or self.m_out < 1:
            raise InvalidSpecError("fc dims must be >= 1")


@dataclass(frozen=True)
class PoolSpec:
    window: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise InvalidSpecError("pool window/stride must be >= 1")


@dataclass
class LayerDesc:
    """One layer: kind plus its spec and (for linear kinds) weights/bias.

    conv weights are (M, Ch, R, R); fc weights are (K, M); bias has length M.
    """

    kind: str
    spec: object = None
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LINEAR_KINDS + NONLINEAR_KINDS:
            raise InvalidSpecError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            s = self.spec
            if self.weights.shape != (s.m_out, s.ch_in, s.kernel, s.kernel):
                raise InvalidShapeError(
                    f"conv weights {self.weights.shape} do not match spec"
                )
            if self.bias.shape != (s.m_out,):
                raise InvalidShapeError(f"conv bias {self.bias.shape} != ({s.m_out},)")
        elif self.kind == "fc":
            s = self.spec
            if self.weights.shape != (s.k_in, s.m_out):
                raise InvalidShapeError(
                    f"fc weights {self.weights.shape} != ({s.k_in}, {s.m_out})"
                )
            if self.bias.shape != (s.m_out,):
                raise InvalidShapeError(f"fc bias {self.bias.shape} != ({s.m_out},)")


@dataclass
class ModelGraph:
    name: str
    input_shape: tuple
    layers: list = field(default_factory=list)

    @property
    def dtype(self):
        for ld in self.layers:
            if ld.weights is not None:
                return ld.weights.dtype
        return np.dtype(F64)

    def parameter_count(self) -> int:
        n = 0
        for ld in self.layers:
            if ld.weights is not None:
                n += ld.weights.size + ld.bias.size
        return n


# ---------------------------------------------------------------------------
# linear layers
# ---------------------------------------------------------------------------

def conv2d_core(D: np.ndarray, W: np.ndarray, B: np.ndarray, stride: int) -> np.ndarray:
    """Fixed-order convolution: out[m,x,y] starts at B[m] and accumulates
    D[k, Ux+i, Uy+j] * W[m,k,i,j] one term at a time in ascending (k, i, j).

    Vectorized over (m, x, y); bit-identical to the scalar six-loop form.
    """
    M, Ch, R, _ = W.shape
    U = stride
    E = (D.shape[1] - R) // U + 1
    acc = np.ascontiguousarray(np.broadcast_to(B[:, None, None], (M, E, E)))
    tmp = np.empty((M, E, E), dtype=acc.dtype)
    for k in range(Ch):
        for i in range(R):
            for j in range(R):
                patch = D[k, i : i + U * E : U, j : j + U * E : U]
                np.multiply(W[:, k, i, j, None, None], patch[None, :, :], out=tmp)
                np.add(acc, tmp, out=acc)
    return acc


def conv2d(D: np.ndarray, desc: LayerDesc, ctx: ExecContext, layer: int = 0) -> np.ndarray:
    """Checked-shape convolution of one Ch x H x H input under a fault context."""
    s: ConvSpec = desc.spec
    if D.shape != (s.ch_in, s.h_in, s.h_in):
        raise InvalidShapeError(f"conv input {D.shape} != ({s.ch_in}, {s.h_in}, {s.h_in})")
    out = conv2d_core(D, desc.weights, desc.bias, s.stride)
    return ctx.inject(layer, "conv", 0, out)


def fc_core(A: np.ndarray, W: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Fixed-order fully connected: C[m] = bias[m] + sum_k A[k] * W[k, m],
    accumulated in ascending k."""
    acc = bias.copy()
    for k in range(A.shape[0]):
        acc += A[k] * W[k]
    return acc


def fc(A: np.ndarray, desc: LayerDesc, ctx: ExecContext, layer: int = 0) -> np.ndarray:
    """Fully connected layer; rank-3 inputs are flattened row-major."""
    s: FcSpec = desc.spec
    flat = A.reshape(-1)
    if flat.shape[0] != s.k_in:
        raise InvalidShapeError(f"fc input has {flat.shape[0]} features, expected {s.k_in}")
    out = fc_core(flat, desc.weights, desc.bias)
    return ctx.inject(layer, "fc", 0, out)


# ---------------------------------------------------------------------------
# nonlinear layers, variants A and B
# ---------------------------------------------------------------------------

def _pool_windows(x: np.ndarray, spec: PoolSpec) -> np.ndarray:
    """(w*w, C, Ho, Ho) view of all pooling windows, ascending window order."""
    C, H, _ = x.shape
    w, s = spec.window, spec.stride
    if (H - w) % s != 0:
        raise InvalidSpecError(f"pool {w}/{s} does not divide spatial size {H}")
    Ho = (H - w) // s + 1
    views = []
    for i in range(w):
        for j in range(w):
            views.append(x[:, i : i + s * Ho : s, j : j + s * Ho : s])
    return np.stack(views, axis=0)


def _relu_a(x):
    # branch-based select
    return np.where(x > 0.0, x, x.dtype.type(0.0))


def _relu_b(x):
    # branchless arithmetic identity (x + |x|) / 2, exact in IEEE arithmetic
    return (x + np.abs(x)) * x.dtype.type(0.5)


def _maxpool_a(x, spec):
    win = _pool_windows(x, spec)
    acc = win[0].copy()
    for i in range(1, win.shape[0]):
        np.maximum(acc, win[i], out=acc)
    return acc


def _maxpool_b(x, spec):
    win = _pool_windows(x, spec)
    acc = win[-1].copy()
    for i in range(win.shape[0] - 2, -1, -1):
        acc = np.where(acc >= win[i], acc, win[i])
    return acc


def _softmax_a(x):
    # direct exp-normalize, forward fixed-order sum
    e = np.exp(x)
    s = e[0]
    for i in range(1, e.shape[0]):
        s = s + e[i]
    return e / s


def _softmax_b(x):
    # max-subtraction-first, arithmetic-select max and reverse-order sum
    m = x[-1]
    for i in range(x.shape[0] - 2, -1, -1):
        m = np.where(x[i] > m, x[i], m)
    e = np.exp(x - m)
    s = e[-1]
    for i in range(e.shape[0] - 2, -1, -1):
        s = s + e[i]
    return e / s


def nonlinear(x: np.ndarray, kind: str, variant: str, ctx: ExecContext,
              layer: int = 0, spec: PoolSpec | None = None) -> np.ndarray:
    """Run one nonlinear layer in variant "A" or "B".

    A: forward traversal, branch-based max, direct exp-normalize softmax.
    B: reverse traversal, branchless/arithmetic-select max, softmax with
    max subtraction first.  Fault-free, the variants agree to a few ulp
    (bit-exactly for relu/maxpool).
    """
    if variant not in ("A", "B"):
        raise ValueError(f"variant must be 'A' or 'B', got {variant!r}")
    vid = 0 if variant == "A" else 1
    if kind == "relu":
        out = _relu_a(x) if vid == 0 else _relu_b(x)
    elif kind == "maxpool":
        spec = spec or PoolSpec()
        out = _maxpool_a(x, spec) if vid == 0 else _maxpool_b(x, spec)
    elif kind == "softmax":
        flat = x.reshape(-1)
        out = _softmax_a(flat) if vid == 0 else _softmax_b(flat)
    else:
        raise InvalidSpecError(f"unknown nonlinear kind {kind!r}")
    return ctx.inject(layer, kind, vid, np.ascontiguousarray(out))


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def forward(model: ModelGraph, x: np.ndarray, ctx: ExecContext | None = None) -> np.ndarray:
    """Plain (unchecked) forward pass; nonlinear layers use variant A."""
    ctx = ctx or ExecContext.nofault()
    out = x
    for idx, ld in enumerate(model.layers):
        if ld.kind == "conv":
            out = conv2d(out, ld, ctx, idx)
        elif ld.kind == "fc":
            out = fc(out, ld, ctx, idx)
        else:
            out = nonlinear(out, ld.kind, "A", ctx, idx, spec=ld.spec)
    return out


def golden_run(model: ModelGraph, x: np.ndarray) -> tuple[np.ndarray, int]:
    """Fault-free reference output and predicted class index."""
    out = forward(model, x, ExecContext.nofault())
    return out, int(np.argmax(out))


# ---------------------------------------------------------------------------
# model builders
# ---------------------------------------------------------------------------

def _he_uniform(shape, seed, fan_in, dtype):
    w = random_tensor(shape, seed, "uniform", dtype)
    return (w * np.sqrt(6.0 / fan_in)).astype(dtype)


def _conv_layer(spec: ConvSpec, seed: int, dtype) -> LayerDesc:
    fan_in = spec.ch_in * spec.kernel * spec.kernel
    w = _he_uniform((spec.m_out, spec.ch_in, spec.kernel, spec.kernel), seed, fan_in, dtype)
    b = (random_tensor((spec.m_out,), fold_seed(seed, 1), "uniform", dtype) * 0.01).astype(dtype)
    return LayerDesc("conv", spec, w, b)


def _fc_layer(spec: FcSpec, seed: int, dtype) -> LayerDesc:
    w = _he_uniform((spec.k_in, spec.m_out), seed, spec.k_in, dtype)
    b = (random_tensor((spec.m_out,), fold_seed(seed, 1), "uniform", dtype) * 0.01).astype(dtype)
    return LayerDesc("fc", spec, w, b)


def lenet_plan() -> tuple[tuple, list]:
    """(input shape, [(kind, spec), ...]) for the LeNet-5 topology."""
    plan = [
        ("conv", ConvSpec(6, 1, 5, 1, 32)),
        ("relu", None),
        ("maxpool", PoolSpec(2, 2)),
        ("conv", ConvSpec(16, 6, 5, 1, 14)),
        ("relu", None),
        ("maxpool", PoolSpec(2, 2)),
        ("fc", FcSpec(400, 120)),
        ("relu", None),
        ("fc", FcSpec(120, 84)),
        ("relu", None),
        ("fc", FcSpec(84, 10)),
        ("softmax", None),
    ]
    return (1, 32, 32), plan


def vgg16_plan() -> tuple[tuple, list]:
    """VGG-16 topology (13 conv + 5 pool + 15 relu + 3 fc + softmax).

    Convolutions carry no padding, so the synthetic input is enlarged to
    212 x 212 to make every stage divide exactly (the checksum math, not
    ImageNet geometry, is what matters here).
    """
    cfg = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
    plan = []
    ch, h = 3, 212
    for width, reps in cfg:
        for _ in range(reps):
            plan.append(("conv", ConvSpec(width, ch, 3, 1, h)))
            plan.append(("relu", None))
            ch, h = width, h - 2
        plan.append(("maxpool", PoolSpec(2, 2)))
        h //= 2
    flat = ch * h * h
    plan += [
        ("fc", FcSpec(flat, 4096)),
        ("relu", None),
        ("fc", FcSpec(4096, 4096)),
        ("relu", None),
        ("fc", FcSpec(4096, 1000)),
        ("softmax", None),
    ]
    return (3, 212, 212), plan


def _build(name: str, seed: int, dtype, plan_fn) -> ModelGraph:
    input_shape, plan = plan_fn()
    layers = []
    for idx, (kind, spec) in enumerate(plan):
        sub = fold_seed(seed, idx)
        if kind == "conv":
            layers.append(_conv_layer(spec, sub, dtype))
        elif kind == "fc":
            layers.append(_fc_layer(spec, sub, dtype))
        else:
            layers.append(LayerDesc(kind, spec))
    return ModelGraph(name=name, input_shape=input_shape, layers=layers)


def build_lenet(seed: int, dtype=F64) -> ModelGraph:
    """LeNet-5: two conv+pool blocks, two FC layers plus the output FC."""
    return _build("lenet", seed, dtype, lenet_plan)


def build_vgg16(seed: int, dtype=F64) -> ModelGraph:
    """VGG-16: 13 conv + 5 pool + 15 relu + 3 fc + softmax, ~38M parameters."""
    return _build("vgg16", seed, dtype, vgg16_plan)


# ---------------------------------------------------------------------------
# analytic arithmetic-op counts
# ---------------------------------------------------------------------------

def forward_op_count(ld_or_spec) -> int:
    """Arithmetic ops of one layer's forward pass (multiply-adds count as 2)."""
    spec = ld_or_spec.spec if isinstance(ld_or_spec, LayerDesc) else ld_or_spec
    kind = ld_or_spec.kind if isinstance(ld_or_spec, LayerDesc) else None
    if isinstance(spec, ConvSpec):
        e2 = spec.e_out ** 2
        return 2 * spec.m_out * e2 * spec.ch_in * spec.kernel ** 2 + spec.m_out * e2
    if isinstance(spec, FcSpec):
        return 2 * spec.k_in * spec.m_out + spec.m_out
    if kind in NONLINEAR_KINDS or spec is None or isinstance(spec, PoolSpec):
        return 0  # sized at run time; negligible next to the linear layers
    raise InvalidSpecError(f"cannot count ops for {ld_or_spec!r}")


# ---------------------------------------------------------------------------
# model config files (JSON + SHVT weight references)
# ---------------------------------------------------------------------------

def save_model(model: ModelGraph, directory) -> str:
    """Write <name>.json plus one SHVT weight/bias file per linear layer."""
    os.makedirs(directory, exist_ok=True)
    records = []
    for idx, ld in enumerate(model.layers):
        rec = {"kind": ld.kind}
        if ld.kind == "conv":
            s = ld.spec
            rec.update(M=s.m_out, Ch=s.ch_in, R=s.kernel, U=s.stride, H=s.h_in)
        elif ld.kind == "fc":
            rec.update(K=ld.spec.k_in, M=ld.spec.m_out)
        elif ld.kind == "maxpool":
            rec.update(window=ld.spec.window, stride=ld.spec.stride)
        if ld.weights is not None:
            wfile = f"layer{idx:03d}_w.shvt"
            bfile = f"layer{idx:03d}_b.shvt"
            save_tensor(os.path.join(directory, wfile), ld.weights)
            save_tensor(os.path.join(directory, bfile), ld.bias)
            rec.update(weights=wfile, bias=bfile)
        records.append(rec)
    doc = {"name": model.name, "input_shape": list(model.input_shape), "layers": records}
    path = os.path.join(directory, f"{model.name}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    return path


def load_model(path) -> ModelGraph:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    base = os.path.dirname(os.path.abspath(path))
    layers = []
    for rec in doc["layers"]:
        kind = rec["kind"]
        if kind == "conv":
            spec = ConvSpec(rec["M"], rec["Ch"], rec["R"], rec["U"], rec["H"])
            w = load_tensor(os.path.join(base, rec["weights"]))
            b = load_tensor(os.path.join(base, rec["bias"]))
            layers.append(LayerDesc(kind, spec, w, b))
        elif kind == "fc":
            spec = FcSpec(rec["K"], rec["M"])
            w = load_tensor(os.path.join(base, rec["weights"]))
            b = load_tensor(os.path.join(base, rec["bias"]))
            layers.append(LayerDesc(kind, spec, w, b))
        elif kind == "maxpool":
            layers.append(LayerDesc(kind, PoolSpec(rec["window"], rec["stride"])))
        else:
            layers.append(LayerDesc(kind))
    return ModelGraph(name=doc["name"], input_shape=tuple(doc["input_shape"]), layers=layers)
