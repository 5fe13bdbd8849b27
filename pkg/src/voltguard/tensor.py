"""Dense tensor primitives shared by the whole engine.

Tensors are plain C-contiguous numpy arrays (float64 by default, float32
optional).  Everything here is a pure function of its inputs; reductions use
a fixed ascending-index summation order so results are bit-reproducible
across runs and thread counts.
"""

from __future__ import annotations

import struct

import numpy as np

F64 = np.float64
F32 = np.float32

#: magic bytes of the binary tensor file format
SHVT_MAGIC = b"SHVT"

_SEED_MASK = (1 << 64) - 1


class InvalidShapeError(ValueError):
    """Shape is empty, has a non-positive dim, or does not match."""


class InvalidAxisError(ValueError):
    """Reduction axis outside the tensor rank."""


def _check_shape(shape) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise InvalidShapeError("shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise InvalidShapeError(f"all dims must be >= 1, got {dims}")
    return dims


def random_tensor(shape, seed: int, dist: str = "uniform", dtype=F64) -> np.ndarray:
    """Deterministic random tensor: a pure function of (shape, seed, dist).

    dist is "uniform" for U[-1, 1] or "normal" for N(0, 1).
    """
    dims = _check_shape(shape)
    rng = np.random.Generator(np.random.PCG64(int(seed) & _SEED_MASK))
    if dist == "uniform":
        data = rng.uniform(-1.0, 1.0, size=dims)
    elif dist == "normal":
        data = rng.standard_normal(size=dims)
    else:
        raise ValueError(f"unknown dist {dist!r} (use 'uniform' or 'normal')")
    return np.ascontiguousarray(data, dtype=dtype)


def channel_sum(t: np.ndarray, axis: int) -> np.ndarray:
    """Sum over one axis in fixed ascending-index order.

    Output rank is rank(t) - 1.  The accumulation is a strict left-to-right
    chain (never pairwise/tree), so two runs produce identical bit patterns
    and the result matches a scalar reference loop exactly.
    """
    t = np.asarray(t)
    if axis < 0 or axis >= t.ndim:
        raise InvalidAxisError(f"axis {axis} out of range for rank {t.ndim}")
    mov = np.moveaxis(t, axis, 0)
    acc = np.array(mov[0], copy=True)   # 0-d array for rank-1 inputs
    for i in range(1, mov.shape[0]):
        np.add(acc, mov[i], out=acc)
    return acc


def fixed_dot(a: np.ndarray, b: np.ndarray, init=None):
    """Dot product accumulated in ascending index order, seeded with `init`.

    Matches the engine's fc accumulation semantics: products are formed
    element-wise, then chained one at a time into the accumulator.
    """
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise InvalidShapeError(f"length mismatch {a.shape} vs {b.shape}")
    prods = a * b
    acc = prods.dtype.type(0) if init is None else prods.dtype.type(init)
    for p in prods:
        acc = acc + p
    return acc


def max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Max over elements of |a_i - b_i|; +inf if any compared pair holds a NaN."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    d = np.abs(a - b)
    if np.isnan(d).any():
        return float("inf")
    return float(d.max())


def save_tensor(path, t: np.ndarray) -> None:
    """Write a tensor in the SHVT binary format.

    Layout: magic "SHVT", 1-byte rank, rank x 4-byte little-endian dims,
    then a little-endian element payload (8 bytes per element in f64 mode,
    4 in f32 mode).
    """
    t = np.asarray(t)
    if t.ndim == 0 or t.ndim > 255:
        raise InvalidShapeError(f"rank {t.ndim} not storable")
    if t.dtype == F64:
        payload = np.ascontiguousarray(t, dtype="<f8").tobytes()
    elif t.dtype == F32:
        payload = np.ascontiguousarray(t, dtype="<f4").tobytes()
    else:
        raise ValueError(f"unsupported dtype {t.dtype}")
    with open(path, "wb") as f:
        f.write(SHVT_MAGIC)
        f.write(struct.pack("<B", t.ndim))
        f.write(struct.pack(f"<{t.ndim}I", *t.shape))
        f.write(payload)


def load_tensor(path) -> np.ndarray:
    """Read a tensor written by save_tensor.

    Element width is inferred from the payload size (8 bytes -> f64,
    4 bytes -> f32).
    """
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != SHVT_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    rank = raw[4]
    header_end = 5 + 4 * rank
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated header")
    dims = struct.unpack(f"<{rank}I", raw[5:header_end])
    n = 1
    for d in dims:
        if d < 1:
            raise InvalidShapeError(f"{path}: bad dim {d}")
        n *= d
    payload = raw[header_end:]
    if len(payload) == 8 * n:
        data = np.frombuffer(payload, dtype="<f8")
    elif len(payload) == 4 * n:
        data = np.frombuffer(payload, dtype="<f4")
    else:
        raise ValueError(f"{path}: payload is {len(payload)} bytes for {n} elements")
    return np.ascontiguousarray(data.reshape(dims))
