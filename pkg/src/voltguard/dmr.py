"""Dual-modular-redundant execution of the nonlinear layers.

Variant A and variant B are computed independently (optionally on two
threads), faults are keyed on the variant id so an injected fault hits at
most one variant per element, and the outputs are compared.  Variant A's
output proceeds downstream on a pass.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .faultsim import ExecContext
from .layers import PoolSpec, nonlinear
from .tensor import max_abs_diff

#: comparison tolerance in ulps of the largest-magnitude output element.
#: relu/maxpool variants agree bit-exactly; the two softmax formulations
#: legitimately differ by a few ulp (growing ~sqrt(K) with class count),
#: so the uniform rule leaves generous headroom below the smallest
#: in-range bit flip, which sits ~2^13 ulp above it.
DEFAULT_TOL_ULPS = 64.0

_pool = None


def _shared_pool() -> ThreadPoolExecutor:
    global _pool
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=2, thread_name_prefix="dmr")
    return _pool


@dataclass(frozen=True)
class DmrVerdict:
    layer: int
    kind: str               # always "dmr" in CSV output
    passed: bool
    discrepancy: float
    scale: float
    outputs_retained: bool = False


def dmr_execute(x: np.ndarray, kind: str, ctx: ExecContext, layer: int = 0,
                spec: PoolSpec | None = None, tol_ulps: float = DEFAULT_TOL_ULPS,
                retain: bool = False):
    """Run both variants of one nonlinear layer and compare.

    Returns (variant A output, DmrVerdict) and, when retain is set, the pair
    of variant outputs appended as a third element.
    """
    if ctx.parallel:
        pool = _shared_pool()
        fa = pool.submit(nonlinear, x, kind, "A", ctx, layer, spec)
        fb = pool.submit(nonlinear, x, kind, "B", ctx, layer, spec)
        a, b = fa.result(), fb.result()
    else:
        a = nonlinear(x, kind, "A", ctx, layer, spec)
        b = nonlinear(x, kind, "B", ctx, layer, spec)
    disc = max_abs_diff(a, b)
    scale = max(float(np.abs(a).max()), float(np.abs(b).max()))
    tol = tol_ulps * float(np.spacing(np.asarray(scale, dtype=a.dtype)))
    verdict = DmrVerdict(
        layer=layer,
        kind="dmr",
        passed=disc <= tol,
        discrepancy=disc,
        scale=scale,
        outputs_retained=retain,
    )
    if retain:
        return a, verdict, (a, b)
    return a, verdict
