"""The six tall-and-skinny GEMM kernel algorithms.

Each variant is written once as a routine against the SIMT device API and can
run in two modes:

* simulated: through :func:`tsgemm.simt.run_kernel`, yielding exact
  memory-traffic statistics;
* native: plain vectorized execution for large correctness tests.

Per-thread floating-point accumulation follows the pseudocode order in both
modes, so a variant's simulated and native outputs are bitwise identical, as
are V2 and V3 (same arithmetic, different schedule).

All TSM2R variants compute C += A*B over the caller-provided C. L_OPT2
stores partial sums to C between row tiles and therefore requires a
zero-initialized C.

Boundary behavior: the published pseudocode assumes t1 | m and t1 | k; here
every access is guard-predicated, out-of-range prefetches load zero and cost
no traffic, and prefetch targets follow the actual next compute chunk, so
arbitrary shapes and tile sizes stay correct while divisible shapes
reproduce the closed-form instruction counts exactly.
"""

from __future__ import annotations

import math
from typing import Callable, List, Tuple

import numpy as np

from .core import GpuSpec, KernelParams, Matrix, Variant
from .simt import Device, DeviceContext, SimStats, run_kernel


def _check_dims(A: Matrix, B: Matrix, C: Matrix) -> tuple[int, int, int]:
    if A.cols != B.rows or A.rows != C.rows or B.cols != C.cols:
        raise ValueError(
            f"dimension mismatch: A {A.rows}x{A.cols}, B {B.rows}x{B.cols}, "
            f"C {C.rows}x{C.cols}"
        )
    if not (A.precision is B.precision is C.precision):
        raise ValueError("A, B, C must share one precision")
    return A.rows, A.cols, B.cols


def structural_registers(variant: Variant, params: KernelParams) -> int:
    """Register slots the routine body declares (excluding launch overhead)."""
    t2, t3 = params.t2, params.t3
    if variant is Variant.V0:
        return 2
    if variant is Variant.V1:
        return t2 + 2
    if variant is Variant.V2:
        return 2 * t2 + t3
    if variant in (Variant.V3, Variant.L_OPT1):
        return 3 * t2 + 2 * t3
    return 4 * t2 + 2 * t3  # L_OPT2 adds the nextC set


def grid_blocks(variant: Variant, m: int, params: KernelParams) -> int:
    if variant.is_tsm2l:
        total_threads = math.ceil(m / params.tcf)
        return math.ceil(total_threads / params.t1)
    return math.ceil(m / params.t1)


def make_context(
    gpu: GpuSpec, variant: Variant, A: Matrix, B: Matrix, C: Matrix, params: KernelParams
) -> DeviceContext:
    m, _, _ = _check_dims(A, B, C)
    shared = params.t1 * params.t2 * A.precision.bytes_per_element if variant.uses_shared_tile else 0
    return DeviceContext(
        gpu=gpu,
        grid_blocks=grid_blocks(variant, m, params),
        threads_per_block=params.t1,
        shared_bytes_per_block=shared,
        global_arrays={"A": A, "B": B, "C": C},
    )


# ---------------------------------------------------------------------------
# simulated routines


def _v0(dev: Device, params: KernelParams) -> None:
    """Inner product: C[tid, i] accumulated in global memory, column by column."""
    A = dev.ctx.global_arrays["A"]
    m, k, n = A.rows, A.cols, dev.ctx.global_arrays["B"].cols
    dev.declare_registers(structural_registers(Variant.V0, params))
    gtid = dev.lane_block * params.t1 + dev.ltid
    live = gtid < m
    row = np.where(live, gtid, 0)
    for i in range(n):
        for j in range(k):
            a = dev.gload("A", row, j, live)
            b = dev.gload("B", j, i, live)
            c = dev.gload("C", row, i, live)
            c = dev.fma(c, a, b, live)
            dev.gstore("C", row, i, c, live)


def _v1(dev: Device, params: KernelParams) -> None:
    """Outer product: per-pass register accumulators, A touched once per pass."""
    A = dev.ctx.global_arrays["A"]
    m, k, n = A.rows, A.cols, dev.ctx.global_arrays["B"].cols
    t2 = params.t2
    dev.declare_registers(structural_registers(Variant.V1, params))
    gtid = dev.lane_block * params.t1 + dev.ltid
    live = gtid < m
    row = np.where(live, gtid, 0)
    for p in range(0, n, t2):
        w = min(t2, n - p)
        regs = [dev.gload("C", row, p + c, live) for c in range(w)]
        for i in range(k):
            a = dev.gload("A", row, i, live)
            for c in range(w):
                b = dev.gload("B", i, p + c, live)
                regs[c] = dev.fma(regs[c], a, b, live)
        for c in range(w):
            dev.gstore("C", row, p + c, regs[c], live)


def _tile_offset(r, c, t1: int, t2: int, layout: str):
    if layout == "col":
        return r + c * t1
    return r * t2 + c


def _load_b_tile(dev: Device, tile, base_row: int, p: int, w: int, params, layout: str) -> None:
    """Cooperative fetch of a t1 x w tile of B straight into shared memory.

    Every thread of the block participates (one row per thread), guarded only
    by the row bound of B.
    """
    k = dev.ctx.global_arrays["B"].rows
    brow = base_row + dev.ltid
    bact = brow < k
    row = np.where(bact, brow, 0)
    for c in range(w):
        vals = dev.gload("B", row, p + c, bact)
        off = _tile_offset(dev.ltid, c, params.t1, params.t2, layout)
        dev.shared_store(tile, off, vals, bact)


def _prefetch_b_rows(dev: Device, base_row: int, p: int, w: int):
    k = dev.ctx.global_arrays["B"].rows
    brow = base_row + dev.ltid
    bact = brow < k
    row = np.where(bact, brow, 0)
    return [(dev.gload("B", row, p + c, bact), bact) for c in range(w)]


def _store_b_rows(dev: Device, tile, fetched, w: int, params, layout: str) -> None:
    for c in range(w):
        vals, bact = fetched[c]
        off = _tile_offset(dev.ltid, c, params.t1, params.t2, layout)
        dev.shared_store(tile, off, vals, bact)


def _pass_chunks(k: int, t1: int, t3: int) -> List[List[Tuple[int, int, int]]]:
    """Compute chunks of one pass: per j-step, (j, chunk_lo, chunk_hi) triples."""
    steps = []
    for j in range(0, k, t1):
        lim = min(j + t1, k)
        steps.append([(j, l, min(l + t3, lim)) for l in range(j, lim, t3)])
    return steps


def _load_a_chunk(dev: Device, row, live, chunk: Tuple[int, int, int]):
    _, lo, hi = chunk
    return [dev.gload("A", row, e, live) for e in range(lo, hi)]


def _compute_chunk(dev, tile, curr_a, regs, chunk, w, live, params, layout):
    j, lo, hi = chunk
    for idx, e in enumerate(range(lo, hi)):
        if idx >= len(curr_a):
            break
        for c in range(w):
            off = _tile_offset(e - j, c, params.t1, params.t2, layout)
            bval = dev.shared_load_broadcast(tile, off, live)
            regs[c] = dev.fma(regs[c], curr_a[idx], bval, live)
    return regs


def _tiled_pass(
    dev: Device,
    tile,
    row,
    live,
    p: int,
    w: int,
    regs: list,
    params: KernelParams,
    layout: str,
    prefetch: bool,
) -> list:
    """One (n -> t2) pass of the shared-memory kernels over one row set.

    ``prefetch=False`` is the plain shared-memory schedule: each B tile is
    loaded between a barrier pair right before it is consumed. With
    ``prefetch=True`` the next tiles of A and B are fetched into registers
    while the current tile is computed; the barrier pair brackets the whole
    inner loop, still two barriers per j step.
    """
    k = dev.ctx.global_arrays["A"].cols
    t1 = params.t1
    steps = _pass_chunks(k, t1, params.t3)

    if not prefetch:
        for si, chunks in enumerate(steps):
            j = si * t1
            dev.barrier()
            _load_b_tile(dev, tile, j, p, w, params, layout)
            dev.barrier()
            for chunk in chunks:
                curr_a = _load_a_chunk(dev, row, live, chunk)
                regs = _compute_chunk(dev, tile, curr_a, regs, chunk, w, live, params, layout)
        return regs

    flat = [chunk for chunks in steps for chunk in chunks]
    _load_b_tile(dev, tile, 0, p, w, params, layout)
    curr_a = _load_a_chunk(dev, row, live, flat[0])
    pos = 0
    for si, chunks in enumerate(steps):
        j = si * t1
        dev.barrier()
        next_b = _prefetch_b_rows(dev, j + t1, p, w) if j + t1 < k else None
        for chunk in chunks:
            next_a = _load_a_chunk(dev, row, live, flat[pos + 1]) if pos + 1 < len(flat) else None
            regs = _compute_chunk(dev, tile, curr_a, regs, chunk, w, live, params, layout)
            if next_a is not None:
                curr_a = next_a
            pos += 1
        dev.barrier()
        if next_b is not None:
            _store_b_rows(dev, tile, next_b, w, params, layout)
    return regs


def _make_tsm2r_tiled(variant: Variant, layout: str) -> Callable:
    prefetch = variant is Variant.V3

    def _kernel(dev: Device, params: KernelParams) -> None:
        A = dev.ctx.global_arrays["A"]
        m, k, n = A.rows, A.cols, dev.ctx.global_arrays["B"].cols
        t1, t2 = params.t1, params.t2
        dev.declare_registers(structural_registers(variant, params))
        tile = dev.shared_alloc(t1 * t2, A.precision)
        gtid = dev.lane_block * t1 + dev.ltid
        live = gtid < m
        row = np.where(live, gtid, 0)
        for p in range(0, n, t2):
            w = min(t2, n - p)
            regs = [dev.gload("C", row, p + c, live) for c in range(w)]
            regs = _tiled_pass(dev, tile, row, live, p, w, regs, params, layout, prefetch)
            for c in range(w):
                dev.gstore("C", row, p + c, regs[c], live)

    return _kernel


def _make_l_opt1(layout: str) -> Callable:
    def _kernel(dev: Device, params: KernelParams) -> None:
        A = dev.ctx.global_arrays["A"]
        m, k, n = A.rows, A.cols, dev.ctx.global_arrays["B"].cols
        t1, t2, tcf = params.t1, params.t2, params.tcf
        dev.declare_registers(structural_registers(Variant.L_OPT1, params))
        tile = dev.shared_alloc(t1 * t2, A.precision)
        total_threads = math.ceil(m / tcf)
        gtid = dev.lane_block * t1 + dev.ltid
        exists = gtid < total_threads
        rounds = math.ceil(m / total_threads)
        # one full prefetched pass sequence per horizontal tile of A
        for q in range(rounds):
            r = gtid + q * total_threads
            live = exists & (r < m)
            row = np.where(live, r, 0)
            for p in range(0, n, t2):
                w = min(t2, n - p)
                regs = [dev.gload("C", row, p + c, live) for c in range(w)]
                regs = _tiled_pass(dev, tile, row, live, p, w, regs, params, layout, True)
                for c in range(w):
                    dev.gstore("C", row, p + c, regs[c], live)

    return _kernel


def _make_l_opt2(layout: str) -> Callable:
    def _kernel(dev: Device, params: KernelParams) -> None:
        A = dev.ctx.global_arrays["A"]
        m, k, n = A.rows, A.cols, dev.ctx.global_arrays["B"].cols
        t1, t2, t3, tcf = params.t1, params.t2, params.t3, params.tcf
        dev.declare_registers(structural_registers(Variant.L_OPT2, params))
        tile = dev.shared_alloc(t1 * t2, A.precision)
        total_threads = math.ceil(m / tcf)
        gtid = dev.lane_block * t1 + dev.ltid
        exists = gtid < total_threads
        live0 = exists & (gtid < m)
        row0 = np.where(live0, gtid, 0)
        rounds = math.ceil(m / total_threads)
        steps = _pass_chunks(k, t1, t3)
        for p in range(0, n, t2):
            w = min(t2, n - p)
            _load_b_tile(dev, tile, 0, p, w, params, layout)
            curr_a = _load_a_chunk(dev, row0, live0, steps[0][0])
            for si, chunks in enumerate(steps):
                j = si * t1
                dev.barrier()
                next_b = _prefetch_b_rows(dev, j + t1, p, w) if j + t1 < k else None
                cregs = [dev.gload("C", row0, p + c, live0) for c in range(w)]
                for q in range(rounds):
                    r = gtid + q * total_threads
                    live = exists & (r < m)
                    row = np.where(live, r, 0)
                    r_next = r + total_threads
                    live_n = exists & (r_next < m)
                    row_n = np.where(live_n, r_next, 0)
                    next_c = None
                    if q + 1 < rounds:
                        next_c = [dev.gload("C", row_n, p + c, live_n) for c in range(w)]
                    for ci, chunk in enumerate(chunks):
                        # the A prefetch chain crosses row tiles, then j steps
                        if ci + 1 < len(chunks):
                            next_a = _load_a_chunk(dev, row, live, chunks[ci + 1])
                        elif q + 1 < rounds:
                            next_a = _load_a_chunk(dev, row_n, live_n, chunks[0])
                        elif si + 1 < len(steps):
                            next_a = _load_a_chunk(dev, row0, live0, steps[si + 1][0])
                        else:
                            next_a = None
                        cregs = _compute_chunk(dev, tile, curr_a, cregs, chunk, w, live, params, layout)
                        if next_a is not None:
                            curr_a = next_a
                    for c in range(w):
                        dev.gstore("C", row, p + c, cregs[c], live)
                    if next_c is not None:
                        cregs = next_c
                dev.barrier()
                if next_b is not None:
                    _store_b_rows(dev, tile, next_b, w, params, layout)

    return _kernel


def make_kernel(variant: Variant, tile_layout: str = "col") -> Callable:
    """Returns the simulated routine for a variant.

    ``tile_layout`` selects how the shared B tile is stored ('col' is the
    shipped choice; 'row' exists to demonstrate the bank-conflict penalty).
    """
    if tile_layout not in ("col", "row"):
        raise ValueError("tile_layout must be 'col' or 'row'")
    if variant is Variant.V0:
        return _v0
    if variant is Variant.V1:
        return _v1
    if variant in (Variant.V2, Variant.V3):
        return _make_tsm2r_tiled(variant, tile_layout)
    if variant is Variant.L_OPT1:
        return _make_l_opt1(tile_layout)
    return _make_l_opt2(tile_layout)


def _require_zero_c(C: Matrix) -> None:
    if np.any(C.storage != 0):
        raise ValueError("L_OPT2 stores partial sums to C and requires a zeroed C")


def simulate(
    gpu: GpuSpec,
    variant: Variant,
    A: Matrix,
    B: Matrix,
    C: Matrix,
    params: KernelParams,
    workers: int = 1,
    tile_layout: str = "col",
) -> tuple[Matrix, SimStats]:
    """Runs a variant on the SIMT engine, returning (C_result, statistics)."""
    m, k, n = _check_dims(A, B, C)
    params.validate_for(m, k, n, gpu.warp_size)
    if variant is Variant.L_OPT2:
        _require_zero_c(C)
    ctx = make_context(gpu, variant, A, B, C, params)
    kernel = make_kernel(variant, tile_layout)
    return run_kernel(ctx, kernel, params, workers=workers)


def run_native(
    variant: Variant, A: Matrix, B: Matrix, C: Matrix, params: KernelParams
) -> Matrix:
    """Fast execution with the memory model compiled out.

    Every variant accumulates each output element over ascending inner index
    (L_OPT2's intermediate stores round-trip losslessly), so one vectorized
    body reproduces all six bitwise.
    """
    m, k, n = _check_dims(A, B, C)
    params.validate_for(m, k, n)
    if variant is Variant.L_OPT2:
        _require_zero_c(C)
    t2 = params.t2
    Af = A.to_2d()
    Bf = B.to_2d()
    out = C.to_2d().copy(order="F")
    for p in range(0, n, t2):
        w = min(t2, n - p)
        acc = out[:, p:p + w].copy()
        buf = np.empty_like(acc)
        for e in range(k):
            np.multiply(Af[:, e:e + 1], Bf[e:e + 1, p:p + w], out=buf)
            np.add(acc, buf, out=acc)
        out[:, p:p + w] = acc
    return Matrix(m, n, out.reshape(-1, order="F"), A.precision)
