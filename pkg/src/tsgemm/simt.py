"""Deterministic SIMT execution engine with exact memory-traffic accounting.

Kernels run warp-lockstep over a grid of blocks. The engine models:

* global-memory coalescing into fixed-size aligned transactions,
* shared-memory banks (32-bit wide) with broadcast detection,
* block-wide barriers and per-thread register footprints.

There is no timing here; predicted time comes from the performance model.
All counters are associative sums, so blocks can execute on any number of
workers in any order and the merged statistics are identical. Each array is
modeled in its own address space with a transaction-aligned base, which is
what a real allocator guarantees.

Floating-point note: a kernel's arithmetic executes in pseudocode order
within each thread and thread results never combine, so the output matrix is
bitwise reproducible regardless of scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .core import GpuSpec, KernelParams, Matrix, Precision

_SENTINEL = np.iinfo(np.int64).max


class KernelBugError(RuntimeError):
    """An unguarded out-of-bounds access: the kernel routine is broken."""


class SharedMemoryOverflow(ValueError):
    """Requested per-block shared allocation exceeds the GPU's capacity."""


# ---------------------------------------------------------------------------
# warp-level primitives


def coalesce_warp_access(
    addresses: Sequence[int], element_bytes: int, transaction_bytes: int
) -> tuple[int, int]:
    """Coalesces one warp's byte addresses into aligned transactions.

    ``addresses`` holds the active lanes only (inactive lanes are simply not
    passed). Duplicate addresses coalesce into the same transaction. Returns
    ``(transactions, bytes_transferred)``.
    """
    if element_bytes not in (4, 8):
        raise ValueError(f"element_bytes must be 4 or 8, got {element_bytes}")
    addr = np.asarray(list(addresses), dtype=np.int64)
    if addr.size == 0:
        return 0, 0
    lo = addr // transaction_bytes
    hi = (addr + element_bytes - 1) // transaction_bytes
    segments = np.unique(np.concatenate([lo, hi]))
    return int(segments.size), int(segments.size) * transaction_bytes


def shared_access_conflicts(word_addresses: Sequence[int], num_banks: int = 32) -> int:
    """Serialized passes for one warp access to shared memory.

    ``word_addresses`` are 4-byte word indices, one entry per active lane
    access; bank = word mod num_banks. Lanes that request the same word in
    the same bank broadcast and count once.
    """
    words = np.asarray(list(word_addresses), dtype=np.int64)
    if words.size == 0:
        return 0
    banks = words % num_banks
    passes = 1
    for b in np.unique(banks):
        distinct = np.unique(words[banks == b]).size
        passes = max(passes, int(distinct))
    return passes


def _distinct_per_row(vals: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Number of distinct values among active entries, per row."""
    masked = np.where(active, vals, _SENTINEL)
    s = np.sort(masked, axis=1)
    any_active = active.any(axis=1).astype(np.int64)
    changes = (s[:, 1:] != s[:, :-1]) & (s[:, 1:] != _SENTINEL)
    return any_active + changes.sum(axis=1, dtype=np.int64)


# ---------------------------------------------------------------------------
# statistics


@dataclass
class ArrayStats:
    """Exact counters for one named global array."""

    load_instructions: int = 0
    store_instructions: int = 0
    load_transactions: int = 0
    bytes_requested: int = 0     # distinct bytes per warp access, summed
    bytes_transferred: int = 0   # transactions x transaction size

    @property
    def gld_efficiency(self) -> Optional[float]:
        if self.bytes_transferred == 0:
            return None
        return self.bytes_requested / self.bytes_transferred

    def merge(self, other: "ArrayStats") -> None:
        self.load_instructions += other.load_instructions
        self.store_instructions += other.store_instructions
        self.load_transactions += other.load_transactions
        self.bytes_requested += other.bytes_requested
        self.bytes_transferred += other.bytes_transferred


@dataclass
class SimStats:
    """Counters accumulated over a simulated kernel launch."""

    arrays: Dict[str, ArrayStats] = field(default_factory=dict)
    shared_load_instructions: int = 0
    shared_bank_conflict_excess: int = 0
    fma_count: int = 0
    barrier_count: int = 0
    max_registers_per_thread: int = 0

    def array(self, name: str) -> ArrayStats:
        if name not in self.arrays:
            self.arrays[name] = ArrayStats()
        return self.arrays[name]

    def merge(self, other: "SimStats") -> None:
        for name, st in other.arrays.items():
            self.array(name).merge(st)
        self.shared_load_instructions += other.shared_load_instructions
        self.shared_bank_conflict_excess += other.shared_bank_conflict_excess
        self.fma_count += other.fma_count
        self.barrier_count += other.barrier_count
        self.max_registers_per_thread = max(
            self.max_registers_per_thread, other.max_registers_per_thread
        )

    def gld_efficiency(self, name: str) -> Optional[float]:
        return self.array(name).gld_efficiency


# ---------------------------------------------------------------------------
# launch description


@dataclass(frozen=True)
class DeviceContext:
    """One kernel launch: grid geometry plus the bound global arrays."""

    gpu: GpuSpec
    grid_blocks: int
    threads_per_block: int
    shared_bytes_per_block: int
    global_arrays: Dict[str, Matrix]

    def __post_init__(self):
        if self.threads_per_block % self.gpu.warp_size != 0:
            raise ValueError(
                f"threads_per_block ({self.threads_per_block}) must be a multiple "
                f"of the warp size ({self.gpu.warp_size})"
            )
        if self.shared_bytes_per_block > self.gpu.shared_per_sm:
            raise SharedMemoryOverflow(
                f"shared allocation {self.shared_bytes_per_block} B exceeds "
                f"{self.gpu.shared_per_sm} B per SM"
            )
        if self.grid_blocks < 1:
            raise ValueError("grid must contain at least one block")


class _SharedTile:
    """Per-block programmer-managed scratchpad, tracked in element units."""

    __slots__ = ("data", "elems")

    def __init__(self, chunk_blocks: int, elems: int, dtype):
        self.elems = elems
        self.data = np.zeros((chunk_blocks, elems), dtype=dtype)


class Device:
    """Execution handle given to a kernel routine for one chunk of blocks.

    Thread-parallel values are numpy arrays over the chunk's lanes; lane i
    belongs to block ``lane_block[i]`` with in-block id ``ltid[i]``. The
    kernel performs all memory traffic through this object so the simulated
    and native modes share one routine body.
    """

    def __init__(
        self,
        ctx: DeviceContext,
        block_lo: int,
        block_hi: int,
        out_arrays: Dict[str, np.ndarray],
        counting: bool = True,
    ):
        self.ctx = ctx
        self.gpu = ctx.gpu
        self.counting = counting
        self.stats = SimStats()
        t1 = ctx.threads_per_block
        nblocks = block_hi - block_lo
        self.nblocks = nblocks
        self.lanes = nblocks * t1
        self.lane_block = np.repeat(np.arange(block_lo, block_hi, dtype=np.int64), t1)
        self.ltid = np.tile(np.arange(t1, dtype=np.int64), nblocks)
        self._out = out_arrays
        self._declared_registers = 0
        self._warp = ctx.gpu.warp_size

    # -- registers ----------------------------------------------------------

    def declare_registers(self, count: int) -> None:
        self._declared_registers = max(self._declared_registers, count)
        self.stats.max_registers_per_thread = self._declared_registers

    # -- global memory ------------------------------------------------------

    def _matrix(self, name: str) -> Matrix:
        return self.ctx.global_arrays[name]

    def _flat(self, mat: Matrix, row, col, active) -> np.ndarray:
        row = np.broadcast_to(np.asarray(row, dtype=np.int64), (self.lanes,))
        col = np.broadcast_to(np.asarray(col, dtype=np.int64), (self.lanes,))
        flat = row + col * mat.rows
        if active.any():
            bad = active & ((row < 0) | (row >= mat.rows) | (col < 0) | (col >= mat.cols))
            if bad.any():
                raise KernelBugError(
                    f"out-of-bounds access: row/col outside {mat.rows}x{mat.cols}"
                )
        return flat

    def _account_global_load(self, name: str, flat: np.ndarray, active: np.ndarray, eb: int):
        st = self.stats.array(name)
        st.load_instructions += int(active.sum())
        warp = self._warp
        addr = (flat * eb).reshape(-1, warp)
        act = active.reshape(-1, warp)
        tb = self.gpu.transaction_bytes
        # elements never straddle segments: eb divides the transaction size
        # and addresses are eb-aligned
        segs = _distinct_per_row(addr // tb, act)
        distinct = _distinct_per_row(addr, act)
        st.load_transactions += int(segs.sum())
        st.bytes_transferred += int(segs.sum()) * tb
        st.bytes_requested += int(distinct.sum()) * eb

    def gload(self, name: str, row, col, active) -> np.ndarray:
        """Guarded global load; predicated-off lanes read 0 and cost nothing.

        Arrays the kernel also stores to (C) are read through the output
        buffer, so a thread sees its own prior writes; rows are thread-private
        so no cross-thread ordering is involved.
        """
        mat = self._matrix(name)
        active = np.broadcast_to(np.asarray(active, dtype=bool), (self.lanes,))
        flat = self._flat(mat, row, col, active)
        out = np.zeros(self.lanes, dtype=mat.precision.dtype)
        if active.any():
            backing = self._out.get(name, mat.storage)
            out[active] = backing[flat[active]]
        if self.counting and active.any():
            self._account_global_load(name, flat, active, mat.precision.bytes_per_element)
        return out

    def gstore(self, name: str, row, col, values, active) -> None:
        mat = self._matrix(name)
        active = np.broadcast_to(np.asarray(active, dtype=bool), (self.lanes,))
        flat = self._flat(mat, row, col, active)
        if active.any():
            self._out[name][flat[active]] = values[active]
        if self.counting and active.any():
            self.stats.array(name).store_instructions += int(active.sum())

    # -- shared memory ------------------------------------------------------

    def shared_alloc(self, elems: int, precision: Precision) -> _SharedTile:
        nbytes = elems * precision.bytes_per_element
        if nbytes > self.gpu.shared_per_sm:
            raise SharedMemoryOverflow(
                f"shared tile of {nbytes} B exceeds {self.gpu.shared_per_sm} B per SM"
            )
        return _SharedTile(self.nblocks, elems, precision.dtype)

    def _bank_excess(self, offsets: np.ndarray, active: np.ndarray, eb: int) -> int:
        """Bank-conflict excess for one launch-wide access, element offsets.

        A 4-byte access issues one 32-lane wave. An 8-byte access issues two
        half-warp waves; each lane in a wave touches its two 4-byte words.
        Excess is sum over waves of (serialized passes - 1).
        """
        warp = self._warp
        banks = self.gpu.num_banks
        words_per_elem = eb // 4
        off = offsets.reshape(-1, warp)
        act = active.reshape(-1, warp)
        excess = 0
        if words_per_elem == 1:
            waves = [(off, act)]
        else:
            half = warp // 2
            lo_w = np.concatenate([off[:, :half] * 2, off[:, :half] * 2 + 1], axis=1)
            lo_a = np.concatenate([act[:, :half], act[:, :half]], axis=1)
            hi_w = np.concatenate([off[:, half:] * 2, off[:, half:] * 2 + 1], axis=1)
            hi_a = np.concatenate([act[:, half:], act[:, half:]], axis=1)
            waves = [(lo_w, lo_a), (hi_w, hi_a)]
        for words, wact in waves:
            for r in range(words.shape[0]):
                if not wact[r].any():
                    continue
                passes = shared_access_conflicts(words[r][wact[r]], banks)
                excess += passes - 1
        return excess

    def shared_store(self, tile: _SharedTile, offsets, values, active) -> None:
        active = np.broadcast_to(np.asarray(active, dtype=bool), (self.lanes,))
        offsets = np.broadcast_to(np.asarray(offsets, dtype=np.int64), (self.lanes,))
        if active.any():
            if (active & ((offsets < 0) | (offsets >= tile.elems))).any():
                raise KernelBugError("shared store outside the allocated tile")
            tile.data[self.lane_block[active] - self.lane_block[0], offsets[active]] = values[active]
        if self.counting and active.any():
            eb = tile.data.dtype.itemsize
            self.stats.shared_bank_conflict_excess += self._bank_excess(offsets, active, eb)

    def shared_load_broadcast(self, tile: _SharedTile, offset: int, active) -> np.ndarray:
        """All lanes of a block read the same tile element: pure broadcast."""
        active = np.broadcast_to(np.asarray(active, dtype=bool), (self.lanes,))
        if not (0 <= offset < tile.elems):
            raise KernelBugError("shared load outside the allocated tile")
        vals = tile.data[self.lane_block - self.lane_block[0], offset]
        if self.counting:
            self.stats.shared_load_instructions += int(active.sum())
            # identical addresses broadcast: one pass per wave, zero excess
        return vals

    # -- execution structure --------------------------------------------------

    def barrier(self) -> None:
        if self.counting:
            self.stats.barrier_count += self.nblocks

    def fma(self, acc: np.ndarray, a: np.ndarray, b, live) -> np.ndarray:
        """acc + a*b, elementwise, counted once per live lane."""
        if self.counting:
            self.stats.fma_count += int(np.count_nonzero(live))
        return acc + a * b


KernelRoutine = Callable[[Device, KernelParams], None]


def run_kernel(
    ctx: DeviceContext,
    kernel: KernelRoutine,
    params: KernelParams,
    workers: int = 1,
) -> tuple[Matrix, SimStats]:
    """Executes a kernel routine over the launch grid and collects statistics.

    ``workers`` partitions the grid into block chunks that may execute
    concurrently; counters merge commutatively and C rows are written by
    exactly one thread each, so the result is bitwise independent of the
    partitioning.
    """
    if ctx.threads_per_block != params.t1:
        raise ValueError("context threads_per_block must equal params.t1")
    c_mat = ctx.global_arrays["C"]
    out_c = c_mat.storage.copy()
    out_arrays = {"C": out_c}

    nblocks = ctx.grid_blocks
    workers = max(1, min(workers, nblocks))
    bounds = np.linspace(0, nblocks, workers + 1, dtype=int)
    chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def _run_chunk(span: tuple[int, int]) -> SimStats:
        dev = Device(ctx, span[0], span[1], out_arrays, counting=True)
        kernel(dev, params)
        return dev.stats

    stats = SimStats()
    if len(chunks) == 1:
        stats.merge(_run_chunk(chunks[0]))
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            for st in pool.map(_run_chunk, chunks):
                stats.merge(st)
    result = Matrix(c_mat.rows, c_mat.cols, out_c, c_mat.precision)
    return result, stats
