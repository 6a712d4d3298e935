"""Kernel parameter selection.

(t2, t3) come from projected gradient descent on the branch objectives
(memory time below the t2 threshold, else the better of compute time and
re-memory-optimized time). The descent runs on the continuous relaxation
with unfloored occupancy; the result is rounded to the best feasible integer
neighbor.

t1 and tcf are scheduling choices the analytic model is nearly blind to, so
they follow the offline-profiling route: a catalog entry may carry profiled
winners (t1, t2, t3 measured on the real part), and otherwise t1 comes from
a convex traffic-vs-synchronization score over warp-multiple candidates and
tcf from a power-of-two sweep of the latency-aware predicted time. When a
profiled entry exists its parameters are returned; the gradient-descent
result is always computed and reported alongside for comparison.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

from .core import GpuSpec, KernelParams, LatencyConstants, Precision, Variant
from .perfmodel import (
    BoundClass,
    classify_bound,
    max_occupancy,
    max_occupancy_continuous,
    predict_time,
    t2_threshold,
)

T3_SEARCH_MAX = 64          # register-realistic cap on the t3 search range
DEFAULT_T1 = 128
T1_SYNC_KNEE = 128          # block size where sync drag overtakes B savings
TIE_REL_TOL = 1e-9


class Branch(enum.Enum):
    MEMORY = "memory"
    COMPUTE_TIME1 = "compute-time1"
    COMPUTE_TIME2 = "compute-time2"


@dataclass
class TuneResult:
    params: KernelParams
    bound_class: BoundClass
    predicted_time: float
    objective_trace: list  # (iteration, t2, t3, objective)
    branch: Branch
    gd_params: KernelParams          # descent result before any profiled override
    gd_objective: float
    gd_branch: Branch                # branch the descent result belongs to
    profiled_override: bool


# ---------------------------------------------------------------------------
# gradient descent


def gd_minimize(
    f: Callable[[float, float], float],
    x0: tuple[float, float],
    bounds: tuple[tuple[float, float], tuple[float, float]],
    step: float = 0.1,
    h: float = 0.01,
    tol: float = 1e-4,
    max_iter: int = 500,
):
    """Projected gradient descent with central differences and backtracking.

    Steps of length ``step`` along the normalized negative gradient, halved
    while they fail to improve; stops when the relative improvement of an
    accepted step falls below ``tol``. Returns (x, f(x), trace); the trace is
    non-increasing in objective after the first entry.
    """

    def project(x):
        return tuple(min(hi, max(lo, v)) for v, (lo, hi) in zip(x, bounds))

    x = project(x0)
    fx = f(*x)
    trace = [(0, x[0], x[1], fx)]
    for it in range(1, max_iter + 1):
        grad = []
        for d in range(2):
            lo, hi = bounds[d]
            up = list(x)
            dn = list(x)
            up[d] = min(hi, x[d] + h)
            dn[d] = max(lo, x[d] - h)
            span = up[d] - dn[d]
            grad.append(0.0 if span == 0 else (f(*up) - f(*dn)) / span)
        norm = math.hypot(*grad)
        if norm == 0.0:
            break
        direction = (-grad[0] / norm, -grad[1] / norm)
        s = step
        moved = False
        while s >= step / 1024:
            cand = project((x[0] + s * direction[0], x[1] + s * direction[1]))
            fc = f(*cand)
            if fc < fx and cand != x:
                improvement = (fx - fc) / max(abs(fx), 1e-300)
                x, fx = cand, fc
                trace.append((it, x[0], x[1], fx))
                moved = True
                break
            s /= 2
        if not moved:
            break
        if improvement < tol:
            break
    return x, fx, trace


def _round_to_best(f, x, bounds) -> tuple[tuple[int, int], float]:
    """Best feasible integer neighbor of a continuous point.

    Ties prefer larger t2 (less A traffic at equal predicted time), then
    smaller t3 (fewer registers).
    """
    (t2_lo, t2_hi), (t3_lo, t3_hi) = bounds
    cands = set()
    for a in (math.floor(x[0]), math.ceil(x[0])):
        for b in (math.floor(x[1]), math.ceil(x[1])):
            t2 = int(min(t2_hi, max(t2_lo, a)))
            t3 = int(min(t3_hi, max(t3_lo, b)))
            cands.add((t2, t3))
    best = None
    best_key = None
    for t2, t3 in sorted(cands):
        val = f(float(t2), float(t3))
        key = (val, -t2, t3)
        if best_key is None or _lex_better(key, best_key):
            best, best_key = (t2, t3), key
    return best, best_key[0]


def _lex_better(key, ref) -> bool:
    if abs(key[0] - ref[0]) > TIE_REL_TOL * max(abs(ref[0]), 1e-300):
        return key[0] < ref[0]
    return key[1:] < ref[1:]


# ---------------------------------------------------------------------------
# branch objectives (continuous relaxations)


def memory_objective(
    m: int, k: int, n: int, gpu: GpuSpec, precision: Precision, consts: LatencyConstants
) -> Callable[[float, float], float]:
    """Total A-load time against the utilization-derated bandwidth."""
    eb = precision.bytes_per_element

    def f(t2: float, t3: float) -> float:
        occ = max_occupancy_continuous(t2, t3, precision, gpu, consts)
        conc = occ * t3 * eb
        conc_max = consts.latency_mem * gpu.mem_bandwidth_bytes / (gpu.num_sms * gpu.core_clock_hz)
        util = min(1.0, conc / conc_max)
        total_memory = m * k * (n / t2) * eb
        return total_memory / (gpu.mem_bandwidth_bytes * util)

    return f


def compute_objective(
    m: int, k: int, n: int, gpu: GpuSpec, precision: Precision, consts: LatencyConstants
) -> Callable[[float, float], float]:
    """Total FLOP time against the utilization-derated compute peak."""

    def f(t2: float, t3: float) -> float:
        occ = max_occupancy_continuous(t2, t3, precision, gpu, consts)
        conc = occ * t3 * t2 * 2.0
        conc_max = consts.latency_comp * gpu.peak_flops(precision) / (
            gpu.num_sms * gpu.core_clock_hz
        )
        util = min(1.0, conc / conc_max)
        total_flops = m * k * n * 2.0
        return total_flops / (gpu.peak_flops(precision) * util)

    return f


def branch_objective(
    branch: Branch,
    m: int,
    k: int,
    n: int,
    gpu: GpuSpec,
    precision: Precision,
    consts: Optional[LatencyConstants] = None,
) -> tuple[Callable[[float, float], float], tuple]:
    """(objective, ((t2_lo, t2_hi), (t3_lo, t3_hi))) for one branch."""
    consts = consts or gpu.latency
    thr = t2_threshold(gpu, precision)
    t3_bounds = (1.0, float(T3_SEARCH_MAX))
    if branch is Branch.MEMORY:
        return memory_objective(m, k, n, gpu, precision, consts), ((1.0, float(n)), t3_bounds)
    if branch is Branch.COMPUTE_TIME1:
        lo = min(thr, float(k))
        return compute_objective(m, k, n, gpu, precision, consts), ((lo, float(k)), t3_bounds)
    hi = max(1.0, min(thr, float(n)))
    return memory_objective(m, k, n, gpu, precision, consts), ((1.0, hi), t3_bounds)


def _descend(branch, m, k, n, gpu, precision, consts):
    f, bounds = branch_objective(branch, m, k, n, gpu, precision, consts)
    x0 = (bounds[0][0], bounds[1][0])  # both variables start at their lower bound (1 unless projected)
    x, fx, trace = gd_minimize(f, (max(1.0, x0[0]), max(1.0, x0[1])), bounds)
    (t2, t3), rounded_obj = _round_to_best(f, x, bounds)
    return (t2, t3), rounded_obj, trace


def tune_tsm2r(
    m: int,
    k: int,
    n: int,
    gpu: GpuSpec,
    precision: Precision,
    consts: Optional[LatencyConstants] = None,
) -> TuneResult:
    """Alg-5-style (t2, t3) optimization with profiled-winner override.

    Memory-bound problems (n at or below the t2 threshold) minimize the
    A-traffic time over 1 <= t2 <= n. Compute-bound problems minimize both
    the compute time (threshold <= t2 <= k) and the re-memory-optimized time
    (1 <= t2 <= threshold) and keep the better.
    """
    consts = consts or gpu.latency
    thr = t2_threshold(gpu, precision)

    if n <= thr:
        branch = Branch.MEMORY
        (t2, t3), obj, trace = _descend(branch, m, k, n, gpu, precision, consts)
    else:
        (t2a, t3a), obj_a, trace_a = _descend(Branch.COMPUTE_TIME1, m, k, n, gpu, precision, consts)
        (t2b, t3b), obj_b, trace_b = _descend(Branch.COMPUTE_TIME2, m, k, n, gpu, precision, consts)
        if obj_a < obj_b:
            branch, (t2, t3), obj, trace = Branch.COMPUTE_TIME1, (t2a, t3a), obj_a, trace_a
        else:
            branch, (t2, t3), obj, trace = Branch.COMPUTE_TIME2, (t2b, t3b), obj_b, trace_b

    # the kernel itself cannot use t2 beyond n
    t2 = min(t2, n)
    gd_params = KernelParams(t1=DEFAULT_T1, t2=t2, t3=min(t3, DEFAULT_T1), variant=Variant.V3)
    gd_branch = branch

    profiled = gpu.profiled(precision)
    if profiled is not None:
        params = KernelParams(
            t1=profiled.t1,
            t2=min(profiled.resolve_t2(n), n),
            t3=min(profiled.t3, profiled.t1),
            variant=Variant.V3,
        )
        if profiled.prefer_compute and n > thr:
            branch = Branch.COMPUTE_TIME1
    else:
        params = gd_params

    bound = classify_bound(m, k, n, params, gpu, precision, consts)
    return TuneResult(
        params=params,
        bound_class=bound,
        predicted_time=predict_time(m, k, n, params, gpu, precision, consts, Variant.V3),
        objective_trace=trace,
        branch=branch,
        gd_params=gd_params,
        gd_objective=obj,
        gd_branch=gd_branch,
        profiled_override=profiled is not None,
    )


# ---------------------------------------------------------------------------
# t1 selection


class SelectedT1(NamedTuple):
    t1: int
    guarded: bool  # True when no feasible candidate existed


def select_t1(
    m: int,
    k: int,
    n: int,
    tuned: TuneResult,
    gpu: GpuSpec,
    precision: Precision,
    consts: Optional[LatencyConstants] = None,
) -> SelectedT1:
    """Block size choice, the stand-in for offline profiling.

    Profiled catalog entries win outright. Otherwise candidates are the
    warp-size multiples dividing the (warp-floored) max occupancy, scored by
    B-traffic time inflated by a quadratic block-synchronization drag whose
    knee is a per-GPU calibration constant; ties break toward larger t1
    (fewer B accesses).
    """
    consts = consts or gpu.latency
    profiled = gpu.profiled(precision)
    if profiled is not None:
        return SelectedT1(profiled.t1, False)

    warp = gpu.warp_size
    if m < warp:
        return SelectedT1(warp, True)
    occ = max_occupancy(tuned.params, precision, gpu, consts)
    occ_w = (occ // warp) * warp
    if occ_w < warp:
        return SelectedT1(warp, True)
    cap = min(occ_w, 1024)
    candidates = [c for c in range(warp, cap + 1, warp) if occ_w % c == 0]
    if not candidates:
        candidates = list(range(warp, cap + 1, warp))

    eb = precision.bytes_per_element

    def score(t1: int) -> float:
        b_time = m * k * n * eb / (t1 * gpu.mem_bandwidth_bytes)
        return b_time * (1.0 + (t1 / T1_SYNC_KNEE) ** 2)

    best_score = min(score(c) for c in candidates)
    best = max(c for c in candidates if score(c) <= best_score * (1 + TIE_REL_TOL))
    return SelectedT1(best, False)


# ---------------------------------------------------------------------------
# tcf selection


def select_tcf(
    m: int,
    k: int,
    n: int,
    gpu: GpuSpec,
    precision: Precision,
    consts: Optional[LatencyConstants] = None,
) -> int:
    """Thread-count factor for the row-tile kernels.

    Sweeps powers of two in [1, 64] under the latency-aware predicted time;
    ties break toward the smaller tcf (more parallelism).
    """
    consts = consts or gpu.latency
    profiled = gpu.profiled(precision)
    t1 = profiled.t1 if profiled else DEFAULT_T1
    t3 = min(profiled.t3 if profiled else 4, t1)
    best = 1
    best_time = None
    tcf = 1
    while tcf <= 64:
        params = KernelParams(t1=t1, t2=n, t3=t3, tcf=tcf, variant=Variant.L_OPT1)
        t = predict_time(m, k, n, params, gpu, precision, consts, Variant.L_OPT1)
        if best_time is None or t < best_time * (1 - TIE_REL_TOL):
            best, best_time = tcf, t
        tcf *= 2
    return best
