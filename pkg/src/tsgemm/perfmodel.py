"""Closed-form performance estimates: occupancy, utilization, boundedness.

The estimates follow a Little's-law treatment: a launch saturates memory or
compute when it keeps enough bytes or FLOPs in flight per SM to cover the
pipeline latency. Concurrency is expressed in consistent units (bytes in
flight for memory, FLOPs in flight for compute); utilizations clamp to 1.

Only traffic to matrix A enters the predicted-time formulas; B and C traffic
is much smaller and is reported separately by the simulator rather than
folded in here.

Latency-bound launches (tall-and-skinny A times a small B) get two extra
invented cost terms, a per-thread launch overhead and a per-thread tail
drain; they are flagged in the report and their constants are calibration
knobs, not measurements.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from .core import (
    BYTES_PER_REGISTER,
    GpuSpec,
    KernelParams,
    LatencyConstants,
    Precision,
    ShapeClass,
    Variant,
    validate_problem,
)

# latency-bound extra-term calibration (cycles); see module docstring
THREAD_LAUNCH_CYCLES = 4.096
TAIL_DRAIN_CYCLES = 500.0

# latency-bound detection thresholds (dimensionless calibration knobs)
LATENCY_THREAD_HEADROOM = 4.0
LATENCY_TRIP_FLOOR = 16.0


class BoundClass(enum.Enum):
    COMPUTE = "compute-bound"
    MEMORY = "memory-bound"
    LATENCY = "latency-bound"


def register_usage(params: KernelParams, precision: Precision, consts: LatencyConstants) -> int:
    """Per-thread register count: data registers plus fixed setup overhead."""
    scale = precision.bytes_per_element // BYTES_PER_REGISTER
    return (params.t2 * 3 + params.t3 * 2) * scale + consts.reg_overhead


def shared_per_thread(params: KernelParams, precision: Precision) -> int:
    return params.t2 * precision.bytes_per_element


def max_occupancy(
    params: KernelParams,
    precision: Precision,
    gpu: GpuSpec,
    consts: Optional[LatencyConstants] = None,
) -> int:
    """Max resident threads per SM; each resource bound floored to an integer."""
    consts = consts or gpu.latency
    r_thread = register_usage(params, precision, consts)
    s_thread = shared_per_thread(params, precision)
    return min(
        gpu.hw_max_threads_per_sm,
        gpu.regs_per_sm // r_thread,
        gpu.shared_per_sm // s_thread,
    )


def max_occupancy_continuous(
    params_t2: float,
    params_t3: float,
    precision: Precision,
    gpu: GpuSpec,
    consts: LatencyConstants,
) -> float:
    """Unfloored occupancy over real-valued (t2, t3); used inside the tuner."""
    scale = precision.bytes_per_element / BYTES_PER_REGISTER
    r_thread = (params_t2 * 3 + params_t3 * 2) * scale + consts.reg_overhead
    s_thread = params_t2 * precision.bytes_per_element
    return min(
        float(gpu.hw_max_threads_per_sm),
        gpu.regs_per_sm / r_thread,
        gpu.shared_per_sm / s_thread,
    )


def t2_threshold(gpu: GpuSpec, precision: Precision) -> float:
    """The t2 value separating memory-bound from compute-bound operation."""
    return gpu.peak_gflops(precision) / gpu.mem_bandwidth * precision.bytes_per_element


# the published rounded threshold approximations, for reporting
PUBLISHED_THRESHOLDS_DOUBLE = {"K40c": 40.0, "M40": 6.0, "P100": 50.0, "V100": 70.0, "A100": 50.0}


def threshold_discrepancy(gpu: GpuSpec, precision: Precision) -> Optional[float]:
    """Formula threshold minus the published rounded value, when one exists."""
    if precision is not Precision.DOUBLE:
        return None
    quoted = PUBLISHED_THRESHOLDS_DOUBLE.get(gpu.name)
    if quoted is None:
        return None
    return t2_threshold(gpu, precision) - quoted


def _bytes_per_cycle_per_sm(gpu: GpuSpec) -> float:
    return gpu.mem_bandwidth_bytes / (gpu.num_sms * gpu.core_clock_hz)


def _flops_per_cycle_per_sm(gpu: GpuSpec, precision: Precision) -> float:
    return gpu.peak_flops(precision) / (gpu.num_sms * gpu.core_clock_hz)


def utilizations(
    params: KernelParams,
    precision: Precision,
    gpu: GpuSpec,
    consts: Optional[LatencyConstants] = None,
    occupancy: Optional[float] = None,
) -> tuple[float, float]:
    """(util_mem, util_comp), both clamped to 1.

    util_mem compares bytes in flight per SM (occupancy x t3 outstanding A
    elements) against the bytes needed to cover the memory latency; util_comp
    does the same for FLOPs (t3 x t2 independent FMAs per thread).
    """
    consts = consts or gpu.latency
    occ = float(max_occupancy(params, precision, gpu, consts)) if occupancy is None else occupancy
    eb = precision.bytes_per_element
    conc_mem = occ * params.t3 * eb
    conc_max_mem = consts.latency_mem * _bytes_per_cycle_per_sm(gpu)
    conc_comp = occ * params.t3 * params.t2 * 2.0  # FMA counts as 2 FLOPs
    conc_max_comp = consts.latency_comp * _flops_per_cycle_per_sm(gpu, precision)
    return min(1.0, conc_mem / conc_max_mem), min(1.0, conc_comp / conc_max_comp)


def classify_bound(
    m: int,
    k: int,
    n: int,
    params: KernelParams,
    gpu: GpuSpec,
    precision: Precision,
    consts: Optional[LatencyConstants] = None,
) -> BoundClass:
    """Boundedness of a configuration.

    Tall-and-skinny-A shapes run latency-bound when the device is nowhere
    near thread-saturated and each thread's inner loop is too short to hide
    latency; everything else splits on the t2 threshold.
    """
    shape = validate_problem(m, k, n)
    if shape is ShapeClass.TSM2L:
        total_threads = math.ceil(m / params.tcf)
        saturation = LATENCY_THREAD_HEADROOM * gpu.num_sms * gpu.hw_max_threads_per_sm
        trip = k * (n / params.t2) / params.t1
        if total_threads <= saturation and trip < LATENCY_TRIP_FLOOR:
            return BoundClass.LATENCY
    if params.t2 > t2_threshold(gpu, precision):
        return BoundClass.COMPUTE
    return BoundClass.MEMORY


@dataclass(frozen=True)
class ModelReport:
    """Flat record of every model quantity for one configuration."""

    r_thread: int
    s_thread: int
    max_occupancy: int
    concurrent_mem: float
    concurrent_max_mem: float
    util_mem: float
    concurrent_comp: float
    concurrent_max_comp: float
    util_comp: float
    time_comp: float
    time_mem: float
    ratio_r: float
    bound_class: BoundClass
    predicted_time: float
    latency_terms_added: bool

    def to_row(self) -> dict:
        row = {
            "r_thread": self.r_thread,
            "s_thread": self.s_thread,
            "max_occupancy": self.max_occupancy,
            "concurrent_mem": self.concurrent_mem,
            "concurrent_max_mem": self.concurrent_max_mem,
            "util_mem": self.util_mem,
            "concurrent_comp": self.concurrent_comp,
            "concurrent_max_comp": self.concurrent_max_comp,
            "util_comp": self.util_comp,
            "time_comp": self.time_comp,
            "time_mem": self.time_mem,
            "ratio_r": self.ratio_r,
            "bound_class": self.bound_class.value,
            "predicted_time": self.predicted_time,
            "latency_terms_added": self.latency_terms_added,
        }
        return row


def _a_traffic_bytes(variant: Variant, m: int, k: int, n: int, params: KernelParams, eb: int) -> int:
    if variant is Variant.V0:
        return m * k * n * eb
    return m * k * math.ceil(n / params.t2) * eb


def latency_terms_apply(m: int, k: int, n: int, params: KernelParams) -> bool:
    """Whether the invented launch/tail cost terms enter the prediction.

    Any tall-and-skinny-A launch whose threads each run a very short inner
    loop pays per-thread launch overhead, including launches with far more
    threads than the device can keep resident (the classifier labels those
    memory- or compute-bound because parallelism is abundant, but the
    overhead is still real).
    """
    if validate_problem(m, k, n) is not ShapeClass.TSM2L:
        return False
    trip = k * (n / params.t2) / params.t1
    return trip < LATENCY_TRIP_FLOOR


def predict_time(
    m: int,
    k: int,
    n: int,
    params: KernelParams,
    gpu: GpuSpec,
    precision: Precision,
    consts: Optional[LatencyConstants] = None,
    variant: Variant = Variant.V3,
) -> float:
    """Whole-run predicted time in seconds.

    Memory and compute times come from the A-traffic and FLOP totals at the
    utilization-derated peaks. Prefetching variants overlap the two (max);
    the non-prefetching ones serialize them (sum). Latency-bound launches add
    the invented launch/tail terms.
    """
    consts = consts or gpu.latency
    eb = precision.bytes_per_element
    occ = max_occupancy(params, precision, gpu, consts)
    if occ < 1:
        raise ValueError("infeasible parameters: zero occupancy")

    total_threads = math.ceil(m / params.tcf) if variant.is_tsm2l else m
    # a launch cannot keep more threads resident than it has
    occ_eff = min(float(occ), total_threads / gpu.num_sms)
    occ_eff = max(occ_eff, 1.0)
    um, uc = utilizations(params, precision, gpu, consts, occupancy=occ_eff)

    tm = _a_traffic_bytes(variant, m, k, n, params, eb) / (gpu.mem_bandwidth_bytes * um)
    tc = 2.0 * m * k * n / (gpu.peak_flops(precision) * uc)
    overlap = variant in (Variant.V3, Variant.L_OPT1, Variant.L_OPT2)
    base = max(tm, tc) if overlap else tm + tc

    if latency_terms_apply(m, k, n, params):
        t_launch = total_threads * THREAD_LAUNCH_CYCLES / (gpu.num_sms * gpu.core_clock_hz)
        t_tail = (
            params.tcf
            * k
            * math.ceil(n / params.t2)
            * (eb / BYTES_PER_REGISTER)
            * TAIL_DRAIN_CYCLES
            / gpu.core_clock_hz
        )
        return base + t_launch + t_tail
    return base


def model_report(
    m: int,
    k: int,
    n: int,
    params: KernelParams,
    gpu: GpuSpec,
    precision: Precision,
    consts: Optional[LatencyConstants] = None,
    variant: Variant = Variant.V3,
) -> ModelReport:
    consts = consts or gpu.latency
    eb = precision.bytes_per_element
    r_thread = register_usage(params, precision, consts)
    s_thread = shared_per_thread(params, precision)
    occ = max_occupancy(params, precision, gpu, consts)
    if occ < 1:
        raise ValueError("infeasible parameters: zero occupancy")

    conc_mem = occ * params.t3 * eb
    conc_max_mem = consts.latency_mem * _bytes_per_cycle_per_sm(gpu)
    conc_comp = occ * params.t3 * params.t2
    conc_max_comp = consts.latency_comp * _flops_per_cycle_per_sm(gpu, precision)
    um, uc = utilizations(params, precision, gpu, consts)

    # per-inner-iteration relative costs; only their ratio is meaningful
    denom = gpu.num_sms * occ
    time_comp = params.t3 * params.t2 / (gpu.peak_flops(precision) * denom)
    time_mem = params.t3 * eb / (gpu.mem_bandwidth_bytes * denom)
    ratio_r = time_comp / time_mem

    bound = classify_bound(m, k, n, params, gpu, precision, consts)
    return ModelReport(
        r_thread=r_thread,
        s_thread=s_thread,
        max_occupancy=occ,
        concurrent_mem=conc_mem,
        concurrent_max_mem=conc_max_mem,
        util_mem=um,
        concurrent_comp=conc_comp,
        concurrent_max_comp=conc_max_comp,
        util_comp=uc,
        time_comp=time_comp,
        time_mem=time_mem,
        ratio_r=ratio_r,
        bound_class=bound,
        predicted_time=predict_time(m, k, n, params, gpu, precision, consts, variant),
        latency_terms_added=latency_terms_apply(m, k, n, params),
    )
