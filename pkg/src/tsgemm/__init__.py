"""Tall-and-skinny GEMM laboratory.

A deterministic SIMT execution model for the TSM2R/TSM2L kernel family with
exact memory-traffic accounting, the matching analytical performance model
and parameter autotuner, and an experiment CLI over a catalog of GPU
hardware descriptions.
"""

from .core import (
    GpuSpec,
    KernelParams,
    LatencyConstants,
    Matrix,
    Precision,
    ShapeClass,
    Variant,
    load_catalog,
    load_gpu_spec,
    validate_problem,
)
from .kernels import run_native, simulate
from .oracle import count_expected_loads, naive_gemm
from .perfmodel import BoundClass, classify_bound, model_report, predict_time, t2_threshold
from .simt import SimStats, coalesce_warp_access, run_kernel, shared_access_conflicts
from .tuner import TuneResult, select_t1, select_tcf, tune_tsm2r

__all__ = [
    "BoundClass",
    "GpuSpec",
    "KernelParams",
    "LatencyConstants",
    "Matrix",
    "Precision",
    "ShapeClass",
    "SimStats",
    "TuneResult",
    "Variant",
    "classify_bound",
    "coalesce_warp_access",
    "count_expected_loads",
    "load_catalog",
    "load_gpu_spec",
    "model_report",
    "naive_gemm",
    "predict_time",
    "run_kernel",
    "run_native",
    "select_t1",
    "select_tcf",
    "shared_access_conflicts",
    "simulate",
    "t2_threshold",
    "tune_tsm2r",
    "validate_problem",
]

__version__ = "0.1.0"
