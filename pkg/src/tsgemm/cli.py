"""Experiment front-end.

Subcommands:

* ``run``        simulate kernel variants over a shape list, emit counters + model columns
* ``tune``       parameter optimization for one shape, with the descent trace as a companion file
* ``model``      threshold / boundedness table over the GPU catalog
* ``sweep-tcf``  thread-count-factor sweep for the row-tile kernels

CSV output is UTF-8 with LF line endings and shortest round-trip float
formatting; a fixed seed makes byte-identical files regardless of worker
count. Plots (--plot) are regenerated purely from the written CSV and never
fail the run.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .core import (
    GpuSpec,
    KernelParams,
    Matrix,
    Precision,
    Variant,
    load_catalog,
    validate_problem,
)
from .kernels import simulate
from .oracle import count_expected_loads, max_rel_error, naive_gemm
from .perfmodel import (
    classify_bound,
    model_report,
    predict_time,
    t2_threshold,
    threshold_discrepancy,
    PUBLISHED_THRESHOLDS_DOUBLE,
)
from .tuner import select_t1, select_tcf, tune_tsm2r


@dataclass
class ExperimentConfig:
    """Everything a ``run`` needs; the seed fully determines the matrices."""

    gpu_name: str
    precision: Precision
    shapes: List[tuple[int, int, int]]
    variants: List[Variant]
    params_override: dict = field(default_factory=dict)
    seed: int = 0
    out_path: str = "run.csv"
    workers: int = 1
    plot: bool = False


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Atomic CSV write: no partial file is left behind on error."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _default_params(gpu: GpuSpec, precision: Precision, n: int, variant: Variant, override: dict) -> KernelParams:
    """Derived defaults are clamped to the problem; explicit overrides are
    taken verbatim so infeasible requests surface as per-row errors."""
    prof = gpu.profiled(precision)
    t1 = override.get("t1") or (prof.t1 if prof else 128)
    t2 = override["t2"] if "t2" in override else min(n, prof.resolve_t2(n) if prof else n)
    t3 = override["t3"] if "t3" in override else min(prof.t3 if prof else 4, t1)
    tcf = override.get("tcf") or 1
    if not variant.is_tsm2l:
        tcf = 1
    return KernelParams(t1=t1, t2=t2, t3=t3, tcf=tcf, variant=variant)


_RUN_ARRAY_COLS = [
    "load_instructions",
    "store_instructions",
    "load_transactions",
    "bytes_requested",
    "bytes_transferred",
    "gld_efficiency",
]

_RUN_HEADER = (
    ["gpu", "precision", "m", "k", "n", "variant", "t1", "t2", "t3", "tcf", "shape_class",
     "oracle_max_rel_err"]
    + [f"{a}_{c}" for a in ("A", "B", "C") for c in _RUN_ARRAY_COLS]
    + ["shared_load_instructions", "shared_bank_conflict_excess", "fma_count",
       "barrier_count", "max_registers_per_thread"]
    + ["r_thread", "s_thread", "max_occupancy", "concurrent_mem", "concurrent_max_mem",
       "util_mem", "concurrent_comp", "concurrent_max_comp", "util_comp", "time_comp",
       "time_mem", "ratio_r", "bound_class", "predicted_time", "latency_terms_added"]
    + ["error"]
)


def _run_point(gpu, precision, shape, variant, params_override, seed, shape_idx, workers):
    m, k, n = shape
    base = ["%s" % gpu.name, precision.value, m, k, n, variant.value]
    try:
        params = _default_params(gpu, precision, n, variant, params_override)
        rng = np.random.default_rng([seed, shape_idx])
        A = Matrix.random(m, k, precision, rng)
        B = Matrix.random(k, n, precision, rng)
        C0 = Matrix.zeros(m, n, precision)
        result, stats = simulate(gpu, variant, A, B, C0, params, workers=workers)
        err = max_rel_error(result, naive_gemm(A, B, C0))
        report = model_report(m, k, n, params, gpu, precision, variant=variant)
        row = base + [params.t1, params.t2, params.t3, params.tcf,
                      validate_problem(m, k, n).value, err]
        for name in ("A", "B", "C"):
            st = stats.array(name)
            row += [st.load_instructions, st.store_instructions, st.load_transactions,
                    st.bytes_requested, st.bytes_transferred, st.gld_efficiency]
        row += [stats.shared_load_instructions, stats.shared_bank_conflict_excess,
                stats.fma_count, stats.barrier_count, stats.max_registers_per_thread]
        rep = report.to_row()
        row += [rep[c] for c in ("r_thread", "s_thread", "max_occupancy", "concurrent_mem",
                                 "concurrent_max_mem", "util_mem", "concurrent_comp",
                                 "concurrent_max_comp", "util_comp", "time_comp", "time_mem",
                                 "ratio_r", "bound_class", "predicted_time",
                                 "latency_terms_added")]
        row += [""]
        return row
    except Exception as exc:  # infeasible params etc.: report per row, keep going
        row = base + [params_override.get("t1"), params_override.get("t2"),
                      params_override.get("t3"), params_override.get("tcf"), "", ""]
        row += [""] * (len(_RUN_HEADER) - len(row) - 1)
        row += [f"{type(exc).__name__}: {exc}"]
        return row


def cmd_run(config: ExperimentConfig, catalog=None) -> int:
    catalog = catalog or load_catalog()
    gpu = catalog.get(config.gpu_name)
    if gpu is None:
        raise KeyError(f"unknown GPU {config.gpu_name!r}")
    points = [
        (si, shape, variant)
        for si, shape in enumerate(config.shapes)
        for variant in config.variants
    ]

    def work(point):
        si, shape, variant = point
        return _run_point(gpu, config.precision, shape, variant,
                          config.params_override, config.seed, si, config.workers)

    if config.workers > 1 and points:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(work, points))
    else:
        rows = [work(p) for p in points]
    _write_csv(config.out_path, _RUN_HEADER, rows)
    if config.plot:
        _plot_run(config.out_path)
    return 0


_TUNE_HEADER = [
    "gpu", "precision", "m", "k", "n", "branch", "bound_class", "t1", "t2", "t3", "tcf",
    "t1_guarded", "predicted_time", "gd_branch", "gd_t2", "gd_t3", "gd_objective",
    "profiled_override",
]


def cmd_tune(gpu_name: str, shape: tuple[int, int, int], precision: Precision,
             out_path: str, catalog=None, plot: bool = False) -> int:
    catalog = catalog or load_catalog()
    gpu = catalog.get(gpu_name)
    if gpu is None:
        raise KeyError(f"unknown GPU {gpu_name!r}")
    m, k, n = shape
    result = tune_tsm2r(m, k, n, gpu, precision)
    sel = select_t1(m, k, n, result, gpu, precision)
    row = [gpu.name, precision.value, m, k, n, result.branch.value, result.bound_class.value,
           sel.t1, result.params.t2, result.params.t3, result.params.tcf, sel.guarded,
           result.predicted_time, result.gd_branch.value, result.gd_params.t2,
           result.gd_params.t3, result.gd_objective, result.profiled_override]
    _write_csv(out_path, _TUNE_HEADER, [row])
    trace_path = _companion(out_path, ".trace.csv")
    _write_csv(trace_path, ["iteration", "t2", "t3", "objective"],
               [list(entry) for entry in result.objective_trace])
    return 0


def _companion(path: str, suffix: str) -> str:
    root, _ = os.path.splitext(path)
    return root + suffix


_MODEL_HEADER = [
    "gpu", "precision", "t2_threshold", "published_threshold", "discrepancy",
    "discrepancy_flagged", "bound_n2", "bound_n4", "bound_n8", "bound_n16",
]

# representative large regular matrix for original-problem classification
_MODEL_MK = 30720
_MODEL_NS = (2, 4, 8, 16)
# flag formula-vs-published gaps larger than this
_DISCREPANCY_FLAG_AT = 2.0


def cmd_model(precision: Precision, out_path: str, gpu_name: Optional[str] = None,
              catalog=None, plot: bool = False) -> int:
    catalog = catalog or load_catalog()
    if gpu_name is not None and gpu_name not in catalog:
        raise KeyError(f"unknown GPU {gpu_name!r}")
    names = [gpu_name] if gpu_name else sorted(catalog)
    rows = []
    for name in names:
        gpu = catalog[name]
        thr = t2_threshold(gpu, precision)
        quoted = PUBLISHED_THRESHOLDS_DOUBLE.get(name) if precision is Precision.DOUBLE else None
        disc = threshold_discrepancy(gpu, precision)
        flagged = disc is not None and abs(disc) > _DISCREPANCY_FLAG_AT
        row = [name, precision.value, thr, quoted, disc, flagged]
        for n in _MODEL_NS:
            params = KernelParams(t1=128, t2=n, t3=4)
            row.append(classify_bound(_MODEL_MK, _MODEL_MK, n, params, gpu, precision).value)
        rows.append(row)
    _write_csv(out_path, _MODEL_HEADER, rows)
    return 0


_SWEEP_HEADER = [
    "gpu", "precision", "variant", "m", "k", "n", "t1", "t2", "t3", "tcf",
    "predicted_time", "b_loads_total", "b_loads_per_thread", "c_loads_total",
    "c_stores_total", "best_tcf",
]

_SWEEP_MS = (10**4, 10**5, 10**6, 10**7)


def cmd_sweep_tcf(gpu_name: str, k: int, n: int, precision: Precision, out_path: str,
                  catalog=None, plot: bool = False) -> int:
    catalog = catalog or load_catalog()
    gpu = catalog.get(gpu_name)
    if gpu is None:
        raise KeyError(f"unknown GPU {gpu_name!r}")
    prof = gpu.profiled(precision)
    t1 = prof.t1 if prof else 128
    t3 = min(prof.t3 if prof else 4, t1)
    rows = []
    for m in _SWEEP_MS:
        best = select_tcf(m, k, n, gpu, precision)
        # reference row: the plain prefetched kernel (tcf = 1 degenerate)
        ref = KernelParams(t1=t1, t2=n, t3=t3, tcf=1, variant=Variant.V3)
        counts = count_expected_loads(Variant.V3, m, k, n, ref)
        rows.append([gpu.name, precision.value, Variant.V3.value, m, k, n, t1, n, t3, 1,
                     predict_time(m, k, n, ref, gpu, precision, variant=Variant.V3),
                     counts.loads["B"], counts.per_thread_loads["B"],
                     counts.loads["C"], counts.stores["C"], best])
        for variant in (Variant.L_OPT1, Variant.L_OPT2):
            tcf = 1
            while tcf <= 64:
                params = KernelParams(t1=t1, t2=n, t3=t3, tcf=tcf, variant=variant)
                counts = count_expected_loads(variant, m, k, n, params)
                rows.append([gpu.name, precision.value, variant.value, m, k, n, t1, n, t3, tcf,
                             predict_time(m, k, n, params, gpu, precision, variant=variant),
                             counts.loads["B"], counts.per_thread_loads["B"],
                             counts.loads["C"], counts.stores["C"], best])
                tcf *= 2
    _write_csv(out_path, _SWEEP_HEADER, rows)
    if plot:
        _plot_sweep(out_path)
    return 0


# ---------------------------------------------------------------------------
# plotting (pure functions of the written CSV; failures never fail the run)


def _plot_run(csv_path: str) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        rows = [r for r in rows if not r["error"]]
        if not rows:
            return
        labels = [f"{r['m']}x{r['k']}x{r['n']}/{r['variant']}" for r in rows]
        times = [float(r["predicted_time"]) for r in rows]
        fig, ax = plt.subplots(figsize=(max(6, len(rows) * 0.6), 4))
        ax.bar(range(len(rows)), times)
        ax.set_xticks(range(len(rows)), labels, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("predicted time (s)")
        fig.tight_layout()
        fig.savefig(_companion(csv_path, ".png"), dpi=120)
        plt.close(fig)
    except Exception as exc:
        warnings.warn(f"plot generation failed: {exc}")


def _plot_sweep(csv_path: str) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        fig, ax = plt.subplots(figsize=(7, 4.5))
        opt1 = [r for r in rows if r["variant"] == "l-opt1"]
        for tcf in sorted({int(r["tcf"]) for r in opt1}):
            pts = [(int(r["m"]), float(r["predicted_time"])) for r in opt1 if int(r["tcf"]) == tcf]
            pts.sort()
            ax.loglog([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"tcf={tcf}")
        ax.set_xlabel("m")
        ax.set_ylabel("predicted time (s)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(_companion(csv_path, ".png"), dpi=120)
        plt.close(fig)
    except Exception as exc:
        warnings.warn(f"plot generation failed: {exc}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gpu", required=False, help="GPU name from the catalog")
    p.add_argument("--precision", choices=["single", "double"], default="double")
    p.add_argument("--out", default=None, help="output CSV path")
    p.add_argument("--plot", action="store_true", help="also write a PNG next to the CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsgemm", description="tall-and-skinny GEMM laboratory"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate kernels and emit counters")
    _add_common(p_run)
    p_run.add_argument("--m", type=int, action="append", required=True)
    p_run.add_argument("--k", type=int, action="append", required=True)
    p_run.add_argument("--n", type=int, action="append", required=True)
    p_run.add_argument("--variant", action="append", default=None,
                       help="kernel variant (repeatable); none = header-only CSV")
    for flag in ("t1", "t2", "t3", "tcf"):
        p_run.add_argument(f"--{flag}", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--workers", type=int, default=1)

    p_tune = sub.add_parser("tune", help="optimize kernel parameters for one shape")
    _add_common(p_tune)
    p_tune.add_argument("--m", type=int, required=True)
    p_tune.add_argument("--k", type=int, required=True)
    p_tune.add_argument("--n", type=int, required=True)

    p_model = sub.add_parser("model", help="threshold and boundedness table")
    _add_common(p_model)

    p_sweep = sub.add_parser("sweep-tcf", help="thread-count-factor sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--k", type=int, default=16)
    p_sweep.add_argument("--n", type=int, default=16)

    return parser


def _shapes_from_args(args) -> List[tuple[int, int, int]]:
    ms, ks, ns = args.m, args.k, args.n
    length = max(len(ms), len(ks), len(ns))

    def expand(xs):
        if len(xs) == 1:
            return xs * length
        if len(xs) != length:
            raise ValueError("--m/--k/--n lists must have equal length (or length 1)")
        return xs

    return list(zip(expand(ms), expand(ks), expand(ns)))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    precision = Precision.parse(args.precision)
    try:
        if args.command == "run":
            if not args.gpu:
                raise ValueError("run requires --gpu")
            variants = [Variant.parse(v) for v in (args.variant or [])]
            override = {f: getattr(args, f) for f in ("t1", "t2", "t3", "tcf")
                        if getattr(args, f) is not None}
            config = ExperimentConfig(
                gpu_name=args.gpu,
                precision=precision,
                shapes=_shapes_from_args(args),
                variants=variants,
                params_override=override,
                seed=args.seed,
                out_path=args.out or "run.csv",
                workers=args.workers,
                plot=args.plot,
            )
            return cmd_run(config)
        if args.command == "tune":
            if not args.gpu:
                raise ValueError("tune requires --gpu")
            return cmd_tune(args.gpu, (args.m, args.k, args.n), precision,
                            args.out or "tune.csv", plot=args.plot)
        if args.command == "model":
            return cmd_model(precision, args.out or "model.csv",
                             gpu_name=args.gpu, plot=args.plot)
        if args.command == "sweep-tcf":
            if not args.gpu:
                raise ValueError("sweep-tcf requires --gpu")
            return cmd_sweep_tcf(args.gpu, args.k, args.n, precision,
                                 args.out or "sweep_tcf.csv", plot=args.plot)
        raise ValueError(f"unknown command {args.command}")
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
