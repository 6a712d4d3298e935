"""Domain types shared by the simulator, performance model, tuner, and CLI.

Everything here is immutable after construction so instances can be shared
freely across concurrent workers. Matrices are dense column-major, the only
storage layout the kernels understand.
"""

from __future__ import annotations

import enum
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

BYTES_PER_REGISTER = 4


class Precision(enum.Enum):
    """Element precision of a matrix and of a kernel launch."""

    SINGLE = "single"
    DOUBLE = "double"

    @property
    def bytes_per_element(self) -> int:
        return 4 if self is Precision.SINGLE else 8

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.SINGLE else np.float64)

    @property
    def eps(self) -> float:
        return float(np.finfo(self.dtype).eps)

    @classmethod
    def parse(cls, text: str) -> "Precision":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown precision {text!r}; expected 'single' or 'double'")


class ShapeClass(enum.Enum):
    """Advisory classification of a (m, k, n) problem."""

    TSM2R = "tsm2r"   # m ~ k >> n: large matrix times tall-and-skinny
    TSM2L = "tsm2l"   # m >> k ~ n: tall-and-skinny times small matrix
    GENERAL = "general"


class Variant(enum.Enum):
    """The six kernel algorithms."""

    V0 = "v0"          # inner product, one thread per row
    V1 = "v1"          # outer product with register accumulators
    V2 = "v2"          # outer product + shared-memory B tile
    V3 = "v3"          # V2 + register double buffering of A and B
    L_OPT1 = "l-opt1"  # row-tile loop, one full pass per tile
    L_OPT2 = "l-opt2"  # interleaved row tiles with C prefetch

    @classmethod
    def parse(cls, text: str) -> "Variant":
        t = text.lower().replace("_", "-")
        for v in cls:
            if v.value == t:
                return v
        raise ValueError(f"unknown kernel variant {text!r}")

    @property
    def uses_shared_tile(self) -> bool:
        return self in (Variant.V2, Variant.V3, Variant.L_OPT1, Variant.L_OPT2)

    @property
    def is_tsm2l(self) -> bool:
        return self in (Variant.L_OPT1, Variant.L_OPT2)


class Matrix:
    """Dense column-major matrix with a flat backing store.

    Element (i, j) lives at flat index ``i + j * rows``, 0-based. The backing
    array is frozen; operations that "modify" a matrix return a new one.
    """

    __slots__ = ("rows", "cols", "storage", "precision")

    def __init__(self, rows: int, cols: int, storage: np.ndarray, precision: Precision):
        if rows < 1 or cols < 1:
            raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
        storage = np.asarray(storage, dtype=precision.dtype).reshape(-1)
        if storage.size != rows * cols:
            raise ValueError(
                f"storage length {storage.size} != rows*cols = {rows * cols}"
            )
        storage = storage.copy()
        storage.flags.writeable = False
        self.rows = rows
        self.cols = cols
        self.storage = storage
        self.precision = precision

    @classmethod
    def zeros(cls, rows: int, cols: int, precision: Precision) -> "Matrix":
        return cls(rows, cols, np.zeros(rows * cols, dtype=precision.dtype), precision)

    @classmethod
    def from_2d(cls, array, precision: Precision) -> "Matrix":
        a = np.asarray(array, dtype=precision.dtype)
        if a.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(a.shape[0], a.shape[1], a.reshape(-1, order="F"), precision)

    @classmethod
    def random(cls, rows: int, cols: int, precision: Precision, rng: np.random.Generator) -> "Matrix":
        # uniform in [0, 1), matching the experiment initialization convention
        data = rng.random(rows * cols, dtype=np.float64).astype(precision.dtype)
        return cls(rows, cols, data, precision)

    @classmethod
    def identity(cls, n: int, precision: Precision) -> "Matrix":
        return cls.from_2d(np.eye(n, dtype=precision.dtype), precision)

    def get(self, i: int, j: int) -> float:
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(f"({i}, {j}) out of bounds for {self.rows}x{self.cols}")
        return float(self.storage[i + j * self.rows])

    def with_element(self, i: int, j: int, value: float) -> "Matrix":
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(f"({i}, {j}) out of bounds for {self.rows}x{self.cols}")
        data = self.storage.copy()
        data[i + j * self.rows] = value
        return Matrix(self.rows, self.cols, data, self.precision)

    def column(self, j: int) -> np.ndarray:
        return self.storage[j * self.rows:(j + 1) * self.rows]

    def to_2d(self) -> np.ndarray:
        return self.storage.reshape((self.rows, self.cols), order="F")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Matrix)
            and self.rows == other.rows
            and self.cols == other.cols
            and self.precision is other.precision
            and bool(np.array_equal(self.storage, other.storage))
        )

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols}, {self.precision.value})"


@dataclass(frozen=True)
class KernelParams:
    """Tuning tuple for a kernel launch.

    t1: threads per block and rows of the shared B tile.
    t2: columns of C processed per pass.
    t3: elements of A fetched per inner step.
    tcf: thread-count factor (row tiles per thread, TSM2L only).
    """

    t1: int = 128
    t2: int = 4
    t3: int = 4
    tcf: int = 1
    variant: Variant = Variant.V3

    def __post_init__(self):
        for name in ("t1", "t2", "t3", "tcf"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.t3 > self.t1:
            raise ValueError(f"t3 ({self.t3}) must not exceed t1 ({self.t1})")

    def validate_for(self, m: int, k: int, n: int, warp_size: int = 32) -> None:
        """Checks that the params are usable for a concrete problem."""
        if self.t2 > n:
            raise ValueError(f"t2 ({self.t2}) must not exceed n ({n})")
        if self.t1 % warp_size != 0:
            raise ValueError(f"t1 ({self.t1}) must be a multiple of warp size {warp_size}")
        if self.tcf > 1 and not self.variant.is_tsm2l:
            raise ValueError("tcf > 1 is only meaningful for the TSM2L variants")


@dataclass(frozen=True)
class LatencyConstants:
    """Pipeline constants consumed by the performance model.

    These come from offline profiling on real hardware; the shipped defaults
    are calibration knobs, not measurements, and the catalog may override
    them per GPU.
    """

    latency_mem: float = 400.0   # global-memory access latency, cycles
    latency_comp: float = 8.0    # FMA latency, cycles
    reg_overhead: int = 32       # fixed per-thread register cost of kernel setup

    def __post_init__(self):
        if self.latency_mem <= 0 or self.latency_comp <= 0 or self.reg_overhead <= 0:
            raise ValueError("latency constants must be strictly positive")
        if self.latency_mem <= self.latency_comp:
            raise ValueError("latency_mem must exceed latency_comp")


@dataclass(frozen=True)
class ProfiledParams:
    """Kernel parameters measured offline on real hardware for one GPU.

    The autotuner's analytic objective cannot see scheduling effects that the
    original offline profiling could, so a catalog entry may pin the profiled
    winners; the gradient-descent result is still computed and reported
    alongside. ``t2_follows_n`` means the profiled t2 tracked the problem n.
    """

    t1: int
    t3: int
    t2: int = 0
    t2_follows_n: bool = False
    prefer_compute: bool = False

    def resolve_t2(self, n: int) -> int:
        return min(n, self.t2) if not self.t2_follows_n else n


@dataclass(frozen=True)
class GpuSpec:
    """Hardware description of one GPU, as loaded from the catalog."""

    name: str
    peak_gflops_single: float
    peak_gflops_double: float
    mem_bandwidth: float          # GB/s
    num_sms: int
    core_clock: float             # MHz
    regs_per_sm: int              # 32-bit registers
    shared_per_sm: int            # bytes
    hw_max_threads_per_sm: int
    warp_size: int = 32
    num_banks: int = 32
    transaction_bytes: int = 128
    latency: LatencyConstants = field(default_factory=LatencyConstants)
    profiled_single: Optional[ProfiledParams] = None
    profiled_double: Optional[ProfiledParams] = None

    def __post_init__(self):
        numeric = {
            "peak_gflops_single": self.peak_gflops_single,
            "peak_gflops_double": self.peak_gflops_double,
            "mem_bandwidth": self.mem_bandwidth,
            "num_sms": self.num_sms,
            "core_clock": self.core_clock,
            "regs_per_sm": self.regs_per_sm,
            "shared_per_sm": self.shared_per_sm,
            "hw_max_threads_per_sm": self.hw_max_threads_per_sm,
            "warp_size": self.warp_size,
            "num_banks": self.num_banks,
            "transaction_bytes": self.transaction_bytes,
        }
        for key, value in numeric.items():
            if value <= 0:
                raise ValueError(f"{key} must be strictly positive, got {value}")
        for key in ("warp_size", "num_banks"):
            v = getattr(self, key)
            if v & (v - 1) != 0:
                raise ValueError(f"{key} must be a power of two, got {v}")
        if self.transaction_bytes not in (32, 128):
            raise ValueError(f"transaction_bytes must be 32 or 128, got {self.transaction_bytes}")

    def peak_gflops(self, precision: Precision) -> float:
        return self.peak_gflops_single if precision is Precision.SINGLE else self.peak_gflops_double

    def peak_flops(self, precision: Precision) -> float:
        return self.peak_gflops(precision) * 1e9

    @property
    def mem_bandwidth_bytes(self) -> float:
        return self.mem_bandwidth * 1e9

    @property
    def core_clock_hz(self) -> float:
        return self.core_clock * 1e6

    def profiled(self, precision: Precision) -> Optional[ProfiledParams]:
        return self.profiled_single if precision is Precision.SINGLE else self.profiled_double


# classification factor: "much larger" means at least DOMINANCE_FACTOR times
# larger, "comparable" means within it.
DOMINANCE_FACTOR = 16


def validate_problem(m: int, k: int, n: int, variant: Optional[Variant] = None) -> ShapeClass:
    """Classifies a problem shape; classification is advisory and never rejects.

    Raises only when a dimension is non-positive.
    """
    for name, d in (("m", m), ("k", k), ("n", n)):
        if d < 1:
            raise ValueError(f"dimension {name} must be >= 1, got {d}")
    f = DOMINANCE_FACTOR
    if max(m, k) <= f * min(m, k) and min(m, k) >= f * n:
        return ShapeClass.TSM2R
    if m >= f * max(k, n) and max(k, n) <= f * min(k, n):
        return ShapeClass.TSM2L
    return ShapeClass.GENERAL


_REQUIRED_KEYS = (
    "name",
    "peak_gflops_single",
    "peak_gflops_double",
    "mem_bandwidth",
    "num_sms",
    "core_clock",
    "regs_per_sm",
    "shared_per_sm",
    "hw_max_threads_per_sm",
)

_OPTIONAL_DEFAULTS = {"warp_size": 32, "num_banks": 32, "transaction_bytes": 128}

_LATENCY_KEYS = ("latency_mem", "latency_comp", "reg_overhead")

_KNOWN_EXTRA_KEYS = {"sources", "profiled_single", "profiled_double"} | set(_LATENCY_KEYS)


def _parse_profiled(entry: dict) -> ProfiledParams:
    t2 = entry.get("t2", "n")
    follows = isinstance(t2, str)
    if follows and t2 != "n":
        raise ValueError(f"profiled t2 must be an integer or 'n', got {t2!r}")
    return ProfiledParams(
        t1=int(entry["t1"]),
        t3=int(entry["t3"]),
        t2=0 if follows else int(t2),
        t2_follows_n=follows,
        prefer_compute=entry.get("branch", "memory") == "compute",
    )


def load_gpu_spec(source) -> GpuSpec:
    """Builds a GpuSpec from a parsed config document (dict) or a YAML path."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    else:
        doc = dict(source)
    if not isinstance(doc, dict):
        raise ValueError("GPU spec document must be a mapping")

    missing = [key for key in _REQUIRED_KEYS if key not in doc]
    if missing:
        raise KeyError(f"GPU spec missing required keys: {', '.join(missing)}")

    known = set(_REQUIRED_KEYS) | set(_OPTIONAL_DEFAULTS) | _KNOWN_EXTRA_KEYS
    for key in doc:
        if key not in known:
            warnings.warn(f"GPU spec {doc.get('name', '?')}: ignoring unknown key {key!r}")

    latency_kwargs = {k: doc[k] for k in _LATENCY_KEYS if k in doc}
    fields = {key: doc[key] for key in _REQUIRED_KEYS}
    for key, default in _OPTIONAL_DEFAULTS.items():
        fields[key] = doc.get(key, default)
    return GpuSpec(
        latency=LatencyConstants(**latency_kwargs),
        profiled_single=_parse_profiled(doc["profiled_single"]) if "profiled_single" in doc else None,
        profiled_double=_parse_profiled(doc["profiled_double"]) if "profiled_double" in doc else None,
        **fields,
    )


CATALOG_ENV_VAR = "TSGEMM_GPU_CATALOG"


def catalog_dir() -> Path:
    override = os.environ.get(CATALOG_ENV_VAR)
    if override:
        return Path(override)
    return Path(__file__).parent / "data" / "gpus"


def load_catalog(directory: Optional[Path] = None) -> dict[str, GpuSpec]:
    """Loads every GPU spec file in the catalog directory, keyed by name."""
    directory = Path(directory) if directory is not None else catalog_dir()
    specs: dict[str, GpuSpec] = {}
    for path in sorted(directory.glob("*.yaml")):
        spec = load_gpu_spec(path)
        specs[spec.name] = spec
    if not specs:
        raise FileNotFoundError(f"no GPU spec files found in {directory}")
    return specs


def get_gpu(name: str, directory: Optional[Path] = None) -> GpuSpec:
    specs = load_catalog(directory)
    try:
        return specs[name]
    except KeyError:
        raise KeyError(f"unknown GPU {name!r}; catalog has: {', '.join(sorted(specs))}")
