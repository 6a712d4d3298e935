import numpy as np
import pytest

from tsgemm.core import KernelParams, Matrix, Precision, Variant
from tsgemm.oracle import count_expected_loads, max_rel_error, naive_gemm

from conftest import random_problem


def test_identity_times_b():
    rng = np.random.default_rng(0)
    A = Matrix.identity(3, Precision.DOUBLE)
    B = Matrix.random(3, 2, Precision.DOUBLE, rng)
    C0 = Matrix.zeros(3, 2, Precision.DOUBLE)
    assert np.array_equal(naive_gemm(A, B, C0).storage, B.storage)


def test_scalar_fma():
    A = Matrix.from_2d([[2.0]], Precision.DOUBLE)
    B = Matrix.from_2d([[3.0]], Precision.DOUBLE)
    C0 = Matrix.from_2d([[5.0]], Precision.DOUBLE)
    assert naive_gemm(A, B, C0).get(0, 0) == 11.0


def _reordered_reference(A, B, C0):
    """Independently written check: accumulate the k loop in reverse."""
    m, k, n = A.rows, A.cols, B.cols
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = float(C0.get(i, j))
            for l in reversed(range(k)):
                acc += float(A.get(i, l)) * float(B.get(l, j))
            out[i, j] = acc
    return Matrix.from_2d(out, A.precision)


def test_reordered_loop_cross_check():
    A, B, C0 = random_problem(5, 4, 3, seed=77)
    ours = naive_gemm(A, B, C0)
    theirs = _reordered_reference(A, B, C0)
    assert max_rel_error(ours, theirs) <= 4 * np.finfo(np.float64).eps


def test_single_precision_accumulates_in_double():
    # values chosen so float32 accumulation loses the small addend
    A = Matrix.from_2d([[1.0, 1.0]], Precision.SINGLE)
    B = Matrix.from_2d([[2.0 ** 14], [2.0 ** -11]], Precision.SINGLE)
    C0 = Matrix.zeros(1, 1, Precision.SINGLE)
    got = naive_gemm(A, B, C0).get(0, 0)
    expected = np.float32(np.float64(2.0 ** 14) + np.float64(2.0 ** -11))
    assert got == expected


def test_dimension_mismatch():
    A, B, _ = random_problem(4, 4, 2)
    bad = Matrix.zeros(4, 3, Precision.DOUBLE)
    with pytest.raises(ValueError):
        naive_gemm(A, B, bad)


# -- closed-form counts --------------------------------------------------------


def test_counts_v1_single_pass():
    counts = count_expected_loads(Variant.V1, 64, 64, 4, KernelParams(t1=32, t2=4, t3=4))
    assert counts.loads["A"] == 4096
    assert counts.exact


def test_counts_v0():
    counts = count_expected_loads(Variant.V0, 64, 64, 4, KernelParams(t1=32, t2=4, t3=4))
    assert counts.loads["A"] == 16384


def test_counts_v1_b_matches_v0():
    # the outer product adds no B traffic over the inner product
    p = KernelParams(t1=32, t2=4, t3=4)
    v0 = count_expected_loads(Variant.V0, 64, 64, 4, p)
    v1 = count_expected_loads(Variant.V1, 64, 64, 4, p)
    assert v1.loads["B"] == v0.loads["B"] == 64 * 64 * 4


def test_counts_v2_b_ratio_t1():
    p = KernelParams(t1=64, t2=4, t3=4)
    v1 = count_expected_loads(Variant.V1, 256, 256, 4, p)
    v2 = count_expected_loads(Variant.V2, 256, 256, 4, p)
    assert v1.loads["B"] / v2.loads["B"] == 64


def test_counts_opt1_per_thread_b_factor():
    base = count_expected_loads(
        Variant.L_OPT1, 4096, 8, 8, KernelParams(t1=128, t2=8, t3=4, tcf=1, variant=Variant.L_OPT1)
    )
    quad = count_expected_loads(
        Variant.L_OPT1, 4096, 8, 8, KernelParams(t1=128, t2=8, t3=4, tcf=4, variant=Variant.L_OPT1)
    )
    assert quad.per_thread_loads["B"] == 4 * base.per_thread_loads["B"]


def test_counts_opt2_degenerate_single_tile():
    # k < t1: each C element loaded once per pass of its column group
    counts = count_expected_loads(
        Variant.L_OPT2, 4096, 16, 16, KernelParams(t1=128, t2=16, t3=4, tcf=4, variant=Variant.L_OPT2)
    )
    assert counts.loads["C"] / (4096 * 16) == 1


def test_counts_opt2_formula_with_passes():
    # tcf=1, k=t1: the published round-trip formula gives n/t2 per element
    counts = count_expected_loads(
        Variant.L_OPT2, 512, 128, 8, KernelParams(t1=128, t2=4, t3=4, tcf=1, variant=Variant.L_OPT2)
    )
    assert counts.loads["C"] / (512 * 8) == 8 / 4


def test_counts_inexact_flag():
    counts = count_expected_loads(Variant.V1, 100, 64, 4, KernelParams(t1=32, t2=4, t3=4))
    assert not counts.exact
    counts = count_expected_loads(Variant.V1, 128, 64, 3, KernelParams(t1=32, t2=2, t3=2))
    assert not counts.exact
