import math

import numpy as np
import pytest

from tsgemm.core import KernelParams, Matrix, Precision, Variant
from tsgemm.kernels import run_native, simulate, structural_registers
from tsgemm.oracle import max_rel_error, naive_gemm

from conftest import random_problem


def _params(variant, t1=32, t2=4, t3=4, tcf=1):
    return KernelParams(t1=t1, t2=t2, t3=t3, tcf=tcf, variant=variant)


# -- trivial identities -------------------------------------------------------


def test_v1_identity_gives_b(k40c):
    rng = np.random.default_rng(1)
    A = Matrix.identity(32, Precision.DOUBLE)
    B = Matrix.random(32, 2, Precision.DOUBLE, rng)
    C0 = Matrix.zeros(32, 2, Precision.DOUBLE)
    out, _ = simulate(k40c, Variant.V1, A, B, C0, _params(Variant.V1, t2=2))
    assert np.array_equal(out.storage, B.storage)


def test_v0_zero_b_annihilates(k40c):
    A, _, C0 = random_problem(64, 64, 4, seed=2)
    B = Matrix.zeros(64, 4, Precision.DOUBLE)
    out, _ = simulate(k40c, Variant.V0, A, B, C0, _params(Variant.V0))
    assert np.all(out.storage == 0.0)


def test_v3_identity_case(k40c):
    rng = np.random.default_rng(3)
    A = Matrix.identity(64, Precision.DOUBLE)
    B = Matrix.random(64, 2, Precision.DOUBLE, rng)
    C0 = Matrix.zeros(64, 2, Precision.DOUBLE)
    out, _ = simulate(k40c, Variant.V3, A, B, C0, _params(Variant.V3, t2=2))
    assert np.array_equal(out.storage, B.storage)


# -- instruction counting ------------------------------------------------------


def test_v0_a_loads_mkn(k40c):
    A, B, C0 = random_problem(64, 64, 4)
    _, stats = simulate(k40c, Variant.V0, A, B, C0, _params(Variant.V0))
    assert stats.array("A").load_instructions == 64 * 64 * 4  # 16384


def test_v1_a_loads_single_pass(k40c):
    A, B, C0 = random_problem(64, 64, 4)
    _, stats = simulate(k40c, Variant.V1, A, B, C0, _params(Variant.V1, t2=4))
    assert stats.array("A").load_instructions == 64 * 64  # 4096: touched once


def test_v1_a_loads_two_passes(k40c):
    A, B, C0 = random_problem(64, 64, 4)
    _, stats = simulate(k40c, Variant.V1, A, B, C0, _params(Variant.V1, t2=2))
    assert stats.array("A").load_instructions == 64 * 64 * 2  # m*k*(n/t2)


def test_v2_b_reduction_factor_is_t1(k40c):
    A, B, C0 = random_problem(256, 256, 4, seed=9)
    p = _params(Variant.V1, t1=64, t2=4)
    _, stats_v1 = simulate(k40c, Variant.V1, A, B, C0, p)
    _, stats_v2 = simulate(k40c, Variant.V2, A, B, C0, _params(Variant.V2, t1=64, t2=4))
    ratio = stats_v1.array("B").load_instructions / stats_v2.array("B").load_instructions
    assert ratio == 64  # == t1


def test_v2_b_efficiency_100(k40c):
    A, B, C0 = random_problem(256, 256, 4, seed=9)
    _, stats = simulate(k40c, Variant.V2, A, B, C0, _params(Variant.V2, t1=64, t2=4))
    assert stats.gld_efficiency("B") == 1.0
    assert stats.shared_bank_conflict_excess == 0


def test_v3_bitwise_equals_v2(k40c):
    A, B, C0 = random_problem(256, 256, 8, seed=10)
    p2 = _params(Variant.V2, t1=128, t2=8, t3=4)
    p3 = _params(Variant.V3, t1=128, t2=8, t3=4)
    c2, s2 = simulate(k40c, Variant.V2, A, B, C0, p2)
    c3, s3 = simulate(k40c, Variant.V3, A, B, C0, p3)
    assert np.array_equal(c2.storage, c3.storage)
    assert s2.array("A").load_instructions == s3.array("A").load_instructions


def test_v3_barriers_two_per_j_step(k40c):
    m, k, n, t1, t2 = 256, 256, 8, 64, 8
    A, B, C0 = random_problem(m, k, n, seed=4)
    _, stats = simulate(k40c, Variant.V3, A, B, C0, _params(Variant.V3, t1=t1, t2=t2))
    blocks = m // t1
    passes = n // t2
    jsteps = k // t1
    assert stats.barrier_count == 2 * blocks * passes * jsteps


def test_v3_matches_oracle_large(k40c):
    A, B, C0 = random_problem(1024, 1024, 16, seed=12)
    p = _params(Variant.V3, t1=128, t2=16, t3=4)
    out = run_native(Variant.V3, A, B, C0, p)
    err = max_rel_error(out, naive_gemm(A, B, C0))
    assert err <= 8 * 1024 * np.finfo(np.float64).eps


def test_native_matches_simulated_bitwise(k40c):
    for variant in Variant:
        tcf = 2 if variant.is_tsm2l else 1
        A, B, C0 = random_problem(128, 64, 4, seed=21)
        p = _params(variant, t1=32, t2=4, t3=4, tcf=tcf)
        sim_c, _ = simulate(k40c, variant, A, B, C0, p)
        nat_c = run_native(variant, A, B, C0, p)
        assert np.array_equal(sim_c.storage, nat_c.storage), variant


# -- TSM2L -----------------------------------------------------------------------


def test_opt1_per_thread_b_factor_is_tcf(k40c):
    m, k, n = 4096, 8, 8
    A, B, C0 = random_problem(m, k, n, seed=6)
    base = _params(Variant.L_OPT1, t1=128, t2=8, t3=4, tcf=1)
    quad = _params(Variant.L_OPT1, t1=128, t2=8, t3=4, tcf=4)
    _, s1 = simulate(k40c, Variant.L_OPT1, A, B, C0, base)
    _, s4 = simulate(k40c, Variant.L_OPT1, A, B, C0, quad)
    per_thread_1 = s1.array("B").load_instructions / m
    per_thread_4 = s4.array("B").load_instructions / (m // 4)
    assert per_thread_4 == 4 * per_thread_1
    # A traffic is unchanged by tcf
    assert s1.array("A").load_instructions == s4.array("A").load_instructions


def test_opt1_tcf1_counters_match_v3(k40c):
    A, B, C0 = random_problem(1024, 16, 16, seed=7)
    p3 = _params(Variant.V3, t1=128, t2=16, t3=4)
    pl = _params(Variant.L_OPT1, t1=128, t2=16, t3=4, tcf=1)
    c3, s3 = simulate(k40c, Variant.V3, A, B, C0, p3)
    cl, sl = simulate(k40c, Variant.L_OPT1, A, B, C0, pl)
    assert np.array_equal(c3.storage, cl.storage)
    for arr in ("A", "B", "C"):
        assert s3.array(arr).load_instructions == sl.array(arr).load_instructions
        assert s3.array(arr).store_instructions == sl.array(arr).store_instructions
    assert s3.barrier_count == sl.barrier_count


def test_opt1_matches_oracle(k40c):
    A, B, C0 = random_problem(2048, 16, 16, seed=8)
    p = _params(Variant.L_OPT1, t1=128, t2=16, t3=4, tcf=2)
    out, _ = simulate(k40c, Variant.L_OPT1, A, B, C0, p)
    err = max_rel_error(out, naive_gemm(A, B, C0))
    assert err <= 8 * 16 * np.finfo(np.float64).eps


def test_opt2_c_loads_per_element(k40c):
    # k < t1 so the j loop runs once: each C element loaded exactly once
    m, k, n = 4096, 16, 16
    A, B, C0 = random_problem(m, k, n, seed=13)
    p = _params(Variant.L_OPT2, t1=128, t2=16, t3=4, tcf=4)
    _, stats = simulate(k40c, Variant.L_OPT2, A, B, C0, p)
    jsteps = math.ceil(k / 128)
    assert stats.array("C").load_instructions == m * n * jsteps
    assert stats.array("C").store_instructions == m * n * jsteps


def test_opt2_multi_tile_c_round_trips(k40c):
    # k spans several t1 tiles: ceil(k/t1) loads and stores per element
    m, k, n = 512, 96, 4
    A, B, C0 = random_problem(m, k, n, seed=14)
    p = _params(Variant.L_OPT2, t1=32, t2=4, t3=4, tcf=2)
    out, stats = simulate(k40c, Variant.L_OPT2, A, B, C0, p)
    jsteps = math.ceil(k / 32)
    assert stats.array("C").load_instructions == m * n * jsteps
    assert stats.array("C").store_instructions == m * n * jsteps
    err = max_rel_error(out, naive_gemm(A, B, C0))
    assert err <= 8 * k * np.finfo(np.float64).eps


def test_opt2_requires_zero_c(k40c):
    A, B, C0 = random_problem(256, 8, 8, seed=15)
    nonzero = Matrix.from_2d(np.ones((256, 8)), Precision.DOUBLE)
    p = _params(Variant.L_OPT2, t1=32, t2=8, t3=4, tcf=2)
    with pytest.raises(ValueError):
        simulate(k40c, Variant.L_OPT2, A, B, nonzero, p)


def test_opt2_matches_oracle(k40c):
    A, B, C0 = random_problem(8192, 8, 8, seed=16)
    p = _params(Variant.L_OPT2, t1=128, t2=8, t3=4, tcf=8)
    out, _ = simulate(k40c, Variant.L_OPT2, A, B, C0, p)
    err = max_rel_error(out, naive_gemm(A, B, C0))
    assert err <= 8 * 8 * np.finfo(np.float64).eps


# -- properties -----------------------------------------------------------------


def test_monotone_a_traffic_v1_le_v0(k40c):
    for seed, (m, k, n, t2) in enumerate([(64, 64, 4, 2), (96, 64, 8, 4), (64, 32, 2, 1)]):
        A, B, C0 = random_problem(m, k, n, seed=seed)
        _, s0 = simulate(k40c, Variant.V0, A, B, C0, _params(Variant.V0, t2=t2))
        _, s1 = simulate(k40c, Variant.V1, A, B, C0, _params(Variant.V1, t2=t2))
        assert s1.array("A").bytes_transferred <= s0.array("A").bytes_transferred


def test_a_traffic_equal_only_for_unit_n_and_t2(k40c):
    # with n = t2 = 1 the outer product degenerates to the inner product
    A, B, C0 = random_problem(64, 64, 1, seed=50)
    p0 = _params(Variant.V0, t2=1)
    p1 = _params(Variant.V1, t2=1)
    _, s0 = simulate(k40c, Variant.V0, A, B, C0, p0)
    _, s1 = simulate(k40c, Variant.V1, A, B, C0, p1)
    assert s1.array("A").bytes_transferred == s0.array("A").bytes_transferred
    c0, _ = simulate(k40c, Variant.V0, A, B, C0, p0)
    c1, _ = simulate(k40c, Variant.V1, A, B, C0, p1)
    assert np.array_equal(c0.storage, c1.storage)


def test_opt2_multi_pass_correctness(k40c):
    # t2 < n: several column passes through the interleaved row-tile schedule
    A, B, C0 = random_problem(1024, 16, 8, seed=51)
    p = _params(Variant.L_OPT2, t1=64, t2=4, t3=4, tcf=4)
    out, stats = simulate(k40c, Variant.L_OPT2, A, B, C0, p)
    err = max_rel_error(out, naive_gemm(A, B, C0))
    assert err <= 8 * 16 * np.finfo(np.float64).eps
    # each element round-trips once per j step of the pass owning its column
    assert stats.array("C").load_instructions == 1024 * 8 * 1


def test_ragged_shapes_match_oracle(k40c):
    rng = np.random.default_rng(99)
    checked = 0
    for _ in range(20):
        m = int(rng.integers(33, 700))
        k = int(rng.integers(33, 700))
        n = int(rng.choice([2, 4, 8, 16]))
        if m % 32 == 0:
            m += 1
        if k % 32 == 0:
            k += 3
        variant = rng.choice([Variant.V2, Variant.V3, Variant.L_OPT1])
        tcf = int(rng.choice([1, 2, 3])) if variant.is_tsm2l else 1
        t2 = int(rng.choice([v for v in (1, 2, 4, 8, 16) if v <= n]))
        p = _params(variant, t1=64, t2=t2, t3=int(rng.choice([1, 2, 4])), tcf=tcf)
        A, B, C0 = random_problem(m, k, n, seed=int(rng.integers(1 << 30)))
        out, _ = simulate(k40c, variant, A, B, C0, p)
        err = max_rel_error(out, naive_gemm(A, B, C0))
        assert err <= 8 * k * np.finfo(np.float64).eps, (variant, m, k, n)
        checked += 1
    assert checked == 20


def test_gld_efficiency_a_100_for_all_variants(k40c):
    for variant in Variant:
        tcf = 2 if variant.is_tsm2l else 1
        A, B, C0 = random_problem(256, 64, 4, seed=31)
        p = _params(variant, t1=32, t2=4, t3=4, tcf=tcf)
        _, stats = simulate(k40c, variant, A, B, C0, p)
        assert stats.gld_efficiency("A") == 1.0, variant


def test_dimension_mismatch_rejected(k40c):
    A, B, _ = random_problem(64, 64, 4)
    bad_c = Matrix.zeros(64, 8, Precision.DOUBLE)
    with pytest.raises(ValueError):
        simulate(k40c, Variant.V1, A, B, bad_c, _params(Variant.V1))


def test_row_major_tile_conflicts(k40c):
    # single precision: a row-major B tile serializes stores t2 ways;
    # column-major stays conflict-free
    m, k, n = 128, 64, 8
    for t2 in (2, 4, 8):
        A, B, C0 = random_problem(m, k, n, Precision.SINGLE, seed=41)
        p = _params(Variant.V2, t1=32, t2=t2, t3=4)
        _, s_col = simulate(k40c, Variant.V2, A, B, C0, p, tile_layout="col")
        _, s_row = simulate(k40c, Variant.V2, A, B, C0, p, tile_layout="row")
        assert s_col.shared_bank_conflict_excess == 0
        # every tile store is one warp-access per (block, j, column) over t1
        # lanes split into t1/32 warps
        blocks = m // 32
        store_accesses = blocks * (k // 32) * (n // t2) * t2 * (32 // 32)
        assert s_row.shared_bank_conflict_excess == store_accesses * (t2 - 1)


def test_structural_registers():
    p = KernelParams(t1=128, t2=8, t3=4)
    assert structural_registers(Variant.V3, p) == 3 * 8 + 2 * 4
    assert structural_registers(Variant.L_OPT2, p) == 4 * 8 + 2 * 4
