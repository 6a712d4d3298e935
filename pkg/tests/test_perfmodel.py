import numpy as np
import pytest

from tsgemm.core import GpuSpec, KernelParams, LatencyConstants, Precision, Variant
from tsgemm.perfmodel import (
    BoundClass,
    classify_bound,
    latency_terms_apply,
    max_occupancy,
    model_report,
    predict_time,
    register_usage,
    t2_threshold,
    threshold_discrepancy,
    utilizations,
)

CONSTS = LatencyConstants()  # shipped defaults: 400 / 8 / 32


def test_register_usage_examples():
    p = KernelParams(t1=128, t2=16, t3=4)
    assert register_usage(p, Precision.DOUBLE, CONSTS) == (48 + 8) * 2 + 32  # 144
    p = KernelParams(t1=128, t2=4, t3=4)
    assert register_usage(p, Precision.SINGLE, CONSTS) == (12 + 8) * 1 + 32  # 52


def test_register_usage_rejects_invalid_params():
    with pytest.raises(ValueError):
        KernelParams(t1=128, t2=0, t3=4)


def _gpu(**overrides):
    base = dict(
        name="X",
        peak_gflops_single=2000,
        peak_gflops_double=1000,
        mem_bandwidth=100,
        num_sms=10,
        core_clock=1000,
        regs_per_sm=65536,
        shared_per_sm=98304,
        hw_max_threads_per_sm=2048,
    )
    base.update(overrides)
    return GpuSpec(**base)


def test_max_occupancy_unconstrained_hits_hw_max():
    gpu = _gpu(regs_per_sm=10**9, shared_per_sm=10**9)
    occ = max_occupancy(KernelParams(t1=128, t2=4, t3=4), Precision.DOUBLE, gpu, CONSTS)
    assert occ == 2048


def test_max_occupancy_v100_like():
    # t2=16, t3=16, double, C=32: R_thread = (48+32)*2+32 = 192,
    # S_thread = 128 B, so min(2048, 65536//192, 98304//128) = 341
    gpu = _gpu(regs_per_sm=65536, shared_per_sm=98304, hw_max_threads_per_sm=2048)
    p = KernelParams(t1=128, t2=16, t3=16)
    assert register_usage(p, Precision.DOUBLE, CONSTS) == 192
    assert max_occupancy(p, Precision.DOUBLE, gpu, CONSTS) == 341


def test_max_occupancy_shared_boundary():
    # exactly one thread's worth of shared memory
    gpu = _gpu(shared_per_sm=4 * 8)
    occ = max_occupancy(KernelParams(t1=128, t2=4, t3=4), Precision.DOUBLE, gpu, CONSTS)
    assert occ == 1


def test_max_occupancy_monotone_in_t2_t3():
    gpu = _gpu()
    prev = None
    for t2 in range(1, 33):
        occ = max_occupancy(KernelParams(t1=128, t2=t2, t3=4), Precision.DOUBLE, gpu, CONSTS)
        if prev is not None:
            assert occ <= prev
        prev = occ
    prev = None
    for t3 in range(1, 65):
        occ = max_occupancy(KernelParams(t1=128, t2=4, t3=t3), Precision.DOUBLE, gpu, CONSTS)
        if prev is not None:
            assert occ <= prev
        prev = occ


THRESHOLDS = {  # formula values against the published approximations
    "K40c": (39.72, 40.0),
    "M40": (5.92, 6.0),
    "P100": (51.11, 50.0),
    "A100": (49.90, 50.0),
}


@pytest.mark.parametrize("name", sorted(THRESHOLDS))
def test_t2_threshold_matches_published(catalog, name):
    formula, quoted = THRESHOLDS[name]
    thr = t2_threshold(catalog[name], Precision.DOUBLE)
    assert thr == pytest.approx(formula, abs=0.01)
    assert abs(thr - quoted) <= 2.0


def test_t2_threshold_v100_discrepancy(catalog):
    thr = t2_threshold(catalog["V100"], Precision.DOUBLE)
    assert thr == pytest.approx(66.67, abs=0.01)
    disc = threshold_discrepancy(catalog["V100"], Precision.DOUBLE)
    assert disc == pytest.approx(thr - 70.0)
    assert abs(disc) > 2.0  # flagged, not silently matched to the rounded value


def test_t2_threshold_k40c_single(catalog):
    thr = t2_threshold(catalog["K40c"], Precision.SINGLE)
    assert thr == pytest.approx(5046 / 288 * 4, rel=1e-12)  # ~70.08


def test_classify_bound_published_cases(catalog):
    cases = [
        ("K40c", 30720, 30720, 16, BoundClass.MEMORY),
        ("M40", 30720, 30720, 16, BoundClass.COMPUTE),
        ("P100", 30720, 30720, 16, BoundClass.MEMORY),
        ("V100", 15360, 16, 16, BoundClass.LATENCY),
        ("V100", 15360, 4, 16, BoundClass.LATENCY),
    ]
    for name, m, k, n, expected in cases:
        params = KernelParams(t1=128, t2=n, t3=4)
        got = classify_bound(m, k, n, params, catalog[name], Precision.DOUBLE)
        assert got is expected, (name, m, k, n)


def test_classify_bound_flips_at_threshold(k40c):
    thr = t2_threshold(k40c, Precision.DOUBLE)  # 39.72
    below = KernelParams(t1=128, t2=39, t3=4)
    above = KernelParams(t1=128, t2=40, t3=4)
    n = 64
    assert classify_bound(30720, 30720, n, below, k40c, Precision.DOUBLE) is BoundClass.MEMORY
    assert classify_bound(30720, 30720, n, above, k40c, Precision.DOUBLE) is BoundClass.COMPUTE
    assert below.t2 < thr < above.t2


def test_utilizations_linear_in_t3(k40c):
    # fixed occupancy isolates the linearity
    u1, _ = utilizations(KernelParams(t1=128, t2=4, t3=1), Precision.DOUBLE, k40c,
                         occupancy=32.0)
    u2, _ = utilizations(KernelParams(t1=128, t2=4, t3=2), Precision.DOUBLE, k40c,
                         occupancy=32.0)
    assert u2 == pytest.approx(2 * u1, rel=1e-12)


def test_utilizations_equality_gives_one(k40c):
    # pick occupancy so bytes in flight exactly equal the Little's-law target
    conc_max = k40c.latency.latency_mem * k40c.mem_bandwidth_bytes / (
        k40c.num_sms * k40c.core_clock_hz
    )
    occ = conc_max / (4 * 8)
    um, _ = utilizations(KernelParams(t1=128, t2=4, t3=4), Precision.DOUBLE, k40c,
                         occupancy=occ)
    assert um == pytest.approx(1.0, rel=1e-12)


def test_utilization_k40c_regression_value(k40c):
    # direct evaluation with shipped constants (t2=16, t3=4, double):
    # occupancy 384, 12288 bytes in flight vs 400 * 288e9/(15*745e6) needed
    p = KernelParams(t1=128, t2=16, t3=4)
    assert max_occupancy(p, Precision.DOUBLE, k40c) == 384
    conc_max = 400 * 288e9 / (15 * 745e6)
    pre_clamp = 384 * 4 * 8 / conc_max
    assert pre_clamp == pytest.approx(1.192, rel=1e-12)
    um, uc = utilizations(p, Precision.DOUBLE, k40c)
    assert um == 1.0
    report = model_report(30720, 30720, 16, p, k40c, Precision.DOUBLE)
    assert report.concurrent_mem == pytest.approx(12288.0)
    assert report.concurrent_max_mem == pytest.approx(conc_max, rel=1e-12)


def test_ratio_r_two_ways(catalog):
    for gpu in catalog.values():
        for t2 in (2, 4, 16):
            p = KernelParams(t1=128, t2=t2, t3=4)
            report = model_report(30720, 30720, 16, p, gpu, Precision.DOUBLE)
            direct = (t2 / 8) * (gpu.mem_bandwidth / gpu.peak_gflops_double)
            assert report.ratio_r == pytest.approx(direct, rel=1e-12)


def test_predict_time_memory_bound_full_utilization(k40c):
    # 30720^2, n=16, t2=16 at util 1: 30720^2 * 8 B / 288 GB/s = 26.2 ms
    p = KernelParams(t1=128, t2=16, t3=4)
    t = predict_time(30720, 30720, 16, p, k40c, Precision.DOUBLE, variant=Variant.V3)
    assert t == pytest.approx(30720 * 30720 * 8 / 288e9, rel=1e-12)
    assert t == pytest.approx(0.0262144, rel=1e-9)


def test_predict_time_halving_t2_doubles_memory_term(k40c):
    p16 = KernelParams(t1=128, t2=16, t3=4)
    p8 = KernelParams(t1=128, t2=8, t3=4)
    t16 = predict_time(30720, 30720, 16, p16, k40c, Precision.DOUBLE, variant=Variant.V3)
    t8 = predict_time(30720, 30720, 16, p8, k40c, Precision.DOUBLE, variant=Variant.V3)
    assert t8 == pytest.approx(2 * t16, rel=1e-12)  # both fully utilized


def test_predict_time_v3_never_exceeds_v2(catalog):
    rng = np.random.default_rng(123)
    gpus = list(catalog.values())
    for _ in range(100):
        gpu = gpus[int(rng.integers(len(gpus)))]
        m = int(rng.integers(1, 64)) * 128
        k = int(rng.integers(1, 64)) * 128
        n = int(rng.choice([2, 4, 8, 16]))
        t2 = int(rng.choice([v for v in (1, 2, 4, 8, 16) if v <= n]))
        t3 = int(rng.choice([1, 2, 4, 8]))
        p = KernelParams(t1=128, t2=t2, t3=t3)
        prec = Precision.DOUBLE if rng.integers(2) else Precision.SINGLE
        t3_time = predict_time(m, k, n, p, gpu, prec, variant=Variant.V3)
        t2_time = predict_time(m, k, n, p, gpu, prec, variant=Variant.V2)
        assert t3_time <= t2_time


def test_latency_terms_flagged(v100):
    p = KernelParams(t1=128, t2=16, t3=4)
    assert latency_terms_apply(15360, 16, 16, p)
    assert not latency_terms_apply(30720, 30720, 16, p)
    report = model_report(15360, 16, 16, p, v100, Precision.DOUBLE, variant=Variant.L_OPT1)
    assert report.latency_terms_added
    assert report.bound_class is BoundClass.LATENCY
