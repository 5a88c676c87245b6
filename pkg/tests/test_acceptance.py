"""Acceptance suite.

Every test checks one criterion at its stated tolerance and records a
PASS/FAIL line that is printed in the terminal summary.  Timing criteria
use the minimum over repetitions to damp scheduler noise.  Criteria 9 and
12 are report-only (they depend on core count and hardware).
"""

import os
import time
from fractions import Fraction

import numpy as np
import pytest

from bbsi import (
    DomainPlan,
    InvalidPlanError,
    KernelRatios,
    autotune,
    benchmark_kernels,
    cost_fused,
    cost_nrgf,
    cost_rgf,
    ddrgf,
    make_layout,
    oracle_selected_inverse,
    random_spd_like,
    rgf_extended,
    rgf_fused,
    rgf_ndiag,
    rgf_tridiag,
    roofline,
)
from bbsi.cli import fit_loglog_slope
from bbsi.ddrgf import DdrgfTrace
from bbsi.rgf import RgfTrace
from conftest import record

pytestmark = pytest.mark.acceptance


def matrix(n, bs, w, seed):
    return random_spd_like(make_layout(n, bs, w), seed=seed, dominance=2.0)


def best_time(fn, reps):
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def cores():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def test_01_oracle_equivalence():
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(1, 13))
        bs = int(rng.choice([1, 2, 4, 8]))
        w = min(int(rng.integers(1, 4)), n - 1)
        m = matrix(n, bs, w, seed=i)
        ref = oracle_selected_inverse(m)
        errs = [rgf_ndiag(m)[0].max_block_error(ref), rgf_fused(m)[0].max_block_error(ref)]
        if w <= 1:
            errs.append(rgf_tridiag(m)[0].max_block_error(ref))
        worst = max(worst, *errs)
    assert record(1, worst <= 1e-10, f"200 instances, worst block error {worst:.2e} (tol 1e-10)")


def test_02_ddrgf_matches_rgf():
    rng = np.random.default_rng(2)
    worst, spread, done = 0.0, 0.0, 0
    while done < 60:
        n = int(rng.integers(6, 41))
        seq = [int(s) for s in rng.integers(1, 5, size=int(rng.integers(1, 4)))]
        try:
            DomainPlan.from_s2(seq).validate(n)
        except InvalidPlanError:
            continue
        m = matrix(n, int(rng.choice([2, 4, 8])), 1, seed=done)
        ref, _ = rgf_tridiag(m)
        outs = [ddrgf(m, DomainPlan.from_s2(seq, n_threads=t))[0] for t in (1, 2, 4)]
        worst = max(worst, *(o.max_block_error(ref) for o in outs))
        spread = max(spread, *(o.max_block_error(outs[0]) for o in outs[1:]))
        done += 1
    ok = worst <= 1e-10 and spread <= 1e-12
    assert record(2, ok, f"60 instances, error vs RGF {worst:.2e} (1e-10), thread spread {spread:.2e} (1e-12)")


def test_03_counter_exactness():
    bad = []
    for n in range(1, 13):
        _, c = rgf_tridiag(matrix(n, 1, min(1, n - 1), seed=n))
        if c.as_tuple() != (n, max(3 * n - 2, 1), 4 * (n - 1)):
            bad.append(("tridiag", n))
    for w in (1, 2, 3):
        for n in range(w + 1, 13):
            _, c = rgf_ndiag(matrix(n, 1, w, seed=n))
            want = (n, n * (2 * w + 1) - w * w - w, (3 * w * w + w) * n - 2 * w ** 3 - 2 * w * w)
            if c.as_tuple() != want:
                bad.append((w, n))
    assert record(3, not bad, f"closed forms for w=1..3, l=w+1..12, mismatches: {bad or 'none'}")


def test_04_cost_reduction():
    rng = np.random.default_rng(4)
    bad = 0
    for i in range(50):
        n = int(rng.integers(2, 1000))
        if i % 2:
            r = KernelRatios(64, 1e-4, Fraction(int(rng.integers(0, 999)), 1000),
                             Fraction(int(rng.integers(0, 1999)), 1000))
        else:
            r = KernelRatios(64, 1e-4, float(rng.uniform(0, 1)), float(rng.uniform(0, 2)))
        bad += cost_nrgf(n, 1, r).gemm_equivalents != cost_rgf(n, r).gemm_equivalents
    assert record(4, bad == 0, f"50 pairs (Fraction and float ratios), {bad} mismatches")


def test_05_extra_gemms():
    got = [rgf_extended(matrix(n, 2, min(1, n - 1), seed=n))[0].extra_counters.n_gemm for n in (1, 2, 3, 4)]
    assert record(5, got == [0, 0, 2, 6], f"extra GEMMs for l=1..4: {got} (want [0, 0, 2, 6])")


def test_06_scaling_in_layers():
    grid = [20, 40, 80, 160]
    ts = [best_time(lambda m=matrix(n, 64, 1, seed=6): rgf_tridiag(m), 15) for n in grid]
    slope = fit_loglog_slope(grid, ts)
    detail = f"slope {slope:.3f} (want 1.0 +- 0.1), times ms {[round(1e3 * t, 2) for t in ts]}"
    assert record(6, abs(slope - 1.0) <= 0.1, detail)


def test_07_scaling_in_block_size():
    grid = [64, 128, 256, 512]
    ts = [best_time(lambda m=matrix(20, b, 1, seed=7): rgf_tridiag(m), 3 if b < 512 else 2) for b in grid]
    slope = fit_loglog_slope(grid, ts)
    detail = f"slope {slope:.3f} (want [2.2, 3.3]), times ms {[round(1e3 * t, 1) for t in ts]}"
    assert record(7, 2.2 <= slope <= 3.3, detail)


def test_08_native_vs_fused():
    bs = 128
    base = benchmark_kernels(bs, samples=30)
    parts, ok = [], True
    for w in (2, 3):
        m = matrix(40, bs, w, seed=8)
        native = best_time(lambda: rgf_ndiag(m), 3)
        fused = best_time(lambda: rgf_fused(m), 3)
        wide = benchmark_kernels(w * bs, samples=10)
        model_native = cost_nrgf(40, w, base).predicted_seconds
        model_fused = cost_fused(40, w, wide).predicted_seconds
        ok &= native <= fused and model_native <= model_fused
        parts.append(f"w={w}: measured {1e3 * native:.0f}/{1e3 * fused:.0f} ms, "
                     f"model {1e3 * model_native:.0f}/{1e3 * model_fused:.0f} ms")
    assert record(8, ok, "native/fused " + "; ".join(parts))


def test_09_concurrency_to_complexity():
    n, bs = 240, 64
    m = matrix(n, bs, 1, seed=9)
    ratios = benchmark_kernels(bs, samples=50)
    plan4 = autotune(n, bs, 4, ratios, include_rgf=False)
    plan1 = DomainPlan(plan4.levels, 1, plan4.terminal_threads)
    t4 = best_time(lambda: ddrgf(m, plan4), 5)
    t1 = best_time(lambda: ddrgf(m, plan1), 5)
    t_rgf = best_time(lambda: rgf_tridiag(m), 5)
    speedup = t1 / t4
    ok = speedup >= 1.8 and t1 >= t_rgf
    ncore = cores()
    detail = (f"plan {plan4.spec_string()}, speedup 4 vs 1 thread {speedup:.2f} (want >= 1.8), "
              f"DDRGF(1) {1e3 * t1:.0f} ms vs RGF(1) {1e3 * t_rgf:.0f} ms, {ncore} core(s)")
    if ncore < 4:
        record(9, ok, detail + " [soft: fewer than 4 cores]", soft=True)
        if not ok:
            pytest.skip("soft criterion on a machine with fewer than 4 cores: " + detail)
        return
    assert record(9, ok, detail)


def test_10_structural_propositions():
    rng = np.random.default_rng(10)
    band_violations = schur_violations = 0
    for i in range(100):
        n = int(rng.integers(6, 30))
        w = int(rng.integers(1, 4))
        tr = RgfTrace()
        rgf_ndiag(matrix(n, 2, w, seed=i), trace=tr)
        band_violations += sum(1 for _, a, b in tr.schur_updates if abs(a - b) > w)
        seq = [int(rng.integers(1, 5))]
        dt = DdrgfTrace()
        ddrgf(matrix(n, 2, 1, seed=i), DomainPlan.from_s2(seq), trace=dt)
        schur_violations += dt.schur_bandwidth_violations()
    ok = band_violations == 0 and schur_violations == 0
    assert record(10, ok, f"100 runs, Schur band violations {band_violations}, "
                          f"non-tridiagonal Schur blocks {schur_violations}")


def test_11_roofline():
    pt = roofline(1024, 86.4, 21.32, 1.0)
    ok = (abs(pt.intensity - 127.75) < 1e-9 and pt.attainable == 86.4
          and abs(pt.ridge - 4.05) <= 0.01)
    assert record(11, ok, f"a={pt.intensity:.2f}, attainable {pt.attainable}, ridge {pt.ridge:.4f}")


def test_12_microbenchmark_sanity():
    r = benchmark_kernels(1024, samples=10, warmup=1)
    ok = 0.30 <= r.r_lu <= 0.70 and 0.85 <= r.r_getrs <= 1.60
    detail = f"N=1024: r_lu {r.r_lu:.3f} (band [0.30, 0.70]), r_getrs {r.r_getrs:.3f} (band [0.85, 1.60])"
    record(12, ok, detail + ("" if ok else " [report-only]"), soft=True)
    if not ok:
        import warnings
        warnings.warn("kernel ratios outside the expected bands: " + detail)
