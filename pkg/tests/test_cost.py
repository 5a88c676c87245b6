from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bbsi import (
    DomainPlan,
    InvalidPlanError,
    KernelCounters,
    KernelRatios,
    autotune,
    cost_ddrgf,
    cost_fused,
    cost_nrgf,
    cost_rgf,
    ddrgf,
    orchestrate,
    rgf_extra,
    rgf_ndiag,
)
from bbsi.cost import candidate_plans, weighted_cost
from conftest import spd

fractions = st.fractions(min_value=0, max_value=5, max_denominator=1000)


def ratios(r_lu, r_getrs, t=1e-3):
    return KernelRatios(64, t, r_lu, r_getrs)


ZERO = ratios(Fraction(0), Fraction(0))
UNIT = ratios(Fraction(1), Fraction(1))
TYPICAL = ratios(Fraction(2, 5), Fraction(21, 20))


class TestSequential:
    def test_gemm_only(self):
        assert cost_rgf(4, ZERO).gemm_equivalents == 12

    def test_single_layer(self):
        assert cost_rgf(1, UNIT).gemm_equivalents == 2

    @given(st.integers(1, 500), fractions, fractions)
    def test_formula(self, n, a, b):
        assert cost_rgf(n, ratios(a, b)).gemm_equivalents == n * a + (3 * n - 2) * b + 4 * (n - 1)

    @given(st.integers(2, 500), fractions, fractions)
    def test_nrgf_reduces_to_rgf(self, n, a, b):
        r = ratios(a, b)
        assert cost_nrgf(n, 1, r).gemm_equivalents == cost_rgf(n, r).gemm_equivalents

    def test_nrgf_example(self):
        assert cost_nrgf(160, 2, ZERO).gemm_equivalents == 2216

    @pytest.mark.parametrize("n,w", [(9, 2), (12, 3), (7, 1)])
    def test_model_equals_counters(self, n, w):
        _, cnt = rgf_ndiag(spd(n, 1, w, seed=n))
        assert cost_nrgf(n, w, TYPICAL).gemm_equivalents == weighted_cost(cnt, TYPICAL)

    def test_fused_layer_count(self):
        # 160 layers fused by three give 54 super-layers
        assert cost_fused(160, 3, ZERO).gemm_equivalents == 4 * 53

    def test_native_beats_fused_asymptotically(self):
        # fused kernels act on w*b_s blocks: each costs about w^3 times more
        for w in (2, 3):
            big = ratios(TYPICAL.r_lu, TYPICAL.r_getrs, t=w ** 3 * 1e-3)
            fused = cost_fused(160, w, big).predicted_seconds
            native = cost_nrgf(160, w, TYPICAL).predicted_seconds
            assert native < fused

    @pytest.mark.parametrize("n,extra", [(1, 0), (2, 0), (3, 2), (4, 6), (5, 14), (10, 44)])
    def test_extra(self, n, extra):
        assert rgf_extra(n) == extra

    def test_breakdown_sums(self):
        est = cost_nrgf(30, 2, TYPICAL)
        assert sum(est.breakdown.values()) == est.gemm_equivalents
        assert est.predicted_seconds == pytest.approx(float(est.gemm_equivalents) * 1e-3)


class TestDomainDecomposition:
    def test_single_level_unit_s2(self):
        # l = 2, s2 = 1: one task with a one-layer sub-domain, one Schur layer
        est = cost_ddrgf(2, DomainPlan.from_s2([1]), ZERO)
        bd = est.breakdown
        assert bd["L1.r22_inv"] == 0 and bd["L1.r11_12"] == 2 and bd["L1.r_S"] == 4
        assert bd["L1.r22"] == 2 and bd["rS_inv"] == 0

    def test_breakdown_sums(self):
        est = cost_ddrgf(1440, DomainPlan.from_s2([4, 1, 1], n_threads=8), TYPICAL)
        assert sum(est.breakdown.values()) == est.gemm_equivalents

    def test_threads_halve_level_terms(self):
        one = cost_ddrgf(400, DomainPlan.from_s2([4], n_threads=2), TYPICAL).breakdown
        two = cost_ddrgf(400, DomainPlan.from_s2([4], n_threads=4), TYPICAL).breakdown
        for k, v in one.items():
            if k.startswith("L1."):
                assert two[k] * 2 == v
        assert one["rS_inv"] == two["rS_inv"]

    def test_terminal_threads_capped(self):
        base = cost_ddrgf(400, DomainPlan.from_s2([4]), TYPICAL).breakdown["rS_inv"]
        at12 = cost_ddrgf(400, DomainPlan.from_s2([4], terminal_threads=12), TYPICAL).breakdown["rS_inv"]
        at48 = cost_ddrgf(400, DomainPlan.from_s2([4], terminal_threads=48), TYPICAL).breakdown["rS_inv"]
        assert at12 == at48 == base / 12

    def test_more_work_than_rgf_on_one_thread(self):
        for seq in ([1], [4], [4, 1], [2, 2, 2]):
            assert cost_ddrgf(200, DomainPlan.from_s2(seq), TYPICAL).gemm_equivalents > \
                cost_rgf(200, TYPICAL).gemm_equivalents

    @pytest.mark.parametrize("n,seq", [(40, [4, 1]), (37, [3]), (64, [2, 1, 1])])
    def test_exact_mode_equals_counters(self, n, seq):
        plan = DomainPlan.from_s2(seq)
        _, cnt = ddrgf(spd(n, 1, 1, seed=n), plan)
        assert cost_ddrgf(n, plan, TYPICAL, exact=True).gemm_equivalents == weighted_cost(cnt, TYPICAL)

    def test_invalid(self):
        with pytest.raises(InvalidPlanError):
            cost_ddrgf(4, DomainPlan.from_s2([4]), TYPICAL)


class TestAutotune:
    def test_one_thread_prefers_rgf(self):
        assert autotune(200, 64, 1, TYPICAL).is_rgf

    def test_no_levels_gives_rgf(self):
        assert autotune(200, 64, 16, TYPICAL, max_levels=0).is_rgf

    def test_many_threads_decompose(self):
        plan = autotune(1440, 512, 64, TYPICAL)
        assert not plan.is_rgf and plan.n_threads == 64

    @pytest.mark.parametrize("threads", [2, 8, 32])
    def test_optimal_in_grid(self, threads):
        plan = autotune(300, 64, threads, TYPICAL, max_levels=3)
        best = cost_ddrgf(300, plan, TYPICAL).gemm_equivalents
        assert all(best <= cost_ddrgf(300, p, TYPICAL).gemm_equivalents
                   for p in candidate_plans(300, threads, 3))

    def test_tie_break(self):
        # with all costs zero every plan ties; the first candidate is RGF
        zero = KernelRatios(64, 0.0, Fraction(0), Fraction(0))
        assert autotune(50, 64, 4, zero).is_rgf
        assert autotune(50, 64, 4, zero, include_rgf=False).s2_sequence in ((1,), (2,), (3,), (4,))

    def test_search_terminal_threads(self):
        plan = autotune(1440, 512, 16, TYPICAL, search_terminal_threads=True)
        assert plan.terminal_threads in (1, 2, 4, 8, 16)

    def test_deterministic(self):
        assert autotune(777, 64, 12, TYPICAL) == autotune(777, 64, 12, TYPICAL)


class TestOrchestrator:
    def test_single_thread_rgf(self):
        c = orchestrate(160, 64, 1, TYPICAL)
        assert c.solver == "rgf" and c.plan is None

    def test_many_threads_ddrgf(self):
        c = orchestrate(1440, 512, 64, TYPICAL)
        assert c.solver == "ddrgf" and c.ddrgf_cost < c.rgf_cost
        assert c.to_dict()["plan"].startswith("s2:")

    def test_too_small_for_decomposition(self):
        c = orchestrate(1, 64, 8, TYPICAL)
        assert c.solver == "rgf" and c.ddrgf_cost is None

    def test_counters_type_agnostic(self):
        cnt = KernelCounters(n_gemm=3, n_lu=1, n_getrs=2)
        assert weighted_cost(cnt, UNIT) == 6
