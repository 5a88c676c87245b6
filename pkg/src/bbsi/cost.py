"""Analytical cost models, the DDRGF plan auto-tuner and the orchestrator.

Costs are expressed in GEMM equivalents: one GEMM weighs 1, one LU weighs
``r_lu`` and one GETRS weighs ``r_getrs`` (all at the same block size).
Everything here is pure arithmetic on the ratio values, so passing
``fractions.Fraction`` ratios yields exact rational results.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .core import interleave_permutation
from .ddrgf import DomainPlan
from .exceptions import InvalidDimensionError, InvalidPlanError
from .kernels import KernelCounters, KernelRatios
from .rgf import extended_extra_gemms

__all__ = [
    "CostEstimate",
    "OrchestratorChoice",
    "DDRGF_TERMS",
    "weighted_cost",
    "rgf_counts",
    "nrgf_counts",
    "fused_counts",
    "rgf_extra",
    "ddrgf_exact_counts",
    "cost_rgf",
    "cost_nrgf",
    "cost_fused",
    "cost_ddrgf",
    "autotune",
    "candidate_plans",
    "orchestrate",
    "DEFAULT_BLAS_CAP",
]

DEFAULT_BLAS_CAP = 12

# per-level term names, in evaluation order
DDRGF_TERMS = ("r22_inv", "r11_12", "r11_21", "r_S", "r12", "r21", "r22")


@dataclass
class CostEstimate:
    """Predicted cost in units of ``t_gemm``.

    ``breakdown`` maps term names to their contributions; the entries sum to
    ``gemm_equivalents``.
    """

    gemm_equivalents: object
    breakdown: dict = field(default_factory=dict)
    t_gemm: float = 0.0

    @property
    def predicted_seconds(self) -> float:
        return float(self.gemm_equivalents) * self.t_gemm

    def to_dict(self) -> dict:
        return {
            "gemm_equivalents": float(self.gemm_equivalents),
            "predicted_seconds": self.predicted_seconds,
            "breakdown": {k: float(v) for k, v in self.breakdown.items()},
        }


def _estimate(breakdown: dict, ratios: KernelRatios) -> CostEstimate:
    return CostEstimate(sum(breakdown.values()), breakdown, ratios.t_gemm)


def weighted_cost(counters: KernelCounters, ratios: KernelRatios):
    """Ratio-weighted kernel tally: ``n_gemm + r_lu n_lu + r_getrs n_getrs``."""
    return counters.n_gemm + ratios.r_lu * counters.n_lu + ratios.r_getrs * counters.n_getrs


def _counts(n_lu, n_getrs, n_gemm) -> KernelCounters:
    return KernelCounters(n_gemm=n_gemm, n_lu=n_lu, n_getrs=n_getrs)


def rgf_counts(l: int) -> KernelCounters:
    """Kernel calls of tridiagonal RGF on ``l`` layers."""
    if l < 1:
        raise InvalidDimensionError("need at least one layer")
    return _counts(l, 3 * l - 2, 4 * (l - 1))


def nrgf_counts(l: int, w: int) -> KernelCounters:
    """Kernel calls of n-diagonal RGF (closed forms, valid for ``l > w``)."""
    if w < 1 or l <= w:
        raise InvalidDimensionError(f"need l > w >= 1, got l={l}, w={w}")
    return _counts(l, l * (2 * w + 1) - w * w - w, (3 * w * w + w) * l - 2 * w ** 3 - 2 * w * w)


def fused_counts(l: int, w: int) -> KernelCounters:
    """Kernel calls of the fused baseline, at super-block granularity."""
    if w < 1:
        raise InvalidDimensionError(f"need w >= 1, got {w}")
    return rgf_counts(math.ceil(l / w))


def rgf_extra(l: int) -> int:
    """Extra GEMMs for the halo rows and columns of an ``l``-layer inverse.

    0 for ``l <= 2``, 2 for ``l = 3``, 6 for ``l = 4`` and ``6 l - 16``
    beyond.
    """
    return extended_extra_gemms(l)


def _terms(counters: KernelCounters, ratios: KernelRatios) -> dict:
    return {
        "gemm": counters.n_gemm,
        "lu": ratios.r_lu * counters.n_lu,
        "getrs": ratios.r_getrs * counters.n_getrs,
    }


def cost_rgf(l: int, ratios: KernelRatios) -> CostEstimate:
    """``l (4 + r_lu + 3 r_getrs) - (4 + 2 r_getrs)`` GEMM equivalents."""
    return _estimate(_terms(rgf_counts(l), ratios), ratios)


def cost_nrgf(l: int, w: int, ratios: KernelRatios) -> CostEstimate:
    """Native n-diagonal RGF; reduces to :func:`cost_rgf` for ``w = 1``."""
    return _estimate(_terms(nrgf_counts(l, w), ratios), ratios)


def cost_fused(l: int, w: int, ratios_at_ws: KernelRatios) -> CostEstimate:
    """Fused baseline on ``ceil(l / w)`` super-layers.

    ``ratios_at_ws`` must be measured at the super-block size ``w * b_s``;
    its ``t_gemm`` converts the estimate to seconds.
    """
    return _estimate(_terms(fused_counts(l, w), ratios_at_ws), ratios_at_ws)


# ---------------------------------------------------------------------------
# DDRGF


def _task_counts(m: int, nb: int) -> dict:
    """Exact kernel calls of one sub-domain task of size ``m`` with ``nb`` D1 neighbours."""
    rgf = rgf_counts(m)
    return {
        "r22_inv": _counts(rgf.n_lu, rgf.n_getrs, rgf.n_gemm + rgf_extra(m)),
        "r11_12": _counts(0, 0, nb * m),
        "r11_21": _counts(0, 0, nb * m),
        "r_S": _counts(0, 0, nb * nb),
        "r12": _counts(0, 0, nb * nb * m),
        "r21": _counts(0, 0, nb * nb),
        "r22": _counts(0, 0, nb * (3 * m - 2)),
    }


def ddrgf_exact_counts(l: int, plan: DomainPlan) -> dict:
    """Exact kernel calls of :func:`bbsi.ddrgf.ddrgf`, split by level and term.

    Keys are ``"L{k}.{term}"`` for each level ``k`` and ``"terminal"`` for
    the sequential solve of the deepest Schur system.  Unlike the thread
    divided model, the first sub-domain (a single D1 neighbour) and a
    shortened trailing one are accounted for exactly.
    """
    plan.validate(l)
    out = {}
    n = l
    for k, (s1, s2) in enumerate(plan.levels, start=1):
        _, dom = interleave_permutation(n, s1, s2)
        acc = {t: KernelCounters() for t in DDRGF_TERMS}
        for j, (a, b) in enumerate(dom.d2):
            if b == a:
                continue
            for t, c in _task_counts(b - a, 1 if j == 0 else 2).items():
                acc[t].merge(c)
        for t in DDRGF_TERMS:
            out[f"L{k}.{t}"] = acc[t]
        n = len(dom.d1_layers)
    out["terminal"] = rgf_counts(n)
    return out


def _level_model(s2: int, n_tasks: int, n_threads: int, ratios: KernelRatios) -> dict:
    f = Fraction(n_tasks, n_threads)
    rgf = cost_rgf(s2, ratios).gemm_equivalents + rgf_extra(s2)
    return {
        "r22_inv": f * rgf,
        "r11_12": f * 2 * s2,
        "r11_21": f * 2 * s2,
        "r_S": f * 4,
        "r12": f * 4 * s2,
        "r21": f * 4,
        "r22": f * (4 * (s2 - 1) + 2 * s2),
    }


def cost_ddrgf(l: int, plan: DomainPlan, ratios: KernelRatios, exact: bool = False,
               blas_cap: int = DEFAULT_BLAS_CAP) -> CostEstimate:
    """DDRGF cost, summed over recursion levels.

    With ``exact=False`` (default) each level contributes the ideal
    load-balanced model with ``n_tasks = ceil(l_k / (s1 + s2))`` tasks
    spread over ``plan.n_threads`` threads, and the next level sees
    ``l_S = n_tasks * s1`` layers.  The terminal RGF on the last Schur
    system is divided by ``min(plan.terminal_threads, blas_cap)``.

    With ``exact=True`` the undivided exact kernel tally of
    :func:`ddrgf_exact_counts` is weighted instead; it equals the
    ratio-weighted counters of an actual run.

    Breakdown keys are ``"L{k}.{term}"`` and ``"rS_inv"`` for the terminal
    solve.

    Raises
    ------
    InvalidPlanError
        If some level receives fewer than ``s1 + s2`` layers.
    """
    if exact:
        parts = ddrgf_exact_counts(l, plan)
        bd = {("rS_inv" if k == "terminal" else k): weighted_cost(c, ratios) for k, c in parts.items()}
        return _estimate(bd, ratios)
    counts = plan.layer_counts(l)
    bd = {}
    for k, (s1, s2) in enumerate(plan.levels, start=1):
        n_tasks = -(-counts[k - 1] // (s1 + s2))
        for t, v in _level_model(s2, n_tasks, plan.n_threads, ratios).items():
            bd[f"L{k}.{t}"] = v
    speed = min(plan.terminal_threads, blas_cap)
    bd["rS_inv"] = cost_rgf(counts[-1], ratios).gemm_equivalents / speed if speed > 1 \
        else cost_rgf(counts[-1], ratios).gemm_equivalents
    return _estimate(bd, ratios)


def candidate_plans(l: int, n_threads: int = 1, max_levels: int = 5, s2_max: int = 4,
                    terminal_threads=(1,)):
    """All valid plans with up to ``max_levels`` levels, the RGF plan first.

    Sequences are generated by increasing length, then lexicographically,
    which is also the tie-break order of :func:`autotune`.
    """
    for tt in terminal_threads:
        yield DomainPlan((), n_threads, tt)
    for depth in range(1, max_levels + 1):
        for seq in itertools.product(range(1, s2_max + 1), repeat=depth):
            plan_counts = _valid_counts(l, seq)
            if plan_counts is None:
                continue
            for tt in terminal_threads:
                yield DomainPlan.from_s2(seq, n_threads, tt)


def _valid_counts(l, seq):
    n = l
    for s2 in seq:
        if n < 1 + s2:
            return None
        n = -(-n // (1 + s2))
    return n


def autotune(l: int, b_s: int, n_threads: int, ratios: KernelRatios, max_levels: int = 5,
             s2_max: int = 4, search_terminal_threads: bool = False,
             blas_cap: int = DEFAULT_BLAS_CAP, include_rgf: bool = True) -> DomainPlan:
    """Exhaustive search for the cheapest DDRGF plan.

    Returns the plan with minimal :func:`cost_ddrgf`.  The pure-RGF option
    is the empty plan.  Ties go to fewer levels, then to the
    lexicographically smaller ``s2`` sequence, then to fewer terminal
    threads.  ``b_s`` only documents the block size the ratios belong to.

    When ``search_terminal_threads`` is set the terminal BLAS thread count
    is searched over powers of two up to ``n_threads`` (and ``n_threads``).
    """
    tts = (1,)
    if search_terminal_threads:
        tts = tuple(sorted({2 ** i for i in range(n_threads.bit_length()) if 2 ** i <= n_threads} | {n_threads}))
    best, best_cost = None, None
    for plan in candidate_plans(l, n_threads, max_levels, s2_max, tts):
        if plan.is_rgf and not include_rgf:
            continue
        c = cost_ddrgf(l, plan, ratios, blas_cap=blas_cap).gemm_equivalents
        if best is None or c < best_cost:
            best, best_cost = plan, c
    if best is None:
        raise InvalidPlanError(f"no valid DDRGF plan for {l} layers")
    return best


@dataclass(frozen=True)
class OrchestratorChoice:
    solver: str
    plan: DomainPlan | None
    rgf_cost: object
    ddrgf_cost: object

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "plan": None if self.plan is None else self.plan.spec_string(),
            "rgf_cost": float(self.rgf_cost),
            "ddrgf_cost": None if self.ddrgf_cost is None else float(self.ddrgf_cost),
        }


def orchestrate(l: int, b_s: int, n_threads: int, ratios: KernelRatios,
                blas_cap: int = DEFAULT_BLAS_CAP, max_levels: int = 5,
                s2_max: int = 4) -> OrchestratorChoice:
    """Pick RGF or DDRGF by predicted cost.

    RGF is modelled with multi-threaded kernels, ``cost_rgf / min(n_threads,
    blas_cap)``.  DDRGF uses the best plan from :func:`autotune` with at
    least one level.  Ties go to RGF.
    """
    rgf = cost_rgf(l, ratios).gemm_equivalents
    speed = min(n_threads, blas_cap)
    rgf = rgf / speed if speed > 1 else rgf
    try:
        plan = autotune(l, b_s, n_threads, ratios, max_levels, s2_max,
                        blas_cap=blas_cap, include_rgf=False)
    except InvalidPlanError:
        return OrchestratorChoice("rgf", None, rgf, None)
    dd = cost_ddrgf(l, plan, ratios, blas_cap=blas_cap).gemm_equivalents
    if dd < rgf:
        return OrchestratorChoice("ddrgf", plan, rgf, dd)
    return OrchestratorChoice("rgf", None, rgf, dd)
