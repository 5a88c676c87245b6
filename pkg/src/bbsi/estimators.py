"""Estimator-style wrappers around the solvers.

They follow the scikit-learn conventions: hyper-parameters are set in
``__init__`` and exposed through ``get_params``/``set_params``, ``fit``
learns state ending in an underscore, ``transform`` returns the selected
inverse of its input.  ``score`` is the negated worst per-block error
against the dense oracle, so higher is better.
"""

from __future__ import annotations

import time

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .core import oracle_selected_inverse
from .cost import autotune, cost_ddrgf, cost_rgf
from .ddrgf import DomainPlan, ddrgf
from .kernels import KernelRatios, benchmark_kernels
from .rgf import rgf_fused, rgf_ndiag, rgf_tridiag
from .validation import as_block_banded, check_block_banded, check_plan, check_positive_int

__all__ = ["RGFSolver", "FusedRGFSolver", "DDRGFSolver", "PlanTuner"]


class _SelectedInverseBase(BaseEstimator, TransformerMixin):

    def _solve(self, m):
        raise NotImplementedError

    def _check(self, X):
        return check_block_banded(as_block_banded(X, getattr(self, "layout", None)))

    def fit(self, X, y=None):
        m = self._check(X)
        t0 = time.perf_counter()
        inv, cnt = self._solve(m)
        self.fit_time_ = time.perf_counter() - t0
        self.inverse_ = inv
        self.counters_ = cnt
        self.n_layers_ = m.num_layers
        return self

    def transform(self, X, y=None):
        return self._solve(self._check(X))[0]

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).inverse_

    def score(self, X, y=None):
        if not hasattr(self, "inverse_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        m = self._check(X)
        ref = oracle_selected_inverse(m) if y is None else y
        return -self.transform(m).max_block_error(ref)


class RGFSolver(_SelectedInverseBase):
    """Sequential RGF; block tridiagonal input uses the tridiagonal sweep.

    Parameters
    ----------
    layout : BlockLayout, optional
        Needed only when dense arrays are passed.
    """

    def __init__(self, layout=None):
        self.layout = layout

    def _solve(self, m):
        if m.bandwidth <= 1:
            return rgf_tridiag(m)
        return rgf_ndiag(m)


class FusedRGFSolver(_SelectedInverseBase):
    """Baseline that fuses ``w`` layers into super-blocks before RGF."""

    def __init__(self, layout=None):
        self.layout = layout

    def _solve(self, m):
        return rgf_fused(m)


class DDRGFSolver(_SelectedInverseBase):
    """Domain-decomposition RGF.

    Parameters
    ----------
    plan : DomainPlan, str, sequence of int or "auto"
        ``"auto"`` tunes the plan with :class:`PlanTuner` on ``fit``.
    n_threads : int
    ratios : KernelRatios, optional
        Used by ``plan="auto"``; measured on demand otherwise.
    grouping : {"right", "left"}
    """

    def __init__(self, plan="auto", n_threads=1, ratios=None, grouping="right", layout=None):
        self.plan = plan
        self.n_threads = n_threads
        self.ratios = ratios
        self.grouping = grouping
        self.layout = layout

    def _resolve_plan(self, m):
        n_threads = check_positive_int(self.n_threads, "n_threads")
        if isinstance(self.plan, str) and self.plan == "auto":
            tuner = PlanTuner(n_threads=n_threads, ratios=self.ratios).fit(m)
            return tuner.plan_
        plan = check_plan(self.plan, m.num_layers, n_threads)
        if plan.n_threads != n_threads and not isinstance(self.plan, DomainPlan):
            plan = DomainPlan(plan.levels, n_threads, plan.terminal_threads)
        return plan

    def fit(self, X, y=None):
        m = self._check(X)
        self.plan_ = self._resolve_plan(m)
        return super().fit(m, y)

    def _solve(self, m):
        plan = getattr(self, "plan_", None) or self._resolve_plan(m)
        check_block_banded(m, bandwidth={0, 1})
        return ddrgf(m, plan, grouping=self.grouping)


class PlanTuner(BaseEstimator):
    """Pick a DDRGF plan by minimizing the analytical cost model.

    ``fit`` accepts a block banded matrix or a layer count.  ``predict``
    returns the chosen plan; ``cost_`` holds its estimate and
    ``rgf_cost_`` the sequential baseline.
    """

    def __init__(self, n_threads=1, ratios=None, max_levels=5, s2_max=4,
                 block_size=None, search_terminal_threads=False):
        self.n_threads = n_threads
        self.ratios = ratios
        self.max_levels = max_levels
        self.s2_max = s2_max
        self.block_size = block_size
        self.search_terminal_threads = search_terminal_threads

    def fit(self, X, y=None):
        if isinstance(X, int):
            n, b_s = check_positive_int(X, "num_layers"), self.block_size
        else:
            m = check_block_banded(X)
            n, b_s = m.num_layers, m.layout.block_size
        if b_s is None:
            raise ValueError("block_size is required when fitting on a layer count")
        ratios = self.ratios
        if ratios is None:
            ratios = benchmark_kernels(b_s, samples=20)
        if not isinstance(ratios, KernelRatios):
            ratios = KernelRatios.from_dict(ratios)
        self.ratios_ = ratios
        self.plan_ = autotune(n, b_s, check_positive_int(self.n_threads, "n_threads"), ratios,
                              self.max_levels, self.s2_max, self.search_terminal_threads)
        self.cost_ = cost_ddrgf(n, self.plan_, ratios)
        self.rgf_cost_ = cost_rgf(n, ratios)
        self.n_layers_ = n
        return self

    def predict(self, X=None):
        if not hasattr(self, "plan_"):
            raise NotFittedError("PlanTuner is not fitted")
        return self.plan_
