import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bbsi import (
    DDRGFSolver,
    DomainPlan,
    FusedRGFSolver,
    InvalidDimensionError,
    KernelRatios,
    PlanTuner,
    RGFSolver,
    oracle_selected_inverse,
    to_dense,
)
from conftest import spd

RATIOS = KernelRatios(8, 1e-6, 0.4, 1.05)


def test_params_round_trip():
    est = DDRGFSolver(plan="s2:4,1", n_threads=2)
    assert est.get_params()["plan"] == "s2:4,1"
    est.set_params(n_threads=4)
    assert clone(est).get_params() == est.get_params()


@pytest.mark.parametrize("est,w", [(RGFSolver(), 1), (RGFSolver(), 2), (FusedRGFSolver(), 3),
                                   (DDRGFSolver(plan="s2:3", n_threads=2), 1)])
def test_fit_transform_score(est, w):
    m = spd(12, 3, w, seed=w)
    inv = est.fit_transform(m)
    assert inv.max_block_error(oracle_selected_inverse(m)) <= 1e-10
    assert est.n_layers_ == 12 and est.fit_time_ >= 0 and est.counters_.n_lu > 0
    assert -1e-10 <= est.score(m) <= 0


def test_dense_input_needs_layout():
    m = spd(5, 2, 1, seed=1)
    est = RGFSolver(layout=m.layout).fit(to_dense(m))
    assert est.inverse_.max_block_error(oracle_selected_inverse(m)) <= 1e-10


def test_score_before_fit():
    with pytest.raises(NotFittedError):
        RGFSolver().score(spd(3, 1, 1))


def test_ddrgf_rejects_wide_band():
    with pytest.raises(InvalidDimensionError):
        DDRGFSolver(plan="s2:2").fit(spd(10, 1, 2))


def test_ddrgf_auto_plan():
    est = DDRGFSolver(plan="auto", n_threads=4, ratios=RATIOS).fit(spd(30, 2, 1))
    assert isinstance(est.plan_, DomainPlan) and est.plan_.n_threads == 4


def test_plan_tuner():
    tuner = PlanTuner(n_threads=1, ratios=RATIOS, block_size=8).fit(200)
    assert tuner.predict().is_rgf and tuner.cost_.gemm_equivalents == tuner.rgf_cost_.gemm_equivalents
    tuner = PlanTuner(n_threads=64, ratios=RATIOS.to_dict(), block_size=8).fit(1440)
    assert not tuner.predict().is_rgf
    assert tuner.cost_.gemm_equivalents < tuner.rgf_cost_.gemm_equivalents


def test_plan_tuner_needs_block_size():
    with pytest.raises(ValueError):
        PlanTuner(ratios=RATIOS).fit(40)
    with pytest.raises(NotFittedError):
        PlanTuner().predict()


def test_transform_does_not_refit():
    est = RGFSolver().fit(spd(4, 2, 1, seed=1))
    other = spd(6, 2, 1, seed=2)
    out = est.transform(other)
    assert est.n_layers_ == 4 and out.num_layers == 6
    assert np.isfinite(out.max_block_error(oracle_selected_inverse(other)))
