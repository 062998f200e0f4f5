import math

import numpy as np
import pytest

from coupledmc.models import BasketCall, Call, HestonCall
from coupledmc.policy import init_params, reference_agent
from coupledmc.trainer import (TrainConfig, evaluate_variance, simulate, train,
                               trajectory_dump)


def _cfg(model, payoff, **kw):
    base = dict(kind="diag", epochs=2, train_batch=64, eval_batch=512, seed=3)
    base.update(kw)
    return TrainConfig(model, payoff, **base)


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(train_batch=1), dict(eval_batch=1),
                                dict(optimizer="lbfgs"), dict(update="never")])
def test_config_validation(bs1, kw):
    with pytest.raises(ValueError):
        _cfg(bs1, Call(), **kw)


def test_single_epoch_history(bs1):
    params, hist = train(_cfg(bs1, Call(), epochs=1))
    assert len(hist) == 1 and hist[0].epoch == 0
    assert hist[0].eval_variance > 0 and hist[0].train_seconds >= 0
    assert params.kind == "diag"


@pytest.mark.parametrize("update", ["per_step", "per_episode"])
def test_training_is_deterministic(bs2, update):
    cfg = _cfg(bs2, BasketCall.equal_weights(2), kind="ortho", update=update)
    p1, h1 = train(cfg)
    p2, h2 = train(cfg)
    assert np.array_equal(p1.flat(), p2.flat())
    assert [(r.eval_variance, r.eval_mean) for r in h1] == [(r.eval_variance, r.eval_mean)
                                                              for r in h2]


def test_update_modes_differ(bs1):
    a, _ = train(_cfg(bs1, Call(), update="per_step"))
    b, _ = train(_cfg(bs1, Call(), update="per_episode"))
    assert not np.array_equal(a.flat(), b.flat())


def test_sgd_training_runs(bs1):
    _, hist = train(_cfg(bs1, Call(), optimizer="sgd", lr=0.05))
    assert all(np.isfinite(r.eval_variance) for r in hist)


def test_callback_sees_every_epoch(bs1):
    seen = []
    train(_cfg(bs1, Call(), epochs=3), callback=lambda rec, p: seen.append(rec.epoch))
    assert seen == [0, 1, 2]


def test_short_training_reduces_variance(bs1):
    _, hist = train(_cfg(bs1, Call(), epochs=8, train_batch=512, eval_batch=8192))
    assert hist[-1].eval_variance < hist[0].eval_variance


def test_common_random_numbers(bs1):
    base = evaluate_variance(reference_agent("baseline", 1), bs1, Call(), 4096, 9)
    anti = evaluate_variance(reference_agent("antithetic", 1), bs1, Call(), 4096, 9)
    # same draws for x1 and for the vanilla pair regardless of the agent
    assert base.mean_f1 == anti.mean_f1
    assert base.vanilla == anti.vanilla
    # with rho = 0 the coupled pair is the vanilla pair
    assert base.estimator == base.vanilla


def test_identity_coupling_equals_single_path(bs1):
    rep = evaluate_variance(reference_agent("identity", 1), bs1, Call(), 20000, 4)
    r = simulate(reference_agent("identity", 1), bs1, Call(), 20000, 4)
    assert np.array_equal(r.f1, r.f2)
    assert rep.estimator.variance == pytest.approx(np.var(r.f1, ddof=1))
    assert rep.transport_cost == 0


def test_chunking_does_not_change_small_runs(bs1):
    a = simulate(reference_agent("antithetic", 1), bs1, Call(), 1000, 2)
    b = simulate(reference_agent("antithetic", 1), bs1, Call(), 1000, 2, chunk=1 << 15)
    assert np.array_equal(a.f2, b.f2)


def test_evaluate_rejects_tiny_sample(bs1):
    with pytest.raises(ValueError):
        evaluate_variance(reference_agent("baseline", 1), bs1, Call(), 1, 0)


def test_trained_mean_is_unbiased(bs1):
    params, _ = train(_cfg(bs1, Call(), epochs=3, train_batch=256))
    rep = evaluate_variance(params, bs1, Call(), 8192, 77)
    gap = abs(rep.estimator.mean - rep.vanilla.mean)
    assert gap <= math.hypot(rep.estimator.half_width_95, rep.vanilla.half_width_95) * 1.5


def test_trajectory_dump_columns(bs2, heston1):
    p = init_params("ortho", 2, 2, seed=1, zero_head=False)
    rows = trajectory_dump(p, bs2, 3, 0)
    assert len(rows) == 3 * (bs2.N + 1)
    assert {"traj", "k", "t", "x1_0", "x2_1", "diag_1", "cos_0"} <= set(rows[0])
    assert "diag_0" not in rows[-1]
    base = trajectory_dump(reference_agent("baseline", 2), heston1, 2, 0)
    assert all(r["diag_0"] == 0 and r["diag_1"] == 0 for r in base if "diag_0" in r)
