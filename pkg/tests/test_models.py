import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupledmc.errors import EpisodeFinished, NumericError
from coupledmc.models import (BasketCall, BlackScholes, Call, CoupledBatchState, CoupledEnv,
                              Heston, HestonCall, LogSquare, draw_noise, drift_diffusion,
                              env_reset, euler_step_pair, step_reward, vanilla_terminal)
from coupledmc.numerics import RngStream, sample_stats
from coupledmc.oracle import marginal_law_check
from coupledmc.policy import constant_agent, init_params, reference_agent
from coupledmc.trainer import evaluate_variance, simulate


def _state(x1, x2, k=0, h=0.02):
    return CoupledBatchState(np.atleast_2d(x1).astype(float), np.atleast_2d(x2).astype(float), k, h)


# -- model coefficients ------------------------------------------------------

def test_bs_coefficients(bs1):
    b, s = drift_diffusion(bs1, np.array([[1.0]]))
    assert b[0, 0] == pytest.approx(0.06)
    assert s[0, 0, 0] == pytest.approx(0.3)


def test_bs_multi_asset_diffusion_is_diagonal():
    m = BlackScholes([0.01, 0.02], [0.1, 0.2], [1.0, 2.0])
    _, s = drift_diffusion(m, np.array([[1.0, 2.0]]))
    assert np.allclose(s[0], np.diag([0.1, 0.4]))


def test_heston_full_truncation(heston1):
    b, s = drift_diffusion(heston1, np.array([[1.0, -0.1]]))
    assert np.all(s[0] == 0)
    assert b[0, 1] == pytest.approx(0.5 * 0.04)
    assert b[0, 0] == 0


def test_heston_rows(heston1):
    # price driven by the first driver of the asset; variance mixes both
    _, s = drift_diffusion(heston1, np.array([[1.0, 0.04]]))
    assert np.allclose(s[0, 0], [0.2, 0.0])
    assert np.allclose(s[0, 1], [0.5 * 0.2 * -0.7, 0.5 * 0.2 * math.sqrt(0.51)])


def test_heston_layout():
    m = Heston([0.5, 1.0], [0.04, 0.09], [0.5, 0.3], [-0.7, 0.2], [1.0, 2.0], [0.1, 0.2])
    assert (m.d1, m.d2, m.n_assets) == (4, 4, 2)
    assert np.allclose(m.initial_state(), [1.0, 0.1, 2.0, 0.2])
    _, s = drift_diffusion(m, m.initial_state()[None])
    # assets do not interact
    assert np.all(s[0, :2, 2:] == 0) and np.all(s[0, 2:, :2] == 0)


def test_drift_diffusion_blow_up(bs1):
    with pytest.raises(NumericError, match="state blow-up"):
        drift_diffusion(bs1, np.array([[np.nan]]))


@pytest.mark.parametrize("kw", [dict(vol=[0.0]), dict(vol=[-1.0])])
def test_bs_validation(kw):
    args = dict(drift=[0.06], vol=[0.3], x0=[1.0]) | kw
    with pytest.raises(ValueError):
        BlackScholes(**args)


def test_heston_validation():
    with pytest.raises(ValueError):
        Heston([0.5], [0.04], [0.5], [-1.5], [1.0], [0.1])
    with pytest.raises(ValueError):
        Heston([0.5], [0.04], [0.5], [-0.5], [1.0], [0.1], N=0)


# -- payoffs -------------------------------------------------------------------

def test_call_payoff():
    c = Call(1.0)
    assert c.value(np.array([[1.2]]))[0] == pytest.approx(0.2)
    assert c.grad(np.array([[1.2]]))[0, 0] == 1
    assert c.grad(np.array([[1.0]]))[0, 0] == 0


def test_basket_call_payoff():
    p = BasketCall([0.5, 0.5], [1.0, 1.0])
    x = np.array([[1.2, 0.9]])
    assert p.value(x)[0] == pytest.approx(0.1)
    assert np.allclose(p.grad(x)[0], [0.5, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-4, 4))
def test_logsquare_substitution(z):
    b, s, T = 0.06, 0.3, 1.0
    mu = b - s * s / 2
    x = np.array([[math.exp(mu * T + s * math.sqrt(T) * z)]])
    assert LogSquare(mu, s, T).value(x)[0] == pytest.approx(z * z, abs=1e-9)


def test_logsquare_domain():
    with pytest.raises(ValueError, match="domain"):
        LogSquare(0.0, 0.3).value(np.array([[0.0]]))


def test_heston_call_uses_prices_only():
    p = HestonCall(1.0)
    x = np.array([[1.3, 5.0]])
    assert p.value(x)[0] == pytest.approx(0.3)
    assert np.allclose(p.grad(x)[0], [1.0, 0.0])


@pytest.mark.parametrize("payoff,x", [
    (Call(1.0), [[1.3]]),
    (BasketCall([0.3, 0.7], [1.0, 0.8]), [[1.2, 1.1]]),
    (LogSquare(0.015, 0.3), [[1.1, 0.9]]),
    (HestonCall(1.0), [[1.2, 0.1, 0.7, 0.2]]),
])
def test_payoff_gradients_match_differences(payoff, x):
    x = np.array(x, dtype=float)
    g = payoff.grad(x)[0]
    for j in range(x.shape[1]):
        e = np.zeros_like(x)
        e[0, j] = 1e-6
        fd = (payoff.value(x + e) - payoff.value(x - e))[0] / 2e-6
        assert g[j] == pytest.approx(fd, abs=1e-7)


# -- Euler step ----------------------------------------------------------------

def test_euler_antithetic_example(bs1):
    act = reference_agent("antithetic", 1).action
    nxt = euler_step_pair(bs1, _state([1.0], [1.0]), act, np.array([[0.5]]), np.array([[0.3]]))
    assert nxt.x1[0, 0] == pytest.approx(1.0224132, abs=1e-7)
    assert nxt.x2[0, 0] == pytest.approx(0.9799868, abs=1e-7)
    assert nxt.k == 1


def test_euler_identity_coupling_keeps_copies_equal(bs2, rng):
    act = reference_agent("identity", 2).action
    st_ = env_reset(bs2, 4)
    for _ in range(10):
        st_ = euler_step_pair(bs2, st_, act, rng.normal(size=(4, 2)), rng.normal(size=(4, 2)))
    assert np.array_equal(st_.x1, st_.x2)


def test_euler_baseline_matches_vanilla(bs1, rng):
    act = reference_agent("baseline", 1).action
    st_ = env_reset(bs1, 3)
    x = st_.x2.copy()
    for _ in range(bs1.N):
        xi1, xi2 = rng.normal(size=(3, 1)), rng.normal(size=(3, 1))
        st_ = euler_step_pair(bs1, st_, act, xi1, xi2)
        x = x + bs1.h * 0.06 * x + math.sqrt(bs1.h) * 0.3 * x * xi2
    assert np.allclose(st_.x2, x, rtol=0, atol=1e-13)


def test_episode_finished(bs1):
    st_ = _state([1.0], [1.0], k=bs1.N)
    with pytest.raises(EpisodeFinished, match="episode finished"):
        euler_step_pair(bs1, st_, reference_agent("baseline", 1).action,
                        np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(EpisodeFinished):
        CoupledEnv(bs1, Call()).step(st_, reference_agent("baseline", 1).action,
                                     RngStream(0, 0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_state_blow_up():
    m = BlackScholes([0.0], [1e200], [1e200], N=2)
    act = reference_agent("baseline", 1).action
    with pytest.raises(NumericError, match="state blow-up"):
        euler_step_pair(m, _state([1e200], [1e200], h=0.5), act, np.ones((1, 1)), np.ones((1, 1)))


# -- rewards and environment -----------------------------------------------------

def test_reward_examples(bs1):
    p = Call(0.0)
    prev = _state([0.1], [0.2])
    nxt = _state([0.25], [0.2], k=1)
    assert step_reward(p, prev, nxt)[0] == pytest.approx(-0.03)
    same = _state([0.1], [0.2], k=1)
    assert step_reward(p, prev, same)[0] == 0


def test_reset_broadcasts_initial_state(bs1):
    st_ = CoupledEnv(bs1, Call()).reset(512)
    assert st_.x1.shape == (512, 1) and np.all(st_.x1 == 1.0) and np.all(st_.x2 == 1.0)
    assert st_.k == 0 and st_.t == 0


@pytest.mark.parametrize("agent", ["baseline", "antithetic", "identity"])
def test_rewards_telescope(bs1, agent):
    env = CoupledEnv(bs1, Call(1.0))
    st_ = env.reset(64)
    start = Call(1.0).value(st_.x1) * Call(1.0).value(st_.x2)
    stream = RngStream(3, 0)
    total = np.zeros(64)
    act = reference_agent(agent, 1).action
    while not env.done(st_):
        st_, r = env.step(st_, act, stream)
        total += r
    end = Call(1.0).value(st_.x1) * Call(1.0).value(st_.x2)
    assert np.allclose(total, start - end, atol=1e-14)


def test_antithetic_rollout_mirrors_increments(bs1):
    env = CoupledEnv(bs1, Call())
    st_ = env.reset(5)
    stream = RngStream(9, 0)
    mirror = st_.x1.copy()
    act = reference_agent("antithetic", 1).action
    sh = math.sqrt(bs1.h)
    while not env.done(st_):
        xi1, xi2 = draw_noise(stream, 5, 1)
        st_ = euler_step_pair(bs1, st_, act, xi1, xi2)
        mirror = mirror + bs1.h * 0.06 * mirror + sh * 0.3 * mirror * (-xi1)
        assert np.allclose(st_.x2, mirror, atol=1e-14)


def test_transport_identity(bs2):
    rep = evaluate_variance(init_params("ortho", 2, 2, seed=4, zero_head=False), bs2,
                            BasketCall.equal_weights(2), 5000, 1)
    lhs = rep.transport_cost
    rhs = rep.mean_f1_sq + rep.mean_f2_sq - 2 * rep.mean_f1f2
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-15)


@pytest.mark.parametrize("agent_factory", [
    lambda: reference_agent("antithetic", 2),
    lambda: constant_agent([[0.3, 0.4], [-0.2, 0.5]]),
    lambda: init_params("diag", 2, 2, seed=2, zero_head=False),
    lambda: init_params("ortho", 2, 2, seed=3, zero_head=False),
])
def test_marginal_law_and_unbiasedness(bs2, agent_factory):
    agent = agent_factory()
    payoff = BasketCall.equal_weights(2)
    rep = marginal_law_check(agent, bs2, payoff, 10 ** 5, seed=21)
    assert rep["passed"], rep
    r = simulate(agent, bs2, payoff, 10 ** 5, 22)
    a, b = sample_stats(r.f1), sample_stats(r.f2)
    assert abs(a.mean - b.mean) <= 3 * math.hypot(a.half_width_95, b.half_width_95)


def test_vanilla_terminal_is_deterministic(bs1):
    a = vanilla_terminal(bs1, 100, RngStream(1, 0))
    b = vanilla_terminal(bs1, 100, RngStream(1, 0))
    assert np.array_equal(a, b) and a.shape == (100, 1)
