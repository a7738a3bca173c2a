import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualview import net, nn
from dualview.net import (LstmState, NetworkSpec, Rollout, RolloutStep, Variant,
                          build_network, param_layout)
from dualview.preprocess import Observation

SMALL = dict(frame_size=16, conv_channels=(2, 3), conv_kernels=(4, 2),
             conv_strides=(2, 1), fc_units=8, lstm_units=8)


def small_spec(variant, n_actions=3):
    return NetworkSpec(variant, n_actions=n_actions, **SMALL)


def random_obs(spec, rng):
    views = tuple(rng.random((size, size)) for _, size in spec.streams())
    return Observation(spec.variant, views)


def random_rollout(spec, rng, length, terminal=False):
    steps = [RolloutStep(obs=random_obs(spec, rng), action=int(rng.integers(spec.n_actions)),
                         reward=float(rng.normal()), value=0.0)
             for _ in range(length)]
    init = LstmState(h=rng.normal(size=spec.lstm_units) * 0.5,
                     c=rng.normal(size=spec.lstm_units) * 0.5)
    return Rollout(steps=steps, initial_state=init,
                   bootstrap_value=0.0 if terminal else float(rng.normal()),
                   terminal=terminal)


# ---------------------------------------------------------------------------
# architecture arithmetic

@pytest.mark.parametrize("variant,count", [
    (Variant.SINGLE, 1_199_412),
    (Variant.DUAL, 692_580),
    (Variant.GENERIC_ONLY, 609_588),
])
def test_parameter_counts(variant, count):
    params = build_network(NetworkSpec(variant, n_actions=3), seed=0)
    assert net.param_count(params) == count


def test_dual_reduction_ratio():
    single = build_network(NetworkSpec(Variant.SINGLE), seed=0)
    dual = build_network(NetworkSpec(Variant.DUAL), seed=0)
    r = net.reduction_ratio(single, dual)
    assert r == pytest.approx(1 - 692_580 / 1_199_412, abs=1e-9)
    assert 0.42 < r < 0.43
    assert net.param_count(dual) < net.param_count(single)
    assert net.reduction_ratio(single, single) == 0.0


def test_feature_dims():
    assert NetworkSpec(Variant.SINGLE).feature_dim() == 2592
    assert NetworkSpec(Variant.DUAL).feature_dim() == 576
    assert NetworkSpec(Variant.GENERIC_ONLY).feature_dim() == 288


def test_init_bias_conventions():
    params = build_network(NetworkSpec(Variant.DUAL), seed=3)
    assert np.all(params["lstm.bf"] == 1.0)
    assert np.all(params["lstm.bi"] == 0.0)
    assert np.all(params["fc.b"] == 0.0)
    assert params["gen.conv1.w"].std() > 0


def test_init_is_seed_deterministic():
    spec = NetworkSpec(Variant.DUAL)
    a = build_network(spec, seed=9)
    b = build_network(spec, seed=9)
    c = build_network(spec, seed=10)
    assert np.array_equal(a.flat, b.flat)
    assert not np.array_equal(a.flat, c.flat)


# ---------------------------------------------------------------------------
# forward pass

def test_zero_params_uniform_policy_zero_value():
    spec = NetworkSpec(Variant.DUAL, n_actions=3)
    params = nn.ParamSet(param_layout(spec))
    obs = Observation.dual(np.random.default_rng(0).random((42, 42), dtype=np.float32),
                           np.random.default_rng(1).random((42, 42), dtype=np.float32))
    pv, state = net.forward(params, spec, obs, LstmState.zeros(256))
    assert np.allclose(pv.policy, 1 / 3, atol=1e-7)
    assert pv.value == 0.0
    assert state.h.shape == (256,) and state.c.shape == (256,)


def test_forward_output_shapes_dual():
    spec = NetworkSpec(Variant.DUAL, n_actions=3)
    params = build_network(spec, seed=1)
    rng = np.random.default_rng(2)
    obs = Observation.dual(rng.random((42, 42), dtype=np.float32),
                           rng.random((42, 42), dtype=np.float32))
    pv, state = net.forward(params, spec, obs, LstmState.zeros(256))
    assert pv.policy.shape == (3,)
    assert np.isscalar(pv.value)
    assert abs(pv.policy.sum() - 1.0) < 1e-6


def test_forward_is_deterministic():
    spec = small_spec(Variant.DUAL)
    params = build_network(spec, seed=4)
    rng = np.random.default_rng(5)
    obs = random_obs(spec, rng)
    st0 = LstmState(h=rng.normal(size=8), c=rng.normal(size=8))
    pv1, s1 = net.forward(params, spec, obs, st0)
    pv2, s2 = net.forward(params, spec, obs, st0)
    assert np.array_equal(pv1.policy, pv2.policy)
    assert pv1.value == pv2.value
    assert np.array_equal(s1.h, s2.h) and np.array_equal(s1.c, s2.c)


def test_forward_variant_mismatch_raises():
    spec = small_spec(Variant.DUAL)
    params = build_network(spec, seed=4)
    bad = Observation.dual(np.zeros((16, 16)), np.zeros((8, 8)))
    with pytest.raises(ValueError):
        net.forward(params, spec, bad, LstmState.zeros(8))


def test_policy_invariant_under_logit_shift():
    spec = small_spec(Variant.SINGLE)
    params = build_network(spec, seed=6, dtype=np.float64)
    rng = np.random.default_rng(7)
    obs = random_obs(spec, rng)
    pv, _ = net.forward(params, spec, obs, LstmState.zeros(8, np.float64))
    shifted = params.copy()
    shifted["pi.b"] += 3.7
    pv2, _ = net.forward(shifted, spec, obs, LstmState.zeros(8, np.float64))
    assert np.allclose(pv.policy, pv2.policy, atol=1e-12)


# ---------------------------------------------------------------------------
# returns and entropy

def test_returns_gamma_zero():
    r = net.n_step_returns([3.0, -1.0, 2.0], bootstrap=5.0, gamma=0.0)
    assert np.allclose(r, [3.0, -1.0, 2.0])


def test_returns_example():
    r = net.n_step_returns([1.0, 1.0, 1.0], bootstrap=0.0, gamma=0.99)
    assert np.allclose(r, [2.9701, 1.99, 1.0], atol=1e-12)


def test_returns_single_step_bootstrap():
    assert net.n_step_returns([0.0], 10.0, 0.99)[0] == pytest.approx(9.9)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30),
       st.floats(-10, 10), st.floats(0, 1))
@settings(max_examples=100, deadline=None)
def test_returns_recursion_property(rewards, bootstrap, gamma):
    r = net.n_step_returns(rewards, bootstrap, gamma)
    ext = np.append(r, bootstrap)
    for t in range(len(rewards)):
        assert r[t] == pytest.approx(rewards[t] + gamma * ext[t + 1], abs=1e-9)


def test_entropy_values():
    assert net.entropy([1.0, 0.0, 0.0]) == 0.0
    assert net.entropy([1 / 3] * 3) == pytest.approx(np.log(3), abs=1e-12)


@given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=8))
@settings(max_examples=100, deadline=None)
def test_entropy_bounds(weights):
    p = np.asarray(weights) / np.sum(weights)
    h = net.entropy(p)
    assert 0.0 <= h <= np.log(len(p)) + 1e-9
    assert h <= net.entropy(np.full(len(p), 1 / len(p))) + 1e-9


# ---------------------------------------------------------------------------
# A3C loss

def test_loss_zero_advantage_uniform_policy_leaves_entropy_term():
    spec = small_spec(Variant.DUAL)
    params = nn.ParamSet(param_layout(spec), dtype=np.float64)
    rng = np.random.default_rng(8)
    steps = [RolloutStep(obs=random_obs(spec, rng), action=0, reward=0.0, value=0.0)
             for _ in range(4)]
    rollout = Rollout(steps=steps, initial_state=LstmState.zeros(8, np.float64),
                      bootstrap_value=0.0, terminal=True)
    loss, grads = net.a3c_loss_and_grads(rollout, params, spec, gamma=0.99,
                                         entropy_weight=0.01, value_coeff=0.5)
    # returns == values == 0 and the policy is exactly uniform, so the
    # policy/value terms vanish; entropy of uniform is at its maximum, so its
    # logit gradient vanishes as well
    assert loss == pytest.approx(-0.01 * 4 * np.log(3), abs=1e-9)
    assert np.max(np.abs(grads.flat)) <= 1e-12


def test_loss_degenerate_deterministic_policy_is_zero():
    spec = small_spec(Variant.SINGLE)
    params = nn.ParamSet(param_layout(spec), dtype=np.float64)
    params["pi.b"][...] = np.array([200.0, 0.0, 0.0])
    rng = np.random.default_rng(9)
    steps = [RolloutStep(obs=random_obs(spec, rng), action=0, reward=0.0, value=0.0)
             for _ in range(3)]
    rollout = Rollout(steps=steps, initial_state=LstmState.zeros(8, np.float64),
                      bootstrap_value=0.0, terminal=True)
    loss, grads = net.a3c_loss_and_grads(rollout, params, spec, gamma=0.99)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.max(np.abs(grads.flat)) <= 1e-12


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    spec = small_spec(Variant.DUAL)
    params = build_network(spec, seed=11, dtype=np.float64)
    rollout = random_rollout(spec, rng, 3)
    adv = net.rollout_advantages(rollout, params, spec, 0.99)

    def loss_fn(p):
        return net.a3c_loss_and_grads(rollout, p, spec, gamma=0.99, advantages=adv)

    rep = nn.grad_check(loss_fn, params, h=1e-5, tolerance=1e-5)
    assert rep.passed, rep.failures()


def test_loss_reuses_acting_caches():
    rng = np.random.default_rng(12)
    spec = small_spec(Variant.GENERIC_ONLY)
    params = build_network(spec, seed=13)
    rollout = random_rollout(spec, rng, 5)
    state = LstmState(h=rollout.initial_state.h.astype(np.float32),
                      c=rollout.initial_state.c.astype(np.float32))
    caches = []
    for step in rollout.steps:
        _, state, cache = net.forward_cached(params, spec, step.obs, state)
        caches.append(cache)
    l1, g1 = net.a3c_loss_and_grads(rollout, params, spec, 0.99)
    l2, g2 = net.a3c_loss_and_grads(rollout, params, spec, 0.99, caches=caches)
    assert l1 == l2
    assert np.array_equal(g1.flat, g2.flat)


def test_rollout_validation():
    with pytest.raises(ValueError):
        Rollout(steps=[], initial_state=LstmState.zeros(8)).validate()
    r = Rollout(steps=[RolloutStep(None, 0, 0.0, 0.0)],
                initial_state=LstmState.zeros(8), bootstrap_value=1.0, terminal=True)
    with pytest.raises(ValueError):
        r.validate()
