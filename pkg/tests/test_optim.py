import numpy as np
import pytest

from gradpipe import layers as L
from gradpipe.errors import ConfigError, ContractError
from gradpipe.optim import (
    AdamOptimizer,
    DiminishingSchedule,
    FixedSchedule,
    OptimizerConfig,
    SgdOptimizer,
    gamma_sq_sum,
    gamma_sum,
    stepsize,
    stepsize_ratio_bound,
)


def single_param_state(values):
    return [L.LayerState(np.array(values, dtype=np.float64), None)]


def single_param_grad(values):
    return [L.LayerState(np.array(values, dtype=np.float64), None)]


class TestSchedules:
    def test_diminishing_values(self):
        s = DiminishingSchedule(1.0)
        assert stepsize(s, 0) == 1.0
        assert stepsize(s, 1) == 0.5
        assert stepsize(s, 9) == 0.1

    def test_fixed(self):
        s = FixedSchedule(0.01)
        assert all(stepsize(s, t) == 0.01 for t in range(10))

    def test_gamma_sum_matches_direct_summation(self):
        s = DiminishingSchedule(1.0)
        acc = 0.0
        for t in range(1000):
            acc += 1.0 / (1.0 + t)
        assert gamma_sum(s, 1000) == acc

    def test_gamma_sq_sum(self):
        s = DiminishingSchedule(2.0)
        acc = 0.0
        for t in range(100):
            acc += (2.0 / (1.0 + t)) ** 2
        assert gamma_sq_sum(s, 100) == acc

    def test_sigma_ratio_bound(self):
        assert stepsize_ratio_bound(FixedSchedule(0.1), 7) == 1.0
        assert stepsize_ratio_bound(DiminishingSchedule(0.1), 7) == 7.0
        # the actual ratio gamma_{max(0,t-K+1)}/gamma_t never exceeds K
        s = DiminishingSchedule(1.0)
        K = 7
        worst = max(
            stepsize(s, max(0, t - K + 1)) / stepsize(s, t) for t in range(200)
        )
        assert worst <= K + 1e-12


class TestSgd:
    def test_zero_gradient_no_change(self):
        states = single_param_state([1.0, 2.0])
        opt = SgdOptimizer(FixedSchedule(0.1))
        opt.step(states, single_param_grad([0.0, 0.0]), 0)
        assert np.array_equal(states[0].weights, [1.0, 2.0])

    def test_one_step_arithmetic(self):
        states = single_param_state([1.0, 1.0])
        opt = SgdOptimizer(FixedSchedule(0.1))
        opt.step(states, single_param_grad([1.0, 2.0]), 0)
        assert np.allclose(states[0].weights, [0.9, 0.8], rtol=0, atol=1e-16)

    def test_contraction_on_quadratic(self):
        # f(w) = 0.5 ||w||^2, grad = w, fixed gamma=0.1: w_t = 0.9^t w_0
        states = single_param_state([2.0, -3.0])
        w0 = states[0].weights.copy()
        opt = SgdOptimizer(FixedSchedule(0.1))
        # scalar recurrence oracle with identical operation order
        oracle = w0.copy()
        for t in range(50):
            opt.step(states, [L.LayerState(states[0].weights.copy(), None)], t)
            oracle = oracle - 0.1 * oracle
        assert np.array_equal(states[0].weights, oracle)
        assert np.allclose(states[0].weights, (0.9**50) * w0, rtol=1e-12)

    def test_recurrence_matches_direct_formula_bitwise(self):
        # T steps of sgd reproduce w <- w - gamma_t * g against a direct loop
        gen = np.random.default_rng(0)
        w_init = gen.normal(size=(4, 3))
        grads = [gen.normal(size=(4, 3)) for _ in range(30)]
        sched = DiminishingSchedule(0.5)
        states = [L.LayerState(w_init.copy(), None)]
        opt = SgdOptimizer(sched)
        direct = w_init.copy()
        for t, g in enumerate(grads):
            opt.step(states, [L.LayerState(g, None)], t)
            direct = direct - stepsize(sched, t) * g
        assert np.array_equal(states[0].weights, direct)

    def test_momentum(self):
        states = single_param_state([0.0])
        opt = SgdOptimizer(FixedSchedule(1.0), momentum=0.5)
        opt.step(states, single_param_grad([1.0]), 0)  # v=1, w=-1
        opt.step(states, single_param_grad([1.0]), 1)  # v=1.5, w=-2.5
        assert np.allclose(states[0].weights, [-2.5])

    def test_weight_decay(self):
        states = single_param_state([2.0])
        opt = SgdOptimizer(FixedSchedule(0.1), weight_decay=0.5)
        opt.step(states, single_param_grad([0.0]), 0)
        # g_eff = 0 + 0.5*2 = 1; w = 2 - 0.1 = 1.9
        assert np.allclose(states[0].weights, [1.9])

    def test_shape_mismatch(self):
        states = single_param_state([1.0, 2.0])
        opt = SgdOptimizer(FixedSchedule(0.1))
        with pytest.raises(ContractError):
            opt.step(states, single_param_grad([1.0, 2.0, 3.0]), 0)

    def test_bad_momentum(self):
        with pytest.raises(ConfigError):
            SgdOptimizer(FixedSchedule(0.1), momentum=1.0)


class TestAdam:
    def test_bias_correction_identity_at_t0(self):
        g = np.array([0.3, -1.2, 4.0])
        opt = AdamOptimizer(gamma=1e-3)
        states = single_param_state([0.0, 0.0, 0.0])
        opt.step(states, [L.LayerState(g.copy(), None)], 0)
        m_hat = opt.m[0].weights / (1.0 - 0.9)
        assert np.allclose(m_hat, g, rtol=0, atol=1e-18)

    def test_warmup_zero_gradient_keeps_weights_and_moments(self):
        states = single_param_state([1.0, -1.0])
        opt = AdamOptimizer(gamma=1e-3)
        opt.step(states, single_param_grad([0.0, 0.0]), 0)
        assert np.array_equal(states[0].weights, [1.0, -1.0])
        assert not opt.m[0].weights.any()
        assert not opt.v[0].weights.any()

    def test_matches_scalar_oracle_constant_gradient(self):
        c = 0.37
        gamma, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        states = single_param_state([1.0])
        opt = AdamOptimizer(gamma=gamma)
        m = v = 0.0
        w = 1.0
        for t in range(10):
            opt.step(states, single_param_grad([c]), t)
            m = b1 * m + (1 - b1) * c
            v = b2 * v + (1 - b2) * c * c
            m_hat = m / (1 - b1 ** (t + 1))
            v_hat = v / (1 - b2 ** (t + 1))
            w = w - gamma * m_hat / (np.sqrt(v_hat) + eps)
            assert abs(states[0].weights[0] - w) <= 1e-15 * max(1.0, abs(w))

    def test_v_nonnegative_under_random_gradients(self):
        gen = np.random.default_rng(13)
        states = single_param_state(list(gen.normal(size=5)))
        opt = AdamOptimizer()
        for t in range(200):
            g = gen.normal(size=5) * gen.uniform(0, 100)
            opt.step(states, [L.LayerState(g, None)], t)
            assert np.all(opt.v[0].weights >= 0.0)

    def test_weight_decay_enters_moments(self):
        states = single_param_state([2.0])
        opt = AdamOptimizer(gamma=1e-3, weight_decay=0.5)
        opt.step(states, single_param_grad([0.0]), 0)
        # effective gradient 0 + 0.5*2 = 1 feeds the moment buffers
        assert opt.m[0].weights[0] == pytest.approx(0.1)
        assert opt.v[0].weights[0] == pytest.approx(0.001)
        assert states[0].weights[0] < 2.0

    def test_global_t_used_for_bias_correction(self):
        # starting at t=5 with zero history must not reproduce the t=0 identity
        g = np.array([1.0])
        opt = AdamOptimizer(gamma=1.0, eps=1e-12)
        states = single_param_state([0.0])
        opt.step(states, [L.LayerState(g, None)], 5)
        m_hat = opt.m[0].weights / (1.0 - 0.9**6)
        v_hat = opt.v[0].weights / (1.0 - 0.999**6)
        expect = -1.0 * m_hat / (np.sqrt(v_hat) + 1e-12)
        assert np.allclose(states[0].weights, expect)


class TestModuleLocality:
    def test_updating_one_module_never_touches_another(self):
        a = single_param_state([1.0, 1.0])
        b = single_param_state([2.0, 2.0])
        opt_a = SgdOptimizer(FixedSchedule(0.1))
        opt_b = SgdOptimizer(FixedSchedule(0.1))
        opt_a.step(a, single_param_grad([1.0, 1.0]), 0)
        assert np.array_equal(b[0].weights, [2.0, 2.0])
        opt_adam = AdamOptimizer()
        opt_adam.step(b, single_param_grad([1.0, 1.0]), 0)
        assert np.allclose(a[0].weights, [0.9, 0.9])


class TestOptimizerConfig:
    def test_build(self):
        assert isinstance(OptimizerConfig("sgd", FixedSchedule(0.1)).build(), SgdOptimizer)
        assert isinstance(OptimizerConfig("adam").build(), AdamOptimizer)
        with pytest.raises(ConfigError):
            OptimizerConfig("rmsprop").build()
