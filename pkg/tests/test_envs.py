import math

import numpy as np
import pytest

from evohps.envs import (CartPole, Continuous, Discrete, EnvError, LanderLite,
                         LaserCBC, make_env)


class TestCartPole:
    def test_reset_distribution(self):
        rng = np.random.default_rng(0)
        observations = np.array([CartPole().reset(int(rng.integers(2**31)))
                                 for _ in range(500)])
        assert observations.max() <= 0.05
        assert observations.min() >= -0.05
        assert abs(observations.mean()) < 0.01

    def test_single_step_hand_integration(self):
        # independent hand integration of the stated dynamics from rest
        env = CartPole()
        env.set_state([0.0, 0.0, 0.0, 0.0])
        result = env.step(1)
        force, cart_m, pole_m, half_len, dt = 10.0, 1.0, 0.1, 0.5, 0.02
        total = cart_m + pole_m
        temp = force / total
        theta_acc = -temp / (half_len * (4.0 / 3.0 - pole_m / total))
        x_acc = temp - pole_m * half_len * theta_acc / total
        np.testing.assert_allclose(
            result.observation,
            [0.0, dt * x_acc, 0.0, dt * theta_acc],
            atol=1e-14,
        )
        assert result.reward == 1.0

    def test_always_right_breaches_angle_quickly(self):
        env = CartPole()
        env.set_state([0.0, 0.0, 0.0, 0.0])
        steps = 0
        while True:
            result = env.step(1)
            steps += 1
            if result.done:
                break
        assert steps < 100
        assert abs(result.observation[2]) > env.ANGLE_LIMIT

    def test_reward_one_per_step_until_done(self):
        env = CartPole(max_steps=50)
        env.reset(3)
        total = 0.0
        while True:
            result = env.step(0)
            total += result.reward
            if result.done:
                break
        assert total == float(int(total))
        assert total >= 1.0

    def test_position_breach_terminates(self):
        env = CartPole()
        env.set_state([2.39, 10.0, 0.0, 0.0])
        result = env.step(1)
        assert result.done and abs(result.observation[0]) > 2.4

    def test_step_after_done_rejected(self):
        env = CartPole(max_steps=1)
        env.reset(0)
        env.step(0)
        with pytest.raises(EnvError):
            env.step(0)

    def test_determinism(self):
        env1, env2 = CartPole(), CartPole()
        env1.reset(42)
        env2.reset(42)
        actions = np.random.default_rng(0).integers(0, 2, size=30)
        for action in actions:
            r1 = env1.step(int(action))
            r2 = env2.step(int(action))
            np.testing.assert_array_equal(r1.observation, r2.observation)
            assert r1.reward == r2.reward and r1.done == r2.done
            if r1.done:
                break

    def test_spec(self):
        spec = CartPole().spec
        assert spec.observation_dim == 4
        assert spec.action_space == Discrete(2)


class TestLanderLite:
    def test_free_fall_velocity_is_linear_in_steps(self):
        env = LanderLite()
        env.set_state([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        for k in range(1, 11):
            result = env.step(0)
            assert result.observation[3] == pytest.approx(-env.GRAVITY * k * env.DT)

    def test_soft_touchdown_over_pad_pays_plus_hundred(self):
        env = LanderLite()
        env.set_state([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        while True:
            result = env.step(0)
            if result.done:
                break
        assert result.reward > 99.0
        assert result.observation[6] == 1.0 and result.observation[7] == 1.0

    def test_touchdown_off_pad_crashes(self):
        env = LanderLite()
        env.set_state([2.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        while True:
            result = env.step(0)
            if result.done:
                break
        assert result.reward < -99.0

    def test_out_of_bounds_drift_pays_minus_hundred(self):
        env = LanderLite()
        env.set_state([2.9, 1.0, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0])
        while True:
            result = env.step(2)
            if result.done:
                break
        assert result.reward < -99.0

    def test_thrusters_move_laterally(self):
        env = LanderLite()
        env.set_state([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        result = env.step(2)
        assert result.observation[2] > 0.0
        env.set_state([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        result = env.step(1)
        assert result.observation[2] < 0.0

    def test_shaping_reward_penalizes_distance_and_speed(self):
        env = LanderLite()
        env.set_state([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        near = env.step(0).reward
        env.set_state([2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        far = env.step(0).reward
        assert near > far

    def test_spec(self):
        spec = LanderLite().spec
        assert spec.observation_dim == 8
        assert spec.action_space == Discrete(3)


class TestLaserCBC:
    def test_aligned_phases_pay_success_bonus_immediately(self):
        env = LaserCBC()
        env.set_phases(np.zeros(9))
        result = env.step(np.zeros(9))
        assert result.reward == pytest.approx(101.0)
        assert result.done

    def test_ninth_roots_of_unity_cancel(self):
        env = LaserCBC()
        env.set_phases(2.0 * math.pi * np.arange(9) / 9.0)
        assert env.efficiency == pytest.approx(0.0, abs=1e-12)

    def test_center_detector_reads_efficiency(self, rng):
        env = LaserCBC()
        observation = env.set_phases(rng.uniform(-math.pi, math.pi, 9))
        assert observation[12] == pytest.approx(env.efficiency, abs=1e-12)

    def test_efficiency_invariant_under_global_shift(self, rng):
        env = LaserCBC()
        phases = rng.uniform(-math.pi, math.pi, 9)
        env.set_phases(phases)
        before = env.efficiency
        env.set_phases(phases + 2.345)
        assert env.efficiency == pytest.approx(before, abs=1e-12)

    def test_efficiency_bounded(self, rng):
        env = LaserCBC()
        for _ in range(200):
            env.set_phases(rng.uniform(-math.pi, math.pi, 9))
            assert 0.0 <= env.efficiency <= 1.0

    def test_action_dimension_enforced(self):
        env = LaserCBC()
        env.reset(0)
        with pytest.raises(EnvError):
            env.step(np.zeros(4))

    def test_reset_spreads_phases_inside_band(self):
        rng = np.random.default_rng(8)
        env = LaserCBC(phase_spread=0.5)
        for _ in range(100):
            env.reset(int(rng.integers(2**31)))
            phases = env._phases
            # relative spread around the circular mean stays inside the band
            mean_angle = math.atan2(np.sin(phases).sum(), np.cos(phases).sum())
            residual = np.angle(np.exp(1j * (phases - mean_angle)))
            assert np.all(np.abs(residual) <= 2 * 0.5 + 1e-9)

    def test_wider_spread_lowers_initial_efficiency(self):
        rng = np.random.default_rng(9)
        tight, loose = [], []
        for _ in range(200):
            seed = int(rng.integers(2**31))
            env = LaserCBC(phase_spread=0.2)
            env.reset(seed)
            tight.append(env.efficiency)
            env = LaserCBC(phase_spread=1.5)
            env.reset(seed)
            loose.append(env.efficiency)
        assert np.mean(tight) > np.mean(loose)

    def test_plus_one_per_step_until_cap(self):
        env = LaserCBC(max_steps=5)
        env.set_phases(2.0 * math.pi * np.arange(9) / 9.0)
        total, steps = 0.0, 0
        while True:
            result = env.step(np.full(9, 0.01))
            total += result.reward
            steps += 1
            if result.done:
                break
        assert steps == 5 and total == pytest.approx(5.0)

    def test_spec(self):
        spec = LaserCBC().spec
        assert spec.observation_dim == 25
        assert isinstance(spec.action_space, Continuous)
        assert spec.action_space.dim == 9


class TestCommonContract:
    @pytest.mark.parametrize("env_id", ["cartpole", "lander", "laser"])
    def test_seeded_episodes_reproduce(self, env_id):
        env1, env2 = make_env(env_id), make_env(env_id)
        rng = np.random.default_rng(5)
        env1.reset(123)
        env2.reset(123)
        space = env1.spec.action_space
        for _ in range(40):
            if isinstance(space, Discrete):
                action = int(rng.integers(space.n))
            else:
                action = rng.uniform(space.low, space.high)
            r1, r2 = env1.step(action), env2.step(action)
            np.testing.assert_array_equal(r1.observation, r2.observation)
            assert r1.reward == r2.reward
            if r1.done:
                break

    @pytest.mark.parametrize("env_id", ["cartpole", "lander", "laser"])
    def test_observations_stay_finite_under_random_actions(self, env_id):
        rng = np.random.default_rng(11)
        for episode in range(5):
            env = make_env(env_id)
            env.reset(int(rng.integers(2**31)))
            space = env.spec.action_space
            while True:
                if isinstance(space, Discrete):
                    action = int(rng.integers(space.n))
                else:
                    action = rng.uniform(space.low, space.high)
                result = env.step(action)
                assert np.all(np.isfinite(result.observation))
                assert math.isfinite(result.reward)
                if result.done:
                    break

    def test_unknown_env_id_rejected(self):
        with pytest.raises(EnvError):
            make_env("atari")

    def test_trace_dump_writes_csv_lines(self, tmp_path):
        trace = tmp_path / "trace.csv"
        env = make_env("cartpole", trace_path=trace)
        env.reset(0)
        env.step(1)
        env.step(0)
        lines = trace.read_text().strip().splitlines()
        assert len(lines) == 2
        # state (4 values), action, reward
        assert len(lines[0].split(",")) == 6
