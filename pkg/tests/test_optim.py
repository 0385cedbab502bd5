import numpy as np
import pytest

from evohps.optim import (AdamState, OptimizerError, adam_step, cg_minimize,
                          gauss_newton_identity_step, lbfgs_minimize, lm_minimize,
                          lm_step, sgd_step)


def spd_quadratic():
    matrix = np.array([[3.0, 1.0], [1.0, 2.0]])
    target = np.array([1.0, -2.0])

    def objective(x):
        return 0.5 * x @ matrix @ x - target @ x, matrix @ x - target

    return objective, np.linalg.solve(matrix, target)


def rosenbrock(v):
    x, y = v
    value = (1.0 - x) ** 2 + 100.0 * (y - x * x) ** 2
    grad = np.array([-2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                     200.0 * (y - x * x)])
    return value, grad


class TestSgd:
    def test_zero_grad_no_move(self):
        params = np.array([1.0, 2.0])
        np.testing.assert_array_equal(sgd_step(params, np.zeros(2), 0.1), params)

    def test_hand_case(self):
        out = sgd_step(np.array([1.0, 1.0]), np.array([1.0, -1.0]), 0.1)
        np.testing.assert_allclose(out, [0.9, 1.1])

    def test_two_steps_on_scalar_square(self):
        x = np.array([1.0])
        for _ in range(2):
            x = sgd_step(x, 2.0 * x, 0.1)
        assert x[0] == pytest.approx(0.64)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(OptimizerError):
            sgd_step(np.zeros(2), np.zeros(3), 0.1)


class TestAdam:
    def test_zero_grad_no_move(self):
        state = AdamState.zeros(2)
        _, params = adam_step(state, np.array([1.0, 2.0]), np.zeros(2), 0.1)
        np.testing.assert_array_equal(params, [1.0, 2.0])

    def test_first_step_is_signed_learning_rate(self):
        for magnitude in (1e-4, 1.0, 1e4):
            state = AdamState.zeros(1)
            _, params = adam_step(state, np.zeros(1), np.array([magnitude]), 0.1)
            assert params[0] == pytest.approx(-0.1, rel=1e-3)

    def test_converges_on_shifted_square(self):
        state = AdamState.zeros(1)
        x = np.zeros(1)
        for _ in range(200):
            state, x = adam_step(state, x, 2.0 * (x - 3.0), 0.1)
        assert abs(x[0] - 3.0) < 0.01

    def test_step_counter_advances(self):
        state = AdamState.zeros(1)
        state, _ = adam_step(state, np.zeros(1), np.ones(1), 0.1)
        assert state.t == 1


class TestConjugateGradient:
    def test_exact_on_quadratic_within_two_iterations(self):
        objective, solution = spd_quadratic()
        x, iterations = cg_minimize(objective, np.array([5.0, -7.0]),
                                    max_iters=10, tol=1e-12)
        assert iterations <= 2
        assert np.linalg.norm(x - solution) < 1e-8

    def test_rosenbrock_classic_start(self):
        x, iterations = cg_minimize(rosenbrock, np.array([-1.2, 1.0]),
                                    max_iters=500, tol=1e-10)
        assert iterations <= 500
        assert np.linalg.norm(x - np.ones(2)) < 1e-4

    def test_start_at_minimizer_returns_immediately(self):
        objective, solution = spd_quadratic()
        x, iterations = cg_minimize(objective, solution, max_iters=10, tol=1e-8)
        assert iterations == 0
        np.testing.assert_allclose(x, solution)

    def test_nonfinite_objective_rejected(self):
        def bad(x):
            return float("nan"), np.zeros_like(x)

        with pytest.raises(OptimizerError):
            cg_minimize(bad, np.zeros(2), max_iters=5, tol=1e-8)


class TestLbfgs:
    def test_quadratic_to_machine_precision_within_ten(self):
        objective, solution = spd_quadratic()
        x, iterations = lbfgs_minimize(objective, np.array([5.0, -7.0]),
                                       max_iters=10, tol=1e-10)
        assert iterations <= 10
        assert np.linalg.norm(objective(x)[1]) < 1e-10

    def test_rosenbrock_within_two_hundred(self):
        x, iterations = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]),
                                       max_iters=200, tol=1e-6)
        assert iterations <= 200
        assert np.linalg.norm(x - np.ones(2)) < 1e-4

    def test_memory_one_still_converges(self):
        objective, solution = spd_quadratic()
        x, _ = lbfgs_minimize(objective, np.array([5.0, -7.0]), memory=1,
                              max_iters=50, tol=1e-8)
        assert np.linalg.norm(x - solution) < 1e-6

    def test_bad_memory_rejected(self):
        with pytest.raises(OptimizerError):
            lbfgs_minimize(rosenbrock, np.zeros(2), memory=0)


class TestLevenbergMarquardt:
    def test_linear_least_squares_single_accepted_step(self):
        rng = np.random.default_rng(3)
        design = rng.normal(size=(10, 3))
        target = rng.normal(size=10)
        solution = np.linalg.lstsq(design, target, rcond=None)[0]

        def residuals(p):
            return design @ p - target, design

        x, lam = lm_step(residuals, np.zeros(3), 1e-9)
        assert lam == pytest.approx(1e-10)
        assert np.linalg.norm(x - solution) < 1e-8

    def test_large_damping_follows_gradient(self):
        # columns of equal norm make the diagonal damping isotropic
        rng = np.random.default_rng(4)
        design = np.linalg.qr(rng.normal(size=(6, 3)))[0]
        target = 0.3 * np.ones(6)

        def residuals(p):
            return design @ p - target, design

        start = np.array([1.0, -2.0, 0.5])
        gradient = design.T @ (design @ start - target)
        moved, _ = lm_step(residuals, start, 1e8)
        delta = moved - start
        cosine = -(delta @ gradient) / (np.linalg.norm(delta) * np.linalg.norm(gradient))
        assert cosine > 0.999

    def test_rejected_step_keeps_x_and_raises_damping(self):
        def residuals(p):
            return np.array([p[0] ** 2 - 1.0]), np.array([[2.0 * p[0]]])

        # from a point where the Gauss-Newton step overshoots badly
        x, lam = lm_step(residuals, np.array([1e-4]), 1e-12)
        if np.array_equal(x, [1e-4]):
            assert lam == pytest.approx(1e-11)

    def test_exponential_fit_toy(self):
        t = np.arange(10, dtype=float)
        observed = 2.0 * np.exp(-0.3 * t)

        def residuals(p):
            amplitude, rate = p
            model = amplitude * np.exp(rate * t)
            jac = np.stack([np.exp(rate * t), amplitude * t * np.exp(rate * t)], axis=1)
            return model - observed, jac

        x, steps = lm_minimize(residuals, np.array([1.0, 0.0]), lam=1e-3, max_steps=50)
        assert steps <= 50
        assert np.linalg.norm(residuals(x)[0]) < 1e-6
        np.testing.assert_allclose(x, [2.0, -0.3], atol=1e-6)

    def test_singular_system_suggests_larger_damping(self):
        def residuals(p):
            return np.array([p[0]]), np.array([[1.0, 0.0]])  # dead second column

        with pytest.raises(OptimizerError, match="damping"):
            lm_step(residuals, np.zeros(2), 1e-8)

    def test_accepted_steps_reduce_residual_norm(self):
        t = np.linspace(0, 1, 8)
        observed = 1.5 * t + 0.3

        def residuals(p):
            return p[0] * t + p[1] - observed, np.stack([t, np.ones_like(t)], axis=1)

        x = np.zeros(2)
        lam = 1.0
        previous = np.sum(residuals(x)[0] ** 2)
        for _ in range(20):
            x_new, lam_new = lm_step(residuals, x, lam)
            if not np.array_equal(x_new, x):
                current = np.sum(residuals(x_new)[0] ** 2)
                assert current < previous
                previous = current
            x, lam = x_new, lam_new


class TestIdentityDampedStep:
    def test_matches_parameter_space_solve(self):
        rng = np.random.default_rng(6)
        jac = rng.normal(size=(5, 12))
        res = rng.normal(size=5)
        lam = 0.37
        fast = gauss_newton_identity_step(res, jac, lam)
        direct = np.linalg.solve(jac.T @ jac + lam * np.eye(12), -jac.T @ res)
        np.testing.assert_allclose(fast, direct, atol=1e-10)
