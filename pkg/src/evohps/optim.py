"""Optimizer suite selectable as a gene value: SGD/Adam steps, nonlinear
conjugate gradient, L-BFGS, and Levenberg-Marquardt.

``cg_minimize``/``lbfgs_minimize`` take an ``objective(x) -> (value, grad)``
callable.  The shared line search is Armijo backtracking (c1=1e-4, shrink 0.5)
whose first trial is the minimizer of the quadratic interpolant through
phi(0), phi'(0) and phi(1); on quadratic objectives that trial is the exact
line minimizer, which is what makes CG terminate in dim steps there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ARMIJO_C1 = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACKS = 50
CURVATURE_FLOOR = 1e-10


class OptimizerError(ValueError):
    pass


def sgd_step(params: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape:
        raise OptimizerError(f"shape mismatch: params {params.shape}, grad {grad.shape}")
    if learning_rate <= 0:
        raise OptimizerError("learning rate must be positive")
    return params - learning_rate * grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray,
              learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected Adam update; returns the advanced state and parameters."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise OptimizerError("adam_step shape mismatch")
    if learning_rate <= 0:
        raise OptimizerError("learning rate must be positive")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m, v, t), new_params


def _check_finite(value: float, where: str) -> None:
    if not np.isfinite(value):
        raise OptimizerError(f"objective returned non-finite value during {where}")


def _line_search(objective, x, f0, g0, d, probe: float = 1.0):
    """Armijo backtracking whose first trial interpolates a parabola.

    The parabola through phi(0), phi'(0) and phi(probe) gives the trial step;
    on quadratic objectives that trial is the exact line minimizer for any
    probe, which is what lets CG terminate in dim iterations there.  Failing
    Armijo at the trial falls back to plain halving.  Returns
    (x_new, f_new, g_new, step) or None when no acceptable step exists.
    """
    derphi0 = float(g0 @ d)
    if derphi0 >= 0.0:
        return None
    f_probe, g_probe = objective(x + probe * d)
    _check_finite(f_probe, "line search")
    gap = f_probe - f0 - derphi0 * probe
    if gap <= 0.0:
        # drops at least linearly out to the probe, so the probe passes Armijo
        return x + probe * d, f_probe, g_probe, probe
    t = -derphi0 * probe * probe / (2.0 * gap)
    t = min(max(t, 1e-14 * probe), 1e6)
    for _ in range(MAX_BACKTRACKS):
        xt = x + t * d
        ft, gt = objective(xt)
        _check_finite(ft, "line search")
        if ft <= f0 + ARMIJO_C1 * t * derphi0:
            return xt, ft, gt, t
        t *= ARMIJO_SHRINK
    return None


def cg_minimize(objective, x0, max_iters: int = 500,
                tol: float = 1e-8) -> tuple[np.ndarray, int]:
    """Nonlinear conjugate gradient with the Polak-Ribiere-plus coefficient.

    Stops when the gradient norm drops to ``tol`` or after ``max_iters``
    iterations; negative beta values restart with steepest descent.
    """
    if tol <= 0:
        raise OptimizerError("tol must be positive")
    x = np.asarray(x0, dtype=float).copy()
    f, g = objective(x)
    _check_finite(f, "cg_minimize")
    if np.linalg.norm(g) <= tol:
        return x, 0
    d = -g
    probe = 1.0
    for iteration in range(1, max_iters + 1):
        if float(g @ d) >= 0.0:
            d = -g
        step = _line_search(objective, x, f, g, d, probe)
        if step is None:
            return x, iteration - 1
        x_new, f_new, g_new, taken = step
        probe = max(2.0 * taken, 1e-12)
        beta = max(0.0, float(g_new @ (g_new - g)) / max(float(g @ g), 1e-300))
        d = -g_new + beta * d
        x, f, g = x_new, f_new, g_new
        if np.linalg.norm(g) <= tol:
            return x, iteration
    return x, max_iters


def lbfgs_minimize(objective, x0, memory: int = 10, max_iters: int = 200,
                   tol: float = 1e-8) -> tuple[np.ndarray, int]:
    """Limited-memory BFGS with two-loop recursion and Armijo backtracking.

    Curvature pairs with s.y <= 1e-10 are discarded; the implicit initial
    Hessian is scaled by the latest s.y / y.y.
    """
    if memory < 1:
        raise OptimizerError("memory must be >= 1")
    if tol <= 0:
        raise OptimizerError("tol must be positive")
    x = np.asarray(x0, dtype=float).copy()
    f, g = objective(x)
    _check_finite(f, "lbfgs_minimize")
    if np.linalg.norm(g) <= tol:
        return x, 0
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    for iteration in range(1, max_iters + 1):
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / float(y @ s)
            a = rho * float(s @ q)
            alphas.append((a, rho, s, y))
            q -= a * y
        if y_hist:
            s_last, y_last = s_hist[-1], y_hist[-1]
            q *= float(s_last @ y_last) / float(y_last @ y_last)
        for a, rho, s, y in reversed(alphas):
            b = rho * float(y @ q)
            q += (a - b) * s
        d = -q
        if float(g @ d) >= 0.0:
            d = -g
        step = _line_search(objective, x, f, g, d)
        if step is None:
            return x, iteration - 1
        x_new, f_new, g_new, _ = step
        s = x_new - x
        y = g_new - g
        if float(s @ y) > CURVATURE_FLOOR:
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        if np.linalg.norm(g) <= tol:
            return x, iteration
    return x, max_iters


def lm_step(residual_fn, x, lam: float) -> tuple[np.ndarray, float]:
    """One Levenberg-Marquardt trial step with diagonal damping.

    Solves (J^T J + lam * diag(J^T J)) delta = -J^T r.  An accepted step
    (residual norm decreased) divides the damping by 10; a rejected one keeps
    x and multiplies it by 10, sliding between Gauss-Newton and scaled
    gradient descent.
    """
    if lam <= 0:
        raise OptimizerError("damping factor must be positive")
    x = np.asarray(x, dtype=float)
    r, jac = residual_fn(x)
    r = np.asarray(r, dtype=float)
    jac = np.asarray(jac, dtype=float)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(jac))):
        raise OptimizerError("residuals and Jacobian must be finite")
    normal = jac.T @ jac
    damped = normal + lam * np.diag(np.diag(normal))
    rhs = -jac.T @ r
    try:
        delta = np.linalg.solve(damped, rhs)
    except np.linalg.LinAlgError as exc:
        raise OptimizerError(
            "damped normal equations are singular; increase the damping factor"
        ) from exc
    if not np.all(np.isfinite(delta)):
        raise OptimizerError(
            "damped normal equations are ill-conditioned; increase the damping factor"
        )
    r_new, _ = residual_fn(x + delta)
    if float(np.sum(np.square(r_new))) < float(np.sum(np.square(r))):
        return x + delta, lam / 10.0
    return x, lam * 10.0


def lm_minimize(residual_fn, x0, lam: float = 1e-3, max_steps: int = 50,
                tol: float = 1e-12) -> tuple[np.ndarray, int]:
    """Iterate lm_step until the residual norm stalls below ``tol``."""
    x = np.asarray(x0, dtype=float).copy()
    for step in range(1, max_steps + 1):
        x, lam = lm_step(residual_fn, x, lam)
        r, _ = residual_fn(x)
        if float(np.sum(np.square(r))) <= tol:
            return x, step
    return x, max_steps


def gauss_newton_identity_step(residuals: np.ndarray, jacobian: np.ndarray,
                               lam: float) -> np.ndarray:
    """Identity-damped Gauss-Newton step solved in residual space.

    delta = -J^T (J J^T + lam I)^-1 r, equivalent to the normal-equation form
    but only a (batch x batch) solve; used by trainers whose parameter count
    makes the dense J^T J prohibitive.
    """
    r = np.asarray(residuals, dtype=float)
    jac = np.asarray(jacobian, dtype=float)
    if lam <= 0:
        raise OptimizerError("damping factor must be positive")
    gram = jac @ jac.T
    gram[np.diag_indices_from(gram)] += lam
    try:
        z = np.linalg.solve(gram, r)
    except np.linalg.LinAlgError as exc:
        raise OptimizerError("damped residual system is singular") from exc
    return -jac.T @ z
