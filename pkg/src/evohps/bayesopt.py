"""Gaussian-process surrogate search over the unit-cube gene relaxation.

The surrogate is a squared-exponential-kernel GP with fixed hyperparameters;
fitness observations are standardized per fit so the fixed scales stay
serviceable.  Proposals maximize an acquisition function (expected
improvement, probability of improvement, or UCB) by multi-start random
screening followed by coordinate-wise golden-section ascent, then snap back
onto the discrete gene grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

from .evo import EvalRequest, SearchHistory, evaluate_requests
from .hyperspace import (Gene, GeneSchema, decode_unit_cube, encode_unit_cube,
                         sample_gene)
from .seeding import derive_seed

DEFAULT_LENGTHSCALE = 0.2
DEFAULT_SIGNAL_VARIANCE = 1.0
DEFAULT_NOISE_VARIANCE = 1e-4

N_RANDOM_STARTS = 1024
N_REFINED = 32
ASCENT_STEPS = 100
GOLDEN_ITERS = 12
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class SurrogateError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    x: tuple
    y: float

    def __post_init__(self):
        coords = tuple(float(c) for c in self.x)
        if any(c < -1e-9 or c > 1.0 + 1e-9 for c in coords):
            raise SurrogateError(f"observation coordinates outside [0,1]: {coords}")
        if not math.isfinite(self.y):
            raise SurrogateError("observed value must be finite")
        object.__setattr__(self, "x", coords)
        object.__setattr__(self, "y", float(self.y))


@dataclass
class GPModel:
    lengthscale: float
    signal_variance: float
    noise_variance: float
    observations: tuple[Observation, ...]
    chol: np.ndarray                      # lower factor of K + noise*I
    _x: np.ndarray = field(repr=False, default=None)
    _alpha: np.ndarray = field(repr=False, default=None)


def se_kernel(x, x_other, lengthscale: float, signal_variance: float) -> float:
    """Squared-exponential covariance: sigma_f^2 exp(-|x-x'|^2 / (2 l^2))."""
    a = np.asarray(x, dtype=float)
    b = np.asarray(x_other, dtype=float)
    if a.shape != b.shape:
        raise SurrogateError(f"kernel input dims differ: {a.shape} vs {b.shape}")
    if lengthscale <= 0:
        raise SurrogateError("lengthscale must be positive")
    sq = float(np.sum((a - b) ** 2))
    return signal_variance * math.exp(-sq / (2.0 * lengthscale**2))


def _gram(xs: np.ndarray, lengthscale: float, signal_variance: float) -> np.ndarray:
    sq = np.sum((xs[:, None, :] - xs[None, :, :]) ** 2, axis=2)
    return signal_variance * np.exp(-sq / (2.0 * lengthscale**2))


def _cross(xs: np.ndarray, queries: np.ndarray, lengthscale: float,
           signal_variance: float) -> np.ndarray:
    sq = np.sum((queries[:, None, :] - xs[None, :, :]) ** 2, axis=2)
    return signal_variance * np.exp(-sq / (2.0 * lengthscale**2))


def gp_fit(observations: Sequence[Observation], lengthscale: float = DEFAULT_LENGTHSCALE,
           signal_variance: float = DEFAULT_SIGNAL_VARIANCE,
           noise_variance: float = DEFAULT_NOISE_VARIANCE) -> GPModel:
    """Build and factorize the Gram matrix over all observations."""
    obs = tuple(observations)
    if not obs:
        raise SurrogateError("gp_fit needs at least one observation")
    if lengthscale <= 0 or signal_variance <= 0 or noise_variance < 0:
        raise SurrogateError("kernel hyperparameters must be positive (noise >= 0)")
    xs = np.array([o.x for o in obs], dtype=float)
    ys = np.array([o.y for o in obs], dtype=float)
    cov = _gram(xs, lengthscale, signal_variance)
    cov[np.diag_indices_from(cov)] += noise_variance
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SurrogateError(
            "covariance is not positive definite (duplicate points?); "
            "increase noise_variance jitter"
        ) from exc
    alpha = cho_solve((chol, True), ys)
    return GPModel(lengthscale, signal_variance, noise_variance, obs, chol, xs, alpha)


def _predict_batch(model: GPModel, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k_star = _cross(model._x, queries, model.lengthscale, model.signal_variance)
    mean = k_star @ model._alpha
    v = solve_triangular(model.chol, k_star.T, lower=True)
    var = model.signal_variance - np.sum(v**2, axis=0)
    return mean, np.sqrt(np.clip(var, 0.0, None))


def gp_predict(model: GPModel, x) -> tuple[float, float]:
    """Posterior mean and stddev at one point."""
    q = np.asarray(x, dtype=float)
    if q.shape != (model._x.shape[1],):
        raise SurrogateError(
            f"query has shape {q.shape}, model expects ({model._x.shape[1]},)"
        )
    mean, std = _predict_batch(model, q[None, :])
    return float(mean[0]), float(std[0])


@dataclass(frozen=True)
class AcquisitionKind:
    name: str                 # "ei" | "pi" | "ucb"
    kappa: float = 2.0        # exploration weight, ucb only

    def __post_init__(self):
        if self.name not in ("ei", "pi", "ucb"):
            raise SurrogateError(f"unknown acquisition kind {self.name!r}")
        if not math.isfinite(self.kappa) or self.kappa < 0:
            raise SurrogateError("exploration weight must be finite and >= 0")


EXPECTED_IMPROVEMENT = AcquisitionKind("ei")
PROBABILITY_OF_IMPROVEMENT = AcquisitionKind("pi")


def ucb(kappa: float) -> AcquisitionKind:
    return AcquisitionKind("ucb", kappa)


def acquisition_kind(name: str, kappa: float = 2.0) -> AcquisitionKind:
    aliases = {"ei": "ei", "expected_improvement": "ei",
               "pi": "pi", "probability_of_improvement": "pi",
               "ucb": "ucb"}
    if name not in aliases:
        raise SurrogateError(f"unknown acquisition kind {name!r}")
    return AcquisitionKind(aliases[name], kappa)


def _acquisition_values(mean: np.ndarray, std: np.ndarray, kind: AcquisitionKind,
                        best_y: float) -> np.ndarray:
    if kind.name == "ucb":
        return mean + kind.kappa * std
    improvement = mean - best_y
    positive = std > 0.0
    safe_std = np.where(positive, std, 1.0)
    z = improvement / safe_std
    if kind.name == "ei":
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        values = improvement * ndtr(z) + std * pdf
        return np.where(positive, values, np.maximum(improvement, 0.0))
    return np.where(positive, ndtr(z), (improvement > 0.0).astype(float))


def acquisition(model: GPModel, x, kind: AcquisitionKind, best_y: float) -> float:
    """EI, PI, or UCB at a single point given the incumbent value."""
    mean, std = gp_predict(model, x)
    return float(_acquisition_values(np.array([mean]), np.array([std]), kind, best_y)[0])


def _acquisition_batch(model: GPModel, points: np.ndarray, kind: AcquisitionKind,
                       best_y: float) -> np.ndarray:
    mean, std = _predict_batch(model, points)
    return _acquisition_values(mean, std, kind, best_y)


def _golden_ascent(model: GPModel, points: np.ndarray, kind: AcquisitionKind,
                   best_y: float, steps: int = ASCENT_STEPS,
                   iters: int = GOLDEN_ITERS) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate-cycling golden-section ascent over the unit cube.

    All rows advance in lockstep so each shrink costs one batched posterior
    evaluation; a coordinate only moves when the line search improved it.
    """
    points = points.copy()
    dim = points.shape[1]
    scores = _acquisition_batch(model, points, kind, best_y)
    for step in range(steps):
        coord = step % dim

        def f_at(values: np.ndarray) -> np.ndarray:
            trial = points.copy()
            trial[:, coord] = values
            return _acquisition_batch(model, trial, kind, best_y)

        a = np.zeros(len(points))
        b = np.ones(len(points))
        x1 = b - _INVPHI * (b - a)
        x2 = a + _INVPHI * (b - a)
        f1 = f_at(x1)
        f2 = f_at(x2)
        for _ in range(iters):
            left = f1 > f2
            old_x1, old_x2 = x1, x2
            old_f1, old_f2 = f1, f2
            b = np.where(left, old_x2, b)
            a = np.where(left, a, old_x1)
            x1 = np.where(left, b - _INVPHI * (b - a), old_x2)
            x2 = np.where(left, old_x1, a + _INVPHI * (b - a))
            fresh = np.where(left, x1, x2)
            f_fresh = f_at(fresh)
            f1 = np.where(left, f_fresh, old_f2)
            f2 = np.where(left, old_f1, f_fresh)
        candidate = np.where(f1 > f2, x1, x2)
        f_candidate = np.maximum(f1, f2)
        improved = f_candidate > scores
        points[improved, coord] = candidate[improved]
        scores = np.where(improved, f_candidate, scores)
    return points, scores


def propose_next(model: GPModel, schema: GeneSchema, kind: AcquisitionKind,
                 best_y: float, rng: np.random.Generator) -> Gene:
    """Multi-start acquisition maximization, decoded back to a valid gene."""
    dim = len(schema)
    screen = rng.random((N_RANDOM_STARTS, dim))
    screen_scores = _acquisition_batch(model, screen, kind, best_y)
    order = np.argsort(screen_scores)[::-1]
    starts = screen[order[:N_REFINED]]
    refined, refined_scores = _golden_ascent(model, starts, kind, best_y)
    candidates = np.vstack([screen, refined])
    scores = np.concatenate([screen_scores, refined_scores])
    winner = candidates[int(np.argmax(scores))]
    return decode_unit_cube(winner, schema)


def _standardized_model(observations: list[Observation]) -> tuple[GPModel, float, float]:
    ys = np.array([o.y for o in observations])
    mean = float(ys.mean())
    std = float(ys.std())
    if std < 1e-12:
        std = 1.0
    scaled = [Observation(o.x, (o.y - mean) / std) for o in observations]
    return gp_fit(scaled), mean, std


def run_bo(budget: int, n_init: int, schema: GeneSchema, kind: AcquisitionKind,
           evaluator, rng: np.random.Generator,
           seed_fn: Callable[[int, int], int] | None = None,
           eval_episodes: int = 10) -> SearchHistory:
    """Random initialization followed by fit/propose/evaluate to the budget.

    Each evaluation occupies its own generation index so history and log
    formats line up with the GA's.  Failed evaluations are recorded with the
    worst-fitness sentinel and the loop continues.
    """
    if n_init < 1:
        raise SurrogateError("n_init must be >= 1")
    if budget < n_init:
        raise SurrogateError("budget must be >= n_init")
    if seed_fn is None:
        salt = int(rng.integers(2**62))
        seed_fn = lambda g, i: derive_seed(salt, g, i)  # noqa: E731

    history = SearchHistory("bo")
    observations: list[Observation] = []
    for iteration in range(budget):
        if iteration < n_init:
            gene = sample_gene(schema, rng)
        else:
            model, _, _ = _standardized_model(observations)
            best_std = max(o.y for o in model.observations)
            gene = propose_next(model, schema, kind, best_std, rng)
        request = EvalRequest(gene, seed_fn(iteration, 0), eval_episodes, iteration, 0)
        individual = evaluate_requests(evaluator, [request])[0]
        history.individuals.append(individual)
        observations.append(
            Observation(tuple(encode_unit_cube(gene, schema)), individual.record.fitness)
        )
    return history


def run_random(budget: int, schema: GeneSchema, evaluator, rng: np.random.Generator,
               seed_fn: Callable[[int, int], int] | None = None,
               eval_episodes: int = 10) -> SearchHistory:
    """Pure random-sampling baseline; shares the BO history layout."""
    if budget < 1:
        raise SurrogateError("budget must be >= 1")
    if seed_fn is None:
        salt = int(rng.integers(2**62))
        seed_fn = lambda g, i: derive_seed(salt, g, i)  # noqa: E731
    history = SearchHistory("random")
    for iteration in range(budget):
        gene = sample_gene(schema, rng)
        request = EvalRequest(gene, seed_fn(iteration, 0), eval_episodes, iteration, 0)
        history.individuals.append(evaluate_requests(evaluator, [request])[0])
    return history
