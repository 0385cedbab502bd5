"""Genetic-algorithm engine: fitness, roulette selection, crossover, mutation,
and the generational search loop.

The fitness of an evaluated individual is

    f = 1/n + sum(rewards) + 1/(sum(losses) + eps)

combining evaluation episode count, cumulative evaluation reward and the
training loss carried into the record.  Selection weights are shifted to be
nonnegative when any fitness is <= 0, since environment rewards can push the
sum negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hyperspace import Gene, GeneSchema, sample_gene, validate
from .seeding import derive_seed

LOSS_EPSILON = 1e-8
SHIFT_DELTA = 1e-6


class EvolutionError(ValueError):
    pass


@dataclass(frozen=True)
class FitnessRecord:
    """Outcome of evaluating one individual."""

    n: int
    reward_sum: float
    loss_sum: float
    fitness: float


@dataclass
class Individual:
    gene: Gene
    seed: int
    generation: int
    index: int
    record: FitnessRecord | None = None
    error: str | None = None


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 8
    crossover_rate: float = 0.7
    mutation_rate: float = 0.2
    eval_episodes: int = 10
    generations: int = 10
    elitism_count: int = 1

    def __post_init__(self):
        if self.population_size < 2:
            raise EvolutionError("population_size must be >= 2")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise EvolutionError("crossover_rate must lie in [0, 1]")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise EvolutionError("mutation_rate must lie in [0, 1]")
        if self.eval_episodes < 1:
            raise EvolutionError("eval_episodes must be >= 1")
        if self.generations < 1:
            raise EvolutionError("generations must be >= 1")
        if not 0 <= self.elitism_count < self.population_size:
            raise EvolutionError("elitism_count must satisfy 0 <= count < population_size")


def compute_fitness(n: int, reward_sum: float, loss_sum: float) -> float:
    """1/n + reward_sum + 1/(loss_sum + eps); eps guards a zero loss total."""
    if n < 1:
        raise EvolutionError(f"episode count must be >= 1, got {n}")
    if loss_sum < 0:
        raise EvolutionError(f"loss_sum must be >= 0, got {loss_sum}")
    return 1.0 / n + reward_sum + 1.0 / (loss_sum + LOSS_EPSILON)


def make_record(n: int, reward_sum: float, loss_sum: float) -> FitnessRecord:
    return FitnessRecord(n, float(reward_sum), float(loss_sum),
                         compute_fitness(n, reward_sum, loss_sum))


def failure_record(eval_episodes: int) -> FitnessRecord:
    """Worst-possible sentinel assigned to individuals whose evaluation failed."""
    return make_record(eval_episodes, 0.0, math.inf)


def shifted_weights(fitnesses: Sequence[float]) -> np.ndarray:
    """Selection weights: raw fitness, shifted up when any value is <= 0."""
    f = np.asarray(fitnesses, dtype=float)
    if f.size == 0:
        raise EvolutionError("cannot select from an empty fitness sequence")
    if not np.all(np.isfinite(f)):
        raise EvolutionError("fitness values must be finite for selection")
    if np.any(f <= 0.0):
        f = f - f.min() + SHIFT_DELTA
    return f


def roulette_select(fitnesses: Sequence[float], rng: np.random.Generator) -> int:
    """Sample an index with probability proportional to (shifted) fitness."""
    w = shifted_weights(fitnesses)
    cum = np.cumsum(w)
    r = rng.random() * cum[-1]
    return int(np.searchsorted(cum, r, side="right").clip(0, w.size - 1))


def crossover_at(parent1: Gene, parent2: Gene, cut: int) -> tuple[Gene, Gene]:
    """Single-point crossover at a fixed cut in {1, ..., L-1}."""
    if parent1.schema_id != parent2.schema_id or len(parent1) != len(parent2):
        raise EvolutionError(
            "cannot cross genes from different schemas "
            f"({parent1.schema_id!r} vs {parent2.schema_id!r})"
        )
    length = len(parent1)
    if not 1 <= cut <= length - 1:
        raise EvolutionError(f"cut point {cut} out of range for gene length {length}")
    child1 = Gene(parent1.schema_id, parent1.values[:cut] + parent2.values[cut:])
    child2 = Gene(parent2.schema_id, parent2.values[:cut] + parent1.values[cut:])
    return child1, child2


def crossover(parent1: Gene, parent2: Gene, rng: np.random.Generator) -> tuple[Gene, Gene]:
    """Single-point crossover at a uniformly drawn cut."""
    if parent1.schema_id != parent2.schema_id or len(parent1) != len(parent2):
        raise EvolutionError(
            "cannot cross genes from different schemas "
            f"({parent1.schema_id!r} vs {parent2.schema_id!r})"
        )
    if len(parent1) < 2:
        raise EvolutionError("crossover needs gene length >= 2")
    cut = int(rng.integers(1, len(parent1)))
    return crossover_at(parent1, parent2, cut)


def mutate_position(gene: Gene, schema: GeneSchema, position: int,
                    rng: np.random.Generator) -> Gene:
    """Replace one position with a uniformly drawn different allowed value."""
    spec = schema.params[position]
    if spec.is_grid:
        options = spec.alternatives(gene.values[position])
        if not options:
            return gene
        return gene.replace(position, options[int(rng.integers(len(options)))])
    # Ranges: resample until the draw differs (ties are measure-zero).
    for _ in range(16):
        value = spec.sample(rng)
        if value != gene.values[position]:
            return gene.replace(position, value)
    return gene


def mutate(gene: Gene, schema: GeneSchema, mutation_rate: float,
           rng: np.random.Generator) -> Gene:
    """With probability ``mutation_rate``, rewrite exactly one position."""
    if not validate(gene, schema):
        raise EvolutionError("cannot mutate a gene that does not validate")
    if rng.random() >= mutation_rate:
        return gene
    position = int(rng.integers(len(gene)))
    return mutate_position(gene, schema, position, rng)


def rank_by_fitness(evaluated: Sequence[Individual]) -> list[Individual]:
    """Stable sort, best fitness first.  All individuals must carry records."""
    for ind in evaluated:
        if ind.record is None:
            raise EvolutionError(
                f"individual g{ind.generation}/i{ind.index} has no fitness record"
            )
    return sorted(evaluated, key=lambda ind: -ind.record.fitness)


def next_generation(evaluated: Sequence[Individual], config: GAConfig,
                    schema: GeneSchema, rng: np.random.Generator) -> list[Gene]:
    """Produce the next population: elites verbatim, the rest bred.

    Parents are roulette-selected with replacement; crossover fires with
    probability ``crossover_rate`` (otherwise the parents are copied), then
    every child passes through mutation.  The returned list has exactly
    ``population_size`` genes and slots [0:elitism_count] are the elites in
    rank order.
    """
    if len(evaluated) != config.population_size:
        raise EvolutionError(
            f"expected {config.population_size} evaluated individuals, got {len(evaluated)}"
        )
    ranked = rank_by_fitness(evaluated)
    genes: list[Gene] = [ind.gene for ind in ranked[: config.elitism_count]]
    fitnesses = [ind.record.fitness for ind in evaluated]
    while len(genes) < config.population_size:
        i = roulette_select(fitnesses, rng)
        j = roulette_select(fitnesses, rng)
        p1, p2 = evaluated[i].gene, evaluated[j].gene
        if rng.random() < config.crossover_rate:
            c1, c2 = crossover(p1, p2, rng)
        else:
            c1, c2 = p1, p2
        for child in (c1, c2):
            if len(genes) >= config.population_size:
                break
            genes.append(mutate(child, schema, config.mutation_rate, rng))
    return genes


@dataclass
class EvalRequest:
    """One unit of evaluation work handed to the evaluator."""

    gene: Gene
    seed: int
    eval_episodes: int
    generation: int
    index: int
    carried_record: FitnessRecord | None = None
    carried_error: str | None = None


@dataclass
class SearchHistory:
    """Every evaluated individual, in evaluation order, plus the overall best."""

    method: str
    individuals: list[Individual] = field(default_factory=list)

    @property
    def best(self) -> Individual:
        scored = [i for i in self.individuals if i.record is not None]
        if not scored:
            raise EvolutionError("history holds no evaluated individuals")
        return max(scored, key=lambda ind: ind.record.fitness)

    def generations(self) -> dict[int, list[Individual]]:
        table: dict[int, list[Individual]] = {}
        for ind in self.individuals:
            table.setdefault(ind.generation, []).append(ind)
        return table

    def best_fitness_curve(self) -> list[float]:
        table = self.generations()
        return [max(ind.record.fitness for ind in table[g]) for g in sorted(table)]

    def best_so_far_curve(self) -> list[float]:
        best = -math.inf
        curve = []
        for ind in self.individuals:
            best = max(best, ind.record.fitness)
            curve.append(best)
        return curve


Evaluator = Callable[[Gene, int, int], FitnessRecord]


def evaluate_requests(evaluator, requests: list[EvalRequest]) -> list[Individual]:
    """Run one batch of requests through an evaluator.

    Evaluators exposing ``evaluate_many`` (the worker-pool path) receive the
    whole batch, carried records included, and own parallelism and logging.
    Plain callables are invoked per gene; a raised exception becomes a
    worst-fitness sentinel rather than aborting the search.
    """
    if hasattr(evaluator, "evaluate_many"):
        outcomes = evaluator.evaluate_many(requests)
    else:
        outcomes = []
        for req in requests:
            if req.carried_record is not None:
                outcomes.append((req.carried_record, req.carried_error))
                continue
            try:
                record = evaluator(req.gene, req.seed, req.eval_episodes)
                outcomes.append((record, None))
            except Exception as exc:  # noqa: BLE001 - one bad gene must not kill the run
                outcomes.append((failure_record(req.eval_episodes), str(exc)))
    individuals = []
    for req, (record, error) in zip(requests, outcomes):
        individuals.append(
            Individual(req.gene, req.seed, req.generation, req.index, record, error)
        )
    return individuals


def run_ga(config: GAConfig, schema: GeneSchema, evaluator, rng: np.random.Generator,
           seed_fn: Callable[[int, int], int] | None = None) -> SearchHistory:
    """Evolve for ``config.generations`` generations and return the history.

    ``evaluator`` maps (gene, seed, eval_episodes) to a FitnessRecord.  Elites
    carry their record and seed into the next generation unchanged instead of
    being retrained, which makes the per-generation best fitness monotone
    non-decreasing whenever ``elitism_count >= 1``.
    """
    if seed_fn is None:
        salt = int(rng.integers(2**62))
        seed_fn = lambda g, i: derive_seed(salt, g, i)  # noqa: E731

    history = SearchHistory("ga")
    genes = [sample_gene(schema, rng) for _ in range(config.population_size)]
    carried: list[tuple[FitnessRecord, str | None, int] | None]
    carried = [None] * config.population_size

    for generation in range(config.generations):
        requests = []
        for i, gene in enumerate(genes):
            if carried[i] is not None:
                record, error, seed = carried[i]
                requests.append(EvalRequest(gene, seed, config.eval_episodes,
                                            generation, i, record, error))
            else:
                requests.append(EvalRequest(gene, seed_fn(generation, i),
                                            config.eval_episodes, generation, i))
        evaluated = evaluate_requests(evaluator, requests)
        history.individuals.extend(evaluated)

        if generation + 1 < config.generations:
            genes = next_generation(evaluated, config, schema, rng)
            elites = rank_by_fitness(evaluated)[: config.elitism_count]
            carried = [None] * config.population_size
            for slot, elite in enumerate(elites):
                carried[slot] = (elite.record, elite.error, elite.seed)
    return history
