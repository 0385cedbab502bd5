import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evohps.evo import (EvolutionError, GAConfig, Individual, compute_fitness,
                        crossover, crossover_at, failure_record, make_record,
                        mutate, mutate_position, next_generation, roulette_select,
                        run_ga, shifted_weights)
from evohps.hyperspace import Gene, sample_gene, validate


class TestComputeFitness:
    def test_unit_inputs(self):
        assert compute_fitness(1, 0.0, 1.0) == pytest.approx(2.0, rel=1e-8)

    def test_hand_evaluated_case(self):
        expected = 0.01 + 195.0 + 1.0 / (50.0 + 1e-8)
        assert compute_fitness(100, 195.0, 50.0) == pytest.approx(expected, rel=1e-12)

    def test_zero_loss_guard(self):
        assert compute_fitness(10, 0.0, 0.0) == pytest.approx(0.1 + 1e8, rel=1e-12)

    def test_zero_episodes_rejected(self):
        with pytest.raises(EvolutionError):
            compute_fitness(0, 1.0, 1.0)

    def test_negative_loss_rejected(self):
        with pytest.raises(EvolutionError):
            compute_fitness(1, 0.0, -1.0)

    @given(st.integers(min_value=1, max_value=1000),
           st.floats(min_value=-1e3, max_value=1e3),
           st.floats(min_value=1e-6, max_value=1e6))
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_reward_and_loss(self, n, reward, loss):
        base = compute_fitness(n, reward, loss)
        assert compute_fitness(n, reward + 1.0, loss) > base
        assert compute_fitness(n, reward, loss * 2.0) < base

    def test_failure_record_is_finite_floor(self):
        record = failure_record(10)
        assert record.fitness == pytest.approx(0.1)
        assert math.isinf(record.loss_sum)


class TestRouletteSelect:
    def test_direct_normalization_probabilities(self):
        rng = np.random.default_rng(0)
        counts = np.zeros(3)
        draws = 100_000
        for _ in range(draws):
            counts[roulette_select([1.0, 1.0, 2.0], rng)] += 1
        assert counts[0] / draws == pytest.approx(0.25, abs=0.01)
        assert counts[2] / draws == pytest.approx(0.5, abs=0.01)

    def test_singleton_always_selected(self, rng):
        assert all(roulette_select([5.0], rng) == 0 for _ in range(20))

    def test_three_to_one_frequency(self):
        rng = np.random.default_rng(9)
        draws = 100_000
        hits = sum(roulette_select([1.0, 3.0], rng) for _ in range(draws))
        assert hits / draws == pytest.approx(0.75, abs=0.01)

    def test_empty_sequence_rejected(self, rng):
        with pytest.raises(EvolutionError):
            roulette_select([], rng)

    def test_nonpositive_fitness_shifted(self):
        weights = shifted_weights([-2.0, -1.0, 0.0])
        assert np.all(weights > 0)
        assert weights[2] > weights[0]

    def test_all_positive_left_unshifted(self):
        np.testing.assert_allclose(shifted_weights([2.0, 4.0]), [2.0, 4.0])


class TestCrossover:
    def test_worked_example_cut_two(self, demo_schema):
        parent1 = Gene("dqn", (0.01, 0.1, 10))
        parent2 = Gene("dqn", (0.5, 0.8, 50))
        child1, child2 = crossover_at(parent1, parent2, 2)
        assert child1.values == (0.01, 0.1, 50)
        assert child2.values == (0.5, 0.8, 10)

    def test_rng_wrapper_draws_cut(self, demo_schema, fixed_rng):
        parent1 = Gene("dqn", (0.01, 0.1, 10))
        parent2 = Gene("dqn", (0.5, 0.8, 50))
        child1, child2 = crossover(parent1, parent2, fixed_rng(integers=[2]))
        assert child1.values == (0.01, 0.1, 50)
        assert child2.values == (0.5, 0.8, 10)

    def test_identical_parents_clone(self, demo_schema, rng):
        gene = sample_gene(demo_schema, rng)
        child1, child2 = crossover(gene, gene, rng)
        assert child1 == gene and child2 == gene

    def test_every_cut_preserves_position_multisets(self, demo_schema, rng):
        parent1 = sample_gene(demo_schema, rng)
        parent2 = sample_gene(demo_schema, rng)
        for cut in range(1, len(parent1)):
            child1, child2 = crossover_at(parent1, parent2, cut)
            for position in range(len(parent1)):
                assert sorted([child1.values[position], child2.values[position]],
                              key=repr) == sorted(
                    [parent1.values[position], parent2.values[position]], key=repr)
            assert validate(child1, demo_schema) and validate(child2, demo_schema)

    def test_cross_schema_rejected(self, rng):
        with pytest.raises(EvolutionError, match="schema"):
            crossover(Gene("dqn", (1, 2, 3)), Gene("a2c", (1, 2, 3)), rng)


class TestMutate:
    def test_worked_example_position_one(self, demo_schema, fixed_rng):
        child = Gene("dqn", (0.01, 0.1, 50))
        # alternatives at position 1 are (0.5, 0.8); scripted draw picks 0.5
        mutated = mutate_position(child, demo_schema, 1, fixed_rng(integers=[0]))
        assert mutated.values == (0.01, 0.5, 50)

    def test_zero_rate_returns_input(self, demo_schema, rng):
        gene = sample_gene(demo_schema, rng)
        assert mutate(gene, demo_schema, 0.0, rng) == gene

    def test_forced_mutation_changes_exactly_one_position(self, dqn_schema):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            gene = sample_gene(dqn_schema, rng)
            mutated = mutate(gene, dqn_schema, 1.0, rng)
            hamming = sum(a != b for a, b in zip(gene.values, mutated.values))
            assert hamming == 1
            assert validate(mutated, dqn_schema)

    def test_invalid_gene_rejected(self, dqn_schema, rng):
        with pytest.raises(EvolutionError):
            mutate(Gene("dqn", (1, 2)), dqn_schema, 0.5, rng)


def _evaluated_population(schema, config, rng, fitnesses=None):
    population = []
    for index in range(config.population_size):
        gene = sample_gene(schema, rng)
        fitness_value = fitnesses[index] if fitnesses else float(index + 1)
        record = make_record(config.eval_episodes, fitness_value, 1e12)
        population.append(Individual(gene, seed=index, generation=0, index=index,
                                     record=record))
    return population


class TestNextGeneration:
    def test_operators_disabled_resamples_inputs(self, dqn_schema, rng):
        config = GAConfig(population_size=6, crossover_rate=0.0, mutation_rate=0.0,
                          elitism_count=0)
        evaluated = _evaluated_population(dqn_schema, config, rng)
        genes = next_generation(evaluated, config, dqn_schema, rng)
        source = {ind.gene for ind in evaluated}
        assert len(genes) == 6
        assert all(gene in source for gene in genes)

    def test_elitism_keeps_best_gene(self, dqn_schema, rng):
        config = GAConfig(population_size=6, elitism_count=1)
        evaluated = _evaluated_population(dqn_schema, config, rng)
        best = max(evaluated, key=lambda ind: ind.record.fitness)
        genes = next_generation(evaluated, config, dqn_schema, rng)
        assert genes[0] == best.gene

    def test_outputs_validate_over_random_populations(self, dqn_schema):
        rng = np.random.default_rng(5)
        config = GAConfig(population_size=8)
        for _ in range(100):
            evaluated = _evaluated_population(dqn_schema, config, rng)
            for gene in next_generation(evaluated, config, dqn_schema, rng):
                assert validate(gene, dqn_schema)

    def test_unevaluated_individual_rejected(self, dqn_schema, rng):
        config = GAConfig(population_size=2)
        population = [
            Individual(sample_gene(dqn_schema, rng), 0, 0, 0, make_record(1, 0, 1)),
            Individual(sample_gene(dqn_schema, rng), 0, 0, 1, None),
        ]
        with pytest.raises(EvolutionError, match="no fitness record"):
            next_generation(population, config, dqn_schema, rng)


class TestRunGA:
    def test_toy_quadratic_finds_peak_in_most_seeds(self, dqn_schema, toy_evaluator):
        position = dqn_schema.position("gamma")
        hits = 0
        for seed in range(5):
            config = GAConfig(population_size=8, generations=10, elitism_count=1)
            history = run_ga(config, dqn_schema, toy_evaluator,
                             np.random.default_rng(seed))
            hits += history.best.gene.values[position] == 0.5
            curve = history.best_fitness_curve()
            assert all(later >= earlier for earlier, later in zip(curve, curve[1:]))
        assert hits >= 4

    def test_single_generation_history_size(self, dqn_schema, toy_evaluator, rng):
        config = GAConfig(population_size=5, generations=1)
        history = run_ga(config, dqn_schema, toy_evaluator, rng)
        assert len(history.individuals) == 5
        assert all(ind.record is not None for ind in history.individuals)

    def test_history_counts_population_times_generations(self, dqn_schema,
                                                         toy_evaluator, rng):
        config = GAConfig(population_size=4, generations=3)
        history = run_ga(config, dqn_schema, toy_evaluator, rng)
        assert len(history.individuals) == 12

    def test_failing_evaluator_gets_sentinel_not_crash(self, dqn_schema, rng):
        calls = {"n": 0}

        def flaky(gene, seed, eval_episodes):
            calls["n"] += 1
            if calls["n"] % 3 == 0:
                raise RuntimeError("exploded")
            return make_record(eval_episodes, 1.0, 1.0)

        config = GAConfig(population_size=4, generations=2)
        history = run_ga(config, dqn_schema, flaky, rng)
        failures = [ind for ind in history.individuals if ind.error]
        assert failures
        for ind in failures:
            assert ind.record.fitness == pytest.approx(
                failure_record(config.eval_episodes).fitness)

    def test_reproducible_from_seed(self, dqn_schema, toy_evaluator):
        config = GAConfig(population_size=6, generations=4)
        h1 = run_ga(config, dqn_schema, toy_evaluator, np.random.default_rng(3))
        h2 = run_ga(config, dqn_schema, toy_evaluator, np.random.default_rng(3))
        assert [(i.gene, i.seed, i.record) for i in h1.individuals] == \
               [(i.gene, i.seed, i.record) for i in h2.individuals]
