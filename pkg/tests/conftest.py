import numpy as np
import pytest

from evohps.evo import make_record
from evohps.hyperspace import (ORDINAL_GRID, GeneSchema, HyperparamSpec,
                               build_schema)


class FixedRng:
    """Deterministic stand-in for a Generator: hands out scripted draws."""

    def __init__(self, integers=(), randoms=()):
        self._integers = list(integers)
        self._randoms = list(randoms)

    def integers(self, *args, **kwargs):
        return self._integers.pop(0)

    def random(self, *args, **kwargs):
        return self._randoms.pop(0)


@pytest.fixture
def fixed_rng():
    return FixedRng


@pytest.fixture
def demo_schema():
    """Three-position demo layout for the operator worked examples."""
    return GeneSchema(
        "dqn",
        (
            HyperparamSpec("gamma", ORDINAL_GRID, (0.01, 0.5)),
            HyperparamSpec("learning_rate", ORDINAL_GRID, (0.1, 0.5, 0.8)),
            HyperparamSpec("neurons", ORDINAL_GRID, (10, 50)),
        ),
    )


@pytest.fixture
def dqn_schema():
    return build_schema("dqn")


@pytest.fixture
def toy_evaluator(dqn_schema):
    """Analytic fitness peaked at gamma = 0.5; no RL training involved."""
    position = dqn_schema.position("gamma")

    def evaluate(gene, seed, eval_episodes):
        gamma = gene.values[position]
        return make_record(eval_episodes, -((gamma - 0.5) ** 2), 1e12)

    return evaluate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
