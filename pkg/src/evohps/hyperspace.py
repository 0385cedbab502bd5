"""Per-algorithm hyperparameter search spaces and gene encodings.

A gene is an ordered tuple of hyperparameter values laid out by a
:class:`GeneSchema`.  DQN and DDPG share an 8-parameter layout; A2C carries
two extra positions (trajectory size and KL penalty weight), so gene length
depends on the algorithm.  ``encode_unit_cube``/``decode_unit_cube`` give a
continuous relaxation of the same space for optimizers that work on real
vectors.

All types are immutable; random sources are always passed in explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ALGORITHMS = ("dqn", "ddpg", "a2c")

CATEGORICAL = "categorical"
ORDINAL_GRID = "ordinal-grid"
CONTINUOUS_RANGE = "continuous-range"
INTEGER_RANGE = "integer-range"

KINDS = (CATEGORICAL, ORDINAL_GRID, CONTINUOUS_RANGE, INTEGER_RANGE)


class SearchSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class HyperparamSpec:
    """One tunable parameter: a value grid, a category list, or a range."""

    name: str
    kind: str
    allowed: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SearchSpaceError(f"unknown spec kind {self.kind!r} for {self.name!r}")
        object.__setattr__(self, "allowed", tuple(self.allowed))
        if self.is_grid:
            if len(self.allowed) == 0:
                raise SearchSpaceError(f"{self.name!r}: allowed value list is empty")
            if self.kind == ORDINAL_GRID:
                if any(b <= a for a, b in zip(self.allowed, self.allowed[1:])):
                    raise SearchSpaceError(
                        f"{self.name!r}: ordinal grid values must be strictly increasing"
                    )
        else:
            if len(self.allowed) != 2:
                raise SearchSpaceError(f"{self.name!r}: range spec needs [lo, hi] bounds")
            lo, hi = self.allowed
            if not lo < hi:
                raise SearchSpaceError(f"{self.name!r}: range bounds need lo < hi")

    @property
    def is_grid(self) -> bool:
        return self.kind in (CATEGORICAL, ORDINAL_GRID)

    def contains(self, value) -> bool:
        if self.is_grid:
            return value in self.allowed
        lo, hi = self.allowed
        if self.kind == INTEGER_RANGE and value != int(value):
            return False
        return lo <= value <= hi

    def sample(self, rng: np.random.Generator):
        if self.is_grid:
            return self.allowed[int(rng.integers(len(self.allowed)))]
        lo, hi = self.allowed
        if self.kind == INTEGER_RANGE:
            return int(rng.integers(lo, hi + 1))
        return float(lo + (hi - lo) * rng.random())

    def encode(self, value) -> float:
        """Map a valid value to a coordinate in [0, 1]."""
        if self.is_grid:
            if len(self.allowed) == 1:
                return 0.5
            j = self.allowed.index(value)
            return j / (len(self.allowed) - 1)
        lo, hi = self.allowed
        return (value - lo) / (hi - lo)

    def decode(self, coord: float):
        """Snap a [0, 1] coordinate back to a valid value (ties toward lower)."""
        c = min(max(float(coord), 0.0), 1.0)
        if self.is_grid:
            m = len(self.allowed)
            j = int(math.ceil(c * (m - 1) - 0.5))
            return self.allowed[min(max(j, 0), m - 1)]
        lo, hi = self.allowed
        x = lo + c * (hi - lo)
        if self.kind == INTEGER_RANGE:
            return int(min(max(math.ceil(x - 0.5), lo), hi))
        return float(x)

    def alternatives(self, value) -> tuple:
        """Allowed values other than ``value`` (grids only)."""
        if not self.is_grid:
            raise SearchSpaceError(f"{self.name!r}: alternatives only defined on grids")
        return tuple(v for v in self.allowed if v != value)


@dataclass(frozen=True)
class GeneSchema:
    """Ordered hyperparameter layout for one RL algorithm."""

    algorithm: str
    params: tuple[HyperparamSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise SearchSpaceError(f"duplicate parameter names in schema: {names}")

    def __len__(self) -> int:
        return len(self.params)

    @property
    def schema_id(self) -> str:
        return self.algorithm

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def spec(self, name: str) -> HyperparamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def position(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class Gene:
    """One concrete hyperparameter assignment, positionally tied to a schema."""

    schema_id: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def replace(self, position: int, value) -> "Gene":
        vals = list(self.values)
        vals[position] = value
        return Gene(self.schema_id, tuple(vals))

    def as_dict(self, schema: GeneSchema) -> dict:
        return dict(zip(schema.names, self.values))


# Default grids.  Batch size, neuron count and layer count are fixed house
# choices; optimizer and activation are categorical.
_SHARED_SPECS = (
    HyperparamSpec("episodes", ORDINAL_GRID, (50, 200, 500)),
    HyperparamSpec("gamma", ORDINAL_GRID, (0.01, 0.1, 0.5, 0.99)),
    HyperparamSpec("learning_rate", ORDINAL_GRID, (0.001, 0.01, 0.1)),
    HyperparamSpec("batch_size", ORDINAL_GRID, (16, 32, 64)),
    HyperparamSpec("neurons", ORDINAL_GRID, (10, 32, 64, 128)),
    HyperparamSpec("layers", ORDINAL_GRID, (1, 2, 3)),
    HyperparamSpec("optimizer", CATEGORICAL, ("adam", "cg", "lbfgs", "lm")),
    HyperparamSpec("activation", CATEGORICAL, ("tanh", "relu")),
)

_A2C_EXTRAS = (
    HyperparamSpec("trajectory_size", ORDINAL_GRID, (10, 20, 50, 100, 1000)),
    HyperparamSpec("kl_value", ORDINAL_GRID, (0.001, 0.01, 0.1)),
)


def build_schema(algorithm: str, overrides: dict[str, Sequence] | None = None) -> GeneSchema:
    """Return the fixed per-algorithm schema, optionally with grid overrides.

    ``overrides`` maps parameter names to replacement value lists (the
    config-file ``space.<name>`` mechanism).  Numeric grids are sorted
    ascending; categorical lists keep their given order.
    """
    algo = algorithm.lower()
    if algo not in ALGORITHMS:
        raise SearchSpaceError(f"unknown algorithm id {algorithm!r}")
    specs = _SHARED_SPECS + (_A2C_EXTRAS if algo == "a2c" else ())
    if overrides:
        unknown = set(overrides) - {s.name for s in specs}
        if unknown:
            raise SearchSpaceError(f"override for unknown parameter(s): {sorted(unknown)}")
        rebuilt = []
        for s in specs:
            if s.name in overrides:
                values = list(overrides[s.name])
                if s.kind == ORDINAL_GRID:
                    values = sorted(set(values))
                rebuilt.append(HyperparamSpec(s.name, s.kind, tuple(values)))
            else:
                rebuilt.append(s)
        specs = tuple(rebuilt)
    return GeneSchema(algo, specs)


def sample_gene(schema: GeneSchema, rng: np.random.Generator) -> Gene:
    """Draw each position uniformly from its spec's allowed set."""
    return Gene(schema.schema_id, tuple(s.sample(rng) for s in schema.params))


def validate(gene: Gene, schema: GeneSchema) -> bool:
    if gene.schema_id != schema.schema_id:
        return False
    if len(gene) != len(schema):
        return False
    return all(s.contains(v) for s, v in zip(schema.params, gene.values))


def encode_unit_cube(gene: Gene, schema: GeneSchema) -> np.ndarray:
    if not validate(gene, schema):
        raise SearchSpaceError("gene does not validate against schema")
    return np.array([s.encode(v) for s, v in zip(schema.params, gene.values)], dtype=float)


def decode_unit_cube(x: Sequence[float], schema: GeneSchema) -> Gene:
    x = np.asarray(x, dtype=float)
    if x.shape != (len(schema),):
        raise SearchSpaceError(
            f"coordinate vector has dimension {x.shape}, schema expects {len(schema)}"
        )
    return Gene(schema.schema_id, tuple(s.decode(c) for s, c in zip(schema.params, x)))


def schema_to_dict(schema: GeneSchema) -> dict:
    return {
        "algorithm": schema.algorithm,
        "params": [
            {"name": p.name, "kind": p.kind, "allowed": list(p.allowed)}
            for p in schema.params
        ],
    }


def schema_from_dict(data: dict) -> GeneSchema:
    params = tuple(
        HyperparamSpec(p["name"], p["kind"], tuple(p["allowed"])) for p in data["params"]
    )
    return GeneSchema(data["algorithm"], params)


def gene_from_dict(values: dict, schema: GeneSchema) -> Gene:
    try:
        return Gene(schema.schema_id, tuple(values[n] for n in schema.names))
    except KeyError as exc:
        raise SearchSpaceError(f"gene dict is missing parameter {exc}") from exc
