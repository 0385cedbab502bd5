"""Experiment configuration: a flat ``key = value`` text format.

Dotted prefixes group method settings (``ga.*``, ``bo.*``, ``random.*``) and
search-space grid overrides (``space.<param> = v1, v2, ...``).  Later lines
win, so command-line ``--set`` overrides are appended verbatim to the copied
config and the copy re-parses to the effective experiment.

Example::

    run_id = cartpole_ga
    method = ga
    algorithm = dqn
    env = cartpole
    master_seed = 7
    workers = 4
    ga.population_size = 8
    ga.generations = 5
    space.episodes = 50, 100
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .envs import ENV_IDS, make_env
from .evo import EvolutionError, GAConfig
from .hyperspace import ALGORITHMS, SearchSpaceError, build_schema
from .rlalgos import compatible

METHODS = ("ga", "bo", "random")
LOSS_SOURCES = ("final_training", "eval_td_error")
ACQUISITIONS = ("ei", "pi", "ucb")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    run_id: str
    method: str
    algorithm: str
    env_id: str
    master_seed: int = 0
    workers: int = 1
    loss_source: str = "final_training"
    eval_episodes: int = 10
    ga: GAConfig = field(default_factory=GAConfig)
    bo_budget: int = 30
    bo_n_init: int = 5
    bo_acquisition: str = "ei"
    bo_kappa: float = 2.0
    random_budget: int = 20
    space_overrides: dict = field(default_factory=dict)
    raw_text: str = field(default="", compare=False)


_SCALAR_KEYS = {
    "run_id": str,
    "method": str,
    "algorithm": str,
    "env": str,
    "master_seed": int,
    "workers": int,
    "loss_source": str,
    "eval_episodes": int,
    "ga.population_size": int,
    "ga.crossover_rate": float,
    "ga.mutation_rate": float,
    "ga.eval_episodes": int,
    "ga.generations": int,
    "ga.elitism_count": int,
    "bo.budget": int,
    "bo.n_init": int,
    "bo.acquisition": str,
    "bo.kappa": float,
    "random.budget": int,
}


def parse_pairs(text: str) -> dict[str, str]:
    """Raw key -> value strings, later assignments winning."""
    pairs: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        pairs[key] = value
    return pairs


def _scalar(token: str):
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def _typed(key: str, raw: str):
    caster = _SCALAR_KEYS[key]
    try:
        return caster(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {caster.__name__}") from exc


def parse_config(text: str) -> ExperimentConfig:
    pairs = parse_pairs(text)
    values = {}
    overrides: dict[str, list] = {}
    for key, raw in pairs.items():
        if key.startswith("space."):
            name = key[len("space."):]
            overrides[name] = [_scalar(tok.strip()) for tok in raw.split(",") if tok.strip()]
        elif key in _SCALAR_KEYS:
            values[key] = _typed(key, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for required in ("run_id", "method", "algorithm", "env"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")

    eval_episodes = values.get("eval_episodes", 10)
    try:
        ga = GAConfig(
            population_size=values.get("ga.population_size", 8),
            crossover_rate=values.get("ga.crossover_rate", 0.7),
            mutation_rate=values.get("ga.mutation_rate", 0.2),
            eval_episodes=values.get("ga.eval_episodes", eval_episodes),
            generations=values.get("ga.generations", 10),
            elitism_count=values.get("ga.elitism_count", 1),
        )
    except EvolutionError as exc:
        raise ConfigError(f"ga section: {exc}") from exc

    return ExperimentConfig(
        run_id=values["run_id"],
        method=values["method"].lower(),
        algorithm=values["algorithm"].lower(),
        env_id=values["env"].lower(),
        master_seed=values.get("master_seed", 0),
        workers=values.get("workers", 1),
        loss_source=values.get("loss_source", "final_training"),
        eval_episodes=eval_episodes,
        ga=ga,
        bo_budget=values.get("bo.budget", 30),
        bo_n_init=values.get("bo.n_init", 5),
        bo_acquisition=values.get("bo.acquisition", "ei").lower(),
        bo_kappa=values.get("bo.kappa", 2.0),
        random_budget=values.get("random.budget", 20),
        space_overrides=overrides,
        raw_text=text,
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def apply_overrides(text: str, assignments: list[str]) -> str:
    """Append ``--set key=value`` lines; appended lines win on re-parse."""
    if not assignments:
        return text
    extra = []
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        key, _, value = assignment.partition("=")
        extra.append(f"{key.strip()} = {value.strip()}")
    body = text if text.endswith("\n") or not text else text + "\n"
    return body + "\n".join(extra) + "\n"


def validate_config(config: ExperimentConfig) -> None:
    """Field-level validation; raises ConfigError naming the offending key."""
    if config.method not in METHODS:
        raise ConfigError(f"method: must be one of {METHODS}, got {config.method!r}")
    if config.algorithm not in ALGORITHMS:
        raise ConfigError(
            f"algorithm: must be one of {ALGORITHMS}, got {config.algorithm!r}"
        )
    if config.env_id not in ENV_IDS:
        raise ConfigError(f"env: must be one of {ENV_IDS}, got {config.env_id!r}")
    if config.loss_source not in LOSS_SOURCES:
        raise ConfigError(
            f"loss_source: must be one of {LOSS_SOURCES}, got {config.loss_source!r}"
        )
    if config.workers < 1:
        raise ConfigError(f"workers: must be >= 1, got {config.workers}")
    if config.eval_episodes < 1:
        raise ConfigError(f"eval_episodes: must be >= 1, got {config.eval_episodes}")
    if config.method == "bo":
        if config.bo_n_init < 1:
            raise ConfigError(f"bo.n_init: must be >= 1, got {config.bo_n_init}")
        if config.bo_budget < config.bo_n_init:
            raise ConfigError(
                f"bo.budget: must be >= bo.n_init ({config.bo_n_init}), "
                f"got {config.bo_budget}"
            )
        if config.bo_acquisition not in ACQUISITIONS:
            raise ConfigError(
                f"bo.acquisition: must be one of {ACQUISITIONS}, "
                f"got {config.bo_acquisition!r}"
            )
        if config.bo_kappa <= 0:
            raise ConfigError(f"bo.kappa: must be > 0, got {config.bo_kappa}")
    if config.method == "random" and config.random_budget < 1:
        raise ConfigError(f"random.budget: must be >= 1, got {config.random_budget}")
    try:
        build_schema(config.algorithm, config.space_overrides)
    except SearchSpaceError as exc:
        raise ConfigError(f"space: {exc}") from exc
    if not compatible(config.algorithm, make_env(config.env_id).spec):
        raise ConfigError(
            f"algorithm {config.algorithm!r} is incompatible with env "
            f"{config.env_id!r} (action-space mismatch)"
        )
