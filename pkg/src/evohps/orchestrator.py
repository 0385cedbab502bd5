"""Single-host head node: a parameter server collecting fitness results, a
worker pool executing train+evaluate jobs, and durable, resumable run logs.

Workers are in-process execution units pulling jobs from a shared pool; the
Job/ResultMsg contract is transport-agnostic so a multi-process or multi-host
backend could adopt it unchanged.  Result persistence is serialized through
the head: one JSON line per result, appended and flushed before the record
call returns.  Per-individual seeds are derived by hashing
(master seed, run id, generation, index), which is what makes final results
independent of worker count and scheduling order.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, validate_config
from .envs import make_env
from .evo import (EvalRequest, FitnessRecord, SearchHistory, failure_record,
                  make_record, run_ga)
from .bayesopt import acquisition_kind, run_bo, run_random
from .hyperspace import Gene, GeneSchema, build_schema, schema_to_dict
from .net import forward, save_model
from .rlalgos import (AgentSpec, EVAL_STEP_CAP, TrainedAgent, compatible,
                      evaluate_policy, greedy_policy, td_target, train_agent)
from .seeding import derive_seed

log = logging.getLogger(__name__)

RESULTS_LOG = "results.log"
CONFIG_FILE = "config"
CURVES_FILE = "curves.csv"
MODELS_DIR = "models"


class OrchestratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class Job:
    job_id: str
    run_id: str
    generation: int
    index: int
    gene: Gene
    algorithm: str
    env_id: str
    seed: int
    eval_episodes: int


@dataclass
class ResultMsg:
    job_id: str
    run_id: str
    method: str
    generation: int
    index: int
    algorithm: str
    env_id: str
    gene_values: dict
    schema: dict
    seed: int
    eval_seed: int
    record: FitnessRecord
    model_ref: str | None
    seconds: float
    worker_id: str
    status: str                  # "ok" | "failed"
    error: str | None = None
    episodes_trained: int = 0


def make_job_id(run_id: str, generation: int, index: int) -> str:
    return f"{run_id}:g{generation}:i{index}"


def msg_to_json(msg: ResultMsg) -> str:
    payload = {
        "job_id": msg.job_id,
        "run_id": msg.run_id,
        "method": msg.method,
        "generation": msg.generation,
        "individual": msg.index,
        "algorithm": msg.algorithm,
        "env": msg.env_id,
        "gene": msg.gene_values,
        "schema": msg.schema,
        "seed": msg.seed,
        "eval_seed": msg.eval_seed,
        "n": msg.record.n,
        "reward_sum": msg.record.reward_sum,
        "loss_sum": msg.record.loss_sum,
        "fitness": msg.record.fitness,
        "model": msg.model_ref,
        "seconds": msg.seconds,
        "worker": msg.worker_id,
        "status": msg.status,
        "error": msg.error,
        "episodes_trained": msg.episodes_trained,
    }
    return json.dumps(payload)


def msg_from_json(line: str) -> ResultMsg:
    data = json.loads(line)
    record = FitnessRecord(int(data["n"]), float(data["reward_sum"]),
                           float(data["loss_sum"]), float(data["fitness"]))
    return ResultMsg(
        job_id=data["job_id"], run_id=data["run_id"], method=data["method"],
        generation=int(data["generation"]), index=int(data["individual"]),
        algorithm=data["algorithm"], env_id=data["env"], gene_values=data["gene"],
        schema=data["schema"], seed=int(data["seed"]), eval_seed=int(data["eval_seed"]),
        record=record, model_ref=data.get("model"), seconds=float(data["seconds"]),
        worker_id=data.get("worker", ""), status=data["status"],
        error=data.get("error"), episodes_trained=int(data.get("episodes_trained", 0)),
    )


@dataclass
class ParameterServerState:
    """Aggregated view of every result, plus the best-so-far individual."""

    results: dict = None
    best: ResultMsg | None = None

    def __post_init__(self):
        if self.results is None:
            self.results = {}

    def generation_table(self) -> dict[int, dict[int, ResultMsg]]:
        table: dict[int, dict[int, ResultMsg]] = {}
        for msg in self.results.values():
            table.setdefault(msg.generation, {})[msg.index] = msg
        return table


def record_result(state: ParameterServerState, msg: ResultMsg) -> ParameterServerState:
    """Fold one result into the server state; duplicate job ids are no-ops."""
    if msg.job_id in state.results:
        log.warning("duplicate result for job %s ignored", msg.job_id)
        return state
    state.results[msg.job_id] = msg
    if msg.status == "ok" and (
        state.best is None or msg.record.fitness > state.best.record.fitness
    ):
        state.best = msg
    return state


class ParameterServer:
    """Parameter-server state bound to an append-only JSON-lines log."""

    def __init__(self, log_path):
        self.log_path = Path(log_path)
        self.state = ParameterServerState()
        self.corrupt_line: int | None = None
        self._fh = None
        if self.log_path.exists():
            self._replay_existing()

    def _replay_existing(self) -> None:
        valid_bytes = 0
        with open(self.log_path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    valid_bytes += len(line.encode("utf-8"))
                    continue
                try:
                    msg = msg_from_json(line)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    self.corrupt_line = line_no
                    log.warning("results log %s corrupt at line %d; replay stopped there",
                                self.log_path, line_no)
                    break
                record_result(self.state, msg)
                valid_bytes += len(line.encode("utf-8"))
        if self.corrupt_line is not None:
            # drop the garbage tail so appended records stay parseable
            with open(self.log_path, "r+", encoding="utf-8") as fh:
                fh.truncate(valid_bytes)

    def record(self, msg: ResultMsg) -> None:
        """Persist-then-update: the line is flushed before the state changes land."""
        if msg.job_id in self.state.results:
            log.warning("duplicate result for job %s ignored", msg.job_id)
            return
        if self._fh is None:
            self._fh = open(self.log_path, "a", encoding="utf-8")
        self._fh.write(msg_to_json(msg) + "\n")
        self._fh.flush()
        record_result(self.state, msg)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def submit_generation(jobs: list[Job], worker_count: int, executor,
                      failure_factory) -> list[ResultMsg]:
    """Run one generation's jobs on a pool; barrier until all have results.

    A job whose executor raises is retried once; a second failure produces a
    ``failed`` message via ``failure_factory(job, error)``.  Results come back
    in job order regardless of completion order.
    """
    if worker_count < 1:
        raise OrchestratorError("worker_count must be >= 1")
    if not jobs:
        raise OrchestratorError("submit_generation needs at least one job")
    results: dict[str, ResultMsg] = {}
    with ThreadPoolExecutor(max_workers=worker_count,
                            thread_name_prefix="worker") as pool:
        pending = {pool.submit(executor, job): (job, 0) for job in jobs}
        while pending:
            done, _ = wait(list(pending), return_when=FIRST_COMPLETED)
            for future in done:
                job, attempts = pending.pop(future)
                error = future.exception()
                if error is None:
                    results[job.job_id] = future.result()
                elif attempts == 0:
                    log.warning("job %s failed (%s); retrying once", job.job_id, error)
                    pending[pool.submit(executor, job)] = (job, 1)
                else:
                    log.error("job %s failed twice: %s", job.job_id, error)
                    results[job.job_id] = failure_factory(job, str(error))
    return [results[job.job_id] for job in jobs]


def rl_job_runner(job: Job, schema: GeneSchema, loss_source: str = "final_training"):
    """Default job body: train the gene's agent, then play greedy eval episodes.

    Returns (record, episodes_trained, policy_model, eval_seed).  Under
    ``loss_source=final_training`` the fitness loss term sums the last
    eval_episodes entries of the training loss trace; ``eval_td_error``
    instead accumulates squared TD errors along the evaluation rollouts.
    """
    env = make_env(job.env_id)
    spec = AgentSpec.from_gene(job.algorithm, job.gene, schema)
    agent = train_agent(env, spec, job.seed)
    eval_env = make_env(job.env_id)
    policy = greedy_policy(agent.policy_model, eval_env)
    eval_seed = derive_seed(job.seed, "eval")
    if loss_source == "eval_td_error":
        per_episode = {}

        def hook(episode, obs, action, result):
            per_episode.setdefault(episode, []).append(
                _td_sq_error(agent, spec, obs, action, result)
            )

        trace = evaluate_policy(policy, eval_env, job.eval_episodes,
                                step_cap=EVAL_STEP_CAP, seed=eval_seed, step_hook=hook)
        loss_sum = float(sum(np.mean(v) for v in per_episode.values()))
    else:
        trace = evaluate_policy(policy, eval_env, job.eval_episodes,
                                step_cap=EVAL_STEP_CAP, seed=eval_seed)
        tail = agent.report.episode_losses[-job.eval_episodes:]
        loss_sum = float(sum(tail))
    record = make_record(trace.n, trace.reward_sum, loss_sum)
    return record, agent.report.episodes, agent.policy_model, eval_seed


def _td_sq_error(agent: TrainedAgent, spec: AgentSpec, obs, action, result) -> float:
    if spec.algorithm == "dqn":
        q = float(forward(agent.models["q"], obs)[0][action])
        next_q = float(np.max(forward(agent.models["q"], result.observation)[0]))
    elif spec.algorithm == "ddpg":
        critic, actor = agent.models["critic"], agent.models["actor"]
        q = float(forward(critic, np.concatenate([obs, np.atleast_1d(action)]))[0][0])
        next_action = forward(actor, result.observation)[0]
        next_q = float(forward(critic, np.concatenate(
            [result.observation, np.atleast_1d(next_action)]))[0][0])
    else:  # a2c: critic TD error
        critic = agent.models["critic"]
        q = float(forward(critic, obs)[0][0])
        next_q = float(forward(critic, result.observation)[0][0])
    target = td_target(result.reward, next_q, result.done, spec.gamma)
    return (q - target) ** 2


class WorkerPoolEvaluator:
    """Batch evaluator plugged into run_ga/run_bo: pool execution + logging.

    Requests whose job id is already in the server state (a resumed run) or
    that carry a record (elites) skip execution; everything else goes through
    the pool.  Every individual of every generation lands in the log, so a
    replay reconstructs the search exactly.
    """

    def __init__(self, *, run_id: str, method: str, algorithm: str, env_id: str,
                 schema: GeneSchema, server: ParameterServer, model_dir,
                 worker_count: int = 1, loss_source: str = "final_training",
                 job_runner=None):
        self.run_id = run_id
        self.method = method
        self.algorithm = algorithm
        self.env_id = env_id
        self.schema = schema
        self.server = server
        self.model_dir = Path(model_dir) if model_dir else None
        self.worker_count = worker_count
        self.loss_source = loss_source
        self.job_runner = job_runner or rl_job_runner
        self.generation_seconds: list[float] = []
        self._schema_dict = schema_to_dict(schema)
        self._model_refs: dict[tuple, str] = {}

    def evaluate_many(self, requests: list[EvalRequest]):
        began = time.perf_counter()
        ordered: list[ResultMsg | None] = [None] * len(requests)
        jobs: list[Job] = []
        job_slots: dict[str, int] = {}
        for slot, req in enumerate(requests):
            job_id = make_job_id(self.run_id, req.generation, req.index)
            existing = self.server.state.results.get(job_id)
            if existing is not None:
                ordered[slot] = existing
            elif req.carried_record is not None:
                ordered[slot] = self._carried_msg(job_id, req)
            else:
                job = Job(job_id, self.run_id, req.generation, req.index, req.gene,
                          self.algorithm, self.env_id, req.seed, req.eval_episodes)
                jobs.append(job)
                job_slots[job_id] = slot
        if jobs:
            msgs = submit_generation(jobs, self.worker_count, self._execute,
                                     self._failed_msg)
            for msg in msgs:
                ordered[job_slots[msg.job_id]] = msg
        for msg in ordered:
            self.server.record(msg)
            key = (tuple(sorted(msg.gene_values.items())), msg.seed)
            if msg.model_ref:
                self._model_refs.setdefault(key, msg.model_ref)
        self.generation_seconds.append(time.perf_counter() - began)
        return [(msg.record, msg.error) for msg in ordered]

    def _carried_msg(self, job_id: str, req: EvalRequest) -> ResultMsg:
        gene_values = req.gene.as_dict(self.schema)
        key = (tuple(sorted(gene_values.items())), req.seed)
        return ResultMsg(
            job_id=job_id, run_id=self.run_id, method=self.method,
            generation=req.generation, index=req.index, algorithm=self.algorithm,
            env_id=self.env_id, gene_values=gene_values, schema=self._schema_dict,
            seed=req.seed, eval_seed=derive_seed(req.seed, "eval"),
            record=req.carried_record, model_ref=self._model_refs.get(key),
            seconds=0.0, worker_id="head", status="ok" if req.carried_error is None
            else "failed", error=req.carried_error,
            episodes_trained=0,
        )

    def _execute(self, job: Job) -> ResultMsg:
        began = time.perf_counter()
        record, episodes_trained, model, eval_seed = self.job_runner(
            job, self.schema, self.loss_source
        )
        model_ref = None
        if model is not None and self.model_dir is not None:
            self.model_dir.mkdir(parents=True, exist_ok=True)
            model_ref = f"{MODELS_DIR}/g{job.generation}_i{job.index}.mlp"
            save_model(model, self.model_dir / f"g{job.generation}_i{job.index}.mlp")
        return ResultMsg(
            job_id=job.job_id, run_id=self.run_id, method=self.method,
            generation=job.generation, index=job.index, algorithm=self.algorithm,
            env_id=self.env_id, gene_values=job.gene.as_dict(self.schema),
            schema=self._schema_dict, seed=job.seed, eval_seed=eval_seed,
            record=record, model_ref=model_ref,
            seconds=time.perf_counter() - began,
            worker_id=threading.current_thread().name, status="ok",
            episodes_trained=episodes_trained,
        )

    def _failed_msg(self, job: Job, error: str) -> ResultMsg:
        return ResultMsg(
            job_id=job.job_id, run_id=self.run_id, method=self.method,
            generation=job.generation, index=job.index, algorithm=self.algorithm,
            env_id=self.env_id, gene_values=job.gene.as_dict(self.schema),
            schema=self._schema_dict, seed=job.seed,
            eval_seed=derive_seed(job.seed, "eval"),
            record=failure_record(job.eval_episodes), model_ref=None,
            seconds=0.0, worker_id="head", status="failed", error=error,
            episodes_trained=0,
        )


@dataclass
class SearchResult:
    run_dir: Path
    history: SearchHistory
    best: ResultMsg | None
    ok_count: int
    generation_seconds: list[float]
    total_seconds: float
    final_state: ParameterServerState = None


def run_search(config: ExperimentConfig, out_root, worker_count: int | None = None,
               job_runner=None, render_figures: bool = True) -> SearchResult:
    """Execute (or resume) the configured search inside its run directory."""
    validate_config(config)
    workers = worker_count if worker_count is not None else config.workers
    schema = build_schema(config.algorithm, config.space_overrides)
    env_spec = make_env(config.env_id).spec
    if not compatible(config.algorithm, env_spec):
        raise OrchestratorError(
            f"algorithm {config.algorithm!r} cannot drive environment "
            f"{config.env_id!r} (action space mismatch)"
        )
    run_dir = Path(out_root) / config.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    config_path = run_dir / CONFIG_FILE
    if config_path.exists():
        from .config import parse_config

        if parse_config(config_path.read_text(encoding="utf-8")) != config:
            raise OrchestratorError(
                f"{run_dir} already holds a different experiment; refusing to "
                "mix logs (use a new run_id or out dir)"
            )
    else:
        config_path.write_text(config.raw_text, encoding="utf-8")
    server = ParameterServer(run_dir / RESULTS_LOG)
    evaluator = WorkerPoolEvaluator(
        run_id=config.run_id, method=config.method, algorithm=config.algorithm,
        env_id=config.env_id, schema=schema, server=server,
        model_dir=run_dir / MODELS_DIR, worker_count=workers,
        loss_source=config.loss_source, job_runner=job_runner,
    )
    rng = np.random.default_rng(config.master_seed)
    seed_fn = lambda g, i: derive_seed(config.master_seed, config.run_id, g, i)  # noqa: E731
    began = time.perf_counter()
    try:
        if config.method == "ga":
            history = run_ga(config.ga, schema, evaluator, rng, seed_fn)
        elif config.method == "bo":
            kind = acquisition_kind(config.bo_acquisition, config.bo_kappa)
            history = run_bo(config.bo_budget, config.bo_n_init, schema, kind,
                             evaluator, rng, seed_fn, config.eval_episodes)
        else:
            history = run_random(config.random_budget, schema, evaluator, rng,
                                 seed_fn, config.eval_episodes)
        write_curves(server.state, run_dir / CURVES_FILE)
        if render_figures:
            from .report import render_curves

            render_curves(run_dir / CURVES_FILE, run_dir / "curves.png")
    finally:
        server.close()
    ok_count = sum(1 for m in server.state.results.values() if m.status == "ok")
    return SearchResult(run_dir, history, server.state.best, ok_count,
                        evaluator.generation_seconds,
                        time.perf_counter() - began, server.state)


def write_curves(state: ParameterServerState, path) -> None:
    """Per-generation summary: best/mean fitness, best reward, episode budget."""
    table = state.generation_table()
    cumulative = 0
    lines = ["generation,best_fitness,mean_fitness,best_reward_sum,"
             "cumulative_training_episodes"]
    for generation in sorted(table):
        msgs = [table[generation][i] for i in sorted(table[generation])]
        fitnesses = [m.record.fitness for m in msgs]
        best = max(msgs, key=lambda m: m.record.fitness)
        cumulative += sum(m.episodes_trained for m in msgs)
        lines.append(
            f"{generation},{best.record.fitness!r},{float(np.mean(fitnesses))!r},"
            f"{best.record.reward_sum!r},{cumulative}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resume_run(run_directory) -> tuple[ParameterServerState, int | None]:
    """Rebuild state by log replay; return it with the next pending generation."""
    run_dir = Path(run_directory)
    config_path = run_dir / CONFIG_FILE
    if not config_path.exists():
        raise OrchestratorError(f"no {CONFIG_FILE!r} file in {run_dir}")
    from .config import load_config

    config = load_config(config_path)
    server = ParameterServer(run_dir / RESULTS_LOG)
    if server.corrupt_line is not None:
        log.warning("log replay stopped at corrupt line %d", server.corrupt_line)
    if config.method == "ga":
        per_generation = config.ga.population_size
        total_generations = config.ga.generations
    elif config.method == "bo":
        per_generation, total_generations = 1, config.bo_budget
    else:
        per_generation, total_generations = 1, config.random_budget
    table = server.state.generation_table()
    next_pending = None
    for generation in range(total_generations):
        have = len(table.get(generation, {}))
        if have < per_generation:
            next_pending = generation
            break
    return server.state, next_pending


def benchmark_timing(config: ExperimentConfig, worker_counts: list[int], out_root,
                     job_runner=None) -> list[dict]:
    """Run the identical search at each worker count; only the clock may differ.

    Returns long-form rows (workers, generation, seconds) plus one total row
    per worker count.  Fitness sequences are compared across runs and a
    mismatch raises, since results must not depend on scheduling.
    """
    rows: list[dict] = []
    signatures: dict[int, list[float]] = {}
    for workers in worker_counts:
        # same run id (seeds depend on it), separate directory per worker count
        result = run_search(config, Path(out_root) / config.run_id / f"w{workers}",
                            worker_count=workers, job_runner=job_runner,
                            render_figures=False)
        signatures[workers] = [ind.record.fitness for ind in result.history.individuals]
        for generation, seconds in enumerate(result.generation_seconds):
            rows.append({"workers": workers, "generation": generation,
                         "seconds": seconds})
        rows.append({"workers": workers, "generation": "total",
                     "seconds": result.total_seconds})
    baseline = signatures[worker_counts[0]]
    for workers, signature in signatures.items():
        if signature != baseline:
            raise OrchestratorError(
                f"fitness history at {workers} workers diverged from "
                f"{worker_counts[0]} workers; determinism is broken"
            )
    first = next(r["seconds"] for r in rows
                 if r["workers"] == worker_counts[0] and r["generation"] == "total")
    for workers in worker_counts[1:]:
        total = next(r["seconds"] for r in rows
                     if r["workers"] == workers and r["generation"] == "total")
        if total > first:
            log.info("workers=%d total %.2fs did not beat workers=%d total %.2fs",
                     workers, total, worker_counts[0], first)
    return rows


def write_bench(rows: list[dict], path) -> None:
    lines = ["workers,generation,seconds"]
    for row in rows:
        lines.append(f"{row['workers']},{row['generation']},{row['seconds']!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
