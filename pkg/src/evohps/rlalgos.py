"""Desk-scale DQN, DDPG and A2C trainers, parameterized entirely by a gene.

Every trainer is a pure function of (environment, agent spec, seed): all
randomness flows from one generator, so reruns reproduce the TrainReport
bit for bit.  The gene picks the update rule; CG and L-BFGS run a bounded
inner minimization of each batch loss, and Levenberg-Marquardt applies only
to residual (mean-squared-error) objectives -- policy heads fall back to
Adam when a gene selects it.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .envs import Continuous, Discrete, EnvSpec
from .hyperspace import Gene, GeneSchema
from .net import (MLPModel, backward_batch, clone_model, flatten_grads,
                  flatten_params, forward, forward_batch, init_model, num_params,
                  per_sample_grads, set_flat_params)
from .optim import (AdamState, adam_step, cg_minimize, gauss_newton_identity_step,
                    lbfgs_minimize, sgd_step)

log = logging.getLogger(__name__)

EPSILON_START = 1.0
EPSILON_END = 0.05
TARGET_SYNC_STEPS = 100
REPLAY_CAPACITY = 50_000
EXPLORATION_NOISE_FRACTION = 0.1
SOFT_UPDATE_TAU = 0.005
INNER_ITERATIONS = 5        # per-batch budget for cg/lbfgs
EVAL_STEP_CAP = 100


class TrainingError(RuntimeError):
    pass


def td_target(reward: float, next_q: float, done: bool, gamma: float) -> float:
    """Bootstrapped regression target: reward + gamma * next_q, cut at terminals."""
    if not 0.0 <= gamma <= 1.0:
        raise TrainingError(f"gamma must lie in [0, 1], got {gamma}")
    if done:
        return float(reward)
    return float(reward) + gamma * float(next_q)


@dataclass
class Transition:
    state: np.ndarray
    action: object
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise TrainingError("replay capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if len(self._items) < batch_size:
            raise TrainingError(
                f"cannot sample {batch_size} transitions from buffer of {len(self._items)}"
            )
        idx = rng.integers(len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass
class TrainReport:
    """Per-episode traces feeding the fitness computation."""

    episode_rewards: list[float]
    episode_losses: list[float]
    episodes: int
    seconds: float


@dataclass(frozen=True)
class AgentSpec:
    algorithm: str
    episodes: int
    gamma: float
    learning_rate: float
    batch_size: int
    neurons: int
    layers: int
    optimizer: str
    activation: str
    trajectory_size: int | None = None
    kl_value: float | None = None

    @classmethod
    def from_gene(cls, algorithm: str, gene: Gene, schema: GeneSchema) -> "AgentSpec":
        values = gene.as_dict(schema)
        return cls(
            algorithm=algorithm.lower(),
            episodes=int(values["episodes"]),
            gamma=float(values["gamma"]),
            learning_rate=float(values["learning_rate"]),
            batch_size=int(values["batch_size"]),
            neurons=int(values["neurons"]),
            layers=int(values["layers"]),
            optimizer=str(values["optimizer"]),
            activation=str(values["activation"]),
            trajectory_size=int(values["trajectory_size"]) if "trajectory_size" in values else None,
            kl_value=float(values["kl_value"]) if "kl_value" in values else None,
        )

    def hidden_dims(self) -> list[int]:
        return [self.neurons] * self.layers


def compatible(algorithm: str, env_spec: EnvSpec) -> bool:
    """DQN and A2C drive discrete actions; DDPG drives continuous ones."""
    if algorithm in ("dqn", "a2c"):
        return isinstance(env_spec.action_space, Discrete)
    if algorithm == "ddpg":
        return isinstance(env_spec.action_space, Continuous)
    return False


class ModelOptimizer:
    """Binds one network to the gene-selected update rule.

    ``residual_loss=False`` marks objectives that are not sums of squares
    (policy heads); a Levenberg-Marquardt gene is substituted with Adam there
    and the substitution is logged.
    """

    def __init__(self, model: MLPModel, name: str, learning_rate: float,
                 residual_loss: bool = True):
        name = name.lower()
        if name not in ("adam", "sgd", "cg", "lbfgs", "lm"):
            raise TrainingError(f"unknown optimizer {name!r}")
        self.substituted = False
        if name == "lm" and not residual_loss:
            log.info("optimizer lm is undefined for non-residual losses; using adam")
            name = "adam"
            self.substituted = True
        self.model = model
        self.kind = name
        self.learning_rate = learning_rate
        self._adam = AdamState.zeros(num_params(model)) if name == "adam" else None
        self._lam = 1e-2 if name == "lm" else None

    def gradient_step(self, grads) -> None:
        flat = flatten_grads(grads)
        params = flatten_params(self.model)
        if self.kind == "adam":
            self._adam, params = adam_step(self._adam, params, flat, self.learning_rate)
        else:
            params = sgd_step(params, flat, self.learning_rate)
        set_flat_params(self.model, params)

    def minimize(self, objective) -> None:
        x0 = flatten_params(self.model)
        if self.kind == "cg":
            x, _ = cg_minimize(objective, x0, max_iters=INNER_ITERATIONS, tol=1e-10)
        else:
            x, _ = lbfgs_minimize(objective, x0, max_iters=INNER_ITERATIONS, tol=1e-10)
        set_flat_params(self.model, x)

    def lm_residual_step(self, residuals, jacobian, loss_at_current) -> None:
        """Identity-damped Gauss-Newton trial with accept/reject on the loss."""
        before = flatten_params(self.model)
        loss0 = loss_at_current()
        delta = gauss_newton_identity_step(residuals, jacobian, self._lam)
        set_flat_params(self.model, before + delta)
        if loss_at_current() < loss0:
            self._lam = max(self._lam / 10.0, 1e-12)
        else:
            set_flat_params(self.model, before)
            self._lam = min(self._lam * 10.0, 1e12)


def _regression_update(opt: ModelOptimizer, model: MLPModel, inputs: np.ndarray,
                       columns: np.ndarray, targets: np.ndarray) -> float:
    """One update of mean((out[b, col_b] - target_b)^2); returns the pre-update loss."""
    batch = len(targets)
    rows = np.arange(batch)

    def loss_cache():
        out, cache = forward_batch(model, inputs)
        picked = out[rows, columns]
        diff = picked - targets
        return float(np.mean(diff**2)), out, cache, diff

    loss0, out, cache, diff = loss_cache()
    if opt.kind in ("adam", "sgd"):
        og = np.zeros_like(out)
        og[rows, columns] = 2.0 * diff / batch
        opt.gradient_step(backward_batch(model, cache, og))
    elif opt.kind in ("cg", "lbfgs"):
        def objective(theta):
            set_flat_params(model, theta)
            loss, out_t, cache_t, diff_t = loss_cache()
            og_t = np.zeros_like(out_t)
            og_t[rows, columns] = 2.0 * diff_t / batch
            return loss, flatten_grads(backward_batch(model, cache_t, og_t))
        opt.minimize(objective)
    else:  # lm
        scale = 1.0 / math.sqrt(batch)
        unit = np.zeros_like(out)
        unit[rows, columns] = scale
        jacobian = per_sample_grads(model, cache, unit)
        residuals = diff * scale
        opt.lm_residual_step(residuals, jacobian, lambda: loss_cache()[0])
    return loss0


def _check_finite_loss(loss: float, context: str) -> None:
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss during {context}")


def _epsilon(episode: int, episodes: int) -> float:
    half = max(1, episodes // 2)
    frac = min(1.0, episode / half)
    return EPSILON_START + (EPSILON_END - EPSILON_START) * frac


def _batch_arrays(batch: list[Transition]):
    states = np.array([t.state for t in batch], dtype=float)
    next_states = np.array([t.next_state for t in batch], dtype=float)
    rewards = np.array([t.reward for t in batch], dtype=float)
    dones = np.array([t.done for t in batch], dtype=bool)
    return states, next_states, rewards, dones


def dqn_train(env, spec: AgentSpec, seed: int) -> tuple[MLPModel, TrainReport]:
    """Q-learning with replay, target network, and annealed epsilon-greedy."""
    start = time.perf_counter()
    if spec.algorithm != "dqn":
        raise TrainingError(f"dqn_train got spec for {spec.algorithm!r}")
    if not isinstance(env.spec.action_space, Discrete):
        raise TrainingError("dqn_train needs a discrete-action environment")
    n_actions = env.spec.action_space.n
    rng = np.random.default_rng(seed)
    model = init_model([env.spec.observation_dim, *spec.hidden_dims(), n_actions],
                       spec.activation, "linear", rng)
    if spec.episodes == 0:
        return model, TrainReport([], [], 0, time.perf_counter() - start)
    target = clone_model(model)
    buffer = ReplayBuffer(REPLAY_CAPACITY)
    opt = ModelOptimizer(model, spec.optimizer, spec.learning_rate)
    rewards, losses = [], []
    global_step = 0
    for episode in range(spec.episodes):
        obs = env.reset(int(rng.integers(2**31)))
        epsilon = _epsilon(episode, spec.episodes)
        ep_reward = 0.0
        ep_losses = []
        while True:
            if rng.random() < epsilon:
                action = int(rng.integers(n_actions))
            else:
                action = int(np.argmax(forward(model, obs)[0]))
            result = env.step(action)
            buffer.add(Transition(obs, action, result.reward, result.observation,
                                  result.done))
            ep_reward += result.reward
            if len(buffer) >= spec.batch_size:
                batch = buffer.sample(spec.batch_size, rng)
                states, next_states, rewards_b, dones = _batch_arrays(batch)
                actions = np.array([t.action for t in batch], dtype=int)
                next_q = forward_batch(target, next_states)[0].max(axis=1)
                targets = rewards_b + spec.gamma * np.where(dones, 0.0, next_q)
                loss = _regression_update(opt, model, states, actions, targets)
                _check_finite_loss(loss, f"dqn episode {episode}")
                ep_losses.append(loss)
            global_step += 1
            if global_step % TARGET_SYNC_STEPS == 0:
                target = clone_model(model)
            obs = result.observation
            if result.done:
                break
        rewards.append(ep_reward)
        losses.append(float(np.mean(ep_losses)) if ep_losses else 0.0)
    return model, TrainReport(rewards, losses, spec.episodes,
                              time.perf_counter() - start)


def soft_update(target: MLPModel, online: MLPModel, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, parameter-wise."""
    for tw, ow in zip(target.weights, online.weights):
        tw *= 1.0 - tau
        tw += tau * ow
    for tb, ob in zip(target.biases, online.biases):
        tb *= 1.0 - tau
        tb += tau * ob


def _ddpg_actor_update(opt: ModelOptimizer, actor: MLPModel, critic: MLPModel,
                       states: np.ndarray, mid: np.ndarray, scale: np.ndarray,
                       obs_dim: int) -> float:
    batch = len(states)

    def loss_and_pieces():
        a_tanh, cache_a = forward_batch(actor, states)
        actions = mid + scale * a_tanh
        q, cache_c = forward_batch(critic, np.hstack([states, actions]))
        return float(-np.mean(q[:, 0])), cache_a, cache_c

    def actor_grad(cache_a, cache_c):
        og_c = np.full((batch, 1), -1.0 / batch)
        gc = backward_batch(critic, cache_c, og_c)
        d_action = gc.input_grad[:, obs_dim:] * scale
        return backward_batch(actor, cache_a, d_action)

    loss0, cache_a, cache_c = loss_and_pieces()
    if opt.kind in ("adam", "sgd"):
        opt.gradient_step(actor_grad(cache_a, cache_c))
    else:  # cg / lbfgs (lm was substituted at construction)
        def objective(theta):
            set_flat_params(actor, theta)
            loss, ca, cc = loss_and_pieces()
            return loss, flatten_grads(actor_grad(ca, cc))
        opt.minimize(objective)
    return loss0


def ddpg_train(env, spec: AgentSpec, seed: int) -> tuple[MLPModel, MLPModel, TrainReport]:
    """Off-policy actor-critic for continuous actions with soft target updates."""
    start = time.perf_counter()
    if spec.algorithm != "ddpg":
        raise TrainingError(f"ddpg_train got spec for {spec.algorithm!r}")
    space = env.spec.action_space
    if not isinstance(space, Continuous):
        raise TrainingError("ddpg_train needs a continuous-action environment")
    obs_dim = env.spec.observation_dim
    low = np.array(space.low, dtype=float)
    high = np.array(space.high, dtype=float)
    mid = (low + high) / 2.0
    scale = (high - low) / 2.0
    noise_sigma = EXPLORATION_NOISE_FRACTION * (high - low)

    rng = np.random.default_rng(seed)
    actor = init_model([obs_dim, *spec.hidden_dims(), space.dim],
                       spec.activation, "tanh", rng)
    critic = init_model([obs_dim + space.dim, *spec.hidden_dims(), 1],
                        spec.activation, "linear", rng)
    if spec.episodes == 0:
        return actor, critic, TrainReport([], [], 0, time.perf_counter() - start)
    target_actor = clone_model(actor)
    target_critic = clone_model(critic)
    buffer = ReplayBuffer(REPLAY_CAPACITY)
    opt_critic = ModelOptimizer(critic, spec.optimizer, spec.learning_rate)
    opt_actor = ModelOptimizer(actor, spec.optimizer, spec.learning_rate,
                               residual_loss=False)
    zeros = np.zeros(spec.batch_size, dtype=int)
    rewards, losses = [], []
    for episode in range(spec.episodes):
        obs = env.reset(int(rng.integers(2**31)))
        ep_reward = 0.0
        ep_losses = []
        while True:
            a_tanh = forward(actor, obs)[0]
            action = np.clip(mid + scale * a_tanh + rng.normal(0.0, noise_sigma), low, high)
            result = env.step(action)
            buffer.add(Transition(obs, action, result.reward, result.observation,
                                  result.done))
            ep_reward += result.reward
            if len(buffer) >= spec.batch_size:
                batch = buffer.sample(spec.batch_size, rng)
                states, next_states, rewards_b, dones = _batch_arrays(batch)
                actions = np.array([t.action for t in batch], dtype=float)
                next_actions = mid + scale * forward_batch(target_actor, next_states)[0]
                next_q = forward_batch(target_critic,
                                       np.hstack([next_states, next_actions]))[0][:, 0]
                targets = rewards_b + spec.gamma * np.where(dones, 0.0, next_q)
                critic_loss = _regression_update(
                    opt_critic, critic, np.hstack([states, actions]), zeros, targets
                )
                _check_finite_loss(critic_loss, f"ddpg critic episode {episode}")
                actor_loss = _ddpg_actor_update(opt_actor, actor, critic, states,
                                                mid, scale, obs_dim)
                _check_finite_loss(actor_loss, f"ddpg actor episode {episode}")
                soft_update(target_actor, actor, SOFT_UPDATE_TAU)
                soft_update(target_critic, critic, SOFT_UPDATE_TAU)
                ep_losses.append(critic_loss)
            obs = result.observation
            if result.done:
                break
        rewards.append(ep_reward)
        losses.append(float(np.mean(ep_losses)) if ep_losses else 0.0)
    return actor, critic, TrainReport(rewards, losses, spec.episodes,
                                      time.perf_counter() - start)


def _kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Mean KL(p || q) over batch rows; inputs are probability rows."""
    p_safe = np.clip(p, 1e-12, None)
    q_safe = np.clip(q, 1e-12, None)
    return float(np.mean(np.sum(p * (np.log(p_safe) - np.log(q_safe)), axis=1)))


def _a2c_actor_update(opt: ModelOptimizer, actor: MLPModel, states: np.ndarray,
                      actions: np.ndarray, advantages: np.ndarray,
                      kl_coeff: float) -> tuple[float, float]:
    """Policy-gradient step with a fixed-coefficient KL penalty.

    The penalty is measured against the pre-update policy, so its gradient
    vanishes at the first inner step and only restrains multi-step inner
    optimizers; the returned loss includes the post-update penalty value.
    """
    batch = len(actions)
    rows = np.arange(batch)
    old_probs = forward_batch(actor, states)[0]

    def loss_grad(theta=None):
        if theta is not None:
            set_flat_params(actor, theta)
        probs, cache = forward_batch(actor, states)
        safe = np.clip(probs, 1e-12, None)
        pg_loss = float(-np.mean(advantages * np.log(safe[rows, actions])))
        kl = _kl_divergence(old_probs, probs)
        og = np.zeros_like(probs)
        og[rows, actions] = -advantages / (safe[rows, actions] * batch)
        og += kl_coeff * (-old_probs / safe) / batch
        return pg_loss + kl_coeff * kl, pg_loss, kl, cache, og

    _, pg_loss0, _, cache, og = loss_grad()
    if opt.kind in ("adam", "sgd"):
        opt.gradient_step(backward_batch(actor, cache, og))
    else:
        def objective(theta):
            total, _, _, cache_t, og_t = loss_grad(theta)
            return total, flatten_grads(backward_batch(actor, cache_t, og_t))
        opt.minimize(objective)
    kl_after = _kl_divergence(old_probs, forward_batch(actor, states)[0])
    if kl_after < -1e-9:
        raise TrainingError("KL divergence came out negative; policy head is corrupt")
    return pg_loss0 + kl_coeff * kl_after, kl_after


def a2c_train(env, spec: AgentSpec, seed: int) -> tuple[MLPModel, MLPModel, TrainReport]:
    """Advantage actor-critic over fixed-size trajectory segments."""
    start = time.perf_counter()
    if spec.algorithm != "a2c":
        raise TrainingError(f"a2c_train got spec for {spec.algorithm!r}")
    if not isinstance(env.spec.action_space, Discrete):
        raise TrainingError("a2c_train needs a discrete-action environment")
    if spec.trajectory_size is None or spec.kl_value is None:
        raise TrainingError("a2c spec needs trajectory_size and kl_value")
    n_actions = env.spec.action_space.n
    rng = np.random.default_rng(seed)
    actor = init_model([env.spec.observation_dim, *spec.hidden_dims(), n_actions],
                       spec.activation, "softmax", rng)
    critic = init_model([env.spec.observation_dim, *spec.hidden_dims(), 1],
                        spec.activation, "linear", rng)
    if spec.episodes == 0:
        return actor, critic, TrainReport([], [], 0, time.perf_counter() - start)
    opt_actor = ModelOptimizer(actor, spec.optimizer, spec.learning_rate,
                               residual_loss=False)
    opt_critic = ModelOptimizer(critic, spec.optimizer, spec.learning_rate)

    episode_rewards: list[float] = []
    episode_marks: list[int] = []       # updates finished before each episode ended
    update_losses: list[float] = []
    ep_reward = 0.0
    episodes_done = 0
    obs = env.reset(int(rng.integers(2**31)))
    while episodes_done < spec.episodes:
        states, acts, rews, dones = [], [], [], []
        for _ in range(spec.trajectory_size):
            probs = forward(actor, obs)[0]
            probs = probs / probs.sum()
            action = int(rng.choice(n_actions, p=probs))
            result = env.step(action)
            states.append(obs)
            acts.append(action)
            rews.append(result.reward)
            dones.append(result.done)
            ep_reward += result.reward
            obs = result.observation
            if result.done:
                episodes_done += 1
                episode_rewards.append(ep_reward)
                episode_marks.append(len(update_losses))
                ep_reward = 0.0
                obs = env.reset(int(rng.integers(2**31)))
                if episodes_done >= spec.episodes:
                    break
        state_arr = np.array(states, dtype=float)
        action_arr = np.array(acts, dtype=int)
        values = forward_batch(critic, state_arr)[0][:, 0]
        bootstrap = 0.0 if dones[-1] else float(forward(critic, obs)[0][0])
        returns = np.empty(len(rews))
        running = bootstrap
        for t in range(len(rews) - 1, -1, -1):
            running = rews[t] + (0.0 if dones[t] else spec.gamma * running)
            returns[t] = running
        advantages = returns - values
        actor_loss, _ = _a2c_actor_update(opt_actor, actor, state_arr, action_arr,
                                          advantages, spec.kl_value)
        critic_loss = _regression_update(opt_critic, critic, state_arr,
                                         np.zeros(len(returns), dtype=int), returns)
        total = actor_loss + critic_loss
        _check_finite_loss(total, f"a2c segment after episode {episodes_done}")
        update_losses.append(total)

    episode_losses = []
    previous = 0
    for mark in episode_marks:
        window = update_losses[previous:mark]
        if window:
            episode_losses.append(float(np.mean(window)))
        elif mark > 0:
            episode_losses.append(update_losses[mark - 1])
        else:
            episode_losses.append(0.0)
        previous = mark
    return actor, critic, TrainReport(episode_rewards, episode_losses, spec.episodes,
                                      time.perf_counter() - start)


@dataclass
class EvalTrace:
    n: int
    reward_sum: float
    episode_rewards: list[float]


def evaluate_policy(policy, env, episodes: int, step_cap: int = EVAL_STEP_CAP,
                    seed: int = 0, step_hook=None) -> EvalTrace:
    """Play greedy episodes capped at ``step_cap`` steps; no learning happens."""
    if episodes < 1:
        raise TrainingError("evaluation needs episodes >= 1")
    rng = np.random.default_rng(seed)
    rewards = []
    for episode in range(episodes):
        obs = env.reset(int(rng.integers(2**31)))
        total = 0.0
        for _ in range(step_cap):
            action = policy(obs)
            result = env.step(action)
            if step_hook is not None:
                step_hook(episode, obs, action, result)
            total += result.reward
            obs = result.observation
            if result.done:
                break
        rewards.append(total)
    return EvalTrace(episodes, float(sum(rewards)), rewards)


def greedy_policy(model: MLPModel, env):
    """Wrap a trained network as a deterministic action callback for ``env``."""
    space = env.spec.action_space
    if model.input_dim != env.spec.observation_dim:
        raise TrainingError(
            f"model expects {model.input_dim}-dim observations, environment "
            f"provides {env.spec.observation_dim}"
        )
    if isinstance(space, Discrete):
        if model.head == "tanh" or model.output_dim != space.n:
            raise TrainingError(
                f"model head {model.head!r} with {model.output_dim} outputs does not "
                f"drive a discrete({space.n}) action space"
            )
        return lambda obs: int(np.argmax(forward(model, obs)[0]))
    if model.head != "tanh" or model.output_dim != space.dim:
        raise TrainingError(
            f"model head {model.head!r} with {model.output_dim} outputs does not "
            f"drive a continuous({space.dim}) action space"
        )
    low = np.array(space.low, dtype=float)
    high = np.array(space.high, dtype=float)
    mid = (low + high) / 2.0
    scale = (high - low) / 2.0
    return lambda obs: mid + scale * forward(model, obs)[0]


@dataclass
class TrainedAgent:
    policy_model: MLPModel
    models: dict[str, MLPModel]
    report: TrainReport


def train_agent(env, spec: AgentSpec, seed: int) -> TrainedAgent:
    """Dispatch to the gene's algorithm; the policy model drives evaluation."""
    if spec.algorithm == "dqn":
        model, report = dqn_train(env, spec, seed)
        return TrainedAgent(model, {"q": model}, report)
    if spec.algorithm == "ddpg":
        actor, critic, report = ddpg_train(env, spec, seed)
        return TrainedAgent(actor, {"actor": actor, "critic": critic}, report)
    if spec.algorithm == "a2c":
        actor, critic, report = a2c_train(env, spec, seed)
        return TrainedAgent(actor, {"actor": actor, "critic": critic}, report)
    raise TrainingError(f"unknown algorithm {spec.algorithm!r}")
