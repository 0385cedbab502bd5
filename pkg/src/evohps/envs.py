"""Built-in control environments sharing a reset/step contract.

* ``CartPole`` -- inverted pendulum on a cart, discrete push left/right.
* ``LanderLite`` -- point-mass descent onto a landing pad with lateral
  thrusters only; 8-dim observation, +/-100 terminal reward.
* ``LaserCBC`` -- coherent beam combining toy: nine hidden beam phases,
  actions are per-beam phase increments, the observation is the 5x5
  far-field intensity pattern.

Episodes are deterministic functions of (reset seed, action sequence).
Stepping a finished episode raises.  An optional trace file gets one
comma-separated (state, action, reward) line per step for replay debugging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ENV_IDS = ("cartpole", "lander", "laser")


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Continuous:
    dim: int
    low: tuple
    high: tuple


@dataclass(frozen=True)
class EnvSpec:
    observation_dim: int
    action_space: Discrete | Continuous
    max_episode_steps: int


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool


class _TraceWriter:
    def __init__(self, path):
        self._fh = open(path, "a", encoding="ascii") if path else None

    def write(self, state, action, reward):
        if self._fh is None:
            return
        state_part = ",".join(repr(float(v)) for v in np.atleast_1d(state))
        action_part = ",".join(repr(float(v)) for v in np.atleast_1d(action))
        self._fh.write(f"{state_part},{action_part},{reward!r}\n")
        self._fh.flush()


class _EpisodeBase:
    """Step bookkeeping shared by the three environments."""

    spec: EnvSpec

    def __init__(self, trace_path=None):
        self._steps = 0
        self._done = True
        self._trace = _TraceWriter(trace_path)

    def _begin_episode(self):
        self._steps = 0
        self._done = False

    def _guard_step(self):
        if self._done:
            raise EnvError("episode is done; call reset() before step()")
        self._steps += 1

    def _at_cap(self) -> bool:
        return self._steps >= self.spec.max_episode_steps


class CartPole(_EpisodeBase):
    """Pole balancing: +1 reward per step until the pole or cart leaves bounds.

    Dynamics are the standard pole-on-cart equations, Euler-integrated at
    0.02 s with a +/-10 N push.  The episode ends past 15 degrees of tilt
    or 2.4 m of travel.
    """

    GRAVITY = 9.8
    CART_MASS = 1.0
    POLE_MASS = 0.1
    HALF_LENGTH = 0.5
    FORCE = 10.0
    DT = 0.02
    ANGLE_LIMIT = 15.0 * math.pi / 180.0
    POSITION_LIMIT = 2.4

    def __init__(self, max_steps: int = 500, trace_path=None):
        super().__init__(trace_path)
        self.spec = EnvSpec(4, Discrete(2), max_steps)
        self._state = np.zeros(4)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._state = rng.uniform(-0.05, 0.05, size=4)
        self._begin_episode()
        return self._state.copy()

    def set_state(self, state) -> np.ndarray:
        """Place the cart/pole exactly (used by the hand-integration checks)."""
        self._state = np.asarray(state, dtype=float).copy()
        self._begin_episode()
        return self._state.copy()

    def step(self, action: int) -> StepResult:
        self._guard_step()
        if action not in (0, 1):
            raise EnvError(f"cartpole action must be 0 or 1, got {action!r}")
        x, x_dot, theta, theta_dot = self._state
        force = self.FORCE if action == 1 else -self.FORCE
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        total_mass = self.CART_MASS + self.POLE_MASS
        pole_ml = self.POLE_MASS * self.HALF_LENGTH
        temp = (force + pole_ml * theta_dot**2 * sin_t) / total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.POLE_MASS * cos_t**2 / total_mass)
        )
        x_acc = temp - pole_ml * theta_acc * cos_t / total_mass
        # positions advance with the pre-update velocities
        x = x + self.DT * x_dot
        x_dot = x_dot + self.DT * x_acc
        theta = theta + self.DT * theta_dot
        theta_dot = theta_dot + self.DT * theta_acc
        previous = self._state
        self._state = np.array([x, x_dot, theta, theta_dot])
        breached = abs(theta) > self.ANGLE_LIMIT or abs(x) > self.POSITION_LIMIT
        self._done = breached or self._at_cap()
        reward = 1.0
        self._trace.write(previous, action, reward)
        return StepResult(self._state.copy(), reward, self._done)


class LanderLite(_EpisodeBase):
    """Point-mass lander: drift onto the pad using lateral thrusters.

    Gravity is weak enough that the fall itself stays below the soft-landing
    speed; the control problem is horizontal alignment.  The shaping term
    charges distance to the pad plus speed every step; touching down inside
    the pad at low descent speed pays +100, any other contact or leaving the
    play area pays -100.
    """

    GRAVITY = 0.1
    DT = 0.05
    LATERAL_ACCEL = 0.3
    TILT_ACCEL = 0.5
    START_Y = 1.0
    X_BOUND = 3.0
    Y_BOUND = 2.5
    PAD_X = 0.0
    PAD_TOLERANCE = 0.5
    SOFT_VY = 0.5
    SHAPING = -0.01

    ACTIONS = ("nothing", "left", "right")

    def __init__(self, max_steps: int = 500, trace_path=None):
        super().__init__(trace_path)
        self.spec = EnvSpec(8, Discrete(3), max_steps)
        self._state = np.zeros(8)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.5, 1.5)
        vx = rng.uniform(-0.05, 0.05)
        self._state = np.array([x, self.START_Y, vx, 0.0, 0.0, 0.0, 0.0, 0.0])
        self._begin_episode()
        return self._state.copy()

    def set_state(self, state) -> np.ndarray:
        self._state = np.asarray(state, dtype=float).copy()
        self._begin_episode()
        return self._state.copy()

    def step(self, action: int) -> StepResult:
        self._guard_step()
        if action not in (0, 1, 2):
            raise EnvError(f"lander action must be 0, 1 or 2, got {action!r}")
        x, y, vx, vy, angle, ang_vel = self._state[:6]
        ax = {0: 0.0, 1: -self.LATERAL_ACCEL, 2: self.LATERAL_ACCEL}[action]
        ang_acc = {0: 0.0, 1: self.TILT_ACCEL, 2: -self.TILT_ACCEL}[action]
        vx += ax * self.DT
        vy -= self.GRAVITY * self.DT
        ang_vel += ang_acc * self.DT
        x += vx * self.DT
        y += vy * self.DT
        angle += ang_vel * self.DT

        touched = y <= 0.0
        out = abs(x) > self.X_BOUND or y > self.Y_BOUND
        contact = 1.0 if touched else 0.0
        previous = self._state
        self._state = np.array([x, y, vx, vy, angle, ang_vel, contact, contact])

        distance = math.hypot(x - self.PAD_X, max(y, 0.0))
        speed = math.hypot(vx, vy)
        reward = self.SHAPING * (distance + speed)
        if touched:
            landed = abs(vy) < self.SOFT_VY and abs(x - self.PAD_X) < self.PAD_TOLERANCE
            reward += 100.0 if landed else -100.0
            self._done = True
        elif out:
            reward += -100.0
            self._done = True
        else:
            self._done = self._at_cap()
        self._trace.write(previous, action, reward)
        return StepResult(self._state.copy(), reward, self._done)


class LaserCBC(_EpisodeBase):
    """Nine-beam phase alignment toy.

    Hidden state: beam phases on a 3x3 emitter grid.  Each episode starts
    from a random global phase with per-beam errors drawn uniformly inside
    ``+/-phase_spread`` (the stabilization regime: the controller must hold
    and tighten an imperfect alignment; a fully uniform start hides the
    success reward from any finite exploration).  Actions increment each
    phase by up to +/-pi/4.  The observation is the far-field intensity
    sampled on a 5x5 detector grid; the center detector reads the combining
    efficiency itself.  Every step pays +1, and reaching efficiency >= 0.95
    pays +100 and ends the episode.
    """

    N_BEAMS = 9
    ACTION_LIMIT = math.pi / 4.0
    SUCCESS_EFFICIENCY = 0.95
    SUCCESS_BONUS = 100.0
    DETECTOR_SCALE = 0.5
    PHASE_SPREAD = 0.7

    def __init__(self, max_steps: int = 200, trace_path=None,
                 phase_spread: float = PHASE_SPREAD):
        super().__init__(trace_path)
        lo = (-self.ACTION_LIMIT,) * self.N_BEAMS
        hi = (self.ACTION_LIMIT,) * self.N_BEAMS
        self.spec = EnvSpec(25, Continuous(self.N_BEAMS, lo, hi), max_steps)
        self.phase_spread = phase_spread
        grid = (-1.0, 0.0, 1.0)
        self._positions = np.array([(gx, gy) for gy in grid for gx in grid])
        offsets = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * self.DETECTOR_SCALE
        self._detectors = np.array([(ux, uy) for uy in offsets for ux in offsets])
        self._phases = np.zeros(self.N_BEAMS)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        center = rng.uniform(-math.pi, math.pi)
        errors = rng.uniform(-self.phase_spread, self.phase_spread,
                             size=self.N_BEAMS)
        self._phases = self._wrap(center + errors)
        self._begin_episode()
        return self._observe()

    def set_phases(self, phases) -> np.ndarray:
        self._phases = self._wrap(np.asarray(phases, dtype=float))
        self._begin_episode()
        return self._observe()

    @staticmethod
    def _wrap(phases: np.ndarray) -> np.ndarray:
        return np.mod(phases + math.pi, 2.0 * math.pi) - math.pi

    @property
    def efficiency(self) -> float:
        """|sum_j exp(i phi_j)|^2 / N^2; 1 exactly when all phases align."""
        total = np.exp(1j * self._phases).sum()
        return float(abs(total) ** 2) / self.N_BEAMS**2

    def _observe(self) -> np.ndarray:
        # fields[k] = sum_j exp(i (phi_j + d_j . u_k))
        shifts = self._detectors @ self._positions.T
        fields = np.exp(1j * (self._phases[None, :] + shifts)).sum(axis=1)
        return (np.abs(fields) ** 2) / self.N_BEAMS**2

    def step(self, action) -> StepResult:
        self._guard_step()
        increments = np.asarray(action, dtype=float).ravel()
        if increments.shape != (self.N_BEAMS,):
            raise EnvError(
                f"laser action needs {self.N_BEAMS} values, got shape {increments.shape}"
            )
        previous = self._observe()
        increments = np.clip(increments, -self.ACTION_LIMIT, self.ACTION_LIMIT)
        self._phases = self._wrap(self._phases + increments)
        eta = self.efficiency
        reward = 1.0
        if eta >= self.SUCCESS_EFFICIENCY:
            reward += self.SUCCESS_BONUS
            self._done = True
        else:
            self._done = self._at_cap()
        self._trace.write(previous, increments, reward)
        return StepResult(self._observe(), reward, self._done)


def make_env(env_id: str, max_steps: int | None = None, trace_path=None):
    builders = {"cartpole": CartPole, "lander": LanderLite, "laser": LaserCBC}
    if env_id not in builders:
        raise EnvError(f"unknown environment id {env_id!r}")
    if max_steps is None:
        return builders[env_id](trace_path=trace_path)
    return builders[env_id](max_steps=max_steps, trace_path=trace_path)
