"""Core CMDP types and Monte-Carlo value machinery.

Conventions used throughout the package:

* A *transition sample* is (s, a, s', r, c, terminal, dead) with costs c a
  length-l vector.  ``dead`` implies ``terminal``; horizon truncation is not
  terminal.
* Rollouts and value estimates run steps h = 0..H inclusive (at most H+1
  recorded steps), so the truncated discounted value of a per-step signal
  bounded by ``v_max`` lies in [0, v_max * (1 - gamma^(H+1)) / (1 - gamma)].
* All stochastic functions take an integer seed and derive per-rollout
  Philox streams via :func:`guardedrl.rng.spawn`, which makes estimates
  independent of sharding or evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

from .rng import spawn

__all__ = [
    "GuardedRlError",
    "InvalidInputError",
    "UnderDeterminedError",
    "InfeasibleFitError",
    "DegenerateBandwidthError",
    "OutOfSupportError",
    "DataError",
    "ConfigError",
    "ModelError",
    "InfeasibleTrainingError",
    "Standardization",
    "TransitionSample",
    "Trajectory",
    "OfflineDataset",
    "CmdpSpec",
    "Policy",
    "TransitionModel",
    "discounted_return",
    "geometric_sum",
    "horizon_tail_bound",
    "mc_value",
]


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class GuardedRlError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(GuardedRlError, ValueError):
    """An argument violates a documented precondition."""


class UnderDeterminedError(GuardedRlError):
    """Too few samples to identify the requested model or classifier."""


class InfeasibleFitError(GuardedRlError):
    """A constrained fit could not satisfy its constraint within budget.

    Carries the best iterate found so callers can inspect it.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class DegenerateBandwidthError(GuardedRlError):
    """Kernel bandwidth collapsed to zero (e.g. all points identical)."""


class OutOfSupportError(GuardedRlError):
    """A density query fell outside the representable support."""


class DataError(GuardedRlError):
    """Dataset file missing, malformed, or failing integrity checks."""


class InfeasibleTrainingError(GuardedRlError):
    """Every requested training run ended without a feasible policy."""


class ConfigError(GuardedRlError):
    """Run configuration missing, malformed, or failing schema validation."""


class ModelError(GuardedRlError):
    """Model artifact missing, malformed, or inconsistent with its data."""


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardization:
    """Per-dimension z-scoring parameters for states and actions.

    Computed on the training split and stored inside every fitted artifact so
    that classify/density/query operations agree on coordinates.  Dimensions
    with zero variance get scale 1.0 (downstream bandwidth checks catch truly
    degenerate data).
    """

    state_mean: np.ndarray
    state_scale: np.ndarray
    action_mean: np.ndarray
    action_scale: np.ndarray

    @staticmethod
    def fit(states: np.ndarray, actions: np.ndarray) -> "Standardization":
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if states.ndim != 2 or actions.ndim != 2 or len(states) != len(actions):
            raise InvalidInputError("states and actions must be matching 2-D arrays")
        if len(states) == 0:
            raise InvalidInputError("cannot fit standardization on an empty sample")

        def _scale(x: np.ndarray) -> np.ndarray:
            s = x.std(axis=0)
            return np.where(s > 0.0, s, 1.0)

        return Standardization(
            state_mean=states.mean(axis=0),
            state_scale=_scale(states),
            action_mean=actions.mean(axis=0),
            action_scale=_scale(actions),
        )

    @staticmethod
    def identity(n: int, m: int) -> "Standardization":
        return Standardization(np.zeros(n), np.ones(n), np.zeros(m), np.ones(m))

    def state_z(self, s: np.ndarray) -> np.ndarray:
        return (np.asarray(s, dtype=float) - self.state_mean) / self.state_scale

    def action_z(self, a: np.ndarray) -> np.ndarray:
        return (np.asarray(a, dtype=float) - self.action_mean) / self.action_scale

    def pair_z(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Standardized state-action vector (or batch of vectors)."""
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        return np.concatenate([self.state_z(s), self.action_z(a)], axis=-1)

    def state_from_z(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.state_scale + self.state_mean

    def to_dict(self) -> dict:
        return {
            "state_mean": self.state_mean.tolist(),
            "state_scale": self.state_scale.tolist(),
            "action_mean": self.action_mean.tolist(),
            "action_scale": self.action_scale.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Standardization":
        return Standardization(
            np.asarray(d["state_mean"], dtype=float),
            np.asarray(d["state_scale"], dtype=float),
            np.asarray(d["action_mean"], dtype=float),
            np.asarray(d["action_scale"], dtype=float),
        )


# ---------------------------------------------------------------------------
# Trajectory data
# ---------------------------------------------------------------------------


@dataclass
class TransitionSample:
    """One environment step: (state, action) -> next_state with signals."""

    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    costs: np.ndarray
    terminal: bool = False
    dead: bool = False

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)
        self.action = np.asarray(self.action, dtype=float)
        self.next_state = np.asarray(self.next_state, dtype=float)
        self.costs = np.atleast_1d(np.asarray(self.costs, dtype=float))
        self.reward = float(self.reward)
        self.terminal = bool(self.terminal)
        self.dead = bool(self.dead)
        for name, arr in (("state", self.state), ("action", self.action),
                          ("next_state", self.next_state), ("costs", self.costs)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"non-finite values in {name}")
        if not np.isfinite(self.reward):
            raise InvalidInputError("non-finite reward")
        if self.dead and not self.terminal:
            raise InvalidInputError("dead transitions must be terminal")


@dataclass
class Trajectory:
    """Ordered transitions from one episode.

    Invariants: nonempty; ``next_state`` of step t equals ``state`` of step
    t+1; only the final transition may be terminal.
    """

    traj_id: str
    samples: list[TransitionSample]
    split: str | None = None

    def __post_init__(self):
        if not self.samples:
            raise InvalidInputError(f"trajectory {self.traj_id!r} is empty")
        n = self.samples[0].state.shape[0]
        m = self.samples[0].action.shape[0]
        l = self.samples[0].costs.shape[0]
        for t, smp in enumerate(self.samples):
            if smp.state.shape != (n,) or smp.next_state.shape != (n,):
                raise InvalidInputError(f"trajectory {self.traj_id!r}: state dim mismatch at step {t}")
            if smp.action.shape != (m,) or smp.costs.shape != (l,):
                raise InvalidInputError(f"trajectory {self.traj_id!r}: action/cost dim mismatch at step {t}")
            if smp.terminal and t != len(self.samples) - 1:
                raise InvalidInputError(f"trajectory {self.traj_id!r}: terminal sample at interior step {t}")
        for t in range(len(self.samples) - 1):
            if not np.array_equal(self.samples[t].next_state, self.samples[t + 1].state):
                raise InvalidInputError(f"trajectory {self.traj_id!r}: broken state chain at step {t}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dead(self) -> bool:
        return self.samples[-1].dead

    def states(self) -> np.ndarray:
        return np.stack([s.state for s in self.samples])

    def actions(self) -> np.ndarray:
        return np.stack([s.action for s in self.samples])


SPLITS = ("train", "val", "test")


@dataclass
class OfflineDataset:
    """A set of trajectories plus the signal bounds and standardization.

    ``r_max`` bounds |reward| and ``c_max`` bounds each cost component;
    standardization is fit on the training split (or on everything if no
    split labels are present).
    """

    trajectories: list[Trajectory]
    r_max: float
    c_max: np.ndarray
    standardization: Standardization = field(init=False)

    def __post_init__(self):
        if not self.trajectories:
            raise InvalidInputError("dataset has no trajectories")
        self.c_max = np.atleast_1d(np.asarray(self.c_max, dtype=float))
        self.r_max = float(self.r_max)
        if self.r_max < 0 or np.any(self.c_max < 0):
            raise InvalidInputError("signal bounds must be nonnegative")
        first = self.trajectories[0].samples[0]
        self.n = first.state.shape[0]
        self.m = first.action.shape[0]
        self.n_costs = first.costs.shape[0]
        if self.c_max.shape != (self.n_costs,):
            raise InvalidInputError("c_max length must match the cost dimension")
        for traj in self.trajectories:
            for t, smp in enumerate(traj.samples):
                if abs(smp.reward) > self.r_max + 1e-12:
                    raise InvalidInputError(
                        f"trajectory {traj.traj_id!r} step {t}: |reward| exceeds r_max")
                if np.any(smp.costs > self.c_max + 1e-12) or np.any(smp.costs < -1e-12):
                    raise InvalidInputError(
                        f"trajectory {traj.traj_id!r} step {t}: cost outside [0, c_max]")
        fit_trajs = [t for t in self.trajectories if t.split == "train"]
        if not fit_trajs:
            fit_trajs = self.trajectories
        states = np.concatenate([t.states() for t in fit_trajs])
        actions = np.concatenate([t.actions() for t in fit_trajs])
        self.standardization = Standardization.fit(states, actions)

    def iter_samples(self, split: str | None = None) -> Iterator[TransitionSample]:
        for traj in self.select(split):
            yield from traj.samples

    def select(self, split: str | None = None) -> list[Trajectory]:
        if split is None:
            return list(self.trajectories)
        if split not in SPLITS:
            raise InvalidInputError(f"unknown split {split!r}")
        return [t for t in self.trajectories if t.split == split]

    def n_samples(self, split: str | None = None) -> int:
        return sum(len(t) for t in self.select(split))

    def sa_matrix(self, split: str | None = None, standardized: bool = False) -> np.ndarray:
        """Stacked (state, action) rows, optionally z-scored."""
        trajs = self.select(split)
        if not trajs:
            return np.zeros((0, self.n + self.m))
        states = np.concatenate([t.states() for t in trajs])
        actions = np.concatenate([t.actions() for t in trajs])
        if standardized:
            return self.standardization.pair_z(states, actions)
        return np.concatenate([states, actions], axis=1)

    def initial_states(self, split: str | None = None) -> np.ndarray:
        trajs = self.select(split)
        if not trajs:
            raise InvalidInputError(f"no trajectories in split {split!r}")
        return np.stack([t.samples[0].state for t in trajs])


# ---------------------------------------------------------------------------
# CMDP description and interaction protocols
# ---------------------------------------------------------------------------


class Policy(Protocol):
    def sample_action(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...

    def mean_action(self, state: np.ndarray) -> np.ndarray: ...


class TransitionModel(Protocol):
    def step(
        self, state: np.ndarray, action: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, bool, bool]:
        """Advance one step; returns (next_state, terminal, dead)."""
        ...


@dataclass
class CmdpSpec:
    """Evaluation-horizon description of a constrained MDP.

    ``initial_state_sampler`` draws s_0 from the initial distribution;
    ``initial_state_source`` is a human-readable label for artifacts.
    """

    gamma: float
    horizon: int
    cost_thresholds: np.ndarray
    ood_threshold: float
    initial_state_sampler: Callable[[np.random.Generator], np.ndarray]
    initial_state_source: str = "unspecified"

    def __post_init__(self):
        self.cost_thresholds = np.atleast_1d(np.asarray(self.cost_thresholds, dtype=float))
        if not (0.0 < self.gamma < 1.0):
            raise InvalidInputError("gamma must lie in (0, 1) for guarded optimization")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise InvalidInputError("horizon must be a nonnegative integer")
        self.horizon = int(self.horizon)
        if self.ood_threshold < 0:
            raise InvalidInputError("ood_threshold must be nonnegative")

    @property
    def n_costs(self) -> int:
        return len(self.cost_thresholds)

    def value_scale(self) -> float:
        """Discount mass of one horizon: sum_{h=0..H} gamma^h."""
        return geometric_sum(self.gamma, self.horizon)


# ---------------------------------------------------------------------------
# Discounted sums and Monte-Carlo values
# ---------------------------------------------------------------------------


def discounted_return(values: Sequence[float], gamma: float) -> float:
    """sum_h gamma^h * values[h].

    ``gamma`` may be 1.0 here (finite sums are well-defined); the guarded
    optimization and tail bounds require gamma < 1 and enforce it themselves.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise InvalidInputError("values must be a 1-D sequence")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("values must be finite")
    if not (0.0 < gamma <= 1.0):
        raise InvalidInputError("gamma must lie in (0, 1]")
    if len(v) == 0:
        return 0.0
    return float(v @ np.power(gamma, np.arange(len(v))))


def geometric_sum(gamma: float, horizon: int) -> float:
    """sum_{h=0..horizon} gamma^h, valid for gamma in (0, 1]."""
    if not (0.0 < gamma <= 1.0):
        raise InvalidInputError("gamma must lie in (0, 1]")
    if gamma == 1.0:
        return float(horizon + 1)
    return float((1.0 - gamma ** (horizon + 1)) / (1.0 - gamma))


def horizon_tail_bound(gamma: float, horizon: int, diamond_max: float) -> float:
    """Truncation error bound gamma^(H+1) * (2 - gamma) * diamond_max / (1 - gamma)^2.

    Bounds the gap between the infinite-horizon value of a signal bounded by
    ``diamond_max`` and its H-step truncation.
    """
    if not (0.0 < gamma < 1.0):
        raise InvalidInputError("gamma must lie strictly in (0, 1) for a finite tail")
    if int(horizon) != horizon or horizon < 0:
        raise InvalidInputError("horizon must be a nonnegative integer")
    if diamond_max < 0:
        raise InvalidInputError("diamond_max must be nonnegative")
    return float(gamma ** (horizon + 1) * (2.0 - gamma) * diamond_max / (1.0 - gamma) ** 2)


def mc_value(
    policy: Policy,
    model: TransitionModel,
    fn: Callable[[np.ndarray, np.ndarray], float],
    spec: CmdpSpec,
    n_rollouts: int,
    seed: int,
) -> tuple[float, float]:
    """Monte-Carlo truncated discounted value of per-step signal ``fn``.

    Runs ``n_rollouts`` independent rollouts of at most ``spec.horizon + 1``
    steps on ``model`` under ``policy`` and averages
    sum_h gamma^h fn(s_h, a_h).  Returns (estimate, std_error) with the
    standard error computed with ddof=1 (0.0 when n_rollouts == 1).
    """
    if n_rollouts < 1:
        raise InvalidInputError("n_rollouts must be >= 1")
    returns = np.empty(n_rollouts)
    for i in range(n_rollouts):
        rng = spawn(seed, i)
        state = np.asarray(spec.initial_state_sampler(rng), dtype=float)
        total = 0.0
        disc = 1.0
        for _ in range(spec.horizon + 1):
            action = policy.sample_action(state, rng)
            total += disc * float(fn(state, action))
            disc *= spec.gamma
            state, terminal, _dead = model.step(state, action, rng)
            if terminal:
                break
        returns[i] = total
    est = float(returns.mean())
    se = float(returns.std(ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return est, se
