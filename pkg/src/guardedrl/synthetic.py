"""Synthetic ICU-flavored environment with known ground truth.

A four-dimensional state [v1, v2, z1, z2] tracks two observable vitals (an
oxygenation fraction and a urine-output rate) and two latent severity loads;
two actions [fluid, vaso] are bounded infusion rates.  Dynamics are linear
with a mild saturating drift plus Gaussian noise,

    s+ = A s + B a + drift(s) + eps,    eps ~ N(0, diag(noise_scales)^2),

with spectral_radius(A) < 1 so the behavior distribution stays bounded.
Treatment lowers severity; severity drags the vitals down; the state is
absorbing-dead once v1 falls below ``dead_floor``.  A clinician-like behavior
policy applies a clipped feedback rule on the vitals plus exploration noise.

Ground truth available for verification:

* ``true_support_contains`` — a frozen in-distribution oracle: an analytic
  state-action box intersected with a covariance-shaped (Mahalanobis)
  ellipsoid calibrated once from 1e5 behavior steps under a fixed internal
  seed and stored with the environment.
* ``true_value`` — Monte-Carlo values under the actual dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CmdpSpec, InvalidInputError, OfflineDataset, Trajectory, TransitionSample
from .models import CostRules, RewardRule, make_cost_rules, make_reward_rule
from .rng import spawn

__all__ = [
    "SyntheticClinicalCmdp",
    "BehaviorPolicy",
    "GenerationConfig",
    "generate_dataset",
    "true_support_contains",
    "true_value",
]

_ORACLE_SEED = 761_304_911  # fixed: the support oracle is part of the env, not of a run
_ORACLE_STEPS = 100_000
_ORACLE_QUANTILE = 0.999
_ORACLE_MARGIN = 1.05


@dataclass
class SupportOracle:
    """Frozen box-and-ellipsoid membership test over (s, a) pairs."""

    box_low: np.ndarray
    box_high: np.ndarray
    mean: np.ndarray
    precision: np.ndarray   # inverse covariance of the calibration cloud
    radius_sq: float        # squared Mahalanobis radius (quantile * margin)

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.box_low) or np.any(x > self.box_high):
            return False
        d = x - self.mean
        return float(d @ self.precision @ d) <= self.radius_sq

    def contains_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        in_box = np.all((X >= self.box_low) & (X <= self.box_high), axis=1)
        D = X - self.mean
        m2 = np.einsum("ij,jk,ik->i", D, self.precision, D)
        return in_box & (m2 <= self.radius_sq)

    def to_dict(self) -> dict:
        return {
            "box_low": self.box_low.tolist(),
            "box_high": self.box_high.tolist(),
            "mean": self.mean.tolist(),
            "precision": self.precision.tolist(),
            "radius_sq": self.radius_sq,
        }

    @staticmethod
    def from_dict(d: dict) -> "SupportOracle":
        return SupportOracle(
            np.asarray(d["box_low"], float), np.asarray(d["box_high"], float),
            np.asarray(d["mean"], float), np.asarray(d["precision"], float),
            float(d["radius_sq"]),
        )


class SyntheticClinicalCmdp:
    """The ground-truth CMDP; implements the TransitionModel protocol."""

    n = 4
    m = 2

    def __init__(self, env_noise: float = 0.05, behavior_noise: float = 0.1,
                 oracle: SupportOracle | None = None):
        if env_noise < 0 or behavior_noise < 0:
            raise InvalidInputError("noise levels must be nonnegative")
        self.env_noise = float(env_noise)
        self.behavior_noise = float(behavior_noise)

        self.A = np.array([
            [0.75, 0.00, -0.009, -0.005],
            [0.00, 0.70, -0.040, -0.020],
            [0.00, 0.00,  0.90,   0.020],
            [0.00, 0.00,  0.030,  0.92 ],
        ])
        self.B = np.array([
            [0.004,  0.010],
            [0.050,  0.010],
            [-0.120, -0.080],
            [-0.040, -0.100],
        ])
        # Affine part of the drift restores the healthy equilibria
        # v1* = 0.96, v2* = 1.05 at zero severity and zero treatment.
        self.drift_const = np.array([0.24, 0.315, 0.0, 0.0])
        self.drift_sat = np.array([0.006, 0.030])  # extra vitals drag, saturating in z1
        # Per-dimension noise, expressed as env_noise times a dimension scale.
        self.noise_dim_scale = np.array([0.16, 0.80, 1.00, 1.00])

        self.action_low = np.array([0.0, 0.0])
        self.action_high = np.array([2.0, 1.0])
        self.dead_floor = 0.85
        self.vital_targets = np.array([0.96, 1.05])
        self.vital_thresholds = np.array([0.92, 0.50])

        # Initial (admission) distribution: moderately sick patients.
        self.init_mean = np.array([0.93, 0.85, 2.2, 1.4])
        self.init_std = np.array([0.015, 0.15, 0.6, 0.5])
        self.init_low = np.array([0.88, 0.40, 0.8, 0.3])
        self.init_high = np.array([0.97, 1.30, 4.0, 3.0])

        self.support_box_low = np.concatenate([
            np.array([0.70, -0.40, -1.20, -1.20]), self.action_low])
        self.support_box_high = np.concatenate([
            np.array([1.06, 2.60, 5.20, 4.60]), self.action_high])

        self._oracle = oracle

    # -- dynamics ----------------------------------------------------------

    @property
    def noise_scales(self) -> np.ndarray:
        return self.env_noise * self.noise_dim_scale

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def drift(self, state: np.ndarray) -> np.ndarray:
        d = self.drift_const.copy()
        sat = np.tanh(max(float(state[2]), 0.0))
        d[0] -= self.drift_sat[0] * sat
        d[1] -= self.drift_sat[1] * sat
        return d

    def step(self, state: np.ndarray, action: np.ndarray,
             rng: np.random.Generator) -> tuple[np.ndarray, bool, bool]:
        """One transition; actions saturate at the actuator box."""
        state = np.asarray(state, dtype=float)
        a = np.clip(np.asarray(action, dtype=float), self.action_low, self.action_high)
        nxt = self.A @ state + self.B @ a + self.drift(state)
        if self.env_noise > 0.0:
            nxt = nxt + rng.normal(0.0, self.noise_scales)
        dead = bool(nxt[0] < self.dead_floor)
        return nxt, dead, dead

    def sample_initial(self, rng: np.random.Generator) -> np.ndarray:
        s = rng.normal(self.init_mean, self.init_std)
        return np.clip(s, self.init_low, self.init_high)

    # -- signals -----------------------------------------------------------

    def reward_rule(self) -> RewardRule:
        return make_reward_rule({"name": "inverse_severity", "severity_indices": [2, 3]})

    def cost_rules(self) -> CostRules:
        return make_cost_rules({
            "name": "vital_floor",
            "vital_indices": [0, 1],
            "thresholds": self.vital_thresholds.tolist(),
            "caps": [0.25, 1.0],
        })

    def behavior_policy(self) -> "BehaviorPolicy":
        return BehaviorPolicy(
            gain=np.array([[1.6, 0.64], [4.0, 0.16]]),
            targets=self.vital_targets.copy(),
            noise=self.behavior_noise,
            action_low=self.action_low.copy(),
            action_high=self.action_high.copy(),
        )

    # -- support oracle ------------------------------------------------------

    def support_oracle(self) -> SupportOracle:
        """Calibrate (once) and return the frozen in-distribution oracle."""
        if self._oracle is None:
            self._oracle = self._calibrate_oracle()
        return self._oracle

    def _calibrate_oracle(self) -> SupportOracle:
        behavior = self.behavior_policy()
        horizon = 20
        pairs = np.empty((_ORACLE_STEPS, self.n + self.m))
        count = 0
        traj = 0
        while count < _ORACLE_STEPS:
            rng = spawn(_ORACLE_SEED, traj)
            traj += 1
            s = self.sample_initial(rng)
            for _ in range(horizon):
                a = behavior.sample_action(s, rng)
                pairs[count] = np.concatenate([s, a])
                count += 1
                if count == _ORACLE_STEPS:
                    break
                s, terminal, _ = self.step(s, a, rng)
                if terminal:
                    break
        mean = pairs.mean(axis=0)
        cov = np.cov(pairs, rowvar=False)
        precision = np.linalg.inv(cov)
        D = pairs - mean
        m2 = np.einsum("ij,jk,ik->i", D, precision, D)
        radius_sq = float(np.quantile(m2, _ORACLE_QUANTILE)) * _ORACLE_MARGIN
        return SupportOracle(
            box_low=self.support_box_low.copy(),
            box_high=self.support_box_high.copy(),
            mean=mean,
            precision=precision,
            radius_sq=radius_sq,
        )

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "kind": "synthetic_clinical",
            "env_noise": self.env_noise,
            "behavior_noise": self.behavior_noise,
        }
        if self._oracle is not None:
            d["oracle"] = self._oracle.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "SyntheticClinicalCmdp":
        if d.get("kind") != "synthetic_clinical":
            raise InvalidInputError(f"unknown env kind {d.get('kind')!r}")
        oracle = SupportOracle.from_dict(d["oracle"]) if "oracle" in d else None
        return SyntheticClinicalCmdp(
            env_noise=float(d.get("env_noise", 0.05)),
            behavior_noise=float(d.get("behavior_noise", 0.1)),
            oracle=oracle,
        )


@dataclass
class BehaviorPolicy:
    """Clipped vitals-feedback rule with exploration noise.

    The rule reads only the observable vitals (indices 0 and 1) — severity is
    latent to the clinician — which leaves genuine headroom for policies that
    act on the full state.
    """

    gain: np.ndarray
    targets: np.ndarray
    noise: float
    action_low: np.ndarray
    action_high: np.ndarray

    def mean_action(self, state: np.ndarray) -> np.ndarray:
        deficit = self.targets - np.asarray(state, dtype=float)[:2]
        return np.clip(self.gain @ deficit, self.action_low, self.action_high)

    def sample_action(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        a = self.mean_action(state)
        if self.noise > 0.0:
            a = a + rng.normal(0.0, self.noise, size=a.shape)
        return np.clip(a, self.action_low, self.action_high)


@dataclass(frozen=True)
class GenerationConfig:
    n_trajectories: int
    horizon: int = 20
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise InvalidInputError("n_trajectories must be positive")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be positive")
        f = np.asarray(self.split_fractions, dtype=float)
        if f.shape != (3,) or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
            raise InvalidInputError("split_fractions must be three nonnegative numbers summing to 1")


def generate_dataset(env: SyntheticClinicalCmdp, behavior: BehaviorPolicy,
                     config: GenerationConfig) -> OfflineDataset:
    """Roll the behavior policy and package trajectories with split labels.

    Reward/cost columns are produced by the env's own rules, so recomputing
    them from the rules matches the stored columns exactly.  Trajectory i is
    driven by the derived stream (seed, 0, i); split assignment shuffles
    trajectory indices with stream (seed, 1) and cuts 60/20/20 (by floor, the
    remainder going to test).
    """
    reward_rule = env.reward_rule()
    cost_rules = env.cost_rules()
    trajectories: list[Trajectory] = []
    for i in range(config.n_trajectories):
        rng = spawn(config.seed, 0, i)
        s = env.sample_initial(rng)
        samples = []
        for _ in range(config.horizon):
            a = behavior.sample_action(s, rng)
            nxt, terminal, dead = env.step(s, a, rng)
            samples.append(TransitionSample(
                state=s, action=a, next_state=nxt,
                reward=reward_rule(s, a), costs=cost_rules(s, a),
                terminal=terminal, dead=dead,
            ))
            s = nxt
            if terminal:
                break
        trajectories.append(Trajectory(f"t{i:05d}", samples))

    n = config.n_trajectories
    n_train = int(np.floor(config.split_fractions[0] * n))
    n_val = int(np.floor(config.split_fractions[1] * n))
    order = spawn(config.seed, 1).permutation(n)
    for pos, ti in enumerate(order):
        if pos < n_train:
            trajectories[ti].split = "train"
        elif pos < n_train + n_val:
            trajectories[ti].split = "val"
        else:
            trajectories[ti].split = "test"

    return OfflineDataset(
        trajectories,
        r_max=reward_rule.r_max,
        c_max=cost_rules.c_max,
    )


def true_support_contains(env: SyntheticClinicalCmdp, x: np.ndarray) -> bool:
    """Frozen ground-truth membership of a raw (s, a) pair."""
    x = np.asarray(x, dtype=float)
    if x.shape != (env.n + env.m,):
        raise InvalidInputError(f"expected a length-{env.n + env.m} state-action vector")
    return env.support_oracle().contains(x)


def true_value(env: SyntheticClinicalCmdp, policy, fn, spec: CmdpSpec,
               n_rollouts: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo truncated discounted value under the actual dynamics."""
    from .core import mc_value

    return mc_value(policy, env, fn, spec, n_rollouts, seed)
