"""Estimated dynamics and signal models learned from offline data.

Two transition estimators share the dataset: a nonparametric conditional
density (Gaussian product kernels with a single shared bandwidth) used for
diagnostics and likelihood queries, and a k-nearest-neighbor resampler used
as the rollout simulator — a queried (s, a) pair is matched to its k nearest
standardized dataset keys and one of their recorded successors is returned,
along with the recorded terminal/dead flags.

Reward and cost signals are *rules*: named, bounded functions selected by
config string (no code injection), so dataset columns can always be
recomputed and checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    DegenerateBandwidthError,
    InvalidInputError,
    ModelError,
    OfflineDataset,
    OutOfSupportError,
    Standardization,
)

__all__ = [
    "KdeConditionalDensity",
    "fit_kde_density",
    "KnnTransitionModel",
    "fit_knn_model",
    "knn_next",
    "RewardRule",
    "CostRules",
    "evaluate_reward",
    "evaluate_costs",
    "make_reward_rule",
    "make_cost_rules",
]

_MARGINAL_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# Kernel conditional density  p(s' | x)
# ---------------------------------------------------------------------------


@dataclass
class KdeConditionalDensity:
    """Joint/marginal/conditional Gaussian KDE over (next_state, context).

    Works in whatever coordinates the data is given in; one scalar bandwidth
    ``h`` is shared by every dimension of both blocks, so
    joint(s, x) = (1/(N h^D (2 pi)^(D/2))) sum_i exp(-(|s-s_i|^2+|x-x_i|^2)/(2 h^2))
    with D = dim(s) + dim(x), and the marginal integrates the s block out.
    """

    next_states: np.ndarray
    contexts: np.ndarray
    bandwidth: float

    def __post_init__(self):
        self.next_states = np.atleast_2d(np.asarray(self.next_states, dtype=float))
        self.contexts = np.atleast_2d(np.asarray(self.contexts, dtype=float))
        if len(self.next_states) != len(self.contexts) or len(self.contexts) == 0:
            raise InvalidInputError("next_states and contexts must be matching nonempty matrices")
        if not (np.all(np.isfinite(self.next_states)) and np.all(np.isfinite(self.contexts))):
            raise InvalidInputError("density samples must be finite")
        self.bandwidth = float(self.bandwidth)
        if not (self.bandwidth > 0.0 and np.isfinite(self.bandwidth)):
            raise DegenerateBandwidthError("bandwidth must be positive and finite")

    @property
    def n_samples(self) -> int:
        return len(self.contexts)

    @property
    def dim_state(self) -> int:
        return self.next_states.shape[1]

    @property
    def dim_context(self) -> int:
        return self.contexts.shape[1]

    def joint_density(self, next_state: np.ndarray, context: np.ndarray) -> float:
        s = np.asarray(next_state, dtype=float)
        x = np.asarray(context, dtype=float)
        if s.shape != (self.dim_state,) or x.shape != (self.dim_context,):
            raise InvalidInputError("query dimensions do not match the fitted data")
        h = self.bandwidth
        d2 = (np.sum((self.next_states - s) ** 2, axis=1)
              + np.sum((self.contexts - x) ** 2, axis=1)) / (h * h)
        D = self.dim_state + self.dim_context
        norm = self.n_samples * h**D * (2.0 * math.pi) ** (D / 2.0)
        return float(np.exp(-0.5 * d2).sum() / norm)

    def marginal_density(self, context: np.ndarray) -> float:
        x = np.asarray(context, dtype=float)
        if x.shape != (self.dim_context,):
            raise InvalidInputError("query dimensions do not match the fitted data")
        h = self.bandwidth
        d2 = np.sum((self.contexts - x) ** 2, axis=1) / (h * h)
        D = self.dim_context
        norm = self.n_samples * h**D * (2.0 * math.pi) ** (D / 2.0)
        return float(np.exp(-0.5 * d2).sum() / norm)

    def conditional_density(self, next_state: np.ndarray, context: np.ndarray) -> float:
        """joint / marginal; raises ``OutOfSupportError`` when the marginal
        underflows (query far outside the data)."""
        marg = self.marginal_density(context)
        if marg < _MARGINAL_FLOOR:
            raise OutOfSupportError("context density underflow: query is outside the fitted support")
        return self.joint_density(next_state, context) / marg


def fit_kde_density(next_states: np.ndarray, contexts: np.ndarray,
                    bandwidth: float | None = None) -> KdeConditionalDensity:
    """Build the conditional density, defaulting the shared bandwidth to
    Scott's rule N^(-1/(D+4)) times the mean per-dimension std of the joint."""
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    if bandwidth is None:
        joint = np.concatenate([next_states, contexts], axis=1)
        N, D = joint.shape
        pooled = float(joint.std(axis=0).mean())
        if pooled <= 0.0:
            raise DegenerateBandwidthError("all samples identical: bandwidth collapsed to zero")
        bandwidth = N ** (-1.0 / (D + 4.0)) * pooled
    return KdeConditionalDensity(next_states, contexts, bandwidth)


# ---------------------------------------------------------------------------
# k-nearest-neighbor transition model
# ---------------------------------------------------------------------------


WEIGHTINGS = ("uniform", "inverse_distance")


@dataclass
class KnnTransitionModel:
    """Dataset resampler: step() returns a recorded successor of one of the
    k nearest standardized (s, a) keys, with ties broken by insertion order."""

    keys: np.ndarray          # (N, n+m) standardized
    next_states: np.ndarray   # (N, n) raw coordinates
    terminal: np.ndarray      # (N,) bool
    dead: np.ndarray          # (N,) bool
    k: int
    weighting: str
    standardization: Standardization
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.weighting not in WEIGHTINGS:
            raise InvalidInputError(f"weighting must be one of {WEIGHTINGS}")
        if self.k < 1 or self.k > len(self.keys):
            raise InvalidInputError(f"k must lie in [1, {len(self.keys)}]")

    def _get_tree(self) -> cKDTree:
        if self._tree is None:
            object.__setattr__(self, "_tree", cKDTree(self.keys))
        return self._tree

    def neighbors(self, state: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(distances, indices) of the k nearest keys, insertion-order stable."""
        x = self.standardization.pair_z(np.asarray(state, float), np.asarray(action, float))
        d, idx = self._get_tree().query(x, k=self.k)
        d = np.atleast_1d(d)
        idx = np.atleast_1d(idx)
        order = np.lexsort((idx, d))
        return d[order], idx[order]

    def step(self, state: np.ndarray, action: np.ndarray,
             rng: np.random.Generator) -> tuple[np.ndarray, bool, bool]:
        d, idx = self.neighbors(state, action)
        if self.weighting == "uniform":
            pick = idx[rng.integers(len(idx))]
        else:
            zero = d <= 0.0
            if zero.any():
                cand = idx[zero]
                pick = cand[rng.integers(len(cand))]
            else:
                w = 1.0 / d
                pick = idx[rng.choice(len(idx), p=w / w.sum())]
        return self.next_states[pick].copy(), bool(self.terminal[pick]), bool(self.dead[pick])


def fit_knn_model(dataset: OfflineDataset, k: int = 5, weighting: str = "uniform",
                  split: str | None = "train") -> KnnTransitionModel:
    """Index the dataset's (s, a) -> s' transitions for k-NN resampling."""
    trajs = dataset.select(split)
    if not trajs:
        trajs = dataset.select(None)
    samples = [s for t in trajs for s in t.samples]
    if not samples:
        raise InvalidInputError("no transitions to index")
    if k < 1 or k > len(samples):
        raise InvalidInputError(f"k must lie in [1, {len(samples)}]")
    states = np.stack([s.state for s in samples])
    actions = np.stack([s.action for s in samples])
    keys = dataset.standardization.pair_z(states, actions)
    return KnnTransitionModel(
        keys=keys,
        next_states=np.stack([s.next_state for s in samples]),
        terminal=np.array([s.terminal for s in samples], dtype=bool),
        dead=np.array([s.dead for s in samples], dtype=bool),
        k=int(k),
        weighting=weighting,
        standardization=dataset.standardization,
    )


def knn_next(state: np.ndarray, action: np.ndarray, model: KnnTransitionModel,
             rng: np.random.Generator) -> tuple[np.ndarray, bool, bool]:
    """One resampled transition; see :meth:`KnnTransitionModel.step`."""
    return model.step(state, action, rng)


# ---------------------------------------------------------------------------
# Reward and cost rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardRule:
    """Named bounded reward r(s, a) with |r| <= r_max guaranteed by clipping."""

    name: str
    r_max: float
    params: dict
    fn: Callable[[np.ndarray, np.ndarray], float]

    def __call__(self, state: np.ndarray, action: np.ndarray) -> float:
        v = float(self.fn(np.asarray(state, float), np.asarray(action, float)))
        return float(np.clip(v, -self.r_max, self.r_max))

    def to_dict(self) -> dict:
        return {"name": self.name, "r_max": self.r_max, "params": dict(self.params)}


@dataclass(frozen=True)
class CostRules:
    """Named bounded cost vector c(s, a) with 0 <= c_j <= c_max_j."""

    name: str
    c_max: np.ndarray
    params: dict
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        v = np.atleast_1d(np.asarray(
            self.fn(np.asarray(state, float), np.asarray(action, float)), dtype=float))
        return np.clip(v, 0.0, self.c_max)

    @property
    def n_costs(self) -> int:
        return len(self.c_max)

    def to_dict(self) -> dict:
        return {"name": self.name, "c_max": self.c_max.tolist(), "params": dict(self.params)}


def evaluate_reward(state: np.ndarray, action: np.ndarray, rule: RewardRule) -> float:
    return rule(state, action)


def evaluate_costs(state: np.ndarray, action: np.ndarray, rules: CostRules) -> np.ndarray:
    return rules(state, action)


def make_reward_rule(spec: dict) -> RewardRule:
    """Construct a built-in reward rule from {"name": ..., <params>}."""
    spec = dict(spec)
    name = spec.pop("name", None)
    if name == "inverse_severity":
        idx = tuple(spec.pop("severity_indices", (2, 3)))
        if spec:
            raise ModelError(f"unknown reward-rule params {sorted(spec)}")

        def fn(state, action, idx=idx):
            z = state[list(idx)]
            return 1.0 / (1.0 + float(z @ z))

        return RewardRule("inverse_severity", 1.0, {"severity_indices": list(idx)}, fn)
    if name == "zero":
        if spec:
            raise ModelError(f"unknown reward-rule params {sorted(spec)}")
        return RewardRule("zero", 0.0, {}, lambda s, a: 0.0)
    raise ModelError(f"unknown reward rule {name!r}")


def make_cost_rules(spec: dict) -> CostRules:
    """Construct built-in cost rules from {"name": ..., <params>}."""
    spec = dict(spec)
    name = spec.pop("name", None)
    if name == "vital_floor":
        idx = tuple(spec.pop("vital_indices", (0, 1)))
        thresholds = np.asarray(spec.pop("thresholds", (0.92, 0.5)), dtype=float)
        caps = np.asarray(spec.pop("caps", (0.25, 1.0)), dtype=float)
        if spec:
            raise ModelError(f"unknown cost-rule params {sorted(spec)}")
        if len(idx) != len(thresholds) or len(idx) != len(caps):
            raise ModelError("vital_floor: indices/thresholds/caps lengths differ")

        def fn(state, action, idx=idx, thresholds=thresholds):
            return thresholds - state[list(idx)]

        return CostRules("vital_floor", caps,
                         {"vital_indices": list(idx), "thresholds": thresholds.tolist(),
                          "caps": caps.tolist()}, fn)
    raise ModelError(f"unknown cost rules {name!r}")
