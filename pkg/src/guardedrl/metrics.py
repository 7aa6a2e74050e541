"""Clinically inspired evaluation metrics.

All metrics compare a trained policy against observed trajectories or roll it
on an estimated model:

* MCR  — mortality-cohort concordance rate: fraction of observed steps where
  the policy's mean action lies within a Euclidean radius of the observed
  action.
* AIR  — appropriately-intensified rate: among observed *deteriorated* steps
  (a vital below its clinical threshold), the fraction where the policy's
  mean action exceeds the observed action in at least one component by a
  margin.  Undefined (None) when no step deteriorates.
* ME   — mortality estimate: fraction of simulated rollouts that hit the
  absorbing dead state within the horizon.
* ACP  — action-change penalty: total Euclidean action change per transition,
  plus the per-dimension mean absolute change.  Undefined when no sequence
  has two steps.
* ood_visit_rate — fraction of visited state-action pairs flagged OOD.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import CmdpSpec, InvalidInputError, OfflineDataset, Policy, TransitionModel
from .dataio import canonical_json
from .rng import spawn
from .training import GuardedEcmdp, rollout_guarded

__all__ = [
    "EvalConfig",
    "AcpResult",
    "MetricsReport",
    "mcr",
    "air",
    "mortality_estimate",
    "acp",
    "ood_visit_rate",
    "resolve_epsilon",
    "build_report",
    "aggregate_reports",
]


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation knobs; ``concordance_epsilon=None`` derives the radius as
    0.1 times the per-dimension action standard deviations pooled in
    quadrature over the evaluated samples."""

    split: str | None = "test"
    concordance_epsilon: float | None = None
    intensification_margin: float = 0.0
    vital_indices: tuple[int, int] = (0, 1)
    vital_thresholds: tuple[float, float] = (0.92, 0.5)
    n_rollouts: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.concordance_epsilon is not None and self.concordance_epsilon <= 0:
            raise InvalidInputError("concordance_epsilon must be positive")
        if self.intensification_margin < 0:
            raise InvalidInputError("intensification_margin must be nonnegative")
        if len(self.vital_indices) != len(self.vital_thresholds):
            raise InvalidInputError("vital indices/thresholds must have equal length")


def _eval_samples(dataset: OfflineDataset, split: str | None):
    samples = list(dataset.iter_samples(split))
    if not samples and split is not None:
        samples = list(dataset.iter_samples(None))
    if not samples:
        raise InvalidInputError("no samples to evaluate")
    return samples


def resolve_epsilon(dataset: OfflineDataset, config: EvalConfig) -> float:
    if config.concordance_epsilon is not None:
        return float(config.concordance_epsilon)
    actions = np.stack([s.action for s in _eval_samples(dataset, config.split)])
    eps = 0.1 * float(np.sqrt((actions.std(axis=0) ** 2).sum()))
    if eps <= 0.0:
        raise InvalidInputError(
            "cannot derive a concordance radius from constant actions; set concordance_epsilon")
    return eps


def mcr(policy: Policy, dataset: OfflineDataset, config: EvalConfig) -> float:
    """Fraction of observed steps with ||mean_action(s) - a_obs||_2 < epsilon."""
    samples = _eval_samples(dataset, config.split)
    eps = resolve_epsilon(dataset, config)
    hits = 0
    for smp in samples:
        d = policy.mean_action(smp.state) - smp.action
        if float(np.sqrt(d @ d)) < eps:
            hits += 1
    return hits / len(samples)


def air(policy: Policy, dataset: OfflineDataset, config: EvalConfig) -> float | None:
    """Among deteriorated observed steps, the fraction where the policy's mean
    action exceeds the observed action in >= 1 component by the margin.
    Returns None when no observed step is deteriorated."""
    samples = _eval_samples(dataset, config.split)
    idx = list(config.vital_indices)
    thresholds = np.asarray(config.vital_thresholds, dtype=float)
    deteriorated = [s for s in samples if bool(np.any(s.state[idx] < thresholds))]
    if not deteriorated:
        return None
    eta = config.intensification_margin
    hits = sum(
        1 for s in deteriorated
        if bool(np.any(policy.mean_action(s.state) > s.action + eta))
    )
    return hits / len(deteriorated)


def mortality_estimate(policy: Policy, model: TransitionModel, spec: CmdpSpec,
                       n_rollouts: int, seed: int) -> float:
    """Fraction of rollouts reaching the absorbing dead state within the horizon."""
    if n_rollouts < 1:
        raise InvalidInputError("n_rollouts must be >= 1")
    deaths = 0
    for i in range(n_rollouts):
        rng = spawn(seed, i)
        s = np.asarray(spec.initial_state_sampler(rng), dtype=float)
        for _ in range(spec.horizon + 1):
            a = policy.sample_action(s, rng)
            s, terminal, dead = model.step(s, a, rng)
            if dead:
                deaths += 1
            if terminal:
                break
    return deaths / n_rollouts


@dataclass(frozen=True)
class AcpResult:
    scalar: float | None
    per_dim: tuple[float, ...] | None
    n_transitions: int

    @property
    def defined(self) -> bool:
        return self.scalar is not None


def acp(action_sequences: list[np.ndarray]) -> AcpResult:
    """Total action change per transition across sequences (raw action units).

    scalar = sum_i sum_t ||a_{t+1} - a_t||_2 / sum_i (T_i - 1); the per-dim
    entries replace the Euclidean norm with |delta| in that dimension.
    Sequences shorter than two steps contribute nothing; all short -> undefined.
    """
    if not action_sequences:
        raise InvalidInputError("need at least one action sequence")
    num_scalar = 0.0
    num_dim = None
    denom = 0
    for seq in action_sequences:
        seq = np.atleast_2d(np.asarray(seq, dtype=float))
        if num_dim is None:
            num_dim = np.zeros(seq.shape[1])
        if len(seq) < 2:
            continue
        deltas = np.diff(seq, axis=0)
        num_scalar += float(np.sqrt((deltas ** 2).sum(axis=1)).sum())
        num_dim += np.abs(deltas).sum(axis=0)
        denom += len(seq) - 1
    if denom == 0:
        return AcpResult(None, None, 0)
    return AcpResult(num_scalar / denom, tuple(float(v) for v in num_dim / denom), denom)


def ood_visit_rate(policy: Policy, ecmdp: GuardedEcmdp, n_rollouts: int, seed: int) -> float:
    """Fraction of all visited (s, a) pairs the guardian flags OOD."""
    if n_rollouts < 1:
        raise InvalidInputError("n_rollouts must be >= 1")
    flagged = 0
    total = 0
    for i in range(n_rollouts):
        traj = rollout_guarded(ecmdp, policy, spawn(seed, i))
        flagged += int(traj.ood.sum())
        total += len(traj)
    return flagged / total


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    """One policy's metric values plus the evaluation config echo."""

    mcr: float
    air: float | None
    mortality: float
    acp_scalar: float | None
    acp_per_dim: list | None
    ood_rate: float | None
    mean_return: float | None
    concordance_epsilon: float
    intensification_margin: float
    vital_thresholds: list
    n_eval_samples: int
    n_rollouts: int
    seed: int
    label: str = ""

    def __post_init__(self):
        for name in ("mcr", "mortality"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or not math.isfinite(v):
                raise InvalidInputError(f"{name} must lie in [0, 1], got {v}")
        for name in ("air", "ood_rate"):
            v = getattr(self, name)
            if v is not None and (not math.isfinite(v) or not (0.0 <= v <= 1.0)):
                raise InvalidInputError(f"{name} must lie in [0, 1] or be None, got {v}")
        if self.acp_scalar is not None and (self.acp_scalar < 0 or not math.isfinite(self.acp_scalar)):
            raise InvalidInputError("acp must be nonnegative")

    def to_json(self) -> str:
        d = dict(self.__dict__)
        if d["acp_per_dim"] is not None:
            d["acp_per_dim"] = [float(v) for v in d["acp_per_dim"]]
        return canonical_json(d)

    @staticmethod
    def from_json(text: str) -> "MetricsReport":
        return MetricsReport(**json.loads(text))


def build_report(policy: Policy, dataset: OfflineDataset, model: TransitionModel,
                 spec: CmdpSpec, config: EvalConfig,
                 ecmdp: GuardedEcmdp | None = None,
                 label: str = "") -> MetricsReport:
    """Run every metric and assemble a validated, JSON-stable report.

    ``ecmdp`` adds the OOD visit rate and the mean discounted model return;
    without it those fields are None.
    """
    samples = _eval_samples(dataset, config.split)
    sequences = [t.actions() for t in dataset.select(config.split) or dataset.trajectories]
    a = acp(sequences)
    ood = None
    mean_ret = None
    if ecmdp is not None:
        ood = ood_visit_rate(policy, ecmdp, config.n_rollouts, config.seed)
        from .training import estimate_constraint_values

        est = estimate_constraint_values(policy=policy, ecmdp=ecmdp,
                                         n_rollouts=config.n_rollouts, seed=config.seed)
        mean_ret = est.v_reward
    return MetricsReport(
        mcr=mcr(policy, dataset, config),
        air=air(policy, dataset, config),
        mortality=mortality_estimate(policy, model, spec, config.n_rollouts, config.seed),
        acp_scalar=a.scalar,
        acp_per_dim=list(a.per_dim) if a.per_dim is not None else None,
        ood_rate=ood,
        mean_return=mean_ret,
        concordance_epsilon=resolve_epsilon(dataset, config),
        intensification_margin=config.intensification_margin,
        vital_thresholds=list(config.vital_thresholds),
        n_eval_samples=len(samples),
        n_rollouts=config.n_rollouts,
        seed=config.seed,
        label=label,
    )


_TABLE_COLUMNS = ("mcr", "air", "mortality", "acp_scalar")


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """Mean and sample SD (ddof=1) of each metric column across seeds.

    Per-dimension ACP columns are appended after the scalar, mirroring the
    usual results-table layout (MCR, AIR, ME, ACP...).  None entries are
    dropped column-wise; a column with no defined entries reports None.
    """
    if not reports:
        raise InvalidInputError("no reports to aggregate")
    out: dict[str, dict] = {}
    columns: dict[str, list[float]] = {c: [] for c in _TABLE_COLUMNS}
    m = max((len(r.acp_per_dim) for r in reports if r.acp_per_dim), default=0)
    for j in range(m):
        columns[f"acp_dim{j}"] = []
    for r in reports:
        for c in _TABLE_COLUMNS:
            v = getattr(r, c)
            if v is not None:
                columns[c].append(float(v))
        if r.acp_per_dim is not None:
            for j, v in enumerate(r.acp_per_dim):
                columns[f"acp_dim{j}"].append(float(v))
    for name, vals in columns.items():
        if not vals:
            out[name] = {"mean": None, "sd": None, "n": 0}
            continue
        arr = np.asarray(vals)
        sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        out[name] = {"mean": float(arr.mean()), "sd": sd, "n": len(arr)}
    return out
