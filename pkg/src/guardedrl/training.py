"""Policy optimization inside a guarded estimated CMDP.

The search space is the estimated dynamics (any TransitionModel) with reward
and cost rules attached and a guardian wrapped around every visited
state-action pair.  Leaving the guardian's accepted region incurs a unit
per-step indicator cost; its truncated discounted value is constrained below
``spec.ood_threshold`` — a conservative stand-in (by the union bound) for a
joint chance constraint of staying in-distribution over the whole horizon.

Two training modes:

* :func:`train_guarded` — primal-dual REINFORCE: gradient ascent on the
  Lagrangian of (maximize reward value) s.t. (cost values <= tightened
  thresholds, OOD value <= budget), projected dual ascent on the multipliers,
  a running-mean scalar baseline per signal, and backtracking halvings of the
  primal step when a proposed update lowers the Lagrangian under common
  random numbers or pushes a constraint further beyond its threshold (early
  on the multipliers are still small, so the Lagrangian alone would wave
  through reward-hacking steps deep into the rejected region).  Constraints
  with infinite thresholds are dropped, which degenerates to plain
  policy-gradient ascent.
* :func:`train_penalty` — unconstrained REINFORCE on reward minus
  ``penalty_coef`` times the OOD indicator.

Both pool the highest-scoring feasible iterates (the starting policy
included), re-rank the pool on one fresh common-seed batch, and return the
winner — or the minimum-violation iterate flagged infeasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CmdpSpec, InvalidInputError, Policy, TransitionModel, discounted_return
from .models import CostRules, RewardRule
from .policy import GaussianPolicy
from .rng import spawn

__all__ = [
    "GuardedEcmdp",
    "GuardedTrajectory",
    "ValueEstimates",
    "TrainConfig",
    "TrainResult",
    "ChanceProxyReport",
    "rollout_guarded",
    "estimate_constraint_values",
    "train_guarded",
    "train_penalty",
    "verify_chance_proxy",
]


@dataclass
class GuardedEcmdp:
    """Estimated CMDP with a guardian attached to every visited pair."""

    model: TransitionModel
    reward_rule: RewardRule
    cost_rules: CostRules
    guardian: object            # anything with classify_raw / ood verdicts
    spec: CmdpSpec

    def ood_flag(self, state: np.ndarray, action: np.ndarray) -> bool:
        x = np.concatenate([np.asarray(state, float), np.asarray(action, float)])
        return bool(self.guardian.classify_raw(x).ood)


@dataclass
class GuardedTrajectory:
    """Arrays recorded along one guarded rollout (T <= horizon + 1 steps)."""

    states: np.ndarray    # (T, n)
    actions: np.ndarray   # (T, m)
    rewards: np.ndarray   # (T,)
    costs: np.ndarray     # (T, l)
    ood: np.ndarray       # (T,) bool
    terminal: bool
    dead: bool

    def __len__(self) -> int:
        return len(self.rewards)


def rollout_guarded(ecmdp: GuardedEcmdp, policy: Policy,
                    rng: np.random.Generator) -> GuardedTrajectory:
    """Roll ``policy`` on the estimated dynamics for steps h = 0..horizon,
    stopping early at terminal states, recording signals and OOD flags."""
    spec = ecmdp.spec
    states, actions, rewards, costs, ood = [], [], [], [], []
    s = np.asarray(spec.initial_state_sampler(rng), dtype=float)
    terminal = dead = False
    for _ in range(spec.horizon + 1):
        a = policy.sample_action(s, rng)
        states.append(s)
        actions.append(a)
        rewards.append(ecmdp.reward_rule(s, a))
        costs.append(ecmdp.cost_rules(s, a))
        ood.append(ecmdp.ood_flag(s, a))
        s, terminal, dead = ecmdp.model.step(s, a, rng)
        if terminal:
            break
    return GuardedTrajectory(
        states=np.stack(states),
        actions=np.stack(actions),
        rewards=np.asarray(rewards, dtype=float),
        costs=np.stack(costs),
        ood=np.asarray(ood, dtype=bool),
        terminal=bool(terminal),
        dead=bool(dead),
    )


@dataclass
class ValueEstimates:
    """Batch Monte-Carlo estimates of the objective and constraint values."""

    v_reward: float
    v_ood: float
    v_costs: np.ndarray
    se_reward: float
    se_ood: float
    se_costs: np.ndarray
    n_rollouts: int

    def to_dict(self) -> dict:
        return {
            "v_reward": self.v_reward, "v_ood": self.v_ood,
            "v_costs": self.v_costs.tolist(),
            "se_reward": self.se_reward, "se_ood": self.se_ood,
            "se_costs": self.se_costs.tolist(),
            "n_rollouts": self.n_rollouts,
        }


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return m, se


def _batch_returns(ecmdp: GuardedEcmdp, policy: Policy, n_rollouts: int,
                   seed: int, keep_trajs: bool = False):
    """Per-rollout discounted returns (reward, ood, costs) under derived streams."""
    gamma = ecmdp.spec.gamma
    l = ecmdp.spec.n_costs
    ret_r = np.empty(n_rollouts)
    ret_g = np.empty(n_rollouts)
    ret_c = np.empty((n_rollouts, l))
    trajs = [] if keep_trajs else None
    for i in range(n_rollouts):
        traj = rollout_guarded(ecmdp, policy, spawn(seed, i))
        ret_r[i] = discounted_return(traj.rewards, gamma)
        ret_g[i] = discounted_return(traj.ood.astype(float), gamma)
        ret_c[i] = [discounted_return(traj.costs[:, j], gamma) for j in range(l)]
        if keep_trajs:
            trajs.append(traj)
    return ret_r, ret_g, ret_c, trajs


def _estimates(ret_r, ret_g, ret_c) -> ValueEstimates:
    vr, ser = _mean_se(ret_r)
    vg, seg = _mean_se(ret_g)
    vc = ret_c.mean(axis=0)
    sec = (ret_c.std(axis=0, ddof=1) / math.sqrt(len(ret_c))
           if len(ret_c) > 1 else np.zeros(ret_c.shape[1]))
    return ValueEstimates(vr, vg, vc, ser, seg, sec, len(ret_r))


def estimate_constraint_values(ecmdp: GuardedEcmdp, policy: Policy,
                               n_rollouts: int, seed: int) -> ValueEstimates:
    """Estimate V_reward, V_ood and every V_cost from one shared rollout batch."""
    if n_rollouts < 1:
        raise InvalidInputError("n_rollouts must be >= 1")
    ret_r, ret_g, ret_c, _ = _batch_returns(ecmdp, policy, n_rollouts, seed)
    return _estimates(ret_r, ret_g, ret_c)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 60
    rollouts_per_iter: int = 24
    primal_step: float = 0.01
    dual_step: float = 0.05
    max_halvings: int = 8
    tightening_fraction: float = 0.0   # cost thresholds shrink to (1 - f) * threshold
    penalty_coef: float = 10.0         # reward-penalty mode only
    baseline_momentum: float = 0.9
    seed: int = 0
    eval_rollouts: int = 100           # final re-estimation batch

    def __post_init__(self):
        if self.iterations < 0 or self.rollouts_per_iter < 1:
            raise InvalidInputError("iterations must be >= 0 and rollouts_per_iter >= 1")
        if self.primal_step <= 0 or self.dual_step < 0:
            raise InvalidInputError("step sizes must be positive")
        if not (0.0 <= self.tightening_fraction < 1.0):
            raise InvalidInputError("tightening_fraction must lie in [0, 1)")


# REINFORCE gradients carry 1/sigma^2 factors and can be arbitrarily large for
# tight policies; cap the norm so the first line-search probe stays sane.
_GRAD_CLIP = 10.0

# How many feasible iterates are kept for the final common-seed re-ranking.
_CANDIDATE_POOL = 5


@dataclass
class TrainResult:
    policy: GaussianPolicy
    log: list[dict]
    infeasible: bool
    best_iteration: int | None    # -1: the starting policy won; None: 0 iterations
    final_estimates: ValueEstimates
    multipliers: np.ndarray


@dataclass(frozen=True)
class _Constraint:
    kind: str       # "ood" or "cost"
    index: int      # cost component, -1 for ood
    threshold: float


def _active_constraints(spec: CmdpSpec, tightening_fraction: float) -> list[_Constraint]:
    cons = []
    if np.isfinite(spec.ood_threshold):
        cons.append(_Constraint("ood", -1, float(spec.ood_threshold)))
    for j, thr in enumerate(spec.cost_thresholds):
        if np.isfinite(thr):
            cons.append(_Constraint("cost", j, float(thr) * (1.0 - tightening_fraction)))
    return cons


def _signal_returns(con: _Constraint, ret_g: np.ndarray, ret_c: np.ndarray) -> np.ndarray:
    return ret_g if con.kind == "ood" else ret_c[:, con.index]


def train_guarded(ecmdp: GuardedEcmdp, init_policy: GaussianPolicy,
                  config: TrainConfig) -> TrainResult:
    """Primal-dual constrained policy search; see the module docstring."""
    return _train_core(ecmdp, init_policy, config,
                       constraints=_active_constraints(ecmdp.spec, config.tightening_fraction),
                       penalty_coef=0.0)


def train_penalty(ecmdp: GuardedEcmdp, init_policy: GaussianPolicy,
                  config: TrainConfig) -> TrainResult:
    """Unconstrained search on the penalized reward r - penalty_coef * ood."""
    return _train_core(ecmdp, init_policy, config, constraints=[],
                       penalty_coef=float(config.penalty_coef))


def _train_core(ecmdp: GuardedEcmdp, init_policy: GaussianPolicy,
                config: TrainConfig, constraints: list[_Constraint],
                penalty_coef: float) -> TrainResult:
    policy = init_policy.copy()
    spec = ecmdp.spec
    gamma = spec.gamma
    lambdas = np.zeros(len(constraints))
    log: list[dict] = []

    # Batch estimates are noisy; ranking iterates by them alone favors lucky
    # batches.  Keep a small pool of the highest-scoring feasible iterates and
    # re-rank the pool at the end on one fresh common-random-number batch.
    pool: list[tuple[float, int, np.ndarray]] = []   # (batch reward, iteration, params)
    least_violation = np.inf
    least_violation_params = None
    least_violation_iter = None
    baselines: dict[str, float] = {}

    def consider(params: np.ndarray, est: ValueEstimates, it: int) -> bool:
        """Pool feasible iterates (by batch reward), track the least-violating one."""
        nonlocal least_violation, least_violation_params, least_violation_iter
        vals = np.array([
            est.v_ood if c.kind == "ood" else est.v_costs[c.index] for c in constraints])
        ses = np.array([
            est.se_ood if c.kind == "ood" else est.se_costs[c.index] for c in constraints])
        thr = np.array([c.threshold for c in constraints])
        feasible = bool(np.all(vals <= thr + 2.0 * ses))
        if feasible:
            pool.append((est.v_reward, it, params.copy()))
            pool.sort(key=lambda c: -c[0])
            del pool[_CANDIDATE_POOL:]
        worst = float(np.max(vals - thr)) if constraints else -np.inf
        if worst <= least_violation:
            least_violation = worst
            least_violation_params = params.copy()
            least_violation_iter = it
        return feasible

    def objective_returns(ret_r, ret_g):
        return ret_r - penalty_coef * ret_g if penalty_coef else ret_r

    def lagrangian(ret_r, ret_g, ret_c) -> float:
        val = float(objective_returns(ret_r, ret_g).mean())
        for lam, con in zip(lambdas, constraints):
            val -= lam * (float(_signal_returns(con, ret_g, ret_c).mean()) - con.threshold)
        return val

    def worst_violation(ret_g, ret_c) -> float:
        """Largest constraint excess beyond threshold + 2 se (negative: feasible)."""
        worst = -np.inf
        for con in constraints:
            m, se = _mean_se(_signal_returns(con, ret_g, ret_c))
            worst = max(worst, m - con.threshold - 2.0 * se)
        return worst

    for it in range(config.iterations):
        batch_seed_entropy = (config.seed, 2, it)
        ret_r, ret_g, ret_c, trajs = _batch_returns(
            ecmdp, policy, config.rollouts_per_iter, _subseed(*batch_seed_entropy),
            keep_trajs=True)
        if it == 0:
            # The starting policy competes too (iteration index -1), so the
            # result is never worse than the initializer under the selection rule.
            consider(policy.get_params(), _estimates(ret_r, ret_g, ret_c), -1)

        # Baselines: running mean of each signal's full discounted return.
        mom = config.baseline_momentum
        sig_means = {"obj": float(objective_returns(ret_r, ret_g).mean())}
        for ci, con in enumerate(constraints):
            sig_means[f"c{ci}"] = float(_signal_returns(con, ret_g, ret_c).mean())
        for k, v in sig_means.items():
            baselines[k] = v if k not in baselines else mom * baselines[k] + (1 - mom) * v

        grad = np.zeros(policy.n_params)
        for traj in trajs:
            T = len(traj)
            disc = gamma ** np.arange(T)
            obj_step = traj.rewards - penalty_coef * traj.ood.astype(float) \
                if penalty_coef else traj.rewards
            adv = _reward_to_go(obj_step, gamma) - baselines["obj"]
            for ci, con in enumerate(constraints):
                if lambdas[ci] == 0.0:
                    continue
                sig = traj.ood.astype(float) if con.kind == "ood" else traj.costs[:, con.index]
                adv = adv - lambdas[ci] * (_reward_to_go(sig, gamma) - baselines[f"c{ci}"])
            for h in range(T):
                _, g = policy.log_prob_grad(traj.states[h], traj.actions[h])
                grad += disc[h] * adv[h] * g
        grad /= config.rollouts_per_iter
        gnorm = float(np.linalg.norm(grad))
        if gnorm > _GRAD_CLIP:
            grad *= _GRAD_CLIP / gnorm

        # Backtracking on the Lagrangian under common random numbers.  A step
        # must also not drive any constraint further past its threshold: a
        # feasibility filter that stands in while the multipliers are small.
        lag0 = lagrangian(ret_r, ret_g, ret_c)
        wv0 = max(worst_violation(ret_g, ret_c), 0.0)
        theta = policy.get_params()
        step = config.primal_step
        accepted = False
        new_returns = (ret_r, ret_g, ret_c)
        for _ in range(config.max_halvings + 1):
            policy.set_params(theta + step * grad)
            pr, pg, pc, _ = _batch_returns(
                ecmdp, policy, config.rollouts_per_iter, _subseed(*batch_seed_entropy))
            if lagrangian(pr, pg, pc) >= lag0 and worst_violation(pg, pc) <= wv0:
                accepted = True
                new_returns = (pr, pg, pc)
                break
            step *= 0.5
        if not accepted:
            policy.set_params(theta)
            step = 0.0
        ret_r, ret_g, ret_c = new_returns
        est = _estimates(ret_r, ret_g, ret_c)

        # Projected dual ascent on the violation of each active constraint.
        cons_vals = np.array([
            est.v_ood if c.kind == "ood" else est.v_costs[c.index] for c in constraints])
        thresholds = np.array([c.threshold for c in constraints])
        if constraints:
            lambdas = np.maximum(0.0, lambdas + config.dual_step * (cons_vals - thresholds))

        feasible = consider(policy.get_params(), est, it)

        log.append({
            "iter": it,
            "V_r": est.v_reward,
            "V_ood": est.v_ood,
            "V_c": est.v_costs.tolist(),
            "lambda": lambdas.tolist(),
            "step_size": step,
            "feasible": feasible,
        })

    infeasible = False
    best_iteration = None
    if config.iterations == 0:
        policy = init_policy.copy()
    elif pool:
        # Fresh evaluation under a shared seed; re-check feasibility and pick
        # the best feasible by the unbiased reward estimate.
        rerank_seed = _subseed(config.seed, 3, 1)
        best_score = -np.inf
        chosen = pool[0]
        for cand_reward, cand_it, cand_params in pool:
            policy.set_params(cand_params)
            est = estimate_constraint_values(
                ecmdp, policy, max(config.eval_rollouts, 2), rerank_seed)
            vals = np.array([
                est.v_ood if c.kind == "ood" else est.v_costs[c.index] for c in constraints])
            ses = np.array([
                est.se_ood if c.kind == "ood" else est.se_costs[c.index] for c in constraints])
            thr = np.array([c.threshold for c in constraints])
            ok = bool(np.all(vals <= thr + 2.0 * ses))
            score = est.v_reward if ok else -np.inf
            if score > best_score:
                best_score = score
                chosen = (cand_reward, cand_it, cand_params)
        policy.set_params(chosen[2])
        best_iteration = chosen[1]
    elif least_violation_params is not None:
        policy.set_params(least_violation_params)
        best_iteration = least_violation_iter
        infeasible = True

    final = estimate_constraint_values(
        ecmdp, policy, max(config.eval_rollouts, 2), _subseed(config.seed, 3, 0))
    if config.iterations == 0:
        cons_vals = np.array([
            final.v_ood if c.kind == "ood" else final.v_costs[c.index] for c in constraints])
        cons_ses = np.array([
            final.se_ood if c.kind == "ood" else final.se_costs[c.index] for c in constraints])
        thresholds = np.array([c.threshold for c in constraints])
        infeasible = bool(np.any(cons_vals > thresholds + 2.0 * cons_ses))
    return TrainResult(
        policy=policy,
        log=log,
        infeasible=infeasible,
        best_iteration=best_iteration,
        final_estimates=final,
        multipliers=lambdas.copy(),
    )


def _reward_to_go(signal: np.ndarray, gamma: float) -> np.ndarray:
    """G_h = sum_{t >= h} gamma^(t-h) signal_t."""
    out = np.empty_like(signal, dtype=float)
    acc = 0.0
    for h in range(len(signal) - 1, -1, -1):
        acc = float(signal[h]) + gamma * acc
        out[h] = acc
    return out


def _subseed(seed: int, *path: int) -> int:
    """Collapse (seed, path) into one integer seed for stream derivation."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(path))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Chance-constraint proxy diagnostics
# ---------------------------------------------------------------------------


@dataclass
class ChanceProxyReport:
    """Monte-Carlo comparison of the joint OOD violation probability, its
    union (Boole) bound, and the discounted OOD cost, from shared rollouts."""

    joint_violation_prob: float
    boole_sum: float
    discounted_ood_cost: float
    se_joint: float
    se_boole: float
    se_discounted: float
    n_rollouts: int

    def to_dict(self) -> dict:
        return {
            "joint_violation_prob": self.joint_violation_prob,
            "boole_sum": self.boole_sum,
            "discounted_ood_cost": self.discounted_ood_cost,
            "se_joint": self.se_joint,
            "se_boole": self.se_boole,
            "se_discounted": self.se_discounted,
            "n_rollouts": self.n_rollouts,
        }


def verify_chance_proxy(ecmdp: GuardedEcmdp, policy: Policy, n_mc: int,
                        seed: int) -> ChanceProxyReport:
    """Estimate (i) Pr{any step h <= H leaves the guardian}, (ii) the summed
    per-step violation probabilities, (iii) the discounted OOD cost.

    All three come from the same rollouts, so the pathwise inequality
    1{any violation} <= sum of violations transfers to the estimates.
    """
    if n_mc < 1:
        raise InvalidInputError("n_mc must be >= 1")
    gamma = ecmdp.spec.gamma
    any_v = np.empty(n_mc)
    sum_v = np.empty(n_mc)
    disc_v = np.empty(n_mc)
    for i in range(n_mc):
        traj = rollout_guarded(ecmdp, policy, spawn(seed, i))
        flags = traj.ood.astype(float)
        any_v[i] = 1.0 if flags.any() else 0.0
        sum_v[i] = flags.sum()
        disc_v[i] = discounted_return(flags, gamma)
    j, sj = _mean_se(any_v)
    b, sb = _mean_se(sum_v)
    d, sd = _mean_se(disc_v)
    return ChanceProxyReport(j, b, d, sj, sb, sd, n_mc)
