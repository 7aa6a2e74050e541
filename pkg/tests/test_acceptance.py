"""Acceptance gate: ten end-to-end checks against synthetic ground truth.

Each test prints one ``criterion NN [PASS|FAIL]`` line with the measured
numbers (visible with ``pytest -rA``), then asserts.  The guarded-vs-behavior
comparisons share one module-scope fixture that trains five seed pairs, so
this module takes several minutes; everything is deterministic.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

import guardedrl as g
from guardedrl.cli import main as cli_main

GAMMA = 0.99
HORIZON = 20
OOD_BUDGET = 1.0
COST_LIMITS = np.array([0.30, 1.0])
TRAIN_SEEDS = (0, 1, 2, 3, 4)
EVAL_SEED = 777


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num:02d} [{'PASS' if ok else 'FAIL'}] {detail}")
    assert ok, f"criterion {num:02d}: {detail}"


# ---------------------------------------------------------------------------
# Shared synthetic-environment pipeline (the frozen evaluation setup)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def env():
    return g.SyntheticClinicalCmdp()


@pytest.fixture(scope="module")
def oracle(env):
    return env.support_oracle()


@pytest.fixture(scope="module")
def dataset(env):
    return g.generate_dataset(
        env, env.behavior_policy(),
        g.GenerationConfig(n_trajectories=250, horizon=20, seed=42))


@pytest.fixture(scope="module")
def guardian(dataset):
    scaler = g.ZScaler.from_standardization(dataset.standardization)
    return g.fit_kde_guardian(dataset.sa_matrix("train"), alpha=0.05, scaler=scaler)


@pytest.fixture(scope="module")
def ecmdp(env, dataset, guardian):
    model = g.fit_knn_model(dataset, k=5, weighting="uniform")
    inits = dataset.initial_states("train")
    spec = g.CmdpSpec(
        gamma=GAMMA, horizon=HORIZON, cost_thresholds=COST_LIMITS.copy(),
        ood_threshold=OOD_BUDGET,
        initial_state_sampler=lambda rng: inits[rng.integers(len(inits))],
        initial_state_source="train initial states")
    return g.GuardedEcmdp(model, env.reward_rule(), env.cost_rules(), guardian, spec)


@pytest.fixture(scope="module")
def cloned(dataset):
    return g.fit_behavior_cloning(dataset)


def _true_eval(env, policy, n_rollouts, *, stochastic):
    """Discounted reward/cost and death rate under the actual dynamics.

    Trained policies are judged on their mean action (clipped to the dosing
    box); the stochastic flag reproduces the behavior policy's own noise.
    """
    reward_rule = env.reward_rule()
    cost_rules = env.cost_rules()
    returns = np.empty(n_rollouts)
    costs = np.zeros(len(COST_LIMITS))
    deaths = 0
    for i in range(n_rollouts):
        rng = g.spawn(EVAL_SEED, i)
        state = env.sample_initial(rng)
        total, disc = 0.0, 1.0
        for _ in range(HORIZON + 1):
            if stochastic:
                action = policy.sample_action(state, rng)
            else:
                action = policy.mean_action(state)
            action = np.clip(action, env.action_low, env.action_high)
            total += disc * reward_rule(state, action)
            costs += disc * cost_rules(state, action)
            disc *= GAMMA
            state, terminal, dead = env.step(state, action, rng)
            if terminal:
                deaths += int(dead)
                break
        returns[i] = total
    return {
        "v_r": float(returns.mean()),
        "se": float(returns.std(ddof=1) / math.sqrt(n_rollouts)),
        "me": deaths / n_rollouts,
        "v_c": costs / n_rollouts,
    }


@pytest.fixture(scope="module")
def behavior_true(env):
    return _true_eval(env, env.behavior_policy(), 8000, stochastic=True)


@pytest.fixture(scope="module")
def paired_runs(env, ecmdp, cloned):
    """Five seed-paired (guarded, unconstrained) trainings plus true-model
    evaluations of the guarded winners.  Consumed by criteria 4 and 10."""
    free_spec = g.CmdpSpec(
        gamma=GAMMA, horizon=HORIZON,
        cost_thresholds=np.array([np.inf, np.inf]), ood_threshold=np.inf,
        initial_state_sampler=ecmdp.spec.initial_state_sampler)
    free = g.GuardedEcmdp(ecmdp.model, ecmdp.reward_rule, ecmdp.cost_rules,
                          ecmdp.guardian, free_spec)
    runs = []
    for seed in TRAIN_SEEDS:
        guarded = g.train_guarded(ecmdp, cloned.copy(), g.TrainConfig(
            iterations=80, rollouts_per_iter=48, primal_step=0.05,
            dual_step=0.05, seed=seed, eval_rollouts=200))
        unconstrained = g.train_guarded(free, cloned.copy(), g.TrainConfig(
            iterations=40, rollouts_per_iter=32, primal_step=0.05,
            dual_step=0.05, seed=seed, eval_rollouts=200))
        runs.append({
            "seed": seed,
            "infeasible": guarded.infeasible,
            "rate_guarded": g.ood_visit_rate(guarded.policy, ecmdp, 300, seed=1000 + seed),
            "rate_free": g.ood_visit_rate(unconstrained.policy, ecmdp, 300, seed=1000 + seed),
            "true": _true_eval(env, guarded.policy, 4000, stochastic=False),
        })
    return runs


# ---------------------------------------------------------------------------
# 1. Accepted points stay inside the true support
# ---------------------------------------------------------------------------


def test_criterion_01_fitted_set_contained_in_true_support(env, oracle):
    behavior = env.behavior_policy()
    escapes, accepted_counts, outside_fracs, fit_times = [], [], [], []
    for s in range(10):
        ds = g.generate_dataset(env, behavior, g.GenerationConfig(
            n_trajectories=280, horizon=20, seed=9000 + s))
        pairs = ds.sa_matrix(None)[:5000]
        assert len(pairs) == 5000
        start = time.monotonic()
        classifier = g.fit_psos(pairs, degree=2, alpha_c=0.05)
        fit_times.append(time.monotonic() - start)
        # Uniform probes over the fitting data's bounding box: roughly half
        # land outside the oracle (box corners beyond the data ellipsoid), so
        # a leaking fit cannot hide.
        rng = np.random.default_rng(100 + s)
        grid = rng.uniform(pairs.min(axis=0), pairs.max(axis=0), size=(20000, 6))
        accepted = ~classifier.ood_mask_raw(grid)
        outside = ~oracle.contains_many(grid)
        n_accepted = int(accepted.sum())
        accepted_counts.append(n_accepted)
        outside_fracs.append(float(outside.mean()))
        escapes.append(float((accepted & outside).sum()) / max(n_accepted, 1))
    mean_escape = float(np.mean(escapes))
    ok = (mean_escape <= 0.01 and max(fit_times) < 60.0
          and min(accepted_counts) >= 100 and min(outside_fracs) >= 0.2)
    _verdict(1, ok,
             f"mean accepted-outside-support {mean_escape:.5f} <= 0.01 over 10 seeds; "
             f"accepted/seed >= {min(accepted_counts)}, probe outside-frac >= "
             f"{min(outside_fracs):.2f}, max fit {max(fit_times):.1f}s < 60s")


# ---------------------------------------------------------------------------
# 2. Coverage calibration of both guardian families
# ---------------------------------------------------------------------------


def test_criterion_02_guardian_coverage_calibration(env, guardian):
    ds = g.generate_dataset(env, env.behavior_policy(), g.GenerationConfig(
        n_trajectories=280, horizon=20, seed=9000))
    pairs = ds.sa_matrix(None)[:5000]
    classifier = g.fit_psos(pairs, degree=2, alpha_c=0.05)
    coverage = g.empirical_coverage(classifier, classifier.scaler.transform(pairs))

    # Recompute the leave-one-out density of every fitting point from public
    # fields: full-sample density minus the self kernel, renormalized.
    refs = guardian.reference_points
    n, d = refs.shape
    norm = float(np.prod(guardian.bandwidth)) * (2.0 * math.pi) ** (d / 2.0)
    loo = (n * guardian.densities(refs) - 1.0 / norm) / (n - 1)
    flagged = float(np.mean(loo < guardian.threshold))
    ok = (coverage >= 1.0 - 0.05 - 0.01
          and abs(flagged - guardian.alpha) <= 1.0 / n
          and abs(flagged - guardian.achieved_outlier_fraction) <= 1.0 / n)
    _verdict(2, ok,
             f"sublevel-set coverage {coverage:.4f} >= 0.94; density guardian flags "
             f"{flagged:.5f} of {n} fitting points, |.-alpha| "
             f"{abs(flagged - guardian.alpha):.5f} <= 1/N {1.0 / n:.5f}")


# ---------------------------------------------------------------------------
# 3. Sample-size calculator: pinned value and monotonicity
# ---------------------------------------------------------------------------


def test_criterion_03_sample_size_pinned_and_monotone():
    pinned = g.required_sample_size(0.05, 0.10, 0.05)
    second = g.required_sample_size(0.5, 0.6, 0.1)
    deltas = [0.3, 0.2, 0.1, 0.05, 0.01, 0.001]
    by_delta = [g.required_sample_size(dl, 0.10, 0.05) for dl in deltas]
    gaps = [0.01, 0.02, 0.05, 0.10, 0.20, 0.40]
    by_gap = [g.required_sample_size(0.05, 0.05 + gp, 0.05) for gp in gaps]
    monotone = (all(a <= b for a, b in zip(by_delta, by_delta[1:]))
                and all(a >= b for a, b in zip(by_gap, by_gap[1:]))
                and all(v >= 1 for v in by_delta + by_gap))
    ok = pinned == 6 and second == 1 and monotone
    _verdict(3, ok,
             f"required_sample_size(0.05, 0.10, 0.05) = {pinned} (expect 6), "
             f"(0.5, 0.6, 0.1) = {second} (expect 1); shrinking delta {by_delta} "
             f"nondecreasing, widening gap {by_gap} nonincreasing")


# ---------------------------------------------------------------------------
# 4. Guarded training avoids the rejected region
# ---------------------------------------------------------------------------


def test_criterion_04_guarded_training_cuts_ood_visits(ecmdp, paired_runs):
    band = 2.0 * OOD_BUDGET / ecmdp.spec.value_scale()
    separated = sum(r["rate_guarded"] < r["rate_free"] for r in paired_runs)
    worst = max(r["rate_guarded"] for r in paired_runs)
    pairs = ", ".join(f"{r['rate_guarded']:.3f}<{r['rate_free']:.3f}"
                      for r in paired_runs)
    ok = separated == len(paired_runs) and worst <= band
    _verdict(4, ok,
             f"guarded vs unconstrained visit rate lower in {separated}/5 pairs "
             f"({pairs}); worst guarded {worst:.4f} <= band {band:.4f}")


# ---------------------------------------------------------------------------
# 5. Joint violation probability never exceeds its union bound
# ---------------------------------------------------------------------------


def test_criterion_05_joint_violation_below_union_bound(env):
    ds = g.generate_dataset(env, env.behavior_policy(), g.GenerationConfig(
        n_trajectories=40, horizon=8, seed=11))
    scaler = g.ZScaler.from_standardization(ds.standardization)
    watchdog = g.fit_knn_guardian(ds.sa_matrix(None), k=5, alpha=0.10, scaler=scaler)
    spec = g.CmdpSpec(gamma=GAMMA, horizon=8,
                      cost_thresholds=np.array([np.inf, np.inf]),
                      ood_threshold=1.0, initial_state_sampler=env.sample_initial)
    ecm = g.GuardedEcmdp(env, env.reward_rule(), env.cost_rules(), watchdog, spec)
    base = g.fit_behavior_cloning(ds, split=None)
    rng = np.random.default_rng(2025)
    min_slack, max_joint = np.inf, 0.0
    for i in range(10):
        policy = base.copy()
        if i > 0:
            width = (0.05, 0.10, 0.20)[i % 3]
            policy.set_params(policy.get_params()
                              + rng.normal(0.0, width, policy.n_params))
        report = g.verify_chance_proxy(ecm, policy, 10_000, seed=50 + i)
        slack = (report.boole_sum
                 + 3.0 * math.hypot(report.se_joint, report.se_boole)
                 - report.joint_violation_prob)
        min_slack = min(min_slack, slack)
        max_joint = max(max_joint, report.joint_violation_prob)
        assert slack >= -1e-12, f"policy {i}: joint exceeds union bound by {-slack}"
    ok = min_slack >= -1e-12 and max_joint > 0.0
    _verdict(5, ok,
             f"10 policies x 10^4 rollouts: min (bound - joint) slack {min_slack:.4f} "
             f">= 0; largest joint violation prob {max_joint:.3f} (nontrivial)")


# ---------------------------------------------------------------------------
# 6. Model-based value error shrinks with more data
# ---------------------------------------------------------------------------


def test_criterion_06_model_value_error_shrinks_with_data(env):
    behavior = env.behavior_policy()
    reward_rule = env.reward_rule()
    spec = g.CmdpSpec(gamma=GAMMA, horizon=HORIZON,
                      cost_thresholds=np.array([np.inf, np.inf]),
                      ood_threshold=np.inf, initial_state_sampler=env.sample_initial)
    v_true, se_true = g.true_value(env, behavior, reward_rule, spec, 4000, seed=8)
    sizes, errors, std_errs = [], [], []
    for n_traj, seed in [(25, 2042), (100, 2043), (400, 2044)]:
        ds = g.generate_dataset(env, behavior, g.GenerationConfig(
            n_trajectories=n_traj, horizon=20, seed=seed))
        model = g.fit_knn_model(ds, k=5, weighting="uniform", split=None)
        v_hat, se_hat = g.mc_value(behavior, model, reward_rule, spec, 600, seed=7)
        sizes.append(len(ds.sa_matrix(None)))
        errors.append(abs(v_hat - v_true))
        std_errs.append(math.hypot(se_hat, se_true))
    inversions = [i for i in range(2) if errors[i + 1] >= errors[i]]
    within = all(errors[i + 1] - errors[i] <= math.hypot(std_errs[i], std_errs[i + 1])
                 for i in inversions)
    ok = len(inversions) <= 1 and within
    _verdict(6, ok,
             f"|model value - true value| at {sizes} samples: "
             f"{[round(e, 4) for e in errors]} (true {v_true:.3f}); "
             f"{len(inversions)} inversion(s), all within combined std errors: {within}")


# ---------------------------------------------------------------------------
# 7. Threshold tightening keeps unflagged policies safe on the true model
# ---------------------------------------------------------------------------


def test_criterion_07_tightened_training_truly_safe(env, ecmdp, cloned):
    cost_rules = env.cost_rules()

    def true_costs(policy, n_rollouts=400):
        acc = np.zeros(len(COST_LIMITS))
        for i in range(n_rollouts):
            rng = g.spawn(EVAL_SEED, i)
            state = env.sample_initial(rng)
            disc = 1.0
            for _ in range(HORIZON + 1):
                action = np.clip(policy.mean_action(state),
                                 env.action_low, env.action_high)
                acc += disc * cost_rules(state, action)
                disc *= GAMMA
                state, terminal, _ = env.step(state, action, rng)
                if terminal:
                    break
        return acc / n_rollouts

    flagged, safe, worst = 0, 0, 0.0
    for seed in range(20):
        result = g.train_guarded(ecmdp, cloned.copy(), g.TrainConfig(
            iterations=10, rollouts_per_iter=16, primal_step=0.05, dual_step=0.05,
            seed=seed, eval_rollouts=64, tightening_fraction=0.1))
        if result.infeasible:
            flagged += 1
            continue
        v_c = true_costs(result.policy)
        worst = max(worst, float(np.max(v_c / COST_LIMITS)))
        safe += bool(np.all(v_c <= COST_LIMITS))
    ok = safe >= 19
    _verdict(7, ok,
             f"unflagged policies truly within cost limits in {safe}/20 seeds "
             f"({flagged} flagged infeasible); worst cost/limit ratio {worst:.3f}")


# ---------------------------------------------------------------------------
# 8. Evaluation metrics against brute-force re-implementations
# ---------------------------------------------------------------------------


class _ConstPolicy:
    def __init__(self, action):
        self.action = np.asarray(action, dtype=float)

    def mean_action(self, state):
        return self.action


class _LinearStochastic:
    """Gaussian actions around a fixed linear map; used for the death count."""

    def __init__(self, W, b, std):
        self.W, self.b, self.std = W, b, std

    def sample_action(self, state, rng):
        return self.W @ state + self.b + self.std * rng.standard_normal(len(self.b))


class _DriftModel:
    def step(self, state, action, rng):
        nxt = state + action + 0.05 * rng.standard_normal(state.shape)
        dead = bool(nxt[0] < 0.0)
        return nxt, dead, dead


def _tiny_dataset(rng):
    trajectories = []
    for i in range(int(rng.integers(2, 5))):
        steps = int(rng.integers(1, 6))
        states = rng.uniform(0.2, 2.0, (steps + 1, 2))
        samples = [
            g.TransitionSample(
                state=states[t], action=rng.uniform(0.0, 1.0, 2),
                next_state=states[t + 1], reward=0.0, costs=np.zeros(1),
                terminal=t == steps - 1, dead=False)
            for t in range(steps)
        ]
        trajectories.append(g.Trajectory(f"t{i:03d}", samples))
    return g.OfflineDataset(trajectories, r_max=1.0, c_max=np.ones(1))


def test_criterion_08_metrics_match_brute_force():
    worst_acp = 0.0
    for case in range(20):
        rng = np.random.default_rng(600 + case)
        ds = _tiny_dataset(rng)
        samples = list(ds.iter_samples(None))
        policy = _ConstPolicy(rng.uniform(0.0, 1.0, 2))

        explicit_eps = case % 2 == 0
        config = g.EvalConfig(split=None,
                              concordance_epsilon=0.3 if explicit_eps else None,
                              intensification_margin=0.02)
        if explicit_eps:
            eps = 0.3
        else:
            acts = np.stack([s.action for s in samples])
            eps = 0.1 * math.sqrt(float((acts.std(axis=0) ** 2).sum()))
        hits = sum(1 for s in samples
                   if math.dist(policy.mean_action(s.state), s.action) < eps)
        assert g.mcr(policy, ds, config) == hits / len(samples)

        down = [s for s in samples if s.state[0] < 0.92 or s.state[1] < 0.5]
        expected = (None if not down else
                    sum(1 for s in down
                        if bool(np.any(policy.mean_action(s.state) > s.action + 0.02)))
                    / len(down))
        assert g.air(policy, ds, config) == expected

        sequences = [np.stack([s.action for s in t.samples]) for t in ds.trajectories]
        total, per_dim, denom = 0.0, np.zeros(2), 0
        for seq in sequences:
            for t in range(len(seq) - 1):
                delta = seq[t + 1] - seq[t]
                total += math.hypot(*delta)
                per_dim += np.abs(delta)
                denom += 1
        result = g.acp(sequences)
        assert result.n_transitions == denom
        if denom == 0:
            assert result.scalar is None and result.per_dim is None
        else:
            worst_acp = max(worst_acp, abs(result.scalar - total / denom),
                            float(np.max(np.abs(np.array(result.per_dim)
                                                - per_dim / denom))))
            assert abs(result.scalar - total / denom) <= 1e-12
            assert np.allclose(result.per_dim, per_dim / denom, atol=1e-12, rtol=0.0)

        policy_s = _LinearStochastic(rng.normal(0.0, 0.3, (2, 2)),
                                     rng.normal(0.0, 0.2, 2), 0.1)
        spec = g.CmdpSpec(gamma=0.9, horizon=5, cost_thresholds=np.array([np.inf]),
                          ood_threshold=np.inf,
                          initial_state_sampler=lambda r: r.uniform(0.0, 0.4, 2))
        model = _DriftModel()
        deaths = 0
        for i in range(40):
            r = g.spawn(900 + case, i)
            state = np.asarray(spec.initial_state_sampler(r), dtype=float)
            for _ in range(spec.horizon + 1):
                action = policy_s.sample_action(state, r)
                state, terminal, dead = model.step(state, action, r)
                if dead:
                    deaths += 1
                if terminal:
                    break
        assert g.mortality_estimate(policy_s, model, spec, 40, seed=900 + case) \
            == deaths / 40

    # Hand-checked reference values.
    obs = [0.31, 0.45, 0.50, 0.69, 0.75, 0.05]
    states = np.tile([1.0, 1.0], (6, 1))
    hand = g.OfflineDataset([g.Trajectory("h0", [
        g.TransitionSample(state=states[t], action=np.array([obs[t]]),
                           next_state=states[t], reward=0.0, costs=np.zeros(1),
                           terminal=t == 5, dead=False)
        for t in range(6)])], r_max=1.0, c_max=np.ones(1))
    cfg = g.EvalConfig(split=None, concordance_epsilon=0.2)
    mcr_hand = g.mcr(_ConstPolicy([0.5]), hand, cfg)

    low = np.array([0.80, 1.0])
    air_ds = g.OfflineDataset([g.Trajectory("h1", [
        g.TransitionSample(state=low, action=np.array([a, a]),
                           next_state=low, reward=0.0, costs=np.zeros(1),
                           terminal=i == 3, dead=False)
        for i, a in enumerate([0.1, 0.2, 0.3, 0.9])])], r_max=1.0, c_max=np.ones(1))
    air_hand = g.air(_ConstPolicy([0.5, 0.5]), air_ds, g.EvalConfig(split=None))

    acp_hand = g.acp([np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]])])
    acp_pair = g.acp([np.array([[0.0, 0.0], [1.0, 0.0]])])
    hands = (mcr_hand == 4 / 6 and air_hand == 0.75
             and acp_hand.scalar == 2.5 and acp_pair.scalar == 1.0
             and acp_pair.per_dim == (1.0, 0.0))
    _verdict(8, hands,
             f"20 random datasets: concordance/intensification/death counts exact, "
             f"action-change max |diff| {worst_acp:.2e} <= 1e-12; hand values "
             f"mcr {mcr_hand:.4f}=4/6 air {air_hand}=0.75 acp {acp_hand.scalar}=2.5")


# ---------------------------------------------------------------------------
# 9. Numerical identities
# ---------------------------------------------------------------------------


def test_criterion_09_density_gradient_and_linearity_identities():
    rng = np.random.default_rng(31)
    worst_density = 0.0
    for _ in range(10):
        nxt = rng.normal(0.0, 1.0, (40, 2))
        ctx = rng.normal(0.0, 1.0, (40, 3))
        density = g.fit_kde_density(nxt, ctx)
        for _ in range(3):
            q_n = rng.normal(0.0, 1.2, 2)
            q_c = rng.normal(0.0, 1.2, 3)
            joint = density.joint_density(q_n, q_c)
            product = (density.conditional_density(q_n, q_c)
                       * density.marginal_density(q_c))
            worst_density = max(worst_density, abs(product - joint) / joint)
    density_ok = worst_density <= 1e-12

    worst_grad = 0.0
    for case in range(50):
        r = np.random.default_rng(7000 + case)
        hidden = 4 if case % 2 else None
        policy = g.GaussianPolicy(3, 2, hidden=hidden)
        theta = 0.5 * r.standard_normal(policy.n_params)
        theta[-2:] = r.uniform(-1.5, -0.5, 2)
        policy.set_params(theta)
        state, action = r.standard_normal(3), r.standard_normal(2)
        _, analytic = policy.log_prob_grad(state, action)
        h = 1e-5
        fd = np.empty_like(analytic)
        for j in range(len(theta)):
            probe = policy.copy()
            step = np.zeros_like(theta)
            step[j] = h
            probe.set_params(theta + step)
            up = probe.log_prob(state, action)
            probe.set_params(theta - step)
            down = probe.log_prob(state, action)
            fd[j] = (up - down) / (2.0 * h)
        rel = float(np.max(np.abs(fd - analytic)) / max(1.0, np.max(np.abs(analytic))))
        worst_grad = max(worst_grad, rel)
    grad_ok = worst_grad < 1e-4

    worst_linear = 0.0
    for case in range(200):
        r = np.random.default_rng(8000 + case)
        length = int(r.integers(1, 30))
        a, b = r.normal(0.0, 2.0, length), r.normal(0.0, 2.0, length)
        gamma = float(r.uniform(0.05, 0.99))
        lhs = g.discounted_return(2.0 * a - 3.0 * b, gamma)
        rhs = 2.0 * g.discounted_return(a, gamma) - 3.0 * g.discounted_return(b, gamma)
        worst_linear = max(worst_linear, abs(lhs - rhs))
    linear_ok = (worst_linear <= 1e-10
                 and g.discounted_return([0.0, 1.0, 0.0, 1.0], 0.5) == 0.625)

    ok = density_ok and grad_ok and linear_ok
    _verdict(9, ok,
             f"conditional*marginal vs joint rel err {worst_density:.2e} <= 1e-12; "
             f"log-prob grad vs finite differences {worst_grad:.2e} < 1e-4 "
             f"(50 instances); linearity max |diff| {worst_linear:.2e}")


# ---------------------------------------------------------------------------
# 10. Guarded training beats the behavior policy without raising mortality
# ---------------------------------------------------------------------------


def test_criterion_10_beats_behavior_and_tiny_pipeline_fast(
        tmp_path, behavior_true, paired_runs):
    mean_reward = float(np.mean([r["true"]["v_r"] for r in paired_runs]))
    mean_me = float(np.mean([r["true"]["me"] for r in paired_runs]))
    feasible = all(not r["infeasible"] for r in paired_runs)

    config = {
        "output_dir": "out",
        "data": {"path": "dataset.csv", "n_trajectories": 40, "horizon": 8, "seed": 5},
        "guardian": {"type": "kde", "alpha": 0.1},
        "model": {"k": 3},
        "train": {
            "gamma": 0.9, "horizon": 8, "cost_thresholds": [5.0, 5.0],
            "ood_threshold": 2.0, "iterations": 2, "rollouts_per_iter": 4,
            "primal_step": 0.05, "eval_rollouts": 4, "seeds": [0, 1],
        },
        "eval": {"n_rollouts": 8, "seed": 0},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(config))
    out_dir = tmp_path / "out"
    start = time.monotonic()
    for command in ("gen-data", "fit-guardian", "fit-model", "train", "eval", "report"):
        code = cli_main([command, "--config", str(cfg_path),
                         "--output", str(out_dir), "--quiet"])
        assert code == 0, f"{command} exited {code}"
    elapsed = time.monotonic() - start
    assert (out_dir / "report.json").exists()

    ok = (feasible and mean_reward > behavior_true["v_r"]
          and mean_me <= behavior_true["me"] and elapsed < 300.0)
    _verdict(10, ok,
             f"mean reward {mean_reward:.4f} > behavior {behavior_true['v_r']:.4f}; "
             f"mean death rate {mean_me:.4f} <= behavior {behavior_true['me']:.4f}; "
             f"tiny pipeline {elapsed:.0f}s < 300s")
