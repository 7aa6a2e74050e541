"""Estimated dynamics: conditional density, kNN resampler, reward/cost rules."""

import math

import numpy as np
import pytest

from guardedrl import (
    DegenerateBandwidthError,
    InvalidInputError,
    KnnTransitionModel,
    ModelError,
    OfflineDataset,
    OutOfSupportError,
    Standardization,
    Trajectory,
    TransitionSample,
    fit_kde_density,
    fit_knn_model,
    make_cost_rules,
    make_reward_rule,
    spawn,
)
from guardedrl.models import KdeConditionalDensity, knn_next

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# conditional density


def _one_sample_density(h=1.0):
    return KdeConditionalDensity(next_states=np.array([[0.0]]),
                                 contexts=np.array([[0.0]]), bandwidth=h)


def test_joint_density_single_sample_at_origin():
    kde = _one_sample_density()
    # D = 2, N = 1, h = 1: (2 pi)^-1
    assert kde.joint_density(np.zeros(1), np.zeros(1)) == pytest.approx(
        1.0 / (2.0 * math.pi), abs=1e-15)


def test_joint_density_far_query_decays():
    kde = _one_sample_density()
    assert kde.joint_density(np.array([10.0]), np.zeros(1)) < 1e-20


def test_marginal_density_two_contexts():
    kde = KdeConditionalDensity(next_states=np.zeros((2, 1)),
                                contexts=np.array([[0.0], [2.0]]), bandwidth=1.0)
    # (1 + exp(-2)) / (2 sqrt(2 pi))
    expect = (1.0 + math.exp(-2.0)) / (2.0 * math.sqrt(2.0 * math.pi))
    assert kde.marginal_density(np.zeros(1)) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(0.22647, abs=5e-6)
    # symmetry: both contexts see the same density at their own location
    assert kde.marginal_density(np.zeros(1)) == pytest.approx(
        kde.marginal_density(np.array([2.0])), abs=1e-15)


def test_marginal_density_single_sample():
    kde = _one_sample_density()
    assert kde.marginal_density(np.zeros(1)) == pytest.approx(INV_SQRT_2PI, abs=1e-15)


def test_conditional_density_single_sample():
    kde = _one_sample_density()
    # joint / marginal = (2pi)^-1 / (2pi)^-0.5 = (2pi)^-0.5
    assert kde.conditional_density(np.zeros(1), np.zeros(1)) == pytest.approx(
        INV_SQRT_2PI, abs=1e-15)


def test_conditional_density_out_of_support():
    kde = _one_sample_density()
    with pytest.raises(OutOfSupportError):
        kde.conditional_density(np.zeros(1), np.array([100.0]))


def test_conditional_density_integrates_to_one():
    rng = spawn(101)
    contexts = rng.normal(size=(40, 1))
    next_states = 0.5 * contexts + rng.normal(scale=0.3, size=(40, 1))
    kde = fit_kde_density(next_states, contexts)
    grid = np.linspace(-6, 6, 4001)
    vals = [kde.conditional_density(np.array([s]), np.zeros(1)) for s in grid]
    mass = np.trapezoid(vals, grid)
    assert mass == pytest.approx(1.0, abs=0.02)


def test_joint_equals_conditional_times_marginal():
    rng = spawn(103)
    kde = fit_kde_density(rng.normal(size=(30, 2)), rng.normal(size=(30, 3)))
    for _ in range(20):
        s = rng.normal(size=2)
        x = rng.normal(size=3)
        lhs = kde.joint_density(s, x)
        rhs = kde.conditional_density(s, x) * kde.marginal_density(x)
        assert lhs == pytest.approx(rhs, abs=1e-12, rel=1e-12)


def test_fit_kde_density_scott_default():
    rng = spawn(107)
    ns = rng.normal(size=(200, 1))
    cx = rng.normal(size=(200, 2))
    kde = fit_kde_density(ns, cx)
    joint = np.concatenate([ns, cx], axis=1)
    expect = 200 ** (-1.0 / (3 + 4)) * joint.std(axis=0).mean()
    assert kde.bandwidth == pytest.approx(expect, rel=1e-12)


def test_fit_kde_density_identical_points_degenerate():
    pts = np.ones((10, 1))
    with pytest.raises(DegenerateBandwidthError):
        fit_kde_density(pts, pts)


def test_density_rejects_dimension_mismatch():
    kde = _one_sample_density()
    with pytest.raises(InvalidInputError):
        kde.joint_density(np.zeros(2), np.zeros(1))


# ---------------------------------------------------------------------------
# kNN transition model


def _mini_dataset():
    def traj(tid, s0, a, s1, terminal=False, dead=False, split="train"):
        return Trajectory(tid, [TransitionSample(
            np.array([s0]), np.array([a]), np.array([s1]), 0.0, np.zeros(1),
            terminal=terminal, dead=dead)], split=split)
    trajs = [
        traj("a", 0.0, 0.0, 1.0),
        traj("b", 1.0, 1.0, 2.0),
        traj("c", 2.0, 0.5, 0.5, terminal=True, dead=True),
    ]
    return OfflineDataset(trajectories=trajs, r_max=1.0, c_max=np.ones(1))


def test_knn_single_record_round_trip():
    ds = _mini_dataset()
    model = fit_knn_model(ds, k=1)
    nxt, term, dead = model.step(np.array([0.0]), np.array([0.0]), spawn(0))
    assert nxt[0] == 1.0 and not term and not dead
    nxt, term, dead = knn_next(np.array([2.0]), np.array([0.5]), model, spawn(0))
    assert nxt[0] == 0.5 and term and dead


def test_knn_equidistant_neighbors_uniform_pick():
    keys = np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]])   # all at distance 1 from origin
    model = KnnTransitionModel(
        keys=keys, next_states=np.array([[0.0], [1.0], [2.0]]),
        terminal=np.zeros(3, bool), dead=np.zeros(3, bool), k=3,
        weighting="uniform", standardization=Standardization.identity(1, 1))
    rng = spawn(11)
    picks = np.array([model.step(np.zeros(1), np.zeros(1), rng)[0][0] for _ in range(10_000)])
    for v in (0.0, 1.0, 2.0):
        assert abs(np.mean(picks == v) - 1.0 / 3.0) < 0.02


def test_knn_inverse_distance_prefers_closer():
    keys = np.array([[0.1, 0.0], [2.0, 0.0]])
    model = KnnTransitionModel(
        keys=keys, next_states=np.array([[0.0], [1.0]]),
        terminal=np.zeros(2, bool), dead=np.zeros(2, bool), k=2,
        weighting="inverse_distance", standardization=Standardization.identity(1, 1))
    rng = spawn(13)
    picks = np.array([model.step(np.zeros(1), np.zeros(1), rng)[0][0] for _ in range(4000)])
    assert np.mean(picks == 0.0) > 0.9


def test_knn_zero_distance_short_circuits_inverse_weighting():
    keys = np.array([[0.0, 0.0], [5.0, 5.0]])
    model = KnnTransitionModel(
        keys=keys, next_states=np.array([[7.0], [9.0]]),
        terminal=np.zeros(2, bool), dead=np.zeros(2, bool), k=2,
        weighting="inverse_distance", standardization=Standardization.identity(1, 1))
    for i in range(20):
        nxt, _, _ = model.step(np.zeros(1), np.zeros(1), spawn(i))
        assert nxt[0] == 7.0


def test_knn_model_rejects_bad_k_and_weighting():
    ds = _mini_dataset()
    with pytest.raises(InvalidInputError):
        fit_knn_model(ds, k=0)
    with pytest.raises(InvalidInputError):
        fit_knn_model(ds, k=99)
    with pytest.raises(InvalidInputError):
        fit_knn_model(ds, weighting="gaussian")


def test_knn_model_falls_back_to_all_when_split_empty():
    ds = _mini_dataset()
    model = fit_knn_model(ds, k=1, split="val")   # no val trajectories
    assert len(model.keys) == 3


def test_knn_step_is_deterministic_given_rng():
    ds = _mini_dataset()
    model = fit_knn_model(ds, k=2)
    a = model.step(np.array([1.0]), np.array([0.5]), spawn(21))
    b = model.step(np.array([1.0]), np.array([0.5]), spawn(21))
    assert a[0][0] == b[0][0] and a[1:] == b[1:]


# ---------------------------------------------------------------------------
# reward and cost rules


def test_inverse_severity_reward():
    rule = make_reward_rule({"name": "inverse_severity"})
    s = np.array([0.95, 1.0, 1.0, 2.0])
    assert rule(s, np.zeros(2)) == pytest.approx(1.0 / 6.0, abs=1e-12)
    assert rule(np.array([0.9, 1.0, 0.0, 0.0]), np.zeros(2)) == 1.0
    assert rule.r_max == 1.0


def test_zero_reward():
    rule = make_reward_rule({"name": "zero"})
    assert rule(np.ones(4), np.ones(2)) == 0.0


def test_vital_floor_costs_pinned():
    rules = make_cost_rules({"name": "vital_floor"})
    s = np.array([0.90, 1.2, 0.0, 0.0])
    c = rules(s, np.zeros(2))
    assert c[0] == pytest.approx(0.02, abs=1e-12)   # 0.92 - 0.90
    assert c[1] == 0.0                              # urine above threshold
    assert rules.n_costs == 2


def test_vital_floor_costs_clip_to_caps():
    rules = make_cost_rules({"name": "vital_floor"})
    c = rules(np.array([0.0, -5.0, 0.0, 0.0]), np.zeros(2))
    np.testing.assert_array_equal(c, [0.25, 1.0])
    c = rules(np.array([5.0, 5.0, 0.0, 0.0]), np.zeros(2))
    np.testing.assert_array_equal(c, [0.0, 0.0])


def test_rules_reject_unknown_names_and_params():
    with pytest.raises(ModelError):
        make_reward_rule({"name": "no_such_rule"})
    with pytest.raises(ModelError):
        make_reward_rule({"name": "zero", "scale": 2.0})
    with pytest.raises(ModelError):
        make_cost_rules({"name": "vital_floor", "bogus": 1})
    with pytest.raises(ModelError):
        make_cost_rules({"name": "nope"})


def test_rule_serialization_dicts():
    rule = make_reward_rule({"name": "inverse_severity", "severity_indices": (1, 2)})
    d = rule.to_dict()
    again = make_reward_rule({"name": d["name"], **d["params"]})
    s = np.array([0.0, 2.0, 1.0])
    assert again(s, np.zeros(1)) == rule(s, np.zeros(1))
