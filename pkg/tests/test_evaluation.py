import dataclasses
import re

import numpy as np
import pytest

from reachlab.config import EvalConfig, load_config
from reachlab.dynamics import ee_position
from reachlab.evaluation import (SymmetryOffset, Trial, _SettleTracker, evaluate_controller, evaluate_policy,
                                 format_tables, obstacle_scenes, solve_ik, summarize)
from reachlab.policy import GaussianPolicy, RunningNorm
from reachlab.regions import AnnularSector


def test_synthetic_trials():
    trials = [Trial(True, 0.004, 1.0), Trial(True, 0.02, 3.0), Trial(False, 0.5)]
    t = summarize(trials, 0.01)
    assert t.success_rate == pytest.approx(1 / 3)
    assert t.average_error_m == pytest.approx(0.012)
    assert t.average_error_all_m == pytest.approx(0.524 / 3)
    assert t.completion_time_mean_s == pytest.approx(2.0) and t.completion_time_std_s == pytest.approx(1.0)
    assert t.settled_rate == pytest.approx(2 / 3)
    assert t.collision_free_rate is None


def test_zero_trials_is_an_error():
    with pytest.raises(ValueError):
        summarize([], 0.01)
    cfg = load_config("planar2-reach")
    pol = GaussianPolicy(7, 2, (4,))
    with pytest.raises(ValueError):
        evaluate_policy(pol, RunningNorm.create(7), cfg, dataclasses.replace(cfg.eval, trials=0))


def test_obstacle_metrics():
    trials = [Trial(True, 0.001, 1.0, 0, []), Trial(True, 0.001, 1.0, 2, [0.5, 1.5]), Trial(False, 0.3, None, 1, [3.0])]
    t = summarize(trials, 0.01, obstacles=True)
    assert t.collision_free_rate == pytest.approx(1 / 3)
    assert t.grazing_ratio_mean == pytest.approx(5 / 3)
    assert t.grazing_ratio_std == pytest.approx(np.std([0.5, 1.5, 3.0]))


def test_text_and_json_agree():
    tables = [summarize([Trial(True, 0.004, 1.25), Trial(False, 0.2)], 0.01, "policy", obstacles=True),
              summarize([Trial(True, 0.0123, 2.5, 1, [0.7])], 0.01, "other", obstacles=True)]
    text = format_tables(tables)
    rows = {line[:32].strip(): line[32:].split("  ") for line in text.splitlines()[1:]}

    def cells(prefix):
        key = next(k for k in rows if k.startswith(prefix))
        return [c.strip() for c in rows[key] if c.strip()]

    for j, t in enumerate(tables):
        d = t.as_dict()
        assert float(cells("success@")[j].rstrip("%")) == pytest.approx(100 * d["success_rate"], abs=0.05)
        assert float(cells("average error (cm)")[j]) == pytest.approx(100 * d["average_error_m"], abs=5e-4)
        assert int(cells("no. trials")[j]) == d["trials"]
        assert float(cells("collision-free")[j].rstrip("%")) == pytest.approx(100 * d["collision_free_rate"], abs=0.05)
        mean = re.match(r"([\d.]+) \+-", cells("completion time")[j]).group(1)
        assert float(mean) == pytest.approx(d["completion_time_mean_s"], abs=5e-3)
    assert "success@1.0 cm" in text


def test_settle_tracker_needs_motion_then_quiet_window():
    ev = EvalConfig(settle_window_s=0.05, horizon_s=1.0)
    tr = _SettleTracker(2, ev, 0.01)
    tr.start(0, already_there=False)
    tr.start(1, already_there=True)
    still = np.zeros((2, 2))
    moving = np.full((2, 2), 1.0)
    for _ in range(10):
        settled, _ = tr.update(still)
    assert settled.tolist() == [False, True]
    tr.update(moving)
    for i in range(5):
        settled, timed_out = tr.update(still)
    assert settled[0] and not timed_out[0]
    assert tr.completion_time(0) == pytest.approx((16 - 5) * 0.01)


def test_settle_tracker_times_out():
    tr = _SettleTracker(1, EvalConfig(horizon_s=0.1), 0.01)
    tr.start(0, False)
    for _ in range(10):
        settled, timed_out = tr.update(np.ones((1, 2)))
    assert timed_out[0] and not settled[0]


def test_solve_ik(planar2):
    target = np.array([1.2, 0.4, 0.0])
    q = solve_ik(planar2, target, planar2.home_pose)
    np.testing.assert_allclose(ee_position(planar2, q), target, atol=1e-9)


def test_obstacle_scenes_are_seeded_and_valid():
    cfg = load_config("planar2-obstacles")
    ev = dataclasses.replace(cfg.eval, trials=20)
    a, b = obstacle_scenes(cfg, ev, 2), obstacle_scenes(cfg, ev, 2)
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa.goal, sb.goal)
        np.testing.assert_array_equal(sa.obstacles.sphere_centers, sb.obstacles.sphere_centers)
        assert len(sa.obstacles) == 2
        start = ee_position(cfg.model, sa.q_start)
        for c in sa.obstacles.sphere_centers:
            assert np.linalg.norm(c - start) - 0.08 >= 0.05 and np.linalg.norm(c - sa.goal) - 0.08 >= 0.05
    other = obstacle_scenes(cfg, dataclasses.replace(ev, seed=1), 2)
    assert not np.array_equal(other[0].goal, a[0].goal)


def test_still_policy_never_counts_as_settled():
    cfg = load_config("planar2-reach")
    pol = GaussianPolicy(7, 2, (4,))  # all-zero weights: commands zero velocity
    ev = dataclasses.replace(cfg.eval, trials=4, lanes=2, horizon_s=1.0)
    trials = evaluate_policy(pol, RunningNorm.create(7), cfg, ev)
    assert len(trials) == 4
    assert not any(t.settled for t in trials)
    assert summarize(trials, 0.01).success_rate == 0.0


def test_controller_eval_is_deterministic():
    cfg = load_config("planar2-reach")
    ev = dataclasses.replace(cfg.eval, trials=6, lanes=3, horizon_s=3.0)
    a = evaluate_controller(cfg.model, "osc-a", cfg, ev)
    b = evaluate_controller(cfg.model, "osc-a", cfg, ev)
    assert [t.final_error_m for t in a] == [t.final_error_m for t in b]
    with pytest.raises(ValueError):
        evaluate_controller(cfg.model, "osc-x", cfg, ev)


def test_symmetry_offset_maps_outside_goals_onto_sector(planar2):
    from reachlab.env import VecReachEnv

    region = AnnularSector(inner_radius=0.4, outer_radius=1.6, sweep_angle=np.pi / 2)
    wrap = SymmetryOffset(region, 2)
    env = VecReachEnv(planar2, 1, region)
    env.reset()

    def observe(q, goal):
        env.q[0], env.goal[0] = q, goal
        env._refresh()
        return env.observe()

    def rot(a):
        return np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])

    q, goal = np.array([0.1, 0.7]), np.array([1.0, 0.3, 0.0])
    inside = observe(q, goal)
    np.testing.assert_array_equal(wrap.observe(inside, env), inside)
    theta = 2.0
    outside = wrap.observe(observe(q + [theta, 0.0], rot(theta) @ goal), env)
    phi = np.arctan2(*(rot(theta) @ goal)[[1, 0]])
    shift = phi - np.pi / 4
    np.testing.assert_allclose(outside, observe(q + [theta - shift, 0.0], rot(theta - shift) @ goal), atol=1e-12)
