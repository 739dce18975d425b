import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from choice_policy.agents import ScriptedAgent, ZeroAgent
from choice_policy.envs import (
    ENVS,
    EnvState,
    ForkWorld,
    build_chunks,
    generate_dataset,
    load_dataset,
    make_env,
    rollout,
    save_dataset,
    scripted_demonstrator,
    segment_hits_circle,
)
from choice_policy.numerics import make_rng
from oracles import sampled_segment_hits_circle

coord = st.floats(-2, 2, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(coord, coord, coord, coord, coord, coord, st.floats(0.05, 1.0))
def test_segment_circle_matches_sampling_oracle(x0, y0, x1, y1, cx, cy, r):
    p0, p1, c = (x0, y0), (x1, y1), (cx, cy)
    d = np.hypot(x1 - x0, y1 - y0)
    # skip grazing cases the sampling oracle cannot resolve
    s = np.clip(np.dot(np.subtract(c, p0), np.subtract(p1, p0)) / max(d * d, 1e-300), 0, 1)
    closest = np.add(p0, s * np.subtract(p1, p0))
    if abs(np.hypot(*(closest - np.array(c))) - r) < 1e-3:
        return
    assert segment_hits_circle(p0, p1, c, r) == sampled_segment_hits_circle(p0, p1, c, r)


@pytest.mark.parametrize("task", sorted(ENVS))
def test_zero_action_only_advances_clock(task):
    env = make_env(task)
    s = env.reset(make_rng(0))
    n = env.step(s, env.hold_action)
    assert n.t == s.t + 1
    assert n.agent == s.agent and n.obj == s.obj and n.base == s.base and n.grasped == s.grasped


def test_fork_step_into_goal_and_through_obstacle():
    env = ForkWorld()
    start = EnvState(agent=(0.93, 0.0))
    assert not env.is_success(start)
    s = env.step(start, np.array([0.07, 0.0]))
    assert env.is_success(s) and "arrive" in s.stages
    s = EnvState(agent=(0.3, 0.0))
    for _ in range(5):
        s = env.step(s, np.array([0.075, 0.0]))
    assert s.collided and not env.is_success(s)


def test_fork_modes_pass_on_opposite_sides():
    env = ForkWorld()
    ys = []
    for mode in (0, 1):
        ep = scripted_demonstrator(env, mode, make_rng(1, mode))
        ys.append(ep.observations[np.abs(ep.observations[:, 0] - 0.5).argmin(), 1])
    assert ys[0] > env.obstacle_radius and ys[1] < -env.obstacle_radius


def test_average_of_opposite_modes_collides():
    env = ForkWorld()
    trajs = []
    for mode in (0, 1):
        ep = scripted_demonstrator(env, mode, make_rng(2, mode))
        trajs.append(np.vstack([ep.observations, env.goal]))
    n = max(len(t) for t in trajs)
    padded = [np.vstack([t, np.repeat(t[-1:], n - len(t), axis=0)]) for t in trajs]
    mean = (padded[0] + padded[1]) / 2
    assert any(segment_hits_circle(a, b, env.obstacle, env.obstacle_radius) for a, b in zip(mean[:-1], mean[1:]))


def test_mode_counts_within_three_sigma():
    eps = generate_dataset(ForkWorld(), 100, 7)
    n0 = sum(ep.mode == 0 for ep in eps)
    assert abs(n0 - 50) <= 3 * np.sqrt(100 * 0.25)
    assert {ep.mode for ep in eps} == {0, 1}


@pytest.mark.parametrize("task", sorted(ENVS))
def test_demonstrations_succeed_with_monotone_phases(task):
    env = make_env(task)
    for ep in generate_dataset(env, 12, 3):
        order = [env.phases.index(p) for p in ep.phases]
        assert order == sorted(order)
        assert len(ep.observations) == len(ep.actions) == len(ep.phases)


def test_wipe_demos_stand_about_ten_percent_while_walking():
    env = make_env("wipe")
    eps = generate_dataset(env, 60, 5)
    walk = np.array([a[6] for ep in eps for a, p in zip(ep.actions, ep.phases) if p == "walk"])
    frac = float((walk == 0).mean())
    assert abs(frac - 0.1) <= 3 * np.sqrt(0.09 / len(walk))


def test_dataset_round_trip_and_determinism(tmp_path):
    env = make_env("phased")
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(a, env, generate_dataset(env, 5, 4), 4)
    save_dataset(b, env, generate_dataset(env, 5, 4), 4)
    assert a.read_bytes() == b.read_bytes()
    header, eps = load_dataset(a)
    assert header["episodes"] == 5 and header["seed"] == 4
    orig = generate_dataset(env, 5, 4)
    for x, y in zip(orig, eps):
        assert np.array_equal(x.observations, y.observations) and np.array_equal(x.actions, y.actions)
        assert x.phases == y.phases and x.mode == y.mode


def test_dataset_refuses_tampered_header(tmp_path):
    env = make_env("fork")
    path = tmp_path / "d.jsonl"
    save_dataset(path, env, generate_dataset(env, 2, 0), 0)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["seed"] = 1
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(ValueError, match="hash"):
        load_dataset(path)


def test_build_chunks_pads_with_hold_action():
    env = make_env("fork")
    ep = generate_dataset(env, 1, 0)[0]
    obs, chunks = build_chunks([ep], 4, env.hold_action)
    assert obs.shape == (len(ep), 2) and chunks.shape == (len(ep), 4, 2)
    assert np.array_equal(chunks[0], ep.actions[:4])
    assert np.array_equal(chunks[-1][1:], np.zeros((3, 2)))


@pytest.mark.parametrize("task", sorted(ENVS))
def test_scripted_rollout_succeeds_and_zero_policy_times_out(task):
    env = make_env(task)
    for i in range(5):
        r = rollout(env, ScriptedAgent(), make_rng(0, "eval", i))
        assert r.success and r.reason == "success" and all(r.stages.values())
    z = rollout(env, ZeroAgent(), make_rng(0))
    assert not z.success and z.reason == "timeout" and z.steps == env.spec.horizon_cap


def test_unknown_task_and_bad_mode_rejected():
    with pytest.raises(ValueError):
        make_env("maze")
    with pytest.raises(ValueError):
        scripted_demonstrator(ForkWorld(), 2, make_rng(0))
    with pytest.raises(ValueError):
        generate_dataset(ForkWorld(), 0, 0)
