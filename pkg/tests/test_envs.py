import dataclasses

import numpy as np
import pytest

from qdskills import envs


def orient(a, b, c):
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return 0 if v == 0 else (1 if v > 0 else -1)


def on_segment(a, b, c):
    return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])


def segments_intersect(p1, p2, q1, q2):
    """Textbook orientation test, closed segments."""
    o1, o2, o3, o4 = orient(p1, p2, q1), orient(p1, p2, q2), orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_segment(p1, p2, q1)) or (o2 == 0 and on_segment(p1, p2, q2))
            or (o3 == 0 and on_segment(q1, q2, p1)) or (o4 == 0 and on_segment(q1, q2, p2)))


def open_maze(**kw):
    return envs.EnvSpec("point-maze", target=(0.5, 0.0), **kw)


def test_reset_is_origin_within_jitter_and_deterministic():
    spec = envs.get_env("point-maze")
    s0 = envs.reset(spec, 0)
    assert np.all(np.abs(s0) <= 1e-3)
    assert np.array_equal(s0, envs.reset(spec, 0))
    states = np.array([envs.reset(spec, s) for s in range(200)])
    assert np.all(np.abs(states) <= 1e-3)
    assert len({tuple(s) for s in states}) == 200


def test_maze_step_arithmetic():
    nxt, r, done = envs.step(open_maze(), [0.0, 0.0], [0.1, 0.0])
    assert np.allclose(nxt, [0.1, 0.0]) and r == pytest.approx(-0.4) and not done


def test_action_clipping():
    nxt, _, _ = envs.step(open_maze(action_bound=0.1), [0.0, 0.0], [10.0, 0.0])
    assert nxt[0] == pytest.approx(0.1) and nxt[1] == 0.0


def test_done_only_at_horizon():
    spec = open_maze(horizon=3)
    assert [envs.step(spec, [0, 0], [0, 0], t)[2] for t in range(3)] == [False, False, True]


def test_non_finite_action_rejected():
    with pytest.raises(ValueError):
        envs.step(open_maze(), [0, 0], [np.nan, 0.0])


def test_vertical_wall_blocks_x_only():
    wall = (0.5, -0.5, 0.5, 0.5)
    spec = envs.EnvSpec("point-omni", walls=(wall,))
    state = np.array([0.45, 0.0])
    nxt, _, _ = envs.step(spec, state, [0.1, 0.05])
    assert nxt[0] == pytest.approx(0.45) and nxt[1] == pytest.approx(0.05)
    # oracle agrees the unblocked move would have crossed and the taken one does not
    assert segments_intersect(state, state + [0.1, 0.05], wall[:2], wall[2:])
    assert not segments_intersect(state, nxt, wall[:2], wall[2:])


def test_horizontal_wall_blocks_y_only():
    spec = envs.EnvSpec("point-omni", walls=((-1.0, 0.3, 1.0, 0.3),))
    nxt, _, _ = envs.step(spec, [0.0, 0.25], [0.07, 0.1])
    assert nxt[0] == pytest.approx(0.07) and nxt[1] == pytest.approx(0.25)


@pytest.mark.parametrize("name", ["point-maze", "point-trap"])
def test_containment_random_rollouts(name):
    spec = envs.get_env(name)
    rng = np.random.default_rng(0)
    walls = spec.wall_array
    n = 10_000
    # random-walk policies with per-episode action scales; short episodes keep runtime bounded
    spec = dataclasses.replace(spec, horizon=30)
    scales = rng.uniform(0.2, 3.0, size=(n, 1))
    drift = rng.normal(size=(n, 2))
    step_rng = np.random.default_rng(1)
    ro = envs.rollout_batch(lambda o: spec.action_bound * scales * (drift + step_rng.normal(size=o.shape)),
                            spec, list(range(n)))
    lo, hi = spec.descriptor_bounds
    assert np.all(ro.states >= lo) and np.all(ro.states <= hi)
    checked = 0
    for ep in range(0, n, 7):  # scalar oracle on a deterministic subsample of episodes
        path = ro.states[ep]
        for t in range(spec.horizon):
            p, q = path[t], path[t + 1]
            if np.array_equal(p, q):
                continue
            for w in walls:
                assert not segments_intersect(p, q, w[:2], w[2:]), (ep, t, p, q, w)
            checked += 1
    assert checked > 1000
    # vectorized check on every step of every episode
    p = ro.states[:, :-1].reshape(-1, 2)
    q = ro.states[:, 1:].reshape(-1, 2)
    assert not envs._crosses_walls(p, q, walls).any()


def test_rollout_zero_action_omni():
    spec = envs.get_env("point-omni")
    traj = envs.rollout(lambda o: np.zeros(2), spec, 3)
    assert traj.fitness == 0.0
    assert np.array_equal(traj.descriptor, envs.reset(spec, 3))


def test_rollout_length_equals_horizon():
    spec = dataclasses.replace(envs.get_env("point-trap"), horizon=37)
    traj = envs.rollout(lambda o: np.array([0.05, 0.02]), spec, 0)
    assert len(traj.transitions) == 37
    assert traj.transitions[-1].done and not traj.transitions[0].done
    assert traj.fitness == pytest.approx(sum(t.reward for t in traj.transitions))


def test_gait_descriptor_fraction():
    spec = envs.get_env("point-gait")
    traj = envs.rollout(lambda o: np.array([0.05, -0.05]), spec, 0)
    assert traj.descriptor[0] == 1.0 and traj.descriptor[1] == 0.0
    t = np.arange(spec.horizon)
    ro = envs.rollout_batch(lambda o: np.tile([0.05, 0.05], (len(o), 1)) * np.array([1, -1]), spec, [0])
    assert ro.descriptors[0].tolist() == [1.0, 0.0]
    assert t.size == ro.actions.shape[1]


def test_descriptors_inside_bounds():
    rng = np.random.default_rng(4)
    for name in ["point-maze", "point-trap", "point-omni", "point-gait", "point-hurdle"]:
        spec = envs.get_env(name)
        ro = envs.rollout_batch(lambda o: rng.normal(size=o.shape[:-1] + (2,)), spec, range(50))
        lo, hi = spec.descriptor_bounds
        assert np.all(ro.descriptors >= lo) and np.all(ro.descriptors <= hi)


def test_hurdle_blocks_without_jump():
    spec = envs.get_env("point-hurdle")
    run = envs.rollout_batch(lambda o: np.tile([0.1, 0.0], (len(o), 1)), spec, [0])
    jump = envs.rollout_batch(lambda o: np.tile([0.05, 0.1], (len(o), 1)), spec, [0])
    assert run.states[0, -1, 0] < spec.hurdle_spacing
    assert jump.states[0, -1, 0] > 4 * spec.hurdle_spacing
    assert np.all(jump.states[..., 1] == jump.states[0, 0, 1])


class TestPerturbation:
    def test_nominal_dynamics_scale_is_identity(self):
        spec = envs.get_env("point-gait")
        assert envs.apply_perturbation(spec, "dynamics-scale", 1.0) == spec
        assert envs.apply_perturbation(spec, "drift-scale", 1.0) == spec

    def test_nominal_gives_bitwise_identical_trajectories(self):
        spec = envs.get_env("point-maze")
        pert = envs.apply_perturbation(spec, "dynamics-scale", 1.0)
        pol = lambda o: 0.1 * np.tanh(3 * o[:, ::-1] + 0.2)
        a = envs.rollout_batch(pol, spec, range(5))
        b = envs.rollout_batch(pol, pert, range(5))
        assert a.states.tobytes() == b.states.tobytes() and a.rewards.tobytes() == b.rewards.tobytes()

    def test_zero_scale_channel_never_moves(self):
        spec = envs.apply_perturbation(envs.get_env("point-omni"), "dynamics-scale", 0.0, channels={1})
        ro = envs.rollout_batch(lambda o: np.tile([0.03, 0.1], (len(o), 1)), dataclasses.replace(spec, jitter=0.0), [0])
        assert np.all(ro.states[0, :, 1] == 0.0) and ro.states[0, -1, 0] > 0

    def test_move_target_changes_reward_not_physics(self):
        spec = envs.get_env("point-maze")
        # Table target (11.74, 35.16) in a [-3, 38]^2 maze, mapped onto this arena
        u = (np.array([11.74, 35.16]) + 3.0) / 41.0
        xmin, ymin, xmax, ymax = spec.arena
        new = (xmin + u[0] * (xmax - xmin), ymin + u[1] * (ymax - ymin))
        moved = envs.apply_perturbation(spec, "move-target", new)
        pol = lambda o: 0.1 * np.tanh(o + 0.3)
        a, b = envs.rollout_batch(pol, spec, [1]), envs.rollout_batch(pol, moved, [1])
        assert np.array_equal(a.states, b.states)
        expected = -np.linalg.norm(b.states[0, 1:] - np.array(new), axis=1)
        assert np.allclose(b.rewards[0], expected)
        assert not np.allclose(a.rewards, b.rewards)

    @pytest.mark.parametrize("kind,value", [("dynamics-scale", -0.1), ("dynamics-scale", 4.6),
                                            ("drift-scale", 0.1), ("drift-scale", 51),
                                            ("move-target", (5.0, 5.0))])
    def test_out_of_range_rejected(self, kind, value):
        with pytest.raises(ValueError):
            envs.apply_perturbation(envs.get_env("point-maze"), kind, value)

    def test_grid_contains_nominal(self):
        g = envs.perturbation_grid("dynamics-scale")
        assert len(g) == 20 and 1.0 in g and g.min() == pytest.approx(0.1) and g.max() == pytest.approx(4.5)


def test_population_evaluation_independent_of_workers():
    from qdskills import nn
    spec = envs.get_env("point-maze")
    net = nn.mlp((2, 16, 16, 2))
    rng = np.random.default_rng(0)
    pop = np.stack([nn.init_params(net, rng, 0.1) for _ in range(23)])
    a = envs.evaluate_population(spec, net, pop, range(23), workers=1)
    b = envs.evaluate_population(spec, net, pop, range(23), workers=4)
    assert a.fitness.tobytes() == b.fitness.tobytes()
    assert a.descriptors.tobytes() == b.descriptors.tobytes()


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        envs.EnvSpec("point-maze", target=(5.0, 0.0))
    with pytest.raises(ValueError):
        envs.EnvSpec("point-omni", walls=((0, 0, 1, 1),))
    with pytest.raises(ValueError):
        envs.EnvSpec("point-omni", horizon=0)
    with pytest.raises(ValueError):
        envs.EnvSpec("point-omni", action_bound=0.0)
