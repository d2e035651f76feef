import csv

import numpy as np
import pytest

from qdskills import envs, nn
from qdskills import evaluation as E
from qdskills import skills as S
from qdskills.repertoire import CvtRepertoire

from oracles import adaptation_oracle_check


class EndpointSkills(E.SkillLibrary):
    """Proportional controllers that drive the point to fixed endpoints."""

    def __init__(self, env, points):
        self.env = env
        self.points = np.asarray(points, dtype=float)
        self.count = len(self.points)

    def _subset(self, sel):
        return EndpointSkills(self.env, self.points[sel])

    def act(self, obs, ids):
        xmin, ymin, xmax, ymax = self.env.arena
        center = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
        half = np.array([(xmax - xmin) / 2, (ymax - ymin) / 2])
        pos = obs * half + center
        return np.clip(self.points[ids] - pos, -self.env.action_bound, self.env.action_bound)


def open_maze():
    return envs.EnvSpec("point-maze", arena=(-1, -1, 1, 1), target=(0.5, 0.5), name="open")


class TestAdaptation:
    def test_oracle_pair_selected_everywhere(self):
        out = adaptation_oracle_check(n_eval=10)
        assert out["rows"] == 20
        assert out["wrong"] == 0
        assert out["fit_err"] < 1e-9
        assert out["nominal_gain"] == [0.0]

    def test_grid_spans_documented_range(self):
        g = envs.perturbation_grid("dynamics-scale", 20)
        assert len(g) == 20 and g.min() == pytest.approx(0.1) and g.max() == pytest.approx(4.5)
        assert 1.0 in g

    def test_median_stability_for_deterministic_skill(self):
        env = envs.get_env("point-omni")
        sk = E.ConstantSkills([[0.05, 0.02]])
        fit = E.evaluate_skills(sk, env, list(range(100)))
        assert fit.shape == (1, 100)
        assert abs(np.median(fit) - fit.mean()) < 1e-9
        assert np.ptp(fit) < 1e-9

    def test_empty_skill_list(self):
        with pytest.raises(ValueError):
            E.adaptation_eval(E.ConstantSkills(np.zeros((0, 2))), envs.get_env("point-omni"),
                              "dynamics-scale", [1.0], 5)

    def test_endpoint_stub_selected_for_its_target(self):
        env = open_maze()
        pts = [(-0.6, 0.4), (0.3, -0.7), (0.8, 0.8)]
        rep = E.target_adaptation_eval(EndpointSkills(env, pts), env, pts, n_eval=5)
        assert [r.best_skill for r in rep.rows] == [0, 1, 2]

    def test_training_target_reproduces_nominal(self):
        env = open_maze()
        sk = EndpointSkills(env, [(0.0, 0.5), (0.5, 0.5)])
        rep = E.target_adaptation_eval(sk, env, [env.target], n_eval=20)
        assert rep.rows[0].median == rep.nominal_fitness
        assert rep.rows[0].fitness_gain == 0.0

    def test_sampled_targets(self):
        env = envs.get_env("point-maze")
        sk = EndpointSkills(env, [(0.0, 0.0)])
        rep = E.target_adaptation_eval(sk, env, 10, n_eval=2, rng=np.random.default_rng(1))
        assert len(rep.rows) == 10
        assert all(env.inside(r.value) for r in rep.rows)

    def test_target_outside_arena_rejected(self):
        env = open_maze()
        with pytest.raises(ValueError):
            E.target_adaptation_eval(EndpointSkills(env, [(0, 0)]), env, [(5.0, 0.0)], n_eval=2)

    def test_non_maze_rejected(self):
        with pytest.raises(ValueError):
            E.target_adaptation_eval(E.ConstantSkills([[0, 0]]), envs.get_env("point-omni"), 2, n_eval=2)

    def test_csv_columns(self, tmp_path):
        rep = adaptation_oracle_check(n_eval=3)["report"]
        rep.to_csv(tmp_path / "a.csv")
        rows = list(csv.reader(open(tmp_path / "a.csv")))
        assert rows[0] == ["value", "best_skill", "median", "q25", "q75", "fitness_gain"]
        assert len(rows) == 21


class TestEnumeration:
    def test_repertoire_count_is_occupied_cells(self):
        env = envs.get_env("point-omni")
        from qdskills.qd import policy_spec
        net = policy_spec(env, (8,))
        rep = CvtRepertoire.build(32, env.descriptor_bounds, seed=0)
        rng = np.random.default_rng(0)
        for _ in range(50):
            rep.insert(rng.normal(size=net.n_params), float(rng.normal()), rng.uniform(-1, 1, 2))
        sk = E.repertoire_skills(rep, net, env.action_bound)
        assert sk.count == int(rep.occupied.sum())

    def test_latent_count_is_num_skills(self):
        ss = S.SkillSet.create(2, 5, 0.1, (8,), np.random.default_rng(0))
        lib = E.LatentSkills(ss)
        assert lib.count == 5
        fit = E.evaluate_skills(lib, envs.get_env("point-omni"), [0, 1])
        assert fit.shape == (5, 2)

    def test_latent_matches_skillset_policy(self):
        env = envs.get_env("point-omni")
        ss = S.SkillSet.create(2, 3, env.action_bound, (8,), np.random.default_rng(1))
        fit = E.evaluate_skills(E.LatentSkills(ss), env, [7])
        for z in range(3):
            assert fit[z, 0] == pytest.approx(envs.rollout_batch(ss.policy(z), env, [7]).fitness[0], abs=1e-12)

    def test_chunking_does_not_change_results(self):
        env = envs.get_env("point-omni")
        net = nn.mlp((2, 8, 2))
        g = np.random.default_rng(2).normal(size=(7, net.n_params))
        sk = E.GenotypeSkills(net, g, env.action_bound)
        a = E.evaluate_skills(sk, env, [1, 2, 3])
        b = E.evaluate_skills(sk, env, [1, 2, 3], workers=3, max_batch=6)
        assert np.array_equal(a, b)


class TestHierarchy:
    def _meta(self, k=2, **kw):
        env = envs.get_env("point-hurdle")
        cfg = E.MetaConfig(hidden=(16,), **kw)
        return env, E.MetaControllerState.create(env.obs_dim, k, cfg, np.random.default_rng(0))

    def test_hold_discipline(self):
        env, meta = self._meta()
        ro = E.hierarchical_rollout(meta, E.run_jump_skills(env), env, list(range(16)), np.random.default_rng(1))
        changes = np.flatnonzero(np.any(np.diff(ro.executed, axis=1) != 0, axis=0)) + 1
        assert changes.size > 0
        assert np.all(changes % 10 == 0)

    def test_single_skill_is_vacuous(self):
        env, meta = self._meta(k=1)
        sk = E.ConstantSkills([[0.05, 0.1]])
        ro = E.hierarchical_rollout(meta, sk, env, [3, 4], np.random.default_rng(2))
        assert np.allclose(ro.fitness, E.evaluate_skills(sk, env, [3, 4])[0], atol=1e-12)

    def test_hold_must_be_positive(self):
        with pytest.raises(ValueError):
            E.MetaConfig(skill_hold=0)

    def test_policy_gradient_matches_finite_differences(self):
        env, meta = self._meta(k=3, entropy_coef=0.05)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(12, meta.policy_spec.n_inputs))
        choices = rng.integers(0, 3, 12)
        old = nn.log_softmax(meta.logits(x))[np.arange(12), choices] + rng.normal(scale=0.1, size=12)
        adv = rng.normal(size=12)
        _, g = E.ppo_policy_loss_grad(meta, x, choices, old, adv)
        p0 = meta.policy.copy()
        worst = 0.0
        for i in rng.choice(p0.size, 40, replace=False):
            h = 1e-6
            meta.policy = p0.copy(); meta.policy[i] += h
            lp = E.ppo_policy_loss_grad(meta, x, choices, old, adv)[0]
            meta.policy = p0.copy(); meta.policy[i] -= h
            lm = E.ppo_policy_loss_grad(meta, x, choices, old, adv)[0]
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(1e-7, abs(fd) + abs(g[i])))
        assert worst < 1e-4

    def test_gae_matches_direct_sum(self):
        r = np.array([[1.0, 2.0, 3.0]])
        v = np.array([[0.5, 0.25, 0.125]])
        adv = E.gae(r, v, 0.9, 1.0)
        # with lambda = 1 the advantage is the discounted return minus the value
        ret = np.array([1 + 0.9 * 2 + 0.81 * 3, 2 + 0.9 * 3, 3])
        assert np.allclose(adv[0], ret - v[0])

    def test_training_improves_over_best_single_skill(self):
        env = envs.get_env("point-hurdle")
        res = E.hierarchical_train(E.run_jump_skills(env), env, 200_000, np.random.default_rng(0))
        assert res.curve[0][0] == 32 * env.horizon
        assert res.meta_fitness > res.best_single


class TestSweep:
    def test_full_cross_product(self):
        calls = []

        def run(c, seed):
            calls.append((tuple(sorted(c.items())), seed))
            return c["a"] * 10 + c["b"] + seed

        out = E.hyperparam_sweep(run, {"a": [1, 2, 3], "b": [0.1, 0.2, 0.3]}, 5)
        assert len(calls) == 45 and len(set(calls)) == 45
        assert len(out["cells"]) == 9
        assert max(max(v) for v in out["raw"].values()) / out["norm"] == 1.0

    def test_max_maps_to_one(self):
        out = E.sweep_summary({"x": [2.0, 4.0], "y": [1.0]})
        assert out["norm"] == 4.0
        assert out["cells"]["x"] == pytest.approx(0.75)

    def test_degenerate_grid(self):
        out = E.sweep_summary({"only": [3.0, 1.0, 2.0, 5.0, 4.0]})
        med = out["cells"]["only"]
        assert all(out[k] == med for k in ("q125", "q250", "q500", "q750", "q875"))
        assert out["iqr"] == 0.0
