import csv
import json

import numpy as np
import pytest

from qdskills import cli, harness
from qdskills import envs
from qdskills.config import ConfigError, load_config

TINY_QD = {"run.env": "point-omni", "run.iterations": "4", "run.checkpoint_every": "2", "env.horizon": "20",
           "variation.batch_size": "16", "qd.num_cells": "32", "qd.hidden": "8"}
TINY_PG = {"td3.critic_hidden": "8", "td3.batch_size": "16", "td3.critic_steps": "5", "td3.pg_steps": "3"}
TINY_AURORA = {"aurora.ae_steps": "5", "aurora.ae_batch": "16", "aurora.budget": "32", "aurora.retrain_first": "2"}
TINY_SKILL = {"run.env": "point-omni", "run.iterations": "4", "run.checkpoint_every": "2", "env.horizon": "20",
              "sac.env_batch": "4", "sac.hidden": "8", "sac.critic_hidden": "8", "sac.batch_size": "16",
              "skills.model_hidden": "8", "skills.num_cells": "16", "skills.record_every": "80"}


def cfg_for(method, out, **extra):
    base = TINY_QD if method in ("map-elites", "pga-map-elites", "aurora", "pga-aurora") else TINY_SKILL
    ov = dict(base, **{"run.method": method, "run.out": str(out)})
    if method.startswith("pga"):
        ov.update(TINY_PG)
    if method.endswith("aurora"):
        ov.update(TINY_AURORA)
    ov.update(extra)
    return load_config(overrides=ov, environ={})


def rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


METHODS = ["map-elites", "pga-map-elites", "aurora", "pga-aurora", "dads-reward", "smerl-diayn"]


class TestRun:
    def test_metrics_file_layout(self, tmp_path):
        out = harness.run(cfg_for("map-elites", tmp_path / "r"))
        r = rows(out / "metrics.csv")
        assert r[0] == ["iteration", "env_steps", "max_fitness", "coverage", "qd_score"]
        assert [int(x[0]) for x in r[1:]] == [0, 1, 2, 3, 4]
        assert rows(out / "timing.csv")[0] == ["iteration", "wall_seconds"]
        for name in ("config.ini", "checkpoint.npz", "repertoire.npz"):
            assert (out / name).exists()

    def test_budget_zero_gives_initial_metrics_only(self, tmp_path):
        out = harness.run(cfg_for("map-elites", tmp_path / "r", **{"run.iterations": "0"}))
        r = rows(out / "metrics.csv")
        assert len(r) == 2 and r[1][0] == "0"
        assert int(r[1][3]) > 0   # the random initial population is already inserted

    def test_env_step_budget(self, tmp_path):
        out = harness.run(cfg_for("map-elites", tmp_path / "r", **{"run.iterations": "0", "run.env_steps": "700"}))
        r = rows(out / "metrics.csv")
        assert int(r[-1][1]) >= 700 and int(r[-2][1]) < 700

    def test_refuses_to_overwrite(self, tmp_path):
        cfg = cfg_for("map-elites", tmp_path / "r", **{"run.iterations": "0"})
        harness.run(cfg)
        with pytest.raises(FileExistsError):
            harness.run(cfg)

    @pytest.mark.parametrize("method", METHODS)
    def test_repeat_is_byte_identical(self, tmp_path, method):
        a = harness.run(cfg_for(method, tmp_path / "a"))
        b = harness.run(cfg_for(method, tmp_path / "b"))
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()

    def test_workers_do_not_change_results(self, tmp_path):
        a = harness.run(cfg_for("map-elites", tmp_path / "a"))
        b = harness.run(cfg_for("map-elites", tmp_path / "b", **{"run.workers": "3"}))
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()

    @pytest.mark.parametrize("method", METHODS)
    def test_resume_after_crash_matches_uninterrupted(self, tmp_path, monkeypatch, method):
        full = harness.run(cfg_for(method, tmp_path / "full"))
        cfg = cfg_for(method, tmp_path / "crash")
        real_append = harness._append

        def crash_after_row_3(path, row):
            real_append(path, row)
            if path.name == "metrics.csv" and row[0] == "3":
                raise KeyboardInterrupt

        monkeypatch.setattr(harness, "_append", crash_after_row_3)
        with pytest.raises(KeyboardInterrupt):
            harness.run(cfg)
        monkeypatch.setattr(harness, "_append", real_append)
        assert [r[0] for r in rows(tmp_path / "crash" / "metrics.csv")][-1] == "3"
        harness.run(cfg, resume=True)
        assert (tmp_path / "crash" / "metrics.csv").read_bytes() == (full / "metrics.csv").read_bytes()

    def test_extending_a_finished_run(self, tmp_path):
        full = harness.run(cfg_for("map-elites", tmp_path / "full"))
        harness.run(cfg_for("map-elites", tmp_path / "ext", **{"run.iterations": "2"}))
        harness.run(cfg_for("map-elites", tmp_path / "ext"), resume=True)
        assert (tmp_path / "ext" / "metrics.csv").read_bytes() == (full / "metrics.csv").read_bytes()


class TestExport:
    def test_repertoire_csv_recomputes_qd_score(self, tmp_path):
        out = harness.run(cfg_for("map-elites", tmp_path / "r"))
        p = harness.export(out, "repertoire-csv", tmp_path / "rep.csv")
        r = rows(p)
        assert r[0] == ["cell_index", "centroid_0", "centroid_1", "fitness", "descriptor_0", "descriptor_1"]
        offset = envs.get_env("point-omni").qd_offset
        recomputed = sum(float(x[3]) + offset for x in r[1:])
        stored = float(rows(out / "metrics.csv")[-1][4])
        assert abs(recomputed - stored) < 1e-9
        assert len(r) - 1 == int(rows(out / "metrics.csv")[-1][3])

    def test_bit_stable(self, tmp_path):
        out = harness.run(cfg_for("map-elites", tmp_path / "r"))
        for fmt in ("repertoire-csv", "metrics-csv", "summary-json"):
            a = harness.export(out, fmt, tmp_path / f"a.{fmt}").read_bytes()
            b = harness.export(out, fmt, tmp_path / f"b.{fmt}").read_bytes()
            assert a == b

    def test_empty_repertoire_is_header_only(self, tmp_path):
        out = harness.run(cfg_for("dads-reward", tmp_path / "r", **{"run.iterations": "0"}))
        r = rows(harness.export(out, "repertoire-csv", tmp_path / "rep.csv"))
        assert len(r) == 1

    def test_summary_median_over_seeds(self, tmp_path):
        dirs = [harness.run(cfg_for("map-elites", tmp_path / f"s{s}", **{"run.seed": str(s)})) for s in range(3)]
        p = harness.export(dirs, "summary-json", tmp_path / "sum.json")
        data = json.loads(p.read_text())
        assert data["n_runs"] == 3
        scores = [r["qd_score"] for r in data["runs"]]
        assert data["median"]["qd_score"] == float(np.median(scores))
        assert sorted(r["seed"] for r in data["runs"]) == [0, 1, 2]

    def test_missing_artifact(self, tmp_path):
        with pytest.raises(harness.MissingArtifact):
            harness.export(tmp_path, "metrics-csv", tmp_path / "m.csv")
        with pytest.raises(harness.MissingArtifact):
            harness.export(tmp_path, "adaptation-csv", tmp_path / "a.csv")

    def test_adaptation_csv_round_trip(self, tmp_path):
        out = harness.run(cfg_for("map-elites", tmp_path / "r"))
        cfg = load_config(overrides={"adapt.n_eval": "3", "adapt.grid_size": "4"}, environ={})
        rep = harness.adapt(cfg, out, out)
        p = harness.export(out, "adaptation-csv", tmp_path / "a.csv")
        assert p.read_bytes() == (out / "adaptation.csv").read_bytes()
        assert len(rows(p)) == 1 + 4 and len(rep.rows) == 4

    def test_adapt_latent_skills_and_targets(self, tmp_path):
        out = harness.run(cfg_for("diayn-reward", tmp_path / "r", **{"run.env": "point-maze"}))
        cfg = load_config(overrides={"adapt.n_eval": "2", "adapt.kind": "move-target", "adapt.targets": "3"},
                          environ={})
        rep = harness.adapt(cfg, out, tmp_path / "ad")
        assert rep.num_skills == 5 and len(rep.rows) == 3
        assert rows(tmp_path / "ad" / "adaptation.csv")[0][:2] == ["target_x", "target_y"]


class TestProtocols:
    def test_smerl_target_fragment(self, tmp_path):
        cfg = cfg_for("smerl-diayn", tmp_path / "x", **{"run.iterations": "2"})
        t1 = harness.smerl_target(cfg, tmp_path / "a", seeds=2)
        t2 = harness.smerl_target(cfg, tmp_path / "b", seeds=2)
        assert t1 == t2
        frag = load_config(tmp_path / "a" / "smerl_target.ini", environ={})
        assert frag.sections["shaping"]["target_return"] == t1
        assert frag.sections["shaping"]["epsilon"] == pytest.approx(0.1 * abs(t1))

    def test_smerl_target_default_seed_count(self):
        import inspect
        assert inspect.signature(harness.smerl_target).parameters["seeds"].default == 5

    def test_sweep_grid_and_joint_norm(self, tmp_path):
        cfg = cfg_for("map-elites", tmp_path / "x", **{"run.iterations": "1", "sweep.seeds_per_cell": "2",
                                                       "sweep.values_a": "0.001 0.1", "sweep.values_b": "0.01"})
        res = harness.sweep([cfg], tmp_path / "sw")
        s = res["map-elites@point-omni"]
        assert len(s["raw"]) == 2 and all(len(v) == 2 for v in s["raw"].values())
        assert max(max(v) for v in s["raw"].values()) == s["norm"]
        assert (tmp_path / "sw" / "sweep.json").exists()

    def test_default_sweep_grids(self):
        qd = load_config(environ={})
        sk = load_config(overrides={"run.method": "dads-reward"}, environ={})
        assert harness.sweep_grid(qd) == {"variation.sigma_iso": (0.001, 0.01, 0.1),
                                          "variation.sigma_line": (0.01, 0.1, 1.0)}
        assert harness.sweep_grid(sk) == {"shaping.beta": (0.1, 1.0, 10.0), "sac.alpha": (0.1, 0.5, 1.0)}

    def test_hier_requires_hurdle(self, tmp_path):
        with pytest.raises(ValueError):
            harness.hier(load_config(environ={}), tmp_path)


class TestCli:
    def test_run_export_hier(self, tmp_path, capsys):
        out = tmp_path / "r"
        args = ["run", "--out", str(out), "--seed", "3", "--workers", "2"]
        for k, v in TINY_QD.items():
            args += ["--set", f"{k}={v}"]
        assert cli.main(args) == 0
        assert load_config(out / "config.ini", environ={}).seed == 3
        assert cli.main(["export", str(out), "--format", "metrics-csv", "--out", str(tmp_path / "m.csv")]) == 0
        assert cli.main(["hier", "--out", str(tmp_path / "h"), "--set", "run.env=point-hurdle",
                         "--set", "hier.budget_env_steps=16000", "--set", "meta.hidden=8"]) == 0
        assert json.loads((tmp_path / "h" / "hier.json").read_text())["meta_fitness"] is not None
        assert len(rows(tmp_path / "h" / "curve.csv")) == 3

    def test_resume_flag(self, tmp_path):
        out = tmp_path / "r"
        base = ["run", "--out", str(out)]
        for k, v in TINY_QD.items():
            base += ["--set", f"{k}={v}"]
        assert cli.main(base + ["--set", "run.iterations=2"]) == 0
        assert cli.main(base) == 1      # refuses to clobber
        assert cli.main(base + ["--resume"]) == 0
        assert rows(out / "metrics.csv")[-1][0] == "4"

    def test_invalid_config_lists_keys(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[run]\nmethod = nope\n[qd]\nhiden = 3\n")
        assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "run.method" in err and "qd.hiden" in err

    def test_env_override_prefix(self, tmp_path, monkeypatch):
        monkeypatch.setenv("QDSKILLS_RUN__ITERATIONS", "1")
        args = ["run", "--out", str(tmp_path / "r")]
        for k, v in TINY_QD.items():
            if k != "run.iterations":
                args += ["--set", f"{k}={v}"]
        assert cli.main(args) == 0
        assert rows(tmp_path / "r" / "metrics.csv")[-1][0] == "1"

    def test_missing_run_dir(self, tmp_path, capsys):
        assert cli.main(["adapt", str(tmp_path / "nothing")]) == 1
        assert "missing artifact" in capsys.readouterr().err
