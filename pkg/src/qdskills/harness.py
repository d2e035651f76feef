"""Run orchestration: training loop, checkpoints, metric files, exports and protocol drivers."""
from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import time
from pathlib import Path

import numpy as np

from . import envs
from . import evaluation as ev
from .config import AUTO, RunConfig, load_config
from .qd import QdRun, policy_spec
from .repertoire import CvtRepertoire
from .seeding import stream
from .skills import SkillRun, SkillSet

log = logging.getLogger("qdskills")

METRICS_HEADER = ["iteration", "env_steps", "max_fitness", "coverage", "qd_score"]
TIMING_HEADER = ["iteration", "wall_seconds"]
EXPORT_FORMATS = ("repertoire-csv", "metrics-csv", "adaptation-csv", "summary-json")


class MissingArtifact(FileNotFoundError):
    pass


def make_run(cfg: RunConfig):
    env = cfg.env_spec()
    if cfg.is_qd:
        return QdRun(env, cfg.qd_config(), cfg.seed, cfg.workers)
    return SkillRun(env, cfg.skill_config(), cfg.seed, cfg.workers)


def _metrics_row(run) -> list[str]:
    m = run.metrics()
    mf = "" if m.max_fitness is None else repr(float(m.max_fitness))
    return [str(run.iteration), str(run.env_steps), mf, str(m.coverage), repr(float(m.qd_score))]


def _has_budget(cfg: RunConfig) -> bool:
    return cfg.iterations > 0 or cfg.env_steps > 0 or cfg.wall_seconds > 0


def _done(cfg: RunConfig, run, elapsed: float) -> bool:
    if not _has_budget(cfg):
        return True
    if cfg.iterations > 0 and run.iteration >= cfg.iterations:
        return True
    if cfg.env_steps > 0 and run.env_steps >= cfg.env_steps:
        return True
    return cfg.wall_seconds > 0 and elapsed >= cfg.wall_seconds


def train(cfg: RunConfig, on_iteration=None):
    """Run to the configured budget in memory; returns the run object."""
    run = make_run(cfg)
    run.initialize()
    t0 = time.perf_counter()
    while not _done(cfg, run, time.perf_counter() - t0):
        run.iterate()
        if on_iteration is not None:
            on_iteration(run)
    return run


# --- files ---------------------------------------------------------------------------

def _save_checkpoint(run, path: Path, elapsed: float) -> None:
    sd = dict(run.state_dict())
    sd["harness.elapsed"] = np.array(elapsed)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **sd)
    os.replace(tmp, path)


def _truncate_rows(path: Path, iteration: int) -> None:
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= iteration]
    with path.open("w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(keep)


def _append(path: Path, row) -> None:
    with path.open("a", newline="") as f:
        csv.writer(f, lineterminator="\n").writerow(row)


def _save_artifacts(run, out: Path) -> None:
    run.repertoire().save(out / "repertoire.npz")
    if isinstance(run, SkillRun):
        sk = run.skills
        np.savez(out / "skills.npz", params=sk.params, num_skills=np.array(sk.num_skills), prior=sk.prior,
                 sizes=np.array(sk.spec.layer_sizes), action_bound=np.array(sk.action_bound),
                 best_return=np.array(run.best_return))


def run(cfg: RunConfig, resume: bool = False) -> Path:
    """Train with checkpoints; writes config.ini, metrics.csv, timing.csv and snapshots to ``cfg.out``."""
    out = Path(cfg.out)
    ckpt = out / "checkpoint.npz"
    metrics_path, timing_path = out / "metrics.csv", out / "timing.csv"
    out.mkdir(parents=True, exist_ok=True)
    r = make_run(cfg)
    elapsed = 0.0
    if resume and ckpt.exists():
        with np.load(ckpt, allow_pickle=False) as z:
            sd = {k: z[k] for k in z.files}
        r.load_state_dict(sd)
        elapsed = float(sd["harness.elapsed"])
        _truncate_rows(metrics_path, r.iteration)
        _truncate_rows(timing_path, r.iteration)
        log.info("resumed %s at iteration %d", out, r.iteration)
    else:
        if metrics_path.exists() and not resume:
            raise FileExistsError(f"{out} already holds a run; pass --resume or choose another --out")
        (out / "config.ini").write_text(cfg.to_ini())
        r.initialize()
        with metrics_path.open("w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerows([METRICS_HEADER, _metrics_row(r)])
        with timing_path.open("w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerows([TIMING_HEADER, [str(r.iteration), "0.0"]])
        _save_checkpoint(r, ckpt, elapsed)
    t0 = time.perf_counter() - elapsed
    while not _done(cfg, r, time.perf_counter() - t0):
        r.iterate()
        now = time.perf_counter() - t0
        if r.iteration % cfg.metrics_every == 0:
            _append(metrics_path, _metrics_row(r))
            _append(timing_path, [str(r.iteration), f"{now:.3f}"])
        if r.iteration % cfg.checkpoint_every == 0:
            _save_checkpoint(r, ckpt, now)
            _save_artifacts(r, out)
        log.info("iteration %d env_steps %d", r.iteration, r.env_steps)
    _save_checkpoint(r, ckpt, time.perf_counter() - t0)
    _save_artifacts(r, out)
    return out


# --- loading trained skills ------------------------------------------------------------

def load_skill_library(run_dir, cfg: RunConfig | None = None) -> tuple[ev.SkillLibrary, RunConfig]:
    """Enumerate the skills of a finished run: repertoire cells or latent values."""
    run_dir = Path(run_dir)
    cfg = cfg or load_config(_need(run_dir / "config.ini"), environ={})
    env = cfg.env_spec()
    if cfg.is_qd:
        rep = CvtRepertoire.load(_need(run_dir / "repertoire.npz"))
        return ev.repertoire_skills(rep, policy_spec(env, cfg.qd_config().hidden), env.action_bound), cfg
    with np.load(_need(run_dir / "skills.npz"), allow_pickle=False) as z:
        sk = SkillSet.create(env.obs_dim, int(z["num_skills"]), float(z["action_bound"]),
                             tuple(int(s) for s in z["sizes"][1:-1]), np.random.default_rng(0))
        sk.params = z["params"].copy()
    return ev.LatentSkills(sk), cfg


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact: {path}")
    return path


# --- protocols -----------------------------------------------------------------------------

def adapt(cfg: RunConfig, run_dir, out) -> ev.AdaptationReport:
    """Few-shot adaptation of a finished run's skills; writes adaptation.json and .csv."""
    skills, run_cfg = load_skill_library(run_dir)
    env = run_cfg.env_spec()
    a = cfg.sections["adapt"]
    rng = stream(cfg.seed, "adapt")
    if a["kind"] == "move-target":
        report = ev.target_adaptation_eval(skills, env, a["targets"], a["n_eval"], rng, cfg.workers)
    else:
        channels = [int(c) for c in str(a["channels"]).replace(",", " ").split()] or None
        grid = envs.perturbation_grid(a["kind"], a["grid_size"])
        report = ev.adaptation_eval(skills, env, a["kind"], grid, a["n_eval"], rng, channels, cfg.workers)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ev.write_json(report.to_json(), out / "adaptation.json")
    report.to_csv(out / "adaptation.csv")
    return report


def hier(cfg: RunConfig, out, skills_dir=None) -> ev.HierarchyResult:
    """Train the meta-controller over hand-built run/jump skills (or a run's skills)."""
    env = cfg.env_spec()
    if env.kind != "point-hurdle":
        raise ValueError("hierarchical composition runs on a point-hurdle environment")
    skills = load_skill_library(skills_dir)[0] if skills_dir else ev.run_jump_skills(env)
    res = ev.hierarchical_train(skills, env, cfg.sections["hier"]["budget_env_steps"],
                                stream(cfg.seed, "hier"), cfg.meta_config())
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "curve.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["env_steps", "mean_fitness"])
        w.writerows([[s, repr(v)] for s, v in res.curve])
    ev.write_json({"meta_fitness": res.meta_fitness, "single_skill_fitness": res.single_skill_fitness,
                   "ratio_to_best_single": res.meta_fitness / res.best_single if res.best_single else None},
                  out / "hier.json")
    return res


SWEEP_GRIDS = {
    "qd": {"variation.sigma_iso": (0.001, 0.01, 0.1), "variation.sigma_line": (0.01, 0.1, 1.0)},
    "skills": {"shaping.beta": (0.1, 1.0, 10.0), "sac.alpha": (0.1, 0.5, 1.0)},
}


def sweep_grid(cfg: RunConfig) -> dict:
    s = cfg.sections["sweep"]
    default = SWEEP_GRIDS["qd" if cfg.is_qd else "skills"]
    grid = {}
    for (pk, vk), (dk, dv) in zip((("param_a", "values_a"), ("param_b", "values_b")), default.items()):
        key = dk if s[pk] == AUTO else s[pk]
        vals = dv if not s[vk] else tuple(v for v in str(s[vk]).replace(",", " ").split())
        grid[key] = vals
    return grid


def sweep_scores(cfg: RunConfig) -> dict:
    """QD score of every (cell, seed) for the run's method; in memory, no checkpoints."""
    grid = sweep_grid(cfg)
    seeds = cfg.sections["sweep"]["seeds_per_cell"]

    def run_fn(cell: dict, k: int) -> float:
        overrides = {key: str(val) for key, val in cell.items()}
        overrides["run.seed"] = str(cfg.seed * 1000 + k)
        c = load_config(overrides=overrides, environ={}, base=cfg)
        return train(c).metrics().qd_score

    scores = {}
    for label, cell in ev.grid_cells(grid):
        scores[label] = [float(run_fn(cell, k)) for k in range(seeds)]
        log.info("sweep %s %s", label, scores[label])
    return scores


def sweep(configs: list[RunConfig], out) -> dict:
    """Sweep one or more methods; scores are normalized by the joint maximum."""
    raw = {c.method + "@" + c.sections["run"]["env"]: sweep_scores(c) for c in configs}
    joint = max(max(max(v) for v in s.values()) for s in raw.values())
    result = {}
    for name, scores in raw.items():
        summary = ev.sweep_summary(scores, joint)
        summary["own_norm"] = ev.sweep_summary(scores)
        summary["raw"] = scores
        result[name] = summary
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ev.write_json(result, out / "sweep.json")
    return result


def smerl_target(cfg: RunConfig, out, seeds: int = 5) -> float:
    """Median best return of plain SAC over ``seeds`` seeds; writes a [shaping] fragment."""
    best = []
    for k in range(seeds):
        c = load_config(overrides={"run.method": "sac", "shaping.mode": "none",
                                   "run.seed": str(cfg.seed * 1000 + k)}, environ={}, base=cfg)
        r = train(c)
        if r.records == 0:
            r.record()
        best.append(r.best_return)
    target = float(np.median(best))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "smerl_target.ini").write_text(
        "[shaping]\n"
        f"# median over {seeds} SAC seeds of the best recorded return: {', '.join(repr(b) for b in best)}\n"
        f"target_return = {target!r}\nepsilon = {0.1 * abs(target)!r}\n")
    return target


# --- export ----------------------------------------------------------------------------------

def _final_metrics(run_dir: Path) -> dict:
    with _need(run_dir / "metrics.csv").open(newline="") as f:
        rows = list(csv.DictReader(f))
    last = rows[-1]
    cfg = load_config(_need(run_dir / "config.ini"), environ={})
    return {"run": str(run_dir), "method": cfg.method, "env": cfg.sections["run"]["env"], "seed": cfg.seed,
            "iteration": int(last["iteration"]), "env_steps": int(last["env_steps"]),
            "max_fitness": float(last["max_fitness"]) if last["max_fitness"] else None,
            "coverage": int(last["coverage"]), "qd_score": float(last["qd_score"])}


def export(run_dirs, fmt: str, out) -> Path:
    """Write one plot-ready artifact; identical inputs give identical bytes."""
    if fmt not in EXPORT_FORMATS:
        raise ValueError(f"unknown export format {fmt!r}; choose from {', '.join(EXPORT_FORMATS)}")
    dirs = [Path(d) for d in ([run_dirs] if isinstance(run_dirs, (str, Path)) else run_dirs)]
    out = Path(out)
    if fmt != "summary-json" and len(dirs) != 1:
        raise ValueError(f"{fmt} takes exactly one run directory")
    if fmt == "repertoire-csv":
        CvtRepertoire.load(_need(dirs[0] / "repertoire.npz")).to_csv(out)
    elif fmt == "metrics-csv":
        shutil.copyfile(_need(dirs[0] / "metrics.csv"), out)
    elif fmt == "adaptation-csv":
        data = json.loads(_need(dirs[0] / "adaptation.json").read_text())
        rows = [ev.AdaptationRow(**{**r, "value": tuple(r["value"]) if isinstance(r["value"], list)
                                    else r["value"]}) for r in data.pop("rows")]
        ev.AdaptationReport(rows=rows, **data).to_csv(out)
    else:
        runs = [_final_metrics(d) for d in dirs]
        median = {}
        for key in ("max_fitness", "coverage", "qd_score"):
            vals = [r[key] for r in runs if r[key] is not None]
            median[key] = float(np.median(vals)) if vals else None
        out.write_text(json.dumps({"runs": runs, "median": median, "n_runs": len(runs)},
                                  indent=2, sort_keys=True) + "\n")
    return out
