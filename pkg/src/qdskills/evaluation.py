"""Evaluation protocols: few-shot adaptation, hierarchical composition and sweeps."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import envs, nn
from .seeding import episode_seeds

# --- skill libraries -------------------------------------------------------------


class SkillLibrary:
    """A fixed, enumerable set of deterministic skills.

    ``act(obs, ids)`` maps a flat batch of observations, each paired with the
    index of the skill that should act on it, to environment actions.
    """
    count: int

    def act(self, obs: np.ndarray, ids: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def act_grid(self, obs: np.ndarray) -> np.ndarray:
        """``obs`` shaped (K, B, d) where row k belongs to skill k."""
        k, b, d = obs.shape
        ids = np.repeat(np.arange(k), b)
        return self.act(obs.reshape(k * b, d), ids).reshape(k, b, -1)


class GenotypeSkills(SkillLibrary):
    """One deterministic MLP policy per genotype, e.g. the elites of a repertoire."""

    def __init__(self, net: nn.NetSpec, genotypes: np.ndarray, action_bound: float):
        self.net = net
        self.genotypes = np.atleast_2d(genotypes)
        self.bound = action_bound
        self.count = self.genotypes.shape[0]

    def _subset(self, sel):
        return GenotypeSkills(self.net, self.genotypes[sel], self.bound)

    def act(self, obs, ids):
        out = np.empty((obs.shape[0], 2))
        for k in np.unique(ids):
            rows = ids == k
            out[rows] = self.bound * np.tanh(nn.forward(self.net, self.genotypes[k], obs[rows]))
        return out

    def act_grid(self, obs):
        return self.bound * np.tanh(nn.forward(self.net, self.genotypes[: obs.shape[0]], obs))


class LatentSkills(SkillLibrary):
    """The |Z| deterministic (mean-action) policies of a latent-conditioned skill set."""

    def __init__(self, skills):
        self.skills = skills
        self.count = skills.num_skills

    def _subset(self, sel):
        sub = LatentSkills(self.skills)
        sub.ids = getattr(self, "ids", np.arange(self.count))[sel]
        sub.count = len(sub.ids)
        return sub

    def act(self, obs, ids):
        z = getattr(self, "ids", np.arange(self.count))[ids]
        return self.skills.action_bound * self.skills.mean_action(obs, z)


class ConstantSkills(SkillLibrary):
    """Open-loop skills that emit one fixed action each."""

    def __init__(self, actions):
        self.actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        self.count = self.actions.shape[0]

    def _subset(self, sel):
        return ConstantSkills(self.actions[sel])

    def act(self, obs, ids):
        return self.actions[ids]


def repertoire_skills(rep, net: nn.NetSpec, action_bound: float) -> GenotypeSkills:
    """Enumerate every occupied cell of a repertoire as a skill."""
    _, genotypes, _, _ = rep.elites()
    if genotypes.shape[0] == 0:
        raise ValueError("empty skill list")
    return GenotypeSkills(net, genotypes, action_bound)


def run_jump_skills(env: envs.EnvSpec) -> ConstantSkills:
    """Hand-built hurdle skills: sprint without jumping, and a slower permanent jump."""
    b = env.action_bound
    return ConstantSkills([[b, 0.0], [b / 2, b]])


def evaluate_skills(skills: SkillLibrary, env: envs.EnvSpec, seeds, workers: int = 1,
                    max_batch: int = 20_000) -> np.ndarray:
    """Fitness matrix (K, len(seeds)): every skill run once per seed."""
    seeds = list(seeds)
    n = len(seeds)
    if skills.count == 0:
        raise ValueError("empty skill list")
    chunk = max(1, max_batch // max(n, 1))
    ranges = [(lo, min(lo + chunk, skills.count)) for lo in range(0, skills.count, chunk)]

    def run(lo_hi):
        lo, hi = lo_hi
        sub = skills._subset(slice(lo, hi))
        k = hi - lo

        def policy(obs):
            return sub.act_grid(obs.reshape(k, n, -1)).reshape(k * n, -1)
        ro = envs.rollout_batch(policy, env, seeds * k, record=False)
        return ro.fitness.reshape(k, n)

    if workers <= 1 or len(ranges) == 1:
        parts = [run(r) for r in ranges]
    else:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, ranges))
    return np.concatenate(parts)


# --- adaptation ---------------------------------------------------------------------

@dataclass
class AdaptationRow:
    value: float | tuple[float, float]
    best_skill: int
    median: float
    q25: float
    q75: float
    fitness_gain: float


@dataclass
class AdaptationReport:
    kind: str
    nominal_fitness: float
    rows: list[AdaptationRow] = field(default_factory=list)
    n_eval: int = 100
    num_skills: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            value_cols = ["target_x", "target_y"] if self.kind == "move-target" else ["value"]
            w.writerow(value_cols + ["best_skill", "median", "q25", "q75", "fitness_gain"])
            for r in self.rows:
                vals = list(r.value) if self.kind == "move-target" else [r.value]
                w.writerow([repr(float(v)) for v in vals] + [r.best_skill] +
                           [repr(float(v)) for v in (r.median, r.q25, r.q75, r.fitness_gain)])

    def to_json(self) -> dict:
        return asdict(self)


def _best_median(fit: np.ndarray):
    med = np.median(fit, axis=1)
    best = int(np.argmax(med))          # ties resolve to the lowest skill index
    q25, q75 = np.quantile(fit[best], [0.25, 0.75])
    return best, float(med[best]), float(q25), float(q75)


def _gain(median: float, nominal: float) -> float:
    if median == nominal:
        return 0.0
    return (median - nominal) / abs(nominal) if nominal != 0 else math.copysign(math.inf, median - nominal)


def adaptation_eval(skills: SkillLibrary, env: envs.EnvSpec, kind: str, grid, n_eval: int = 100,
                    rng: np.random.Generator | None = None, channels=None, workers: int = 1,
                    nominal=1.0) -> AdaptationReport:
    """Best-median adaptation: each skill gets ``n_eval`` episodes per grid value.

    The same evaluation seeds are reused at every grid value, so the nominal
    value reproduces the nominal fitness exactly and its gain is 0.
    """
    if skills.count == 0:
        raise ValueError("empty skill list")
    rng = rng if rng is not None else np.random.default_rng(0)
    seeds = episode_seeds(rng, n_eval)
    nominal_fit = evaluate_skills(skills, env, seeds, workers)
    _, nominal_med, _, _ = _best_median(nominal_fit)
    report = AdaptationReport(kind, nominal_med, n_eval=n_eval, num_skills=skills.count)
    for value in grid:
        if kind != "move-target" and float(value) == float(nominal):
            fit = nominal_fit
        else:
            fit = evaluate_skills(skills, envs.apply_perturbation(env, kind, value, channels), seeds, workers)
        best, med, q25, q75 = _best_median(fit)
        v = tuple(float(x) for x in value) if kind == "move-target" else float(value)
        report.rows.append(AdaptationRow(v, best, med, q25, q75, _gain(med, nominal_med)))
    return report


def sample_targets(env: envs.EnvSpec, count: int, rng: np.random.Generator) -> list[tuple[float, float]]:
    """Uniform points on the arena rectangle."""
    xmin, ymin, xmax, ymax = env.arena
    pts = rng.uniform([xmin, ymin], [xmax, ymax], size=(count, 2))
    return [tuple(map(float, p)) for p in pts]


def target_adaptation_eval(skills: SkillLibrary, env: envs.EnvSpec, new_targets=10, n_eval: int = 100,
                           rng: np.random.Generator | None = None, workers: int = 1) -> AdaptationReport:
    """Move the maze target and pick the best-median skill for each new target.

    ``new_targets`` is either a list of points or a count of uniformly sampled ones.
    """
    if env.kind != "point-maze":
        raise ValueError("target relocation needs a maze-kind environment")
    rng = rng if rng is not None else np.random.default_rng(0)
    if isinstance(new_targets, (int, np.integer)):
        new_targets = sample_targets(env, int(new_targets), rng)
    for t in new_targets:
        if not env.inside(t):
            raise ValueError(f"target {t} outside the arena")
    return adaptation_eval(skills, env, "move-target", new_targets, n_eval, rng, workers=workers)


# --- hierarchical composition ----------------------------------------------------------

@dataclass(frozen=True)
class MetaConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 3e-4
    clip: float = 0.2
    gae_lambda: float = 0.95
    discount: float = 0.99
    epochs: int = 4
    minibatch: int = 64
    skill_hold: int = 10
    episodes_per_update: int = 32
    entropy_coef: float = 0.01
    eval_episodes: int = 20

    def __post_init__(self):
        if self.skill_hold < 1:
            raise ValueError("skill_hold must be >= 1")
        if not 0 < self.clip < 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("clip must lie in (0, 1) and gae_lambda in [0, 1]")


@dataclass
class MetaControllerState:
    policy_spec: nn.NetSpec
    value_spec: nn.NetSpec
    policy: np.ndarray
    value: np.ndarray
    policy_opt: nn.AdamState
    value_opt: nn.AdamState
    num_skills: int
    cfg: MetaConfig

    @classmethod
    def create(cls, obs_dim: int, num_skills: int, cfg: MetaConfig, rng) -> "MetaControllerState":
        ps = nn.mlp((obs_dim + num_skills, *cfg.hidden, num_skills), "tanh")
        vs = nn.mlp((obs_dim + num_skills, *cfg.hidden, 1), "tanh")
        pol = nn.init_params(ps, rng)
        pol[-num_skills * (cfg.hidden[-1] + 1):] *= 0.01   # near-uniform initial skill choice
        val = nn.init_params(vs, rng)
        return cls(ps, vs, pol, val, nn.adam_init(pol, cfg.lr), nn.adam_init(val, cfg.lr), num_skills, cfg)

    def inputs(self, obs, last_skill) -> np.ndarray:
        """Environment observation plus a one-hot of the previous skill (zeros at the start)."""
        onehot = np.zeros((len(last_skill), self.num_skills))
        has = last_skill >= 0
        onehot[np.flatnonzero(has), last_skill[has]] = 1.0
        return np.concatenate([obs, onehot], axis=1)

    def logits(self, x) -> np.ndarray:
        return nn.forward(self.policy_spec, self.policy, x)

    def values(self, x) -> np.ndarray:
        x = np.asarray(x)
        return nn.forward(self.value_spec, self.value, x.reshape(-1, x.shape[-1]))[:, 0].reshape(x.shape[:-1])


@dataclass
class MetaRollout:
    inputs: np.ndarray     # (N, M, in)
    choices: np.ndarray    # (N, M)
    logp: np.ndarray       # (N, M)
    rewards: np.ndarray    # (N, M), summed env reward over each hold
    executed: np.ndarray   # (N, T), skill index per env step
    fitness: np.ndarray    # (N,)


def hierarchical_rollout(meta: MetaControllerState, skills: SkillLibrary, env: envs.EnvSpec, seeds,
                         rng: np.random.Generator, greedy: bool = False) -> MetaRollout:
    """Episodes where the controller picks a skill every ``skill_hold`` steps."""
    n, T, H = len(seeds), env.horizon, meta.cfg.skill_hold
    M = -(-T // H)
    s = envs.reset_batch(env, seeds)
    last = np.full(n, -1)
    inputs = np.empty((n, M, meta.policy_spec.n_inputs))
    choices = np.empty((n, M), dtype=np.int64)
    logp = np.empty((n, M))
    rewards = np.zeros((n, M))
    executed = np.empty((n, T), dtype=np.int64)
    for m in range(M):
        x = meta.inputs(envs.observe(env, s), last)
        lp = nn.log_softmax(meta.logits(x))
        if greedy:
            k = np.argmax(lp, axis=1)
        else:
            g = rng.gumbel(size=lp.shape)
            k = np.argmax(lp + g, axis=1)
        inputs[:, m], choices[:, m], logp[:, m] = x, k, lp[np.arange(n), k]
        for t in range(m * H, min(T, (m + 1) * H)):
            s, r, _ = envs.step_batch(env, s, skills.act(envs.observe(env, s), k))
            rewards[:, m] += r
            executed[:, t] = k
        last = k
    return MetaRollout(inputs, choices, logp, rewards, executed, rewards.sum(axis=1))


def gae(rewards: np.ndarray, values: np.ndarray, discount: float, lam: float) -> np.ndarray:
    """Advantages for fixed-length episodes that end after the last column."""
    n, M = rewards.shape
    adv = np.zeros((n, M))
    run = np.zeros(n)
    for m in range(M - 1, -1, -1):
        nxt = values[:, m + 1] if m + 1 < M else 0.0
        delta = rewards[:, m] + discount * nxt - values[:, m]
        run = delta + discount * lam * run
        adv[:, m] = run
    return adv


def ppo_policy_loss_grad(meta: MetaControllerState, x, choices, old_logp, adv):
    """Clipped surrogate plus entropy bonus; returns (loss, parameter gradient)."""
    cfg = meta.cfg
    B = x.shape[0]
    logits, cache = nn.forward_with_cache(meta.policy_spec, meta.policy, x)
    lp = nn.log_softmax(logits)
    p = np.exp(lp)
    idx = np.arange(B)
    ratio = np.exp(lp[idx, choices] - old_logp)
    clipped = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip)
    surr = np.minimum(ratio * adv, clipped * adv)
    ent = -np.sum(p * lp, axis=1)
    loss = -surr.mean() - cfg.entropy_coef * ent.mean()
    active = ~(((adv > 0) & (ratio > 1 + cfg.clip)) | ((adv < 0) & (ratio < 1 - cfg.clip)))
    g_logp = np.where(active, ratio * adv, 0.0)
    onehot = np.zeros_like(p)
    onehot[idx, choices] = 1.0
    d_surr = g_logp[:, None] * (onehot - p)
    d_ent = -p * (lp + ent[:, None])
    upstream = -(d_surr + cfg.entropy_coef * d_ent) / B
    grad, _ = nn.backward(meta.policy_spec, meta.policy, x, upstream, cache)
    return float(loss), grad


def ppo_update(meta: MetaControllerState, ro: MetaRollout, rng: np.random.Generator) -> dict:
    cfg = meta.cfg
    n, M = ro.choices.shape
    v = meta.values(ro.inputs)
    adv = gae(ro.rewards, v, cfg.discount, cfg.gae_lambda)
    returns = (adv + v).ravel()
    x = ro.inputs.reshape(n * M, -1)
    choices, old_logp = ro.choices.ravel(), ro.logp.ravel()
    adv = adv.ravel()
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    losses = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n * M)
        for lo in range(0, n * M, cfg.minibatch):
            mb = perm[lo:lo + cfg.minibatch]
            loss, g = ppo_policy_loss_grad(meta, x[mb], choices[mb], old_logp[mb], adv[mb])
            meta.policy_opt, meta.policy = nn.adam_step(meta.policy_opt, meta.policy, g)
            out, cache = nn.forward_with_cache(meta.value_spec, meta.value, x[mb])
            err = out[:, 0] - returns[mb]
            gv, _ = nn.backward(meta.value_spec, meta.value, x[mb], err[:, None] / len(mb), cache)
            meta.value_opt, meta.value = nn.adam_step(meta.value_opt, meta.value, gv)
            losses.append(loss)
    return {"policy_loss": float(np.mean(losses))}


@dataclass
class HierarchyResult:
    meta: MetaControllerState
    curve: list[tuple[int, float]]     # (env_steps, mean training-episode fitness)
    meta_fitness: float                 # greedy controller, mean over evaluation episodes
    single_skill_fitness: list[float]   # each skill held for the whole episode

    @property
    def best_single(self) -> float:
        return max(self.single_skill_fitness)


def hierarchical_train(skills: SkillLibrary, env: envs.EnvSpec, budget_env_steps: int,
                       rng: np.random.Generator, cfg: MetaConfig = MetaConfig(),
                       meta: MetaControllerState | None = None) -> HierarchyResult:
    """Train a PPO controller over frozen skills for ``budget_env_steps`` environment steps."""
    meta = meta or MetaControllerState.create(env.obs_dim, skills.count, cfg, rng)
    steps_per_update = cfg.episodes_per_update * env.horizon
    curve = []
    steps = 0
    while steps + steps_per_update <= budget_env_steps:
        ro = hierarchical_rollout(meta, skills, env, episode_seeds(rng, cfg.episodes_per_update), rng)
        steps += steps_per_update
        ppo_update(meta, ro, rng)
        curve.append((steps, float(ro.fitness.mean())))
    eval_seeds = episode_seeds(rng, cfg.eval_episodes)
    final = hierarchical_rollout(meta, skills, env, eval_seeds, rng, greedy=True)
    single = evaluate_skills(skills, env, eval_seeds).mean(axis=1)
    return HierarchyResult(meta, curve, float(final.fitness.mean()), single.tolist())


# --- hyperparameter sweeps -----------------------------------------------------------------

SWEEP_QUANTILES = (0.125, 0.25, 0.5, 0.75, 0.875)


def sweep_summary(cell_scores: dict, norm: float | None = None) -> dict:
    """Quantiles over per-cell medians of normalized QD scores.

    ``cell_scores`` maps a cell label to the list of per-seed QD scores.
    Scores are divided by ``norm`` (default: the largest score in the sweep).
    """
    if not cell_scores:
        raise ValueError("empty sweep")
    all_scores = np.concatenate([np.asarray(v, dtype=np.float64) for v in cell_scores.values()])
    norm = float(np.max(all_scores)) if norm is None else float(norm)
    scale = norm if norm > 0 else 1.0
    medians = {k: float(np.median(np.asarray(v) / scale)) for k, v in cell_scores.items()}
    q = np.quantile(list(medians.values()), SWEEP_QUANTILES)
    out = {f"q{int(round(p * 1000)):03d}": float(x) for p, x in zip(SWEEP_QUANTILES, q)}
    out.update(median=out["q500"], iqr=out["q750"] - out["q250"], norm=norm, cells=medians)
    return out


def grid_cells(grid: dict) -> list[tuple[str, dict]]:
    """Cross-product of ``grid`` (key -> values) as (label, cell) pairs in row-major order."""
    keys = list(grid)
    cells = [{}]
    for k in keys:
        cells = [dict(c, **{k: v}) for c in cells for v in grid[k]]
    return [(",".join(f"{k}={c[k]}" for k in keys), c) for c in cells]


def hyperparam_sweep(run_fn, grid: dict, seeds_per_cell: int = 5, norm: float | None = None) -> dict:
    """Run the full cross-product of ``grid`` (key -> values) with several seeds.

    ``run_fn(overrides: dict, seed: int) -> qd_score`` performs one run.
    """
    scores = {label: [float(run_fn(c, s)) for s in range(seeds_per_cell)] for label, c in grid_cells(grid)}
    summary = sweep_summary(scores, norm)
    summary["raw"] = scores
    return summary


def write_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=float)
