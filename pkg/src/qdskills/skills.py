"""Mutual-information skill discovery on top of SAC.

One latent-conditioned policy pi(a | s, z) is trained with SAC on a shaped
reward: the environment reward plus a scaled diversity reward, either always
("sum") or only for transitions of near-optimal episodes ("smerl-gate"). The
diversity reward comes from a skill discriminator q(z | s') (DIAYN) or a
per-skill dynamics model q(ds | s, z) (DADS). Every skill is periodically
evaluated and inserted into a passive CVT repertoire for QD metrics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import envs, nn
from .qd import Batch, ReplayBuffer, _adam_from_sd, _adam_sd
from .repertoire import CvtRepertoire, QdMetrics, cvt_build, passive_record
from .seeding import episode_seeds, stream

SKILL_METHODS = ("diayn-reward", "dads-reward", "smerl-diayn", "smerl-dads", "sac")
SHAPING_MODES = ("sum", "smerl-gate", "none")

PROB_FLOOR = 1e-6
DENSITY_FLOOR = 1e-12
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_SQUASH_EPS = 1e-6

# diversity reward scales per environment kind; anything else uses 2.0
DEFAULT_BETA = {"point-maze": 3.0, "point-omni": 4.0}


def default_beta(kind: str) -> float:
    return DEFAULT_BETA.get(kind, 2.0)


@dataclass(frozen=True)
class ShapingConfig:
    mode: str = "sum"
    beta: float = 2.0
    target_return: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.mode not in SHAPING_MODES:
            raise ValueError(f"unknown shaping mode {self.mode!r}")
        if self.beta < 0 or self.epsilon < 0:
            raise ValueError("beta and epsilon must be non-negative")


@dataclass(frozen=True)
class SacConfig:
    hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)
    lr: float = 3e-4
    alpha: float = 0.1
    discount: float = 0.99
    batch_size: int = 256
    tau: float = 0.005
    env_batch: int = 200
    buffer_capacity: int = 1_000_000

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


@dataclass(frozen=True)
class SkillConfig:
    method: str = "diayn-reward"
    num_skills: int = 5
    use_prior: bool = True
    sac: SacConfig = SacConfig()
    shaping: ShapingConfig = ShapingConfig()
    model_hidden: tuple[int, ...] = (64, 64)
    model_lr: float = 3e-4
    dads_components: int = 4
    record_every: int = 100_000
    num_cells: int = 1024
    cvt_seed: int = 0

    def __post_init__(self):
        if self.method not in SKILL_METHODS:
            raise ValueError(f"unknown skill method {self.method!r}")
        if self.num_skills < 1:
            raise ValueError("need at least one skill")

    @property
    def intrinsic(self) -> str | None:
        if self.method == "sac":
            return None
        return "dads" if "dads" in self.method else "diayn"


# --- rewards ------------------------------------------------------------------

def diayn_reward(q_z, num_skills: int):
    """log q(z|s) - log p(z) with a uniform prior; q floored at 1e-6."""
    return np.log(np.maximum(q_z, PROB_FLOOR)) + np.log(num_skills)


def dads_reward(log_densities, z):
    """log q(ds|z) - log mean_z' q(ds|z'), exact marginal over all skills.

    ``log_densities`` has shape (B, |Z|); densities are floored at 1e-12.
    """
    logd = np.maximum(np.asarray(log_densities, dtype=np.float64), np.log(DENSITY_FLOOR))
    z = np.asarray(z)
    own = np.take_along_axis(logd, z.reshape(-1, 1), axis=1)[:, 0]
    m = logd.max(axis=1)
    marginal = m + np.log(np.mean(np.exp(logd - m[:, None]), axis=1))
    return own - marginal


def shape_reward(r_env, r_div, cfg: ShapingConfig, episode_return):
    r_env = np.asarray(r_env, dtype=np.float64)
    if cfg.mode == "none":
        return r_env.copy()
    bonus = cfg.beta * np.asarray(r_div, dtype=np.float64)
    if cfg.mode == "sum":
        return r_env + bonus
    gate = np.asarray(episode_return) >= cfg.target_return - cfg.epsilon
    return np.where(gate, r_env + bonus, r_env)


def descriptor_prior_features(x: np.ndarray, env: envs.EnvSpec, use_prior: bool = True) -> np.ndarray:
    """The (x, y) slice of a state/observation when a positional prior applies."""
    x = np.asarray(x)
    if use_prior and env.kind != "point-gait":
        return x[..., :2]
    return x


def one_hot(z, n: int) -> np.ndarray:
    return np.eye(n)[np.asarray(z)]


# --- skill set and policy sampling ----------------------------------------------

@dataclass
class SkillSet:
    spec: nn.NetSpec
    params: np.ndarray
    num_skills: int
    action_bound: float

    @classmethod
    def create(cls, obs_dim: int, num_skills: int, action_bound: float, hidden, rng) -> "SkillSet":
        spec = nn.mlp((obs_dim + num_skills, *hidden, 4), "tanh", "tanh-squashed-gaussian")
        return cls(spec, nn.init_params(spec, rng), num_skills, action_bound)

    @property
    def prior(self) -> np.ndarray:
        return np.full(self.num_skills, 1.0 / self.num_skills)

    def inputs(self, obs, z) -> np.ndarray:
        return np.concatenate([obs, one_hot(z, self.num_skills)], axis=-1)

    def mean_action(self, obs, z) -> np.ndarray:
        mu, _ = nn.gaussian_head(nn.forward(self.spec, self.params, self.inputs(obs, z)))
        return np.tanh(mu)

    def sample_action(self, obs, z, rng) -> np.ndarray:
        mu, ls = nn.gaussian_head(nn.forward(self.spec, self.params, self.inputs(obs, z)))
        return np.tanh(mu + np.exp(ls) * rng.standard_normal(mu.shape))

    def policy(self, z: int):
        """Deterministic closure ``obs (N, d) -> env action (N, 2)`` for skill ``z``."""
        def act(obs):
            return self.action_bound * self.mean_action(obs, np.full(len(obs), z))
        return act

    def evaluate(self, env: envs.EnvSpec, seeds) -> envs.Rollouts:
        """Deterministic rollout of skill ``i`` with ``seeds[i]``."""
        z = np.arange(len(seeds)) % self.num_skills
        return envs.rollout_batch(lambda o: self.action_bound * self.mean_action(o, z), env, list(seeds))

    def skill_genotypes(self) -> np.ndarray:
        return np.concatenate([np.tile(self.params, (self.num_skills, 1)), np.eye(self.num_skills)], axis=1)


def skill_rollout_batch(skills: SkillSet, env: envs.EnvSpec, count: int, rng: np.random.Generator):
    """Stochastic episodes, one prior-sampled skill per episode. Returns (rollouts, z)."""
    z = rng.integers(0, skills.num_skills, size=count)
    seeds = episode_seeds(rng, count)
    ro = envs.rollout_batch(lambda o: skills.action_bound * skills.sample_action(o, z, rng), env, seeds)
    return ro, z


# --- SAC ------------------------------------------------------------------------

@dataclass
class SacState:
    critic_spec: nn.NetSpec
    critics: np.ndarray
    target_critics: np.ndarray
    critic_opt: nn.AdamState
    policy_opt: nn.AdamState
    steps: int = 0

    def state_dict(self) -> dict:
        sd = {"sac.critics": self.critics, "sac.target_critics": self.target_critics,
              "sac.steps": np.array(self.steps)}
        sd.update(_adam_sd("sac.critic_opt", self.critic_opt))
        sd.update(_adam_sd("sac.policy_opt", self.policy_opt))
        return sd

    def load_state_dict(self, sd) -> None:
        self.critics, self.target_critics = np.array(sd["sac.critics"]), np.array(sd["sac.target_critics"])
        self.steps = int(sd["sac.steps"])
        self.critic_opt = _adam_from_sd("sac.critic_opt", sd)
        self.policy_opt = _adam_from_sd("sac.policy_opt", sd)


def sac_init(skills: SkillSet, obs_dim: int, cfg: SacConfig, rng) -> SacState:
    spec = nn.mlp((obs_dim + skills.num_skills + 2, *cfg.critic_hidden, 1), "relu")
    critics = np.stack([nn.init_params(spec, rng) for _ in range(2)])
    return SacState(spec, critics, critics.copy(), nn.adam_init(critics, cfg.lr), nn.adam_init(skills.params, cfg.lr))


def _squashed_sample(skills: SkillSet, x, rng, eps=None):
    out, c = nn.forward_with_cache(skills.spec, skills.params, x)
    mu, ls = nn.gaussian_head(out)
    std = np.exp(ls)
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    a = np.tanh(mu + std * eps)
    log_pi = np.sum(-0.5 * eps ** 2 - ls - _HALF_LOG_2PI - np.log(1.0 - a * a + _SQUASH_EPS), axis=-1)
    return a, log_pi, (out, c, mu, ls, std, eps)


def policy_entropy(skills: SkillSet, x, rng, samples: int = 16) -> float:
    return float(-np.mean([_squashed_sample(skills, x, rng)[1].mean() for _ in range(samples)]))


def sac_policy_loss_grad(sac: SacState, skills: SkillSet, x, eps, alpha: float):
    """mean(alpha * log pi - min(Q1, Q2)) through the reparameterized sample and its gradient."""
    n = x.shape[0]
    a, logp, (out, pcache, mu, ls, std, eps) = _squashed_sample(skills, x, None, eps)
    sa_pi = np.concatenate([x, a], axis=1)
    sa_pi2 = np.stack([sa_pi, sa_pi])
    q_pi = nn.forward(sac.critic_spec, sac.critics, sa_pi2)[..., 0]
    pick = (q_pi[0] <= q_pi[1]).astype(np.float64)
    up = np.stack([pick, 1.0 - pick])[..., None]
    _, dx = nn.backward(sac.critic_spec, sac.critics, sa_pi2, up, param_grad=False)
    dq_da = dx[..., -2:].sum(axis=0)
    one_m = 1.0 - a * a
    g_u = 2.0 * a * one_m / (one_m + _SQUASH_EPS)     # d/du of -log(1 - tanh(u)^2 + eps)
    d_mu = alpha * g_u - dq_da * one_m
    d_ls = alpha * (-1.0 + g_u * std * eps) - dq_da * one_m * std * eps
    half = out.shape[-1] // 2
    d_ls = d_ls * ((out[:, half:] > nn.LOG_STD_MIN) & (out[:, half:] < nn.LOG_STD_MAX))
    g, _ = nn.backward(skills.spec, skills.params, x, np.concatenate([d_mu, d_ls], axis=1) / n, pcache)
    loss = float(np.mean(alpha * logp - q_pi.min(axis=0)))
    return loss, g, logp


def sac_update(sac: SacState, skills: SkillSet, batch: Batch, rewards: np.ndarray, cfg: SacConfig,
               rng: np.random.Generator) -> dict:
    """One SAC step on ``batch`` with precomputed (shaped) rewards; updates in place."""
    n = len(rewards)
    x = skills.inputs(batch.obs, batch.skill)
    x_next = skills.inputs(batch.next_obs, batch.skill)
    # soft Bellman targets; episodes end only at the time limit so every transition bootstraps
    a_next, logp_next, _ = _squashed_sample(skills, x_next, rng)
    sa_next = np.concatenate([x_next, a_next], axis=1)
    q_next = nn.forward(sac.critic_spec, sac.target_critics, np.stack([sa_next, sa_next]))[..., 0].min(axis=0)
    y = rewards + cfg.discount * (q_next - cfg.alpha * logp_next)
    sa = np.concatenate([x, batch.action], axis=1)
    sa2 = np.stack([sa, sa])
    q, cache = nn.forward_with_cache(sac.critic_spec, sac.critics, sa2)
    err = q[..., 0] - y
    g, _ = nn.backward(sac.critic_spec, sac.critics, sa2, (2.0 / n) * err[..., None], cache)
    sac.critic_opt, sac.critics = nn.adam_step(sac.critic_opt, sac.critics, g)

    eps = rng.standard_normal((n, 2))
    _, g_pi, logp = sac_policy_loss_grad(sac, skills, x, eps, cfg.alpha)
    sac.policy_opt, skills.params = nn.adam_step(sac.policy_opt, skills.params, g_pi)
    sac.target_critics = nn.polyak(sac.target_critics, sac.critics, cfg.tau)
    sac.steps += 1
    return {"critic_loss": float(np.mean(err ** 2, axis=1).sum()), "mean_q": float(q.mean()),
            "log_pi": float(logp.mean())}


# --- diversity models -------------------------------------------------------------

@dataclass
class Discriminator:
    """q(z | features) as a categorical classifier."""
    spec: nn.NetSpec
    params: np.ndarray
    opt: nn.AdamState

    @classmethod
    def create(cls, feat_dim, num_skills, hidden, lr, rng) -> "Discriminator":
        spec = nn.mlp((feat_dim, *hidden, num_skills), "relu", "categorical-logits")
        p = nn.init_params(spec, rng)
        return cls(spec, p, nn.adam_init(p, lr))

    def probs(self, features) -> np.ndarray:
        return nn.softmax(nn.forward(self.spec, self.params, features))

    def reward(self, features, z, num_skills) -> np.ndarray:
        q = np.take_along_axis(self.probs(features), np.asarray(z).reshape(-1, 1), axis=1)[:, 0]
        return diayn_reward(q, num_skills)

    def accuracy(self, features, z) -> float:
        return float(np.mean(self.probs(features).argmax(axis=1) == np.asarray(z)))


def train_discriminator(model: Discriminator, features, z) -> float:
    """One Adam step on mean cross-entropy; returns the loss before the step."""
    logits, cache = nn.forward_with_cache(model.spec, model.params, features)
    logp = nn.log_softmax(logits)
    n = logits.shape[0]
    target = one_hot(z, logits.shape[1])
    loss = float(-np.mean(np.sum(target * logp, axis=1)))
    g, _ = nn.backward(model.spec, model.params, features, (np.exp(logp) - target) / n, cache)
    model.opt, model.params = nn.adam_step(model.opt, model.params, g)
    return loss


@dataclass
class SkillDynamics:
    """q(ds | features, z): per-skill gaussian mixture, identity covariance, over normalized ds."""
    spec: nn.NetSpec
    params: np.ndarray
    opt: nn.AdamState
    num_skills: int
    components: int
    dim: int
    count: float = 0.0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None

    @classmethod
    def create(cls, feat_dim, num_skills, components, hidden, lr, rng) -> "SkillDynamics":
        spec = nn.mlp((feat_dim + num_skills, *hidden, components * (1 + feat_dim)), "relu")
        p = nn.init_params(spec, rng)
        return cls(spec, p, nn.adam_init(p, lr), num_skills, components, feat_dim,
                   0.0, np.zeros(feat_dim), np.zeros(feat_dim))

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.maximum(np.sqrt(self.m2 / (self.count - 1)), 1e-6)

    def update_normalizer(self, delta: np.ndarray) -> None:
        """Parallel-variance merge of a batch into the running mean and variance."""
        n_b = delta.shape[0]
        mean_b = delta.mean(axis=0)
        m2_b = ((delta - mean_b) ** 2).sum(axis=0)
        tot = self.count + n_b
        d = mean_b - self.mean
        self.mean = self.mean + d * n_b / tot
        self.m2 = self.m2 + m2_b + d * d * self.count * n_b / tot
        self.count = tot

    def normalize(self, delta) -> np.ndarray:
        return (delta - self.mean) / self.std

    def _split(self, out):
        k = self.components
        return out[..., :k], out[..., k:].reshape(out.shape[:-1] + (k, self.dim))

    def log_density(self, features, delta_n, z) -> np.ndarray:
        x = np.concatenate([features, one_hot(z, self.num_skills)], axis=-1)
        logits, means = self._split(nn.forward(self.spec, self.params, x))
        logw = nn.log_softmax(logits)
        comp = -0.5 * ((delta_n[..., None, :] - means) ** 2).sum(-1) - self.dim * _HALF_LOG_2PI
        s = logw + comp
        m = s.max(axis=-1, keepdims=True)
        return (m + np.log(np.exp(s - m).sum(axis=-1, keepdims=True)))[..., 0]

    def log_density_all(self, features, delta_n) -> np.ndarray:
        """(B, |Z|) log densities of each transition under every skill."""
        return np.stack([self.log_density(features, delta_n, np.full(len(delta_n), k))
                         for k in range(self.num_skills)], axis=1)

    def reward(self, features, next_features, z) -> np.ndarray:
        delta_n = self.normalize(next_features - features)
        return dads_reward(self.log_density_all(features, delta_n), z)


def train_skill_dynamics(model: SkillDynamics, features, next_features, z) -> float:
    """Update the normalizer, then one Adam step on the mean negative log-likelihood."""
    delta = next_features - features
    model.update_normalizer(delta)
    delta_n = model.normalize(delta)
    x = np.concatenate([features, one_hot(z, model.num_skills)], axis=-1)
    out, cache = nn.forward_with_cache(model.spec, model.params, x)
    logits, means = model._split(out)
    logw = nn.log_softmax(logits)
    diff = delta_n[:, None, :] - means
    s = logw - 0.5 * (diff ** 2).sum(-1) - model.dim * _HALF_LOG_2PI
    m = s.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
    resp = np.exp(s - lse[:, None])
    n = len(z)
    d_logits = (np.exp(logw) - resp) / n
    d_means = -(resp[..., None] * diff) / n
    up = np.concatenate([d_logits, d_means.reshape(n, -1)], axis=1)
    g, _ = nn.backward(model.spec, model.params, x, up, cache)
    model.opt, model.params = nn.adam_step(model.opt, model.params, g)
    return float(-lse.mean())


# --- trainer ----------------------------------------------------------------------

class SkillRun:
    """Owns one skill-discovery training run; one learner step per vectorized env step."""

    def __init__(self, env: envs.EnvSpec, cfg: SkillConfig, seed: int, workers: int = 1):
        self.env, self.cfg, self.seed, self.workers = env, cfg, int(seed), workers
        rng = stream(seed, "skill-init")
        self.skills = SkillSet.create(env.obs_dim, cfg.num_skills, env.action_bound, cfg.sac.hidden, rng)
        self.sac = sac_init(self.skills, env.obs_dim, cfg.sac, rng)
        self.buffer = ReplayBuffer(cfg.sac.buffer_capacity, env.obs_dim)
        feat_dim = descriptor_prior_features(np.zeros(env.obs_dim), env, cfg.use_prior).shape[0]
        self.model = None
        if cfg.intrinsic == "diayn":
            self.model = Discriminator.create(feat_dim, cfg.num_skills, cfg.model_hidden, cfg.model_lr, rng)
        elif cfg.intrinsic == "dads":
            self.model = SkillDynamics.create(feat_dim, cfg.num_skills, cfg.dads_components, cfg.model_hidden,
                                              cfg.model_lr, rng)
        bounds = env.descriptor_bounds
        self.rep = CvtRepertoire(cvt_build(cfg.num_cells, bounds, cfg.cvt_seed), bounds, env.name)
        self.iteration = 0
        self.env_steps = 0
        self.records = 0
        self.best_return = -np.inf     # best mean deterministic return over recordings

    def initialize(self) -> None:
        """Nothing is evaluated before training; kept for symmetry with QD runs."""

    def _features(self, obs):
        return descriptor_prior_features(obs, self.env, self.cfg.use_prior)

    def diversity_reward(self, b: Batch) -> np.ndarray:
        if self.model is None:
            return np.zeros(len(b.reward))
        if isinstance(self.model, Discriminator):
            return self.model.reward(self._features(b.next_obs), b.skill, self.cfg.num_skills)
        return self.model.reward(self._features(b.obs), self._features(b.next_obs), b.skill)

    def learner_step(self, rng) -> dict:
        b = self.buffer.sample(rng, self.cfg.sac.batch_size)
        r = shape_reward(b.reward, self.diversity_reward(b), self.cfg.shaping, b.episode_return)
        info = sac_update(self.sac, self.skills, b, r, self.cfg.sac, rng)
        if isinstance(self.model, Discriminator):
            info["model_loss"] = train_discriminator(self.model, self._features(b.next_obs), b.skill)
        elif isinstance(self.model, SkillDynamics):
            info["model_loss"] = train_skill_dynamics(self.model, self._features(b.obs),
                                                      self._features(b.next_obs), b.skill)
        return info

    def iterate(self) -> None:
        """Collect one batch of synchronized episodes, learning after every vector step."""
        it = self.iteration + 1
        rng = stream(self.seed, "skill-iteration", it)
        env, n, T = self.env, self.cfg.sac.env_batch, self.env.horizon
        z = rng.integers(0, self.cfg.num_skills, size=n)
        s = envs.reset_batch(env, episode_seeds(rng, n))
        obs = np.empty((n, T + 1, env.obs_dim))
        acts = np.empty((n, T, 2))
        rews = np.empty((n, T))
        obs[:, 0] = envs.observe(env, s)
        for t in range(T):
            a = self.skills.sample_action(obs[:, t], z, rng)
            s, r, clipped = envs.step_batch(env, s, env.action_bound * a)
            obs[:, t + 1] = envs.observe(env, s)
            acts[:, t] = clipped / env.action_bound
            rews[:, t] = r
            if len(self.buffer):
                self.learner_step(rng)
        ret = rews.sum(axis=1)
        done = np.zeros((n, T))
        done[:, -1] = 1.0
        self.buffer.add(obs[:, :-1].reshape(n * T, -1), acts.reshape(n * T, 2), rews.reshape(-1),
                        obs[:, 1:].reshape(n * T, -1), done.reshape(-1), np.repeat(ret, T), np.repeat(z, T))
        self.iteration = it
        self.env_steps += n * T
        while self.env_steps >= (self.records + 1) * self.cfg.record_every:
            self.record()

    def record(self) -> None:
        self.records += 1
        ro_flags = passive_record(self.rep, self.skills, self.env, self.records)
        seeds = [self.records * 1000 + k for k in range(self.cfg.num_skills)]
        self.best_return = max(self.best_return, float(self.skills.evaluate(self.env, seeds).fitness.mean()))
        return ro_flags

    def repertoire(self) -> CvtRepertoire:
        return self.rep

    def metrics(self) -> QdMetrics:
        return self.rep.metrics(self.env.qd_offset)

    def state_dict(self) -> dict:
        r = self.rep
        sd = {"run.iteration": np.array(self.iteration), "run.env_steps": np.array(self.env_steps),
              "run.records": np.array(self.records), "run.best_return": np.array(self.best_return),
              "skills.params": self.skills.params,
              "rep.fitness": r.fitness, "rep.descriptors": r.descriptors, "rep.occupied": r.occupied,
              "rep.genotypes": r.genotypes if r.genotypes is not None else np.zeros((0, 0)),
              "rep.clip_count": np.array(r.clip_count)}
        sd.update(self.sac.state_dict())
        sd.update(self.buffer.state_dict())
        if self.model is not None:
            sd.update({"model.params": self.model.params})
            sd.update(_adam_sd("model.opt", self.model.opt))
            if isinstance(self.model, SkillDynamics):
                sd.update({"model.norm": np.concatenate([[self.model.count], self.model.mean, self.model.m2])})
        return sd

    def load_state_dict(self, sd) -> None:
        self.iteration, self.env_steps = int(sd["run.iteration"]), int(sd["run.env_steps"])
        self.records, self.best_return = int(sd["run.records"]), float(sd["run.best_return"])
        self.skills.params = np.array(sd["skills.params"])
        r = self.rep
        r.fitness, r.descriptors = np.array(sd["rep.fitness"]), np.array(sd["rep.descriptors"])
        r.occupied = np.array(sd["rep.occupied"])
        r.genotypes = np.array(sd["rep.genotypes"]) if sd["rep.genotypes"].size else None
        r.clip_count = int(sd["rep.clip_count"])
        self.sac.load_state_dict(sd)
        self.buffer = ReplayBuffer.from_state_dict(sd, self.env.obs_dim)
        if self.model is not None:
            self.model.params = np.array(sd["model.params"])
            self.model.opt = _adam_from_sd("model.opt", sd)
            if isinstance(self.model, SkillDynamics):
                norm = sd["model.norm"]
                d = self.model.dim
                self.model.count, self.model.mean, self.model.m2 = float(norm[0]), norm[1:1 + d], norm[1 + d:]
