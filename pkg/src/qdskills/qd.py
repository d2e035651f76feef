"""MAP-Elites, PGA-MAP-Elites, AURORA and PGA-AURORA.

All four share one loop: pick parents from the container, vary them
(Iso+LineDD, optionally half of them by critic-guided gradient ascent),
evaluate the children and insert them. The containers differ: a CVT
repertoire over hand-defined descriptors, or an unstructured archive over
descriptors learned by an autoencoder on trajectory summaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import envs, nn
from .repertoire import CvtRepertoire, QdMetrics, UnstructuredArchive, cvt_build
from .seeding import episode_seeds, stream
from .variation import VariationConfig, iso_line_dd

QD_METHODS = ("map-elites", "pga-map-elites", "aurora", "pga-aurora")
GA_BATCH_SIZE = 1000
PG_BATCH_SIZE = 100


def default_batch_size(method: str) -> int:
    """Evaluations per iteration: PG-assisted methods use smaller, more frequent batches."""
    return PG_BATCH_SIZE if method.startswith("pga-") else GA_BATCH_SIZE


@dataclass(frozen=True)
class Td3Config:
    critic_hidden: tuple[int, ...] = (64, 64)
    critic_lr: float = 3e-4
    greedy_lr: float = 3e-4
    policy_lr: float = 1e-3
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    discount: float = 0.99
    reward_scaling: float = 1.0
    tau: float = 0.005
    policy_delay: int = 2
    batch_size: int = 256
    critic_steps: int = 300
    pg_steps: int = 100
    pg_proportion: float = 0.5
    buffer_capacity: int = 1_000_000


@dataclass(frozen=True)
class AuroraConfig:
    latent_dim: int = 5
    l_init: float = 0.2
    budget: int = 1024
    summary_points: int = 8
    ae_hidden: tuple[int, ...] = (64,)
    ae_lr: float = 1e-3
    ae_steps: int = 500
    ae_batch: int = 256
    retrain_first: int = 10
    retrain_ratio: int = 2


@dataclass(frozen=True)
class QdConfig:
    method: str = "map-elites"
    hidden: tuple[int, ...] = (64, 64)
    num_cells: int = 1024
    cvt_seed: int = 0
    init_batch: int = 0          # 0 means "same as batch_size"
    init_bias_scale: float = 0.1
    variation: VariationConfig | None = None   # None: default sigmas, batch size from the method
    td3: Td3Config = Td3Config()
    aurora: AuroraConfig = AuroraConfig()

    def __post_init__(self):
        if self.method not in QD_METHODS:
            raise ValueError(f"unknown QD method {self.method!r}")
        if self.variation is None:
            object.__setattr__(self, "variation", VariationConfig(batch_size=default_batch_size(self.method)))

    @property
    def uses_pg(self) -> bool:
        return self.method.startswith("pga-")

    @property
    def unstructured(self) -> bool:
        return self.method.endswith("aurora")

    @property
    def initial_batch(self) -> int:
        return self.init_batch or self.variation.batch_size


# --- replay buffer -------------------------------------------------------------

@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray        # normalized to [-1, 1]
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    episode_return: np.ndarray
    skill: np.ndarray


class ReplayBuffer:
    """Ring buffer of transitions, grown on demand up to ``capacity``."""

    FIELDS = ("obs", "action", "reward", "next_obs", "done", "episode_return", "skill")

    def __init__(self, capacity: int, obs_dim: int, act_dim: int = 2):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.pos = 0
        self.size = 0
        self._alloc(0)

    def _alloc(self, n):
        self.data = {"obs": np.zeros((n, self.obs_dim)), "action": np.zeros((n, self.act_dim)),
                     "reward": np.zeros(n), "next_obs": np.zeros((n, self.obs_dim)),
                     "done": np.zeros(n), "episode_return": np.zeros(n),
                     "skill": np.zeros(n, dtype=np.int64)}

    def __len__(self) -> int:
        return self.size

    def _grow(self, needed):
        cur = self.data["reward"].shape[0]
        if needed <= cur or cur == self.capacity:
            return
        new = min(self.capacity, max(needed, 2 * cur, 1024))
        old = self.data
        self._alloc(new)
        for k in self.FIELDS:
            self.data[k][:cur] = old[k]

    def add(self, obs, action, reward, next_obs, done, episode_return, skill=None) -> None:
        n = len(reward)
        if skill is None:
            skill = np.zeros(n, dtype=np.int64)
        cols = dict(obs=obs, action=action, reward=reward, next_obs=next_obs, done=done,
                    episode_return=episode_return, skill=skill)
        if n > self.capacity:  # only the newest transitions survive
            cols = {k: np.asarray(v)[-self.capacity:] for k, v in cols.items()}
            n = self.capacity
        self._grow(self.size + n)
        idx = (self.pos + np.arange(n)) % self.capacity
        for k, v in cols.items():
            self.data[k][idx] = v
        self.pos = int((self.pos + n) % self.capacity)
        self.size = min(self.capacity, self.size + n)

    def add_rollouts(self, ro: envs.Rollouts, action_bound: float, skills=None) -> int:
        n, T = ro.rewards.shape
        done = np.zeros((n, T))
        done[:, -1] = 1.0
        sk = None if skills is None else np.repeat(np.asarray(skills, dtype=np.int64), T)
        self.add(ro.obs[:, :-1].reshape(n * T, -1), (ro.actions / action_bound).reshape(n * T, -1),
                 ro.rewards.reshape(-1), ro.obs[:, 1:].reshape(n * T, -1), done.reshape(-1),
                 np.repeat(ro.fitness, T), sk)
        return n * T

    def sample(self, rng: np.random.Generator, n: int) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=n)
        return Batch(*(self.data[k][idx] for k in self.FIELDS))

    def state_dict(self) -> dict:
        sd = {f"buffer.{k}": self.data[k][:self.size] for k in self.FIELDS}
        sd.update({"buffer.pos": np.array(self.pos), "buffer.capacity": np.array(self.capacity)})
        return sd

    @classmethod
    def from_state_dict(cls, sd, obs_dim, act_dim=2) -> "ReplayBuffer":
        buf = cls(int(sd["buffer.capacity"]), obs_dim, act_dim)
        size = sd["buffer.reward"].shape[0]
        buf._alloc(size)
        for k in cls.FIELDS:
            buf.data[k][:] = sd[f"buffer.{k}"]
        buf.size, buf.pos = size, int(sd["buffer.pos"])
        return buf


# --- TD3 ------------------------------------------------------------------------

@dataclass
class Td3State:
    critic_spec: nn.NetSpec
    actor_spec: nn.NetSpec
    critics: np.ndarray          # (2, n) stacked twin critics
    target_critics: np.ndarray
    actor: np.ndarray            # greedy actor, used for target-policy smoothing
    target_actor: np.ndarray
    critic_opt: nn.AdamState
    actor_opt: nn.AdamState
    steps: int = 0

    def state_dict(self) -> dict:
        sd = {"td3.critics": self.critics, "td3.target_critics": self.target_critics,
              "td3.actor": self.actor, "td3.target_actor": self.target_actor, "td3.steps": np.array(self.steps)}
        sd.update(_adam_sd("td3.critic_opt", self.critic_opt))
        sd.update(_adam_sd("td3.actor_opt", self.actor_opt))
        return sd

    def load_state_dict(self, sd) -> None:
        for k in ("critics", "target_critics", "actor", "target_actor"):
            setattr(self, k, np.array(sd[f"td3.{k}"]))
        self.steps = int(sd["td3.steps"])
        self.critic_opt = _adam_from_sd("td3.critic_opt", sd)
        self.actor_opt = _adam_from_sd("td3.actor_opt", sd)


def _adam_sd(prefix, st: nn.AdamState) -> dict:
    return {f"{prefix}.m": st.m, f"{prefix}.v": st.v,
            f"{prefix}.hyper": np.array([st.step, st.lr, st.beta1, st.beta2, st.eps])}


def _adam_from_sd(prefix, sd) -> nn.AdamState:
    step, lr, b1, b2, eps = sd[f"{prefix}.hyper"]
    return nn.AdamState(np.array(sd[f"{prefix}.m"]), np.array(sd[f"{prefix}.v"]), int(step), lr, b1, b2, eps)


def td3_init(actor_spec: nn.NetSpec, cfg: Td3Config, rng: np.random.Generator) -> Td3State:
    obs_dim, act_dim = actor_spec.n_inputs, actor_spec.n_outputs
    cspec = nn.mlp((obs_dim + act_dim, *cfg.critic_hidden, 1), "relu")
    critics = np.stack([nn.init_params(cspec, rng) for _ in range(2)])
    actor = nn.init_params(actor_spec, rng)
    return Td3State(cspec, actor_spec, critics, critics.copy(), actor, actor.copy(),
                    nn.adam_init(critics, cfg.critic_lr), nn.adam_init(actor, cfg.greedy_lr))


def _sa(obs, act):
    return np.concatenate([obs, act], axis=-1)


def critic_targets(td3: Td3State, batch: Batch, cfg: Td3Config, rng: np.random.Generator) -> np.ndarray:
    """Clipped double-Q targets with target-policy smoothing.

    Episodes only end at the time limit, so every transition bootstraps.
    """
    a_next = np.tanh(nn.forward(td3.actor_spec, td3.target_actor, batch.next_obs))
    noise = np.clip(cfg.policy_noise * rng.standard_normal(a_next.shape), -cfg.noise_clip, cfg.noise_clip)
    a_next = np.clip(a_next + noise, -1.0, 1.0)
    x = _sa(batch.next_obs, a_next)
    q_next = nn.forward(td3.critic_spec, td3.target_critics, np.stack([x, x]))[..., 0]
    return cfg.reward_scaling * batch.reward + cfg.discount * q_next.min(axis=0)


def critic_loss(td3: Td3State, batch: Batch, y: np.ndarray) -> float:
    x = _sa(batch.obs, batch.action)
    q = nn.forward(td3.critic_spec, td3.critics, np.stack([x, x]))[..., 0]
    return float(np.mean((q - y) ** 2, axis=1).sum())


def _actor_grad(actor_spec, critic_spec, critic1, params, obs):
    """Gradient of -mean Q1(s, pi(s)) w.r.t. stacked or single actor params."""
    out, cache = nn.forward_with_cache(actor_spec, params, obs)
    a = np.tanh(out)
    x = _sa(np.broadcast_to(obs, a.shape[:-1] + obs.shape[-1:]), a)
    flat = x.reshape(-1, x.shape[-1])
    n = flat.shape[0] // (a.shape[0] if params.ndim == 2 else 1)
    _, dx = nn.backward(critic_spec, critic1, flat, np.full((flat.shape[0], 1), -1.0 / n), param_grad=False)
    da = dx[:, -a.shape[-1]:].reshape(a.shape)
    g, _ = nn.backward(actor_spec, params, obs, da * (1.0 - a * a), cache)
    return g


def td3_critic_update(td3: Td3State, buffer: ReplayBuffer, n_steps: int, cfg: Td3Config,
                      rng: np.random.Generator) -> list[float]:
    """Train the twin critics (and the delayed greedy actor) in place; returns per-step losses."""
    if len(buffer) == 0:
        raise ValueError("critic training needs a non-empty replay buffer")
    losses = []
    for _ in range(n_steps):
        b = buffer.sample(rng, cfg.batch_size)
        y = critic_targets(td3, b, cfg, rng)
        x = _sa(b.obs, b.action)
        xx = np.stack([x, x])
        q, cache = nn.forward_with_cache(td3.critic_spec, td3.critics, xx)
        err = q[..., 0] - y
        losses.append(float(np.mean(err ** 2, axis=1).sum()))
        g, _ = nn.backward(td3.critic_spec, td3.critics, xx, (2.0 / len(y)) * err[..., None], cache)
        td3.critic_opt, td3.critics = nn.adam_step(td3.critic_opt, td3.critics, g)
        td3.steps += 1
        if td3.steps % cfg.policy_delay == 0:
            g = _actor_grad(td3.actor_spec, td3.critic_spec, td3.critics[0], td3.actor, b.obs)
            td3.actor_opt, td3.actor = nn.adam_step(td3.actor_opt, td3.actor, g)
            td3.target_critics = nn.polyak(td3.target_critics, td3.critics, cfg.tau)
            td3.target_actor = nn.polyak(td3.target_actor, td3.actor, cfg.tau)
    return losses


def pg_variation(genotypes: np.ndarray, td3: Td3State, buffer: ReplayBuffer, n_steps: int,
                 cfg: Td3Config, rng: np.random.Generator) -> np.ndarray:
    """Gradient ascent on critic 1 for every genotype in a stacked batch.

    Each child has its own Adam moments; all children see the same state batch
    at a given step.
    """
    params = np.atleast_2d(np.asarray(genotypes, dtype=np.float64)).copy()
    if n_steps == 0:
        return params.reshape(np.shape(genotypes))
    if len(buffer) == 0:
        raise ValueError("policy-gradient variation needs a non-empty replay buffer")
    opt = nn.adam_init(params, cfg.policy_lr)
    for _ in range(n_steps):
        obs = buffer.sample(rng, cfg.batch_size).obs
        obs_p = np.broadcast_to(obs, (params.shape[0],) + obs.shape)
        g = _actor_grad(td3.actor_spec, td3.critic_spec, td3.critics[0], params, obs_p)
        opt, params = nn.adam_step(opt, params, g)
    return params.reshape(np.shape(genotypes))


def mean_q_of_policy(td3: Td3State, params: np.ndarray, obs: np.ndarray) -> float:
    a = np.tanh(nn.forward(td3.actor_spec, params, obs))
    return float(nn.forward(td3.critic_spec, td3.critics[0], _sa(obs, a)).mean())


# --- AURORA -------------------------------------------------------------------

@dataclass
class AuroraState:
    encoder_spec: nn.NetSpec
    decoder_spec: nn.NetSpec
    encoder: np.ndarray
    decoder: np.ndarray
    archive: UnstructuredArchive
    opt: nn.AdamState | None = None
    losses: list = field(default_factory=list)
    trained: int = 0
    # latent codes are standardized with statistics of the last training set,
    # so the archive threshold l is measured in units of latent spread
    latent_mean: np.ndarray | None = None
    latent_std: np.ndarray | None = None

    @property
    def latent_dim(self) -> int:
        return self.encoder_spec.n_outputs

    def raw_encode(self, summaries: np.ndarray) -> np.ndarray:
        return nn.forward(self.encoder_spec, self.encoder, summaries)

    def encode(self, summaries: np.ndarray) -> np.ndarray:
        z = self.raw_encode(summaries)
        if self.latent_mean is None:
            return z
        return (z - self.latent_mean) / self.latent_std

    def reconstruction_loss(self, data: np.ndarray) -> float:
        rec = nn.forward(self.decoder_spec, self.decoder, self.raw_encode(data))
        return float(np.mean(((rec - data) ** 2).sum(axis=1)))

    def state_dict(self) -> dict:
        sd = {"ae.encoder": self.encoder, "ae.decoder": self.decoder, "ae.trained": np.array(self.trained),
              "ae.losses": np.array(self.losses, dtype=np.float64)}
        if self.latent_mean is not None:
            sd.update({"ae.latent_mean": self.latent_mean, "ae.latent_std": self.latent_std})
        if self.opt is not None:
            sd.update(_adam_sd("ae.opt", self.opt))
        sd.update({f"archive.{k}": v for k, v in self.archive.state_dict().items()})
        return sd

    def load_state_dict(self, sd) -> None:
        self.encoder, self.decoder = np.array(sd["ae.encoder"]), np.array(sd["ae.decoder"])
        self.trained = int(sd["ae.trained"])
        self.losses = sd["ae.losses"].tolist()
        self.opt = _adam_from_sd("ae.opt", sd) if "ae.opt.m" in sd else None
        if "ae.latent_mean" in sd:
            self.latent_mean, self.latent_std = np.array(sd["ae.latent_mean"]), np.array(sd["ae.latent_std"])
        self.archive = UnstructuredArchive.from_state_dict(
            {k[len("archive."):]: v for k, v in sd.items() if k.startswith("archive.")})


def aurora_init(summary_dim: int, cfg: AuroraConfig, rng: np.random.Generator) -> AuroraState:
    enc = nn.mlp((summary_dim, *cfg.ae_hidden, cfg.latent_dim))
    dec = nn.mlp((cfg.latent_dim, *cfg.ae_hidden[::-1], summary_dim))
    return AuroraState(enc, dec, nn.init_params(enc, rng), nn.init_params(dec, rng),
                       UnstructuredArchive(cfg.l_init, cfg.budget))


def aurora_train_autoencoder(state: AuroraState, data: np.ndarray, cfg: AuroraConfig,
                             rng: np.random.Generator, steps: int | None = None) -> AuroraState:
    """Minimize squared reconstruction error of trajectory summaries with Adam."""
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] == 0:
        raise ValueError("autoencoder training needs data")
    steps = cfg.ae_steps if steps is None else steps
    n_enc = state.encoder_spec.n_params
    params = np.concatenate([state.encoder, state.decoder])
    opt = state.opt if state.opt is not None else nn.adam_init(params, cfg.ae_lr)
    for _ in range(steps):
        x = data[rng.integers(0, data.shape[0], size=min(cfg.ae_batch, data.shape[0]))]
        z, c_enc = nn.forward_with_cache(state.encoder_spec, params[:n_enc], x)
        rec, c_dec = nn.forward_with_cache(state.decoder_spec, params[n_enc:], z)
        up = 2.0 * (rec - x) / x.shape[0]
        g_dec, dz = nn.backward(state.decoder_spec, params[n_enc:], z, up, c_dec)
        g_enc, _ = nn.backward(state.encoder_spec, params[:n_enc], x, dz, c_enc)
        opt, params = nn.adam_step(opt, params, np.concatenate([g_enc, g_dec]))
    state.encoder, state.decoder = params[:n_enc].copy(), params[n_enc:].copy()
    state.opt = opt
    state.trained += 1
    z = state.raw_encode(data)
    state.latent_mean = z.mean(axis=0)
    state.latent_std = np.maximum(z.std(axis=0), 1e-8)
    state.losses.append(state.reconstruction_loss(data))
    return state


def aurora_recompute_descriptors(state: AuroraState) -> AuroraState:
    arch = state.archive
    if len(arch):
        arch.descriptors = state.encode(arch.summaries)
        arch.refilter()
    return state


def is_retrain_iteration(iteration: int, first: int = 10, ratio: int = 2) -> bool:
    """True at first, first*ratio, first*ratio**2, ..."""
    if iteration < first or iteration % first:
        return False
    q = iteration // first
    while q % ratio == 0:
        q //= ratio
    return q == 1


def normalized_summaries(env: envs.EnvSpec, ro: envs.Rollouts, points: int) -> np.ndarray:
    xmin, ymin, xmax, ymax = env.arena
    center = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2] * points)
    half = np.array([(xmax - xmin) / 2, (ymax - ymin) / 2] * points)
    return (ro.summaries(points) - center) / half


# --- iterations -----------------------------------------------------------------

def policy_spec(env: envs.EnvSpec, hidden=(64, 64)) -> nn.NetSpec:
    return nn.mlp((env.obs_dim, *hidden, 2))


def random_population(spec: nn.NetSpec, n: int, rng: np.random.Generator, bias_scale: float = 0.1) -> np.ndarray:
    return np.stack([nn.init_params(spec, rng, bias_scale) for _ in range(n)])


def _offspring(parents_a, parents_b, cfg: QdConfig, rng, td3=None, buffer=None):
    """First ``n_pg`` children by policy gradient, the rest by Iso+LineDD."""
    n = parents_a.shape[0]
    children = iso_line_dd(parents_a, parents_b, cfg.variation, rng)
    if cfg.uses_pg:
        n_pg = int(round(n * cfg.td3.pg_proportion))
        if n_pg:
            children[:n_pg] = pg_variation(parents_a[:n_pg], td3, buffer, cfg.td3.pg_steps, cfg.td3, rng)
    return children


def _select_rows(genotypes: np.ndarray, count: int, rng) -> np.ndarray:
    if genotypes.shape[0] == 0:
        raise ValueError("cannot select from an empty container")
    return genotypes[rng.integers(0, genotypes.shape[0], size=count)].copy()


def _evaluate(env, spec, children, rng, workers, record):
    return envs.evaluate_population(env, spec, children, episode_seeds(rng, children.shape[0]),
                                    workers=workers, record=record)


def map_elites_iteration(rep: CvtRepertoire, env: envs.EnvSpec, spec: nn.NetSpec, cfg: QdConfig,
                         rng: np.random.Generator, workers: int = 1) -> envs.Rollouts:
    _, elites, _, _ = rep.elites()
    n = cfg.variation.batch_size
    children = _offspring(_select_rows(elites, n, rng), _select_rows(elites, n, rng), cfg, rng)
    ro = _evaluate(env, spec, children, rng, workers, record=False)
    rep.insert_batch(children, ro.fitness, ro.descriptors)
    return ro


def pga_iteration(rep: CvtRepertoire, env: envs.EnvSpec, spec: nn.NetSpec, td3: Td3State,
                  buffer: ReplayBuffer, cfg: QdConfig, rng: np.random.Generator,
                  workers: int = 1) -> envs.Rollouts:
    _, elites, _, _ = rep.elites()
    n = cfg.variation.batch_size
    children = _offspring(_select_rows(elites, n, rng), _select_rows(elites, n, rng), cfg, rng, td3, buffer)
    ro = _evaluate(env, spec, children, rng, workers, record=True)
    buffer.add_rollouts(ro, env.action_bound)
    td3_critic_update(td3, buffer, cfg.td3.critic_steps, cfg.td3, rng)
    rep.insert_batch(children, ro.fitness, ro.descriptors)
    return ro


def _aurora_insert(state: AuroraState, env, children, ro, cfg: QdConfig):
    summ = normalized_summaries(env, ro, cfg.aurora.summary_points)
    state.archive.insert_batch(children, ro.fitness, state.encode(summ), summ, ro.descriptors)


def _aurora_maybe_retrain(state: AuroraState, iteration: int, cfg: QdConfig, rng):
    if is_retrain_iteration(iteration, cfg.aurora.retrain_first, cfg.aurora.retrain_ratio):
        aurora_train_autoencoder(state, state.archive.summaries, cfg.aurora, rng)
        aurora_recompute_descriptors(state)


def aurora_iteration(state: AuroraState, env: envs.EnvSpec, spec: nn.NetSpec, cfg: QdConfig,
                     rng: np.random.Generator, iteration: int, workers: int = 1) -> envs.Rollouts:
    g = state.archive.genotypes
    n = cfg.variation.batch_size
    children = _offspring(_select_rows(g, n, rng), _select_rows(g, n, rng), cfg, rng)
    ro = _evaluate(env, spec, children, rng, workers, record=False)
    _aurora_insert(state, env, children, ro, cfg)
    _aurora_maybe_retrain(state, iteration, cfg, rng)
    return ro


def pga_aurora_iteration(state: AuroraState, env: envs.EnvSpec, spec: nn.NetSpec, td3: Td3State,
                         buffer: ReplayBuffer, cfg: QdConfig, rng: np.random.Generator, iteration: int,
                         workers: int = 1) -> envs.Rollouts:
    g = state.archive.genotypes
    n = cfg.variation.batch_size
    children = _offspring(_select_rows(g, n, rng), _select_rows(g, n, rng), cfg, rng, td3, buffer)
    ro = _evaluate(env, spec, children, rng, workers, record=True)
    buffer.add_rollouts(ro, env.action_bound)
    td3_critic_update(td3, buffer, cfg.td3.critic_steps, cfg.td3, rng)
    _aurora_insert(state, env, children, ro, cfg)
    _aurora_maybe_retrain(state, iteration, cfg, rng)
    return ro


# --- run driver -----------------------------------------------------------------

class QdRun:
    """Owns the full state of one QD training run; checkpointable between iterations."""

    def __init__(self, env: envs.EnvSpec, cfg: QdConfig, seed: int, workers: int = 1):
        self.env, self.cfg, self.seed, self.workers = env, cfg, int(seed), workers
        self.spec = policy_spec(env, cfg.hidden)
        self.iteration = 0
        self.env_steps = 0
        bounds = env.descriptor_bounds
        self.centroids = cvt_build(cfg.num_cells, bounds, cfg.cvt_seed)
        self.rep = CvtRepertoire(self.centroids, bounds, env.name)
        self.td3 = self.buffer = self.aurora = None
        if cfg.uses_pg:
            self.td3 = td3_init(self.spec, cfg.td3, stream(seed, "td3-init"))
            self.buffer = ReplayBuffer(cfg.td3.buffer_capacity, env.obs_dim)
        if cfg.unstructured:
            self.aurora = aurora_init(2 * cfg.aurora.summary_points, cfg.aurora, stream(seed, "ae-init"))

    def initialize(self) -> None:
        rng = stream(self.seed, "init")
        pop = random_population(self.spec, self.cfg.initial_batch, rng, self.cfg.init_bias_scale)
        ro = _evaluate(self.env, self.spec, pop, rng, self.workers, record=self.cfg.uses_pg)
        self.env_steps += ro.env_steps
        if self.cfg.uses_pg:
            self.buffer.add_rollouts(ro, self.env.action_bound)
            td3_critic_update(self.td3, self.buffer, self.cfg.td3.critic_steps, self.cfg.td3, rng)
        if self.cfg.unstructured:
            summ = normalized_summaries(self.env, ro, self.cfg.aurora.summary_points)
            aurora_train_autoencoder(self.aurora, summ, self.cfg.aurora, rng)
            self.aurora.archive.insert_batch(pop, ro.fitness, self.aurora.encode(summ), summ, ro.descriptors)
        else:
            self.rep.insert_batch(pop, ro.fitness, ro.descriptors)

    def iterate(self) -> envs.Rollouts:
        it = self.iteration + 1
        rng = stream(self.seed, "iteration", it)
        m = self.cfg.method
        if m == "map-elites":
            ro = map_elites_iteration(self.rep, self.env, self.spec, self.cfg, rng, self.workers)
        elif m == "pga-map-elites":
            ro = pga_iteration(self.rep, self.env, self.spec, self.td3, self.buffer, self.cfg, rng, self.workers)
        elif m == "aurora":
            ro = aurora_iteration(self.aurora, self.env, self.spec, self.cfg, rng, it, self.workers)
        else:
            ro = pga_aurora_iteration(self.aurora, self.env, self.spec, self.td3, self.buffer, self.cfg,
                                      rng, it, self.workers)
        self.iteration = it
        self.env_steps += ro.env_steps
        return ro

    def repertoire(self) -> CvtRepertoire:
        """CVT view used for metrics; AURORA entries are placed by their hand-defined descriptors."""
        if not self.cfg.unstructured:
            return self.rep
        rep = CvtRepertoire(self.centroids, self.env.descriptor_bounds, self.env.name)
        arch = self.aurora.archive
        if len(arch):
            rep.insert_batch(arch.genotypes, arch.fitness, arch.env_descriptors)
        return rep

    def metrics(self) -> QdMetrics:
        return self.repertoire().metrics(self.env.qd_offset)

    def state_dict(self) -> dict:
        sd = {"run.iteration": np.array(self.iteration), "run.env_steps": np.array(self.env_steps)}
        if not self.cfg.unstructured:
            r = self.rep
            sd.update({"rep.fitness": r.fitness, "rep.descriptors": r.descriptors, "rep.occupied": r.occupied,
                       "rep.genotypes": r.genotypes if r.genotypes is not None else np.zeros((0, 0)),
                       "rep.clip_count": np.array(r.clip_count)})
        if self.td3 is not None:
            sd.update(self.td3.state_dict())
            sd.update(self.buffer.state_dict())
        if self.aurora is not None:
            sd.update(self.aurora.state_dict())
        return sd

    def load_state_dict(self, sd) -> None:
        self.iteration = int(sd["run.iteration"])
        self.env_steps = int(sd["run.env_steps"])
        if not self.cfg.unstructured:
            r = self.rep
            r.fitness, r.descriptors = np.array(sd["rep.fitness"]), np.array(sd["rep.descriptors"])
            r.occupied = np.array(sd["rep.occupied"])
            r.genotypes = np.array(sd["rep.genotypes"]) if sd["rep.genotypes"].size else None
            r.clip_count = int(sd["rep.clip_count"])
        if self.td3 is not None:
            self.td3.load_state_dict(sd)
            self.buffer = ReplayBuffer.from_state_dict(sd, self.env.obs_dim)
        if self.aurora is not None:
            self.aurora.load_state_dict(sd)
