"""Deterministic point environments, perturbation wrappers and the rollout engine.

All environments move a point on a bounded 2D plane by clipped increments.
State is the point position; the observation fed to policies is the position
rescaled to the arena (plus a hurdle-phase feature for ``point-hurdle``).
"""
from __future__ import annotations

import configparser
import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np

from . import nn

KINDS = ("point-maze", "point-trap", "point-omni", "point-gait", "point-hurdle")
PERTURBATIONS = ("dynamics-scale", "drift-scale", "move-target")
DYNAMICS_SCALE_RANGE = (0.0, 4.5)
DRIFT_SCALE_RANGE = (0.25, 50.0)


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    horizon: int = 250
    action_bound: float = 0.1
    arena: tuple[float, float, float, float] = (-1.0, -1.0, 1.0, 1.0)
    walls: tuple[tuple[float, float, float, float], ...] = ()
    target: tuple[float, float] | None = None
    dynamics_scale: tuple[float, float] = (1.0, 1.0)
    drift: tuple[float, float] = (0.0, 0.0)
    energy_coef: float = 0.01
    jitter: float = 1e-3
    gait_threshold: float = 0.0
    hurdle_spacing: float = 3.0
    jump_threshold: float = 0.05
    qd_offset: float = 0.0
    name: str = ""

    def __post_init__(self):
        fix = object.__setattr__
        fix(self, "horizon", int(self.horizon))
        fix(self, "arena", tuple(float(v) for v in self.arena))
        fix(self, "walls", tuple(tuple(float(v) for v in w) for w in self.walls))
        fix(self, "dynamics_scale", tuple(float(v) for v in self.dynamics_scale))
        fix(self, "drift", tuple(float(v) for v in self.drift))
        if self.target is not None:
            fix(self, "target", tuple(float(v) for v in self.target))
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        if not self.action_bound > 0:
            raise ValueError("action_bound must be positive")
        xmin, ymin, xmax, ymax = self.arena
        if not (xmin < 0 < xmax and ymin < 0 < ymax):
            raise ValueError("arena must strictly contain the origin")
        if len(self.dynamics_scale) != 2 or min(self.dynamics_scale) < 0:
            raise ValueError("dynamics_scale needs two non-negative entries")
        for w in self.walls:
            x1, y1, x2, y2 = w
            if x1 != x2 and y1 != y2:
                raise ValueError(f"wall {w} is not axis-aligned")
        if self.target is not None and not self.inside(self.target):
            raise ValueError(f"target {self.target} outside the arena")
        if self.kind == "point-maze" and self.target is None:
            raise ValueError("point-maze needs a target")
        if self.jitter < 0 or self.jitter > 1e-3:
            raise ValueError("reset jitter must lie in [0, 1e-3]")
        if _crosses_walls(np.zeros((1, 2)), np.zeros((1, 2)), self.wall_array).any():
            raise ValueError("the start position touches a wall")

    def inside(self, p) -> bool:
        xmin, ymin, xmax, ymax = self.arena
        return bool(xmin <= p[0] <= xmax and ymin <= p[1] <= ymax)

    @property
    def wall_array(self) -> np.ndarray:
        return np.asarray(self.walls, dtype=np.float64).reshape(-1, 4)

    @property
    def diagonal(self) -> float:
        xmin, ymin, xmax, ymax = self.arena
        return float(np.hypot(xmax - xmin, ymax - ymin))

    @property
    def obs_dim(self) -> int:
        return 4 if self.kind == "point-hurdle" else 2

    @property
    def descriptor_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "point-gait":
            return np.zeros(2), np.ones(2)
        xmin, ymin, xmax, ymax = self.arena
        return np.array([xmin, ymin]), np.array([xmax, ymax])


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    done: bool
    aux: np.ndarray


@dataclass
class Trajectory:
    transitions: list[Transition]
    fitness: float
    descriptor: np.ndarray


@dataclass
class Rollouts:
    """Batched episode data; leading axis indexes episodes."""
    states: np.ndarray       # (N, T + 1, 2)
    obs: np.ndarray          # (N, T + 1, obs_dim)
    actions: np.ndarray      # (N, T, 2), clipped
    rewards: np.ndarray      # (N, T)
    fitness: np.ndarray      # (N,)
    descriptors: np.ndarray  # (N, d)

    def __len__(self):
        return self.fitness.shape[0]

    @property
    def env_steps(self) -> int:
        return int(self.rewards.size)

    def summaries(self, points: int = 8) -> np.ndarray:
        """States at ``points`` evenly spaced timesteps, flattened."""
        T = self.states.shape[1] - 1
        idx = np.linspace(1, T, points).round().astype(int)
        return self.states[:, idx, :].reshape(len(self), -1)


# --- geometry -----------------------------------------------------------------

def _crosses_walls(p: np.ndarray, q: np.ndarray, walls: np.ndarray):
    """Per-segment flags (N,) and which wall types were hit (vertical, horizontal).

    A segment touching a wall counts as crossing it.
    """
    n = p.shape[0]
    if walls.shape[0] == 0:
        return np.zeros(n, dtype=bool)
    hit_v, hit_h = _wall_hits(p, q, walls)
    return hit_v | hit_h


def _wall_hits(p, q, walls):
    px, py = p[:, 0:1], p[:, 1:2]
    qx, qy = q[:, 0:1], q[:, 1:2]
    x1, y1, x2, y2 = (walls[:, i][None, :] for i in range(4))
    vertical = (x1 == x2) & (y1 != y2)
    horizontal = ~vertical
    with np.errstate(divide="ignore", invalid="ignore"):
        # vertical walls at x = x1 spanning [min(y1,y2), max(y1,y2)]
        dx = qx - px
        tv = (x1 - px) / dx
        yc = py + tv * (qy - py)
        lo_y, hi_y = np.minimum(y1, y2), np.maximum(y1, y2)
        on_v = (dx != 0) & (tv >= 0) & (tv <= 1) & (yc >= lo_y) & (yc <= hi_y)
        on_v |= (dx == 0) & (px == x1) & (np.maximum(py, qy) >= lo_y) & (np.minimum(py, qy) <= hi_y)
        # horizontal walls at y = y1 spanning [min(x1,x2), max(x1,x2)]
        dy = qy - py
        th = (y1 - py) / dy
        xc = px + th * (qx - px)
        lo_x, hi_x = np.minimum(x1, x2), np.maximum(x1, x2)
        on_h = (dy != 0) & (th >= 0) & (th <= 1) & (xc >= lo_x) & (xc <= hi_x)
        on_h |= (dy == 0) & (py == y1) & (np.maximum(px, qx) >= lo_x) & (np.minimum(px, qx) <= hi_x)
    hit_v = (on_v & vertical).any(axis=1)
    hit_h = (on_h & horizontal).any(axis=1)
    return hit_v, hit_h


def segment_crosses_wall(p, q, wall) -> bool:
    """Scalar segment/segment intersection test (touching counts)."""
    return bool(_crosses_walls(np.atleast_2d(p).astype(float), np.atleast_2d(q).astype(float),
                               np.asarray(wall, dtype=float).reshape(1, 4))[0])


# --- dynamics -----------------------------------------------------------------

def reset(spec: EnvSpec, seed: int) -> np.ndarray:
    return reset_batch(spec, [seed])[0]


def reset_batch(spec: EnvSpec, seeds) -> np.ndarray:
    out = np.zeros((len(seeds), 2))
    if spec.jitter > 0:
        for i, s in enumerate(seeds):
            out[i] = np.random.default_rng(int(s)).uniform(-spec.jitter, spec.jitter, size=2)
    return out


def observe(spec: EnvSpec, states: np.ndarray) -> np.ndarray:
    xmin, ymin, xmax, ymax = spec.arena
    center = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
    half = np.array([(xmax - xmin) / 2, (ymax - ymin) / 2])
    obs = (states - center) / half
    if spec.kind == "point-hurdle":
        phase = 2 * np.pi * states[..., :1] / spec.hurdle_spacing
        obs = np.concatenate([obs, np.sin(phase), np.cos(phase)], axis=-1)
    return obs


def step_batch(spec: EnvSpec, states: np.ndarray, actions: np.ndarray):
    """Advance N points by one step. Returns ``(next_states, rewards, clipped_actions)``."""
    actions = np.asarray(actions, dtype=np.float64)
    if not np.all(np.isfinite(actions)):
        raise ValueError("non-finite action rejected")
    b = spec.action_bound
    a = np.clip(actions, -b, b)
    disp = a * np.asarray(spec.dynamics_scale) + np.asarray(spec.drift)
    lo = np.array(spec.arena[:2])
    hi = np.array(spec.arena[2:])

    if spec.kind == "point-hurdle":
        disp[:, 1] = 0.0
        nxt = np.clip(states + disp, lo, hi)
        h = spec.hurdle_spacing
        # hurdles sit at x = k * spacing for k >= 1
        k_hi = np.floor(np.maximum(nxt[:, 0], states[:, 0]) / h)
        k_lo = np.floor(np.minimum(nxt[:, 0], states[:, 0]) / h)
        crossing = (k_hi > k_lo) & (k_hi >= 1)
        jumping = a[:, 1] * spec.dynamics_scale[1] > spec.jump_threshold
        blocked = crossing & ~jumping
        nxt[blocked, 0] = states[blocked, 0]
    else:
        nxt = np.clip(states + disp, lo, hi)
        walls = spec.wall_array
        if walls.shape[0]:
            hit_v, hit_h = _wall_hits(states, nxt, walls)
            hit = hit_v | hit_h
            if hit.any():
                mask = np.stack([~hit_v, ~hit_h], axis=1).astype(np.float64)
                cand = np.clip(states + disp * mask, lo, hi)
                still = _crosses_walls(states, cand, walls)
                cand[still] = states[still]
                nxt = np.where(hit[:, None], cand, nxt)

    energy = spec.energy_coef * np.sum((a / b) ** 2, axis=1)
    if spec.kind == "point-maze":
        rewards = -np.linalg.norm(nxt - np.asarray(spec.target), axis=1)
    elif spec.kind == "point-omni":
        rewards = -energy
    else:
        rewards = (nxt[:, 0] - states[:, 0]) - energy
    return nxt, rewards, a


def step(spec: EnvSpec, state, action, t: int = 0):
    """Single-point step. ``done`` is true only when ``t + 1`` reaches the horizon."""
    state = np.asarray(state, dtype=np.float64)
    if not spec.inside(state):
        raise ValueError(f"state {state} outside the arena")
    nxt, r, _ = step_batch(spec, state[None], np.asarray(action, dtype=np.float64)[None])
    return nxt[0], float(r[0]), t + 1 >= spec.horizon


def descriptors(spec: EnvSpec, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Behavior descriptors from a batch of state/action histories."""
    if spec.kind == "point-gait":
        active = actions * np.asarray(spec.dynamics_scale) > spec.gait_threshold
        return active.mean(axis=1)
    return states[:, -1, :].copy()


def rollout_batch(policy: Callable[[np.ndarray], np.ndarray], spec: EnvSpec, seeds,
                  record: bool = True) -> Rollouts:
    """Roll out ``len(seeds)`` episodes; ``policy`` maps observations (N, d) to actions (N, 2)."""
    n = len(seeds)
    T = spec.horizon
    s = reset_batch(spec, seeds)
    states = np.empty((n, T + 1, 2))
    actions = np.empty((n, T, 2))
    rewards = np.empty((n, T))
    states[:, 0] = s
    for t in range(T):
        act = policy(observe(spec, s))
        s, r, a = step_batch(spec, s, act)
        states[:, t + 1] = s
        actions[:, t] = a
        rewards[:, t] = r
    return Rollouts(states, observe(spec, states) if record else np.empty((n, 0, spec.obs_dim)),
                    actions, rewards, rewards.sum(axis=1), descriptors(spec, states, actions))


def rollout(policy: Callable[[np.ndarray], np.ndarray], spec: EnvSpec, seed: int) -> Trajectory:
    """Single episode with a per-observation policy ``obs (d,) -> action (2,)``."""
    ro = rollout_batch(lambda o: np.stack([policy(x) for x in o]), spec, [seed])
    T = spec.horizon
    trans = []
    for t in range(T):
        a = ro.actions[0, t]
        trans.append(Transition(ro.states[0, t], a, ro.states[0, t + 1], float(ro.rewards[0, t]),
                                t == T - 1, (a > spec.gait_threshold).astype(np.float64)))
    return Trajectory(trans, float(ro.fitness[0]), ro.descriptors[0])


def deterministic_policy(net: nn.NetSpec, params: np.ndarray, action_bound: float):
    """Closure ``obs -> bound * tanh(net(obs))`` over one genotype or a stacked population."""
    def act(obs):
        return action_bound * np.tanh(nn.forward(net, params, obs))
    return act


def evaluate_population(spec: EnvSpec, net: nn.NetSpec, population: np.ndarray, seeds,
                        workers: int = 1, record: bool = False) -> Rollouts:
    """Evaluate each genotype once (one seed each), optionally across worker threads.

    Chunks are independent, so the result does not depend on ``workers``.
    """
    population = np.atleast_2d(population)
    n = population.shape[0]
    seeds = list(seeds)
    if len(seeds) != n:
        raise ValueError("need one seed per genotype")

    def run(lo_hi):
        lo, hi = lo_hi
        pol = deterministic_policy(net, population[lo:hi], spec.action_bound)
        return rollout_batch(pol, spec, seeds[lo:hi], record=record)

    if workers <= 1 or n < 2:
        return run((0, n))
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    with ThreadPoolExecutor(workers) as ex:
        parts = list(ex.map(run, zip(bounds[:-1], bounds[1:])))
    return Rollouts(*(np.concatenate([getattr(p, f.name) for p in parts])
                      for f in dataclasses.fields(Rollouts)))


# --- perturbations ------------------------------------------------------------

def apply_perturbation(spec: EnvSpec, kind: str, value, channels=None) -> EnvSpec:
    """Return a modified copy of ``spec``; nominal values (1.0 / same target) change nothing."""
    if kind == "dynamics-scale":
        lo, hi = DYNAMICS_SCALE_RANGE
        if not lo <= float(value) <= hi:
            raise ValueError(f"dynamics-scale {value} outside [{lo}, {hi}]")
        chans = range(2) if channels is None else set(channels)
        scale = tuple(s * value if i in chans else s for i, s in enumerate(spec.dynamics_scale))
        return dataclasses.replace(spec, dynamics_scale=scale)
    if kind == "drift-scale":
        lo, hi = DRIFT_SCALE_RANGE
        if not lo <= float(value) <= hi:
            raise ValueError(f"drift-scale {value} outside [{lo}, {hi}]")
        return dataclasses.replace(spec, drift=tuple(d * value for d in spec.drift))
    if kind == "move-target":
        p = tuple(float(v) for v in value)
        if len(p) != 2 or not spec.inside(p):
            raise ValueError(f"target {value} outside the arena")
        return dataclasses.replace(spec, target=p)
    raise ValueError(f"unknown perturbation {kind!r}")


def perturbation_grid(kind: str, n: int = 20, nominal: float = 1.0) -> np.ndarray:
    """Log-spaced grid over the documented range, with the nominal value swapped in."""
    lo, hi = {"dynamics-scale": (0.1, DYNAMICS_SCALE_RANGE[1]),
              "drift-scale": DRIFT_SCALE_RANGE}[kind]
    grid = np.geomspace(lo, hi, n)
    grid[np.argmin(np.abs(np.log(grid) - np.log(nominal)))] = nominal
    return grid


# --- shipped layouts ----------------------------------------------------------

def _parse_tuple(text, cast=float):
    return tuple(cast(v) for v in text.replace(",", " ").split())


def parse_walls(text: str) -> tuple:
    vals = _parse_tuple(text)
    if len(vals) % 4:
        raise ValueError("walls need groups of four numbers")
    return tuple(vals[i:i + 4] for i in range(0, len(vals), 4))


_SPEC_FIELDS = {f.name: f for f in dataclasses.fields(EnvSpec)}


def spec_from_mapping(name: str, section) -> EnvSpec:
    kw = {"name": name}
    for key, raw in section.items():
        if key not in _SPEC_FIELDS:
            raise KeyError(f"unknown environment key {key!r} in {name!r}")
        if key == "walls":
            kw[key] = parse_walls(raw)
        elif key in ("arena", "target", "dynamics_scale", "drift"):
            kw[key] = _parse_tuple(raw)
        elif key == "kind":
            kw[key] = raw.strip()
        elif key == "horizon":
            kw[key] = int(raw)
        else:
            kw[key] = float(raw)
    return EnvSpec(**kw)


def load_env_specs(path=None) -> dict[str, EnvSpec]:
    parser = configparser.ConfigParser()
    if path is None:
        parser.read_string(resources.files("qdskills").joinpath("data/envs.ini").read_text())
    else:
        parser.read(path)
    return {name: spec_from_mapping(name, parser[name]) for name in parser.sections()}


def get_env(name: str, **overrides) -> EnvSpec:
    specs = load_env_specs()
    if name not in specs:
        raise KeyError(f"unknown environment {name!r}; available: {sorted(specs)}")
    spec = specs[name]
    return dataclasses.replace(spec, **overrides) if overrides else spec
