"""Elite containers: CVT repertoires, the distance-thresholded archive, and QD metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from sklearn.cluster import KMeans

SAMPLES_PER_CELL = 50
KMEANS_ITERATIONS = 100


@dataclass(frozen=True)
class QdMetrics:
    max_fitness: float | None
    coverage: int
    qd_score: float
    offset: float


def _check_bounds(lo, hi):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ValueError("bounds must be two vectors of equal length")
    if np.any(hi <= lo):
        raise ValueError(f"degenerate descriptor bounds {lo} .. {hi}")
    return lo, hi


@lru_cache(maxsize=16)
def _cvt_cached(num_cells: int, lo: tuple, hi: tuple, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo_a, hi_a = np.array(lo), np.array(hi)
    samples = rng.uniform(lo_a, hi_a, size=(SAMPLES_PER_CELL * num_cells, lo_a.size))
    # sklearn relocates empty clusters to far-away samples, so no cell ends up empty
    km = KMeans(n_clusters=num_cells, init="k-means++", n_init=1, max_iter=KMEANS_ITERATIONS,
                random_state=seed, algorithm="lloyd")
    km.fit(samples)
    centroids = np.clip(km.cluster_centers_, lo_a, hi_a)
    centroids.setflags(write=False)
    return centroids


def cvt_build(num_cells: int, bounds, seed: int) -> np.ndarray:
    """Centroids of a k-means tessellation of the descriptor box ``bounds = (lo, hi)``."""
    if num_cells < 1:
        raise ValueError("num_cells must be at least 1")
    lo, hi = _check_bounds(*bounds)
    return _cvt_cached(int(num_cells), tuple(lo), tuple(hi), int(seed)).copy()


class CvtRepertoire:
    """One elite per Voronoi cell. Single owner; inserts mutate in place."""

    def __init__(self, centroids: np.ndarray, bounds, env_id: str = ""):
        self.centroids = np.asarray(centroids, dtype=np.float64)
        self.lo, self.hi = _check_bounds(*bounds)
        if np.any(self.centroids < self.lo) or np.any(self.centroids > self.hi):
            raise ValueError("centroids must lie inside the descriptor bounds")
        self.env_id = env_id
        n, d = self.centroids.shape
        self.fitness = np.full(n, -np.inf)
        self.descriptors = np.zeros((n, d))
        self.occupied = np.zeros(n, dtype=bool)
        self.genotypes: np.ndarray | None = None
        self.clip_count = 0
        self._tree = cKDTree(self.centroids)

    @classmethod
    def build(cls, num_cells: int, bounds, seed: int, env_id: str = "") -> "CvtRepertoire":
        return cls(cvt_build(num_cells, bounds, seed), bounds, env_id)

    @property
    def num_cells(self) -> int:
        return self.centroids.shape[0]

    @property
    def coverage(self) -> int:
        return int(self.occupied.sum())

    def empty_copy(self) -> "CvtRepertoire":
        return CvtRepertoire(self.centroids, (self.lo, self.hi), self.env_id)

    def cell_of(self, descriptors: np.ndarray) -> np.ndarray:
        return self._tree.query(np.atleast_2d(descriptors))[1]

    def _clip(self, desc: np.ndarray) -> np.ndarray:
        clipped = np.clip(desc, self.lo, self.hi)
        self.clip_count += int(np.any(clipped != desc, axis=-1).sum())
        return clipped

    def insert(self, genotype, fitness: float, descriptor) -> bool:
        return bool(self.insert_batch(np.asarray(genotype)[None], [fitness],
                                      np.asarray(descriptor, dtype=np.float64)[None])[0])

    def insert_batch(self, genotypes, fitnesses, descriptors) -> np.ndarray:
        """Insert candidates in index order; returns per-candidate acceptance flags.

        Equivalent to calling :meth:`insert` once per candidate: a later
        candidate must strictly beat whatever holds the cell at its turn.
        """
        genotypes = np.atleast_2d(np.asarray(genotypes, dtype=np.float64))
        fitnesses = np.asarray(fitnesses, dtype=np.float64).reshape(-1)
        descriptors = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
        if not np.all(np.isfinite(fitnesses)):
            raise ValueError("non-finite fitness cannot be inserted")
        if self.genotypes is None:
            self.genotypes = np.zeros((self.num_cells, genotypes.shape[1]))
        elif genotypes.shape[1] != self.genotypes.shape[1]:
            raise ValueError("genotype length differs from stored elites")
        descriptors = self._clip(descriptors)
        cells = self.cell_of(descriptors)
        best = {}
        accepted = np.zeros(len(fitnesses), dtype=bool)
        for i, (c, f) in enumerate(zip(cells.tolist(), fitnesses.tolist())):
            held = best[c][1] if c in best else self.fitness[c]
            if f > held:
                best[c] = (i, f)
                accepted[i] = True
        if best:
            cs = np.fromiter(best.keys(), dtype=np.int64)
            idx = np.fromiter((v[0] for v in best.values()), dtype=np.int64)
            self.genotypes[cs] = genotypes[idx]
            self.fitness[cs] = fitnesses[idx]
            self.descriptors[cs] = descriptors[idx]
            self.occupied[cs] = True
        return accepted

    def elites(self):
        """(cell indices, genotypes, fitnesses, descriptors) of occupied cells."""
        cells = np.flatnonzero(self.occupied)
        g = self.genotypes[cells] if self.genotypes is not None else np.zeros((0, 0))
        return cells, g, self.fitness[cells], self.descriptors[cells]

    def metrics(self, offset: float = 0.0) -> QdMetrics:
        return qd_metrics(self, offset)

    # --- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        np.savez(path, centroids=self.centroids, lo=self.lo, hi=self.hi, env_id=np.array(self.env_id),
                 fitness=self.fitness, descriptors=self.descriptors, occupied=self.occupied,
                 genotypes=self.genotypes if self.genotypes is not None else np.zeros((0, 0)),
                 clip_count=np.array(self.clip_count))

    @classmethod
    def load(cls, path) -> "CvtRepertoire":
        with np.load(path, allow_pickle=False) as z:
            rep = cls(z["centroids"], (z["lo"], z["hi"]), str(z["env_id"]))
            rep.fitness = z["fitness"].copy()
            rep.descriptors = z["descriptors"].copy()
            rep.occupied = z["occupied"].copy()
            g = z["genotypes"]
            rep.genotypes = g.copy() if g.size else None
            rep.clip_count = int(z["clip_count"])
        return rep

    def to_csv(self, path) -> Path:
        """cell_index, centroid components, fitness, descriptor components; one row per elite."""
        d = self.centroids.shape[1]
        header = (["cell_index"] + [f"centroid_{i}" for i in range(d)] + ["fitness"]
                  + [f"descriptor_{i}" for i in range(d)])
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for c in np.flatnonzero(self.occupied):
                w.writerow([int(c)] + [repr(float(v)) for v in self.centroids[c]]
                           + [repr(float(self.fitness[c]))]
                           + [repr(float(v)) for v in self.descriptors[c]])
        return path


def qd_metrics(rep: CvtRepertoire, offset: float = 0.0) -> QdMetrics:
    f = rep.fitness[rep.occupied]
    if f.size == 0:
        return QdMetrics(None, 0, 0.0, float(offset))
    # sorted summation keeps the score independent of cell order
    return QdMetrics(float(f.max()), int(f.size), float(np.sum(np.sort(f + offset))), float(offset))


# --- unstructured archive -----------------------------------------------------

class UnstructuredArchive:
    """Distance-thresholded archive over (learned) descriptors.

    A candidate is appended when its nearest entry is farther than ``l``;
    otherwise it replaces that nearest entry iff its fitness is strictly
    higher. When the archive grows past ``budget``, ``l`` is raised by 5%
    and the archive is re-filtered greedily by descending fitness until it
    fits again.
    """

    GROWTH = 1.05

    def __init__(self, l: float = 0.2, budget: int = 1024):
        if l <= 0:
            raise ValueError("distance threshold l must be positive")
        self.l = float(l)
        self.budget = int(budget)
        self.genotypes: np.ndarray | None = None
        self.fitness = np.zeros(0)
        self.descriptors = np.zeros((0, 0))
        self.summaries = np.zeros((0, 0))
        self.env_descriptors = np.zeros((0, 0))

    def __len__(self) -> int:
        return self.fitness.size

    def _set(self, keep: np.ndarray):
        self.genotypes = self.genotypes[keep]
        self.fitness = self.fitness[keep]
        self.descriptors = self.descriptors[keep]
        self.summaries = self.summaries[keep]
        self.env_descriptors = self.env_descriptors[keep]

    def insert(self, genotype, fitness, descriptor, summary, env_descriptor=()) -> bool:
        return bool(self.insert_batch(np.asarray(genotype)[None], [fitness], np.asarray(descriptor)[None],
                                      np.asarray(summary)[None], np.asarray(env_descriptor)[None])[0])

    def insert_batch(self, genotypes, fitnesses, descriptors, summaries, env_descriptors=None) -> np.ndarray:
        genotypes = np.atleast_2d(np.asarray(genotypes, dtype=np.float64))
        fitnesses = np.asarray(fitnesses, dtype=np.float64).reshape(-1)
        descriptors = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
        summaries = np.atleast_2d(np.asarray(summaries, dtype=np.float64))
        if env_descriptors is None:
            env_descriptors = np.zeros((len(fitnesses), 0))
        env_descriptors = np.asarray(env_descriptors, dtype=np.float64).reshape(len(fitnesses), -1)
        if not np.all(np.isfinite(fitnesses)):
            raise ValueError("non-finite fitness cannot be inserted")
        if self.genotypes is None or len(self) == 0:
            self.genotypes = np.zeros((0, genotypes.shape[1]))
            self.descriptors = np.zeros((0, descriptors.shape[1]))
            self.summaries = np.zeros((0, summaries.shape[1]))
            self.env_descriptors = np.zeros((0, env_descriptors.shape[1]))
        elif descriptors.shape[1] != self.descriptors.shape[1]:
            raise ValueError("descriptor dimension does not match the archive")
        accepted = np.zeros(len(fitnesses), dtype=bool)
        for i in range(len(fitnesses)):
            row = (genotypes[i], fitnesses[i], descriptors[i], summaries[i], env_descriptors[i])
            if len(self) == 0:
                self._append(row)
                accepted[i] = True
                continue
            dist = np.linalg.norm(self.descriptors - descriptors[i], axis=1)
            j = int(np.argmin(dist))
            if dist[j] > self.l:
                self._append(row)
                accepted[i] = True
                if len(self) > self.budget:
                    self._shrink()
            elif fitnesses[i] > self.fitness[j]:
                self.genotypes[j], self.fitness[j], self.descriptors[j], self.summaries[j], \
                    self.env_descriptors[j] = row
                accepted[i] = True
        return accepted

    def _append(self, row):
        g, f, d, s, e = row
        self.genotypes = np.vstack([self.genotypes, g])
        self.fitness = np.append(self.fitness, f)
        self.descriptors = np.vstack([self.descriptors, d])
        self.summaries = np.vstack([self.summaries, s])
        self.env_descriptors = np.vstack([self.env_descriptors, e])

    def _greedy_keep(self) -> np.ndarray:
        order = np.argsort(-self.fitness, kind="stable")
        d = self.descriptors[order]
        dist = np.sqrt(((d[:, None, :] - d[None, :, :]) ** 2).sum(-1))
        keep = np.zeros(len(order), dtype=bool)
        for k in range(len(order)):
            if not np.any(dist[k, keep] <= self.l):
                keep[k] = True
        return np.sort(order[keep])

    def refilter(self) -> None:
        """Resolve every pair closer than ``l`` in favour of the fitter entry."""
        if len(self):
            self._set(self._greedy_keep())
        while len(self) > self.budget:
            self._shrink()

    def _shrink(self):
        while len(self) > self.budget:
            self.l *= self.GROWTH
            self._set(self._greedy_keep())

    def max_fitness(self) -> float | None:
        return float(self.fitness.max()) if len(self) else None

    def state_dict(self) -> dict:
        return {"l": np.array(self.l), "budget": np.array(self.budget),
                "genotypes": self.genotypes if self.genotypes is not None else np.zeros((0, 0)),
                "fitness": self.fitness, "descriptors": self.descriptors,
                "summaries": self.summaries, "env_descriptors": self.env_descriptors}

    @classmethod
    def from_state_dict(cls, sd) -> "UnstructuredArchive":
        arch = cls(float(sd["l"]), int(sd["budget"]))
        arch.genotypes = np.array(sd["genotypes"])
        arch.fitness = np.array(sd["fitness"])
        arch.descriptors = np.array(sd["descriptors"])
        arch.summaries = np.array(sd["summaries"])
        arch.env_descriptors = np.array(sd["env_descriptors"])
        return arch


# --- passive repertoires ------------------------------------------------------

def passive_record(rep: CvtRepertoire, skills, env, eval_seed: int) -> np.ndarray:
    """Evaluate every skill once and insert it; returns acceptance flags (one per skill).

    ``skills`` needs ``evaluate(env, seeds)`` returning rollouts ordered by
    skill index and ``skill_genotypes()``.
    """
    seeds = [int(eval_seed) * 1000 + z for z in range(skills.num_skills)]
    ro = skills.evaluate(env, seeds)
    return rep.insert_batch(skills.skill_genotypes(), ro.fitness, ro.descriptors)


def recording_steps(total_steps: int, cadence: int) -> list[int]:
    """Env-step counts at which a passive snapshot is taken."""
    if cadence <= 0:
        raise ValueError("cadence must be positive")
    return list(range(cadence, total_steps + 1, cadence))
