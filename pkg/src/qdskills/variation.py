"""Uniform parent selection and Iso+LineDD genetic variation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VariationConfig:
    sigma_iso: float = 0.005
    sigma_line: float = 0.05
    batch_size: int = 1000

    def __post_init__(self):
        if self.sigma_iso < 0 or self.sigma_line < 0:
            raise ValueError("variation sigmas must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def select_uniform(rep, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` genotypes drawn uniformly (with replacement) from the occupied cells."""
    cells = np.flatnonzero(rep.occupied)
    if cells.size == 0:
        raise ValueError("cannot select from an empty repertoire")
    return rep.genotypes[cells[rng.integers(0, cells.size, size=count)]].copy()


def iso_line_dd(x1: np.ndarray, x2: np.ndarray, cfg: VariationConfig, rng: np.random.Generator) -> np.ndarray:
    """child = x1 + sigma_iso * eps + sigma_line * (x2 - x1) * delta.

    ``eps`` is per-coordinate standard normal and ``delta`` one standard
    normal scalar per child. Works on single genotypes or stacked batches.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise ValueError(f"parents have different shapes {x1.shape} and {x2.shape}")
    eps = rng.standard_normal(x1.shape)
    delta = rng.standard_normal(x1.shape[:-1] + (1,))
    return x1 + cfg.sigma_iso * eps + cfg.sigma_line * (x2 - x1) * delta


def genetic_offspring(rep, count: int, cfg: VariationConfig, rng: np.random.Generator) -> np.ndarray:
    """Select two parent batches uniformly and cross them with Iso+LineDD."""
    x1 = select_uniform(rep, count, rng)
    x2 = select_uniform(rep, count, rng)
    return iso_line_dd(x1, x2, cfg, rng)
