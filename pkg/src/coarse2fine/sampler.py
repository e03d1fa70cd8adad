"""Choosing which images to annotate next.

The model predicts a per-image class distribution over the unlabeled pool;
selection then walks turn by turn, each time targeting the class whose
accumulated coverage is lowest and grabbing the image with the most predicted
pixels of it. Greedy, deterministic, and incremental: earlier picks are a
prefix of later ones, so growing the budget never throws away annotations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelState, forward
from .records import SceneDataset


@dataclass
class SamplerState:
    ids: tuple[str, ...]  # fixed enumeration; row i of P belongs to ids[i]
    P: np.ndarray  # (N, C) predicted pixel counts, or 0/1 in binary mode
    initial_size: int | None = None  # first (random) annotation batch
    chosen: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.ids = tuple(self.ids)
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids")
        if self.P.ndim != 2 or self.P.shape[0] != len(self.ids):
            raise ValueError(f"P must be ({len(self.ids)}, C), got {self.P.shape}")
        if self.initial_size is None:
            self.initial_size = max(1, len(self.ids) // 8)
        taken = set(self.chosen)
        self.pool = [i for i in self.ids if i not in taken]
        self._row = {id_: k for k, id_ in enumerate(self.ids)}

    def coverage(self) -> np.ndarray:
        """Predicted pixels of each class across everything chosen so far."""
        if not self.chosen:
            return np.zeros(self.P.shape[1], dtype=np.int64)
        return self.P[[self._row[i] for i in self.chosen]].sum(axis=0)


def class_pixel_counts(label_map: np.ndarray, num_classes: int) -> np.ndarray:
    flat = label_map.ravel().astype(np.int64)
    if flat.size and flat.max() >= num_classes:
        raise ValueError(f"label {flat.max()} out of range for {num_classes} classes")
    return np.bincount(flat, minlength=num_classes)


def estimate_distribution(model: ModelState, pool: SceneDataset, binary: bool = False) -> np.ndarray:
    """P[i, c] = pixels the model assigns to class c in pool image i.

    Single-scale argmax prediction; rows sum to H*W (or are 0/1 flags in
    binary mode, which discards the pixel weighting of small classes).
    """
    if len(pool) == 0:
        raise ValueError("cannot estimate a distribution over an empty pool")
    c = model.arch.num_classes
    out = np.zeros((len(pool), c), dtype=np.int64)
    for n, rec in enumerate(pool):
        pred = forward(model, rec.image).data.argmax(axis=0)
        out[n] = class_pixel_counts(pred, c)
    return (out > 0).astype(np.int64) if binary else out


def select_next(state: SamplerState, k: int) -> list[str]:
    """Greedily move k ids from the pool into the chosen set.

    Each turn targets the class with the lowest coverage (ties: smallest
    class id) and takes the pool image with the most predicted pixels of it
    (ties: smallest id). Returns the picks in order.
    """
    if not 0 <= k <= len(state.pool):
        raise ValueError(f"k={k} with {len(state.pool)} pool images")
    cov = state.coverage()
    pool = list(state.pool)
    picked = []
    for _ in range(k):
        target = int(np.argmin(cov))
        best = min(pool, key=lambda i: (-state.P[state._row[i], target], i))
        pool.remove(best)
        picked.append(best)
        cov = cov + state.P[state._row[best]]
    state.chosen.extend(picked)
    state.pool = pool
    return picked


def uniform_select(state: SamplerState, k: int, rng: np.random.Generator) -> list[str]:
    """Seeded uniform draw without replacement; the baseline policy."""
    if not 0 <= k <= len(state.pool):
        raise ValueError(f"k={k} with {len(state.pool)} pool images")
    idx = rng.choice(len(state.pool), size=k, replace=False)
    picked = [state.pool[int(i)] for i in idx]
    taken = set(picked)
    state.chosen.extend(picked)
    state.pool = [i for i in state.pool if i not in taken]
    return picked
