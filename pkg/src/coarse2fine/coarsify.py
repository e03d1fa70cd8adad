"""Simulated coarse annotation: erode every class region, drop tiny bits.

A human drawing coarse polygons stays well inside object boundaries and skips
small stuff entirely. We model that by eroding each class's connected
components with a 3x3 cross (the background region too, so both sides of every
boundary become IGNORE) and by discarding components under a minimum area.
The erosion iteration count is uniform across the scene and chosen so the
labeled fraction lands as close to the policy target as integer erosion
allows, preferring the first count at or below the target.

Coarsening never relabels: a pixel is IGNORE or keeps its input class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .records import IGNORE, SceneRecord

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class CoarsePolicy:
    target_fraction: float = 0.63
    min_component_area: int = 16
    max_erosion_iters: int = 8

    def __post_init__(self):
        if not 0 < self.target_fraction <= 1:
            raise ValueError("target_fraction must be in (0, 1]")
        if self.min_component_area < 0 or self.max_erosion_iters < 0:
            raise ValueError("negative policy parameter")


def labeled_fraction(label: np.ndarray) -> float:
    """Fraction of pixels carrying a class label (not IGNORE)."""
    if label.size == 0:
        raise ValueError("empty label mask")
    return float((label != IGNORE).mean())


def _erode_classes(label: np.ndarray, k: int, policy: CoarsePolicy,
                   classes: np.ndarray) -> np.ndarray:
    out = np.full_like(label, IGNORE)
    for c in classes:
        m = label == c
        if policy.min_component_area > 0:
            comp, n = ndimage.label(m, structure=_CROSS)
            if n:
                areas = np.bincount(comp.ravel())
                small = np.flatnonzero(areas[1:] < policy.min_component_area) + 1
                if small.size:
                    m &= ~np.isin(comp, small)
        if k > 0 and m.any():
            # border_value=1: the frame edge is not a class boundary
            m = ndimage.binary_erosion(m, structure=_CROSS, iterations=k, border_value=1)
        out[m] = c
    return out


def coarsify(label: np.ndarray, policy: CoarsePolicy = CoarsePolicy(),
             seed: int = 0) -> np.ndarray:
    """Coarsen a dense label mask. Deterministic; seed is accepted for
    signature stability but the erosion policy draws nothing from it."""
    if label.ndim != 2:
        raise ValueError(f"label must be (H, W), got {label.shape}")
    if np.any(label == IGNORE):
        raise ValueError("coarsify expects a dense input mask")
    classes = np.unique(label)

    cache: dict[int, tuple[np.ndarray, float]] = {}

    def at(k: int) -> tuple[np.ndarray, float]:
        if k not in cache:
            out = _erode_classes(label, k, policy, classes)
            cache[k] = (out, labeled_fraction(out))
        return cache[k]

    target = policy.target_fraction
    lo, hi = 0, policy.max_erosion_iters
    # smallest k with fraction(k) <= target; fraction is non-increasing in k
    if at(hi)[1] > target:
        first = hi
    else:
        first = hi
        while lo < first:
            mid = (lo + first) // 2
            if at(mid)[1] <= target:
                first = mid
            else:
                lo = mid + 1
    best = first
    if first > 0:
        # integer erosion is coarse; step back when that lands closer
        if abs(at(first - 1)[1] - target) < abs(at(first)[1] - target):
            best = first - 1
    return at(best)[0]


def coarsify_record(record: SceneRecord, policy: CoarsePolicy = CoarsePolicy(),
                    seed: int = 0) -> SceneRecord:
    """Coarse copy of a dense record (domain becomes real-coarse)."""
    label = coarsify(record.label, policy, seed)
    return SceneRecord(
        record_id=record.record_id,
        domain="real-coarse",
        image=record.image,
        label=label,
    )
