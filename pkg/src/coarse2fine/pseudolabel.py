"""Consistency pseudo-labeling of IGNORE regions.

Each image is pushed through six test-time views (two flips by three scales).
The per-view probability maps are aligned back to input geometry; a pixel is
accepted only when every view predicts the same class and the averaged
confidence clears a strict threshold. Accepted pixels fill IGNORE regions of
coarse masks; manually annotated pixels are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorops as T
from .coarsify import labeled_fraction
from .model import ModelState, forward
from .records import IGNORE, PROV_IGNORE, PROV_MANUAL, PROV_PSEUDO, SceneRecord

COMBINE_MODES = ("mean-prob", "mean-logit")


@dataclass(frozen=True)
class TTAConfig:
    flips: tuple[bool, ...] = (False, True)
    scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    confidence_threshold: float = 0.9
    combine: str = "mean-prob"

    def __post_init__(self):
        if not self.flips or not self.scales:
            raise ValueError("need at least one flip state and one scale")
        if any(s <= 0 for s in self.scales):
            raise ValueError(f"scales must be positive, got {self.scales}")
        if not 0.0 < self.confidence_threshold < 1.0:
            raise ValueError(
                f"confidence_threshold must be in (0, 1), got {self.confidence_threshold}"
            )
        if self.combine not in COMBINE_MODES:
            raise ValueError(f"combine must be one of {COMBINE_MODES}, got {self.combine!r}")

    def combos(self) -> list[tuple[bool, float]]:
        return [(f, s) for f in self.flips for s in self.scales]


@dataclass
class PseudoLabelResult:
    label: np.ndarray  # merged mask, IGNORE where nothing was accepted
    provenance: np.ndarray  # manual | pseudo | ignore per pixel
    accepted_fraction: float  # labeled fraction of `label`
    argmax_stack: np.ndarray = field(repr=False, default=None)  # (6, H, W) debug


def _resize_map(arr: np.ndarray, out_hw) -> np.ndarray:
    if arr.shape[1:] == tuple(out_hw):
        return arr
    return T.bilinear_resize(T.constant(arr), 1.0, out_hw=out_hw).data


def tta_predict(model: ModelState, image: np.ndarray, cfg: TTAConfig):
    """Averaged class probabilities plus the per-view argmax stack.

    Views are enumerated flips-outer, scales-inner. Each view's map is
    resized back to input resolution and un-flipped before anything is
    compared or averaged, so the stack rows are pixel-aligned.
    """
    h, w = image.shape[1:]
    aligned = []
    for flip, scl in cfg.combos():
        img = image[:, :, ::-1] if flip else image
        if scl != 1.0:
            img = _resize_map(np.ascontiguousarray(img), _scaled_hw(h, w, scl))
        logits = forward(model, img).data
        amap = logits if cfg.combine == "mean-logit" else T._stable_softmax(logits, 0)
        amap = _resize_map(amap, (h, w))
        if flip:
            amap = amap[:, :, ::-1]
        aligned.append(amap)
    stack = np.stack([m.argmax(axis=0).astype(np.uint8) for m in aligned])
    avg = np.mean(aligned, axis=0)
    if cfg.combine == "mean-logit":
        avg = T._stable_softmax(avg, 0)
    return avg, stack


def _scaled_hw(h: int, w: int, scale: float) -> tuple[int, int]:
    return int(h * scale + 0.5), int(w * scale + 0.5)


def fuse(prob_avg: np.ndarray, argmax_stack: np.ndarray, cfg: TTAConfig) -> np.ndarray:
    """Accept a pixel only on unanimous argmax and confidence strictly above
    the threshold; everything else becomes IGNORE."""
    if prob_avg.shape[1:] != argmax_stack.shape[1:]:
        raise ValueError(
            f"stack {argmax_stack.shape} does not align with probs {prob_avg.shape}"
        )
    unanimous = np.all(argmax_stack == argmax_stack[0], axis=0)
    confident = prob_avg.max(axis=0) > cfg.confidence_threshold
    winner = prob_avg.argmax(axis=0).astype(np.uint8)
    return np.where(unanimous & confident, winner, np.uint8(IGNORE))


def merge(coarse_label: np.ndarray, provenance: np.ndarray, pseudo: np.ndarray):
    """Fill non-manual pixels with the new pseudo mask.

    Manual labels survive every iteration. Pixels labeled by an earlier
    pseudo round are overwritten, not accumulated: the new mask speaks for
    all non-manual territory, IGNORE included. Returns (label, provenance).
    """
    if provenance is None:
        raise ValueError("merge needs provenance flags to protect manual labels")
    if not coarse_label.shape == provenance.shape == pseudo.shape:
        raise ValueError(
            f"shape mismatch: label {coarse_label.shape}, provenance "
            f"{provenance.shape}, pseudo {pseudo.shape}"
        )
    manual = provenance == PROV_MANUAL
    label = np.where(manual, coarse_label, pseudo).astype(np.uint8)
    prov = np.where(
        manual,
        np.uint8(PROV_MANUAL),
        np.where(pseudo != IGNORE, np.uint8(PROV_PSEUDO), np.uint8(PROV_IGNORE)),
    ).astype(np.uint8)
    return label, prov


def pseudolabel_record(
    model: ModelState, record: SceneRecord, cfg: TTAConfig
) -> PseudoLabelResult:
    """Run the full chain on one record: predict, fuse, merge."""
    prob_avg, stack = tta_predict(model, record.image, cfg)
    pseudo = fuse(prob_avg, stack, cfg)
    label, prov = merge(record.label, record.provenance, pseudo)
    return PseudoLabelResult(
        label=label,
        provenance=prov,
        accepted_fraction=labeled_fraction(label),
        argmax_stack=stack,
    )
