"""Cross-domain pasting: synthetic class regions dropped onto real scenes.

A paste mask selects a random subset of the classes present in a synthetic
label; those pixels (image and label together) replace the real scene's
content. The pasted regions are densely labeled by construction, so the
augmented copies sharpen supervision exactly where coarse annotation is
weakest: near object boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .records import SceneRecord

REAL_DOMAINS = ("real-coarse", "real-fine")


@dataclass(frozen=True)
class AugmentConfig:
    p_select_real: float = 0.5  # chance a real batch item gets an augmented twin
    p_class: float = 0.5  # per-class inclusion chance in the paste mask

    def __post_init__(self):
        for name in ("p_select_real", "p_class"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def build_paste_mask(
    synthetic_label: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Pick a random subset of the classes present; mask their pixels.

    Each class present in the (dense) synthetic label is included
    independently with probability ``p_class``. Returns a bool (H, W) mask
    that is constant within each class region.
    """
    present = np.unique(synthetic_label)
    keep = present[rng.random(present.size) < cfg.p_class]
    return np.isin(synthetic_label, keep)


def mix(real: SceneRecord, synthetic: SceneRecord, mask: np.ndarray) -> SceneRecord:
    """Per-pixel select: mask takes the synthetic scene, rest stays real.

    Image, label, and provenance move together, so every output pixel is a
    coherent (image, label) pair from exactly one source scene.
    """
    if real.image.shape != synthetic.image.shape:
        raise ValueError(
            f"scene shapes differ: {real.image.shape} vs {synthetic.image.shape}"
        )
    if mask.shape != real.label.shape:
        raise ValueError(f"mask {mask.shape} does not match label {real.label.shape}")
    m = mask.astype(bool)
    return SceneRecord(
        record_id=f"{real.record_id}+{synthetic.record_id}",
        domain="augmented",
        image=np.where(m[None], synthetic.image, real.image),
        label=np.where(m, synthetic.label, real.label).astype(np.uint8),
        provenance=np.where(m, synthetic.provenance, real.provenance).astype(np.uint8),
    )


def _fit_to(rec: SceneRecord, height: int, width: int) -> SceneRecord:
    # center-crop then edge-pad; unreachable with same-size pools but keeps
    # mix total when pool geometry changes
    if (rec.height, rec.width) == (height, width):
        return rec
    img, lab, prov = rec.image, rec.label, rec.provenance
    if rec.height > height:
        top = (rec.height - height) // 2
        img = img[:, top : top + height]
        lab = lab[top : top + height]
        prov = prov[top : top + height]
    if rec.width > width:
        left = (rec.width - width) // 2
        img = img[:, :, left : left + width]
        lab = lab[:, left : left + width]
        prov = prov[:, left : left + width]
    pad_h, pad_w = height - lab.shape[0], width - lab.shape[1]
    if pad_h > 0 or pad_w > 0:
        top, left = pad_h // 2, pad_w // 2
        spatial = ((top, pad_h - top), (left, pad_w - left))
        img = np.pad(img, ((0, 0),) + spatial, mode="edge")
        lab = np.pad(lab, spatial, mode="edge")
        prov = np.pad(prov, spatial, mode="edge")
    return SceneRecord(rec.record_id, rec.domain, img, lab, prov)


def augment_batch(batch, synthetic_pool, cfg: AugmentConfig, rng: np.random.Generator):
    """Add an augmented twin for each selected real item.

    Twins are appended after the originals; nothing is replaced. Partners are
    drawn uniformly from the whole synthetic pool, not from the batch.
    """
    if len(synthetic_pool) == 0:
        raise ValueError("synthetic pool is empty")
    out = list(batch)
    for rec in batch:
        if rec.domain not in REAL_DOMAINS:
            continue
        if rng.random() >= cfg.p_select_real:
            continue
        partner = _fit_to(synthetic_pool[int(rng.integers(len(synthetic_pool)))],
                          rec.height, rec.width)
        out.append(mix(rec, partner, build_paste_mask(partner.label, cfg, rng)))
    return out
