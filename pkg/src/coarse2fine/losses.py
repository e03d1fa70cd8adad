"""Training losses: masked cross-entropy and the boundary-magnitude loss.

The boundary loss compares the spatial gradient magnitude of a relaxed
prediction against the gradient magnitude of the one-hot ground truth, on two
pixel sets: where the ground truth has an edge, and where the prediction
claims one. The relaxation is a Gumbel-Softmax so the edge map stays
differentiable; the two positive sets are cut by a hard threshold and treated
as constants (no gradient flows through the set membership). Dense labels
only, so the loss runs on synthetic data.

total_loss mixes the pieces for one batch: cross-entropy for every item, the
boundary term averaged over the purely synthetic items. Augmented mixes carry
pasted real pixels and contribute cross-entropy only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .records import IGNORE
from .tensorops import (
    Tensor,
    absolute,
    accumulate_grad,
    add,
    constant,
    custom_op,
    gumbel_softmax,
    masked_mean,
    scale,
    spatial_gradient_norm,
    sub,
)


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.5  # weight of the ground-truth edge set
    lambda2: float = 0.5  # weight of the predicted edge set
    boundary_threshold: float = 1e-8
    lambda_bd: float = 1.0  # weight of the boundary term in total_loss
    gumbel_temperature: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda_bd < 0:
            raise ValueError("loss weights must be non-negative")
        if self.boundary_threshold <= 0:
            raise ValueError("boundary_threshold must be positive")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel_temperature must be positive")


@dataclass
class LossItem:
    """One batch entry: logits wired to the tape plus its supervision."""

    logits: Tensor
    label: np.ndarray
    domain: str
    noise: np.ndarray | None = None  # Gumbel noise, synthetic items only


def gumbel_noise(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    """Standard Gumbel samples: -log(-log(U)), U in the open unit interval."""
    u = rng.random(shape)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return (-np.log(-np.log(u))).astype(dtype)


def _validate_target(target: np.ndarray, num_classes: int, where: str):
    labeled = target[target != IGNORE]
    if labeled.size and int(labeled.max()) >= num_classes:
        raise ValueError(
            f"{where}: class id {int(labeled.max())} out of range for {num_classes} classes"
        )


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over non-IGNORE pixels.

    All-IGNORE targets give a loss of exactly 0 with zero gradient.
    """
    if logits.data.ndim != 3:
        raise ValueError(f"logits must be (C, H, W), got {logits.shape}")
    c = logits.shape[0]
    if target.shape != logits.shape[1:]:
        raise ValueError(f"target {target.shape} vs logits {logits.shape}")
    _validate_target(target, c, "cross_entropy")

    valid = target != IGNORE
    n = int(valid.sum())
    if n == 0:
        return constant(np.zeros((), dtype=logits.dtype))

    z = logits.data
    zmax = z.max(axis=0)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=0))
    idx = np.where(valid, target, 0).astype(np.intp)
    z_t = np.take_along_axis(z, idx[None], axis=0)[0]
    out = -((z_t - lse) * valid).sum() / n
    if not np.isfinite(out):
        raise FloatingPointError("non-finite cross_entropy")

    def backward(g):
        p = np.exp(z - lse[None])
        rows, cols = np.nonzero(valid)
        p[idx[rows, cols], rows, cols] -= 1.0
        p *= valid[None]
        accumulate_grad(logits, p * (float(g) / n))

    return custom_op(np.asarray(out, dtype=logits.dtype), backward, logits)


def boundary_loss(logits: Tensor, target: np.ndarray, cfg: LossConfig,
                  noise: np.ndarray) -> Tensor:
    """Edge-magnitude mismatch between relaxed prediction and dense GT."""
    if logits.data.ndim != 3:
        raise ValueError(f"logits must be (C, H, W), got {logits.shape}")
    c = logits.shape[0]
    if target.shape != logits.shape[1:]:
        raise ValueError(f"target {target.shape} vs logits {logits.shape}")
    if np.any(target == IGNORE):
        raise ValueError("boundary_loss needs dense labels (IGNORE present)")
    _validate_target(target, c, "boundary_loss")

    onehot = (target[None] == np.arange(c)[:, None, None]).astype(logits.dtype)
    gamma_gt = spatial_gradient_norm(constant(onehot)).data

    soft = gumbel_softmax(logits, cfg.gumbel_temperature, noise)
    gamma_pred = spatial_gradient_norm(soft)
    diff = absolute(sub(gamma_pred, constant(gamma_gt)))

    pos_gt = gamma_gt > cfg.boundary_threshold
    # set membership is a constant of the backward pass by design
    pos_pred = gamma_pred.data > cfg.boundary_threshold

    total = None
    for lam, mask in ((cfg.lambda1, pos_gt), (cfg.lambda2, pos_pred)):
        if lam == 0 or not mask.any():
            continue  # an empty positive set contributes nothing
        term = scale(masked_mean(diff, mask), lam)
        total = term if total is None else add(total, term)
    if total is None:
        return constant(np.zeros((), dtype=logits.dtype))
    return total


def total_loss(items: list[LossItem], cfg: LossConfig) -> Tensor:
    """Batch objective: mean CE over all items plus the weighted mean
    boundary loss over the synthetic ones."""
    if not items:
        raise ValueError("total_loss: empty batch")

    ce = None
    for it in items:
        term = cross_entropy(it.logits, it.label)
        ce = term if ce is None else add(ce, term)
    total = scale(ce, 1.0 / len(items))

    if cfg.lambda_bd > 0:
        synthetic = [it for it in items if it.domain == "synthetic"]
        if synthetic:
            bd = None
            for it in synthetic:
                if it.noise is None:
                    raise ValueError(
                        f"total_loss: synthetic item without Gumbel noise ({it.domain})"
                    )
                term = boundary_loss(it.logits, it.label, cfg, it.noise)
                bd = term if bd is None else add(bd, term)
            total = add(total, scale(bd, cfg.lambda_bd / len(synthetic)))
    return total
