"""Brute-force reference implementations used to pin expected values.

These deliberately use naive per-pixel loops or a different library code path
than the package, so agreement is meaningful.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax

IGNORE = 255


def conv_brute(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    co, cin, k, _ = w.shape
    _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[o, i, j] = (patch * w[o]).sum()
    return out


def gradient_norm_brute(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            s = 0.0
            for ch in range(c):
                dx = (x[ch, i, min(j + 1, w - 1)] - x[ch, i, max(j - 1, 0)]) / 2.0
                dy = (x[ch, min(i + 1, h - 1), j] - x[ch, max(i - 1, 0), j]) / 2.0
                s += dx * dx + dy * dy
            out[i, j] = np.sqrt(s)
    return out


def cross_entropy_brute(logits: np.ndarray, target: np.ndarray) -> float:
    lp = log_softmax(logits, axis=0)
    total, n = 0.0, 0
    h, w = target.shape
    for i in range(h):
        for j in range(w):
            if target[i, j] != IGNORE:
                total -= lp[target[i, j], i, j]
                n += 1
    return total / n if n else 0.0


def confusion_brute(gt: np.ndarray, pred: np.ndarray, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for a, b in zip(gt.ravel(), pred.ravel()):
        if a != IGNORE:
            cm[a, b] += 1
    return cm


def iou_brute(cm: np.ndarray) -> np.ndarray:
    c = cm.shape[0]
    out = np.full(c, np.nan)
    for k in range(c):
        tp = cm[k, k]
        fp = cm[:, k].sum() - tp
        fn = cm[k, :].sum() - tp
        if tp + fp + fn > 0:
            out[k] = tp / (tp + fp + fn)
    return out


def fuse_brute(prob_avg: np.ndarray, stack: np.ndarray, threshold: float) -> np.ndarray:
    _, h, w = prob_avg.shape
    out = np.full((h, w), IGNORE, dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            votes = stack[:, i, j]
            if np.all(votes == votes[0]) and prob_avg[:, i, j].max() > threshold:
                out[i, j] = prob_avg[:, i, j].argmax()
    return out
