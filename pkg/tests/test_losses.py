import numpy as np
import pytest

from coarse2fine import tensorops as T
from coarse2fine.losses import (
    LossConfig,
    LossItem,
    boundary_loss,
    cross_entropy,
    gumbel_noise,
    total_loss,
)
from coarse2fine.records import IGNORE
from coarse2fine.tensorops import GradTape, Tensor

from fdcheck import fd_gradcheck
from oracles import cross_entropy_brute, gradient_norm_brute


def _random_case(seed, c=5, h=6, w=7, ignore_frac=0.3):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((c, h, w))
    target = rng.integers(0, c, (h, w)).astype(np.uint8)
    target[rng.random((h, w)) < ignore_frac] = IGNORE
    return logits, target


# ---------------------------------------------------------------------------
# cross_entropy


def test_ce_uniform_logits_is_log_c():
    logits = Tensor(np.zeros((8, 5, 5)))
    target = np.random.default_rng(0).integers(0, 8, (5, 5)).astype(np.uint8)
    loss = cross_entropy(logits, target)
    np.testing.assert_allclose(loss.item(), np.log(8.0), rtol=1e-12)


def test_ce_matches_reference():
    for seed in range(8):
        logits, target = _random_case(seed)
        got = cross_entropy(Tensor(logits), target).item()
        np.testing.assert_allclose(got, cross_entropy_brute(logits, target), rtol=1e-10)


def test_ce_all_ignore_is_zero_with_zero_grad():
    logits = Tensor(np.random.default_rng(1).standard_normal((4, 3, 3)), requires_grad=True)
    target = np.full((3, 3), IGNORE, dtype=np.uint8)
    with GradTape() as tape:
        loss = cross_entropy(logits, target)
    assert loss.item() == 0.0
    tape.backward(loss)
    assert logits.grad is None


def test_ce_class_out_of_range():
    logits = Tensor(np.zeros((3, 2, 2)))
    target = np.full((2, 2), 3, dtype=np.uint8)
    with pytest.raises(ValueError):
        cross_entropy(logits, target)


def test_ce_gradients():
    logits, target = _random_case(2)
    fd_gradcheck(lambda t: cross_entropy(t["logits"], target), {"logits": logits})


def test_ce_ignore_pixels_get_exactly_zero_gradient():
    # 1x1 conv head: no spatial mixing, so per-pixel gradients are isolated
    rng = np.random.default_rng(3)
    feats = Tensor(rng.standard_normal((6, 4, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((5, 6, 1, 1)), requires_grad=True)
    target = rng.integers(0, 5, (4, 4)).astype(np.uint8)
    target[0, 0] = target[2, 3] = IGNORE
    with GradTape() as tape:
        loss = cross_entropy(T.conv2d(feats, w), target)
    tape.backward(loss)
    assert np.all(feats.grad[:, 0, 0] == 0.0)
    assert np.all(feats.grad[:, 2, 3] == 0.0)
    assert np.any(feats.grad != 0.0)


# ---------------------------------------------------------------------------
# boundary_loss


def _dense_blocks(c=4, h=8, w=8):
    target = np.zeros((h, w), dtype=np.uint8)
    target[:, w // 2 :] = 1
    target[h // 2 :, : w // 2] = 2
    return target


def test_boundary_loss_flat_prediction_oracle():
    # uniform logits -> relaxed prediction has zero spatial gradient, so the
    # predicted-edge set is empty and only the GT term remains
    c, h, w = 4, 8, 8
    target = _dense_blocks(c, h, w)
    cfg = LossConfig()
    logits = Tensor(np.zeros((c, h, w)))
    got = boundary_loss(logits, target, cfg, np.zeros((c, h, w))).item()
    onehot = (target[None] == np.arange(c)[:, None, None]).astype(float)
    gamma_gt = gradient_norm_brute(onehot)
    pos = gamma_gt > cfg.boundary_threshold
    want = cfg.lambda1 * gamma_gt[pos].mean()
    np.testing.assert_allclose(got, want, rtol=1e-10)


def test_boundary_loss_perfect_sharp_prediction_is_tiny():
    c, h, w = 4, 8, 8
    target = _dense_blocks(c, h, w)
    logits = np.where(target[None] == np.arange(c)[:, None, None], 20.0, 0.0)
    cfg = LossConfig(gumbel_temperature=0.01)
    loss = boundary_loss(Tensor(logits), target, cfg, np.zeros_like(logits)).item()
    assert loss < 1e-3


def test_boundary_loss_rejects_ignore():
    target = _dense_blocks().copy()
    target[0, 0] = IGNORE
    with pytest.raises(ValueError):
        boundary_loss(Tensor(np.zeros((4, 8, 8))), target, LossConfig(), np.zeros((4, 8, 8)))


def test_boundary_loss_gradients_with_fixed_noise():
    rng = np.random.default_rng(5)
    c, h, w = 4, 7, 6
    target = rng.integers(0, c, (h, w)).astype(np.uint8)
    noise = gumbel_noise(rng, (c, h, w))
    logits = rng.standard_normal((c, h, w))
    fd_gradcheck(
        lambda t: boundary_loss(t["logits"], target, LossConfig(), noise),
        {"logits": logits},
    )


def test_boundary_loss_flat_prediction_backward_is_well_defined():
    # a flat prediction sits exactly on the apex of the gradient-norm cone;
    # the backward pass must return the zero subgradient there, not NaN
    c, h, w = 3, 6, 6
    target = np.zeros((h, w), dtype=np.uint8)
    target[:, 3:] = 1
    logits = Tensor(np.full((c, h, w), 0.1), requires_grad=True)
    with GradTape() as tape:
        loss = boundary_loss(logits, target, LossConfig(), np.zeros((c, h, w)))
    tape.backward(loss)
    assert np.all(np.isfinite(logits.grad))
    np.testing.assert_array_equal(logits.grad, np.zeros_like(logits.grad))
    onehot = (target[None] == np.arange(c)[:, None, None]).astype(float)
    gamma_gt = gradient_norm_brute(onehot)
    pos = gamma_gt > LossConfig().boundary_threshold
    np.testing.assert_allclose(loss.item(), 0.5 * gamma_gt[pos].mean(), rtol=1e-12)


def test_boundary_loss_single_class_scene_is_zero():
    # no GT edges and a flat prediction: both positive sets are empty
    target = np.zeros((6, 6), dtype=np.uint8)
    loss = boundary_loss(Tensor(np.zeros((3, 6, 6))), target, LossConfig(), np.zeros((3, 6, 6)))
    assert loss.item() == 0.0


# ---------------------------------------------------------------------------
# total_loss


def _items(seed, domains, c=4, h=6, w=6, dense_for=("synthetic", "augmented")):
    rng = np.random.default_rng(seed)
    items = []
    for k, domain in enumerate(domains):
        logits = Tensor(rng.standard_normal((c, h, w)), requires_grad=True)
        target = rng.integers(0, c, (h, w)).astype(np.uint8)
        if domain not in dense_for:
            target[rng.random((h, w)) < 0.4] = IGNORE
        noise = gumbel_noise(rng, (c, h, w)) if domain == "synthetic" else None
        items.append(LossItem(logits=logits, label=target, domain=domain, noise=noise))
    return items


def test_total_loss_coarse_only_is_mean_ce():
    items = _items(0, ["real-coarse", "real-coarse", "real-coarse"])
    cfg = LossConfig()
    got = total_loss(items, cfg).item()
    want = np.mean([cross_entropy(i.logits, i.label).item() for i in items])
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_total_loss_synthetic_adds_boundary_term():
    items = _items(1, ["synthetic"])
    cfg = LossConfig(lambda_bd=0.7)
    got = total_loss(items, cfg).item()
    ce = cross_entropy(items[0].logits, items[0].label).item()
    bd = boundary_loss(items[0].logits, items[0].label, cfg, items[0].noise).item()
    np.testing.assert_allclose(got, ce + 0.7 * bd, rtol=1e-12)


def test_total_loss_lambda_zero_equals_ce_exactly():
    items = _items(2, ["synthetic", "real-coarse"])
    cfg = LossConfig(lambda_bd=0.0)
    got = total_loss(items, cfg).item()
    want = np.mean([cross_entropy(i.logits, i.label).item() for i in items])
    assert got == pytest.approx(want, rel=1e-15)


def test_total_loss_augmented_items_are_ce_only():
    items = _items(3, ["synthetic", "augmented", "real-coarse"])
    cfg = LossConfig(lambda_bd=1.0)
    got = total_loss(items, cfg).item()
    ce = np.mean([cross_entropy(i.logits, i.label).item() for i in items])
    bd = boundary_loss(items[0].logits, items[0].label, cfg, items[0].noise).item()
    np.testing.assert_allclose(got, ce + bd, rtol=1e-12)  # bd averaged over 1 synthetic


def test_total_loss_empty_batch_is_error():
    with pytest.raises(ValueError):
        total_loss([], LossConfig())


def test_total_loss_synthetic_without_noise_is_error():
    items = _items(4, ["synthetic"])
    items[0].noise = None
    with pytest.raises(ValueError):
        total_loss(items, LossConfig())


def test_total_loss_gradients_mixed_batch():
    rng = np.random.default_rng(6)
    c, h, w = 3, 5, 5
    coarse_target = rng.integers(0, c, (h, w)).astype(np.uint8)
    coarse_target[rng.random((h, w)) < 0.4] = IGNORE
    dense_target = rng.integers(0, c, (h, w)).astype(np.uint8)
    noise = gumbel_noise(rng, (c, h, w))

    def make(t):
        items = [
            LossItem(logits=t["a"], label=coarse_target, domain="real-coarse"),
            LossItem(logits=t["b"], label=dense_target, domain="synthetic", noise=noise),
        ]
        return total_loss(items, LossConfig(lambda_bd=0.5))

    fd_gradcheck(
        make,
        {"a": rng.standard_normal((c, h, w)), "b": rng.standard_normal((c, h, w))},
    )


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lambda1=-0.1)
    with pytest.raises(ValueError):
        LossConfig(boundary_threshold=0.0)
    with pytest.raises(ValueError):
        LossConfig(gumbel_temperature=0.0)
