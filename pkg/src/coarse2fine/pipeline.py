"""Experiment orchestration: pre-train, pseudo-label, re-train, evaluate.

Everything here is a pure function of (config, seed). Data synthesis, batch
order, augmentation draws, Gumbel noise, and parameter init all pull from
named SeedSequence streams, so a rerun of any entry point reproduces its
outputs byte for byte.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .augment import AugmentConfig, augment_batch
from .coarsify import CoarsePolicy, coarsify_record, labeled_fraction
from .datagen import SceneSpec, generate_pool
from .losses import LossConfig, LossItem, gumbel_noise, total_loss
from .model import (
    ArchConfig,
    ModelState,
    clear_grads,
    forward,
    gradients,
    init_model,
    poly_lr,
    sgd_step,
)
from .pseudolabel import TTAConfig, fuse, merge, tta_predict
from .records import IGNORE, PROV_PSEUDO, SceneRecord
from .sampler import SamplerState, estimate_distribution, select_next, uniform_select
from .tensorops import GradTape

SAMPLING_MODES = ("model-based", "uniform")

# rng stream ids (first element after the experiment seed)
_SHUFFLE, _FLIP, _GUMBEL, _AUGMENT, _SAMPLE, _INIT = 1, 2, 3, 4, 5, 6

# index offset separating validation scenes from the training pool
_VAL_START = 100_000


def _rng(seed: int, stream: int, round_idx: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, stream, round_idx)))


def _init_seed(seed: int, round_idx: int) -> int:
    return int(np.random.SeedSequence((seed, _INIT, round_idx)).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    n_coarse: int = 60
    n_fine: int = 0
    n_synthetic: int = 60
    n_val: int = 40
    iterations: int = 3  # pseudo-label/re-train rounds after the pre-train
    epochs: int = 30  # per round; the full-scale analog would be 100
    batch_size: int = 8
    base_lr: float = 0.02
    seed: int = 0
    sampling: str = "model-based"
    eval_scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    scene: SceneSpec = SceneSpec()
    channels: tuple[int, int, int] = (16, 32, 64)
    loss: LossConfig = LossConfig()
    tta: TTAConfig = TTAConfig()
    aug: AugmentConfig = AugmentConfig()
    coarse_policy: CoarsePolicy = CoarsePolicy()
    fine_minutes: float = 90.0  # 75.0 under the cheaper annotation cost model
    warm_start: bool = False  # re-train from the previous round's weights
    refresh_estimates: bool = True  # re-estimate pool distribution per increment

    def __post_init__(self):
        counts = (self.n_coarse, self.n_fine, self.n_synthetic)
        if any(c < 0 for c in counts) or self.n_val < 0:
            raise ValueError("image counts must be nonnegative")
        if sum(counts) == 0:
            raise ValueError("need at least one labeled source")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch_size")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if not self.eval_scales or any(s <= 0 for s in self.eval_scales):
            raise ValueError("eval_scales must be positive")

    @property
    def num_classes(self) -> int:
        return self.scene.num_classes


def reseed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Same experiment, different world: reseeds data and training streams."""
    return dataclasses.replace(
        cfg, seed=seed, scene=dataclasses.replace(cfg.scene, seed=seed)
    )


@dataclass
class ExperimentData:
    num_classes: int
    synthetic: list[SceneRecord]
    coarse: list[SceneRecord]
    fine: list[SceneRecord]
    val: list[SceneRecord]


def prepare_data(cfg: ExperimentConfig) -> ExperimentData:
    """Synthesize and annotate the toy world for one experiment.

    Coarse and fine training images are disjoint slices of the real-domain
    index space; validation scenes live at a far offset so no index ever
    collides with a training scene.
    """
    synthetic = list(generate_pool(cfg.scene, cfg.n_synthetic, "synthetic"))
    coarse = [
        coarsify_record(rec, cfg.coarse_policy, seed=i)
        for i, rec in enumerate(generate_pool(cfg.scene, cfg.n_coarse, "real"))
    ]
    fine = list(generate_pool(cfg.scene, cfg.n_fine, "real", start=cfg.n_coarse))
    val = list(generate_pool(cfg.scene, cfg.n_val, "real", start=_VAL_START))
    return ExperimentData(cfg.num_classes, synthetic, coarse, fine, val)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: ModelState
    loss_log: list[float]  # mean training loss per epoch


def _clone_model(model: ModelState) -> ModelState:
    fresh = init_model(model.arch, model.dtype)
    for name, p in model.params.items():
        fresh.params[name].data = p.data.copy()
    return fresh


def _train(cfg: ExperimentConfig, records: list[SceneRecord],
           synthetic_pool: list[SceneRecord], round_idx: int,
           init_from: ModelState | None = None) -> TrainResult:
    if not records:
        raise ValueError("nothing to train on")
    if init_from is not None:
        model = _clone_model(init_from)
    else:
        arch = ArchConfig(cfg.num_classes, cfg.channels,
                          init_seed=_init_seed(cfg.seed, round_idx))
        model = init_model(arch)
    shuffle_rng = _rng(cfg.seed, _SHUFFLE, round_idx)
    flip_rng = _rng(cfg.seed, _FLIP, round_idx)
    gumbel_rng = _rng(cfg.seed, _GUMBEL, round_idx)
    aug_rng = _rng(cfg.seed, _AUGMENT, round_idx)

    n = len(records)
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = max(1, cfg.epochs * batches_per_epoch)
    step = 0
    log = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_losses = []
        for b in range(batches_per_epoch):
            batch = [records[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            if synthetic_pool:
                batch = augment_batch(batch, synthetic_pool, cfg.aug, aug_rng)
            try:
                with GradTape() as tape:
                    items = []
                    for rec in batch:
                        image, label = rec.image, rec.label
                        if flip_rng.random() < 0.5:
                            image, label = image[:, :, ::-1], label[:, ::-1]
                        logits = forward(model, image)
                        noise = None
                        if rec.domain == "synthetic":
                            noise = gumbel_noise(gumbel_rng, logits.data.shape,
                                                 dtype=logits.data.dtype)
                        items.append(LossItem(logits, label, rec.domain, noise))
                    loss = total_loss(items, cfg.loss)
                tape.backward(loss)
                sgd_step(model, gradients(model),
                         poly_lr(cfg.base_lr, step, total_steps))
            except FloatingPointError as err:
                raise FloatingPointError(
                    f"training diverged at epoch {epoch} step {step}: {err}"
                ) from err
            clear_grads(model)
            epoch_losses.append(loss.item())
            step += 1
        log.append(float(np.mean(epoch_losses)))
    return TrainResult(model, log)


def pretrain(cfg: ExperimentConfig, data: ExperimentData | None = None) -> TrainResult:
    """Round 0 of Algorithm-style self-training: fit the combined data."""
    if data is None:
        data = prepare_data(cfg)
    records = data.coarse + data.fine + data.synthetic
    return _train(cfg, records, data.synthetic, round_idx=0)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    iou: np.ndarray  # per class; NaN where the class appears in neither GT nor pred
    miou: float
    confusion: np.ndarray  # (C, C) int64, rows are GT
    budget_hours: float = 0.0
    iteration: int = 0


def iou_from_confusion(confusion: np.ndarray) -> tuple[np.ndarray, float]:
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore"):
        iou = np.where(denom > 0, tp / np.maximum(denom, 1), np.nan)
    return iou, float(np.nanmean(iou))


def evaluate(model: ModelState, valset: list[SceneRecord],
             scales: tuple[float, ...] = (0.5, 1.0, 2.0)) -> EvalReport:
    """Multiscale inference, global confusion matrix, per-class IoU.

    Probability maps from each scale are resized back to image geometry and
    averaged (scales only; flips belong to pseudo-labeling). Classes with no
    GT and no predicted pixels drop out of the mean rather than skewing it.
    """
    c = model.arch.num_classes
    tta = TTAConfig(flips=(False,), scales=tuple(scales))
    confusion = np.zeros((c, c), dtype=np.int64)
    for rec in valset:
        probs, _ = tta_predict(model, rec.image, tta)
        pred = probs.argmax(axis=0)
        valid = rec.label != IGNORE
        gt = rec.label[valid].astype(np.int64)
        if gt.size and gt.max() >= c:
            raise ValueError(f"val label {gt.max()} out of range for {c} classes")
        confusion += np.bincount(gt * c + pred[valid], minlength=c * c).reshape(c, c)
    iou, miou = iou_from_confusion(confusion)
    return EvalReport(iou=iou, miou=miou, confusion=confusion)


# ---------------------------------------------------------------------------
# self-training


@dataclass
class IterationResult:
    iteration: int
    model: ModelState
    report: EvalReport
    loss_log: list[float]
    labeled_fraction: float
    coarse: list[SceneRecord]  # coarse data as trained on this round


def _relabel(model: ModelState, coarse: list[SceneRecord],
             cfg: ExperimentConfig) -> list[SceneRecord]:
    """One pseudo-labeling pass over the coarse set.

    Where the new round rejects a pixel that an earlier round had labeled,
    the earlier pseudo label is kept instead of reverting to IGNORE; with
    the merge rule this makes the labeled fraction non-decreasing.
    """
    out = []
    for rec in coarse:
        probs, stack = tta_predict(model, rec.image, cfg.tta)
        pseudo = fuse(probs, stack, cfg.tta)
        keep_old = (pseudo == IGNORE) & (rec.provenance == PROV_PSEUDO)
        pseudo = np.where(keep_old, rec.label, pseudo)
        label, prov = merge(rec.label, rec.provenance, pseudo)
        out.append(rec.with_labels(label, prov))
    return out


def _mean_labeled(coarse: list[SceneRecord]) -> float:
    if not coarse:
        return 1.0
    return float(np.mean([labeled_fraction(r.label) for r in coarse]))


def self_train(cfg: ExperimentConfig,
               data: ExperimentData | None = None) -> list[IterationResult]:
    """Pre-train, then R rounds of pseudo-label + re-train, evaluating each.

    Every round re-trains from a fresh initialization (unless warm_start) on
    the merged coarse data plus the untouched synthetic and fine data.
    """
    if data is None:
        data = prepare_data(cfg)
    hours = budget(cfg).hours
    coarse = data.coarse
    results = []
    prev_model = None
    for r in range(cfg.iterations + 1):
        if r > 0:
            coarse = _relabel(prev_model, coarse, cfg)
        trained = _train(
            cfg, coarse + data.fine + data.synthetic, data.synthetic,
            round_idx=r, init_from=prev_model if cfg.warm_start else None,
        )
        report = evaluate(trained.model, data.val, cfg.eval_scales)
        report.iteration = r
        report.budget_hours = hours
        results.append(IterationResult(
            iteration=r,
            model=trained.model,
            report=report,
            loss_log=trained.loss_log,
            labeled_fraction=_mean_labeled(coarse),
            coarse=coarse,
        ))
        prev_model = trained.model
    return results


# ---------------------------------------------------------------------------
# annotation budget


@dataclass(frozen=True)
class BudgetLedger:
    n_coarse: int = 0
    n_fine: int = 0
    n_synthetic: int = 0  # free, tracked for the record
    coarse_minutes: float = 7.0
    fine_minutes: float = 90.0

    def __post_init__(self):
        if min(self.n_coarse, self.n_fine, self.n_synthetic) < 0:
            raise ValueError("negative image count")

    @property
    def hours(self) -> float:
        return (self.n_coarse * self.coarse_minutes
                + self.n_fine * self.fine_minutes) / 60.0

    def __add__(self, other: "BudgetLedger") -> "BudgetLedger":
        if (self.coarse_minutes, self.fine_minutes) != (other.coarse_minutes,
                                                        other.fine_minutes):
            raise ValueError("cannot add ledgers with different unit costs")
        return BudgetLedger(
            self.n_coarse + other.n_coarse,
            self.n_fine + other.n_fine,
            self.n_synthetic + other.n_synthetic,
            self.coarse_minutes, self.fine_minutes,
        )


def budget(cfg: ExperimentConfig) -> BudgetLedger:
    return BudgetLedger(cfg.n_coarse, cfg.n_fine, cfg.n_synthetic,
                        fine_minutes=cfg.fine_minutes)


# ---------------------------------------------------------------------------
# budget sweep


@dataclass
class SweepPoint:
    n_images: int
    method: str  # "ours" or "fine-only"
    budget_hours: float
    miou: float
    chosen_ids: tuple[str, ...]


def _matched_fine_count(n_coarse: int, cfg: ExperimentConfig) -> int:
    return max(1, int(n_coarse * 7.0 / cfg.fine_minutes + 0.5))


def budget_sweep(cfg: ExperimentConfig, coarse_points: list[int]) -> list[SweepPoint]:
    """Annotation-cost curve: ours vs fine-only across budget points.

    cfg.n_coarse is the size of the unlabeled pool. For each point, `ours`
    coarsely annotates that many pool images (initial batch random, growth
    per the sampling mode) and trains with the synthetic data; `fine-only`
    densely annotates the budget-equivalent number of images. Both id sets
    grow incrementally, so curves are nested, not resampled.
    """
    if not coarse_points:
        raise ValueError("empty budget grid")
    points = sorted(set(int(p) for p in coarse_points))
    if points[0] < 1 or points[-1] > cfg.n_coarse:
        raise ValueError(f"budget points must lie in [1, {cfg.n_coarse}]")

    pool = list(generate_pool(cfg.scene, cfg.n_coarse, "real"))
    by_id = {rec.record_id: (i, rec) for i, rec in enumerate(pool)}
    data = prepare_data(dataclasses.replace(cfg, n_coarse=0, n_fine=0))
    sample_rng = _rng(cfg.seed, _SAMPLE)
    num_classes = cfg.num_classes

    chosen: list[str] = []
    fine_chosen: list[str] = []
    fine_state = SamplerState(ids=tuple(r.record_id for r in pool),
                              P=np.zeros((len(pool), num_classes), dtype=np.int64))
    fine_rng = _rng(cfg.seed, _SAMPLE, 1)
    estimate_model = None
    out = []
    for n_c in points:
        grow = n_c - len(chosen)
        if not chosen or cfg.sampling == "uniform" or estimate_model is None:
            state = SamplerState(ids=tuple(r.record_id for r in pool),
                                 P=np.zeros((len(pool), num_classes), dtype=np.int64),
                                 chosen=list(chosen))
            chosen += uniform_select(state, grow, sample_rng)
        else:
            P = estimate_distribution(estimate_model, pool)
            state = SamplerState(ids=tuple(r.record_id for r in pool), P=P,
                                 chosen=list(chosen))
            chosen += select_next(state, grow)

        coarse = [coarsify_record(by_id[i][1], cfg.coarse_policy, seed=by_id[i][0])
                  for i in chosen]
        ours_cfg = dataclasses.replace(cfg, n_coarse=n_c, n_fine=0)
        ours_data = ExperimentData(num_classes, data.synthetic, coarse, [], data.val)
        ours = self_train(ours_cfg, ours_data)
        if cfg.refresh_estimates or estimate_model is None:
            estimate_model = ours[-1].model
        out.append(SweepPoint(
            n_images=n_c, method="ours",
            budget_hours=budget(ours_cfg).hours,
            miou=ours[-1].report.miou,
            chosen_ids=tuple(chosen),
        ))

        n_f = _matched_fine_count(n_c, cfg)
        if n_f > len(fine_chosen):
            fine_chosen += uniform_select(fine_state, n_f - len(fine_chosen), fine_rng)
        fine_recs = [by_id[i][1] for i in fine_chosen[:n_f]]
        fine_cfg = dataclasses.replace(cfg, n_coarse=0, n_fine=n_f, n_synthetic=0,
                                       iterations=0)
        fine_run = self_train(fine_cfg, ExperimentData(num_classes, [], [],
                                                       fine_recs, data.val))
        out.append(SweepPoint(
            n_images=n_f, method="fine-only",
            budget_hours=budget(fine_cfg).hours,
            miou=fine_run[-1].report.miou,
            chosen_ids=tuple(fine_chosen[:n_f]),
        ))
    return out


# ---------------------------------------------------------------------------
# CSV emission


def report_csv(reports: list[EvalReport]) -> str:
    if not reports:
        raise ValueError("no reports")
    c = len(reports[0].iou)
    lines = ["iteration," + ",".join(f"class_{k}" for k in range(c)) + ",miou,budget_hours"]
    for r in reports:
        cells = [str(r.iteration)]
        cells += [f"{v:.6f}" if np.isfinite(v) else "nan" for v in r.iou]
        cells += [f"{r.miou:.6f}", f"{r.budget_hours:.6f}"]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def loss_csv(logs: list[list[float]]) -> str:
    lines = ["round,epoch,loss"]
    for rnd, log in enumerate(logs):
        for epoch, value in enumerate(log):
            lines.append(f"{rnd},{epoch},{value:.6f}")
    return "\n".join(lines) + "\n"


def sweep_csv(points: list[SweepPoint]) -> str:
    lines = ["budget_hours,method,miou"]
    for p in points:
        lines.append(f"{p.budget_hours:.6f},{p.method},{p.miou:.6f}")
    return "\n".join(lines) + "\n"
