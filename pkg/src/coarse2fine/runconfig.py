"""Flat key=value run configuration.

One namespaced key per line ("loss.lambda1 = 0.25"), "#" starts a comment,
blank lines are fine. Every key has a default, so an empty file is a valid
config; unknown or duplicate keys are errors, not warnings. The echo writer
emits the full effective configuration in a form the parser accepts again.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from typing import Any, Callable

from .augment import AugmentConfig
from .coarsify import CoarsePolicy
from .datagen import SceneSpec
from .losses import LossConfig
from .pipeline import ExperimentConfig
from .pseudolabel import TTAConfig


def _bool(s: str) -> bool:
    if s == "true":
        return True
    if s == "false":
        return False
    raise ValueError(f"expected true or false, got {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in s.split(","))


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p.strip()) for p in s.split(","))


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


@dataclass(frozen=True)
class _Key:
    default: Any
    parse: Callable[[str], Any]
    doc: str


REGISTRY: dict[str, _Key] = {
    "run.seed": _Key(0, int, "master seed; every stream derives from it"),
    "run.iterations": _Key(3, int, "self-training rounds after the pretrain round"),
    "run.epochs": _Key(30, int, "epochs per training round"),
    "run.batch_size": _Key(8, int, "items per optimizer step"),
    "run.base_lr": _Key(0.02, float, "peak learning rate of the poly schedule"),
    "run.sampling": _Key("model-based", _choice("model-based", "uniform"),
                         "annotation selection strategy for sweeps"),
    "run.eval_scales": _Key((0.5, 1.0, 2.0), _floats,
                            "multi-scale evaluation, comma separated"),
    "run.warm_start": _Key(False, _bool,
                           "reuse previous-round weights instead of fresh init"),
    "run.refresh_estimates": _Key(True, _bool,
                                  "re-estimate class coverage with each new model"),
    "run.fine_minutes": _Key(90.0, float, "annotation cost of one fine mask"),
    "data.coarse": _Key(60, int, "coarsely labeled real training images"),
    "data.fine": _Key(0, int, "densely labeled real training images"),
    "data.synthetic": _Key(60, int, "synthetic training images"),
    "data.val": _Key(40, int, "densely labeled validation images"),
    "scene.height": _Key(64, int, "scene height in pixels"),
    "scene.width": _Key(64, int, "scene width in pixels"),
    "scene.classes": _Key(8, int, "number of classes incl. background"),
    "scene.shapes_min": _Key(9, int, "fewest shapes per scene"),
    "scene.shapes_max": _Key(16, int, "most shapes per scene"),
    "scene.class_decay": _Key(0.5, float,
                              "frequency falloff per class id (long tail)"),
    "scene.domain_shift": _Key(1.0, float,
                               "appearance gap between synthetic and real"),
    "scene.paired": _Key(False, _bool,
                         "same geometry in synthetic and real pools"),
    "model.channels": _Key((16, 32, 64), _ints, "encoder widths per stage"),
    "loss.lambda1": _Key(0.5, float, "boundary term, ground-truth edge weight"),
    "loss.lambda2": _Key(0.5, float, "boundary term, predicted edge weight"),
    "loss.threshold": _Key(1e-8, float, "gradient-norm cutoff defining an edge"),
    "loss.lambda_bd": _Key(1.0, float,
                           "boundary loss weight on synthetic items (0 disables)"),
    "loss.temperature": _Key(1.0, float, "gumbel-softmax temperature"),
    "aug.p_select_real": _Key(0.5, float,
                              "chance a real item gets a cut-paste twin"),
    "aug.p_class": _Key(0.5, float, "per-class inclusion chance in paste masks"),
    "tta.scales": _Key((0.5, 1.0, 2.0), _floats,
                       "pseudo-labeling scales, combined with both flips"),
    "tta.confidence_threshold": _Key(0.9, float,
                                     "mean max-probability needed to accept"),
    "tta.combine": _Key("mean-prob", _choice("mean-prob", "mean-logit"),
                        "how augmented predictions are averaged"),
    "coarse.target_fraction": _Key(0.63, float,
                                   "labeled pixel fraction the policy aims for"),
    "coarse.min_component_area": _Key(16, int,
                                      "components smaller than this are dropped"),
    "coarse.max_erosion_iters": _Key(8, int, "erosion cap per component"),
}


def parse_config(text: str) -> dict[str, Any]:
    """Full effective config (defaults plus overrides) from config text."""
    values = {name: key.default for name, key in REGISTRY.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        name, _, rhs = line.partition("=")
        name, rhs = name.strip(), rhs.strip()
        if name not in REGISTRY:
            hint = difflib.get_close_matches(name, REGISTRY, n=1)
            extra = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise ValueError(f"line {lineno}: unknown key {name!r}{extra}")
        if name in seen:
            raise ValueError(f"line {lineno}: duplicate key {name!r}")
        seen.add(name)
        try:
            values[name] = REGISTRY[name].parse(rhs)
        except ValueError as err:
            raise ValueError(f"line {lineno}: {name}: {err}") from err
    return values


def load_config(path) -> dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_echo(values: dict[str, Any]) -> str:
    """The effective configuration as parseable text, one key per line."""
    lines = ["# effective configuration"]
    for name, key in REGISTRY.items():
        lines.append(f"{name} = {_fmt(values[name])}  # {key.doc}")
    return "\n".join(lines) + "\n"


def experiment_config(values: dict[str, Any]) -> ExperimentConfig:
    """Materialize the nested config objects from flat values."""
    scene = SceneSpec(
        height=values["scene.height"],
        width=values["scene.width"],
        num_classes=values["scene.classes"],
        seed=values["run.seed"],
        shapes_min=values["scene.shapes_min"],
        shapes_max=values["scene.shapes_max"],
        class_decay=values["scene.class_decay"],
        domain_shift=values["scene.domain_shift"],
        paired_domains=values["scene.paired"],
    )
    return ExperimentConfig(
        n_coarse=values["data.coarse"],
        n_fine=values["data.fine"],
        n_synthetic=values["data.synthetic"],
        n_val=values["data.val"],
        iterations=values["run.iterations"],
        epochs=values["run.epochs"],
        batch_size=values["run.batch_size"],
        base_lr=values["run.base_lr"],
        seed=values["run.seed"],
        sampling=values["run.sampling"],
        eval_scales=values["run.eval_scales"],
        scene=scene,
        channels=values["model.channels"],
        loss=LossConfig(
            lambda1=values["loss.lambda1"],
            lambda2=values["loss.lambda2"],
            boundary_threshold=values["loss.threshold"],
            lambda_bd=values["loss.lambda_bd"],
            gumbel_temperature=values["loss.temperature"],
        ),
        tta=TTAConfig(
            scales=values["tta.scales"],
            confidence_threshold=values["tta.confidence_threshold"],
            combine=values["tta.combine"],
        ),
        aug=AugmentConfig(
            p_select_real=values["aug.p_select_real"],
            p_class=values["aug.p_class"],
        ),
        coarse_policy=CoarsePolicy(
            target_fraction=values["coarse.target_fraction"],
            min_component_area=values["coarse.min_component_area"],
            max_erosion_iters=values["coarse.max_erosion_iters"],
        ),
        fine_minutes=values["run.fine_minutes"],
        warm_start=values["run.warm_start"],
        refresh_estimates=values["run.refresh_estimates"],
    )
