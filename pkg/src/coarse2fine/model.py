"""The toy encoder-decoder segmentation network.

Two stride-2 conv stages down, a bottleneck, then bilinear upsampling back to
input resolution and a 1x1 classification head. No batch norm: training and
evaluation run the same graph, which keeps finite-difference gradient checks
exact. Sized so a 64x64, 8-class run trains on one CPU core in minutes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensorops as T
from .tensorops import Tensor

CHECKPOINT_MAGIC = b"C2FM"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {"float32": 0, "float64": 1}
_CODE_DTYPES = {v: np.dtype(k) for k, v in _DTYPE_CODES.items()}

# rng stream id for parameter init, disjoint from the datagen streams
_INIT_STREAM = 303


@dataclass(frozen=True)
class ArchConfig:
    num_classes: int
    channels: tuple[int, int, int] = (16, 32, 64)
    init_seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.channels) != 3 or any(c < 1 for c in self.channels):
            raise ValueError(f"channels must be 3 positive stage widths, got {self.channels}")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))


def _param_shapes(arch: ArchConfig):
    c0, c1, c2 = arch.channels
    c = arch.num_classes
    return [
        ("enc0.w", (c0, 3, 3, 3)), ("enc0.b", (c0,)),
        ("enc1.w", (c1, c0, 3, 3)), ("enc1.b", (c1,)),
        ("enc2.w", (c2, c1, 3, 3)), ("enc2.b", (c2,)),
        ("mid.w", (c2, c2, 3, 3)), ("mid.b", (c2,)),
        ("reduce.w", (c1, c2, 1, 1)), ("reduce.b", (c1,)),
        ("dec.w", (c1, c1, 3, 3)), ("dec.b", (c1,)),
        ("head.w", (c, c1, 1, 1)), ("head.b", (c,)),
    ]


@dataclass
class ModelState:
    arch: ArchConfig
    params: dict[str, Tensor]
    velocity: dict[str, np.ndarray]

    @property
    def dtype(self) -> np.dtype:
        return self.params["enc0.w"].data.dtype


def init_model(arch: ArchConfig, dtype=np.float32) -> ModelState:
    """He-style init for conv weights, zeros for biases and velocity."""
    rng = np.random.default_rng(np.random.SeedSequence((arch.init_seed, _INIT_STREAM)))
    params, velocity = {}, {}
    for name, shape in _param_shapes(arch):
        if name.endswith(".b"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            data = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[name] = Tensor(data, requires_grad=True)
        velocity[name] = np.zeros(shape, dtype=dtype)
    return ModelState(arch, params, velocity)


def forward(model: ModelState, image: np.ndarray) -> Tensor:
    """Logits (C, H, W) for one image (3, H, W).

    Inputs whose sides are not multiples of 4 are reflect-padded on the
    bottom/right before the encoder and cropped back after the head, so the
    output always matches the input resolution.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"image must be (3, H, W), got {img.shape}")
    h, w = img.shape[1:]
    pad_h, pad_w = (-h) % 4, (-w) % 4
    if pad_h or pad_w:
        img = np.pad(img, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    p = model.params
    x = Tensor(img.astype(model.dtype, copy=False))
    x = T.relu(T.add_channel_bias(T.conv2d(x, p["enc0.w"]), p["enc0.b"]))
    x = T.relu(T.add_channel_bias(T.conv2d(x, p["enc1.w"], stride=2), p["enc1.b"]))
    x = T.relu(T.add_channel_bias(T.conv2d(x, p["enc2.w"], stride=2), p["enc2.b"]))
    x = T.relu(T.add_channel_bias(T.conv2d(x, p["mid.w"]), p["mid.b"]))
    x = T.relu(T.add_channel_bias(T.conv2d(x, p["reduce.w"]), p["reduce.b"]))
    x = T.bilinear_resize(x, 2.0)
    x = T.relu(T.add_channel_bias(T.conv2d(x, p["dec.w"]), p["dec.b"]))
    x = T.bilinear_resize(x, 2.0)
    x = T.add_channel_bias(T.conv2d(x, p["head.w"]), p["head.b"])
    if pad_h or pad_w:
        x = T.crop(x, 0, 0, h, w)
    return x


def gradients(model: ModelState) -> dict[str, np.ndarray]:
    grads = {}
    for name, p in model.params.items():
        if p.grad is None:
            raise ValueError(f"no gradient for {name}; run backward first")
        grads[name] = p.grad
    return grads


def clear_grads(model: ModelState):
    for p in model.params.values():
        p.grad = None


def sgd_step(model: ModelState, grads: dict, lr: float,
             momentum: float = 0.9, weight_decay: float = 1e-4) -> ModelState:
    """Momentum SGD, in place: v <- momentum*v + g + wd*theta; theta -= lr*v."""
    for name, p in model.params.items():
        g = grads.get(name)
        if g is None:
            raise ValueError(f"missing gradient for {name}")
        v = model.velocity[name]
        v *= momentum
        v += g.astype(v.dtype, copy=False)
        if weight_decay:
            v += (weight_decay * p.data).astype(v.dtype, copy=False)
        p.data -= lr * v
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"non-finite update for {name}")
    return model


def poly_lr(base_lr: float, step: int, total_steps: int, power: float = 2.0) -> float:
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 - step / total_steps) ** power


# ---------------------------------------------------------------------------
# checkpoint file


def _read(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise ValueError("checkpoint truncated")
    return b


def save_checkpoint(path, model: ModelState):
    """Header (magic, version, arch, dtype) then per-parameter name, shape,
    and values as little-endian float64. Velocity is transient and not saved.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HHB", CHECKPOINT_VERSION, model.arch.num_classes,
                            _DTYPE_CODES[model.dtype.name]))
        f.write(struct.pack("<H", len(model.arch.channels)))
        for c in model.arch.channels:
            f.write(struct.pack("<H", c))
        f.write(struct.pack("<Q", model.arch.init_seed))
        f.write(struct.pack("<H", len(model.params)))
        for name, p in model.params.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", p.data.ndim))
            f.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            f.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as f:
        if _read(f, 4) != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        version, num_classes, dtype_code = struct.unpack("<HHB", _read(f, 5))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if dtype_code not in _CODE_DTYPES:
            raise ValueError(f"unknown dtype code {dtype_code}")
        (n_stages,) = struct.unpack("<H", _read(f, 2))
        channels = struct.unpack(f"<{n_stages}H", _read(f, 2 * n_stages))
        (init_seed,) = struct.unpack("<Q", _read(f, 8))
        arch = ArchConfig(num_classes=num_classes, channels=channels, init_seed=init_seed)
        dtype = _CODE_DTYPES[dtype_code]

        (n_params,) = struct.unpack("<H", _read(f, 2))
        expected = dict(_param_shapes(arch))
        if n_params != len(expected):
            raise ValueError(f"expected {len(expected)} parameters, file has {n_params}")
        params, velocity = {}, {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", _read(f, 2))
            name = _read(f, name_len).decode("utf-8")
            if name not in expected:
                raise ValueError(f"unexpected parameter {name!r}")
            (ndim,) = struct.unpack("<B", _read(f, 1))
            shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim))
            if shape != expected[name]:
                raise ValueError(f"{name}: shape {shape} does not match arch {expected[name]}")
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read(f, 8 * count), dtype="<f8").reshape(shape)
            params[name] = Tensor(data.astype(dtype), requires_grad=True)
            velocity[name] = np.zeros(shape, dtype=dtype)
        if f.read(1):
            raise ValueError("trailing bytes after last parameter")
    return ModelState(arch, params, velocity)
