"""Procedural toy street-scene generator.

Scenes are stacks of simple shapes (rectangles, disks, triangles, thin bars)
drawn back to front over a background, so later shapes occlude earlier ones.
Class frequencies follow a geometric decay, which gives the pixel histogram a
long tail; the last class is a thin "pole-like" bar that coarse annotation
tends to lose entirely.

Two domains share the generator. "synthetic" renders clean colors; "real"
applies a fixed appearance shift (global per-channel affine, per-class hue
jitter, additive Gaussian noise) while keeping the label mask untouched. With
spec.paired_domains the two domains reuse the same geometry stream, so a
real/synthetic pair generated from one (seed, index) has identical labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .records import SceneDataset, SceneRecord

_GEOMETRY_STREAM = 101
_APPEARANCE_STREAM = 202
_GEN_DOMAINS = ("synthetic", "real")
# dense labels straight out of the generator: real scenes are "fine" until
# coarsified
_RECORD_DOMAIN = {"synthetic": "synthetic", "real": "real-fine"}


@dataclass(frozen=True)
class SceneSpec:
    """Geometry, palette and noise knobs for one family of scenes."""

    height: int = 64
    width: int = 64
    num_classes: int = 8
    seed: int = 0
    shapes_min: int = 9
    shapes_max: int = 16
    class_decay: float = 0.5  # frequency weight of class i is decay**(i-1)
    min_extent: float = 0.10  # shape half-extent, fraction of min(H, W)
    max_extent: float = 0.30
    bar_thickness: float = 3.0  # pixels, full width of the thin-bar class
    color_jitter: float = 0.08  # per-instance color perturbation
    pixel_noise: float = 0.02  # texture noise, both domains
    domain_shift: float = 1.0  # scales every "real" appearance effect
    paired_domains: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least background plus one class")
        if self.height < 4 or self.width < 4:
            raise ValueError("scene too small")
        if not 0 < self.class_decay <= 1:
            raise ValueError("class_decay must be in (0, 1]")


def class_weights(spec: SceneSpec) -> np.ndarray:
    """Sampling weights of the foreground classes 1..C-1 (sum to 1)."""
    w = spec.class_decay ** np.arange(spec.num_classes - 1, dtype=np.float64)
    return w / w.sum()


def class_palette(num_classes: int) -> np.ndarray:
    """(C, 3) base colors: gray background, hue wheel for the rest."""
    pal = np.zeros((num_classes, 3))
    pal[0] = (0.45, 0.45, 0.45)
    n = num_classes - 1
    for i in range(1, num_classes):
        pal[i] = _hsv_to_rgb_scalar((i - 1) / n, 0.65, 0.85)
    return pal


def _shape_kind(cls: int, num_classes: int) -> str:
    # pole-like bars for the rarest class once there is enough vocabulary
    if cls == num_classes - 1 and num_classes >= 5:
        return "bar"
    return ("rect", "rect", "disk", "disk", "tri", "tri")[(cls - 1) % 6]


def _shape_mask(kind: str, rng: np.random.Generator, spec: SceneSpec,
                yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    h, w = spec.height, spec.width
    emin = spec.min_extent * min(h, w)
    emax = spec.max_extent * min(h, w)
    cy = rng.uniform(0, h)
    cx = rng.uniform(0, w)
    if kind == "rect":
        ey = rng.uniform(emin, emax)
        ex = rng.uniform(emin, emax)
        return (np.abs(yy - cy) <= ey) & (np.abs(xx - cx) <= ex)
    if kind == "disk":
        r = rng.uniform(emin, emax)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "tri":
        r = rng.uniform(emin, emax)
        ang = np.sort(rng.uniform(0, 2 * np.pi, 3))
        vy = cy + r * np.sin(ang)
        vx = cx + r * np.cos(ang)
        m = np.ones(yy.shape, bool)
        for k in range(3):
            ay, ax = vy[k], vx[k]
            by, bx = vy[(k + 1) % 3], vx[(k + 1) % 3]
            cross = (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)
            m &= cross >= 0
        return m
    if kind == "bar":
        length = rng.uniform(emin, emax)
        theta = rng.uniform(0, np.pi)
        uy, ux = np.sin(theta), np.cos(theta)
        dy, dx = yy - cy, xx - cx
        along = dy * uy + dx * ux
        across = -dy * ux + dx * uy
        return (np.abs(along) <= length) & (np.abs(across) <= spec.bar_thickness / 2)
    raise ValueError(f"unknown shape kind {kind!r}")


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV on a (3, ...) array, all components in [0, 1]."""
    r, g, b = rgb
    mx = rgb.max(axis=0)
    mn = rgb.min(axis=0)
    d = mx - mn
    h = np.zeros_like(mx)
    nz = d > 0
    rmax = nz & (mx == r)
    gmax = nz & ~rmax & (mx == g)
    bmax = nz & ~rmax & ~gmax
    h[rmax] = ((g - b)[rmax] / d[rmax]) % 6
    h[gmax] = (b - r)[gmax] / d[gmax] + 2
    h[bmax] = (r - g)[bmax] / d[bmax] + 4
    h /= 6
    s = np.where(mx > 0, d / np.maximum(mx, 1e-12), 0.0)
    return np.stack([h, s, mx])


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv
    i = np.floor(h * 6) % 6
    f = h * 6 - np.floor(h * 6)
    p = v * (1 - s)
    q = v * (1 - f * s)
    t = v * (1 - (1 - f) * s)
    r = np.choose(i.astype(int), [v, q, p, p, t, v])
    g = np.choose(i.astype(int), [t, v, v, q, p, p])
    b = np.choose(i.astype(int), [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _hsv_to_rgb_scalar(h: float, s: float, v: float) -> tuple[float, float, float]:
    out = _hsv_to_rgb(np.array([[h], [s], [v]]))
    return tuple(out[:, 0])


def _scene_rngs(spec: SceneSpec, index: int, domain: str):
    dcode = _GEN_DOMAINS.index(domain)
    geom_code = 0 if spec.paired_domains else dcode
    geom = np.random.default_rng(
        np.random.SeedSequence((spec.seed, _GEOMETRY_STREAM, geom_code, index))
    )
    app = np.random.default_rng(
        np.random.SeedSequence((spec.seed, _APPEARANCE_STREAM, dcode, index))
    )
    return geom, app


def generate_scene(spec: SceneSpec, index: int, domain: str) -> SceneRecord:
    """Render one scene. Deterministic in (spec.seed, index, domain)."""
    if domain not in _GEN_DOMAINS:
        raise ValueError(f"domain must be one of {_GEN_DOMAINS}, got {domain!r}")
    geom, app = _scene_rngs(spec, index, domain)
    h, w, c = spec.height, spec.width, spec.num_classes
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy += 0.5
    xx += 0.5

    label = np.zeros((h, w), dtype=np.uint8)
    image = np.empty((3, h, w), dtype=np.float64)
    pal = class_palette(c)
    jit = spec.color_jitter
    image[:] = np.array(pal[0])[:, None, None] + geom.uniform(-jit, jit, 3)[:, None, None]

    weights = class_weights(spec)
    n_shapes = int(geom.integers(spec.shapes_min, spec.shapes_max + 1))
    classes = geom.choice(np.arange(1, c), size=n_shapes, p=weights)
    for cls in classes:  # back to front; later shapes occlude earlier ones
        mask = _shape_mask(_shape_kind(int(cls), c), geom, spec, yy, xx)
        if not mask.any():
            continue
        label[mask] = cls
        color = pal[cls] + geom.uniform(-jit, jit, 3)
        image[:, mask] = color[:, None]

    image += geom.normal(0.0, spec.pixel_noise, image.shape)

    if domain == "real":
        shift = spec.domain_shift
        hsv = _rgb_to_hsv(np.clip(image, 0.0, 1.0))
        for cls in np.unique(label):
            dh = app.uniform(-0.06, 0.06) * shift
            m = label == cls
            hsv[0, m] = (hsv[0, m] + dh) % 1.0
        image = _hsv_to_rgb(hsv)
        gain = app.uniform(1 - 0.12 * shift, 1 + 0.12 * shift, 3)
        offset = app.uniform(-0.06 * shift, 0.06 * shift, 3)
        image = image * gain[:, None, None] + offset[:, None, None]
        image += app.normal(0.0, 0.05 * shift, image.shape)

    np.clip(image, 0.0, 1.0, out=image)
    return SceneRecord(
        record_id=f"{domain}/{index}",
        domain=_RECORD_DOMAIN[domain],
        image=image.astype(np.float32),
        label=label,
    )


def generate_pool(spec: SceneSpec, n: int, domain: str, start: int = 0) -> SceneDataset:
    """Generate scenes start .. start+n-1 of one domain."""
    if n < 0:
        raise ValueError("pool size must be non-negative")
    records = [generate_scene(spec, i, domain) for i in range(start, start + n)]
    return SceneDataset(num_classes=spec.num_classes, records=records)
