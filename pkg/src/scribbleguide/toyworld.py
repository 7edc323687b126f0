"""A finite Gaussian-mixture image world with exact score and attention maps.

Templates are images built from anisotropic Gaussian blobs (one per placed
class) on an N x N grid. The forward noising process on this mixture has a
closed-form posterior over templates at every noise level, which yields:

  * responsibilities: posterior template weights given a noisy latent,
  * model_epsilon:    the exact noise prediction (mixture score),
  * cross_attention_map: per-class activation logits from the posterior soft
    masks, plus the exact latent Jacobian contraction for guidance,
  * self_attention_stack: per-resolution pixel-affinity rows mixed by the
    posterior, for the propagation stage,
  * decode_final: nearest-template readout of a finished sample.

Everything is plain float64 numpy; no learned components anywhere.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import GuidanceConfig
from .core import Grid2D, as_grid, avg_pool, normalize_prob
from .moments import wrap_axis_angle
from .propagation import SelfAttentionStack

__all__ = [
    "WorldSpec",
    "Template",
    "ToyWorld",
    "DecodeResult",
    "default_world_spec",
    "build_world",
    "render_blob",
    "responsibilities",
    "model_epsilon",
    "cross_attention_map",
    "self_attention_stack",
    "decode_final",
]


@dataclass(frozen=True)
class WorldSpec:
    resolution: int = 32
    classes: tuple = ("dog",)
    orientations_deg: tuple = (0.0, 30.0, 60.0, 90.0, 120.0, 150.0)
    centers: tuple = ((8.0, 8.0), (16.0, 8.0), (24.0, 8.0),
                      (8.0, 16.0), (16.0, 16.0), (24.0, 16.0),
                      (8.0, 24.0), (16.0, 24.0), (24.0, 24.0))
    axes: tuple = (6.0, 2.0)          # (sigma_major, sigma_minor) in pixels
    s_logit: float = 10.0             # logit scale of attention maps
    h: float = 0.05                   # self-attention intensity bandwidth
    multi_object: bool = False        # every class in every template if True
    priors: tuple = None              # None -> uniform over templates

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "orientations_deg", tuple(float(o) for o in self.orientations_deg))
        object.__setattr__(self, "centers", tuple((float(x), float(y)) for x, y in self.centers))
        object.__setattr__(self, "axes", (float(self.axes[0]), float(self.axes[1])))
        if len(self.classes) < 1 or len(self.orientations_deg) < 1 or len(self.centers) < 1:
            raise ValueError("world needs at least one class, orientation, and center")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class names")
        major, minor = self.axes
        if not (major >= minor > 0):
            raise ValueError(f"axes must satisfy major >= minor > 0, got {self.axes}")
        if self.resolution < 3 * major:
            raise ValueError(
                f"resolution {self.resolution} too small for major axis {major} "
                f"(needs at least {math.ceil(3 * major)})"
            )
        if self.h <= 0:
            raise ValueError(f"bandwidth h must be > 0, got {self.h}")


def default_world_spec(**overrides) -> WorldSpec:
    """The documented default world, with keyword overrides."""
    return WorldSpec(**overrides)


@dataclass(frozen=True, eq=False)
class Template:
    index: int
    placements: tuple   # ((class_name, theta_radians, (cx, cy)), ...)
    image: np.ndarray   # (N, N), pixelwise max of the class blobs
    soft_masks: dict    # class -> (N, N) blob field

    def theta_of(self, cls: str) -> float:
        for name, theta, _ in self.placements:
            if name == cls:
                return theta
        raise KeyError(cls)

    def center_of(self, cls: str):
        for name, _, center in self.placements:
            if name == cls:
                return center
        raise KeyError(cls)

    def classes(self):
        return tuple(name for name, _, _ in self.placements)


@dataclass(eq=False)
class ToyWorld:
    spec: WorldSpec
    templates: tuple
    priors: np.ndarray        # (n,)
    images: np.ndarray        # (n, N*N) flattened template images
    sq_norms: np.ndarray      # (n,) squared image norms
    class_templates: dict     # class -> sorted index array of templates containing it
    class_masks: dict         # class -> (n, N*N) soft masks, zero rows where absent
    _log_priors: np.ndarray = field(default=None, repr=False)
    _sa_cache: dict = field(default_factory=dict, repr=False)

    @property
    def resolution(self) -> int:
        return self.spec.resolution

    def n_templates(self) -> int:
        return len(self.templates)


def render_blob(n: int, cx: float, cy: float, theta: float,
                sigma_major: float, sigma_minor: float) -> Grid2D:
    """Anisotropic Gaussian blob exp(-0.5 d^T Sigma(theta)^-1 d) on an n x n grid.

    theta is the major-axis direction in (x right, y down) coordinates.
    """
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    dx = xs - cx
    dy = ys - cy
    c, s = math.cos(theta), math.sin(theta)
    d_maj = (dx * c + dy * s) / sigma_major
    d_min = (-dx * s + dy * c) / sigma_minor
    return np.exp(-0.5 * (d_maj * d_maj + d_min * d_min))


def build_world(spec: WorldSpec) -> ToyWorld:
    """Enumerate templates as the Cartesian product classes x orientations x centers.

    Default mode places one single-class blob per template. With
    spec.multi_object, every template places one blob of EVERY class instead
    (the product then runs over per-class placements) and the image is the
    pixelwise max of the blobs.
    """
    n = spec.resolution
    major, minor = spec.axes
    thetas = [wrap_axis_angle(math.radians(d)) for d in spec.orientations_deg]
    placements_per_class = [
        (theta, center) for theta in thetas for center in spec.centers
    ]
    templates = []
    if spec.multi_object:
        combos = itertools.product(placements_per_class, repeat=len(spec.classes))
        for idx, combo in enumerate(combos):
            placed = tuple(
                (cls, theta, center)
                for cls, (theta, center) in zip(spec.classes, combo)
            )
            masks = {
                cls: render_blob(n, cx, cy, theta, major, minor)
                for cls, theta, (cx, cy) in placed
            }
            image = np.maximum.reduce(list(masks.values()))
            templates.append(Template(idx, placed, image, masks))
    else:
        idx = 0
        for cls in spec.classes:
            for theta, (cx, cy) in placements_per_class:
                mask = render_blob(n, cx, cy, theta, major, minor)
                templates.append(
                    Template(idx, ((cls, theta, (cx, cy)),), mask, {cls: mask})
                )
                idx += 1
    count = len(templates)
    if spec.priors is None:
        priors = np.full(count, 1.0 / count)
    else:
        if len(spec.priors) != count:
            raise ValueError(
                f"priors length {len(spec.priors)} != template count {count}"
            )
        priors = normalize_prob(np.asarray(spec.priors, dtype=np.float64))
    images = np.stack([t.image.ravel() for t in templates])
    class_templates = {}
    class_masks = {}
    for cls in spec.classes:
        idxs = np.array([t.index for t in templates if cls in t.classes()], dtype=np.intp)
        class_templates[cls] = idxs
        rows = np.zeros_like(images)
        for t in templates:
            if cls in t.soft_masks:
                rows[t.index] = t.soft_masks[cls].ravel()
        class_masks[cls] = rows
    return ToyWorld(
        spec=spec,
        templates=tuple(templates),
        priors=priors,
        images=images,
        sq_norms=np.einsum("ij,ij->i", images, images),
        class_templates=class_templates,
        class_masks=class_masks,
        _log_priors=np.log(priors),
    )


def _allowed_indices(world: ToyWorld, condition):
    if condition is None:
        return np.arange(world.n_templates(), dtype=np.intp)
    classes = (condition,) if isinstance(condition, str) else tuple(condition)
    idxs = None
    for cls in classes:
        if cls not in world.class_templates:
            raise ValueError(f"unknown class {cls!r}; vocabulary is {world.spec.classes}")
        cur = set(world.class_templates[cls].tolist())
        idxs = cur if idxs is None else (idxs & cur)
    if not idxs:
        raise ValueError(f"no template contains all of {classes}")
    return np.array(sorted(idxs), dtype=np.intp)


def _noise_level(schedule, t: int):
    a = schedule.alpha_bar(t)
    if not 0.0 < a < 1.0:
        raise ValueError(f"timestep {t} has alpha-bar {a}, posterior undefined")
    return math.sqrt(a), 1.0 - a


def responsibilities(world: ToyWorld, x: Grid2D, schedule, t: int, condition=None) -> np.ndarray:
    """Posterior template weights given latent x at timestep t.

    Returns a full-length probability vector; templates outside the condition
    (a class name, or an iterable that the template must fully contain) get
    exactly zero. Computed in log space with the shared ||x||^2 term dropped.
    """
    x = as_grid(x)
    n = world.resolution
    if x.shape != (n, n):
        raise ValueError(f"latent shape {x.shape} != world resolution {(n, n)}")
    s, var = _noise_level(schedule, t)
    allowed = _allowed_indices(world, condition)
    flat = x.ravel()
    logits = world._log_priors[allowed] + (
        2.0 * s * (world.images[allowed] @ flat) - s * s * world.sq_norms[allowed]
    ) / (2.0 * var)
    logits -= logits.max()
    w = np.exp(logits)
    w /= w.sum()
    full = np.zeros(world.n_templates())
    full[allowed] = w
    return full


def model_epsilon(world: ToyWorld, x: Grid2D, schedule, t: int, condition=None) -> Grid2D:
    """Exact noise prediction (x - sqrt(a) * posterior mean) / sqrt(1 - a).

    Equals -sqrt(1 - a) times the score of the noised mixture density.
    """
    x = as_grid(x)
    s, var = _noise_level(schedule, t)
    w = responsibilities(world, x, schedule, t, condition)
    mu_bar = (w @ world.images).reshape(x.shape)
    return (x - s * mu_bar) / math.sqrt(var)


def cross_attention_map(world: ToyWorld, x: Grid2D, schedule, t: int, cls: str):
    """Activation logits for a class, plus the latent-Jacobian contraction.

    A = s_logit * (sum_i w_i * mask_i^cls - 0.5), with w the responsibilities
    conditioned on cls. The returned closure maps a cotangent grid g to
    grad_x sum(g * A), chained through the responsibility softmax.
    """
    x = as_grid(x)
    s, var = _noise_level(schedule, t)
    w = responsibilities(world, x, schedule, t, condition=cls)
    masks = world.class_masks[cls]
    soft = (w @ masks).reshape(x.shape)
    activations = world.spec.s_logit * (soft - 0.5)

    def contract(g: Grid2D) -> Grid2D:
        g = as_grid(g)
        if g.shape != x.shape:
            raise ValueError(f"cotangent shape {g.shape} != latent shape {x.shape}")
        b = world.spec.s_logit * (masks @ g.ravel())
        b_bar = float(w @ b)
        coef = w * (b - b_bar)
        return (s / var) * (coef @ world.images).reshape(x.shape)

    return activations, contract


def _template_affinity(world: ToyWorld, r: int) -> np.ndarray:
    """Row-stochastic pixel-affinity matrices per template at resolution r.

    Cached float32 (n_templates, r^2, r^2); rows are softmax over keys of
    -(I(p) - I(q))^2 / h on the avg-pooled template image.
    """
    cached = world._sa_cache.get(r)
    if cached is not None:
        return cached
    n = world.resolution
    if r < 1 or n % r:
        raise ValueError(f"aggregation resolution {r} must divide world resolution {n}")
    out = np.empty((world.n_templates(), r * r, r * r), dtype=np.float32)
    for i, tpl in enumerate(world.templates):
        v = avg_pool(tpl.image, n // r).ravel()
        d2 = (v[:, None] - v[None, :]) ** 2
        logits = -d2 / world.spec.h
        logits -= logits.max(axis=1, keepdims=True)
        rows = np.exp(logits)
        rows /= rows.sum(axis=1, keepdims=True)
        out[i] = rows.astype(np.float32)
    world._sa_cache[r] = out
    return out


def self_attention_stack(world: ToyWorld, x: Grid2D, schedule, t: int,
                         cfg: GuidanceConfig) -> SelfAttentionStack:
    """Posterior-mixed self-attention rows at each configured resolution."""
    w = responsibilities(world, x, schedule, t, condition=None)
    w32 = w.astype(np.float32)
    maps = {}
    for r in cfg.agg_resolutions:
        cache = _template_affinity(world, r)
        mixed = (w32 @ cache.reshape(world.n_templates(), -1)).astype(np.float64)
        mixed = mixed.reshape(r * r, r * r)
        mixed /= mixed.sum(axis=1, keepdims=True)
        maps[r] = mixed
    return SelfAttentionStack(maps=maps)


@dataclass(frozen=True, eq=False)
class DecodeResult:
    template_index: int
    template: Template
    masks: dict    # class -> bool (N, N); zeros for classes absent from the template
    thetas: dict   # class -> orientation, only classes present in the template
    centers: dict  # class -> (cx, cy), only classes present


def decode_final(world: ToyWorld, x0: Grid2D, schedule) -> DecodeResult:
    """Read out a finished sample as its argmax-responsibility template.

    Responsibilities are evaluated at the smallest inference timestep (the
    near-zero-noise level); exact ties resolve to the smaller template index.
    Binary class masks threshold the template's soft masks at 0.5.
    """
    t_eval = min(schedule.inference_steps)
    w = responsibilities(world, x0, schedule, t_eval)
    index = int(np.argmax(w))
    tpl = world.templates[index]
    n = world.resolution
    masks = {}
    for cls in world.spec.classes:
        if cls in tpl.soft_masks:
            masks[cls] = tpl.soft_masks[cls] >= 0.5
        else:
            masks[cls] = np.zeros((n, n), dtype=bool)
    thetas = {name: theta for name, theta, _ in tpl.placements}
    centers = {name: center for name, _, center in tpl.placements}
    return DecodeResult(index, tpl, masks, thetas, centers)
