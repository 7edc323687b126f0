"""Focal cross-attention loss and the combined scribble-guidance objective.

The focal term treats each token's activation map as per-cell logits against
the scribble's binary mask, with the focusing factor (1 - sigma(A))^beta and
class weight alpha*M + (1-alpha)*(1-M) applied verbatim to both positive and
negative cells. The combined objective adds the moment-alignment terms:

    total = w_focal * focal + w_moment * (lambda1 * centroid + lambda2 * central)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import Grid2D, as_grid
from .moments import grad_moment_loss, moment_loss, sigmoid
from .scribble import ScribbleSet

__all__ = [
    "GuidanceConfig",
    "CrossLossTerms",
    "focal_loss",
    "grad_focal_loss",
    "cross_loss",
    "grad_cross_loss",
]


def _softplus(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


@dataclass
class GuidanceConfig:
    """All knobs of the guided sampler, with the documented defaults."""

    alpha: float = 0.25           # focal class-balance weight
    beta: float = 2.0             # focal focusing exponent
    lambda1: float = 0.6          # centroid term weight
    lambda2: float = 0.6          # central (orientation) term weight
    w_focal: float = 5.0          # focal multiplier in the combined loss
    w_moment: float = 3.0         # moment multiplier in the combined loss
    guidance_scale: float = 2.0   # latent shift step size
    shift_clip: float = 3.0       # L2 cap on the applied shift; None disables
    omega: float = 1.0            # classifier-free guidance strength
    eta_ddim: float = 0.0         # DDIM stochasticity (0 = deterministic)
    tau: float = 0.001            # merge threshold on symmetric KL
    top_k: int = 20               # anchors merged per propagation step
    k1: int = 5                   # first inference step (1-based) with propagation
    k2: int = 15                  # last inference step with propagation
    agg_resolutions: tuple = (8, 16, 32)
    agg_weights: tuple = None     # None -> uniform; normalized to sum 1
    anchor_factor: int = 2        # aggregated-resolution cells per anchor side

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.shift_clip is not None and self.shift_clip <= 0:
            raise ValueError(f"shift_clip must be > 0 or None, got {self.shift_clip}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.k1 > self.k2:
            raise ValueError(f"propagation window needs k1 <= k2, got [{self.k1}, {self.k2}]")
        res = tuple(int(r) for r in self.agg_resolutions)
        if not res or any(r < 1 for r in res):
            raise ValueError("agg_resolutions must be a nonempty list of positive ints")
        target = max(res)
        if any(target % r for r in res):
            raise ValueError(f"every aggregation resolution must divide the target {target}")
        self.agg_resolutions = res
        if self.agg_weights is None:
            weights = np.full(len(res), 1.0 / len(res))
        else:
            weights = np.asarray(self.agg_weights, dtype=np.float64)
            if weights.shape != (len(res),):
                raise ValueError("agg_weights length must match agg_resolutions")
            if np.any(weights < 0) or not weights.sum() > 0:
                raise ValueError("agg_weights must be nonnegative with positive sum")
            weights = weights / weights.sum()
        self.agg_weights = tuple(float(w) for w in weights)
        if self.anchor_factor < 1 or target % self.anchor_factor:
            raise ValueError(
                f"anchor_factor must divide the aggregation target {target}, "
                f"got {self.anchor_factor}"
            )


class CrossLossTerms(NamedTuple):
    focal: float
    moment: float
    total: float


def focal_loss(
    activations: Grid2D,
    mask: np.ndarray,
    alpha: float = 0.25,
    beta: float = 2.0,
) -> float:
    """Mean per-cell focal BCE of logits against a binary mask.

    Per cell: (1 - sigma(A))^beta * (alpha*M + (1-alpha)*(1-M)) * BCE(M, sigma(A)).
    """
    a = as_grid(activations)
    m = as_grid(mask)
    if a.shape != m.shape:
        raise ValueError(f"shape mismatch: activations {a.shape} vs mask {m.shape}")
    # log sigma(A) = -softplus(-A), log(1 - sigma(A)) = -softplus(A)
    sp_pos = _softplus(a)
    sp_neg = _softplus(-a)
    bce = m * sp_neg + (1.0 - m) * sp_pos
    focus = np.exp(-beta * sp_pos)  # (1 - sigma(A))^beta without underflow
    weight = alpha * m + (1.0 - alpha) * (1.0 - m)
    return float(np.mean(focus * weight * bce))


def grad_focal_loss(
    activations: Grid2D,
    mask: np.ndarray,
    alpha: float = 0.25,
    beta: float = 2.0,
) -> Grid2D:
    """Gradient of focal_loss w.r.t. the activations (same shape)."""
    a = as_grid(activations)
    m = as_grid(mask)
    if a.shape != m.shape:
        raise ValueError(f"shape mismatch: activations {a.shape} vs mask {m.shape}")
    p = sigmoid(a)
    sp_pos = _softplus(a)
    sp_neg = _softplus(-a)
    bce = m * sp_neg + (1.0 - m) * sp_pos
    focus = np.exp(-beta * sp_pos)
    weight = alpha * m + (1.0 - alpha) * (1.0 - m)
    return weight * focus * ((p - m) - beta * p * bce) / a.size


def cross_loss(attn_maps, scribble_set: ScribbleSet, cfg: GuidanceConfig) -> CrossLossTerms:
    """Combined guidance loss over all scribbles and their tokens.

    The focal term is averaged over scribbles and per-scribble tokens (the
    same prefactors as the moment terms); w_focal and w_moment are absolute
    multipliers, not a convex combination.
    """
    if len(scribble_set.scribbles) == 0:
        raise ValueError("scribble set is empty")
    focal = 0.0
    for s in scribble_set.scribbles:
        per = 0.0
        for t in s.tokens:
            if t not in attn_maps:
                raise ValueError(f"no activation map for token {t!r}")
            per += focal_loss(attn_maps[t], s.mask.astype(np.float64), cfg.alpha, cfg.beta)
        focal += per / len(s.tokens)
    focal /= len(scribble_set.scribbles)
    moment, _, _ = moment_loss(attn_maps, scribble_set, cfg.lambda1, cfg.lambda2)
    total = cfg.w_focal * focal + cfg.w_moment * moment
    return CrossLossTerms(focal=focal, moment=moment, total=total)


def grad_cross_loss(attn_maps, scribble_set: ScribbleSet, cfg: GuidanceConfig):
    """Gradient of cross_loss().total w.r.t. each token's activation map."""
    if len(scribble_set.scribbles) == 0:
        raise ValueError("scribble set is empty")
    n_s = len(scribble_set.scribbles)
    grads = {t: np.zeros((scribble_set.height, scribble_set.width)) for t in scribble_set.tokens()}
    for s in scribble_set.scribbles:
        for t in s.tokens:
            if t not in attn_maps:
                raise ValueError(f"no activation map for token {t!r}")
            g = grad_focal_loss(attn_maps[t], s.mask.astype(np.float64), cfg.alpha, cfg.beta)
            grads[t] += (cfg.w_focal / (n_s * len(s.tokens))) * g
    for t, g in grad_moment_loss(attn_maps, scribble_set, cfg.lambda1, cfg.lambda2).items():
        grads[t] += cfg.w_moment * g
    return grads
