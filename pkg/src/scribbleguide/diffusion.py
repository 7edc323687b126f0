"""DDIM sampling with training-free scribble guidance.

The backward update from timestep t to its predecessor is

    x_prev = sqrt(a_prev) * x0_hat + sqrt(1 - a_prev - sigma_t^2) * eps + sigma_t * z
    x0_hat = (x_t - sqrt(1 - a_t) * eps) / sqrt(a_t)
    sigma_t = eta * sqrt((1 - a_prev) / a_t)

with a_t the cumulative alpha product and eta = 0 giving the deterministic
sampler. Guidance subtracts guidance_scale times the latent gradient of the
combined scribble loss after each DDIM step; within the configured window of
inference steps, scribble regions additionally grow over self-attention
anchors and the grown regions replace the loss masks for subsequent steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import GuidanceConfig, cross_loss, grad_cross_loss
from .core import Grid2D, Rng, as_grid
from .propagation import (
    aggregate_self_attention,
    initial_state,
    merge_neighbors,
    pool_anchors,
    regions_to_masks,
)
from .scribble import ScribbleSet, with_masks
from . import toyworld

__all__ = [
    "DiffusionSchedule",
    "LatentState",
    "SampleResult",
    "StepDiagnostics",
    "GuidanceBlowupError",
    "make_schedule",
    "cfg_combine",
    "ddim_step",
    "guided_sample",
]


class GuidanceBlowupError(RuntimeError):
    """Latent went non-finite during guided sampling."""

    def __init__(self, step: int, t: int, diagnostics):
        super().__init__(
            f"non-finite latent at inference step {step} (timestep {t}); "
            f"lower guidance_scale or the loss multipliers"
        )
        self.step = step
        self.t = t
        self.diagnostics = diagnostics


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    n_train: int
    betas: np.ndarray        # (n_train,), betas[i] = beta at timestep i+1
    alphas_cum: np.ndarray   # (n_train,), cumulative product of (1 - beta)
    inference_steps: tuple   # descending 1-based timestep indices

    def alpha_bar(self, t: int) -> float:
        """Cumulative alpha at timestep t; t = 0 is the clean level (exactly 1)."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.n_train:
            raise ValueError(f"timestep {t} outside [0, {self.n_train}]")
        return float(self.alphas_cum[t - 1])

    def predecessor(self, t: int) -> int:
        """The inference index that follows t in the backward chain (0 after the last)."""
        steps = self.inference_steps
        try:
            pos = steps.index(t)
        except ValueError:
            raise ValueError(f"{t} is not an inference timestep of this schedule") from None
        return steps[pos + 1] if pos + 1 < len(steps) else 0


@dataclass(frozen=True, eq=False)
class LatentState:
    values: Grid2D
    t: int  # current timestep index (an entry of inference_steps, or 0 when clean)


def make_schedule(
    n_train: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    n_inference: int = 50,
) -> DiffusionSchedule:
    """Linear beta schedule with evenly strided inference timesteps.

    The stride is n_train // n_inference, so n_inference = n_train visits
    every timestep n_train .. 1.
    """
    if n_train < 1:
        raise ValueError(f"n_train must be >= 1, got {n_train}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"betas must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]")
    if not 1 <= n_inference <= n_train:
        raise ValueError(f"n_inference must be in [1, {n_train}], got {n_inference}")
    betas = np.linspace(beta_start, beta_end, n_train)
    alphas_cum = np.cumprod(1.0 - betas)
    stride = n_train // n_inference
    steps = tuple(n_train - i * stride for i in range(n_inference))
    return DiffusionSchedule(
        n_train=n_train, betas=betas, alphas_cum=alphas_cum, inference_steps=steps
    )


def cfg_combine(eps_cond: Grid2D, eps_uncond: Grid2D, omega: float) -> Grid2D:
    """Classifier-free combination (1 + omega) * eps_cond - omega * eps_uncond."""
    eps_cond = as_grid(eps_cond)
    eps_uncond = as_grid(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(
            f"branch shapes differ: {eps_cond.shape} vs {eps_uncond.shape}"
        )
    return (1.0 + omega) * eps_cond - omega * eps_uncond


def ddim_step(
    x: LatentState,
    eps_hat: Grid2D,
    schedule: DiffusionSchedule,
    eta: float = 0.0,
    rng: Rng = None,
) -> LatentState:
    """One backward DDIM update from x.t to its predecessor timestep."""
    values = as_grid(x.values)
    eps_hat = as_grid(eps_hat)
    if values.shape != eps_hat.shape:
        raise ValueError(f"latent {values.shape} vs eps {eps_hat.shape}")
    t_prev = schedule.predecessor(x.t)
    a_t = schedule.alpha_bar(x.t)
    a_prev = schedule.alpha_bar(t_prev)
    x0_hat = (values - math.sqrt(1.0 - a_t) * eps_hat) / math.sqrt(a_t)
    sigma = eta * math.sqrt((1.0 - a_prev) / a_t)
    rem = 1.0 - a_prev - sigma * sigma
    if rem < 0:
        raise ValueError(f"eta {eta} overshoots the noise budget at timestep {x.t}")
    out = math.sqrt(a_prev) * x0_hat + math.sqrt(rem) * eps_hat
    if eta > 0:
        if rng is None:
            raise ValueError("stochastic DDIM (eta > 0) needs an Rng")
        out = out + sigma * rng.normal(values.shape)
    return LatentState(values=out, t=t_prev)


@dataclass(frozen=True)
class StepDiagnostics:
    step: int          # 1-based inference step
    t: int             # timestep index
    focal: float
    moment: float
    total: float
    region_cells: int  # pixel cells across all loss masks after this step
    latent_max_abs: float


@dataclass(eq=False)
class SampleResult:
    x0: Grid2D
    diagnostics: list
    final_masks: list          # per-scribble bool masks in effect at the end
    propagation_state: object  # PropagationState or None when the window is empty
    trajectory: list = field(default=None)  # [(t, values)] when recorded


def guided_sample(
    world,
    scribble_set: ScribbleSet,
    cfg: GuidanceConfig,
    schedule: DiffusionSchedule,
    rng: Rng,
    record_trajectory: bool = False,
) -> SampleResult:
    """Run the full guided sampler from fresh noise down to a clean sample.

    Per inference step i (1-based) at timestep t:
      1. eps_hat from the conditional/unconditional branches via cfg_combine,
      2. deterministic-or-stochastic DDIM step to the predecessor,
      3. combined loss on the current masks; its latent gradient (chained
         through each token map's Jacobian) shifts the stepped latent by
         -guidance_scale * grad,
      4. if k1 <= i <= k2: aggregate self-attention, pool anchors, merge
         neighbors, and refresh the loss masks from the grown regions.
    """
    n = world.resolution
    if (scribble_set.height, scribble_set.width) != (n, n):
        raise ValueError(
            f"scribble canvas {(scribble_set.height, scribble_set.width)} "
            f"!= world resolution {(n, n)}"
        )
    tokens = scribble_set.tokens()
    for tok in tokens:
        if tok not in world.class_templates:
            raise ValueError(f"scribble token {tok!r} not in world vocabulary {world.spec.classes}")
    condition = tokens[0] if len(tokens) == 1 else tokens

    propagate = cfg.k2 >= 1
    state = None
    if propagate:
        target = max(cfg.agg_resolutions)
        anchor_side = target // cfg.anchor_factor
        state = initial_state(scribble_set, (anchor_side, anchor_side), cfg.k1, cfg.k2)
    masks = [s.mask for s in scribble_set.scribbles]

    x = rng.normal((n, n))
    diagnostics = []
    trajectory = [] if record_trajectory else None
    for i, t in enumerate(schedule.inference_steps, start=1):
        x_t = x
        eps_c = toyworld.model_epsilon(world, x_t, schedule, t, condition)
        eps_u = toyworld.model_epsilon(world, x_t, schedule, t, None)
        eps_hat = cfg_combine(eps_c, eps_u, cfg.omega)
        stepped = ddim_step(LatentState(x_t, t), eps_hat, schedule, cfg.eta_ddim, rng)

        loss_set = with_masks(scribble_set, masks)
        maps = {}
        contractions = {}
        for tok in tokens:
            maps[tok], contractions[tok] = toyworld.cross_attention_map(
                world, x_t, schedule, t, tok
            )
        terms = cross_loss(maps, loss_set, cfg)
        grads = grad_cross_loss(maps, loss_set, cfg)
        latent_grad = np.zeros_like(x_t)
        for tok in tokens:
            latent_grad += contractions[tok](grads[tok])
        shift = cfg.guidance_scale * latent_grad
        if cfg.shift_clip is not None:
            norm = float(np.linalg.norm(shift))
            if norm > cfg.shift_clip:
                shift *= cfg.shift_clip / norm
        x = stepped.values - shift

        # attention for the merge comes from the same forward pass as the loss
        if propagate and cfg.k1 <= i <= cfg.k2:
            stack = toyworld.self_attention_stack(world, x_t, schedule, t, cfg)
            aggregated = aggregate_self_attention(stack, cfg)
            anchors = pool_anchors(aggregated, cfg.anchor_factor)
            state = merge_neighbors(state, anchors, cfg)
            masks = regions_to_masks(state, n, n)

        diagnostics.append(
            StepDiagnostics(
                step=i,
                t=t,
                focal=terms.focal,
                moment=terms.moment,
                total=terms.total,
                region_cells=int(sum(int(m.sum()) for m in masks)),
                latent_max_abs=float(np.max(np.abs(x))),
            )
        )
        if not np.all(np.isfinite(x)):
            raise GuidanceBlowupError(i, t, diagnostics)
        if record_trajectory:
            trajectory.append((stepped.t, x.copy()))

    return SampleResult(
        x0=x,
        diagnostics=diagnostics,
        final_masks=masks,
        propagation_state=state,
        trajectory=trajectory,
    )
