"""Scribble propagation over self-attention: aggregate, pool, merge.

Self-attention rows (one key distribution per query location, per resolution)
are upsampled to the largest resolution, renormalized, and mixed with the
per-resolution weights. Query locations are then average-pooled into a coarse
anchor grid. A scribble's anchor region grows by absorbing 8-neighbor anchors
whose pooled key distribution is within a symmetric-KL threshold of the
region's mean distribution; merges happen in a global top-k batch per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import GuidanceConfig
from .core import bilinear_axis_coords, normalize_prob
from .scribble import ScribbleSet, boundary_anchors

__all__ = [
    "SelfAttentionStack",
    "AnchorGrid",
    "PropagationState",
    "aggregate_self_attention",
    "pool_anchors",
    "symmetric_kl",
    "merge_neighbors",
    "initial_state",
    "regions_to_masks",
]

KL_SMOOTHING = 1e-8


@dataclass(frozen=True, eq=False)
class SelfAttentionStack:
    """Per-resolution row-stochastic attention: {r: array (r*r, r*r)}."""

    maps: dict

    def __post_init__(self):
        for r, m in self.maps.items():
            if m.shape != (r * r, r * r):
                raise ValueError(
                    f"resolution {r} map has shape {m.shape}, expected {(r * r, r * r)}"
                )

    def resolutions(self):
        return tuple(sorted(self.maps))


@dataclass(frozen=True, eq=False)
class AnchorGrid:
    """Pooled key distributions: dist[ai, aj] is a probability vector."""

    dist: np.ndarray  # (ah, aw, n_keys)

    @property
    def shape(self):
        return self.dist.shape[:2]


@dataclass(eq=False)
class PropagationState:
    regions: np.ndarray  # bool (n_scribbles, ah, aw), monotone under merges
    visited: np.ndarray  # bool (ah, aw): anchors already owned by any region
    k1: int              # first 1-based inference step of the merge window
    k2: int              # last step of the window

    def region_cell_count(self) -> int:
        return int(self.regions.sum())


def _upsample_rows(rows: np.ndarray, r: int, target: int) -> np.ndarray:
    """Bilinearly upsample each (r, r) key map to (target, target), flattened."""
    n = rows.shape[0]
    grids = rows.reshape(n, r, r)
    x0, x1, tx = bilinear_axis_coords(r, target)
    y0, y1, ty = bilinear_axis_coords(r, target)
    gx = grids[:, :, x0] + tx[None, None, :] * (grids[:, :, x1] - grids[:, :, x0])
    up = gx[:, y0, :] + ty[None, :, None] * (gx[:, y1, :] - gx[:, y0, :])
    return up.reshape(n, target * target)


def aggregate_self_attention(stack: SelfAttentionStack, cfg: GuidanceConfig) -> np.ndarray:
    """Weighted multi-resolution aggregation at the largest configured resolution.

    Each resolution's key distributions are upsampled over the key grid and
    renormalized; query locations map to the target grid by integer division.
    Returns (target^2, target^2) with rows summing to 1.
    """
    res = cfg.agg_resolutions
    missing = [r for r in res if r not in stack.maps]
    if missing:
        raise ValueError(f"stack is missing resolutions {missing}")
    target = max(res)
    n_q = target * target
    out = np.zeros((n_q, n_q))
    tgt_rows, tgt_cols = np.divmod(np.arange(n_q), target)
    for r, weight in zip(res, cfg.agg_weights):
        m = np.asarray(stack.maps[r], dtype=np.float64)
        up = m if r == target else _upsample_rows(m, r, target)
        sums = up.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise ValueError(f"resolution {r} has a nonpositive row sum")
        up = up / sums
        delta = target // r
        src = (tgt_rows // delta) * r + (tgt_cols // delta)
        out += weight * up[src]
    return out


def pool_anchors(aggregated: np.ndarray, factor: int) -> AnchorGrid:
    """Average query rows over factor x factor blocks of the query grid."""
    n_q, n_k = aggregated.shape
    target = math.isqrt(n_q)
    if target * target != n_q:
        raise ValueError(f"aggregated map has non-square query count {n_q}")
    if factor < 1 or target % factor:
        raise ValueError(f"anchor factor {factor} does not divide resolution {target}")
    ah = target // factor
    grid = aggregated.reshape(ah, factor, ah, factor, n_k).mean(axis=(1, 3))
    grid = grid / grid.sum(axis=2, keepdims=True)
    return AnchorGrid(dist=grid)


def symmetric_kl(p, q, smoothing: float = KL_SMOOTHING) -> float:
    """0.5*KL(p||q) + 0.5*KL(q||p) after additive smoothing + renormalization."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"distributions must be 1-d and equal length, got {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("distributions must be nonnegative")
    ps = p + smoothing
    ps = ps / ps.sum()
    qs = q + smoothing
    qs = qs / qs.sum()
    log_ratio = np.log(ps) - np.log(qs)
    d = 0.5 * float(ps @ log_ratio) + 0.5 * float(qs @ -log_ratio)
    # mathematically >= 0; clamp fp cancellation noise on near-equal inputs
    return max(d, 0.0)


def initial_state(
    scribble_set: ScribbleSet, anchor_shape, k1: int, k2: int
) -> PropagationState:
    """Anchor-level regions from pixel masks: an anchor is set if any of its
    covered mask cells is set. Mask dimensions must tile the anchor grid."""
    ah, aw = anchor_shape
    h, w = scribble_set.height, scribble_set.width
    if h % ah or w % aw:
        raise ValueError(f"anchor grid {(ah, aw)} does not tile canvas {(h, w)}")
    by, bx = h // ah, w // aw
    regions = np.zeros((len(scribble_set.scribbles), ah, aw), dtype=bool)
    for i, s in enumerate(scribble_set.scribbles):
        blocks = s.mask.reshape(ah, by, aw, bx)
        regions[i] = blocks.any(axis=(1, 3))
    visited = regions.any(axis=0)
    return PropagationState(regions=regions, visited=visited, k1=k1, k2=k2)


def merge_neighbors(
    state: PropagationState, anchors: AnchorGrid, cfg: GuidanceConfig
) -> PropagationState:
    """One batch merge step; returns a new state, regions grown monotonically.

    Candidates are in-bounds unvisited 8-neighbors of each region's boundary
    anchors, scored by symmetric KL between the region's mean distribution and
    the neighbor's. Those below tau compete in a single global top-k ordered
    by (distance, anchor row-major index, scribble index); an anchor claimed
    by several scribbles goes to its lexicographically first claim.
    """
    ah, aw = anchors.shape
    if state.regions.shape[1:] != (ah, aw):
        raise ValueError(
            f"state anchors {state.regions.shape[1:]} do not match grid {(ah, aw)}"
        )
    candidates = []
    for s_idx in range(state.regions.shape[0]):
        region = state.regions[s_idx]
        if not region.any():
            continue
        mean_dist = normalize_prob(anchors.dist[region].mean(axis=0))
        seen = set()
        for bx_, by_ in boundary_anchors(region):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dx == 0 and dy == 0:
                        continue
                    ni, nj = by_ + dy, bx_ + dx
                    if not (0 <= ni < ah and 0 <= nj < aw):
                        continue
                    if state.visited[ni, nj] or (ni, nj) in seen:
                        continue
                    seen.add((ni, nj))
                    d = symmetric_kl(mean_dist, anchors.dist[ni, nj])
                    if d < cfg.tau:
                        candidates.append((d, ni * aw + nj, s_idx))
    candidates.sort()
    new_regions = state.regions.copy()
    new_visited = state.visited.copy()
    taken = 0
    claimed = set()
    for d, flat, s_idx in candidates:
        if taken >= cfg.top_k:
            break
        if flat in claimed:
            continue
        claimed.add(flat)
        ni, nj = divmod(flat, aw)
        new_regions[s_idx, ni, nj] = True
        new_visited[ni, nj] = True
        taken += 1
    return PropagationState(regions=new_regions, visited=new_visited, k1=state.k1, k2=state.k2)


def regions_to_masks(state: PropagationState, height: int, width: int) -> list:
    """Nearest-neighbor block fill of anchor regions back to mask resolution."""
    n, ah, aw = state.regions.shape
    if height % ah or width % aw:
        raise ValueError(f"anchor grid {(ah, aw)} does not tile canvas {(height, width)}")
    by, bx = height // ah, width // aw
    return [
        np.repeat(np.repeat(state.regions[i], by, axis=0), bx, axis=1)
        for i in range(n)
    ]
