"""Image moments of activation maps and the moment-alignment losses.

A nonnegative map I over the grid has raw moments m_pq = sum x^p y^q I(x, y);
from those come the centroid, the central second moments, and the principal
orientation theta = 0.5 * atan2(2*mu11, mu20 - mu02) in (-pi/2, pi/2].

Two alignment terms compare token activation maps against scribble masks:
  * centroid term: squared centroid offset, in grid-cell units,
  * central term:  mean absolute orientation difference (axis-wrapped),
                   normalized by 2*pi.
Activation maps pass through the logistic function before any moments are
taken; scribble masks are binary and used as-is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Grid2D, as_grid
from .scribble import ScribbleSet

__all__ = [
    "ISO_EPS",
    "MomentSummary",
    "moment_summary",
    "moment_loss",
    "grad_moment_loss",
    "wrap_axis_angle",
    "sigmoid",
]

# Relative anisotropy below which a map has no meaningful orientation and the
# central term is skipped (atan2 gradient blows up at the isotropic point).
ISO_EPS = 1e-3


def sigmoid(a: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def wrap_axis_angle(d: float) -> float:
    """Wrap an orientation difference to (-pi/2, pi/2] (axes, not vectors)."""
    d = math.fmod(d, math.pi)
    if d > math.pi / 2:
        d -= math.pi
    elif d <= -math.pi / 2:
        d += math.pi
    return d


@dataclass(frozen=True)
class MomentSummary:
    mass: float
    centroid_x: float
    centroid_y: float
    mu20: float
    mu02: float
    mu11: float
    theta: float
    isotropic: bool


def moment_summary(g: Grid2D, iso_eps: float = ISO_EPS) -> MomentSummary:
    """Raw/central moments, centroid, and principal orientation of a map.

    The map must be nonnegative with positive total mass.
    """
    g = as_grid(g)
    if np.any(g < 0):
        raise ValueError("moment map has negative entries")
    m00 = float(g.sum())
    if not m00 > 0:
        raise ValueError("moment map has zero mass")
    h, w = g.shape
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    col_mass = g.sum(axis=0)
    row_mass = g.sum(axis=1)
    m10 = float(col_mass @ xs)
    m01 = float(row_mass @ ys)
    cx = m10 / m00
    cy = m01 / m00
    m20 = float(col_mass @ xs**2)
    m02 = float(row_mass @ ys**2)
    m11 = float(xs @ (g.T @ ys))
    mu20 = m20 / m00 - cx * cx
    mu02 = m02 / m00 - cy * cy
    mu11 = m11 / m00 - cx * cy
    theta = 0.5 * math.atan2(2.0 * mu11, mu20 - mu02)
    scale = mu20 + mu02
    aniso = math.hypot(mu20 - mu02, 2.0 * mu11)
    isotropic = (scale <= 0.0) or (aniso < iso_eps * scale)
    return MomentSummary(m00, cx, cy, mu20, mu02, mu11, theta, isotropic)


def _scribble_summaries(scribble_set: ScribbleSet):
    return [moment_summary(s.mask.astype(np.float64)) for s in scribble_set.scribbles]


def _token_summaries(attn_maps, scribble_set: ScribbleSet):
    """Logistic-mapped activations and their summaries for every needed token."""
    needed = scribble_set.tokens()
    missing = [t for t in needed if t not in attn_maps]
    if missing:
        raise ValueError(f"no activation map for tokens {missing}")
    probs = {}
    summaries = {}
    for t in needed:
        a = as_grid(attn_maps[t])
        if a.shape != (scribble_set.height, scribble_set.width):
            raise ValueError(
                f"activation map for {t!r} has shape {a.shape}, expected "
                f"{(scribble_set.height, scribble_set.width)}"
            )
        p = sigmoid(a)
        probs[t] = p
        summaries[t] = moment_summary(p)
    return probs, summaries


def moment_loss(
    attn_maps,
    scribble_set: ScribbleSet,
    lambda1: float = 0.6,
    lambda2: float = 0.6,
):
    """Weighted moment-alignment loss lambda1 * centroid + lambda2 * central.

    Returns (total, centroid_term, central_term). Terms are averaged over
    scribbles and, per scribble, over its tokens; the central term carries a
    1/(2*pi) normalization and is skipped for isotropic pairs.
    """
    probs, tok = _token_summaries(attn_maps, scribble_set)
    scr = _scribble_summaries(scribble_set)
    n_s = len(scribble_set.scribbles)
    if n_s == 0:
        raise ValueError("scribble set is empty")
    centroid_term = 0.0
    central_term = 0.0
    for s, ssum in zip(scribble_set.scribbles, scr):
        cen = 0.0
        ang = 0.0
        for t in s.tokens:
            msum = tok[t]
            cen += (msum.centroid_x - ssum.centroid_x) ** 2 + (
                msum.centroid_y - ssum.centroid_y
            ) ** 2
            if not (ssum.isotropic or msum.isotropic):
                ang += abs(wrap_axis_angle(msum.theta - ssum.theta))
        centroid_term += cen / len(s.tokens)
        central_term += ang / len(s.tokens)
    centroid_term /= n_s
    central_term /= 2.0 * math.pi * n_s
    total = lambda1 * centroid_term + lambda2 * central_term
    return total, centroid_term, central_term


def grad_moment_loss(
    attn_maps,
    scribble_set: ScribbleSet,
    lambda1: float = 0.6,
    lambda2: float = 0.6,
):
    """Analytic gradient of moment_loss total w.r.t. each token's activations.

    Returns {token: Grid2D}. The chain runs through the logistic mapping,
    the raw-to-central moment algebra, and atan2; tokens shared by several
    scribbles accumulate contributions.
    """
    probs, tok = _token_summaries(attn_maps, scribble_set)
    scr = _scribble_summaries(scribble_set)
    n_s = len(scribble_set.scribbles)
    if n_s == 0:
        raise ValueError("scribble set is empty")
    h, w = scribble_set.height, scribble_set.width
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]

    grads = {t: np.zeros((h, w)) for t in probs}
    for s, ssum in zip(scribble_set.scribbles, scr):
        for t in s.tokens:
            msum = tok[t]
            p = probs[t]
            m00 = msum.mass
            dx = xs - msum.centroid_x
            dy = ys - msum.centroid_y
            # d(loss)/d(p) for this (scribble, token) pair
            coef = (lambda1 / (n_s * len(s.tokens))) * (
                2.0 * (msum.centroid_x - ssum.centroid_x) * dx / m00
                + 2.0 * (msum.centroid_y - ssum.centroid_y) * dy / m00
            )
            if not (ssum.isotropic or msum.isotropic):
                a = msum.mu20 - msum.mu02
                b = 2.0 * msum.mu11
                dtheta = wrap_axis_angle(msum.theta - ssum.theta)
                sgn = float(np.sign(dtheta))
                if sgn != 0.0:
                    da = (dx * dx - dy * dy - a) / m00
                    db = (2.0 * dx * dy - b) / m00
                    dtheta_dp = (a * db - b * da) / (2.0 * (a * a + b * b))
                    coef = coef + (
                        lambda2 * sgn / (2.0 * math.pi * n_s * len(s.tokens))
                    ) * dtheta_dp
            grads[t] += coef * p * (1.0 - p)
    return grads
