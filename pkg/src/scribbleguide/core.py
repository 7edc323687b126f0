"""Grid conventions, resampling primitives, and a reproducible noise source.

Everything downstream works on plain float64 numpy arrays in row-major layout:
a grid of shape (h, w) is indexed ``values[y, x]`` with x = column, y = row.
Probability vectors are 1-d arrays with nonnegative entries summing to 1.
"""

from __future__ import annotations

import math

import numpy as np

# Type conventions (documentation aliases; enforcement is via the validators below).
Grid2D = np.ndarray
ProbVector = np.ndarray

__all__ = [
    "Grid2D",
    "ProbVector",
    "Rng",
    "as_grid",
    "normalize_prob",
    "resize_bilinear",
    "avg_pool",
    "bilinear_axis_coords",
]


def as_grid(values, dtype=np.float64) -> Grid2D:
    """Coerce to a 2-d array, rejecting anything that is not a real grid."""
    g = np.asarray(values, dtype=dtype)
    if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
        raise ValueError(f"expected a nonempty 2-d grid, got shape {g.shape!r}")
    return g


def normalize_prob(v) -> ProbVector:
    """Return v / sum(v) as a probability vector.

    Rejects negative entries and all-zero input rather than papering over them.
    """
    p = np.asarray(v, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"probability vector must be 1-d, got shape {p.shape!r}")
    if np.any(p < 0):
        raise ValueError("probability vector has negative entries")
    s = p.sum()
    if not s > 0:
        raise ValueError("probability vector sums to zero")
    return p / s


def bilinear_axis_coords(n_in: int, n_out: int):
    """Source indices and interpolation weights for one resampling axis.

    Half-pixel-center convention: output center j maps to input coordinate
    (j + 0.5) * n_in / n_out - 0.5, clamped to the valid range so border
    output cells replicate the edge samples.

    Returns (i0, i1, t) with the interpolated value v0 + t * (v1 - v0).
    """
    if n_out < 1:
        raise ValueError(f"output size must be >= 1, got {n_out}")
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    return i0, i1, t


def resize_bilinear(g: Grid2D, out_h: int, out_w: int) -> Grid2D:
    """Resample a grid to (out_h, out_w) with edge-clamped bilinear interpolation.

    Constant grids are preserved exactly: the lerp is written v0 + t*(v1-v0),
    so equal neighbors reproduce the constant with no rounding.
    """
    g = as_grid(g)
    in_h, in_w = g.shape
    y0, y1, ty = bilinear_axis_coords(in_h, out_h)
    x0, x1, tx = bilinear_axis_coords(in_w, out_w)
    # interpolate along x on full rows, then along y
    gx = g[:, x0] + tx[None, :] * (g[:, x1] - g[:, x0])
    out = gx[y0, :] + ty[:, None] * (gx[y1, :] - gx[y0, :])
    return out


def avg_pool(g: Grid2D, factor: int) -> Grid2D:
    """Mean-pool non-overlapping factor x factor blocks.

    The factor must divide both dimensions; the global mean is preserved.
    """
    g = as_grid(g)
    h, w = g.shape
    if factor < 1:
        raise ValueError(f"pool factor must be >= 1, got {factor}")
    if h % factor or w % factor:
        raise ValueError(f"pool factor {factor} does not divide grid shape {(h, w)}")
    return g.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


# SplitMix64 constants.
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    # modular uint64 arithmetic; the wraparound is the algorithm
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX_1
        z = (z ^ (z >> np.uint64(27))) * _MIX_2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based Gaussian source (SplitMix64 word stream + Box-Muller).

    Output i of a stream is a pure function of (seed, i): draws replay
    identically regardless of how they are batched across calls, and the
    stream does not depend on any global or platform RNG state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = _mix64(np.uint64(self.seed & _U64_MASK))
        self._count = 0  # number of normal variates handed out so far

    def _unit_open(self, word_index: np.ndarray) -> np.ndarray:
        """Uniform values in (0, 1] from 64-bit stream words."""
        with np.errstate(over="ignore"):
            w = _mix64(self._key + (word_index + np.uint64(1)) * _GOLDEN)
        # top 53 bits, shifted into (0, 1] so log() below is always finite
        return ((w >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def normal(self, shape) -> np.ndarray:
        """Standard normal array; one Box-Muller cosine branch per output."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        idx = np.arange(self._count, self._count + n, dtype=np.uint64)
        self._count += n
        u1 = self._unit_open(np.uint64(2) * idx)
        u2 = self._unit_open(np.uint64(2) * idx + np.uint64(1))
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        return z.reshape(shape)

    def normal_grid(self, h: int, w: int) -> Grid2D:
        return self.normal((h, w))
