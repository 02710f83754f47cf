"""Uniform grid axes and multilinear interpolation helpers.

Every grid in this package (state box, running-maximum axis, control axis)
is a uniform 1-D axis; product grids are cartesian products of axes.
Multilinear interpolation is used deliberately: it is monotone and
bound-preserving, which is what keeps the value-iteration invariants
(monotone ascent, upper/lower envelopes) intact on the grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridAxis:
    """A uniform axis with `n` nodes spanning [lo, hi]."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"axis needs n >= 2 nodes, got n={self.n}")
        if not self.lo < self.hi:
            raise ValueError(f"axis needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    def node(self, i: int) -> float:
        return self.lo + i * self.spacing

    def contains(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return (q >= self.lo - 1e-12) & (q <= self.hi + 1e-12)

    def clip(self, q):
        return np.clip(q, self.lo, self.hi)

    def locate(self, q):
        """Cell index and fractional offset for query points.

        Returns (idx, frac) with idx in [0, n-2] and frac in [0, 1] such
        that q = node(idx) * (1 - frac) + node(idx + 1) * frac for in-range
        queries.  Queries are assumed already clipped to [lo, hi].
        """
        pos = (np.asarray(q, dtype=float) - self.lo) / self.spacing
        idx = np.clip(np.floor(pos).astype(np.int64), 0, self.n - 2)
        frac = np.clip(pos - idx, 0.0, 1.0)
        return idx, frac

    def nearest(self, q) -> np.ndarray:
        """Nearest-node index for query points (half-cell ties round to even)."""
        pos = (np.asarray(q, dtype=float) - self.lo) / self.spacing
        return np.clip(np.rint(pos).astype(np.int64), 0, self.n - 1)


def box_clip(axes: list[GridAxis], x: np.ndarray) -> np.ndarray:
    """Clamp points componentwise into the bounding box of `axes`.

    x has shape (..., d) with d == len(axes).
    """
    x = np.asarray(x, dtype=float)
    lo = np.array([a.lo for a in axes])
    hi = np.array([a.hi for a in axes])
    return np.clip(x, lo, hi)


def box_contains(axes: list[GridAxis], x) -> bool:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[-1] != len(axes):
        raise ValueError(f"point has {x.shape[-1]} coords, box has {len(axes)}")
    return all(bool(np.all(a.contains(x[..., i]))) for i, a in enumerate(axes))


def corner_weights(axes: list[GridAxis], pts: np.ndarray):
    """Multilinear interpolation stencil for a batch of query points.

    pts has shape (m, d).  Returns (flat_idx, weights) of shape
    (m, 2**d): flat indices into the row-major product grid and the
    matching convex weights (each row sums to 1).
    """
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    m, d = pts.shape
    if d != len(axes):
        raise ValueError(f"points have dim {d}, grid has dim {len(axes)}")
    shape = tuple(a.n for a in axes)
    idx = np.empty((m, d), dtype=np.int64)
    frac = np.empty((m, d))
    for j, a in enumerate(axes):
        idx[:, j], frac[:, j] = a.locate(pts[:, j])
    n_corners = 1 << d
    flat = np.empty((m, n_corners), dtype=np.int64)
    wts = np.ones((m, n_corners))
    for c, offs in enumerate(itertools.product((0, 1), repeat=d)):
        corner = idx + np.array(offs, dtype=np.int64)
        flat[:, c] = np.ravel_multi_index(tuple(corner.T), shape)
        for j, o in enumerate(offs):
            wts[:, c] *= frac[:, j] if o else (1.0 - frac[:, j])
    return flat, wts


def interp_flat(axes: list[GridAxis], values_flat: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of row-major flattened grid values at pts."""
    flat, wts = corner_weights(axes, pts)
    return np.sum(values_flat[flat] * wts, axis=1)
