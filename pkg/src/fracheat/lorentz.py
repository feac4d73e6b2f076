"""Decreasing rearrangements, Lorentz quasi-norms and their uniformly local versions.

Every norm here is exact for lattice step functions: a sampled field is read as
the function that is constant on each cell, so its distribution function is a
finite staircase and both branches of the Lorentz norm have closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .spectral import Grid, PhysicalField

__all__ = [
    "INF",
    "NormSpec",
    "RearrangementTable",
    "DegenerateNormError",
    "build_rearrangement",
    "lorentz_norm",
    "uniformly_local_lorentz_norm",
    "ul_lorentz_norms",
    "weak_product_check",
    "ball_windows",
]

INF = math.inf
DEFAULT_CENTER_SPACING = 0.5
_CHUNK_ELEMS = 8_000_000


class DegenerateNormError(ArithmeticError):
    """A ratio was requested whose denominator norm vanishes."""


@dataclass(frozen=True)
class NormSpec:
    """Lorentz indices ``(p, q)`` plus optional Besov indices ``s`` and ``r``.

    ``q = INF`` selects the weak space.
    """

    p: float
    q: float = INF
    s: float = 0.0
    r: float = INF

    def __post_init__(self):
        if not 1 < self.p < INF:
            raise ValueError(f"p must lie in ]1, inf[, got {self.p}")
        if not self.q >= 1:
            raise ValueError(f"q must lie in [1, inf], got {self.q}")
        if not self.r >= 1:
            raise ValueError(f"r must lie in [1, inf], got {self.r}")

    @property
    def weak(self) -> bool:
        return math.isinf(self.q)


@dataclass(frozen=True, eq=False)
class RearrangementTable:
    """Staircase encoding of the distribution function and of ``f*``.

    ``values`` are the distinct nonzero magnitudes in decreasing order and
    ``cummeasure[i]`` is the measure of ``{|f| >= values[i]}``, so that
    ``alpha_f(sigma) = cummeasure[i]`` for ``values[i+1] <= sigma < values[i]``
    and ``f*(lam) = values[i]`` for ``cummeasure[i-1] <= lam < cummeasure[i]``.
    """

    values: np.ndarray
    cummeasure: np.ndarray

    def __len__(self):
        return len(self.values)

    @property
    def support_measure(self) -> float:
        return float(self.cummeasure[-1]) if len(self) else 0.0

    def distribution(self, sigma) -> np.ndarray:
        """``alpha_f(sigma) = |{|f| > sigma}|``."""
        sigma = np.asarray(sigma, dtype=float)
        # number of values strictly above sigma
        n = np.searchsorted(-self.values, -sigma, side="left")
        cm = np.concatenate([[0.0], self.cummeasure])
        return cm[n]

    def rearrangement(self, lam) -> np.ndarray:
        """``f*(lam) = inf{sigma : alpha_f(sigma) <= lam}`` (zero past the support)."""
        lam = np.asarray(lam, dtype=float)
        i = np.searchsorted(self.cummeasure, lam, side="right")
        vals = np.concatenate([self.values, [0.0]])
        return vals[i]


def build_rearrangement(f: PhysicalField) -> RearrangementTable:
    return _table_from_magnitudes(np.abs(f.samples).ravel(), f.grid.cell_volume)


def _table_from_magnitudes(a: np.ndarray, cell: float) -> RearrangementTable:
    a = a[a > 0]
    if a.size == 0:
        return RearrangementTable(np.empty(0), np.empty(0))
    vals, counts = np.unique(a, return_counts=True)
    vals = vals[::-1]
    counts = counts[::-1]
    return RearrangementTable(vals, np.cumsum(counts) * cell)


def table_norm(table: RearrangementTable, p: float, q: float = INF) -> float:
    """Lorentz quasi-norm of the staircase encoded by ``table``."""
    if len(table) == 0:
        return 0.0
    v, c = table.values, table.cummeasure
    if math.isinf(q):
        return float(np.max(v * c ** (1.0 / p)))
    c_prev = np.concatenate([[0.0], c[:-1]])
    pieces = v**q * (c ** (q / p) - c_prev ** (q / p))
    pieces = np.sort(pieces)
    return float(((p / q) * np.sum(pieces)) ** (1.0 / q))


def _sorted_norm(a: np.ndarray, cell: float, p: float, q: float) -> np.ndarray:
    """Lorentz norm along the last axis of a magnitude array (one cell per entry).

    Ties need no special handling: consecutive equal magnitudes form one step.
    """
    s = -np.sort(-a, axis=-1)
    n = s.shape[-1]
    lam = cell * np.arange(1, n + 1)
    if math.isinf(q):
        return np.max(s * lam ** (1.0 / p), axis=-1)
    w = lam ** (q / p) - (lam - cell) ** (q / p)
    return ((p / q) * np.sum(s**q * w, axis=-1)) ** (1.0 / q)


def lorentz_norm(f: PhysicalField, spec: NormSpec) -> float:
    return table_norm(build_rearrangement(f), spec.p, spec.q)


@lru_cache(maxsize=32)
def ball_windows(grid: Grid, spacing: float = DEFAULT_CENTER_SPACING, radius: float = 1.0) -> tuple:
    """Flat lattice indices of ``B(z, radius)`` for each center ``z``.

    Centers are lattice points with stride ``round(spacing / h)`` (at least 1),
    aligned so the origin is a center.  A cell belongs to the ball when its
    center is at distance ``< radius``.  Returns ``(index_array, centers)``
    with shapes ``(n_centers, n_cells)`` and ``(n_centers, N)``.
    """
    if radius > grid.half_length:
        raise ValueError(f"ball radius {radius} exceeds box half-length {grid.half_length}")
    h, M, N = grid.spacing, grid.points_per_dim, grid.dim
    stride = max(1, int(round(spacing / h)))
    reach = int(math.ceil(radius / h))
    off1 = np.arange(-reach, reach + 1)
    offs = np.stack(np.meshgrid(*([off1] * N), indexing="ij"), axis=-1).reshape(-1, N)
    offs = offs[np.sum((offs * h) ** 2, axis=1) < radius**2 * (1 - 1e-12)]
    origin = M // 2
    c1 = np.arange(origin % stride, M, stride)
    cen = np.stack(np.meshgrid(*([c1] * N), indexing="ij"), axis=-1).reshape(-1, N)
    idx = (cen[:, None, :] + offs[None, :, :]) % M
    flat = np.ravel_multi_index(tuple(idx[..., ax] for ax in range(N)), grid.shape)
    centers = grid.x1d[cen]
    flat.setflags(write=False)
    return flat, centers


def ul_lorentz_norms(grid: Grid, samples: np.ndarray, p: float, q: float = INF,
                     spacing: float = DEFAULT_CENTER_SPACING, per_center: bool = False) -> np.ndarray:
    """Uniformly local norms of a stack of fields sharing ``grid``.

    ``samples`` has shape ``(..., *grid.shape)``; returns shape ``(...)``, or
    ``(..., n_centers)`` with ``per_center``.
    """
    flat, _ = ball_windows(grid, spacing)
    lead = samples.shape[: samples.ndim - grid.dim]
    a = np.abs(samples).reshape(-1, grid.size)
    n_c, n_b = flat.shape
    out = np.empty((a.shape[0], n_c))
    rows = max(1, _CHUNK_ELEMS // (n_c * n_b))
    for i in range(0, a.shape[0], rows):
        win = a[i:i + rows][:, flat]
        out[i:i + rows] = _sorted_norm(win, grid.cell_volume, p, q)
    if per_center:
        return out.reshape(lead + (n_c,))
    return out.max(axis=-1).reshape(lead)


def uniformly_local_lorentz_norm(f: PhysicalField, spec: NormSpec,
                                 spacing: float = DEFAULT_CENTER_SPACING) -> float:
    """``sup_z ||f chi_{B(z,1)} | L^{p,q}||`` over a lattice of centers."""
    return float(ul_lorentz_norms(f.grid, f.samples, spec.p, spec.q, spacing))


def weak_product_check(f: PhysicalField, g: PhysicalField, p0: float, p1: float,
                       local: bool = False) -> float:
    """``||fg||_{p,inf} / (||f||_{p0,inf} ||g||_{p1,inf})`` with ``1/p = 1/p0 + 1/p1``."""
    if not 1.0 / p0 + 1.0 / p1 < 1:
        raise ValueError("need 1/p0 + 1/p1 < 1")
    p = 1.0 / (1.0 / p0 + 1.0 / p1)
    if local:
        def nrm(h, e):
            return uniformly_local_lorentz_norm(h, NormSpec(e))
    else:
        def nrm(h, e):
            return lorentz_norm(h, NormSpec(e))
    den = nrm(f, p0) * nrm(g, p1)
    if den == 0:
        raise DegenerateNormError("a factor has zero weak norm")
    return nrm(PhysicalField(f.grid, f.samples * g.samples), p) / den
