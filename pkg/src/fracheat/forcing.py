"""Constructors for forcing terms: Dirac masses, derivatives, homogeneous bumps, random fields."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .spectral import Grid, PhysicalField, SpectralField, forward_transform

__all__ = [
    "ForcingSpec",
    "make_delta",
    "make_delta_derivative",
    "make_homogeneous",
    "make_indicator",
    "make_random_bandlimited",
    "make_forcing",
    "dilate_homogeneous",
    "homogeneous_samples",
]

KINDS = ("delta", "delta_derivative", "homogeneous", "indicator", "random_bandlimited", "zero")


@dataclass(frozen=True)
class ForcingSpec:
    """One forcing term as it appears in a config stanza."""

    kind: str
    amplitude: float = 1.0
    axis: int = 1
    exponent: float = 0.5
    centers: tuple = ((0.0,),)
    cutoff: Optional[float] = None
    seed: int = 0
    slope: float = 0.0
    band: tuple = (1.0, 8.0)
    measure_like: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown forcing kind {self.kind!r}; expected one of {KINDS}")

    def check_exponent(self, dim: int) -> None:
        if self.kind == "homogeneous" and not (0 < self.exponent < dim or self.measure_like):
            raise ValueError(
                f"homogeneous exponent {self.exponent} is not locally integrable in dimension {dim}; "
                "set measure_like to proceed"
            )


def make_delta(grid: Grid, mass: float = 1.0) -> SpectralField:
    return SpectralField(grid, np.full(grid.shape, mass / grid.box_volume, dtype=complex))


def _kill_nyquist(grid: Grid, c: np.ndarray) -> np.ndarray:
    # the Nyquist row of an odd symbol breaks Hermitian symmetry
    nyq = grid.k1d == -(grid.points_per_dim // 2)
    for ax in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[ax] = nyq
        c[tuple(sl)] = 0.0
    return c


def make_delta_derivative(grid: Grid, axis: int = 1, mass: float = 1.0) -> SpectralField:
    """``mass * d/dx_axis delta`` (``axis`` is 1-based), Nyquist row dropped."""
    if not 1 <= axis <= grid.dim:
        raise ValueError(f"axis must lie in [1, {grid.dim}], got {axis}")
    xi = grid.wavenumbers()[axis - 1]
    c = np.broadcast_to(1j * xi * (mass / grid.box_volume), grid.shape).copy()
    return SpectralField(grid, _kill_nyquist(grid, c))


def homogeneous_samples(grid: Grid, a: float, c: float, centers: Sequence, cutoff: Optional[float] = None,
                        radius: float = 1.0) -> np.ndarray:
    """``c * sum_j |x - x_j|^{-a} chi_{B(x_j, radius)}`` with ``|x - x_j|`` clamped below at ``cutoff``.

    Distances are periodic on the box.
    """
    cutoff = grid.spacing if cutoff is None else cutoff
    if cutoff < grid.spacing * (1 - 1e-12):
        raise ValueError("cutoff must be at least the grid spacing")
    centers = [tuple(np.atleast_1d(np.asarray(z, dtype=float))) for z in centers]
    for z in centers:
        if len(z) != grid.dim:
            raise ValueError(f"center {z} does not match dimension {grid.dim}")
    for i in range(len(centers)):
        for k in range(i + 1, len(centers)):
            if _periodic_dist(grid, np.array(centers[i]), np.array(centers[k])) <= 2 * radius:
                raise ValueError("bump windows overlap: centers must be more than two radii apart")
    out = np.zeros(grid.shape)
    if c == 0:
        return out
    coords = grid.coords()
    for z in centers:
        r2 = 0.0
        for ax in range(grid.dim):
            d = coords[ax] - z[ax]
            d = (d + grid.half_length) % (2 * grid.half_length) - grid.half_length
            r2 = r2 + d**2
        r = np.sqrt(r2)
        out = out + np.where(r < radius, np.maximum(r, cutoff) ** (-a), 0.0)
    return c * out


def _periodic_dist(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    d = (d + grid.half_length) % (2 * grid.half_length) - grid.half_length
    return float(np.sqrt(np.sum(d**2)))


def make_homogeneous(grid: Grid, a: float, c: float = 1.0, centers: Sequence = ((0.0,),),
                     cutoff: Optional[float] = None) -> SpectralField:
    """Truncated homogeneous profile(s) ``c |x - x_j|^{-a}`` on unit balls.

    Overlapping unit balls (centers within distance 2) are rejected, which
    keeps every unit window from seeing two singularities.
    """
    return forward_transform(PhysicalField(grid, homogeneous_samples(grid, a, c, centers, cutoff)))


def make_indicator(grid: Grid, center=None, radius: float = 1.0, height: float = 1.0) -> SpectralField:
    center = np.zeros(grid.dim) if center is None else np.atleast_1d(center)
    r2 = sum((x - z) ** 2 for x, z in zip(grid.coords(), center))
    return forward_transform(PhysicalField(grid, np.where(r2 < radius**2, height, 0.0)))


def _band_modes(grid: Grid, kmin: float, kmax: float):
    """Canonical half-lattice of modes with ``kmin <= |xi| <= kmax``, independent of ``M``.

    Modes are listed on the minimal integer lattice containing the band, so
    refinement in ``M`` reproduces the same modes in the same order.
    """
    L = grid.half_length
    n = int(math.floor(kmax * L / math.pi))
    if n >= grid.points_per_dim // 3:
        raise ValueError("band exceeds the dealiased range of the grid")
    rng1 = np.arange(-n, n + 1)
    ks = np.stack(np.meshgrid(*([rng1] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim)
    xi = np.sqrt(np.sum((ks * math.pi / L) ** 2, axis=1))
    keep = (xi >= kmin) & (xi <= kmax)
    # one representative of each +/- pair: first nonzero component positive
    first = np.zeros(len(ks), dtype=np.int64)
    for ax in reversed(range(grid.dim)):
        first = np.where(ks[:, ax] != 0, ks[:, ax], first)
    keep &= first > 0
    return ks[keep], xi[keep]


def make_random_bandlimited(grid: Grid, seed: int, slope: float = 0.0, band: tuple = (1.0, 8.0),
                            amplitude: float = 1.0) -> SpectralField:
    """Random real field with ``|c_k| ~ |xi|^slope`` on ``band[0] <= |xi| <= band[1]``.

    Identical ``(seed, slope, band, L)`` give identical modes for every ``M``.
    """
    ks, xi = _band_modes(grid, *band)
    c = np.zeros(grid.shape, dtype=complex)
    if len(ks) == 0:
        return SpectralField(grid, c)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(len(ks)) + 1j * rng.standard_normal(len(ks))
    z *= amplitude * xi**slope / math.sqrt(2 * len(ks))
    M = grid.points_per_dim
    idx = tuple((ks % M).T)
    neg = tuple(((-ks) % M).T)
    c[idx] = z
    c[neg] = np.conj(z)
    return SpectralField(grid, c)


def dilate_homogeneous(grid: Grid, a: float, c: float, lam: float, weight_exp: float,
                       cutoff: Optional[float] = None) -> SpectralField:
    """``lam^weight_exp * mu(lam x)`` for ``mu = c |x|^{-a} chi_{B(0,1)}``.

    Written out, ``c lam^{weight_exp - a} |x|^{-a}`` on ``|x| < 1/lam``; the
    singularity is clamped at ``cutoff`` in the dilated variable.
    """
    if not 0 < lam <= 1:
        raise ValueError("lam must lie in ]0, 1]")
    radius = 1.0 / lam
    if radius > grid.half_length:
        raise ValueError("dilated support leaves the box")
    samples = homogeneous_samples(grid, a, c * lam ** (weight_exp - a), [np.zeros(grid.dim)], cutoff, radius)
    return forward_transform(PhysicalField(grid, samples))


def make_forcing(grid: Grid, spec: ForcingSpec) -> SpectralField:
    """Build the field described by one config stanza."""
    spec.check_exponent(grid.dim)
    k = spec.kind
    if k == "zero":
        return SpectralField.zeros(grid)
    if k == "delta":
        return make_delta(grid, spec.amplitude)
    if k == "delta_derivative":
        return make_delta_derivative(grid, spec.axis, spec.amplitude)
    if k == "homogeneous":
        return make_homogeneous(grid, spec.exponent, spec.amplitude, spec.centers, spec.cutoff)
    if k == "indicator":
        return make_indicator(grid, spec.centers[0], height=spec.amplitude)
    return make_random_bandlimited(grid, spec.seed, spec.slope, spec.band, spec.amplitude)
