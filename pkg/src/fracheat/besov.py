"""Littlewood-Paley blocks and Besov / Besov-Lorentz norms on the lattice."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .lorentz import INF, DegenerateNormError, NormSpec, ul_lorentz_norms
from .spectral import Grid, SpectralField, batch_to_physical

__all__ = [
    "ZETA_PLATEAU",
    "ZETA_EDGE",
    "zeta",
    "DyadicPartition",
    "BlockProfile",
    "build_partition",
    "lp_block",
    "block_stack",
    "besov_lorentz_profile",
    "besov_lorentz_norm",
    "besov_norm",
    "bernstein_check",
    "tail_seminorm",
    "write_block_csv",
    "lr_sum",
    "EmptyBlockError",
    "block_norms",
    "besov_profile",
    "partition_defects",
]

ZETA_PLATEAU = 1.5
ZETA_EDGE = 5.0 / 3.0


class EmptyBlockError(DegenerateNormError):
    """The requested Littlewood-Paley block is identically zero."""


def _h(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def zeta(t) -> np.ndarray:
    """Smooth cutoff: 1 on ``[0, 3/2]``, 0 on ``[5/3, inf)``, ``C^inf`` in between."""
    s = (ZETA_EDGE - np.asarray(t, dtype=float)) / (ZETA_EDGE - ZETA_PLATEAU)
    a, b = _h(s), _h(1.0 - s)
    return a / (a + b)


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    """Sampled cutoffs on the frequency lattice of ``grid``.

    ``phi[0]`` is the low-frequency cutoff ``phi_(0)``; ``phi[j]`` for
    ``j >= 1`` is the annulus ``zeta(2^-j |xi|) - zeta(2^{1-j} |xi|)``.
    ``wide[j]`` holds the widened symbols ``Phi_(0) = phi_(0) + phi_1`` and
    ``Phi_j = phi_{j-1} + phi_j + phi_{j+1}``.
    """

    grid: Grid
    j_max: int
    phi: tuple
    wide: tuple

    @property
    def band_limit(self) -> float:
        """Frequencies up to this radius are reproduced exactly by the retained blocks."""
        return ZETA_PLATEAU * 2.0**self.j_max

    def coverage(self) -> np.ndarray:
        return zeta(self.grid.xi_abs / 2.0**self.j_max)

    def symbols(self) -> np.ndarray:
        return np.stack(self.phi)


def _annulus(r: np.ndarray, j: int) -> np.ndarray:
    # phi_j = phi_0(2^-j xi) with phi_0 = zeta(|xi|) - zeta(2|xi|); valid for every integer j
    return zeta(r / 2.0**j) - zeta(r / 2.0 ** (j - 1))


@lru_cache(maxsize=16)
def build_partition(grid: Grid) -> DyadicPartition:
    j_max = int(math.floor(math.log2(grid.dealias_radius / ZETA_EDGE)))
    if j_max < 2:
        raise ValueError(f"grid too coarse for a dyadic partition (j_max = {j_max} < 2)")
    r = grid.xi_abs
    phi = [zeta(r)] + [_annulus(r, j) for j in range(1, j_max + 1)]
    wide = [zeta(r) + _annulus(r, 1)]
    for j in range(1, j_max + 1):
        wide.append(_annulus(r, j - 1) + _annulus(r, j) + _annulus(r, j + 1))
    for a in phi + wide:
        a.setflags(write=False)
    return DyadicPartition(grid, j_max, tuple(phi), tuple(wide))


def partition_defects(grid: Grid, radius: Optional[float] = None) -> tuple:
    """``(unity, reproducing)`` defects of the partition on ``|xi| <= radius``.

    Annuli are added past ``j_max`` until they cover the band (default: the
    dealiased radius), so the identity ``phi_(0) + sum_j phi_j = 1`` is tested
    on the whole band rather than on the retained blocks only.
    ``reproducing`` is ``max |phi_j - Phi_j phi_j|`` over the same annuli.
    """
    radius = grid.dealias_radius if radius is None else radius
    r = grid.xi_abs
    band = r <= radius
    J = max(1, int(math.ceil(math.log2(max(radius, ZETA_PLATEAU) / ZETA_PLATEAU))))
    phi = [zeta(r)] + [_annulus(r, j) for j in range(1, J + 2)]
    unity = float(np.max(np.abs(1.0 - sum(phi[: J + 1]))[band]))
    rep = float(np.max(np.abs(phi[0] - (phi[0] + phi[1]) * phi[0])))
    for j in range(1, J + 1):
        wide = _annulus(r, j - 1) + phi[j] + phi[j + 1]
        rep = max(rep, float(np.max(np.abs(phi[j] - wide * phi[j]))))
    return unity, rep


def lp_block(f: SpectralField, j: int, part: Optional[DyadicPartition] = None) -> SpectralField:
    """``Delta_j f``: ``phi_(0)`` for ``j = 0``, the ``j``-th annulus otherwise."""
    part = part or build_partition(f.grid)
    if not 0 <= j <= part.j_max:
        raise IndexError(f"block index {j} outside [0, {part.j_max}]")
    return f.multiply(part.phi[j])


def block_stack(grid: Grid, coeffs: np.ndarray, part: Optional[DyadicPartition] = None) -> np.ndarray:
    """Physical samples of every block of a (stack of) coefficient arrays.

    Input shape ``(..., *grid.shape)``; output ``(..., j_max + 1, *grid.shape)``.
    """
    part = part or build_partition(grid)
    sym = part.symbols()
    lead = coeffs.ndim - grid.dim
    c = np.expand_dims(coeffs, lead) * sym
    return batch_to_physical(grid, c)


def lr_sum(seq: np.ndarray, r: float, axis: int = -1) -> np.ndarray:
    """``l^r`` norm along ``axis``; terms are summed in descending order."""
    seq = np.abs(np.asarray(seq, dtype=float))
    if math.isinf(r):
        return np.max(seq, axis=axis)
    terms = -np.sort(-(seq**r), axis=axis)
    return np.sum(terms, axis=axis) ** (1.0 / r)


def _lp(grid: Grid, samples: np.ndarray, p: float) -> np.ndarray:
    axes = tuple(range(-grid.dim, 0))
    a = np.abs(samples)
    if math.isinf(p):
        return np.max(a, axis=axes)
    return (np.sum(a**p, axis=axes) * grid.cell_volume) ** (1.0 / p)


def block_norms(grid: Grid, coeffs: np.ndarray, p: float, q: Optional[float] = INF,
                base: str = "ul", part: Optional[DyadicPartition] = None) -> np.ndarray:
    """Per-block norms, shape ``(..., j_max + 1)``.

    ``base="ul"`` measures blocks in uniformly local ``L^{p,q}``; ``base="lp"``
    in plain ``L^p`` over the box.
    """
    blocks = block_stack(grid, coeffs, part)
    if base == "ul":
        return ul_lorentz_norms(grid, blocks, p, q)
    if base == "lp":
        return _lp(grid, blocks, p)
    raise ValueError(f"unknown base space {base!r}")


@dataclass
class BlockProfile:
    s: float
    r: float
    block_norms: np.ndarray
    j_max: int
    truncated: bool
    weighted: np.ndarray = field(init=False)
    value: float = field(init=False)

    def __post_init__(self):
        j = np.arange(len(self.block_norms))
        self.weighted = 2.0 ** (self.s * j) * self.block_norms
        self.value = float(lr_sum(self.weighted, self.r))


def _truncated(f: SpectralField, part: DyadicPartition) -> bool:
    a = np.abs(f.coeffs)
    peak = a.max() if a.size else 0.0
    if peak == 0:
        return False
    return bool(np.max(a * (1.0 - part.coverage())) > 1e-12 * peak)


def besov_lorentz_profile(f: SpectralField, spec: NormSpec,
                          part: Optional[DyadicPartition] = None) -> BlockProfile:
    part = part or build_partition(f.grid)
    bn = block_norms(f.grid, f.coeffs, spec.p, spec.q, "ul", part)
    return BlockProfile(spec.s, spec.r, bn, part.j_max, _truncated(f, part))


def besov_lorentz_norm(f: SpectralField, spec: NormSpec,
                       part: Optional[DyadicPartition] = None) -> float:
    """``|| {2^{sj} ||Delta_j f | L^{p,q}_ul||}_j | l^r ||`` over ``j <= j_max``.

    Use :func:`besov_lorentz_profile` for the block profile and truncation flag.
    """
    return besov_lorentz_profile(f, spec, part).value


def besov_profile(f: SpectralField, s: float, p: float, r: float,
                  part: Optional[DyadicPartition] = None) -> BlockProfile:
    part = part or build_partition(f.grid)
    bn = block_norms(f.grid, f.coeffs, p, None, "lp", part)
    return BlockProfile(s, r, bn, part.j_max, _truncated(f, part))


def besov_norm(f: SpectralField, s: float, p: float, r: float,
               part: Optional[DyadicPartition] = None) -> float:
    """Inhomogeneous Besov norm with plain ``L^p`` (``1 <= p <= inf``) block norms."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return besov_profile(f, s, p, r, part).value


def bernstein_check(f: SpectralField, j: int, p: float,
                    part: Optional[DyadicPartition] = None) -> float:
    """``sup|Delta_j f| / (2^{jN/p} ||Delta_j f | L^{p,inf}_ul||)``.

    Raises :class:`DegenerateNormError` for an empty block.
    """
    blk = lp_block(f, j, part).to_physical()
    ul = float(ul_lorentz_norms(f.grid, blk.samples, p))
    if ul == 0:
        raise EmptyBlockError(f"block {j} is empty")
    return float(np.max(np.abs(blk.samples))) / (2.0 ** (j * f.grid.dim / p) * ul)


def tail_seminorm(f: SpectralField, eps: float, theta: float, p_eff: float, j0: int,
                  part: Optional[DyadicPartition] = None) -> float:
    """``max_{j0 <= j <= j_max} 2^{(eps - theta) j} ||Delta_j f | L^{p_eff,inf}_ul||``.

    A finite-grid stand-in for the ``limsup``; compare across refinements.
    """
    if not 0 < eps < theta:
        raise ValueError("need 0 < eps < theta")
    part = part or build_partition(f.grid)
    if not 0 <= j0 <= part.j_max:
        raise IndexError(f"j0 = {j0} outside [0, {part.j_max}]")
    bn = block_norms(f.grid, f.coeffs, p_eff, INF, "ul", part)
    j = np.arange(part.j_max + 1)
    w = 2.0 ** ((eps - theta) * j) * bn
    return float(np.max(w[j0:]))


def write_block_csv(path, profile: BlockProfile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "block_ul_norm", "weighted"])
        for j, (b, v) in enumerate(zip(profile.block_norms, profile.weighted)):
            w.writerow([j, repr(float(b)), repr(float(v))])
