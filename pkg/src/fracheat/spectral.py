"""Spectral representation on a periodic box and the Fourier multipliers.

Fields live on the box ``[-L, L)^N`` sampled at ``M`` points per axis.  Physical
samples are stored in natural order (index ``M/2`` is the origin).  Spectral
coefficients are true Fourier-series coefficients relative to ``x = 0``::

    f(x) = sum_k c_k exp(i xi_k . x),   xi_k = (pi / L) k

and are stored in FFT ordering (``numpy.fft.fftfreq``), so a constant field 1
has ``c_0 = 1`` and a unit Dirac mass at the origin has ``c_k = 1 / (2L)^N``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "SpectralField",
    "PhysicalField",
    "ModelParams",
    "forward_transform",
    "inverse_transform",
    "fractional_symbol",
    "semigroup_apply",
    "duhamel_linear_multiplier",
    "psi_profile",
    "c_T_multiplier",
    "closed_form_kernel",
    "dealias",
    "write_field",
    "read_field",
]

HERMITIAN_RTOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice on ``[-L, L)^N``."""

    dim: int
    half_length: float
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not self.half_length > 0:
            raise ValueError("half_length must be positive")
        M = self.points_per_dim
        if M < 16 or M % 2 or (M & (M - 1)):
            raise ValueError(f"points_per_dim must be a power of two >= 16, got {M}")

    @property
    def shape(self) -> tuple:
        return (self.points_per_dim,) * self.dim

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_length / self.points_per_dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def box_volume(self) -> float:
        return (2.0 * self.half_length) ** self.dim

    @property
    def size(self) -> int:
        return self.points_per_dim**self.dim

    @property
    def nyquist(self) -> float:
        return math.pi / self.half_length * (self.points_per_dim // 2)

    @property
    def dealias_radius(self) -> float:
        """Largest frequency kept by the 2/3 rule."""
        return 2.0 / 3.0 * self.nyquist

    @cached_property
    def x1d(self) -> np.ndarray:
        return -self.half_length + self.spacing * np.arange(self.points_per_dim)

    @cached_property
    def k1d(self) -> np.ndarray:
        # integer wavenumbers in FFT ordering
        return np.rint(np.fft.fftfreq(self.points_per_dim) * self.points_per_dim).astype(np.int64)

    @cached_property
    def xi1d(self) -> np.ndarray:
        return math.pi / self.half_length * self.k1d

    def coords(self) -> list:
        """Physical coordinates, one broadcastable array per axis."""
        return np.meshgrid(*([self.x1d] * self.dim), indexing="ij", sparse=True)

    def wavenumbers(self) -> list:
        return np.meshgrid(*([self.xi1d] * self.dim), indexing="ij", sparse=True)

    @cached_property
    def radius(self) -> np.ndarray:
        """``|x|`` on the spatial lattice."""
        return np.sqrt(sum(c**2 for c in self.coords()))

    @cached_property
    def xi_abs(self) -> np.ndarray:
        """``|xi|`` on the frequency lattice (FFT ordering)."""
        return np.sqrt(sum(k**2 for k in self.wavenumbers()))

    @cached_property
    def _phase(self) -> np.ndarray:
        # (-1)^k per axis moves the origin from index 0 to index M/2
        s = np.where(self.k1d % 2 == 0, 1.0, -1.0)
        out = np.ones(self.shape)
        for ax in range(self.dim):
            sh = [1] * self.dim
            sh[ax] = -1
            out = out * s.reshape(sh)
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep = np.abs(self.k1d) < self.points_per_dim / 3.0
        out = np.ones(self.shape, dtype=bool)
        for ax in range(self.dim):
            sh = [1] * self.dim
            sh[ax] = -1
            out = out & keep.reshape(sh)
        return out

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.dim, self.half_length, self.points_per_dim * factor)


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(f"coeffs shape {self.coeffs.shape} != grid shape {self.grid.shape}")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, a) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * a)

    __rmul__ = __mul__

    def multiply(self, symbol: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * symbol)

    def to_physical(self) -> "PhysicalField":
        return inverse_transform(self)

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))


@dataclass(frozen=True, eq=False)
class PhysicalField:
    grid: Grid
    samples: np.ndarray

    def __post_init__(self):
        if self.samples.shape != self.grid.shape:
            raise ValueError(f"samples shape {self.samples.shape} != grid shape {self.grid.shape}")

    def to_spectral(self) -> SpectralField:
        return forward_transform(self)


@dataclass(frozen=True)
class ModelParams:
    theta: float
    gamma: float
    dim: int = 1

    def __post_init__(self):
        if not 0 < self.theta <= 2:
            raise ValueError(f"theta must lie in ]0, 2], got {self.theta}")
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")

    @property
    def serrin_exponent(self) -> float:
        """``N / (N - theta)``; infinite when ``theta >= N``."""
        return math.inf if self.theta >= self.dim else self.dim / (self.dim - self.theta)


Field = Union[SpectralField, PhysicalField]


def forward_transform(f: PhysicalField) -> SpectralField:
    g = f.grid
    c = sfft.fftn(f.samples) / g.size
    return SpectralField(g, c * g._phase)


def inverse_transform(F: SpectralField, check: bool = True) -> PhysicalField:
    """Real samples of ``F``.

    Raises ``ValueError`` if the imaginary residue exceeds ``1e-9`` relative,
    i.e. if the coefficients are not Hermitian symmetric.
    """
    g = F.grid
    z = sfft.ifftn(F.coeffs * g._phase) * g.size
    if check:
        scale = np.max(np.abs(z.real)) if z.size else 0.0
        imag = np.max(np.abs(z.imag)) if z.size else 0.0
        if imag > HERMITIAN_RTOL * max(scale, 1e-300) and imag > 1e-300:
            raise ValueError(f"coefficients are not Hermitian symmetric (imag/real = {imag / max(scale, 1e-300):.3e})")
    return PhysicalField(g, np.ascontiguousarray(z.real))


def batch_to_physical(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Inverse transform over the trailing ``N`` axes of a stacked coefficient array."""
    axes = tuple(range(-grid.dim, 0))
    return (sfft.ifftn(coeffs * grid._phase, axes=axes) * grid.size).real


def batch_to_spectral(grid: Grid, samples: np.ndarray) -> np.ndarray:
    axes = tuple(range(-grid.dim, 0))
    return sfft.fftn(samples, axes=axes) / grid.size * grid._phase


def fractional_symbol(grid: Grid, theta: float) -> np.ndarray:
    """``|xi|^theta`` on the lattice, exactly 0 at ``xi = 0``."""
    if not 0 < theta <= 2:
        raise ValueError(f"theta must lie in ]0, 2], got {theta}")
    if theta == 2:
        return grid.xi_abs**2
    return grid.xi_abs**theta


def semigroup_apply(f: SpectralField, t: float, theta: float) -> SpectralField:
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    if t == 0:
        return SpectralField(f.grid, f.coeffs.copy())
    return f.multiply(np.exp(-t * fractional_symbol(f.grid, theta)))


def _duhamel_profile(a: np.ndarray, t: float) -> np.ndarray:
    # (1 - exp(-t a)) / a, with the a -> 0 limit t
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    small = a * t < 1e-8
    big = ~small
    out[big] = -np.expm1(-t * a[big]) / a[big]
    out[small] = t * (1.0 - 0.5 * t * a[small])
    return out


def duhamel_linear_multiplier(grid: Grid, t: float, theta: float) -> np.ndarray:
    """Symbol of ``f -> int_0^t S(t - tau) f dtau``."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return _duhamel_profile(fractional_symbol(grid, theta), t)


# s^2 / (s + e^{-s} - 1) = sum_k _PSI_TAYLOR[k] s^k near 0
_PSI_TAYLOR = (
    2.0,
    2.0 / 3.0,
    1.0 / 18.0,
    -1.0 / 270.0,
    -1.0 / 3240.0,
    1.0 / 13608.0,
    -1.0 / 2041200.0,
    -1.0 / 874800.0,
    13.0 / 146966400.0,
)
PSI_SWITCH = 1e-2


def psi_profile(s) -> np.ndarray:
    """``Psi(s) = s^2 / (s + e^{-s} - 1)`` for ``s >= 0``; Taylor branch below ``1e-2``."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s < PSI_SWITCH
    ss = s[small]
    acc = np.zeros_like(ss)
    for c in reversed(_PSI_TAYLOR):
        acc = acc * ss + c
    out[small] = acc
    sb = s[~small]
    out[~small] = sb**2 / (sb + np.expm1(-sb))
    return out


def c_T_multiplier(grid: Grid, T: float, theta: float) -> np.ndarray:
    """``C_T(xi) = T^{-2} Psi(T |xi|^theta)``, the inverse of ``int_0^T`` of the Duhamel symbol."""
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    return psi_profile(T * fractional_symbol(grid, theta)) / T**2


def dealias(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, np.where(f.grid.dealias_mask, f.coeffs, 0.0))


def _periodized_poisson_1d(x: np.ndarray, t: float, L: float) -> np.ndarray:
    # closed-form sum over all images of t / (pi (t^2 + (x + 2Ln)^2))
    a = math.pi * t / L
    return np.sinh(a) / (2 * L * (np.cosh(a) - np.cos(math.pi * x / L)))


def closed_form_kernel(grid: Grid, t: float, theta: float) -> PhysicalField:
    """Periodized Gaussian (``theta = 2``) or Poisson (``theta = 1``) kernel of ``S(t)``.

    Gaussian images are summed shell by shell until the next shell is below
    ``1e-14``.  The one-dimensional Poisson image sum is resummed in closed
    form; in higher dimension shells are summed to radius ``R`` and the far
    field is replaced by its continuum integral, which leaves an ``O(R^-3)``
    error.
    """
    if theta not in (1, 2):
        raise ValueError(f"closed-form kernel only for theta in {{1, 2}}, got {theta}")
    if not t > 0:
        raise ValueError("t must be positive")
    N, L = grid.dim, grid.half_length
    coords = grid.coords()
    if theta == 1 and N == 1:
        return PhysicalField(grid, _periodized_poisson_1d(coords[0], t, L))
    if theta == 2:
        peak = (4 * math.pi * t) ** (-N / 2)

        def profile(r2):
            return peak * np.exp(-r2 / (4 * t))

        n_img = 1
        while peak * math.exp(-(((2 * n_img - 1) * L) ** 2) / (4 * t)) * (2 * n_img + 1) ** (N - 1) >= 1e-14:
            n_img += 1
        far = 0.0
    else:
        cN = math.gamma((N + 1) / 2) / math.pi ** ((N + 1) / 2)

        def profile(r2):
            return cN * t / (t**2 + r2) ** ((N + 1) / 2)

        n_img = 40
        # continuum tail outside the ball of radius (2 n_img + 1) L, density 1 / (2L)^N
        rho = (2 * n_img + 1) * L
        sphere = 2 * math.pi ** (N / 2) / math.gamma(N / 2)
        far = cN * t * sphere / rho / (2 * L) ** N
    out = np.zeros(grid.shape)
    shifts = np.arange(-n_img, n_img + 1)
    for combo in np.ndindex(*([len(shifts)] * N)):
        sh = shifts[list(combo)]
        if theta == 1 and np.sqrt(np.sum((2 * L * sh) ** 2)) > (2 * n_img + 1) * L:
            continue
        r2 = 0.0
        for ax in range(N):
            r2 = r2 + (coords[ax] + 2 * L * sh[ax]) ** 2
        out = out + profile(r2)
    return PhysicalField(grid, out + far)


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

MAGIC = b"FRHT"
FORMAT_VERSION = 1


def write_field(path, f: Field) -> None:
    """Serialize a field: header then little-endian f64 (physical) or re/im pairs (spectral)."""
    g = f.grid
    spectral = isinstance(f, SpectralField)
    head = struct.pack("<4sII", MAGIC, FORMAT_VERSION, g.dim)
    head += struct.pack("<" + "I" * g.dim, *g.shape)
    head += struct.pack("<dB", g.half_length, 1 if spectral else 0)
    if spectral:
        body = np.ascontiguousarray(f.coeffs, dtype="<c16").tobytes()
    else:
        body = np.ascontiguousarray(f.samples, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(body)


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, version, dim = struct.unpack_from("<4sII", data, 0)
    if magic != MAGIC:
        raise ValueError(f"not a field file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported field format version {version}")
    off = 12
    shape = struct.unpack_from("<" + "I" * dim, data, off)
    off += 4 * dim
    L, flag = struct.unpack_from("<dB", data, off)
    off += 9
    if len(set(shape)) != 1:
        raise ValueError("only cubic lattices are supported")
    g = Grid(dim, L, shape[0])
    if flag:
        arr = np.frombuffer(data, dtype="<c16", offset=off).reshape(shape).astype(complex)
        return SpectralField(g, arr)
    arr = np.frombuffer(data, dtype="<f8", offset=off).reshape(shape).astype(float)
    return PhysicalField(g, arr)
