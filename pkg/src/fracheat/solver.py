"""Picard iteration for the Duhamel formulation of the forced fractional heat equation.

The unknown is a whole space-time slab ``u(t_n)``, ``t_n = n T / n_time``.  The
linear part is exact in Fourier space; the nonlinear Duhamel integral uses a
first-order exponential integrator with exact semigroup weights.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .besov import block_norms, build_partition, lr_sum, tail_seminorm
from .lorentz import INF, ul_lorentz_norms
from .spectral import (
    Grid,
    ModelParams,
    SpectralField,
    _duhamel_profile,
    batch_to_physical,
    batch_to_spectral,
    duhamel_linear_multiplier,
    fractional_symbol,
)

__all__ = [
    "SolverConfig",
    "SpaceTimeField",
    "SolveReport",
    "NonFiniteError",
    "linear_part_I",
    "semigroup_part",
    "nonlinear_part_J",
    "power_nonlinearity",
    "picard_solve",
    "initial_data_evolve",
    "residual",
    "xt_norm",
    "admissibility",
    "WeakStarFit",
    "weak_star_initial_decay",
    "difference_bound_ratio",
]

log = logging.getLogger(__name__)

MODES = ("forcing", "initial_data")
RULES = ("left", "average")


class NonFiniteError(FloatingPointError):
    """The power nonlinearity overflowed; the iteration is diverging."""


@dataclass(frozen=True)
class SolverConfig:
    model: ModelParams
    p: float
    T: float = 0.5
    n_time: int = 256
    max_iters: int = 50
    tol: float = 1e-10
    mode: str = "forcing"
    M_ball: Optional[float] = None
    dealias: bool = True
    rule: str = "left"
    nonlinear: bool = True
    override: bool = False
    center_spacing: float = 0.5
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        if self.n_time < 1 or self.max_iters < 1:
            raise ValueError("n_time and max_iters must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.override:
            return
        m = self.model
        if not self.p > m.gamma:
            raise ValueError(f"need p > gamma (p = {self.p}, gamma = {m.gamma}); set override for such runs")
        if self.p < m.dim * (m.gamma - 1) / m.theta:
            raise ValueError("need p >= N (gamma - 1) / theta; set override for such runs")
        if self.T > 1:
            raise ValueError("T > 1 lies outside the local theory; set override for such runs")

    @property
    def dt(self) -> float:
        return self.T / self.n_time

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_time + 1)

    def echo(self) -> dict:
        d = asdict(self)
        d["M_ball"] = self.M_ball
        return d


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Coefficient slabs of shape ``(n_time + 1, *grid.shape)``."""

    grid: Grid
    times: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (len(self.times),) + self.grid.shape:
            raise ValueError("coefficient slab does not match times and grid")

    def slice(self, n: int) -> SpectralField:
        return SpectralField(self.grid, self.coeffs[n])

    def physical(self) -> np.ndarray:
        return batch_to_physical(self.grid, self.coeffs)

    def __add__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.times, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.times, self.coeffs - other.coeffs)

    def with_slice(self, n: int, value: np.ndarray) -> "SpaceTimeField":
        c = self.coeffs.copy()
        c[n] = value
        return SpaceTimeField(self.grid, self.times, c)


@dataclass
class SolveReport:
    iterate_xt_norms: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    final_residual: float = math.nan
    converged: bool = False
    verdict: str = "max-iters"
    xt_norm: float = math.nan
    iterations: int = 0
    within_ball: Optional[bool] = None
    admissibility: dict = field(default_factory=dict)

    def to_json(self, config: Optional[SolverConfig] = None, **extra) -> str:
        doc = {"config": config.echo() if config else None}
        doc.update(_jsonable(asdict(self)))
        doc.update(_jsonable(extra))
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _slab(config: SolverConfig, grid: Grid, coeffs: np.ndarray) -> SpaceTimeField:
    return SpaceTimeField(grid, config.times, coeffs)


def linear_part_I(mu: SpectralField, config: SolverConfig) -> SpaceTimeField:
    """``I[mu](t_n) = int_0^{t_n} S(t_n - tau) mu dtau``, evaluated exactly per mode."""
    g = mu.grid
    sym = fractional_symbol(g, config.model.theta)
    out = np.empty((config.n_time + 1,) + g.shape, dtype=complex)
    for n, t in enumerate(config.times):
        out[n] = _duhamel_profile(sym, t) * mu.coeffs
    return _slab(config, g, out)


def semigroup_part(mu: SpectralField, config: SolverConfig) -> SpaceTimeField:
    """``S(t_n) mu`` on the time grid."""
    g = mu.grid
    sym = fractional_symbol(g, config.model.theta)
    out = np.exp(-config.times.reshape((-1,) + (1,) * g.dim) * sym) * mu.coeffs
    return _slab(config, g, out)


def power_nonlinearity(u: np.ndarray, gamma: float) -> np.ndarray:
    """``|u|^{gamma - 1} u`` pointwise."""
    if float(gamma).is_integer() and int(gamma) % 2 == 1:
        return u ** int(gamma)
    return np.sign(u) * np.abs(u) ** gamma


def nonlinear_part_J(u: SpaceTimeField, config: SolverConfig) -> SpaceTimeField:
    """``J[u](t_n) = int_0^{t_n} S(t_n - tau) |u|^{gamma-1} u(tau) dtau``.

    On ``[t_m, t_{m+1}]`` the integrand is frozen at ``t_m`` (``rule="left"``)
    or at the mean of its endpoint values (``rule="average"``) and integrated
    exactly against the semigroup.  Raises :class:`NonFiniteError` on overflow.
    """
    g = u.grid
    c = u.coeffs
    if config.dealias:
        c = np.where(g.dealias_mask, c, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        phys = batch_to_physical(g, c)
        F = power_nonlinearity(phys, config.model.gamma)
    if not np.all(np.isfinite(F)):
        raise NonFiniteError("power nonlinearity produced non-finite values")
    Fh = batch_to_spectral(g, F)
    if config.dealias:
        Fh = np.where(g.dealias_mask, Fh, 0.0)
    sym = fractional_symbol(g, config.model.theta)
    step = np.exp(-config.dt * sym)
    weight = duhamel_linear_multiplier(g, config.dt, config.model.theta)
    if config.rule == "average":
        src = 0.5 * (Fh[:-1] + Fh[1:])
    else:
        src = Fh[:-1]
    out = np.zeros_like(Fh)
    # J_n = S(dt) J_{n-1} + D(dt) F_{n-1}: same sum as the subinterval formula, O(n_time)
    for n in range(1, config.n_time + 1):
        out[n] = step * out[n - 1] + weight * src[n - 1]
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("Duhamel sum produced non-finite values")
    return _slab(config, g, out)


def xt_norm(u: SpaceTimeField, p: float, spacing: float = 0.5) -> float:
    """``max_{n >= 1} ||u(t_n) | L^{p,inf}_ul||``."""
    if len(u.times) < 2:
        return 0.0
    phys = batch_to_physical(u.grid, u.coeffs[1:])
    return float(np.max(ul_lorentz_norms(u.grid, phys, p, INF, spacing)))


def slice_norms(u: SpaceTimeField, p: float, spacing: float = 0.5) -> np.ndarray:
    return ul_lorentz_norms(u.grid, batch_to_physical(u.grid, u.coeffs), p, INF, spacing)


def _linear(mu: SpectralField, config: SolverConfig) -> SpaceTimeField:
    return linear_part_I(mu, config) if config.mode == "forcing" else semigroup_part(mu, config)


def residual(u: SpaceTimeField, mu: SpectralField, config: SolverConfig) -> float:
    """``sup_n ||u - L[mu] - J[u]||`` in ``L^{p,inf}_ul``; ``L`` is ``I`` or ``S(t)`` by mode."""
    lin = _linear(mu, config)
    d = u - lin
    if config.nonlinear:
        d = d - nonlinear_part_J(u, config)
    return xt_norm(d, config.p, config.center_spacing)


def _iterate(mu: SpectralField, config: SolverConfig, report: SolveReport):
    lin = _linear(mu, config)
    u = lin
    x0 = xt_norm(u, config.p, config.center_spacing)
    report.iterate_xt_norms.append(x0)
    if not config.nonlinear:
        report.converged, report.verdict, report.iterations = True, "converged", 1
        report.step_norms.append(0.0)
        return u
    limit = config.divergence_factor * max(x0, np.finfo(float).tiny)
    prev = None
    for k in range(1, config.max_iters + 1):
        report.iterations = k
        try:
            new = lin + nonlinear_part_J(u, config)
        except NonFiniteError:
            report.verdict = "diverged"
            log.info("iteration %d overflowed", k)
            return u
        step = xt_norm(new - u, config.p, config.center_spacing)
        xn = xt_norm(new, config.p, config.center_spacing)
        report.step_norms.append(step)
        report.iterate_xt_norms.append(xn)
        if prev is not None and prev > 0:
            report.contraction_ratios.append(step / prev)
        log.debug("iteration %d: step %.3e, X_T norm %.3e", k, step, xn)
        u = new
        if not (math.isfinite(xn) and xn <= limit):
            report.verdict = "diverged"
            return u
        if step <= config.tol:
            report.verdict = "converged"
            return u
        prev = step
    report.verdict = "max-iters"
    return u


def picard_solve(mu: SpectralField, config: SolverConfig, admissibility_args: Optional[dict] = None):
    """Iterate ``u <- I[mu] + J[u]`` from ``u = I[mu]`` over the whole time slab.

    Returns ``(u, report)``.  Divergence (overflow, or X_T norm growing past
    ``divergence_factor`` times that of ``I[mu]``) is a verdict, not an error.
    """
    if config.mode != "forcing":
        raise ValueError("picard_solve needs mode='forcing'; use initial_data_evolve")
    return _solve(mu, config, admissibility_args)


def initial_data_evolve(mu: SpectralField, config: SolverConfig, admissibility_args: Optional[dict] = None):
    """Same iteration with linear part ``S(t) mu`` (Cauchy problem with data ``mu``)."""
    if config.mode != "initial_data":
        raise ValueError("initial_data_evolve needs mode='initial_data'")
    return _solve(mu, config, admissibility_args)


def _solve(mu, config, admissibility_args):
    report = SolveReport()
    if admissibility_args is not None:
        report.admissibility = admissibility(mu, config, **admissibility_args)
    u = _iterate(mu, config, report)
    if report.verdict == "diverged":
        report.converged = False
        report.xt_norm = report.iterate_xt_norms[-1]
        return u, report
    try:
        report.final_residual = residual(u, mu, config)
    except NonFiniteError:
        report.verdict, report.final_residual = "diverged", math.inf
        return u, report
    report.xt_norm = xt_norm(u, config.p, config.center_spacing)
    ratios_ok = not report.contraction_ratios or report.contraction_ratios[-1] < 1
    report.converged = report.verdict == "converged" and report.final_residual <= config.tol and ratios_ok
    if report.verdict == "converged" and not report.converged:
        report.verdict = "max-iters"
    if config.M_ball is not None and report.converged:
        report.within_ball = bool(report.xt_norm <= config.M_ball)
    return u, report


def admissibility(mu: SpectralField, config: SolverConfig, eps: Optional[float] = None,
                  s: Optional[float] = None, j0: Optional[int] = None) -> dict:
    """Measured quantities behind the three sufficient conditions for existence.

    The smallness thresholds are not known explicitly, so every clause is
    reported as numbers plus a finiteness flag, never as a gate.
    """
    g = mu.grid
    part = build_partition(g)
    m = config.model
    N, theta, p = g.dim, m.theta, config.p
    j = np.arange(part.j_max + 1)
    bn = block_norms(g, mu.coeffs, p, INF, "ul", part)
    out = {"j_max": part.j_max}
    c1 = float(lr_sum(2.0 ** (-theta * j) * bn, 1.0))
    out["clause1"] = {"besov_minus_theta_p_inf_1": c1, "finite": math.isfinite(c1)}
    if eps is not None:
        p_eff = N * p / (N + p * eps)
        rec = {"eps": eps, "p_eff": p_eff}
        if p_eff > 1 and 0 < eps < theta:
            bn2 = block_norms(g, mu.coeffs, p_eff, INF, "ul", part)
            rec["besov_norm"] = float(np.max(2.0 ** ((eps - theta) * j) * bn2))
            rec["tail"] = tail_seminorm(mu, eps, theta, p_eff, j0 if j0 is not None else part.j_max // 2, part)
            rec["finite"] = math.isfinite(rec["besov_norm"])
        else:
            rec["finite"] = False
            rec["note"] = "effective index outside ]1, inf[ or eps outside ]0, theta["
        out["clause2"] = rec
    if s is not None:
        rec = {"s": s}
        if -theta < s < 0:
            rec["besov_s_p_inf_inf"] = float(np.max(2.0 ** (s * j) * bn))
            rec["finite"] = math.isfinite(rec["besov_s_p_inf_inf"])
        else:
            rec["finite"] = False
            rec["note"] = "s outside ]-theta, 0["
        out["clause3"] = rec
    return out


@dataclass
class WeakStarFit:
    exponent: float
    fit_residual: float
    times: np.ndarray
    norms: np.ndarray
    bound_exponent: float
    trivial: bool = False

    @property
    def vanishing(self) -> bool:
        return self.trivial or bool(self.norms[0] < self.norms[-1])


def weak_star_initial_decay(u: SpaceTimeField, config: SolverConfig, s: float,
                            max_fraction: float = 0.25) -> WeakStarFit:
    """Fit ``||u(t) | B^{s - N/p}_{inf,inf}||  ~ t^a`` over early times.

    Slices ``n = 1, 2, 4, ...`` up to ``max_fraction * n_time`` are used; fewer
    than four usable slices is an error.
    """
    g = u.grid
    m = config.model
    N, p = g.dim, config.p
    bound = min(1.0, 1 - s / m.theta - (m.gamma - 1) * N / (p * m.theta))
    ns = []
    n = 1
    while n <= max(1, int(max_fraction * config.n_time)):
        ns.append(n)
        n *= 2
    if len(ns) < 4:
        raise ValueError("fewer than four early-time slices available")
    part = build_partition(g)
    j = np.arange(part.j_max + 1)
    bn = block_norms(g, u.coeffs[ns], INF, None, "lp", part)
    norms = np.max(2.0 ** ((s - N / p) * j) * bn, axis=-1)
    times = u.times[ns]
    if np.all(norms == 0):
        return WeakStarFit(math.nan, 0.0, times, norms, bound, trivial=True)
    use = norms > 0
    if use.sum() < 4:
        raise ValueError("fewer than four nonzero early-time slices")
    lt, ln = np.log(times[use]), np.log(norms[use])
    a, b = np.polyfit(lt, ln, 1)
    res = float(np.sqrt(np.mean((ln - (a * lt + b)) ** 2)))
    return WeakStarFit(float(a), res, times, norms, bound)


def difference_bound_ratio(f: np.ndarray, g: np.ndarray, grid: Grid, gamma: float, p: float,
                           spacing: float = 0.5) -> float:
    """``||F(f) - F(g)||_{p/gamma} / (gamma (||f||^{gamma-1} + ||g||^{gamma-1}) ||f - g||_p)``.

    ``F(u) = |u|^{gamma-1} u`` and all norms are ``L^{.,inf}_ul``.  Values at
    most one mean the mean-value bound holds with constant one.
    """
    if not p > gamma:
        raise ValueError("need p > gamma")
    stack = np.stack([power_nonlinearity(f, gamma) - power_nonlinearity(g, gamma), f, g, f - g])
    lhs = ul_lorentz_norms(grid, stack[:1], p / gamma, INF, spacing)[0]
    nf, ng, nd = ul_lorentz_norms(grid, stack[1:], p, INF, spacing)
    den = gamma * (nf ** (gamma - 1) + ng ** (gamma - 1)) * nd
    if den == 0:
        return 0.0 if lhs == 0 else math.inf
    return float(lhs / den)
