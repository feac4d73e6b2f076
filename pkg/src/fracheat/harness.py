"""Batch experiments that measure the constants in the function-space estimates.

Each experiment takes an :class:`ExperimentPlan`, evaluates ratios of the form
``lhs / rhs`` on every level of a grid ladder and returns a :class:`RatioReport`
holding the per-case rows, per-level maxima, refinement trends and any fitted
exponents.  Constants are measured, never compared against the (unknown)
constants of the estimates; a pass means the ratios are finite and stable under
refinement.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .besov import bernstein_check, block_norms, build_partition, lr_sum, zeta
from .forcing import (
    make_delta,
    make_delta_derivative,
    make_homogeneous,
    make_indicator,
    make_random_bandlimited,
)
from .lorentz import INF, ul_lorentz_norms
from .solver import SolverConfig, nonlinear_part_J, picard_solve
from .spectral import (
    Grid,
    ModelParams,
    SpectralField,
    _duhamel_profile,
    batch_to_physical,
    c_T_multiplier,
    forward_transform,
    fractional_symbol,
    PhysicalField,
)

__all__ = [
    "ExperimentPlan",
    "PlanError",
    "FitResult",
    "RatioFamily",
    "RatioReport",
    "EnsembleMember",
    "ensemble_members",
    "loglog_fit",
    "verify_young_ul",
    "verify_semigroup_decay_lorentz",
    "verify_semigroup_decay_besov",
    "verify_forcing_recovery",
    "verify_kernel_decay",
    "verify_embedding_chain",
    "verify_sobolev_embedding",
    "solvability_sweep",
    "verify_necessity",
    "single_mode_recovery_ratio",
    "kernel_tail_fit",
    "EXPERIMENTS",
    "run_plan",
    "write_report",
]

log = logging.getLogger(__name__)

FIT_RESIDUAL_LIMIT = 0.2
EXCLUDE_BELOW = 1e-14
DEFAULT_LADDER = (1024, 2048, 4096)


class PlanError(ValueError):
    """A plan is malformed or asks for something the experiment cannot do."""


# ---------------------------------------------------------------------------
# plan and report types
# ---------------------------------------------------------------------------


def _tuple(v):
    if isinstance(v, (list, tuple)):
        return tuple(_tuple(x) for x in v)
    return v


@dataclass(frozen=True, eq=False)
class ExperimentPlan:
    """One experiment: grid ladder, ensemble, norm indices and parameter grids.

    Experiment-specific knobs go in ``options``; each experiment documents the
    keys it reads and their defaults.
    """

    experiment: str
    ladder: tuple = DEFAULT_LADDER
    half_length: float = 16.0
    dim: int = 1
    ensemble_count: int = 20
    seed: int = 0
    ensemble_kinds: tuple = ()
    p: float = 3.0
    q: float = INF
    s: float = 0.0
    r: float = INF
    thetas: tuple = (2.0,)
    gammas: tuple = (2.0,)
    times: tuple = ()
    T_values: tuple = (1.0, 0.5, 0.25, 0.125)
    band: float = 0.15
    output: Optional[str] = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ladder", tuple(int(m) for m in self.ladder))
        for name in ("ensemble_kinds", "thetas", "gammas", "times", "T_values"):
            object.__setattr__(self, name, _tuple(getattr(self, name)))
        if self.experiment not in EXPERIMENTS:
            raise PlanError(f"unknown experiment {self.experiment!r}; expected one of {sorted(EXPERIMENTS)}")
        if not self.ladder or any(b <= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise PlanError("grid ladder must be non-empty and strictly increasing")
        if self.ensemble_count < 0:
            raise PlanError("ensemble_count must be nonnegative")
        if not self.band > 0:
            raise PlanError("stability band must be positive")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise PlanError(f"unknown plan keys: {sorted(unknown)}")
        d = dict(data)
        for k in ("q", "r"):
            if isinstance(d.get(k), str) and d[k].lower() in ("inf", "infinity"):
                d[k] = INF
        return cls(**d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        return _jsonable(d)

    def opt(self, key, default):
        return self.options.get(key, default)

    def grids(self):
        return [Grid(self.dim, self.half_length, m) for m in self.ladder]

    def require_levels(self, n: int = 3) -> None:
        if len(self.ladder) < n:
            raise PlanError(f"refinement trends need at least {n} grid levels, got {len(self.ladder)}")


@dataclass
class FitResult:
    """Least-squares line through ``(log x, log y)`` with its RMS residual."""

    name: str
    slope: float
    intercept: float
    residual: float
    target: float
    tolerance: float
    kind: str = "match"  # "match": |slope - target| <= tol; "upper": slope <= target + tol
    flags: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        if not math.isfinite(self.slope):
            return "inconclusive"
        if self.residual > FIT_RESIDUAL_LIMIT:
            return "inconclusive"
        if self.kind == "match":
            ok = abs(self.slope - self.target) <= self.tolerance
        elif self.kind == "upper":
            ok = self.slope <= self.target + self.tolerance
        else:
            ok = self.slope >= self.target - self.tolerance
        return "pass" if ok else "fail"

    def as_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict
        return _jsonable(d)


@dataclass
class RatioFamily:
    """Ratios of one inequality across the ladder.

    ``trend[i] = level_max[i+1] / level_max[i]``; the family passes when every
    level maximum is finite and every trend lies in ``[1 - band, 1 + band]``.
    """

    name: str
    levels: tuple
    level_max: list
    band: float

    @property
    def trend(self) -> list:
        m = self.level_max
        return [m[i + 1] / m[i] if m[i] > 0 else math.nan for i in range(len(m) - 1)]

    @property
    def max_ratio(self) -> float:
        return float(max(self.level_max)) if self.level_max else math.nan

    @property
    def passed(self) -> bool:
        if not self.level_max or not all(math.isfinite(v) for v in self.level_max):
            return False
        return all(math.isfinite(t) and abs(t - 1) <= self.band for t in self.trend)

    def as_dict(self) -> dict:
        return _jsonable({
            "name": self.name, "levels": self.levels, "level_max": self.level_max,
            "trend": self.trend, "band": self.band, "max_ratio": self.max_ratio, "passed": self.passed,
        })


@dataclass
class RatioReport:
    experiment: str
    columns: tuple
    rows: list = field(default_factory=list)
    families: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def status(self) -> str:
        if not all(f.passed for f in self.families) or not all(self.checks.values()):
            return "fail"
        verdicts = [f.verdict for f in self.fits]
        if "fail" in verdicts:
            return "fail"
        if "inconclusive" in verdicts:
            return "inconclusive"
        return "pass"

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def family(self, name: str) -> RatioFamily:
        for f in self.families:
            if f.name == name:
                return f
        raise KeyError(name)

    def fit(self, name: str) -> FitResult:
        for f in self.fits:
            if f.name == name:
                return f
        raise KeyError(name)

    def summary(self) -> dict:
        return _jsonable({
            "experiment": self.experiment,
            "status": self.status,
            "families": [f.as_dict() for f in self.families],
            "fits": [f.as_dict() for f in self.fits],
            "checks": self.checks,
            "details": self.details,
            "flags": self.flags,
        })


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def loglog_fit(x, y, name: str, target: float, tolerance: float, kind: str = "match") -> FitResult:
    """Fit ``log y = slope log x + b``; points with ``y <= 0`` are dropped."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    use = (x > 0) & (y > 0) & np.isfinite(y)
    if use.sum() < 3:
        return FitResult(name, math.nan, math.nan, math.inf, target, tolerance, kind, ["too few points"])
    lx, ly = np.log(x[use]), np.log(y[use])
    a, b = np.polyfit(lx, ly, 1)
    res = float(np.sqrt(np.mean((ly - (a * lx + b)) ** 2)))
    return FitResult(name, float(a), float(b), res, target, tolerance, kind)


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map, on a process pool when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleMember:
    """Grid-independent description of one test field; :meth:`realize` samples it."""

    label: str
    kind: str
    amplitude: float = 1.0
    exponent: float = 0.5
    radius: float = 1.0
    seed: int = 0
    slope: float = 0.0
    kmax: float = 8.0
    xi0: float = 1.0

    def realize(self, grid: Grid) -> SpectralField:
        k = self.kind
        if k == "zero":
            return SpectralField.zeros(grid)
        if k == "delta":
            return make_delta(grid, self.amplitude)
        if k == "delta_derivative":
            return make_delta_derivative(grid, 1, self.amplitude)
        if k == "homogeneous":
            return make_homogeneous(grid, self.exponent, self.amplitude)
        if k == "indicator":
            return make_indicator(grid, radius=self.radius, height=self.amplitude)
        if k == "random_bandlimited":
            return make_random_bandlimited(grid, self.seed, self.slope, (1.0, self.kmax), self.amplitude)
        if k == "single_mode":
            return single_mode(grid, self.xi0, self.amplitude)
        raise PlanError(f"unknown ensemble kind {k!r}")


ENSEMBLE_KINDS = ("delta", "delta_derivative", "homogeneous", "indicator", "random_bandlimited", "single_mode", "zero")


def single_mode(grid: Grid, xi0: float, amplitude: float = 1.0) -> SpectralField:
    """``amplitude cos(xi x_1)`` at the lattice frequency nearest ``xi0``."""
    k = int(round(xi0 * grid.half_length / math.pi))
    if not 0 < k < grid.points_per_dim // 2:
        raise PlanError(f"mode {xi0} is not resolved on this grid")
    c = np.zeros(grid.shape, dtype=complex)
    idx = [0] * grid.dim
    idx[0] = k
    c[tuple(idx)] = amplitude / 2
    idx[0] = -k
    c[tuple(idx)] = amplitude / 2
    return SpectralField(grid, c)


def ensemble_members(count: int, seed: int, kinds: Sequence[str], max_exponent: float,
                     amplitude_decades: tuple = (-1.0, 1.0)) -> list:
    """``count`` members cycling through ``kinds`` with parameters drawn from ``seed``.

    Every member consumes the same number of draws, so the ensemble for a
    given ``(count, seed, kinds)`` does not depend on the grid.
    """
    for k in kinds:
        if k not in ENSEMBLE_KINDS:
            raise PlanError(f"unknown ensemble kind {k!r}")
    rng = np.random.default_rng(seed)
    lo, hi = amplitude_decades
    out = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        u = rng.random(5)
        sub = int(rng.integers(0, 2**31 - 1))
        amp = 10.0 ** (lo + (hi - lo) * u[0])
        out.append(EnsembleMember(
            label=f"{i:02d}-{kind}",
            kind=kind,
            amplitude=amp,
            exponent=max_exponent * (0.2 + 0.7 * u[1]),
            radius=0.25 + 1.5 * u[2],
            seed=sub,
            slope=2 * u[3] - 1,
            kmax=4.0 + 8.0 * u[4],
            xi0=1.0 + 10.0 * u[4],
        ))
    return out


def _members(plan: ExperimentPlan, default_kinds, max_exponent, decades=(-1.0, 1.0)):
    kinds = plan.ensemble_kinds or default_kinds
    return ensemble_members(plan.ensemble_count, plan.seed, kinds, max_exponent, decades)


# ---------------------------------------------------------------------------
# norm helpers on stacks of coefficient arrays
# ---------------------------------------------------------------------------


def _ul(grid: Grid, coeffs: np.ndarray, p: float, q: float = INF) -> np.ndarray:
    return ul_lorentz_norms(grid, batch_to_physical(grid, coeffs), p, q)


def _besov(grid: Grid, coeffs: np.ndarray, s: float, p: float, r: float, base: str = "ul",
           q: float = INF, part=None) -> np.ndarray:
    part = part or build_partition(grid)
    bn = block_norms(grid, coeffs, p, q if base == "ul" else None, base, part)
    j = np.arange(part.j_max + 1)
    return lr_sum(2.0 ** (s * j) * bn, r)


def _l1(grid: Grid, coeffs: np.ndarray) -> float:
    return float(np.sum(np.abs(batch_to_physical(grid, coeffs))) * grid.cell_volume)


def _default_times(plan: ExperimentPlan, lo=1e-3, hi=1.0, n=13) -> np.ndarray:
    return np.asarray(plan.times, dtype=float) if plan.times else np.geomspace(lo, hi, n)


def _family(name, plan, per_level) -> RatioFamily:
    return RatioFamily(name, plan.ladder, [float(np.max(v)) if len(v) else math.nan for v in per_level], plan.band)


# ---------------------------------------------------------------------------
# Young inequality on uniformly local weak spaces
# ---------------------------------------------------------------------------


def _young_kernels(grid: Grid, theta: float, times) -> list:
    N, L = grid.dim, grid.half_length
    out = [("delta", np.full(grid.shape, 1.0 / (2 * L) ** N, dtype=complex))]
    sym = fractional_symbol(grid, theta)
    for t in times:
        out.append((f"heat-t{t:g}", np.exp(-t * sym) / (2 * L) ** N + 0j))
    r = grid.radius
    with np.errstate(divide="ignore", over="ignore"):
        bump = np.where(r < 0.5, np.exp(-1.0 / np.maximum(1 - (2 * r) ** 2, 1e-300)), 0.0)
    bump /= np.sum(bump) * grid.cell_volume
    out.append(("bump", forward_transform(PhysicalField(grid, bump)).coeffs))
    return out


def _young_level(args):
    plan, M = args
    grid = Grid(plan.dim, plan.half_length, M)
    theta = plan.thetas[0]
    members = _members(plan, ("indicator", "homogeneous", "random_bandlimited"), plan.dim / plan.p)
    box = (2 * plan.half_length) ** plan.dim
    kernels = _young_kernels(grid, theta, plan.opt("kernel_times", (0.01, 0.1, 1.0)))
    f_stack = np.stack([m.realize(grid).coeffs for m in members])
    f_norm = _ul(grid, f_stack, plan.p)
    rows = []
    for name, g in kernels:
        gl1 = _l1(grid, g)
        conv = _ul(grid, box * g * f_stack, plan.p)
        for m, num, den in zip(members, conv, f_norm):
            rows.append({"M": M, "kernel": name, "member": m.label, "kind": m.kind,
                         "ratio": float(num / (gl1 * den)) if den > EXCLUDE_BELOW else math.nan})
    return rows


def verify_young_ul(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    """``||g * f | L^{p,inf}_ul|| / (||g||_1 ||f | L^{p,inf}_ul||)`` over kernels and ensemble.

    Kernels: discrete delta, ``S(t) delta`` for ``options["kernel_times"]``
    (default ``0.01, 0.1, 1``) at ``thetas[0]``, and a normalized smooth bump.
    """
    plan.require_levels()
    level_rows = _pmap(_young_level, [(plan, M) for M in plan.ladder], jobs)
    rep = RatioReport("young_ul", ("M", "kernel", "member", "kind", "ratio"))
    for rows in level_rows:
        rep.rows.extend(rows)
    per_level = [[r["ratio"] for r in rows if math.isfinite(r["ratio"])] for rows in level_rows]
    rep.families.append(_family("young", plan, per_level))
    delta = [r["ratio"] for r in rep.rows if r["kernel"] == "delta" and math.isfinite(r["ratio"])]
    rep.checks["delta_identity"] = bool(delta) and max(abs(v - 1) for v in delta) <= 1e-10
    heat_ind = [r["ratio"] for r in rep.rows if r["kernel"].startswith("heat") and r["kind"] == "indicator"]
    rep.details["heat_indicator_max"] = max(heat_ind) if heat_ind else math.nan
    rep.checks["heat_indicator_contracts"] = not heat_ind or max(heat_ind) <= 1.1
    return rep


# ---------------------------------------------------------------------------
# semigroup decay in uniformly local Lorentz spaces
# ---------------------------------------------------------------------------


def _lorentz_decay_level(args):
    plan, M = args
    grid = Grid(plan.dim, plan.half_length, M)
    N = plan.dim
    times = _default_times(plan)
    rows = []
    for theta in plan.thetas:
        sym = fractional_symbol(grid, theta)
        for p, q in plan.opt("pairs", ((2.0, 2.0), (2.0, 4.0))):
            members = _members(plan, ("indicator", "homogeneous", "random_bandlimited"), N / p)
            f_stack = np.stack([m.realize(grid).coeffs for m in members])
            den = _ul(grid, f_stack, p)
            e = (N / theta) * (1 / q - 1 / p)
            for t in times:
                num = _ul(grid, np.exp(-t * sym) * f_stack, q)
                for m, a, b in zip(members, num, den):
                    rows.append({"M": M, "theta": theta, "p": p, "q": q, "t": float(t), "member": m.label,
                                 "ratio": float(a / ((1 + t**e) * b)) if b > EXCLUDE_BELOW else math.nan})
    return rows


def _delta_weak_norms(grid: Grid, q: float, theta: float, times) -> np.ndarray:
    d = make_delta(grid).coeffs
    sym = fractional_symbol(grid, theta)
    return _ul(grid, np.stack([np.exp(-t * sym) * d for t in times]), q)


def verify_semigroup_decay_lorentz(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    """``||S(t) f | L^{q,inf}_ul|| / ((1 + t^{(N/theta)(1/q - 1/p)}) ||f | L^{p,inf}_ul||)``.

    ``options["pairs"]`` lists ``(p, q)`` with ``p <= q`` (default ``(2,2), (2,4)``).
    ``options["delta_fits"]`` lists ``(p, q, theta)`` triples for the small-time
    fit of ``||S(t) delta | L^{q,inf}||``; the Dirac mass is an ``L^1``
    object, so its triples use ``p = 1``.  Fit times keep ``t^{1/theta}`` in
    ``[0.1, 0.5]`` so the kernel is resolved and the periodic images are
    negligible.
    """
    plan.require_levels()
    for p, q in plan.opt("pairs", ((2.0, 2.0), (2.0, 4.0))):
        if not 1 < p <= q < INF:
            raise PlanError("pairs need 1 < p <= q < inf")
    level_rows = _pmap(_lorentz_decay_level, [(plan, M) for M in plan.ladder], jobs)
    rep = RatioReport("semigroup_decay_lorentz", ("M", "theta", "p", "q", "t", "member", "ratio"))
    for rows in level_rows:
        rep.rows.extend(rows)
    rep.families.append(_family("lorentz_decay", plan,
                                [[r["ratio"] for r in rows if math.isfinite(r["ratio"])] for rows in level_rows]))
    eq_rows = [[r["ratio"] for r in rows if r["p"] == r["q"] and math.isfinite(r["ratio"])] for rows in level_rows]
    if all(eq_rows):
        rep.families.append(_family("p_equals_q", plan, eq_rows))
    grid = plan.grids()[-1]
    N = plan.dim
    for p, q, theta in plan.opt("delta_fits", ((1.0, 2.0, 2.0), (1.0, 4.0, 1.0), (1.0, 3.0, 1.5))):
        times = np.geomspace(0.1**theta, 0.5**theta, 9)
        norms = _delta_weak_norms(grid, q, theta, times)
        target = (N / theta) * (1 / q - 1 / p)
        fit = loglog_fit(times, norms, f"delta_p{p:g}_q{q:g}_theta{theta:g}", target, 0.1)
        rep.fits.append(fit)
        rep.details[fit.name] = {"times": times, "norms": norms}
    return rep


# ---------------------------------------------------------------------------
# semigroup decay in Besov-Lorentz spaces
# ---------------------------------------------------------------------------


def _besov_decay_level(args):
    plan, M = args
    grid = Grid(plan.dim, plan.half_length, M)
    part = build_partition(grid)
    N, p, r = plan.dim, plan.p, plan.r
    times = _default_times(plan)
    sigma0 = N / p - N
    members = _members(plan, ("delta", "indicator", "homogeneous", "random_bandlimited"), N / p)
    f_stack = np.stack([m.realize(grid).coeffs for m in members])
    rows = []
    for theta in plan.thetas:
        sym = fractional_symbol(grid, theta)
        for s, sigma in plan.opt("pairs", ((sigma0, sigma0), (sigma0 + theta, sigma0))):
            den = _besov(grid, f_stack, sigma, p, r, part=part)
            for t in times:
                num = _besov(grid, np.exp(-t * sym) * f_stack, s, p, r, part=part)
                w = 1 + t ** (-(s - sigma) / theta)
                for m, a, b in zip(members, num, den):
                    rows.append({"M": M, "theta": theta, "s": s, "sigma": sigma, "t": float(t), "member": m.label,
                                 "ratio": float(a / (w * b)) if b > EXCLUDE_BELOW else math.nan})
    return rows


def verify_semigroup_decay_besov(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    """``||S(t) f | B^s_{(p,inf),r}|| / ((1 + t^{-(s - sigma)/theta}) ||f | B^sigma_{(p,inf),r}||)``.

    ``options["pairs"]`` lists ``(s, sigma)`` (default ``sigma = N/p - N``,
    the index that holds the Dirac mass, with ``s = sigma`` and
    ``s = sigma + theta``).  ``options["fits"]`` lists ``(p, gap, theta)``
    triples: the quotient for ``f = delta`` with ``s - sigma = gap`` is fitted
    against ``t`` on the window where the maximizing block lies inside the
    resolved range.  The ``r = 1`` gain is reported as ``gain`` details.
    """
    plan.require_levels()
    level_rows = _pmap(_besov_decay_level, [(plan, M) for M in plan.ladder], jobs)
    rep = RatioReport("semigroup_decay_besov", ("M", "theta", "s", "sigma", "t", "member", "ratio"))
    for rows in level_rows:
        rep.rows.extend(rows)
    rep.families.append(_family("besov_decay", plan,
                                [[r["ratio"] for r in rows if math.isfinite(r["ratio"])] for rows in level_rows]))
    grid = plan.grids()[-1]
    part = build_partition(grid)
    N = plan.dim
    d = make_delta(grid).coeffs
    for p, gap, theta in plan.opt("fits", ((2.0, 2.0, 2.0), (3.0, 1.0, 1.0), (4.0, 1.5, 1.5))):
        sigma = N / p - N
        sym = fractional_symbol(grid, theta)
        # 2^{theta j*} = gap / (theta t): keep j* in [1.5, j_max - 1.5]
        t_hi = gap / (theta * 2.0 ** (1.5 * theta))
        t_lo = gap / (theta * 2.0 ** ((part.j_max - 1.5) * theta))
        times = np.geomspace(t_lo, t_hi, 12)
        den = float(_besov(grid, d, sigma, p, INF, part=part))
        num = _besov(grid, np.stack([np.exp(-t * sym) * d for t in times]), sigma + gap, p, INF, part=part)
        fit = loglog_fit(times, num / den, f"delta_p{p:g}_gap{gap:g}_theta{theta:g}", -gap / theta, 0.1)
        rep.fits.append(fit)
        rep.details[fit.name] = {"times": times, "quotient": num / den}
    # third-index gain: B^s_{(p,inf),1} of S(t) delta with only r = inf control of delta
    theta = plan.thetas[0]
    sym = fractional_symbol(grid, theta)
    sigma = N / plan.p - N
    s = sigma + theta
    band = part.band_limit**theta
    gain = []
    for t in _default_times(plan):
        if t * band < 20:
            continue  # S(t) delta not resolved by the retained blocks
        bn = block_norms(grid, np.exp(-t * sym) * d, plan.p, INF, "ul", part)
        w = 2.0 ** (s * np.arange(part.j_max + 1)) * bn
        total = float(np.sum(w))
        gain.append({"t": float(t), "b_s_1": total, "last_term_share": float(w[-1] / total)})
    rep.details["gain"] = gain
    rep.checks["gain_finite"] = all(math.isfinite(g["b_s_1"]) and g["last_term_share"] < 1e-3 for g in gain)
    return rep


# ---------------------------------------------------------------------------
# forcing recovery
# ---------------------------------------------------------------------------


def _recovery_lhs(grid, coeffs, theta, p, part):
    return _besov(grid, coeffs, -theta, p, INF, part=part)


def _recovery_rhs(grid, coeffs, theta, p, T, n_time):
    sym = fractional_symbol(grid, theta)
    ts = T * np.arange(1, n_time + 1) / n_time
    out = np.zeros(coeffs.shape[0])
    for t in ts:
        out = np.maximum(out, _ul(grid, _duhamel_profile(sym, t) * coeffs, p))
    return out


def _recovery_level(args):
    plan, M = args
    grid = Grid(plan.dim, plan.half_length, M)
    part = build_partition(grid)
    theta, p = plan.thetas[0], plan.p
    members = _members(plan, ("delta", "delta_derivative", "homogeneous", "random_bandlimited", "indicator"),
                       0.9 * plan.dim)
    stack = np.stack([m.realize(grid).coeffs for m in members])
    lhs = _recovery_lhs(grid, stack, theta, p, part)
    rows = []
    for T in plan.T_values:
        rhs = _recovery_rhs(grid, stack, theta, p, T, int(plan.opt("n_time", 64)))
        for m, a, b in zip(members, lhs, rhs):
            excluded = not b > EXCLUDE_BELOW
            rows.append({"M": M, "T": T, "member": m.label, "kind": m.kind, "lhs": float(a), "rhs": float(b),
                         "ratio": math.nan if excluded else float(a / b), "excluded": excluded})
    return rows


def single_mode_recovery_ratio(grid: Grid, xi0: float, theta: float, p: float, T: float,
                               n_time: int = 64) -> tuple:
    """(measured, closed-form) forcing-recovery ratio for ``cos(xi0 x_1)``.

    Both sides are multiples of the same weak norm, so the ratio reduces to
    ``max_j 2^{-theta j} phi_j(xi0) / max_n D(t_n, xi0)``.
    """
    part = build_partition(grid)
    c = single_mode(grid, xi0).coeffs[None]
    measured = float(_recovery_lhs(grid, c, theta, p, part)[0] / _recovery_rhs(grid, c, theta, p, T, n_time)[0])
    k = int(round(xi0 * grid.half_length / math.pi))
    idx = (k,) + (0,) * (grid.dim - 1)
    phis = np.array([ph[idx] for ph in part.phi])
    lhs = np.max(2.0 ** (-theta * np.arange(part.j_max + 1)) * phis)
    a = np.array([grid.xi_abs[idx] ** theta])
    ts = T * np.arange(1, n_time + 1) / n_time
    rhs = max(float(_duhamel_profile(a, t)[0]) for t in ts)
    return measured, float(lhs / rhs)


def verify_forcing_recovery(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    """``||mu | B^{-theta}_{(p,inf),inf}|| / sup_{t <= T} ||I[mu](t) | L^{p,inf}_ul||``.

    The supremum runs over ``options["n_time"]`` (default 64) equispaced
    times in ``]0, T]``.  The empirical constant ``C(T)`` (ensemble maximum on
    the finest grid) is fitted against ``T``; its exponent should not fall
    below ``-1.3``.
    """
    plan.require_levels()
    level_rows = _pmap(_recovery_level, [(plan, M) for M in plan.ladder], jobs)
    rep = RatioReport("forcing_recovery", ("M", "T", "member", "kind", "lhs", "rhs", "ratio", "excluded"))
    for rows in level_rows:
        rep.rows.extend(rows)
    rep.flags.extend(sorted({f"excluded:{r['member']}" for r in rep.rows if r["excluded"]}))
    rep.families.append(_family("recovery", plan,
                                [[r["ratio"] for r in rows if not r["excluded"]] for rows in level_rows]))
    finest = level_rows[-1]
    Ts = sorted(plan.T_values)
    CT = [max(r["ratio"] for r in finest if r["T"] == T and not r["excluded"]) for T in Ts]
    rep.details["C_of_T"] = dict(zip([str(T) for T in Ts], CT))
    if len(Ts) >= 3:
        rep.fits.append(loglog_fit(Ts, CT, "C_T_exponent", -1.3, 0.0, kind="lower"))
    grid = plan.grids()[-1]
    xi0 = float(plan.opt("oracle_xi", 5.0))
    meas, exact = single_mode_recovery_ratio(grid, xi0, plan.thetas[0], plan.p, min(Ts),
                                             int(plan.opt("n_time", 64)))
    rep.details["single_mode"] = {"measured": meas, "closed_form": exact}
    rep.checks["single_mode_oracle"] = abs(meas - exact) <= 1e-10 * abs(exact)
    return rep


# ---------------------------------------------------------------------------
# kernel decay of F^{-1}[Phi_(0) C_T]
# ---------------------------------------------------------------------------


def _kernel_samples(dim: int, theta: float, T: float, L: float, spacing: float) -> tuple:
    """Continuum-normalized samples of ``F^{-1}[zeta(|xi|/2) C_T]`` on ``[-L, L)^N``."""
    M = 2 ** int(math.ceil(math.log2(2 * L / spacing)))
    grid = Grid(dim, L, M)
    m = zeta(grid.xi_abs / 2) * c_T_multiplier(grid, T, theta)
    K = batch_to_physical(grid, (m / grid.box_volume).astype(complex))
    return grid, K


def kernel_tail_fit(theta: float, T: float, half_length: float = 16384.0, dim: int = 1,
                    pad: int = 8, spacing: float = 0.25, floor: float = 1e-12) -> dict:
    """Tail exponent and ``L^1`` norm of ``F^{-1}[Phi_(0) C_T]``.

    The kernel is synthesized on a box ``pad`` times larger than the fit box so
    that periodic images are negligible.  Along the first axis the decreasing
    envelope ``E(x) = sup_{y >= x} |K(y)|`` is fitted in log-log over the far
    tail ``[L/16, L/2]``; near the origin the kernel is dominated by the
    oscillation produced by the compactly supported cutoff, which decays faster
    than any power but only beyond a few hundred units.  Once ``E`` drops below
    ``floor`` times its maximum, the kernel has hit round-off and the decay is
    flagged super-polynomial.
    """
    if half_length / 16 < 32:
        raise PlanError("tail window too short: need half_length >= 512")
    grid, K = _kernel_samples(dim, theta, T, pad * half_length, spacing)
    l1 = float(np.sum(np.abs(K)) * grid.cell_volume)
    _, K2 = _kernel_samples(dim, theta, T, pad * half_length, spacing / 2)
    l1_fine = float(np.sum(np.abs(K2)) * grid.cell_volume / 2**dim)
    mid = grid.points_per_dim // 2
    line = K[(mid,) * (dim - 1) + (slice(None),)] if dim > 1 else K
    x = grid.x1d
    pos = x > 0
    xs, ks = x[pos], np.abs(line[pos])
    env = np.maximum.accumulate(ks[::-1])[::-1]
    pts = np.geomspace(half_length / 16, half_length / 2, 24)
    e = np.interp(pts, xs, env)
    target = -(dim + min(1.0, theta))
    peak = float(env.max())
    above = e > floor * peak
    fit = loglog_fit(pts[above], e[above], f"theta{theta:g}_T{T:g}", target, 0.1, kind="upper")
    superpoly = bool((~above).any())
    if superpoly:
        # decay before round-off, over the whole window; informative only, the flag is the result
        wide = np.geomspace(4, half_length / 2, 48)
        ew = np.interp(wide, xs, env)
        ok = ew > floor * peak
        fit = loglog_fit(wide[ok], ew[ok], fit.name, -(dim + 1) - 2, 0.0, kind="upper")
        fit.flags.append("super-polynomial")
    return {"theta": theta, "T": T, "fit": fit, "superpoly": superpoly, "l1": l1, "l1_refined": l1_fine,
            "l1_change": abs(l1_fine - l1) / l1, "envelope_x": pts, "envelope": e,
            "samples_x": xs, "samples": line[pos]}


def _kernel_cell(args):
    theta, T, L, dim, pad, spacing = args
    out = kernel_tail_fit(theta, T, L, dim, pad, spacing)
    out.pop("samples_x")
    out.pop("samples")
    return out


def verify_kernel_decay(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    """Tail slopes and ``L^1`` norms of ``F^{-1}[Phi_(0) C_T]`` over ``thetas x T_values``.

    ``options``: ``tail_half_length`` (default 16384), ``pad`` (8),
    ``spacing`` (0.25).  The ``L^1`` norm is recomputed at half the spacing and
    must agree within 5%.
    """
    L = float(plan.opt("tail_half_length", 16384.0))
    pad = int(plan.opt("pad", 8))
    spacing = float(plan.opt("spacing", 0.25))
    if L / 16 < 32:
        raise PlanError("tail window too short: need tail_half_length >= 512")
    cells = [(th, T, L, plan.dim, pad, spacing) for th in plan.thetas for T in plan.T_values]
    res = _pmap(_kernel_cell, cells, jobs)
    rep = RatioReport("kernel_decay", ("theta", "T", "slope", "fit_residual", "target", "superpoly",
                                       "l1", "l1_refined", "l1_change", "verdict"))
    for c in res:
        f = c["fit"]
        if c["superpoly"]:
            rep.details[f"prefloor_fit_{f.name}"] = f.as_dict()
        else:
            rep.fits.append(f)
        rep.rows.append({"theta": c["theta"], "T": c["T"], "slope": f.slope, "fit_residual": f.residual,
                         "target": f.target, "superpoly": c["superpoly"], "l1": c["l1"],
                         "l1_refined": c["l1_refined"], "l1_change": c["l1_change"], "verdict": f.verdict})
        key = f"theta{c['theta']:g}_T{c['T']:g}"
        rep.checks[f"l1_stable_{key}"] = math.isfinite(c["l1"]) and c["l1_change"] <= 0.05
        if c["theta"] == 2:
            rep.checks[f"superpoly_{key}"] = c["superpoly"]
        elif c["superpoly"]:
            rep.flags.append(f"unexpected-superpoly:{key}")
    return rep


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


def _plateau_mode(grid: Grid, j: int) -> SpectralField:
    # |xi| near 2^j sits on the plateau of phi_j, so the field is a single block
    return single_mode(grid, 2.0**j)


def _embedding_level(args):
    plan, M = args
    grid = Grid(plan.dim, plan.half_length, M)
    part = build_partition(grid)
    p = plan.p
    members = _members(plan, ("random_bandlimited", "indicator", "homogeneous"), plan.dim / p)
    stack = np.stack([m.realize(grid).coeffs for m in members])
    ul = _ul(grid, stack, p)
    b1 = _besov(grid, stack, 0.0, p, 1.0, part=part)
    binf = _besov(grid, stack, 0.0, p, INF, part=part)
    rows = []
    for m, a, b, c in zip(members, ul, b1, binf):
        rows.append({"M": M, "member": m.label, "kind": m.kind, "ul": float(a), "b0_1": float(b),
                     "b0_inf": float(c), "lower_ratio": float(a / b), "upper_ratio": float(c / a)})
    return rows


def verify_embedding_chain(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    """``B^0_{(p,inf),1} -> L^{p,inf}_ul -> B^0_{(p,inf),inf}`` as two ratio families.

    ``lower_ratio = ||f|L^{p,inf}_ul|| / ||f|B^0_{(p,inf),1}||`` and
    ``upper_ratio = ||f|B^0_{(p,inf),inf}|| / ||f|L^{p,inf}_ul||``.
    """
    plan.require_levels()
    level_rows = _pmap(_embedding_level, [(plan, M) for M in plan.ladder], jobs)
    rep = RatioReport("embedding_chain", ("M", "member", "kind", "ul", "b0_1", "b0_inf",
                                          "lower_ratio", "upper_ratio"))
    for rows in level_rows:
        rep.rows.extend(rows)
    for name in ("lower_ratio", "upper_ratio"):
        rep.families.append(_family(name, plan, [[r[name] for r in rows] for rows in level_rows]))
    grid = plan.grids()[-1]
    part = build_partition(grid)
    c = _plateau_mode(grid, 3).coeffs[None]
    ul = float(_ul(grid, c, plan.p)[0])
    lo = ul / float(_besov(grid, c, 0.0, plan.p, 1.0, part=part)[0])
    hi = float(_besov(grid, c, 0.0, plan.p, INF, part=part)[0]) / ul
    rep.details["single_block"] = {"lower_ratio": lo, "upper_ratio": hi}
    rep.checks["single_block_unit"] = abs(lo - 1) <= 1e-3 and abs(hi - 1) <= 1e-3
    ind = make_indicator(grid).coeffs[None]
    rep.details["indicator_chain"] = {
        "b0_1": float(_besov(grid, ind, 0.0, plan.p, 1.0, part=part)[0]),
        "ul": float(_ul(grid, ind, plan.p)[0]),
        "b0_inf": float(_besov(grid, ind, 0.0, plan.p, INF, part=part)[0]),
    }
    return rep


def _sobolev_level(args):
    plan, M = args
    grid = Grid(plan.dim, plan.half_length, M)
    part = build_partition(grid)
    N, p, s, r = plan.dim, plan.p, plan.s, plan.r
    shift = float(plan.opt("shift", 0.5))
    members = _members(plan, ("random_bandlimited", "indicator", "homogeneous"), N / p)
    stack = np.stack([m.realize(grid).coeffs for m in members])
    base = _besov(grid, stack, s, p, r, part=part)
    part1 = _besov(grid, stack, s - N / p, INF, r, base="lp", part=part)
    part2 = _besov(grid, stack, s - N * (1 - shift) / p, p / shift, r, part=part)
    rows = []
    for m, b, a1, a2 in zip(members, base, part1, part2):
        trivial = not b > EXCLUDE_BELOW
        rows.append({"M": M, "member": m.label, "kind": m.kind, "base": float(b),
                     "part1_ratio": math.nan if trivial else float(a1 / b),
                     "part2_ratio": math.nan if trivial else float(a2 / b), "trivial": trivial})
    # Dirac chain L^1 -> B^0_{1,inf} -> B^{N/p0 - N}_{p0,inf} -> B^{N/p0 - N}_{(p0,inf),inf}
    p0 = float(plan.opt("p0", 1.5))
    d = make_delta(grid).coeffs[None]
    chain = {
        "M": M,
        "l1": _l1(grid, d[0]),
        "b0_1_inf": float(_besov(grid, d, 0.0, 1.0, INF, base="lp", part=part)[0]),
        "b_p0_inf": float(_besov(grid, d, N / p0 - N, p0, INF, base="lp", part=part)[0]),
        "b_p0inf_inf": float(_besov(grid, d, N / p0 - N, p0, INF, part=part)[0]),
    }
    return rows, chain


def verify_sobolev_embedding(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    """Ratios for ``B^s_{(p,inf),r} -> B^{s-N/p}_{inf,r}`` and the ``p/shift`` index shift.

    ``part2_ratio`` uses ``B^{s - N(1 - shift)/p}_{(p/shift,inf),r}`` with
    ``options["shift"]`` in ``]0, 1[`` (default 0.5).  The Dirac chain through
    ``options["p0"]`` (default 1.5) is recorded per level.
    """
    plan.require_levels()
    shift = float(plan.opt("shift", 0.5))
    if not 0 < shift < 1:
        raise PlanError("shift must lie in ]0, 1[")
    out = _pmap(_sobolev_level, [(plan, M) for M in plan.ladder], jobs)
    rep = RatioReport("sobolev_embedding", ("M", "member", "kind", "base", "part1_ratio", "part2_ratio", "trivial"))
    for rows, _ in out:
        rep.rows.extend(rows)
    for name in ("part1_ratio", "part2_ratio"):
        rep.families.append(_family(name, plan, [[r[name] for r in rows if not r["trivial"]] for rows, _ in out]))
    rep.flags.extend(sorted({f"trivial:{r['member']}" for r in rep.rows if r["trivial"]}))
    chains = [c for _, c in out]
    rep.details["delta_chain"] = chains
    keys = ("l1", "b0_1_inf", "b_p0_inf", "b_p0inf_inf")
    chain_ratios = [[c[b] / c[a] for a, b in zip(keys, keys[1:])] for c in chains]
    rep.families.append(RatioFamily("delta_chain", plan.ladder, [max(v) for v in chain_ratios], plan.band))
    grid = plan.grids()[-1]
    f = _plateau_mode(grid, 3)
    part = build_partition(grid)
    b = float(_besov(grid, f.coeffs[None], plan.s, plan.p, plan.r, part=part)[0])
    a = float(_besov(grid, f.coeffs[None], plan.s - plan.dim / plan.p, INF, plan.r, base="lp", part=part)[0])
    rep.details["single_mode"] = {"part1_ratio": a / b, "bernstein": bernstein_check(f, 3, plan.p, part)}
    rep.checks["single_mode_bernstein"] = abs(a / b - rep.details["single_mode"]["bernstein"]) <= 1e-12 * a / b
    return rep


# ---------------------------------------------------------------------------
# solvability sweep
# ---------------------------------------------------------------------------


def _remark_thresholds(N: int, theta: float) -> dict:
    d = N + 1 - theta
    return {"derivative_admissible_below": N / d if d > 0 else INF,
            "serrin": N / (N - theta) if N > theta else INF}


@dataclass(frozen=True)
class _SweepCell:
    theta: float
    gamma: float
    kind: str
    amplitude: float
    p: float
    M: int
    L: float
    T: float
    n_time: int
    max_iters: int
    dim: int = 1


def _solve_cell(cell: _SweepCell) -> dict:
    grid = Grid(cell.dim, cell.L, cell.M)
    cfg = SolverConfig(ModelParams(cell.theta, cell.gamma, cell.dim), cell.p, T=cell.T, n_time=cell.n_time,
                       max_iters=cell.max_iters, tol=1e-10, override=True)
    member = EnsembleMember("cell", cell.kind, amplitude=cell.amplitude)
    mu = member.realize(grid) if cell.amplitude > 0 else SpectralField.zeros(grid)
    try:
        _, rep = picard_solve(mu, cfg)
        verdict = "converged" if rep.converged else rep.verdict
        ratio = rep.contraction_ratios[-1] if rep.contraction_ratios else 0.0
        its = rep.iterations
    except Exception as exc:  # one bad cell never stops the sweep
        log.warning("sweep cell %s failed: %s", cell, exc)
        verdict, ratio, its = f"error:{type(exc).__name__}", math.nan, 0
    return {"theta": cell.theta, "gamma": cell.gamma, "kind": cell.kind, "amplitude": cell.amplitude,
            "p": cell.p, "verdict": verdict, "last_ratio": float(ratio), "iterations": its}


def _sweep_group(args) -> tuple:
    base, amplitudes, bisect = args
    rows = [_solve_cell(_replace(base, amplitude=a)) for a in amplitudes]
    ok = [a for a, r in zip(amplitudes, rows) if r["verdict"] == "converged" and a > 0]
    bad = [a for a, r in zip(amplitudes, rows) if r["verdict"] != "converged"]
    lo = max(ok) if ok else None
    above = [a for a in bad if lo is None or a > lo]
    hi = min(above) if above else None
    if lo is not None and hi is not None:
        for _ in range(bisect):
            mid = math.sqrt(lo * hi)
            r = _solve_cell(_replace(base, amplitude=mid))
            rows.append(r)
            if r["verdict"] == "converged":
                lo = mid
            else:
                hi = mid
    threshold = math.sqrt(lo * hi) if lo is not None and hi is not None else (INF if hi is None else 0.0)
    return rows, {"theta": base.theta, "gamma": base.gamma, "kind": base.kind, "p": base.p,
                  "largest_converged": lo, "smallest_failed": hi, "threshold": threshold}


def _replace(cell, **kw):
    d = asdict(cell)
    d.update(kw)
    return _SweepCell(**d)


def solvability_sweep(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    """Verdicts over ``(theta, gamma, kind, amplitude)`` and bisected thresholds.

    ``options``: ``cells`` (list of ``[theta, gamma, kind]``; default the
    delta column at ``theta = 2``, ``gamma in gammas`` plus the derivative cell
    ``[1.8, 1.2, "delta_derivative"]``), ``amplitudes`` (ladder including 0),
    ``bisect`` steps (6), ``M`` (1024), ``n_time`` (128), ``T`` (0.5),
    ``max_iters`` (60).  ``p`` defaults to ``gamma + 1`` raised to
    ``N (gamma - 1) / theta`` when needed.
    """
    N = plan.dim
    default_cells = [[2.0, g, "delta"] for g in plan.gammas] + [[1.8, 1.2, "delta_derivative"]]
    cells = plan.opt("cells", default_cells)
    amps = tuple(float(a) for a in plan.opt("amplitudes", (0.0, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7)))
    bisect = int(plan.opt("bisect", 6))
    M = int(plan.opt("M", 1024))
    groups = []
    for theta, gamma, kind in cells:
        p = float(plan.opt("p", max(gamma + 1, N * (gamma - 1) / theta)))
        base = _SweepCell(float(theta), float(gamma), str(kind), 0.0, p, M, plan.half_length,
                          float(plan.opt("T", 0.5)), int(plan.opt("n_time", 128)),
                          int(plan.opt("max_iters", 60)), N)
        groups.append((base, amps, bisect))
    out = _pmap(_sweep_group, groups, jobs)
    rep = RatioReport("solvability_sweep", ("theta", "gamma", "kind", "amplitude", "p", "verdict",
                                            "last_ratio", "iterations"))
    thresholds = []
    for rows, th in out:
        rep.rows.extend(rows)
        th["remark_thresholds"] = _remark_thresholds(N, th["theta"])
        thresholds.append(th)
    rep.details["thresholds"] = thresholds
    zero = [r for r in rep.rows if r["amplitude"] == 0]
    rep.checks["zero_amplitude_converged"] = all(r["verdict"] == "converged" for r in zero)
    delta2 = sorted((t["gamma"], t["threshold"]) for t in thresholds if t["kind"] == "delta" and t["theta"] == 2)
    if len(delta2) >= 2:
        vals = [v for _, v in delta2]
        rep.details["delta_threshold_vs_gamma"] = delta2
        rep.checks["delta_threshold_nonincreasing"] = all(0 < b <= a for a, b in zip(vals, vals[1:]))
    for t in thresholds:
        if t["kind"] == "delta_derivative":
            small = [r for r in rep.rows if r["kind"] == "delta_derivative" and r["theta"] == t["theta"]
                     and r["gamma"] == t["gamma"] and r["amplitude"] > 0]
            small.sort(key=lambda r: r["amplitude"])
            key = f"derivative_small_converges_theta{t['theta']:g}_gamma{t['gamma']:g}"
            rep.checks[key] = bool(small) and small[0]["verdict"] == "converged"
            if small:
                rep.details[key.replace("small_converges", "large_verdict")] = small[-1]["verdict"]
                rep.checks[key.replace("small_converges", "large_fails")] = small[-1]["verdict"] != "converged"
    return rep


# ---------------------------------------------------------------------------
# necessity: recover mu from a converged solution
# ---------------------------------------------------------------------------


def recover_forcing(u, config: SolverConfig, gate: float = 1e-6) -> dict:
    """Rebuild ``I[mu] = u - J[u]`` and divide by the Duhamel symbol at ``T``.

    The reconstruction is trusted only when every slice of ``u - J[u]`` equals
    ``D(t_n) mu_rec`` up to ``gate`` (relative, in ``L^{p,inf}_ul``).
    """
    g = u.grid
    rec = u - nonlinear_part_J(u, config)
    sym = fractional_symbol(g, config.model.theta)
    DT = _duhamel_profile(sym, config.T)
    mu_hat = rec.coeffs[-1] / DT
    model = np.stack([_duhamel_profile(sym, t) * mu_hat for t in config.times[1:]])
    defect = float(np.max(_ul(g, rec.coeffs[1:] - model, config.p)))
    scale = float(np.max(_ul(g, rec.coeffs[1:], config.p)))
    consistent = scale > 0 and defect <= gate * scale
    return {"mu": SpectralField(g, mu_hat), "defect": defect, "scale": scale, "consistent": bool(consistent),
            "rhs": scale}


def verify_necessity(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    """Solve, rebuild ``mu`` from ``u - J[u]`` and compare its ``B^{-theta}_{(p,inf),inf}`` norm.

    ``options``: ``M`` (default first ladder level), ``n_time`` (128), ``T``
    (0.5), ``gate`` (1e-6), ``amplitude_decades`` (``[-3, -2]``).  A
    corrupted copy of the first converged solution (one slice zeroed) must
    trip the consistency gate.
    """
    M = int(plan.opt("M", plan.ladder[0]))
    grid = Grid(plan.dim, plan.half_length, M)
    part = build_partition(grid)
    theta, gamma = plan.thetas[0], plan.gammas[0]
    cfg = SolverConfig(ModelParams(theta, gamma, plan.dim), plan.p, T=float(plan.opt("T", 0.5)),
                       n_time=int(plan.opt("n_time", 128)), tol=1e-12, max_iters=80)
    gate = float(plan.opt("gate", 1e-6))
    members = _members(plan, ("single_mode", "delta", "homogeneous", "random_bandlimited"), 0.9 * plan.dim,
                       tuple(plan.opt("amplitude_decades", (-3.0, -2.0))))
    rep = RatioReport("necessity", ("member", "kind", "converged", "consistent", "direct", "recovered",
                                    "rel_error", "ratio"))
    first = None
    for m in members:
        mu = m.realize(grid)
        u, sr = picard_solve(mu, cfg)
        if not sr.converged:
            rep.flags.append(f"skipped:{m.label}")
            rep.rows.append({"member": m.label, "kind": m.kind, "converged": False, "consistent": False,
                             "direct": math.nan, "recovered": math.nan, "rel_error": math.nan, "ratio": math.nan})
            continue
        first = first or u
        rec = recover_forcing(u, cfg, gate)
        direct = float(_recovery_lhs(grid, mu.coeffs[None], theta, plan.p, part)[0])
        if rec["consistent"]:
            got = float(_recovery_lhs(grid, rec["mu"].coeffs[None], theta, plan.p, part)[0])
            err = abs(got - direct) / direct
            ratio = got / rec["rhs"]
        else:
            rep.flags.append(f"inconsistent:{m.label}")
            got = err = ratio = math.nan
        rep.rows.append({"member": m.label, "kind": m.kind, "converged": True, "consistent": rec["consistent"],
                         "direct": direct, "recovered": got, "rel_error": err, "ratio": ratio})
    ok = [r for r in rep.rows if r["converged"]]
    rep.checks["any_converged"] = bool(ok)
    rep.checks["recovered_within_10pct"] = bool(ok) and all(r["consistent"] and r["rel_error"] <= 0.1 for r in ok)
    if first is not None:
        bad = first.with_slice(cfg.n_time // 2, np.zeros(grid.shape))
        rep.checks["corruption_flagged"] = not recover_forcing(bad, cfg, gate)["consistent"]
    return rep


# ---------------------------------------------------------------------------
# orchestration and output
# ---------------------------------------------------------------------------


EXPERIMENTS = {
    "young_ul": verify_young_ul,
    "semigroup_decay_lorentz": verify_semigroup_decay_lorentz,
    "semigroup_decay_besov": verify_semigroup_decay_besov,
    "forcing_recovery": verify_forcing_recovery,
    "kernel_decay": verify_kernel_decay,
    "embedding_chain": verify_embedding_chain,
    "sobolev_embedding": verify_sobolev_embedding,
    "solvability_sweep": solvability_sweep,
    "necessity": verify_necessity,
}


def run_plan(plan: ExperimentPlan, jobs: int = 1) -> RatioReport:
    return EXPERIMENTS[plan.experiment](plan, jobs=jobs)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _column_type(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "boolean"
    if isinstance(v, (int, np.integer)):
        return "integer"
    if isinstance(v, (float, np.floating)):
        return "number"
    return "string"


def report_csv(report: RatioReport, plan: ExperimentPlan) -> str:
    """CSV text with a provenance header: package version, experiment and the resolved plan."""
    buf = io.StringIO()
    buf.write(f"# fracheat {__version__}\n")
    buf.write(f"# experiment: {report.experiment}\n")
    buf.write(f"# plan: {json.dumps(plan.to_dict(), sort_keys=True)}\n")
    buf.write(f"# schema: {report.experiment}.schema.json\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns)
    for row in report.rows:
        w.writerow([_cell(row[c]) for c in report.columns])
    return buf.getvalue()


def report_schema(report: RatioReport, plan: ExperimentPlan) -> dict:
    first = report.rows[0] if report.rows else {}
    return {
        "experiment": report.experiment,
        "plan": plan.to_dict(),
        "columns": [{"name": c, "type": _column_type(first.get(c, ""))} for c in report.columns],
        "comment_prefix": "#",
    }


def write_report(report: RatioReport, plan: ExperimentPlan, outdir) -> dict:
    """Write ``<experiment>.csv``, ``.schema.json`` and ``.summary.json``; return their paths."""
    os.makedirs(outdir, exist_ok=True)
    base = os.path.join(outdir, report.experiment)
    paths = {"csv": base + ".csv", "schema": base + ".schema.json", "summary": base + ".summary.json"}
    with open(paths["csv"], "w", newline="") as fh:
        fh.write(report_csv(report, plan))
    with open(paths["schema"], "w") as fh:
        json.dump(_jsonable(report_schema(report, plan)), fh, indent=2, sort_keys=True)
        fh.write("\n")
    summary = report.summary()
    summary["plan"] = plan.to_dict()
    summary["version"] = __version__
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
