"""Command-line entry point: ``fracheat {solve,norms,verify,kernel,sweep}``.

Configs and plans are TOML files validated against the JSON schemas shipped in
``fracheat/schemas`` before any computation.  Exit status: 0 on success or
pass, 1 when a solve does not converge or a verification fails, 2 on usage,
config or output errors.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import jsonschema
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .besov import besov_lorentz_profile, build_partition
from .forcing import ForcingSpec, make_forcing
from .harness import ExperimentPlan, PlanError, kernel_tail_fit, run_plan, write_report
from .lorentz import INF, NormSpec, lorentz_norm, uniformly_local_lorentz_norm
from .solver import (
    SolverConfig,
    initial_data_evolve,
    picard_solve,
    slice_norms,
    weak_star_initial_decay,
)
from .spectral import Grid, ModelParams, SpectralField, write_field

log = logging.getLogger("fracheat")

COMMANDS = ("solve", "norms", "verify", "kernel", "sweep")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "FRACHEAT_SEED"


class UsageError(Exception):
    """Bad command line, config or output location; maps to exit status 2."""


@dataclass
class RunConfig:
    command: str
    config_path: Optional[str] = None
    plan_paths: list = field(default_factory=list)
    overrides: list = field(default_factory=list)
    out: str = "fracheat-out"
    verbosity: int = 0
    jobs: int = 1
    kernel_args: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------


def load_schema(name: str) -> dict:
    with resources.files("fracheat").joinpath("schemas", f"{name}.schema.json").open() as fh:
        return json.load(fh)


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as TOML literals when possible."""
    out = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(p)]
                except (ValueError, IndexError):
                    raise UsageError(f"override {key!r}: bad list index {p!r}") from None
                continue
            node = node.setdefault(p, {})
            if not isinstance(node, (dict, list)):
                raise UsageError(f"override {key!r} descends into a non-table value")
        last = parts[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = _parse_value(text.strip())
            except (ValueError, IndexError):
                raise UsageError(f"override {key!r}: bad list index {last!r}") from None
        else:
            node[last] = _parse_value(text.strip())
    return out


def load_document(path: str, schema: str, overrides=()) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"malformed TOML in {path}: {exc}") from None
    data = apply_overrides(data, overrides)
    try:
        jsonschema.validate(data, load_schema(schema))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"{path}: {where}: {exc.message}") from None
    return data


def _ext(v):
    if isinstance(v, str):
        return INF
    return float(v)


def _seed_override() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def build_grid(doc: dict) -> Grid:
    g = doc["grid"]
    try:
        return Grid(int(g.get("dim", 1)), float(g.get("half_length", 16.0)), int(g["points"]))
    except ValueError as exc:
        raise UsageError(f"grid: {exc}") from None


def build_forcing(doc: dict, grid: Grid) -> SpectralField:
    seed = _seed_override()
    total = SpectralField.zeros(grid)
    for i, st in enumerate(doc.get("forcing", [{"kind": "zero"}])):
        kw = dict(st)
        if "centers" in kw:
            kw["centers"] = tuple(tuple(c) for c in kw["centers"])
        if "band" in kw:
            kw["band"] = tuple(kw["band"])
        if seed is not None:
            kw["seed"] = seed + i
        try:
            total = total + make_forcing(grid, ForcingSpec(**kw))
        except ValueError as exc:
            raise UsageError(f"forcing[{i}]: {exc}") from None
    return total


def build_solver_config(doc: dict) -> SolverConfig:
    if "solver" not in doc:
        raise UsageError("config has no [solver] table")
    m = doc["model"]
    dim = int(doc["grid"].get("dim", 1))
    try:
        model = ModelParams(float(m["theta"]), float(m["gamma"]), dim)
        return SolverConfig(model=model, **doc["solver"])
    except (ValueError, TypeError) as exc:
        raise UsageError(f"solver: {exc}") from None


def load_plan(path: str, overrides=()) -> ExperimentPlan:
    data = load_document(path, "plan", overrides)
    seed = _seed_override()
    if seed is not None:
        data["seed"] = seed
    try:
        return ExperimentPlan.from_mapping(data)
    except (PlanError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def prepare_outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".fracheat-write-test")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise UsageError(f"output directory {path!r} is not writable: {exc}") from None
    return path


def _provenance(command: str, resolved) -> str:
    return (f"# fracheat {__version__}\n# command: {command}\n"
            f"# config: {json.dumps(_plain(resolved), sort_keys=True)}\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_csv(path: str, command: str, resolved, header, rows) -> None:
    buf = io.StringIO()
    buf.write(_provenance(command, resolved))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_solve(rc: RunConfig) -> int:
    doc = load_document(rc.config_path, "config", rc.overrides)
    grid = build_grid(doc)
    cfg = build_solver_config(doc)
    mu = build_forcing(doc, grid)
    out = prepare_outdir(rc.out)
    adm = doc.get("admissibility")
    if cfg.mode == "forcing":
        u, report = picard_solve(mu, cfg, adm)
    else:
        u, report = initial_data_evolve(mu, cfg, adm)
    extra = {"resolved_config": doc, "version": __version__}
    ws = doc.get("output", {}).get("weak_star_s")
    if ws is not None and report.converged:
        fit = weak_star_initial_decay(u, cfg, float(ws))
        extra["weak_star"] = {"exponent": fit.exponent, "fit_residual": fit.fit_residual,
                              "bound_exponent": fit.bound_exponent, "trivial": fit.trivial}
    snaps = doc.get("output", {}).get("snapshots", [cfg.n_time // 4, cfg.n_time // 2, cfg.n_time])
    files = []
    for n in snaps:
        if not 0 <= n <= cfg.n_time:
            raise UsageError(f"snapshot index {n} outside [0, {cfg.n_time}]")
        path = os.path.join(out, f"u_{n:05d}.frht")
        write_field(path, u.slice(n))
        files.append({"slice": n, "t": float(u.times[n]), "path": os.path.basename(path)})
    write_field(os.path.join(out, "mu.frht"), mu)
    extra["snapshots"] = files
    with open(os.path.join(out, "solve_report.json"), "w") as fh:
        fh.write(report.to_json(cfg, **_plain(extra)))
        fh.write("\n")
    norms = slice_norms(u, cfg.p, cfg.center_spacing)
    _write_csv(os.path.join(out, "slice_norms.csv"), "solve", doc, ("n", "t", "ul_weak_norm"),
               [(n, float(t), float(v)) for n, (t, v) in enumerate(zip(u.times, norms))])
    log.info("verdict %s after %d iterations, X_T norm %.6g, residual %.3g",
             report.verdict, report.iterations, report.xt_norm, report.final_residual)
    print(f"{report.verdict}: iterations={report.iterations} xt_norm={report.xt_norm:.6g} "
          f"residual={report.final_residual:.3g}")
    return EXIT_OK if report.converged else EXIT_FAIL


def cmd_norms(rc: RunConfig) -> int:
    doc = load_document(rc.config_path, "config", rc.overrides)
    if "norms" not in doc:
        raise UsageError("config has no [norms] table")
    grid = build_grid(doc)
    mu = build_forcing(doc, grid)
    n = doc["norms"]
    try:
        spec = NormSpec(float(n["p"]), _ext(n.get("q", "inf")), float(n.get("s", 0.0)), _ext(n.get("r", "inf")))
    except ValueError as exc:
        raise UsageError(f"norms: {exc}") from None
    out = prepare_outdir(rc.out)
    phys = mu.to_physical()
    prof = besov_lorentz_profile(mu, spec, build_partition(grid))
    res = {
        "resolved_config": doc,
        "version": __version__,
        "lorentz": lorentz_norm(phys, spec),
        "lorentz_ul": uniformly_local_lorentz_norm(phys, spec),
        "besov_lorentz": prof.value,
        "truncated": prof.truncated,
        "j_max": prof.j_max,
    }
    _write_json(os.path.join(out, "norms.json"), res)
    _write_csv(os.path.join(out, "blocks.csv"), "norms", doc, ("j", "block_ul_norm", "weighted"),
               [(j, float(b), float(w)) for j, (b, w) in enumerate(zip(prof.block_norms, prof.weighted))])
    print(f"lorentz={res['lorentz']:.6g} ul={res['lorentz_ul']:.6g} besov_lorentz={res['besov_lorentz']:.6g}")
    return EXIT_OK


def _run_plans(rc: RunConfig, default_experiment: Optional[str] = None) -> int:
    if not rc.plan_paths:
        raise UsageError("no --plan given")
    plans = [load_plan(p, rc.overrides) for p in rc.plan_paths]
    if default_experiment:
        for p, path in zip(plans, rc.plan_paths):
            if p.experiment != default_experiment:
                raise UsageError(f"{path}: sweep needs experiment = {default_experiment!r}")
    status = EXIT_OK
    for plan in plans:
        out = prepare_outdir(plan.output or rc.out)
        try:
            report = run_plan(plan, jobs=rc.jobs)
        except PlanError as exc:
            raise UsageError(f"{plan.experiment}: {exc}") from None
        write_report(report, plan, out)
        print(f"{plan.experiment}: {report.status.upper()}")
        if report.status != "pass":
            status = EXIT_FAIL
    return status


def cmd_verify(rc: RunConfig) -> int:
    return _run_plans(rc)


def cmd_sweep(rc: RunConfig) -> int:
    return _run_plans(rc, "solvability_sweep")


def cmd_kernel(rc: RunConfig) -> int:
    k = rc.kernel_args
    out = prepare_outdir(rc.out)
    try:
        res = kernel_tail_fit(k["theta"], k["T"], k["half_length"], k["dim"], k["pad"], k["spacing"])
    except (PlanError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    tag = f"theta{k['theta']:g}_T{k['T']:g}"
    xs, ks = res["samples_x"], res["samples"]
    keep = xs <= k["half_length"] / 2
    stride = max(1, int(keep.sum()) // k["max_rows"])
    rows = [(float(x), float(v)) for x, v in zip(xs[keep][::stride], ks[keep][::stride])]
    _write_csv(os.path.join(out, f"kernel_{tag}.csv"), "kernel", k, ("x", "K"), rows)
    _write_csv(os.path.join(out, f"kernel_envelope_{tag}.csv"), "kernel", k, ("x", "envelope"),
               [(float(x), float(e)) for x, e in zip(res["envelope_x"], res["envelope"])])
    fit = res["fit"]
    summary = {"config": k, "version": __version__, "fit": fit.as_dict(), "superpoly": res["superpoly"],
               "l1": res["l1"], "l1_refined": res["l1_refined"], "l1_change": res["l1_change"]}
    _write_json(os.path.join(out, f"kernel_{tag}.json"), summary)
    flag = " super-polynomial" if res["superpoly"] else ""
    print(f"theta={k['theta']:g} T={k['T']:g}: tail slope {fit.slope:.4f} (residual {fit.residual:.3g}, "
          f"target {fit.target:g}){flag}; L1 {res['l1']:.6g}")
    return EXIT_OK


HANDLERS = {"solve": cmd_solve, "norms": cmd_norms, "verify": cmd_verify, "kernel": cmd_kernel, "sweep": cmd_sweep}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default="fracheat-out", help="output directory (default: fracheat-out)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
    common.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides, dotted keys")

    ap = _Parser(prog="fracheat", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"fracheat {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    for name in ("solve", "norms"):
        sp = sub.add_parser(name, parents=[common], help=f"{name} from a TOML config")
        sp.add_argument("--config", required=True)
    for name in ("verify", "sweep"):
        sp = sub.add_parser(name, parents=[common], help=f"{name} from TOML plan(s)")
        sp.add_argument("--plan", action="append", required=True, help="plan file (repeatable)")
    sp = sub.add_parser("kernel", parents=[common], help="synthesize F^-1[Phi_(0) C_T] and fit its tail")
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--half-length", type=float, default=16384.0)
    sp.add_argument("--dim", type=int, default=1)
    sp.add_argument("--pad", type=int, default=8)
    sp.add_argument("--spacing", type=float, default=0.25)
    sp.add_argument("--max-rows", type=int, default=8192)
    return ap


def parse_args(argv) -> RunConfig:
    ns = build_parser().parse_args(argv)
    if ns.command is None:
        raise UsageError(f"missing command; expected one of {', '.join(COMMANDS)}")
    if ns.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    rc = RunConfig(ns.command, out=ns.out, overrides=list(ns.overrides), jobs=ns.jobs,
                   verbosity=-1 if ns.quiet else ns.verbose)
    if ns.command in ("solve", "norms"):
        rc.config_path = ns.config
    elif ns.command in ("verify", "sweep"):
        rc.plan_paths = list(ns.plan)
    else:
        if rc.overrides:
            raise UsageError("kernel takes flags, not key=value overrides")
        if not 0 < ns.theta <= 2 or not ns.T > 0:
            raise UsageError("need 0 < theta <= 2 and T > 0")
        rc.kernel_args = {"theta": ns.theta, "T": ns.T, "half_length": ns.half_length, "dim": ns.dim,
                          "pad": ns.pad, "spacing": ns.spacing, "max_rows": ns.max_rows}
    return rc


def _setup_logging(verbosity: int) -> None:
    level = {-1: logging.WARNING, 0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def run(rc: RunConfig) -> int:
    if rc.command not in HANDLERS:
        raise UsageError(f"unknown command {rc.command!r}")
    return HANDLERS[rc.command](rc)


def main(argv=None) -> int:
    try:
        rc = parse_args(sys.argv[1:] if argv is None else argv)
        _setup_logging(rc.verbosity)
        return run(rc)
    except UsageError as exc:
        print(f"fracheat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
