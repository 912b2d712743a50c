"""Command-line front end.

    groundmap <verb> --config FILE --out DIR [--seed N]

Verbs: spectrum, maps, dini, path, invert, diagnose.  The config is an INI
file; see ``configs/`` for one sample per verb and ``docs/formats.md`` for
the output formats.  Outputs are named ``<verb>-<hash>.<ext>`` where the
hash covers the parsed config, the seed and the package version, so equal
inputs give byte-identical files.

Exit status: 0 on success, 1 on a usage error (nothing written), 2 when a
mathematical contract is violated (for instance a path loses binding); in
that case a ``<verb>-<hash>.error.json`` report is written.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .binding import PathParams, connect_pair, construct_path, path_csv, path_density_trace
from .degenerate import breaking_report, dini_derivatives
from .discretization import InteractionKernel, build_grid, interaction_from_spec, potential_from_spec
from .errors import (DegeneracyHit, DegenerateLevel, InvalidArgument, NotApplicable, PathFailure, SolverFailure,
                     StepTooLarge)
from .fixtures import REGISTRY, get_fixture
from .ks_inverse import (IllPosednessReport, InversionConfig, condition_sweep, forward_density, ks_invert,
                         noise_amplification, svd_decay, weak_strong_demo, weak_strong_summary)
from .spectra import solve, spectrum_csv
from .state_maps import density_csv, density_jacobian, level_density, maps_bundle

VERBS = ("spectrum", "maps", "dini", "path", "invert", "diagnose")
THREADS_ENV = "GROUNDMAP_THREADS"

CONTRACT_ERRORS = (PathFailure, DegeneracyHit, DegenerateLevel, SolverFailure, StepTooLarge, NotApplicable)


class UsageError(Exception):
    pass


# -- config --

def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except configparser.Error as exc:
        raise UsageError(f"malformed config: {exc}") from None
    return cp


def canonical(cp: configparser.ConfigParser) -> dict:
    return {sec: dict(sorted(cp[sec].items())) for sec in sorted(cp.sections())}


def config_hash(verb: str, cp: configparser.ConfigParser, seed: int) -> str:
    payload = json.dumps({"verb": verb, "config": canonical(cp), "seed": seed, "version": __version__},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _section(cp, name) -> dict:
    return dict(cp[name]) if cp.has_section(name) else {}


def _float(sec: dict, key, default=None):
    if key not in sec:
        return default
    try:
        return float(sec[key])
    except ValueError:
        raise UsageError(f"{key} = {sec[key]!r} is not a number") from None


def _int(sec: dict, key, default=None):
    if key not in sec:
        return default
    try:
        return int(sec[key])
    except ValueError:
        raise UsageError(f"{key} = {sec[key]!r} is not an integer") from None


def _list(sec: dict, key, default, cast=float):
    if key not in sec:
        return list(default)
    try:
        return [cast(t) for t in sec[key].replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"{key} = {sec[key]!r} is not a list of numbers") from None


def build_system(cp):
    """(grid, potential, interaction, N) from [system], [potential], [interaction]."""
    sysec = _section(cp, "system")
    name = sysec.get("fixture")
    if name:
        if name not in REGISTRY:
            raise UsageError(f"unknown fixture {name!r}; available: {', '.join(sorted(REGISTRY))}")
        fx = get_fixture(name)
        grid, v, w, N = fx.grid, fx.potential, fx.interaction, fx.n_particles
    else:
        n = _int(sysec, "n_sites")
        if n is None:
            raise UsageError("[system] needs either 'fixture' or 'n_sites'")
        grid = build_grid(n, _float(sysec, "length", 1.0))
        v, w, N = None, InteractionKernel.none(), 1
    if cp.has_section("potential"):
        v = potential_from_spec(grid, _section(cp, "potential"))
    elif v is None:
        v = potential_from_spec(grid, {"kind": "zero"})
    if cp.has_section("interaction"):
        w = interaction_from_spec(_section(cp, "interaction"))
    N = _int(sysec, "n_particles", N)
    return grid, v, w, N


# -- output --

def _fmt(x):
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_fmt(y) for y in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_fmt(y) for y in x]
    if isinstance(x, dict):
        return {str(k): _fmt(v) for k, v in x.items()}
    return x


def dump_json(obj) -> str:
    return json.dumps(_fmt(obj), indent=2, sort_keys=True) + "\n"


def rows_csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _g(x) -> str:
    return f"{float(x):.15g}"


# -- verbs; each returns {suffix: text} --

def run_spectrum(cp, seed):
    grid, v, w, N = build_system(cp)
    sec = _section(cp, "spectrum")
    sol = solve(grid, v, N, w, k_levels=_int(sec, "k_levels", 4), tol=_float(sec, "tol", 1e-9), seed=seed)
    manifest = {"n_sites": grid.n_sites, "length": grid.length, "n_particles": N, "dimension": sol.basis.dimension,
                "energies": sol.energies, "clusters": sol.clusters, "residuals": sol.residual_norms}
    return {"csv": spectrum_csv(sol), "json": dump_json(manifest)}


def _direction(cp, grid, name="direction"):
    if not cp.has_section(name):
        return None
    return potential_from_spec(grid, _section(cp, name)).values


def run_maps(cp, seed):
    grid, v, w, N = build_system(cp)
    sec = _section(cp, "maps")
    k = _int(sec, "level", 0)
    sol = solve(grid, v, N, w, k_levels=max(_int(sec, "k_levels", 4), k + 2), seed=seed)
    u = _direction(cp, grid)
    bundle = maps_bundle(sol, k, u, fd_step=_float(sec, "fd_step", 1e-3))
    return {"csv": density_csv(level_density(sol, k)), "json": dump_json(bundle)}


def run_dini(cp, seed):
    grid, v, w, N = build_system(cp)
    sec = _section(cp, "dini")
    k = _int(sec, "level", 0)
    sol = solve(grid, v, N, w, k_levels=max(_int(sec, "k_levels", 6), k + 2), seed=seed)
    n_dirs = _int(sec, "n_directions", 10)
    rng = np.random.default_rng(seed)
    dirs = [(f"random{i}", rng.standard_normal(grid.n_sites)) for i in range(n_dirs)]
    u = _direction(cp, grid)
    if u is not None:
        dirs.insert(0, ("config", u))
    rows = []
    for label, d in dirs:
        rep = dini_derivatives(sol, k, d)
        closed = rep.closed_form or (np.nan, np.nan)
        rows.append([label, _g(rep.right), _g(rep.left), _g(closed[0]), _g(closed[1]), int(rep.broken_first_order),
                     " ".join(_g(m) for m in rep.mu)])
    lo, hi = sol.cluster_of(k)
    manifest = {"level": k, "cluster": [lo, hi], "energy": sol.energies[k], "energies": sol.energies}
    if hi > lo:
        br = breaking_report(sol, k)
        manifest["breaking_directions"] = br.breaking_directions
        manifest["any_broken"] = br.any_broken
    text = rows_csv(["direction", "right", "left", "closed_right", "closed_left", "broken", "mu"], rows)
    return {"csv": text, "json": dump_json(manifest)}


def _path_params(sec):
    # configparser lower-cases keys, so M and L arrive as m and l
    return PathParams(M=_float(sec, "m"), L=_float(sec, "l"), r=_float(sec, "r"), ell=_float(sec, "ell"),
                      c=_float(sec, "c"), steps_per_stage=_int(sec, "steps_per_stage", 50),
                      margin_tol=_float(sec, "margin_tol", 1e-8))


def run_path(cp, seed):
    grid, v, w, N = build_system(cp)
    sec = _section(cp, "path")
    params = _path_params(sec)
    out = {}
    if cp.has_section("potential_b"):
        vb = potential_from_spec(grid, _section(cp, "potential_b"))
        pa, pb = connect_pair(grid, v, vb, w, N, params)
        out["csv"] = path_csv(pa)
        out["b.csv"] = path_csv(pb)
        manifest = {"a": pa.manifest(), "b": pb.manifest(), "min_margin": min(pa.min_margin, pb.min_margin),
                    "common_well": bool(np.array_equal(pa.final_potential, pb.final_potential))}
    else:
        pa = construct_path(grid, v, w, N, params)
        out["csv"] = path_csv(pa)
        manifest = {"a": pa.manifest(), "min_margin": pa.min_margin}
    if sec.get("density_trace", "no").lower() in ("1", "yes", "true", "on"):
        tr = path_density_trace(pa, grid, w, N)
        manifest["density_max_jump"] = tr.max_jump
        manifest["density_crossings"] = tr.crossings
    out["json"] = dump_json(manifest)
    return out


def read_density_csv(path, grid):
    try:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        x = np.array([float(r["x"]) for r in rows])
        rho = np.array([float(r["rho"]) for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read target density {path}: {exc}") from None
    if x.size != grid.n_sites or not np.allclose(x, grid.nodes, atol=1e-9):
        raise UsageError("target density nodes do not match the grid")
    return rho


def _inversion_config(sec):
    return InversionConfig(lam=_float(sec, "lambda", 1e-10), max_iter=_int(sec, "max_iter", 100),
                           tol=_float(sec, "tol", 1e-10), shrink=_float(sec, "shrink", 0.5),
                           min_step=_float(sec, "min_step", 1e-6), method=sec.get("method", "aufbau"))


def run_invert(cp, seed, config_dir=Path(".")):
    grid, v, w, N = build_system(cp)
    sec = _section(cp, "invert")
    if "target" in sec:
        rho = read_density_csv(config_dir / sec["target"], grid)
    else:
        # density of the configured (possibly interacting) system
        sol = solve(grid, v, N, w, k_levels=2, seed=seed)
        rho = level_density(sol, 0).values
    res = ks_invert(grid, rho, _inversion_config(sec))
    manifest = {"converged": res.converged, "message": res.message, "iterations": res.iterations,
                "final_misfit": res.final_misfit, "solution_norm": res.solution_norm,
                "representable_at_tolerance": res.converged, "v_ks": res.v_ks.values}
    hist = rows_csv(["iteration", "l1_misfit", "objective"],
                    [[i, _g(m), _g(o)] for i, (m, o) in enumerate(zip(res.residual_history, res.objective_history))])
    pot = rows_csv(["x", "v_ks", "rho_target"], [[_g(x), _g(a), _g(b)] for x, a, b in
                                                  zip(grid.nodes, res.v_ks.values, rho)])
    return {"csv": hist, "potential.csv": pot, "json": dump_json(manifest)}


def run_diagnose(cp, seed):
    grid, v, w, N = build_system(cp)
    sec = _section(cp, "diagnose")
    sol = solve(grid, v, N, w, k_levels=2, seed=seed)
    svd = svd_decay(density_jacobian(sol, 0))
    sizes = _list(sec, "sizes", (32, 64, 128), int)
    cond = {n: r.condition_number for n, r in condition_sweep(sizes, n_particles=N).items()}
    amp = _float(sec, "amplitude", 1.0)
    ws = weak_strong_demo(grid, v, w, N, amp, _list(sec, "m_list", (1, 2, 4, 8, 16, 32, 64), int))
    noise = []
    eps = _float(sec, "noise", 0.0)
    if eps > 0:
        rho0 = forward_density(grid, v, N)
        noise = noise_amplification(grid, rho0, eps, _list(sec, "lambdas", (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)),
                                    seed=seed)
    report = IllPosednessReport(svd, cond, ws, noise)
    out = {f"{k}.csv": v for k, v in report.tables().items()}
    out["json"] = dump_json({"condition_numbers": cond, "null_mode_overlap": svd.null_mode_overlap,
                             "decades": svd.decades, "weak_strong": weak_strong_summary(ws)})
    return out


RUNNERS = {"spectrum": run_spectrum, "maps": run_maps, "dini": run_dini, "path": run_path,
           "invert": run_invert, "diagnose": run_diagnose}


@contextlib.contextmanager
def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        yield
        return
    from threadpoolctl import threadpool_limits

    try:
        limit = int(value)
    except ValueError:
        raise UsageError(f"{THREADS_ENV}={value!r} is not an integer") from None
    with threadpool_limits(limits=limit):
        yield


def _parser():
    p = argparse.ArgumentParser(prog="groundmap", description="Potential-to-ground-state laboratory.")
    p.add_argument("verb", help=f"one of: {', '.join(VERBS)}")
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="seed for every random draw (default: [run] seed or 0)")
    return p


def run(verb: str, config_path, out_dir, seed: int | None = None) -> tuple[int, list[Path]]:
    """Run one experiment; returns (exit status, written files)."""
    if verb not in VERBS:
        print(f"unknown verb {verb!r}; available: {', '.join(VERBS)}", file=sys.stderr)
        return 1, []
    try:
        cp = read_config(config_path)
        if seed is None:
            seed = _int(_section(cp, "run"), "seed", 0)
        tag = f"{verb}-{config_hash(verb, cp, seed)}"
        runner = RUNNERS[verb]
        with _thread_limit():
            if verb == "invert":
                files = runner(cp, seed, Path(config_path).parent)
            else:
                files = runner(cp, seed)
    except (UsageError, InvalidArgument, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1, []
    except CONTRACT_ERRORS as exc:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report = {"verb": verb, "error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "step", None) is not None:
            report["step"] = exc.step
        target = out / f"{tag}.error.json"
        target.write_text(dump_json(report))
        print(f"contract violation: {exc}", file=sys.stderr)
        return 2, [target]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for suffix, text in sorted(files.items()):
        target = out / f"{tag}.{suffix}"
        target.write_text(text)
        written.append(target)
    return 0, written


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    status, written = run(args.verb, args.config, args.out, args.seed)
    for path in written:
        print(path)
    return status


if __name__ == "__main__":
    sys.exit(main())
