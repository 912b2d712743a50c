"""Binding checks and a constructive path from any binding potential to a square well.

On the grid the dissociation threshold of n particles is modelled by the
ground energy of n - 1 particles in the same potential (0 for one particle)
plus the potential next to the walls, where an escaping particle ends up.
A potential binds up to N when every margin ``threshold(n) - E0(n)``,
n = 1..N, is positive.

The path has six linear stages, each sampled at ``steps_per_stage`` points:

1. ``truncate``: v -> v clipped to [-M, M]
2. ``raise_wall_outer``: add t (Lw - v1) outside the ball B_r
3. ``gauge_shift``: subtract t Lw, giving v3 = (v1 - Lw) 1_{B_r} <= 0
4. ``raise_wall_R``: add t ell outside B_R
5. ``gauge_shift``: subtract t ell, giving (v3 - ell) 1_{B_R}
6. ``fill_hole``: subtract t v3, ending at the square well -ell 1_{B_R}

Balls are centred at L/2.  The wall radius follows R = c (1 + ln ell), with
``c`` calibrated from the exponential tail of the ground densities of v3,
and is capped so that at least two grid nodes stay outside.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .degenerate import kernel_basis, perturbation_matrix, track_branches, max_density_jump
from .discretization import Grid, InteractionKernel, PotentialField
from .errors import InvalidArgument, PathFailure
from .spectra import SpectralSolution, asymptotic_value, solve
from .state_maps import density_of, w11_norm


@dataclass(frozen=True, eq=False)
class BindingReport:
    energies: np.ndarray  # E0(n), n = 1..N
    thresholds: np.ndarray  # E0(n-1) + v_inf, with E0(0) = 0
    margin_tol: float = 0.0
    solutions: tuple = field(default=(), repr=False)

    @property
    def margins(self) -> np.ndarray:
        return self.thresholds - self.energies

    @property
    def binds_all(self) -> bool:
        return bool(np.all(self.margins > self.margin_tol))

    @property
    def min_margin(self) -> float:
        return float(self.margins.min())


def check_binding(grid: Grid, v, w: InteractionKernel | None, n_particles: int, margin_tol: float = 1e-8,
                  k_levels: int = 2) -> BindingReport:
    if n_particles < 1:
        raise InvalidArgument("need at least one particle")
    sols = tuple(solve(grid, v, n, w, k_levels=k_levels) for n in range(1, n_particles + 1))
    energies = np.array([s.energies[0] for s in sols])
    thresholds = np.concatenate([[0.0], energies[:-1]]) + asymptotic_value(v)
    return BindingReport(energies, thresholds, margin_tol, sols)


@dataclass(frozen=True)
class Admissibility:
    admissible: bool
    min_value: float
    margin: float


def addos_admissible(sol: SpectralSolution, u, margin: float) -> Admissibility:
    """Whether adding ``u >= 0`` provably keeps binding.

    ``min_value`` is the smallest integral of u against the density of a
    normalised ground state, i.e. the lowest eigenvalue of ``M_u`` on the
    ground cluster; the test is ``min_value < margin`` with ``margin`` the
    binding margin of the unperturbed potential.
    """
    u = u.values if isinstance(u, PotentialField) else np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise InvalidArgument("admissibility test needs a nonnegative perturbation")
    ker = kernel_basis(sol, 0)
    lowest = float(perturbation_matrix(ker, u).eigenvalues[0])
    return Admissibility(lowest < margin, lowest, float(margin))


def outside_ball(grid: Grid, radius: float) -> np.ndarray:
    return (np.abs(grid.nodes - grid.length / 2) > radius).astype(float)


def tail_weight(rho: np.ndarray, grid: Grid, radius: float) -> float:
    return grid.integrate(rho * outside_ball(grid, radius))


STAGES = ("truncate", "raise_wall_outer", "gauge_shift", "raise_wall_R", "gauge_shift", "fill_hole")


@dataclass(frozen=True)
class PathParams:
    """Construction constants; ``None`` means choose automatically."""

    M: float | None = None  # truncation level, default 2 max|v|
    L: float | None = None  # outer wall height, default M + 1
    r: float | None = None  # inner radius, default from the tail criterion
    ell: float | None = None  # final well depth, default 2 N max|v3| escalated by doubling
    c: float | None = None  # R = c (1 + ln ell), default calibrated from tail decay
    steps_per_stage: int = 50
    margin_tol: float = 1e-8
    max_escalations: int = 10
    max_refine: int = 6


@dataclass(frozen=True, eq=False)
class PathStep:
    index: int
    potential: PotentialField
    stage: str
    t: float
    report: BindingReport = field(repr=False)


@dataclass(frozen=True, eq=False)
class PathResult:
    steps: list
    params: PathParams
    ell: float
    R: float
    c: float
    r: float
    escalations: int

    @property
    def min_margin(self) -> float:
        return min(s.report.min_margin for s in self.steps)

    @property
    def final_potential(self) -> np.ndarray:
        return self.steps[-1].potential.values

    def manifest(self) -> dict:
        p = self.params
        return {
            "M": p.M, "L": p.L, "r": self.r, "ell": self.ell, "R": self.R, "c": self.c,
            "steps_per_stage": p.steps_per_stage, "margin_tol": p.margin_tol,
            "escalations": self.escalations, "n_steps": len(self.steps),
        }


class _Cache:
    """Binding reports keyed by the exact potential bytes."""

    def __init__(self, grid, w, n_particles, margin_tol):
        self.grid, self.w, self.n, self.tol = grid, w, n_particles, margin_tol
        self.store = {}

    def __call__(self, values):
        key = np.asarray(values, dtype=float).tobytes()
        if key not in self.store:
            self.store[key] = check_binding(self.grid, values, self.w, self.n, self.tol)
        return self.store[key]


def _max_radius(grid: Grid) -> float:
    # keep at least the outermost node on each side outside the ball
    return grid.length / 2 - grid.spacing * 1.5


def _snap_radius(grid: Grid, radius: float) -> float:
    """Smallest node distance from the centre that is >= radius (up to rounding), so equal node sets get equal R."""
    radii = np.unique(np.abs(grid.nodes - grid.length / 2))
    radii = radii[radii <= _max_radius(grid)]
    above = radii[radii >= radius - 1e-9 * grid.spacing]
    return float(above[0]) if above.size else float(radii[-1])


def _choose_r(grid, v1, Lw, report, cache_tol):
    """Smallest node radius with (Lw + |v1|_inf) * tail(rho_n) < margin / 2 for every n."""
    half = grid.length / 2
    radii = np.sort(np.unique(np.abs(grid.nodes - half)))
    radii = radii[radii <= _max_radius(grid)]
    rhos = [density_of(s.states[:, 0], s.basis, grid).values for s in report.solutions]
    amp = Lw + np.max(np.abs(v1))
    for rad in radii:
        if all(amp * tail_weight(rho, grid, rad) < 0.5 * report.min_margin for rho in rhos):
            return float(rad)
    return float(radii[-1])


def calibrate_c(grid: Grid, report: BindingReport) -> float:
    """Fit tail(R) ~ alpha exp(-beta R) and return c with ell * tail(c (1 + ln ell)) < margin / 2 for all ell >= 1."""
    half = grid.length / 2
    radii = np.sort(np.unique(np.abs(grid.nodes - half)))[:-1]
    best = 0.0
    for sol in report.solutions:
        rho = density_of(sol.states[:, 0], sol.basis, grid).values
        tails = np.array([tail_weight(rho, grid, rad) for rad in radii])
        ok = tails > 1e-13
        if ok.sum() < 3:
            continue
        beta, log_alpha = np.polyfit(radii[ok], np.log(tails[ok]), 1)
        beta = -beta
        if beta <= 0:
            continue
        need = max(1.0, log_alpha - math.log(0.5 * report.min_margin)) / beta
        best = max(best, need)
    return float(best)


def _stage_endpoints(v, M, Lw, r, ell, R, grid):
    v1 = np.clip(v, -M, M)
    out_r = outside_ball(grid, r)
    v2 = v1 + (Lw - v1) * out_r
    v3 = v2 - Lw
    out_R = outside_ball(grid, R)
    v4 = v3 + ell * out_R
    v5 = v4 - ell
    v6 = v5 - v3
    return [v, v1, v2, v3, v4, v5, v6]


def _run_stage(start, end, stage, cache, params, t_offset, steps):
    n = params.steps_per_stage
    ts = list(np.linspace(0.0, 1.0, n + 1)[1:])
    prev_t = 0.0
    i = 0
    while i < len(ts):
        t = ts[i]
        vals = (1 - t) * start + t * end
        rep = cache(vals)
        if rep.min_margin <= params.margin_tol:
            return False, steps
        if rep.min_margin < 2 * params.margin_tol and t - prev_t > 2.0 ** -params.max_refine / n:
            # margin dips: halve the step
            ts.insert(i, 0.5 * (prev_t + t))
            continue
        steps.append(PathStep(len(steps), PotentialField(vals, stage), stage, t_offset + t, rep))
        prev_t = t
        i += 1
    return True, steps


def construct_path(grid: Grid, v, w: InteractionKernel | None, n_particles: int,
                   params: PathParams | None = None) -> PathResult:
    """Deform a binding potential into a square well while every sampled step keeps binding.

    On a binding loss in stages 4-6 the depth ``ell`` is doubled (``R``
    recomputed) and those stages are rebuilt; a loss in stages 1-3 or after
    ``max_escalations`` doublings raises :class:`PathFailure` carrying the
    offending step.
    """
    params = params or PathParams()
    v = v.values if isinstance(v, PotentialField) else np.asarray(v, dtype=float)
    cache = _Cache(grid, w, n_particles, params.margin_tol)
    rep0 = cache(v)
    if not rep0.binds_all:
        raise PathFailure(f"start potential does not bind (margins {rep0.margins})", step=0)
    vmax = float(np.max(np.abs(v)))
    M = params.M if params.M is not None else 2 * vmax
    Lw = params.L if params.L is not None else M + 1
    v1 = np.clip(v, -M, M)
    rep1 = cache(v1)
    r = params.r if params.r is not None else _choose_r(grid, v1, Lw, rep1, params.margin_tol)
    v3 = _stage_endpoints(v, M, Lw, r, 0.0, r, grid)[3]
    rep3 = cache(v3)
    ell = params.ell if params.ell is not None else max(1.0, 2.0 * n_particles * float(np.max(np.abs(v3))))
    if params.c is not None:
        c = params.c
    else:
        c = max(calibrate_c(grid, rep3), r / (1 + math.log(ell)))
    R_of = lambda e: _snap_radius(grid, max(c * (1 + math.log(e)), r))

    # a start that already is the target well needs no deformation
    if _is_target(v, grid, ell, R_of(ell)):
        step = PathStep(0, PotentialField(v, "target"), "fill_hole", 0.0, rep0)
        return PathResult([step], params, ell, R_of(ell), c, r, 0)

    steps = [PathStep(0, PotentialField(v, "start"), "start", 0.0, rep0)]
    pts = _stage_endpoints(v, M, Lw, r, ell, R_of(ell), grid)
    for s in range(3):
        ok, steps = _run_stage(pts[s], pts[s + 1], STAGES[s], cache, params, float(s), steps)
        if not ok:
            raise PathFailure(f"binding lost in stage {STAGES[s]} (increase r or M)", step=len(steps))
    head = list(steps)
    for esc in range(params.max_escalations + 1):
        R = R_of(ell)
        pts = _stage_endpoints(v, M, Lw, r, ell, R, grid)
        steps = list(head)
        ok = True
        for s in range(3, 6):
            ok, steps = _run_stage(pts[s], pts[s + 1], STAGES[s], cache, params, float(s), steps)
            if not ok:
                break
        if ok:
            return PathResult(steps, replace(params, M=M, L=Lw), ell, R, c, r, esc)
        ell *= 2.0
    raise PathFailure(f"binding lost after {params.max_escalations} depth escalations", step=len(steps))


def _is_target(v, grid, ell, R):
    return np.array_equal(v, -ell * (1 - outside_ball(grid, R)))


def connect_pair(grid: Grid, v_a, v_b, w: InteractionKernel | None, n_particles: int,
                 params: PathParams | None = None) -> tuple[PathResult, PathResult]:
    """Paths from two binding potentials to one common well.

    Each potential is first run on its own to find (ell, c); both are then
    rebuilt with ell* = max(ell_a, ell_b) and c* = max(c_a, c_b), so they end
    at the same -ell* 1_{B_R*}.
    """
    params = params or PathParams()
    pa = construct_path(grid, v_a, w, n_particles, params)
    pb = construct_path(grid, v_b, w, n_particles, params)
    common = replace(params, ell=max(pa.ell, pb.ell), c=max(pa.c, pb.c))
    for _ in range(params.max_escalations):
        pa2 = construct_path(grid, v_a, w, n_particles, replace(common, M=pa.params.M, L=pa.params.L, r=pa.r))
        pb2 = construct_path(grid, v_b, w, n_particles, replace(common, M=pb.params.M, L=pb.params.L, r=pb.r))
        if pa2.ell == pb2.ell and np.array_equal(pa2.final_potential, pb2.final_potential):
            return pa2, pb2
        common = replace(common, ell=max(pa2.ell, pb2.ell))
    raise PathFailure("could not agree on a common well")


@dataclass(frozen=True, eq=False)
class DensityPath:
    densities: np.ndarray
    max_jump: float
    totals: np.ndarray
    crossings: list


def path_density_trace(path, grid: Grid, w: InteractionKernel | None, n_particles: int,
                       k_levels: int = 2) -> DensityPath:
    """Ground densities along a path, continued through ground-level crossings.

    Branches are followed by overlap.  Where the lowest branch changes
    between two steps, the ground state is rotated inside the span of the two
    branches, cos(a) phi_old + sin(a) phi_new, so the density path stays
    connected.
    """
    pots = [s.potential.values if isinstance(s, PathStep) else np.asarray(getattr(s, "values", s), float)
            for s in (path.steps if isinstance(path, PathResult) else path)]
    # one extra level above the checked window absorbs mixing with untracked states
    table = track_branches(pots, grid, n_particles, w, k_levels=k_levels + 1, checked=k_levels)
    dens = []
    crossings = []
    ground_prev = table.labels[0][0]
    for s in range(len(pots)):
        ground = table.labels[s][0]
        if s > 0 and ground != ground_prev:
            crossings.append(s)
            a = table.states[s][:, ground_prev]
            b = table.states[s][:, ground]
            for ang in np.linspace(0, np.pi / 2, 9)[1:-1]:
                phi = np.cos(ang) * a + np.sin(ang) * b
                dens.append(density_of(phi / np.linalg.norm(phi), table.basis, grid).values)
        dens.append(table.density(s, ground))
        ground_prev = ground
    dens = np.array(dens)
    totals = np.array([grid.integrate(d) for d in dens])
    jumps = max_density_jump(dens, grid)
    return DensityPath(dens, jumps, totals, crossings)


def path_csv(result: PathResult) -> str:
    """Rows: step, stage, t, then margin and E0 for each particle number."""
    n = len(result.steps[0].report.energies)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["step", "stage", "t"] + [f"margin_{k}" for k in range(1, n + 1)]
                + [f"E0_{k}" for k in range(1, n + 1)])
    for s in result.steps:
        wr.writerow([s.index, s.stage, f"{s.t:.6f}"] + [f"{m:.12g}" for m in s.report.margins]
                    + [f"{e:.12g}" for e in s.report.energies])
    return buf.getvalue()
