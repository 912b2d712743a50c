"""Kohn-Sham inversion of the non-interacting density map and ill-posedness diagnostics.

The forward map sends a potential to the ground density of N non-interacting
fermions.  It is evaluated either by Aufbau filling of one-body orbitals or
by the N-fermion solver with ``w = none``; both give the same density and
Jacobian and are cross-checked in the tests.  Potentials are only defined up
to a constant, so the inversion works in the zero-mean gauge, which removes
the exact kernel (the constant direction) of the Jacobian.

Norms with a subscript h are grid-weighted: ``||f||_h^2 = h sum f^2``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .discretization import Grid, InteractionKernel, PotentialField, build_grid, one_body_laplacian
from .errors import DegeneracyHit, InvalidArgument
from .spectra import DEG_TOL, solve
from .state_maps import DensityVector, JacobianMatrix, density_jacobian, h1_distance, level_density, l1_norm, w11_norm


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, PotentialField) else np.asarray(v, dtype=float)


def zero_mean_basis(n: int) -> np.ndarray:
    """Orthonormal basis (n x n-1) of the vectors with vanishing sum."""
    Q, _ = np.linalg.qr(np.eye(n) - 1.0 / n)
    return Q[:, : n - 1]


# -- non-interacting forward map --

@dataclass(frozen=True, eq=False)
class OrbitalSolution:
    energies: np.ndarray  # all one-body levels
    orbitals: np.ndarray  # columns, l2-normalised
    n_particles: int
    grid: Grid

    @property
    def gap(self) -> float:
        """Distance between the highest occupied and lowest empty orbital."""
        if self.n_particles >= self.energies.size:
            return np.inf
        return float(self.energies[self.n_particles] - self.energies[self.n_particles - 1])

    @property
    def ground_energy(self) -> float:
        return float(np.sum(self.energies[: self.n_particles]))

    def density(self) -> np.ndarray:
        occ = self.orbitals[:, : self.n_particles]
        return np.sum(occ ** 2, axis=1) / self.grid.spacing


def aufbau(grid: Grid, v, n_particles: int, deg_tol: float = DEG_TOL) -> OrbitalSolution:
    """Fill the lowest one-body orbitals; raises :class:`DegeneracyHit` on an open shell."""
    vals = _values(v)
    if not 1 <= n_particles <= grid.n_sites:
        raise InvalidArgument(f"need 1 <= N <= n_sites, got N={n_particles}")
    K = one_body_laplacian(grid).toarray()
    eps, phi = sla.eigh(K + np.diag(vals))
    sol = OrbitalSolution(eps, phi, n_particles, grid)
    if sol.gap <= deg_tol * max(1.0, float(eps[-1] - eps[0])):
        raise DegeneracyHit(f"degenerate non-interacting ground state (HOMO-LUMO gap {sol.gap:.3e})",
                            PotentialField(vals, "degenerate"))
    return sol


def aufbau_jacobian(sol: OrbitalSolution) -> np.ndarray:
    """Bilinear-form density Jacobian of a closed-shell Slater determinant.

    ``J[g, g'] = -2 sum_{i occ, a empty} phi_i(g) phi_a(g) phi_i(g') phi_a(g') / (e_a - e_i)``,
    the same convention as :func:`density_jacobian`.
    """
    N = sol.n_particles
    occ, emp = sol.orbitals[:, :N], sol.orbitals[:, N:]
    denom = sol.energies[N:][None, :] - sol.energies[:N][:, None]  # N x (n-N)
    J = np.zeros((sol.grid.n_sites,) * 2)
    for i in range(N):
        pair = occ[:, i:i + 1] * emp  # n x (n-N)
        J -= 2.0 * (pair / denom[i]) @ pair.T
    return J


def forward_density(grid: Grid, v, n_particles: int, method: str = "aufbau") -> np.ndarray:
    """Ground density of N free fermions in ``v`` by either route."""
    if method == "aufbau":
        return aufbau(grid, v, n_particles).density()
    if method == "manybody":
        sol = solve(grid, v, n_particles, InteractionKernel.none(), k_levels=2)
        if sol.is_degenerate(0):
            raise DegeneracyHit("degenerate non-interacting ground state", PotentialField(_values(v), "degenerate"))
        return level_density(sol, 0).values
    raise InvalidArgument(f"unknown forward method {method!r}")


def forward_jacobian(grid: Grid, v, n_particles: int, method: str = "aufbau") -> np.ndarray:
    if method == "aufbau":
        return aufbau_jacobian(aufbau(grid, v, n_particles))
    if method == "manybody":
        sol = solve(grid, v, n_particles, InteractionKernel.none(), k_levels=2)
        if sol.is_degenerate(0):
            raise DegeneracyHit("degenerate non-interacting ground state", PotentialField(_values(v), "degenerate"))
        return density_jacobian(sol, 0).matrix
    raise InvalidArgument(f"unknown forward method {method!r}")


# -- inversion --

@dataclass(frozen=True)
class InversionConfig:
    """Settings for :func:`ks_invert`.

    The objective is ``||rho(v) - rho_target||_h^2 + lam ||v||_h^2`` over
    zero-mean ``v``.  Iteration stops when the L1 misfit falls below ``tol``
    or the Gauss-Newton step is stationary: its size is below
    ``step_tol * (1 + ||v||_inf)`` or its predicted objective decrease is
    below ``model_rtol`` times the objective.
    """

    lam: float = 1e-10
    max_iter: int = 100
    shrink: float = 0.5
    min_step: float = 1e-6
    tol: float = 1e-10
    step_tol: float = 1e-12
    model_rtol: float = 1e-9
    method: str = "aufbau"
    gauge: str = "zero_mean"

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgument("lam must be nonnegative")
        if self.tol <= 0 or self.step_tol <= 0 or self.min_step <= 0:
            raise InvalidArgument("tolerances must be positive")
        if not 0 < self.shrink < 1:
            raise InvalidArgument("shrink must lie in (0, 1)")
        if self.max_iter < 0:
            raise InvalidArgument("max_iter must be nonnegative")
        if self.method not in ("aufbau", "manybody"):
            raise InvalidArgument(f"unknown forward method {self.method!r}")
        if self.gauge != "zero_mean":
            raise InvalidArgument("only the zero-mean gauge is supported")


@dataclass(frozen=True, eq=False)
class InversionResult:
    v_ks: PotentialField
    residual_history: list  # L1 density misfit, one entry per accepted iterate
    objective_history: list
    final_misfit: float
    solution_norm: float  # ||v_ks||_h
    converged: bool
    iterations: int
    message: str = ""


def _check_target(grid: Grid, rho, n_particles: int | None):
    rho = rho.values if isinstance(rho, DensityVector) else np.asarray(rho, dtype=float)
    if rho.shape != (grid.n_sites,):
        raise InvalidArgument(f"target density has shape {rho.shape}, expected ({grid.n_sites},)")
    if np.any(rho < 0):
        raise InvalidArgument("target density has negative entries")
    total = grid.integrate(rho)
    N = int(round(total))
    if abs(total - N) > 1e-8 * max(1, N) or N < 1:
        raise InvalidArgument(f"target density integrates to {total:.12g}, not to a positive integer")
    if n_particles is not None and n_particles != N:
        raise InvalidArgument(f"target density integrates to {N}, expected {n_particles}")
    if N > grid.n_sites:
        raise InvalidArgument("more particles than grid sites")
    return rho, N


def ks_invert(grid: Grid, rho_target, config: InversionConfig | None = None, v0=None,
              n_particles: int | None = None) -> InversionResult:
    """Zero-mean potential whose non-interacting ground density matches ``rho_target``.

    Gauss-Newton with Tikhonov weight ``config.lam`` and a backtracking line
    search on the L1 misfit: a step is accepted only if it lowers the misfit.
    The iteration is converged when the misfit is below ``tol`` or the
    linearised model predicts no further decrease of the objective.  Returns the best iterate with ``converged=False`` when
    the iteration stalls; an iterate with a degenerate ground state raises
    :class:`DegeneracyHit`.
    """
    cfg = config or InversionConfig()
    rho_t, N = _check_target(grid, rho_target, n_particles)
    h = grid.spacing
    n = grid.n_sites
    P = zero_mean_basis(n)
    v = np.zeros(n) if v0 is None else _values(v0) - np.mean(_values(v0))
    sq = np.sqrt(cfg.lam)

    def evaluate(vv):
        F = forward_density(grid, vv, N, cfg.method) - rho_t
        return F, h * (F @ F) + cfg.lam * h * (vv @ vv), l1_norm(F, grid)

    F, obj, mis = evaluate(v)
    res_hist, obj_hist = [mis], [obj]
    converged = mis < cfg.tol
    message = "target reached" if converged else ""
    it = 0
    while not converged and it < cfg.max_iter:
        it += 1
        Jr = forward_jacobian(grid, v, N, cfg.method) / h  # d rho_g / d v_g'
        A = np.vstack([Jr @ P, sq * P])
        b = -np.concatenate([F, sq * v])
        coef = np.linalg.lstsq(A, b, rcond=None)[0]
        delta = P @ coef
        # decrease of the regularised objective predicted by the linear model
        predicted = obj - h * float(np.sum((A @ coef - b) ** 2))
        if (np.max(np.abs(delta)) <= cfg.step_tol * (1 + np.max(np.abs(v)))
                or predicted <= cfg.model_rtol * obj):
            converged = True
            message = "stationary"
            break
        step = 1.0
        accepted = False
        while step >= cfg.min_step:
            trial = v + step * delta
            trial -= np.mean(trial)
            Ft, objt, mist = evaluate(trial)
            if mist < mis:
                accepted = True
                break
            step *= cfg.shrink
        if not accepted:
            message = "line search failed"
            break
        v, F, obj, mis = trial, Ft, objt, mist
        res_hist.append(mis)
        obj_hist.append(obj)
        if mis < cfg.tol:
            converged = True
            message = "target reached"
    if not converged and not message:
        message = "iteration limit"
    return InversionResult(PotentialField(v, "v_ks"), res_hist, obj_hist, mis,
                           float(np.sqrt(h * (v @ v))), converged, it, message)


# -- ill-posedness diagnostics --

@dataclass(frozen=True, eq=False)
class SvdReport:
    singular_values: np.ndarray  # descending
    null_mode_index: int  # index of the singular vector closest to the constant direction
    null_mode_overlap: float
    zero_mean_singular_values: np.ndarray
    condition_number: float  # of the zero-mean restriction

    @property
    def decades(self) -> float:
        s = self.zero_mean_singular_values
        return float(np.log10(s[0] / s[-1]))


def svd_decay(J) -> SvdReport:
    """Singular spectrum of the Jacobian, its constant-direction null mode and the zero-mean conditioning."""
    M = J.matrix if isinstance(J, JacobianMatrix) else np.asarray(J, dtype=float)
    n = M.shape[0]
    _, s, Vt = np.linalg.svd(M)
    const = np.ones(n) / np.sqrt(n)
    overlaps = np.abs(Vt @ const)
    idx = int(np.argmax(overlaps))
    P = zero_mean_basis(n)
    s0 = np.linalg.svd(P.T @ M @ P, compute_uv=False)
    return SvdReport(s, idx, float(overlaps[idx]), s0, float(s0[0] / s0[-1]))


def _sweep_potential(grid: Grid) -> np.ndarray:
    # harmonic confinement: the density is thin near the walls, as for a trapped pair
    x = grid.nodes / grid.length
    return 2000.0 * (x - 0.5) ** 2


def condition_sweep(sizes=(32, 64, 128), n_particles: int = 2, length: float = 1.0, potential=None,
                    method: str = "manybody") -> dict:
    """Zero-mean condition number of J at a fixed continuum potential for each grid size."""
    f = potential or _sweep_potential
    out = {}
    for n in sizes:
        g = build_grid(n, length)
        v = np.asarray(f(g), dtype=float)
        out[n] = svd_decay(forward_jacobian(g, v, n_particles, method))
    return out


@dataclass(frozen=True)
class WeakStrongRow:
    m: int
    state_deviation: float  # D_1 in H^1
    density_deviation: float  # W^{1,1}
    energy_deviation: float
    error: str = ""


def weak_strong_demo(grid: Grid, v, w: InteractionKernel | None, n_particles: int, amplitude: float,
                     m_list=(1, 2, 4, 8, 16, 32, 64)) -> list[WeakStrongRow]:
    """Deviation of ground state, density and energy under v -> v + A sin(m pi x / L)."""
    vals = _values(v)
    base = solve(grid, vals, n_particles, w, k_levels=2)
    if base.is_degenerate(0):
        raise DegeneracyHit("reference ground state is degenerate", PotentialField(vals, "reference"))
    psi = base.states[:, 0]
    rho = level_density(base, 0).values
    rows = []
    for m in m_list:
        vm = vals + amplitude * np.sin(m * np.pi * grid.nodes / grid.length)
        sol = solve(grid, vm, n_particles, w, k_levels=2)
        if sol.is_degenerate(0):
            rows.append(WeakStrongRow(int(m), np.nan, np.nan, np.nan, "degenerate"))
            continue
        phi = sol.states[:, 0]
        rows.append(WeakStrongRow(
            int(m),
            h1_distance(psi, phi, base.basis, grid),
            w11_norm(level_density(sol, 0).values - rho, grid),
            abs(float(sol.energies[0] - base.energies[0])),
        ))
    return rows


def relative_noise(grid: Grid, rho, seed: int = 0) -> np.ndarray:
    """Zero-integral noise eta = rho * zeta with max|zeta| = 1, so rho + eps eta >= 0 for eps <= 1."""
    rho = np.asarray(rho, dtype=float)
    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal(rho.size)
    zeta -= grid.integrate(rho * zeta) / grid.integrate(rho)
    zeta /= np.max(np.abs(zeta))
    return rho * zeta


@dataclass(frozen=True)
class NoisePoint:
    lam: float
    solution_norm: float
    misfit: float  # L1 misfit against the noisy target
    clean_misfit: float  # L1 distance of rho(v_lam) to the clean target
    converged: bool


def noise_amplification(grid: Grid, rho_target, eps: float, lam_list, seed: int = 0, noise=None,
                        config: InversionConfig | None = None) -> list[NoisePoint]:
    """Invert ``rho_target + eps * noise`` for each Tikhonov weight; noise must integrate to zero."""
    rho, N = _check_target(grid, rho_target, None)
    eta = relative_noise(grid, rho, seed) if noise is None else np.asarray(noise, dtype=float)
    if abs(grid.integrate(eta)) > 1e-12 * max(1.0, l1_norm(eta, grid)):
        raise InvalidArgument("noise must integrate to zero")
    noisy = rho + eps * eta
    if np.any(noisy < 0):
        raise InvalidArgument("noisy density is negative; lower eps")
    cfg = config or InversionConfig()
    out = []
    for lam in lam_list:
        res = ks_invert(grid, noisy, InversionConfig(**{**cfg.__dict__, "lam": float(lam)}), n_particles=N)
        clean = l1_norm(forward_density(grid, res.v_ks, N, cfg.method) - rho, grid)
        out.append(NoisePoint(float(lam), res.solution_norm, res.final_misfit, clean, res.converged))
    return out


def weak_inverse_residual(v_n, v, sol_n, sol, k: int = 0) -> float:
    """h sum (v_n - v - (E_k(v_n) - E_k(v)) / N)^2 rho_k(v)."""
    vn, vv = _values(v_n), _values(v)
    N = sol.basis.n_particles
    shift = (sol_n.energies[k] - sol.energies[k]) / N
    rho = level_density(sol, k).values
    return sol.grid.integrate((vn - vv - shift) ** 2 * rho)


@dataclass(frozen=True, eq=False)
class IllPosednessReport:
    svd: SvdReport
    conditioning: dict = field(default_factory=dict)  # n -> zero-mean condition number
    weak_strong: list = field(default_factory=list)
    noise_curve: list = field(default_factory=list)

    def tables(self) -> dict:
        """CSV text per table."""
        out = {}
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["index", "singular_value", "zero_mean_singular_value"])
        s0 = self.svd.zero_mean_singular_values
        for i, s in enumerate(self.svd.singular_values):
            wr.writerow([i, f"{s:.12e}", f"{s0[i]:.12e}" if i < s0.size else ""])
        out["svd"] = buf.getvalue()
        if self.conditioning:
            buf = io.StringIO()
            wr = csv.writer(buf, lineterminator="\n")
            wr.writerow(["n_sites", "condition_number"])
            for n, c in self.conditioning.items():
                wr.writerow([n, f"{c:.12e}"])
            out["conditioning"] = buf.getvalue()
        if self.weak_strong:
            buf = io.StringIO()
            wr = csv.writer(buf, lineterminator="\n")
            wr.writerow(["m", "state_D1", "density_W11", "energy_abs", "error"])
            for r in self.weak_strong:
                wr.writerow([r.m, f"{r.state_deviation:.12e}", f"{r.density_deviation:.12e}",
                             f"{r.energy_deviation:.12e}", r.error])
            out["weak_strong"] = buf.getvalue()
        if self.noise_curve:
            buf = io.StringIO()
            wr = csv.writer(buf, lineterminator="\n")
            wr.writerow(["lambda", "solution_norm", "misfit", "clean_misfit", "converged"])
            for p in self.noise_curve:
                wr.writerow([f"{p.lam:.3e}", f"{p.solution_norm:.12e}", f"{p.misfit:.12e}",
                             f"{p.clean_misfit:.12e}", int(p.converged)])
            out["noise"] = buf.getvalue()
        return out


def weak_strong_summary(rows: list[WeakStrongRow], band: float = 0.1) -> dict:
    """Shrink factors first/last row and whether each column is monotone within ``band``."""
    ok = [r for r in rows if not r.error]
    out = {}
    for col in ("state_deviation", "density_deviation", "energy_deviation"):
        vals = np.array([getattr(r, col) for r in ok])
        if vals.size < 2:
            out[col] = {"shrink": np.nan, "monotone": True, "first_monotone_index": 0}
            continue
        ups = vals[1:] > (1 + band) * vals[:-1]
        bad = np.nonzero(ups)[0]
        out[col] = {
            "shrink": float(vals[0] / vals[-1]) if vals[-1] > 0 else np.inf,
            "monotone": not bool(ups.any()),
            # rows from this index on are monotone within the band
            "first_monotone_index": int(bad[-1] + 1) if bad.size else 0,
        }
    return out
