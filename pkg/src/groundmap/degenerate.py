"""One-sided derivatives of possibly degenerate eigenvalues and branch tracking.

At a cluster of ``D`` equal levels with real orthonormal eigenbasis
``psi_1..psi_D``, a potential change ``u`` enters at first order through the
``D x D`` matrix ``M_u[i, j] = <psi_i, (sum_l u(x_l)) psi_j>``.  With
``mu_1 <= ... <= mu_D`` its eigenvalues and ``(m, M)`` the cluster bounds,
the right derivative of level ``k`` is ``mu_{k-m+1}`` and the left
derivative, ``-(right derivative along -u)``, is ``mu_{M-k+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .discretization import Grid, InteractionKernel, PotentialField
from .errors import InvalidArgument, NotApplicable, SolverFailure, StepTooLarge
from .spectra import SpectralSolution, solve
from .state_maps import density_of, w11_norm


@dataclass(frozen=True, eq=False)
class DegenerateKernel:
    level: int
    basis: np.ndarray  # columns: real orthonormal eigenvectors of the cluster
    m: int
    M: int
    energy: float
    solution: SpectralSolution = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.basis.shape[1]


def kernel_basis(sol: SpectralSolution, k: int, tol: float = 1e-8) -> DegenerateKernel:
    m, M = sol.cluster_of(k)
    if not sol.cluster_closed(k):
        raise InvalidArgument(f"cluster of level {k} may extend beyond the computed levels; solve more levels")
    Q, _ = np.linalg.qr(sol.states[:, m:M + 1])
    energy = float(np.mean(sol.energies[m:M + 1]))
    A = sol.hamiltonian.matrix
    res = np.linalg.norm(A @ Q - energy * Q, axis=0)
    if np.any(res > tol * max(1.0, abs(energy))):
        raise SolverFailure("cluster vectors are not eigenvectors to tolerance", residuals=res)
    return DegenerateKernel(k, Q, m, M, energy, sol)


@dataclass(frozen=True, eq=False)
class PerturbationMatrix:
    matrix: np.ndarray
    direction: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def perturbation_matrix(kernel: DegenerateKernel, u) -> PerturbationMatrix:
    u = u.values if isinstance(u, PotentialField) else np.asarray(u, dtype=float)
    occ = kernel.solution.basis.occupation
    Q = kernel.basis
    Mu = Q.T @ ((occ @ u)[:, None] * Q)
    return PerturbationMatrix(0.5 * (Mu + Mu.T), u)


@dataclass(frozen=True)
class DiniReport:
    level: int
    cluster: tuple
    mu: np.ndarray
    right: float
    left: float
    broken_first_order: bool
    closed_form: tuple | None = None  # (right, left) from the two-level formula when D = 2

    @property
    def branch_slopes(self) -> np.ndarray:
        return self.mu


def _spread_scale(mu, u, n_particles):
    return max(float(np.max(np.abs(mu))), n_particles * float(np.max(np.abs(u))), 1e-300)


def two_level_slopes(kernel: DegenerateKernel, u) -> tuple[float, float]:
    """Right/left slopes of the lower member of a twofold cluster in closed form.

    Uses 1/2 int u (rho_a + rho_b) -/+ 1/2 sqrt((int u (rho_a - rho_b))^2 + 4 <a, U b>^2).
    """
    if kernel.dimension != 2:
        raise NotApplicable("closed form needs a twofold cluster")
    sol = kernel.solution
    a, b = kernel.basis[:, 0], kernel.basis[:, 1]
    u = np.asarray(u, dtype=float)
    grid = sol.grid
    ua = grid.integrate(u * density_of(a, sol.basis, grid).values)
    ub = grid.integrate(u * density_of(b, sol.basis, grid).values)
    cross = float(a @ ((sol.basis.occupation @ u) * b))
    root = np.sqrt((ua - ub) ** 2 + 4 * cross ** 2)
    return 0.5 * (ua + ub) - 0.5 * root, 0.5 * (ua + ub) + 0.5 * root


def dini_derivatives(sol: SpectralSolution, k: int, u, rtol: float = 1e-10) -> DiniReport:
    u = u.values if isinstance(u, PotentialField) else np.asarray(u, dtype=float)
    ker = kernel_basis(sol, k)
    mu = perturbation_matrix(ker, u).eigenvalues
    right = float(mu[k - ker.m])
    left = float(mu[ker.M - k])
    broken = bool(mu[-1] - mu[0] > rtol * _spread_scale(mu, u, sol.basis.n_particles))
    closed = None
    if ker.dimension == 2:
        lo, hi = two_level_slopes(ker, u)
        closed = (lo, hi) if k == ker.m else (hi, lo)
    return DiniReport(k, (ker.m, ker.M), mu, right, left, broken, closed)


def sphere_samples(dim: int, n_samples: int, seed: int = 0) -> np.ndarray:
    """Uniform samples on the complex unit sphere of C^dim, shape (n_samples, dim)."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, dim)) + 1j * rng.standard_normal((n_samples, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def min_max_check(kernel: DegenerateKernel, u, n_samples: int = 10000, seed: int = 0,
                  which: str = "min", batch: int = 2000) -> float:
    """Extremum of int u rho_Phi over sampled Phi = sum lambda_i psi_i, lambda on the complex unit sphere.

    Densities are formed from the full many-body vectors, not from ``M_u``.
    """
    sol = kernel.solution
    weights = sol.basis.occupation @ np.asarray(u, dtype=float)
    lam = sphere_samples(kernel.dimension, n_samples, seed)
    best = np.inf if which == "min" else -np.inf
    for start in range(0, n_samples, batch):
        phi = kernel.basis @ lam[start:start + batch].T  # dim x batch
        vals = weights @ (np.abs(phi) ** 2)
        best = min(best, vals.min()) if which == "min" else max(best, vals.max())
    return float(best)


def direction_dictionary(grid: Grid, n_modes: int = 10) -> list[tuple[str, np.ndarray]]:
    """Node indicators and low-frequency sines sin(m pi x / L), m = 1..n_modes."""
    out = []
    for g in range(grid.n_sites):
        e = np.zeros(grid.n_sites)
        e[g] = 1.0
        out.append((f"node{g}", e))
    for m in range(1, n_modes + 1):
        out.append((f"sin{m}", np.sin(m * np.pi * grid.nodes / grid.length)))
    return out


@dataclass
class BreakingReport:
    level: int
    cluster: tuple
    verdicts: list  # (label, spread, broken)

    @property
    def any_broken(self) -> bool:
        return any(b for _, _, b in self.verdicts)

    @property
    def breaking_directions(self) -> list[str]:
        return [lab for lab, _, b in self.verdicts if b]


def breaking_report(sol: SpectralSolution, k: int, directions=None, rtol: float = 1e-10) -> BreakingReport:
    """Per-direction first-order breaking verdicts for the cluster of level ``k``.

    A direction breaks the degeneracy iff ``M_u`` is not a multiple of the
    identity.  ``directions`` may be one array, a list of ``(label, array)``
    pairs, or None for the default dictionary.
    """
    ker = kernel_basis(sol, k)
    if ker.dimension < 2:
        raise NotApplicable(f"level {k} is not degenerate")
    if directions is None:
        directions = direction_dictionary(sol.grid)
    elif isinstance(directions, np.ndarray) and directions.ndim == 1:
        directions = [("u", directions)]
    verdicts = []
    for label, u in directions:
        mu = perturbation_matrix(ker, u).eigenvalues
        spread = float(mu[-1] - mu[0])
        verdicts.append((label, spread, spread > rtol * _spread_scale(mu, u, sol.basis.n_particles)))
    return BreakingReport(k, (ker.m, ker.M), verdicts)


@dataclass(frozen=True, eq=False)
class BranchTable:
    """Branch-continuous eigenpairs along a potential path.

    ``energies[s, b]`` and ``states[s][:, b]`` follow branch ``b``;
    ``sorted_energies[s]`` are the plain ascending levels; ``labels[s, j]``
    is the branch carried by sorted level ``j`` at step ``s``.
    """

    energies: np.ndarray
    sorted_energies: np.ndarray
    states: list
    labels: np.ndarray
    min_overlap: np.ndarray
    permutation_defect: np.ndarray
    grid: Grid
    basis: object

    def density(self, step: int, branch: int) -> np.ndarray:
        return density_of(self.states[step][:, branch], self.basis, self.grid).values

    def density_path(self, branch: int = 0) -> np.ndarray:
        return np.array([self.density(s, branch) for s in range(len(self.states))])


def track_branches(path, grid: Grid, n_particles: int, w: InteractionKernel | None = None,
                   k_levels: int = 4, min_overlap: float = 0.5, solutions=None,
                   checked: int | None = None) -> BranchTable:
    """Follow the lowest ``k_levels`` eigenpairs along a sequence of potentials.

    Each step is matched to the previous one by maximal overlap (assignment
    problem on ``|<phi_prev, phi_new>|``) and signs are aligned, so branches
    continue through crossings instead of being re-sorted.  Only the
    ``checked`` lowest branches (default: all) must keep an overlap of at
    least ``min_overlap``; levels above them act as a buffer that may trade
    weight with states outside the window.
    """
    sols = solutions if solutions is not None else [
        solve(grid, v, n_particles, w, k_levels=k_levels) for v in path]
    if not sols:
        raise InvalidArgument("empty path")
    first = sols[0]
    checked = first.n_levels if checked is None else checked
    states = [first.states.copy()]
    energies = [first.energies.copy()]
    labels = [np.arange(first.n_levels)]
    overlaps_min = [1.0]
    defects = [0.0]
    for sol in sols[1:]:
        prev = states[-1]
        S = prev.T @ sol.states  # branch x sorted-level
        row, col = linear_sum_assignment(-np.abs(S))
        matched = np.abs(S[row, col])
        rank = np.argsort(np.argsort(energies[-1]))
        worst = matched[rank[row] < checked].min()
        if worst < min_overlap:
            raise StepTooLarge(f"ambiguous branch matching (overlap {worst:.3f} < {min_overlap})")
        new_states = sol.states[:, col] * np.sign(S[row, col])
        states.append(new_states)
        energies.append(sol.energies[col])
        lab = np.empty_like(col)
        lab[col] = row
        labels.append(lab)
        overlaps_min.append(float(matched.min()))
        perm = np.zeros_like(S)
        perm[row, col] = np.sign(S[row, col])
        defects.append(float(np.max(np.abs(S - perm))))
    return BranchTable(np.array(energies), np.array([s.energies for s in sols]), states,
                       np.array(labels), np.array(overlaps_min), np.array(defects), grid, first.basis)


def max_density_jump(densities: np.ndarray, grid: Grid) -> float:
    if len(densities) < 2:
        return 0.0
    return max(w11_norm(b - a, grid) for a, b in zip(densities[:-1], densities[1:]))


def second_order_coefficient(sol: SpectralSolution, k: int, u) -> float:
    """t^2 coefficient of E_k(v + t u) at a non-degenerate level: -<U psi, R U psi>.

    Degenerate second order is not handled.
    """
    from .spectra import ReducedResolvent

    if sol.is_degenerate(k):
        raise NotApplicable("second-order coefficient is implemented for non-degenerate levels only")
    u = np.asarray(u, dtype=float)
    upsi = (sol.basis.occupation @ u) * sol.states[:, k]
    return float(-upsi @ ReducedResolvent(sol, k).apply(upsi))
