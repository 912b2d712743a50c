"""Potential-to-state maps and their first derivatives.

For a non-degenerate level ``k`` with state psi and energy E:

* energy derivative along u: ``h * sum(u * rho)``  (Hellmann-Feynman)
* state derivative: ``-R U psi`` with ``R`` the reduced resolvent and ``U``
  the diagonal operator ``sum_i u(x_i)``
* density response: the bilinear form ``(u, u') -> -2 <U psi, R U' psi>``

The :class:`JacobianMatrix` stores that bilinear form as an ``n x n``
matrix, so ``u @ J @ u`` is the integral of ``u`` against the density
response to ``u``.  ``J / h`` is the node-wise derivative ``d rho_g / d v_g'``
and ``J / h**2`` approximates the continuum response kernel.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .discretization import Grid, ManyBodyBasis, slater_basis, _kinetic
from .errors import DegenerateLevel, InvalidArgument
from .spectra import ReducedResolvent, SpectralSolution


@dataclass(frozen=True, eq=False)
class DensityVector:
    values: np.ndarray
    n_particles: int
    grid: Grid

    @property
    def total(self) -> float:
        return self.grid.integrate(self.values)

    def l1_norm(self) -> float:
        return l1_norm(self.values, self.grid)

    def w11_norm(self) -> float:
        return w11_norm(self.values, self.grid)

    def __sub__(self, other: "DensityVector") -> np.ndarray:
        return self.values - other.values


def l1_norm(f, grid: Grid) -> float:
    return float(grid.spacing * np.sum(np.abs(f)))


def w11_norm(f, grid: Grid) -> float:
    """Discrete W^{1,1}: h * sum(|f| + |forward difference / h|), walls included."""
    f = np.asarray(f, dtype=float)
    diffs = np.diff(np.concatenate([[0.0], f, [0.0]]))
    return float(grid.spacing * np.sum(np.abs(f)) + np.sum(np.abs(diffs)))


def _check_normalized(state):
    nrm = np.linalg.norm(state)
    if abs(nrm - 1.0) > 1e-8:
        raise InvalidArgument(f"state is not normalised (norm {nrm:.12g})")


def density_of(state, basis: ManyBodyBasis, grid: Grid) -> DensityVector:
    """rho_g = (1/h) sum over determinants containing g of |psi_S|^2."""
    state = np.asarray(state)
    _check_normalized(state)
    vals = basis.occupation.T @ np.abs(state) ** 2 / grid.spacing
    return DensityVector(np.asarray(vals).ravel(), basis.n_particles, grid)


def _require_nondegenerate(sol: SpectralSolution, k: int):
    if sol.is_degenerate(k):
        raise DegenerateLevel(k, range(sol.cluster_of(k)[0], sol.cluster_of(k)[1] + 1))


def _direction(u, n_sites):
    u = u.values if hasattr(u, "values") else np.asarray(u, dtype=float)
    if u.shape != (n_sites,):
        raise InvalidArgument(f"direction has shape {u.shape}, expected ({n_sites},)")
    return u


def level_density(sol: SpectralSolution, k: int) -> DensityVector:
    return density_of(sol.states[:, k], sol.basis, sol.grid)


def energy_differential(sol: SpectralSolution, k: int, u) -> float:
    _require_nondegenerate(sol, k)
    u = _direction(u, sol.grid.n_sites)
    rho = level_density(sol, k)
    return sol.grid.integrate(u * rho.values)


def _apply_u(sol: SpectralSolution, u, psi):
    return (sol.basis.occupation @ u) * psi


def state_differential(sol: SpectralSolution, k: int, u, rr: ReducedResolvent | None = None) -> np.ndarray:
    """-(H - E_k)^{-1}_perp (sum_i u(x_i)) psi_k, orthogonal to psi_k."""
    _require_nondegenerate(sol, k)
    u = _direction(u, sol.grid.n_sites)
    rr = rr or ReducedResolvent(sol, k)
    return -rr.apply(_apply_u(sol, u, sol.states[:, k]))


@dataclass(frozen=True, eq=False)
class JacobianMatrix:
    matrix: np.ndarray
    level: int
    n_particles: int
    grid: Grid
    potential: np.ndarray | None = None

    @property
    def response(self) -> np.ndarray:
        """d rho_g / d v_g' (node-wise derivative)."""
        return self.matrix / self.grid.spacing

    @property
    def kernel(self) -> np.ndarray:
        return self.matrix / self.grid.spacing ** 2

    def quadratic_form(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ self.matrix @ u)

    def apply(self, u) -> np.ndarray:
        """Density response (node values) to the potential change ``u``."""
        return self.response @ np.asarray(u, dtype=float)


def density_jacobian(sol: SpectralSolution, k: int = 0, rr: ReducedResolvent | None = None) -> JacobianMatrix:
    _require_nondegenerate(sol, k)
    psi = sol.states[:, k]
    occ = sol.basis.occupation
    B = occ.multiply(psi[:, None]).toarray()  # column g: n_g psi
    rr = rr or ReducedResolvent(sol, k)
    X = rr.apply(B)
    J = -2.0 * B.T @ X
    return JacobianMatrix(J, k, sol.basis.n_particles, sol.grid, sol.hamiltonian.potential)


def quadratic_form_split(sol: SpectralSolution, k: int, u) -> tuple[float, float]:
    """Positive/negative-part split of the density-response quadratic form.

    Needs the complete spectrum.  Returns ``(-2 ||A_+^{-1/2} U psi||^2,
    2 ||A_-^{-1/2} U psi||^2)`` where ``A = (H - E_k)`` restricted to the
    complement of psi_k; their sum is ``u @ J @ u``.
    """
    if not sol.complete:
        raise InvalidArgument("the spectral split needs the complete spectrum (use solve_all)")
    _require_nondegenerate(sol, k)
    u = _direction(u, sol.grid.n_sites)
    coeff = sol.states.T @ _apply_u(sol, u, sol.states[:, k])
    gaps = sol.energies - sol.energies[k]
    above = gaps > 0
    below = gaps < 0
    above[k] = below[k] = False
    pos = float(np.sum(coeff[above] ** 2 / gaps[above]))
    neg = float(np.sum(coeff[below] ** 2 / -gaps[below]))
    return -2.0 * pos, 2.0 * neg


def dgamma_trace_check(sol: SpectralSolution, k: int, u, rr: ReducedResolvent | None = None) -> float:
    """Trace of the density-matrix derivative d psi psi^T + psi d psi^T."""
    dpsi = state_differential(sol, k, u, rr)
    psi = sol.states[:, k]
    return float(2.0 * psi @ dpsi)


def dgamma_apply(sol: SpectralSolution, k: int, u, x, rr: ReducedResolvent | None = None) -> np.ndarray:
    """(d gamma . u) x without forming the rank-two matrix."""
    dpsi = state_differential(sol, k, u, rr)
    psi = sol.states[:, k]
    return dpsi * (psi @ x) + psi * (dpsi @ x)


# -- projectors and projective distances --

@dataclass(frozen=True)
class ProjectorReport:
    trace_norm: float
    operator_norm: float
    distance: float
    overlap: float


def projector_report(psi, phi) -> ProjectorReport:
    """Closed-form norms of P_psi - P_phi with P_x = |x><x|.

    trace norm = sqrt((|psi|^2 + |phi|^2)^2 - 4 |<psi, phi>|^2), operator norm =
    trace/2 + ||psi|^2 - |phi|^2| / 2, and the ray distance
    D = min over phases of |psi - e^{i theta} phi|.
    """
    psi = np.asarray(psi)
    phi = np.asarray(phi)
    a = float(np.vdot(psi, psi).real)
    b = float(np.vdot(phi, phi).real)
    if a == 0 or b == 0:
        raise InvalidArgument("projector of a zero vector")
    ov = float(abs(np.vdot(psi, phi)))
    trace = float(np.sqrt(max((a + b) ** 2 - 4 * ov * ov, 0.0)))
    op = 0.5 * trace + 0.5 * abs(a - b)
    dist = float(np.sqrt(max(a + b - 2 * ov, 0.0)))
    return ProjectorReport(trace, op, dist, ov)


def h1_gram(basis: ManyBodyBasis, grid: Grid):
    """Operator ``1 + sum_i (-Laplacian_i)`` whose quadratic form is the discrete H^1 norm squared."""
    K = _kinetic(grid, basis.n_particles)
    return lambda x: x + K @ x


def h1_norm(psi, basis: ManyBodyBasis, grid: Grid) -> float:
    """sqrt(||psi||^2 + sum_i ||D_i psi||^2) with forward differences and Dirichlet walls."""
    return float(np.sqrt(np.vdot(psi, h1_gram(basis, grid)(psi)).real))


def h1_distance(psi, phi, basis: ManyBodyBasis, grid: Grid) -> float:
    """Ray distance in H^1: min over phases of ||psi - e^{i theta} phi||_{H^1}."""
    G = h1_gram(basis, grid)
    a = np.vdot(psi, G(psi)).real
    b = np.vdot(phi, G(phi)).real
    c = abs(np.vdot(psi, G(phi)))
    return float(np.sqrt(max(a + b - 2 * c, 0.0)))


def density_lipschitz_ratio(psi, phi, basis: ManyBodyBasis, grid: Grid) -> float:
    """||rho_psi - rho_phi||_{W11} / ((||psi||_{H1} + ||phi||_{H1}) D_1(psi, phi)); 0 on a common ray."""
    d1 = h1_distance(psi, phi, basis, grid)
    if d1 <= 1e-14 * max(1.0, h1_norm(psi, basis, grid)):
        return 0.0
    drho = density_of(psi, basis, grid).values - density_of(phi, basis, grid).values
    return w11_norm(drho, grid) / ((h1_norm(psi, basis, grid) + h1_norm(phi, basis, grid)) * d1)


def richardson_slope(sol: SpectralSolution, k: int, u, t: float = 1e-3) -> float:
    """Finite-difference slope of E_k along u, central differences at t and t/2 combined by Richardson."""
    from .spectra import solve

    H = sol.hamiltonian
    v = np.asarray(H.potential, dtype=float)
    u = np.asarray(u, dtype=float)
    N = sol.basis.n_particles

    def energy(s):
        return solve(sol.grid, v + s * u, N, H.interaction, k_levels=sol.n_levels).energies[k]

    d1 = (energy(t) - energy(-t)) / (2 * t)
    d2 = (energy(t / 2) - energy(-t / 2)) / t
    return float((4 * d2 - d1) / 3)


def maps_bundle(sol: SpectralSolution, k: int = 0, u=None, fd_step: float = 1e-3) -> dict:
    """Energy, gaps, density and a Hellmann-Feynman check against finite differences, for the ``maps`` verb."""
    rho = level_density(sol, k)
    lo, hi = sol.cluster_of(k)
    out = {
        "level": k,
        "energy": float(sol.energies[k]),
        "gap_below": float(sol.energies[lo] - sol.energies[lo - 1]) if lo > 0 else None,
        "gap_above": float(sol.energies[hi + 1] - sol.energies[hi]) if hi + 1 < sol.n_levels else None,
        "particle_number": rho.total,
        "degenerate": bool(sol.is_degenerate(k)),
    }
    if u is not None and not sol.is_degenerate(k):
        analytic = energy_differential(sol, k, u)
        fd = richardson_slope(sol, k, u, fd_step)
        out["hf_slope"] = analytic
        out["fd_slope"] = fd
        out["hf_relative_error"] = abs(analytic - fd) / max(abs(analytic), 1e-300)
    return out


def density_csv(rho: DensityVector) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "rho"])
    for x, r in zip(rho.grid.nodes, rho.values):
        w.writerow([f"{x:.15g}", f"{r:.15g}"])
    return buf.getvalue()
