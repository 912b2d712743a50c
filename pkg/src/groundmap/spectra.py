"""Low-lying eigenpairs, degeneracy clusters and reduced resolvents."""

from __future__ import annotations

import csv
import functools
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import Grid, HamiltonianMatrix, InteractionKernel, hamiltonian
from .errors import InvalidArgument, SolverFailure

DEG_TOL = 1e-8
# below this dimension the full dense spectrum is cheaper than ARPACK
DENSE_MAX = 500


def _spectral_scale(energies: np.ndarray) -> float:
    if energies.size == 0:
        return 1.0
    span = float(energies[-1] - energies[0])
    if span > 0:
        return span
    return max(1.0, float(np.max(np.abs(energies))))


def detect_clusters(energies, deg_tol: float = DEG_TOL, scale: float | None = None):
    """Partition ascending levels into maximal runs of (numerically) equal energies.

    Two consecutive levels belong to the same run when their gap is at most
    ``deg_tol * scale``; ``scale`` defaults to the spectral span of the
    levels.  Returns ``(clusters, m, M)`` where ``clusters`` lists ``(first,
    last)`` index pairs and ``m[k]``, ``M[k]`` give the bounds of the run
    containing level ``k``.
    """
    if isinstance(energies, SpectralSolution):
        energies = energies.energies
    e = np.asarray(energies, dtype=float)
    if np.any(np.diff(e) < -1e-12 * _spectral_scale(e)):
        raise InvalidArgument("energies must be ascending")
    thresh = deg_tol * (_spectral_scale(e) if scale is None else scale)
    clusters = []
    start = 0
    for i in range(1, e.size + 1):
        if i == e.size or e[i] - e[i - 1] > thresh:
            clusters.append((start, i - 1))
            start = i
    m = np.empty(e.size, dtype=int)
    M = np.empty(e.size, dtype=int)
    for lo, hi in clusters:
        m[lo:hi + 1] = lo
        M[lo:hi + 1] = hi
    return clusters, m, M


@dataclass(frozen=True, eq=False)
class SpectralSolution:
    energies: np.ndarray
    states: np.ndarray
    residual_norms: np.ndarray
    hamiltonian: HamiltonianMatrix = field(repr=False)
    deg_tol: float = DEG_TOL
    complete: bool = False

    @functools.cached_property
    def _partition(self):
        return detect_clusters(self.energies, self.deg_tol)

    @property
    def clusters(self) -> list[tuple[int, int]]:
        return self._partition[0]

    @property
    def m(self) -> np.ndarray:
        return self._partition[1]

    @property
    def M(self) -> np.ndarray:
        return self._partition[2]

    @property
    def n_levels(self) -> int:
        return self.energies.size

    def cluster_of(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.n_levels:
            raise InvalidArgument(f"level {k} outside computed range 0..{self.n_levels - 1}")
        return int(self.m[k]), int(self.M[k])

    def cluster_closed(self, k: int) -> bool:
        """False when the cluster of ``k`` touches the last computed level and may continue above it."""
        return self.complete or self.cluster_of(k)[1] < self.n_levels - 1

    def is_degenerate(self, k: int) -> bool:
        lo, hi = self.cluster_of(k)
        return hi > lo or not self.cluster_closed(k)

    def gaps(self):
        """Per-cluster (gap_below, gap_above); NaN where the neighbour was not computed."""
        out = []
        for lo, hi in self.clusters:
            below = self.energies[lo] - self.energies[lo - 1] if lo > 0 else np.nan
            above = self.energies[hi + 1] - self.energies[hi] if hi + 1 < self.n_levels else np.nan
            out.append((below, above))
        return out

    @property
    def grid(self) -> Grid:
        return self.hamiltonian.grid

    @property
    def basis(self):
        return self.hamiltonian.basis

    def state(self, k: int) -> np.ndarray:
        return self.states[:, k]


def _fix_phase(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _lower_bound(H: HamiltonianMatrix) -> float:
    # Gershgorin bound on the spectrum
    A = H.matrix
    diag = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min(diag - off))


def solve_lowest(H: HamiltonianMatrix, k_levels: int, tol: float = 1e-9, seed: int = 0,
                 deg_tol: float = DEG_TOL, dense: bool | None = None) -> SpectralSolution:
    """Lowest ``k_levels`` eigenpairs of ``H``.

    ``tol`` bounds the residual ``||H phi - E phi||`` relative to
    ``max(1, |E|)``.  Small problems go through a dense solver, larger ones
    through shift-invert Lanczos (ARPACK) with a start vector drawn from
    ``seed``.  The returned states are orthonormal, Rayleigh-Ritz refined
    and sign fixed so that their largest component is positive.
    """
    dim = H.dimension
    if not 1 <= k_levels <= dim:
        raise InvalidArgument(f"k_levels={k_levels} must lie in 1..{dim}")
    if tol <= 0:
        raise InvalidArgument("tol must be positive")
    if dense is None:
        dense = dim <= DENSE_MAX or k_levels >= dim - 1
    A = H.matrix
    if dense:
        vals, vecs = sla.eigh(A.toarray(), subset_by_index=[0, k_levels - 1])
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(dim)
        sigma = _lower_bound(H) - 1.0
        try:
            vals, vecs = spla.eigsh(A.tocsc(), k=k_levels, sigma=sigma, which="LM", v0=v0, tol=0,
                                    maxiter=max(1000, 20 * dim))
        except spla.ArpackNoConvergence as exc:
            raise SolverFailure(f"ARPACK did not converge: {exc}", residuals=None) from exc
        order = np.argsort(vals)
        vecs = vecs[:, order]
        # Rayleigh-Ritz on the returned span keeps clusters exactly orthonormal
        Q, _ = np.linalg.qr(vecs)
        small = Q.T @ (A @ Q)
        vals, rot = np.linalg.eigh(0.5 * (small + small.T))
        vecs = Q @ rot
    vecs = _fix_phase(vecs)
    res = np.linalg.norm(A @ vecs - vecs * vals, axis=0)
    bound = tol * np.maximum(1.0, np.abs(vals))
    if np.any(res > bound):
        raise SolverFailure(f"residuals {res.max():.3e} exceed tolerance", residuals=res)
    return SpectralSolution(vals, vecs, res, H, deg_tol, complete=(k_levels == dim))


def solve(grid: Grid, v, n_particles: int, w: InteractionKernel | None = None, k_levels: int = 4,
          **kwargs) -> SpectralSolution:
    """Assemble H_N(v) and return its lowest levels."""
    H = hamiltonian(grid, v, n_particles, w)
    return solve_lowest(H, min(k_levels, H.dimension), **kwargs)


def solve_all(H: HamiltonianMatrix, deg_tol: float = DEG_TOL) -> SpectralSolution:
    return solve_lowest(H, H.dimension, tol=1e-8, deg_tol=deg_tol, dense=True)


class ReducedResolvent:
    """(H - E_k)^{-1} on the orthogonal complement of the cluster of level ``k``; zero on the cluster.

    Two application routes: the spectral sum over computed levels (exact only
    when the solution holds the complete spectrum) and a bordered sparse
    linear solve, which is exact for any solution.  ``method='auto'`` uses the
    spectral sum when complete and the linear solve otherwise.
    """

    def __init__(self, sol: SpectralSolution, k: int, method: str = "auto"):
        if method not in ("auto", "spectral", "solve"):
            raise InvalidArgument(f"unknown method {method!r}")
        self.sol = sol
        self.k = k
        self.lo, self.hi = sol.cluster_of(k)
        self.energy = float(np.mean(sol.energies[self.lo:self.hi + 1]))
        self.cluster_basis = sol.states[:, self.lo:self.hi + 1]
        if method == "auto":
            method = "spectral" if sol.complete else "solve"
        self.method = method
        self._lu = None

    def _project(self, x):
        Q = self.cluster_basis
        return x - Q @ (Q.T @ x)

    def _spectral(self, rhs):
        sol = self.sol
        mask = np.ones(sol.n_levels, dtype=bool)
        mask[self.lo:self.hi + 1] = False
        phi = sol.states[:, mask]
        denom = sol.energies[mask] - self.energy
        coeff = phi.T @ rhs
        coeff = coeff / (denom[:, None] if coeff.ndim == 2 else denom)
        return phi @ coeff

    def _factor(self):
        if self._lu is None:
            A = self.sol.hamiltonian.matrix
            Q = sp.csr_matrix(self.cluster_basis)
            D = Q.shape[1]
            shifted = A - self.energy * sp.identity(A.shape[0], format="csr")
            border = sp.bmat([[shifted, Q], [Q.T, sp.csr_matrix((D, D))]], format="csc")
            self._lu = spla.splu(border)
        return self._lu

    def _solve(self, rhs):
        lu = self._factor()
        D = self.cluster_basis.shape[1]
        proj = self._project(rhs)
        pad = np.zeros((D,) + proj.shape[1:])
        x = lu.solve(np.concatenate([proj, pad], axis=0))[: proj.shape[0]]
        return self._project(x)

    def apply(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.sol.hamiltonian.dimension:
            raise InvalidArgument("right-hand side dimension does not match the Hamiltonian")
        return self._spectral(rhs) if self.method == "spectral" else self._solve(rhs)

    __call__ = apply


def reduced_resolvent_apply(rr: ReducedResolvent, rhs) -> np.ndarray:
    return rr.apply(rhs)


def asymptotic_value(v) -> float:
    """Grid stand-in for the value of ``v`` at infinity: the lower of the two wall-adjacent nodes."""
    vals = v.values if hasattr(v, "values") else np.asarray(v, dtype=float)
    return float(min(vals[0], vals[-1]))


def binding_threshold(grid: Grid, v, w: InteractionKernel | None, n_particles: int, **kwargs) -> float:
    """HVZ proxy for the dissociation threshold of ``n_particles``.

    Ground energy of ``n_particles - 1`` particles (0 for a single particle)
    plus the energy :func:`asymptotic_value` of the escaping particle.  For
    potentials vanishing next to the walls the second term is zero; keeping
    it makes the threshold shift by ``N c`` under ``v -> v + c``.
    """
    if n_particles < 1:
        raise InvalidArgument("need at least one particle")
    v_inf = asymptotic_value(v)
    if n_particles == 1:
        return v_inf
    return float(solve(grid, v, n_particles - 1, w, k_levels=1, **kwargs).energies[0]) + v_inf


def spectrum_csv(sol: SpectralSolution, path=None) -> str:
    """CSV rows: level, energy, cluster_id, gap_below, gap_above, residual."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["level", "energy", "cluster_id", "gap_below", "gap_above", "residual"])
    gaps = sol.gaps()
    for cid, (lo, hi) in enumerate(sol.clusters):
        for k in range(lo, hi + 1):
            writer.writerow([k, f"{sol.energies[k]:.15g}", cid, f"{gaps[cid][0]:.15g}",
                             f"{gaps[cid][1]:.15g}", f"{sol.residual_norms[k]:.3e}"])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
