"""Grid, potentials, interactions and the antisymmetric N-body Hamiltonian.

Everything lives on a uniform 1D grid with Dirichlet walls at 0 and L.  The
N-fermion space is spanned by Slater determinants of grid sites, indexed by
strictly increasing site tuples in lexicographic order.  Integrals are
approximated by ``h * sum``; wavefunctions are normalised with the counting
measure on determinants.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument


@dataclass(frozen=True)
class Grid:
    n_sites: int
    length: float

    @property
    def spacing(self) -> float:
        return self.length / (self.n_sites + 1)

    h = spacing

    @property
    def nodes(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.n_sites + 1)

    def integrate(self, f) -> float:
        return float(self.spacing * np.sum(f))


def build_grid(n_sites: int, length: float = 1.0) -> Grid:
    if int(n_sites) != n_sites or n_sites < 2:
        raise InvalidArgument(f"need at least 2 interior sites, got {n_sites!r}")
    if not (length > 0 and math.isfinite(length)):
        raise InvalidArgument(f"length must be positive, got {length!r}")
    return Grid(int(n_sites), float(length))


@dataclass(frozen=True, eq=False)
class PotentialField:
    values: np.ndarray
    label: str = "v"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(vals)):
            raise InvalidArgument(f"potential {self.label!r} has non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    def shifted(self, c: float) -> "PotentialField":
        return PotentialField(self.values + c, f"{self.label}{c:+g}")

    def zero_mean(self) -> "PotentialField":
        """Representative of the gauge class with vanishing node mean."""
        return PotentialField(self.values - self.values.mean(), self.label)

    def __add__(self, other):
        other_vals = other.values if isinstance(other, PotentialField) else np.asarray(other, float)
        return PotentialField(self.values + other_vals, self.label)

    @classmethod
    def from_function(cls, grid: Grid, f: Callable, label: str = "v") -> "PotentialField":
        return cls(np.asarray(f(grid.nodes), dtype=float) * np.ones(grid.n_sites), label)

    @classmethod
    def zeros(cls, grid: Grid, label: str = "zero") -> "PotentialField":
        return cls(np.zeros(grid.n_sites), label)


_INTERACTION_KINDS = ("none", "soft_coulomb", "gaussian", "custom")


@dataclass(frozen=True)
class InteractionKernel:
    """Even pair interaction w(x_i - x_j), sampled on node displacements.

    ``params`` is a tuple: ``(a, strength)`` for soft Coulomb
    ``strength / sqrt(r^2 + a^2)``, ``(sigma, amplitude)`` for a Gaussian and
    the profile values at displacement indices ``0, 1, 2, ...`` for custom.
    """

    kind: str = "none"
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _INTERACTION_KINDS:
            raise InvalidArgument(f"unknown interaction kind {self.kind!r}; choose from {_INTERACTION_KINDS}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind == "soft_coulomb":
            a, strength = self.params
            if a <= 0 or strength < 0:
                raise InvalidArgument("soft Coulomb needs a > 0 and strength >= 0")
        elif self.kind == "gaussian":
            sigma, amp = self.params
            if sigma <= 0 or amp < 0:
                raise InvalidArgument("gaussian needs sigma > 0 and amplitude >= 0")

    @property
    def is_zero(self) -> bool:
        if self.kind == "none":
            return True
        if self.kind == "custom":
            return not any(self.params)
        return self.params[1] == 0.0

    def profile(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind == "none":
            return np.zeros_like(r)
        if self.kind == "soft_coulomb":
            a, strength = self.params
            return strength / np.sqrt(r * r + a * a)
        if self.kind == "gaussian":
            sigma, amp = self.params
            return amp * np.exp(-0.5 * (r / sigma) ** 2)
        raise InvalidArgument("custom kernels are defined on displacement indices; use sample()")

    def sample(self, grid: Grid) -> np.ndarray:
        """Profile at displacements ``d * h`` for ``d = 0 .. n_sites - 1``."""
        if self.kind == "custom":
            vals = np.zeros(grid.n_sites)
            m = min(len(self.params), grid.n_sites)
            vals[:m] = self.params[:m]
            return vals
        return self.profile(grid.spacing * np.arange(grid.n_sites))

    @classmethod
    def none(cls) -> "InteractionKernel":
        return cls("none")

    @classmethod
    def soft_coulomb(cls, a: float = 0.1, strength: float = 1.0) -> "InteractionKernel":
        return cls("soft_coulomb", (a, strength))

    @classmethod
    def gaussian(cls, sigma: float, amplitude: float = 1.0) -> "InteractionKernel":
        return cls("gaussian", (sigma, amplitude))

    @classmethod
    def custom(cls, values: Sequence[float]) -> "InteractionKernel":
        return cls("custom", tuple(values))


class ManyBodyBasis:
    """Slater determinants of ``n_particles`` fermions on ``n_sites`` sites.

    ``determinants[i]`` is the strictly increasing tuple of occupied sites
    (0-based) of basis vector ``i``; rows are in lexicographic order.
    """

    def __init__(self, n_sites: int, n_particles: int):
        self.n_sites = int(n_sites)
        self.n_particles = int(n_particles)
        combos = itertools.combinations(range(self.n_sites), self.n_particles)
        dets = np.fromiter(itertools.chain.from_iterable(combos), dtype=np.int64)
        self.determinants = dets.reshape(-1, self.n_particles)
        self.determinants.setflags(write=False)
        self._weights = self.n_sites ** np.arange(self.n_particles - 1, -1, -1, dtype=np.int64)
        self._keys = self.determinants @ self._weights

    @property
    def dimension(self) -> int:
        return self.determinants.shape[0]

    def __len__(self):
        return self.dimension

    def __repr__(self):
        return f"ManyBodyBasis(n_sites={self.n_sites}, n_particles={self.n_particles}, dim={self.dimension})"

    def index_of(self, sites) -> int:
        sites = np.asarray(sites, dtype=np.int64)
        idx = self.indices_of(sites[None, :])[0]
        if idx < 0:
            raise InvalidArgument(f"{tuple(sites)} is not a basis determinant")
        return int(idx)

    def indices_of(self, tuples: np.ndarray) -> np.ndarray:
        """Vectorised lookup; returns -1 for rows that are not basis tuples."""
        keys = np.asarray(tuples, dtype=np.int64) @ self._weights
        pos = np.searchsorted(self._keys, keys)
        pos_c = np.minimum(pos, self.dimension - 1)
        ok = self._keys[pos_c] == keys
        sorted_rows = np.all(np.diff(tuples, axis=1) > 0, axis=1) if tuples.shape[1] > 1 else np.ones(len(keys), bool)
        return np.where(ok & sorted_rows, pos_c, -1)

    def tuple_of(self, index: int) -> tuple:
        return tuple(int(s) for s in self.determinants[index])

    @functools.cached_property
    def occupation(self) -> sp.csr_matrix:
        """Sparse ``dim x n_sites`` 0/1 matrix, ``occupation[S, g] = [g in S]``."""
        rows = np.repeat(np.arange(self.dimension), self.n_particles)
        cols = self.determinants.ravel()
        data = np.ones(rows.size)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.dimension, self.n_sites))


@functools.lru_cache(maxsize=16)
def slater_basis(n_sites: int, n_particles: int) -> ManyBodyBasis:
    if n_particles < 1 or n_particles > n_sites:
        raise InvalidArgument(f"need 1 <= N <= n_sites, got N={n_particles}, n_sites={n_sites}")
    return ManyBodyBasis(n_sites, n_particles)


def one_body_laplacian(grid: Grid) -> sp.csr_matrix:
    n, h2 = grid.n_sites, grid.spacing ** 2
    off = -np.ones(n - 1) / h2
    return sp.diags([off, np.full(n, 2.0 / h2), off], [-1, 0, 1], format="csr")


def laplacian_eigenvalues(grid: Grid) -> np.ndarray:
    """Closed-form spectrum (2/h^2)(1 - cos(k pi/(n+1))), k = 1..n, ascending."""
    n, h = grid.n_sites, grid.spacing
    k = np.arange(1, n + 1)
    return (2.0 / h ** 2) * (1.0 - np.cos(k * np.pi / (n + 1)))


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    matrix: sp.csr_matrix
    grid: Grid
    basis: ManyBodyBasis
    v_label: str = "v"
    w_kind: str = "none"
    potential: np.ndarray | None = field(default=None, repr=False)
    interaction: InteractionKernel | None = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_particles(self) -> int:
        return self.basis.n_particles

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, x):
        return self.matrix @ x


@functools.lru_cache(maxsize=16)
def _kinetic(grid: Grid, n_particles: int) -> sp.csr_matrix:
    basis = slater_basis(grid.n_sites, n_particles)
    dets = basis.determinants
    dim, npart = dets.shape
    h2 = grid.spacing ** 2
    rows, cols, vals = [], [], []
    for i in range(npart):
        moved = dets.copy()
        moved[:, i] += 1
        ok = moved[:, i] < grid.n_sites
        if i + 1 < npart:
            ok &= moved[:, i] != dets[:, i + 1]
        src = np.nonzero(ok)[0]
        dst = basis.indices_of(moved[src])
        # a nearest-neighbour hop crosses no occupied site, so the
        # Jordan-Wigner string is +1 and ordering is preserved
        rows.append(src)
        cols.append(dst)
        vals.append(np.full(src.size, -1.0 / h2))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
    diag = sp.diags(np.full(dim, 2.0 * npart / h2))
    return (off + off.T + diag).tocsr()


@functools.lru_cache(maxsize=16)
def _interaction_diagonal(grid: Grid, n_particles: int, w: InteractionKernel) -> np.ndarray:
    basis = slater_basis(grid.n_sites, n_particles)
    dets = basis.determinants
    out = np.zeros(basis.dimension)
    if w.is_zero or n_particles < 2:
        return out
    prof = w.sample(grid)
    for i in range(n_particles):
        for j in range(i + 1, n_particles):
            out += prof[np.abs(dets[:, j] - dets[:, i])]
    out.setflags(write=False)
    return out


def _as_values(u, n_sites: int) -> np.ndarray:
    vals = u.values if isinstance(u, PotentialField) else np.asarray(u, dtype=float)
    if vals.shape != (n_sites,):
        raise InvalidArgument(f"potential has shape {vals.shape}, grid has {n_sites} sites")
    return vals


def assemble_hamiltonian(grid: Grid, basis: ManyBodyBasis, v, w: InteractionKernel | None = None) -> HamiltonianMatrix:
    """H_N(v) = sum_i (-Laplacian_i) + sum_{i<j} w(x_i - x_j) + sum_i v(x_i)."""
    w = w or InteractionKernel.none()
    if basis.n_sites != grid.n_sites:
        raise InvalidArgument(f"basis has {basis.n_sites} sites, grid has {grid.n_sites}")
    vals = _as_values(v, grid.n_sites)
    diag = basis.occupation @ vals + _interaction_diagonal(grid, basis.n_particles, w)
    mat = (_kinetic(grid, basis.n_particles) + sp.diags(diag)).tocsr()
    label = v.label if isinstance(v, PotentialField) else "v"
    return HamiltonianMatrix(mat, grid, basis, label, w.kind, vals.copy(), w)


def hamiltonian(grid: Grid, v, n_particles: int, w: InteractionKernel | None = None) -> HamiltonianMatrix:
    """Shorthand for :func:`assemble_hamiltonian` with the cached Slater basis."""
    return assemble_hamiltonian(grid, slater_basis(grid.n_sites, n_particles), v, w)


def multiplication_operator(basis: ManyBodyBasis, u) -> sp.dia_matrix:
    """Diagonal operator sum_i u(x_i) on the determinant basis."""
    vals = _as_values(u, basis.n_sites)
    return sp.diags(basis.occupation @ vals)


def export_triplets(H: HamiltonianMatrix | sp.spmatrix, path) -> None:
    """Write the nonzero entries as ``row col value`` lines (0-based)."""
    mat = H.matrix if isinstance(H, HamiltonianMatrix) else H
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {mat.shape[0]} {mat.shape[1]} {coo.nnz}\n")
        for r, c, x in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {x:.17g}\n")


def read_triplets(path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        shape = (int(header[0]), int(header[1]))
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)


# -- potential / interaction specs (key-value dictionaries from config files) --

def _indicator(x, lo, hi):
    return ((x >= lo) & (x <= hi)).astype(float)


def potential_from_spec(grid: Grid, spec: dict) -> PotentialField:
    """Build a potential from ``kind`` plus parameters.

    Supported kinds: ``zero``, ``constant`` (value), ``well`` (depth, lo, hi),
    ``double_well`` (depth, lo1, hi1, lo2, hi2), ``harmonic`` (omega, center),
    ``sine`` (amplitude, mode), ``values`` (comma separated node values).
    Positions are absolute coordinates in (0, L).
    """
    kind = str(spec.get("kind", "zero")).strip()
    x, L = grid.nodes, grid.length
    get = lambda key, default=None: float(spec[key]) if key in spec else default
    if kind == "zero":
        vals = np.zeros(grid.n_sites)
    elif kind == "constant":
        vals = np.full(grid.n_sites, get("value", 0.0))
    elif kind == "well":
        vals = -get("depth") * _indicator(x, get("lo", 0.4 * L), get("hi", 0.6 * L))
    elif kind == "double_well":
        vals = -get("depth") * (
            _indicator(x, get("lo1", 0.15 * L), get("hi1", 0.35 * L))
            + get("ratio", 1.0) * _indicator(x, get("lo2", 0.65 * L), get("hi2", 0.85 * L))
        )
    elif kind == "harmonic":
        vals = get("omega", 1.0) ** 2 * (x - get("center", L / 2)) ** 2
    elif kind == "sine":
        vals = get("amplitude", 1.0) * np.sin(get("mode", 1.0) * np.pi * x / L)
    elif kind == "values":
        raw = spec["values"]
        vals = np.array([float(t) for t in str(raw).replace(",", " ").split()]) if isinstance(raw, str) else np.asarray(raw, float)
        if vals.size != grid.n_sites:
            raise InvalidArgument(f"'values' has {vals.size} entries, grid has {grid.n_sites}")
    else:
        raise InvalidArgument(f"unknown potential kind {kind!r}")
    return PotentialField(vals, spec.get("label", kind))


def interaction_from_spec(spec: dict) -> InteractionKernel:
    kind = str(spec.get("kind", "none")).strip()
    if kind == "none":
        return InteractionKernel.none()
    if kind == "soft_coulomb":
        return InteractionKernel.soft_coulomb(float(spec.get("a", 0.1)), float(spec.get("strength", 1.0)))
    if kind == "gaussian":
        return InteractionKernel.gaussian(float(spec.get("sigma", 0.1)), float(spec.get("amplitude", 1.0)))
    if kind == "custom":
        raw = spec["values"]
        vals = [float(t) for t in str(raw).replace(",", " ").split()] if isinstance(raw, str) else list(raw)
        return InteractionKernel.custom(vals)
    raise InvalidArgument(f"unknown interaction kind {kind!r}")
