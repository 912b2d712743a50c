import itertools
from math import comb, factorial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from groundmap.discretization import (InteractionKernel, PotentialField, assemble_hamiltonian, build_grid,
                                      hamiltonian, interaction_from_spec, laplacian_eigenvalues,
                                      multiplication_operator, one_body_laplacian, potential_from_spec,
                                      read_triplets, export_triplets, slater_basis)
from groundmap.errors import InvalidArgument


def test_grid_three_sites():
    g = build_grid(3, 1.0)
    assert g.spacing == 0.25
    np.testing.assert_allclose(g.nodes, [0.25, 0.5, 0.75])


def test_grid_200_sites():
    assert build_grid(200, 1.0).spacing == pytest.approx(1 / 201, rel=1e-15)


@pytest.mark.parametrize("args", [(1, 1.0), (0, 1.0), (-3, 1.0), (5, 0.0), (5, -1.0), (2.5, 1.0)])
def test_grid_rejects_bad_input(args):
    with pytest.raises(InvalidArgument):
        build_grid(*args)


def test_laplacian_n3_closed_form():
    g = build_grid(3, 1.0)
    K = one_body_laplacian(g).toarray()
    k = np.arange(1, 4)
    expected = (2 / 0.25 ** 2) * (1 - np.cos(k * np.pi / 4))
    np.testing.assert_allclose(np.linalg.eigvalsh(K), expected, rtol=1e-13)
    np.testing.assert_array_equal(K, K.T)
    assert K[0, 0] == 2 / 0.0625 and K[0, 1] == -1 / 0.0625


def test_laplacian_ground_tends_to_pi_squared():
    errs = []
    for n in (50, 100, 200):
        errs.append(laplacian_eigenvalues(build_grid(n, 1.0))[0] - np.pi ** 2)
    assert abs(errs[-1]) < 3e-4
    # second order: roughly a factor four per halving of h
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_slater_basis_small():
    b = slater_basis(4, 2)
    assert [b.tuple_of(i) for i in range(b.dimension)] == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def test_slater_basis_singletons():
    b = slater_basis(7, 1)
    assert b.dimension == 7
    assert [b.tuple_of(i) for i in range(7)] == [(i,) for i in range(7)]


def test_slater_basis_round_trip_all():
    b = slater_basis(20, 3)
    assert b.dimension == comb(20, 3) == 1140
    brute = list(itertools.combinations(range(20), 3))
    assert [b.tuple_of(i) for i in range(b.dimension)] == brute
    np.testing.assert_array_equal(b.indices_of(np.array(brute)), np.arange(1140))
    assert all(b.index_of(t) == i for i, t in enumerate(brute))


def test_slater_basis_rejects_too_many_particles():
    with pytest.raises(InvalidArgument):
        slater_basis(3, 4)
    with pytest.raises(InvalidArgument):
        slater_basis(3, 0)


def test_index_of_unsorted_tuple_rejected():
    b = slater_basis(5, 2)
    with pytest.raises(InvalidArgument):
        b.index_of((3, 1))


def test_single_particle_hamiltonian_ignores_interaction(rng):
    g = build_grid(9, 2.0)
    v = rng.normal(size=9)
    H = hamiltonian(g, v, 1, InteractionKernel.soft_coulomb(0.2, 5.0)).toarray()
    expected = one_body_laplacian(g).toarray() + np.diag(v)
    np.testing.assert_array_equal(H, expected)


def test_two_free_fermions_ground_energy():
    g = build_grid(6, 1.0)
    lam = laplacian_eigenvalues(g)
    E = np.linalg.eigvalsh(hamiltonian(g, np.zeros(6), 2).toarray())
    assert E[0] == pytest.approx(lam[0] + lam[1], rel=1e-12)


def _tensor_hamiltonian(g, v, w, N):
    """Dense H1 (x) I (x) ... + pair terms on the full product space."""
    n = g.n_sites
    H1 = one_body_laplacian(g).toarray() + np.diag(v)
    I = np.eye(n)
    H = np.zeros((n ** N,) * 2)
    for i in range(N):
        term = np.ones((1, 1))
        for j in range(N):
            term = np.kron(term, H1 if j == i else I)
        H += term
    prof = w.sample(g)
    idx = np.array(list(itertools.product(range(n), repeat=N)))
    pair = sum(prof[np.abs(idx[:, i] - idx[:, j])] for i in range(N) for j in range(i + 1, N))
    return H + np.diag(pair)


def _antisymmetrizer(n, N):
    """Isometry from the determinant basis into the product space."""
    basis = slater_basis(n, N)
    A = np.zeros((n ** N, basis.dimension))
    for col, sites in enumerate(basis.determinants):
        for perm in itertools.permutations(range(N)):
            sign = round(np.linalg.det(np.eye(N)[list(perm)]))
            pos = 0
            for p in perm:
                pos = pos * n + sites[p]
            A[pos, col] += sign / np.sqrt(factorial(N))
    return A


@pytest.mark.parametrize("n, N", [(4, 2), (5, 3)])
def test_hamiltonian_matches_tensor_product_oracle(n, N, rng):
    g = build_grid(n, 1.3)
    v = rng.normal(scale=10, size=n)
    w = InteractionKernel.soft_coulomb(0.3, 2.0)
    A = _antisymmetrizer(n, N)
    np.testing.assert_allclose(A.T @ A, np.eye(A.shape[1]), atol=1e-14)
    oracle = A.T @ _tensor_hamiltonian(g, v, w, N) @ A
    np.testing.assert_allclose(hamiltonian(g, v, N, w).toarray(), oracle, atol=1e-9)


def test_multiplication_operator_constants_and_one_body():
    b = slater_basis(6, 3)
    np.testing.assert_array_equal(multiplication_operator(b, np.full(6, 2.5)).diagonal(), np.full(b.dimension, 7.5))
    u = np.arange(6.0)
    np.testing.assert_array_equal(multiplication_operator(slater_basis(6, 1), u).toarray(), np.diag(u))


def test_multiplication_operator_direct_sum(rng):
    b = slater_basis(5, 2)
    u = rng.normal(size=5)
    brute = [u[i] + u[j] for i, j in itertools.combinations(range(5), 2)]
    np.testing.assert_allclose(multiplication_operator(b, u).diagonal(), brute, rtol=0, atol=1e-15)


@given(c=st.floats(-100, 100), N=st.integers(1, 3), seed=st.integers(0, 1000))
def test_gauge_covariance_exact(c, N, seed):
    g = build_grid(7, 1.0)
    v = np.random.default_rng(seed).normal(scale=5, size=7)
    w = InteractionKernel.gaussian(0.2, 3.0)
    H = hamiltonian(g, v, N, w).toarray()
    Hc = hamiltonian(g, v + c, N, w).toarray()
    # equality up to the rounding of (v_i + c) + (v_j + c) against v_i + v_j + 2c
    np.testing.assert_allclose(Hc - H, c * N * np.eye(H.shape[0]), atol=1e-12 * (1 + abs(c)) * 200)
    np.testing.assert_array_equal(Hc - np.diag(np.diag(Hc)), H - np.diag(np.diag(H)))


@given(N=st.integers(1, 4), seed=st.integers(0, 1000))
def test_hermitian_and_hops_stay_antisymmetric(N, seed):
    g = build_grid(8, 1.0)
    v = np.random.default_rng(seed).normal(size=8)
    H = hamiltonian(g, v, N, InteractionKernel.soft_coulomb(0.1, 1.0)).matrix
    assert (H != H.T).nnz == 0
    b = slater_basis(8, N)
    coo = H.tocoo()
    off = coo.row != coo.col
    for r, c in zip(coo.row[off], coo.col[off]):
        diff = set(b.tuple_of(r)) ^ set(b.tuple_of(c))
        # a single nearest-neighbour hop
        assert len(diff) == 2 and abs(max(diff) - min(diff)) == 1


@pytest.mark.parametrize("n, N", [(6, 2), (7, 3), (8, 2)])
def test_free_spectrum_is_sums_of_orbital_energies(n, N):
    g = build_grid(n, 1.0)
    v = np.linspace(-3, 4, n) ** 2
    eps = np.linalg.eigvalsh(one_body_laplacian(g).toarray() + np.diag(v))
    sums = np.sort([eps[list(s)].sum() for s in itertools.combinations(range(n), N)])
    E = np.linalg.eigvalsh(hamiltonian(g, v, N).toarray())
    np.testing.assert_allclose(E, sums, rtol=1e-11, atol=1e-9)


def test_dimension_mismatch_rejected():
    g = build_grid(5, 1.0)
    with pytest.raises(InvalidArgument):
        assemble_hamiltonian(g, slater_basis(6, 2), np.zeros(5))
    with pytest.raises(InvalidArgument):
        assemble_hamiltonian(g, slater_basis(5, 2), np.zeros(4))


def test_potential_field_rejects_nonfinite():
    with pytest.raises(InvalidArgument):
        PotentialField(np.array([0.0, np.nan]))


def test_potential_field_gauge_helpers():
    p = PotentialField(np.array([1.0, 2.0, 6.0]))
    assert len(p.shifted(3.0)) == 3
    assert p.zero_mean().values.mean() == pytest.approx(0.0, abs=1e-15)


def test_interaction_kernels():
    g = build_grid(10, 1.0)
    assert InteractionKernel.none().is_zero
    assert not np.any(InteractionKernel.none().sample(g))
    sc = InteractionKernel.soft_coulomb(0.1, 2.0)
    r = np.linspace(-1, 1, 11)
    np.testing.assert_array_equal(sc.profile(r), sc.profile(-r))
    assert np.all(sc.sample(g) > 0)
    assert np.all(InteractionKernel.gaussian(0.3, 1.0).sample(g) > 0)
    np.testing.assert_array_equal(InteractionKernel.custom([3, 2, 1]).sample(g)[:4], [3, 2, 1, 0])
    with pytest.raises(InvalidArgument):
        InteractionKernel("yukawa")
    with pytest.raises(InvalidArgument):
        InteractionKernel.soft_coulomb(0.0, 1.0)


def test_specs_from_config_dicts():
    g = build_grid(9, 1.0)
    well = potential_from_spec(g, {"kind": "well", "depth": "10", "lo": "0.4", "hi": "0.6"})
    np.testing.assert_array_equal(well.values, -10 * ((g.nodes >= 0.4) & (g.nodes <= 0.6)))
    vals = potential_from_spec(g, {"kind": "values", "values": " ".join(str(i) for i in range(9))})
    np.testing.assert_array_equal(vals.values, np.arange(9.0))
    with pytest.raises(InvalidArgument):
        potential_from_spec(g, {"kind": "values", "values": "1 2"})
    with pytest.raises(InvalidArgument):
        potential_from_spec(g, {"kind": "morse"})
    assert interaction_from_spec({"kind": "soft_coulomb", "a": "0.2"}) == InteractionKernel.soft_coulomb(0.2, 1.0)
    with pytest.raises(InvalidArgument):
        interaction_from_spec({"kind": "dipole"})


def test_triplet_export_round_trip(tmp_path, rng):
    g = build_grid(6, 1.0)
    H = hamiltonian(g, rng.normal(size=6), 2, InteractionKernel.soft_coulomb())
    path = tmp_path / "h.txt"
    export_triplets(H, path)
    back = read_triplets(path)
    assert (back != H.matrix).nnz == 0
