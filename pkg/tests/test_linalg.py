import math

import numpy as np
import pytest
import scipy.sparse as sp

from graphpde import build_graph, discretize, DIRICHLET, from_template
from graphpde.linalg import (EigenSolverError, SingularMatrixError,
                             det_sign, factorize, generalized_eigs,
                             permutation_parity, solve)


def cofactor_det(A):
    A = np.asarray(A)
    n = A.shape[0]
    if n == 1:
        return A[0, 0]
    total = 0
    for j in range(n):
        minor = np.delete(np.delete(A, 0, axis=0), j, axis=1)
        total += (-1) ** j * A[0, j] * cofactor_det(minor)
    return total


def test_permutation_parity():
    assert permutation_parity([0, 1, 2]) == 1
    assert permutation_parity([1, 0, 2]) == -1
    assert permutation_parity([1, 2, 0]) == 1


def test_det_sign_simple_cases():
    assert det_sign(np.eye(3)) == 1
    assert det_sign(np.diag([1.0, -2.0])) == -1
    assert det_sign(np.array([[0.0, 1.0], [1.0, 0.0]])) == -1


def test_det_sign_against_cofactor_oracle():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 60:
        A = rng.integers(-4, 5, size=(4, 4)).astype(float)
        d = cofactor_det(A)
        if d == 0:
            continue
        assert det_sign(A) == int(np.sign(d))
        assert det_sign(sp.csr_matrix(A)) == int(np.sign(d))
        checked += 1


def test_solve_identity_and_diagonal():
    b = np.array([3.0, -1.0, 2.0])
    assert np.allclose(solve(np.eye(3), b), b)
    assert np.allclose(solve(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [1.0, 1.0])


def test_solve_residual_contract():
    rng = np.random.default_rng(1)
    for n in (5, 20):
        A = rng.standard_normal((n, n)) + n * np.eye(n)
        x_true = rng.standard_normal(n)
        b = A @ x_true
        x = solve(A, b)
        res = np.linalg.norm(A @ x - b)
        bound = 1e-10 * (np.linalg.norm(A) * np.linalg.norm(x) + np.linalg.norm(b))
        assert res <= bound


def test_complex_rhs_with_real_factorization():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((8, 8)) + 8 * np.eye(8)
    b = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    x = factorize(A).solve(b)
    assert np.linalg.norm(A @ x - b) < 1e-10
    As = sp.csr_matrix(A)
    xs = factorize(As).solve(b)
    assert np.linalg.norm(As @ xs - b) < 1e-10


def test_singular_matrix_raises():
    with pytest.raises(SingularMatrixError):
        factorize(np.zeros((3, 3)))
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError):
        factorize(A)


def test_manufactured_second_order_convergence():
    # - u'' = f with u = sin on a Dirichlet interval of length pi
    errs = []
    for nx in (20, 40):
        g = build_graph([1], [2], math.pi, robin_coeffs=[DIRICHLET, DIRICHLET],
                        nx=[nx])
        b = discretize(g, "uniform")
        from graphpde import apply_function_to_edges, solve_poisson
        f = apply_function_to_edges(b, [lambda x: -np.sin(x)])
        psi = solve_poisson(b, f)
        exact = apply_function_to_edges(b, [np.sin])
        errs.append(np.max(np.abs(psi - exact)))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_generalized_eigs_dirichlet_interval():
    g = build_graph([1], [2], math.pi, robin_coeffs=[DIRICHLET, DIRICHLET], nx=60)
    b = discretize(g, "uniform")
    lam, vecs = generalized_eigs(b.lap_vc, b.interp_zero, 3)
    assert np.allclose(np.real(lam), [-1.0, -4.0, -9.0], atol=2e-2)
    for j in range(3):
        r = b.lap_vc @ vecs[:, j] - lam[j] * (b.interp_zero @ vecs[:, j])
        amax = np.max(np.abs(b.lap_vc.data))
        assert np.linalg.norm(r) <= 1e-8 * max(np.linalg.norm(b.lap_vc @ vecs[:, j]), amax)


def test_generalized_eigs_null_mode():
    g = build_graph([1], [2], 1.0, nx=20)  # NK both ends
    b = discretize(g, "uniform")
    lam, vecs = generalized_eigs(b.lap_vc, b.interp_zero, 1)
    assert abs(lam[0]) < 1e-10
    v = np.real(vecs[:, 0])
    assert np.max(np.abs(v - np.mean(v))) < 1e-8


def test_generalized_eigs_dense_and_sparse_agree():
    g = from_template("Y", nx=12)
    b = discretize(g, "uniform")
    lam_sparse, _ = generalized_eigs(b.lap_vc, b.interp_zero, 4)
    lam_dense, _ = generalized_eigs(b.lap_vc.toarray(), b.interp_zero.toarray(), 4)
    assert np.allclose(np.real(lam_sparse), np.real(lam_dense), atol=1e-9)


def test_finite_eigenvalue_budget():
    # the pencil has n_ext - 2|E| finite eigenvalues; asking for more fails
    g = build_graph([1], [2], 1.0, robin_coeffs=[DIRICHLET, DIRICHLET], nx=[4])
    b = discretize(g, "uniform")
    with pytest.raises((EigenSolverError, ValueError)):
        generalized_eigs(b.lap_vc.toarray(), b.interp_zero.toarray(), 5)


def test_shift_on_spectrum_detected():
    g = build_graph([1], [2], 1.0, nx=20)  # NK: zero eigenvalue
    b = discretize(g, "uniform")
    with pytest.raises(SingularMatrixError):
        generalized_eigs(b.lap_vc, b.interp_zero, 2, sigma=0.0)


def test_eigenvalues_sorted_by_magnitude():
    g = from_template("Y", nx=20)
    b = discretize(g, "uniform")
    lam, _ = generalized_eigs(b.lap_vc, b.interp_zero, 5)
    mags = np.abs(lam)
    assert np.all(np.diff(mags) >= -1e-12)
