"""Factorizations with determinant signs, linear solves, generalized eigensolver.

Matrices may be dense ndarrays or scipy.sparse; factorizations expose a
``solve`` method and the sign of the determinant extracted from the LU
factors (permutation parities times diagonal signs), which is what the
continuation code monitors for bifurcations.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class EigenSolverError(RuntimeError):
    pass


def permutation_parity(perm) -> int:
    """Sign of a permutation given as an index array."""
    perm = np.asarray(perm, dtype=int)
    seen = np.zeros(perm.size, dtype=bool)
    sign = 1
    for start in range(perm.size):
        if seen[start]:
            continue
        j = start
        length = 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _pivot_parity(piv) -> int:
    """Sign of the row permutation encoded by LAPACK pivot indices."""
    return -1 if np.count_nonzero(piv != np.arange(piv.size)) % 2 else 1


class Factorization:
    """LU factorization with partial pivoting; shareable, reusable solves."""

    def __init__(self, A):
        if A.shape[0] != A.shape[1]:
            raise ValueError("factorize needs a square matrix")
        self.n = A.shape[0]
        self.is_sparse = sp.issparse(A)
        if self.is_sparse:
            try:
                self._lu = spla.splu(A.tocsc())
            except RuntimeError as exc:
                raise SingularMatrixError(str(exc)) from exc
            diag = self._lu.U.diagonal()
            if np.any(diag == 0.0) or not np.all(np.isfinite(diag)):
                raise SingularMatrixError("exactly singular matrix")
            parity = (permutation_parity(self._lu.perm_r)
                      * permutation_parity(self._lu.perm_c))
            self._complex = np.iscomplexobj(diag)
        else:
            A = np.asarray(A)
            if not np.all(np.isfinite(A)):
                raise ValueError("matrix entries must be finite")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(A, check_finite=False)
            diag = np.diag(lu)
            if np.any(diag == 0.0):
                raise SingularMatrixError("exactly singular matrix")
            self._lu = (lu, piv)
            parity = _pivot_parity(piv)
            self._complex = np.iscomplexobj(lu)
        absdiag = np.abs(diag)
        self.diag_ratio = float(absdiag.min() / absdiag.max())
        if self._complex:
            prod = np.prod(np.sign(diag / absdiag))
            self.det_sign = complex(prod) * parity
        else:
            self.det_sign = int(parity * np.prod(np.sign(diag)))

    def solve(self, b):
        b = np.asarray(b)
        if np.iscomplexobj(b) and not self._complex:
            return self._solve_real(b.real) + 1j * self._solve_real(b.imag)
        return self._solve_real(b)

    def _solve_real(self, b):
        if self.is_sparse:
            return self._lu.solve(b)
        return sla.lu_solve(self._lu, b, check_finite=False)


def factorize(A) -> Factorization:
    return Factorization(A)


def solve(A, b):
    """One-shot linear solve; accepts a matrix or an existing Factorization."""
    if isinstance(A, Factorization):
        return A.solve(b)
    return Factorization(A).solve(b)


def det_sign(A):
    return Factorization(A).det_sign


# ---------------------------------------------------------------------------

def _as_linear_operator(B):
    if sp.issparse(B):
        return lambda v: B @ v
    B = np.asarray(B)
    return lambda v: B @ v


def generalized_eigs(A, B, m: int, sigma: float = 1e-2, *,
                     residual_tol: float = 1e-8):
    """The m finite eigenpairs of A v = lambda B v nearest the shift sigma.

    B may be singular (zero constraint rows); the infinite eigenvalues of
    the pencil are excluded structurally by iterating on (A - sigma B)^-1 B,
    whose null directions they occupy.  Eigenvalues are sorted by ascending
    magnitude (ties by value); imaginary parts below 1e-8 (1 + |lambda|)
    are truncated to zero.
    """
    n = A.shape[0]
    if m < 1 or m >= n:
        raise ValueError(f"need 1 <= m < {n}, got {m}")
    shifted = A - sigma * B
    fact = factorize(shifted)
    if fact.diag_ratio < 1e-13:
        raise SingularMatrixError(
            f"shift {sigma} lies on (or numerically on) the pencil spectrum")
    apply_B = _as_linear_operator(B)

    use_dense = (not sp.issparse(A) and n <= 400) or m > n - 3
    if use_dense:
        Bd = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
        C = fact.solve(Bd)
        nu, V = sla.eig(C)
    else:
        op = spla.LinearOperator((n, n), matvec=lambda v: fact.solve(apply_B(v)))
        v0 = np.random.default_rng(1729).standard_normal(n)
        ncv = min(n, max(4 * m + 10, 40))
        try:
            nu, V = spla.eigs(op, k=m, which="LM", v0=v0, ncv=ncv)
        except spla.ArpackNoConvergence as exc:
            raise EigenSolverError(f"eigensolver did not converge: {exc}") from exc

    order = np.argsort(-np.abs(nu))[:m]
    nu = nu[order]
    V = V[:, order]
    if np.any(np.abs(nu) < 1e3 * np.finfo(float).eps):
        raise EigenSolverError("requested more finite eigenvalues than the pencil has")
    lam = sigma + 1.0 / nu

    small = np.abs(lam.imag) <= 1e-8 * (1.0 + np.abs(lam))
    lam = np.where(small, lam.real + 0.0j, lam)

    vecs = np.empty((n, m), dtype=complex)
    for j in range(m):
        v = V[:, j]
        # rotate the dominant component onto the real axis, then drop a
        # negligible imaginary part
        k = int(np.argmax(np.abs(v)))
        phase = v[k] / abs(v[k])
        v = v / phase
        if small[j] and np.max(np.abs(v.imag)) <= 1e-8 * np.max(np.abs(v.real)):
            v = v.real + 0.0j
        vecs[:, j] = v / np.linalg.norm(v)

    order = np.lexsort((lam.real, np.abs(lam)))
    lam = lam[order]
    vecs = vecs[:, order]

    apply_A = _as_linear_operator(A)
    amax = float(np.max(np.abs(A.data))) if sp.issparse(A) else float(np.max(np.abs(A)))
    for j in range(m):
        res = np.linalg.norm(apply_A(vecs[:, j]) - lam[j] * apply_B(vecs[:, j]))
        # matrix-scale floor keeps the relative contract meaningful for the
        # zero eigenvalue, where ||A v|| itself is pure roundoff
        scale = max(np.linalg.norm(apply_A(vecs[:, j])), amax)
        if res > residual_tol * scale:
            # one inverse-iteration polish before giving up
            v = fact.solve(apply_B(vecs[:, j]))
            v = v / np.linalg.norm(v)
            k = int(np.argmax(np.abs(v)))
            v = v / (v[k] / abs(v[k]))
            vecs[:, j] = v
            res = np.linalg.norm(apply_A(v) - lam[j] * apply_B(v))
            scale = max(np.linalg.norm(apply_A(v)), amax)
            if res > residual_tol * scale:
                raise EigenSolverError(
                    f"eigenpair {j} residual {res:.2e} exceeds tolerance")

    if np.all(lam.imag == 0.0):
        lam = lam.real
        if np.max(np.abs(vecs.imag)) == 0.0:
            vecs = vecs.real
    return lam, vecs
