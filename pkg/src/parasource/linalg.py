"""Sparse symmetric linear algebra: CSR storage, preconditioned CG, mass-weighted
norms and a coercivity-constant estimator.

All solves in the package go through `cg_solve`; everything is deterministic
(fixed summation order, no randomized pivoting), so repeated runs produce
bit-identical results.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateOperatorError, InvalidArgumentError, SolverFailureError

__all__ = [
    "SparseMatrix",
    "SolveOptions",
    "spmv",
    "add_scaled",
    "cg_solve",
    "m_inner",
    "m_norm",
    "estimate_delta",
]


class SparseMatrix:
    """Square sparse matrix in canonical CSR form (sorted column indices,
    duplicates summed).

    The raw CSR triplet is exposed as `row_offsets`, `col_indices` and
    `values`; matrix-vector products run through scipy's CSR kernel, which
    accumulates each row left to right in index order.
    """

    def __init__(self, row_offsets, col_indices, values, n):
        mat = sp.csr_matrix(
            (np.asarray(values, dtype=float),
             np.asarray(col_indices, dtype=np.int64),
             np.asarray(row_offsets, dtype=np.int64)),
            shape=(n, n),
        )
        mat.sum_duplicates()
        mat.sort_indices()
        self._csr = mat

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        mat = sp.csr_matrix(mat)
        return cls(mat.indptr, mat.indices, mat.data, mat.shape[0])

    @classmethod
    def from_coo(cls, rows, cols, vals, n) -> "SparseMatrix":
        return cls.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))

    @classmethod
    def identity(cls, n) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @property
    def n(self) -> int:
        return self._csr.shape[0]

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def row_offsets(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def __repr__(self):
        return f"SparseMatrix(n={self.n}, nnz={self.nnz})"


@dataclass
class SolveOptions:
    """Stopping control for `cg_solve`.

    rel_tol    -- stop once ||b - A x||_2 <= rel_tol * ||b||_2
    max_iters  -- iteration budget; None means 10 * n
    """

    rel_tol: float = 1e-10
    max_iters: int | None = None

    def __post_init__(self):
        if not (0.0 < self.rel_tol < 1.0):
            raise InvalidArgumentError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.max_iters is not None and self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be positive, got {self.max_iters}")


def _check_vector(A: SparseMatrix, x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (A.n,):
        raise InvalidArgumentError(
            f"{name} has shape {x.shape}, expected ({A.n},)")
    return x


def spmv(A: SparseMatrix, x) -> np.ndarray:
    """Matrix-vector product A @ x (deterministic row-major accumulation)."""
    x = _check_vector(A, x)
    return A._csr @ x


def add_scaled(A: SparseMatrix, B: SparseMatrix, alpha: float) -> SparseMatrix:
    """Return A + alpha * B as a new canonical CSR matrix."""
    if A.n != B.n:
        raise InvalidArgumentError(f"dimension mismatch: {A.n} vs {B.n}")
    return SparseMatrix.from_scipy(A._csr + alpha * B._csr)


def cg_solve(A: SparseMatrix, b, opts: SolveOptions | None = None,
             precond: np.ndarray | None = None, x0: np.ndarray | None = None,
             callback=None) -> tuple[np.ndarray, int]:
    """Conjugate gradients for SPD systems, optionally Jacobi-preconditioned.

    Parameters
    ----------
    A : SparseMatrix
        Symmetric positive definite system matrix.
    b : array
        Right-hand side.
    opts : SolveOptions, optional
        Tolerance and iteration budget.
    precond : array, optional
        Diagonal of a Jacobi preconditioner (entries must be positive).
    x0 : array, optional
        Initial guess, defaults to zeros.
    callback : callable, optional
        Invoked as callback(k, x, residual_norm) after every iteration.

    Returns
    -------
    (x, iterations). Raises SolverFailureError if the budget is exhausted,
    carrying the final residual norm.
    """
    opts = opts or SolveOptions()
    b = _check_vector(A, b, "b")
    max_iters = opts.max_iters if opts.max_iters is not None else 10 * A.n

    b_norm = np.sqrt(b @ b)
    if b_norm == 0.0:
        return np.zeros(A.n), 0

    if precond is not None:
        precond = _check_vector(A, precond, "precond")
        if np.any(precond <= 0.0):
            raise InvalidArgumentError("preconditioner diagonal must be positive")
        inv_diag = 1.0 / precond
    else:
        inv_diag = None

    if x0 is None:
        x = np.zeros(A.n)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float, copy=True)
        r = b - spmv(A, x)

    tol = opts.rel_tol * b_norm
    r_norm = np.sqrt(r @ r)
    z = r * inv_diag if inv_diag is not None else r
    d = z.copy()
    rz = r @ z

    for k in range(1, max_iters + 1):
        if r_norm <= tol:
            return x, k - 1
        q = A._csr @ d
        dq = d @ q
        if dq <= 0.0:
            raise SolverFailureError(
                "matrix is not positive definite along search direction",
                iterations=k, residual=r_norm)
        alpha = rz / dq
        x = x + alpha * d
        r = r - alpha * q
        r_norm = np.sqrt(r @ r)
        if callback is not None:
            callback(k, x, r_norm)
        z = r * inv_diag if inv_diag is not None else r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new

    if r_norm <= tol:
        return x, max_iters
    raise SolverFailureError(
        f"CG did not converge in {max_iters} iterations "
        f"(residual {r_norm:.3e}, target {tol:.3e})",
        iterations=max_iters, residual=r_norm)


def m_inner(M: SparseMatrix, x, y) -> float:
    """Mass-weighted inner product x^T M y (the discrete L2 pairing)."""
    x = _check_vector(M, x)
    return float(x @ spmv(M, y))


def m_norm(M: SparseMatrix, x) -> float:
    """Mass-weighted norm sqrt(x^T M x); clamps tiny negative round-off."""
    return float(np.sqrt(max(m_inner(M, x, x), 0.0)))


def estimate_delta(op, tol: float = 1e-8) -> float:
    """Smallest generalized eigenvalue of (K, M) by inverse power iteration.

    Each step solves K z = M y with Jacobi-CG and re-normalizes in the
    M-norm; the Rayleigh quotient stops once its relative change drops
    below `tol`. Raises DegenerateOperatorError when K is singular
    (e.g. pure Neumann boundary with zero reaction), since no positive
    coercivity constant exists in that case.
    """
    K, M = op.K, op.M
    ones = np.ones(K.n)
    scale = np.max(np.abs(K.values)) if K.nnz else 0.0
    if scale == 0.0 or np.max(np.abs(spmv(K, ones))) <= 1e-12 * scale:
        raise DegenerateOperatorError(
            "stiffness matrix annihilates constants; coercivity constant is zero")

    k_diag = K.diagonal()
    if np.any(k_diag <= 0.0):
        raise DegenerateOperatorError("stiffness matrix has a non-positive diagonal entry")

    cg_opts = SolveOptions(rel_tol=1e-12, max_iters=100 * K.n)
    rng = np.random.default_rng(0)
    y = rng.standard_normal(K.n)
    y /= m_norm(M, y)

    lam = float(y @ spmv(K, y))
    z = y
    for _ in range(200):
        z, _ = cg_solve(K, spmv(M, y), cg_opts, precond=k_diag, x0=z)
        nrm = m_norm(M, z)
        if nrm == 0.0:
            raise DegenerateOperatorError("inverse iteration collapsed to the zero vector")
        y = z / nrm
        lam_new = float(y @ spmv(K, y))
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    else:
        raise SolverFailureError("inverse power iteration did not settle in 200 steps")

    if lam <= 1e-12 * scale:
        raise DegenerateOperatorError(f"estimated coercivity constant {lam:.3e} is not positive")
    return lam
