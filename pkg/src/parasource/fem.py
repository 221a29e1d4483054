"""P1 finite element assembly on triangle meshes.

The bilinear form is

    a(u, v) = int_D (k grad u . grad v + c u v) dx + int_dD mu u v ds,

giving a stiffness matrix K, and the L2 pairing gives a mass matrix M. The
discrete elliptic operator acts as A y = M^{-1} (K y); that pair is what the
time steppers and identification loops consume.

Triangle integrals use the three edge-midpoint quadrature points (exact for
quadratics, hence exact for the P1 mass matrix); boundary integrals use
two-point Gauss per edge. Coefficients are callables of vectorized node
coordinates; their sign conditions (k > 0, c >= 0, mu >= 0) are checked at
every quadrature point during assembly.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, InvalidCoefficientError
from .linalg import SolveOptions, SparseMatrix, cg_solve, spmv
from .mesh import Mesh

__all__ = ["Coefficients", "DiscreteOperator", "assemble", "project_l2", "apply_A"]

# barycentric coordinates of the edge midpoints, one row per quadrature point
_MIDPOINT_BARY = np.array([
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
])

_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(frozen=True)
class Coefficients:
    """Scalar PDE coefficients as callables f(x1, x2) over coordinate arrays.

    k  -- diffusion, must be strictly positive
    c  -- reaction, must be nonnegative
    mu -- boundary (Robin) coefficient, must be nonnegative
    """

    k: Callable
    c: Callable
    mu: Callable

    @classmethod
    def constants(cls, k: float = 1.0, c: float = 0.0, mu: float = 0.0) -> "Coefficients":
        return cls(k=lambda x, y: np.full_like(x, float(k)),
                   c=lambda x, y: np.full_like(x, float(c)),
                   mu=lambda x, y: np.full_like(x, float(mu)))


@dataclass
class DiscreteOperator:
    """Matrix realization (M, K) of the elliptic operator on a P1 space."""

    M: SparseMatrix
    K: SparseMatrix
    dof: int
    _lumped: np.ndarray | None = field(default=None, repr=False)

    @property
    def mass_diag(self) -> np.ndarray:
        return self.M.diagonal()

    @property
    def lumped_m(self) -> np.ndarray:
        """Row-sum lumped mass diagonal (computed on first use)."""
        if self._lumped is None:
            self._lumped = spmv(self.M, np.ones(self.dof))
        return self._lumped


def _eval_coeff(fn, x, y, name, lower, strict):
    vals = np.broadcast_to(np.asarray(fn(x, y), dtype=float), x.shape)
    bad = vals <= lower if strict else vals < lower
    if np.any(bad):
        idx = np.unravel_index(np.argmax(bad), bad.shape)
        op = "<=" if strict else "<"
        raise InvalidCoefficientError(
            f"coefficient {name} evaluates to {vals[idx]:.6g} {op} {lower:g} "
            f"at quadrature point ({x[idx]:.6g}, {y[idx]:.6g})")
    return vals


def assemble(mesh: Mesh, coeffs: Coefficients) -> DiscreteOperator:
    """Assemble the mass/stiffness pair for a coefficient set on a mesh."""
    nodes, tris = mesh.nodes, mesh.triangles
    dof = mesh.n_nodes
    p = nodes[tris]                                   # (nt, 3, 2)

    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]  # twice the signed area
    if np.any(area2 <= 0.0):
        raise InvalidArgumentError("mesh contains a degenerate or misoriented triangle")
    area = 0.5 * area2

    # P1 gradient coefficients: grad l_i = (b_i, c_i) / (2 S)
    b = np.stack([p[:, 1, 1] - p[:, 2, 1],
                  p[:, 2, 1] - p[:, 0, 1],
                  p[:, 0, 1] - p[:, 1, 1]], axis=1)
    cgrad = np.stack([p[:, 2, 0] - p[:, 1, 0],
                      p[:, 0, 0] - p[:, 2, 0],
                      p[:, 1, 0] - p[:, 0, 0]], axis=1)

    qp = _MIDPOINT_BARY @ p                            # (nt, 3q, 2) midpoints
    qx, qy = qp[..., 0], qp[..., 1]
    k_vals = _eval_coeff(coeffs.k, qx, qy, "k", 0.0, strict=True)
    c_vals = _eval_coeff(coeffs.c, qx, qy, "c", 0.0, strict=False)

    grad_dot = (b[:, :, None] * b[:, None, :] + cgrad[:, :, None] * cgrad[:, None, :])
    k_mean = k_vals.sum(axis=1) * (area / 3.0)
    k_blocks = grad_dot * (k_mean / (4.0 * area * area))[:, None, None]

    shape_prod = _MIDPOINT_BARY[:, :, None] * _MIDPOINT_BARY[:, None, :]  # (q, 3, 3)
    m_blocks = (area / 3.0)[:, None, None] * shape_prod.sum(axis=0)
    c_blocks = np.einsum("eq,qij,e->eij", c_vals, shape_prod, area / 3.0)

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()

    # one merged volume block per element: keeps every off-diagonal entry a
    # two-term sum after duplicate merging, so K stays symmetric bit for bit
    all_rows = [rows]
    all_cols = [cols]
    k_data = [(k_blocks + c_blocks).ravel()]

    if mesh.boundary_edges.size:
        pe = nodes[mesh.boundary_edges]                # (ne, 2, 2)
        dvec = pe[:, 1] - pe[:, 0]
        length = np.hypot(dvec[:, 0], dvec[:, 1])
        # map s in [-1, 1] to the edge; shape values (1 -/+ s)/2
        shapes = np.stack([(1.0 - _GAUSS2) / 2.0, (1.0 + _GAUSS2) / 2.0], axis=1)  # (g, 2)
        gx = pe[:, 0, 0][:, None] + (_GAUSS2[None, :] + 1.0) / 2.0 * dvec[:, 0][:, None]
        gy = pe[:, 0, 1][:, None] + (_GAUSS2[None, :] + 1.0) / 2.0 * dvec[:, 1][:, None]
        mu_vals = _eval_coeff(coeffs.mu, gx, gy, "mu", 0.0, strict=False)
        edge_prod = shapes[:, :, None] * shapes[:, None, :]            # (g, 2, 2)
        b_blocks = np.einsum("eg,gij,e->eij", mu_vals, edge_prod, length / 2.0)
        erows = np.repeat(mesh.boundary_edges, 2, axis=1).ravel()
        ecols = np.tile(mesh.boundary_edges, (1, 2)).ravel()
        all_rows.append(erows)
        all_cols.append(ecols)
        k_data.append(b_blocks.ravel())

    K = SparseMatrix.from_coo(np.concatenate(all_rows), np.concatenate(all_cols),
                              np.concatenate(k_data), dof)
    M = SparseMatrix.from_coo(rows, cols, m_blocks.ravel(), dof)
    return DiscreteOperator(M=M, K=K, dof=dof)


def project_l2(op: DiscreteOperator, g, mesh: Mesh) -> np.ndarray:
    """L2 projection of a callable g(x1, x2) onto the P1 space: solve M x = b
    with b_i = int g chi_i dx evaluated by the midpoint rule."""
    if op.dof != mesh.n_nodes:
        raise InvalidArgumentError("operator and mesh disagree on the number of nodes")
    p = mesh.nodes[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    qp = _MIDPOINT_BARY @ p
    g_vals = np.broadcast_to(np.asarray(g(qp[..., 0], qp[..., 1]), dtype=float),
                             qp[..., 0].shape)
    contrib = np.einsum("eq,qi,e->ei", g_vals, _MIDPOINT_BARY, area / 3.0)

    load = np.zeros(op.dof)
    np.add.at(load, mesh.triangles.ravel(), contrib.ravel())
    x, _ = cg_solve(op.M, load, precond=op.mass_diag)
    return x


def apply_A(op: DiscreteOperator, y, lumped: bool = False) -> np.ndarray:
    """Apply the discrete elliptic operator: A y = M^{-1} (K y).

    With lumped=True the mass inverse is the row-sum diagonal, which avoids
    the inner CG solve at the cost of a small consistency error.
    """
    ky = spmv(op.K, y)
    if lumped:
        return ky / op.lumped_m
    x, _ = cg_solve(op.M, ky, precond=op.mass_diag)
    return x
