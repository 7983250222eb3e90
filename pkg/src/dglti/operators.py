"""Central-flux dG discretisation of the two-field Friedrichs pair.

``L1`` maps u-blocks to v-blocks (the discrete ``Lt``), ``L2`` maps v-blocks to
u-blocks (the discrete ``L``).  Both are assembled as sparse matrices; boundary
conditions enter through a mirrored ghost state on boundary faces, chosen so
that ``<L1 u, w>_mu = -<u, L2 w>_eps`` holds exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .dgspace import DgSpace, WeightedIP, reference_basis, reference_basis_deriv, gauss
from .problems import ProblemCase

DENSE_LIMIT = 20_000


class NormEstimateError(RuntimeError):
    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


def _reference_1d(k: int):
    xi, w = gauss(k + 1)
    phi = reference_basis(xi, k)
    dphi = reference_basis_deriv(xi, k)
    dhat = phi.T @ (w[:, None] * dphi)
    e_left = reference_basis(np.array([-1.0]), k)[0]
    e_right = reference_basis(np.array([1.0]), k)[0]
    return dhat, e_left, e_right


def _embed(m1: np.ndarray, direction: int, dim: int) -> np.ndarray:
    if dim == 1:
        return m1
    eye = np.eye(m1.shape[0])
    return np.kron(m1, eye) if direction == 0 else np.kron(eye, m1)


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, row_cells, col_cells, scales, block, row_size, col_size):
        r, c = np.nonzero(block)
        if len(r) == 0 or len(row_cells) == 0:
            return
        self.rows.append((row_cells[:, None] * row_size + r[None, :]).ravel())
        self.cols.append((col_cells[:, None] * col_size + c[None, :]).ravel())
        self.vals.append((scales[:, None] * block[r, c][None, :]).ravel())

    def matrix(self, shape) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(shape)
        mat = sp.coo_matrix((np.concatenate(self.vals),
                             (np.concatenate(self.rows), np.concatenate(self.cols))),
                            shape=shape).tocsr()
        mat.sum_duplicates()
        mat.eliminate_zeros()
        return mat


def _assemble_first_order(space: DgSpace, coeffs, reflect, out_weight, m_in, m_out):
    """Sparse matrix of ``w^{-1} (sum_i A_i d_i + central flux)`` from an
    ``m_in``-component block to an ``m_out``-component block."""
    mesh, k, dim = space.mesh, space.k, space.dim
    nb = space.nb
    dhat, eL, eR = _reference_1d(k)
    rs, cs = m_out * nb, m_in * nb
    trip = _Triplets()
    inv_w = 1.0 / out_weight
    cells = np.arange(mesh.ncells)
    faces = mesh.interior_faces
    bfaces = mesh.boundary_faces
    for d in range(dim):
        A = np.asarray(coeffs[d], dtype=float)
        h = mesh.widths[:, d]
        # volume: (A_d d_d u, w)_K
        trip.add(cells, cells, inv_w * 2.0 / h, np.kron(A, _embed(dhat, d, dim)), rs, cs)
        # interior faces normal to d, normal +e_d seen from the minus cell
        f = faces[faces[:, 2] == d]
        if len(f):
            km, kp = f[:, 0], f[:, 1]
            hm, hp = h[km], h[kp]
            cross = 2.0 / np.sqrt(hm * hp)
            trip.add(km, kp, 0.5 * inv_w[km] * cross, np.kron(A, _embed(np.outer(eR, eL), d, dim)), rs, cs)
            trip.add(km, km, -0.5 * inv_w[km] * 2.0 / hm, np.kron(A, _embed(np.outer(eR, eR), d, dim)), rs, cs)
            trip.add(kp, km, -0.5 * inv_w[kp] * cross, np.kron(A, _embed(np.outer(eL, eR), d, dim)), rs, cs)
            trip.add(kp, kp, 0.5 * inv_w[kp] * 2.0 / hp, np.kron(A, _embed(np.outer(eL, eL), d, dim)), rs, cs)
        # boundary faces: ghost = R(n) u_inside, flux term 1/2 A_n (R - I) u
        for side, e in ((0, eL), (1, eR)):
            bc = bfaces[(bfaces[:, 1] == d) & (bfaces[:, 2] == side)][:, 0]
            if len(bc) == 0:
                continue
            normal = np.zeros(dim)
            normal[d] = 1.0 if side == 1 else -1.0
            An = normal[d] * A
            R = np.asarray(reflect(normal), dtype=float)
            comp = An @ (R - np.eye(m_in))
            trip.add(bc, bc, 0.5 * inv_w[bc] * 2.0 / h[bc], np.kron(comp, _embed(np.outer(e, e), d, dim)), rs, cs)
    return trip.matrix((mesh.ncells * rs, mesh.ncells * cs))


@dataclass
class DiscreteFriedrichsPair:
    """Assembled central-flux operators ``L1: V_u -> V_v`` and ``L2: V_v -> V_u``."""

    problem: str
    space: DgSpace
    L1: sp.csr_matrix
    L2: sp.csr_matrix

    @cached_property
    def ip(self) -> WeightedIP:
        return WeightedIP.from_space(self.space)

    def apply_l1(self, u: np.ndarray) -> np.ndarray:
        return self.L1 @ u

    def apply_l2(self, v: np.ndarray) -> np.ndarray:
        return self.L2 @ v

    def block_operator(self) -> sp.csr_matrix:
        """``[[0, L2], [L1, 0]]`` on the stacked state ``(u, v)``."""
        return sp.bmat([[None, self.L2], [self.L1, None]], format="csr")


def assemble_pair(space: DgSpace, problem: ProblemCase) -> DiscreteFriedrichsPair:
    if space.dim != problem.dim or space.m_u != problem.m_u or space.m_v != problem.m_v:
        raise ValueError(f"space (dim={space.dim}, m_u={space.m_u}, m_v={space.m_v}) "
                         f"does not fit problem {problem.tag}")
    mesh = space.mesh
    L1 = _assemble_first_order(space, problem.coeffs, problem.u_reflect, mesh.mu,
                               problem.m_u, problem.m_v)
    L2 = _assemble_first_order(space, [np.asarray(A).T for A in problem.coeffs],
                               problem.v_reflect, mesh.eps, problem.m_v, problem.m_u)
    return DiscreteFriedrichsPair(problem.tag, space, L1, L2)


class MaskedSecondOrder:
    """``S = -L2 chi L1`` on u-blocks, ``chi`` a cell mask applied to the v-block.

    Self-adjoint and positive semidefinite in the eps-weighted inner product.
    """

    def __init__(self, pair: DiscreteFriedrichsPair, cell_mask: np.ndarray | None = None,
                 name: str = "ALL"):
        self.pair = pair
        self.name = name
        space = pair.space
        if cell_mask is None:
            cell_mask = np.ones(space.mesh.ncells, dtype=bool)
        self.cell_mask = np.asarray(cell_mask, dtype=bool)
        self.v_mask = space.dof_mask(self.cell_mask, "v")
        self._vidx = np.flatnonzero(self.v_mask)
        self._L1 = pair.L1[self._vidx, :]
        self._L2 = pair.L2[:, self._vidx]

    @property
    def weights(self) -> np.ndarray:
        return self.pair.ip.w_u

    @property
    def is_zero(self) -> bool:
        return len(self._vidx) == 0

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return -(self._L2 @ (self._L1 @ u))

    def matrix(self) -> sp.csr_matrix:
        return (-(self._L2 @ self._L1)).tocsr()

    @cached_property
    def local(self) -> tuple[np.ndarray, sp.csr_matrix]:
        """Indices of u-dofs touched by ``S`` and the restricted sparse matrix.

        ``S`` maps vectors supported outside these indices to zero and has no
        output there, so ``S x = S_loc x[idx]`` scattered back into ``idx``.
        """
        S = self.matrix().tocoo()
        idx = np.union1d(S.row, S.col)
        S = self.matrix()[idx][:, idx].tocsr()
        return idx, S


def apply_masked(pair: DiscreteFriedrichsPair, partition, which: str, u: np.ndarray) -> np.ndarray:
    """``-L2 chi_which L1 u`` for ``which`` in ``{"M", "LF", "ALL"}``."""
    return masked_operator(pair, partition, which)(u)


def masked_operator(pair: DiscreteFriedrichsPair, partition, which: str) -> MaskedSecondOrder:
    from .mesh import cutoff_mask

    if which.upper() == "ALL" or partition is None:
        return MaskedSecondOrder(pair, None, "ALL")
    return MaskedSecondOrder(pair, cutoff_mask(partition, which), which.upper())


def spectral_norm(op: MaskedSecondOrder, tol: float = 1e-6, max_iter: int = 10_000,
                  seed: int = 0, safety: float = 1.01) -> float:
    """Largest eigenvalue of ``op`` by power iteration in the eps inner product,
    times ``safety``."""
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if op.is_zero:
        return 0.0
    w = op.weights
    idx, S = op.local
    w = w[idx]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(len(idx))
    x /= np.sqrt(np.dot(w * x, x))
    rq_old = 0.0
    rq = 0.0
    for _ in range(max_iter):
        y = S @ x
        rq = float(np.dot(w * y, x))
        ny = np.sqrt(np.dot(w * y, y))
        if ny == 0.0:
            return 0.0
        if abs(rq - rq_old) < tol * abs(rq):
            return safety * rq
        rq_old = rq
        x = y / ny
    raise NormEstimateError(f"power iteration did not converge in {max_iter} steps", safety * rq)


@dataclass
class DenseSystem:
    L1: np.ndarray
    L2: np.ndarray
    M_eps: np.ndarray
    M_mu: np.ndarray


def assemble_dense(pair: DiscreteFriedrichsPair, limit: int = DENSE_LIMIT) -> DenseSystem:
    """Dense copies of the operators and diagonal mass matrices (test oracle)."""
    space = pair.space
    if space.ndofs > limit:
        raise ValueError(f"{space.ndofs} dofs exceed the dense limit {limit}")
    ip = pair.ip
    return DenseSystem(pair.L1.toarray(), pair.L2.toarray(), np.diag(ip.w_u), np.diag(ip.w_v))


def write_matrix_csv(matrix, path) -> None:
    """Dump a matrix as ``row,col,value`` triplets of its nonzeros."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for r, c, v in zip(coo.row, coo.col, coo.data):
            w.writerow([int(r), int(c), repr(float(v))])
