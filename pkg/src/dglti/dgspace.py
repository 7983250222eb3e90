"""Broken polynomial spaces with modal tensor-Legendre bases.

Every cell carries the tensor product of Legendre polynomials of degree
``<= k`` per direction, scaled to be orthonormal in the unweighted cell L2
inner product.  Coefficient blocks are laid out cell-major:
``index = (cell * m + component) * nb + mode`` with ``nb = (k + 1) ** dim`` and
``mode = a * (k + 1) + b`` for x-degree ``a`` and y-degree ``b``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.polynomial import legendre

from .mesh import Mesh


def reference_basis(xi: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal Legendre polynomials on [-1, 1]; shape ``(len(xi), k + 1)``."""
    xi = np.asarray(xi, dtype=float)
    vals = legendre.legvander(xi, k)
    return vals * np.sqrt((2 * np.arange(k + 1) + 1) / 2.0)


def reference_basis_deriv(xi: np.ndarray, k: int) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((xi.size, k + 1))
    for j in range(k + 1):
        c = np.zeros(j + 1)
        c[j] = np.sqrt((2 * j + 1) / 2.0)
        out[:, j] = legendre.legval(xi, legendre.legder(c)) if j > 0 else 0.0
    return out


def gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    return legendre.leggauss(n)


def _tensor_points(nodes: np.ndarray, weights: np.ndarray, dim: int):
    if dim == 1:
        return nodes[:, None], weights
    X, Y = np.meshgrid(nodes, nodes, indexing="ij")
    W = np.outer(weights, weights)
    return np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel()


def _tensor_vander(ref_pts: np.ndarray, k: int) -> np.ndarray:
    v = reference_basis(ref_pts[:, 0], k)
    for d in range(1, ref_pts.shape[1]):
        w = reference_basis(ref_pts[:, d], k)
        v = (v[:, :, None] * w[:, None, :]).reshape(len(ref_pts), -1)
    return v


@dataclass(frozen=True)
class DgSpace:
    """Pair of broken polynomial spaces ``V_u x V_v`` of tensor degree ``k``."""

    mesh: Mesh
    k: int
    m_u: int
    m_v: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("polynomial degree must be non-negative")
        if self.m_u < 1 or self.m_v < 1:
            raise ValueError("each field needs at least one component")

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def nb(self) -> int:
        return (self.k + 1) ** self.dim

    @property
    def n_u(self) -> int:
        return self.mesh.ncells * self.m_u * self.nb

    @property
    def n_v(self) -> int:
        return self.mesh.ncells * self.m_v * self.nb

    @property
    def ndofs(self) -> int:
        return self.n_u + self.n_v

    def ncomp(self, which: str) -> int:
        return {"u": self.m_u, "v": self.m_v}[which]

    @cached_property
    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Reference tensor Gauss points in ``[-1, 1]^d`` and weights, ``k + 1`` per direction."""
        return _tensor_points(*gauss(self.k + 1), self.dim)

    @cached_property
    def vandermonde(self) -> np.ndarray:
        """Reference basis values at the quadrature points, ``(nq, nb)``."""
        return _tensor_vander(self.quadrature[0], self.k)

    def physical_points(self, ref_pts: np.ndarray) -> np.ndarray:
        """Map reference points into every cell: ``(ncells, npts, dim)``."""
        m = self.mesh
        return m.lower[:, None, :] + 0.5 * (ref_pts[None, :, :] + 1.0) * m.widths[:, None, :]

    def cell_scale(self) -> np.ndarray:
        """``prod_i sqrt(h_i / 2)``, relating reference and physical orthonormal bases."""
        return np.sqrt(np.prod(self.mesh.widths / 2.0, axis=1))

    def dof_mask(self, cell_mask: np.ndarray, which: str) -> np.ndarray:
        return np.repeat(np.asarray(cell_mask, dtype=bool), self.ncomp(which) * self.nb)

    def dof_cells(self, which: str) -> np.ndarray:
        return np.repeat(np.arange(self.mesh.ncells), self.ncomp(which) * self.nb)

    def zeros(self, which: str) -> np.ndarray:
        return np.zeros(self.n_u if which == "u" else self.n_v)

    def cell_view(self, block: np.ndarray, which: str) -> np.ndarray:
        return np.asarray(block).reshape(self.mesh.ncells, self.ncomp(which), self.nb)


@dataclass
class FieldPair:
    """State ``(u, v)`` of modal coefficients at time ``t``."""

    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def copy(self) -> "FieldPair":
        return FieldPair(self.u.copy(), self.v.copy(), self.t)

    def check(self, space: DgSpace) -> None:
        if self.u.shape != (space.n_u,) or self.v.shape != (space.n_v,):
            raise ValueError("field block sizes do not match the space")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("non-finite coefficients")

    @classmethod
    def zeros(cls, space: DgSpace, t: float = 0.0) -> "FieldPair":
        return cls(space.zeros("u"), space.zeros("v"), t)


@dataclass(frozen=True)
class WeightedIP:
    """Per-dof diagonal weights of the material inner products (eps on u, mu on v)."""

    w_u: np.ndarray
    w_v: np.ndarray

    @classmethod
    def from_space(cls, space: DgSpace) -> "WeightedIP":
        m = space.mesh
        return cls(np.repeat(m.eps, space.m_u * space.nb),
                   np.repeat(m.mu, space.m_v * space.nb))

    def dot_u(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(self.w_u * a, b))

    def dot_v(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(self.w_v * a, b))

    def norm(self, x: FieldPair) -> float:
        return float(np.sqrt(self.dot_u(x.u, x.u) + self.dot_v(x.v, x.v)))


def inner(ip: WeightedIP, a: FieldPair, b: FieldPair) -> float:
    """``<a_u, b_u>_eps + <a_v, b_v>_mu``."""
    if a.u.shape != b.u.shape or a.v.shape != b.v.shape:
        raise ValueError("field shapes differ")
    if a.u.shape != ip.w_u.shape or a.v.shape != ip.w_v.shape:
        raise ValueError("field shapes do not match the inner product")
    return ip.dot_u(a.u, b.u) + ip.dot_v(a.v, b.v)


def _call_field(f: Callable, pts: np.ndarray, m: int) -> np.ndarray:
    vals = np.asarray(f(pts), dtype=float)
    return vals.reshape(pts.shape[0], m)


def project_l2(space: DgSpace, f: Callable[[np.ndarray], np.ndarray], which: str,
               nquad: int | None = None) -> np.ndarray:
    """L2 projection of ``f`` onto the ``which`` block.

    ``f`` maps an ``(npts, dim)`` array of points to ``(npts, m)`` values and is
    sampled at ``nquad`` Gauss points per direction (default ``2(k+1)``).  With
    cellwise-constant materials the weighted and unweighted projections agree,
    so this is plain per-cell quadrature against the orthonormal basis.
    """
    m = space.ncomp(which)
    nquad = 2 * (space.k + 1) if nquad is None else nquad
    if nquad == space.k + 1:
        ref, wts = space.quadrature
        vander = space.vandermonde
    else:
        if nquad < space.k + 1:
            raise ValueError("quadrature cannot integrate basis products exactly")
        ref, wts = _tensor_points(*gauss(nquad), space.dim)
        vander = _tensor_vander(ref, space.k)
    pts = space.physical_points(ref)
    nc, nq = pts.shape[:2]
    vals = _call_field(f, pts.reshape(-1, space.dim), m).reshape(nc, nq, m)
    coef = np.einsum("cqm,q,qj->cmj", vals, wts, vander) * space.cell_scale()[:, None, None]
    return coef.reshape(-1)


def evaluate(space: DgSpace, block: np.ndarray, points: np.ndarray, which: str) -> np.ndarray:
    """Point values of a coefficient block, shape ``(npts, m)``."""
    mesh = space.mesh
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != space.dim:
        pts = pts.reshape(-1, space.dim)
    cells = mesh.find_cells(pts)
    ref = 2.0 * (pts - mesh.lower[cells]) / mesh.widths[cells] - 1.0
    vander = _tensor_vander(ref, space.k) / space.cell_scale()[cells, None]
    coef = space.cell_view(block, which)[cells]
    return np.einsum("pmj,pj->pm", coef, vander)


def write_coefficients_csv(space: DgSpace, block: np.ndarray, which: str, path) -> None:
    """Debug dump: one ``cell,component,mode,value`` row per coefficient."""
    view = space.cell_view(block, which)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "component", "mode", "value"])
        for c, comp, j in np.ndindex(view.shape):
            w.writerow([c, comp, j, repr(float(view[c, comp, j]))])
