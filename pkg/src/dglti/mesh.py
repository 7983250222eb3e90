"""Nonuniform tensor-product meshes, fine/coarse classification and cutoff masks.

Cells of a 2D mesh are numbered ``ix * ny + iy`` (x index varies slowest).
A face is *interior* when it separates two cells and *boundary* otherwise;
interior faces are stored with the cell on the lower side of the face first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class MeshError(ValueError):
    """Invalid mesh, partition or fine rule."""


@dataclass(frozen=True)
class Mesh:
    """Conforming tensor-product mesh in one or two dimensions.

    Attributes
    ----------
    axes
        Strictly increasing cell boundaries, one array per axis.
    lower, widths
        ``(ncells, dim)`` arrays with the lower corner and extents of each cell.
    diameter
        Cell diameters ``h_K`` (the diagonal for rectangles).
    interior_faces
        ``(nf, 3)`` integer array of ``(minus_cell, plus_cell, direction)``.
    boundary_faces
        ``(nb, 3)`` integer array of ``(cell, direction, side)`` with side 0 for
        the lower and 1 for the upper end of the axis.
    eps, mu
        Positive per-cell material values.
    """

    axes: tuple[np.ndarray, ...]
    lower: np.ndarray
    widths: np.ndarray
    diameter: np.ndarray
    interior_faces: np.ndarray
    boundary_faces: np.ndarray
    eps: np.ndarray
    mu: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) - 1 for a in self.axes)

    @property
    def ncells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h_max(self) -> float:
        return float(self.diameter.max())

    @property
    def h_min(self) -> float:
        return float(self.diameter.min())

    @property
    def centers(self) -> np.ndarray:
        return self.lower + 0.5 * self.widths

    @property
    def min_edge(self) -> np.ndarray:
        return self.widths.min(axis=1)

    @property
    def domain(self) -> tuple[tuple[float, float], ...]:
        return tuple((float(a[0]), float(a[-1])) for a in self.axes)

    def neighbors(self) -> list[np.ndarray]:
        """Face neighbours of every cell."""
        nbrs: list[list[int]] = [[] for _ in range(self.ncells)]
        for m, p, _ in self.interior_faces:
            nbrs[m].append(p)
            nbrs[p].append(m)
        return [np.array(sorted(n), dtype=int) for n in nbrs]

    def find_cells(self, points: np.ndarray) -> np.ndarray:
        """Index of the cell owning each point; raises for points outside."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            points = points.reshape(-1, self.dim)
        idx = []
        for d, ax in enumerate(self.axes):
            x = points[:, d]
            tol = 1e-12 * (ax[-1] - ax[0])
            if np.any(x < ax[0] - tol) or np.any(x > ax[-1] + tol):
                raise MeshError("point outside the mesh")
            idx.append(np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2))
        if self.dim == 1:
            return idx[0]
        return idx[0] * self.shape[1] + idx[1]

    def with_materials(self, eps=None, mu=None) -> "Mesh":
        """Copy of the mesh with new per-cell materials (scalars, arrays or callables of centers)."""
        return _make_mesh(self.axes, eps if eps is not None else self.eps,
                          mu if mu is not None else self.mu)


def _material(value, centers: np.ndarray, name: str) -> np.ndarray:
    n = centers.shape[0]
    if callable(value):
        arr = np.asarray(value(centers), dtype=float).reshape(n)
    else:
        arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise MeshError(f"material {name} must be positive")
    return arr


def _check_axis(ax) -> np.ndarray:
    ax = np.asarray(ax, dtype=float)
    if ax.ndim != 1 or len(ax) < 2:
        raise MeshError("an axis needs at least two boundaries")
    if np.any(np.diff(ax) <= 0):
        raise MeshError("cell boundaries must be strictly increasing")
    return ax


def _make_mesh(axes, eps=1.0, mu=1.0) -> Mesh:
    axes = tuple(_check_axis(a) for a in axes)
    if len(axes) == 1:
        x = axes[0]
        n = len(x) - 1
        lower = x[:-1, None]
        widths = np.diff(x)[:, None]
        cells = np.arange(n)
        interior = np.stack([cells[:-1], cells[1:], np.zeros(n - 1, dtype=int)], axis=1)
        boundary = np.array([[0, 0, 0], [n - 1, 0, 1]], dtype=int)
    elif len(axes) == 2:
        x, y = axes
        nx, ny = len(x) - 1, len(y) - 1
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        ix, iy = ix.ravel(), iy.ravel()
        lower = np.stack([x[ix], y[iy]], axis=1)
        widths = np.stack([np.diff(x)[ix], np.diff(y)[iy]], axis=1)
        cid = (ix * ny + iy).reshape(nx, ny)
        fx = np.stack([cid[:-1, :].ravel(), cid[1:, :].ravel(),
                       np.zeros((nx - 1) * ny, dtype=int)], axis=1)
        fy = np.stack([cid[:, :-1].ravel(), cid[:, 1:].ravel(),
                       np.ones(nx * (ny - 1), dtype=int)], axis=1)
        interior = np.concatenate([fx, fy]).astype(int)
        bnd = []
        for c in cid[0, :]:
            bnd.append((c, 0, 0))
        for c in cid[-1, :]:
            bnd.append((c, 0, 1))
        for c in cid[:, 0]:
            bnd.append((c, 1, 0))
        for c in cid[:, -1]:
            bnd.append((c, 1, 1))
        boundary = np.array(bnd, dtype=int)
    else:
        raise MeshError("only 1D and 2D meshes are supported")
    diameter = np.sqrt((widths ** 2).sum(axis=1))
    centers = lower + 0.5 * widths
    return Mesh(axes=axes, lower=lower, widths=widths, diameter=diameter,
                interior_faces=interior.reshape(-1, 3), boundary_faces=boundary,
                eps=_material(eps, centers, "eps"), mu=_material(mu, centers, "mu"))


def build_interval_mesh(domain: tuple[float, float], cell_widths: Sequence[float],
                        eps=1.0, mu=1.0) -> Mesh:
    """1D mesh of ``domain`` made of consecutive cells with the given widths."""
    a, b = map(float, domain)
    w = np.asarray(cell_widths, dtype=float)
    if w.ndim != 1 or len(w) == 0:
        raise MeshError("need at least one cell")
    if np.any(w <= 0):
        raise MeshError("cell widths must be positive")
    if abs(w.sum() - (b - a)) > 1e-12 * abs(b - a):
        raise MeshError(f"cell widths sum to {w.sum()!r}, domain length is {b - a!r}")
    x = a + np.concatenate([[0.0], np.cumsum(w)])
    x[-1] = b
    return _make_mesh((x,), eps, mu)


def build_tensor_mesh(domain, x_boundaries, y_boundaries, eps=1.0, mu=1.0) -> Mesh:
    """2D Cartesian product mesh; boundary arrays must span ``domain`` exactly."""
    (x0, x1), (y0, y1) = domain
    xb, yb = _check_axis(x_boundaries), _check_axis(y_boundaries)
    for ax, lo, hi in ((xb, x0, x1), (yb, y0, y1)):
        scale = max(abs(hi - lo), 1.0)
        if abs(ax[0] - lo) > 1e-12 * scale or abs(ax[-1] - hi) > 1e-12 * scale:
            raise MeshError("boundary arrays must start and end at the domain edges")
    return _make_mesh((xb, yb), eps, mu)


def graded_axis(a: float, b: float, n: int, box: tuple[float, float] | None = None,
                levels: int = 0) -> np.ndarray:
    """Boundaries of ``n`` uniform cells on ``[a, b]``; cells whose center lies in
    ``box`` are split into ``2**levels`` equal pieces."""
    x = np.linspace(a, b, n + 1)
    if box is None or levels == 0:
        return x
    lo, hi = box
    pts = [x[0]]
    for left, right in zip(x[:-1], x[1:]):
        c = 0.5 * (left + right)
        if lo <= c <= hi:
            pts.extend(np.linspace(left, right, 2 ** levels + 1)[1:])
        else:
            pts.append(right)
    return np.asarray(pts)


def stabilization_interval_mesh() -> Mesh:
    """Unit interval with 100 cells of width 0.009975 and one cell of width
    0.0025 in the middle (the 1D stabilization study grid)."""
    widths = [0.009975] * 50 + [0.0025] + [0.009975] * 50
    return build_interval_mesh((0.0, 1.0), widths)


@dataclass(frozen=True)
class FineRule:
    """How to select the fine cells.

    ``kind`` is ``"threshold"`` (cells with ``measure < threshold``),
    ``"cells"`` (explicit indices) or ``"region"`` (``predicate(centers)``).
    ``measure`` is ``"diameter"`` or ``"min_edge"``; the latter catches the thin
    strips a graded tensor grid creates around a refined box.
    """

    kind: str
    threshold: float = 0.0
    measure: str = "diameter"
    cells: tuple[int, ...] = ()
    predicate: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    @classmethod
    def below(cls, threshold: float, measure: str = "diameter") -> "FineRule":
        return cls("threshold", threshold=threshold, measure=measure)

    @classmethod
    def indices(cls, cells: Sequence[int]) -> "FineRule":
        return cls("cells", cells=tuple(int(c) for c in cells))

    @classmethod
    def region(cls, predicate: Callable[[np.ndarray], np.ndarray]) -> "FineRule":
        return cls("region", predicate=predicate)

    def select(self, mesh: Mesh) -> np.ndarray:
        if self.kind == "threshold":
            if self.measure == "diameter":
                size = mesh.diameter
            elif self.measure == "min_edge":
                size = mesh.min_edge
            else:
                raise MeshError(f"unknown size measure {self.measure!r}")
            return size < self.threshold
        if self.kind == "cells":
            fine = np.zeros(mesh.ncells, dtype=bool)
            idx = np.asarray(self.cells, dtype=int)
            if np.any(idx < 0) or np.any(idx >= mesh.ncells):
                raise MeshError("fine cell index out of range")
            fine[idx] = True
            return fine
        if self.kind == "region":
            if self.predicate is None:
                raise MeshError("region rule needs a predicate")
            return np.asarray(self.predicate(mesh.centers), dtype=bool).reshape(mesh.ncells)
        raise MeshError(f"unknown fine rule {self.kind!r}")


@dataclass(frozen=True)
class MeshPartition:
    """Fine/coarse split and the derived M-set / LF-set masks over cells."""

    mesh: Mesh
    fine: np.ndarray
    m_set: np.ndarray

    @property
    def coarse(self) -> np.ndarray:
        return ~self.fine

    @property
    def lf_set(self) -> np.ndarray:
        return ~self.m_set

    @property
    def h_c(self) -> float:
        return float(self.mesh.diameter[self.coarse].min())

    @property
    def h_f(self) -> float:
        if not self.fine.any():
            return float("inf")
        return float(self.mesh.diameter[self.fine].min())


def classify(mesh: Mesh, rule: FineRule) -> MeshPartition:
    """Split cells into fine/coarse and build the M-set by one face-neighbour sweep."""
    fine = np.asarray(rule.select(mesh), dtype=bool)
    if fine.all():
        raise MeshError("every cell is fine; the coarse set must not be empty")
    m_set = fine.copy()
    faces = mesh.interior_faces
    if len(faces):
        a, b = faces[:, 0], faces[:, 1]
        m_set[b[fine[a]]] = True
        m_set[a[fine[b]]] = True
    return MeshPartition(mesh=mesh, fine=fine, m_set=m_set)


def cutoff_mask(partition: MeshPartition, which: str) -> np.ndarray:
    """Boolean cell mask of the M-set (``"M"``) or LF-set (``"LF"``)."""
    if which.upper() == "M":
        return partition.m_set.copy()
    if which.upper() == "LF":
        return partition.lf_set.copy()
    if which.upper() == "ALL":
        return np.ones(partition.mesh.ncells, dtype=bool)
    raise MeshError(f"unknown mask {which!r}")


def _pair(value, dim):
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if dim == 1:
        return tuple(arr.reshape(2))
    return [tuple(r) for r in arr.reshape(dim, 2)]


def mesh_from_config(cfg: dict) -> tuple[Mesh, FineRule]:
    """Build a mesh and fine rule from a parsed config mapping.

    Recognised keys under ``cfg["mesh"]``: ``preset`` (``"stabilization-1d"``),
    ``domain``, ``widths`` (1D), ``axes`` (explicit boundaries), or ``n`` with
    optional ``refine_box`` and ``levels``; ``eps``/``mu`` scalars.  The fine rule
    lives under ``cfg["fine"]`` with one of ``threshold`` (+ ``measure``),
    ``cells``, ``ball: {center, radius}`` or ``box``.
    """
    mcfg = dict(cfg.get("mesh", {}))
    eps, mu = mcfg.get("eps", 1.0), mcfg.get("mu", 1.0)
    if mcfg.get("preset") == "stabilization-1d":
        mesh = stabilization_interval_mesh()
    else:
        domain = np.asarray(mcfg["domain"], dtype=float)
        dim = 1 if domain.size == 2 else 2
        dom = _pair(domain, dim)
        if "widths" in mcfg:
            mesh = build_interval_mesh(dom, mcfg["widths"], eps, mu)
        else:
            if "axes" in mcfg:
                axes = [np.asarray(a, dtype=float) for a in mcfg["axes"]]
            else:
                n = mcfg["n"]
                ns = [n] * dim if np.isscalar(n) else list(n)
                box = _pair(mcfg.get("refine_box"), dim)
                levels = int(mcfg.get("levels", 0))
                doms = [dom] if dim == 1 else dom
                boxes = [box] if dim == 1 else (box or [None] * dim)
                axes = [graded_axis(d[0], d[1], int(k), b, levels)
                        for d, k, b in zip(doms, ns, boxes)]
            if dim == 1:
                mesh = _make_mesh((axes[0],), eps, mu)
            else:
                mesh = build_tensor_mesh(dom, axes[0], axes[1], eps, mu)
    fcfg = dict(cfg.get("fine", {}))
    if "threshold" in fcfg:
        rule = FineRule.below(float(fcfg["threshold"]), fcfg.get("measure", "diameter"))
    elif "cells" in fcfg:
        rule = FineRule.indices(fcfg["cells"])
    elif "ball" in fcfg:
        center = np.asarray(fcfg["ball"]["center"], dtype=float)
        radius = float(fcfg["ball"]["radius"])
        rule = FineRule.region(lambda c: np.linalg.norm(c - center, axis=1) <= radius)
    elif "box" in fcfg:
        box = np.asarray(fcfg["box"], dtype=float).reshape(-1, 2)
        rule = FineRule.region(
            lambda c: np.all((c >= box[:, 0]) & (c <= box[:, 1]), axis=1))
    else:
        rule = FineRule.indices([])
    return mesh, rule
