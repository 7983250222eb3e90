"""Concrete two-field problems: TE Maxwell cavity and the 1D wave pair.

Both are written in the template ``du/dt = L v + f``, ``dv/dt = Lt u + g`` with
``mu Lt u = sum_i A_i d_i u`` and ``eps L v = sum_i A_i^T d_i v``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dgspace import DgSpace, FieldPair, _tensor_points, _tensor_vander, gauss

PI = np.pi
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ProblemCase:
    """A two-field Friedrichs problem with optional exact solution.

    ``exact(x, t)`` and ``initial(x)`` return ``(u_values, v_values)`` with shapes
    ``(npts, m_u)`` and ``(npts, m_v)``.  Sources are ``source_shape(x) *
    source_factor(t)`` (already divided by the material), or absent.
    """

    tag: str
    domain: tuple
    m_u: int
    m_v: int
    coeffs: tuple[np.ndarray, ...]
    u_reflect: Callable[[np.ndarray], np.ndarray]
    v_reflect: Callable[[np.ndarray], np.ndarray]
    boundary: str
    initial: Callable
    exact: Callable | None = None
    source_shape: Callable | None = None
    source_factor: Callable[[float], float] | None = None
    T: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.coeffs)

    def source(self, x: np.ndarray, t: float):
        if self.source_shape is None:
            return None
        fu, gv = self.source_shape(x)
        s = self.source_factor(t)
        return fu * s, gv * s

    def space(self, mesh, k: int) -> DgSpace:
        if mesh.dim != self.dim:
            raise ValueError(f"{self.tag} needs a {self.dim}D mesh")
        return DgSpace(mesh, k, self.m_u, self.m_v)


def _te_reflect_u(n: np.ndarray) -> np.ndarray:
    # ghost E = -E + 2 (E.n) n: tangential part flips, normal part kept
    n = np.asarray(n, dtype=float)
    return -np.eye(2) + 2.0 * np.outer(n, n)


def te_cavity() -> ProblemCase:
    """TE-mode Maxwell on (0,1)^2 with the exponentially growing cavity solution.

    ``u = (E_x, E_y)`` with weight eps, ``v = H_z`` with weight mu, eps = mu = 1,
    perfectly conducting walls.
    """

    def exact(x, t):
        cx, sx = np.cos(TWO_PI * x[:, 0]), np.sin(TWO_PI * x[:, 0])
        cy, sy = np.cos(TWO_PI * x[:, 1]), np.sin(TWO_PI * x[:, 1])
        et = np.exp(t)
        u = np.stack([cx * sy * et, -sx * cy * et], axis=1)
        v = (4 * PI * cx * cy * et)[:, None]
        return u, v

    def source_shape(x):
        # f = -J / eps
        cx, sx = np.cos(TWO_PI * x[:, 0]), np.sin(TWO_PI * x[:, 0])
        cy, sy = np.cos(TWO_PI * x[:, 1]), np.sin(TWO_PI * x[:, 1])
        c = 1.0 + 8.0 * PI ** 2
        fu = np.stack([c * cx * sy, -c * sx * cy], axis=1)
        return fu, np.zeros((x.shape[0], 1))

    return ProblemCase(
        tag="MaxwellTE",
        domain=((0.0, 1.0), (0.0, 1.0)),
        m_u=2,
        m_v=1,
        # mu dHz/dt = dEx/dy - dEy/dx
        coeffs=(np.array([[0.0, -1.0]]), np.array([[1.0, 0.0]])),
        u_reflect=_te_reflect_u,
        v_reflect=lambda n: np.eye(1),
        boundary="pec",
        initial=lambda x: exact(x, 0.0),
        exact=exact,
        source_shape=source_shape,
        source_factor=np.exp,
        T=1.0,
    )


def wave1d_standing() -> ProblemCase:
    """``du/dt = -dv/dx``, ``dv/dt = -du/dx`` on (0,1) with u = 0 at both ends."""

    def exact(x, t):
        u = np.sin(TWO_PI * x[:, 0]) * np.cos(TWO_PI * t)
        v = -np.cos(TWO_PI * x[:, 0]) * np.sin(TWO_PI * t)
        return u[:, None], v[:, None]

    return ProblemCase(
        tag="Wave1D",
        domain=((0.0, 1.0),),
        m_u=1,
        m_v=1,
        coeffs=(np.array([[-1.0]]),),
        u_reflect=lambda n: -np.eye(1),
        v_reflect=lambda n: np.eye(1),
        boundary="u=0",
        initial=lambda x: exact(x, 0.0),
        exact=exact,
        T=1.0,
    )


PROBLEMS = {"te-cavity": te_cavity, "wave1d": wave1d_standing}


def get_problem(name: str) -> ProblemCase:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def project_pair(space: DgSpace, fn: Callable, t: float = 0.0) -> FieldPair:
    """Project a callable returning ``(u_values, v_values)`` onto both blocks."""
    from .dgspace import project_l2

    cache = {}

    def part(i):
        def f(x):
            key = x.shape
            if key not in cache:
                cache[key] = fn(x)
            return cache[key][i]
        return f

    u = project_l2(space, part(0), "u")
    v = project_l2(space, part(1), "v")
    return FieldPair(u, v, t)


class ErrorMeter:
    """Weighted broken L2 error against an exact solution, with ``2(k+1)``
    Gauss points per direction."""

    def __init__(self, space: DgSpace, problem: ProblemCase):
        if problem.exact is None:
            raise ValueError(f"{problem.tag} has no exact solution")
        self.space = space
        self.problem = problem
        ref, w = _tensor_points(*gauss(2 * (space.k + 1)), space.dim)
        self.points = space.physical_points(ref).reshape(-1, space.dim)
        self.vander = _tensor_vander(ref, space.k)
        jac = np.prod(space.mesh.widths / 2.0, axis=1)
        self.weights = w[None, :] * jac[:, None]
        self.scale = space.cell_scale()

    def _values(self, block, which):
        sp = self.space
        coef = sp.cell_view(block, which) / self.scale[:, None, None]
        return np.einsum("cmj,qj->cqm", coef, self.vander)

    def __call__(self, state: FieldPair, t: float | None = None) -> tuple[float, float, float]:
        t = state.t if t is None else t
        sp = self.space
        nc = sp.mesh.ncells
        ue, ve = self.problem.exact(self.points, t)
        du = self._values(state.u, "u") - ue.reshape(nc, -1, sp.m_u)
        dv = self._values(state.v, "v") - ve.reshape(nc, -1, sp.m_v)
        eu = np.sum(sp.mesh.eps[:, None] * self.weights * (du ** 2).sum(axis=2))
        ev = np.sum(sp.mesh.mu[:, None] * self.weights * (dv ** 2).sum(axis=2))
        return float(np.sqrt(eu)), float(np.sqrt(ev)), float(np.sqrt(eu + ev))


def l2_error(space: DgSpace, state: FieldPair, problem: ProblemCase, t: float | None = None):
    """``(err_u, err_v, err_total)`` in the material-weighted broken L2 norm."""
    return ErrorMeter(space, problem)(state, t)
