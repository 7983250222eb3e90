"""Filter functions for the filtered leapfrog scheme.

A filter ``Psi`` with ``Psi(0) = 1`` is applied as ``Psi(tau^2 S_M)`` to the
u-update.  Three families are provided: plain leapfrog (``Psi = 1``),
Crank-Nicolson on the fine part (``Psi(z) = 1 / (1 + z/4)``) and the stabilized
leapfrog-Chebyshev polynomials of degree ``p - 1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev

log = logging.getLogger(__name__)

LEAPFROG, CRANK_NICOLSON, LFC = "leapfrog", "cn", "lfc"
GRID_POINTS = 1000


class FilterDomainError(ValueError):
    """``Psi`` is not positive at the requested argument."""


class InternalConsistencyError(RuntimeError):
    """Computed filter constants fail their own defining inequalities."""


class CGError(RuntimeError):
    pass


def chebyshev_at(p: int, nu: float) -> tuple[float, float]:
    """``T_p(nu)`` and ``T_p'(nu)`` for ``nu >= 1`` via the hyperbolic form."""
    delta = nu - 1.0
    if delta < 0:
        raise ValueError("nu must be >= 1")
    if delta == 0.0:
        return 1.0, float(p * p)
    root = math.sqrt(delta * (2.0 + delta))  # sinh(acosh(nu))
    th = math.log1p(delta + root)  # acosh(nu) without cancellation
    return math.cosh(p * th), p * math.sinh(p * th) / root


def chebyshev_second_derivative(p: int, nu: float) -> float:
    return float(chebyshev.Chebyshev.basis(p).deriv(2)(nu))


@dataclass(frozen=True)
class FilterSpec:
    variant: str
    p: int = 0
    eta: float = 0.0

    def __post_init__(self):
        if self.variant not in (LEAPFROG, CRANK_NICOLSON, LFC):
            raise ValueError(f"unknown filter {self.variant!r}")
        if self.variant == LFC:
            if int(self.p) != self.p or self.p < 2:
                raise ValueError("LFC degree p must be an integer >= 2")
            if self.eta < 0:
                raise ValueError("stabilization eta must be >= 0")

    @classmethod
    def leapfrog(cls) -> "FilterSpec":
        return cls(LEAPFROG)

    @classmethod
    def crank_nicolson(cls) -> "FilterSpec":
        return cls(CRANK_NICOLSON)

    @classmethod
    def lfc(cls, p: int, eta: float = 1.0) -> "FilterSpec":
        return cls(LFC, int(p), float(eta))

    @property
    def unstabilized(self) -> bool:
        return self.variant == LFC and self.eta == 0.0

    @property
    def nu(self) -> float:
        return 1.0 + self.eta ** 2 / (2.0 * self.p ** 2)

    @property
    def cheb(self) -> tuple[float, float]:
        return chebyshev_at(self.p, self.nu)

    @property
    def alpha(self) -> float:
        tp, dtp = self.cheb
        return 2.0 * dtp / tp

    @property
    def label(self) -> str:
        if self.variant == LFC:
            return f"lfc(p={self.p},eta={self.eta:g})"
        return self.variant


def _lfc_scaled(spec: FilterSpec, y: np.ndarray) -> np.ndarray:
    """``S_p(y) = (T_p(nu) - T_p(nu - y)) / y`` by recurrence (exact at y = 0)."""
    nu = spec.nu
    t_prev, t = np.ones_like(y), nu - y
    s_prev, s = np.zeros_like(y), np.ones_like(y)
    for j in range(1, spec.p):
        s_prev, s = s, 2.0 * nu * s - s_prev + 2.0 * t
        if j < spec.p - 1:
            t_prev, t = t, 2.0 * (nu - y) * t - t_prev
    return s


def psi(spec: FilterSpec, z):
    z = np.asarray(z, dtype=float)
    if spec.variant == LEAPFROG:
        out = np.ones_like(z)
    elif spec.variant == CRANK_NICOLSON:
        out = 1.0 / (1.0 + z / 4.0)
    else:
        tp, _ = spec.cheb
        a = spec.alpha
        out = 2.0 / (a * tp) * _lfc_scaled(spec, z / a)
    return out if out.ndim else float(out)


def psi_derivative_at_zero(spec: FilterSpec) -> float:
    if spec.variant == LEAPFROG:
        return 0.0
    if spec.variant == CRANK_NICOLSON:
        return -0.25
    tp, _ = spec.cheb
    return -chebyshev_second_derivative(spec.p, spec.nu) / (spec.alpha ** 2 * tp)


def theta(spec: FilterSpec, z):
    z = np.asarray(z, dtype=float)
    ps = np.asarray(psi(spec, z))
    if np.any(ps <= 0):
        raise FilterDomainError("Psi(z) <= 0: argument outside the filter's stability interval")
    out = 1.0 / ps - z / 4.0
    return out if out.ndim else float(out)


def phi(spec: FilterSpec, z):
    z = np.asarray(z, dtype=float)
    th = np.asarray(theta(spec, z))
    at_zero = -psi_derivative_at_zero(spec) - 0.25
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(z == 0, at_zero, (th - 1.0) / np.where(z == 0, 1.0, z))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FilterConstants:
    c_theta: float
    beta2: float
    c_phi: float
    theta: float | None = None
    unstabilized: bool = False


def constants(spec: FilterSpec, theta_lf: float | None = None, verify: bool = True) -> FilterConstants:
    """``(c_Theta, beta^2, C_phi)`` of a filter; ``theta_lf`` is the leapfrog safety factor."""
    if spec.variant == LEAPFROG:
        if theta_lf is None or not 0 < theta_lf <= 1:
            raise ValueError("leapfrog constants need theta in (0, 1]")
        c = 1.0 - theta_lf ** 2
        if c <= 0:
            raise ValueError("theta = 1 gives c_Theta = 0; c_Theta must be positive")
        out = FilterConstants(c, 4.0 * (1.0 - c), 0.25, theta_lf)
    elif spec.variant == CRANK_NICOLSON:
        out = FilterConstants(1.0, math.inf, 0.0)
    else:
        tp, _ = spec.cheb
        beta2 = spec.alpha * (spec.nu + 1.0)
        if spec.unstabilized:
            return FilterConstants(0.0, beta2, math.inf, unstabilized=True)
        c = 0.5 * (1.0 - 1.0 / tp)
        out = FilterConstants(c, beta2, 0.25 * (1.0 / c - 1.0))
    if verify:
        _verify(spec, out)
    return out


def _verify(spec: FilterSpec, c: FilterConstants) -> None:
    top = c.beta2 if math.isfinite(c.beta2) else 1e6
    z = np.linspace(0.0, top, GRID_POINTS)
    ps = np.asarray(psi(spec, z))
    tol = 1e-12
    if np.any(ps <= 0) or np.any(ps > 1 + tol):
        raise InternalConsistencyError(f"{spec.label}: Psi leaves (0, 1] on [0, beta^2]")
    # 1/Psi - z/4 cancels for large z, so allow rounding relative to z
    if np.any(np.asarray(theta(spec, z)) < c.c_theta - tol * (1.0 + z)):
        raise InternalConsistencyError(f"{spec.label}: Theta drops below c_Theta")
    if np.any(np.abs(np.asarray(phi(spec, z))) > c.c_phi * (1 + 1e-9) + tol * (1.0 + z)):
        raise InternalConsistencyError(f"{spec.label}: |phi| exceeds C_phi")


def weighted_cg(apply, b: np.ndarray, weights: np.ndarray, rtol: float = 1e-10,
                max_iter: int = 500) -> tuple[np.ndarray, int]:
    """Unpreconditioned CG for an operator self-adjoint in ``<x, y> = sum w x y``."""
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = math.sqrt(np.dot(weights * b, b))
    if bnorm == 0.0:
        return x, 0
    rr = np.dot(weights * r, r)
    d = r.copy()
    for it in range(1, max_iter + 1):
        q = apply(d)
        a = rr / np.dot(weights * d, q)
        x += a * d
        r -= a * q
        rr_new = np.dot(weights * r, r)
        if math.sqrt(rr_new) <= rtol * bnorm:
            return x, it
        d = r + (rr_new / rr) * d
        rr = rr_new
    raise CGError(f"CG did not reach rtol={rtol} in {max_iter} iterations")


class PsiOperator:
    """``w -> Psi(tau^2 S) w`` restricted to the dofs ``S`` touches.

    ``S`` is a :class:`~dglti.operators.MaskedSecondOrder`; outside its local
    index set the filter acts as the identity.
    """

    def __init__(self, spec: FilterSpec, tau: float, op, norm: float | None = None,
                 cg_tol: float = 1e-10, cg_max_iter: int = 500):
        self.spec = spec
        self.tau = tau
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.iterations: list[int] = []
        if spec.variant == LFC and norm is not None:
            beta2 = spec.alpha * (spec.nu + 1.0)
            if tau * tau * norm > beta2 * (1 + 1e-12):
                raise FilterDomainError(
                    f"tau^2 ||S_M|| = {tau * tau * norm:.6g} exceeds beta^2 = {beta2:.6g}")
        self.trivial = spec.variant == LEAPFROG or op.is_zero
        if self.trivial:
            return
        self.idx, S = op.local
        self.w = op.weights[self.idx]
        if spec.variant == LFC:
            self.B = (tau * tau / spec.alpha) * S
            tp, _ = spec.cheb
            self.out_scale = 2.0 / (spec.alpha * tp)
        else:
            self.B = (tau * tau / 4.0) * S

    def _lfc(self, w):
        nu, B = self.spec.nu, self.B
        t_prev, t = w, nu * w - B @ w
        s_prev, s = np.zeros_like(w), w
        for j in range(1, self.spec.p):
            s_prev, s = s, 2.0 * nu * s - s_prev + 2.0 * t
            if j < self.spec.p - 1:
                t_prev, t = t, 2.0 * (nu * t - B @ t) - t_prev
        return self.out_scale * s

    def _cn(self, w):
        B = self.B
        x, it = weighted_cg(lambda d: d + B @ d, w, self.w, self.cg_tol, self.cg_max_iter)
        self.iterations.append(it)
        log.debug("CG converged in %d iterations", it)
        return x

    def local_apply(self, w_loc: np.ndarray) -> np.ndarray:
        return self._lfc(w_loc) if self.spec.variant == LFC else self._cn(w_loc)

    def __call__(self, w: np.ndarray) -> np.ndarray:
        if self.trivial:
            return w
        out = w.copy()
        out[self.idx] = self.local_apply(w[self.idx])
        return out


def apply_psi(spec: FilterSpec, tau: float, op, w: np.ndarray, norm: float | None = None,
              cg_tol: float = 1e-10) -> np.ndarray:
    """``Psi(tau^2 S) w`` for a masked second-order operator ``S``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return PsiOperator(spec, tau, op, norm, cg_tol)(w)


def constants_table(rows) -> str:
    """Fixed-width table of ``(name, psi form, constants)`` rows."""
    lines = [f"{'filter':<22}{'Psi':<28}{'c_Theta':>14}{'beta^2':>14}{'C_phi':>14}"]
    for name, form, c in rows:
        note = "  unstabilized" if c.unstabilized else ""
        lines.append(f"{name:<22}{form:<28}{c.c_theta:>14.9g}{c.beta2:>14.9g}{c.c_phi:>14.9g}{note}")
    return "\n".join(lines)
