"""Filtered leapfrog time integration with local filtering on the M-set.

One step of size ``tau`` reads::

    vbar    = v^n + tau/2 (L1 u^n + g^{n+1/2})
    u^{n+1} = u^n + tau Psi(tau^2 S_M) (L2 vbar + f^{n+1/2})
    v^{n+1} = vbar + tau/2 (L1 u^{n+1} + g^{n+1/2})

with ``S_M = -L2 chi_M L1``.  ``Psi = 1`` is the leapfrog method.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .dgspace import DgSpace, FieldPair
from .filters import (LEAPFROG, FilterConstants, FilterSpec, PsiOperator,
                      constants, psi, theta)
from .mesh import MeshPartition, cutoff_mask
from .operators import (DiscreteFriedrichsPair, assemble_dense, assemble_pair,
                        masked_operator, spectral_norm)
from .problems import ErrorMeter, ProblemCase, project_pair

AVERAGED, MIDPOINT = "averaged", "midpoint"
DIVERGENCE_FACTOR = 1e15


class CflViolation(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, step: int, summary: "RunSummary"):
        super().__init__(f"state norm blew up at step {step}")
        self.step = step
        self.summary = summary


@dataclass(frozen=True)
class CflParams:
    theta: float = 0.95
    theta_c: float = 0.9

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if not 0 < self.theta_c < 1:
            raise ValueError("theta_c must lie in (0, 1)")


@dataclass(frozen=True)
class CflLimits:
    tau_psi: float
    tau_lf_c: float
    tau_lf: float

    @property
    def admissible(self) -> float:
        # any filter with 0 < Psi <= 1 on [0, 4] is stable under the global leapfrog bound too
        return max(min(self.tau_psi, self.tau_lf_c), self.tau_lf)


def _limit(num: float, norm: float) -> float:
    if norm == 0.0 or math.isinf(num):
        return math.inf
    return math.sqrt(num / norm)


def compute_cfl(spec: FilterSpec, consts: FilterConstants, norms: dict, params: CflParams) -> CflLimits:
    """The three step-size limits from the M, LF and full operator norms."""
    return CflLimits(
        tau_psi=_limit(consts.beta2, norms["M"]),
        tau_lf_c=_limit(4.0 * consts.c_theta * params.theta_c ** 2, norms["LF"]),
        tau_lf=_limit(4.0 * params.theta ** 2, norms["ALL"]),
    )


class Discretization:
    """Space, assembled operators, partition and (lazily) operator norms."""

    def __init__(self, problem: ProblemCase, mesh, k: int, partition: MeshPartition,
                 norm_tol: float = 1e-6):
        self.problem = problem
        self.space: DgSpace = problem.space(mesh, k)
        self.pair: DiscreteFriedrichsPair = assemble_pair(self.space, problem)
        self.partition = partition
        self.norm_tol = norm_tol
        self.ops = {w: masked_operator(self.pair, partition, w) for w in ("M", "LF", "ALL")}

    @cached_property
    def norms(self) -> dict:
        return {w: spectral_norm(op, self.norm_tol) for w, op in self.ops.items()}

    @cached_property
    def error_meter(self) -> ErrorMeter:
        return ErrorMeter(self.space, self.problem)

    def initial_state(self, t0: float = 0.0) -> FieldPair:
        if self.problem.exact is not None and t0 != 0.0:
            return project_pair(self.space, lambda x: self.problem.exact(x, t0), t0)
        return project_pair(self.space, self.problem.initial, t0)

    def fine_dof_fraction(self) -> float:
        return float(self.partition.fine.mean())


class SourceProjector:
    """Projected source blocks ``(f_u, g_v)`` at requested times (``None`` if absent)."""

    def __init__(self, space: DgSpace, problem: ProblemCase):
        self.space = space
        self.problem = problem
        self.active = problem.source_shape is not None
        if self.active:
            self._shape = project_pair(space, problem.source_shape)

    def __call__(self, t: float):
        if not self.active:
            return None
        s = self.problem.source_factor(t)
        return self._shape.u * s, self._shape.v * s


@dataclass
class StepContext:
    disc: Discretization
    spec: FilterSpec
    tau: float
    params: CflParams = field(default_factory=CflParams)
    rhs_mode: str = AVERAGED
    override_cfl: bool = False
    cg_tol: float = 1e-10

    def __post_init__(self):
        if self.rhs_mode not in (AVERAGED, MIDPOINT):
            raise ValueError(f"unknown rhs mode {self.rhs_mode!r}")
        if self.spec.variant == LEAPFROG:
            self.consts = FilterConstants(1.0 - self.params.theta ** 2, 4.0 * self.params.theta ** 2,
                                          0.25, self.params.theta)
        else:
            self.consts = constants(self.spec)
        if self.override_cfl:
            self.cfl = None
        else:
            self.cfl = compute_cfl(self.spec, self.consts, self.disc.norms, self.params)
            if abs(self.tau) > self.cfl.admissible * (1 + 1e-12):
                raise CflViolation(
                    f"tau = {self.tau:.6g} exceeds the admissible step {self.cfl.admissible:.6g} "
                    f"for {self.spec.label}")
        norm = None if self.override_cfl else self.disc.norms["M"]
        self.psi_op = PsiOperator(self.spec, abs(self.tau), self.disc.ops["M"], norm, self.cg_tol)
        self.sources = SourceProjector(self.disc.space, self.disc.problem)

    @property
    def pair(self) -> DiscreteFriedrichsPair:
        return self.disc.pair

    def half_source(self, t: float):
        if not self.sources.active:
            return None
        if self.rhs_mode == MIDPOINT:
            return self.sources(t + 0.5 * self.tau)
        a, b = self.sources(t), self.sources(t + self.tau)
        return 0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])


def lti_step(ctx: StepContext, state: FieldPair, source=None) -> FieldPair:
    """One filtered-leapfrog step.  ``source`` overrides the context's averaged
    source with explicit ``(f_u, g_v)`` blocks at the half step."""
    pair, tau = ctx.pair, ctx.tau
    g = ctx.half_source(state.t) if source is None else source
    fu, gv = (0.0, 0.0) if g is None else g
    vbar = state.v + 0.5 * tau * (pair.apply_l1(state.u) + gv)
    u_new = state.u + tau * ctx.psi_op(pair.apply_l2(vbar) + fu)
    v_new = vbar + 0.5 * tau * (pair.apply_l1(u_new) + gv)
    return FieldPair(u_new, v_new, state.t + tau)


@dataclass
class RunSummary:
    final_state: FieldPair
    steps: int
    max_error: float
    final_error: float
    errors: list = field(default_factory=list)
    diverged_at: int | None = None
    wall_seconds: float = 0.0
    cg_iterations: int = 0
    initial_norm: float = math.nan


def run(ctx: StepContext, t0: float = 0.0, T: float | None = None, initial: FieldPair | None = None,
        error_every: int = 1, divergence_factor: float = DIVERGENCE_FACTOR,
        hook: Callable[[int, FieldPair], None] | None = None) -> RunSummary:
    """March from ``t0`` to ``T`` with steps of ``ctx.tau``.

    The weighted L2 error against the exact solution is recorded every
    ``error_every`` steps (0 disables all but the final one); ``max_error`` is the
    maximum over the recorded times including ``t0``.
    """
    disc = ctx.disc
    T = disc.problem.T if T is None else T
    ratio = (T - t0) / ctx.tau
    n = int(round(ratio))
    if abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ValueError(f"(T - t0) / tau = {ratio!r} is not an integer")
    state = disc.initial_state(t0) if initial is None else initial.copy()
    meter = disc.error_meter if disc.problem.exact is not None else None
    ip = disc.pair.ip
    norm0 = ip.norm(state)
    limit = divergence_factor * (norm0 or 1.0)
    errors = []
    if meter is not None:
        errors.append(meter(state)[2])

    pair, tau, psi_op = disc.pair, ctx.tau, ctx.psi_op
    L1, L2 = pair.L1, pair.L2
    u, v, t = state.u.copy(), state.v.copy(), state.t
    l1u = L1 @ u
    h = 0.5 * tau
    src = ctx.sources
    g_next = src(t) if (src.active and ctx.rhs_mode == AVERAGED) else None
    psi_op.iterations.clear()
    start = time.perf_counter()
    for step in range(1, n + 1):
        if src.active:
            if ctx.rhs_mode == AVERAGED:
                g_prev, g_next = g_next, src(t + tau)
                fu, gv = 0.5 * (g_prev[0] + g_next[0]), 0.5 * (g_prev[1] + g_next[1])
            else:
                fu, gv = src(t + h)
            v += h * (l1u + gv)
            u += tau * psi_op(L2 @ v + fu)
            l1u = L1 @ u
            v += h * (l1u + gv)
        else:
            v += h * l1u
            u += tau * psi_op(L2 @ v)
            l1u = L1 @ u
            v += h * l1u
        t = t0 + step * tau
        record = meter is not None and (step == n or (error_every and step % error_every == 0))
        if record or step % 16 == 0 or step == n:
            cur = FieldPair(u, v, t)
            nrm = ip.norm(cur)
            if not np.isfinite(nrm) or nrm > limit:
                wall = time.perf_counter() - start
                summary = RunSummary(cur.copy(), step, math.inf, math.inf, errors, step, wall,
                                     sum(psi_op.iterations), norm0)
                raise DivergenceError(step, summary)
            if record:
                errors.append(meter(cur)[2])
            if hook is not None:
                hook(step, cur)
    wall = time.perf_counter() - start
    final = FieldPair(u, v, t0 + n * tau)
    if meter is not None:
        max_err, fin_err = max(errors), errors[-1]
    else:
        max_err = fin_err = math.nan
    return RunSummary(final, n, max_err, fin_err, errors, None, wall, sum(psi_op.iterations), norm0)


# ---------------------------------------------------------------------------
# dense oracle


def _weighted_function(A: np.ndarray, w: np.ndarray, f) -> np.ndarray:
    """``f(A)`` for ``A`` self-adjoint in the inner product ``diag(w)``."""
    s = np.sqrt(w)
    B = (s[:, None] * A) / s[None, :]
    B = 0.5 * (B + B.T)
    lam, V = np.linalg.eigh(B)
    lam = np.clip(lam, 0.0, None)
    F = (V * f(lam)) @ V.T
    return (F / s[:, None]) * s[None, :]


@dataclass
class DenseStepOracle:
    """Dense one-step operators of the scheme for a small discretisation."""

    tau: float
    A: np.ndarray
    Psi: np.ndarray
    Theta: np.ndarray | None
    R_minus: np.ndarray | None
    R_plus: np.ndarray | None
    step_map: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    weights: np.ndarray

    def inverse_formula(self, sign: int) -> np.ndarray:
        """Closed-form inverse of ``R_plus`` (sign=+1) or ``R_minus`` (sign=-1)."""
        h = 0.5 * self.tau
        P, L1, L2 = self.Psi, self.L1, self.L2
        nv = L1.shape[0]
        top = np.hstack([P, -sign * h * P @ L2])
        bottom = np.hstack([-sign * h * L1 @ P, np.eye(nv) + h * h * L1 @ P @ L2])
        return np.vstack([top, bottom])

    def transformed_residual(self, x_new: np.ndarray, x_old: np.ndarray, g_half: np.ndarray) -> float:
        """``|R_- x^{n+1} - R_+ x^n - tau g| / |R_- x^{n+1}|`` in the weighted norm."""
        r = self.R_minus @ x_new - self.R_plus @ x_old - self.tau * g_half
        ref = self.R_minus @ x_new
        w = self.weights
        return float(np.sqrt(np.dot(w * r, r)) / max(np.sqrt(np.dot(w * ref, ref)), 1e-300))

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.step_map))))


def dense_step_oracle(disc: Discretization, spec: FilterSpec, tau: float) -> DenseStepOracle:
    """Dense ``Psi(A)``, ``Theta(A)``, ``R_pm`` and the one-step map of the scheme."""
    dense = assemble_dense(disc.pair)
    sp_ = disc.space
    chi_m = sp_.dof_mask(cutoff_mask(disc.partition, "M"), "v").astype(float)
    chi_lf = 1.0 - chi_m
    L1, L2 = dense.L1, dense.L2
    w_u, w_v = np.diag(dense.M_eps), np.diag(dense.M_mu)
    A = -tau * tau * (L2 * chi_m[None, :]) @ L1
    Psi = _weighted_function(A, w_u, lambda z: np.asarray(psi(spec, z), dtype=float))
    nu_, nv = L2.shape
    try:
        Theta = _weighted_function(A, w_u, lambda z: np.asarray(theta(spec, z), dtype=float))
    except ValueError:
        Theta = None
    h = 0.5 * tau
    if Theta is not None:
        lf_block = Theta + h * h * (L2 * chi_lf[None, :]) @ L1
        R_minus = np.block([[lf_block, -h * L2], [-h * L1, np.eye(nv)]])
        R_plus = np.block([[lf_block, h * L2], [h * L1, np.eye(nv)]])
    else:
        R_minus = R_plus = None
    # step map straight from the three substeps
    Iu, Iv = np.eye(nu_), np.eye(nv)
    vbar = np.hstack([h * L1, Iv])
    u_new = np.hstack([Iu, np.zeros((nu_, nv))]) + tau * Psi @ L2 @ vbar
    v_new = vbar + h * L1 @ u_new
    step_map = np.vstack([u_new, v_new])
    return DenseStepOracle(tau, A, Psi, Theta, R_minus, R_plus, step_map, L1, L2,
                           np.concatenate([w_u, w_v]))
