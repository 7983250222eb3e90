"""Experiment drivers behind the command line: convergence sweeps, the
stabilization study, the runtime benchmark and the filter-constant table.

Every driver returns plain row dictionaries; the CLI writes them as CSV.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import yaml

from .filters import (CRANK_NICOLSON, LEAPFROG, LFC, FilterSpec, FilterConstants,
                      constants, constants_table)
from .integrators import (AVERAGED, MIDPOINT, CflParams, CflViolation, Discretization,
                          DivergenceError, StepContext, run)
from .mesh import MeshError, classify, mesh_from_config
from .problems import PROBLEMS, get_problem

log = logging.getLogger(__name__)

SENTINEL = 1e20
RUN_COLUMNS = ["tau", "steps", "max_l2_error", "final_l2_error", "status", "diverged_at",
               "wall_seconds", "cg_iterations", "filter", "p", "eta", "theta", "theta_c",
               "config_hash"]
SLOPE_COLUMNS = ["filter", "p", "eta", "slope", "points", "tau_min", "tau_max", "config_hash"]
BENCH_COLUMNS = ["scenario", "method", "tau", "steps", "total_dofs", "refined_dofs",
                 "refined_fraction", "setup_seconds", "wall_seconds", "relative_time",
                 "final_l2_error", "cg_iterations", "config_hash"]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def parse_filter(entry) -> FilterSpec:
    """``"leapfrog"``, ``"cn"``, ``"lfc:4:1.0"`` or a mapping with ``variant/p/eta``."""
    if isinstance(entry, FilterSpec):
        return entry
    if isinstance(entry, str):
        parts = entry.strip().lower().split(":")
        name = {"li": CRANK_NICOLSON, "crank-nicolson": CRANK_NICOLSON}.get(parts[0], parts[0])
        if name == LFC:
            p = int(parts[1]) if len(parts) > 1 else 4
            eta = float(parts[2]) if len(parts) > 2 else 1.0
            return FilterSpec.lfc(p, eta)
        return FilterSpec(name)
    if isinstance(entry, dict):
        variant = str(entry.get("variant", "")).lower()
        if variant == LFC:
            return FilterSpec.lfc(int(entry.get("p", 4)), float(entry.get("eta", 1.0)))
        return parse_filter(variant)
    raise ConfigError(f"cannot read filter entry {entry!r}")


def _tau_list(value, T: float, snap: bool) -> tuple[float, ...]:
    if value is None:
        return ()
    if isinstance(value, dict):
        try:
            lo, hi, count = float(value["min"]), float(value["max"]), int(value["count"])
        except KeyError as exc:
            raise ConfigError(f"tau range needs min, max and count (missing {exc})") from None
        if not 0 < lo <= hi or count < 1:
            raise ConfigError("tau range needs 0 < min <= max and count >= 1")
        taus = np.geomspace(lo, hi, count)
    else:
        taus = np.atleast_1d(np.asarray(value, dtype=float))
    if np.any(taus <= 0) or not np.all(np.isfinite(taus)):
        raise ConfigError("time steps must be positive and finite")
    if snap:
        # T / tau has to be an integer; round the step count up
        taus = T / np.ceil(T / taus - 1e-9)
    return tuple(sorted(set(float(t) for t in taus)))


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed experiment configuration plus its fingerprint."""

    problem: str
    mesh: dict
    fine: dict
    k: int
    filters: tuple[FilterSpec, ...]
    taus: tuple[float, ...]
    theta: float = 0.95
    theta_c: float = 0.9
    rhs_mode: str = AVERAGED
    out: str | None = None
    threads: int = 1
    override_cfl: bool = False
    T: float = 1.0
    error_every: int = 1
    scenarios: tuple = ()
    repeats: int = 3
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def fingerprint(self) -> str:
        return config_hash(self.raw)

    @property
    def params(self) -> CflParams:
        return CflParams(self.theta, self.theta_c)


# settings that do not change any computed number
_UNHASHED = ("out", "threads")


def config_hash(raw: dict) -> str:
    kept = {k: v for k, v in raw.items() if k not in _UNHASHED}
    blob = json.dumps(kept, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _apply_overrides(raw: dict, overrides: dict) -> dict:
    raw = copy.deepcopy(raw)
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "tau" in ov:
        raw["tau"] = list(ov["tau"])
    if "theta_c" in ov:
        raw["theta_c"] = ov["theta_c"]
    if "override_cfl" in ov and ov["override_cfl"]:
        raw["override_cfl"] = True
    if "threads" in ov:
        raw["threads"] = ov["threads"]
    if "out" in ov:
        raw["out"] = ov["out"]
    if "p" in ov or "eta" in ov:
        filters = [parse_filter(f) for f in raw.get("filters", [])]
        lfcs = [f for f in filters if f.variant == LFC]
        ps = ov.get("p") or sorted({f.p for f in lfcs}) or [4]
        etas = ov.get("eta") or sorted({f.eta for f in lfcs}) or [1.0]
        keep = [f.variant for f in filters if f.variant != LFC]
        raw["filters"] = keep + [f"lfc:{int(p)}:{float(e)}" for p in ps for e in etas]
    return raw


def build_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    raw = _apply_overrides(raw or {}, overrides or {})
    problem = raw.get("problem", "wave1d")
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}; choose from {sorted(PROBLEMS)}")
    try:
        k = int(raw.get("k", 2))
        T = float(raw.get("T", get_problem(problem).T))
        filters = tuple(parse_filter(f) for f in raw.get("filters", ["leapfrog"]))
        taus = _tau_list(raw.get("tau"), T, bool(raw.get("snap_tau", True)))
        theta, theta_c = float(raw.get("theta", 0.95)), float(raw.get("theta_c", 0.9))
        CflParams(theta, theta_c)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if k < 0:
        raise ConfigError("k must be non-negative")
    rhs = raw.get("rhs_mode", AVERAGED)
    if rhs not in (AVERAGED, MIDPOINT):
        raise ConfigError(f"rhs_mode must be {AVERAGED!r} or {MIDPOINT!r}")
    threads = int(raw.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return ExperimentConfig(
        problem=problem, mesh=dict(raw.get("mesh", {})), fine=dict(raw.get("fine", {})),
        k=k, filters=filters, taus=taus, theta=theta, theta_c=theta_c, rhs_mode=rhs,
        out=raw.get("out"), threads=threads, override_cfl=bool(raw.get("override_cfl", False)),
        T=T, error_every=int(raw.get("error_every", 1)),
        scenarios=tuple(raw.get("scenarios", ())), repeats=int(raw.get("repeats", 3)), raw=raw)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return build_config(raw, overrides)


# ---------------------------------------------------------------------------
# single runs


@lru_cache(maxsize=8)
def _discretization(problem: str, mesh_json: str, k: int) -> Discretization:
    cfg = json.loads(mesh_json)
    mesh, rule = mesh_from_config(cfg)
    return Discretization(get_problem(problem), mesh, k, classify(mesh, rule))


def discretization(problem: str, mesh: dict, fine: dict, k: int) -> Discretization:
    """Cached discretization for a mesh/fine-rule description."""
    try:
        return _discretization(problem, json.dumps({"mesh": mesh, "fine": fine}, sort_keys=True), k)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"incomplete mesh description: {exc}") from None
    except MeshError as exc:
        raise ConfigError(str(exc)) from None


def run_point(disc: Discretization, spec: FilterSpec, tau: float, *, params: CflParams,
              T: float, override_cfl: bool, rhs_mode: str = AVERAGED,
              error_every: int = 1, fingerprint: str = "") -> dict:
    """One run to ``T``; divergence is reported with the sentinel error value."""
    row = {"tau": tau, "steps": int(round(T / tau)), "filter": spec.variant,
           "p": spec.p if spec.variant == LFC else "", "eta": spec.eta if spec.variant == LFC else "",
           "theta": params.theta, "theta_c": params.theta_c, "config_hash": fingerprint,
           "diverged_at": "", "cg_iterations": 0, "wall_seconds": 0.0}
    try:
        ctx = StepContext(disc, spec, tau, params, rhs_mode, override_cfl)
    except CflViolation as exc:
        log.info("%s", exc)
        row.update(max_l2_error=math.nan, final_l2_error=math.nan, status="cfl-rejected")
        return row
    try:
        s = run(ctx, 0.0, T, error_every=error_every)
    except DivergenceError as exc:
        row.update(max_l2_error=SENTINEL, final_l2_error=SENTINEL, status="diverged",
                   diverged_at=exc.step, wall_seconds=exc.summary.wall_seconds)
        return row
    # an error larger than the initial state means the run has lost stability
    unstable = s.initial_norm > 0 and s.max_error > s.initial_norm
    row.update(max_l2_error=s.max_error, final_l2_error=s.final_error,
               status="unstable" if unstable else "ok", wall_seconds=s.wall_seconds,
               cg_iterations=s.cg_iterations)
    return row


def _sweep_job(args) -> dict:
    cfg, spec, tau = args
    disc = discretization(cfg.problem, cfg.mesh, cfg.fine, cfg.k)
    return run_point(disc, spec, tau, params=cfg.params, T=cfg.T, override_cfl=cfg.override_cfl,
                     rhs_mode=cfg.rhs_mode, error_every=cfg.error_every,
                     fingerprint=cfg.fingerprint)


def sweep(cfg: ExperimentConfig, filters=None) -> list[dict]:
    """Run every ``(filter, tau)`` pair, in a process pool when ``threads > 1``."""
    if not cfg.taus:
        raise ConfigError("no time steps given")
    jobs = [(cfg, spec, tau) for spec in (filters or cfg.filters) for tau in cfg.taus]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(_sweep_job, jobs))
    return [_sweep_job(j) for j in jobs]


# ---------------------------------------------------------------------------
# analysis helpers


def is_stable(row: dict) -> bool:
    return row["status"] == "ok"


def stable_prefix(rows: list[dict]) -> list[dict]:
    """Rows of one series, ascending in tau, up to the first unstable one."""
    out = []
    for r in sorted(rows, key=lambda r: r["tau"]):
        if not is_stable(r):
            break
        out.append(r)
    return out


def max_stable_tau(rows: list[dict]) -> float:
    pre = stable_prefix(rows)
    return pre[-1]["tau"] if pre else 0.0


def fit_slope(taus, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(tau)``."""
    taus, errors = np.asarray(taus, dtype=float), np.asarray(errors, dtype=float)
    if len(taus) < 2:
        return math.nan
    return float(np.polyfit(np.log(taus), np.log(errors), 1)[0])


def pre_plateau(rows: list[dict], min_local_slope: float = 1.0, max_local_slope: float = 4.0):
    """Stable rows between the small-tau error plateau and the instability onset.

    Local slopes below ``min_local_slope`` mark the plateau; a local slope above
    ``max_local_slope`` marks growth from a loss of stability.
    """
    pre = stable_prefix(rows)
    if len(pre) < 2:
        return pre
    taus = np.array([r["tau"] for r in pre])
    errs = np.array([r["max_l2_error"] for r in pre])
    local = np.diff(np.log(errs)) / np.diff(np.log(taus))
    keep_hi = len(pre)
    for i, s in enumerate(local):
        if s > max_local_slope:
            keep_hi = i + 1
            break
    lo = 0
    for i in range(keep_hi - 1):
        if local[i] < min_local_slope:
            lo = i + 1
    return pre[lo:keep_hi]


def series(rows: list[dict]) -> dict:
    """Group run rows by filter identity."""
    out: dict = {}
    for r in rows:
        out.setdefault((r["filter"], r["p"], r["eta"]), []).append(r)
    return out


def slope_rows(rows: list[dict], fingerprint: str = "") -> list[dict]:
    out = []
    for (name, p, eta), rs in series(rows).items():
        seg = pre_plateau(rs)
        slope = fit_slope([r["tau"] for r in seg], [r["max_l2_error"] for r in seg])
        out.append({"filter": name, "p": p, "eta": eta, "slope": slope, "points": len(seg),
                    "tau_min": seg[0]["tau"] if seg else "", "tau_max": seg[-1]["tau"] if seg else "",
                    "config_hash": fingerprint})
    return out


# ---------------------------------------------------------------------------
# commands


def converge(cfg: ExperimentConfig) -> tuple[list[dict], list[dict]]:
    """Error against tau for each filter, plus the fitted slope per filter."""
    rows = sweep(cfg)
    return rows, slope_rows(rows, cfg.fingerprint)


STABILIZE_FILTERS = tuple(FilterSpec.lfc(p, eta) for eta in (0.0, 0.1) for p in (3, 4, 5))


def stabilize(cfg: ExperimentConfig) -> list[dict]:
    """LFC sweep at eta = 0 and eta = 0.1 with the CFL gate disabled."""
    if cfg.problem != "wave1d":
        raise ConfigError("the stabilization study runs on the wave1d problem")
    cfg = _replace(cfg, override_cfl=True)
    filters = cfg.filters if any(f.variant == LFC for f in cfg.filters) else STABILIZE_FILTERS
    return sweep(cfg, [f for f in filters if f.variant == LFC])


def _replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    from dataclasses import replace

    raw = dict(cfg.raw)
    raw.update(changes)
    return replace(cfg, raw=raw, **changes)


def snap_tau(tau: float, T: float) -> float:
    return T / math.ceil(T / tau - 1e-9)


def auto_taus(disc: Discretization, spec: FilterSpec, params: CflParams) -> float:
    """Default bench step: the leapfrog CFL limit for leapfrog; otherwise the
    largest step allowed by both the filter interval and the coarse leapfrog
    limit scaled by ``theta_c``."""
    n = disc.norms
    if spec.variant == LEAPFROG:
        return params.theta * 2.0 / math.sqrt(n["ALL"])
    coarse = params.theta_c * 2.0 / math.sqrt(n["LF"]) if n["LF"] > 0 else math.inf
    beta2 = constants(spec).beta2
    filt = math.sqrt(beta2 / n["M"]) if n["M"] > 0 and math.isfinite(beta2) else math.inf
    return min(coarse, filt)


BENCH_METHODS = {"leapfrog": FilterSpec.leapfrog(), "LI": FilterSpec.crank_nicolson(),
                 "LFC-LTS": FilterSpec.lfc(4, 1.0)}


def bench_scenario(cfg: ExperimentConfig, scen: dict) -> list[dict]:
    """Time the three methods on one mesh.  Steps beyond the guaranteed CFL
    bound are allowed here, as in the balancing-step comparison."""
    import time

    name = scen.get("name", "scenario")
    k = int(scen.get("k", cfg.k))
    t0 = time.perf_counter()
    disc = discretization(cfg.problem, scen.get("mesh", cfg.mesh), scen.get("fine", cfg.fine), k)
    _ = disc.norms
    setup = time.perf_counter() - t0
    space = disc.space
    refined = int(disc.partition.fine.sum()) * (space.m_u + space.m_v) * space.nb
    taus = dict(scen.get("tau", {}))
    T = float(scen.get("T", cfg.T))
    rows = []
    for method, spec in BENCH_METHODS.items():
        if "p" in scen and spec.variant == LFC:
            spec = FilterSpec.lfc(int(scen["p"]), spec.eta)
        tau = taus.get(method)
        tau = snap_tau(float(tau) if tau is not None else auto_taus(disc, spec, cfg.params), T)
        ctx = StepContext(disc, spec, tau, cfg.params, cfg.rhs_mode, override_cfl=True)
        best, summary = math.inf, None
        for _ in range(max(1, int(scen.get("repeats", cfg.repeats)))):
            try:
                summary = run(ctx, 0.0, T, error_every=0)
            except DivergenceError as exc:
                summary = exc.summary
                summary.final_error = SENTINEL
                best = min(best, summary.wall_seconds)
                break
            best = min(best, summary.wall_seconds)
        rows.append({"scenario": name, "method": method, "tau": tau, "steps": int(round(T / tau)),
                     "total_dofs": space.ndofs, "refined_dofs": refined,
                     "refined_fraction": refined / space.ndofs, "setup_seconds": setup,
                     "wall_seconds": best, "final_l2_error": summary.final_error,
                     "cg_iterations": summary.cg_iterations, "config_hash": cfg.fingerprint})
    base = rows[0]["wall_seconds"]
    for r in rows:
        r["relative_time"] = r["wall_seconds"] / base if base > 0 else math.nan
    return rows


def bench(cfg: ExperimentConfig) -> list[dict]:
    scenarios = cfg.scenarios or ({"name": "default"},)
    rows = []
    for scen in scenarios:
        rows.extend(bench_scenario(cfg, scen))
    return rows


def bench_table(rows: list[dict]) -> str:
    lines = [f"{'scenario':<16}{'method':<10}{'dofs':>10}{'refined':>10}{'tau':>12}"
             f"{'seconds':>10}{'relative':>10}{'L2 error':>12}"]
    for r in rows:
        lines.append(f"{r['scenario']:<16}{r['method']:<10}{r['total_dofs']:>10d}"
                     f"{100 * r['refined_fraction']:>9.2f}%{r['tau']:>12.4e}"
                     f"{r['wall_seconds']:>10.3f}{100 * r['relative_time']:>9.1f}%"
                     f"{r['final_l2_error']:>12.3e}")
    return "\n".join(lines)


PSI_FORMS = {LEAPFROG: "1", CRANK_NICOLSON: "1/(1+z/4)", LFC: "LFC polynomial"}


def info_rows(filters, theta: float = 0.95) -> list[tuple[str, str, FilterConstants]]:
    rows = []
    for spec in filters:
        c = constants(spec, theta_lf=theta if spec.variant == LEAPFROG else None)
        name = spec.label if spec.variant != LEAPFROG else f"leapfrog(theta={theta:g})"
        rows.append((name, PSI_FORMS[spec.variant], c))
    return rows


def info(filters, theta: float = 0.95) -> str:
    return constants_table(info_rows(filters, theta))
