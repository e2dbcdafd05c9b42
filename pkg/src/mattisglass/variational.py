"""Variational formulas: phi(x), its convex conjugate, rate functions, limit free energy."""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import parisi
from .model import (
    QUADRATIC_MATRIX, DiscretePath, MattisFunction, ModelSpec, SpecError, spec_hash,
)
from .rng import stream

log = logging.getLogger(__name__)

__all__ = [
    "OptimizerOptions", "OptimizationError", "PathParameterization", "PhiResult", "phi_of_x",
    "PhiFunction", "DualResult", "legendre_dual", "RateFunctionTable", "conjugate_table",
    "rate_function_IG", "rate_function_J_basic", "check_basic_model", "limit_free_energy",
    "LimitResult", "PhiReport", "check_phi_properties",
]


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerOptions:
    """Multi-start Nelder-Mead settings for the sup over paths."""

    levels: tuple[float, ...] = (0.25, 0.5, 0.75)  # constant-path starts, fractions of q_max
    random_starts: int = 1
    xatol: float = 1e-9
    fatol: float = 1e-13
    maxfev: int = 4000
    simplex_step: float = 0.3
    seed: int = 0
    lower_envelope: bool = True  # embed the (k-1)-level optimum as an extra start


# -- path parameterization ---------------------------------------------------------------

@dataclass(frozen=True)
class PathParameterization:
    """Unconstrained coordinates for monotone step paths with k jumps.

    The first k coordinates are log-gaps of the jump locations (the last gap
    has log-weight 0); the rest are factors A_l with increment A_l A_l^T
    (lower triangular, D(D+1)/2 entries each).  Paths whose terminal value
    exceeds q_max in Frobenius norm are scaled back onto the cap.
    """

    k: int
    D: int
    q_max: float

    @property
    def n_tri(self) -> int:
        return self.D * (self.D + 1) // 2

    @property
    def n_params(self) -> int:
        return self.k + (self.k + 1) * self.n_tri

    def decode_arrays(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k, D = self.k, self.D
        theta = np.asarray(theta, dtype=float)
        if k:
            logits = np.append(theta[:k], 0.0)
            logits -= logits.max()
            gaps = np.exp(logits)
            zetas = np.cumsum(gaps)[:-1] / gaps.sum()
        else:
            zetas = np.empty(0)
        facs = theta[k:].reshape(k + 1, self.n_tri)
        if D == 1:
            incs = (facs[:, 0] ** 2).reshape(k + 1, 1, 1)
        else:
            rows, cols = np.tril_indices(D)
            A = np.zeros((k + 1, D, D))
            A[:, rows, cols] = facs
            incs = A @ np.transpose(A, (0, 2, 1))
        values = np.cumsum(incs, axis=0)
        top = float(np.sqrt(np.sum(values[-1] ** 2)))
        if top > self.q_max:
            values = values * (self.q_max / top)
        return zetas, values

    def decode(self, theta: np.ndarray) -> DiscretePath:
        zetas, values = self.decode_arrays(theta)
        return DiscretePath(zetas, values)

    def encode(self, path: DiscretePath) -> np.ndarray:
        """Coordinates of ``path`` (which must have exactly k jumps)."""
        if path.k != self.k or path.D != self.D:
            raise ValueError("path shape does not match the parameterization")
        gaps = np.diff(path.breakpoints)
        gaps = np.maximum(gaps, 1e-300)
        logits = np.log(gaps[:-1] / gaps[-1])
        incs = np.diff(np.concatenate([np.zeros((1, self.D, self.D)), path.values]), axis=0)
        facs = []
        for inc in incs:
            if self.D == 1:
                facs.append([math.sqrt(max(inc[0, 0], 0.0))])
            else:
                lam, vec = np.linalg.eigh(0.5 * (inc + inc.T))
                root = vec * np.sqrt(np.clip(lam, 0.0, None))
                _, r = np.linalg.qr(root.T)  # root root^T = r^T r
                low = r.T * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
                facs.append(low[np.tril_indices(self.D)])
        return np.concatenate([logits, np.ravel(facs)])

    def constant(self, level: float) -> np.ndarray:
        theta = np.zeros(self.n_params)
        if self.D == 1:
            theta[self.k] = math.sqrt(level)
        else:
            theta[self.k:self.k + self.n_tri] = np.sqrt(level / math.sqrt(self.D)) * np.eye(self.D)[np.tril_indices(self.D)]
        return theta


def overlap_cap(spec: ModelSpec) -> float:
    """Largest Frobenius norm an overlap matrix can reach on the prior support."""
    return float(np.max(np.sum(spec.prior.support ** 2, axis=1)))


# -- fast Parisi functional for the optimizer ---------------------------------------------

def _grad_many(spec: ModelSpec, values: np.ndarray) -> np.ndarray:
    xi = spec.xi
    if xi.kind == QUADRATIC_MATRIX:
        return 2.0 * xi.betas[0] ** 2 * values
    a = values[:, 0, 0]
    g = np.zeros_like(a)
    for p, b in enumerate(xi.betas, start=1):
        if b:
            g += p * b * b * a ** (p - 1)
    return g.reshape(-1, 1, 1)


def _theta_many(spec: ModelSpec, values: np.ndarray) -> np.ndarray:
    xi = spec.xi
    if xi.kind == QUADRATIC_MATRIX:
        return xi.betas[0] ** 2 * np.sum(values ** 2, axis=(1, 2))
    a = values[:, 0, 0]
    out = np.zeros_like(a)
    for p, b in enumerate(xi.betas, start=1):
        if b:
            out += (p - 1) * b * b * a ** p
    return out


def _parisi_unchecked(zetas: np.ndarray, values: np.ndarray, x: np.ndarray, spec: ModelSpec, n: int) -> float:
    """parisi_P for a path known to be monotone (skips validation)."""
    q = spec.q
    if q.k == 0:
        eff_z = zetas
        eff_v = q.values[0] + 2.0 * spec.t * _grad_many(spec, values)
    else:
        p = DiscretePath(zetas, values)
        eff = parisi.effective_path(q, spec.t, spec.xi, p)
        eff_z, eff_v = eff.zetas, eff.values
    widths = np.diff(np.concatenate([[0.0], zetas, [1.0]]))
    theta_int = float(widths @ _theta_many(spec, values))
    return parisi._psi(eff_z, eff_v, x, spec, n) - spec.t * theta_int


# -- phi(x) --------------------------------------------------------------------------------

@dataclass
class PhiResult:
    x: np.ndarray
    value: float
    path: DiscretePath
    k: int
    nfev: int


def _x_key(x: np.ndarray) -> int:
    return int.from_bytes(struct.pack(f"<{x.size}d", *x)[:8], "little") ^ (x.size << 1)


def phi_of_x(
    x,
    spec: ModelSpec,
    k: int = 0,
    quad: parisi.QuadratureRule | int | None = None,
    opt: OptimizerOptions | None = None,
    extra_starts: Sequence[DiscretePath] = (),
) -> PhiResult:
    """Best value of P(p, x) over k-jump paths (a lower bound on phi(x), non-decreasing in k)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    opt = opt or OptimizerOptions()
    n = parisi._nodes(quad)
    x = parisi._as_x(x, spec.d)
    par = PathParameterization(k, spec.D, overlap_cap(spec))

    starts = [np.zeros(par.n_params)]
    starts += [par.constant(lv * par.q_max) for lv in opt.levels]
    rng = stream(opt.seed, "phi-start", k, _x_key(x))
    for _ in range(opt.random_starts):
        theta = rng.normal(0.0, 1.0, par.n_params)
        theta[k:] = rng.uniform(0.0, math.sqrt(par.q_max / (k + 1)), par.n_params - k)
        starts.append(theta)
    nfev = 0
    if k >= 1 and opt.lower_envelope:
        lower = phi_of_x(x, spec, k - 1, n, opt)
        nfev += lower.nfev
        extra_starts = [_refine_path(lower.path)] + list(extra_starts)
    for path in extra_starts:
        starts.append(par.encode(path))

    def objective(theta):
        zetas, values = par.decode_arrays(theta)
        val = _parisi_unchecked(zetas, values, x, spec, n)
        return -val if np.isfinite(val) else np.inf

    best_val, best_theta = -np.inf, None
    if par.n_params == 1 and not extra_starts:
        # one overlap coordinate: coarse scan then bounded Brent around the best cell
        grid = np.linspace(0.0, math.sqrt(par.q_max), 17)
        vals = np.array([-objective(np.array([a])) for a in grid])
        nfev += grid.size
        if np.isfinite(vals).any():
            i = int(np.nanargmax(np.where(np.isfinite(vals), vals, -np.inf)))
            lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
            res = minimize_scalar(lambda a: objective(np.array([a])), bounds=(lo, hi),
                                  method="bounded", options={"xatol": opt.xatol})
            nfev += int(res.nfev)
            best_val, best_theta = vals[i], np.array([grid[i]])
            if -res.fun > best_val:
                best_val, best_theta = -float(res.fun), np.array([res.x])
        starts = []
    for theta0 in starts:
        if par.n_params == 0:
            val, theta = -objective(theta0), theta0
            nfev += 1
        else:
            simplex = np.vstack([theta0, theta0 + opt.simplex_step * np.eye(par.n_params)])
            res = minimize(
                objective, theta0, method="Nelder-Mead",
                options={"xatol": opt.xatol, "fatol": opt.fatol, "maxfev": opt.maxfev, "initial_simplex": simplex},
            )
            val, theta = -float(res.fun), res.x
            nfev += int(res.nfev)
        if np.isfinite(val) and val > best_val:
            best_val, best_theta = val, theta
    if best_theta is None:
        raise OptimizationError(f"no finite evaluation of P(p, x) at x={x}")
    return PhiResult(x=x, value=best_val, path=par.decode(best_theta), k=k, nfev=nfev)


def _refine_path(path: DiscretePath) -> DiscretePath:
    """Same step function with one extra jump (duplicated value) in the last segment."""
    bp = path.breakpoints
    z_new = 0.5 * (bp[-2] + bp[-1])
    zetas = np.append(path.zetas, z_new)
    values = np.concatenate([path.values, path.values[-1:]])
    return DiscretePath(zetas, values)


class PhiFunction:
    """Memoized x -> phi(x) for one spec, path depth k and quadrature."""

    def __init__(self, spec: ModelSpec, k: int = 0, quad=None, opt: OptimizerOptions | None = None):
        self.spec = spec
        self.k = k
        self.n = parisi._nodes(quad)
        self.opt = opt or OptimizerOptions()
        self.results: dict[tuple, PhiResult] = {}

    @property
    def d(self) -> int:
        return self.spec.d

    def result(self, x) -> PhiResult:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        key = tuple(x.tolist())
        if key not in self.results:
            self.results[key] = phi_of_x(x, self.spec, self.k, self.n, self.opt)
        return self.results[key]

    def __call__(self, x) -> float:
        return self.result(x).value

    @property
    def evaluations(self) -> int:
        return len(self.results)

    def metadata(self) -> dict:
        return {"k": self.k, "quad_nodes": self.n, "spec_hash": spec_hash(self.spec), "phi_evaluations": self.evaluations}


class _CachedCallable:
    """Memoizing wrapper for plain callables (synthetic phi in tests)."""

    def __init__(self, fn: Callable, d: int = 1):
        self.fn = fn
        self.d = d
        self.cache: dict[tuple, float] = {}

    def __call__(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        key = tuple(x.tolist())
        if key not in self.cache:
            self.cache[key] = float(self.fn(x if x.size > 1 else x[0]))
        return self.cache[key]


def _memoized(phi) -> Callable:
    if isinstance(phi, (PhiFunction, _CachedCallable)):
        return phi
    return _CachedCallable(phi, getattr(phi, "d", 1))


# -- Legendre dual ---------------------------------------------------------------------------

X_BOX = 4.0
N_X_GRID = 257
N_M_GRID = 129
REFINE_TOL = 1e-6


@dataclass
class DualResult:
    m: np.ndarray
    value: float
    x: np.ndarray | None
    boundary_limited: bool
    box: float


def _grid(half: float, n: int, d: int) -> np.ndarray:
    axis = np.linspace(-half, half, n)
    if d == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _maximize_local(f: Callable, center: np.ndarray, step: float, lo: float, hi: float, tol: float, sweeps: int = 3):
    """Bracketed scalar maximization along each axis around ``center`` (Brent, golden fallback)."""
    best = center.copy()
    best_val = f(best)
    for _ in range(sweeps if center.size > 1 else 1):
        for axis in range(center.size):
            a = max(best[axis] - step, lo)
            b = min(best[axis] + step, hi)
            if b - a <= tol:
                continue

            def g(s, axis=axis):
                y = best.copy()
                y[axis] = s
                return -f(y)

            res = minimize_scalar(g, bounds=(a, b), method="bounded", options={"xatol": tol})
            if -res.fun > best_val:
                best_val = -float(res.fun)
                best[axis] = res.x
    return best, best_val


def legendre_dual(
    phi,
    m,
    lipschitz: float | None = None,
    n_grid: int = N_X_GRID,
    x_box: float = X_BOX,
    x_max: float | None = None,
    tol: float = REFINE_TOL,
) -> DualResult:
    """phi*(m) = sup_x {x.m + phi(x)} on an adaptive x-box.

    The box doubles while the grid argmax touches its boundary, up to
    ``x_max`` (default 64 (1 + |m|)); a result still on the boundary is
    flagged ``boundary_limited``.  For |m|_inf beyond ``lipschitz`` the dual
    is +inf.
    """
    phi = _memoized(phi)
    m = np.atleast_1d(np.asarray(m, dtype=float))
    d = m.size
    if lipschitz is not None and np.max(np.abs(m)) > lipschitz + 1e-12:
        return DualResult(m, math.inf, None, True, 0.0)
    cap = 64.0 * (1.0 + float(np.linalg.norm(m))) if x_max is None else float(x_max)
    half = float(x_box)
    while True:
        grid = _grid(half, n_grid, d)
        vals = grid @ m + np.array([phi(x) for x in grid])
        i = int(np.argmax(vals))
        on_edge = bool(np.any(np.abs(grid[i]) >= half))
        if not on_edge or 2.0 * half > cap:
            break
        half *= 2.0
    step = 2.0 * half / (n_grid - 1)
    x_best, v_best = _maximize_local(lambda y: float(y @ m) + phi(y), grid[i], step, -half, half, tol)
    if v_best < vals[i]:
        x_best, v_best = grid[i], float(vals[i])
    return DualResult(m, float(v_best), x_best, on_edge, half)


# -- rate-function tables ------------------------------------------------------------------------

@dataclass
class RateFunctionTable:
    """Rate-function values on a grid of magnetizations (+inf marks empty/forbidden points)."""

    m: np.ndarray  # (n, d)
    values: np.ndarray  # (n,)
    phistar: np.ndarray | None = None
    boundary: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.m.shape[1]

    def to_csv(self, path: str | Path | None = None) -> str:
        cols = [f"m_{i + 1}" for i in range(self.d)] + ["value"]
        lines = [",".join(cols)]
        for row, v in zip(self.m, self.values):
            lines.append(",".join([_fmt(c) for c in row] + [_fmt(v)]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="\n")
        return text

    def to_json(self, path: str | Path | None = None) -> str:
        doc = {
            "columns": [f"m_{i + 1}" for i in range(self.d)] + ["value"],
            "m": self.m.tolist(),
            "value": [_json_float(v) for v in self.values],
            "meta": self.meta,
        }
        if self.phistar is not None:
            doc["phistar"] = [_json_float(v) for v in self.phistar]
        if self.boundary is not None:
            doc["boundary_limited"] = [bool(b) for b in self.boundary]
        text = json.dumps(doc, indent=1)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "RateFunctionTable":
        rows = Path(path).read_text(encoding="utf-8").strip().splitlines()
        header = rows[0].split(",")
        data = np.array([[float(c) for c in r.split(",")] for r in rows[1:]])
        d = len(header) - 1
        return cls(m=data[:, :d], values=data[:, d])


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.17g" % v


def _json_float(v: float):
    return "inf" if math.isinf(v) else float(v)


def _m_grid(halfwidth: float, n: int, d: int) -> np.ndarray:
    return _grid(halfwidth, n, d)


def conjugate_table(
    phi,
    spec: ModelSpec,
    n_m: int = N_M_GRID,
    n_x: int = N_X_GRID,
    x_box: float = X_BOX,
) -> RateFunctionTable:
    """phi* on the m-grid covering |m|_inf <= L_h."""
    phi = _memoized(phi)
    half = spec.box_halfwidth
    grid = _m_grid(half, n_m, spec.d)
    duals = [legendre_dual(phi, m, half, n_grid=n_x, x_box=x_box) for m in grid]
    values = np.array([r.value for r in duals])
    meta = {
        "quantity": "phistar",
        "grid_step": 2.0 * half / (n_m - 1),
        "x_grid_points": n_x,
        "x_box_initial": x_box,
        "x_box_max": max(r.box for r in duals),
        "boundary_limited_points": int(sum(r.boundary_limited for r in duals)),
        "tie_break": "smallest index",
        "spec_hash": spec_hash(spec),
    }
    if isinstance(phi, PhiFunction):
        meta.update(phi.metadata())
    return RateFunctionTable(grid, values, values.copy(), np.array([r.boundary_limited for r in duals]), meta)


def _as_G(G, d: int) -> Callable:
    if isinstance(G, MattisFunction):
        return G
    if isinstance(G, str):
        return MattisFunction(G, d)
    return G


def _sup_G_minus_phistar(G, phi, table: RateFunctionTable, half: float, n_x: int, x_box: float):
    gv = np.asarray(G(table.m), dtype=float).reshape(-1)
    diff = gv - table.phistar
    i = int(np.argmax(diff))
    step = 2.0 * half / (round(len(table.values) ** (1.0 / table.d)) - 1)

    def objective(mm):
        return float(np.asarray(G(mm[None, :]), dtype=float).reshape(-1)[0]) - legendre_dual(
            phi, mm, half, n_grid=n_x, x_box=x_box).value

    m_best, v_best = _maximize_local(objective, table.m[i].copy(), step, -half, half, REFINE_TOL)
    if v_best < diff[i]:
        m_best, v_best = table.m[i].copy(), float(diff[i])
    return float(v_best), m_best, gv, i


def rate_function_IG(
    G,
    spec: ModelSpec,
    phi=None,
    table: RateFunctionTable | None = None,
    n_m: int = N_M_GRID,
    n_x: int = N_X_GRID,
    x_box: float = X_BOX,
) -> RateFunctionTable:
    """I^G(m) = -G(m) + phi*(m) + sup_m' {G(m') - phi*(m')} on the m-grid."""
    G = _as_G(G, spec.d)
    phi = _memoized(phi if phi is not None else PhiFunction(spec))
    if table is None:
        table = conjugate_table(phi, spec, n_m, n_x, x_box)
    half = spec.box_halfwidth
    sup, m_star, gv, i = _sup_G_minus_phistar(G, phi, table, half, n_x, x_box)
    values = -gv + table.phistar + sup
    meta = dict(table.meta)
    meta.update({
        "quantity": "rate",
        "G": getattr(G, "source", repr(G)),
        "sup_G_minus_phistar": sup,
        "argmax_grid_index": i,
        "argmax_refined": m_star.tolist(),
    })
    if table.boundary is not None and table.boundary.any():
        meta["warning"] = "conjugate limited by the x-box cap at some grid points"
    return RateFunctionTable(table.m.copy(), values, table.phistar.copy(), table.boundary, meta)


def check_basic_model(spec: ModelSpec) -> None:
    """Raise SpecError unless spec is the Ising/Rademacher pair model with q = 0."""
    ok = (
        spec.D == 1 and spec.d == 1 and spec.L == 1
        and spec.xi.kind != QUADRATIC_MATRIX
        and spec.xi.orders == (2,) and spec.xi.betas[1] == 1.0
        and spec.prior.support.shape[0] == 2
        and np.allclose(np.sort(spec.prior.support[:, 0]), [-1.0, 1.0])
        and np.allclose(spec.prior.weights, 0.5)
        and spec.chi.support.shape[0] == 2
        and np.allclose(np.sort(spec.chi.support[:, 0]), [-1.0, 1.0])
        and np.allclose(spec.chi.probs, 0.5)
        and spec.q.k == 0 and np.all(spec.q.values == 0.0)
    )
    if ok:
        tau = spec.prior.support[:, None, 0]
        chi = spec.chi.support[None, :, 0]
        ok = np.allclose(spec.h_table[:, :, 0], tau * chi)
    if not ok:
        raise SpecError("spec", "not the basic model (Ising prior, Rademacher chi, xi(a)=a^2, h=tau*chi, q=0)")


def rate_function_J_basic(spec: ModelSpec, phi=None, table: RateFunctionTable | None = None, **grid) -> RateFunctionTable:
    """J(m) = -m^2 + phi*(m) + sup_m' {m'^2 - phi*(m')} for the basic model."""
    check_basic_model(spec)
    out = rate_function_IG(MattisFunction("m_1^2", 1), spec, phi, table, **grid)
    out.meta["quantity"] = "J"
    out.meta["beta"] = spec.beta
    return out


# -- limit free energy ------------------------------------------------------------------------------

@dataclass
class LimitResult:
    value: float
    m: np.ndarray
    method: str
    warnings: list[str] = field(default_factory=list)


def limit_free_energy(
    G,
    spec: ModelSpec,
    method: str = "reduced",
    phi=None,
    table: RateFunctionTable | None = None,
    n_m: int = N_M_GRID,
    n_x: int = N_X_GRID,
    x_box: float = X_BOX,
    n_outer: int = 33,
) -> LimitResult:
    """lim F_N^G as inf_m {phi*(m) - G(m)} ("reduced") or the literal inf_m sup_x ("infsup")."""
    G = _as_G(G, spec.d)
    phi = _memoized(phi if phi is not None else PhiFunction(spec))
    half = spec.box_halfwidth
    warnings = []
    if method == "reduced":
        if table is None:
            table = conjugate_table(phi, spec, n_m, n_x, x_box)
        sup, m_star, _, _ = _sup_G_minus_phistar(G, phi, table, half, n_x, x_box)
        if table.boundary is not None and table.boundary.any():
            warnings.append("conjugate limited by the x-box cap at some grid points")
        return LimitResult(-sup, m_star, method, warnings)
    if method != "infsup":
        raise ValueError(f"unknown method {method!r}")

    def inner(mm: np.ndarray) -> float:
        return _sup_x(phi, mm, x_box) - float(np.asarray(G(mm[None, :])).reshape(-1)[0])

    grid = _m_grid(half, n_outer, spec.d)
    vals = np.array([inner(mm) for mm in grid])
    i = int(np.argmin(vals))
    step = 2.0 * half / (n_outer - 1)
    m_best, neg = _maximize_local(lambda mm: -inner(mm), grid[i].copy(), step, -half, half, REFINE_TOL)
    value = min(-neg, float(vals[i]))
    return LimitResult(value, m_best if -neg <= vals[i] else grid[i], method, warnings)


def _sup_x(phi, m: np.ndarray, x_box: float) -> float:
    """sup_x {x.m + phi(x)} by direct search, no grid (independent of legendre_dual)."""
    cap = 64.0 * (1.0 + float(np.linalg.norm(m)))
    half = x_box
    d = m.size
    while True:
        if d == 1:
            res = minimize_scalar(lambda s: -(s * m[0] + phi(np.array([s]))), bounds=(-half, half),
                                  method="bounded", options={"xatol": REFINE_TOL})
            x_opt, val = np.array([res.x]), -float(res.fun)
        else:
            res = minimize(lambda y: -(y @ m + phi(y)), np.zeros(d), method="Nelder-Mead",
                           options={"xatol": REFINE_TOL, "fatol": 1e-12, "maxfev": 2000})
            x_opt, val = np.clip(res.x, -half, half), -float(res.fun)
        if np.max(np.abs(x_opt)) < half - 1e-3 or 2.0 * half > cap:
            return val
        half *= 2.0


# -- property checks on phi -------------------------------------------------------------------------

@dataclass
class PhiReport:
    lipschitz_ratio: float
    lipschitz_bound: float
    min_concavity_defect: float
    steps: list[float]
    dq_gaps: list[float]

    @property
    def gap_ratios(self) -> list[float]:
        return [b / a if a > 0 else 0.0 for a, b in zip(self.dq_gaps, self.dq_gaps[1:])]


def check_phi_properties(
    phi,
    spec: ModelSpec,
    pairs: np.ndarray,
    diff_points: np.ndarray,
    steps: Sequence[float] = (0.2, 0.1, 0.05, 0.025),
) -> PhiReport:
    """Lipschitz ratio, midpoint concavity and difference-quotient gaps of phi.

    ``pairs`` has shape (n, 2, d); ``diff_points`` (p, d).  The gap at step
    h is the max over points and axes of |forward - backward| quotients.
    """
    phi = _memoized(phi)
    pairs = np.asarray(pairs, dtype=float).reshape(len(pairs), 2, spec.d)
    ratio, defect = 0.0, math.inf
    for a, b in pairs:
        fa, fb = phi(a), phi(b)
        dist = float(np.linalg.norm(a - b))
        if dist > 0:
            ratio = max(ratio, abs(fa - fb) / dist)
        defect = min(defect, phi(0.5 * (a + b)) - 0.5 * (fa + fb))
    gaps = []
    for h in steps:
        g = 0.0
        for x in np.asarray(diff_points, dtype=float).reshape(-1, spec.d):
            f0 = phi(x)
            for axis in range(spec.d):
                e = np.zeros(spec.d)
                e[axis] = h
                fwd = (phi(x + e) - f0) / h
                bwd = (f0 - phi(x - e)) / h
                g = max(g, abs(fwd - bwd))
        gaps.append(g)
    return PhiReport(ratio, spec.lipschitz_bound, defect, list(steps), gaps)
