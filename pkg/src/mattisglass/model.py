"""Model definition: mixture, priors, spin map, Mattis function and RSB paths."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import Expr, ExprError, eval_expr, parse_expr

__all__ = [
    "PSD_TOL", "SpecError", "PathError",
    "MixtureXi", "SpinPrior", "DisorderLaw", "GeneralizedSpinMap", "MattisFunction",
    "DiscretePath", "ModelSpec",
    "grad_xi", "xi_eval", "path_value", "is_psd", "validate_spec",
    "spec_to_dict", "spec_from_dict", "load_spec", "dump_spec", "spec_hash",
    "basic_model_spec", "ising_spec",
]

PSD_TOL = 1e-10

SCALAR_MIXTURE = "scalar-mixture"
QUADRATIC_MATRIX = "quadratic-matrix"


class SpecError(ValueError):
    """Invalid model definition.  ``field`` names the offending entry (e.g. ``prior.weights``)."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class PathError(SpecError):
    pass


def is_psd(a: np.ndarray, tol: float = PSD_TOL) -> bool:
    a = np.asarray(a, dtype=float)
    return bool(np.linalg.eigvalsh(0.5 * (a + a.T)).min() >= -tol)


def _as_matrix(a, D: int | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        n = int(round(np.sqrt(a.size)))
        if n * n != a.size:
            raise ValueError(f"cannot read a square matrix from {a.size} entries")
        a = a.reshape(n, n)
    if D is not None and a.shape != (D, D):
        raise ValueError(f"expected a {D}x{D} matrix, got shape {a.shape}")
    return a


# -- mixture ---------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureXi:
    """Covariance function from a convex catalog.

    ``scalar-mixture`` (D = 1): xi(a) = sum_p betas[p-1]**2 * a**p.
    ``quadratic-matrix`` (any D): xi(a) = betas[0]**2 * |a|**2 (Frobenius).
    """

    kind: str
    betas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    @property
    def orders(self) -> tuple[int, ...]:
        if self.kind == QUADRATIC_MATRIX:
            return (2,)
        return tuple(p for p, b in enumerate(self.betas, start=1) if b != 0.0)

    def __call__(self, a) -> float:
        return xi_eval(self, a)


def xi_eval(xi: MixtureXi, a) -> float:
    a = _as_matrix(a)
    if xi.kind == QUADRATIC_MATRIX:
        return xi.betas[0] ** 2 * float(np.sum(a * a))
    s = a[0, 0]
    return float(sum(b * b * s ** p for p, b in enumerate(xi.betas, start=1)))


def grad_xi(xi: MixtureXi, a) -> np.ndarray:
    """Closed-form gradient of ``xi`` at the D x D matrix ``a``."""
    a = _as_matrix(a)
    if xi.kind == QUADRATIC_MATRIX:
        return 2.0 * xi.betas[0] ** 2 * a
    s = a[0, 0]
    g = sum(p * b * b * s ** (p - 1) for p, b in enumerate(xi.betas, start=1))
    return np.array([[float(g)]])


# -- priors and spin map ------------------------------------------------------------

@dataclass(frozen=True)
class SpinPrior:
    support: np.ndarray  # (S, D)
    weights: np.ndarray  # (S,)

    def __post_init__(self):
        sup = np.atleast_2d(np.asarray(self.support, dtype=float))
        if sup.shape[0] == 1 and np.ndim(self.support) == 1:
            sup = sup.T  # a flat list of scalars is a D=1 support
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).ravel())

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class DisorderLaw:
    support: np.ndarray  # (C, L)
    probs: np.ndarray  # (C,)

    def __post_init__(self):
        sup = np.atleast_2d(np.asarray(self.support, dtype=float))
        if sup.shape[0] == 1 and np.ndim(self.support) == 1:
            sup = sup.T
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float).ravel())

    @property
    def dim(self) -> int:
        return self.support.shape[1]


def _h_variables(D: int, L: int) -> list[str]:
    return [f"tau_{i + 1}" for i in range(D)] + [f"chi_{i + 1}" for i in range(L)]


def _m_variables(d: int) -> list[str]:
    names = [f"m_{i + 1}" for i in range(d)] + [f"m{i + 1}" for i in range(d)]
    return names + (["m"] if d == 1 else [])


@dataclass(frozen=True)
class GeneralizedSpinMap:
    """h(tau, chi) in R^d, one expression per component over tau_1..tau_D, chi_1..chi_L."""

    sources: tuple[str, ...]
    D: int
    L: int
    components: tuple[Expr, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = _h_variables(self.D, self.L)
        comps = []
        for j, src in enumerate(self.sources):
            try:
                comps.append(parse_expr(src, names))
            except ExprError as err:
                raise SpecError(f"h[{j}]", str(err)) from None
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "components", tuple(comps))

    @property
    def d(self) -> int:
        return len(self.sources)

    def __call__(self, tau, chi) -> np.ndarray:
        """Evaluate h; ``tau`` (..., D) and ``chi`` (..., L) broadcast, result (..., d)."""
        tau = np.asarray(tau, dtype=float)
        chi = np.asarray(chi, dtype=float)
        b = {f"tau_{i + 1}": tau[..., i] for i in range(self.D)}
        b.update({f"chi_{i + 1}": chi[..., i] for i in range(self.L)})
        shape = np.broadcast_shapes(tau.shape[:-1], chi.shape[:-1])
        return np.stack(
            [np.broadcast_to(np.asarray(eval_expr(c, b), dtype=float), shape) for c in self.components],
            axis=-1,
        )


@dataclass(frozen=True)
class MattisFunction:
    source: str
    d: int
    ast: Expr = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        try:
            ast = parse_expr(self.source, _m_variables(self.d))
        except ExprError as err:
            raise SpecError("G", str(err)) from None
        object.__setattr__(self, "ast", ast)

    @property
    def index(self) -> dict[str, int]:
        """Variable name -> component index (all accepted aliases)."""
        idx = {}
        for i in range(self.d):
            idx[f"m_{i + 1}"] = i
            idx[f"m{i + 1}"] = i
        if self.d == 1:
            idx["m"] = 0
        return idx

    def __call__(self, m) -> np.ndarray | float:
        """Evaluate G at ``m`` of shape (..., d)."""
        m = np.asarray(m, dtype=float)
        if m.ndim == 0:
            m = m.reshape(1)
        b = {name: m[..., i] for name, i in self.index.items()}
        out = eval_expr(self.ast, b)
        if np.ndim(out) == 0 and m.ndim > 1:
            out = np.full(m.shape[:-1], out)
        return out


# -- paths ------------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscretePath:
    """Right-continuous step path on [0, 1): q(s) = values[l] for s in [zetas[l-1], zetas[l])."""

    zetas: np.ndarray  # (k,)
    values: np.ndarray  # (k+1, D, D)

    def __post_init__(self):
        zetas = np.asarray(self.zetas, dtype=float).ravel()
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim <= 1:
            vals = vals.reshape(-1, 1, 1)
        elif vals.ndim == 2:
            n = int(round(np.sqrt(vals.shape[1])))
            if n * n != vals.shape[1]:
                raise PathError("q.values", "each value must be a square matrix")
            vals = vals.reshape(-1, n, n)
        if vals.shape[0] != zetas.size + 1:
            raise PathError("q.values", f"expected {zetas.size + 1} values for {zetas.size} jumps, got {vals.shape[0]}")
        object.__setattr__(self, "zetas", zetas)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value, D: int = 1) -> "DiscretePath":
        v = _as_matrix(value) if np.ndim(value) else float(value) * np.eye(D)
        return cls(np.empty(0), v[None])

    @classmethod
    def zero(cls, D: int = 1) -> "DiscretePath":
        return cls(np.empty(0), np.zeros((1, D, D)))

    @property
    def k(self) -> int:
        return self.zetas.size

    @property
    def D(self) -> int:
        return self.values.shape[1]

    @property
    def breakpoints(self) -> np.ndarray:
        """[0, zeta_1, ..., zeta_k, 1]."""
        return np.concatenate([[0.0], self.zetas, [1.0]])

    def check(self, tol: float = PSD_TOL) -> "DiscretePath":
        z = self.zetas
        if z.size and (z[0] <= 0.0 or z[-1] >= 1.0 or np.any(np.diff(z) <= 0.0)):
            raise PathError("q.zetas", "jump locations must be strictly increasing inside (0, 1)")
        for l, v in enumerate(self.values):
            if not np.allclose(v, v.T, atol=1e-12):
                raise PathError(f"q.values[{l}]", "value is not symmetric")
        if not is_psd(self.values[0], tol):
            raise PathError("q.values[0]", "initial value is not positive semi-definite")
        for l in range(1, self.k + 1):
            if not is_psd(self.values[l] - self.values[l - 1], tol):
                raise PathError(f"q.values[{l}]", "non-monotone increment (not positive semi-definite)")
        return self

    def __call__(self, s: float) -> np.ndarray:
        return path_value(self, s)


def path_value(path: DiscretePath, s: float) -> np.ndarray:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s={s} outside [0, 1]")
    l = int(np.searchsorted(path.zetas, s, side="right"))
    return path.values[min(l, path.k)].copy()


# -- full spec ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    D: int
    d: int
    L: int
    xi: MixtureXi
    prior: SpinPrior
    chi: DisorderLaw
    h: GeneralizedSpinMap
    G: MattisFunction
    t: float
    q: DiscretePath

    @cached_property
    def h_table(self) -> np.ndarray:
        """h at every (support point, chi point): shape (S, C, d)."""
        tau = self.prior.support[:, None, :]
        chi = self.chi.support[None, :, :]
        return self.h(tau, chi)

    @cached_property
    def lipschitz_bound(self) -> float:
        """L_h = max |h(tau, chi)| over the product support."""
        return float(np.sqrt((self.h_table ** 2).sum(-1)).max())

    @cached_property
    def box_halfwidth(self) -> float:
        """Half-width of the cube |m|_inf <= . containing every attainable magnetization."""
        return float(np.abs(self.h_table).max())

    @property
    def prior_mass(self) -> float:
        return self.prior.mass

    @property
    def beta(self) -> float:
        return float(np.sqrt(2.0 * self.t))

    def replace(self, **changes) -> "ModelSpec":
        """Copy with some fields swapped; values may be model objects or their JSON forms."""
        d = spec_to_dict(dataclasses.replace(self, **{k: v for k, v in changes.items() if not _is_doc(v)}))
        d.update({k: v for k, v in changes.items() if _is_doc(v)})
        return spec_from_dict(d)


def _is_doc(value) -> bool:
    return isinstance(value, (dict, list, str))


def validate_spec(spec: ModelSpec) -> ModelSpec:
    """Check every invariant of the spec; returns it with derived constants computed."""
    D, d, L = spec.D, spec.d, spec.L
    if D < 1 or d < 1 or L < 1:
        raise SpecError("D", "dimensions D, d, L must be positive")
    xi = spec.xi
    if xi.kind not in (SCALAR_MIXTURE, QUADRATIC_MATRIX):
        raise SpecError("xi.kind", f"unknown mixture kind {xi.kind!r}")
    if xi.kind == SCALAR_MIXTURE and D != 1:
        raise SpecError("xi.kind", "scalar-mixture requires D = 1")
    if xi.kind == QUADRATIC_MATRIX and len(xi.betas) != 1:
        raise SpecError("xi.betas", "quadratic-matrix takes exactly one beta")
    if any(b < 0 or not np.isfinite(b) for b in xi.betas):
        raise SpecError("xi.betas", "all betas must be finite and >= 0")
    if not any(b > 0 for b in xi.betas):
        raise SpecError("xi.betas", "at least one beta must be positive")

    sup, w = spec.prior.support, spec.prior.weights
    if sup.shape[1] != D:
        raise SpecError("prior.support", f"support vectors must have dimension D={D}")
    if w.shape != (sup.shape[0],):
        raise SpecError("prior.weights", "one weight per support point required")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise SpecError("prior.weights", "weights must be strictly positive")
    if np.any(np.linalg.norm(sup, axis=1) > 1.0 + 1e-12):
        raise SpecError("prior.support", "support must lie in the unit ball")
    if np.linalg.matrix_rank(sup, tol=1e-10) < D:
        raise SpecError("prior.support", f"support does not span R^{D}")

    csup, p = spec.chi.support, spec.chi.probs
    if csup.shape[1] != L:
        raise SpecError("chi.support", f"chi vectors must have dimension L={L}")
    if p.shape != (csup.shape[0],):
        raise SpecError("chi.probs", "one probability per support point required")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise SpecError("chi.probs", "probabilities must be nonnegative and sum to 1")

    if spec.h.d != d or spec.h.D != D or spec.h.L != L:
        raise SpecError("h", f"expected {d} components over tau_1..tau_{D}, chi_1..chi_{L}")
    if spec.G.d != d:
        raise SpecError("G", f"G must be a function of m_1..m_{d}")
    try:
        table = spec.h_table
    except ExprError as err:
        raise SpecError("h", f"evaluation failed on the support: {err}") from None
    if not np.all(np.isfinite(table)):
        raise SpecError("h", "non-finite value on the support")

    Lh = spec.box_halfwidth
    try:
        gvals = spec.G(_ball_probe(d, Lh))
    except ExprError as err:
        raise SpecError("G", f"evaluation failed on |m| <= L_h: {err}") from None
    if not np.all(np.isfinite(gvals)):
        raise SpecError("G", "non-finite value on |m| <= L_h")

    if not (np.isfinite(spec.t) and spec.t >= 0):
        raise SpecError("t", "t must be finite and >= 0")
    if spec.q.D != D:
        raise SpecError("q.values", f"path values must be {D}x{D}")
    spec.q.check()
    _ = spec.lipschitz_bound
    return spec


def _ball_probe(d: int, radius: float) -> np.ndarray:
    axis = np.linspace(-radius, radius, 9 if d <= 3 else 3)
    pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
    rng = np.random.default_rng(0)
    extra = rng.uniform(-radius, radius, size=(64, d))
    return np.concatenate([pts, extra])


# -- serialization ----------------------------------------------------------------------------

def _matrix_list(a: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(a).ravel()]  # row-major


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "D": spec.D,
        "d": spec.d,
        "L": spec.L,
        "xi": {"kind": spec.xi.kind, "betas": list(spec.xi.betas)},
        "prior": {"support": spec.prior.support.tolist(), "weights": spec.prior.weights.tolist()},
        "chi": {"support": spec.chi.support.tolist(), "probs": spec.chi.probs.tolist()},
        "h": list(spec.h.sources),
        "G": spec.G.source,
        "t": float(spec.t),
        "q": {"zetas": spec.q.zetas.tolist(), "values": [_matrix_list(v) for v in spec.q.values]},
    }


def _get(doc: dict, key: str, path: str):
    if not isinstance(doc, dict) or key not in doc:
        raise SpecError(path, "missing field")
    return doc[key]


def spec_from_dict(doc: dict) -> ModelSpec:
    """Build a spec from its JSON document; raises :class:`SpecError` naming the field."""
    try:
        D = int(_get(doc, "D", "D"))
        d = int(_get(doc, "d", "d"))
        L = int(_get(doc, "L", "L"))
    except SpecError:
        raise
    except (TypeError, ValueError):
        raise SpecError("D", "dimensions must be integers") from None
    xi_doc = _get(doc, "xi", "xi")
    try:
        xi = MixtureXi(str(_get(xi_doc, "kind", "xi.kind")), tuple(float(b) for b in _get(xi_doc, "betas", "xi.betas")))
    except (TypeError, ValueError) as err:
        if isinstance(err, SpecError):
            raise
        raise SpecError("xi.betas", "betas must be a list of numbers") from None

    def read_array(path: str, value) -> np.ndarray:
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise SpecError(path, "expected numeric array") from None
        if not np.all(np.isfinite(arr)):
            raise SpecError(path, "non-finite entry")
        return arr

    pr = _get(doc, "prior", "prior")
    psup = read_array("prior.support", _get(pr, "support", "prior.support"))
    if psup.ndim == 1:
        psup = psup[:, None]
    prior = SpinPrior(psup, read_array("prior.weights", _get(pr, "weights", "prior.weights")))
    ch = _get(doc, "chi", "chi")
    csup = read_array("chi.support", _get(ch, "support", "chi.support"))
    if csup.ndim == 1:
        csup = csup[:, None]
    chi = DisorderLaw(csup, read_array("chi.probs", _get(ch, "probs", "chi.probs")))
    h_src = _get(doc, "h", "h")
    if isinstance(h_src, str):
        h_src = [h_src]
    if not isinstance(h_src, list) or not all(isinstance(s, str) for s in h_src):
        raise SpecError("h", "expected a list of expression strings")
    h = GeneralizedSpinMap(tuple(h_src), D, L)
    g_src = _get(doc, "G", "G")
    if not isinstance(g_src, str):
        raise SpecError("G", "expected an expression string")
    G = MattisFunction(g_src, d)
    try:
        t = float(_get(doc, "t", "t"))
    except (TypeError, ValueError):
        raise SpecError("t", "expected a number") from None
    q_doc = doc.get("q", {"zetas": [], "values": [[0.0] * (D * D)]})
    zetas = read_array("q.zetas", _get(q_doc, "zetas", "q.zetas"))
    raw_values = _get(q_doc, "values", "q.values")
    try:
        values = np.stack([_as_matrix(read_array(f"q.values[{l}]", v), D) for l, v in enumerate(raw_values)])
    except ValueError as err:
        if isinstance(err, SpecError):
            raise
        raise SpecError("q.values", str(err)) from None
    q = DiscretePath(zetas, values)
    return ModelSpec(D=D, d=d, L=L, xi=xi, prior=prior, chi=chi, h=h, G=G, t=t, q=q)


def load_spec(path: str | Path) -> ModelSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise SpecError("<document>", f"invalid JSON: {err}") from None
    return validate_spec(spec_from_dict(doc))


def dump_spec(spec: ModelSpec, path: str | Path | None = None) -> str:
    text = json.dumps(spec_to_dict(spec), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def spec_hash(spec: ModelSpec) -> str:
    canon = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# -- common models ----------------------------------------------------------------------------

def ising_spec(
    xi_betas: Sequence[float] = (0.0, 1.0),
    t: float = 0.0,
    h: str = "tau_1*chi_1",
    G: str = "0",
    rademacher: bool = True,
) -> ModelSpec:
    """D = d = L = 1 Ising spins with uniform prior on {-1, +1}."""
    chi = DisorderLaw([[-1.0], [1.0]], [0.5, 0.5]) if rademacher else DisorderLaw([[1.0]], [1.0])
    spec = ModelSpec(
        D=1, d=1, L=1,
        xi=MixtureXi(SCALAR_MIXTURE, tuple(xi_betas)),
        prior=SpinPrior([[-1.0], [1.0]], [0.5, 0.5]),
        chi=chi,
        h=GeneralizedSpinMap((h,), 1, 1),
        G=MattisFunction(G, 1),
        t=float(t),
        q=DiscretePath.zero(1),
    )
    return validate_spec(spec)


def basic_model_spec(beta: float, G: str = "m_1^2") -> ModelSpec:
    """Pairwise SK couplings plus a Mattis term, at t = beta^2/2 and q = 0."""
    return ising_spec(xi_betas=(0.0, 1.0), t=beta * beta / 2.0, h="tau_1*chi_1", G=G)
