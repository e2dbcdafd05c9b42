"""The cascade functional psi(q; x) and the Parisi functional P(p, x).

For a step path with values q_0 <= ... <= q_k and jumps zeta_1 < ... < zeta_k,
the Ruelle cascade average collapses to the recursion

    A_{k+1}(y) = log sum_tau w_tau exp(y.tau - q_k.tau tau^T / 2 + x.h(tau, chi))
    A_l(y)     = (1/zeta_l) log E exp(zeta_l A_{l+1}(y + z_l)),  z_l ~ N(0, q_l - q_{l-1})
    psi        = -E_chi E A_1(z_0),                               z_0 ~ N(0, q_0)

and every Gaussian expectation is a tensorized Gauss-Hermite rule taken along
the nonzero eigen-directions of the increment covariance.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .model import DiscretePath, MixtureXi, ModelSpec, PathError, grad_xi, path_value, xi_eval

__all__ = [
    "DEFAULT_NODES", "QuadratureRule", "theta_eval", "theta_integral",
    "terminal_condition", "psi_eval", "effective_path", "parisi_P",
]

DEFAULT_NODES = 32
EIG_CUTOFF = 1e-13
# larger node tensors are evaluated one outer node at a time
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for the standard normal (weights sum to one)."""

    n: int
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_hermite(cls, n: int = DEFAULT_NODES) -> "QuadratureRule":
        return _rule(int(n))

    def expect(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


@lru_cache(maxsize=None)
def _rule(n: int) -> QuadratureRule:
    if n < 2:
        raise ValueError("quadrature needs at least 2 nodes")
    x, w = hermegauss(n)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(n, x, w)


@lru_cache(maxsize=4096)
def _gaussian_points(cov_key: tuple, D: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (M, D) and log-weights (M,) for N(0, cov) restricted to its range."""
    cov = np.asarray(cov_key).reshape(D, D)
    lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    keep = lam > EIG_CUTOFF
    r = int(keep.sum())
    if r == 0:
        return np.zeros((1, D)), np.zeros(1)
    rule = _rule(n)
    factor = vec[:, keep] * np.sqrt(lam[keep])  # (D, r)
    grids = np.meshgrid(*([rule.nodes] * r), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)  # (n^r, r)
    wgrids = np.meshgrid(*([rule.weights] * r), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return nodes @ factor.T, np.log(weights)


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def theta_eval(xi: MixtureXi, a) -> float:
    """theta(a) = a . grad xi(a) - xi(a)."""
    a = np.asarray(a, dtype=float)
    g = grad_xi(xi, a)
    return float(np.sum(a.reshape(g.shape) * g)) - xi_eval(xi, a)


def theta_integral(xi: MixtureXi, p: DiscretePath) -> float:
    """Exact integral of theta(p(s)) over [0, 1] for a step path."""
    widths = np.diff(p.breakpoints)
    return float(sum(w * theta_eval(xi, v) for w, v in zip(widths, p.values)))


def _as_x(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 1 and d > 1:
        raise ValueError(f"x must have {d} components")
    if x.size != d:
        raise ValueError(f"x must have {d} components, got {x.size}")
    return x


def terminal_condition(y, chi, x, q1, spec: ModelSpec) -> float:
    """log sum_tau w_tau exp(y.tau - q1.tau tau^T / 2 + x.h(tau, chi))."""
    sup = spec.prior.support
    y = np.asarray(y, dtype=float).reshape(spec.D)
    q1 = np.asarray(q1, dtype=float).reshape(spec.D, spec.D)
    x = _as_x(x, spec.d)
    hv = spec.h(sup, np.broadcast_to(np.asarray(chi, dtype=float).reshape(1, spec.L), (sup.shape[0], spec.L)))
    expo = np.log(spec.prior.weights) + sup @ y - 0.5 * np.einsum("si,ij,sj->s", sup, q1, sup) + hv @ x
    return float(_lse(expo, axis=0))


def _psi(zetas: np.ndarray, values: np.ndarray, x: np.ndarray, spec: ModelSpec, n: int) -> float:
    k = zetas.size
    D = spec.D
    sup = spec.prior.support
    covs = [values[0]] + [values[l] - values[l - 1] for l in range(1, k + 1)]
    levels = [_gaussian_points(tuple(c.ravel().tolist()), D, n) for c in covs]

    q1 = values[k]
    base = np.log(spec.prior.weights) - 0.5 * np.einsum("si,ij,sj->s", sup, q1, sup)
    tilt = base[:, None] + spec.h_table @ x  # (S, C)

    def inner(y: np.ndarray, first: int) -> np.ndarray:
        # y: (n_first, ..., n_k, D) -> A_first: (n_first.., C) reduced down to level `first`
        expo = (y @ sup.T)[..., None] + tilt
        A = _lse(expo, axis=-2)
        for l in range(k, first, -1):
            z = zetas[l - 1]
            lw = levels[l][1]
            A = _lse(z * A + lw[:, None], axis=-2) / z
        return A

    sizes = [pts.shape[0] for pts, _ in levels]
    total = int(np.prod(sizes)) * sup.shape[0] * tilt.shape[1]

    def node_grid(offset: np.ndarray, start: int) -> np.ndarray:
        y = offset
        for j, l in enumerate(range(start, k + 1)):
            shape = [1] * (k + 1 - start) + [D]
            shape[j] = sizes[l]
            y = y + levels[l][0].reshape(shape)
        return y

    w0 = np.exp(levels[0][1])
    if total <= _CHUNK_ELEMENTS or k == 0:
        A = inner(node_grid(np.zeros(D), 0), 0)  # (n0, C)
        A0 = w0 @ A
    else:
        A0 = np.zeros(tilt.shape[1])
        for i, z0 in enumerate(levels[0][0]):
            A1 = inner(node_grid(z0, 1), 1)  # (n1, C) after reducing levels k..2
            z = zetas[0]
            A1 = _lse(z * A1 + levels[1][1][:, None], axis=0) / z
            A0 = A0 + w0[i] * A1
    return 0.0 - float(spec.chi.probs @ A0)  # no negative zero


def psi_eval(path: DiscretePath, x, spec: ModelSpec, quad: QuadratureRule | int | None = None) -> float:
    """psi(path; x) by the exact cascade recursion."""
    n = _nodes(quad)
    path.check()
    if path.D != spec.D:
        raise PathError("q.values", f"path dimension {path.D} does not match D={spec.D}")
    return _psi(path.zetas, path.values, _as_x(x, spec.d), spec, n)


def _nodes(quad) -> int:
    if quad is None:
        return DEFAULT_NODES
    n = quad.n if isinstance(quad, QuadratureRule) else int(quad)
    if n < 2:
        raise ValueError("quadrature needs at least 2 nodes")
    return n


def effective_path(q: DiscretePath, t: float, xi: MixtureXi, p: DiscretePath) -> DiscretePath:
    """The step path s -> q(s) + 2t grad xi(p(s)) on the merged jump set.

    The factor 2 matches the cascade field convention of psi (covariance q,
    drift q(1)/2): the cavity field of sqrt(2t) H_N has covariance 2t grad xi.
    """
    if q.D != p.D:
        raise PathError("p.values", "paths have different dimensions")
    zetas = np.union1d(q.zetas, p.zetas)
    left = np.concatenate([[0.0], zetas])
    values = np.stack([path_value(q, s) + 2.0 * t * grad_xi(xi, path_value(p, s)) for s in left])
    out = DiscretePath(zetas, values)
    try:
        out.check()
    except PathError as err:
        raise PathError("effective_path", f"merged path is not monotone ({err})") from None
    return out


def parisi_P(p: DiscretePath, x, spec: ModelSpec, quad: QuadratureRule | int | None = None) -> float:
    """P(p, x) = psi(q + 2t grad xi(p); x) - t * int_0^1 theta(p(s)) ds."""
    p.check()
    eff = effective_path(spec.q, spec.t, spec.xi, p)
    return _psi(eff.zetas, eff.values, _as_x(x, spec.d), spec, _nodes(quad)) - spec.t * theta_integral(spec.xi, p)
