"""Finite-N ground truth: quenched disorder, exact enumeration and Metropolis sampling.

The oracle works at q = 0.  For D = 1 the Gaussian part is a mixture of
p-spin terms

    H_N(s) = sum_p beta_p N^{-(p-1)/2} sum_{i_1..i_p} g_{i_1..i_p} s_{i_1} ... s_{i_p}

and for the quadratic-matrix family (any D) it is
beta N^{-1/2} sum_{ij} g_ij s_i . s_j; both have covariance N xi(s s'^T / N).
The Gibbs weight of a configuration is

    prod_i w(s_i) exp(N G(m_N) + sqrt(2t) H_N(s) - N t xi(s s^T / N)).
"""
from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numba
import numpy as np

from .expr import compile_numba
from .model import QUADRATIC_MATRIX, MattisFunction, ModelSpec, SpecError, spec_hash
from .rng import stream
from .variational import RateFunctionTable

__all__ = [
    "ENUMERATION_BUDGET", "N_BINS", "EnumerationBudgetError", "UnsupportedSpecError",
    "DisorderSample", "sample_disorder", "coupling_coefficients", "energy_total", "hamiltonian",
    "Enumeration", "enumerate_states", "finite_free_energy", "lambda_N",
    "MagnetizationDistribution", "gibbs_magnetization_dist", "empirical_rate", "varadhan_check",
    "MCMCResult", "mcmc_sample", "save_sample", "load_sample",
]

ENUMERATION_BUDGET = 2 ** 24
N_BINS = 64
_MAGIC = b"MATTISDS"
_VERSION = 1


class EnumerationBudgetError(ValueError):
    pass


class UnsupportedSpecError(SpecError):
    pass


def _check_supported(spec: ModelSpec) -> None:
    if spec.q.k != 0 or np.any(spec.q.values != 0.0):
        raise UnsupportedSpecError("q", "the oracle simulates q = 0 only")
    if spec.D > 1 and spec.xi.kind != QUADRATIC_MATRIX:
        raise UnsupportedSpecError("xi", "D > 1 oracle needs the quadratic-matrix covariance")


# -- disorder --------------------------------------------------------------------------------

@dataclass
class DisorderSample:
    N: int
    D: int
    L: int
    seed: int
    couplings: dict[int, np.ndarray]  # order -> raw Gaussian tensor, shape (N,)*order
    chi_index: np.ndarray  # (N,) index into the disorder support
    chi: np.ndarray  # (N, L)

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(sorted(self.couplings))


def coupling_coefficients(spec: ModelSpec, N: int) -> dict[int, float]:
    """order -> beta_p N^{-(p-1)/2} for every order carried by xi."""
    xi = spec.xi
    if xi.kind == QUADRATIC_MATRIX:
        return {2: xi.betas[0] / math.sqrt(N)} if xi.betas[0] else {}
    return {p: b / N ** ((p - 1) / 2.0) for p, b in enumerate(xi.betas, start=1) if b}


def sample_disorder(spec: ModelSpec, N: int, seed: int) -> DisorderSample:
    """Couplings and chi-draws for one disorder realization, reproducible from ``seed``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    _check_supported(spec)
    couplings = {}
    for p in coupling_coefficients(spec, N):
        couplings[p] = stream(seed, "couplings", p, N).standard_normal(N ** p).reshape((N,) * p)
    probs = spec.chi.probs / spec.chi.probs.sum()
    idx = stream(seed, "chi", N).choice(len(probs), size=N, p=probs)
    return DisorderSample(N, spec.D, spec.L, int(seed), couplings, idx.astype(np.int64), spec.chi.support[idx].copy())


def save_sample(sample: DisorderSample, path: str | Path) -> None:
    """Binary layout: magic, version, N, D, L, order count, orders, seed, then float64 LE payload."""
    orders = sample.orders
    head = _MAGIC + struct.pack("<IIIII", _VERSION, sample.N, sample.D, sample.L, len(orders))
    head += struct.pack(f"<{len(orders)}I", *orders) + struct.pack("<q", sample.seed)
    parts = [sample.couplings[p].ravel() for p in orders]
    parts += [sample.chi_index.astype(np.float64), sample.chi.ravel()]
    payload = np.concatenate(parts).astype("<f8").tobytes()
    Path(path).write_bytes(head + payload)


def load_sample(path: str | Path) -> DisorderSample:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not a disorder sample file")
    version, N, D, L, n_orders = struct.unpack_from("<IIIII", raw, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported sample file version {version}")
    off = 28
    orders = struct.unpack_from(f"<{n_orders}I", raw, off)
    off += 4 * n_orders
    (seed,) = struct.unpack_from("<q", raw, off)
    off += 8
    data = np.frombuffer(raw, dtype="<f8", offset=off).astype(np.float64)
    couplings, pos = {}, 0
    for p in orders:
        size = N ** p
        couplings[p] = data[pos:pos + size].reshape((N,) * p).copy()
        pos += size
    chi_index = data[pos:pos + N].astype(np.int64)
    chi = data[pos + N:pos + N + N * L].reshape(N, L).copy()
    return DisorderSample(N, D, L, seed, couplings, chi_index, chi)


# -- energies (direct formulas) ----------------------------------------------------------------

def hamiltonian(sample: DisorderSample, sigma: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """H_N for configurations ``sigma`` of shape (..., N, D) by direct contraction of the raw tensors."""
    sigma = np.asarray(sigma, dtype=float)
    coefs = coupling_coefficients(spec, sample.N)
    out = np.zeros(sigma.shape[:-2])
    if spec.xi.kind == QUADRATIC_MATRIX:
        for p, c in coefs.items():
            gram = np.einsum("...id,...jd->...ij", sigma, sigma)
            out = out + c * np.einsum("ij,...ij->...", sample.couplings[p], gram)
        return out
    s = sigma[..., 0]
    for p, c in coefs.items():
        letters = "abcdefghij"[:p]
        subs = letters + "," + ",".join("..." + ch for ch in letters) + "->..."
        out = out + c * np.einsum(subs, sample.couplings[p], *([s] * p))
    return out


def _self_xi(spec: ModelSpec, sigma: np.ndarray, N: int) -> np.ndarray:
    gram = np.einsum("...id,...ie->...de", sigma, sigma) / N
    if spec.xi.kind == QUADRATIC_MATRIX:
        return spec.xi.betas[0] ** 2 * np.sum(gram ** 2, axis=(-2, -1))
    a = gram[..., 0, 0]
    return sum(b * b * a ** p for p, b in enumerate(spec.xi.betas, start=1))


def _as_G(G, spec: ModelSpec) -> Callable:
    if G is None:
        return spec.G
    if isinstance(G, str):
        return MattisFunction(G, spec.d)
    return G


def _G_values(G, m: np.ndarray) -> np.ndarray:
    vals = np.asarray(G(m), dtype=float)
    return np.broadcast_to(vals, m.shape[:-1]) if vals.ndim == 0 else vals.reshape(m.shape[:-1])


def energy_total(sample: DisorderSample, sigma, spec: ModelSpec, G=None) -> float:
    """N G(m_N) + sqrt(2t) H_N(sigma) - N t xi(sigma sigma^T / N) for one configuration (N, D)."""
    sigma = np.asarray(sigma, dtype=float).reshape(sample.N, spec.D)
    N = sample.N
    hv = spec.h(sigma, sample.chi)  # (N, d)
    m = hv.mean(axis=0)
    g = float(_G_values(_as_G(G, spec), m[None, :])[0])
    return N * g + spec.beta * float(hamiltonian(sample, sigma, spec)) - N * spec.t * float(_self_xi(spec, sigma, N))


# -- enumeration -------------------------------------------------------------------------------------

def _symmetrize(g: np.ndarray) -> np.ndarray:
    p = g.ndim
    perms = list(itertools.permutations(range(p)))
    return sum(np.transpose(g, perm) for perm in perms) / len(perms)


@numba.njit(cache=True)
def _contract(sym, offset, N, p, i, r, sig0):
    """sum over j of sym[i (r times), j_1..j_{p-r}] * prod sig0[j]; sym is flat row-major."""
    base = 0
    stride = N ** (p - 1)
    for _ in range(r):
        base += i * stride
        stride //= N
    rest = p - r
    total = 0.0
    count = N ** rest
    for t in range(count):
        prod = 1.0
        u = t
        for _ in range(rest):
            prod *= sig0[u % N]
            u //= N
            if prod == 0.0:
                break
        if prod != 0.0:
            total += sym[offset + base + t] * prod
    return total


@numba.njit(cache=True)
def _binom(n, k):
    out = 1.0
    for j in range(k):
        out = out * (n - j) / (j + 1)
    return out


@numba.njit(cache=True)
def _delta_scalar(sigma, i, b, orders, coefs, sym, offsets, N):
    """H change when site i moves from sigma[i] to b (D = 1, general orders)."""
    a = sigma[i]
    sigma[i] = 0.0
    dh = 0.0
    for o in range(orders.size):
        p = orders[o]
        acc = 0.0
        for r in range(1, p + 1):
            acc += _binom(p, r) * (b ** r - a ** r) * _contract(sym, offsets[o], N, p, i, r, sigma)
        dh += coefs[o] * acc
    sigma[i] = a
    return dh


@numba.njit(cache=True)
def _delta_vector(sigma, i, b, coef, sym):
    """H change when site i moves to vector b (quadratic-matrix family)."""
    N, D = sigma.shape
    cross = 0.0
    for j in range(N):
        if j != i:
            dot = 0.0
            for e in range(D):
                dot += (b[e] - sigma[i, e]) * sigma[j, e]
            cross += sym[i, j] * dot
    nb = 0.0
    na = 0.0
    for e in range(D):
        nb += b[e] * b[e]
        na += sigma[i, e] * sigma[i, e]
    return coef * (2.0 * cross + sym[i, i] * (nb - na))


@numba.njit(cache=True)
def _xi_of(gram, kind_quadratic, betas):
    if kind_quadratic:
        s = 0.0
        for a in range(gram.shape[0]):
            for c in range(gram.shape[1]):
                s += gram[a, c] * gram[a, c]
        return betas[0] * betas[0] * s
    x = gram[0, 0]
    s = 0.0
    for p in range(betas.size):
        s += betas[p] * betas[p] * x ** (p + 1)
    return s


@numba.njit(cache=True)
def _gray_walk(N, supp, logw_s, hsite, vector, orders, coefs, sym, offsets, vsym, vcoef,
               kind_quadratic, betas, h0, out_logw, out_h, out_xi, out_m):
    """Visit the product support in reflected mixed-radix Gray order (loopless)."""
    S, D = supp.shape
    d = hsite.shape[2]
    digits = np.zeros(N, dtype=np.int64)
    focus = np.arange(N + 1)
    direction = np.ones(N, dtype=np.int64)
    sigma = np.empty((N, D))
    for i in range(N):
        sigma[i, :] = supp[0]
    gram = np.zeros((D, D))
    lw = 0.0
    hsum = np.zeros(d)
    for i in range(N):
        lw += logw_s[0]
        for e in range(D):
            for f in range(D):
                gram[e, f] += supp[0, e] * supp[0, f]
        for c in range(d):
            hsum[c] += hsite[i, 0, c]
    h = h0
    col = sigma[:, 0].copy()
    k = 0
    while True:
        out_logw[k] = lw
        out_h[k] = h
        out_xi[k] = _xi_of(gram / N, kind_quadratic, betas)
        for c in range(d):
            out_m[k, c] = hsum[c] / N
        k += 1
        j = focus[0]
        focus[0] = 0
        if j == N:
            break
        old = digits[j]
        new = old + direction[j]
        digits[j] = new
        if new == 0 or new == S - 1:
            direction[j] = -direction[j]
            focus[j] = focus[j + 1]
            focus[j + 1] = j + 1
        if vector:
            h += _delta_vector(sigma, j, supp[new], vcoef, vsym)
        else:
            h += _delta_scalar(col, j, supp[new, 0], orders, coefs, sym, offsets, N)
            col[j] = supp[new, 0]
        for e in range(D):
            for f in range(D):
                gram[e, f] += supp[new, e] * supp[new, f] - supp[old, e] * supp[old, f]
            sigma[j, e] = supp[new, e]
        lw += logw_s[new] - logw_s[old]
        for c in range(d):
            hsum[c] += hsite[j, new, c] - hsite[j, old, c]
    return k


@dataclass
class _Kernel:
    """Arrays shared by the Gray-code and Metropolis kernels."""

    supp: np.ndarray
    logw_s: np.ndarray
    hsite: np.ndarray  # (N, S, d): h at each site for each support point
    vector: bool
    orders: np.ndarray
    coefs: np.ndarray
    sym: np.ndarray
    offsets: np.ndarray
    vsym: np.ndarray
    vcoef: float
    kind_quadratic: bool
    betas: np.ndarray


def _kernel_arrays(sample: DisorderSample, spec: ModelSpec) -> _Kernel:
    N = sample.N
    supp = np.ascontiguousarray(spec.prior.support, dtype=float)
    hsite = np.ascontiguousarray(np.transpose(spec.h_table[:, sample.chi_index, :], (1, 0, 2)))
    coefs = coupling_coefficients(spec, N)
    quad = spec.xi.kind == QUADRATIC_MATRIX
    vector = spec.D > 1
    orders, cs, syms, offsets = [], [], [], []
    vsym, vcoef = np.zeros((1, 1)), 0.0
    off = 0
    for p, c in sorted(coefs.items()):
        if vector:
            vsym = _symmetrize(sample.couplings[p])
            vcoef = c
            continue
        s = _symmetrize(sample.couplings[p]).ravel()
        orders.append(p)
        cs.append(c)
        syms.append(s)
        offsets.append(off)
        off += s.size
    return _Kernel(
        supp=supp,
        logw_s=np.log(spec.prior.weights),
        hsite=hsite,
        vector=vector,
        orders=np.array(orders, dtype=np.int64),
        coefs=np.array(cs, dtype=float),
        sym=np.concatenate(syms) if syms else np.zeros(1),
        offsets=np.array(offsets, dtype=np.int64),
        vsym=np.ascontiguousarray(vsym),
        vcoef=float(vcoef),
        kind_quadratic=quad,
        betas=np.array(spec.xi.betas, dtype=float),
    )


@dataclass
class Enumeration:
    """Per-configuration terms of the Gibbs weight, over the whole product support."""

    N: int
    logw: np.ndarray  # sum_i log w(s_i)
    hn: np.ndarray  # H_N
    xi_self: np.ndarray  # xi(s s^T / N)
    m: np.ndarray  # (M, d) magnetizations
    method: str = "gray"

    @property
    def size(self) -> int:
        return self.logw.size

    def log_weights(self, spec: ModelSpec, G=None) -> np.ndarray:
        """log of the unnormalized Gibbs weight for the Mattis term ``G`` (default: spec.G)."""
        N = self.N
        base = self.logw + spec.beta * self.hn - N * spec.t * self.xi_self
        G = _as_G(G, spec)
        return base + N * _G_values(G, self.m)


def _budget(spec: ModelSpec, N: int, budget: int) -> int:
    S = spec.prior.support.shape[0]
    if N * math.log(S) > math.log(budget) + 1e-12:
        raise EnumerationBudgetError(
            f"{S}^{N} configurations exceed the enumeration budget {budget}; use mcmc_sample instead")
    return S ** N


def enumerate_states(sample: DisorderSample, spec: ModelSpec, method: str = "gray",
                     budget: int = ENUMERATION_BUDGET) -> Enumeration:
    """All configurations with their weight terms; ``method`` is "gray" (incremental) or "naive"."""
    _check_supported(spec)
    M = _budget(spec, sample.N, budget)
    if method == "naive":
        return _enumerate_naive(sample, spec)
    if method != "gray":
        raise ValueError(f"unknown method {method!r}")
    N = sample.N
    kern = _kernel_arrays(sample, spec)
    out_logw, out_h, out_xi = np.empty(M), np.empty(M), np.empty(M)
    out_m = np.empty((M, spec.d))
    if spec.prior.support.shape[0] == 1:
        sigma = np.broadcast_to(kern.supp[0], (N, spec.D))
        out_logw[0] = N * kern.logw_s[0]
        out_h[0] = float(hamiltonian(sample, sigma, spec))
        out_xi[0] = float(_self_xi(spec, sigma, N))
        out_m[0] = kern.hsite[:, 0, :].mean(axis=0)
        return Enumeration(N, out_logw, out_h, out_xi, out_m, "gray")
    h0 = float(hamiltonian(sample, np.broadcast_to(kern.supp[0], (N, spec.D)), spec))
    visited = _gray_walk(N, kern.supp, kern.logw_s, kern.hsite, kern.vector, kern.orders, kern.coefs,
                         kern.sym, kern.offsets, kern.vsym, kern.vcoef, kern.kind_quadratic, kern.betas,
                         h0, out_logw, out_h, out_xi, out_m)
    assert visited == M
    return Enumeration(N, out_logw, out_h, out_xi, out_m, "gray")


def _enumerate_naive(sample: DisorderSample, spec: ModelSpec, batch: int = 65536) -> Enumeration:
    N, S = sample.N, spec.prior.support.shape[0]
    idx = np.array(list(itertools.product(range(S), repeat=N)), dtype=np.int64).reshape(-1, N)
    parts = {"logw": [], "hn": [], "xi": [], "m": []}
    logw_s = np.log(spec.prior.weights)
    for lo in range(0, idx.shape[0], batch):
        block = idx[lo:lo + batch]
        sigma = spec.prior.support[block]  # (B, N, D)
        parts["logw"].append(logw_s[block].sum(axis=1))
        parts["hn"].append(hamiltonian(sample, sigma, spec))
        parts["xi"].append(_self_xi(spec, sigma, N))
        parts["m"].append(spec.h(sigma, sample.chi[None, :, :]).mean(axis=1))
    return Enumeration(N, *(np.concatenate(parts[k]) for k in ("logw", "hn", "xi", "m")), method="naive")


def _lse(a: np.ndarray) -> float:
    top = float(np.max(a))
    return top + math.log(float(np.sum(np.exp(a - top))))


def finite_free_energy(sample: DisorderSample, spec: ModelSpec, G=None, enum: Enumeration | None = None) -> float:
    """F_N^G = -(1/N) log sum_s prod w(s_i) exp(energy_total(s)) by exact enumeration."""
    enum = enum or enumerate_states(sample, spec)
    return -_lse(enum.log_weights(spec, G)) / enum.N


def _gibbs_logp(enum: Enumeration, spec: ModelSpec, G=None) -> np.ndarray:
    lw = enum.log_weights(spec, G)
    return lw - _lse(lw)


def lambda_N(sample: DisorderSample, y, spec: ModelSpec, enum: Enumeration | None = None) -> float:
    """(1/N) log < exp(N y.m_N) > under the G = 0 Gibbs measure."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not np.any(y):
        return 0.0
    enum = enum or enumerate_states(sample, spec)
    logp = _gibbs_logp(enum, spec, lambda m: np.zeros(m.shape[:-1]))
    return _lse(logp + enum.N * (enum.m @ y)) / enum.N


def varadhan_check(sample: DisorderSample, G, spec: ModelSpec, enum: Enumeration | None = None) -> float:
    """(1/N) log < exp(N G(m_N)) > under the G = 0 Gibbs measure."""
    enum = enum or enumerate_states(sample, spec)
    G = _as_G(G, spec)
    gv = _G_values(G, enum.m)
    if not np.any(gv):
        return 0.0
    logp = _gibbs_logp(enum, spec, lambda m: np.zeros(m.shape[:-1]))
    return _lse(logp + enum.N * gv) / enum.N


# -- magnetization distributions --------------------------------------------------------------------

@dataclass
class MagnetizationDistribution:
    N: int
    halfwidth: float
    n_bins: int
    d: int
    masses: np.ndarray  # (n_bins**d,)
    mean_m: np.ndarray  # (n_bins**d, d), nan for empty bins
    spec_hash: str = ""
    G_tag: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return 2.0 * self.halfwidth / self.n_bins

    @property
    def centers(self) -> np.ndarray:
        axis = -self.halfwidth + (np.arange(self.n_bins) + 0.5) * self.width
        mesh = np.meshgrid(*([axis] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    @property
    def occupied(self) -> np.ndarray:
        return self.masses > 0.0

    def to_csv(self, path: str | Path | None = None) -> str:
        cols = [f"center_{i + 1}" for i in range(self.d)] + [f"m_{i + 1}" for i in range(self.d)] + ["mass"]
        lines = [",".join(cols)]
        for c, mm, w in zip(self.centers, self.mean_m, self.masses):
            lines.append(",".join("%.17g" % v for v in list(c) + list(mm) + [w]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="\n")
        return text


def _bin_index(m: np.ndarray, halfwidth: float, n_bins: int) -> np.ndarray:
    width = 2.0 * halfwidth / n_bins
    idx = np.floor((m + halfwidth) / width + 1e-9).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 1)
    flat = np.zeros(m.shape[0], dtype=np.int64)
    for axis in range(m.shape[1]):
        flat = flat * n_bins + idx[:, axis]
    return flat


def _histogram(m: np.ndarray, p: np.ndarray, halfwidth: float, n_bins: int):
    d = m.shape[1]
    flat = _bin_index(m, halfwidth, n_bins)
    size = n_bins ** d
    masses = np.bincount(flat, weights=p, minlength=size)
    mean = np.full((size, d), np.nan)
    occ = masses > 0
    for axis in range(d):
        s = np.bincount(flat, weights=p * m[:, axis], minlength=size)
        mean[occ, axis] = s[occ] / masses[occ]
    return masses, mean


def gibbs_magnetization_dist(sample: DisorderSample, spec: ModelSpec, G=None, n_bins: int = N_BINS,
                             enum: Enumeration | None = None) -> MagnetizationDistribution:
    """Exact Gibbs law of m_N binned on the box |m|_inf <= L_h (Mattis term ``G``, default spec.G)."""
    enum = enum or enumerate_states(sample, spec)
    Gf = _as_G(G, spec)
    p = np.exp(_gibbs_logp(enum, spec, Gf))
    p = p / p.sum()
    masses, mean = _histogram(enum.m, p, spec.box_halfwidth, n_bins)
    tag = getattr(Gf, "source", repr(Gf))
    return MagnetizationDistribution(sample.N, spec.box_halfwidth, n_bins, spec.d, masses, mean,
                                     spec_hash(spec), tag, {"disorder_seed": sample.seed})


def empirical_rate(dist: MagnetizationDistribution) -> RateFunctionTable:
    """-(1/N) log(bin mass), shifted to minimum 0; empty bins carry +inf."""
    occ = dist.occupied
    values = np.full(dist.masses.shape, math.inf)
    values[occ] = -np.log(dist.masses[occ]) / dist.N
    values[occ] -= values[occ].min()
    m = np.where(occ[:, None], dist.mean_m, dist.centers)
    meta = {"quantity": "empirical_rate", "N": dist.N, "bin_width": dist.width, "spec_hash": dist.spec_hash,
            "G": dist.G_tag}
    return RateFunctionTable(m, values, meta=meta)


# -- Metropolis ----------------------------------------------------------------------------------------

@numba.njit(cache=True)
def _metropolis(state, sigma, col, hsum, gram, uniforms, n_sweeps, supp, logw_s, hsite, vector, orders,
                coefs, sym, offsets, vsym, vcoef, kind_quadratic, betas, beta, t, Gfun, halfwidth, n_bins,
                counts, record):
    """Systematic-scan single-site Metropolis; two uniforms per site visit."""
    N = state.size
    S, D = supp.shape
    d = hsum.size
    width = 2.0 * halfwidth / n_bins
    accepted = 0
    mnew = np.empty(d)
    mold = np.empty(d)
    gram_new = np.empty((D, D))
    u = 0
    for sweep in range(n_sweeps):
        for i in range(N):
            old = state[i]
            new = int(uniforms[u] * (S - 1))
            if new >= S - 1:
                new = S - 2
            if new >= old:
                new += 1
            accept_u = uniforms[u + 1]
            u += 2
            if vector:
                dh = _delta_vector(sigma, i, supp[new], vcoef, vsym)
            else:
                dh = _delta_scalar(col, i, supp[new, 0], orders, coefs, sym, offsets, N)
            for c in range(d):
                mold[c] = hsum[c] / N
                mnew[c] = (hsum[c] + hsite[i, new, c] - hsite[i, old, c]) / N
            for e in range(D):
                for f in range(D):
                    gram_new[e, f] = gram[e, f] + supp[new, e] * supp[new, f] - supp[old, e] * supp[old, f]
            dxi = _xi_of(gram_new / N, kind_quadratic, betas) - _xi_of(gram / N, kind_quadratic, betas)
            log_ratio = (logw_s[new] - logw_s[old] + N * (Gfun(mnew) - Gfun(mold)) + beta * dh - N * t * dxi)
            if accept_u <= 0.0 or math.log(accept_u) < log_ratio:
                state[i] = new
                for e in range(D):
                    sigma[i, e] = supp[new, e]
                    for f in range(D):
                        gram[e, f] = gram_new[e, f]
                col[i] = supp[new, 0]
                for c in range(d):
                    hsum[c] += hsite[i, new, c] - hsite[i, old, c]
                accepted += 1
        if record:
            flat = 0
            for c in range(d):
                b = int(math.floor((hsum[c] / N + halfwidth) / width + 1e-9))
                if b < 0:
                    b = 0
                if b > n_bins - 1:
                    b = n_bins - 1
                flat = flat * n_bins + b
            counts[flat] += 1
    return accepted


@dataclass
class MCMCResult:
    dist: MagnetizationDistribution
    sweeps: int
    burn_in: int
    acceptance_rate: float
    seed: int


_G_CACHE: dict[tuple, Callable] = {}


def _numba_G(G: MattisFunction) -> Callable:
    key = (G.source, G.d)
    if key not in _G_CACHE:
        _G_CACHE[key] = compile_numba(G.ast, G.index)
    return _G_CACHE[key]


def mcmc_sample(sample: DisorderSample, spec: ModelSpec, sweeps: int, burn_in: int = 0, seed: int = 0,
                G: str | MattisFunction | None = None, n_bins: int = N_BINS, chunk: int = 1 << 15) -> MCMCResult:
    """Approximate Gibbs law of m_N from one Metropolis chain (Mattis term ``G``, default spec.G)."""
    _check_supported(spec)
    if spec.prior.support.shape[0] < 2:
        raise SpecError("prior.support", "Metropolis needs at least two support points")
    Gm = _as_G(G, spec)
    if not isinstance(Gm, MattisFunction):
        raise TypeError("mcmc_sample needs an expression-valued G")
    gfun = _numba_G(Gm)
    kern = _kernel_arrays(sample, spec)
    N, S = sample.N, kern.supp.shape[0]
    state = stream(seed, "mcmc-init", sample.seed).integers(0, S, size=N).astype(np.int64)
    sigma = np.ascontiguousarray(kern.supp[state])
    col = sigma[:, 0].copy()
    hsum = kern.hsite[np.arange(N), state, :].sum(axis=0)
    gram = sigma.T @ sigma
    rng = stream(seed, "mcmc", sample.seed)
    counts = np.zeros(n_bins ** spec.d, dtype=np.int64)
    accepted, visits = 0, 0
    for record, total in ((False, burn_in), (True, sweeps)):
        done = 0
        while done < total:
            n = min(chunk, total - done)
            uniforms = rng.random(2 * N * n)
            accepted += _metropolis(state, sigma, col, hsum, gram, uniforms, n, kern.supp, kern.logw_s, kern.hsite,
                                    kern.vector, kern.orders, kern.coefs, kern.sym, kern.offsets, kern.vsym,
                                    kern.vcoef, kern.kind_quadratic, kern.betas, spec.beta, spec.t, gfun,
                                    spec.box_halfwidth, n_bins, counts, record)
            visits += n * N
            done += n
    masses = counts / max(sweeps, 1)
    mean = np.full((masses.size, spec.d), np.nan)
    dist = MagnetizationDistribution(N, spec.box_halfwidth, n_bins, spec.d, masses, mean, spec_hash(spec),
                                     Gm.source, {"sweeps": sweeps, "burn_in": burn_in, "seed": seed})
    rate = accepted / visits if visits else 0.0
    return MCMCResult(dist, sweeps, burn_in, rate, seed)
