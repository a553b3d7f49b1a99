"""Hamiltonian, exact Gibbs measures and the exact heat-bath generator.

These are brute-force routines for small regions. Every sampler in the
package is checked against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import linalg
from scipy.special import logsumexp

from .errors import InvalidParameter, ResourceError
from .lattice import BoundaryCondition, box_decomposition

MAX_GIBBS_SITES = 20
MAX_GAP_SITES = 12


@dataclass(frozen=True, eq=False)
class GibbsSpec:
    """Environment, inverse temperature, field and boundary condition."""

    env: object
    beta: float
    h: float
    boundary: BoundaryCondition

    def __post_init__(self):
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise InvalidParameter("beta must be a finite nonnegative number")
        if not (self.h >= 0 and math.isfinite(self.h)):
            raise InvalidParameter("h must be a finite nonnegative number")
        if self.boundary.values.shape != self.env.region.shape:
            raise InvalidParameter("boundary does not match the region's ambient box")

    @property
    def region(self):
        return self.env.region

    def with_(self, **kw):
        args = dict(env=self.env, beta=self.beta, h=self.h, boundary=self.boundary)
        args.update(kw)
        return GibbsSpec(**args)


@dataclass(eq=False)
class SpinConfig:
    """Spins over the ambient box: +/-1 inside the region, boundary values outside."""

    region: object
    spins: np.ndarray
    boundary: BoundaryCondition

    def __post_init__(self):
        s = np.ascontiguousarray(self.spins, dtype=np.int8).reshape(self.region.shape)
        ext = ~self.region.mask
        if np.any(np.abs(s[self.region.mask]) != 1):
            raise InvalidParameter("region spins must be +1 or -1")
        if np.any(s[ext] != self.boundary.values[ext]):
            raise InvalidParameter("exterior spins must equal the boundary values")
        self.spins = s

    @classmethod
    def constant(cls, region, boundary, value):
        s = boundary.exterior(region)
        s[region.mask] = value
        return cls(region, s, boundary)

    @classmethod
    def from_sites(cls, region, boundary, values):
        s = boundary.exterior(region)
        s[region.mask] = np.asarray(values, dtype=np.int8)
        return cls(region, s, boundary)

    def site_values(self):
        return self.spins[self.region.mask]

    def flat(self):
        return self.spins.reshape(-1)

    def copy(self):
        return SpinConfig(self.region, self.spins.copy(), self.boundary)

    def magnetization(self):
        return float(self.site_values().mean())


def site_index(region):
    """Flat ambient indices of the region's vertices, lexicographic order."""
    return np.flatnonzero(region.mask.reshape(-1))


def _edge_terms(spec):
    """Interacting edges split into internal pairs and boundary (site, value) pairs.

    Returns positions into ``site_index(region)``. Wired exterior vertices get
    the value 2 as a marker for the shared wired spin.
    """
    region = spec.region
    u, v, _ = region.edges()
    J = spec.env.edge_couplings().astype(float)
    m = region.mask.reshape(-1)
    pos = np.full(region.n_ambient, -1, dtype=np.int64)
    pos[m] = np.arange(int(m.sum()))
    vals = spec.boundary.values.reshape(-1).astype(np.int64)
    if spec.boundary.wired is not None:
        vals = np.where(spec.boundary.wired.reshape(-1) & ~m, 2, vals)
    inner = m[u] & m[v] & (J > 0)
    pairs = np.stack([pos[u[inner]], pos[v[inner]]], axis=1)
    pair_J = J[inner]
    bu = m[u] & ~m[v] & (vals[v] != 0) & (J > 0)
    bv = m[v] & ~m[u] & (vals[u] != 0) & (J > 0)
    bsite = np.r_[pos[u[bu]], pos[v[bv]]]
    bval = np.r_[vals[v[bu]], vals[u[bv]]]
    bJ = np.r_[J[bu], J[bv]]
    return pairs, pair_J, bsite, bval, bJ


def hamiltonian(sigma, spec):
    """``sum_{E^w} J 1{s_x != s_y} + h #{x in region: s_x = -1}``; free parts omitted."""
    region = spec.region
    if sigma.region is not region and sigma.region.mask.shape != region.mask.shape:
        raise InvalidParameter("configuration and spec live on different regions")
    if spec.boundary.wired is not None:
        raise InvalidParameter("wired boundaries need the wired spin; use exact_gibbs")
    u, v, _ = region.edges()
    J = spec.env.edge_couplings().astype(float)
    s = sigma.flat().astype(np.int64)
    act = spec.boundary.interacting_edges(region)
    broken = (s[u] != s[v]) & act
    minus = np.count_nonzero(sigma.site_values() == -1)
    return float(np.sum(J[broken]) + spec.h * minus)


def all_configs(n):
    """``(2^n, n)`` int8 spins; bit k of the row index set means site k is +1."""
    idx = np.arange(1 << n, dtype=np.int64)[:, None]
    bits = (idx >> np.arange(n, dtype=np.int64)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


def config_index(values):
    """Row index in ``all_configs`` of site values (``(m, n)`` or ``(n,)``)."""
    v = np.atleast_2d(np.asarray(values))
    w = (v > 0).astype(np.int64)
    return (w << np.arange(v.shape[1], dtype=np.int64)).sum(axis=1)


def config_energies(spec, configs=None):
    """Energy of every configuration in ``all_configs`` order.

    With a wired boundary part the last column of ``configs`` is the wired spin.
    """
    n = spec.region.n_vertices
    wired = spec.boundary.wired is not None
    nv = n + (1 if wired else 0)
    if configs is None:
        configs = all_configs(nv)
    pairs, pJ, bsite, bval, bJ = _edge_terms(spec)
    E = np.zeros(len(configs))
    for (a, b), j in zip(pairs, pJ):
        E += j * (configs[:, a] != configs[:, b])
    for a, val, j in zip(bsite, bval, bJ):
        other = configs[:, n] if val == 2 else val
        E += j * (configs[:, a] != other)
    E += spec.h * np.count_nonzero(configs[:, :n] == -1, axis=1)
    return E


@dataclass(frozen=True, eq=False)
class ExactGibbs:
    logZ: float
    configs: np.ndarray
    probs: np.ndarray
    energies: np.ndarray

    @property
    def Z(self):
        return math.exp(self.logZ)

    def marginals(self):
        """``P(sigma_x = +1)`` per site (and the wired spin if present)."""
        return self.probs @ (self.configs > 0)

    def expect(self, f):
        return float(self.probs @ f(self.configs))

    def prob_of(self, values):
        return float(self.probs[config_index(values)[0]])


def exact_gibbs(spec, energy_shift=0.0):
    """Enumerate ``mu(sigma) ∝ exp(-beta H)`` over all configurations.

    ``energy_shift`` adds a constant to H; the measure must not change.
    """
    n = spec.region.n_vertices
    if n > MAX_GIBBS_SITES:
        raise ResourceError(f"exact enumeration capped at {MAX_GIBBS_SITES} sites, got {n}")
    nv = n + (1 if spec.boundary.wired is not None else 0)
    configs = all_configs(nv)
    E = config_energies(spec, configs) + energy_shift
    logw = -spec.beta * E
    logZ = float(logsumexp(logw))
    probs = np.exp(logw - logZ)
    return ExactGibbs(logZ, configs, probs, E)


def conditional_plus(spec, spins_flat, x):
    """Oracle ``mu(sigma_x = +1 | rest)`` from the two energies differing at ``x``."""
    region = spec.region
    s = SpinConfig(region, spins_flat.copy(), spec.boundary)
    s.spins.reshape(-1)[x] = 1
    ep = hamiltonian(s, spec)
    s.spins.reshape(-1)[x] = -1
    em = hamiltonian(s, spec)
    return 1.0 / (1.0 + math.exp(-spec.beta * (em - ep)))


def _flip_rates(spec, configs, E):
    """Heat-bath rates ``L(sigma, sigma^x)`` for every configuration and site."""
    n = configs.shape[1]
    N = len(configs)
    rows = np.arange(N)
    rates = np.empty((N, n))
    for k in range(n):
        partner = rows ^ (1 << k)
        # rate of moving to the partner = its conditional probability
        dE = E[partner] - E
        rates[:, k] = 1.0 / (1.0 + np.exp(np.clip(spec.beta * dE, -700, 700)))
    return rates


@dataclass(frozen=True, eq=False)
class GapResult:
    gap: float
    stationary: np.ndarray
    detailed_balance_error: float
    row_sum_error: float
    eigenvalues: np.ndarray


def exact_generator(spec, sparse=False):
    """Heat-bath generator over ``all_configs`` order; rows sum to 0."""
    n = spec.region.n_vertices
    if n > MAX_GAP_SITES:
        raise ResourceError(f"exact generator capped at {MAX_GAP_SITES} sites, got {n}")
    if spec.boundary.wired is not None:
        raise InvalidParameter("the generator oracle does not support wired boundaries")
    configs = all_configs(n)
    E = config_energies(spec, configs)
    rates = _flip_rates(spec, configs, E)
    N = len(configs)
    rows = np.arange(N)
    r = np.concatenate([rows] * n + [rows])
    c = np.concatenate([rows ^ (1 << k) for k in range(n)] + [rows])
    data = np.concatenate([rates[:, k] for k in range(n)] + [-rates.sum(axis=1)])
    L = sp.csr_matrix((data, (r, c)), shape=(N, N))
    return (L if sparse else L.toarray()), E


def exact_generator_gap(spec):
    """Smallest nonzero eigenvalue of ``-L`` for the heat-bath generator."""
    n = spec.region.n_vertices
    big = n > 8
    L, E = exact_generator(spec, sparse=big)
    logw = -spec.beta * E
    pi = np.exp(logw - logsumexp(logw))
    row_err = float(np.abs(np.asarray(L.sum(axis=1)).ravel()).max())
    flux = sp.diags(pi) @ sp.csr_matrix(L)
    flux = flux - sp.diags(flux.diagonal())
    diff = (flux - flux.T).tocoo()
    db = float(np.abs(diff.data).max()) if diff.nnz else 0.0
    sq = np.sqrt(pi)
    D = sp.diags(sq)
    Di = sp.diags(1.0 / sq)
    S = -(D @ sp.csr_matrix(L) @ Di)
    S = 0.5 * (S + S.T)
    if S.shape[0] == 1:
        return GapResult(0.0, pi, db, row_err, np.zeros(1))
    vals = None
    if big:
        # stationary mode straight from the generator, then deflate it to reach the gap
        x0 = np.ones((S.shape[0], 1))
        vals0, vecs = spla.lobpcg(S, x0, largest=False, tol=1e-13, maxiter=5000)
        v = vecs[:, 0] / np.linalg.norm(vecs[:, 0])
        if np.linalg.norm(S @ v) < 1e-10:
            c = 2.0 * n + 1.0  # above every eigenvalue of -L
            op = spla.LinearOperator(S.shape, dtype=float, matvec=lambda x: S @ x + c * v * (v @ x))
            g = spla.eigsh(op, k=1, which="SA", tol=1e-13)[0]
            # tiny gaps are ill-conditioned for the iterative path
            if g[0] > 1e-6:
                vals = np.array([vals0[0], g[0]])
                vecs = v[:, None]
    if vals is None:
        vals, vecs = linalg.eigh(S.toarray(), subset_by_index=[0, 1])
    stat = vecs[:, 0] ** 2
    stat = stat / stat.sum()
    return GapResult(float(vals[1]), stat, db, row_err, vals)


def magnetization_profile(sigma, scales, m_star):
    """Per-box values of ``M_K``: ``(1 + sigma(B)/m*)/2`` inside, ``(1 + sigma(B))/2`` otherwise.

    Returns ``(indices, values, interior)``. Exterior sites contribute their
    boundary spins to the box average; free sites count as 0.
    """
    if m_star == 0:
        raise InvalidParameter("m_star must be nonzero")
    region = sigma.region
    boxes = box_decomposition(region, scales.K)
    origin = np.asarray(region.origin)
    idx, vals, inner = [], [], []
    K, d = scales.K, region.d
    for box in boxes:
        local = box.vertices - origin
        s = sigma.spins[tuple(local.T)].astype(float)
        # clipped boxes: vertices beyond the ambient box act as free sites
        avg = s.sum() / K ** d
        if box.interior:
            vals.append(0.5 * (1.0 + avg / m_star))
        else:
            vals.append(0.5 * (1.0 + avg))
        idx.append(box.index)
        inner.append(box.interior)
    return np.array(idx, dtype=np.int64), np.array(vals), np.array(inner, dtype=bool)


# ---------------------------------------------------------------------------
# spin snapshots


def save_spin_config(sigma, path, omega=None, t=None):
    """Write ``sigma`` (and optionally an FK edge mask over ``region.edges()``) as ``.npz``."""
    extra = {}
    if omega is not None:
        extra["omega"] = np.asarray(omega, dtype=bool)
    if t is not None:
        extra["t"] = np.float64(t)
    np.savez_compressed(path, spins=sigma.spins, mask=sigma.region.mask,
                        origin=np.asarray(sigma.region.origin, dtype=np.int64),
                        boundary=sigma.boundary.values, **extra)


def load_spin_config(path):
    """Inverse of ``save_spin_config``; returns ``(sigma, omega or None)``."""
    from .lattice import LatticeRegion

    with np.load(path) as z:
        region = LatticeRegion(z["mask"], tuple(int(o) for o in z["origin"]))
        sigma = SpinConfig(region, z["spins"], BoundaryCondition(z["boundary"]))
        omega = z["omega"] if "omega" in z.files else None
    return sigma, omega
