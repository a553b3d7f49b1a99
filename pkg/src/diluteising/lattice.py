"""Lattice regions, dilution environments, mesoscopic boxes and catalysts.

A region lives inside a rectangular *ambient* box of lattice points. The mask
marks the vertices of the region; ambient points outside the mask carry
boundary spins. Edges leaving the ambient box do not exist, which is how free
boundary is expressed on the outer rim.

Edges are stored per lower endpoint: slot ``(x, k)`` is the edge between
``x`` and ``x + e_k``. Flattening an ``(*shape, d)`` array in C order gives
the fixed enumeration order (lexicographic vertex, then direction).
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng
from .errors import InvalidParameter, OutOfBounds


@dataclass(frozen=True, eq=False)
class LatticeRegion:
    """A finite vertex set ``mask`` inside an ambient box at ``origin``."""

    mask: np.ndarray
    origin: tuple

    def __post_init__(self):
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "origin", tuple(int(o) for o in self.origin))
        if len(self.origin) != mask.ndim:
            raise InvalidParameter("origin and mask dimension differ")

    @classmethod
    def box(cls, shape, pad=1, origin=None):
        """Region ``[0, shape)`` (shifted by ``origin``) with ``pad`` boundary layers."""
        shape = tuple(int(s) for s in shape)
        mask = np.zeros(tuple(s + 2 * pad for s in shape), dtype=bool)
        mask[tuple(slice(pad, pad + s) for s in shape)] = True
        if origin is None:
            origin = (0,) * len(shape)
        return cls(mask, tuple(o - pad for o in origin))

    @classmethod
    def from_points(cls, points, pad=1, d=None):
        pts = np.asarray(points, dtype=np.int64)
        if pts.size == 0:
            d = d if d is not None else 2
            return cls(np.zeros((2 * pad,) * d, dtype=bool), (0,) * d)
        pts = pts.reshape(-1, pts.shape[-1])
        lo = pts.min(axis=0) - pad
        hi = pts.max(axis=0) + pad
        mask = np.zeros(tuple(hi - lo + 1), dtype=bool)
        mask[tuple((pts - lo).T)] = True
        return cls(mask, tuple(lo))

    @property
    def d(self):
        return self.mask.ndim

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_ambient(self):
        return self.mask.size

    @property
    def n_vertices(self):
        return int(self.mask.sum())

    def coords(self):
        """Absolute coordinates of the region's vertices, lexicographic order."""
        return np.argwhere(self.mask) + np.asarray(self.origin)

    def ambient_coords(self):
        idx = np.indices(self.shape).reshape(self.d, -1).T
        return idx + np.asarray(self.origin)

    def to_index(self, points):
        """Ambient array index of absolute points; raises if outside the box."""
        idx = np.asarray(points, dtype=np.int64) - np.asarray(self.origin)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            raise OutOfBounds("point outside ambient box")
        return idx

    def contains(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        idx = pts - np.asarray(self.origin)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=1)
        out = np.zeros(len(pts), dtype=bool)
        out[inside] = self.mask[tuple(idx[inside].T)]
        return out

    def edge_valid(self):
        """Bool array ``(*shape, d)``: slot ``(x, k)`` is an edge of the ambient box."""
        valid = np.ones(self.shape + (self.d,), dtype=bool)
        for k in range(self.d):
            sl = [slice(None)] * self.d + [k]
            sl[k] = -1
            valid[tuple(sl)] = False
        return valid

    def edges(self):
        """All ambient edges in enumeration order as ``(u, v, k)`` flat indices."""
        valid = self.edge_valid()
        slots = np.flatnonzero(valid.reshape(-1))
        u = slots // self.d
        k = slots % self.d
        strides = _flat_strides(self.shape)
        v = u + strides[k]
        return u, v, k

    def edge_sets(self):
        """Masks over ``edges()`` for E(region) and the boundary edges E±(region)."""
        u, v, _ = self.edges()
        m = self.mask.reshape(-1)
        internal = m[u] & m[v]
        boundary = m[u] ^ m[v]
        return internal, boundary

    def neighbor_table(self):
        """``(n_ambient, 2d)`` flat neighbour indices; slot 2k is +e_k, 2k+1 is -e_k."""
        return _neighbor_table(self.shape)

    def snapshot_bytes(self):
        return np.packbits(self.mask.reshape(-1)).tobytes()


def _flat_strides(shape):
    strides = np.ones(len(shape), dtype=np.int64)
    for k in range(len(shape) - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    return strides


def _neighbor_table(shape):
    d = len(shape)
    n = int(np.prod(shape))
    idx = np.indices(shape).reshape(d, -1).T
    strides = _flat_strides(shape)
    flat = np.arange(n, dtype=np.int64)
    nbr = np.full((n, 2 * d), -1, dtype=np.int64)
    for k in range(d):
        up = idx[:, k] + 1 < shape[k]
        nbr[up, 2 * k] = flat[up] + strides[k]
        dn = idx[:, k] > 0
        nbr[dn, 2 * k + 1] = flat[dn] - strides[k]
    return nbr


@dataclass(frozen=True, eq=False)
class Environment:
    """Quenched couplings ``J`` in {0,1} on the ambient edges of ``region``."""

    region: LatticeRegion
    J: np.ndarray
    p: float
    seed: int
    carved: np.ndarray = None

    def __post_init__(self):
        J = np.ascontiguousarray(self.J, dtype=np.uint8)
        expected = self.region.shape + (self.region.d,)
        if J.shape != expected:
            raise InvalidParameter(f"J has shape {J.shape}, expected {expected}")
        carved = self.carved
        if carved is None:
            carved = np.zeros(expected, dtype=bool)
        carved = np.ascontiguousarray(carved, dtype=bool)
        if np.any(J[carved] != 0):
            raise InvalidParameter("carved edges must have J = 0")
        J.setflags(write=False)
        carved.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "carved", carved)

    @property
    def n_carved(self):
        return int(self.carved.sum())

    def coupling(self, u, k):
        """J on edge slot (flat vertex ``u``, direction ``k``)."""
        return self.J.reshape(-1, self.region.d)[u, k]

    def edge_couplings(self):
        """J over ``region.edges()`` in enumeration order."""
        valid = self.region.edge_valid().reshape(-1)
        return self.J.reshape(-1)[valid]

    def coupling_table(self):
        """``(n_ambient, 2d)`` couplings aligned with ``region.neighbor_table()``."""
        return _coupling_table(self.J.reshape(-1, self.region.d).astype(np.float64),
                               self.region.neighbor_table())

    def with_couplings(self, J):
        return Environment(self.region, J, self.p, self.seed, self.carved & (np.asarray(J) == 0))

    def snapshot(self):
        return dumps_environment(self)


@njit(cache=True)
def _coupling_table(Jflat, nbr):
    n, two_d = nbr.shape
    d = two_d // 2
    out = np.zeros((n, two_d))
    for x in range(n):
        for k in range(d):
            y = nbr[x, 2 * k]
            if y >= 0:
                out[x, 2 * k] = Jflat[x, k]
                out[y, 2 * k + 1] = Jflat[x, k]
    return out


def uniform_environment(region, value=1):
    """All ambient edges with the same coupling (``p = 1`` when value is 1)."""
    J = region.edge_valid().astype(np.uint8) * np.uint8(value)
    return Environment(region, J, 1.0, 0)


@njit(cache=True)
def _edge_uniforms(seed, coords, ks):
    out = np.empty(coords.shape[0])
    for i in range(coords.shape[0]):
        z = rng.key2(seed, rng.TAG_ENV)
        for c in range(coords.shape[1]):
            z = rng.absorb(z, coords[i, c])
        z = rng.absorb(z, ks[i])
        out[i] = rng.to_unit(z)
    return out


def gen_environment(region, p, seed):
    """Bernoulli(p) couplings keyed by (seed, absolute edge position).

    Each edge draws from its own counter-based stream, so two regions that
    share an edge assign it the same coupling for the same seed.
    """
    if not (0.0 < p <= 1.0) or not math.isfinite(p):
        raise InvalidParameter(f"dilution probability must lie in (0, 1], got {p}")
    valid = region.edge_valid()
    slots = np.argwhere(valid)
    coords = slots[:, :-1] + np.asarray(region.origin)
    u = _edge_uniforms(np.int64(seed), coords.astype(np.int64), slots[:, -1].astype(np.int64))
    J = np.zeros(valid.shape, dtype=np.uint8)
    J[tuple(slots.T)] = (u < p).astype(np.uint8)
    return Environment(region, J, float(p), int(seed))


@dataclass(frozen=True)
class Scales:
    """Field scale ``h`` with macroscopic scale ``N`` and mesoscopic scale ``K``."""

    h: float
    N: int
    K: int

    @classmethod
    def from_h(cls, h, d):
        if not h > 0:
            raise InvalidParameter("h must be positive")
        # guard against pow() landing just below an exact integer
        K = int(math.floor(h ** (-1.0 / (2 * d)) + 1e-9))
        K = max(K, 1)
        N = K * int(math.floor(1.0 / h / K + 1e-9))
        if N < K:
            raise InvalidParameter(f"h={h} too large for a macroscopic scale")
        return cls(float(h), N, K)

    def __post_init__(self):
        if self.K < 1 or self.N < 1 or self.N % self.K:
            raise InvalidParameter("need K >= 1 dividing N")


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """Frozen exterior spins over the ambient box.

    ``values`` is +1/-1 for plus/minus parts and 0 for free parts (no
    interaction). ``wired`` optionally marks exterior vertices that share a
    single fluctuating spin; only the exact oracle supports that.
    """

    values: np.ndarray
    wired: np.ndarray = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.int8)
        if np.any(np.abs(v) > 1):
            raise InvalidParameter("boundary values must be in {-1, 0, +1}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.wired is not None:
            w = np.ascontiguousarray(self.wired, dtype=bool)
            if not w.any():
                w = None
            object.__setattr__(self, "wired", w)

    @classmethod
    def uniform(cls, region, kind):
        val = {"plus": 1, "+": 1, "minus": -1, "-": -1, "free": 0, "f": 0}[kind]
        return cls(np.full(region.shape, val, dtype=np.int8), labels={"all": kind})

    @classmethod
    def plus(cls, region):
        return cls.uniform(region, "plus")

    @classmethod
    def minus(cls, region):
        return cls.uniform(region, "minus")

    @classmethod
    def free(cls, region):
        return cls.uniform(region, "free")

    @classmethod
    def from_function(cls, region, fn):
        """``fn`` maps an ``(m, d)`` array of absolute coordinates to values."""
        vals = np.asarray(fn(region.ambient_coords()), dtype=np.int8).reshape(region.shape)
        return cls(vals, labels={"custom": "function"})

    @classmethod
    def two_part(cls, region, inner_mask, inner, outer):
        """Different kinds on an inner exterior part and the rest, e.g. (+,-) or (w,-)."""
        conv = {"plus": 1, "+": 1, "minus": -1, "-": -1, "free": 0, "f": 0, "wired": 0, "w": 0}
        vals = np.full(region.shape, conv[outer], dtype=np.int8)
        inner_mask = np.asarray(inner_mask, dtype=bool)
        vals[inner_mask] = conv[inner]
        wired = inner_mask & ~region.mask if inner in ("wired", "w") else None
        return cls(vals, wired=wired, labels={"inner": inner, "outer": outer})

    def exterior(self, region):
        return np.where(region.mask, 0, self.values).astype(np.int8)

    def interacting_edges(self, region):
        """Mask over ``region.edges()``: the edges E^w that enter the Hamiltonian."""
        u, v, _ = region.edges()
        m = region.mask.reshape(-1)
        vals = self.values.reshape(-1)
        wired = None if self.wired is None else self.wired.reshape(-1)
        ext_u = ~m[u] & ((vals[u] != 0) | (wired[u] if wired is not None else False))
        ext_v = ~m[v] & ((vals[v] != 0) | (wired[v] if wired is not None else False))
        return (m[u] & m[v]) | (m[u] & ext_v) | (m[v] & ext_u)

    def leq(self, other, region):
        ext = ~region.mask
        return bool(np.all(self.values[ext] <= other.values[ext]))


# ---------------------------------------------------------------------------
# mesoscopic boxes and discretisation


def box_index(points, K):
    """Index ``i`` with ``x`` in ``B_K(i) = [-K/2, K/2)^d + K i``."""
    x = np.asarray(points, dtype=np.int64)
    return np.floor_divide(2 * x + K, 2 * K)


def box_vertices(i, K):
    """Lattice points of ``B_K(i)`` as an ``(K^d, d)`` array."""
    i = np.asarray(i, dtype=np.int64)
    lo = K * i + (-(K // 2))
    axes = [np.arange(l, l + K) for l in lo]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(i))


def _corner_offsets(d):
    return np.array(list(itertools.product((-1.0, 1.0), repeat=d)))


def boxes_inside(indices, shape, scales):
    """For box indices ``(m, d)``, whether ``K i/N + [-K/2N, K/2N]^d`` lies in ``shape``.

    The corner test is exact for convex shapes.
    """
    idx = np.atleast_2d(np.asarray(indices, dtype=np.float64))
    if idx.size == 0:
        return np.zeros(0, dtype=bool)
    m, d = idx.shape
    K, N = scales.K, scales.N
    centres = K * idx / N
    corners = centres[:, None, :] + _corner_offsets(d)[None, :, :] * (K / (2.0 * N))
    inside = shape.contains(corners.reshape(-1, d)).reshape(m, -1)
    return inside.all(axis=1)


def discretize(shape, scales, pad=1, d=None):
    """Union of mesoscopic boxes whose closed macroscopic cell lies in ``shape``.

    ``shape`` needs ``contains(points)`` on macroscopic coordinates and
    ``bounds()`` returning ``(lo, hi)``; unbounded shapes raise.
    """
    lo, hi = shape.bounds()
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise InvalidParameter("cannot discretise an unbounded shape")
    K, N = scales.K, scales.N
    ilo = np.floor(lo * N / K).astype(np.int64) - 1
    ihi = np.ceil(hi * N / K).astype(np.int64) + 1
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(ilo, ihi)], indexing="ij")
    cand = np.stack([g.reshape(-1) for g in grids], axis=1)
    keep = boxes_inside(cand, shape, scales)
    idx = cand[keep]
    dim = len(lo) if d is None else d
    if len(idx) == 0:
        return LatticeRegion.from_points(np.zeros((0, dim)), pad=pad, d=dim)
    pts = np.concatenate([box_vertices(i, K) for i in idx])
    return LatticeRegion.from_points(pts, pad=pad)


def discretized_boxes(shape, scales):
    """Box indices of ``discretize(shape, scales)`` as an ``(m, d)`` array."""
    lo, hi = shape.bounds()
    K, N = scales.K, scales.N
    ilo = np.floor(np.asarray(lo) * N / K).astype(np.int64) - 1
    ihi = np.ceil(np.asarray(hi) * N / K).astype(np.int64) + 1
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(ilo, ihi)], indexing="ij")
    cand = np.stack([g.reshape(-1) for g in grids], axis=1)
    return cand[boxes_inside(cand, shape, scales)]


@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box ``[lo, hi]`` in macroscopic coordinates."""

    lo: tuple
    hi: tuple

    def contains(self, points):
        p = np.atleast_2d(points)
        tol = 1e-12
        return np.all((p >= np.asarray(self.lo) - tol) & (p <= np.asarray(self.hi) + tol), axis=1)

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)


@dataclass(frozen=True)
class MesoBox:
    index: tuple
    vertices: np.ndarray
    interior: bool


def box_decomposition(region, K):
    """Tile the ambient box of ``region`` by the boxes ``B_K(i)``.

    Boxes cut by the ambient box are clipped; ``interior`` marks boxes whose
    full ``K^d`` vertex set lies inside the region.
    """
    if K < 1:
        raise InvalidParameter("K must be >= 1")
    pts = region.ambient_coords()
    idx = box_index(pts, K)
    order = np.lexsort(idx.T[::-1])
    idx_sorted = idx[order]
    pts_sorted = pts[order]
    change = np.ones(len(order), dtype=bool)
    change[1:] = np.any(idx_sorted[1:] != idx_sorted[:-1], axis=1)
    starts = np.flatnonzero(change)
    ends = np.append(starts[1:], len(order))
    flat_mask = region.mask.reshape(-1)[order]
    boxes = []
    for a, b in zip(starts, ends):
        verts = pts_sorted[a:b]
        interior = (b - a) == K ** region.d and bool(flat_mask[a:b].all())
        boxes.append(MesoBox(tuple(int(c) for c in idx_sorted[a]), verts, interior))
    return boxes


# ---------------------------------------------------------------------------
# catalysts


def cone_contains(points, theta):
    """Membership in ``A_theta = {x : x_1 >= |x| cos(theta/2)}``."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if theta >= 2 * np.pi:
        return np.ones(len(p), dtype=bool)
    r = np.linalg.norm(p, axis=1)
    return p[:, 0] >= r * math.cos(theta / 2.0) - 1e-12


@dataclass(frozen=True)
class ConeShape:
    theta: float
    d: int = 2

    def contains(self, points):
        return cone_contains(points, self.theta)

    def bounds(self):
        return np.full(self.d, -np.inf), np.full(self.d, np.inf)


def in_discrete_cone(points, theta, scales, anchor=None):
    """Whether lattice points lie in the discretised cone (shifted by ``anchor``)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
    if anchor is not None:
        pts = pts - np.asarray(anchor, dtype=np.int64)
    idx = box_index(pts, scales.K)
    uniq, inv = np.unique(idx, axis=0, return_inverse=True)
    inside = boxes_inside(uniq, ConeShape(theta, pts.shape[1]), scales)
    return inside[np.asarray(inv).reshape(-1)]


def carve_catalyst(env, theta, b_max, anchor, scales, model=None):
    """Close every edge leaving the discrete Wulff cone-shape sideways.

    Edges ``{x, y}`` with ``x`` in ``W_theta(b_max) + anchor`` (discretised) and
    ``y`` outside the discrete cone ``A_theta + anchor`` are forced to J = 0
    and recorded in ``carved``. Edges crossing the open mouth of the shape
    into the cone are left alone.
    """
    from .wulff import SurfaceTensionModel, wulff_shape

    if not (0 < theta < np.pi or theta == np.pi):
        raise InvalidParameter("catalyst cone angle must lie in (0, pi]")
    region = env.region
    model = model or SurfaceTensionModel.isotropic(1.0, d=region.d)
    shape = wulff_shape(model, theta, b_max)
    wpts = discretize(shape, scales).coords() + np.asarray(anchor, dtype=np.int64)
    if len(wpts) == 0:
        return env
    if not np.all(region.contains(wpts)):
        raise OutOfBounds("catalyst shape does not fit inside the region")
    inside_w = np.zeros(region.n_ambient, dtype=bool)
    inside_w[np.ravel_multi_index(tuple(region.to_index(wpts).T), region.shape)] = True
    u, v, k = region.edges()
    touches = inside_w[u] ^ inside_w[v]
    cand = np.flatnonzero(touches)
    amb = region.ambient_coords()
    outer = np.where(inside_w[u[cand]], v[cand], u[cand])
    in_cone = in_discrete_cone(amb[outer], theta, scales, anchor)
    hit = cand[~in_cone]
    carved = env.carved.copy().reshape(-1, region.d)
    carved[u[hit], k[hit]] = True
    carved = carved.reshape(env.carved.shape)
    J = env.J.copy()
    J[carved] = 0
    return Environment(region, J, env.p, env.seed, carved)


# ---------------------------------------------------------------------------
# snapshots

_MAGIC = b"DIEN"
_VERSION = 1


def dumps_environment(env):
    """Binary snapshot: header, region mask bits, J bits, carved bits."""
    region = env.region
    d = region.d
    valid = region.edge_valid().reshape(-1)
    head = struct.pack("<4sBB", _MAGIC, _VERSION, d)
    head += struct.pack(f"<{d}q", *region.shape)
    head += struct.pack(f"<{d}q", *region.origin)
    head += struct.pack("<dQQ", env.p, env.seed & 0xFFFFFFFFFFFFFFFF, env.n_carved)
    mask_bits = np.packbits(region.mask.reshape(-1)).tobytes()
    j_bits = np.packbits(env.J.reshape(-1)[valid].astype(bool)).tobytes()
    c_bits = np.packbits(env.carved.reshape(-1)[valid]).tobytes()
    return head + mask_bits + j_bits + c_bits


def loads_environment(blob):
    magic, version, d = struct.unpack_from("<4sBB", blob, 0)
    if magic != _MAGIC or version != _VERSION:
        raise InvalidParameter("not an environment snapshot")
    off = 6
    shape = struct.unpack_from(f"<{d}q", blob, off)
    off += 8 * d
    origin = struct.unpack_from(f"<{d}q", blob, off)
    off += 8 * d
    p, seed, n_carved = struct.unpack_from("<dQQ", blob, off)
    off += 24
    n = int(np.prod(shape))
    nbytes = (n + 7) // 8
    mask = np.unpackbits(np.frombuffer(blob, np.uint8, nbytes, off), count=n).astype(bool)
    off += nbytes
    region = LatticeRegion(mask.reshape(shape), origin)
    valid = region.edge_valid().reshape(-1)
    m = int(valid.sum())
    mb = (m + 7) // 8
    jbits = np.unpackbits(np.frombuffer(blob, np.uint8, mb, off), count=m)
    off += mb
    cbits = np.unpackbits(np.frombuffer(blob, np.uint8, mb, off), count=m).astype(bool)
    J = np.zeros(n * d, dtype=np.uint8)
    J[valid] = jbits
    carved = np.zeros(n * d, dtype=bool)
    carved[valid] = cbits
    env = Environment(region, J.reshape(shape + (d,)), p, int(seed), carved.reshape(shape + (d,)))
    if env.n_carved != n_carved:
        raise InvalidParameter("snapshot carved count mismatch")
    return env


def save_environment(env, path):
    with open(path, "wb") as fh:
        fh.write(dumps_environment(env))


def load_environment(path):
    with open(path, "rb") as fh:
        return loads_environment(fh.read())
