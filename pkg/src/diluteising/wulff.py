"""Surface tension models, Wulff shapes in cones and droplet energetics.

Shapes are polytopes: the cone ``A_theta`` intersected with the half-spaces
``x . n <= tau(n)`` over a dense net of unit directions, then rescaled to the
requested volume. The cone's lateral boundary is free and carries no surface
energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection

from .errors import InvalidParameter

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# surface tension models


@dataclass(frozen=True)
class SurfaceTensionModel:
    """Positive even function ``tau`` on unit vectors, with ``beta`` folded in.

    ``tau`` takes an ``(m, d)`` array of unit vectors and returns ``(m,)``.
    """

    tau_fn: object
    d: int = 2
    name: str = "custom"
    isotropic_flag: bool = False
    lattice_symmetric: bool = False

    @classmethod
    def isotropic(cls, t=1.0, d=2, beta=1.0):
        scale = float(t) * float(beta)
        if scale <= 0:
            raise InvalidParameter("surface tension must be positive")
        return cls(_ConstTau(scale), d, f"iso:{scale:g}", True, True)

    @classmethod
    def l1aniso(cls, t=1.0, d=2, beta=1.0):
        scale = float(t) * float(beta)
        if scale <= 0:
            raise InvalidParameter("surface tension must be positive")
        return cls(_L1Tau(scale), d, f"l1aniso:{scale:g}", False, True)

    @classmethod
    def parse(cls, text, d=2, beta=1.0):
        """``iso:t`` or ``l1aniso:t``; the result is scaled by ``beta``."""
        kind, _, val = text.partition(":")
        t = float(val) if val else 1.0
        if kind == "iso":
            return cls.isotropic(t, d, beta)
        if kind == "l1aniso":
            return cls.l1aniso(t, d, beta)
        raise InvalidParameter(f"unknown surface tension model {text!r}")

    def __call__(self, n):
        n = np.atleast_2d(np.asarray(n, dtype=float))
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
        return np.asarray(self.tau_fn(n), dtype=float)

    def scaled(self, lam):
        return SurfaceTensionModel(_ScaledTau(self.tau_fn, float(lam)), self.d,
                                   f"{lam:g}*{self.name}", self.isotropic_flag,
                                   self.lattice_symmetric)

    def reference(self):
        e1 = np.zeros(self.d)
        e1[0] = 1.0
        return float(self(e1)[0])


@dataclass(frozen=True)
class _ConstTau:
    t: float

    def __call__(self, n):
        return np.full(len(n), self.t)


@dataclass(frozen=True)
class _L1Tau:
    t: float

    def __call__(self, n):
        return self.t * np.abs(n).sum(axis=1) / np.linalg.norm(n, axis=1)


@dataclass(frozen=True)
class _ScaledTau:
    fn: object
    lam: float

    def __call__(self, n):
        return self.lam * np.asarray(self.fn(n))


@dataclass(frozen=True)
class _PerturbedTau:
    fn: object
    amp: np.ndarray = field(compare=False)
    freq: np.ndarray = field(compare=False)
    phase: np.ndarray = field(compare=False)

    def __call__(self, n):
        base = np.asarray(self.fn(n))
        # even in n, so the perturbed tension keeps the +/- symmetry
        wave = np.cos(self.freq @ n.T * 2.0 + self.phase[:, None]) ** 2
        return base * (1.0 + self.amp @ (wave - 0.5))


# ---------------------------------------------------------------------------
# direction nets


@lru_cache(maxsize=8)
def direction_net(d, size=None):
    """Unit directions: ``size`` equal angles in d=2, an icosphere in d=3."""
    if d == 2:
        m = 4096 if size is None else int(size)
        a = (np.arange(m) + 0.5) * TWO_PI / m
        net = np.stack([np.cos(a), np.sin(a)], axis=1)
    elif d == 3:
        net = _icosphere(5 if size is None else int(size))
    else:
        raise InvalidParameter("direction nets are provided for d = 2, 3")
    net.setflags(write=False)
    return net


def _icosphere(level):
    g = (1 + 5 ** 0.5) / 2
    verts = [(-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0), (0, -1, g), (0, 1, g),
             (0, -1, -g), (0, 1, -g), (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9),
             (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2),
             (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10),
             (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache = {}
        new_faces = []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts)


def cone_halfspaces(theta, d, lateral=256):
    """Normals ``n`` with ``x . n <= 0`` describing ``A_theta`` (a polygonal cone for d=3)."""
    if theta >= TWO_PI:
        return np.zeros((0, d))
    if not (0 < theta <= math.pi):
        raise InvalidParameter("cone angle must be in (0, pi] or equal 2 pi")
    s, c = math.sin(theta / 2), math.cos(theta / 2)
    if d == 2:
        return np.array([[-s, c], [-s, -c]])
    if abs(theta - math.pi) < 1e-15:
        n = np.zeros((1, d))
        n[0, 0] = -1.0
        return n
    if d == 3:
        a = np.arange(lateral) * TWO_PI / lateral
        # circumscribed polygon so that the true cone lies inside
        cc = c / math.cos(math.pi / lateral)
        ns = np.stack([np.full(lateral, -s), cc * np.cos(a), cc * np.sin(a)], axis=1)
        return ns / np.linalg.norm(ns, axis=1, keepdims=True)
    raise InvalidParameter("cones are provided for d = 2, 3")


# ---------------------------------------------------------------------------
# polytope helpers


@dataclass(frozen=True, eq=False)
class Polytope:
    """Convex polytope with vertex list and outward facets ``normals . x <= offsets``."""

    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    areas: np.ndarray
    volume: float

    @classmethod
    def from_points(cls, pts):
        pts = np.asarray(pts, dtype=float)
        hull = ConvexHull(pts)
        eq = hull.equations
        normals = eq[:, :-1]
        offsets = -eq[:, -1]
        simp = pts[hull.simplices]
        if pts.shape[1] == 2:
            areas = np.linalg.norm(simp[:, 1] - simp[:, 0], axis=1)
        elif pts.shape[1] == 3:
            areas = 0.5 * np.linalg.norm(np.cross(simp[:, 1] - simp[:, 0], simp[:, 2] - simp[:, 0]), axis=1)
        else:
            raise InvalidParameter("polytopes are supported for d = 2, 3")
        return cls(pts[hull.vertices], normals, offsets, areas, float(hull.volume))

    def scaled(self, s):
        d = self.vertices.shape[1]
        return Polytope(self.vertices * s, self.normals, self.offsets * s,
                        self.areas * s ** (d - 1), self.volume * s ** d)

    def translated(self, v):
        v = np.asarray(v, float)
        return Polytope(self.vertices + v, self.normals, self.offsets + self.normals @ v,
                        self.areas, self.volume)

    def contains(self, points, tol=1e-12):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.ones(len(p), dtype=bool)
        # chunked to bound memory on dense nets
        for a in range(0, len(self.normals), 1024):
            n = self.normals[a:a + 1024]
            o = self.offsets[a:a + 1024]
            out &= np.all(p @ n.T <= o + tol * (1 + np.abs(o)), axis=1)
        return out

    def support(self, dirs):
        return np.max(np.atleast_2d(dirs) @ self.vertices.T, axis=1)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def gauge(self, points, tol=1e-9):
        """Least ``b >= 0`` with ``x`` in ``b * P`` for a polytope containing the origin; inf if none."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(p))
        scale = 1.0 + np.linalg.norm(p, axis=1)
        for a in range(0, len(self.normals), 1024):
            proj = p @ self.normals[a:a + 1024].T
            o = self.offsets[a:a + 1024]
            pos = o > tol
            if pos.any():
                out = np.maximum(out, np.max(proj[:, pos] / o[pos], axis=1, initial=0.0))
            if (~pos).any():
                bad = np.any(proj[:, ~pos] > tol * scale[:, None], axis=1)
                out[bad] = np.inf
        return out

    def diameter(self):
        """Largest width over a dense direction net (the diameter of a convex body)."""
        d = self.vertices.shape[1]
        dirs = direction_net(d, 8192 if d == 2 else 4)
        h = self.support(dirs)
        hm = self.support(-dirs)
        return float(np.max(h + hm))


def _intersect_halfspaces(normals, offsets):
    """Bounded intersection of ``normals . x <= offsets`` as a Polytope."""
    d = normals.shape[1]
    # Chebyshev centre as a strictly interior point
    norms = np.linalg.norm(normals, axis=1)
    res = linprog(np.r_[np.zeros(d), -1.0], A_ub=np.c_[normals, norms], b_ub=offsets,
                  bounds=[(None, None)] * d + [(0, None)], method="highs")
    if not res.success or res.x[-1] <= 0:
        raise InvalidParameter("half-space system has empty interior")
    hs = HalfspaceIntersection(np.c_[normals, -offsets], res.x[:d])
    return Polytope.from_points(hs.intersections)


# ---------------------------------------------------------------------------
# Wulff shapes


@dataclass(frozen=True, eq=False)
class ShapeSpec:
    """``W_theta(b) = w_theta * b * (A_theta ∩ {x . n <= tau(n)})``, volume ``b^d``."""

    model: SurfaceTensionModel
    theta: float
    b: float
    w_theta: float
    unit: Polytope  # the volume-one shape W_theta(1)

    @property
    def d(self):
        return self.model.d

    @property
    def polytope(self):
        return self.unit.scaled(self.b) if self.b > 0 else None

    def volume(self):
        return self.b ** self.d

    def contains(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.b <= 0:
            return np.all(np.abs(p) <= 1e-12, axis=1)
        return self.unit.contains(p / self.b)

    def bounds(self):
        if self.b <= 0:
            return np.zeros(self.d), np.zeros(self.d)
        lo, hi = self.unit.bounds()
        return lo * self.b, hi * self.b

    def diameter(self):
        return self.b * self.unit.diameter()

    def with_b(self, b):
        if b < 0:
            raise InvalidParameter("b must be nonnegative")
        return replace(self, b=float(b))


_SHAPE_CACHE = {}


def wulff_shape(model, theta, b=1.0, net_size=None):
    """Volume-normalised Wulff shape of ``model`` in the cone of angle ``theta``."""
    if b < 0:
        raise InvalidParameter("b must be nonnegative")
    key = (id(model.tau_fn), model.d, float(theta), net_size)
    hit = _SHAPE_CACHE.get(key)
    if hit is None or hit[0] is not model.tau_fn:
        net = direction_net(model.d, net_size)
        tau = model(net)
        if np.any(tau <= 0):
            raise InvalidParameter("surface tension must be positive")
        cone = cone_halfspaces(theta, model.d)
        normals = np.vstack([net, cone])
        offsets = np.r_[tau, np.zeros(len(cone))]
        raw = _intersect_halfspaces(normals, offsets)
        # scaling is homogeneous, so the volume normalisation is closed form
        w = raw.volume ** (-1.0 / model.d)
        unit = raw.scaled(w)
        hit = (model.tau_fn, w, unit)
        _SHAPE_CACHE[key] = hit
    _, w, unit = hit
    return ShapeSpec(model, float(theta), float(b), w, unit)


def is_free_facet(normals, offsets, theta, tol=1e-9):
    """Facets lying on the lateral boundary of ``A_theta`` (no surface energy)."""
    normals = np.atleast_2d(normals)
    if theta >= TWO_PI:
        return np.zeros(len(normals), dtype=bool)
    s = math.sin(theta / 2)
    return (np.abs(offsets) < tol) & (np.abs(normals[:, 0] + s) < 1e-7)


def surface_functional(shape, model=None, theta=None):
    """``∫ tau(n) dH^{d-1}`` over the boundary, free cone facets excluded.

    Accepts a ShapeSpec, a Polytope or an ``(m, d)`` vertex array; for the
    latter two ``theta`` selects the cone (default: whole space).
    """
    if isinstance(shape, ShapeSpec):
        model = model or shape.model
        theta = shape.theta if theta is None else theta
        if shape.b <= 0:
            return 0.0
        poly = shape.polytope
    else:
        if model is None:
            raise InvalidParameter("a surface tension model is required")
        poly = shape if isinstance(shape, Polytope) else Polytope.from_points(shape)
        theta = TWO_PI if theta is None else theta
    if not np.all(np.isfinite(poly.vertices)):
        raise InvalidParameter("shape must be bounded")
    scale = np.abs(poly.vertices).max()
    free = is_free_facet(poly.normals, poly.offsets / max(scale, 1e-300), theta)
    tau = model(poly.normals)
    return float(np.sum(tau[~free] * poly.areas[~free]))


def competitor_bodies(shape, count=100, seed=0):
    """Random convex bodies of volume ``shape.volume()`` inside the cone.

    Mixes hulls of random points (some on the cone rays), Wulff shapes of
    perturbed tensions and Wulff shapes of narrower cones.
    """
    rng = np.random.default_rng(seed)
    d, theta = shape.d, shape.theta
    target = shape.volume()
    out = []
    kinds = ["points", "perturbed", "narrow"]
    for j in range(count):
        kind = kinds[j % 3]
        if kind == "narrow" and (theta >= TWO_PI or theta < 1e-3):
            kind = "perturbed"
        if kind == "points":
            pts = _random_cone_points(rng, theta, d, int(rng.integers(d + 3, 40)))
            poly = Polytope.from_points(pts)
        elif kind == "perturbed":
            m = 3
            tau = _PerturbedTau(shape.model.tau_fn, rng.uniform(-0.6, 0.6, m),
                                rng.normal(size=(m, d)) * rng.uniform(0.5, 3.0),
                                rng.uniform(0, np.pi, m))
            pert = SurfaceTensionModel(tau, d)
            net = direction_net(d, 256 if d == 2 else 2)
            cone = cone_halfspaces(theta, d)
            poly = _intersect_halfspaces(np.vstack([net, cone]),
                                         np.r_[pert(net), np.zeros(len(cone))])
        else:
            narrow = theta * rng.uniform(0.3, 0.95)
            net = direction_net(d, 512 if d == 2 else 3)
            cone = cone_halfspaces(narrow, d)
            poly = _intersect_halfspaces(np.vstack([net, cone]),
                                         np.r_[shape.model(net), np.zeros(len(cone))])
            if d == 2:
                # rotate inside the wider cone
                rot = rng.uniform(-(theta - narrow) / 2, (theta - narrow) / 2)
                R = np.array([[math.cos(rot), -math.sin(rot)], [math.sin(rot), math.cos(rot)]])
                poly = Polytope.from_points(poly.vertices @ R.T)
        poly = poly.scaled((target / poly.volume) ** (1.0 / d))
        out.append(poly)
    return out


def _random_cone_points(rng, theta, d, m):
    pts = rng.normal(size=(m, d))
    if theta >= TWO_PI:
        return pts
    half = theta / 2
    if d == 2:
        ang = rng.uniform(-half, half, m)
        r = rng.uniform(0, 1, m)
        pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
        k = int(rng.integers(0, 3))
        extra = [np.zeros(2)]
        if k >= 1:
            extra.append(rng.uniform(0.2, 1) * np.array([math.cos(half), math.sin(half)]))
        if k >= 2:
            extra.append(rng.uniform(0.2, 1) * np.array([math.cos(half), -math.sin(half)]))
        return np.vstack([pts, extra])
    # d = 3: sample directions inside the cone by rejection
    keep = []
    while len(keep) < m:
        v = rng.normal(size=d)
        v /= np.linalg.norm(v)
        if v[0] >= math.cos(half):
            keep.append(v * rng.uniform(0, 1))
    return np.vstack([np.array(keep), np.zeros((1, d))])


# ---------------------------------------------------------------------------
# energetics


@dataclass(frozen=True)
class DropletEnergetics:
    F1: float
    m_star: float
    beta: float
    d: int
    theta: float
    B_c: float
    B_root: float
    E_c: float
    diameter: float = float("nan")
    C_dil: float = 0.0

    def energy(self, b):
        return energy(b, self.F1, self.beta * self.m_star, self.d)


def energy(b, F1, bm, d):
    b = np.asarray(b, dtype=float)
    return b ** (d - 1) * F1 - b ** d * bm


def unit_surface(model, theta):
    return surface_functional(wulff_shape(model, theta, 1.0))


def energy_curve(model, theta, beta, m_star, b_grid=None):
    """Pairs ``(b, E^theta(b))``; default grid is 512 points on [0, 2 B_root]."""
    if m_star <= 0:
        raise InvalidParameter("m_star must be positive")
    F1 = unit_surface(model, theta)
    d = model.d
    if b_grid is None:
        b_grid = np.linspace(0.0, 2.0 * F1 / (beta * m_star), 512)
    b_grid = np.asarray(b_grid, dtype=float)
    if np.any(np.diff(b_grid) < 0) or np.any(b_grid < 0):
        raise InvalidParameter("b grid must be sorted and nonnegative")
    return np.column_stack([b_grid, energy(b_grid, F1, beta * m_star, d)])


def critical_from_F1(F1, beta, m_star, d):
    if m_star <= 0:
        raise InvalidParameter("m_star must be positive")
    bm = beta * m_star
    B_c = (d - 1) / d * F1 / bm
    B_root = F1 / bm
    E_c = (F1 / d) ** d * ((d - 1) / bm) ** (d - 1)
    return B_c, B_root, E_c


def critical_values(model, theta, beta, m_star):
    shape = wulff_shape(model, theta, 1.0)
    F1 = surface_functional(shape)
    B_c, B_root, E_c = critical_from_F1(F1, beta, m_star, model.d)
    return DropletEnergetics(F1, float(m_star), float(beta), model.d, float(theta),
                             B_c, B_root, E_c, shape.with_b(B_c).diameter())


def lambda2(theta, E_c, C_dil, d):
    """Relaxation exponent ``(E_c + C_dil / theta) / (d + 1)``."""
    if theta <= 0:
        raise InvalidParameter("theta must be positive")
    if C_dil < 0:
        raise InvalidParameter("C_dil must be nonnegative")
    if C_dil == 0:
        return E_c / (d + 1)
    return (E_c + C_dil / theta) / (d + 1)


def estimate_C_dil(carved_count, p, scales, theta=None, b_max=None, d=2):
    """``h^{d-1} * carved_count * log(1/(1-p))``; ``inf`` when p = 1 and edges are carved.

    ``theta`` and ``b_max`` are accepted for bookkeeping only; the estimate
    uses the measured carved count.
    """
    if carved_count == 0:
        return 0.0
    if p >= 1.0:
        return math.inf
    return scales.h ** (d - 1) * carved_count * math.log(1.0 / (1.0 - p))


def b_max_for(model, theta, beta, m_star, factor=1.01, net_size=512):
    """Least ``b`` such that a translate of ``W_2pi(factor * B_c^2pi)`` fits in ``W_theta(b)``."""
    B_c = critical_from_F1(unit_surface(model, TWO_PI), beta, m_star, model.d)[0]
    disk = wulff_shape(model, TWO_PI, factor * B_c).polytope
    target = wulff_shape(model, theta, 1.0, net_size=net_size).unit
    d = model.d
    # a_k . (v + t) <= b c_k for all vertices v  <=>  a_k . t - b c_k <= -h_disk(a_k)
    A = np.c_[target.normals, -target.offsets]
    rhs = -disk.support(target.normals)
    res = linprog(np.r_[np.zeros(d), 1.0], A_ub=A, b_ub=rhs,
                  bounds=[(None, None)] * d + [(0, None)], method="highs")
    if not res.success:
        raise InvalidParameter("could not fit the full-space droplet in the cone")
    return float(res.x[-1]), res.x[:d]


def lateral_l1_area(model, theta, b, net_size=512):
    """``∫ ||n||_1 dH^{d-1}`` over the free facets of ``W_theta(b)``.

    Counts, per unit area, the lattice edges crossing the lateral boundary.
    """
    poly = wulff_shape(model, theta, 1.0, net_size=net_size).unit.scaled(b)
    scale = np.abs(poly.vertices).max()
    free = is_free_facet(poly.normals, poly.offsets / scale, theta)
    return float(np.sum(np.abs(poly.normals[free]).sum(axis=1) * poly.areas[free]))


def geometric_C_dil(model, theta, beta, m_star, p):
    """Catalyst cost coefficient from the carved lateral surface of ``W_theta(B_max)``."""
    if p >= 1.0:
        return math.inf
    b_max, _ = b_max_for(model, theta, beta, m_star)
    return theta * math.log(1.0 / (1.0 - p)) * lateral_l1_area(model, theta, b_max)


@dataclass(frozen=True)
class ThetaOptimum:
    theta: float
    lambda2: float
    lambda2_full: float
    ratio: float
    table: np.ndarray  # columns theta, E_c, C_dil, lambda2
    slope: float  # regression slope of log E_c against log theta


def optimize_theta(model, beta, m_star, p, d=None, theta_grid=None, C_dil=None):
    """Grid minimiser of ``lambda2`` over cone angles.

    ``C_dil`` may be a number or ``None`` (geometric estimate per angle).
    """
    d = model.d if d is None else d
    if theta_grid is None or len(theta_grid) == 0:
        raise InvalidParameter("theta grid is empty")
    grid = np.asarray(theta_grid, dtype=float)
    if np.any(grid <= 0) or np.any(grid >= math.pi + 1e-12):
        raise InvalidParameter("theta grid must lie in (0, pi)")
    rows = []
    for th in grid:
        E_c = critical_values(model, th, beta, m_star).E_c
        cd = geometric_C_dil(model, th, beta, m_star, p) if C_dil is None else float(C_dil)
        rows.append((th, E_c, cd, lambda2(th, E_c, cd, d)))
    table = np.array(rows)
    k = int(np.argmin(table[:, 3]))
    full = lambda2(TWO_PI, critical_values(model, TWO_PI, beta, m_star).E_c, 0.0, d)
    if len(grid) > 1:
        slope = float(np.polyfit(np.log(table[:, 0]), np.log(table[:, 1]), 1)[0])
    else:
        slope = float("nan")
    return ThetaOptimum(float(table[k, 0]), float(table[k, 3]), full,
                        float(table[k, 3] / full), table, slope)


# ---------------------------------------------------------------------------
# spontaneous magnetisation


def onsager_magnetization(beta):
    """Square-lattice spontaneous magnetisation for ``beta * sum 1{sx != sy}``.

    The energy per disagreeing bond is 1, i.e. standard coupling ``beta / 2``.
    """
    k = beta / 2.0
    s = math.sinh(2 * k)
    if s <= 1.0:
        return 0.0
    return (1.0 - s ** -4) ** 0.125


def onsager_surface_tension(beta):
    """Axis surface tension times beta for the square lattice (same convention).

    Zero at and above the critical temperature.
    """
    k = beta / 2.0
    if math.sinh(2 * k) <= 1.0:
        return 0.0
    return 2.0 * k + math.log(math.tanh(k))


def default_model(beta, d=2):
    """Isotropic tension at the square-lattice axis value (positive below criticality)."""
    t = onsager_surface_tension(beta)
    if t <= 0:
        raise InvalidParameter("no surface tension at or above the critical temperature")
    return SurfaceTensionModel.isotropic(t / beta, d, beta)


@dataclass(frozen=True)
class MStarEstimate:
    value: float
    stderr: float
    samples: int
    converged: bool


def estimate_m_star(env, beta, h_small=0.0, sampler="cftp", samples=400, seed=0,
                    site=None, max_window=2.0 ** 16):
    """Mean of the spin at ``site`` (default: centre) under plus boundary conditions.

    ``sampler`` is ``"cftp"`` for perfect samples or a callable
    ``(env, beta, h, seed) -> spins`` returning a flat ambient spin array.
    Samples are independent, so the standard error is the plain one; the
    estimate is flagged unconverged when any CFTP run times out.
    """
    from .errors import CFTPTimeout
    from .gibbs import GibbsSpec
    from .lattice import BoundaryCondition
    from . import glauber, rng

    region = env.region
    if site is None:
        coords = region.coords()
        centre = np.round(coords.mean(axis=0)).astype(np.int64)
        site = coords[np.argmin(np.abs(coords - centre).sum(axis=1))]
    flat = int(np.ravel_multi_index(tuple(region.to_index(site)), region.shape))
    spec = GibbsSpec(env, beta, h_small, BoundaryCondition.plus(region))
    vals = np.empty(samples)
    converged = True
    for s in range(samples):
        sd = rng.derive_seed(seed, s)
        if sampler == "cftp":
            try:
                spins = glauber.cftp_sample(spec, sd, max_window=max_window).flat()
            except CFTPTimeout:
                converged = False
                vals = vals[:s]
                break
        else:
            spins = np.asarray(sampler(env, beta, h_small, sd)).reshape(-1)
        vals[s] = spins[flat]
    n = len(vals)
    if n == 0:
        return MStarEstimate(float("nan"), float("nan"), 0, False)
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return MStarEstimate(float(vals.mean()), se, n, converged)
