"""Heat-bath Glauber dynamics through the graphical construction.

Every vertex carries a rate-one Poisson clock with uniform marks, generated
lazily from ``(seed, vertex coordinates, unit time cell)``. At a ring with
mark ``U`` the spin becomes +1 iff ``U > 1 - q`` where ``q`` is the
conditional probability of +1. All trajectories driven by the same seed are
coupled, which makes the dynamics monotone in the initial state, the
boundary condition and the field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng
from .errors import CFTPTimeout, InvalidParameter, InvariantViolation
from .gibbs import GibbsSpec, SpinConfig, exact_generator_gap, site_index
from .lattice import LatticeRegion

RULES = {"heat-bath": _kernels.HEAT_BATH, "metropolis": _kernels.METROPOLIS}


def _rule(rule):
    try:
        return RULES[rule]
    except KeyError:
        raise InvalidParameter(f"unknown update rule {rule!r}") from None


def _vertex_ids(region):
    return _kernels.vertex_ids(region.ambient_coords().astype(np.int64), 0)


def _check_spec(spec):
    if spec.boundary.wired is not None:
        raise InvalidParameter("wired boundaries are only supported by the exact oracle")


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class GraphicalNoise:
    """Read-only view of the Poisson clocks and marks for one seed."""

    seed: int

    def vertex_events(self, coords, t_a, t_b):
        """``(times, marks)`` of the vertex at absolute ``coords`` in ``[t_a, t_b)``."""
        vid = _kernels.vertex_ids(np.asarray(coords, dtype=np.int64).reshape(1, -1), 0)[0]
        ts = np.empty(_kernels.MAX_EVENTS)
        ms = np.empty(_kernels.MAX_EVENTS)
        times, marks = [], []
        for cell in range(math.floor(t_a), math.ceil(t_b)):
            k = _kernels.vertex_events(np.int64(self.seed), vid, cell, ts, ms)
            sel = (ts[:k] >= t_a) & (ts[:k] < t_b)
            times.append(ts[:k][sel].copy())
            marks.append(ms[:k][sel].copy())
        if not times:
            return np.empty(0), np.empty(0)
        return np.concatenate(times), np.concatenate(marks)

    def events(self, region, t_a, t_b, mask=None):
        """All events of ``region`` (or ``mask``) in ``[t_a, t_b)`` as time-sorted
        arrays ``(times, flat ambient index, marks)``."""
        mask = region.mask if mask is None else np.asarray(mask, dtype=bool)
        flat = np.flatnonzero(mask.reshape(-1))
        coords = region.ambient_coords()[flat]
        T, X, U = [], [], []
        for x, c in zip(flat, coords):
            t, u = self.vertex_events(c, t_a, t_b)
            T.append(t)
            U.append(u)
            X.append(np.full(len(t), x, dtype=np.int64))
        if not T:
            return np.empty(0), np.empty(0, dtype=np.int64), np.empty(0)
        T, X, U = np.concatenate(T), np.concatenate(X), np.concatenate(U)
        order = np.argsort(T, kind="stable")
        return T[order], X[order], U[order]


def heat_bath_prob(x, sigma, spec):
    """Conditional probability that the spin at ``x`` is +1 given the rest.

    ``x`` is a flat ambient index or a coordinate tuple relative to the
    ambient box. ``sigma`` is a SpinConfig or a flat ambient spin array.
    """
    region = spec.region
    if isinstance(x, (tuple, list, np.ndarray)):
        x = int(np.ravel_multi_index(tuple(x), region.shape))
    s = sigma.flat() if isinstance(sigma, SpinConfig) else np.asarray(sigma).reshape(-1)
    nbr = region.neighbor_table()
    jtab = spec.env.coupling_table()
    f = 0.0
    for k in range(nbr.shape[1]):
        y = nbr[x, k]
        if y >= 0:
            f += float(jtab[x, k]) * float(s[y])
    return 1.0 / (1.0 + math.exp(-spec.beta * (f + spec.h)))


# ---------------------------------------------------------------------------
# space-time regions


@dataclass(frozen=True, eq=False)
class SpaceTimeRegion:
    """Slabs ``masks[i]`` active during ``[times[i], times[i+1])`` in a common ambient box."""

    ambient: LatticeRegion
    masks: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=bool)
        times = np.asarray(self.times, dtype=float)
        if masks.ndim != self.ambient.d + 1 or masks.shape[1:] != self.ambient.shape:
            raise InvalidParameter("slab masks must live in the ambient box")
        if len(times) != len(masks) + 1:
            raise InvalidParameter("need one more time than slabs")
        if np.any(np.diff(times) <= 0):
            raise InvalidParameter("slab times must be strictly increasing")
        masks.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "times", times)

    @classmethod
    def static(cls, region, t0, t1):
        return cls(region, region.mask[None], np.array([t0, t1], dtype=float))

    @classmethod
    def from_regions(cls, regions, times):
        amb = regions[0]
        for r in regions[1:]:
            if r.shape != amb.shape or r.origin != amb.origin:
                raise InvalidParameter("all slabs must share one ambient box")
        return cls(amb, np.stack([r.mask for r in regions]), times)

    @classmethod
    def pyramid(cls, ambient, center, radii, times):
        """L-infinity balls of the given radii around ``center`` (absolute coordinates).

        Increasing radii give an inverted pyramid that widens with time.
        """
        c = ambient.ambient_coords() - np.asarray(center)
        dist = np.abs(c).max(axis=1).reshape(ambient.shape)
        masks = [(dist <= r) & ambient.mask for r in radii]
        return cls(ambient, np.stack(masks), times)

    @classmethod
    def parallelepiped(cls, ambient, lo, hi, shift, times):
        """A box ``[lo, hi]`` translated by ``i * shift`` in slab ``i``."""
        c = ambient.ambient_coords()
        lo, hi, shift = (np.asarray(a) for a in (lo, hi, shift))
        masks = []
        for i in range(len(times) - 1):
            m = np.all((c >= lo + i * shift) & (c <= hi + i * shift), axis=1)
            masks.append(m.reshape(ambient.shape) & ambient.mask)
        return cls(ambient, np.stack(masks), times)

    @property
    def n_slabs(self):
        return len(self.masks)

    def slab(self, i):
        return LatticeRegion(self.masks[i], self.ambient.origin)

    def slab_at(self, t):
        """Index of the slab active at time ``t`` (the last one at the final time)."""
        if not (self.times[0] <= t <= self.times[-1]):
            raise InvalidParameter(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        return min(int(np.searchsorted(self.times, t, side="right")) - 1, self.n_slabs - 1)

    def restricted(self, t0, t1):
        """The same region cut to ``[t0, t1]``."""
        i0, i1 = self.slab_at(t0), self.slab_at(np.nextafter(t1, -np.inf))
        times = np.r_[t0, self.times[i0 + 1:i1 + 1], t1]
        return SpaceTimeRegion(self.ambient, self.masks[i0:i1 + 1], times)


# ---------------------------------------------------------------------------
# trajectories


@dataclass(eq=False)
class Trajectory:
    """Result of one run. ``snapshots`` holds ``(t, spins)`` pairs (right-continuous)."""

    initial: SpinConfig
    final: SpinConfig
    t_start: float
    t_end: float
    events: int
    snapshots: list = field(default_factory=list)
    hit_time: float = math.nan


@dataclass(eq=False)
class ReplicaRun:
    """Raw output of the shared-noise engine for ``R`` replicas."""

    spins: np.ndarray
    final_mask: np.ndarray
    t_reached: float
    hit: np.ndarray
    events: int
    violations: int
    snapshots: list


def _start_spins(start, mask, zeta, shape):
    s = np.asarray(zeta, dtype=np.int8).reshape(-1).copy()
    m = mask.reshape(-1)
    if isinstance(start, SpinConfig):
        start = start.flat()
    if np.isscalar(start) or np.ndim(start) == 0:
        if int(start) not in (-1, 1):
            raise InvalidParameter("constant start must be +1 or -1")
        s[m] = int(start)
    else:
        st = np.asarray(start, dtype=np.int8).reshape(-1)
        if st.shape[0] != s.shape[0]:
            raise InvalidParameter("start configuration must cover the ambient box")
        if np.any(np.abs(st[m]) != 1):
            raise InvalidParameter("start configuration must be +/-1 on the active slab")
        s[m] = st[m]
    return s


def run_replicas(st, specs, starts, s, t_end, seed, rule="heat-bath", predicate=None,
                 thresholds=None, pairs=None, stop_all=False, snapshot_times=()):
    """Shared-noise engine behind every dynamic routine.

    Replica ``r`` uses ``specs[r]`` (couplings, beta, h, boundary ``zeta``) on the
    space-time region ``st`` starting from ``starts[r]`` at time ``s``.
    ``predicate`` is a flat weight vector ``w``; replica ``r`` is hit at the first
    time with ``w . sigma >= thresholds[r]``.
    """
    if not isinstance(st, SpaceTimeRegion):
        st = SpaceTimeRegion.static(st, s, t_end)
    if not (st.times[0] <= s <= t_end <= st.times[-1]):
        raise InvalidParameter("start and end must lie inside the region's time span")
    R = len(specs)
    amb = st.ambient
    for sp in specs:
        _check_spec(sp)
        if sp.region.shape != amb.shape or sp.region.origin != amb.origin:
            raise InvalidParameter("spec and space-time region use different ambient boxes")
    n_amb = amb.n_ambient
    zetas = np.stack([sp.boundary.values.reshape(-1).astype(np.int8) for sp in specs])
    masks = st.masks.reshape(st.n_slabs, -1)
    for i in range(1, st.n_slabs):
        entering = masks[i] & ~masks[i - 1]
        if np.any(zetas[:, entering] == 0):
            raise InvalidParameter("vertices entering a slab need a +/-1 boundary value")
    i = st.slab_at(s)
    spins = np.stack([_start_spins(starts[r], st.masks[i], zetas[r], amb.shape) for r in range(R)])
    nbr = amb.neighbor_table()
    jtab = np.stack([sp.env.coupling_table().astype(float) for sp in specs])
    beta = np.array([sp.beta for sp in specs], dtype=float)
    h = np.array([sp.h for sp in specs], dtype=float)
    vid = _vertex_ids(amb)
    pw = np.zeros(n_amb) if predicate is None else np.asarray(predicate, float).reshape(-1)
    pc = np.full(R, np.inf) if thresholds is None else np.broadcast_to(
        np.asarray(thresholds, float), (R,)).copy()
    prs = np.zeros((0, 2), np.int64) if pairs is None else np.asarray(pairs, np.int64).reshape(-1, 2)
    stats = np.zeros(2, dtype=np.int64)
    psum = spins.astype(float) @ pw
    hit = np.where(psum >= pc, float(s), np.nan)
    code = _rule(rule)
    snaps = sorted(float(x) for x in snapshot_times if s <= x <= t_end)
    snapshots = []
    t = float(s)
    while snaps and snaps[0] == t:
        snapshots.append((t, spins.copy()))
        snaps.pop(0)
    seed = np.int64(seed)
    while t < t_end:
        nxt_tr = st.times[i + 1] if i + 1 < st.n_slabs else np.inf
        nxt = min(t_end, nxt_tr, snaps[0] if snaps else np.inf)
        sites = np.flatnonzero(masks[i]).astype(np.int64)
        reached = _kernels.advance(spins, sites, nbr, jtab, beta, h, vid, seed, t, nxt, code,
                                   pw, pc, psum, hit, prs, stats, stop_all)
        if stop_all and not np.isnan(hit).any():
            t = reached
            break
        t = nxt
        if t == nxt_tr and t < t_end:
            # transitions precede any event at the same instant
            changed = masks[i] ^ masks[i + 1]
            spins[:, changed] = zetas[:, changed]
            i += 1
            psum = spins.astype(float) @ pw
            newly = np.isnan(hit) & (psum >= pc)
            hit[newly] = t
        while snaps and snaps[0] <= t:
            snapshots.append((snaps.pop(0), spins.copy()))
    return ReplicaRun(spins, masks[i].reshape(amb.shape), float(t), hit,
                      int(stats[0]), int(stats[1]), snapshots)


def run(region, spec, start=-1, s=None, t_end=1.0, seed=0, snapshot_times=(), rule="heat-bath"):
    """Single trajectory on a static or space-time region.

    ``start`` is +1/-1 (constant on the active slab), a flat ambient array or
    a SpinConfig; ``s`` defaults to the region's first time (0 for static regions).
    """
    if region is None:
        region = spec.region
    if isinstance(region, SpaceTimeRegion):
        st = region
        s = st.times[0] if s is None else s
        if t_end is None:
            t_end = st.times[-1]
    else:
        s = 0.0 if s is None else s
        st = SpaceTimeRegion.static(region, s, t_end)
    out = run_replicas(st, [spec], [start], s, t_end, seed, rule=rule, snapshot_times=snapshot_times)
    i0 = st.slab_at(s)
    init = _start_spins(start, st.masks[i0], spec.boundary.values, st.ambient.shape)
    init_cfg = SpinConfig(st.slab(i0), init, spec.boundary)
    final_cfg = SpinConfig(LatticeRegion(out.final_mask, st.ambient.origin), out.spins[0], spec.boundary)
    snaps = [(t, sp[0].reshape(st.ambient.shape)) for t, sp in out.snapshots]
    return Trajectory(init_cfg, final_cfg, float(s), float(t_end), out.events, snaps)


def replay_direct(region, spec, start, t_a, t_b, seed, rule="heat-bath"):
    """Slow reference: apply the noise events one by one in Python (static regions)."""
    s = _start_spins(start, region.mask, spec.boundary.values, region.shape).astype(np.int64)
    T, X, U = GraphicalNoise(seed).events(region, t_a, t_b)
    nbr = region.neighbor_table()
    jtab = spec.env.coupling_table()
    for x, u in zip(X, U):
        f = sum(float(jtab[x, k]) * s[nbr[x, k]] for k in range(nbr.shape[1]) if nbr[x, k] >= 0)
        if rule == "heat-bath":
            q = 1.0 / (1.0 + math.exp(-spec.beta * (f + spec.h)))
            s[x] = 1 if u > 1.0 - q else -1
        else:
            dH = s[x] * (f + spec.h)
            if dH <= 0 or u < math.exp(-spec.beta * dH):
                s[x] = -s[x]
    return s.astype(np.int8), len(T)


def monotone_couple(xi_low, xi_high, spec_low, spec_high, t_end, seed, region=None, s=0.0,
                    rule="heat-bath"):
    """Run two ordered systems with shared noise; any ordering violation raises.

    Requires ``xi_low <= xi_high``, ``zeta_low <= zeta_high`` and ``h_low <= h_high``
    with identical couplings and temperature.
    """
    st = region if region is not None else spec_low.region
    amb = st.ambient if isinstance(st, SpaceTimeRegion) else st
    if isinstance(st, SpaceTimeRegion):
        mask = st.masks[st.slab_at(s)]
    else:
        mask = st.mask
    lo = _start_spins(xi_low, mask, spec_low.boundary.values, amb.shape)
    hi = _start_spins(xi_high, mask, spec_high.boundary.values, amb.shape)
    if np.any(lo > hi):
        raise InvalidParameter("initial states are not ordered")
    if np.any(spec_low.boundary.values > spec_high.boundary.values):
        raise InvalidParameter("boundary conditions are not ordered")
    if spec_low.h > spec_high.h or spec_low.beta != spec_high.beta:
        raise InvalidParameter("need h_low <= h_high at a common beta")
    if not np.array_equal(spec_low.env.J, spec_high.env.J):
        raise InvalidParameter("coupled systems must share the environment")
    out = run_replicas(st, [spec_low, spec_high], [lo, hi], s, t_end, seed, rule=rule, pairs=[(0, 1)])
    if out.violations:
        raise InvariantViolation(f"{out.violations} ordering violations in the monotone coupling")
    region = LatticeRegion(out.final_mask, amb.origin)
    a = SpinConfig(region, out.spins[0], spec_low.boundary)
    b = SpinConfig(region, out.spins[1], spec_high.boundary)
    return a, b, out


# ---------------------------------------------------------------------------
# coupling from the past


def _cftp_arrays(spec, sites=None, ext=None):
    _check_spec(spec)
    region = spec.region
    s = site_index(region).astype(np.int64) if sites is None else np.asarray(sites, np.int64)
    e = spec.boundary.values.reshape(-1).astype(np.int8) if ext is None else ext
    return s, region.neighbor_table(), spec.env.coupling_table().astype(float), _vertex_ids(region), e


def cftp_sample(spec, seed, max_window=2.0 ** 16):
    """Perfect sample of the Gibbs measure by monotone coupling from the past."""
    sites, nbr, jtab, vid, ext = _cftp_arrays(spec)
    out = np.empty(spec.region.n_ambient, dtype=np.int8)
    cseed = np.int64(rng.derive_seed(seed, rng.TAG_CFTP))
    T = _kernels.cftp_once(cseed, sites, nbr, jtab, float(spec.beta), float(spec.h), vid, ext,
                           float(max_window), out)
    if T < 0:
        raise CFTPTimeout(f"no coalescence by window {-T}",
                          {"window": -T, "uncoalesced_sites": int(out[0]), "sites": len(sites)})
    cfg = SpinConfig(spec.region, out.reshape(spec.region.shape), spec.boundary)
    cfg.window = T
    return cfg


def cftp_histogram(spec, count, seed, max_window=2.0 ** 16):
    """Counts of all ``2^n`` configurations (bit ``k`` = site ``k`` is +1) over ``count`` samples."""
    sites, nbr, jtab, vid, ext = _cftp_arrays(spec)
    if len(sites) > 24:
        raise InvalidParameter("histograms are limited to 24 sites")
    hist = np.zeros(1 << len(sites), dtype=np.int64)
    done, T = _kernels.cftp_histogram(np.int64(rng.derive_seed(seed, rng.TAG_CFTP)), count, sites,
                                      nbr, jtab, float(spec.beta), float(spec.h), vid, ext,
                                      float(max_window), hist)
    if done < count:
        raise CFTPTimeout(f"sample {done} did not coalesce by window {T}", {"window": T, "done": done})
    return hist


# ---------------------------------------------------------------------------
# block dynamics


def annulus_blocks(region, gauge, edges, overlap):
    """Overlapping shells ``{edges[j] - overlap <= gauge < edges[j+1] + overlap}``.

    ``gauge`` holds one value per ambient vertex (inf allowed); the last shell
    is open-ended so the blocks always cover the region.
    """
    g = np.asarray(gauge, float).reshape(region.shape)
    edges = list(edges)
    blocks = []
    for j in range(len(edges)):
        lo = edges[j] - overlap if j > 0 else -np.inf
        hi = edges[j + 1] + overlap if j + 1 < len(edges) else np.inf
        m = region.mask & (g >= lo) & (g < hi)
        if m.any():
            blocks.append(m)
    return blocks


def wulff_annuli(region, shape, scales, n_shells, overlap=None, anchor=None):
    """Annuli of a Wulff shape ``W`` (a ShapeSpec): level sets of the gauge of ``W``."""
    anchor = np.zeros(region.d) if anchor is None else np.asarray(anchor, float)
    pts = (region.ambient_coords() - anchor) / scales.N
    g = shape.polytope.gauge(pts)
    edges = np.linspace(0.0, 1.0, n_shells + 1)[:-1]
    if overlap is None:
        overlap = 0.5 / n_shells
    return annulus_blocks(region, g, edges, overlap)


def block_dynamics(spec, blocks, t_end, seed, start=-1, max_window=2.0 ** 16, snapshot_times=()):
    """Continuous-time block dynamics: each block is resampled at rate one from
    its Gibbs conditional (exterior = current spins) by nested CFTP."""
    region = spec.region
    masks = [np.asarray(b, dtype=bool).reshape(region.shape) for b in blocks]
    union = np.zeros(region.shape, dtype=bool)
    for m in masks:
        if np.any(m & ~region.mask):
            raise InvalidParameter("blocks must lie inside the region")
        union |= m
    if not np.array_equal(union, region.mask):
        raise InvalidParameter("blocks must cover the region")
    sites, nbr, jtab, vid, _ = _cftp_arrays(spec)
    spins = _start_spins(start, region.mask, spec.boundary.values, region.shape)
    init = SpinConfig(region, spins.copy(), spec.boundary)
    bsites = [np.flatnonzero(m.reshape(-1)).astype(np.int64) for m in masks]
    gen = np.random.default_rng(rng.derive_seed(seed, rng.TAG_BLOCK))
    nb = len(masks)
    t = 0.0
    k = 0
    snaps = sorted(snapshot_times)
    snapshots = []
    out = np.empty(region.n_ambient, dtype=np.int8)
    while True:
        t += gen.exponential(1.0 / nb)
        while snaps and snaps[0] < min(t, t_end):
            snapshots.append((snaps.pop(0), spins.reshape(region.shape).copy()))
        if t >= t_end:
            break
        j = int(gen.integers(nb))
        cseed = np.int64(rng.derive_seed(seed, rng.TAG_BLOCK, k))
        T = _kernels.cftp_once(cseed, bsites[j], nbr, jtab, float(spec.beta), float(spec.h), vid,
                               spins, float(max_window), out)
        if T < 0:
            raise CFTPTimeout(f"block {j} did not coalesce by window {-T}",
                              {"block": j, "window": -T, "update": k})
        spins[bsites[j]] = out[bsites[j]]
        k += 1
    final = SpinConfig(region, spins.reshape(region.shape), spec.boundary)
    return Trajectory(init, final, 0.0, float(t_end), k, snapshots)


# ---------------------------------------------------------------------------
# relaxation rate


@dataclass(frozen=True)
class GapEstimate:
    value: float
    stderr: float
    tau_int: float
    flagged: bool
    method: str
    window: int = 0


def _tau_int(series, dt, c=6.0):
    """Integrated autocorrelation time with Sokal's automatic window (pooled over rows)."""
    x = series - series.mean()
    n = x.shape[1]
    var = np.mean(x * x)
    if var <= 0:
        return math.nan, 0
    tau = 0.5 * dt
    for M in range(1, n // 2):
        rho = np.mean(x[:, :-M] * x[:, M:]) / var
        tau += dt * rho
        if M * dt >= c * tau:
            return tau, M
    return tau, n // 2


def gap_estimate(spec, budget=2000.0, chains=8, dt=0.25, seed=0, method="mc"):
    """Relaxation rate ``1 / tau_int`` of the total magnetisation.

    Chains start from CFTP samples; the error bar is a jackknife over chains.
    ``method="exact"`` (or ``"auto"`` on at most 12 sites) uses the generator.
    """
    n = spec.region.n_vertices
    if method == "exact" or (method == "auto" and n <= 12):
        res = exact_generator_gap(spec)
        return GapEstimate(res.gap, 0.0, 1.0 / res.gap, False, "exact")
    if chains < 2:
        raise InvalidParameter("need at least two chains for error bars")
    steps = int(budget / (chains * dt))
    if steps < 20:
        raise InvalidParameter("budget too small for the requested dt and chains")
    sites, nbr, jtab, vid, _ = _cftp_arrays(spec)
    obs = np.zeros(spec.region.n_ambient)
    obs[sites] = 1.0
    series = np.empty((chains, steps + 1))
    for c in range(chains):
        cfg = cftp_sample(spec, rng.derive_seed(seed, c, 1))
        sp = cfg.flat().copy()[None]
        series[c] = _kernels.observe_series(sp, sites, nbr, jtab[None], np.array([spec.beta]),
                                            np.array([spec.h]), vid,
                                            np.int64(rng.derive_seed(seed, c, 2)), 0.0, dt, steps, obs)
    tau, M = _tau_int(series, dt)
    jack = np.array([_tau_int(np.delete(series, c, axis=0), dt)[0] for c in range(chains)])
    g = 1.0 / tau
    gj = 1.0 / jack
    se = math.sqrt((chains - 1) / chains * np.sum((gj - gj.mean()) ** 2))
    flagged = bool(steps * dt < 50 * tau or not np.isfinite(se) or se > 0.25 * g)
    return GapEstimate(g, se, tau, flagged, "mc", M)


# ---------------------------------------------------------------------------
# hitting times


@dataclass(frozen=True, eq=False)
class LinearPredicate:
    """Increasing event ``sum_x w_x sigma_x >= threshold`` (``w >= 0``)."""

    weights: np.ndarray
    threshold: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if np.any(w < 0):
            raise InvalidParameter("stop predicates must be increasing (nonnegative weights)")
        object.__setattr__(self, "weights", w)

    def holds(self, spins):
        return float(np.asarray(spins, float).reshape(-1) @ self.weights) >= self.threshold

    @classmethod
    def plus_fraction(cls, region, window_mask, frac=0.5):
        """At least ``frac`` of the window's spins are +1."""
        w = np.asarray(window_mask, dtype=bool).reshape(-1).astype(float)
        size = w.sum()
        if size == 0:
            raise InvalidParameter("empty observation window")
        return cls(w, (2 * frac - 1) * size)


@dataclass(frozen=True)
class HitResult:
    time: float
    censored: bool


def hitting_time(spec, predicate, seed, t_cap, start=-1, region=None, rule="heat-bath"):
    """First time the increasing ``predicate`` holds, censored at ``t_cap``."""
    res = hitting_times([spec], predicate, seed, t_cap, starts=[start], region=region, rule=rule)
    return res[0]


def hitting_times(specs, predicate, seed, t_cap, starts=None, region=None, rule="heat-bath",
                  thresholds=None):
    """Hitting times of several replicas driven by one noise realisation."""
    R = len(specs)
    starts = [-1] * R if starts is None else starts
    st = region if region is not None else specs[0].region
    thr = predicate.threshold if thresholds is None else thresholds
    if t_cap <= 0:
        # no time to run: only the starting state can satisfy the predicate
        amb = st.ambient if isinstance(st, SpaceTimeRegion) else st
        mask = st.masks[0] if isinstance(st, SpaceTimeRegion) else st.mask
        thr = np.broadcast_to(np.asarray(thr, float), (R,))
        out = []
        for x, sp, c in zip(starts, specs, thr):
            s = _start_spins(x, mask, sp.boundary.values, amb.shape).astype(float)
            out.append(HitResult(0.0, bool(s @ predicate.weights < c)))
        return out
    out = run_replicas(st, specs, starts, 0.0, float(t_cap), seed, rule=rule,
                       predicate=predicate.weights, thresholds=thr, stop_all=True)
    return [HitResult(float(t_cap), True) if np.isnan(t) else HitResult(float(t), False)
            for t in out.hit]


# ---------------------------------------------------------------------------
# concatenation of space-time regions


@dataclass(frozen=True)
class ConcatenationReport:
    hypothesis_gamma: bool
    hypothesis_delta: bool
    conclusion: bool

    @property
    def applies(self):
        return self.hypothesis_gamma and self.hypothesis_delta

    @property
    def ok(self):
        return (not self.applies) or self.conclusion


def concatenate(gamma, delta):
    """The region with slabs of ``gamma`` except its last, then all of ``delta``."""
    if not np.array_equal(gamma.masks[-1], delta.masks[0]):
        raise InvalidParameter("last slab of the first region must equal the first of the second")
    if gamma.times[-2] != delta.times[0] or gamma.times[-1] != delta.times[1]:
        raise InvalidParameter("the shared slab must have matching times")
    masks = np.concatenate([gamma.masks[:-1], delta.masks])
    times = np.r_[gamma.times[:-1], delta.times[1:]]
    return SpaceTimeRegion(gamma.ambient, masks, times)


def concatenation_check(gamma, delta, spec, xi, seed, rule="heat-bath"):
    """Replay the concatenation rule for space-time regions on one noise realisation."""
    t0, tm, tm1 = gamma.times[0], gamma.times[-2], gamma.times[-1]
    u_n, u_end = delta.times[-2], delta.times[-1]

    def final(st, start, s, t):
        return run_replicas(st, [spec], [start], s, t, seed, rule=rule).spins[0]

    both = concatenate(gamma, delta)
    hyp_g = np.array_equal(final(gamma, xi, t0, tm1), final(gamma, 1, tm, tm1))
    d_plus = final(delta, 1, delta.times[0], u_end)
    d_late = final(delta, 1, u_n, u_end)
    hyp_d = np.array_equal(d_plus, d_late)
    concl = np.array_equal(final(both, xi, t0, u_end), d_late)
    report = ConcatenationReport(bool(hyp_g), bool(hyp_d), bool(concl))
    if not report.ok:
        raise InvariantViolation("concatenation rule failed on replayed noise")
    return report


class Stepper:
    """Incremental shared-noise runner on a static region.

    Keeps the kernel arrays so that observation loops can advance in small
    steps; the noise is keyed on absolute time, so any step pattern gives the
    same trajectory.
    """

    def __init__(self, specs, starts, seed, t0=0.0, rule="heat-bath"):
        if isinstance(specs, GibbsSpec):
            specs, starts = [specs], [starts]
        region = specs[0].region
        for sp in specs:
            _check_spec(sp)
            if sp.region.shape != region.shape or sp.region.origin != region.origin:
                raise InvalidParameter("replicas must share the ambient box")
            if not np.array_equal(sp.region.mask, region.mask):
                raise InvalidParameter("replicas must share the region")
        self.region = region
        self.specs = list(specs)
        self.spins = np.stack([_start_spins(st, region.mask, sp.boundary.values, region.shape)
                               for st, sp in zip(starts, specs)])
        self.sites = site_index(region).astype(np.int64)
        self.nbr = region.neighbor_table()
        self.jtab = np.stack([sp.env.coupling_table().astype(float) for sp in specs])
        self.beta = np.array([sp.beta for sp in specs], dtype=float)
        self.h = np.array([sp.h for sp in specs], dtype=float)
        self.vid = _vertex_ids(region)
        self.seed = np.int64(seed)
        self.t = float(t0)
        self.code = _rule(rule)
        self.events = 0
        self._pw = np.zeros(region.n_ambient)
        self._pc = np.full(len(specs), np.inf)
        self._hit = np.full(len(specs), np.nan)
        self._pairs = np.zeros((0, 2), dtype=np.int64)

    def advance(self, t):
        if t < self.t:
            raise InvalidParameter("cannot run backwards")
        stats = np.zeros(2, dtype=np.int64)
        psum = np.zeros(len(self.specs))
        _kernels.advance(self.spins, self.sites, self.nbr, self.jtab, self.beta, self.h, self.vid,
                         self.seed, self.t, float(t), self.code, self._pw, self._pc, psum,
                         self._hit, self._pairs, stats, False)
        self.events += int(stats[0])
        self.t = float(t)
        return self.spins

    def config(self, r=0):
        return SpinConfig(self.region, self.spins[r].reshape(self.region.shape), self.specs[r].boundary)
