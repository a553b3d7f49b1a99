"""Mesoscopic coarse graining of joint spin/edge configurations.

Boxes ``B_K(i)`` are classified as good or bad from the open real edges
``omega``; good boxes carry a phase label given by the spin of their unique
crossing cluster. Layers, spanning profiles and max-flows between phases
are computed on the box adjacency graph.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.csgraph import connected_components, maximum_flow

from .errors import InvalidParameter
from .lattice import box_decomposition, box_index

# ---------------------------------------------------------------------------
# edge configurations


def edge_mask_from_config(omega, graph, region):
    """Open real edges of an FK ``EdgeConfig`` as a mask over ``region.edges()``.

    Only site-site edges are kept (boundary edges play no role in the
    coarse graining).
    """
    u, v, _ = region.edges()
    lookup = {}
    for e, (a, b) in enumerate(zip(u, v)):
        lookup[(int(a), int(b))] = e
    out = np.zeros(len(u), dtype=bool)
    real = np.asarray(omega.real, dtype=bool)
    for e in np.flatnonzero(real):
        a, b = int(graph.ea[e]), int(graph.eb[e])
        if b >= graph.n:
            continue
        x, y = int(graph.sites[a]), int(graph.sites[b])
        key = (x, y) if (x, y) in lookup else (y, x)
        out[lookup[key]] = True
    return out


def _open_site_edges(sigma, omega, J=None):
    region = sigma.region
    u, v, _ = region.edges()
    om = np.asarray(omega, dtype=bool).reshape(-1)
    if om.shape[0] != len(u):
        raise InvalidParameter("omega must be a mask over the region's edges")
    m = region.mask.reshape(-1)
    keep = om & m[u] & m[v]
    if J is not None:
        keep &= np.asarray(J).reshape(-1) > 0
    s = sigma.flat()
    if np.any(s[u[keep]] != s[v[keep]]):
        raise InvalidParameter("omega is not admissible for sigma (open edge between opposite spins)")
    return u[keep], v[keep]


def _components(n, a, b, keep=None):
    if keep is not None:
        sel = keep[a] & keep[b]
        a, b = a[sel], b[sel]
    g = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
    return connected_components(g, directed=False)[1]


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True, eq=False)
class BoxClassification:
    """Per-box coarse-graining outcome; the arrays are aligned with ``indices``."""

    indices: np.ndarray
    interior: np.ndarray
    good: np.ndarray
    crossing: list  # flat ambient indices of B^dagger(i) (empty if none)
    density: np.ndarray
    n_crossing: np.ndarray  # number of face-connecting clusters in the box
    cond_i: np.ndarray
    cond_ii: np.ndarray
    cond_iii: np.ndarray
    eps: float
    K: int
    m_star: float

    def lookup(self):
        return {tuple(int(c) for c in i): k for k, i in enumerate(self.indices)}

    def status(self, index):
        return "good" if self.good[self.lookup()[tuple(index)]] else "bad"


def classify_boxes(sigma, omega, scales, eps, m_star, J=None):
    """Good/bad classification of every box meeting the ambient box.

    ``omega`` is a boolean mask over ``region.edges()`` (see
    ``edge_mask_from_config``). Boxes not contained in the region are bad.
    Residual clusters for condition (ii) are those of the region minus the
    crossing clusters of all interior boxes; diameters are L-infinity.
    """
    if not (eps > 0):
        raise InvalidParameter("eps must be positive")
    region = sigma.region
    K = scales.K if hasattr(scales, "K") else int(scales)
    d = region.d
    n = region.n_ambient
    a, b = _open_site_edges(sigma, omega, J)
    coords = region.ambient_coords()
    bidx = box_index(coords, K)
    boxes = box_decomposition(region, K)
    indices = np.array([bx.index for bx in boxes], dtype=np.int64).reshape(-1, d)
    interior = np.array([bx.interior for bx in boxes], dtype=bool)
    nb = len(boxes)
    lut = {tuple(int(c) for c in i): k for k, i in enumerate(indices)}
    box_of = np.array([lut[tuple(int(c) for c in i)] for i in bidx], dtype=np.int64)
    in_region = region.mask.reshape(-1)
    in_interior = interior[box_of] & in_region

    # clusters of omega restricted to single boxes
    same = box_of[a] == box_of[b]
    local = _components(n, a[same], b[same])
    rel = coords - (K * bidx - K // 2)
    face = np.zeros(n, dtype=np.int64)
    for k in range(d):
        face |= (rel[:, k] == 0).astype(np.int64) << (2 * k)
        face |= (rel[:, k] == K - 1).astype(np.int64) << (2 * k + 1)
    full = (1 << (2 * d)) - 1
    comp_face = np.zeros(local.max() + 1, dtype=np.int64)
    sel = np.flatnonzero(in_interior)
    np.bitwise_or.at(comp_face, local[sel], face[sel])
    crossing_comp = np.flatnonzero(comp_face == full)
    # every component lies in one box; count crossing components per box
    comp_box = np.full(local.max() + 1, -1, dtype=np.int64)
    comp_box[local[sel]] = box_of[sel]
    n_cross = np.bincount(comp_box[crossing_comp], minlength=nb) if len(crossing_comp) else np.zeros(nb, np.int64)
    n_cross = np.where(interior, n_cross, 0)
    dagger_comp = np.full(nb, -1, dtype=np.int64)
    for c in crossing_comp:
        bx = comp_box[c]
        if n_cross[bx] == 1:
            dagger_comp[bx] = c
    in_dagger = np.zeros(n, dtype=bool)
    has = dagger_comp >= 0
    sel_d = sel[np.isin(local[sel], dagger_comp[has])]
    in_dagger[sel_d] = True
    crossing = [np.empty(0, dtype=np.int64)] * nb
    if has.any():
        order = np.argsort(box_of[sel_d], kind="stable")
        verts = sel_d[order]
        owners = box_of[verts]
        cuts = np.flatnonzero(np.diff(owners)) + 1
        for chunk in np.split(verts, cuts):
            crossing[int(box_of[chunk[0]])] = chunk

    # (i) neighbouring crossing clusters joined by an open edge
    linked = set()
    cross_e = in_dagger[a] & in_dagger[b] & (box_of[a] != box_of[b])
    for x, y in zip(box_of[a[cross_e]], box_of[b[cross_e]]):
        linked.add((int(x), int(y)))
        linked.add((int(y), int(x)))
    cond_i = has.copy()
    unit = np.eye(d, dtype=np.int64)
    for k in np.flatnonzero(has):
        for off in np.r_[unit, -unit]:
            j = lut.get(tuple(int(c) for c in indices[k] + off))
            if j is None or not interior[j]:
                continue
            if (k, j) not in linked:
                cond_i[k] = False
                break

    # (ii) residual clusters meeting the box have diameter <= K/2
    resid = in_region & ~in_dagger
    rc = _components(n, a, b, keep=resid)
    diam = np.zeros(rc.max() + 1)
    rv = np.flatnonzero(resid)
    for k in range(d):
        lo = np.full(rc.max() + 1, np.iinfo(np.int64).max)
        hi = np.full(rc.max() + 1, np.iinfo(np.int64).min)
        np.minimum.at(lo, rc[rv], coords[rv, k])
        np.maximum.at(hi, rc[rv], coords[rv, k])
        ext = np.where(hi >= lo, hi - lo, 0)
        diam = np.maximum(diam, ext)
    too_big = np.zeros(nb, dtype=bool)
    big = rv[diam[rc[rv]] > K / 2.0]
    too_big[box_of[big]] = True
    cond_ii = interior & ~too_big

    # (iii) density of the Lambda-cluster of the crossing cluster inside the box
    glob = _components(n, a, b, keep=in_region)
    density = np.zeros(nb)
    for k in np.flatnonzero(has):
        lab = glob[crossing[k][0]]
        members = np.flatnonzero((box_of == k) & in_region & (glob == lab))
        density[k] = len(members) / K ** d
    cond_iii = has & (density >= m_star * (1 - eps) - 1e-12) & (density <= m_star * (1 + eps) + 1e-12)
    good = interior & has & cond_i & cond_ii & cond_iii
    return BoxClassification(indices, interior, good, crossing, density, n_cross,
                             cond_i, cond_ii, cond_iii, float(eps), K, float(m_star))


# ---------------------------------------------------------------------------
# phase labels and layers


@dataclass(frozen=True, eq=False)
class PhaseLabeling:
    indices: np.ndarray
    labels: np.ndarray  # +1, -1 or 0 per box

    def as_dict(self):
        return {tuple(int(c) for c in i): int(l) for i, l in zip(self.indices, self.labels)}

    def counts(self):
        return {s: int(np.sum(self.labels == s)) for s in (1, -1, 0)}


def phase_labels(classification, sigma):
    """Labels ``+-1`` on 1-good boxes (spin of the crossing cluster), 0 elsewhere."""
    if classification.eps != 1.0:
        raise InvalidParameter("phase labels are defined with eps = 1")
    s = sigma.flat()
    labels = np.zeros(len(classification.indices), dtype=np.int8)
    for k in np.flatnonzero(classification.good):
        vals = s[classification.crossing[k]]
        if np.any(vals != vals[0]):
            raise InvalidParameter("crossing cluster is not monochromatic")
        labels[k] = vals[0]
    return PhaseLabeling(classification.indices.copy(), labels)


def layer_profile(labeling, layers):
    """``f[l, s]`` counts for ``s`` in (-1, 0, +1) per layer (columns in that order)."""
    lut = labeling.as_dict()
    out = np.zeros((len(layers), 3), dtype=np.int64)
    for l, boxes in enumerate(layers):
        for i in boxes:
            lab = lut.get(tuple(int(c) for c in i), 0)
            out[l, lab + 1] += 1
    return out


def linf_inradius(polytope):
    """``min ||x||_inf`` over the boundary of a polytope containing the origin."""
    # distance to facet {n.x = c} in the dual (L1) norm
    c = polytope.offsets
    nrm = np.abs(polytope.normals).sum(axis=1)
    pos = c > 1e-12
    return float(np.min(c[pos] / nrm[pos])) if not np.any(~pos) else 0.0


def wulff_layers(shape, b1, b2, scales, anchor=None, w=None, samples=5):
    """Mesoscopic layers ``H_l = W(b2 - 2lK/(wN), b2 - 2(l-1)K/(wN))``, outermost first.

    ``shape`` is a ShapeSpec (any ``b``; only its unit polytope is used).
    A box belongs to ``H_l`` when its closed macroscopic cell lies in the
    layer, judged on a ``samples^d`` grid of cell points. ``w`` defaults to
    the L-infinity inradius of the unit shape (zero for cones, so pass it).
    """
    if not (0 <= b1 < b2):
        raise InvalidParameter("need 0 <= b1 < b2")
    unit = shape.unit
    d = shape.d
    K, N = scales.K, scales.N
    if w is None:
        w = linf_inradius(unit)
    if not w > 0:
        raise InvalidParameter("layer width needs a positive w")
    S = int(math.floor((b2 - b1) * N * w / (2 * K) + 1e-9))
    if S < 1:
        raise InvalidParameter("annulus thinner than one layer")
    anchor = np.zeros(d) if anchor is None else np.asarray(anchor, float)
    lo, hi = unit.scaled(b2).bounds()
    lo = lo + anchor / N
    hi = hi + anchor / N
    ilo = np.floor(lo * N / K).astype(np.int64) - 1
    ihi = np.ceil(hi * N / K).astype(np.int64) + 1
    cand = np.array(list(itertools.product(*[range(x, y + 1) for x, y in zip(ilo, ihi)])))
    t = np.linspace(-0.5, 0.5, samples)
    offs = np.array(list(itertools.product(t, repeat=d))) * (K / N)
    pts = (K * cand / N)[:, None, :] + offs[None]
    g = unit.gauge((pts - anchor / N).reshape(-1, d)).reshape(len(cand), -1)
    gmin, gmax = g.min(axis=1), g.max(axis=1)
    step = 2 * K / (w * N)
    layers = []
    for l in range(1, S + 1):
        top = b2 - (l - 1) * step
        bot = b2 - l * step
        sel = (gmax <= top + 1e-12) & (gmin >= bot - 1e-12)
        layers.append(cand[sel])
    return layers


def _check_layers(layers):
    seen = set()
    for l in layers:
        arr = np.asarray(l, dtype=np.int64)
        if arr.ndim != 2:
            raise InvalidParameter("each layer must be an (m, d) array of box indices")
        for i in arr:
            key = tuple(int(c) for c in i)
            if key in seen:
                raise InvalidParameter("layers overlap")
            seen.add(key)


def max_disjoint_paths(labels_by_box, allowed=None):
    """Maximum number of vertex-disjoint paths from +1 boxes to -1 boxes.

    ``labels_by_box`` maps box index tuples to labels; paths move between
    boxes at L1 distance one inside ``allowed`` (default: all given boxes).
    """
    keys = list(labels_by_box) if allowed is None else [tuple(k) for k in allowed]
    if not keys:
        return 0
    pos = {k: i for i, k in enumerate(keys)}
    m = len(keys)
    lab = np.array([labels_by_box.get(k, 0) for k in keys])
    if not (np.any(lab == 1) and np.any(lab == -1)):
        return 0
    d = len(keys[0])
    src, snk = 2 * m, 2 * m + 1
    rows, cols = [], []
    for i, k in enumerate(keys):
        rows.append(2 * i)
        cols.append(2 * i + 1)  # in -> out, capacity one
        if lab[i] == 1:
            rows.append(src)
            cols.append(2 * i)
        if lab[i] == -1:
            rows.append(2 * i + 1)
            cols.append(snk)
        for ax in range(d):
            for sgn in (1, -1):
                nb = list(k)
                nb[ax] += sgn
                j = pos.get(tuple(nb))
                if j is not None:
                    rows.append(2 * i + 1)
                    cols.append(2 * j)
    cap = sp.csr_matrix((np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(2 * m + 2, 2 * m + 2))
    cap.sum_duplicates()
    cap.data[:] = 1
    return int(maximum_flow(cap, src, snk).flow_value)


@dataclass(frozen=True)
class FlowResult:
    is_spanning: bool
    flow: int
    profile: np.ndarray


def spanning_and_flow(labeling, layers, n_lead=None):
    """Spanning test on the leading layers and the +/- max-flow inside the layers."""
    if not layers:
        raise InvalidParameter("no layers supplied")
    _check_layers(layers)
    prof = layer_profile(labeling, layers)
    n_lead = len(layers) if n_lead is None else n_lead
    if not (1 <= n_lead <= len(layers)):
        raise InvalidParameter("n_lead out of range")
    spanning = bool(np.all(prof[:n_lead, 0] + prof[:n_lead, 1] > 0))
    allowed = [tuple(int(c) for c in i) for l in layers for i in l]
    lut = labeling.as_dict()
    flow = max_disjoint_paths({k: lut.get(k, 0) for k in allowed})
    return FlowResult(spanning, flow, prof)


# ---------------------------------------------------------------------------
# brute-force oracle for the flow


@njit(cache=True)
def _separates(cut, plus, minus, adj):
    reach = plus & ~cut
    frontier = reach
    allowed = ~cut
    while frontier:
        new = np.uint64(0)
        f = frontier
        k = 0
        while f:
            if f & np.uint64(1):
                new |= adj[k]
            f >>= np.uint64(1)
            k += 1
        new &= allowed & ~reach
        reach |= new
        frontier = new
    return (reach & minus) == 0


@njit(cache=True)
def _min_cut_size(m, plus, minus, adj, k_max):
    idx = np.empty(k_max + 1, dtype=np.int64)
    for k in range(0, k_max + 1):
        # enumerate k-subsets in lexicographic order
        for i in range(k):
            idx[i] = i
        while True:
            cut = np.uint64(0)
            for i in range(k):
                cut |= np.uint64(1) << np.uint64(idx[i])
            if _separates(cut, plus, minus, adj):
                return k
            if k == 0:
                break
            i = k - 1
            while i >= 0 and idx[i] == m - k + i:
                i -= 1
            if i < 0:
                break
            idx[i] += 1
            for j in range(i + 1, k):
                idx[j] = idx[j - 1] + 1
    return -1


def brute_force_min_cut(labels_by_box, k_max=8):
    """Smallest set of boxes whose removal separates +1 from -1 (exhaustive, <= 63 boxes).

    By Menger's theorem this equals the maximal number of vertex-disjoint
    paths. Returns -1 if no cut of size ``<= k_max`` exists.
    """
    keys = list(labels_by_box)
    m = len(keys)
    if m > 63:
        raise InvalidParameter("brute force limited to 63 boxes")
    pos = {k: i for i, k in enumerate(keys)}
    adj = np.zeros(max(m, 1), dtype=np.uint64)
    plus = np.uint64(0)
    minus = np.uint64(0)
    for i, k in enumerate(keys):
        if labels_by_box[k] == 1:
            plus |= np.uint64(1) << np.uint64(i)
        elif labels_by_box[k] == -1:
            minus |= np.uint64(1) << np.uint64(i)
        for ax in range(len(k)):
            for sgn in (1, -1):
                nb = list(k)
                nb[ax] += sgn
                j = pos.get(tuple(nb))
                if j is not None:
                    adj[i] |= np.uint64(1) << np.uint64(j)
    return int(_min_cut_size(m, plus, minus, adj, min(k_max, m)))


# ---------------------------------------------------------------------------
# profile integrals


def _window_boxes(region, scales, window):
    """Boxes of the decomposition lying wholly in ``window`` (mask or macroscopic shape)."""
    boxes = box_decomposition(region, scales.K)
    K, N = scales.K, scales.N
    if hasattr(window, "contains"):
        from .lattice import boxes_inside

        idx = np.array([bx.index for bx in boxes], dtype=np.int64)
        keep = boxes_inside(idx, window, scales)
    else:
        mask = np.asarray(window, dtype=bool).reshape(region.shape)
        origin = np.asarray(region.origin)
        keep = np.array([len(bx.vertices) == K ** region.d
                         and bool(mask[tuple((bx.vertices - origin).T)].all()) for bx in boxes])
    return [bx for bx, k in zip(boxes, keep) if k]


def profile_integral(sigma, scales, m_star, window):
    """Integral of the piecewise-constant ``M_K`` over the boxes inside ``window``."""
    pred = profile_weights(sigma.region, scales, m_star, window)
    return float(pred[0] @ sigma.flat() + pred[1])


def profile_weights(region, scales, m_star, window):
    """``(w, c)`` with ``integral = w . sigma + c``; ``w >= 0`` so the event is increasing."""
    if m_star <= 0:
        raise InvalidParameter("m_star must be positive")
    K, N, d = scales.K, scales.N, region.d
    vol = (K / N) ** d
    w = np.zeros(region.n_ambient)
    c = 0.0
    origin = np.asarray(region.origin)
    for bx in _window_boxes(region, scales, window):
        scale = m_star if bx.interior else 1.0
        flat = np.ravel_multi_index(tuple((bx.vertices - origin).T), region.shape)
        w[flat] += vol / (2.0 * scale * K ** d)
        c += vol / 2.0
    return w, c


def profile_predicate(region, scales, m_star, window, threshold):
    """Increasing stop event ``integral of M_K over window >= threshold``."""
    from .glauber import LinearPredicate

    w, c = profile_weights(region, scales, m_star, window)
    return LinearPredicate(w, threshold - c)
