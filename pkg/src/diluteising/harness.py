"""End-to-end experiments: nucleation scans, catalyst A/B, planted droplets, growth grids.

Every run is a pure function of ``(config, seed)``; results are appended to
JSONL records and summarised in CSV tables. Reported medians treat censored
runs as larger than every observed time (rank statistics only) and carry
bootstrap confidence intervals.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from . import coarse, glauber, lattice, wulff
from .errors import InvalidParameter, InvariantViolation, OutOfBounds
from .gibbs import GibbsSpec

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

TWO_PI = 2 * math.pi
KINDS = ("nucleate", "catalyst", "grow", "grid")

# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """Flat experiment description; ``validate`` runs before any launch."""

    kind: str = "nucleate"
    d: int = 2
    size: int = 64
    p: float = 1.0
    beta: float = 1.2
    h: list = field(default_factory=lambda: [0.5, 0.35, 0.25])
    theta: float = math.pi / 2
    b_min: float = None
    b_max: float = None
    seeds: int = 20
    seed_offset: int = 0
    t_cap: float = 1.0e4
    tau_model: str = "onsager"
    m_star: float = None
    window: int = 0  # side of the central observation window, 0 = whole region
    window_frac: float = 0.5
    b_plant: list = field(default_factory=list)  # numbers or "1.5*B_root" / "0.5*B_c"
    env_seed: int = 0
    N: int = None
    K: int = None
    obs_dt: float = 1.0
    cells: int = 5
    cell_side: int = None
    cell_period: float = None
    workers: int = 1
    bootstrap: int = 1000
    out: str = None

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidParameter(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if np.isscalar(cfg.h):
            cfg.h = [cfg.h]
        cfg.h = [float(x) for x in cfg.h]
        if np.isscalar(cfg.b_plant) or isinstance(cfg.b_plant, str):
            cfg.b_plant = [cfg.b_plant]
        return cfg.validate()

    @classmethod
    def from_toml(cls, path):
        with open(path, "rb") as fh:
            return cls.from_dict(_toml.load(fh))

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidParameter(f"kind must be one of {KINDS}")
        if self.d not in (2, 3):
            raise InvalidParameter("d must be 2 or 3")
        if self.size < 4:
            raise InvalidParameter("size must be at least 4")
        if not (0 < self.p <= 1):
            raise InvalidParameter("p must lie in (0, 1]")
        if not (self.beta > 0):
            raise InvalidParameter("beta must be positive")
        if not self.h or any(not (x > 0) for x in self.h):
            raise InvalidParameter("every h must be positive")
        if not (0 < self.theta <= TWO_PI):
            raise InvalidParameter("theta must lie in (0, 2 pi]")
        if self.seed_list() == []:
            raise InvalidParameter("need at least one seed")
        if not (self.t_cap >= 0):
            raise InvalidParameter("t_cap must be nonnegative")
        if not (0 < self.window_frac <= 1):
            raise InvalidParameter("window_frac must lie in (0, 1]")
        if self.obs_dt <= 0:
            raise InvalidParameter("obs_dt must be positive")
        if self.workers < 1 or self.bootstrap < 10:
            raise InvalidParameter("need workers >= 1 and bootstrap >= 10")
        if (self.N is None) != (self.K is None):
            raise InvalidParameter("give both N and K or neither")
        return self

    def seed_list(self):
        if isinstance(self.seeds, (list, tuple)):
            return [int(s) for s in self.seeds]
        return list(range(self.seed_offset, self.seed_offset + int(self.seeds)))

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        data = self.to_dict()
        data.pop("out", None)
        data.pop("workers", None)
        blob = json.dumps(data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Physics:
    """Derived quantities for one field value."""

    model: object
    m_star: float
    scales: lattice.Scales
    full: object  # DropletEnergetics in the full space
    cone: object  # DropletEnergetics in the cone of the config's theta


def tau_model(cfg):
    if cfg.tau_model == "onsager":
        return wulff.default_model(cfg.beta, cfg.d)
    return wulff.SurfaceTensionModel.parse(cfg.tau_model, cfg.d, cfg.beta)


def measured_m_star(cfg):
    if cfg.m_star is not None:
        return float(cfg.m_star)
    if cfg.p == 1.0 and cfg.d == 2:
        return wulff.onsager_magnetization(cfg.beta)
    region = lattice.LatticeRegion.box((10,) * cfg.d)
    env = lattice.gen_environment(region, cfg.p, cfg.env_seed)
    est = wulff.estimate_m_star(env, cfg.beta, samples=400, seed=cfg.env_seed)
    if not est.converged or not est.value > 0:
        raise InvalidParameter("could not measure m* at these parameters; set m_star")
    return est.value


def physics(cfg, h):
    model = tau_model(cfg)
    ms = measured_m_star(cfg)
    if cfg.N is not None:
        scales = lattice.Scales(float(h), int(cfg.N), int(cfg.K))
    else:
        scales = lattice.Scales.from_h(h, cfg.d)
    full = wulff.critical_values(model, TWO_PI, cfg.beta, ms)
    cone = full if cfg.theta >= TWO_PI else wulff.critical_values(model, cfg.theta, cfg.beta, ms)
    return Physics(model, ms, scales, full, cone)


def resolve_b(value, phys):
    """Numbers pass through; ``"x*B_root"``, ``"x*B_c"``, ``"x*B_max"`` scale derived radii."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).replace(" ", "")
    factor, _, name = text.partition("*")
    if not name:
        return float(text)
    ref = {"B_root": phys.full.B_root, "B_c": phys.full.B_c}.get(name)
    if ref is None:
        raise InvalidParameter(f"unknown radius reference {name!r}")
    return float(factor) * ref


# ---------------------------------------------------------------------------
# records


@dataclass
class RunRecord:
    config_hash: str
    kind: str
    seed: int
    h: float
    arm: str = ""
    hit_time: float = math.nan
    censored: bool = False
    outcome: str = ""
    series: dict = field(default_factory=dict)
    env_ref: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


class RecordStore:
    """Append-only JSONL records, CSV summaries and content-addressed environments."""

    def __init__(self, out):
        self.out = out
        os.makedirs(out, exist_ok=True)
        os.makedirs(os.path.join(out, "envs"), exist_ok=True)

    def append(self, records, name="runs.jsonl"):
        with open(os.path.join(self.out, name), "a") as fh:
            for r in records:
                fh.write(r.to_json() + "\n")

    def save_env(self, env):
        blob = lattice.dumps_environment(env)
        ref = hashlib.sha256(blob).hexdigest()[:16]
        path = os.path.join(self.out, "envs", ref + ".dien")
        if not os.path.exists(path):
            with open(path, "wb") as fh:
                fh.write(blob)
        return ref

    def write_csv(self, name, rows):
        if not rows:
            return
        with open(os.path.join(self.out, name), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    def write_json(self, name, data):
        with open(os.path.join(self.out, name), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)


def load_records(path):
    with open(path) as fh:
        return [RunRecord(**json.loads(line)) for line in fh if line.strip()]


def env_ref(env):
    return hashlib.sha256(lattice.dumps_environment(env)).hexdigest()[:16]


# ---------------------------------------------------------------------------
# statistics


def censored_quantile(times, censored, q):
    """Quantile with censored values ranked above all observed ones (inf if it falls there)."""
    t = np.where(np.asarray(censored, bool), np.inf, np.asarray(times, float))
    if len(t) == 0:
        return math.nan
    t = np.sort(t)
    k = int(math.ceil(q * len(t))) - 1
    return float(t[max(k, 0)])


def censored_median(times, censored):
    return censored_quantile(times, censored, 0.5)


def bootstrap_ci(stat, data, n=1000, seed=0, level=0.95):
    """Percentile bootstrap interval of ``stat`` over rows of ``data``."""
    data = np.asarray(data)
    gen = np.random.default_rng(seed)
    m = len(data)
    vals = np.array([stat(data[gen.integers(0, m, m)]) for _ in range(n)], dtype=float)
    a = (1 - level) / 2
    finite = vals[np.isfinite(vals)]
    if len(finite) < len(vals):
        # infinite resamples sort above every finite one
        vals = np.sort(np.where(np.isfinite(vals), vals, np.inf))
        return float(vals[int(a * (n - 1))]), float(vals[int((1 - a) * (n - 1))])
    return float(np.quantile(vals, a)), float(np.quantile(vals, 1 - a))


def sign_test(first, second):
    """One-sided sign test that ``second`` tends to be smaller than ``first``.

    Returns ``(k, n, p)`` with ``k`` strict wins of ``second`` among ``n`` untied pairs.
    """
    a = np.asarray(first, float)
    b = np.asarray(second, float)
    wins = int(np.sum(b < a))
    n = int(np.sum(a != b))
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return wins, n, float(p)


def _median_stat():
    def f(rows):
        t = rows[:, 0]
        c = rows[:, 1].astype(bool)
        return censored_median(t, c)
    return f


def _map(fn, tasks, workers):
    if workers <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futs]


# ---------------------------------------------------------------------------
# geometry helpers


def centred_region(cfg, size=None):
    size = cfg.size if size is None else size
    return lattice.LatticeRegion.box((size,) * cfg.d, origin=(-(size // 2),) * cfg.d)


def base_environment(cfg, region):
    if cfg.p >= 1.0:
        return lattice.uniform_environment(region)
    return lattice.gen_environment(region, cfg.p, cfg.env_seed)


def central_window(cfg, region):
    if not cfg.window:
        return region.mask.copy()
    c = region.ambient_coords()
    half = cfg.window / 2.0
    m = np.all((c >= -half) & (c < half), axis=1).reshape(region.shape)
    return m & region.mask


def shape_mask(region, shape, N, anchor=None):
    """Lattice points ``x`` of the region with ``(x - anchor) / N`` in ``shape``."""
    pts = region.ambient_coords().astype(float)
    if anchor is not None:
        pts = pts - np.asarray(anchor, float)
    return shape.contains(pts / N).reshape(region.shape) & region.mask


def _window_predicate(region, phys, window, frac):
    w, c = coarse.profile_weights(region, phys.scales, phys.m_star, window)
    vol = float(np.sum(w > 0)) / phys.scales.N ** region.d
    if vol == 0:
        raise InvalidParameter("observation window contains no whole box")
    return glauber.LinearPredicate(w, frac * vol - c), w, c


# ---------------------------------------------------------------------------
# nucleation scan


def _nucleation_run(cfg_dict, h, seed):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    region = centred_region(cfg)
    env = base_environment(cfg, region)
    spec = GibbsSpec(env, cfg.beta, h, lattice.BoundaryCondition.minus(region))
    window = central_window(cfg, region)
    if cfg.m_star is None:
        # plain plus fraction: needs no m*, so it also works above the critical point
        pred = glauber.LinearPredicate.plus_fraction(region, window, cfg.window_frac)
    else:
        pred, _, _ = _window_predicate(region, physics(cfg, h), window, cfg.window_frac)
    res = glauber.hitting_time(spec, pred, seed, cfg.t_cap)
    return RunRecord(cfg.config_hash(), "nucleate", seed, h, hit_time=res.time,
                     censored=res.censored, env_ref=env_ref(env))


@dataclass
class NucleationReport:
    rows: list
    slope: float
    slope_ci: tuple
    fit_h: list
    records: list

    def summary(self):
        return {"slope": self.slope, "slope_ci": list(self.slope_ci), "fit_h": self.fit_h,
                "rows": self.rows}


def _fit_slope(xs, meds):
    x = np.asarray(xs, float)
    y = np.log(np.asarray(meds, float))
    if len(x) < 2:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def nucleation_scan(cfg, store=None):
    """Median hitting times per field and the slope of ``log median`` in ``h^-(d-1)``."""
    cfg = ExperimentConfig.from_dict(cfg.to_dict()) if isinstance(cfg, ExperimentConfig) else \
        ExperimentConfig.from_dict(cfg)
    tasks = [(cfg.to_dict(), h, s) for h in cfg.h for s in cfg.seed_list()]
    records = _map(_nucleation_run, tasks, cfg.workers)
    rows, cells = [], []
    for k, h in enumerate(cfg.h):
        recs = [r for r in records if r.h == h]
        t = np.array([r.hit_time for r in recs])
        c = np.array([r.censored for r in recs])
        data = np.c_[t, c]
        med = censored_median(t, c)
        lo, hi = bootstrap_ci(_median_stat(), data, cfg.bootstrap, seed=k)
        rows.append({"h": h, "n": len(t), "median": med,
                     "q25": censored_quantile(t, c, 0.25), "q75": censored_quantile(t, c, 0.75),
                     "censor_rate": float(c.mean()), "median_ci_lo": lo, "median_ci_hi": hi})
        cells.append(data)
    fit = [k for k, r in enumerate(rows) if math.isfinite(r["median"]) and r["median"] > 0]
    xs = [cfg.h[k] ** (-(cfg.d - 1)) for k in fit]
    slope = _fit_slope(xs, [rows[k]["median"] for k in fit])
    gen = np.random.default_rng(12345)
    boots = []
    for _ in range(cfg.bootstrap):
        meds = []
        for k in fit:
            data = cells[k]
            sample = data[gen.integers(0, len(data), len(data))]
            meds.append(censored_median(sample[:, 0], sample[:, 1].astype(bool)))
        meds = np.array(meds)
        if np.all(np.isfinite(meds)) and np.all(meds > 0) and len(meds) >= 2:
            boots.append(_fit_slope(xs, meds))
    ci = (float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975))) if boots else (math.nan, math.nan)
    report = NucleationReport(rows, slope, ci, [cfg.h[k] for k in fit], records)
    if store is not None:
        store.save_env(base_environment(cfg, centred_region(cfg)))
        store.append(records)
        store.write_csv("nucleation.csv", rows)
        store.write_json("nucleation.json", report.summary())
    return report


# ---------------------------------------------------------------------------
# catalyst A/B


@dataclass
class CatalystSetup:
    region: object
    plain: object
    carved: object
    window: np.ndarray
    anchor: np.ndarray
    b_max: float
    phys: Physics


def catalyst_setup(cfg, h=None):
    """Environments differing only by the carved cone, and the cone-mouth window."""
    h = cfg.h[0] if h is None else h
    phys = physics(cfg, h)
    region = centred_region(cfg)
    env = base_environment(cfg, region)
    b_max = cfg.b_max
    if b_max is None:
        b_max = wulff.b_max_for(phys.model, cfg.theta, cfg.beta, phys.m_star)[0]
    if not b_max > 0:
        raise InvalidParameter("b_max must be positive")
    shape = wulff.wulff_shape(phys.model, cfg.theta, b_max)
    N = phys.scales.N
    lo, hi = shape.bounds()
    # centre the shape's bounding box on the origin
    anchor = -np.round((lo + hi) * N / 2.0).astype(np.int64)
    carved = lattice.carve_catalyst(env, cfg.theta, b_max, anchor, phys.scales, phys.model)
    pts = lattice.discretize(shape, phys.scales).coords() + anchor
    window = np.zeros(region.shape, dtype=bool)
    if len(pts):
        window[tuple(region.to_index(pts).T)] = True
    else:
        window[tuple(region.to_index(anchor[None]).T)] = True
    return CatalystSetup(region, env, carved, window, anchor, float(b_max), phys)


def _catalyst_run(cfg_dict, seed):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    h = cfg.h[0]
    st = catalyst_setup(cfg, h)
    bc = lattice.BoundaryCondition.minus(st.region)
    specs = [GibbsSpec(st.plain, cfg.beta, h, bc), GibbsSpec(st.carved, cfg.beta, h, bc)]
    pred, _, _ = _window_predicate(st.region, st.phys, st.window, cfg.window_frac)
    a, b = glauber.hitting_times(specs, pred, seed, cfg.t_cap)
    hsh = cfg.config_hash()
    return [RunRecord(hsh, "catalyst", seed, h, "plain", a.time, a.censored, env_ref=env_ref(st.plain)),
            RunRecord(hsh, "catalyst", seed, h, "carved", b.time, b.censored, env_ref=env_ref(st.carved))]


@dataclass
class CatalystReport:
    plain: np.ndarray
    carved: np.ndarray
    plain_censored: np.ndarray
    carved_censored: np.ndarray
    frac_not_larger: float
    wins: int
    untied: int
    sign_p: float
    median_ratio: float
    ratio_ci: tuple
    median_plain: float
    median_plain_ci: tuple
    median_carved: float
    median_carved_ci: tuple
    carved_edges: int
    b_max: float
    window_sites: int
    verdict: str
    records: list = field(default_factory=list)

    def summary(self):
        out = dataclasses.asdict(self)
        out.pop("records")
        for k in ("plain", "carved", "plain_censored", "carved_censored"):
            out[k] = np.asarray(out[k]).tolist()
        return out


def catalyst_ab(cfg, store=None, verify_replay=True):
    """Noise-paired hitting times in the cone mouth with and without the carved cone."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_dict(cfg)
    setup = catalyst_setup(cfg)
    seeds = cfg.seed_list()
    out = _map(_catalyst_run, [(cfg.to_dict(), s) for s in seeds], cfg.workers)
    if verify_replay:
        again = _catalyst_run(cfg.to_dict(), seeds[0])
        if [r.hit_time for r in again] != [r.hit_time for r in out[0]]:
            raise InvariantViolation("catalyst pair did not replay identically")
    recs = [r for pair in out for r in pair]
    a = np.array([pair[0].hit_time for pair in out])
    b = np.array([pair[1].hit_time for pair in out])
    ca = np.array([pair[0].censored for pair in out])
    cb = np.array([pair[1].censored for pair in out])
    frac = float(np.mean(b <= a))
    wins, n, p = sign_test(a, b)
    safe = np.maximum(a, 1e-12)
    ratios = np.where((a == b), 1.0, b / safe)
    med_ratio = float(np.median(ratios))
    rci = bootstrap_ci(np.median, ratios, cfg.bootstrap, seed=1)
    ma = censored_median(a, ca)
    mb = censored_median(b, cb)
    cia = bootstrap_ci(_median_stat(), np.c_[a, ca], cfg.bootstrap, seed=2)
    cib = bootstrap_ci(_median_stat(), np.c_[b, cb], cfg.bootstrap, seed=3)
    effect = frac >= 0.7 and p < 0.05
    verdict = "effect detected" if effect else "no effect detected"
    report = CatalystReport(a, b, ca, cb, frac, wins, n, p, med_ratio, rci, ma, cia, mb, cib,
                            setup.carved.n_carved, setup.b_max, int(setup.window.sum()),
                            verdict, recs)
    if store is not None:
        store.save_env(setup.plain)
        store.save_env(setup.carved)
        store.append(recs)
        store.write_csv("catalyst_pairs.csv", [
            {"seed": s, "plain": x, "carved": y, "plain_censored": bool(u), "carved_censored": bool(v)}
            for s, x, y, u, v in zip(seeds, a, b, ca, cb)])
        store.write_json("catalyst.json", report.summary())
    return report


# ---------------------------------------------------------------------------
# planted droplets


def _grow_run(cfg_dict, b, seed):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    h = cfg.h[0]
    phys = physics(cfg, h)
    region = centred_region(cfg)
    env = base_environment(cfg, region)
    spec = GibbsSpec(env, cfg.beta, h, lattice.BoundaryCondition.minus(region))
    N = phys.scales.N
    plant = shape_mask(region, wulff.wulff_shape(phys.model, TWO_PI, b), N) if b > 0 else \
        np.zeros(region.shape, dtype=bool)
    b_win = 2.0 * max(b, phys.full.B_c)
    win_shape = wulff.wulff_shape(phys.model, TWO_PI, b_win)
    lo, hi = win_shape.bounds()
    if np.any(np.abs(np.r_[lo, hi]) * N > cfg.size / 2 - 1):
        raise OutOfBounds("observation window does not fit in the region; increase size")
    window = shape_mask(region, win_shape, N)
    w, c = coarse.profile_weights(region, phys.scales, phys.m_star, window)
    base = c - w.sum()  # integral of the all-minus configuration
    start = np.where(plant, 1, -1).astype(np.int8)
    st = glauber.Stepper(spec, start, seed)
    v0 = float(w @ st.spins[0] + c - base)
    v_crit = float(np.sum(w[shape_mask(region, wulff.wulff_shape(phys.model, TWO_PI, phys.full.B_c), N).reshape(-1)]) * 2)
    target = 2.0 * v0 if v0 > 0 else v_crit
    series = [v0]
    outcome = "censored"
    t = 0.0
    while t < cfg.t_cap:
        t = min(t + cfg.obs_dt, cfg.t_cap)
        st.advance(t)
        v = float(w @ st.spins[0] + c - base)
        series.append(v)
        if v >= target:
            outcome = "grew"
            break
        if v0 > 0 and v < v0 / 2.0:
            outcome = "shrank"
            break
    return RunRecord(cfg.config_hash(), "grow", seed, h, arm=f"b={b:.6g}", hit_time=t,
                     censored=outcome == "censored", outcome=outcome,
                     series={"dt": cfg.obs_dt, "volume": series},
                     env_ref=env_ref(env), extra={"b_plant": b, "v0": v0, "target": target})


@dataclass
class GrowthReport:
    rows: list
    records: list

    def row(self, b):
        for r in self.rows:
            if abs(r["b_plant"] - b) < 1e-12:
                return r
        raise KeyError(b)


def plant_and_grow(cfg, b_plant=None, store=None):
    """Grow/shrink fractions of planted Wulff droplets under minus boundary conditions."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_dict(cfg)
    phys = physics(cfg, cfg.h[0])
    values = cfg.b_plant if b_plant is None else b_plant
    if np.isscalar(values) or isinstance(values, str):
        values = [values]
    bs = [resolve_b(v, phys) for v in values]
    tasks = [(cfg.to_dict(), b, s) for b in bs for s in cfg.seed_list()]
    records = _map(_grow_run, tasks, cfg.workers)
    rows = []
    for b in bs:
        recs = [r for r in records if r.extra["b_plant"] == b]
        g = sum(r.outcome == "grew" for r in recs)
        s = sum(r.outcome == "shrank" for r in recs)
        n = len(recs)
        pg = binomtest(g, g + s, 0.5, alternative="greater").pvalue if g + s else 1.0
        ps = binomtest(s, g + s, 0.5, alternative="greater").pvalue if g + s else 1.0
        rows.append({"b_plant": b, "b_over_B_c": b / phys.full.B_c, "b_over_B_root": b / phys.full.B_root,
                     "n": n, "grew": g, "shrank": s, "censored": n - g - s,
                     "grow_frac": g / n, "shrink_frac": s / n,
                     "p_grow": float(pg), "p_shrink": float(ps)})
    report = GrowthReport(rows, records)
    if store is not None:
        store.save_env(base_environment(cfg, centred_region(cfg)))
        store.append(records)
        store.write_csv("growth.csv", rows)
    return report


# ---------------------------------------------------------------------------
# rescaled growth grid


@dataclass
class GridReport:
    occupation: np.ndarray  # (seeds, periods + 1, cells ^ d) bool
    has_path: np.ndarray
    front: np.ndarray  # (seeds, periods + 1) max cell distance reached
    speed: float  # cells per unit time, averaged over seeds
    cell_side: int
    period: float
    records: list

    @property
    def path_fraction(self):
        return float(np.mean(self.has_path))


def _directed_path(occ, n, d):
    """Whether occupied space-time cells link the origin cell at time 0 to the far corner."""
    P = occ.shape[0]
    shape = (n,) * d
    cur = np.zeros(shape, dtype=bool)
    cur[(0,) * d] = occ[0].reshape(shape)[(0,) * d]
    far = (n - 1,) * d
    if cur[far]:
        return True
    for i in range(1, P):
        grown = cur.copy()
        # spread to L-infinity neighbours
        for off in np.ndindex(*(3,) * d):
            shift = np.array(off) - 1
            src = tuple(slice(max(0, -s), n - max(0, s)) for s in shift)
            dst = tuple(slice(max(0, s), n - max(0, -s)) for s in shift)
            grown[dst] |= cur[src]
        cur = grown & occ[i].reshape(shape)
        if cur[far]:
            return True
        if not cur.any():
            return False
    return False


def _grid_run(cfg_dict, seed):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    h = cfg.h[0]
    phys = physics(cfg, h)
    N = phys.scales.N
    n = cfg.cells
    b = resolve_b(cfg.b_plant[0], phys) if cfg.b_plant else 1.5 * phys.full.B_root
    side = cfg.cell_side
    if side is None:
        diam = wulff.wulff_shape(phys.model, TWO_PI, max(b, phys.full.B_root)).diameter() * N
        side = int(math.ceil(diam)) + 4
    period = cfg.cell_period if cfg.cell_period is not None else 1.5 * side
    region = lattice.LatticeRegion.box((n * side,) * cfg.d, origin=(0,) * cfg.d)
    env = base_environment(dataclasses.replace(cfg, size=n * side), region)
    spec = GibbsSpec(env, cfg.beta, h, lattice.BoundaryCondition.minus(region))
    centre = np.full(cfg.d, side / 2.0 - 0.5)
    plant = shape_mask(region, wulff.wulff_shape(phys.model, TWO_PI, b), N, anchor=centre) if b > 0 else \
        np.zeros(region.shape, dtype=bool)
    coords = region.ambient_coords()
    cell_of = np.floor_divide(coords, side)
    inside = region.mask.reshape(-1)
    cell_flat = np.ravel_multi_index(tuple(np.clip(cell_of, 0, n - 1).T), (n,) * cfg.d)
    w_all, _ = coarse.profile_weights(region, phys.scales, phys.m_star, region.mask)
    st = glauber.Stepper(spec, np.where(plant, 1, -1).astype(np.int8), seed)
    periods = int(math.floor(cfg.t_cap / period + 1e-9))
    occ = np.zeros((periods + 1, n ** cfg.d), dtype=bool)

    def occupied():
        # profile integral per cell against the cell's half volume
        s = st.spins[0].astype(float)
        tot = np.bincount(cell_flat[inside], weights=(w_all * (s + 1.0))[inside], minlength=n ** cfg.d)
        full = np.bincount(cell_flat[inside], weights=(2.0 * w_all)[inside], minlength=n ** cfg.d)
        return tot >= cfg.window_frac * full

    occ[0] = occupied()
    occ[0, 0] = occ[0, 0] or bool(plant.any())
    for i in range(1, periods + 1):
        st.advance(i * period)
        occ[i] = occupied()
    cells = np.array(list(np.ndindex(*(n,) * cfg.d)))
    dist = np.abs(cells).max(axis=1)
    front = np.array([dist[o].max() if o.any() else -1 for o in occ])
    path = _directed_path(occ, n, cfg.d)
    rec = RunRecord(cfg.config_hash(), "grid", seed, h, hit_time=float(periods * period),
                    outcome="path" if path else "no-path",
                    series={"front": front.tolist(), "period": period,
                            "occupation": occ.astype(int).tolist()},
                    env_ref=env_ref(env), extra={"cell_side": side, "b_plant": b})
    return rec


def conductive_grid_experiment(cfg, store=None):
    """Directed-growth bookkeeping on a rescaled grid of cells with one planted droplet."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_dict(cfg)
    if cfg.cells < 3:
        raise InvalidParameter("need at least 3 rescaled cells per side")
    records = _map(_grid_run, [(cfg.to_dict(), s) for s in cfg.seed_list()], cfg.workers)
    occ = np.array([np.array(r.series["occupation"], dtype=bool) for r in records])
    fronts = np.array([r.series["front"] for r in records], dtype=float)
    period = records[0].series["period"]
    P = fronts.shape[1]
    speeds = []
    for f in fronts:
        # fit the advancing part of the front, before it saturates
        k = int(np.argmax(f >= cfg.cells - 1)) if np.any(f >= cfg.cells - 1) else P - 1
        if k >= 1:
            speeds.append(float(np.polyfit(np.arange(k + 1) * period, f[:k + 1], 1)[0]))
    speed = float(np.mean(speeds)) if speeds else 0.0
    has_path = np.array([r.outcome == "path" for r in records])
    report = GridReport(occ, has_path, fronts, speed, records[0].extra["cell_side"], period, records)
    if store is not None:
        side = report.cell_side * cfg.cells
        region = lattice.LatticeRegion.box((side,) * cfg.d, origin=(0,) * cfg.d)
        store.save_env(base_environment(dataclasses.replace(cfg, size=side), region))
        store.append(records)
        store.write_csv("grid.csv", [{"seed": r.seed, "path": r.outcome == "path",
                                      "final_front": r.series["front"][-1]} for r in records])
        store.write_json("grid.json", {"path_fraction": report.path_fraction, "speed": speed,
                                       "cell_side": report.cell_side, "period": period})
    return report


def run_experiment(cfg, out=None):
    """Dispatch on ``cfg.kind`` and persist into ``out`` (or ``cfg.out``)."""
    out = out or cfg.out
    store = RecordStore(out) if out else None
    if store is not None:
        store.write_json("config.json", {"hash": cfg.config_hash(), **cfg.to_dict()})
    if cfg.kind == "nucleate":
        return nucleation_scan(cfg, store)
    if cfg.kind == "catalyst":
        return catalyst_ab(cfg, store)
    if cfg.kind == "grow":
        return plant_and_grow(cfg, store=store)
    return conductive_grid_experiment(cfg, store)
