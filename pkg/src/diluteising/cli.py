"""Command-line entry point ``dilute``.

Subcommand groups: env, wulff, oracle, fk, glauber, cg, exp. Summaries go to
stdout as JSON (or CSV with ``--out`` where a table is produced).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import coarse, fk, gibbs, glauber, harness, lattice, wulff
from .errors import CFTPTimeout, InvalidParameter, InvariantViolation, OutOfBounds, ResourceError


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=harness._json_default)
    sys.stdout.write("\n")


def _write_csv(path, header, rows):
    if path is None:
        w = csv.writer(sys.stdout)
    else:
        fh = open(path, "w", newline="")
        w = csv.writer(fh)
    w.writerow(header)
    w.writerows(rows)
    if path is not None:
        fh.close()


def _boundary(region, kind):
    return lattice.BoundaryCondition.uniform(region, kind)


def _load_env(args):
    if args.env:
        return lattice.load_environment(args.env)
    region = lattice.LatticeRegion.box((args.size,) * args.dim, origin=(-(args.size // 2),) * args.dim)
    if args.p >= 1:
        return lattice.uniform_environment(region)
    return lattice.gen_environment(region, args.p, args.env_seed)


def _spec(args):
    env = _load_env(args)
    return gibbs.GibbsSpec(env, args.beta, args.h, _boundary(env.region, args.bc))


def _env_args(p):
    p.add_argument("--env", help="environment file written by 'env gen'")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--size", type=int, default=8, help="box side when no --env is given")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--env-seed", type=int, default=0)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--bc", default="minus", choices=["plus", "minus", "free"])


def _tau(args, d=2):
    return wulff.SurfaceTensionModel.parse(args.tau, d, args.beta)


def _mstar(args):
    return args.mstar if args.mstar is not None else wulff.onsager_magnetization(args.beta)


# ---------------------------------------------------------------------------
# env


def cmd_env_gen(args):
    region = lattice.LatticeRegion.box((args.size,) * args.dim, origin=(-(args.size // 2),) * args.dim)
    env = lattice.gen_environment(region, args.p, args.seed)
    if args.catalyst:
        parts = [float(x) for x in args.catalyst.split(",")]
        if len(parts) != 2 + args.dim:
            raise InvalidParameter("--catalyst expects theta,bmax followed by d anchor coordinates")
        theta, bmax = parts[:2]
        anchor = np.array(parts[2:], dtype=np.int64)
        scales = lattice.Scales.from_h(args.h, args.dim)
        env = lattice.carve_catalyst(env, theta, bmax, anchor, scales)
    lattice.save_environment(env, args.out)
    _emit({"out": args.out, "d": args.dim, "size": args.size, "p": args.p, "seed": args.seed,
           "open_fraction": float(env.edge_couplings().mean()), "carved": env.n_carved})


# ---------------------------------------------------------------------------
# wulff


def cmd_wulff(args):
    d = args.dim
    model = _tau(args, d)
    ms = _mstar(args)
    theta = args.theta
    if args.action == "curve":
        curve = wulff.energy_curve(model, theta, args.beta, ms)
        _write_csv(args.out, ["b", "energy"], curve.tolist())
    elif args.action == "critical":
        e = wulff.critical_values(model, theta, args.beta, ms)
        _write_csv(args.out, ["theta", "F1", "B_c", "B_root", "E_c", "diameter"],
                   [[theta, e.F1, e.B_c, e.B_root, e.E_c, e.diameter]])
    elif args.action == "lambda2":
        e = wulff.critical_values(model, theta, args.beta, ms)
        lam = wulff.lambda2(theta, e.E_c, args.cdil, d)
        _write_csv(args.out, ["theta", "E_c", "C_dil", "lambda2"], [[theta, e.E_c, args.cdil, lam]])
    else:
        grid = np.linspace(math.pi / args.grid, math.pi, args.grid)
        cd = None if args.cdil_geometric else args.cdil
        opt = wulff.optimize_theta(model, args.beta, ms, args.p, d, grid, C_dil=cd)
        rows = opt.table.tolist() + [[opt.theta, math.nan, math.nan, opt.lambda2]]
        _write_csv(args.out, ["theta", "E_c", "C_dil", "lambda2"], rows)


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args):
    spec = _spec(args)
    if args.action == "gibbs":
        ex = gibbs.exact_gibbs(spec)
        _emit({"logZ": ex.logZ, "marginals": ex.marginals().tolist(),
               "sites": spec.region.coords().tolist()})
    else:
        g = gibbs.exact_generator_gap(spec)
        _emit({"gap": g.gap, "detailed_balance_error": g.detailed_balance_error})


# ---------------------------------------------------------------------------
# fk


def cmd_fk(args):
    if args.action == "tau":
        strip = fk.strip_geometry(args.L, args.H, args.N, d=args.dim)
        env = lattice.gen_environment(strip.region, args.p, args.env_seed) if args.p < 1 else \
            lattice.uniform_environment(strip.region)
        est = fk.tau_estimator(env, args.beta, strip, method=args.method, sweeps=args.sweeps,
                               seed=args.seed)
        _emit({"tau": est.tau, "stderr": est.stderr, "prob": est.prob, "no_event": est.no_event,
               "method": est.method, "sites": strip.region.n_vertices})
        return
    spec = _spec(args)
    if args.action == "sw":
        run = fk.sw_chain(spec, args.sweeps, args.seed, burn=args.burn, ghost=args.h > 0,
                          histogram=False)
        _emit({"sweeps": args.sweeps, "final_magnetization": float(run.spins.mean())})
    else:
        rep = fk.es_equivalence_check(spec)
        _emit({"ok": rep.ok, "max_marginal_error": rep.max_marginal_error,
               "max_config_error": rep.max_config_error, "n_sites": rep.n_sites,
               "n_edges": rep.n_edges})
        if not rep.ok:
            raise InvariantViolation("Edwards-Sokal check failed")


# ---------------------------------------------------------------------------
# glauber


def cmd_glauber(args):
    spec = _spec(args)
    region = spec.region
    if args.action == "run":
        times = ()
        if args.snapshot_every:
            k = int(math.floor(args.tcap / args.snapshot_every + 1e-9))
            times = tuple(args.snapshot_every * i for i in range(1, k + 1))
        start = 1 if args.start == "plus" else -1
        tr = glauber.run(None, spec, start=start, t_end=args.tcap, seed=args.seed,
                         snapshot_times=times)
        snaps = [(t, gibbs.SpinConfig(region, a, spec.boundary)) for t, a in tr.snapshots]
        files = []
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            for i, (t, cfg) in enumerate(snaps):
                path = os.path.join(args.out, f"snap_{i:05d}.npz")
                gibbs.save_spin_config(cfg, path, t=t)
                files.append(path)
            path = os.path.join(args.out, "final.npz")
            gibbs.save_spin_config(tr.final, path, t=args.tcap)
            files.append(path)
        _emit({"events": tr.events, "t_end": tr.t_end,
               "final_magnetization": tr.final.magnetization(),
               "snapshot_magnetization": [[t, c.magnetization()] for t, c in snaps],
               "files": files})
    elif args.action == "cftp":
        s = glauber.cftp_sample(spec, args.seed)
        if args.out:
            gibbs.save_spin_config(s, args.out)
        _emit({"window": s.window, "magnetization": s.magnetization(), "out": args.out})
    elif args.action == "gap":
        g = glauber.gap_estimate(spec, budget=args.tcap, chains=args.chains, seed=args.seed,
                                 method=args.method)
        _emit({"gap": g.value, "stderr": g.stderr, "tau_int": g.tau_int, "flagged": g.flagged,
               "method": g.method})
    else:
        window = np.ones(region.shape, dtype=bool) & region.mask
        if args.window:
            c = region.ambient_coords()
            half = args.window / 2.0
            window &= np.all((c >= -half) & (c < half), axis=1).reshape(region.shape)
        pred = glauber.LinearPredicate.plus_fraction(region, window, args.frac)
        res = glauber.hitting_time(spec, pred, args.seed, args.tcap)
        _emit({"time": res.time, "censored": res.censored})


# ---------------------------------------------------------------------------
# coarse graining


def cmd_cg(args):
    sigma, omega = gibbs.load_spin_config(args.snapshot)
    region = sigma.region
    if omega is None:
        if args.beta is None:
            raise InvalidParameter("snapshot has no FK edges; pass --beta to sample them")
        env = lattice.uniform_environment(region)
        spec = gibbs.GibbsSpec(env, args.beta, 0.0, sigma.boundary)
        graph = fk.FKGraph.from_spec(spec)
        om = fk.sample_edges(sigma.site_values(), graph, np.random.default_rng(args.seed), ghost=False)
        omega = coarse.edge_mask_from_config(om, graph, region)
    scales = lattice.Scales(1.0 / args.N, args.N, args.K) if args.N else lattice.Scales(1.0, args.K, args.K)
    eps = 1.0 if args.action != "classify" else args.eps
    cls = coarse.classify_boxes(sigma, omega, scales, eps, args.mstar)
    out = {"K": args.K, "eps": eps, "m_star": args.mstar, "n_boxes": len(cls.indices),
           "n_interior": int(cls.interior.sum()), "n_good": int(cls.good.sum()),
           "cond_i": int(cls.cond_i.sum()), "cond_ii": int(cls.cond_ii.sum()),
           "cond_iii": int(cls.cond_iii.sum())}
    if args.action == "classify":
        out["boxes"] = [{"index": i.tolist(), "good": bool(g), "density": float(dn)}
                        for i, g, dn in zip(cls.indices, cls.good, cls.density)]
    else:
        lab = coarse.phase_labels(cls, sigma)
        out["counts"] = {str(k): v for k, v in lab.counts().items()}
        if args.action == "labels":
            out["labels"] = [[*i.tolist(), int(l)] for i, l in zip(lab.indices, lab.labels)]
        else:
            model = wulff.SurfaceTensionModel.parse(args.tau, region.d, 1.0)
            shape = wulff.wulff_shape(model, 2 * math.pi, args.b2)
            layers = coarse.wulff_layers(shape, args.b1, args.b2, scales)
            res = coarse.spanning_and_flow(lab, layers)
            out.update({"spanning": res.is_spanning, "flow": res.flow,
                        "layer_profile": res.profile.tolist()})
    _emit(out)


# ---------------------------------------------------------------------------
# experiments


def cmd_exp(args):
    cfg = harness.ExperimentConfig.from_toml(args.config)
    cfg.kind = args.action
    cfg.validate()
    rep = harness.run_experiment(cfg, args.out)
    if args.action in ("nucleate", "catalyst"):
        _emit(rep.summary())
    elif args.action == "grow":
        _emit({"rows": rep.rows})
    else:
        _emit({"path_fraction": rep.path_fraction, "speed": rep.speed,
               "cell_side": rep.cell_side, "period": rep.period})


def build_parser():
    ap = argparse.ArgumentParser(prog="dilute", description="Dilute Ising metastability toolkit")
    sub = ap.add_subparsers(dest="group", required=True)

    env = sub.add_parser("env", help="quenched environments")
    es = env.add_subparsers(dest="action", required=True)
    g = es.add_parser("gen")
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--size", type=int, required=True)
    g.add_argument("--p", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--catalyst", help="theta,bmax,a1,...,ad")
    g.add_argument("--h", type=float, default=0.3, help="field fixing the scales of the catalyst")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_env_gen)

    w = sub.add_parser("wulff", help="Wulff shapes and droplet energetics")
    w.add_argument("action", choices=["curve", "critical", "lambda2", "opt-theta"])
    w.add_argument("--tau", default="iso:1")
    w.add_argument("--beta", type=float, default=1.0)
    w.add_argument("--mstar", type=float)
    w.add_argument("--theta", type=float, default=2 * math.pi)
    w.add_argument("--cdil", type=float, default=0.0)
    w.add_argument("--cdil-geometric", action="store_true")
    w.add_argument("--p", type=float, default=0.9)
    w.add_argument("--dim", type=int, default=2)
    w.add_argument("--grid", type=int, default=24)
    w.add_argument("--out")
    w.set_defaults(fn=cmd_wulff)

    o = sub.add_parser("oracle", help="exact enumeration on small regions")
    o.add_argument("action", choices=["gibbs", "gap"])
    _env_args(o)
    o.set_defaults(fn=cmd_oracle, size=3)

    f = sub.add_parser("fk", help="random-cluster tools")
    f.add_argument("action", choices=["sw", "tau", "escheck"])
    _env_args(f)
    f.add_argument("--sweeps", type=int, default=10000)
    f.add_argument("--burn", type=int, default=100)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--L", type=float, default=3.0)
    f.add_argument("--H", type=float, default=2.0)
    f.add_argument("--N", type=int, default=1)
    f.add_argument("--method", default="exact", choices=["exact", "mc"])
    f.set_defaults(fn=cmd_fk)

    gl = sub.add_parser("glauber", help="graphical-construction dynamics")
    gl.add_argument("action", choices=["run", "cftp", "gap", "hit"])
    _env_args(gl)
    gl.add_argument("--seed", type=int, default=0)
    gl.add_argument("--tcap", type=float, default=100.0)
    gl.add_argument("--snapshot-every", type=float, default=0.0)
    gl.add_argument("--start", default="minus", choices=["plus", "minus"])
    gl.add_argument("--chains", type=int, default=8)
    gl.add_argument("--method", default="auto", choices=["mc", "exact", "auto"])
    gl.add_argument("--window", type=int, default=0)
    gl.add_argument("--frac", type=float, default=0.5)
    gl.add_argument("--out")
    gl.set_defaults(fn=cmd_glauber)

    c = sub.add_parser("cg", help="coarse graining of a spin snapshot")
    c.add_argument("action", choices=["classify", "labels", "flow"])
    c.add_argument("--snapshot", required=True)
    c.add_argument("--K", type=int, required=True)
    c.add_argument("--N", type=int, default=0, help="macroscopic scale (multiple of K)")
    c.add_argument("--eps", type=float, default=1.0)
    c.add_argument("--mstar", type=float, required=True)
    c.add_argument("--beta", type=float, help="sample FK edges when the snapshot has none")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tau", default="iso:1")
    c.add_argument("--b1", type=float, default=0.5)
    c.add_argument("--b2", type=float, default=1.0)
    c.set_defaults(fn=cmd_cg)

    e = sub.add_parser("exp", help="experiments from a TOML config")
    e.add_argument("action", choices=list(harness.KINDS))
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_exp)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    except (InvalidParameter, OutOfBounds, ResourceError, CFTPTimeout) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
