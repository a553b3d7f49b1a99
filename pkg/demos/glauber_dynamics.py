"""
Heat-bath dynamics from shared noise
====================================

Each vertex owns a Poisson clock with uniform marks. Trajectories started
from ordered states stay ordered when they read the same noise, and coupling
from the past turns that into exact samples.
"""

import numpy as np

from diluteising import gibbs as G
from diluteising import glauber as D
from diluteising import lattice as L

region = L.LatticeRegion.box((16, 16))
env = L.gen_environment(region, 0.9, seed=0)
lo = G.GibbsSpec(env, 1.2, 0.2, L.BoundaryCondition.minus(region))
hi = G.GibbsSpec(env, 1.2, 0.4, L.BoundaryCondition.plus(region))
a, b, out = D.monotone_couple(-1, 1, lo, hi, 20.0, seed=4)
print(f"{out.events} events, ordering violations: {out.violations}")
print("magnetisations:", a.site_values().mean().round(3), b.site_values().mean().round(3))

# a perfect sample on a small box
small = L.LatticeRegion.box((4, 4))
spec = G.GibbsSpec(L.uniform_environment(small), 1.0, 0.2, L.BoundaryCondition.minus(small))
cfg = D.cftp_sample(spec, seed=3)
print("CFTP window:", cfg.window)
print(cfg.site_values().reshape(4, 4))

# nucleation from all minus: time until half the box is plus
big = L.LatticeRegion.box((24, 24))
spec = G.GibbsSpec(L.uniform_environment(big), 1.2, 0.5, L.BoundaryCondition.minus(big))
pred = D.LinearPredicate.plus_fraction(big, big.mask, 0.5)
times = [D.hitting_time(spec, pred, s, 1e4).time for s in range(8)]
print("hitting times:", np.round(times, 1))
