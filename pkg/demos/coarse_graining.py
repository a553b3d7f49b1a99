"""
Coarse graining a snapshot
==========================

Boxes of side K are good when one open cluster crosses them, links to its
neighbours, leaves only small debris and has the right density. Good boxes
inherit the spin of their crossing cluster as a phase label.
"""

import numpy as np

from diluteising import coarse as C
from diluteising import fk
from diluteising import gibbs as G
from diluteising import lattice as L
from diluteising import wulff as W

beta = 1.5
region = L.LatticeRegion.box((30, 30), origin=(-15, -15))
spec = G.GibbsSpec(L.uniform_environment(region), beta, 0.0, L.BoundaryCondition.plus(region))
gen = np.random.default_rng(0)
sigma = G.SpinConfig.constant(region, spec.boundary, 1)
for _ in range(20):
    omega, sigma = fk.sw_step(sigma, spec, gen)
mask = C.edge_mask_from_config(omega, fk.FKGraph.from_spec(spec), region)

sc = L.Scales(5 / 30, 30, 5)
ms = W.onsager_magnetization(beta)
cl = C.classify_boxes(sigma, mask, sc, 1.0, ms)
lab = C.phase_labels(cl, sigma)
print("labels (+1, -1, 0):", lab.counts())

# plant a minus column into the labels and count disjoint +/- paths
d = lab.as_dict()
for k in d:
    if k[1] == 0:
        d[k] = -1
print("max flow between phases:", C.max_disjoint_paths(d))

# the profile integral over the central box
box = L.Box((-0.25, -0.25), (0.25, 0.25))
print("profile integral:", round(C.profile_integral(sigma, sc, ms, box), 4))
