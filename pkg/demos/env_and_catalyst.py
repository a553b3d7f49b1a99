"""
Quenched environments and a carved catalyst
===========================================

A dilute environment keeps each nearest-neighbour bond with probability p.
The bonds are drawn from a counter-based generator keyed on the bond's
coordinates, so a larger box reproduces a smaller one on the overlap.
"""

import math

import numpy as np

from diluteising import lattice as L
from diluteising import wulff as W

small = L.LatticeRegion.box((8, 8), pad=0)
big = L.LatticeRegion.box((16, 16), pad=0)
e_small = L.gen_environment(small, 0.7, seed=1)
e_big = L.gen_environment(big, 0.7, seed=1)
print("open fraction on 16x16:", e_big.edge_couplings().mean().round(3))

# the 8x8 couplings reappear inside the 16x16 box
# (the last row and column of slots point out of the small box)
print("extension stable:", np.array_equal(e_big.J[:7, :7], e_small.J[:7, :7]))

# scales come from the field: N ~ 1/h, K a mesoscopic block side
sc = L.Scales.from_h(0.3, 2)
print("scales at h=0.3:", sc)

# carve a quarter-plane cone sized to hold the critical droplet
beta = 1.5
model = W.default_model(beta)
ms = W.onsager_magnetization(beta)
b_max = W.b_max_for(model, math.pi / 2, beta, ms)[0]
region = L.LatticeRegion.box((40, 40), origin=(-20, -20))
env = L.uniform_environment(region)
carved = L.carve_catalyst(env, math.pi / 2, b_max, np.array([-3, 0]), sc, model)
print(f"b_max = {b_max:.3f}, carved bonds = {carved.n_carved}")

# environments serialise to a small binary blob
blob = L.dumps_environment(carved)
back = L.loads_environment(blob)
print("round trip:", np.array_equal(back.J, carved.J), len(blob), "bytes")
