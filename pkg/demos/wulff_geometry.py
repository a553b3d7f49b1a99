"""
Wulff shapes and droplet energetics
===================================

E(b) = b^(d-1) F(W(1)) - b^d beta m* |W(1)| peaks at the critical radius B_c
and crosses zero at B_root. Restricting the droplet to a cone of opening
theta shrinks both the surface and the volume.
"""

import math

import numpy as np

from diluteising import wulff as W

iso = W.SurfaceTensionModel.isotropic(1.0)
e = W.critical_values(iso, 2 * math.pi, 1.0, 1.0)
print(f"tau=1, beta m*=1: B_c={e.B_c:.6f} (sqrt pi={math.sqrt(math.pi):.6f}), "
      f"B_root={e.B_root:.6f}, E_c={e.E_c:.6f}")

# the Onsager tension at beta = 1.5 and the cost of droplets in cones
beta = 1.5
model = W.default_model(beta)
ms = W.onsager_magnetization(beta)
for theta in (math.pi / 4, math.pi / 2, math.pi, 2 * math.pi):
    c = W.critical_values(model, theta, beta, ms)
    print(f"theta={theta:.3f}: B_c={c.B_c:.3f} E_c={c.E_c:.3f}")

# a few points of the energy curve
curve = W.energy_curve(model, math.pi / 2, beta, ms)
for b, E in curve[::100]:
    print(f"  b={b:.3f}  E={E:+.3f}")

# cones trade a lower nucleation barrier against the price of carving them
grid = np.linspace(0.15, math.pi, 24)
for beta in (2.0, 4.0, 8.0):
    m = W.SurfaceTensionModel.isotropic(1.0, 2, beta)
    opt = W.optimize_theta(m, beta, 1.0, 0.5, theta_grid=grid)
    print(f"beta={beta}: best theta={opt.theta:.3f}, ratio to full space {opt.ratio:.4f}")
