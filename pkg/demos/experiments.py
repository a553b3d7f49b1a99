"""
Experiments: planted droplets and a catalyst A/B
================================================

Small versions of the harness runs. A droplet well above the critical size
grows, one well below shrinks; carving a cone speeds up nucleation in its
mouth when both arms read the same noise.
"""

import math

from diluteising import harness as H

cfg = H.ExperimentConfig(kind="grow", size=48, beta=1.5, h=[0.3], seeds=8, t_cap=400.0)
rep = H.plant_and_grow(cfg.validate(), ["1.5*B_root", "0.5*B_c"])
for row in rep.rows:
    print(f"b/B_c={row['b_over_B_c']:.2f}: grew {row['grew']}, shrank {row['shrank']}, "
          f"censored {row['censored']}")

cfg = H.ExperimentConfig(kind="catalyst", size=40, beta=1.5, h=[0.3], theta=math.pi / 2,
                         seeds=8, t_cap=5000.0, bootstrap=200)
ab = H.catalyst_ab(cfg.validate())
print(f"carved arm not slower in {ab.frac_not_larger:.0%} of pairs, "
      f"median ratio {ab.median_ratio:.3f}, verdict: {ab.verdict}")
