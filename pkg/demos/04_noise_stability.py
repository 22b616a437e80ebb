"""Noise moves a mirror step least along high-curvature directions."""

import numpy as np

from pdadpmd import core, mirror, stability

rng = core.RngStream(4)
m = mirror.QuadraticMirrorMap.from_spd(stability.random_spd(10, rng.child(0),
                                                             condition=100))
print("eigenvalues:", np.round(m.eigenvalues, 2))

reports = stability.stability_sweep(
    m, eta=0.5, sigma=1.0,
    directions=stability.random_directions(10, 3, rng.child(1)),
    samples=100_000, rng=rng.child(2))
print(f"{'direction':>9} {'analytic':>10} {'monte carlo':>12} {'rel err':>8}")
for r in reports:
  print(f"{r.direction_id:>9} {r.analytic:10.5f} {r.monte_carlo:12.5f} "
        f"{r.relative_error:8.2%}")
