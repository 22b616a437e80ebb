"""The public Hessian as a mirror map, and why it needs a ridge."""

import numpy as np

from pdadpmd import core, mirror, synth

cfg = synth.SynthConfig(p=200)
pub, priv, theta_star = synth.gen_split(cfg)
h = mirror.build_public_hessian(pub)
lam = np.linalg.eigvalsh(h)
print(f"public Hessian: n_pub={pub.n}, p={pub.p}")
print(f"  largest eigenvalue {lam[-1]:.3e}, smallest {lam[0]:.3e}")

# Every generated row has 40 entries in the first block and 80 in the
# second, all equal, so this direction is orthogonal to every feature vector.
m1 = cfg.first_block
null = np.concatenate([np.full(m1, 1 / cfg.nnz_first_block),
                       np.full(cfg.p - m1, -1 / cfg.nnz_last_block)])
null /= np.linalg.norm(null)
print(f"  max |<x, u>| over public rows: {np.abs(pub.features @ null).max():.1e}")

# The ridge keeps the map positive definite; normalizing makes its smallest
# eigenvalue one, so it is 1-strongly convex.
gamma = mirror.default_ridge(h)
m = mirror.regularize_normalize(h)
print(f"default ridge gamma = {gamma:.3e}")
print(f"normalized map: eigenvalues in [{m.eigenvalues[0]:.3f}, "
      f"{m.eigenvalues[-1]:.3e}]")

a, b = np.ones(cfg.p), np.zeros(cfg.p)
print(f"Bregman(1, 0) = {mirror.bregman(m, a, b):.3e} >= 0.5|a-b|^2 = "
      f"{0.5 * cfg.p:.1f}")

# The warm start minimizes the ridged public loss.
theta_pub = mirror.public_optimum(pub, gamma)
print(f"public optimum: loss on private data {core.reported_loss(theta_pub, priv):.5f}, "
      f"population loss {synth.population_loss(theta_pub, theta_star, cfg):.5f}")
