"""Clipping, Gaussian noise, and the noise scale that buys (epsilon, delta)."""

import math

import numpy as np

from pdadpmd import core, dp, synth

# The noise scale grows with the clip norm, the number of releases T and
# 1/epsilon, and shrinks with the private sample size.
sigma = dp.calibrate_sigma(clip_norm=1.0, steps=100, epsilon=1.0, delta=1e-5,
                           n_private=1000)
print(f"sigma for L=1, T=100, eps=1, delta=1e-5, n=1000: {sigma:.6f}")
print(f"sigma^2 * (eps n)^2 / (8 L^2 T) = {sigma**2 * 1e6 / 800:.6f}"
      f"  vs ln(1/delta) = {math.log(1e5):.6f}")

for eps in (0.5, 1.0, 2.0, 8.0):
  s = dp.calibrate_sigma(1.0, 100, eps, 1e-5, 1000)
  print(f"  eps={eps:<4} sigma={s:.5f}")

# Clipping rescales long vectors onto the L-sphere and leaves short ones
# alone.
v = np.array([3.0, 4.0])
print("clip([3,4], 1)   =", dp.clip(v, 1.0))
print("clip([3,4], 10)  =", dp.clip(v, 10.0))

# A privatized gradient is the mean of clipped per-example gradients plus
# N(0, sigma^2 I).  Every random draw comes from a named stream.
cfg = synth.SynthConfig(p=50, n_private=2000, nnz_first_block=4,
                        nnz_last_block=8)
pub, priv, theta_star = synth.gen_split(cfg)
privacy = dp.PrivacyConfig.calibrated(epsilon=1.0, delta=1e-5, clip_norm=0.05,
                                      steps=20, n_private=priv.n)
print(privacy)

theta = np.zeros(cfg.p)
clean = dp.clipped_mean_gradient(theta, priv, privacy.clip_norm)
noisy = dp.privatized_gradient(theta, priv, privacy,
                               core.RngStream(0, core.STREAM_NOISE))
print(f"|clipped mean| = {np.linalg.norm(clean):.4f}, "
      f"|noise| = {np.linalg.norm(noisy - clean):.4f}, "
      f"expected |noise| ~ {privacy.sigma * math.sqrt(cfg.p):.4f}")
