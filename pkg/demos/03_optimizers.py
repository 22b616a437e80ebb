"""DP-SGD from cold and warm starts against PDA-DPMD on one dataset."""

import numpy as np

from pdadpmd import core, dp, mirror, optim, synth

cfg = synth.SynthConfig(p=200, seed=1)
pub, priv, theta_star = synth.gen_split(cfg)
eval_set = synth.gen_dataset(10_000, theta_star, cfg,
                             core.RngStream(1, core.STREAM_EVAL))

epochs, clip = 50, 0.03
privacy = dp.PrivacyConfig.calibrated(1.0, 1e-5, clip, epochs, priv.n)
print(f"sigma = {privacy.sigma:.3e} for {epochs} full-batch steps")

h = mirror.build_public_hessian(pub)
gamma = mirror.default_ridge(h)
theta_warm = optim.warm_start(pub, gamma)
theta_cold = core.RngStream(1, core.STREAM_INIT).normal(size=cfg.p) * 0.01
mmap = mirror.regularize_normalize(h)


def report(name, res):
  print(f"{name:>16}: eval MSE {core.reported_loss(res.theta, eval_set):.5f}")


sgd = optim.OptimizerConfig(learning_rate=30.0, steps=epochs)
print(f"{'start (warm)':>16}: eval MSE {core.reported_loss(theta_warm, eval_set):.5f}")
report("cold DP-SGD", optim.dp_sgd(priv, theta_cold, privacy, sgd,
                                   core.RngStream(2, core.STREAM_NOISE)))
report("warm DP-SGD", optim.dp_sgd(priv, theta_warm, privacy, sgd,
                                   core.RngStream(2, core.STREAM_NOISE)))

# The normalized map is divided by its smallest eigenvalue, which here is the
# ridge, so useful step sizes are enormous.
pda = sgd.replace(learning_rate=3e7)
report("PDA-DPMD exact", optim.pda_dpmd_exact(
    priv, mmap, theta_warm, privacy, pda, core.RngStream(2, core.STREAM_NOISE)))

# The public gradient is not preconditioned, so its step must stay below
# 2 / lambda_max of the public Hessian (about 10 at p = 200). Mixing it in
# forces a smaller step than warm DP-SGD uses.
fo = sgd.replace(learning_rate=10.0, alpha_K=50)
report("PDA first-order", optim.pda_dpmd_first_order(
    priv, pub, theta_warm, privacy, fo, core.RngStream(2, core.STREAM_NOISE)))

print(f"{'oracle theta*':>16}: eval MSE {core.reported_loss(theta_star, eval_set):.5f}")
