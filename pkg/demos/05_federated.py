"""DP-FedAvg and its public-data variant on synthetic regression clients."""

import numpy as np

from pdadpmd import core, fed, synth

cfg = synth.SynthConfig(p=200, n_private=40_000, seed=5)
_, data, theta_star = synth.gen_split(cfg)
pop = fed.partition_clients(data, n_clients=400, n_public_clients=20, cap=64,
                            rng=core.RngStream(5, core.STREAM_SAMPLING))
print(f"{pop.n_clients} private clients, {len(pop.public_clients)} public, "
      f"{pop.clients[0].n} examples each")
eval_set = synth.gen_dataset(5000, theta_star, cfg,
                             core.RngStream(5, core.STREAM_EVAL))

base = fed.FedConfig(rounds=100, clients_per_round=100, local_steps=4,
                     client_lr=5.0, server_lr=1.0, clip_norm=0.05, sigma=0.4)
print(f"noise std on the averaged delta: {base.noise_std:.2e}; "
      f"conservative epsilon at delta=1e-5: {base.epsilon(1e-5):.1f}")

for name, alg, K in (("DP-FedAvg", "dp_fedavg", None),
                     ("PDA-DPMD K=50", "pda_dpmd", 50),
                     ("PDA-DPMD K=200", "pda_dpmd", 200)):
  _, rows = fed.simulate(pop, base.replace(alpha_K=K), np.zeros(cfg.p),
                         core.RngStream(6, core.STREAM_NOISE), eval_set, alg)
  trace = "  ".join(f"{rows[t]['eval_loss']:.4f}" for t in (9, 49, 99))
  print(f"{name:>15}: eval MSE after 10/50/100 rounds  {trace}")
