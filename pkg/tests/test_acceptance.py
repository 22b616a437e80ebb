"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the terminal summary.
"""

import math

import numpy as np
import pytest
import yaml
from scipy import special

from pdadpmd import cli, core, dp, fed, harness, mirror, optim, stability, synth
from conftest import make_dataset


def test_criterion_01_calibration_exactness(verdict):
  sigma = dp.calibrate_sigma(1, 100, 1, 1e-5, 1000)
  expected = 800 * math.log(1e5) / 1e6
  rel = abs(sigma**2 - expected) / expected
  verdict(1, "calibration exactness", rel <= 1e-12, f"rel err {rel:.2e}")


def test_criterion_02_mechanism_properties(verdict):
  g = np.random.default_rng(2)
  worst_norm = worst_idem = worst_dir = 0.0
  bad_scale = 0
  for p in (1, 10, 1000):
    v = g.normal(size=(10_000, p)) * 10.0 ** g.uniform(-3, 3, size=(10_000, 1))
    L = 10.0 ** g.uniform(-2, 2, size=10_000)
    for vi, li in zip(v, L):
      c = dp.clip(vi, li)
      nv, nc = np.linalg.norm(vi), np.linalg.norm(c)
      worst_norm = max(worst_norm, nc / li - 1.0)
      worst_idem = max(worst_idem, np.abs(dp.clip(c, li) - c).max())
      k = nc / nv
      bad_scale += not 0.0 < k <= 1.0 + 1e-15
      worst_dir = max(worst_dir, np.linalg.norm(c - k * vi) / nc)
  draws = dp.gaussian_noise(1_000_000, 1.0, core.RngStream(2, core.STREAM_NOISE))
  half = float(np.abs(draws).mean())
  half_rel = abs(half - math.sqrt(2 / math.pi)) / math.sqrt(2 / math.pi)
  ok = (worst_norm <= 1e-12 and worst_idem == 0.0 and bad_scale == 0
        and worst_dir <= 1e-12 and half_rel <= 0.01)
  verdict(2, "mechanism properties", ok,
          f"norm excess {worst_norm:.1e}, idempotence gap {worst_idem:.1e}, "
          f"direction err {worst_dir:.1e}, half-normal rel err {half_rel:.2e}")


def test_criterion_03_optimizer_equivalences(verdict):
  priv = make_dataset(500, 20, seed=3)
  pub = make_dataset(60, 20, seed=4, visibility=core.Visibility.PUBLIC)
  theta0 = optim.warm_start(pub)
  cfg = dp.PrivacyConfig.calibrated(1.0, 1e-5, 0.5, 50, priv.n)
  opt = optim.OptimizerConfig(learning_rate=0.5, steps=50,
                              keep_trajectory=True)
  base = optim.dp_sgd(priv, theta0, cfg, opt, core.RngStream(3, 1))
  ident = mirror.QuadraticMirrorMap.from_spd(np.eye(20))
  exact = optim.pda_dpmd_exact(priv, ident, theta0, cfg, opt,
                               core.RngStream(3, 1))
  first = optim.pda_dpmd_first_order(priv, pub, theta0, cfg,
                                     opt.replace(alpha_K=None),
                                     core.RngStream(3, 1))
  d1 = float(np.abs(exact.trajectory - base.trajectory).max())
  d2 = float(np.abs(first.trajectory - base.trajectory).max())
  verdict(3, "optimizer equivalences", d1 <= 1e-10 and d2 <= 1e-10,
          f"exact/identity {d1:.1e}, first-order/alpha=1 {d2:.1e}")


def test_criterion_04_noise_stability(verdict):
  rng = core.RngStream(4)
  worst = 0.0
  for k in range(5):
    r = rng.child(k)
    m = mirror.QuadraticMirrorMap.from_spd(
        stability.random_spd(20, r.child(0), condition=100))
    eig = m.eigenvectors[:, [0, 4, 9, 14, 17, 19]].T
    dirs = np.vstack([eig, stability.random_directions(20, 6, r.child(1))])
    reports = stability.stability_sweep(m, 0.5, 2.0, dirs, samples=100_000,
                                        rng=r.child(2),
                                        include_eigenvectors=False)
    assert len(reports) == 12
    worst = max(worst, max(rep.relative_error for rep in reports))
  ident = mirror.QuadraticMirrorMap.from_spd(np.eye(20))
  v = stability.random_directions(20, 1, rng.child(9))[0]
  mc = stability.monte_carlo_shift(ident, 0.5, 2.0, v, 100_000, rng.child(10))
  target = 0.5 * 2.0 * math.sqrt(2 / math.pi)
  ident_rel = abs(mc - target) / target
  verdict(4, "local noise stability", worst <= 0.02 and ident_rel <= 0.01,
          f"max rel err {worst:.2e} over 60 directions, identity {ident_rel:.2e}")


BENCHMARK_SPEC = harness.ExperimentSpec(
    dimensions=(200, 500, 1000),
    algorithms=("cold_sgd", "warm_sgd", "pda_exact"),
    grid=harness.Grid(learning_rates=(10.0, 30.0, 100.0, 300.0),
                      clip_norms=(0.03, 0.1), epochs=(20, 50)),
    grid_overrides={"pda_exact": {"learning_rates": (1e6, 3e6, 1e7, 3e7,
                                                     1e8)}},
    trials=10, epsilon=1.0, delta=1e-5)


@pytest.mark.slow
def test_criterion_05_benchmark_orderings(verdict, tmp_path):
  records = harness.run_experiment(BENCHMARK_SPEC, tmp_path / "benchmark.csv")
  rows = {(r.algorithm, r.p): r for r in harness.summarize(records)}
  dims = BENCHMARK_SPEC.dimensions
  for r in rows.values():
    print(f"  {r.algorithm:>9} p={r.p:<5} mean {r.mean_loss:.5f} "
          f"+/- {r.ci_half_width:.5f}  lr={r.lr:g} clip={r.clip:g} "
          f"epochs={r.epochs}")
  cold = [rows["cold_sgd", p].mean_loss for p in dims]
  warm = [rows["warm_sgd", p].mean_loss for p in dims]
  a = all(x < y for x, y in zip(cold, cold[1:]))
  b = max(warm) / min(warm) < 2.0
  c = all(rows["pda_exact", p].mean_loss <=
          rows["warm_sgd", p].mean_loss + rows["warm_sgd", p].ci_half_width
          for p in dims)
  pda = [rows["pda_exact", p].mean_loss for p in dims]
  verdict(5, "benchmark orderings", a and b and c,
          f"(a) cold {['%.4f' % x for x in cold]} increasing={a}; "
          f"(b) warm ratio {max(warm) / min(warm):.2f} < 2 {b}; "
          f"(c) pda {['%.4f' % x for x in pda]} <= warm+ci {c}")


def test_criterion_06_public_optimum(verdict):
  g = np.random.default_rng(6)
  worst = 0.0
  for _ in range(100):
    x = g.normal(size=(200, 20))
    y = g.normal(size=200) * 3 + x @ g.normal(size=20)
    data = core.RegressionDataset(x, y, core.Visibility.PUBLIC)
    theta = mirror.public_optimum(data, 0.0)
    worst = max(worst, float(np.linalg.norm(core.batch_gradient(theta, data))))
  verdict(6, "public optimum", worst <= 1e-6, f"max grad norm {worst:.1e}")


def test_criterion_07_gaussian_width(verdict):
  rng = core.RngStream(7)
  ball = mirror.gaussian_width_mc(np.ones(100), 100_000, rng.child(0))
  ball_exact = math.sqrt(2) * math.exp(special.gammaln(50.5) -
                                       special.gammaln(50))
  axis = np.zeros(100)
  axis[0] = 1.0
  line = mirror.gaussian_width_mc(axis, 100_000, rng.child(1))
  e1 = abs(ball - ball_exact) / ball_exact
  e2 = abs(line - math.sqrt(2 / math.pi)) / math.sqrt(2 / math.pi)
  verdict(7, "gaussian width", e1 <= 0.05 and e2 <= 0.05,
          f"ball {ball:.4f} vs {ball_exact:.4f}, axis {line:.4f} vs "
          f"{math.sqrt(2 / math.pi):.4f}")


def test_criterion_08_hessian_concentration(verdict):
  cfg = synth.SynthConfig(p=200, n_private=1)
  pop = synth.population_hessian(cfg)
  inside, lo, hi = 0, math.inf, 0.0
  for rep in range(20):
    rng = core.RngStream(core.derive_seed("concentration", rep), core.STREAM_DATA)
    pub, _, _ = synth.gen_split(cfg, rng)
    lam = mirror.spectral_sandwich(mirror.build_public_hessian(pub), pop)
    lo, hi = min(lo, lam.min()), max(hi, lam.max())
    inside += bool(lam.min() >= 0.5 and lam.max() <= 2.0)
  verdict(8, "public Hessian concentration at n_pub = 1.5p", inside >= 19,
          f"{inside}/20 repetitions inside [0.5, 2]; observed eigenvalue "
          f"range [{lo:.3f}, {hi:.3f}]")


def test_criterion_09_federated_properties(verdict):
  data = make_dataset(600, 20, seed=9)
  pop = fed.partition_clients(data, 20, 4, rng=core.RngStream(9))
  theta = np.full(20, 0.1)
  full = fed.FedConfig(clients_per_round=20, local_steps=1,
                       local_batch_size=None, client_lr=0.3, clip_norm=1e9,
                       sigma=0.0)
  out = fed.dp_fedavg_round(theta, pop, full, core.RngStream(0))
  step = theta - 0.3 * core.batch_gradient(theta, pop.private_data())
  d_sgd = float(np.abs(out - step).max())

  cfg = fed.FedConfig(clients_per_round=6, local_steps=3, client_lr=2.0,
                      clip_norm=0.05, sigma=0.4)
  worst = 0.0
  a = b = np.zeros(20)
  ra, rb = core.RngStream(1, 1), core.RngStream(1, 1)
  for t in range(30):
    parts = []
    a = fed.dp_fedavg_round(a, pop, cfg, ra, t, contributions=parts)
    b = fed.pda_dpmd_fed_round(b, pop, cfg, t, rb)
    worst = max(worst, max(np.linalg.norm(c) for c in parts) * 6 / 0.05)
  d_alpha = float(np.abs(a - b).max())
  ok = d_sgd <= 1e-10 and worst <= 1.0 + 1e-12 and d_alpha <= 1e-10
  verdict(9, "federated properties", ok,
          f"FedSGD gap {d_sgd:.1e}, max contribution {worst:.6f} L/m, "
          f"alpha=1 gap {d_alpha:.1e}")


def test_criterion_10_determinism(verdict, tmp_path):
  cfg = {
      "format_version": 1,
      "experiment": {"dimensions": [50], "trials": 2, "eval_samples": 1000,
                     "algorithms": list(harness.ALGORITHMS)},
      "grid": {"learning_rates": [10, 30], "clip_norms": [0.1],
               "epochs": [5], "alpha_Ks": [3]},
      "grid_overrides": {"pda_exact": {"learning_rates": [1e6]}},
      "synth": {"n_private": 1000, "nnz_first_block": 4,
                "nnz_last_block": 8},
  }
  config = tmp_path / "det.yaml"
  config.write_text(yaml.safe_dump(cfg))
  outs = []
  for name, extra in (("a.csv", []), ("b.csv", []),
                      ("c.csv", ["--workers", "2"])):
    rc = cli.main(["simulate", "--config", str(config), "--out",
                   str(tmp_path / name), *extra])
    assert rc == 0
    outs.append((tmp_path / name).read_bytes())
  verdict(10, "determinism", outs[0] == outs[1] == outs[2],
          f"{len(outs[0])} bytes, serial and 2-worker runs compared")
