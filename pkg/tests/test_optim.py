import math

import numpy as np
import pytest

from pdadpmd import core, dp, mirror, optim, stability
from conftest import make_dataset


def hand_clipped_mean(theta, x, y, clip_norm):
  total = np.zeros_like(theta)
  for xi, yi in zip(x, y):
    g = -(yi - xi @ theta) * xi
    n = math.sqrt(g @ g)
    total += g * min(1.0, clip_norm / n) if n > 0 else g
  return total / len(y)


X2 = np.array([[1.0, 0.5], [0.2, -1.0], [-0.7, 0.3]])
Y2 = np.array([1.0, -0.5, 2.0])
PRIV2 = core.RegressionDataset(X2, Y2)


def test_alpha_schedule_examples():
  assert optim.alpha_schedule(0, 10) == 1.0
  assert optim.alpha_schedule(10, 10) == 0.0
  assert optim.alpha_schedule(5, 10) == pytest.approx(math.sqrt(2) / 2,
                                                       rel=1e-15)
  assert optim.alpha_schedule(25, 10) == 0.0
  assert optim.alpha_schedule(1000, None) == 1.0
  assert optim.alpha_schedule(1000, math.inf) == 1.0
  vals = [optim.alpha_schedule(t, 7) for t in range(20)]
  assert all(0.0 <= a <= 1.0 for a in vals)
  assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_warm_start_examples():
  g = np.random.default_rng(0)
  x = g.normal(size=(40, 6))
  theta = g.normal(size=6)
  exact = core.RegressionDataset(x, x @ theta, core.Visibility.PUBLIC)
  assert core.batch_loss(optim.warm_start(exact), exact) < 1e-20
  y = np.array([2.0, -1.0, 0.25])
  ident = core.RegressionDataset(np.eye(3), y, core.Visibility.PUBLIC)
  np.testing.assert_allclose(optim.warm_start(ident), y, rtol=1e-12)
  pub = make_dataset(100, 10, seed=3, visibility=core.Visibility.PUBLIC)
  t0 = optim.warm_start(pub)
  assert np.linalg.norm(core.batch_gradient(t0, pub)) <= 1e-6


def test_warm_start_general_loss_path():
  pub = make_dataset(100, 10, seed=3, visibility=core.Visibility.PUBLIC)
  t0 = optim.warm_start(pub, batch_grad=core.batch_gradient, lr=5.0)
  assert np.linalg.norm(core.batch_gradient(t0, pub)) <= 1e-6
  np.testing.assert_allclose(t0, optim.warm_start(pub), atol=1e-4)
  with pytest.raises(optim.ConvergenceError):
    optim.warm_start(pub, batch_grad=core.batch_gradient, lr=1e-6,
                     max_iter=10)


def test_dp_sgd_two_step_replay():
  sigma, clip_norm, eta = 0.3, 0.8, 0.5
  theta0 = np.array([0.1, -0.2])
  cfg = dp.PrivacyConfig.from_sigma(sigma, clip_norm=clip_norm)
  res = optim.dp_sgd(PRIV2, theta0, cfg,
                     optim.OptimizerConfig(learning_rate=eta, steps=2),
                     core.RngStream(42, 1))
  gen = core.RngStream(42, 1).generator
  theta = theta0.copy()
  for _ in range(2):
    b = gen.normal(size=2) * sigma
    theta = theta - eta * (hand_clipped_mean(theta, X2, Y2, clip_norm) + b)
  np.testing.assert_allclose(res.theta, theta, rtol=0, atol=1e-14)
  assert len(res.private_losses) == 2


def test_pda_exact_one_step_replay():
  sigma, eta = 0.5, 0.7
  theta0 = np.array([0.3, 0.1])
  diag = np.array([1.0, 3.0])
  m = mirror.QuadraticMirrorMap.from_spd(np.diag(diag))
  cfg = dp.PrivacyConfig.from_sigma(sigma, clip_norm=1.0)
  res = optim.pda_dpmd_exact(PRIV2, m, theta0, cfg,
                             optim.OptimizerConfig(learning_rate=eta, steps=1),
                             core.RngStream(7, 1))
  b = core.RngStream(7, 1).generator.normal(size=2) * sigma
  g = hand_clipped_mean(theta0, X2, Y2, 1.0)
  np.testing.assert_allclose(res.theta, theta0 - eta * (g + b) / diag,
                             atol=1e-14)


def test_first_order_two_step_replay():
  sigma, eta, K = 0.2, 0.4, 2
  pub = core.RegressionDataset([[1.0, 0.0], [0.5, 0.5]], [0.3, 0.1],
                               core.Visibility.PUBLIC)
  theta0 = np.array([0.0, 0.5])
  cfg = dp.PrivacyConfig.from_sigma(sigma, clip_norm=0.6)
  res = optim.pda_dpmd_first_order(
      PRIV2, pub, theta0, cfg,
      optim.OptimizerConfig(learning_rate=eta, steps=2, alpha_K=K),
      core.RngStream(3, 1))
  gen = core.RngStream(3, 1).generator
  theta = theta0.copy()
  xp, yp = pub.features, pub.responses
  for t in range(2):
    a = math.cos(math.pi * t / (2 * K))
    b = gen.normal(size=2) * sigma
    gpub = -(xp.T @ (yp - xp @ theta)) / 2
    theta = theta - eta * (a * (hand_clipped_mean(theta, X2, Y2, 0.6) + b)
                           + (1 - a) * gpub)
  np.testing.assert_allclose(res.theta, theta, atol=1e-10)


def test_zero_learning_rate_and_zero_steps():
  theta0 = np.array([0.4, -0.4])
  cfg = dp.PrivacyConfig.from_sigma(1.0, clip_norm=1.0)
  res = optim.dp_sgd(PRIV2, theta0, cfg,
                     optim.OptimizerConfig(learning_rate=0.0, steps=5),
                     core.RngStream(0))
  np.testing.assert_array_equal(res.theta, theta0)
  res = optim.dp_sgd(PRIV2, theta0, cfg,
                     optim.OptimizerConfig(steps=0, iterate_policy="average"),
                     core.RngStream(0))
  np.testing.assert_array_equal(res.theta, theta0)
  assert res.private_losses.size == 0


def _problem(p=20, n=300, seed=0):
  priv = make_dataset(n, p, seed=seed)
  pub = make_dataset(2 * p, p, seed=seed + 1, visibility=core.Visibility.PUBLIC)
  return priv, pub


def test_shared_seed_equivalences():
  priv, pub = _problem()
  theta0 = optim.warm_start(pub)
  cfg = dp.PrivacyConfig.calibrated(1.0, 1e-5, 0.5, 50, priv.n)
  opt = optim.OptimizerConfig(learning_rate=0.3, steps=50, keep_trajectory=True)
  base = optim.dp_sgd(priv, theta0, cfg, opt, core.RngStream(11, 1))
  ident = mirror.regularize_normalize(5.0 * np.eye(20), 0.0)
  exact = optim.pda_dpmd_exact(priv, ident, theta0, cfg, opt,
                               core.RngStream(11, 1))
  first = optim.pda_dpmd_first_order(priv, pub, theta0, cfg,
                                     opt.replace(alpha_K=None),
                                     core.RngStream(11, 1))
  assert np.abs(exact.trajectory - base.trajectory).max() <= 1e-10
  assert np.abs(first.trajectory - base.trajectory).max() <= 1e-10


def test_first_order_alpha_zero_is_public_gd():
  priv, pub = _problem()
  theta0 = np.zeros(20)
  cfg = dp.PrivacyConfig.from_sigma(100.0, clip_norm=1.0)
  opt = optim.OptimizerConfig(learning_rate=0.5, steps=10, alpha_K=1)
  rng = core.RngStream(0, 1)
  res = optim.pda_dpmd_first_order(priv, pub, theta0, cfg, opt, rng)
  # alpha is 1 at t = 0 and 0 afterwards: one noisy step, then public GD
  replay = core.RngStream(0, 1)
  theta = theta0 - 0.5 * dp.privatized_gradient(theta0, priv, cfg, replay)
  for _ in range(9):
    theta = theta - 0.5 * core.batch_gradient(theta, pub)
  np.testing.assert_allclose(res.theta, theta, atol=1e-12)
  # the noise stream advanced by exactly one draw
  assert rng.generator.normal() == replay.generator.normal()


@pytest.mark.parametrize("which", ["sgd", "exact", "first"])
def test_noise_free_monotone_decrease(which):
  priv, pub = _problem(p=10, n=200, seed=5)
  cfg = dp.PrivacyConfig.from_sigma(0.0, clip_norm=1e9)
  h_priv = priv.features.T @ priv.features / priv.n
  theta0 = np.zeros(10)
  if which == "sgd":
    eta = 0.9 / np.linalg.eigvalsh(h_priv)[-1]
    res = optim.dp_sgd(priv, theta0, cfg,
                       optim.OptimizerConfig(learning_rate=eta, steps=40),
                       core.RngStream(0))
  elif which == "exact":
    m = mirror.regularize_normalize(mirror.build_public_hessian(pub), 0.0)
    lam = np.linalg.eigvals(np.linalg.solve(m.matrix, h_priv)).real.max()
    res = optim.pda_dpmd_exact(
        priv, m, theta0, cfg,
        optim.OptimizerConfig(learning_rate=0.9 / lam, steps=40),
        core.RngStream(0))
  else:
    h_pub = pub.features.T @ pub.features / pub.n
    eta = 0.9 / max(np.linalg.eigvalsh(h_priv)[-1], np.linalg.eigvalsh(h_pub)[-1])
    res = optim.pda_dpmd_first_order(
        priv, pub, theta0, cfg,
        optim.OptimizerConfig(learning_rate=eta, steps=40, alpha_K=1e9),
        core.RngStream(0))
  losses = np.concatenate([[core.batch_loss(theta0, priv)],
                           res.private_losses])
  assert np.all(np.diff(losses) <= 1e-15)


def test_newton_step_lands_on_minimizer():
  priv, _ = _problem(p=8, n=100, seed=2)
  h = mirror.build_public_hessian(priv)
  m = mirror.QuadraticMirrorMap.from_spd(h)
  cfg = dp.PrivacyConfig.from_sigma(0.0, clip_norm=1e9)
  res = optim.pda_dpmd_exact(priv, m, np.zeros(8), cfg,
                             optim.OptimizerConfig(learning_rate=1.0, steps=1),
                             core.RngStream(0))
  np.testing.assert_allclose(res.theta, mirror.public_optimum(priv), atol=1e-9)


def test_projection_safety():
  priv, pub = _problem()
  cfg = dp.PrivacyConfig.from_sigma(5.0, clip_norm=1.0)
  r = 0.5
  opt = optim.OptimizerConfig(learning_rate=1.0, steps=30, projection_radius=r,
                              keep_trajectory=True)
  for res in (optim.dp_sgd(priv, np.zeros(20), cfg, opt, core.RngStream(1)),
              optim.pda_dpmd_first_order(priv, pub, np.zeros(20), cfg,
                                         opt.replace(alpha_K=10),
                                         core.RngStream(1))):
    assert np.linalg.norm(res.trajectory, axis=1).max() <= r + 1e-12


def test_average_iterate_policy():
  priv, _ = _problem()
  cfg = dp.PrivacyConfig.from_sigma(0.5, clip_norm=1.0)
  opt = optim.OptimizerConfig(learning_rate=0.2, steps=25,
                              iterate_policy="average", keep_trajectory=True)
  res = optim.dp_sgd(priv, np.zeros(20), cfg, opt, core.RngStream(2))
  np.testing.assert_allclose(res.theta, res.trajectory.mean(axis=0),
                             rtol=0, atol=1e-12)


def test_best_on_holdout_policy():
  priv, pub = _problem()
  hold = make_dataset(100, 20, seed=77)
  cfg = dp.PrivacyConfig.from_sigma(0.5, clip_norm=1.0)
  opt = optim.OptimizerConfig(learning_rate=0.2, steps=20,
                              iterate_policy="best_on_holdout",
                              keep_trajectory=True)
  res = optim.dp_sgd(priv, np.zeros(20), cfg, opt, core.RngStream(2),
                     holdout=hold)
  i = int(np.argmin(res.holdout_losses))
  if res.holdout_losses[i] < core.batch_loss(np.zeros(20), hold):
    np.testing.assert_array_equal(res.theta, res.trajectory[i])
  with pytest.raises(ValueError):
    optim.dp_sgd(priv, np.zeros(20), cfg, opt, core.RngStream(2))


def test_minibatch_mode_runs_and_is_deterministic():
  priv, _ = _problem()
  cfg = dp.PrivacyConfig.from_sigma(0.1, clip_norm=1.0)
  opt = optim.OptimizerConfig(learning_rate=0.2, steps=12, batch_size=64)
  a = optim.dp_sgd(priv, np.zeros(20), cfg, opt, core.RngStream(3, 1))
  b = optim.dp_sgd(priv, np.zeros(20), cfg, opt, core.RngStream(3, 1))
  np.testing.assert_array_equal(a.theta, b.theta)
  full = optim.dp_sgd(priv, np.zeros(20), cfg, opt.replace(batch_size=None),
                      core.RngStream(3, 1))
  assert not np.array_equal(a.theta, full.theta)


def test_batcher_epoch_covers_without_replacement():
  data = make_dataset(10, 2)
  b = optim._Batcher(data, 5, core.RngStream(0))
  rows = np.vstack([b.next().features, b.next().features])
  assert len({tuple(r) for r in rows}) == 10


def test_non_finite_iterate_raises():
  priv, _ = _problem()
  cfg = dp.PrivacyConfig.from_sigma(0.0, clip_norm=1e300)
  opt = optim.OptimizerConfig(learning_rate=1e300, steps=50)
  with pytest.raises(core.NonFiniteIterateError):
    optim.dp_sgd(priv, np.ones(20), cfg, opt, core.RngStream(0))


def test_dimension_checks():
  priv, _ = _problem()
  cfg = dp.PrivacyConfig.from_sigma(0.0, clip_norm=1.0)
  m = mirror.QuadraticMirrorMap.from_spd(np.eye(3))
  with pytest.raises(ValueError):
    optim.pda_dpmd_exact(priv, m, np.zeros(20), cfg, optim.OptimizerConfig(),
                         core.RngStream(0))
  with pytest.raises(ValueError):
    optim.OptimizerConfig(iterate_policy="median")
