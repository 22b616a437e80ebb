"""DP-SGD, exact PDA-DPMD for quadratic mirror maps, and its first-order form.

All three optimizers share one loop. At step t each draws exactly one noisy
clipped private gradient (``dp.privatized_gradient``) from the noise stream, so
runs with the same seed see the same noise sequence and can be compared
coordinate by coordinate.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional, Union

import numpy as np

from pdadpmd import core
from pdadpmd import dp
from pdadpmd import mirror

Schedule = Union[float, Callable[[int], float]]

ITERATE_POLICIES = ("final", "average", "best_on_holdout")


class ConvergenceError(RuntimeError):
  pass


@dataclasses.dataclass(frozen=True)
class OptimizerConfig:
  """Step schedule and bookkeeping shared by the optimizers.

  Attributes:
    learning_rate: Constant step size or a function of the step index.
    steps: Number of updates T.
    alpha_K: Horizon of the cosine private/public weight schedule. ``None``
      or ``math.inf`` keeps the weight at one.
    iterate_policy: Which iterate to return: the last one, the mean of
      theta_1..theta_T, or the one with the lowest holdout loss.
    batch_size: ``None`` for full-batch private gradients, else the minibatch
      size (batches drawn without replacement, reshuffled every epoch).
    public_batch_size: Same, for the public gradient of the first-order rule.
    projection_radius: Radius of the l2 ball iterates are projected onto.
    eval_stride: Record losses every this many steps (0 disables tracing).
    keep_trajectory: Store every iterate in the result.
  """

  learning_rate: Schedule = 1.0
  steps: int = 1
  alpha_K: Optional[float] = None
  iterate_policy: str = "final"
  batch_size: Optional[int] = None
  public_batch_size: Optional[int] = None
  projection_radius: Optional[float] = None
  eval_stride: int = 1
  keep_trajectory: bool = False

  def __post_init__(self):
    if self.iterate_policy not in ITERATE_POLICIES:
      raise ValueError(f"unknown iterate_policy {self.iterate_policy!r}")
    if self.steps < 0:
      raise ValueError(f"steps must be >= 0, got {self.steps}")
    if self.alpha_K is not None and not self.alpha_K >= 1:
      raise ValueError(f"alpha_K must be >= 1, got {self.alpha_K}")
    if self.eval_stride < 0:
      raise ValueError("eval_stride must be >= 0")

  def lr(self, t: int) -> float:
    if callable(self.learning_rate):
      return float(self.learning_rate(t))
    return float(self.learning_rate)

  def replace(self, **changes) -> "OptimizerConfig":
    return dataclasses.replace(self, **changes)


@dataclasses.dataclass
class RunResult:
  theta: np.ndarray
  private_losses: np.ndarray
  public_losses: np.ndarray
  sigma: float
  seed: int
  trajectory: Optional[np.ndarray] = None
  holdout_losses: Optional[np.ndarray] = None


def alpha_schedule(t: int, K: Optional[float]) -> float:
  """cos(pi t / (2K)) for t < K and 0 afterwards; 1 when K is None or inf."""
  if t < 0:
    raise ValueError(f"t must be >= 0, got {t}")
  if K is None or math.isinf(K):
    return 1.0
  if K < 1:
    raise ValueError(f"K must be >= 1, got {K}")
  if t >= K:
    return 0.0
  return math.cos(math.pi * t / (2.0 * K))


def project_l2(theta: np.ndarray, radius: Optional[float]) -> np.ndarray:
  if radius is None:
    return theta
  norm = np.linalg.norm(theta)
  if norm <= radius:
    return theta
  return theta * (radius / norm)


def warm_start(pub_data: core.RegressionDataset, gamma: float = 0.0,
               batch_grad: Optional[Callable] = None, theta0=None,
               lr: float = 1.0, tol: float = 1e-6,
               max_iter: int = 100_000) -> np.ndarray:
  """Minimizer of the public loss, the starting point of private training.

  Least squares is solved in closed form. For any other loss pass
  ``batch_grad(theta, pub_data)``; plain gradient descent then runs until the
  gradient norm drops to ``tol``.

  Raises:
    ConvergenceError: if the general-loss path exhausts ``max_iter``.
  """
  if batch_grad is None:
    return mirror.public_optimum(pub_data, gamma)
  theta = np.zeros(pub_data.p) if theta0 is None else np.array(theta0, float)
  for _ in range(max_iter):
    g = np.asarray(batch_grad(theta, pub_data)) + gamma * theta
    if np.linalg.norm(g) <= tol:
      return theta
    theta = core.check_finite(theta - lr * g)
  raise ConvergenceError(
      f"public pre-training did not reach gradient norm {tol} in {max_iter} "
      "iterations")


class _Batcher:
  """Yields minibatch views, reshuffling without replacement every epoch."""

  def __init__(self, data: core.RegressionDataset, size: Optional[int],
               rng: core.RngStream):
    self.data = data
    self.size = size
    self.rng = rng
    self.order = None
    self.pos = 0

  def next(self) -> core.RegressionDataset:
    if self.size is None or self.size >= self.data.n:
      return self.data
    if self.order is None or self.pos + self.size > self.data.n:
      self.order = self.rng.generator.permutation(self.data.n)
      self.pos = 0
    idx = np.sort(self.order[self.pos:self.pos + self.size])
    self.pos += self.size
    return self.data.subset(idx)


def _run(direction: Callable[[int, np.ndarray], np.ndarray], theta0,
         priv_data: core.RegressionDataset, priv_cfg: dp.PrivacyConfig,
         opt_cfg: OptimizerConfig, rng: core.RngStream,
         pub_data: Optional[core.RegressionDataset],
         holdout: Optional[core.RegressionDataset]) -> RunResult:
  theta = np.array(core.as_model_vector(theta0, priv_data.p), dtype=float)
  if opt_cfg.iterate_policy == "best_on_holdout" and holdout is None:
    raise ValueError("iterate_policy 'best_on_holdout' needs a holdout set")
  traj = [] if opt_cfg.keep_trajectory else None
  priv_l, pub_l, hold_l = [], [], []
  running_sum = np.zeros_like(theta)
  best_theta, best_loss = theta.copy(), math.inf
  if holdout is not None:
    best_loss = core.batch_loss(theta, holdout)
  stride = opt_cfg.eval_stride
  for t in range(opt_cfg.steps):
    step = direction(t, theta)
    theta = project_l2(theta - opt_cfg.lr(t) * step, opt_cfg.projection_radius)
    core.check_finite(theta, t)
    running_sum += theta
    if traj is not None:
      traj.append(theta.copy())
    if stride and ((t + 1) % stride == 0 or t + 1 == opt_cfg.steps):
      priv_l.append(core.batch_loss(theta, priv_data))
      if pub_data is not None:
        pub_l.append(core.batch_loss(theta, pub_data))
    if holdout is not None:
      h = core.batch_loss(theta, holdout)
      hold_l.append(h)
      if h < best_loss:
        best_loss, best_theta = h, theta.copy()
  if opt_cfg.iterate_policy == "average" and opt_cfg.steps > 0:
    out = running_sum / opt_cfg.steps
  elif opt_cfg.iterate_policy == "best_on_holdout":
    out = best_theta
  else:
    out = theta
  return RunResult(
      theta=out,
      private_losses=np.asarray(priv_l),
      public_losses=np.asarray(pub_l),
      sigma=priv_cfg.sigma,
      seed=rng.seed,
      trajectory=None if traj is None else np.asarray(traj).reshape(
          len(traj), theta.shape[0]),
      holdout_losses=np.asarray(hold_l) if holdout is not None else None,
  )


def _private_step_source(priv_data, priv_cfg, opt_cfg, rng, sampling_rng,
                         per_example_grads):
  batcher = _Batcher(priv_data, opt_cfg.batch_size,
                     sampling_rng or rng.child(core.STREAM_SAMPLING))

  def noisy_grad(theta):
    return dp.privatized_gradient(theta, batcher.next(), priv_cfg, rng,
                                  per_example_grads)

  return noisy_grad


def dp_sgd(priv_data: core.RegressionDataset, theta0,
           priv_cfg: dp.PrivacyConfig, opt_cfg: OptimizerConfig,
           rng: core.RngStream, *, pub_data=None, holdout=None,
           sampling_rng=None, per_example_grads=None) -> RunResult:
  """theta <- Proj(theta - eta_t (g_t + b_t)).

  ``pub_data`` is only used to trace the public loss.
  """
  noisy_grad = _private_step_source(priv_data, priv_cfg, opt_cfg, rng,
                                    sampling_rng, per_example_grads)
  return _run(lambda t, th: noisy_grad(th), theta0, priv_data, priv_cfg,
              opt_cfg, rng, pub_data, holdout)


def pda_dpmd_exact(priv_data: core.RegressionDataset,
                   mirror_map: mirror.QuadraticMirrorMap, theta0,
                   priv_cfg: dp.PrivacyConfig, opt_cfg: OptimizerConfig,
                   rng: core.RngStream, *, pub_data=None, holdout=None,
                   sampling_rng=None, per_example_grads=None) -> RunResult:
  """Mirror descent with a quadratic mirror map, solved in closed form.

  The mirror step argmin_theta eta <g + b, theta> + B(theta, theta_t) for
  Psi = 0.5 theta^T M theta is theta_t - eta M^{-1}(g + b).
  """
  if mirror_map.p != priv_data.p:
    raise ValueError(
        f"mirror map dimension {mirror_map.p} != data dimension {priv_data.p}")
  noisy_grad = _private_step_source(priv_data, priv_cfg, opt_cfg, rng,
                                    sampling_rng, per_example_grads)
  return _run(lambda t, th: mirror_map.inverse_apply(noisy_grad(th)), theta0,
              priv_data, priv_cfg, opt_cfg, rng, pub_data, holdout)


def pda_dpmd_first_order(priv_data: core.RegressionDataset,
                         pub_data: core.RegressionDataset, theta0,
                         priv_cfg: dp.PrivacyConfig, opt_cfg: OptimizerConfig,
                         rng: core.RngStream, *, holdout=None,
                         sampling_rng=None, per_example_grads=None,
                         public_grad: Optional[Callable] = None) -> RunResult:
  """theta <- theta - eta_t (alpha_t (g_t + b_t) + (1 - alpha_t) grad Psi).

  alpha_t follows :func:`alpha_schedule` with horizon ``opt_cfg.alpha_K``.
  When alpha_t is exactly zero the private gradient and its noise are skipped.
  """
  sampling_rng = sampling_rng or rng.child(core.STREAM_SAMPLING)
  noisy_grad = _private_step_source(priv_data, priv_cfg, opt_cfg, rng,
                                    sampling_rng, per_example_grads)
  pub_batcher = _Batcher(pub_data, opt_cfg.public_batch_size,
                         sampling_rng.child(core.STREAM_SAMPLING + 100))
  public_grad = public_grad or core.batch_gradient

  def direction(t, theta):
    a = alpha_schedule(t, opt_cfg.alpha_K)
    if a == 1.0:
      return noisy_grad(theta)
    pub_g = np.asarray(public_grad(theta, pub_batcher.next()))
    if a == 0.0:
      return pub_g
    return a * noisy_grad(theta) + (1.0 - a) * pub_g

  return _run(direction, theta0, priv_data, priv_cfg, opt_cfg, rng, pub_data,
              holdout)

