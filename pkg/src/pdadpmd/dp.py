"""Clipping, Gaussian noise and noise-scale calibration."""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np

from pdadpmd import core


def _check_positive(**kwargs):
  for name, value in kwargs.items():
    if not (isinstance(value, (int, float, np.number)) and math.isfinite(value)
            and value > 0):
      raise ValueError(f"{name} must be positive and finite, got {value!r}")


def calibrate_sigma(clip_norm: float, steps: int, epsilon: float, delta: float,
                    n_private: int) -> float:
  """Gaussian noise scale for ``steps`` full-batch clipped-mean releases.

  Returns sigma with sigma^2 = 8 L^2 T ln(1/delta) / (epsilon n)^2, using the
  natural logarithm. The noise is added to the mean of clipped gradients, whose
  sensitivity is of order L / n.

  Args:
    clip_norm: Per-example clipping norm L.
    steps: Number of noisy gradient releases T.
    epsilon: Target epsilon.
    delta: Target delta, in (0, 1).
    n_private: Number of private examples averaged per release.

  Returns:
    The per-coordinate noise standard deviation.
  """
  _check_positive(clip_norm=clip_norm, steps=steps, epsilon=epsilon,
                  delta=delta, n_private=n_private)
  if delta >= 1:
    raise ValueError(f"delta must be < 1, got {delta!r}")
  return math.sqrt(8.0 * clip_norm**2 * steps * math.log(1.0 / delta)) / (
      epsilon * n_private)


def epsilon_for_sigma(sigma: float, clip_norm: float, steps: int, delta: float,
                      n_private: int) -> float:
  """Inverse of :func:`calibrate_sigma` in epsilon."""
  _check_positive(sigma=sigma, clip_norm=clip_norm, steps=steps, delta=delta,
                  n_private=n_private)
  return math.sqrt(8.0 * clip_norm**2 * steps * math.log(1.0 / delta)) / (
      sigma * n_private)


@dataclasses.dataclass(frozen=True)
class PrivacyConfig:
  """Privacy parameters of one private optimization run.

  Build with :meth:`calibrated` to derive ``sigma`` from (epsilon, delta), or
  with :meth:`from_sigma` to fix the noise scale directly. In the latter case
  ``epsilon`` is whatever the caller claims and ``epsilon_source`` says so.
  """

  epsilon: float
  delta: float
  clip_norm: float
  steps: int
  n_private: int
  sigma: float
  post_average_clip: bool = False
  epsilon_source: str = "calibrated"

  def __post_init__(self):
    if self.sigma < 0 or not math.isfinite(self.sigma):
      raise ValueError(f"sigma must be >= 0, got {self.sigma!r}")
    _check_positive(clip_norm=self.clip_norm)

  @classmethod
  def calibrated(cls, epsilon, delta, clip_norm, steps, n_private,
                 post_average_clip=False) -> "PrivacyConfig":
    sigma = calibrate_sigma(clip_norm, steps, epsilon, delta, n_private)
    return cls(epsilon, delta, clip_norm, steps, n_private, sigma,
               post_average_clip, "calibrated")

  @classmethod
  def from_sigma(cls, sigma, clip_norm, steps=1, n_private=1,
                 epsilon=float("nan"), delta=float("nan"),
                 post_average_clip=False) -> "PrivacyConfig":
    return cls(epsilon, delta, clip_norm, steps, n_private, sigma,
               post_average_clip, "externally supplied")

  def replace(self, **changes) -> "PrivacyConfig":
    return dataclasses.replace(self, **changes)


def clip(v, clip_norm: float) -> np.ndarray:
  """Scales ``v`` by min(1, L / ||v||_2). The zero vector maps to itself."""
  v = np.asarray(v, dtype=float)
  norm = np.linalg.norm(v)
  # Slack of a few ulps keeps clip idempotent on its own rounded output.
  if norm <= clip_norm * (1 + 4 * np.finfo(float).eps):
    return v.copy()
  return v * (clip_norm / norm)


def clip_rows(m: np.ndarray, clip_norm: float) -> np.ndarray:
  norms = np.linalg.norm(m, axis=1)
  scale = np.minimum(1.0, clip_norm / np.maximum(norms, np.finfo(float).tiny))
  return m * scale[:, None]


def gaussian_noise(p: int, sigma: float, rng: core.RngStream) -> np.ndarray:
  """p i.i.d. N(0, sigma^2) draws. A zero sigma still consumes the draws."""
  if p < 1:
    raise ValueError(f"p must be >= 1, got {p}")
  if sigma < 0:
    raise ValueError(f"sigma must be >= 0, got {sigma}")
  return rng.normal(size=p) * sigma


def clipped_mean_gradient(
    theta,
    data: core.RegressionDataset,
    clip_norm: float,
    per_example_grads: Optional[Callable] = None,
) -> np.ndarray:
  """Mean of per-example gradients, each clipped to norm ``clip_norm``.

  The default least-squares path never materializes the n x p gradient matrix:
  the per-example gradient is -r_i x_i, so its norm is |r_i| ||x_i||.
  """
  if data.n == 0:
    raise ValueError("empty dataset")
  if per_example_grads is not None:
    return clip_rows(np.asarray(per_example_grads(theta, data)),
                     clip_norm).mean(axis=0)
  r = core.residuals(theta, data)
  gnorm = np.abs(r) * data.row_norms
  scale = np.minimum(1.0, clip_norm / np.maximum(gnorm, np.finfo(float).tiny))
  return -(data.features.T @ (r * scale)) / data.n


def privatized_gradient(
    theta,
    data: core.RegressionDataset,
    cfg: PrivacyConfig,
    rng: core.RngStream,
    per_example_grads: Optional[Callable] = None,
) -> np.ndarray:
  """Clipped mean gradient plus N(0, sigma^2 I) noise.

  With ``cfg.post_average_clip`` the noiseless mean is clipped to the same
  norm before noise is added.
  """
  if data.visibility is not core.Visibility.PRIVATE:
    raise ValueError("privatized_gradient expects a private dataset")
  g = clipped_mean_gradient(theta, data, cfg.clip_norm, per_example_grads)
  if cfg.post_average_clip:
    g = clip(g, cfg.clip_norm)
  return g + gaussian_noise(g.shape[0], cfg.sigma, rng)
