"""Quadratic mirror maps assembled from public data.

For least squares the public loss Psi(theta) = mean 0.5 (y - <x, theta>)^2 has
the constant Hessian H = X^T X / n, so a mirror-descent step reduces to
applying the inverse of (a regularized, rescaled copy of) H to the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from pdadpmd import core


class NotPositiveDefiniteError(np.linalg.LinAlgError):
  pass


def build_public_hessian(pub_data: core.RegressionDataset) -> np.ndarray:
  """Hessian of the mean half-squared public loss, (1/n) X^T X."""
  x = pub_data.features
  h = (x.T @ x) / pub_data.n
  return 0.5 * (h + h.T)


def default_ridge(hessian: np.ndarray) -> float:
  """A ridge of 1e-6 times the mean eigenvalue of ``hessian``."""
  hessian = np.asarray(hessian, dtype=float)
  return 1e-6 * float(np.trace(hessian)) / hessian.shape[0]


@dataclass(frozen=True, eq=False)
class QuadraticMirrorMap:
  """Mirror map Psi(theta) = 0.5 theta^T M theta for an SPD matrix M.

  ``matrix`` is M = (hessian + gamma I) / normalizer. The eigendecomposition of
  M is computed once and used for solves, so ``eigenvalues`` (ascending) and the
  columns of ``eigenvectors`` are always available.
  """

  hessian: np.ndarray
  gamma: float
  normalizer: float
  matrix: np.ndarray
  eigenvalues: np.ndarray
  eigenvectors: np.ndarray

  @classmethod
  def from_spd(cls, matrix, gamma: float = 0.0,
               normalizer: float = 1.0) -> "QuadraticMirrorMap":
    """Wraps an SPD matrix as-is (no ridge or rescaling applied)."""
    m = np.array(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
      raise ValueError(f"mirror map matrix must be square, got {m.shape}")
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12 * np.abs(m).max()):
      raise ValueError("mirror map matrix must be symmetric")
    m = 0.5 * (m + m.T)
    lam, vecs = np.linalg.eigh(m)
    _check_pd(lam)
    for a in (m, lam, vecs):
      a.setflags(write=False)
    return cls(hessian=m, gamma=gamma, normalizer=normalizer, matrix=m,
               eigenvalues=lam, eigenvectors=vecs)

  @property
  def p(self) -> int:
    return self.matrix.shape[0]

  def apply(self, v) -> np.ndarray:
    return self.matrix @ np.asarray(v, dtype=float)

  def inverse_apply(self, v) -> np.ndarray:
    return inverse_apply(self, v)

  def potential(self, theta) -> float:
    theta = core.as_model_vector(theta, self.p)
    return 0.5 * float(theta @ self.matrix @ theta)

  def potential_gradient(self, theta) -> np.ndarray:
    return self.matrix @ core.as_model_vector(theta, self.p)

  def bregman(self, a, b) -> float:
    return bregman(self, a, b)


def _check_pd(eigenvalues: np.ndarray):
  lam_max = float(np.max(np.abs(eigenvalues)))
  tol = eigenvalues.shape[0] * np.finfo(float).eps * max(lam_max, 1e-300)
  if eigenvalues[0] <= tol:
    raise NotPositiveDefiniteError(
        f"matrix is not positive definite: smallest eigenvalue "
        f"{eigenvalues[0]:.3e} <= tolerance {tol:.3e}")


def regularize_normalize(hessian, gamma: float | None = None,
                         normalize: bool = True) -> QuadraticMirrorMap:
  """Adds ``gamma * I`` and rescales so the smallest eigenvalue is one.

  After rescaling, the inverse (the matrix that multiplies gradients in the
  mirror step) has largest eigenvalue exactly one, so a multiple of the
  identity turns the mirror step back into a plain gradient step.

  Args:
    hessian: Symmetric PSD matrix.
    gamma: Ridge added to the diagonal. ``None`` uses :func:`default_ridge`.
    normalize: If False, skip the rescaling (normalizer 1).

  Raises:
    NotPositiveDefiniteError: if hessian + gamma I is not positive definite.
  """
  h = np.array(hessian, dtype=float)
  if h.ndim != 2 or h.shape[0] != h.shape[1]:
    raise ValueError(f"hessian must be square, got shape {h.shape}")
  scale = max(float(np.abs(h).max()), 1e-300)
  if not np.allclose(h, h.T, rtol=0, atol=1e-10 * scale):
    raise ValueError("hessian must be symmetric")
  h = 0.5 * (h + h.T)
  if gamma is None:
    gamma = default_ridge(h)
  if gamma < 0:
    raise ValueError(f"gamma must be >= 0, got {gamma}")
  shifted = h + gamma * np.eye(h.shape[0])
  lam, vecs = np.linalg.eigh(shifted)
  _check_pd(lam)
  c = float(lam[0]) if normalize else 1.0
  m = shifted / c
  lam = lam / c
  for a in (h, m, lam, vecs):
    a.setflags(write=False)
  return QuadraticMirrorMap(hessian=h, gamma=float(gamma), normalizer=c,
                            matrix=m, eigenvalues=lam, eigenvectors=vecs)


def inverse_apply(mirror_map: QuadraticMirrorMap, v) -> np.ndarray:
  """M^{-1} v through the cached eigendecomposition.

  ``v`` may be a vector of length p or a p x k matrix of column vectors.
  """
  v = np.asarray(v, dtype=float)
  if v.shape[0] != mirror_map.p:
    raise ValueError(f"dimension {v.shape[0]} != map dimension {mirror_map.p}")
  q = mirror_map.eigenvectors
  coef = q.T @ v
  if v.ndim == 1:
    return q @ (coef / mirror_map.eigenvalues)
  return q @ (coef / mirror_map.eigenvalues[:, None])


def bregman(mirror_map: QuadraticMirrorMap, a, b) -> float:
  """Bregman divergence of the quadratic map: 0.5 (a-b)^T M (a-b)."""
  a = core.as_model_vector(a, mirror_map.p)
  b = core.as_model_vector(b, mirror_map.p)
  d = a - b
  return max(0.5 * float(d @ mirror_map.matrix @ d), 0.0)


def public_optimum(pub_data: core.RegressionDataset,
                   gamma: float = 0.0) -> np.ndarray:
  """Minimizer of the public loss plus (gamma/2) ||theta||^2.

  Solves (X^T X + gamma n I) theta = X^T y as a stacked least-squares problem,
  which avoids squaring the condition number of X.

  Raises:
    np.linalg.LinAlgError: if gamma is zero and X lacks full column rank.
  """
  if gamma < 0:
    raise ValueError(f"gamma must be >= 0, got {gamma}")
  x, y = pub_data.features, pub_data.responses
  n, p = x.shape
  if gamma > 0:
    x = np.vstack([x, np.sqrt(gamma * n) * np.eye(p)])
    y = np.concatenate([y, np.zeros(p)])
  theta, _, rank, _ = scipy.linalg.lstsq(x, y, lapack_driver="gelsd")
  if rank < p:
    raise np.linalg.LinAlgError(
        f"public design has rank {rank} < p = {p}; use a positive ridge")
  return theta


def ridged_public_gradient(theta, pub_data: core.RegressionDataset,
                           gamma: float = 0.0) -> np.ndarray:
  return core.batch_gradient(theta, pub_data) + gamma * np.asarray(theta)


def gaussian_width_mc(radii, samples: int, rng: core.RngStream,
                      chunk: int = 8192) -> float:
  """Monte Carlo Gaussian width of an axis-aligned ellipsoid.

  For the ellipsoid with semi-axes ``radii``, max_{x in Q} <g, x> equals
  sqrt(sum_i (r_i g_i)^2), so the width is estimated by averaging that over
  standard normal draws g.
  """
  r = np.asarray(radii, dtype=float).reshape(-1)
  if samples < 1:
    raise ValueError(f"samples must be >= 1, got {samples}")
  if np.any(r < 0):
    raise ValueError("radii must be nonnegative")
  total = 0.0
  done = 0
  while done < samples:
    k = min(chunk, samples - done)
    g = rng.normal(size=(k, r.shape[0]))
    total += float(np.sqrt(((g * r) ** 2).sum(axis=1)).sum())
    done += k
  return total / samples


def spectral_sandwich(sample_hessian, population_hessian,
                      rtol: float = 1e-10) -> np.ndarray:
  """Eigenvalues of P^{-1/2} S P^{-1/2} on the range of P.

  ``P`` may be singular (the synthetic generator has directions with no
  variance). Directions with eigenvalue below ``rtol * lambda_max(P)`` are
  dropped, after checking that ``S`` has no mass there either.
  """
  s = np.asarray(sample_hessian, dtype=float)
  pop = np.asarray(population_hessian, dtype=float)
  lam, vecs = np.linalg.eigh(0.5 * (pop + pop.T))
  keep = lam > rtol * lam[-1]
  u = vecs[:, keep]
  null = vecs[:, ~keep]
  if null.shape[1]:
    leak = np.abs(null.T @ s @ null).max()
    if leak > 1e-8 * np.abs(s).max():
      raise ValueError("sample Hessian has mass outside the population range")
  w = u / np.sqrt(lam[keep])
  whitened = w.T @ s @ w
  return np.linalg.eigvalsh(0.5 * (whitened + whitened.T))
