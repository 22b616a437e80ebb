"""Shared data types, the least-squares loss family and seeded randomness."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Visibility(str, Enum):
  PUBLIC = "public"
  PRIVATE = "private"


class NonFiniteIterateError(FloatingPointError):
  """Raised when an optimizer produces a NaN or infinite parameter vector."""


@dataclass(frozen=True, eq=False)
class RegressionDataset:
  """Feature matrix ``features`` (n x p) with responses ``responses`` (n,).

  The arrays are copied and marked read-only at construction so a dataset can
  be shared between threads and optimizer runs without defensive copies.
  """

  features: np.ndarray
  responses: np.ndarray
  visibility: Visibility = Visibility.PRIVATE
  row_norms: np.ndarray = field(init=False, repr=False, compare=False)

  def __post_init__(self):
    x = np.array(self.features, dtype=float, copy=True)
    y = np.array(self.responses, dtype=float, copy=True).reshape(-1)
    if x.ndim != 2:
      raise ValueError(f"features must be 2-D, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
      raise ValueError(f"dataset needs n >= 1 and p >= 1, got shape {x.shape}")
    if y.shape[0] != x.shape[0]:
      raise ValueError(
          f"responses length {y.shape[0]} != feature rows {x.shape[0]}")
    norms = np.linalg.norm(x, axis=1)
    for a in (x, y, norms):
      a.setflags(write=False)
    object.__setattr__(self, "features", x)
    object.__setattr__(self, "row_norms", norms)
    object.__setattr__(self, "responses", y)
    object.__setattr__(self, "visibility", Visibility(self.visibility))

  @property
  def n(self) -> int:
    return self.features.shape[0]

  @property
  def p(self) -> int:
    return self.features.shape[1]

  def subset(self, index) -> "RegressionDataset":
    return RegressionDataset(
        self.features[index], self.responses[index], self.visibility)

  def with_visibility(self, visibility) -> "RegressionDataset":
    return RegressionDataset(self.features, self.responses, visibility)


def as_model_vector(theta, p: int | None = None) -> np.ndarray:
  """Validates and returns ``theta`` as a 1-D float array."""
  theta = np.asarray(theta, dtype=float)
  if theta.ndim != 1:
    raise ValueError(f"model vector must be 1-D, got shape {theta.shape}")
  if p is not None and theta.shape[0] != p:
    raise ValueError(f"model dimension {theta.shape[0]} != data dimension {p}")
  return theta


def check_finite(theta: np.ndarray, step: int | None = None) -> np.ndarray:
  if not np.all(np.isfinite(theta)):
    where = "" if step is None else f" at step {step}"
    raise NonFiniteIterateError(f"non-finite model vector{where}")
  return theta


def derive_seed(*parts) -> int:
  """Hashes arbitrary printable parts into a 64-bit seed.

  Used so that every (trial, purpose) pair gets its own seed and changing one
  experiment axis leaves every other cell's seeds untouched.
  """
  h = hashlib.blake2b(digest_size=8)
  h.update(repr(tuple(parts)).encode())
  return int.from_bytes(h.digest(), "little")


@dataclass
class RngStream:
  """A numpy Generator pinned to a (seed, stream id) pair.

  Two streams built from the same pair produce bit-identical draws. Streams
  are stateful and must not be shared between concurrent workers.
  """

  seed: int
  stream_id: int = 0
  generator: np.random.Generator = field(init=False, repr=False)

  def __post_init__(self):
    if not 0 <= int(self.seed) < 2**64:
      raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
    ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
    self.generator = np.random.Generator(np.random.PCG64(ss))

  def child(self, stream_id: int) -> "RngStream":
    """Independent stream sharing this stream's seed."""
    return RngStream(self.seed, stream_id)

  def normal(self, size=None, scale: float = 1.0):
    return self.generator.normal(0.0, scale, size=size)


# Stream ids for the purposes that draw randomness inside one trial.
STREAM_DATA = 0
STREAM_NOISE = 1
STREAM_SAMPLING = 2
STREAM_EVAL = 3
STREAM_INIT = 4


def regression_loss(theta, x, y) -> float:
  """Half squared error 0.5 * (y - <x, theta>)^2 of a single sample."""
  theta = as_model_vector(theta)
  x = as_model_vector(x, theta.shape[0])
  r = float(y) - float(x @ theta)
  return 0.5 * r * r


def regression_gradient(theta, x, y) -> np.ndarray:
  """Gradient of :func:`regression_loss` with respect to ``theta``."""
  theta = as_model_vector(theta)
  x = as_model_vector(x, theta.shape[0])
  return -(float(y) - float(x @ theta)) * x


def residuals(theta, data: RegressionDataset) -> np.ndarray:
  theta = as_model_vector(theta, data.p)
  return data.responses - data.features @ theta


def batch_loss(theta, data: RegressionDataset) -> float:
  """Mean half squared error over ``data``."""
  r = residuals(theta, data)
  return 0.5 * float(np.mean(r * r))


def batch_gradient(theta, data: RegressionDataset) -> np.ndarray:
  """Gradient of :func:`batch_loss`, i.e. -(1/n) X^T (y - X theta)."""
  r = residuals(theta, data)
  return -(data.features.T @ r) / data.n


def per_example_gradients(theta, data: RegressionDataset) -> np.ndarray:
  """Row i is the gradient of the loss on sample i (n x p)."""
  r = residuals(theta, data)
  return -r[:, None] * data.features


def reported_loss(theta, data: RegressionDataset) -> float:
  """Plain mean squared error, the metric reported by the experiment harness.

  Unlike the training loss there is no factor 1/2, so a model at the generating
  parameter scores the response-noise variance.
  """
  r = residuals(theta, data)
  return float(np.mean(r * r))
