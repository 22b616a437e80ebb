"""Synthetic sparse-feature linear regression data.

Each feature vector sets ``nnz_first_block`` coordinates of the first p/5 and
``nnz_last_block`` coordinates of the last 4p/5 to ``feature_value`` (indices
drawn uniformly without replacement); everything else is zero. Responses are
<x, theta*> plus Gaussian noise of variance ``noise_variance``, with theta*
drawn from N(0, I).
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import Optional

import numpy as np

from pdadpmd import core


@dataclasses.dataclass(frozen=True)
class SynthConfig:
  p: int = 500
  n_private: int = 10_000
  public_multiplier: float = 1.5
  noise_variance: float = 0.01
  nnz_first_block: int = 40
  nnz_last_block: int = 80
  feature_value: float = 0.05
  seed: int = 0

  def __post_init__(self):
    if self.p < 5 or self.p % 5:
      raise ValueError(f"p must be a positive multiple of 5, got {self.p}")
    if self.nnz_first_block > self.first_block:
      raise ValueError(
          f"first block has {self.first_block} slots, cannot set "
          f"{self.nnz_first_block}")
    if self.nnz_last_block > self.p - self.first_block:
      raise ValueError(
          f"last block has {self.p - self.first_block} slots, cannot set "
          f"{self.nnz_last_block}")
    if self.nnz_first_block < 0 or self.nnz_last_block < 0:
      raise ValueError("nonzero counts must be >= 0")
    if self.noise_variance < 0:
      raise ValueError("noise_variance must be >= 0")
    if self.n_private < 1 or self.n_public < 1:
      raise ValueError("need at least one private and one public sample")

  @property
  def first_block(self) -> int:
    return self.p // 5

  @property
  def n_public(self) -> int:
    return int(round(self.public_multiplier * self.p))

  @property
  def feature_norm(self) -> float:
    return self.feature_value * np.sqrt(self.nnz_first_block +
                                        self.nnz_last_block)

  def replace(self, **changes) -> "SynthConfig":
    return dataclasses.replace(self, **changes)


def gen_theta_star(p: int, rng: core.RngStream) -> np.ndarray:
  if p < 1:
    raise ValueError(f"p must be >= 1, got {p}")
  return rng.normal(size=p)


def _choose_per_row(n: int, m: int, k: int,
                    rng: core.RngStream) -> np.ndarray:
  """n independent size-k subsets of range(m), uniform without replacement."""
  if k == 0:
    return np.empty((n, 0), dtype=np.intp)
  if k == m:
    return np.broadcast_to(np.arange(m), (n, m))
  keys = rng.generator.random((n, m))
  return np.argpartition(keys, k - 1, axis=1)[:, :k]


def gen_features(n: int, cfg: SynthConfig, rng: core.RngStream) -> np.ndarray:
  p, m1 = cfg.p, cfg.first_block
  x = np.zeros((n, p))
  rows = np.arange(n)[:, None]
  x[rows, _choose_per_row(n, m1, cfg.nnz_first_block, rng)] = cfg.feature_value
  x[rows, m1 + _choose_per_row(n, p - m1, cfg.nnz_last_block,
                               rng)] = cfg.feature_value
  return x


def gen_feature(p: int, cfg: SynthConfig, rng: core.RngStream) -> np.ndarray:
  if p != cfg.p:
    cfg = cfg.replace(p=p)
  return gen_features(1, cfg, rng)[0]


def gen_responses(x: np.ndarray, theta_star: np.ndarray, cfg: SynthConfig,
                  rng: core.RngStream) -> np.ndarray:
  x = np.atleast_2d(x)
  noise = rng.normal(size=x.shape[0]) * np.sqrt(cfg.noise_variance)
  return x @ theta_star + noise


def gen_response(x, theta_star, cfg: SynthConfig, rng: core.RngStream) -> float:
  """<x, theta*> + N(0, noise_variance)."""
  x = core.as_model_vector(x)
  theta_star = core.as_model_vector(theta_star, x.shape[0])
  return float(gen_responses(x[None, :], theta_star, cfg, rng)[0])


def gen_dataset(n: int, theta_star: np.ndarray, cfg: SynthConfig,
                rng: core.RngStream,
                visibility=core.Visibility.PRIVATE) -> core.RegressionDataset:
  x = gen_features(n, cfg, rng)
  y = gen_responses(x, theta_star, cfg, rng)
  return core.RegressionDataset(x, y, visibility)


def gen_split(cfg: SynthConfig, rng: Optional[core.RngStream] = None):
  """Draws theta*, then a public and a private set from the same generator.

  Returns:
    (public dataset, private dataset, theta*).
  """
  if rng is None:
    rng = core.RngStream(cfg.seed, core.STREAM_DATA)
  theta_star = gen_theta_star(cfg.p, rng)
  pub = gen_dataset(cfg.n_public, theta_star, cfg, rng, core.Visibility.PUBLIC)
  priv = gen_dataset(cfg.n_private, theta_star, cfg, rng,
                     core.Visibility.PRIVATE)
  return pub, priv, theta_star


def population_hessian(cfg: SynthConfig) -> np.ndarray:
  """E[x x^T] of the generator, in closed form.

  Within a block of m slots with k set, P(i set) = k/m and
  P(i and j set) = k(k-1)/(m(m-1)); blocks are sampled independently.
  """
  p, m1 = cfg.p, cfg.first_block
  m2 = p - m1
  k1, k2 = cfg.nnz_first_block, cfg.nnz_last_block
  v2 = cfg.feature_value**2

  def block(m, k):
    off = k * (k - 1) / (m * (m - 1)) if m > 1 else 0.0
    b = np.full((m, m), v2 * off)
    np.fill_diagonal(b, v2 * k / m)
    return b

  h = np.full((p, p), v2 * (k1 / m1) * (k2 / m2))
  h[:m1, :m1] = block(m1, k1)
  h[m1:, m1:] = block(m2, k2)
  return h


def population_loss(theta, theta_star, cfg: SynthConfig) -> float:
  """Exact expected squared error of ``theta`` under the generator."""
  d = np.asarray(theta) - np.asarray(theta_star)
  return cfg.noise_variance + float(d @ population_hessian(cfg) @ d)


def write_dataset_csv(path, data: core.RegressionDataset) -> None:
  """Writes ``x_0..x_{p-1},y`` with a header row."""
  path = Path(path)
  with path.open("w", newline="") as f:
    w = csv.writer(f)
    w.writerow([f"x_{j}" for j in range(data.p)] + ["y"])
    for xi, yi in zip(data.features, data.responses):
      w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def read_dataset_csv(path, visibility=core.Visibility.PRIVATE
                     ) -> core.RegressionDataset:
  path = Path(path)
  with path.open(newline="") as f:
    r = csv.reader(f)
    header = next(r)
    if not header or header[-1] != "y" or any(
        h != f"x_{j}" for j, h in enumerate(header[:-1])):
      raise ValueError(f"{path}: header must be x_0..x_(p-1),y")
    rows = np.array([[float(v) for v in row] for row in r], dtype=float)
  if rows.size == 0:
    raise ValueError(f"{path}: no data rows")
  return core.RegressionDataset(rows[:, :-1], rows[:, -1], visibility)
