"""Desk-scale federated simulation: DP-FedAvg and its public-data variant.

Clients hold disjoint shards of a regression dataset. Each round the server
samples clients without replacement, every client runs a few local SGD steps
and sends back its model delta, deltas are clipped to norm L and averaged, and
Gaussian noise with standard deviation ``sigma * L / m`` is added to the
average (``sigma`` is a noise multiplier). The public variant mixes that noisy
average with a step along the public full-batch gradient, weighted by the
cosine schedule of :func:`pdadpmd.optim.alpha_schedule`.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from pdadpmd import core
from pdadpmd import dp
from pdadpmd import optim


@dataclasses.dataclass(frozen=True)
class ClientPopulation:
  clients: tuple[core.RegressionDataset, ...]
  public_clients: tuple[core.RegressionDataset, ...] = ()
  max_examples_per_client: int = 256
  # Row indices into the source dataset, one array per client.
  client_index: tuple[np.ndarray, ...] = ()
  public_index: tuple[np.ndarray, ...] = ()

  @property
  def n_clients(self) -> int:
    return len(self.clients)

  def public_data(self) -> Optional[core.RegressionDataset]:
    if not self.public_clients:
      return None
    return core.RegressionDataset(
        np.vstack([c.features for c in self.public_clients]),
        np.concatenate([c.responses for c in self.public_clients]),
        core.Visibility.PUBLIC)

  def private_data(self) -> core.RegressionDataset:
    return core.RegressionDataset(
        np.vstack([c.features for c in self.clients]),
        np.concatenate([c.responses for c in self.clients]),
        core.Visibility.PRIVATE)


@dataclasses.dataclass(frozen=True)
class FedConfig:
  rounds: int = 100
  clients_per_round: int = 10
  local_steps: int = 1
  local_batch_size: Optional[int] = 16
  client_lr: float = 0.1
  server_lr: Union[float, Callable[[int], float]] = 1.0
  clip_norm: float = 1.0
  sigma: float = 0.0
  alpha_K: Optional[float] = None

  def server_step(self, round_t: int) -> float:
    if callable(self.server_lr):
      return float(self.server_lr(round_t))
    return float(self.server_lr)

  @property
  def noise_std(self) -> float:
    """Standard deviation of the noise on the averaged clipped delta."""
    return self.sigma * self.clip_norm / self.clients_per_round

  def epsilon(self, delta: float) -> float:
    """Conservative epsilon from the full-batch composition formula.

    Treats every round as a release with sensitivity L/m and ignores any
    amplification from client sampling.
    """
    if self.sigma == 0:
      return float("inf")
    return dp.epsilon_for_sigma(self.noise_std, self.clip_norm, self.rounds,
                                delta, self.clients_per_round)

  def replace(self, **changes) -> "FedConfig":
    return dataclasses.replace(self, **changes)


def partition_clients(data: core.RegressionDataset, n_clients: int,
                      n_public_clients: int = 0, cap: int = 256,
                      rng: Optional[core.RngStream] = None) -> ClientPopulation:
  """Shuffles ``data`` and deals it into disjoint client shards.

  Every client receives the same number of examples, min(cap, n // total),
  where total counts private and public clients; leftover rows are unused.

  Raises:
    ValueError: if some client would be left without examples.
  """
  total = n_clients + n_public_clients
  if n_clients < 1 or n_public_clients < 0:
    raise ValueError("need n_clients >= 1 and n_public_clients >= 0")
  if cap < 1:
    raise ValueError(f"cap must be >= 1, got {cap}")
  per_client = min(cap, data.n // total)
  if per_client < 1:
    raise ValueError(
        f"cannot give {total} clients at least one example from {data.n} rows")
  rng = rng or core.RngStream(0, core.STREAM_SAMPLING)
  order = rng.generator.permutation(data.n)
  shards = [np.sort(order[i * per_client:(i + 1) * per_client])
            for i in range(total)]
  priv_idx = shards[:n_clients]
  pub_idx = shards[n_clients:]
  priv = tuple(data.subset(i).with_visibility(core.Visibility.PRIVATE)
               for i in priv_idx)
  pub = tuple(data.subset(i).with_visibility(core.Visibility.PUBLIC)
              for i in pub_idx)
  return ClientPopulation(priv, pub, cap, tuple(priv_idx), tuple(pub_idx))


def local_update(theta, shard: core.RegressionDataset, local_steps: int,
                 client_lr: float, batch_size: Optional[int] = 16,
                 rng: Optional[core.RngStream] = None) -> np.ndarray:
  """Runs ``local_steps`` minibatch SGD steps and returns theta_local - theta.

  Batches walk a fresh permutation of the shard each epoch; a batch size of
  ``None`` or at least the shard size means full-batch steps and no
  randomness.
  """
  theta = core.as_model_vector(theta, shard.p)
  local = theta.copy()
  full = batch_size is None or batch_size >= shard.n
  order, pos = None, 0
  for s in range(local_steps):
    if full:
      batch = shard
    else:
      if order is None or pos + batch_size > shard.n:
        if rng is None:
          raise ValueError("minibatch local training needs an rng")
        order, pos = rng.generator.permutation(shard.n), 0
      batch = shard.subset(np.sort(order[pos:pos + batch_size]))
      pos += batch_size
    local = core.check_finite(local - client_lr * core.batch_gradient(local, batch), s)
  return local - theta


def _noisy_private_aggregate(theta, population: ClientPopulation,
                             cfg: FedConfig, rng: core.RngStream,
                             contributions: Optional[list] = None):
  m = cfg.clients_per_round
  if not 1 <= m <= population.n_clients:
    raise ValueError(
        f"clients_per_round={m} must be in [1, {population.n_clients}]")
  chosen = rng.generator.choice(population.n_clients, size=m, replace=False)
  total = np.zeros_like(theta)
  for c in chosen:
    delta = local_update(theta, population.clients[c], cfg.local_steps,
                         cfg.client_lr, cfg.local_batch_size, rng)
    part = dp.clip(delta, cfg.clip_norm) / m
    if contributions is not None:
      contributions.append(part)
    total += part
  return total + dp.gaussian_noise(theta.shape[0], cfg.noise_std, rng)


def dp_fedavg_round(theta, population: ClientPopulation, cfg: FedConfig,
                    rng: core.RngStream, round_t: int = 0,
                    contributions: Optional[list] = None) -> np.ndarray:
  """One DP-FedAvg round; ``contributions`` collects the scaled client parts."""
  theta = core.as_model_vector(theta)
  agg = _noisy_private_aggregate(theta, population, cfg, rng, contributions)
  return core.check_finite(theta + cfg.server_step(round_t) * agg, round_t)


def pda_dpmd_fed_round(theta, population: ClientPopulation, cfg: FedConfig,
                       round_t: int, rng: core.RngStream,
                       contributions: Optional[list] = None) -> np.ndarray:
  """Server step on alpha * (noisy private delta) + (1 - alpha) * public delta.

  The public delta is -client_lr times the full-batch gradient of the loss on
  all public clients' data at ``theta``. With alpha = 1 this is exactly
  :func:`dp_fedavg_round`; with alpha = 0 no client is sampled and no noise is
  drawn.
  """
  theta = core.as_model_vector(theta)
  a = optim.alpha_schedule(round_t, cfg.alpha_K)
  direction = np.zeros_like(theta)
  if a > 0.0:
    direction += a * _noisy_private_aggregate(theta, population, cfg, rng,
                                              contributions)
  if a < 1.0:
    pub = population.public_data()
    if pub is None:
      raise ValueError("alpha < 1 needs public clients")
    direction += (1.0 - a) * (-cfg.client_lr * core.batch_gradient(theta, pub))
  return core.check_finite(theta + cfg.server_step(round_t) * direction,
                           round_t)


FED_CSV_HEADER = ("round", "train_loss", "eval_loss", "alpha", "sigma")


def simulate(population: ClientPopulation, cfg: FedConfig, theta0,
             rng: core.RngStream, eval_data: Optional[core.RegressionDataset] = None,
             algorithm: str = "pda_dpmd") -> tuple[np.ndarray, list[dict]]:
  """Runs ``cfg.rounds`` rounds and returns the final model and per-round rows.

  ``algorithm`` is ``"pda_dpmd"`` or ``"dp_fedavg"``. Losses are plain mean
  squared errors; the training loss is over all private clients.
  """
  if algorithm not in ("pda_dpmd", "dp_fedavg"):
    raise ValueError(f"unknown federated algorithm {algorithm!r}")
  train = population.private_data()
  theta = np.array(theta0, dtype=float)
  rows = []
  for t in range(cfg.rounds):
    if algorithm == "dp_fedavg":
      alpha = 1.0
      theta = dp_fedavg_round(theta, population, cfg, rng, t)
    else:
      alpha = optim.alpha_schedule(t, cfg.alpha_K)
      theta = pda_dpmd_fed_round(theta, population, cfg, t, rng)
    rows.append({
        "round": t + 1,
        "train_loss": core.reported_loss(theta, train),
        "eval_loss": (core.reported_loss(theta, eval_data)
                      if eval_data is not None else float("nan")),
        "alpha": alpha,
        "sigma": cfg.sigma,
    })
  return theta, rows


def write_rounds_csv(path, rows: Sequence[dict]) -> None:
  with Path(path).open("w", newline="") as f:
    w = csv.writer(f)
    w.writerow(FED_CSV_HEADER)
    for r in rows:
      w.writerow([r["round"], repr(float(r["train_loss"])),
                  repr(float(r["eval_loss"])), repr(float(r["alpha"])),
                  repr(float(r["sigma"]))])
