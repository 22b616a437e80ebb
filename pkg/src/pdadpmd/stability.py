"""How far Gaussian noise moves one exact mirror step, per direction.

With a quadratic mirror map M = sum_i lam_i v_i v_i^T, the noisy and noiseless
updates from the same (theta_t, g_t) differ by -eta M^{-1} b with
b ~ N(0, sigma^2 I). Projected on a unit direction v = sum_i a_i v_i this is a
centered normal with standard deviation eta sigma sqrt(sum_i (a_i/lam_i)^2), so

    E |<displacement, v>| = eta sigma sqrt((2/pi) sum_i (a_i / lam_i)^2).

:func:`analytic_shift` evaluates the closed form and :func:`monte_carlo_shift`
simulates the mirror step directly.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from pdadpmd import core
from pdadpmd import mirror

_UNIT_TOL = 1e-10


@dataclasses.dataclass(frozen=True)
class StabilityReport:
  direction_id: str
  direction: np.ndarray
  analytic: float
  monte_carlo: float
  samples: int

  @property
  def relative_error(self) -> float:
    if self.analytic == 0:
      return 0.0 if self.monte_carlo == 0 else math.inf
    return abs(self.monte_carlo - self.analytic) / self.analytic


def _unit(v, p: int) -> np.ndarray:
  v = core.as_model_vector(v, p)
  if abs(np.linalg.norm(v) - 1.0) > _UNIT_TOL:
    raise ValueError(f"direction must have unit norm, got {np.linalg.norm(v)}")
  return v


def analytic_shift(mirror_map: mirror.QuadraticMirrorMap, eta: float,
                   sigma: float, v) -> float:
  v = _unit(v, mirror_map.p)
  a = mirror_map.eigenvectors.T @ v
  return eta * sigma * math.sqrt(
      (2.0 / math.pi) * float(np.sum((a / mirror_map.eigenvalues) ** 2)))


def monte_carlo_shift(mirror_map: mirror.QuadraticMirrorMap, eta: float,
                      sigma: float, v, samples: int, rng: core.RngStream,
                      chunk: int = 4096) -> float:
  """Mean of |<theta_noisy - theta_clean, v>| over simulated noise draws.

  Each draw takes the noisy and noiseless mirror steps from theta_t = 0 with a
  zero private gradient (the gradient cancels in the difference) and measures
  the gap along ``v``.
  """
  v = _unit(v, mirror_map.p)
  if samples < 1:
    raise ValueError(f"samples must be >= 1, got {samples}")
  total = 0.0
  done = 0
  while done < samples:
    k = min(chunk, samples - done)
    b = rng.normal(size=(mirror_map.p, k)) * sigma
    clean = np.zeros(mirror_map.p)
    noisy = clean[:, None] - eta * mirror_map.inverse_apply(b)
    total += float(np.abs(v @ (noisy - clean[:, None])).sum())
    done += k
  return total / samples


def random_directions(p: int, count: int, rng: core.RngStream) -> np.ndarray:
  g = rng.normal(size=(count, p))
  return g / np.linalg.norm(g, axis=1, keepdims=True)


def stability_sweep(mirror_map: mirror.QuadraticMirrorMap, eta: float,
                    sigma: float, directions: Iterable = (), samples: int = 10_000,
                    rng: core.RngStream | None = None,
                    include_eigenvectors: bool = True) -> list[StabilityReport]:
  """One report per eigenvector of the map, then per supplied direction.

  Every direction gets its own child stream of ``rng`` so the reports do not
  depend on how many directions precede them.
  """
  rng = rng or core.RngStream(0)
  labelled: list[tuple[str, np.ndarray]] = []
  if include_eigenvectors:
    for i in range(mirror_map.p):
      labelled.append((f"eig{i}", mirror_map.eigenvectors[:, i]))
  for j, d in enumerate(directions):
    d = np.asarray(d, dtype=float)
    labelled.append((f"dir{j}", d / np.linalg.norm(d)))
  reports = []
  for k, (name, d) in enumerate(labelled):
    reports.append(StabilityReport(
        direction_id=name,
        direction=d,
        analytic=analytic_shift(mirror_map, eta, sigma, d),
        monte_carlo=monte_carlo_shift(mirror_map, eta, sigma, d, samples,
                                      rng.child(1000 + k)),
        samples=samples,
    ))
  return reports


def random_spd(p: int, rng: core.RngStream, condition: float = 100.0
               ) -> np.ndarray:
  """Random SPD matrix with log-uniform spectrum in [1, condition]."""
  q, _ = np.linalg.qr(rng.normal(size=(p, p)))
  lam = np.exp(rng.generator.uniform(0.0, math.log(condition), size=p))
  return (q * lam) @ q.T


STABILITY_CSV_HEADER = ("direction_id", "analytic", "mc", "samples", "rel_err")


def write_reports_csv(path, reports: Sequence[StabilityReport]) -> None:
  with Path(path).open("w", newline="") as f:
    w = csv.writer(f)
    w.writerow(STABILITY_CSV_HEADER)
    for r in reports:
      w.writerow([r.direction_id, repr(r.analytic), repr(r.monte_carlo),
                  r.samples, repr(r.relative_error)])
