"""Grid-search experiment driver for the synthetic regression benchmark.

A run is described by an :class:`ExperimentSpec` (loadable from YAML) and
produces one :class:`TrialRecord` per (dimension, algorithm, grid point,
trial). Records are written as CSV with the fixed header ``CSV_HEADER``
preceded by a ``# format_version=1`` line.

Seeding: the data of a (dimension, trial) cell is drawn from
``derive_seed(base_seed, "data", p, trial)`` and is shared by every algorithm
and grid point, so algorithms are compared on identical data. The optimizer
noise of each row uses ``derive_seed(base_seed, p, algorithm, grid_index,
trial)``, the value recorded in the ``seed`` column.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import itertools
import math
import os
import time
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import yaml
from scipy import stats

from pdadpmd import core
from pdadpmd import dp
from pdadpmd import mirror
from pdadpmd import optim
from pdadpmd import synth

FORMAT_VERSION = 1
ALGORITHMS = ("cold_sgd", "warm_sgd", "pda_exact", "pda_first_order")
CSV_HEADER = ("algorithm", "p", "lr", "clip", "epochs", "alpha_K", "trial",
              "seed", "sigma", "final_train_loss", "final_reported_loss",
              "wall_ms", "status")
SUMMARY_HEADER = ("algorithm", "p", "lr", "clip", "epochs", "alpha_K",
                  "n_trials", "mean_loss", "ci_half_width")
OUTPUT_DIR_ENV = "PDADPMD_OUTPUT_DIR"


class ConfigError(ValueError):
  pass


def _as_number(v):
  """int for integral input, float otherwise; accepts numeric strings."""
  if isinstance(v, bool):
    raise ValueError(f"expected a number, got {v!r}")
  if isinstance(v, int):
    return v
  f = float(v)
  return int(f) if f.is_integer() and not isinstance(v, float) else f


def _as_int(v) -> int:
  n = _as_number(v)
  if not float(n).is_integer():
    raise ValueError(f"expected an integer, got {v!r}")
  return int(n)


@dataclasses.dataclass(frozen=True)
class Grid:
  learning_rates: tuple[float, ...] = (0.1, 1.0)
  clip_norms: tuple[float, ...] = (1.0,)
  epochs: tuple[int, ...] = (10,)
  alpha_Ks: tuple[float, ...] = (10,)

  def __post_init__(self):
    for name in ("learning_rates", "clip_norms", "epochs", "alpha_Ks"):
      values = tuple(getattr(self, name))
      if not values:
        raise ConfigError(f"grid axis {name!r} is empty")
      try:
        if name == "epochs":
          values = tuple(_as_int(v) for v in values)
        elif name == "alpha_Ks":
          values = tuple(None if v is None else _as_number(v) for v in values)
        else:
          values = tuple(float(v) for v in values)
      except (TypeError, ValueError) as e:
        raise ConfigError(f"grid axis {name!r}: {e}") from e
      object.__setattr__(self, name, values)

  def points(self, algorithm: str) -> list[dict]:
    """Grid points of ``algorithm`` in a fixed order; the index is stable."""
    alphas = self.alpha_Ks if algorithm == "pda_first_order" else (None,)
    return [dict(lr=float(lr), clip=float(c), epochs=int(e), alpha_K=a)
            for lr, c, e, a in itertools.product(
                self.learning_rates, self.clip_norms, self.epochs, alphas)]


@dataclasses.dataclass(frozen=True)
class ExperimentSpec:
  """Everything needed to reproduce one benchmark run.

  ``noise_multiplier``, when set, fixes sigma = multiplier * L / n instead of
  calibrating it from (epsilon, delta). ``grid_overrides`` maps an algorithm
  name to replacement grid axes for that algorithm only.
  """

  dimensions: tuple[int, ...] = (200,)
  algorithms: tuple[str, ...] = ("cold_sgd", "warm_sgd", "pda_exact")
  grid: Grid = Grid()
  grid_overrides: dict = dataclasses.field(default_factory=dict)
  trials: int = 1
  epsilon: float = 1.0
  delta: float = 1e-5
  noise_multiplier: Optional[float] = None
  synth: synth.SynthConfig = synth.SynthConfig()
  base_seed: int = 0
  eval_samples: int = 10_000
  ridge: Optional[float] = None
  warm_start_ridge: Optional[float] = None
  cold_init_scale: float = 0.01
  batch_size: Optional[int] = None
  iterate_policy: str = "final"
  post_average_clip: bool = False
  output: Optional[str] = None
  workers: int = 1
  record_timing: bool = False

  def __post_init__(self):
    if self.trials < 1:
      raise ConfigError("trials must be >= 1")
    if not self.dimensions:
      raise ConfigError("dimensions must be nonempty")
    unknown = set(self.algorithms) - set(ALGORITHMS)
    if unknown or not self.algorithms:
      raise ConfigError(f"unknown or missing algorithms: {sorted(unknown)}")
    normalized = {}
    for alg, override in self.grid_overrides.items():
      if alg not in ALGORITHMS:
        raise ConfigError(f"grid override for unknown algorithm {alg!r}")
      grid = dataclasses.replace(self.grid, **(override or {}))
      normalized[alg] = {k: getattr(grid, k) for k in (override or {})}
    object.__setattr__(self, "grid_overrides", normalized)
    if self.iterate_policy not in ("final", "average"):
      raise ConfigError("iterate_policy must be 'final' or 'average'")
    for p in self.dimensions:
      try:
        self.synth.replace(p=p)
      except ValueError as e:
        raise ConfigError(f"dimension {p}: {e}") from e

  def grid_for(self, algorithm: str) -> Grid:
    override = self.grid_overrides.get(algorithm)
    if not override:
      return self.grid
    return dataclasses.replace(self.grid, **override)

  def replace(self, **changes) -> "ExperimentSpec":
    return dataclasses.replace(self, **changes)


_SYNTH_KEYS = {f.name for f in dataclasses.fields(synth.SynthConfig)} - {"p"}
_GRID_KEYS = {f.name for f in dataclasses.fields(Grid)}


def spec_from_dict(raw: dict) -> ExperimentSpec:
  """Builds a spec from the documented nested key/value layout.

  Top-level sections are ``experiment``, ``privacy``, ``grid``,
  ``grid_overrides``, ``synth`` and ``output``; see README for every key.
  """
  if not isinstance(raw, dict):
    raise ConfigError("config root must be a mapping")
  version = raw.get("format_version")
  if version != FORMAT_VERSION:
    raise ConfigError(
        f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
  known = {"format_version", "experiment", "privacy", "grid", "grid_overrides",
           "synth", "output"}
  extra = set(raw) - known
  if extra:
    raise ConfigError(f"unknown config sections: {sorted(extra)}")

  def section(name):
    value = raw.get(name) or {}
    if not isinstance(value, dict):
      raise ConfigError(f"section {name!r} must be a mapping")
    return value

  exp, priv, grid, out = (section("experiment"), section("privacy"),
                          section("grid"), section("output"))
  syn, overrides = section("synth"), section("grid_overrides")

  def check_keys(name, given, allowed):
    bad = set(given) - set(allowed)
    if bad:
      raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")

  exp_keys = ("dimensions", "algorithms", "trials", "base_seed", "eval_samples",
              "ridge", "warm_start_ridge", "cold_init_scale", "batch_size",
              "iterate_policy", "workers")
  check_keys("experiment", exp, exp_keys)
  check_keys("privacy", priv, ("epsilon", "delta", "noise_multiplier",
                               "post_average_clip"))
  check_keys("grid", grid, _GRID_KEYS)
  check_keys("synth", syn, _SYNTH_KEYS)
  check_keys("output", out, ("path", "record_timing"))
  for alg, axes in overrides.items():
    check_keys(f"grid_overrides.{alg}", axes or {}, _GRID_KEYS)

  def tup(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)

  kwargs: dict[str, Any] = {}
  for k in exp_keys:
    if k in exp:
      kwargs[k] = tup(exp[k]) if k in ("dimensions", "algorithms") else exp[k]
  try:
    for k in ("epsilon", "delta", "noise_multiplier"):
      if priv.get(k) is not None:
        kwargs[k] = float(priv[k])
    for k in ("ridge", "warm_start_ridge", "cold_init_scale"):
      if kwargs.get(k) is not None:
        kwargs[k] = float(kwargs[k])
    syn = {k: (float(v) if k in ("public_multiplier", "noise_variance",
                                 "feature_value") else v)
           for k, v in syn.items()}
  except (TypeError, ValueError) as e:
    raise ConfigError(f"non-numeric value: {e}") from e
  if "post_average_clip" in priv:
    kwargs["post_average_clip"] = bool(priv["post_average_clip"])
  kwargs["grid"] = Grid(**{k: tup(v) for k, v in grid.items()})
  kwargs["grid_overrides"] = {
      alg: {k: tup(v) for k, v in (axes or {}).items()}
      for alg, axes in overrides.items()}
  kwargs["synth"] = synth.SynthConfig(**syn) if syn else synth.SynthConfig()
  if "path" in out:
    kwargs["output"] = out["path"]
  if "record_timing" in out:
    kwargs["record_timing"] = bool(out["record_timing"])
  try:
    return ExperimentSpec(**kwargs)
  except (TypeError, ValueError) as e:
    raise ConfigError(str(e)) from e


def load_spec(path) -> ExperimentSpec:
  path = Path(path)
  if not path.is_file():
    raise FileNotFoundError(f"config file not found: {path}")
  with path.open() as f:
    try:
      raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
      raise ConfigError(f"{path}: {e}") from e
  return spec_from_dict(raw)


@dataclasses.dataclass(frozen=True)
class TrialRecord:
  algorithm: str
  p: int
  lr: float
  clip: float
  epochs: int
  alpha_K: Optional[float]
  trial: int
  seed: int
  sigma: float
  final_train_loss: float
  final_reported_loss: float
  wall_ms: int
  status: str = "ok"

  @property
  def grid_key(self) -> tuple:
    return (self.lr, self.clip, self.epochs, self.alpha_K)


def _steps_and_sigma(spec: ExperimentSpec, n_private: int, clip: float,
                     epochs: int) -> tuple[int, float, str]:
  if spec.batch_size is None or spec.batch_size >= n_private:
    steps, n_eff, releases = epochs, n_private, epochs
  else:
    steps = epochs * (n_private // spec.batch_size)
    # Each example enters one batch per epoch; batches of one epoch are
    # disjoint, so per-example composition runs over epochs releases of a
    # batch_size mean.
    n_eff, releases = spec.batch_size, epochs
  if spec.noise_multiplier is not None:
    return steps, spec.noise_multiplier * clip / n_eff, "externally supplied"
  sigma = dp.calibrate_sigma(clip, releases, spec.epsilon, spec.delta, n_eff)
  return steps, sigma, "calibrated"


def _cell_work(spec: ExperimentSpec, p: int, trial: int) -> list[TrialRecord]:
  """All algorithms and grid points for one (dimension, trial) data draw."""
  cfg = spec.synth.replace(p=p)
  data_rng = core.RngStream(core.derive_seed(spec.base_seed, "data", p, trial),
                            core.STREAM_DATA)
  pub, priv, theta_star = synth.gen_split(cfg, data_rng)
  eval_rng = core.RngStream(core.derive_seed(spec.base_seed, "eval", p, trial),
                            core.STREAM_EVAL)
  eval_set = synth.gen_dataset(spec.eval_samples, theta_star, cfg, eval_rng)

  need_warm = any(a != "cold_sgd" for a in spec.algorithms)
  theta_warm = mirror_map = None
  warm_error = None
  if need_warm:
    try:
      ridge = spec.warm_start_ridge
      if ridge is None:
        ridge = mirror.default_ridge(mirror.build_public_hessian(pub))
      theta_warm = optim.warm_start(pub, ridge)
      if "pda_exact" in spec.algorithms:
        mirror_map = mirror.regularize_normalize(
            mirror.build_public_hessian(pub), spec.ridge)
    except (np.linalg.LinAlgError, ValueError) as e:
      warm_error = e
  init_rng = core.RngStream(core.derive_seed(spec.base_seed, "init", p, trial),
                            core.STREAM_INIT)
  theta_cold = init_rng.normal(size=p) * spec.cold_init_scale

  records = []
  for algorithm in spec.algorithms:
    for gi, point in enumerate(spec.grid_for(algorithm).points(algorithm)):
      seed = core.derive_seed(spec.base_seed, p, algorithm, gi, trial)
      steps, sigma, source = _steps_and_sigma(spec, priv.n, point["clip"],
                                              point["epochs"])
      priv_cfg = dp.PrivacyConfig(
          spec.epsilon, spec.delta, point["clip"], steps, priv.n, sigma,
          spec.post_average_clip, source)
      opt_cfg = optim.OptimizerConfig(
          learning_rate=point["lr"], steps=steps, alpha_K=point["alpha_K"],
          iterate_policy=spec.iterate_policy, batch_size=spec.batch_size,
          eval_stride=0)
      rng = core.RngStream(seed, core.STREAM_NOISE)
      t0 = time.perf_counter()
      status = "ok"
      train_loss = reported = float("nan")
      try:
        if algorithm != "cold_sgd" and warm_error is not None:
          raise warm_error
        if algorithm == "cold_sgd":
          res = optim.dp_sgd(priv, theta_cold, priv_cfg, opt_cfg, rng)
        elif algorithm == "warm_sgd":
          res = optim.dp_sgd(priv, theta_warm, priv_cfg, opt_cfg, rng)
        elif algorithm == "pda_exact":
          res = optim.pda_dpmd_exact(priv, mirror_map, theta_warm, priv_cfg,
                                     opt_cfg, rng)
        else:
          res = optim.pda_dpmd_first_order(priv, pub, theta_warm, priv_cfg,
                                           opt_cfg, rng)
        train_loss = core.batch_loss(res.theta, priv)
        reported = core.reported_loss(res.theta, eval_set)
        if not (math.isfinite(train_loss) and math.isfinite(reported)):
          raise core.NonFiniteIterateError("non-finite loss")
      except (core.NonFiniteIterateError, np.linalg.LinAlgError,
              FloatingPointError, ValueError) as e:
        status = f"failed:{type(e).__name__}"
        train_loss = reported = float("nan")
      wall = (int(round((time.perf_counter() - t0) * 1000))
              if spec.record_timing else 0)
      records.append(TrialRecord(
          algorithm, p, point["lr"], point["clip"], point["epochs"],
          point["alpha_K"], trial, seed, sigma, train_loss, reported, wall,
          status))
  return records


def _sort_key(r: TrialRecord):
  return (r.p, ALGORITHMS.index(r.algorithm), r.lr, r.clip, r.epochs,
          -1 if r.alpha_K is None else r.alpha_K, r.trial)


def run_experiment(spec: ExperimentSpec, output=None) -> list[TrialRecord]:
  """Runs every (dimension, trial) cell and optionally writes the CSV.

  Cells are independent and run on up to ``spec.workers`` processes; records
  are sorted before writing, so the output does not depend on scheduling.
  """
  cells = [(p, t) for p in spec.dimensions for t in range(spec.trials)]
  records: list[TrialRecord] = []
  if spec.workers > 1 and len(cells) > 1:
    with concurrent.futures.ProcessPoolExecutor(spec.workers) as pool:
      futures = [pool.submit(_cell_work, spec, p, t) for p, t in cells]
      for fut in futures:
        records.extend(fut.result())
  else:
    for p, t in cells:
      records.extend(_cell_work(spec, p, t))
  records.sort(key=_sort_key)
  output = output if output is not None else spec.output
  if output is not None:
    write_records_csv(resolve_output(output), records)
  return records


def resolve_output(path) -> Path:
  """Relative paths are placed under $PDADPMD_OUTPUT_DIR when it is set."""
  path = Path(path)
  root = os.environ.get(OUTPUT_DIR_ENV)
  if root and not path.is_absolute():
    path = Path(root) / path
  path.parent.mkdir(parents=True, exist_ok=True)
  return path


def _fmt(v) -> str:
  if v is None:
    return ""
  if isinstance(v, float):
    return repr(v)
  return str(v)


def records_to_csv(records: Iterable[TrialRecord]) -> str:
  buf = io.StringIO()
  buf.write(f"# format_version={FORMAT_VERSION}\n")
  w = csv.writer(buf, lineterminator="\n")
  w.writerow(CSV_HEADER)
  for r in records:
    w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
  return buf.getvalue()


def write_records_csv(path, records: Iterable[TrialRecord]) -> None:
  Path(path).write_text(records_to_csv(records))


def _parse_alpha(s: str) -> Optional[float]:
  if s == "":
    return None
  v = float(s)
  return int(v) if v.is_integer() and "." not in s and "e" not in s else v


def read_records_csv(path) -> list[TrialRecord]:
  path = Path(path)
  if not path.is_file():
    raise FileNotFoundError(f"results file not found: {path}")
  lines = path.read_text().splitlines()
  if not lines or not lines[0].startswith("# format_version="):
    raise ValueError(f"{path}: missing '# format_version=' line")
  version = int(lines[0].split("=", 1)[1])
  if version != FORMAT_VERSION:
    raise ValueError(f"{path}: unsupported format_version {version}")
  reader = csv.reader(lines[1:])
  header = tuple(next(reader, ()))
  if header != CSV_HEADER:
    raise ValueError(f"{path}: unexpected header {header}")
  out = []
  for row in reader:
    d = dict(zip(CSV_HEADER, row))
    out.append(TrialRecord(
        algorithm=d["algorithm"], p=int(d["p"]), lr=float(d["lr"]),
        clip=float(d["clip"]), epochs=int(d["epochs"]),
        alpha_K=_parse_alpha(d["alpha_K"]), trial=int(d["trial"]),
        seed=int(d["seed"]), sigma=float(d["sigma"]),
        final_train_loss=float(d["final_train_loss"]),
        final_reported_loss=float(d["final_reported_loss"]),
        wall_ms=int(d["wall_ms"]), status=d["status"]))
  return out


@dataclasses.dataclass(frozen=True)
class SummaryRow:
  algorithm: str
  p: int
  lr: float
  clip: float
  epochs: int
  alpha_K: Optional[float]
  n_trials: int
  mean_loss: float
  ci_half_width: float


def confidence_half_width(values: Sequence[float], level: float = 0.95
                          ) -> float:
  """Half-width of the two-sided Student-t interval for the mean."""
  v = np.asarray(values, dtype=float)
  if v.size < 2:
    return float("nan")
  sd = float(np.std(v, ddof=1))
  if sd == 0.0:
    return 0.0
  return float(stats.t.ppf(0.5 + level / 2, v.size - 1) * sd / math.sqrt(v.size))


def summarize(records: Iterable[TrialRecord]) -> list[SummaryRow]:
  """Best grid point per (algorithm, p) by mean reported loss over trials.

  Grid points with any failed trial are not eligible. Ties go to the smallest
  learning rate, then the smallest clipping norm.

  Raises:
    ValueError: if some (algorithm, p) cell has no eligible grid point.
  """
  cells: dict[tuple, dict[tuple, list[TrialRecord]]] = {}
  for r in records:
    cells.setdefault((r.algorithm, r.p), {}).setdefault(r.grid_key, []).append(r)
  rows = []
  for (alg, p), points in sorted(
      cells.items(), key=lambda kv: (kv[0][1], ALGORITHMS.index(kv[0][0])
                                     if kv[0][0] in ALGORITHMS else 99,
                                     kv[0][0])):
    best = None
    for key, recs in points.items():
      if any(r.status != "ok" for r in recs):
        continue
      losses = [r.final_reported_loss for r in recs]
      mean = float(np.mean(losses))
      alpha = -1 if key[3] is None else key[3]
      rank = (mean, key[0], key[1], key[2], alpha)
      if best is None or rank < best[0]:
        best = (rank, key, losses)
    if best is None:
      raise ValueError(f"no successful grid point for {alg} at p={p}")
    _, (lr, clip, epochs, alpha_K), losses = best
    rows.append(SummaryRow(alg, p, lr, clip, epochs, alpha_K, len(losses),
                           float(np.mean(losses)),
                           confidence_half_width(losses)))
  return rows


def summary_to_csv(rows: Iterable[SummaryRow]) -> str:
  buf = io.StringIO()
  w = csv.writer(buf, lineterminator="\n")
  w.writerow(SUMMARY_HEADER)
  for r in rows:
    w.writerow([_fmt(getattr(r, k)) for k in SUMMARY_HEADER])
  return buf.getvalue()
