"""Command-line entry point: ``pdadpmd <subcommand> ...``.

Relative output paths are placed under $PDADPMD_OUTPUT_DIR when it is set.
Every subcommand exits 0 on success and 2 with a one-line diagnostic on
stderr otherwise.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from pdadpmd import core
from pdadpmd import dp
from pdadpmd import fed
from pdadpmd import harness
from pdadpmd import mirror
from pdadpmd import stability
from pdadpmd import synth


def _synth_cfg(args, **kw) -> synth.SynthConfig:
  return synth.SynthConfig(p=args.p, nnz_first_block=args.nnz_first,
                           nnz_last_block=args.nnz_last, seed=args.seed, **kw)


def _add_synth_args(p, default_p: int) -> None:
  p.add_argument("--p", type=int, default=default_p)
  p.add_argument("--nnz-first", type=int, default=40,
                 help="nonzeros per row in the first p/5 features")
  p.add_argument("--nnz-last", type=int, default=80,
                 help="nonzeros per row in the last 4p/5 features")
  p.add_argument("--seed", type=int, default=0)


def _calibrate(args) -> int:
  sigma = dp.calibrate_sigma(args.clip, args.steps, args.eps, args.delta,
                             args.n)
  print(f"{sigma:.10g}")
  return 0


def _gen_data(args) -> int:
  cfg = _synth_cfg(args, n_private=args.n_private,
                   public_multiplier=args.public_multiplier)
  pub, priv, theta_star = synth.gen_split(cfg)
  out = harness.resolve_output(f"{args.out_dir}/public.csv").parent
  synth.write_dataset_csv(out / "public.csv", pub)
  synth.write_dataset_csv(out / "private.csv", priv)
  np.savetxt(out / "theta_star.csv", theta_star, delimiter=",",
             fmt="%.17g", header="theta_star", comments="")
  print(f"wrote {pub.n} public and {priv.n} private rows to {out}")
  return 0


def _simulate(args) -> int:
  spec = harness.load_spec(args.config)
  if args.workers is not None:
    spec = spec.replace(workers=args.workers)
  output = args.out if args.out is not None else spec.output
  if output is None:
    output = "results.csv"
  records = harness.run_experiment(spec, output)
  failed = sum(r.status != "ok" for r in records)
  print(f"wrote {len(records)} rows ({failed} failed) to "
        f"{harness.resolve_output(output)}")
  return 0


def _stability(args) -> int:
  rng = core.RngStream(args.seed, core.STREAM_EVAL)
  if args.random_spd:
    m = mirror.QuadraticMirrorMap.from_spd(
        stability.random_spd(args.p, rng.child(0), args.condition))
  else:
    pub, _, _ = synth.gen_split(_synth_cfg(args, n_private=1))
    m = mirror.regularize_normalize(mirror.build_public_hessian(pub))
  dirs = stability.random_directions(args.p, args.directions, rng.child(1))
  reports = stability.stability_sweep(
      m, args.eta, args.sigma, dirs, args.samples, rng.child(2),
      include_eigenvectors=not args.skip_eigenvectors)
  if args.out:
    stability.write_reports_csv(harness.resolve_output(args.out), reports)
  worst = max((r.relative_error for r in reports), default=0.0)
  print(f"{len(reports)} directions, max relative error {worst:.4g}")
  return 0


def _fedsim(args) -> int:
  cfg = _synth_cfg(args, n_private=args.n)
  _, data, theta_star = synth.gen_split(cfg)
  pop = fed.partition_clients(
      data, args.clients, args.public_clients, args.cap,
      core.RngStream(args.seed, core.STREAM_SAMPLING))
  eval_set = synth.gen_dataset(args.eval_samples, theta_star, cfg,
                               core.RngStream(args.seed, core.STREAM_EVAL))
  fcfg = fed.FedConfig(rounds=args.rounds,
                       clients_per_round=args.clients_per_round,
                       local_steps=args.local_steps,
                       local_batch_size=args.local_batch_size,
                       client_lr=args.client_lr, server_lr=args.server_lr,
                       clip_norm=args.clip, sigma=args.sigma,
                       alpha_K=args.alpha_K)
  theta, rows = fed.simulate(pop, fcfg, np.zeros(args.p),
                             core.RngStream(args.seed, core.STREAM_NOISE),
                             eval_set, args.algorithm)
  if args.out:
    fed.write_rounds_csv(harness.resolve_output(args.out), rows)
  eps = fcfg.epsilon(args.delta)
  print(f"final eval loss {rows[-1]['eval_loss']:.6g}; conservative "
        f"epsilon {eps:.4g} at delta {args.delta:g}")
  return 0


def _summarize(args) -> int:
  rows = harness.summarize(harness.read_records_csv(args.input))
  text = harness.summary_to_csv(rows)
  if args.out:
    harness.resolve_output(args.out).write_text(text)
  sys.stdout.write(text)
  return 0


def _alpha(s: str):
  v = float(s)
  return None if math.isinf(v) else v


def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(prog="pdadpmd")
  sub = parser.add_subparsers(dest="command", required=True)

  p = sub.add_parser("calibrate", help="print the Gaussian noise scale sigma")
  p.add_argument("--eps", type=float, required=True)
  p.add_argument("--delta", type=float, required=True)
  p.add_argument("--clip", type=float, required=True)
  p.add_argument("--steps", type=int, required=True)
  p.add_argument("--n", type=int, required=True)
  p.set_defaults(func=_calibrate)

  p = sub.add_parser("gen-data", help="write a synthetic public/private split")
  _add_synth_args(p, 500)
  p.add_argument("--n-private", type=int, default=10_000)
  p.add_argument("--public-multiplier", type=float, default=1.5)
  p.add_argument("--out-dir", default="data")
  p.set_defaults(func=_gen_data)

  p = sub.add_parser("simulate", help="run a grid-search experiment config")
  p.add_argument("--config", required=True)
  p.add_argument("--out")
  p.add_argument("--workers", type=int)
  p.set_defaults(func=_simulate)

  p = sub.add_parser("stability", help="noise-stability sweep of a mirror map")
  _add_synth_args(p, 200)
  p.add_argument("--eta", type=float, default=1.0)
  p.add_argument("--sigma", type=float, default=1.0)
  p.add_argument("--samples", type=int, default=10_000)
  p.add_argument("--directions", type=int, default=5)
  p.add_argument("--random-spd", action="store_true",
                 help="use a random SPD map instead of the public Hessian")
  p.add_argument("--condition", type=float, default=100.0)
  p.add_argument("--skip-eigenvectors", action="store_true")
  p.add_argument("--out")
  p.set_defaults(func=_stability)

  p = sub.add_parser("fedsim", help="federated simulation on synthetic data")
  _add_synth_args(p, 200)
  p.add_argument("--n", type=int, default=20_000)
  p.add_argument("--clients", type=int, default=400)
  p.add_argument("--public-clients", type=int, default=20)
  p.add_argument("--cap", type=int, default=256)
  p.add_argument("--rounds", type=int, default=100)
  p.add_argument("--clients-per-round", type=int, default=100)
  p.add_argument("--local-steps", type=int, default=1)
  p.add_argument("--local-batch-size", type=int, default=16)
  p.add_argument("--client-lr", type=float, default=1.0)
  p.add_argument("--server-lr", type=float, default=1.0)
  p.add_argument("--clip", type=float, default=0.1)
  p.add_argument("--sigma", type=float, default=0.4)
  p.add_argument("--alpha-K", type=_alpha, default=None)
  p.add_argument("--algorithm", choices=("pda_dpmd", "dp_fedavg"),
                 default="pda_dpmd")
  p.add_argument("--delta", type=float, default=1e-5)
  p.add_argument("--eval-samples", type=int, default=5000)
  p.add_argument("--out")
  p.set_defaults(func=_fedsim)

  p = sub.add_parser("summarize", help="best grid point per algorithm and p")
  p.add_argument("--in", dest="input", required=True)
  p.add_argument("--out")
  p.set_defaults(func=_summarize)
  return parser


def main(argv=None) -> int:
  parser = build_parser()
  try:
    args = parser.parse_args(argv)
  except SystemExit as e:
    return int(e.code or 0)
  try:
    return args.func(args)
  except (OSError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
    print(f"pdadpmd {args.command}: error: {e}", file=sys.stderr)
    return 2


if __name__ == "__main__":
  sys.exit(main())
