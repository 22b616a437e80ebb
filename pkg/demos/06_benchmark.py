"""Loss against dimension for the three methods, from benchmark.yaml.

The full configuration takes several minutes; this script keeps the grid and
shrinks the trial count so it finishes in about a minute.
"""

from pathlib import Path

from pdadpmd import harness

spec = harness.load_spec(Path(__file__).with_name("benchmark.yaml"))
spec = spec.replace(trials=2, dimensions=(200, 500), output=None)
records = harness.run_experiment(spec)
rows = harness.summarize(records)

print(f"{'p':>5} " + " ".join(f"{a:>18}" for a in spec.algorithms))
for p in spec.dimensions:
  cells = {r.algorithm: r for r in rows if r.p == p}
  print(f"{p:>5} " + " ".join(
      f"{cells[a].mean_loss:9.5f} +/-{cells[a].ci_half_width:7.5f}"
      for a in spec.algorithms))

print("\nbest settings:")
for r in rows:
  print(f"  {r.algorithm:>9} p={r.p}: lr={r.lr:g} clip={r.clip:g} "
        f"epochs={r.epochs}")
