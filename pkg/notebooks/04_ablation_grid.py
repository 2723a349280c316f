"""
A small ablation grid
=====================

Experiments are grids of corrector settings over a seeded scene suite.
Cells can run in worker processes; rows always come back in grid order,
so the CSV written by ``rscorrect ablate`` is byte-identical for any
``--jobs``. Here a reduced budget keeps the run short.
"""

from rscorrect.experiments import ExperimentSpec, run_experiment, summarize

spec = ExperimentSpec(
    name="warpers-small",
    suite="two_layer",
    seeds=[0, 1],
    grid={"warper": ["awm", "backward", "fusion-only"]},
    base={"iterations": 60},
)
rows = run_experiment(spec, jobs=2)
for row in rows:
    print(f"cell {row['cell']}  seed {row['seed']}  {row['warper']:11s} {row['psnr']:6.2f} dB")
print("mean PSNR by warper:", {k: round(v, 2) for k, v in summarize(rows, "warper").items()})
