"""Full-size low-noise reproduction (64 x 64, five materials, preset a).

Usage: ``python demos/04_case_a.py [em|pd|admm] [alpha]``. The schedule comes
from ``polyct.experiments.SCHEDULES``; an optional second argument overrides
the TV weight, which shows how weak the preset weight is against a data
term of 1e11 photons per ray.
"""

import sys
from pathlib import Path

import numpy as np

from polyct.core import bundled_table
from polyct.experiments import run_case
from polyct.metrics import confusion_matrix
from polyct.solvers import reinitialize

solver = sys.argv[1] if len(sys.argv) > 1 else "em"
over = {"alpha": float(sys.argv[2])} if len(sys.argv) > 2 else {}

r = run_case("a", solver, **over)
m = r.metrics
print(f"{solver}: accuracy {m.accuracy:.4f} in {r.seconds:.0f} s")
print("dice:", ", ".join(f"{n} {d:.3f}" for n, d in zip(m.material_names, m.dice)))

labels = reinitialize(r.recon, bundled_table(5)).data.argmax(-1)
print("confusion (rows truth, columns reconstruction):")
print(confusion_matrix(r.truth.labels, labels, 5))
out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)
np.save(out / f"case_a_{solver}.npy", r.recon.data)
