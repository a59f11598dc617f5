"""Fine-tuning forgets what replay-based training keeps.

Trains a small MLP on a stream of synthetic Gaussian tasks with three
methods and prints each Class-IL accuracy matrix (rows: evaluated task,
columns: after training task t) followed by the summary metrics.
On this small stream the projection term does not reliably add to DER++;
compare seeds with ``bfpcl run demos/quick_gaussian.ini``.
"""

import numpy as np

from bfpcl.data import make_gaussian_tasks
from bfpcl.metrics import MetricsReport
from bfpcl.trainer import CLASS_IL, MethodSpec, TrainConfig, run_continual

stream = make_gaussian_tasks(T=4, classes_per_task=2, dim=20, separation=5.0, n_per_class=100, seed=0)
config = TrainConfig(hidden=(32,), feature_dim=16, epochs=3)

for name in ("FT", "DER++", "DER++ w/ BFP"):
    result = run_continual(stream, MethodSpec.parse(name), config, seed=0)
    matrix = result.accuracy[CLASS_IL]
    report = MetricsReport.from_matrix(matrix)
    print(f"\n{name}")
    with np.printoptions(precision=2, suppress=True, nanstr="  - "):
        print(matrix.values)
    print(f"FAA {report.faa:.3f}  FF {report.ff:.3f}  ALA {report.ala:.3f}")
