"""How many principal directions does the classifier actually need?

Trains joint training (cumulative over seen tasks) and fine-tuning on
the bundled MNIST subset for one epoch per task, then, after each task,
reports the smallest k whose top-k PCA projection of the features keeps
95% of the head's accuracy on the seen classes.  Joint training keeps
adding directions as classes arrive; fine-tuning keeps collapsing onto
the few the current task needs.
"""

import numpy as np

from bfpcl.analysis import spectrum_report
from bfpcl.data import load_mnist_subset, split_by_classes
from bfpcl.network import forward_features
from bfpcl.trainer import MethodSpec, TrainConfig, run_continual

train, test = load_mnist_subset()
stream = split_by_classes(train, test, classes_per_task=2)
config = TrainConfig(epochs=1, joint="cumulative")

for name in ("JT", "FT"):
    result = run_continual(stream, MethodSpec.parse(name), config, seed=0)
    ks = []
    for t, params in zip(result.boundaries, result.checkpoints):
        Z_fit = forward_features(params, stream.joint(t + 1).inputs.T)[0]
        seen = stream.joint_test(t + 1)
        Z_eval = forward_features(params, seen.inputs.T)[0]
        ks.append(spectrum_report(Z_fit, params.head, Z_eval, seen.labels).k_at(0.95))
    print(f"{name:3s} k(0.95) after each task: {ks}")
