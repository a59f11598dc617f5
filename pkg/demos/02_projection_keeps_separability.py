"""A linear map between feature spaces carries old decision boundaries along.

Old features separate two classes along one axis.  The new extractor mixes
them into three dimensions and adds one fresh, class-informative direction.
Fitting the affine projector by least squares and pulling each old
separator back through it leaves the old classes separable, while the new
direction stays unconstrained.
"""

import numpy as np

from bfpcl.analysis import fit_linear_projection, separability_check
from bfpcl.losses import bfp_loss
from bfpcl.network import ProjectorParams

rng = np.random.default_rng(0)
n = 200
labels = np.repeat([0, 1], n // 2)
Z_old = np.vstack([np.where(labels == 0, 2.0, -2.0) + 0.5 * rng.normal(size=n), rng.normal(size=n)])
mix = rng.normal(size=(3, 2))
Z_new = np.vstack([mix @ Z_old, rng.normal(size=n)])  # 4th row is a brand-new direction

A = fit_linear_projection(Z_new, Z_old)
loss, _, _ = bfp_loss(ProjectorParams(A), Z_new, Z_old)
report = separability_check(Z_old, Z_new, labels, A)
pair = report.pairs[0]
print(f"projection loss        {loss:.2e}")
print(f"old-space violations   {pair.violations_old}")
print(f"new-space violations   {pair.violations_new}")
print(f"weight on the new axis {abs(A[:, 3]).max():.2e}   (free to learn new tasks)")
