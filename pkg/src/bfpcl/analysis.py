"""Feature-space analysis: PCA spectra, projected accuracy, linear CKA,
linear probing and linear-separability checks.

Feature matrices are ``(d, n)``: one column per example.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import linalg as sla
from scipy.optimize import minimize

from .errors import InvalidInputError
from .linalg import as_matrix, frobenius_norm, svd_thin
from .network import Affine, augment, forward_features


def _labels(labels, n):
    labels = np.asarray(labels).astype(np.int64)
    if labels.shape != (n,):
        raise InvalidInputError(f"expected {n} labels, got shape {labels.shape}")
    return labels


# --- PCA and projected accuracy ---------------------------------------------


@dataclass
class PcaBasis:
    U: np.ndarray  # (d, d) principal directions as columns
    S: np.ndarray  # (d,) singular values, zero-padded when n < d
    mean: np.ndarray  # (d,) zeros unless centred


def pca(Z, center=False) -> PcaBasis:
    """Principal directions of ``Z`` from its SVD.

    Uncentred by default, so the directions describe ``Z`` itself.  When
    ``n < d`` the basis is completed with an orthonormal complement whose
    singular values are zero.
    """
    Z = as_matrix(Z)
    mean = Z.mean(axis=1) if center else np.zeros(Z.shape[0])
    U, S, _ = svd_thin(Z - mean[:, None])
    d = Z.shape[0]
    if U.shape[1] < d:
        U = np.hstack([U, sla.null_space(U.T)])
        S = np.concatenate([S, np.zeros(d - S.size)])
    return PcaBasis(U, S, mean)


def project(basis: PcaBasis, Z, k):
    d = basis.U.shape[0]
    if not 1 <= k <= d:
        raise InvalidInputError(f"k must lie in [1, {d}], got {k}")
    Uk = basis.U[:, :k]
    centred = Z - basis.mean[:, None]
    return basis.mean[:, None] + Uk @ (Uk.T @ centred)


def head_accuracy(head: Affine, Z, labels):
    labels = _labels(labels, Z.shape[1])
    return float(np.mean(np.argmax(head(Z), axis=0) == labels))


def proj_acc(basis, k, head: Affine, Z, labels):
    """Accuracy of ``head`` on features projected onto the top-``k`` directions."""
    if isinstance(basis, np.ndarray):
        basis = PcaBasis(basis, np.zeros(basis.shape[1]), np.zeros(basis.shape[0]))
    return head_accuracy(head, project(basis, np.asarray(Z, dtype=np.float64), k), labels)


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    proj_acc: np.ndarray  # proj_acc[k - 1] for k = 1..d
    accuracy: float  # unprojected accuracy

    @property
    def relative_singular_values(self):
        top = self.singular_values.max()
        return self.singular_values / top if top > 0 else self.singular_values

    @property
    def relative_proj_acc(self):
        top = self.proj_acc.max()
        return self.proj_acc / top if top > 0 else self.proj_acc

    def k_at(self, threshold=0.95):
        """Smallest ``k`` whose relative projected accuracy reaches ``threshold``."""
        return int(np.argmax(self.relative_proj_acc >= threshold)) + 1

    def rows(self):
        return [
            (k + 1, float(s), float(a))
            for k, (s, a) in enumerate(zip(self.singular_values, self.proj_acc))
        ]


def spectrum_report(Z_fit, head: Affine, Z_eval, labels, center=False) -> SpectrumReport:
    """PCA of ``Z_fit`` and projected accuracy of ``head`` on ``Z_eval`` for every ``k``."""
    Z_eval = as_matrix(Z_eval, "Z_eval")
    labels = _labels(labels, Z_eval.shape[1])
    basis = pca(Z_fit, center=center)
    d = basis.U.shape[0]
    accs = np.array([head_accuracy(head, project(basis, Z_eval, k), labels) for k in range(1, d + 1)])
    return SpectrumReport(basis.S, accs, head_accuracy(head, Z_eval, labels))


# --- CKA --------------------------------------------------------------------


def cka(Z1, Z2) -> float:
    """Linear CKA between two ``(d_i, n)`` feature matrices of the same examples.

    Columns are centred first.  Uses ``||Z1 Z2^T||_F^2 / (||Z1 Z1^T||_F
    ||Z2 Z2^T||_F)`` so that ``cka(Z, Z) == 1``.
    """
    Z1, Z2 = as_matrix(Z1, "Z1"), as_matrix(Z2, "Z2")
    if Z1.shape[1] != Z2.shape[1]:
        raise InvalidInputError(f"column counts differ: {Z1.shape[1]} vs {Z2.shape[1]}")
    Z1 = Z1 - Z1.mean(axis=1, keepdims=True)
    Z2 = Z2 - Z2.mean(axis=1, keepdims=True)
    # rescale first so that fourth powers stay within range
    n1, n2 = frobenius_norm(Z1), frobenius_norm(Z2)
    if n1 == 0.0 or n2 == 0.0:
        return 0.0
    Z1, Z2 = Z1 / n1, Z2 / n2
    num = frobenius_norm(Z1 @ Z2.T) ** 2
    den = frobenius_norm(Z1 @ Z1.T) * frobenius_norm(Z2 @ Z2.T)
    return float(min(max(num / den, 0.0), 1.0))


def cka_seen_unseen(h_prev, h_curr, seen_inputs, unseen_inputs):
    """CKA before/after a task on seen data and on the new task's data.

    ``h_prev`` / ``h_curr`` are extractor parameters; inputs are row-wise
    ``(n, width)`` arrays.
    """
    out = []
    for inputs in (seen_inputs, unseen_inputs):
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[0] == 0:
            raise InvalidInputError("CKA needs a non-empty input batch")
        before, _ = forward_features(h_prev, inputs.T)
        after, _ = forward_features(h_curr, inputs.T)
        out.append(cka(before, after))
    return tuple(out)


def cka_trace(features, test_tasks):
    """``[(t, seen, unseen)]`` for t >= 2 from per-boundary feature dumps.

    ``features[t]`` holds the test features of every task after training
    task ``t`` (0-based); ``test_tasks`` gives each column's task.  The
    returned ``t`` is 1-based.
    """
    test_tasks = np.asarray(test_tasks)
    rows = []
    for t in range(1, len(features)):
        seen, unseen = test_tasks < t, test_tasks == t
        rows.append((
            t + 1,
            cka(features[t - 1][:, seen], features[t][:, seen]),
            cka(features[t - 1][:, unseen], features[t][:, unseen]),
        ))
    return rows


# --- linear probing -----------------------------------------------------------


@dataclass
class LinearProbe:
    weight: np.ndarray  # (c, d) on standardized features
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    iterations: int
    grad_norm: float

    def predict(self, Z):
        Zs = (Z - self.mean[:, None]) / self.scale[:, None]
        return np.argmax(self.weight @ Zs + self.bias[:, None], axis=0)


def fit_linear_probe(Z, labels, n_classes=None, ridge=1e-4, tol=1e-5, max_iter=2000) -> LinearProbe:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with the training statistics.  The step size
    is the inverse of a Lipschitz bound on the gradient.
    """
    Z = as_matrix(Z)
    d, n = Z.shape
    labels = _labels(labels, n)
    c = int(n_classes or labels.max() + 1)
    mean = Z.mean(axis=1)
    scale = Z.std(axis=1)
    scale[scale == 0] = 1.0
    X = np.vstack([(Z - mean[:, None]) / scale[:, None], np.ones((1, n))])
    Y = np.zeros((c, n))
    Y[labels, np.arange(n)] = 1.0
    step = 1.0 / (0.5 * np.linalg.norm(X, 2) ** 2 / n + ridge)
    W = np.zeros((c, d + 1))
    reg = np.ones(d + 1)
    reg[-1] = 0.0  # bias is not penalized
    gnorm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        logits = W @ X
        logits -= logits.max(axis=0, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=0, keepdims=True)
        G = (P - Y) @ X.T / n + ridge * W * reg
        gnorm = float(np.linalg.norm(G))
        if gnorm < tol:
            break
        W -= step * G
    return LinearProbe(W[:, :-1], W[:, -1], mean, scale, it, gnorm)


def stratified_fraction(labels, fraction, seed=0):
    """Indices of a seeded per-class subset holding ``ceil(fraction * n_c)`` of each class."""
    if not 0 < fraction <= 1:
        raise InvalidInputError(f"fraction must lie in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    keep = []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        keep.append(rng.permutation(idx)[: int(np.ceil(fraction * idx.size))])
    return np.sort(np.concatenate(keep))


def linear_probe(Z_train, y_train, Z_test, y_test, fraction=1.0, seed=0, **fit_kw) -> float:
    """Test accuracy of a linear classifier fit on frozen features.

    Every class present in ``y_test`` must appear in the (possibly reduced)
    training portion.
    """
    Z_train, Z_test = as_matrix(Z_train, "Z_train"), as_matrix(Z_test, "Z_test")
    y_train = _labels(y_train, Z_train.shape[1])
    y_test = _labels(y_test, Z_test.shape[1])
    if fraction < 1.0:
        idx = stratified_fraction(y_train, fraction, seed)
        Z_train, y_train = Z_train[:, idx], y_train[idx]
    missing = sorted(set(np.unique(y_test)) - set(np.unique(y_train)))
    if missing:
        raise InvalidInputError(f"class {missing[0]} has no training example for the probe")
    n_classes = int(max(y_train.max(), y_test.max()) + 1)
    probe = fit_linear_probe(Z_train, y_train, n_classes, **fit_kw)
    return float(np.mean(probe.predict(Z_test) == y_test))


# --- separability -------------------------------------------------------------


def fit_linear_projection(Z_new, Z_old):
    """Least-squares ``A`` of shape ``(d_old, d_new + 1)`` with ``A [z_new; 1] ~ z_old``."""
    Zh = augment(as_matrix(Z_new, "Z_new"))
    sol, *_ = np.linalg.lstsq(Zh.T, as_matrix(Z_old, "Z_old").T, rcond=None)
    return sol.T


def fit_separator(Z, positive):
    """Separating direction for a boolean split of the columns of ``Z``.

    A lightly ridged logistic fit gives the direction ``w`` (unit norm); the
    threshold ``b`` is then placed mid-gap along ``w``.  Positive examples
    satisfy ``w.z > b`` when the split is separable.
    """
    Z = as_matrix(Z)
    d = Z.shape[0]
    s = np.where(positive, 1.0, -1.0)
    scale = max(np.abs(Z).max(), 1e-12)
    X = Z / scale

    def objective(theta):
        w, c = theta[:d], theta[d]
        m = s * (w @ X + c)
        loss = np.logaddexp(0.0, -m).mean() + 0.5e-6 * w @ w
        sig = -s * np.exp(-np.logaddexp(0.0, m))  # d(loss)/d(score) per example
        grad_w = X @ sig / X.shape[1] + 1e-6 * w
        return loss, np.concatenate([grad_w, [sig.mean()]])

    theta = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B", options={"maxiter": 2000}).x
    w = theta[:d]
    norm = np.linalg.norm(w)
    if norm == 0.0:
        return np.zeros(d), 0.0
    w = w / norm
    proj = w @ Z
    lo, hi = proj[~positive].max(), proj[positive].min()
    b = 0.5 * (lo + hi) if hi > lo else -theta[d] * scale / norm
    return w, float(b)


def count_violations(scores, positive, b):
    return int(np.sum(scores[positive] <= b) + np.sum(scores[~positive] >= b))


@dataclass
class PairSeparability:
    classes: tuple
    w: np.ndarray  # unit direction in the old feature space
    b: float
    separable: bool
    violations_old: int
    violations_new: int = None  # None when the pair was skipped
    margin_old: float = None


@dataclass
class SeparabilityReport:
    pairs: list = field(default_factory=list)

    @property
    def total_new_violations(self):
        return sum(p.violations_new for p in self.pairs if p.separable)

    @property
    def skipped(self):
        return [p.classes for p in self.pairs if not p.separable]


def separability_check(Z_old, Z_new, labels, A) -> SeparabilityReport:
    """Transport each pairwise old-space separator through ``A``.

    For classes ``(a, b)`` separated in ``Z_old`` by ``(w, b)``, the new-space
    score of a column is ``(A^T w) . [z_new; 1]``; violations of the same
    threshold are counted.  Non-separable old pairs are flagged and skipped.
    """
    Z_old, Z_new = as_matrix(Z_old, "Z_old"), as_matrix(Z_new, "Z_new")
    labels = _labels(labels, Z_old.shape[1])
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (Z_old.shape[0], Z_new.shape[0] + 1):
        raise InvalidInputError(f"A must have shape {(Z_old.shape[0], Z_new.shape[0] + 1)}")
    Zh = augment(Z_new)
    report = SeparabilityReport()
    for c1, c2 in combinations(np.unique(labels), 2):
        cols = np.flatnonzero((labels == c1) | (labels == c2))
        positive = labels[cols] == c1
        w, b = fit_separator(Z_old[:, cols], positive)
        old_scores = w @ Z_old[:, cols]
        v_old = count_violations(old_scores, positive, b)
        pair = PairSeparability((int(c1), int(c2)), w, b, v_old == 0, v_old)
        if pair.separable:
            pair.margin_old = float(min(old_scores[positive].min() - b, b - old_scores[~positive].max()))
            pair.violations_new = count_violations((A.T @ w) @ Zh[:, cols], positive, b)
        report.pairs.append(pair)
    return report


def low_variance_axis(Z):
    """Unit direction of least variance of ``Z`` about its mean."""
    basis = pca(Z, center=True)
    return basis.U[:, -1]


def separated_along(Z, labels, v, first, second):
    """Number of ordered pairs violating ``v.z_i > v.z_j`` for ``i`` in ``first``, ``j`` in ``second``."""
    scores = np.asarray(v) @ as_matrix(Z)
    labels = _labels(labels, scores.size)
    a, b = scores[labels == first], scores[labels == second]
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("both classes need at least one example")
    return int(np.sum(a[:, None] <= b[None, :]))
