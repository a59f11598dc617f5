"""Training losses with exact gradients.

Every loss is a batch mean and returns its value together with the
gradient(s) of that value.  Logits and features are column-batched,
``(c, n)`` and ``(d, n)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

BFP_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """``alpha`` (replay CE), ``beta`` (replay logit distillation), ``gamma`` (projection loss)."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidInputError(f"{name} must be finite and >= 0, got {value}")


def log_softmax(logits):
    shifted = logits - logits.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[:, None]
    labels = np.atleast_1d(np.asarray(labels))
    c, n = logits.shape
    if labels.shape != (n,):
        raise InvalidInputError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise InvalidInputError(f"labels must lie in [0, {c})")
    labels = labels.astype(np.intp)
    logp = log_softmax(logits)
    cols = np.arange(n)
    loss = -logp[labels, cols].mean()
    grad = np.exp(logp)
    grad[labels, cols] -= 1.0
    return float(loss), grad / n


def logit_distill(o, o_old):
    """Mean squared Euclidean distance between logit columns.

    ``o_old`` comes from the frozen model; only ``dL/do`` is returned.
    """
    o = np.asarray(o, dtype=np.float64)
    o_old = np.asarray(o_old, dtype=np.float64)
    if o.ndim == 1:
        o = o[:, None]
    if o_old.ndim == 1:
        o_old = o_old[:, None]
    if o.shape != o_old.shape:
        raise InvalidInputError(f"shape mismatch: {o.shape} vs {o_old.shape}")
    diff = o - o_old
    n = o.shape[1]
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def bfp_loss(projector, z, z_old):
    """Projection loss ``mean_i sqrt(||p([z_i; 1]) - z_old_i||^2 + eps)``.

    Returns ``(loss, dL/dz, projector_grad)``.  ``projector_grad`` has the
    projector's own structure (empty for the identity projector).  No
    gradient is produced for ``z_old``.
    """
    z = np.asarray(z, dtype=np.float64)
    z_old = np.asarray(z_old, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if z_old.ndim == 1:
        z_old = z_old[:, None]
    if z.ndim != 2 or z_old.ndim != 2 or z.shape[1] != z_old.shape[1]:
        raise InvalidInputError(f"shape mismatch: {z.shape} vs {z_old.shape}")
    n = z.shape[1]
    out, cache = projector.forward(z)
    if out.shape != z_old.shape:
        # a linear projector may map between widths; its output must match the target
        raise InvalidInputError(f"projected shape {out.shape} does not match target {z_old.shape}")
    resid = out - z_old
    norms = np.sqrt(np.sum(resid * resid, axis=0) + BFP_EPS)
    dout = resid / (norms * n)
    proj_grad, dz = projector.backward(cache, dout)
    return float(norms.mean()), dz, proj_grad


def total_loss(weights: LossWeights, parts) -> float:
    """``ce + alpha*rep_ce + beta*rep_logit + gamma*bfp`` for ``parts`` in that order."""
    ce, rep_ce, rep_logit, bfp = (float(p) for p in parts)
    return ce + weights.alpha * rep_ce + weights.beta * rep_logit + weights.gamma * bfp


def task_il_mask(logits, task_classes):
    """Argmax restricted to ``task_classes`` (lowest index wins ties).

    ``logits`` may be a single vector or a ``(c, n)`` batch; the result is an
    int or an array of class indices accordingly.
    """
    classes = np.array(sorted(set(int(k) for k in task_classes)), dtype=np.intp)
    logits = np.asarray(logits, dtype=np.float64)
    if classes.size == 0:
        raise InvalidInputError("task class set is empty")
    c = logits.shape[0]
    if classes[0] < 0 or classes[-1] >= c:
        raise InvalidInputError(f"task classes must lie in [0, {c})")
    picked = classes[np.argmax(logits[classes], axis=0)]
    return int(picked) if np.ndim(picked) == 0 else picked
