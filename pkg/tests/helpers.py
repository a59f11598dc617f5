"""Finite-difference oracle and small constructors shared by the tests."""

import numpy as np

from bfpcl.network import Affine, NetworkParams


def random_params(rng, dims, n_classes, scale=0.1):
    """Weights and biases drawn from N(0, scale^2)."""
    layers = [
        Affine(rng.normal(0, scale, (dims[i + 1], dims[i])), rng.normal(0, scale, dims[i + 1]))
        for i in range(len(dims) - 1)
    ]
    return NetworkParams(layers, Affine(rng.normal(0, scale, (n_classes, dims[-1])), rng.normal(0, scale, n_classes)))


def coordinates(arrays, count, rng):
    """``count`` random ``(array index, flat index)`` pairs, sized by array length."""
    sizes = np.array([a.size for a in arrays])
    picks = rng.choice(sizes.sum(), size=min(count, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    out = []
    for p in picks:
        k = int(np.searchsorted(offsets, p, side="right") - 1)
        out.append((k, int(p - offsets[k])))
    return out


def central_difference(f, arrays, coords, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arrays`` (perturbed in place)."""
    out = []
    for k, i in coords:
        flat = arrays[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        out.append((up - down) / (2 * h))
    return np.array(out)


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def pick(grad_arrays, coords):
    return np.array([grad_arrays[k].reshape(-1)[i] for k, i in coords])
