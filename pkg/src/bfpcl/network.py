"""Feedforward feature extractor, linear head, projectors and optimizers.

Conventions: a batch is stored column-wise, so inputs are ``(in_dim, n)``,
features ``z`` are ``(d, n)`` and logits ``(c, n)``.  Weights are
``(out, in)`` and biases ``(out,)``.

The extractor is an affine/ReLU stack whose last layer is linear.  All
parameter containers expose ``arrays()`` / ``with_arrays()`` so the
optimizers can treat them as flat lists of arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidStateError


def _check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")


def _as_batch(x, rows, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != rows:
        raise InvalidInputError(f"{name} must have {rows} rows, got shape {x.shape}")
    return x


@dataclass
class Affine:
    weight: np.ndarray
    bias: np.ndarray

    def __call__(self, x):
        return self.weight @ x + self.bias[:, None]

    def copy(self):
        return Affine(self.weight.copy(), self.bias.copy())


@dataclass
class NetworkParams:
    """Extractor layers followed by the classification head."""

    layers: list
    head: Affine

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def feature_dim(self):
        return self.layers[-1].weight.shape[0]

    @property
    def n_classes(self):
        return self.head.weight.shape[0]

    def arrays(self):
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out + [self.head.weight, self.head.bias]

    def with_arrays(self, arrays):
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.layers) + 2:
            raise InvalidInputError("wrong number of arrays for NetworkParams")
        layers = [Affine(arrays[2 * i], arrays[2 * i + 1]) for i in range(len(self.layers))]
        return NetworkParams(layers, Affine(arrays[-2], arrays[-1]))

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(dims, n_classes, seed) -> NetworkParams:
    """Initialize an extractor with layer sizes ``dims`` plus a ``n_classes`` head.

    ``dims = (784, 100, 50)`` gives ``784 -> 100 -> ReLU -> 50``.  Weights are
    Glorot-uniform, biases zero.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d <= 0 for d in dims) or n_classes <= 0:
        raise InvalidInputError(f"layer sizes must be >= 2 positive ints, got {dims}")
    rng = np.random.default_rng(seed)
    layers = [
        Affine(glorot_uniform(rng, dims[i + 1], dims[i]), np.zeros(dims[i + 1]))
        for i in range(len(dims) - 1)
    ]
    head = Affine(glorot_uniform(rng, n_classes, dims[-1]), np.zeros(n_classes))
    return NetworkParams(layers, head)


@dataclass
class FeatureCache:
    inputs: list  # input to each layer
    preacts: list  # pre-activation of each layer
    weights: list  # weight matrices used in the forward pass

    @property
    def out_shape(self):
        return self.preacts[-1].shape


def forward_features(params: NetworkParams, x):
    """Return ``(z, cache)`` for the extractor applied to columns of ``x``."""
    h = _as_batch(x, params.input_dim, "x")
    inputs, preacts = [], []
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        inputs.append(h)
        a = layer(h)
        preacts.append(a)
        h = a if i == last else np.maximum(a, 0.0)
    return h, FeatureCache(inputs, preacts, [layer.weight for layer in params.layers])


def backward_features(cache: FeatureCache, dz, return_input_grad=False):
    """Backpropagate ``dL/dz`` through the extractor.

    Returns the list of per-layer :class:`Affine` gradients, and optionally
    ``dL/dx`` as a second value.
    """
    if not isinstance(cache, FeatureCache):
        raise InvalidStateError("backward needs the cache returned by forward_features")
    dz = np.asarray(dz, dtype=np.float64)
    if dz.shape != cache.out_shape:
        raise InvalidStateError(
            f"upstream gradient shape {dz.shape} does not match cached output {cache.out_shape}"
        )
    grads = [None] * len(cache.weights)
    g = dz
    for i in reversed(range(len(cache.weights))):
        if i != len(cache.weights) - 1:
            g = g * (cache.preacts[i] > 0)
        grads[i] = Affine(g @ cache.inputs[i].T, g.sum(axis=1))
        if i > 0 or return_input_grad:
            g = cache.weights[i].T @ g
    if return_input_grad:
        return grads, g
    return grads


def forward_logits(head: Affine, z):
    z = _as_batch(z, head.weight.shape[1], "z")
    return head(z)


def backward_logits(head: Affine, z, do):
    """Gradients of the head and of its input given ``dL/do``."""
    z = _as_batch(z, head.weight.shape[1], "z")
    do = np.asarray(do, dtype=np.float64)
    if do.shape != (head.weight.shape[0], z.shape[1]):
        raise InvalidStateError(f"upstream logit gradient has shape {do.shape}")
    return Affine(do @ z.T, do.sum(axis=1)), head.weight.T @ do


@dataclass
class ForwardCache:
    features: FeatureCache
    z: np.ndarray
    head: Affine


def forward(params: NetworkParams, x):
    """Full model: returns ``(logits, z, cache)``."""
    z, fcache = forward_features(params, x)
    return params.head(z), z, ForwardCache(fcache, z, params.head)


def backward(cache: ForwardCache, d_logits=None, d_features=None, return_input_grad=False):
    """Reverse pass for :func:`forward`.

    Either upstream term may be ``None`` (treated as zero).  ``d_features``
    is an extra gradient arriving directly at ``z`` (e.g. from a feature
    distillation loss).  Returns a :class:`NetworkParams`-shaped gradient.
    """
    if not isinstance(cache, ForwardCache):
        raise InvalidStateError("backward needs the cache returned by forward")
    c, n = cache.head.weight.shape[0], cache.z.shape[1]
    if d_logits is None:
        head_grad = Affine(np.zeros_like(cache.head.weight), np.zeros_like(cache.head.bias))
        dz = np.zeros_like(cache.z)
    else:
        d_logits = np.asarray(d_logits, dtype=np.float64)
        if d_logits.shape != (c, n):
            raise InvalidStateError(f"d_logits shape {d_logits.shape} != {(c, n)}")
        head_grad, dz = backward_logits(cache.head, cache.z, d_logits)
    if d_features is not None:
        d_features = np.asarray(d_features, dtype=np.float64)
        if d_features.shape != cache.z.shape:
            raise InvalidStateError(f"d_features shape {d_features.shape} != {cache.z.shape}")
        dz = dz + d_features
    out = backward_features(cache.features, dz, return_input_grad)
    if return_input_grad:
        layer_grads, dx = out
        return NetworkParams(layer_grads, head_grad), dx
    return NetworkParams(out, head_grad)


# --- projectors -----------------------------------------------------------
#
# A projector maps the bias-augmented new feature [z; 1] back to the old
# feature space.  The augmentation is applied here, never stored.


def augment(z):
    return np.vstack([z, np.ones((1, z.shape[1]))])


class IdentityProjector:
    """Fixed ``p(z) = z``; turns the projection loss into plain feature distillation."""

    name = "FD"

    def arrays(self):
        return []

    def with_arrays(self, arrays):
        if list(arrays):
            raise InvalidInputError("identity projector has no parameters")
        return self

    def forward(self, z):
        return z, None

    def backward(self, cache, dout):
        return self, dout


@dataclass
class ProjectorParams:
    """Linear projector ``A`` of shape ``(d, d + 1)`` acting on ``[z; 1]``."""

    A: np.ndarray
    name = "BFP"

    def arrays(self):
        return [self.A]

    def with_arrays(self, arrays):
        (A,) = arrays
        return ProjectorParams(A)

    def forward(self, z):
        if z.shape[0] + 1 != self.A.shape[1]:
            raise InvalidInputError(f"projector expects {self.A.shape[1] - 1} features, got {z.shape[0]}")
        zh = augment(z)
        return self.A @ zh, zh

    def backward(self, zh, dout):
        """Return ``(grad as ProjectorParams, dL/dz)``."""
        return ProjectorParams(dout @ zh.T), self.A[:, :-1].T @ dout


@dataclass
class TwoLayerProjector:
    """``p(z) = W2 [relu(W1 [z; 1]); 1]`` with hidden width ``d``."""

    W1: np.ndarray
    W2: np.ndarray
    name = "BFP-2"

    def arrays(self):
        return [self.W1, self.W2]

    def with_arrays(self, arrays):
        W1, W2 = arrays
        return TwoLayerProjector(W1, W2)

    def forward(self, z):
        if z.shape[0] + 1 != self.W1.shape[1]:
            raise InvalidInputError(f"projector expects {self.W1.shape[1] - 1} features, got {z.shape[0]}")
        zh = augment(z)
        a = self.W1 @ zh
        hh = augment(np.maximum(a, 0.0))
        return self.W2 @ hh, (zh, a, hh)

    def backward(self, cache, dout):
        zh, a, hh = cache
        dW2 = dout @ hh.T
        da = (self.W2[:, :-1].T @ dout) * (a > 0)
        dW1 = da @ zh.T
        return TwoLayerProjector(dW1, dW2), self.W1[:, :-1].T @ da


PROJECTOR_KINDS = ("FD", "BFP", "BFP-2")


def init_projector(kind, feature_dim, rng):
    """Draw a fresh projector; weights are uniform in ``±1/sqrt(d + 1)``."""
    d = int(feature_dim)
    limit = 1.0 / np.sqrt(d + 1)
    if kind == "FD":
        return IdentityProjector()
    if kind == "BFP":
        return ProjectorParams(rng.uniform(-limit, limit, size=(d, d + 1)))
    if kind == "BFP-2":
        return TwoLayerProjector(
            rng.uniform(-limit, limit, size=(d, d + 1)),
            rng.uniform(-limit, limit, size=(d, d + 1)),
        )
    raise InvalidInputError(f"unknown projector kind {kind!r}; expected one of {PROJECTOR_KINDS}")


# --- optimizers -----------------------------------------------------------


def _leaves(tree):
    if hasattr(tree, "arrays"):
        return list(tree.arrays())
    if isinstance(tree, (list, tuple)):
        return [np.asarray(a, dtype=np.float64) for a in tree]
    return [np.asarray(tree, dtype=np.float64)]


def _rebuild(tree, leaves):
    if hasattr(tree, "with_arrays"):
        return tree.with_arrays(leaves)
    if isinstance(tree, (list, tuple)):
        return type(tree)(leaves)
    return leaves[0]


def _paired(params, grads):
    p, g = _leaves(params), _leaves(grads)
    if len(p) != len(g) or any(a.shape != b.shape for a, b in zip(p, g)):
        raise InvalidInputError("parameter and gradient shapes do not match")
    return p, g


def sgd_step(params, grads, lr):
    """Plain SGD, ``p <- p - lr * g``; returns new parameters."""
    p, g = _paired(params, grads)
    return _rebuild(params, [a - lr * b for a, b in zip(p, g)])


@dataclass
class OptimizerState:
    lr: float
    momentum: float
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError(f"momentum must lie in [0, 1), got {self.momentum}")

    @classmethod
    def for_params(cls, params, lr, momentum):
        return cls(lr, momentum, [np.zeros_like(a) for a in _leaves(params)])


def sgd_momentum_step(state: OptimizerState, params, grads):
    """Classical momentum: ``v <- mu v + g``; ``p <- p - lr v``.

    Returns ``(new_state, new_params)``; the input state is not modified.
    """
    p, g = _paired(params, grads)
    if len(state.velocity) != len(p) or any(v.shape != a.shape for v, a in zip(state.velocity, p)):
        raise InvalidInputError("optimizer velocity shapes do not match parameters")
    velocity = [state.momentum * v + b for v, b in zip(state.velocity, g)]
    new_params = _rebuild(params, [a - state.lr * v for a, v in zip(p, velocity)])
    return OptimizerState(state.lr, state.momentum, velocity), new_params


def add_grads(a, b):
    """Elementwise sum of two gradient trees of the same structure."""
    la, lb = _paired(a, b)
    return _rebuild(a, [x + y for x, y in zip(la, lb)])


def scale_grads(a, s):
    return _rebuild(a, [s * x for x in _leaves(a)])
