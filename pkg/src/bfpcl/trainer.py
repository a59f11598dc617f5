"""Continual training loop with replay and backward feature projection.

One run walks the task stream in order.  At every step the online batch
gets a cross-entropy loss; from the second task on, methods with a buffer
add replay cross-entropy and logit distillation on independently sampled
replay batches, and methods with a projector add the projection loss
against the frozen end-of-previous-task model.  The network is updated by
plain SGD and the projector by momentum SGD; the projector and its
optimizer are redrawn at every task start.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .buffer import MemoryBuffer
from .data import LabeledDataset, Task, TaskStream, batch_iter
from .errors import DivergedRunError, InvalidInputError
from .losses import LossWeights, bfp_loss, cross_entropy, logit_distill, task_il_mask, total_loss
from .metrics import AccuracyMatrix
from .network import (
    NetworkParams,
    OptimizerState,
    add_grads,
    backward,
    forward,
    forward_features,
    init_params,
    init_projector,
    sgd_momentum_step,
    sgd_step,
)

BASES = ("FT", "JT", "ER", "DER++")
PROJECTORS = (None, "FD", "BFP", "BFP-2")
CLASS_IL, TASK_IL = "class-il", "task-il"
MODES = (CLASS_IL, TASK_IL)


@dataclass(frozen=True)
class MethodSpec:
    base: str
    projector: str = None
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.base not in BASES:
            raise InvalidInputError(f"unknown base method {self.base!r}")
        if self.projector not in PROJECTORS:
            raise InvalidInputError(f"unknown projector {self.projector!r}")
        w = self.weights
        if self.base in ("FT", "JT") and (w.alpha or w.beta):
            raise InvalidInputError(f"{self.base} does not replay; alpha and beta must be 0")
        if self.base == "JT" and self.projector is not None:
            raise InvalidInputError("joint training has no previous model to project onto")
        if self.projector is None and w.gamma:
            raise InvalidInputError("gamma > 0 needs a projector")

    @property
    def name(self):
        return self.base if self.projector is None else f"{self.base} w/ {self.projector}"

    @property
    def uses_buffer(self):
        return self.base in ("ER", "DER++")

    @classmethod
    def parse(cls, name, alpha=None, beta=None, gamma=1.0, er_alpha=1.0, der_alpha=0.1, der_beta=0.05):
        """Build a method from names like ``"DER++ w/ BFP"`` or ``"ER"``.

        Replay weights default per base (ER: ``alpha=er_alpha``; DER++:
        ``der_alpha, der_beta``) unless given explicitly.
        """
        base, _, proj = (part.strip() for part in name.partition("w/"))
        proj = proj or None
        defaults = {"ER": (er_alpha, 0.0), "DER++": (der_alpha, der_beta)}.get(base, (0.0, 0.0))
        a = defaults[0] if alpha is None else alpha
        b = defaults[1] if beta is None else beta
        g = gamma if proj is not None else 0.0
        return cls(base, proj, LossWeights(a, b, g))


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (100,)
    feature_dim: int = 50
    epochs: int = 5
    batch_size: int = 32
    lr: float = 0.05
    replay_batch_size: int = 32
    buffer_capacity: int = 200
    projector_lr: float = 0.1
    projector_momentum: float = 0.9
    bfp_mode: str = "online_and_replay"  # or "replay_only"
    joint: str = "final"  # JT: "final" (one run on the union) or "cumulative"

    def __post_init__(self):
        if self.bfp_mode not in ("online_and_replay", "replay_only"):
            raise InvalidInputError(f"unknown bfp_mode {self.bfp_mode!r}")
        if self.joint not in ("final", "cumulative"):
            raise InvalidInputError(f"unknown joint mode {self.joint!r}")
        for name in ("feature_dim", "epochs", "batch_size", "replay_batch_size"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.buffer_capacity < 0:
            raise InvalidInputError("buffer_capacity must be >= 0")
        if any(h <= 0 for h in self.hidden):
            raise InvalidInputError("hidden widths must be positive")
        for name in ("lr", "projector_lr"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if not 0 <= self.projector_momentum < 1:
            raise InvalidInputError("projector_momentum must lie in [0, 1)")

    def dims(self, input_dim):
        return (input_dim, *self.hidden, self.feature_dim)


def freeze_checkpoint(params: NetworkParams) -> NetworkParams:
    """Deep, read-only copy of ``params``."""
    frozen = params.copy()
    for arr in frozen.arrays():
        arr.setflags(write=False)
    return frozen


@dataclass
class RunState:
    params: NetworkParams
    buffer: MemoryBuffer
    rngs: dict
    projector: object = None
    projector_opt: OptimizerState = None
    checkpoint: NetworkParams = None
    task_index: int = 0  # 0-based index of the task being trained
    step: int = 0


@dataclass
class StepInfo:
    parts: tuple  # (ce, rep_ce, rep_logit, bfp)
    total: float
    grads: NetworkParams
    projector_grads: object = None
    evaluated: tuple = ()  # names of the loss terms actually computed


def new_state(input_dim, n_classes, config: TrainConfig, seed) -> RunState:
    ss = np.random.SeedSequence(seed)
    init_ss, batch_ss, buffer_ss, replay_ss, proj_ss = ss.spawn(5)
    params = init_params(config.dims(input_dim), n_classes, init_ss)
    rngs = {
        "batches": np.random.default_rng(batch_ss),
        "replay": np.random.default_rng(replay_ss),
        "projector": np.random.default_rng(proj_ss),
    }
    return RunState(params, MemoryBuffer(config.buffer_capacity, buffer_ss), rngs)


def begin_task(state: RunState, method: MethodSpec, config: TrainConfig):
    if method.projector is not None:
        state.projector = init_projector(method.projector, config.feature_dim, state.rngs["projector"])
        state.projector_opt = OptimizerState.for_params(
            state.projector, config.projector_lr, config.projector_momentum
        )
    return state


def train_step(state: RunState, x, y, method: MethodSpec, config: TrainConfig) -> StepInfo:
    """One optimization step on the online batch ``(x, y)``; updates ``state`` in place."""
    w = method.weights
    xb = np.asarray(x, dtype=np.float64).T
    old = state.checkpoint
    replay = old is not None and method.uses_buffer and len(state.buffer) > 0
    use_proj = old is not None and method.projector is not None and w.gamma > 0
    online_bfp = use_proj and (not method.uses_buffer or config.bfp_mode == "online_and_replay")
    replay_bfp = use_proj and replay
    n_bfp = int(online_bfp) + int(replay_bfp)
    bfp_weight = w.gamma / n_bfp if n_bfp else 0.0

    rep_ce = rep_logit = bfp = 0.0
    bfp_values = []
    evaluated = ["ce"]
    proj_grads = None

    o, z, cache = forward(state.params, xb)
    ce, d_o = cross_entropy(o, y)
    dz = None
    if online_bfp:
        z_old, _ = forward_features(old, xb)
        value, dz_b, proj_grads = bfp_loss(state.projector, z, z_old)
        bfp_values.append(value)
        dz = bfp_weight * dz_b
        evaluated.append("bfp-online")
    grads = backward(cache, d_logits=d_o, d_features=dz)

    if replay and w.alpha > 0:
        xr, yr = state.buffer.sample_batch(config.replay_batch_size, state.rngs["replay"])
        o_r, _, c_r = forward(state.params, xr.T)
        rep_ce, d = cross_entropy(o_r, yr)
        grads = add_grads(grads, backward(c_r, d_logits=w.alpha * d))
        evaluated.append("rep-ce")
    if replay and w.beta > 0:
        xr, _ = state.buffer.sample_batch(config.replay_batch_size, state.rngs["replay"])
        o_r, _, c_r = forward(state.params, xr.T)
        o_old, _, _ = forward(old, xr.T)
        rep_logit, d = logit_distill(o_r, o_old)
        grads = add_grads(grads, backward(c_r, d_logits=w.beta * d))
        evaluated.append("rep-logit")
    if replay_bfp:
        xr, _ = state.buffer.sample_batch(config.replay_batch_size, state.rngs["replay"])
        _, z_r, c_r = forward(state.params, xr.T)
        z_old, _ = forward_features(old, xr.T)
        value, dz_b, pg = bfp_loss(state.projector, z_r, z_old)
        bfp_values.append(value)
        grads = add_grads(grads, backward(c_r, d_features=bfp_weight * dz_b))
        proj_grads = pg if proj_grads is None else add_grads(proj_grads, pg)
        evaluated.append("bfp-replay")
    if bfp_values:
        bfp = float(np.mean(bfp_values))

    parts = (ce, rep_ce, rep_logit, bfp)
    total = total_loss(w, parts)
    if not np.isfinite(total):
        raise DivergedRunError("non-finite training loss", state.step)

    state.params = sgd_step(state.params, grads, config.lr)
    if proj_grads is not None and state.projector.arrays():
        # every term shares the weight gamma / n_bfp before reaching A
        proj_grads = [bfp_weight * g for g in proj_grads.arrays()]
        state.projector_opt, state.projector = sgd_momentum_step(
            state.projector_opt, state.projector, proj_grads
        )
    if method.uses_buffer:
        for xi, yi in zip(x, y):
            state.buffer.balanced_reservoir_insert(xi, yi)
    state.step += 1
    return StepInfo(parts, total, grads, proj_grads, tuple(evaluated))


def train_task(state: RunState, data: LabeledDataset, method: MethodSpec, config: TrainConfig, on_step=None):
    """Train on one task's data for ``config.epochs`` epochs.

    ``on_step(state, info)`` is called after every step when given.
    """
    begin_task(state, method, config)
    for _ in range(config.epochs):
        epoch_seed = int(state.rngs["batches"].integers(2**63))
        for xb, yb in batch_iter(data, config.batch_size, epoch_seed):
            info = train_step(state, xb, yb, method, config)
            if on_step is not None:
                on_step(state, info)
    state.checkpoint = freeze_checkpoint(state.params)
    state.task_index += 1
    return state


def predict(params: NetworkParams, inputs, mode=CLASS_IL, classes=None):
    logits, _, _ = forward(params, np.asarray(inputs, dtype=np.float64).T)
    if mode == CLASS_IL:
        return np.argmax(logits, axis=0)
    if mode == TASK_IL:
        return task_il_mask(logits, classes)
    raise InvalidInputError(f"unknown evaluation mode {mode!r}")


def evaluate(params: NetworkParams, tasks, mode=CLASS_IL):
    """Test accuracy per task; Task-IL restricts the argmax to each task's classes."""
    accs = []
    for task in tasks:
        if len(task.test) == 0:
            raise InvalidInputError("task has an empty test split")
        pred = predict(params, task.test.inputs, mode, task.classes)
        accs.append(float(np.mean(pred == task.test.labels)))
    return accs


@dataclass
class RunResult:
    method: MethodSpec
    seed: int
    accuracy: dict  # mode -> AccuracyMatrix
    params: NetworkParams
    checkpoints: list  # model after each trained boundary
    boundaries: list  # 0-based task index of each checkpoint
    features: list = field(default_factory=list)  # h(test data of all tasks) per boundary, (d, N)
    test_labels: np.ndarray = None
    test_tasks: np.ndarray = None  # task index of each test column
    steps: int = 0


def joint_task(stream: TaskStream, upto=None) -> Task:
    tasks = stream.tasks[:upto]
    classes = tuple(k for t in tasks for k in t.classes)
    return Task(classes, stream.joint(upto), stream.joint_test(upto))


def run_continual(stream: TaskStream, method: MethodSpec, config: TrainConfig, seed, on_step=None) -> RunResult:
    """Train over the stream and fill the Class-IL and Task-IL accuracy matrices."""
    first = stream[0].train
    state = new_state(first.width, stream.class_count, config, seed)
    T = len(stream)
    acc = {mode: AccuracyMatrix(T) for mode in MODES}
    test_all = stream.joint_test()
    test_tasks = np.concatenate([np.full(len(t.test), i) for i, t in enumerate(stream)])
    result = RunResult(method, seed, acc, None, [], [], [], test_all.labels, test_tasks)

    if method.base == "JT" and config.joint == "final":
        schedule = [(T - 1, stream.joint())]
    elif method.base == "JT":
        schedule = [(t, stream.joint(t + 1)) for t in range(T)]
    else:
        schedule = [(t, task.train) for t, task in enumerate(stream)]

    for t, data in schedule:
        train_task(state, data, method, config, on_step)
        for mode in MODES:
            for i, a in enumerate(evaluate(state.params, stream.tasks[: t + 1], mode)):
                acc[mode][i, t] = a
        result.checkpoints.append(state.checkpoint)
        result.boundaries.append(t)
        result.features.append(forward_features(state.params, test_all.inputs.T)[0])
    result.params = state.params
    result.steps = state.step
    return result


def with_gamma(method: MethodSpec, gamma) -> MethodSpec:
    return replace(method, weights=replace(method.weights, gamma=gamma))
