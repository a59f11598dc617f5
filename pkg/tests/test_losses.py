import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bfpcl.analysis import fit_linear_projection, fit_separator, count_violations, separated_along
from bfpcl.errors import InvalidInputError
from bfpcl.losses import LossWeights, bfp_loss, cross_entropy, logit_distill, task_il_mask, total_loss
from bfpcl.network import IdentityProjector, OptimizerState, ProjectorParams, augment, init_projector, sgd_momentum_step

from helpers import central_difference, coordinates, pick, relative_error


# --- cross entropy ---------------------------------------------------------------


@pytest.mark.example
def test_ce_uniform_logits():
    loss, _ = cross_entropy(np.zeros((10, 3)), [0, 4, 9])
    assert loss == pytest.approx(math.log(10), abs=1e-12)


@pytest.mark.example
def test_ce_saturated():
    logits = np.zeros((5, 1))
    logits[2] = 50.0
    assert cross_entropy(logits, [2])[0] < 1e-9


@pytest.mark.example
def test_ce_two_logits():
    loss, grad = cross_entropy(np.array([1.0, 2.0]), [1])
    assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-14)
    p = 1 / (1 + math.exp(1))
    assert np.allclose(grad.ravel(), [p, -p])


def test_ce_rejects_bad_labels():
    with pytest.raises(InvalidInputError):
        cross_entropy(np.zeros((3, 2)), [0, 3])
    with pytest.raises(InvalidInputError):
        cross_entropy(np.zeros((3, 2)), [-1, 0])
    with pytest.raises(InvalidInputError):
        cross_entropy(np.zeros((3, 2)), [0])


def test_ce_gradient_is_batch_mean():
    rng = np.random.default_rng(0)
    o = rng.normal(size=(4, 6))
    y = rng.integers(0, 4, 6)
    _, grad = cross_entropy(o, y)
    p = np.exp(o) / np.exp(o).sum(axis=0)
    p[y, np.arange(6)] -= 1
    assert np.allclose(grad, p / 6)


# --- logit distillation ----------------------------------------------------------


@pytest.mark.example
def test_distill_examples():
    o = np.random.default_rng(1).normal(size=(3, 4))
    assert logit_distill(o, o)[0] == 0.0
    assert logit_distill(np.array([1.0, 0.0]), np.array([0.0, 0.0]))[0] == 1.0
    o = np.array([[1.0, 2.0], [0.0, 0.0]])
    assert logit_distill(o, np.zeros((2, 2)))[0] == pytest.approx(2.5)


def test_distill_gradient_and_shape_check():
    o, o_old = np.array([[1.0, 3.0]]), np.array([[0.0, 1.0]])
    _, g = logit_distill(o, o_old)
    assert np.allclose(g, 2 * (o - o_old) / 2)
    with pytest.raises(InvalidInputError):
        logit_distill(np.zeros((2, 3)), np.zeros((3, 2)))


# --- projection loss -------------------------------------------------------------


@pytest.mark.example
def test_bfp_identity_cases():
    z = np.random.default_rng(2).normal(size=(4, 5))
    A = np.hstack([np.eye(4), np.zeros((4, 1))])
    assert bfp_loss(ProjectorParams(A), z, z)[0] <= 1e-6
    assert bfp_loss(IdentityProjector(), z, z)[0] <= 1e-6


@pytest.mark.example
def test_bfp_direct_norm():
    A = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    loss, _, _ = bfp_loss(ProjectorParams(A), np.array([1.0, 2.0]), np.array([1.0, 3.0]))
    assert loss == pytest.approx(1.0, abs=1e-12)


def test_bfp_shape_mismatch():
    with pytest.raises(InvalidInputError):
        bfp_loss(IdentityProjector(), np.zeros((3, 2)), np.zeros((3, 4)))


def test_bfp_gives_no_teacher_gradient():
    # the result has exactly (loss, dz, projector grad): nothing for z_old
    rng = np.random.default_rng(3)
    z, z_old = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    out = bfp_loss(init_projector("BFP", 3, rng), z, z_old)
    assert len(out) == 3 and out[1].shape == z.shape

    # perturbing z_old never reaches dz through anything but the residual direction
    before = z_old.copy()
    bfp_loss(init_projector("BFP", 3, rng), z, z_old)
    assert np.array_equal(before, z_old)


@pytest.mark.parametrize("kind", ["FD", "BFP", "BFP-2"])
def test_bfp_gradients(kind):
    rng = np.random.default_rng(4)
    d, n = 4, 6
    z, z_old = rng.normal(size=(d, n)), rng.normal(size=(d, n))
    proj = init_projector(kind, d, rng)

    def f():
        return bfp_loss(proj, z, z_old)[0]

    _, dz, pg = bfp_loss(proj, z, z_old)
    arrays, grads = [z] + proj.arrays(), [dz] + pg.arrays()
    coords = coordinates(arrays, 60, rng)
    assert relative_error(pick(grads, coords), central_difference(f, arrays, coords)).max() < 1e-6


# --- total loss and task-IL masking ----------------------------------------------


@pytest.mark.example
def test_total_loss_examples():
    parts = (0.5, 0.2, 0.3, 0.4)
    assert total_loss(LossWeights(), parts) == 0.5
    assert total_loss(LossWeights(1, 1, 1), (1, 1, 1, 1)) == 4
    assert total_loss(LossWeights(0.1, 0.5, 1.0), parts) == pytest.approx(1.07, abs=1e-12)


@pytest.mark.parametrize("bad", [dict(alpha=-1), dict(beta=float("nan")), dict(gamma=float("inf"))])
def test_weights_validated(bad):
    with pytest.raises(InvalidInputError):
        LossWeights(**bad)


@pytest.mark.example
def test_task_il_examples():
    assert task_il_mask([0.1, 5.0, 3.0, 0.2], {2, 3}) == 2
    logits = np.random.default_rng(5).normal(size=6)
    assert task_il_mask(logits, range(6)) == int(np.argmax(logits))
    assert task_il_mask(np.zeros(8), {7, 4}) == 4


def test_task_il_validation():
    with pytest.raises(InvalidInputError):
        task_il_mask([1.0, 2.0], set())
    with pytest.raises(InvalidInputError):
        task_il_mask([1.0, 2.0], {5})


def test_task_il_batch():
    logits = np.array([[0.0, 9.0], [1.0, 0.0], [2.0, 0.0]])
    assert task_il_mask(logits, {0, 1}).tolist() == [1, 0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=10), st.data())
def test_task_il_never_leaves_its_classes(logits, data):
    classes = data.draw(st.sets(st.integers(0, len(logits) - 1), min_size=1))
    picked = task_il_mask(logits, classes)
    assert picked in classes
    assert logits[picked] == max(logits[k] for k in classes)


# --- structural properties of the projection loss -------------------------------


def _train_projector(Z_new, Z_old, steps, lr=0.1, seed=0, target=None):
    rng = np.random.default_rng(seed)
    proj = init_projector("BFP", Z_new.shape[0], rng)
    if proj.A.shape[0] != Z_old.shape[0]:
        proj = ProjectorParams(rng.uniform(-0.1, 0.1, (Z_old.shape[0], Z_new.shape[0] + 1)))
    state = OptimizerState.for_params(proj, lr, 0.9)
    best, best_loss = proj, np.inf
    for _ in range(steps):
        loss, _, g = bfp_loss(proj, Z_new, Z_old)
        if loss < best_loss:
            best, best_loss = proj, loss
        if target is not None and loss < target:
            break
        state, proj = sgd_momentum_step(state, proj, g)
    return best, best_loss


def test_bfp_optimum_invariant_to_recoding():
    rng = np.random.default_rng(6)
    d, n = 3, 30
    Z = rng.normal(size=(d, n))
    Z_old = rng.normal(size=(2, d)) @ Z + 0.3 * rng.normal(size=(2, n))
    M = rng.normal(size=(d, d)) + 2 * np.eye(d)
    lr = 0.02
    _, loss_a = _train_projector(Z, Z_old, 6000, lr)
    _, loss_b = _train_projector(M @ Z / np.linalg.norm(M, 2), Z_old, 6000, lr)
    assert abs(loss_a - loss_b) < 1e-3


def test_training_only_the_projector_preserves_separability():
    rng = np.random.default_rng(7)
    n = 40
    labels = np.repeat([0, 1], n // 2)
    sign = np.where(labels == 0, 1.0, -1.0)
    Z_old = np.vstack([sign * (1.0 + rng.exponential(0.5, n)), rng.normal(size=n)])
    Z_new = np.array([[0.5, 1.0], [-1.0, 0.3], [0.2, 0.2]]) @ Z_old + 0.01 * rng.normal(size=(3, n))
    w, b = fit_separator(Z_old, labels == 0)
    scores = w @ Z_old
    margin = scores[labels == 0].min() - scores[labels == 1].max()
    proj, loss = _train_projector(Z_new, Z_old, 20000, lr=0.05, target=margin / 10)
    assert loss < margin / 10
    moved = (proj.A.T @ w) @ augment(Z_new)
    assert count_violations(moved, labels == 0, b) == 0


def test_unused_direction_is_free():
    rng = np.random.default_rng(8)
    n = 50
    Z_old = np.vstack([rng.normal(size=(2, n)), np.zeros((1, n))])
    labels = np.repeat([0, 1], n // 2)
    Z_new = Z_old.copy()
    Z_new[2] = np.where(labels == 0, 2.0, -2.0) + 0.2 * rng.normal(size=n)
    A = fit_linear_projection(Z_new, Z_old)
    assert bfp_loss(ProjectorParams(A), Z_new, Z_old)[0] < 1e-3
    assert separated_along(Z_new, labels, np.array([0, 0, 1.0]), 0, 1) == 0
