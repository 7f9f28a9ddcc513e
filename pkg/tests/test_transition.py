import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npcal.data import PredictionSet, SyntheticSpec, generate_gaussian_mixture
from npcal.errors import PreconditionError, ShapeError
from npcal.noise import NoiseSpec, TransitionMatrix, inject
from npcal.transition import (
    aggregate_t,
    aux_matrices,
    estimate_transition,
    h_from_t,
    solve_t_instance,
    train_aux,
    transition_mse,
)
from npcal.classifier import TrainConfig


def random_joint(rng, c, sharp=True):
    """p(y), T[y, noisy] and q[noisy, pred] with pred independent of y given noisy."""
    p_y = rng.dirichlet(np.ones(c))
    t = rng.dirichlet(np.ones(c), c) + (3 * np.eye(c) if sharp else 0)
    t /= t.sum(axis=1, keepdims=True)
    q = rng.dirichlet(np.ones(c), c) + (3 * np.eye(c) if sharp else 0)
    q /= q.sum(axis=1, keepdims=True)
    return p_y, t, q


def enumerate_joint(p_y, t, q):
    """Brute-force H, A and p(pred) by summing the full joint table."""
    c = p_y.size
    joint = np.zeros((c, c, c))  # [y, noisy, pred]
    for y in range(c):
        for i in range(c):
            for k in range(c):
                joint[y, i, k] = p_y[y] * t[y, i] * q[i, k]
    p_pred = joint.sum(axis=(0, 1))
    h = joint.sum(axis=1).T / p_pred[:, None]  # H[k, y]
    p_noisy = joint.sum(axis=(0, 2))
    a = joint.sum(axis=0).T / p_noisy[None, :]  # A[k, i]
    return h, a, p_pred


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_relation_matches_enumeration(c, seed):
    p_y, t, q = random_joint(np.random.default_rng(seed), c, sharp=False)
    h, a, p_pred = enumerate_joint(p_y, t, q)
    np.testing.assert_allclose(h_from_t(t, p_y, p_pred, a), h, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_solve_recovers_t(c, seed):
    p_y, t, q = random_joint(np.random.default_rng(seed), c)
    h, a, p_pred = enumerate_joint(p_y, t, q)
    t_hat, ok = solve_t_instance(h, p_y, p_pred, a)
    assert ok
    np.testing.assert_allclose(t_hat, t, atol=1e-8)


def test_identity_aux_gives_scaled_t():
    p_y = np.array([0.5, 0.5])
    t = np.array([[0.8, 0.2], [0.3, 0.7]])
    h = h_from_t(t, p_y, np.array([0.55, 0.45]), np.eye(2))
    np.testing.assert_allclose(h, t.T * 0.5 / np.array([[0.55], [0.45]]))


def test_h_from_t_requires_positive_pred():
    with pytest.raises(PreconditionError):
        h_from_t(np.eye(2), [0.5, 0.5], [1.0, 0.0], np.eye(2))


def test_singular_aux_flagged():
    a = np.array([[1.0, 1.0], [0.0, 0.0]])
    t, ok = solve_t_instance(np.eye(2), [0.5, 0.5], [0.5, 0.5], a)
    assert not ok and t is None


def test_solution_rows_are_distributions():
    rng = np.random.default_rng(1)
    h = rng.dirichlet(np.ones(3), 3)
    t, ok = solve_t_instance(h, rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3), 3).T + np.eye(3))
    assert ok
    assert np.all(t >= 0)
    np.testing.assert_allclose(t.sum(axis=1), 1.0)


def test_aggregate_examples():
    eye = np.eye(3)
    agg = aggregate_t(np.tile(eye, (4, 1, 1)), np.array([0, 1, 2, 0]))
    np.testing.assert_allclose(agg.entries, eye)
    flip = np.array([[0.6, 0.4], [0.1, 0.9]])
    stack = np.stack([flip, eye[:2, :2], flip])
    agg = aggregate_t(stack, np.array([0, 0, 1]))
    np.testing.assert_allclose(agg.entries, [[0.8, 0.2], [0.1, 0.9]])


def test_aggregate_skips_flagged_and_warns_on_empty():
    stack = np.stack([np.eye(2), np.full((2, 2), np.nan)])
    with pytest.warns(UserWarning):
        agg = aggregate_t(stack, np.array([0, 1]), flagged=np.array([False, True]))
    np.testing.assert_allclose(agg.entries, [[1, 0], [0.5, 0.5]])


def test_mse_examples():
    eye = np.eye(3)
    assert transition_mse(eye, eye) == 0.0
    assert transition_mse(TransitionMatrix(eye, []), np.zeros((3, 3))) == pytest.approx(1 / 3)
    with pytest.raises(ShapeError):
        transition_mse(eye, np.eye(2))


def test_estimate_from_exact_quantities():
    rng = np.random.default_rng(5)
    c, n = 3, 40
    hs, pys, pps, aas, ts = [], [], [], [], []
    for _ in range(n):
        p_y, t, q = random_joint(rng, c)
        h, a, p_pred = enumerate_joint(p_y, t, q)
        hs.append(h), pys.append(p_y), pps.append(p_pred), aas.append(a), ts.append(t)
    labels = rng.integers(0, c, n)
    est = estimate_transition(np.array(hs), np.array(pys), np.array(pps), np.array(aas), labels)
    np.testing.assert_allclose(est.per_instance, np.array(ts), atol=1e-8)
    assert est.exclusion_rate == 0.0


def test_train_aux_shapes():
    ds = generate_gaussian_mixture(SyntheticSpec(3, 90, 2, 0.5, 0))
    ds = ds.with_noisy_labels(inject(ds, NoiseSpec("SN", 0.2, 0)).noisy_labels)
    preds = PredictionSet(np.eye(3)[ds.true_labels] * 0.9 + 0.1 / 3)
    aux = train_aux(ds.features, ds.noisy_labels, preds, TrainConfig(epochs=2, batch_size=32, hidden=(8,)))
    a = aux_matrices(aux, ds.features, 3)
    assert a.shape == (90, 3, 3)
    np.testing.assert_allclose(a.sum(axis=1), 1.0)
