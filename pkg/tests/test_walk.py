import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowlabel.walk import (RandomWalkParams, affinity, directed_from_points, naive_smooth,
                            propagate_directed, refine, refine_closed_form, refine_iterative,
                            transition_directed, transition_undirected, undirected_from_points)


def test_affinity_examples():
    assert affinity([[1, 2, 3]], [[1, 2, 3]], 0.75)[0, 0] == 1.0
    d = 0.75 * math.sqrt(2)
    assert affinity([[0, 0, 0]], [[d, 0, 0]], 0.75)[0, 0] == pytest.approx(math.exp(-1), abs=1e-15)
    pts = np.random.default_rng(0).normal(size=(6, 3))
    W = affinity(pts, pts, 0.75)
    np.testing.assert_array_equal(W, W.T)
    np.testing.assert_array_equal(np.diag(W), 1.0)


def test_undirected_examples():
    W = affinity([[0, 0, 0], [100, 0, 0]], [[0, 0, 0], [100, 0, 0]], 10.0)
    np.testing.assert_array_equal(transition_undirected(W), [[0, 1], [1, 0]])
    tri = np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]])
    A = transition_undirected(affinity(tri, tri, 0.75))
    np.testing.assert_allclose(A, [[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]], atol=1e-15)
    with pytest.raises(ValueError):
        transition_undirected([[1.0]])
    with pytest.raises(ValueError):
        transition_undirected(np.ones((2, 3)))


def test_stable_builders_agree_with_direct_normalization():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(20, 3))
    other = rng.normal(size=(5, 3))
    np.testing.assert_allclose(undirected_from_points(pts, 0.75),
                               transition_undirected(affinity(pts, pts, 0.75)), atol=1e-14)
    np.testing.assert_allclose(directed_from_points(other, pts, 0.75),
                               transition_directed(affinity(other, pts, 0.75)), atol=1e-14)


def test_stable_builders_survive_underflow():
    # 100 m spacing with theta_r = 0.75 underflows every plain affinity
    pts = np.array([[0.0, 0, 0], [100.0, 0, 0], [300.0, 0, 0]])
    with pytest.raises(ValueError):
        transition_undirected(affinity(pts, pts, 0.75))
    A = undirected_from_points(pts, 0.75)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(A[0], [0, 1, 0])
    np.testing.assert_array_equal(A[2], [0, 1, 0])


def test_refine_iterative_examples():
    rng = np.random.default_rng(2)
    A = undirected_from_points(rng.normal(size=(5, 3)), 0.75)
    D0 = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(refine_iterative(A, D0, 0.0, 7), D0)
    np.testing.assert_allclose(refine_iterative(A, D0, 1.0, 1), A @ D0, atol=1e-15)
    two = np.array([[0, 1.0], [1.0, 0]])
    D = np.array([[1.0, 0, 0], [0, 0, 0]])
    np.testing.assert_allclose(refine_iterative(two, D, 0.5, 1)[0], [0.5, 0, 0], atol=1e-15)


def test_refine_closed_form_examples():
    two = np.array([[0, 1.0], [1.0, 0]])
    a = np.array([1.0, 2.0, -3.0])
    b = np.array([0.5, -1.0, 4.0])
    out = refine_closed_form(two, np.vstack([a, b]), 0.5)
    np.testing.assert_allclose(out[0], 2 / 3 * a + 1 / 3 * b, atol=1e-15)
    np.testing.assert_allclose(out[1], 2 / 3 * b + 1 / 3 * a, atol=1e-15)
    D0 = np.random.default_rng(3).normal(size=(2, 3))
    np.testing.assert_allclose(refine_closed_form(two, D0, 0.0), D0, atol=0)
    with pytest.raises(ValueError):
        refine_closed_form(two, D0, 1.0)


def _instance(rng, n=None):
    n = int(rng.integers(2, 40)) if n is None else n
    pts = rng.normal(size=(n, 3)) * rng.uniform(0.2, 2.0)
    return undirected_from_points(pts, 0.75), rng.normal(size=(n, 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([0.1, 0.5, 0.9]))
def test_iterative_converges_to_closed_form(seed, alpha):
    rng = np.random.default_rng(seed)
    A, D0 = _instance(rng)
    closed = refine_closed_form(A, D0, alpha)
    residual = closed - (alpha * A @ closed + (1 - alpha) * D0)
    assert np.abs(residual).max() < 1e-10
    np.testing.assert_allclose(refine_iterative(A, D0, alpha, 10_000), closed, rtol=0, atol=1e-8)
    # geometric decay with ratio at most alpha: |D_t - D*| <= alpha^t |D_0 - D*|
    start = np.abs(D0 - closed).max()
    for t in (1, 2, 5, 10, 20):
        err = np.abs(refine_iterative(A, D0, alpha, t) - closed).max()
        assert err <= alpha ** t * start + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_rows_stochastic(seed):
    rng = np.random.default_rng(seed)
    n_m, n_s = int(rng.integers(2, 30)), int(rng.integers(0, 10))
    lab = rng.normal(size=(n_m, 3)) * 3
    unl = rng.normal(size=(n_s, 3)) * 3
    A1 = undirected_from_points(lab, 0.75)
    A2 = directed_from_points(unl, lab, 0.75)
    assert np.abs(A1.sum(axis=1) - 1).max() <= 1e-12
    assert np.all(np.diag(A1) == 0)
    assert np.all((A1 >= 0) & (A1 <= 1))
    assert A2.shape == (n_s, n_m)
    if n_s:
        assert np.abs(A2.sum(axis=1) - 1).max() <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([0.1, 0.5, 0.9]))
def test_constants_are_preserved_and_hull_respected(seed, alpha):
    rng = np.random.default_rng(seed)
    A, D0 = _instance(rng)
    c = rng.normal(size=3)
    const = np.tile(c, (len(A), 1))
    np.testing.assert_allclose(refine_closed_form(A, const, alpha), const, rtol=0, atol=1e-12)
    np.testing.assert_allclose(refine_iterative(A, const, alpha, 25), const, rtol=0, atol=1e-12)
    lo, hi = D0.min(axis=0) - 1e-12, D0.max(axis=0) + 1e-12
    for out in (refine_closed_form(A, D0, alpha), refine_iterative(A, D0, alpha, 7)):
        assert np.all((out >= lo) & (out <= hi))


def test_refine_dispatch():
    rng = np.random.default_rng(4)
    A, D0 = _instance(rng, 6)
    np.testing.assert_array_equal(refine(A, D0, RandomWalkParams()), refine_closed_form(A, D0, 0.5))
    np.testing.assert_array_equal(refine(A, D0, RandomWalkParams(steps=3)),
                                  refine_iterative(A, D0, 0.5, 3))


def test_params_validation():
    with pytest.raises(ValueError):
        RandomWalkParams(alpha=1.0)
    RandomWalkParams(alpha=1.0, steps=4)
    with pytest.raises(ValueError):
        RandomWalkParams(theta_r=0)
    with pytest.raises(ValueError):
        RandomWalkParams(steps=2.5)


def test_propagate_examples():
    lab = np.array([[-1.0, 0, 0], [1.0, 0, 0]])
    u, v = np.array([1.0, 2, 3]), np.array([-3.0, 0, 5])
    A2 = directed_from_points([[0, 0.5, 0]], lab, 0.75)
    np.testing.assert_allclose(propagate_directed(A2, np.vstack([u, v])), [(u + v) / 2], atol=1e-15)
    single = directed_from_points(np.random.default_rng(0).normal(size=(4, 3)), [[9, 9, 9]], 0.75)
    np.testing.assert_array_equal(propagate_directed(single, [u]), np.tile(u, (4, 1)))
    empty = directed_from_points(np.zeros((0, 3)), lab, 0.75)
    assert propagate_directed(empty, np.vstack([u, v])).shape == (0, 3)
    with pytest.raises(ValueError):
        propagate_directed(np.ones((1, 3)), np.vstack([u, v]))


def test_naive_smooth_examples():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(10, 3))
    const = np.tile([1.0, -2.0, 0.5], (10, 1))
    np.testing.assert_allclose(naive_smooth(pts, const, 4), const, atol=1e-15)
    lab = rng.normal(size=(10, 3))
    np.testing.assert_array_equal(naive_smooth(pts, lab, 1), lab)
    u, v = np.array([1.0, 0, 0]), np.array([0, 3.0, 0])
    out = naive_smooth([[0, 0, 0], [0, 0, 0]], [u, v], 2)
    np.testing.assert_allclose(out, [(u + v) / 2] * 2, atol=1e-15)
    # with k=1, coincident points still keep their own labels
    np.testing.assert_array_equal(naive_smooth([[0, 0, 0], [0, 0, 0]], [u, v], 1), [u, v])
    with pytest.raises(ValueError):
        naive_smooth(pts, lab, 11)
