import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osad.errors import InvalidArgumentError, InvalidStateError
from osad.numerics import finite_diff_grad, max_relative_error
from osad.pcl import (
    COSINE,
    EUCLIDEAN,
    INITIALIZE,
    LOSS_ONLY,
    NONE,
    REFRESH,
    UNKNOWN,
    PclConfig,
    PrototypeStore,
    ProjectionHead,
    classify,
    momentum_update,
    pcl_loss,
    pcl_loss_batch,
    project,
    project_backward,
    prototype_matrix,
    schedule_action,
)


def test_project_examples(rng):
    zero = ProjectionHead(np.zeros((3, 4)), np.zeros(3), np.zeros((2, 3)), np.zeros(2))
    np.testing.assert_array_equal(project(zero, rng.normal(size=4))[0], np.zeros(2))
    eye = ProjectionHead(np.eye(4), np.zeros(4), np.eye(4), np.zeros(4))
    x = np.array([0.0, 1.5, 2.0, 7.0])
    np.testing.assert_array_equal(project(eye, x)[0], x)
    with pytest.raises(InvalidArgumentError):
        project(eye, np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        ProjectionHead(np.eye(4), np.zeros(3), np.eye(4), np.zeros(4))


def test_project_batch_matches_rows(rng):
    head = ProjectionHead.random(6, 5, 3, seed=2)
    xs = rng.normal(size=(4, 6))
    zb, _ = project(head, xs)
    for i in range(4):
        np.testing.assert_allclose(zb[i], project(head, xs[i])[0], atol=1e-14)
    assert head.dims == (6, 5, 3)


def test_project_backward_batch_is_sum_of_singles(rng):
    head = ProjectionHead.random(6, 5, 3, seed=4)
    xs, gz = rng.normal(size=(3, 6)), rng.normal(size=(3, 3))
    _, cache = project(head, xs)
    gb = project_backward(head, cache, gz)
    total = np.zeros_like(head.w1)
    for i in range(3):
        _, c = project(head, xs[i])
        total += project_backward(head, c, gz[i]).w1
    np.testing.assert_allclose(gb.w1, total, atol=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_project_input_gradient(seed):
    rng = np.random.default_rng(seed)
    head = ProjectionHead.random(5, 7, 3, seed=seed)
    x = rng.normal(size=5)
    _, cache = project(head, x)
    if np.min(np.abs(cache.pre)) < 1e-3:
        return  # too close to a ReLU kink
    w = rng.normal(size=3)
    g = project_backward(head, cache, w).x
    num = finite_diff_grad(lambda v: float(w @ project(head, v)[0]), x, 1e-6)
    assert max_relative_error(g, num) < 1e-5


def test_store_fifo_and_isolation():
    s = PrototypeStore(3, 2, queue_size=4)
    s.push(0, [1, 1])
    assert len(s.queues[0]) == 1
    for i in range(10):
        s.push(1, [i, -i])
    assert [list(v) for v in s.queues[1]] == [[i, -i] for i in range(6, 10)]
    assert len(s.queues[0]) == 1 and len(s.queues[2]) == 0
    with pytest.raises(InvalidArgumentError):
        s.push(3, [0, 0])
    with pytest.raises(InvalidArgumentError):
        s.push(0, [np.nan, 0])


def test_compute_prototypes():
    s = PrototypeStore(3, 2)
    assert s.compute_prototypes() == {}
    s.push(0, [0, 2])
    s.push(0, [2, 0])
    s.push(1, [5, 6])
    p = s.compute_prototypes()
    assert set(p) == {0, 1}
    np.testing.assert_array_equal(p[0], [1, 1])
    np.testing.assert_array_equal(p[1], [5, 6])


def test_momentum_update_examples():
    p = {0: np.array([2.0, 0.0]), 1: np.array([3.0, 3.0])}
    new = {0: np.array([0.0, 2.0])}
    np.testing.assert_array_equal(momentum_update(p, new, 0.5)[0], [1, 1])
    np.testing.assert_array_equal(momentum_update(p, new, 0.5)[1], [3, 3])  # absent → kept
    np.testing.assert_array_equal(momentum_update(p, new, 1.0)[0], [2, 0])
    np.testing.assert_array_equal(momentum_update(p, new, 0.0)[0], [0, 2])
    with pytest.raises(InvalidArgumentError):
        momentum_update(p, {0: np.zeros(3)}, 0.5)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_momentum_update_is_convex(seed):
    rng = np.random.default_rng(seed)
    old = {k: rng.normal(size=4) * 10 for k in range(3)}
    new = {k: rng.normal(size=4) * 10 for k in range(3)}
    eta = rng.uniform()
    out = momentum_update(old, new, eta)
    for k in range(3):
        lo, hi = np.minimum(old[k], new[k]), np.maximum(old[k], new[k])
        assert np.all(out[k] >= lo - 1e-12) and np.all(out[k] <= hi + 1e-12)


def test_schedule_action():
    sa = lambda i: schedule_action(i, 500, 1000)  # noqa: E731
    assert sa(0) == NONE
    assert sa(499) == NONE
    assert sa(500) == INITIALIZE
    assert sa(501) == LOSS_ONLY
    assert sa(1000) == REFRESH
    assert sa(1500) == LOSS_ONLY
    assert sa(2000) == REFRESH
    assert schedule_action(600, 300, 1000) == LOSS_ONLY
    assert schedule_action(0, 0, 1) == INITIALIZE
    with pytest.raises(InvalidArgumentError):
        schedule_action(5, 0, 0)


def test_store_step_follows_schedule():
    s = PrototypeStore(2, 2, queue_size=2, eta=0.5, i_m=2, i_n=3)
    s.push(0, [0, 0])
    s.push(1, [4, 4])
    assert [s.step(i) for i in range(2)] == [NONE, NONE]
    assert not s.initialized
    with pytest.raises(InvalidStateError):
        s.refresh()
    assert s.step(2) == INITIALIZE and s.initialized
    np.testing.assert_array_equal(s.prototypes[1], [4, 4])
    s.push(1, [8, 8])
    s.push(1, [8, 8])
    assert s.step(3) == REFRESH
    np.testing.assert_array_equal(s.prototypes[1], [6, 6])
    snap = s.snapshot()
    snap[1][0] = 99
    assert s.prototypes[1][0] == 6


def test_pcl_loss_examples():
    cfg = PclConfig(13.0, EUCLIDEAN, 2)
    protos = {0: np.array([0.0, 0.0]), 1: np.array([5.5, 0.0])}
    loss, _ = pcl_loss(np.array([0.5, 0.0]), 0, protos, cfg)
    assert loss == pytest.approx(8.5)
    far = {0: np.array([1.0, 1.0]), 1: np.array([20.0, 1.0])}
    loss, grad = pcl_loss(np.array([1.0, 1.0]), 0, far, cfg)
    assert loss == 0.0 and np.all(grad == 0)
    with pytest.raises(InvalidStateError):
        pcl_loss(np.zeros(2), 0, {}, cfg)


def test_pcl_kink_subgradient_is_zero():
    cfg = PclConfig(2.0, EUCLIDEAN, 2)
    protos = {0: np.array([0.0, 0.0]), 1: np.array([3.0, 0.0])}
    # distance to prototype 1 is exactly the margin
    _, grad = pcl_loss(np.array([1.0, 0.0]), 0, protos, cfg)
    np.testing.assert_array_equal(grad, [1.0, 0.0])


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.sampled_from([EUCLIDEAN, COSINE]))
def test_pcl_gradient_matches_finite_differences(seed, metric):
    rng = np.random.default_rng(seed)
    margin = 13.0 if metric == EUCLIDEAN else 1.0
    cfg = PclConfig(margin, metric, 4)
    scale = 6.0 if metric == EUCLIDEAN else 1.0
    protos = {k: rng.normal(size=4) * scale for k in range(3)}
    z = rng.normal(size=4) * scale
    label = int(rng.integers(3))
    from osad.pcl import distances

    d, _ = distances(z, np.stack([protos[k] for k in range(3)]), metric)
    if np.min(np.abs(d - margin)) < 1e-3 or np.min(d) < 1e-3:
        return
    loss, grad = pcl_loss(z, label, protos, cfg)
    assert loss >= 0
    num = finite_diff_grad(lambda v: pcl_loss(v, label, protos, cfg)[0], z, 1e-6)
    assert max_relative_error(grad, num) < 1e-5


def test_pcl_batch_matches_single(rng):
    cfg = PclConfig(13.0, EUCLIDEAN, 3)
    protos = {0: rng.normal(size=3) * 5, 2: rng.normal(size=3) * 5}
    mat, present = prototype_matrix(protos, 3)
    z = rng.normal(size=(6, 3)) * 5
    labels = np.array([0, 2, 1, 0, 2, 1])
    mean, grad = pcl_loss_batch(z, labels, mat, present, cfg)
    singles = [pcl_loss(z[i], int(labels[i]), protos, cfg) for i in range(6)]
    assert mean == pytest.approx(np.mean([s[0] for s in singles]))
    np.testing.assert_allclose(grad, np.stack([s[1] for s in singles]) / 6, atol=1e-12)


def test_pcl_descent_is_monotone():
    cfg = PclConfig(13.0, EUCLIDEAN, 2)
    protos = {0: np.array([0.0, 0.0]), 1: np.array([40.0, 0.0]), 2: np.array([0.0, 40.0])}
    z = np.array([7.0, 9.0])
    prev, _ = pcl_loss(z, 0, protos, cfg)
    step = 0.05
    for _ in range(300):  # unit-norm gradient: each step moves `step`
        if prev < step:
            break  # within one step of the (non-smooth) minimum
        _, g = pcl_loss(z, 0, protos, cfg)
        z = z - step * g
        cur, _ = pcl_loss(z, 0, protos, cfg)
        assert cur < prev
        prev = cur
    assert np.linalg.norm(z) < step


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        PclConfig(0.0)
    with pytest.raises(InvalidArgumentError):
        PclConfig(1.0, "manhattan")
    with pytest.warns(UserWarning):
        PclConfig(13.0, COSINE)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        PclConfig(1.5, COSINE)


def test_classify_examples():
    cfg = PclConfig(13.0, EUCLIDEAN, 2)
    protos = {k: np.array([30.0 * k, 0.0]) for k in range(4)}
    assert classify(protos[3], [0.0, 0.0, 5.0, 1.0], protos, cfg) == 2
    assert classify(np.array([90.0, 14.0]), [9.0, 0, 0, 0], protos, cfg) == UNKNOWN
    assert classify(np.array([0.0, 0.0]), [1.0, 1.0, 0.0, 0.0], protos, cfg) == 0  # tie → lowest
    with pytest.raises(InvalidStateError):
        classify(np.zeros(2), [1.0], {}, cfg)


def test_classify_grid_oracle():
    cfg = PclConfig(13.0, EUCLIDEAN, 2)
    protos = {0: np.array([0.0, 0.0]), 1: np.array([20.0, 0.0]), 2: np.array([10.0, 18.0])}
    logits = np.array([0.1, 0.3, 0.2])
    for x in np.linspace(-20, 40, 61):
        for y in np.linspace(-20, 40, 61):
            z = np.array([x, y])
            dmin = min(np.hypot(*(z - p)) for p in protos.values())
            expected = UNKNOWN if dmin > 13.0 else 1
            assert classify(z, logits, protos, cfg) == expected


@given(st.floats(0.01, 100))
def test_classify_invariant_to_logit_scaling(c):
    cfg = PclConfig(13.0, EUCLIDEAN, 2)
    protos = {0: np.zeros(2), 1: np.ones(2)}
    logits = np.array([0.3, -1.2])
    assert classify(np.array([0.5, 0.5]), logits * c, protos, cfg) == 0
