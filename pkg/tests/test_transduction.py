import numpy as np
import pytest

from pulseadapt.errors import EmptyBatch, ShapeMismatch
from pulseadapt.transduction import (
    Prototype,
    proto_loss,
    syn_loss,
    task_prototype,
    update_global_prototype,
)


def test_task_prototype_identical_rows():
    row = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(task_prototype(np.tile(row, (5, 1))), row)


def test_task_prototype_symmetry():
    row = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(task_prototype(np.stack([row, -row])), np.zeros(3))


def test_task_prototype_basis():
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(task_prototype(z), [0.5, 0.5])


def test_ema_single_step():
    proto = Prototype(np.array([1.0, 1.0]))
    out = update_global_prototype(proto, [np.zeros(2)], 0.8)
    np.testing.assert_allclose(out.value, [0.8, 0.8], rtol=0, atol=0)
    assert out.update_count == 1


def test_ema_contraction_exact():
    rng = np.random.default_rng(0)
    p0 = rng.normal(size=8)
    m = rng.normal(size=8)
    gamma = 0.8
    proto = Prototype(p0)
    for k in range(1, 11):
        proto = update_global_prototype(proto, [m], gamma)
        expected_dev = gamma**k * (p0 - m)
        np.testing.assert_allclose(proto.value - m, expected_dev, rtol=0, atol=1e-12)
    assert proto.update_count == 10


def test_ema_fixed_point():
    p0 = np.array([0.3, -0.7])
    out = update_global_prototype(Prototype(p0), [p0.copy()], 0.8)
    np.testing.assert_allclose(out.value, p0, atol=1e-15)


def test_ema_empty_batch():
    with pytest.raises(EmptyBatch):
        update_global_prototype(Prototype(np.zeros(2)), [], 0.8)


def test_proto_loss_zero_at_prototype():
    proto = np.array([0.5, -1.0])
    loss, grad = proto_loss(np.tile(proto, (4, 1)), proto)
    assert loss == 0.0
    np.testing.assert_array_equal(grad, np.zeros((4, 2)))


def test_proto_loss_analytic():
    loss, grad = proto_loss(np.array([[3.0, 4.0]]), np.zeros(2))
    assert loss == 25.0
    np.testing.assert_array_equal(grad, [[6.0, 8.0]])


def test_proto_loss_homogeneity():
    z = np.array([[1.0, 2.0], [0.5, -1.0]])
    proto = np.array([0.1, 0.2])
    loss1, _ = proto_loss(z, proto)
    loss2, _ = proto_loss(proto + 2 * (z - proto), proto)
    assert np.isclose(loss2, 4 * loss1, rtol=1e-12)


def test_proto_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(3, 4))
    proto = rng.normal(size=4)
    _, grad = proto_loss(z, proto)
    h = 1e-6
    for _ in range(10):
        t, d = rng.integers(3), rng.integers(4)
        zp, zm = z.copy(), z.copy()
        zp[t, d] += h
        zm[t, d] -= h
        fd = (proto_loss(zp, proto)[0] - proto_loss(zm, proto)[0]) / (2 * h)
        assert np.isclose(grad[t, d], fd, rtol=1e-4)


def test_proto_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        proto_loss(np.zeros((2, 3)), np.zeros(4))


def test_syn_loss_values():
    a = np.zeros((2, 3))
    assert syn_loss(a, a) == 0.0
    assert syn_loss(a + 2.0, a) == 4.0
    b = np.array([[1.0, -2.0, 0.5]])
    assert syn_loss(b, np.zeros_like(b)) == syn_loss(-b, np.zeros_like(b))


def test_syn_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        syn_loss(np.zeros((2, 3)), np.zeros((3, 2)))
