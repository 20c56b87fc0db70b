import gc
import weakref

import numpy as np
import pytest

from poselab import autodiff as ad
from poselab.autodiff import ShapeError, Tape, Tensor, backward, grad_check


def _param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _grad_of(fn, *params):
    with Tape() as tape:
        out = fn()
        backward(out, tape)
    return [p.grad for p in params]


# ---------------------------------------------------------------- elementwise

def test_relu_values():
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_exp_of_zero():
    assert ad.exp(Tensor([0.0])).data[0] == 1.0


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    (g,) = _grad_of(lambda: x * x, x)
    assert g == pytest.approx(6.0)


def test_dispatch_matches_direct_calls():
    a, b = Tensor([1.0, -2.0]), Tensor([3.0, 4.0])
    np.testing.assert_array_equal(ad.elementwise("sub", a, b).data, [-2.0, -6.0])
    np.testing.assert_array_equal(ad.elementwise("scale", a, 2.0).data, [2.0, -4.0])
    np.testing.assert_allclose(ad.elementwise("tanh", a).data, np.tanh(a.data))
    with pytest.raises(ValueError):
        ad.elementwise("cosh", a)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_scalar_broadcast_gradient():
    a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    s = Tensor(2.0, requires_grad=True)
    ga, gs = _grad_of(lambda: ad.reduce_sum(a * s), a, s)
    np.testing.assert_allclose(ga, [2.0, 2.0, 2.0])
    assert gs == pytest.approx(6.0)


def test_sigmoid_extremes_are_finite():
    s = ad.sigmoid(Tensor([-1000.0, 0.0, 1000.0])).data
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh", "exp"])
def test_unary_gradients(kind):
    rng = np.random.default_rng(1)
    x = _param(rng, 3, 4)
    x.data[np.abs(x.data) < 1e-3] = 0.5  # keep relu away from its kink
    err = grad_check(lambda: ad.reduce_sum(ad.elementwise(kind, x) * ad.elementwise(kind, x)), [x])
    assert err < 1e-6


@pytest.mark.parametrize("kind", ["add", "sub", "mul"])
def test_binary_gradients(kind):
    rng = np.random.default_rng(2)
    a, b = _param(rng, 5), _param(rng, 5)
    w = Tensor(rng.standard_normal(5))
    err = grad_check(lambda: ad.reduce_sum(ad.elementwise(kind, a, b) * w), [a, b])
    assert err < 1e-8


# ---------------------------------------------------------------- matmul

def test_matmul_identity_and_hand_example():
    v = Tensor([[1.5], [-2.0], [0.25]])
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), v).data, v.data)
    np.testing.assert_array_equal(
        ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]])).data, [[3.0], [7.0]])


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient():
    rng = np.random.default_rng(3)
    a, b = _param(rng, 4, 5), _param(rng, 5, 3)
    assert grad_check(lambda: ad.reduce_sum(a @ b), [a, b], step=1e-6) < 1e-5


def test_bias_add_gradient():
    rng = np.random.default_rng(4)
    x, bias = _param(rng, 3, 4), _param(rng, 4)
    w = Tensor(rng.standard_normal((3, 4)))
    assert grad_check(lambda: ad.reduce_sum(ad.bias_add(x, bias) * w), [x, bias]) < 1e-8


# ---------------------------------------------------------------- conv2d

def test_conv_identity_kernel():
    x = Tensor(np.arange(12.0).reshape(1, 3, 4))
    out = ad.conv2d(x, Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_sum_kernel():
    out = ad.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1)
    assert out.data.item() == 9.0


@pytest.mark.parametrize("h,w,k,stride,pad", [(8, 8, 3, 1, 1), (9, 7, 3, 2, 0), (10, 10, 4, 4, 1), (5, 6, 5, 1, 2)])
def test_conv_output_size(h, w, k, stride, pad):
    out = ad.conv2d(Tensor(np.zeros((2, h, w))), Tensor(np.zeros((3, 2, k, k))), stride, pad)
    assert out.shape == (3, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)


def test_conv_matches_direct_loops():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 6, 5))
    k = rng.standard_normal((3, 2, 3, 3))
    out = ad.conv2d(Tensor(x), Tensor(k), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                ref = np.sum(xp[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * k[o])
                assert out[o, i, j] == pytest.approx(ref, abs=1e-12)


def test_conv_kernel_too_large():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


def test_conv_gradient():
    rng = np.random.default_rng(6)
    x, k = _param(rng, 2, 8, 8), _param(rng, 4, 2, 3, 3)
    w = Tensor(rng.standard_normal((4, 8, 8)))
    assert grad_check(lambda: ad.reduce_sum(ad.conv2d(x, k, 1, 1) * w), [x, k]) < 1e-5


def test_conv_batched_strided_gradient_with_bias():
    rng = np.random.default_rng(7)
    x, k, b = _param(rng, 2, 2, 7, 7), _param(rng, 3, 2, 3, 3), _param(rng, 3)
    w = Tensor(rng.standard_normal((2, 3, 4, 4)))
    assert grad_check(lambda: ad.reduce_sum(ad.conv2d(x, k, 2, 1, bias=b) * w), [x, k, b]) < 1e-5


@pytest.mark.parametrize("size,pad", [(8, 0), (9, 0), (7, 1)])
def test_conv_non_overlapping_gradient(size, pad):
    # stride equal to the kernel size, including a ragged edge that no window covers
    rng = np.random.default_rng(size)
    x, k = _param(rng, 2, 2, size, size), _param(rng, 3, 2, 2, 2)
    out = ad.conv2d(x, k, 2, pad)
    w = Tensor(rng.standard_normal(out.shape))
    assert grad_check(lambda: ad.reduce_sum(ad.conv2d(x, k, 2, pad) * w), [x, k]) < 1e-5


# ---------------------------------------------------------------- reductions

def test_reductions():
    assert ad.reduce("l2norm", Tensor([3.0, 4.0])).item() == 5.0
    assert ad.reduce("mean", Tensor([1.0, 2.0, 3.0])).item() == 2.0
    assert ad.reduce("sum", Tensor([1.0, 2.0, 3.0])).item() == 6.0


def test_l2norm_gradient_and_zero_residual():
    a = Tensor([3.0, 4.0], requires_grad=True)
    (g,) = _grad_of(lambda: ad.l2norm(a), a)
    np.testing.assert_allclose(g, [0.6, 0.8], atol=1e-12)
    z = Tensor([0.0, 0.0, 0.0], requires_grad=True)
    (gz,) = _grad_of(lambda: ad.l2norm(z), z)
    assert 0.0 < ad.l2norm(z).item() < 1e-9
    np.testing.assert_array_equal(gz, np.zeros(3))


def test_row_norm_gradient():
    rng = np.random.default_rng(8)
    a = _param(rng, 4, 3)
    assert grad_check(lambda: ad.reduce_mean(ad.l2norm(a, axis=1)), [a]) < 1e-8


def test_empty_reduction_rejected():
    with pytest.raises(ShapeError):
        ad.reduce_mean(Tensor(np.zeros(0)))


# ---------------------------------------------------------------- structural

def test_concat_and_errors():
    np.testing.assert_array_equal(ad.concat([Tensor([1.0, 2.0]), Tensor([3.0])]).data, [1, 2, 3])
    with pytest.raises(ShapeError):
        ad.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=1)


def test_max_pool_value_and_tie_routing():
    assert ad.max_pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2).data.item() == 4.0
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    (g,) = _grad_of(lambda: ad.reduce_sum(ad.max_pool2d(x, 2)), x)
    np.testing.assert_array_equal(g, [[[1.0, 0.0], [0.0, 0.0]]])


def test_avg_pool_gradient():
    rng = np.random.default_rng(9)
    x = _param(rng, 1, 4, 4)
    w = Tensor(rng.standard_normal((1, 2, 2)))
    assert grad_check(lambda: ad.reduce_sum(ad.avg_pool2d(x, 2) * w), [x]) < 1e-5


def test_max_pool_padded_gradient():
    rng = np.random.default_rng(10)
    x = _param(rng, 2, 2, 5, 5)
    w = Tensor(rng.standard_normal((2, 2, 5, 5)))
    assert grad_check(lambda: ad.reduce_sum(ad.max_pool2d(x, 3, 1, 1) * w), [x]) < 1e-6


def test_structural_gradients():
    rng = np.random.default_rng(11)
    a, b = _param(rng, 2, 3), _param(rng, 2, 2)
    w = Tensor(rng.standard_normal((3, 5)))

    def f():
        c = ad.concat([a, b], axis=1)
        r = ad.reshape(ad.take_rows(c, [1, 0, 1]), (5, 3))
        return ad.reduce_sum(ad.slice_axis(r, 1, 0, 3) * ad.reshape(w, (5, 3)))

    assert grad_check(f, [a, b]) < 1e-8


def test_reshape_rejects_wrong_size():
    with pytest.raises(ShapeError):
        ad.reshape(Tensor(np.zeros(6)), (4, 2))


# ---------------------------------------------------------------- backward / tape

def test_backward_simple_graphs():
    x = Tensor(0.0, requires_grad=True)
    (g,) = _grad_of(lambda: ad.exp(x), x)
    assert g == 1.0
    a, b = Tensor(1.0, requires_grad=True), Tensor(2.0, requires_grad=True)
    ga, gb = _grad_of(lambda: a + b, a, b)
    assert ga == 1.0 and gb == 1.0


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * x
        with pytest.raises(ShapeError):
            backward(y, tape)


def test_backward_accumulates_on_repeat():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
        backward(y, tape)
        backward(y, tape)
    assert x.grad == pytest.approx(12.0)


def test_frozen_leaf_gets_no_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([3.0, 4.0])
    _grad_of(lambda: ad.reduce_sum(x * c), x)
    assert c.grad is None
    assert x.grad is not None


def test_tape_replays_in_reverse_order():
    order = []
    x = Tensor(2.0, requires_grad=True)

    with Tape() as tape:
        y = ad.exp(x)
        z = ad.scale(y, 3.0)
        for node in tape.nodes:
            fn = node.backward
            node.backward = (lambda f, tag: lambda g: (order.append(tag), f(g))[1])(fn, node.output)
        backward(z, tape)
    assert order == [z, y]


def test_reset_tape_drops_references():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        mid = ad.exp(x)
        ref = weakref.ref(mid)
        ad.reduce_sum(mid)
        del mid
        assert ref() is not None
        tape.reset()
        gc.collect()
        assert ref() is None
        assert len(tape) == 0


def test_no_tape_means_no_recording():
    x = Tensor(1.0, requires_grad=True)
    y = ad.exp(x)
    with pytest.raises(RuntimeError):
        backward(y)


def test_forward_is_deterministic():
    rng = np.random.default_rng(12)
    x, k = rng.standard_normal((2, 3, 9, 9)), rng.standard_normal((4, 3, 3, 3))
    a = ad.conv2d(Tensor(x), Tensor(k), 1, 1).data
    b = ad.conv2d(Tensor(x.copy()), Tensor(k.copy()), 1, 1).data
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- grad_check itself

def test_grad_check_exact_for_linear():
    rng = np.random.default_rng(13)
    x = _param(rng, 6)
    w = Tensor(rng.standard_normal(6))
    assert grad_check(lambda: ad.reduce_sum(x * w), [x]) < 1e-9


def test_grad_check_quadratic():
    x = Tensor([1.0], requires_grad=True)
    assert grad_check(lambda: ad.reduce_sum(x * x), [x], step=1e-6) < 1e-8


def test_grad_check_detects_wrong_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)

    def bad():
        out = ad.reduce_sum(x * x)
        node = ad.active_tape().nodes[-1] if ad.active_tape() else None
        if node is not None:
            node.backward = lambda g: (np.zeros(x.shape),)
        return out

    assert grad_check(bad, [x]) > 0.5


def test_grad_check_reports_non_finite_index():
    x = Tensor([1.0, np.nan], requires_grad=True)
    with pytest.raises(ad.NonFiniteError) as info:
        grad_check(lambda: ad.reduce_sum(x), [x])
    assert info.value.param_index == 0 and info.value.entry == 1
