import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dino_unet import ops
from dino_unet.autodiff import OpTape, Tensor, backward, no_grad
from dino_unet.gradcheck import gradcheck

from oracles import conv2d_loop, rel_err, resize_pixel, sample_point

finite = st.floats(-50, 50, allow_nan=False, width=64)


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- engine


def test_backward_sum_gives_ones():
    x = T(np.random.default_rng(0).standard_normal((3, 4)), grad=True)
    backward(ops.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_square_gives_2x():
    x = T([1.5, -2.0, 0.25], grad=True)
    backward(ops.sum(ops.mul(x, x)))
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_grads_accumulate_across_calls():
    x = T([1.0, 2.0], grad=True)
    backward(ops.sum(x))
    backward(ops.sum(x))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_non_scalar_loss_rejected():
    x = T([1.0, 2.0], grad=True)
    with pytest.raises(ValueError):
        backward(ops.mul(x, 2.0))


def test_shared_subexpression_sums_paths():
    rng = np.random.default_rng(1)
    x = T(rng.standard_normal(5), grad=True)

    def f(x):
        s = ops.sigmoid(x)
        return ops.sum(ops.add(ops.mul(s, s), ops.exp(s)))

    rep = gradcheck(f, [x], name="shared")
    assert rep.passed, str(rep)
    x.zero_grad()
    backward(f(x))
    s = 1 / (1 + np.exp(-x.data))
    np.testing.assert_allclose(x.grad, (2 * s + np.exp(s)) * s * (1 - s), rtol=1e-12)


def test_tape_is_topological_and_unique():
    x = T([1.0, 2.0], grad=True)
    y = ops.mul(x, 3.0)
    z = ops.add(y, y)
    loss = ops.sum(ops.mul(z, y))
    tape = OpTape.from_output(loss)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    assert len(pos) == len(tape)
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.node is not None:
                assert pos[id(inp.node)] < pos[id(node)]


def test_no_grad_records_nothing():
    x = T([1.0], grad=True)
    with no_grad():
        y = ops.mul(x, 2.0)
    assert y.node is None and not y.requires_grad


# ---------------------------------------------------------------- conv2d


def test_conv1x1_identity_is_identity():
    x = T(np.random.default_rng(2).standard_normal((2, 3, 4, 5)))
    out = ops.conv2d(x, T(np.eye(3)[:, :, None, None]), T(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x.data)


def test_grouped_identity_conv_bit_exact():
    x = T(np.random.default_rng(3).standard_normal((2, 4, 5, 5)))
    out = ops.conv2d(x, T(np.ones((4, 1, 1, 1))), groups=4)
    np.testing.assert_array_equal(out.data, x.data)


def test_depthwise_average_of_constant():
    x = T(np.full((1, 2, 6, 6), 3.25))
    out = ops.conv2d(x, T(np.ones((2, 1, 3, 3)) / 9), groups=2)
    assert out.shape == (1, 2, 4, 4)
    np.testing.assert_allclose(out.data, 3.25, rtol=1e-15)


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(4)
    x, w, b = rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    out = ops.conv2d(T(x), T(w), T(b), stride=1, padding=1)
    assert rel_err(out.data, conv2d_loop(x, w, b, 1, 1)) <= 1e-6


@pytest.mark.parametrize("stride,padding,groups", [(2, 1, 1), (2, 0, 2), (1, 2, 4)])
def test_conv2d_variants_match_loop(stride, padding, groups):
    rng = np.random.default_rng(stride * 10 + groups)
    x = rng.standard_normal((2, 4, 7, 6))
    w = rng.standard_normal((4, 4 // groups, 3, 3))
    out = ops.conv2d(T(x), T(w), None, stride, padding, groups)
    assert rel_err(out.data, conv2d_loop(x, w, None, stride, padding, groups)) <= 1e-6


def test_conv2d_shape_error_names_dimension():
    with pytest.raises(ValueError, match="Cin"):
        ops.conv2d(T(np.zeros((1, 3, 4, 4))), T(np.zeros((2, 2, 1, 1))))


def test_conv_output_size():
    assert ops.conv_output_size(64, 3, 2, 1) == 32
    assert ops.conv_output_size(5, 3, 1, 1) == 5


# ---------------------------------------------------------------- resampling


def test_resize_same_size_is_identity():
    x = T(np.random.default_rng(5).standard_normal((1, 2, 3, 4)))
    np.testing.assert_array_equal(ops.bilinear_resize(x, 3, 4).data, x.data)


def test_resize_1x2_to_1x4_symmetric():
    a, b = 2.0, 6.0
    out = ops.bilinear_resize(T([[[[a, b]]]]), 1, 4).data[0, 0, 0]
    # half-pixel centres land at -0.25, 0.25, 0.75, 1.25 in input coordinates
    np.testing.assert_allclose(out, [a, 0.75 * a + 0.25 * b, 0.25 * a + 0.75 * b, b], rtol=1e-15)
    np.testing.assert_allclose(out + out[::-1], a + b, rtol=1e-15)


def test_resize_matches_pixel_oracle():
    img = np.random.default_rng(6).standard_normal((3, 3))
    out = ops.bilinear_resize(T(img[None, None]), 5, 5).data[0, 0]
    assert rel_err(out, resize_pixel(img, 5, 5)) <= 1e-6


def test_sample_on_grid_returns_pixel():
    v = np.random.default_rng(7).standard_normal((1, 2, 4, 5))
    pts = np.array([[[(3 + 0.5) / 5, (1 + 0.5) / 4]]])
    out = ops.bilinear_sample(T(v), T(pts)).data
    np.testing.assert_allclose(out[0, :, 0], v[0, :, 1, 3], rtol=1e-14)


def test_sample_midpoint_is_mean():
    v = np.random.default_rng(8).standard_normal((1, 1, 3, 4))
    pts = np.array([[[2.0 / 4, (1 + 0.5) / 3]]])  # between columns 1 and 2
    out = ops.bilinear_sample(T(v), T(pts)).data[0, 0, 0]
    np.testing.assert_allclose(out, (v[0, 0, 1, 1] + v[0, 0, 1, 2]) / 2, rtol=1e-14)


def test_sample_matches_scalar_oracle():
    rng = np.random.default_rng(9)
    v = rng.standard_normal((2, 3, 5, 6))
    pts = rng.uniform(-0.2, 1.2, (2, 10, 2))
    out = ops.bilinear_sample(T(v), T(pts)).data
    ref = np.array([[[sample_point(v[b, c], *pts[b, p]) for p in range(10)] for c in range(3)] for b in range(2)])
    assert rel_err(out, ref) <= 1e-6


def test_sample_clamps_outside_points():
    v = np.random.default_rng(10).standard_normal((1, 1, 3, 3))
    far = ops.bilinear_sample(T(v), T([[[-5.0, -5.0], [9.0, 9.0]]])).data[0, 0]
    np.testing.assert_array_equal(far, [v[0, 0, 0, 0], v[0, 0, 2, 2]])


# ---------------------------------------------------------------- dense + elementwise


def test_linear_identity_and_constant():
    x = T(np.random.default_rng(11).standard_normal((2, 3, 4)))
    np.testing.assert_array_equal(ops.linear(x, T(np.eye(4)), T(np.zeros(4))).data, x.data)
    np.testing.assert_array_equal(ops.linear(x, T(np.zeros((2, 4))), T([1.5, -2.0])).data[..., 1], -2.0)


def test_linear_matches_loop():
    rng = np.random.default_rng(12)
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)
    ref = np.array([[sum(x[i, k] * w[j, k] for k in range(4)) + b[j] for j in range(2)] for i in range(3)])
    assert rel_err(ops.linear(T(x), T(w), T(b)).data, ref) <= 1e-12


def test_linear_dim_mismatch_rejected():
    with pytest.raises(ValueError):
        ops.linear(T(np.zeros((2, 3))), T(np.zeros((4, 5))))


def test_softmax_constant_is_uniform():
    np.testing.assert_allclose(ops.softmax(T(np.full((2, 5), 7.0)), axis=1).data, 0.2, rtol=1e-15)


def test_softmax_matches_extended_precision():
    x = np.random.default_rng(13).standard_normal((4, 6)) * 10
    xl = x.astype(np.longdouble)
    ref = np.exp(xl - xl.max(1, keepdims=True))
    ref = ref / ref.sum(1, keepdims=True)
    assert rel_err(ops.softmax(T(x), axis=1).data, ref.astype(np.float64)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)), elements=finite),
       st.floats(-100, 100, allow_nan=False))
def test_softmax_normalized_and_shift_invariant(x, c):
    p = ops.softmax(T(x), axis=1).data
    assert np.all(p >= 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(ops.softmax(T(x + c), axis=1).data, p, atol=1e-6)


def test_sigmoid_zero_is_half():
    assert ops.sigmoid(T([0.0])).data[0] == 0.5


def test_gap_of_constant():
    out = ops.global_avg_pool(T(np.full((2, 3, 4, 5), -1.5)))
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out.data, -1.5, rtol=1e-15)


def test_layer_norm_moments():
    x = np.random.default_rng(14).standard_normal((5, 16)) * 3 + 2
    out = ops.layer_norm(T(x), T(np.ones(16)), T(np.zeros(16))).data
    np.testing.assert_allclose(out.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(-1), 1, atol=1e-5)


def test_broadcast_mismatch_rejected():
    with pytest.raises(ValueError):
        ops.add(T(np.zeros((2, 3))), T(np.zeros((3, 2))))
    with pytest.raises(ValueError):
        ops.mul(T(np.zeros((2, 3))), T(np.zeros(3)))


def test_concat_split_roundtrip():
    rng = np.random.default_rng(15)
    a, b = T(rng.standard_normal((2, 3, 4))), T(rng.standard_normal((2, 5, 4)))
    parts = ops.split(ops.concat([a, b], axis=1), [3, 5], axis=1)
    np.testing.assert_array_equal(parts[0].data, a.data)
    np.testing.assert_array_equal(parts[1].data, b.data)


def test_relu_gelu_values():
    x = T([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(ops.relu(x).data, [0, 0, 3])
    from scipy.special import erf

    np.testing.assert_allclose(ops.gelu(x).data, 0.5 * x.data * (1 + erf(x.data / np.sqrt(2))), rtol=1e-15)


def test_ops_stay_finite_on_extreme_inputs():
    x = T(np.array([-800.0, -30.0, 0.0, 30.0, 800.0]))
    for op in (ops.sigmoid, ops.gelu, ops.relu, lambda t: ops.softmax(t, axis=0), lambda t: ops.log_softmax(t, axis=0)):
        assert np.all(np.isfinite(op(x).data))


def test_grad_matches_value_shape_and_dtype():
    x = Tensor(np.ones((2, 3), np.float32), requires_grad=True)
    backward(ops.sum(ops.mul(x, x)))
    assert x.grad.shape == x.shape and x.grad.dtype == x.dtype
