import numpy as np
import pytest

from cheff.errors import DataError, NumericError, ShapeError
from cheff.numeric import ops
from cheff.numeric.io import decode_tensor, encode_tensor, load_tensor, save_tensor
from cheff.numeric.optim import ParamSet, adam_step
from cheff.numeric.random import RngState, permutation, randint, randn
from cheff.numeric.resize import bicubic_resize, resize_weights
from cheff.numeric.tensor import Graph, Tensor, backward

from gradcheck import max_relative_error


def _projection(shape, seed=1):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


def _params(seed=0, **shapes):
    picker = np.random.default_rng(seed)
    return ParamSet({name: picker.normal(size=shape) for name, shape in shapes.items()}, dtype=np.float64)


def test_tensor_buffer_is_read_only():
    tensor = Tensor([[1.0, 2.0]])
    with pytest.raises(ValueError):
        tensor.data[0, 0] = 5.0
    assert Tensor([1, 2]).dtype == np.float32


def test_tensor_rejects_empty_extents_and_integer_wrap_is_float():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 0)))
    assert Tensor.wrap(np.arange(3)).dtype == np.float32


def test_operations_return_new_tensors():
    a = Tensor([1.0, 2.0])
    b = a + 1.0
    assert a.data.tolist() == [1.0, 2.0]
    assert b.data.tolist() == [2.0, 3.0]


def test_backward_returns_zeros_for_unreached_parameters():
    params = _params(used=(3,), unused=(2, 2))
    with Graph() as graph:
        loss = ops.sum(ops.square(params["used"]))
    grads = backward(graph, loss, params)
    assert np.allclose(grads["used"].data, 2.0 * params["used"].data)
    assert np.array_equal(grads["unused"].data, np.zeros((2, 2)))


def test_backward_needs_scalar_loss():
    params = _params(w=(3,))
    with Graph() as graph:
        out = params["w"] * 2.0
    with pytest.raises(ShapeError):
        backward(graph, out, params)


def test_operations_outside_a_graph_record_nothing():
    params = _params(w=(3,))
    with Graph() as graph:
        pass
    ops.sum(params["w"] * 3.0)
    assert len(graph) == 0


@pytest.mark.parametrize(
    "build",
    [
        lambda p, w: ops.sum(ops.mul(ops.tanh(p["x"]), w)),
        lambda p, w: ops.sum(ops.mul(ops.silu(p["x"]), w)),
        lambda p, w: ops.sum(ops.mul(ops.exp(ops.mul(p["x"], 0.3)), w)),
        lambda p, w: ops.sum(ops.mul(ops.div(p["x"], ops.add(ops.square(p["x"]), 1.0)), w)),
        lambda p, w: ops.sum(ops.mul(ops.softmax(p["x"], axis=-1), w)),
        lambda p, w: ops.sum(ops.mul(ops.layer_norm(p["x"], 1.5, 0.2), w)),
        lambda p, w: ops.sum(ops.mul(ops.swap_last(p["x"]), ops.swap_last(w))),
        lambda p, w: ops.mean(ops.mul(ops.concat([p["x"], ops.neg(p["x"])], axis=1), ops.concat([w, w], axis=1))),
    ],
)
def test_elementwise_and_shape_gradients(build):
    params = _params(x=(3, 4))
    projection = _projection((3, 4))
    assert max_relative_error(lambda: build(params, projection), params) < 1e-5


def test_matmul_broadcast_gradients():
    params = _params(a=(2, 3, 4), b=(4, 5))
    projection = _projection((2, 3, 5))
    loss = lambda: ops.sum(ops.mul(ops.matmul(params["a"], params["b"]), projection))
    assert max_relative_error(loss, params) < 1e-5


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
def test_conv2d_gradients(stride, padding):
    params = _params(x=(2, 3, 6, 6), k=(4, 3, 3, 3))
    with Graph():
        shape = ops.conv2d(params["x"], params["k"], stride=stride, padding=padding).shape
    projection = _projection(shape)
    loss = lambda: ops.sum(ops.mul(ops.conv2d(params["x"], params["k"], stride=stride, padding=padding), projection))
    assert max_relative_error(loss, params) < 1e-5


def test_conv2d_matches_direct_correlation():
    x = np.random.default_rng(3).normal(size=(1, 1, 5, 5))
    k = np.random.default_rng(4).normal(size=(1, 1, 3, 3))
    out = ops.conv2d(Tensor(x), Tensor(k), padding=0).data
    expected = np.array(
        [[np.sum(x[0, 0, i : i + 3, j : j + 3] * k[0, 0]) for j in range(3)] for i in range(3)]
    )
    assert np.allclose(out[0, 0], expected)


def _naive_conv2d(x, k, stride, padding):
    n, c, h, w = x.shape
    out_c, _, kh, kw = k.shape
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, out_c, out_h, out_w))
    for b in range(n):
        for o in range(out_c):
            for i in range(out_h):
                for j in range(out_w):
                    window = padded[b, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[b, o, i, j] = np.sum(window * k[o])
    return out


@pytest.mark.parametrize(
    "x_shape, k_shape, stride, padding",
    [
        ((1, 1, 3, 3), (1, 1, 3, 3), 1, 1),
        ((2, 3, 7, 7), (4, 3, 3, 3), 1, 1),
        ((2, 3, 7, 7), (2, 3, 5, 5), 2, 2),
        ((2, 2, 7, 6), (3, 2, 1, 3), 3, 0),
        ((1, 3, 4, 7), (2, 3, 3, 1), 2, 1),
    ],
)
def test_conv2d_matches_a_quadruple_loop(x_shape, k_shape, stride, padding):
    picker = np.random.default_rng(sum(x_shape) + sum(k_shape))
    x = picker.normal(size=x_shape)
    k = picker.normal(size=k_shape)
    out = ops.conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding).data
    assert np.allclose(out, _naive_conv2d(x, k, stride, padding), atol=1e-5)


def test_conv2d_box_sum_with_padding():
    out = ops.conv2d(Tensor(np.full((1, 1, 3, 3), 2.0)), Tensor(np.ones((1, 1, 3, 3))), padding=1).data[0, 0]
    assert out[1, 1] == 18.0
    assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 8.0
    assert out[0, 1] == 12.0


def test_conv2d_identity_kernel_and_strided_shape():
    x = Tensor(np.random.default_rng(5).normal(size=(2, 1, 4, 5)))
    assert np.array_equal(ops.conv2d(x, Tensor(np.ones((1, 1, 1, 1)))).data, x.data)
    shape = ops.conv2d(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((2, 1, 3, 3))), stride=2).shape
    assert shape == (1, 2, 2, 2)


def test_matmul_hand_values_identity_and_rank_checks():
    product = ops.matmul(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])), Tensor(np.array([[5.0], [6.0]])))
    assert product.data.tolist() == [[17.0], [39.0]]
    x = Tensor(np.random.default_rng(6).normal(size=(3, 4)))
    assert np.array_equal(ops.matmul(Tensor(np.eye(3)), x).data, x.data)
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones(3)), x)
    with pytest.raises(ShapeError):
        ops.matmul(x, x)


def test_softmax_closed_form_values():
    out = ops.softmax(Tensor(np.array([0.0, np.log(3.0)])))
    assert np.allclose(out.data, [0.25, 0.75], atol=1e-12)
    assert np.allclose(ops.softmax(Tensor(np.full(5, 2.5))).data, 0.2)


def test_softmax_sums_to_one_and_ignores_shifts():
    logits = np.random.default_rng(7).normal(scale=4.0, size=(6, 9))
    out = ops.softmax(Tensor(logits), axis=1).data
    assert np.all((out > 0.0) & (out < 1.0))
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
    shifted = ops.softmax(Tensor(logits + 123.0), axis=1).data
    assert np.allclose(shifted, out, atol=1e-6)
    columns = ops.softmax(Tensor(logits), axis=0).data
    assert np.allclose(columns.sum(axis=0), 1.0, atol=1e-6)


def _standardize(values):
    return (values - values.mean()) / np.sqrt(values.var() + 1e-5)


def test_group_norm_of_a_constant_is_zero():
    out = ops.group_norm(Tensor(np.full((1, 4, 3, 3), 3.0)), 2, np.ones(4), np.zeros(4))
    assert np.allclose(out.data, 0.0)


def test_group_norm_with_one_group_standardizes_the_whole_sample():
    x = np.random.default_rng(8).normal(loc=2.0, scale=3.0, size=(2, 4, 3, 3))
    out = ops.group_norm(Tensor(x), 1, np.ones(4), np.zeros(4)).data
    for b in range(2):
        assert np.allclose(out[b], _standardize(x[b]), atol=1e-10)


def test_group_norm_two_groups_are_independent_standardizations():
    x = np.random.default_rng(9).normal(loc=-1.0, scale=2.0, size=(2, 4, 5, 5))
    gain = np.array([1.0, 2.0, 0.5, -1.0])
    bias = np.array([0.0, 0.1, -0.2, 0.3])
    out = ops.group_norm(Tensor(x), 2, gain, bias).data
    for b in range(2):
        for group in (slice(0, 2), slice(2, 4)):
            expected = _standardize(x[b, group]) * gain[group, None, None] + bias[group, None, None]
            assert np.allclose(out[b, group], expected, atol=1e-10)
    plain = ops.group_norm(Tensor(x), 2, np.ones(4), np.zeros(4)).data.reshape(2, 2, -1)
    assert np.abs(plain.mean(axis=2)).max() < 1e-4
    assert np.abs(plain.var(axis=2) - 1.0).max() < 1e-4


def test_group_norm_rejects_indivisible_groups():
    with pytest.raises(ShapeError):
        ops.group_norm(Tensor(np.zeros((1, 3, 2, 2))), 2, np.ones(3), np.zeros(3))


def test_conv2d_rejects_even_kernels():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


def test_group_norm_gradients():
    params = _params(x=(2, 4, 3, 3), gain=(4,), bias=(4,))
    projection = _projection((2, 4, 3, 3))
    loss = lambda: ops.sum(ops.mul(ops.group_norm(params["x"], 2, params["gain"], params["bias"]), projection))
    assert max_relative_error(loss, params) < 1e-5


def test_gather_and_upsample_gradients():
    params = _params(table=(5, 3), image=(1, 2, 2, 2))
    rows = _projection((4, 3))
    pixels = _projection((1, 2, 4, 4))
    loss = lambda: ops.add(
        ops.sum(ops.mul(ops.gather_rows(params["table"], [0, 2, 2, 4]), rows)),
        ops.sum(ops.mul(ops.upsample_nearest(params["image"]), pixels)),
    )
    assert max_relative_error(loss, params) < 1e-5


def test_gather_rows_rejects_out_of_range_ids():
    with pytest.raises(ShapeError):
        ops.gather_rows(Tensor(np.zeros((3, 2))), [3])


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        ops.softmax(Tensor([np.nan, 1.0]))


def test_rng_is_reproducible_and_counter_based():
    first = RngState(seed=7)
    second = RngState(seed=7)
    a = randn(first, (4,))
    b = randn(second, (4,))
    assert np.array_equal(a.data, b.data)
    assert first.counter == 1
    assert not np.array_equal(randn(first, (4,)).data, a.data)


def test_randn_moments_over_a_million_draws():
    draws = randn(RngState(seed=2024), (1_000_000,), dtype=np.float64).data
    assert abs(draws.mean()) < 0.01
    assert abs(draws.var() - 1.0) < 0.01


def test_rng_forks_are_independent_of_later_draws():
    parent = RngState(seed=11)
    child = parent.fork(3)
    assert child.seed == RngState(seed=11).fork(3).seed
    assert parent.fork(3).seed != parent.fork(4).seed
    randn(parent, (2,))
    assert parent.fork(3).seed != child.seed


def test_rng_helpers():
    draws = randint(RngState(seed=1), 1, 3, 500)
    assert set(np.unique(draws)) == {1, 2, 3}
    order = permutation(RngState(seed=1), 10)
    assert sorted(order.tolist()) == list(range(10))


def test_adam_first_step_moves_by_learning_rate():
    params = ParamSet({"w": np.array([1.0, -2.0])}, dtype=np.float64)
    grads = {"w": Tensor(np.array([0.5, -3.0]))}
    adam_step(params, grads, lr=0.1)
    assert params.step == 1
    assert np.allclose(params["w"].data, [0.9, -1.9])


def test_adam_two_constant_steps_match_the_scalar_recurrence():
    w, g, lr = 0.5, 0.3, 0.01
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    params = ParamSet({"w": np.array([w])}, dtype=np.float64)
    first = second = 0.0
    for step in (1, 2):
        adam_step(params, {"w": Tensor(np.array([g]))}, lr=lr)
        first = beta1 * first + (1.0 - beta1) * g
        second = beta2 * second + (1.0 - beta2) * g * g
        w -= lr * (first / (1.0 - beta1**step)) / (np.sqrt(second / (1.0 - beta2**step)) + eps)
        assert abs(params["w"].data[0] - w) < 1e-10
    assert params.step == 2


def test_adam_zero_gradient_only_advances_the_step():
    params = ParamSet({"w": np.array([1.5, -0.5])}, dtype=np.float64)
    adam_step(params, {"w": Tensor(np.zeros(2))}, lr=0.1)
    assert params.step == 1
    assert params["w"].data.tolist() == [1.5, -0.5]


def test_adam_minimizes_a_quadratic():
    params = ParamSet({"w": np.array([3.0, -4.0])}, dtype=np.float64)
    for _ in range(300):
        with Graph() as graph:
            loss = ops.sum(ops.square(params["w"]))
        adam_step(params, backward(graph, loss, params), lr=0.05)
    assert np.abs(params["w"].data).max() < 0.1


def test_adam_rejects_mismatched_gradients():
    params = ParamSet({"w": np.zeros(2)})
    with pytest.raises(ShapeError):
        adam_step(params, {"w": Tensor(np.zeros(3))}, lr=0.1)


def test_paramset_copy_is_independent():
    params = ParamSet({"w": np.ones(2)})
    clone = params.copy()
    params.replace("w", Tensor(np.zeros(2, dtype=np.float32)))
    assert not params.equals(clone)
    assert clone.count() == 2


def test_bicubic_weights_sum_to_one_and_identity_is_noop():
    weights = resize_weights(16, 5)
    assert np.allclose(weights.sum(axis=1), 1.0)
    x = Tensor(np.random.default_rng(0).normal(size=(1, 1, 4, 4)))
    assert bicubic_resize(x, 4, 4) is x


def test_bicubic_downsizes_a_ramp_with_plain_catmull_rom_taps():
    # k(0.5) = 0.5625, k(1.5) = -0.0625; the outer tap of each row clamps onto the edge pixel.
    assert np.allclose(resize_weights(4, 2), [[0.5, 0.5625, -0.0625, 0.0], [0.0, -0.0625, 0.5625, 0.5]])
    ramp = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    along = np.array([0.4375, 2.5625])
    expected = 4.0 * along[:, None] + along[None, :]
    assert np.allclose(bicubic_resize(ramp, 2, 2).data[0, 0], expected, atol=1e-12)


def test_bicubic_keeps_four_taps_when_shrinking_hard():
    weights = resize_weights(16, 2)
    assert np.count_nonzero(weights, axis=1).tolist() == [4, 4]


def test_bicubic_preserves_constants_and_differentiates():
    constant = Tensor(np.full((1, 1, 8, 8), 0.25))
    assert np.allclose(bicubic_resize(constant, 3, 5).data, 0.25)
    params = _params(x=(1, 1, 6, 6))
    projection = _projection((1, 1, 4, 9))
    loss = lambda: ops.sum(ops.mul(bicubic_resize(params["x"], 4, 9), projection))
    assert max_relative_error(loss, params) < 1e-5


def test_bicubic_rejects_non_nchw():
    with pytest.raises(ShapeError):
        bicubic_resize(Tensor(np.zeros((4, 4))), 2, 2)


def test_tensor_file_keeps_shape_and_dtype(tmp_path):
    tensor = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3))
    path = save_tensor(tmp_path / "t.ctnsr", tensor)
    loaded = load_tensor(path)
    assert loaded.dtype == np.float64
    assert np.array_equal(loaded.data, tensor.data)


def test_tensor_decoding_errors(tmp_path):
    blob = encode_tensor(Tensor(np.ones((2, 2))))
    with pytest.raises(DataError):
        decode_tensor(b"XXXXXX" + blob[6:])
    with pytest.raises(DataError):
        decode_tensor(blob[:-3])
    (tmp_path / "extra.ctnsr").write_bytes(blob + b"\x00")
    with pytest.raises(DataError):
        load_tensor(tmp_path / "extra.ctnsr")
    with pytest.raises(DataError):
        load_tensor(tmp_path / "missing.ctnsr")
