import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_conv1d_valid, central_difference, relative_error
from waveunet import tensor as T
from waveunet.errors import ShapeError, SizeError, UsageError
from waveunet.tensor import ConvParams, Tensor, UpsampleWeights


def conv_params(w, b=None, requires_grad=False):
    w = np.asarray(w, dtype=np.float64)
    if b is None:
        b = np.zeros(w.shape[2])
    return ConvParams(Tensor(w, requires_grad), Tensor(np.asarray(b, dtype=np.float64), requires_grad))


def seq(values, channels=1):
    return Tensor(np.asarray(values, dtype=np.float64).reshape(1, -1, channels))


class TestConv1d:
    def test_hand_computed_sliding_sum(self):
        out = T.conv1d(seq([1, 2, 3, 4]), conv_params(np.ones((3, 1, 1))), "valid")
        np.testing.assert_array_equal(out.data.ravel(), [6, 9])

    def test_valid_frame_count(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 59, 2)))
        out = T.conv1d(x, conv_params(np.zeros((15, 2, 3))), "valid")
        assert out.shape == (1, 45, 3)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 20, 3))
        w = rng.normal(size=(5, 3, 4))
        b = rng.normal(size=4)
        out = T.conv1d(Tensor(x), conv_params(w, b), "valid")
        np.testing.assert_allclose(out.data, brute_conv1d_valid(x, w, b), rtol=1e-12, atol=1e-12)

    def test_no_kernel_flip(self):
        out = T.conv1d(seq([1, 2, 3]), conv_params(np.array([1.0, 0, 0]).reshape(3, 1, 1)), "valid")
        assert out.data.ravel()[0] == 1.0

    def test_same_mode_identity_kernel(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(1, 30, 1)))
        w = np.zeros((15, 1, 1))
        w[7, 0, 0] = 1.0
        out = T.conv1d(x, conv_params(w), "same")
        np.testing.assert_array_equal(out.data, x.data)

    def test_valid_too_short_names_layer(self):
        with pytest.raises(SizeError, match="ds3"):
            T.conv1d(seq([1, 2]), conv_params(np.ones((3, 1, 1))), "valid", name="ds3")

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv1d(seq([1, 2, 3, 4], 2), conv_params(np.ones((1, 1, 1))), "valid")


class TestActivations:
    def test_leaky_relu_negative(self):
        assert T.activation(seq([-1.0]), "leaky_relu").data.item() == pytest.approx(-0.2)

    def test_tanh_zero(self):
        assert T.activation(seq([0.0]), "tanh").data.item() == 0.0

    def test_sigmoid_zero(self):
        assert T.activation(seq([0.0]), "sigmoid").data.item() == 0.5

    def test_sigmoid_extremes_stay_finite(self):
        out = T.sigmoid(seq([-800.0, 800.0])).data.ravel()
        assert np.all(np.isfinite(out))
        assert 0.0 <= out[0] < 1e-300 and out[1] == 1.0
        mid = T.sigmoid(seq([-30.0, 30.0])).data.ravel()
        assert 0 < mid[0] < 1 and 0 < mid[1] < 1

    def test_leaky_relu_gradient_at_zero_takes_positive_branch(self):
        x = Tensor(np.zeros((1, 1, 1)), requires_grad=True)
        loss = T.mse_loss(T.leaky_relu(x), Tensor(-np.ones((1, 1, 1))))
        loss.backward()
        assert x.grad.item() == pytest.approx(2.0)


class TestResampling:
    def test_decimate_definition(self):
        np.testing.assert_array_equal(T.decimate(seq([10, 11, 12, 13, 14])).data.ravel(), [10, 12, 14])

    def test_decimate_even_base_mode(self):
        np.testing.assert_array_equal(T.decimate(seq([0, 1, 2, 3])).data.ravel(), [0, 2])

    def test_decimate_strict_rejects_even_and_short(self):
        with pytest.raises(SizeError):
            T.decimate(seq([0, 1, 2, 3]), strict=True)
        with pytest.raises(SizeError):
            T.decimate(seq([0]), strict=True)

    def test_decimate_long_odd(self):
        x = Tensor(np.zeros((1, 147429, 1), dtype=np.float32))
        assert T.decimate(x, strict=True).frames == 73715

    def test_upsample_midpoint(self):
        np.testing.assert_array_equal(T.upsample_linear(seq([0.0, 1.0])).data.ravel(), [0, 0.5, 1])

    def test_upsample_three(self):
        a, b, c = 1.0, 4.0, -2.0
        out = T.upsample_linear(seq([a, b, c])).data.ravel()
        np.testing.assert_array_equal(out, [a, (a + b) / 2, b, (b + c) / 2, c])

    def test_upsample_nine_to_seventeen(self):
        assert T.upsample_linear(Tensor(np.zeros((1, 9, 3)))).frames == 17

    def test_upsample_too_short(self):
        with pytest.raises(SizeError):
            T.upsample_linear(seq([1.0]))

    def test_round_trip_border_preservation(self):
        x = seq([3.0, -1.0, 2.0, 5.0, 7.0])
        back = T.upsample_linear(T.decimate(x, strict=True)).data.ravel()
        assert back[0] == 3.0 and back[4] == 7.0

    def test_learned_zero_weights_equal_linear(self):
        x = Tensor(np.random.default_rng(3).normal(size=(2, 11, 4)))
        lin = T.upsample_linear(x).data
        learned = T.upsample_learned(x, UpsampleWeights(Tensor(np.zeros(4)))).data
        np.testing.assert_allclose(learned, lin, rtol=0, atol=1e-12)

    def test_learned_saturated_weight_copies_left(self):
        x = Tensor(np.array([[[0.3], [-0.9]]]))
        out = T.upsample_learned(x, UpsampleWeights(Tensor(np.array([50.0])))).data.ravel()
        assert out[1] == pytest.approx(0.3, abs=1e-12)

    def test_learned_two_channels(self):
        x = Tensor(np.array([[[1.0, 1.0], [0.0, 0.0]]]))
        out = T.upsample_learned(x, UpsampleWeights(Tensor(np.array([0.0, 2.0])))).data[0, 1]
        sig2 = 1.0 / (1.0 + np.exp(-2.0))
        np.testing.assert_allclose(out, [0.5, sig2], rtol=1e-12)
        assert out[1] == pytest.approx(0.8808, abs=1e-4)

    def test_learned_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.upsample_learned(Tensor(np.zeros((1, 3, 2))), UpsampleWeights(Tensor(np.zeros(3))))


class TestConcatCrop:
    def test_symmetric_crop(self):
        high = Tensor(np.zeros((1, 13, 2)))
        local = Tensor(np.arange(21.0).reshape(1, 21, 1))
        out = T.concat_crop(high, local)
        assert out.shape == (1, 13, 3)
        np.testing.assert_array_equal(out.data[0, :, 2], np.arange(4.0, 17.0))

    def test_equal_frames_is_concat(self):
        a = Tensor(np.ones((1, 5, 24)))
        b = Tensor(np.zeros((1, 5, 1)))
        out = T.concat_crop(a, b)
        assert out.shape == (1, 5, 25)
        np.testing.assert_array_equal(out.data[..., :24], a.data)

    def test_odd_difference_is_an_error(self):
        with pytest.raises(SizeError):
            T.concat_crop(Tensor(np.zeros((1, 4, 1))), Tensor(np.zeros((1, 7, 1))))


class TestLossAndBackward:
    def test_mse_values(self):
        t = seq([1.0, 3.0])
        assert T.mse_loss(t, t).data == 0.0
        assert T.mse_loss(seq([2.0, 4.0]), t).data == 1.0
        assert T.mse_loss(seq([0.0, 0.0]), t).data == 5.0

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.mse_loss(seq([1.0]), seq([1.0, 2.0]))

    def test_scalar_derivative(self):
        x = Tensor(np.full((1, 1, 1), 3.0), requires_grad=True)
        T.mse_loss(x, Tensor(np.zeros((1, 1, 1)))).backward()
        assert x.grad.item() == pytest.approx(6.0)

    def test_decimate_gradient_routing(self):
        x = Tensor(np.zeros((1, 5, 1)), requires_grad=True)
        out = T.decimate(x, strict=True)
        loss = T.mse_loss(out, Tensor(-np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1) * 1.5))
        loss.backward()
        g = x.grad.ravel()
        np.testing.assert_allclose(g[1::2], 0.0)
        np.testing.assert_allclose(g[::2], 2.0 / 3.0 * 1.5 * np.array([1.0, 2.0, 3.0]))

    def test_second_backward_is_rejected(self):
        x = Tensor(np.ones((1, 2, 1)), requires_grad=True)
        loss = T.mse_loss(x, Tensor(np.zeros((1, 2, 1))))
        loss.backward()
        with pytest.raises(UsageError):
            loss.backward()

    def test_unrecorded_tensor_is_rejected(self):
        with pytest.raises(UsageError):
            T.mse_loss(seq([1.0]), seq([0.0])).backward()

    def test_shared_input_accumulates(self):
        x = Tensor(np.array([[[1.0], [2.0]]]), requires_grad=True)
        y = T.add(x, x)
        T.mse_loss(y, Tensor(np.zeros((1, 2, 1)))).backward()
        np.testing.assert_allclose(x.grad.ravel(), [4.0, 8.0])


def _composite_check(seed, op):
    """FD check of sum-of-squares loss through ``op`` for all inputs requiring grad."""
    rng = np.random.default_rng(seed)
    arrays, build = op(rng)
    target = None

    def loss_value():
        nonlocal target
        out = build([Tensor(a) for a in arrays])
        if target is None:
            target = rng.normal(size=out.shape)
        return float(T.mse_loss(out, Tensor(target)).data)

    loss_value()
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    T.mse_loss(build(leaves), Tensor(target)).backward()
    for a, leaf in zip(arrays, leaves):
        num = central_difference(loss_value, a)
        assert relative_error(leaf.grad, num) < 1e-4


@pytest.mark.parametrize(
    "op",
    [
        lambda r: ([r.normal(size=(2, 9, 3)), r.normal(size=(3, 3, 2)), r.normal(size=2)],
                   lambda t: T.conv1d(t[0], ConvParams(t[1], t[2]), "valid")),
        lambda r: ([r.normal(size=(2, 8, 3)), r.normal(size=(4, 3, 2)), r.normal(size=2)],
                   lambda t: T.conv1d(t[0], ConvParams(t[1], t[2]), "same")),
        lambda r: ([r.normal(size=(1, 6, 2))], lambda t: T.tanh(t[0])),
        lambda r: ([r.normal(size=(1, 6, 2))], lambda t: T.sigmoid(t[0])),
        lambda r: ([r.normal(size=(1, 7, 2))], lambda t: T.upsample_linear(t[0])),
        lambda r: ([r.normal(size=(1, 7, 2)), r.normal(size=2)],
                   lambda t: T.upsample_learned(t[0], UpsampleWeights(t[1]))),
        lambda r: ([r.normal(size=(1, 7, 2))], lambda t: T.repeat_last_frame(t[0])),
        lambda r: ([r.normal(size=(1, 5, 2)), r.normal(size=(1, 9, 1))],
                   lambda t: T.concat_crop(t[0], t[1])),
        lambda r: ([r.normal(size=(1, 5, 2)), r.normal(size=(1, 5, 2))], lambda t: T.sub(t[0], t[1])),
    ],
    ids=["conv_valid", "conv_same_even", "tanh", "sigmoid", "upsample", "learned", "repeat", "concat", "sub"],
)
def test_op_gradients_match_finite_differences(op):
    _composite_check(0, op)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 500), f=st.sampled_from([1, 3, 5, 15]))
def test_shape_algebra(n, f):
    x = Tensor(np.zeros((1, n, 1)))
    if n >= f:
        assert T.conv1d(x, conv_params(np.zeros((f, 1, 1))), "valid").frames == n - f + 1
    assert T.upsample_linear(x).frames == 2 * n - 1
    if n % 2 == 1 and n >= 3:
        assert T.decimate(x, strict=True).frames == (n + 1) // 2


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 200), c=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_decimate_inverts_upsample(n, c, seed):
    x = Tensor(np.random.default_rng(seed).normal(size=(1, n, c)))
    np.testing.assert_array_equal(T.decimate(T.upsample_linear(x), strict=True).data, x.data)


def test_ops_are_pure():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 17, 3)).astype(np.float32)
    w = rng.normal(size=(5, 3, 4)).astype(np.float32)
    p = ConvParams(Tensor(w), Tensor(np.zeros(4, np.float32)))
    a = T.upsample_linear(T.leaky_relu(T.conv1d(Tensor(x), p))).data
    b = T.upsample_linear(T.leaky_relu(T.conv1d(Tensor(x.copy()), p))).data
    assert a.tobytes() == b.tobytes()
    assert a.dtype == np.float32
