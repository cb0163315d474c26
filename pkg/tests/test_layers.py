import numpy as np
import pytest

from oudefend.errors import ConfigError, LabelError, ShapeError, StatError
from oudefend.layers import (
    BatchNormState,
    Conv3dParams,
    batch_norm3d,
    conv3d,
    global_avg_pool,
    linear,
    max_pool3d,
    per_sample_cross_entropy,
    relu,
    same_padding,
    softmax_cross_entropy,
    upsample_nearest3d,
)
from oudefend.tensor import Tape, Tensor, reduce_mean, reduce_sum

from _oracles import check_gradients, conv3d_loops, rand_tensor


def conv_params(rng, co, ci, k=(3, 3, 3), stride=(1, 1, 1), padding=(1, 1, 1), grad=True):
    w = rand_tensor(rng, (co, ci) + tuple(k), scale=0.5, requires_grad=grad)
    b = rand_tensor(rng, (co,), scale=0.1, requires_grad=grad)
    return Conv3dParams(w, b, stride=stride, padding=padding)


class TestConv3d:
    def test_pointwise_identity(self):
        x = Tensor(np.random.default_rng(0).random((1, 1, 2, 3, 3)))
        p = Conv3dParams(Tensor(np.ones((1, 1, 1, 1, 1))), Tensor(np.zeros(1)))
        assert np.allclose(conv3d(x, p).data, x.data)

    def test_all_ones_interior_27(self):
        x = Tensor(np.ones((1, 1, 3, 3, 3)))
        p = Conv3dParams(Tensor(np.ones((1, 1, 3, 3, 3))), Tensor(np.zeros(1)), padding=(0, 0, 0))
        assert conv3d(x, p).data[0, 0, 0, 0, 0] == 27.0

    def test_matches_loop_oracle_random(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((1, 2, 4, 6, 6)))
        p = conv_params(rng, co=3, ci=2, grad=False)
        got = conv3d(x, p).data
        want = conv3d_loops(x.data, p.weight.data, p.bias.data, p.stride, p.padding)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("trial", range(10))
    def test_matches_loop_oracle_exact_on_integers(self, trial):
        rng = np.random.default_rng(100 + trial)
        stride = tuple(int(v) for v in rng.integers(1, 3, 3))
        pad = tuple(int(v) for v in rng.integers(0, 2, 3))
        k = tuple(int(v) for v in rng.integers(1, 4, 3))
        ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        dims = tuple(int(rng.integers(kd, kd + 5)) for kd in k)
        x = Tensor(rng.integers(-4, 5, (2, ci) + dims).astype(np.float64))
        w = Tensor(rng.integers(-3, 4, (co, ci) + k).astype(np.float64))
        b = Tensor(rng.integers(-2, 3, co).astype(np.float64))
        p = Conv3dParams(w, b, stride=stride, padding=pad)
        got = conv3d(x, p).data
        want = conv3d_loops(x.data, w.data, b.data, stride, pad)
        assert np.array_equal(got, want)

    def test_channel_mismatch(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.random((1, 3, 3, 4, 4)))
        with pytest.raises(ShapeError):
            conv3d(x, conv_params(rng, co=2, ci=2))

    def test_too_small_input_raises(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.random((1, 1, 1, 2, 2)))
        with pytest.raises(ShapeError):
            conv3d(x, conv_params(rng, co=1, ci=1, padding=(0, 0, 0)))

    def test_same_padding_requires_odd(self):
        with pytest.raises(ConfigError):
            same_padding((2, 3, 3))
        assert same_padding((3, 3, 3)) == (1, 1, 1)

    @pytest.mark.parametrize("stride,pad", [((1, 1, 1), (1, 1, 1)), ((1, 2, 2), (1, 1, 1)), ((2, 1, 1), (0, 0, 0))])
    def test_gradients(self, stride, pad):
        rng = np.random.default_rng(4)
        x = rand_tensor(rng, (2, 2, 3, 5, 5))
        p = conv_params(rng, co=3, ci=2, stride=stride, padding=pad)

        def f(x, w, b):
            y = conv3d(x, Conv3dParams(w, b, stride=stride, padding=pad))
            return reduce_sum(y * y)

        check_gradients(f, [x, p.weight, p.bias])


class TestMaxPool3d:
    def test_constant_input(self):
        x = Tensor(np.full((1, 1, 2, 4, 4), 2.5))
        y = max_pool3d(x, (1, 2, 2))
        assert y.shape == (1, 1, 2, 2, 2)
        assert np.all(y.data == 2.5)

    def test_window_max(self):
        x = Tensor(np.array([[[[[1.0, 2.0], [3.0, 4.0]]]]]))
        assert max_pool3d(x, (1, 2, 2)).data[0, 0, 0, 0, 0] == 4.0

    def test_non_divisible_raises(self):
        with pytest.raises(ShapeError):
            max_pool3d(Tensor(np.zeros((1, 1, 2, 5, 4))), (1, 2, 2))

    def test_first_max_tie_rule(self):
        x = Tensor(np.array([[[[[7.0, 7.0], [7.0, 7.0]]]]]), requires_grad=True)
        with Tape() as tape:
            loss = reduce_sum(max_pool3d(x, (1, 2, 2)))
        tape.backward(loss)
        assert np.array_equal(x.grad[0, 0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rand_tensor(rng, (2, 2, 2, 4, 4))

        def f(x):
            return reduce_sum(max_pool3d(x, (2, 2, 2)))

        check_gradients(f, [x])


class TestUpsampleNearest3d:
    def test_constant(self):
        y = upsample_nearest3d(Tensor(np.full((1, 1, 1, 2, 2), 3.0)), (1, 2, 2))
        assert y.shape == (1, 1, 1, 4, 4)
        assert np.all(y.data == 3.0)

    def test_block_replication(self):
        x = Tensor(np.array([[[[[1.0, 2.0], [3.0, 4.0]]]]]))
        y = upsample_nearest3d(x, (1, 2, 2)).data[0, 0, 0]
        assert np.array_equal(y, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_adjoint_dot_identity(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((1, 2, 2, 3, 3)), requires_grad=True)
        y = rng.standard_normal((1, 2, 4, 6, 6))
        with Tape() as tape:
            ux = upsample_nearest3d(x, (2, 2, 2))
            loss = reduce_sum(ux * Tensor(y))
        tape.backward(loss)
        lhs = float((ux.data * y).sum())
        rhs = float((x.data * x.grad).sum())
        assert abs(lhs - rhs) < 1e-10


class TestRelu:
    def test_values(self):
        assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_gradient_indicator(self):
        x = Tensor([-1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = reduce_sum(relu(x))
        tape.backward(loss)
        assert np.array_equal(x.grad, [0.0, 1.0])

    def test_composite_finite_differences(self):
        rng = np.random.default_rng(7)
        vals = rng.standard_normal((3, 4))
        vals[np.abs(vals) < 1e-3] += 0.1  # keep away from the kink
        x = Tensor(vals, requires_grad=True)

        def f(x):
            return reduce_sum(relu(x) * relu(x))

        check_gradients(f, [x])


class TestBatchNorm3d:
    def test_channel_constant_gives_zeros(self):
        x = Tensor(np.broadcast_to(np.array([1.0, -2.0])[None, :, None, None, None], (2, 2, 2, 3, 3)).copy())
        y = batch_norm3d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), BatchNormState(2), "train")
        assert np.allclose(y.data, 0.0)

    def test_unit_output_variance(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((3, 4, 2, 5, 5)) * 3.0 + 1.0)
        y = batch_norm3d(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), BatchNormState(4), "train")
        v = y.data.var(axis=(0, 2, 3, 4))
        assert np.all(np.abs(v - 1.0) < 1e-4)

    def test_eval_affine_only(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((1, 2, 2, 3, 3)))
        gamma, beta = Tensor([2.0, 0.5]), Tensor([1.0, -1.0])
        y = batch_norm3d(x, gamma, beta, BatchNormState(2), "eval")
        want = x.data * gamma.data[None, :, None, None, None] + beta.data[None, :, None, None, None]
        assert np.allclose(y.data, want, atol=1e-4)

    def test_single_element_raises(self):
        x = Tensor(np.zeros((1, 2, 1, 1, 1)))
        with pytest.raises(StatError):
            batch_norm3d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), BatchNormState(2), "train")

    def test_running_stats_update(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.standard_normal((4, 2, 2, 3, 3)) + 5.0)
        st = BatchNormState(2)
        batch_norm3d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), st, "train")
        assert np.all(st.running_mean > 0.2)
        st2 = BatchNormState(2)
        batch_norm3d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), st2, "train", update_running=False)
        assert np.all(st2.running_mean == 0.0)

    @pytest.mark.parametrize("mode", ["train", "eval"])
    def test_gradients(self, mode):
        rng = np.random.default_rng(11)
        x = rand_tensor(rng, (2, 3, 2, 4, 4))
        gamma = Tensor(1.0 + 0.1 * rng.standard_normal(3), requires_grad=True)
        beta = Tensor(0.1 * rng.standard_normal(3), requires_grad=True)
        st = BatchNormState(3)
        st.running_mean = rng.standard_normal(3) * 0.2
        st.running_var = 1.0 + 0.3 * rng.random(3)

        def f(x, gamma, beta):
            y = batch_norm3d(x, gamma, beta, st, mode, update_running=False)
            return reduce_sum(y * y)

        check_gradients(f, [x, gamma, beta], rtol=1e-4, atol=1e-7)


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        y = linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        assert np.array_equal(y.data, x.data)

    def test_all_ones_row(self):
        x = Tensor(np.ones((1, 5)))
        y = linear(x, Tensor(np.ones((1, 5))), Tensor(np.zeros(1)))
        assert y.data[0, 0] == 5.0

    def test_gradients(self):
        rng = np.random.default_rng(12)
        x = rand_tensor(rng, (3, 4))
        w = rand_tensor(rng, (2, 4))
        b = rand_tensor(rng, (2,))

        def f(x, w, b):
            y = linear(x, w, b)
            return reduce_sum(y * y)

        check_gradients(f, [x, w, b])


class TestGlobalAvgPool:
    def test_constant(self):
        y = global_avg_pool(Tensor(np.full((2, 3, 2, 4, 4), 1.5)))
        assert y.shape == (2, 3)
        assert np.all(y.data == 1.5)

    def test_half_and_half(self):
        x = np.zeros((1, 1, 2, 2, 2))
        x[0, 0, 0] = 1.0
        assert global_avg_pool(Tensor(x)).data[0, 0] == 0.5

    def test_adjoint_distributes(self):
        rng = np.random.default_rng(13)
        x = rand_tensor(rng, (1, 2, 2, 3, 3))

        def f(x):
            y = global_avg_pool(x)
            return reduce_sum(y * y)

        check_gradients(f, [x])


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((2, 5))), np.array([0, 3]))
        assert abs(float(loss.data) - np.log(5)) < 1e-12

    def test_saturated_correct_class(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 30.0
        loss = softmax_cross_entropy(Tensor(logits), np.array([2]))
        assert float(loss.data) < 1e-9

    def test_label_out_of_range(self):
        with pytest.raises(LabelError):
            softmax_cross_entropy(Tensor(np.zeros((1, 3))), np.array([3]))
        with pytest.raises(LabelError):
            softmax_cross_entropy(Tensor(np.zeros((1, 3))), np.array([-1]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        logits = rand_tensor(rng, (4, 5))
        labels = np.array([0, 2, 4, 1])

        def f(logits):
            return softmax_cross_entropy(logits, labels)

        check_gradients(f, [logits], rtol=1e-6, atol=1e-9)

    def test_per_sample_helper_agrees(self):
        rng = np.random.default_rng(15)
        logits = rng.standard_normal((6, 5))
        labels = rng.integers(0, 5, 6)
        per = per_sample_cross_entropy(logits, labels)
        mean = float(softmax_cross_entropy(Tensor(logits), labels).data)
        assert abs(per.mean() - mean) < 1e-12


@pytest.mark.parametrize("trial", range(20))
def test_every_layer_gradient_sweep(trial):
    """Randomized per-layer gradient checks across shapes and settings."""
    rng = np.random.default_rng(1000 + trial)
    kind = trial % 5
    if kind == 0:
        x = rand_tensor(rng, (1, 2, 3, 4, 4))
        p = conv_params(rng, co=2, ci=2, k=(3, 3, 3),
                        stride=(1, 1, 1), padding=tuple(int(v) for v in rng.integers(0, 2, 3)))

        def f(x, w, b):
            y = conv3d(x, Conv3dParams(w, b, p.stride, p.padding))
            return reduce_sum(y * y)

        check_gradients(f, [x, p.weight, p.bias])
    elif kind == 1:
        x = rand_tensor(rng, (2, 1, 2, 4, 6))
        check_gradients(lambda x: reduce_sum(max_pool3d(x, (1, 2, 2)) * 2.0), [x])
    elif kind == 2:
        x = rand_tensor(rng, (1, 2, 2, 3, 3))
        check_gradients(lambda x: reduce_mean(upsample_nearest3d(x, (2, 2, 2)) * upsample_nearest3d(x, (2, 2, 2))), [x])
    elif kind == 3:
        vals = rng.standard_normal((2, 2, 2, 4, 4))
        vals[np.abs(vals) < 1e-3] += 0.1
        x = Tensor(vals, requires_grad=True)
        check_gradients(lambda x: reduce_sum(relu(x)), [x])
    else:
        x = rand_tensor(rng, (3, 5))
        w = rand_tensor(rng, (4, 5))
        b = rand_tensor(rng, (4,))
        labels = rng.integers(0, 4, 3)
        check_gradients(lambda x, w, b: softmax_cross_entropy(linear(x, w, b), labels),
                        [x, w, b], rtol=1e-5, atol=1e-8)
