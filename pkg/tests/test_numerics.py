"""Tensor-op unit tests: shape contracts, trivial cases, and derived oracles."""

import numpy as np
import pytest

from maskrl import numerics as nm
from gradcheck import gradcheck


def T(arr, req=False, dtype=np.float64):
    return nm.Tensor(np.asarray(arr, dtype), requires_grad=req)


class TestConv2d:
    def test_paper_encoder_stack_shapes(self):
        # 84 -> 41 -> 39 -> 37 -> 35 with k=3 and strides 2,1,1,1
        rng = np.random.default_rng(0)
        x = T(rng.random((3, 84, 84)), dtype=np.float32)
        h = x
        c_in = 3
        for stride in (2, 1, 1, 1):
            w = T(rng.standard_normal((32, c_in, 3, 3)) * 0.05, dtype=np.float32)
            b = T(np.zeros(32), dtype=np.float32)
            h = nm.conv2d(h, w, b, stride=stride)
            c_in = 32
        assert h.shape == (32, 35, 35)
        pooled = nm.avg_pool2d(h, 4, 4)
        assert pooled.shape == (32, 8, 8)

    def test_identity_kernel(self):
        x = T(np.arange(16).reshape(1, 4, 4))
        w = T(np.ones((1, 1, 1, 1)))
        b = T(np.zeros(1))
        y = nm.conv2d(x, w, b, stride=1)
        np.testing.assert_array_equal(y.data, x.data)

    def test_ones_kernel_arithmetic(self):
        x = T(np.ones((1, 4, 4)))
        w = T(np.ones((1, 1, 3, 3)))
        b = T(np.zeros(1))
        y = nm.conv2d(x, w, b, stride=1)
        assert y.shape == (1, 2, 2)
        np.testing.assert_allclose(y.data, 9.0)

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(1)
        xb = rng.standard_normal((3, 2, 6, 6))
        w = T(rng.standard_normal((4, 2, 3, 3)))
        b = T(rng.standard_normal(4))
        batched = nm.conv2d(T(xb), w, b, stride=1).data
        for i in range(3):
            single = nm.conv2d(T(xb[i]), w, b, stride=1).data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    def test_shape_mismatch_raises(self):
        x = T(np.ones((2, 4, 4)))
        w = T(np.ones((1, 3, 3, 3)))
        b = T(np.zeros(1))
        with pytest.raises(nm.DimensionError):
            nm.conv2d(x, w, b, stride=1)
        with pytest.raises(nm.DimensionError):
            nm.conv2d(T(np.ones((1, 2, 2))), T(np.ones((1, 1, 3, 3))), T(np.zeros(1)), 1)

    def test_gradcheck(self):
        rng = np.random.default_rng(2)
        x = T(rng.standard_normal((2, 3, 7, 7)), req=True)
        w = T(rng.standard_normal((4, 3, 3, 3)) * 0.3, req=True)
        b = T(rng.standard_normal(4) * 0.3, req=True)
        gradcheck(lambda: nm.mean_all(nm.tanh(nm.conv2d(x, w, b, stride=2))),
                  [x, w, b], rng, n_samples=60)


def dense_operator(fn, in_shape, out_shape):
    """Materialize a linear map as an explicit matrix by probing basis vectors."""
    n_in = int(np.prod(in_shape))
    n_out = int(np.prod(out_shape))
    mat = np.zeros((n_out, n_in))
    for i in range(n_in):
        e = np.zeros(n_in)
        e[i] = 1.0
        mat[:, i] = fn(e.reshape(in_shape)).reshape(-1)
    return mat


class TestConvTranspose2d:
    def test_pool_mirror_shape(self):
        rng = np.random.default_rng(3)
        x = T(rng.standard_normal((32, 8, 8)), dtype=np.float32)
        w = T(rng.standard_normal((32, 16, 4, 4)) * 0.05, dtype=np.float32)
        b = T(np.zeros(16), dtype=np.float32)
        y = nm.conv_transpose2d(x, w, b, stride=4)
        assert y.shape == (16, 32, 32)  # (8-1)*4 + 4

    def test_identity(self):
        x = T(np.arange(9.0).reshape(1, 3, 3))
        w = T(np.ones((1, 1, 1, 1)))
        b = T(np.zeros(1))
        y = nm.conv_transpose2d(x, w, b, stride=1)
        np.testing.assert_array_equal(y.data, x.data)

    def test_output_padding_rows_are_bias_only(self):
        x = T(np.ones((1, 3, 3)))
        w = T(np.ones((1, 1, 3, 3)))
        b = T(np.full(1, 0.5))
        y = nm.conv_transpose2d(x, w, b, stride=2, output_padding=1)
        assert y.shape == (1, 8, 8)
        np.testing.assert_allclose(y.data[0, -1, :], 0.5)
        np.testing.assert_allclose(y.data[0, :, -1], 0.5)

    def test_adjointness_against_dense_matrices(self):
        # forward of conv_transpose must be the transpose of conv2d's matrix
        rng = np.random.default_rng(4)
        w_arr = rng.standard_normal((2, 1, 3, 3))
        b0c = T(np.zeros(2))
        b0t = T(np.zeros(1))
        for stride in (1, 2):
            out_hw = (5 - 3) // stride + 1

            def conv_fn(v):
                return nm.conv2d(T(v), T(w_arr), b0c, stride=stride).data

            def convt_fn(v):
                # tied weights: the conv array reads as (C_in_T, C_out_T, k, k)
                return nm.conv_transpose2d(T(v), T(w_arr), b0t, stride=stride).data

            A = dense_operator(conv_fn, (1, 5, 5), (2, out_hw, out_hw))
            At = dense_operator(convt_fn, (2, out_hw, out_hw), (1, 5, 5))
            np.testing.assert_allclose(At, A.T, atol=1e-10)
            # inner-product identity on random vectors
            xv = rng.standard_normal(25)
            yv = rng.standard_normal(A.shape[0])
            assert abs(A @ xv @ yv - xv @ (A.T @ yv)) < 1e-10

    def test_gradcheck(self):
        rng = np.random.default_rng(5)
        x = T(rng.standard_normal((2, 3, 4, 4)), req=True)
        w = T(rng.standard_normal((3, 2, 3, 3)) * 0.3, req=True)
        b = T(rng.standard_normal(2) * 0.3, req=True)
        gradcheck(lambda: nm.mean_all(nm.sigmoid(
            nm.conv_transpose2d(x, w, b, stride=2, output_padding=1))),
            [x, w, b], rng, n_samples=60)


class TestAvgPool2d:
    def test_paper_pool_shape(self):
        x = T(np.zeros((32, 35, 35)), dtype=np.float32)
        assert nm.avg_pool2d(x, 4, 4).shape == (32, 8, 8)

    def test_constant_passthrough(self):
        x = T(np.full((2, 8, 8), 3.25))
        np.testing.assert_allclose(nm.avg_pool2d(x, 4, 4).data, 3.25)

    def test_mean_of_range(self):
        x = T(np.arange(16.0).reshape(1, 4, 4))
        y = nm.avg_pool2d(x, 4, 4)
        assert y.shape == (1, 1, 1)
        assert y.data[0, 0, 0] == pytest.approx(7.5)

    def test_kernel_too_large(self):
        with pytest.raises(nm.DimensionError):
            nm.avg_pool2d(T(np.zeros((1, 3, 3))), 4, 4)

    def test_gradcheck(self):
        rng = np.random.default_rng(6)
        x = T(rng.standard_normal((2, 2, 7, 7)), req=True)
        gradcheck(lambda: nm.mean_all(nm.avg_pool2d(x, 3, 2)), [x], rng, n_samples=50)


class TestLinear:
    def test_identity(self):
        x = T([1.0, -2.0, 3.0])
        w = T(np.eye(3))
        b = T(np.zeros(3))
        np.testing.assert_array_equal(nm.linear(x, w, b).data, x.data)

    def test_arithmetic(self):
        y = nm.linear(T([4.0, 5.0]), T([[1.0, 2.0]]), T([3.0]))
        np.testing.assert_allclose(y.data, [17.0])

    def test_decoder_projection_shape(self):
        rng = np.random.default_rng(7)
        z = T(rng.standard_normal(2048), dtype=np.float32)
        w = T(rng.standard_normal((2048, 2048)) * 0.01, dtype=np.float32)
        b = T(np.zeros(2048), dtype=np.float32)
        out = nm.linear(z, w, b)
        assert nm.reshape(out, (32, 8, 8)).shape == (32, 8, 8)

    def test_mismatch(self):
        with pytest.raises(nm.DimensionError):
            nm.linear(T([1.0, 2.0]), T([[1.0, 2.0, 3.0]]), T([0.0]))

    def test_gradcheck_batched(self):
        rng = np.random.default_rng(8)
        x = T(rng.standard_normal((4, 6)), req=True)
        w = T(rng.standard_normal((3, 6)), req=True)
        b = T(rng.standard_normal(3), req=True)
        gradcheck(lambda: nm.mean_all(nm.relu(nm.linear(x, w, b))),
                  [x, w, b], rng, n_samples=40)


class TestElementwise:
    def test_relu_values(self):
        y = nm.elementwise("relu", T([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])

    def test_sigmoid_zero(self):
        assert nm.elementwise("sigmoid", T([0.0])).data[0] == pytest.approx(0.5)

    def test_tanh_zero(self):
        assert nm.elementwise("tanh", T([0.0])).data[0] == 0.0

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            nm.elementwise("softplus", T([0.0]))

    def test_relu_subgradient_zero_at_zero(self):
        x = T([0.0, 1.0], req=True)
        with nm.Tape() as tape:
            nm.backward(nm.sum_all(nm.relu(x)), tape)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = T(np.random.default_rng(9).random((3, 4, 5)), req=True)
        with nm.Tape() as tape:
            nm.backward(nm.sum_all(x), tape)
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_dot_grad(self):
        rng = np.random.default_rng(10)
        w = T(rng.standard_normal(8), req=True)
        x = T(rng.standard_normal(8))
        with nm.Tape() as tape:
            nm.backward(nm.sum_all(nm.mul(w, x)), tape)
        np.testing.assert_allclose(w.grad, x.data)

    def test_grad_accumulates_across_uses(self):
        x = T([2.0], req=True)
        with nm.Tape() as tape:
            y = nm.add(nm.mul(x, x), x)  # x^2 + x -> dy/dx = 2x + 1
            nm.backward(y, tape)
        assert x.grad[0] == pytest.approx(5.0)

    def test_non_scalar_loss_rejected(self):
        x = T([1.0, 2.0], req=True)
        with nm.Tape() as tape:
            y = nm.mul(x, x)
            with pytest.raises(nm.DimensionError):
                nm.backward(y, tape)

    def test_nan_gradient_reports_op(self):
        x = T([710.0], req=True)
        with nm.Tape() as tape:
            loss = nm.sum_all(nm.exp(x))  # exp overflows to inf
        nm.set_debug_checks(True)
        try:
            with pytest.raises(nm.NumericError, match="op #"):
                nm.backward(loss, tape)
        finally:
            nm.set_debug_checks(False)

    def test_nan_forward_reports_op(self):
        nm.set_debug_checks(True)
        try:
            x = T([1e300], req=True)
            with nm.Tape():
                with pytest.raises(nm.NumericError, match="mul"):
                    nm.mul(x, x)
        finally:
            nm.set_debug_checks(False)

    def test_no_grad_suppresses_recording(self):
        x = T([1.0], req=True)
        with nm.Tape() as tape:
            with nm.no_grad():
                nm.mul(x, x)
            assert len(tape) == 0

    def test_composite_network_gradcheck(self):
        # conv -> pool -> linear -> layernorm -> tanh -> mse, all in one graph
        rng = np.random.default_rng(11)
        x = T(rng.standard_normal((2, 2, 9, 9)), req=True)
        wc = T(rng.standard_normal((3, 2, 3, 3)) * 0.4, req=True)
        bc = T(np.zeros(3), req=True)
        wl = T(rng.standard_normal((5, 3 * 3 * 3)) * 0.4, req=True)
        bl = T(np.zeros(5), req=True)
        gam = T(np.ones(5), req=True)
        bet = T(np.zeros(5), req=True)
        target = rng.standard_normal((2, 5))

        def loss():
            h = nm.relu(nm.conv2d(x, wc, bc, stride=2))
            h = nm.avg_pool2d(h, 2, 1)
            h = nm.reshape(h, (2, -1))
            h = nm.linear(h, wl, bl)
            h = nm.tanh(nm.layer_norm(h, gam, bet))
            return nm.mse_loss(h, target)

        gradcheck(loss, [x, wc, bc, wl, bl, gam, bet], rng, n_samples=120)


class TestLossOps:
    def test_bce_matching_prediction_small(self):
        t = np.array([0.0, 1.0, 1.0, 0.0])
        pred = T(t.copy())
        assert nm.bce_loss(pred, t).item() <= 1e-5

    def test_bce_half(self):
        pred = T(np.full(10, 0.5))
        assert nm.bce_loss(pred, np.ones(10)).item() == pytest.approx(np.log(2), rel=1e-6)

    def test_bce_gradient_at_half(self):
        pred = T(np.full(4, 0.5), req=True)
        with nm.Tape() as tape:
            nm.backward(nm.bce_loss(pred, np.ones(4)), tape)
        # -1/p at p=0.5 is -2 per pixel, averaged over 4 pixels
        np.testing.assert_allclose(pred.grad, -2.0 / 4)

    def test_mse_values(self):
        p = T(np.zeros((3, 3)))
        assert nm.mse_loss(p, np.zeros((3, 3))).item() == 0.0
        assert nm.mse_loss(T(np.full((3, 3), 0.1)), np.zeros((3, 3))).item() == pytest.approx(0.01)

    def test_minimum_routes_gradient(self):
        a = T([1.0, 5.0], req=True)
        b = T([2.0, 3.0], req=True)
        with nm.Tape() as tape:
            nm.backward(nm.sum_all(nm.minimum(a, b)), tape)
        np.testing.assert_array_equal(a.grad, [1.0, 0.0])
        np.testing.assert_array_equal(b.grad, [0.0, 1.0])

    def test_concat_narrow_roundtrip_grads(self):
        rng = np.random.default_rng(12)
        a = T(rng.standard_normal((2, 3)), req=True)
        b = T(rng.standard_normal((2, 4)), req=True)
        gradcheck(lambda: nm.mean_all(nm.mul(
            nm.concat([a, b], axis=1), nm.concat([a, b], axis=1))),
            [a, b], rng, n_samples=28)
        c = T(rng.standard_normal((4, 6)), req=True)
        gradcheck(lambda: nm.mean_all(nm.exp(nm.narrow(c, 1, 2, 3))),
                  [c], rng, n_samples=20)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0])
        st = nm.AdamState([p.shape], [p.dtype], learning_rate=0.1)
        for _ in range(5):
            nm.adam_step([p], [np.zeros_like(p)], st)
        np.testing.assert_array_equal(p, [1.0, -2.0])
        assert st.step_count == 5

    def test_constant_gradient_matches_closed_form(self):
        # with constant g the bias-corrected moments are exactly g and g^2,
        # so each step moves by lr * g / (|g| + eps_t) with
        # eps_t = eps * sqrt(1 - beta2^t) absorbed into the v-hat form
        g = np.array([0.3, -1.7, 0.001])
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        p = np.zeros(3)
        st = nm.AdamState([p.shape], [p.dtype], lr, b1, b2, eps)
        expected = np.zeros(3)
        for t in range(1, 51):
            nm.adam_step([p], [g.copy()], st)
            m_hat = g  # g * (1 - b1**t) / (1 - b1**t)
            v_hat = g * g
            expected = expected - lr * m_hat / (np.sqrt(v_hat) + eps)
            np.testing.assert_allclose(p, expected, rtol=1e-12)
        # asymptotically a step of size lr against the gradient sign
        np.testing.assert_allclose(np.abs(expected) / 50, lr, rtol=1e-4)

    def test_default_hyperparameters(self):
        opt = nm.Adam([nm.Tensor(np.zeros(3), requires_grad=True)])
        assert opt.state.learning_rate == pytest.approx(1e-4)
        assert (opt.state.beta1, opt.state.beta2) == (0.9, 0.999)
        assert opt.state.epsilon == pytest.approx(1e-8)

    def test_shape_mismatch(self):
        p = np.zeros(3)
        st = nm.AdamState([p.shape], [p.dtype])
        with pytest.raises(nm.DimensionError):
            nm.adam_step([p], [np.zeros(4)], st)


class TestRng:
    def test_same_seed_same_stream(self):
        a = nm.Rng(1234).random(1000)
        b = nm.Rng(1234).random(1000)
        np.testing.assert_array_equal(a, b)

    def test_normal_sample_mean(self):
        x = nm.Rng(7).normal(0.0, 1.0, size=1_000_000)
        assert -0.01 < x.mean() < 0.01

    def test_labeled_substreams_distinct_and_stable(self):
        root = nm.Rng(99)
        env1 = root.split("env").random(50)
        agent = root.split("agent").random(50)
        env2 = nm.Rng(99).split("env").random(50)
        assert not np.allclose(env1, agent)
        np.testing.assert_array_equal(env1, env2)

    def test_parent_draws_do_not_shift_children(self):
        r1 = nm.Rng(5)
        r1.random(100)
        child_after = r1.split("x").random(10)
        child_fresh = nm.Rng(5).split("x").random(10)
        np.testing.assert_array_equal(child_after, child_fresh)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        arrays = {
            "enc.w": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
            "enc.b": rng.standard_normal(4).astype(np.float32),
            "fc.w": rng.standard_normal((8, 16)).astype(np.float64),
        }
        nm.save_checkpoint(tmp_path / "ck", arrays, extra={"step": 3})
        loaded, extra = nm.load_checkpoint(tmp_path / "ck")
        assert extra == {"step": 3}
        for k, v in arrays.items():
            assert loaded[k].dtype == v.dtype
            assert np.array_equal(loaded[k], v)
            assert loaded[k].tobytes() == v.tobytes()


class TestDeterminism:
    def test_hundred_update_steps_bit_identical(self):
        def run():
            rng = nm.Rng(2024).split("init")
            w = nm.Tensor(rng.normal(0, 0.5, (8, 6)).astype(np.float32), requires_grad=True)
            b = nm.Tensor(np.zeros(8, np.float32), requires_grad=True)
            opt = nm.Adam([w, b], learning_rate=1e-3)
            data_rng = nm.Rng(2024).split("data")
            for _ in range(100):
                x = nm.Tensor(data_rng.normal(0, 1, (4, 6)).astype(np.float32))
                tgt = np.tanh(x.data.sum(axis=1, keepdims=True) * np.ones((1, 8))).astype(np.float32)
                opt.zero_grad()
                with nm.Tape() as tape:
                    loss = nm.mse_loss(nm.tanh(nm.linear(x, w, b)), tgt)
                    nm.backward(loss, tape)
                opt.step()
            return w.data.tobytes(), b.data.tobytes()

        assert run() == run()
