import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cohhn import ndcore as nd


def grad_of(build, **leaves):
    """Gradients of the scalar ``build(**tensors)`` w.r.t. each named leaf."""
    tensors = {k: nd.Tensor(np.array(v, dtype=float), name=k) for k, v in leaves.items()}
    with nd.recording() as tape:
        out = build(**tensors)
    return out, nd.backward(tape, out)


def check_numeric(build, rng, tol=1e-6, **shapes):
    values = {k: rng.normal(size=s) for k, s in shapes.items()}
    _, grads = grad_of(build, **values)
    for name, x in values.items():
        def f():
            ts = {k: nd.Tensor(v) for k, v in values.items()}
            return float(build(**ts).value)
        num = nd.numeric_grad(f, x)
        assert nd.relative_error(grads[name], num) < tol, name


class TestForwardOps:
    def test_softmax_symmetric(self):
        np.testing.assert_allclose(nd.softmax(nd.Tensor([0.0, 0.0])).value, [0.5, 0.5])

    def test_sigmoid_zero(self):
        assert nd.sigmoid(nd.Tensor(0.0)).value == 0.5

    def test_sigmoid_extremes_are_finite(self):
        s = nd.sigmoid(nd.Tensor([-1000.0, 1000.0])).value
        assert s[0] == 0.0 and s[1] == 1.0

    def test_matmul_ones(self):
        out = nd.matmul(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones((3, 1))))
        np.testing.assert_array_equal(out.value, [[3.0], [3.0]])

    def test_shape_mismatch_names_op(self):
        with pytest.raises(nd.ShapeError, match="matmul"):
            nd.matmul(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones((2, 3))))
        with pytest.raises(nd.ShapeError, match=r"add.*\(2,\).*\(3,\)"):
            nd.add(nd.Tensor(np.ones(2)), nd.Tensor(np.ones(3)))

    def test_no_silent_broadcasting(self):
        with pytest.raises(nd.ShapeError):
            nd.mul(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones(3)))
        # the one explicit exception
        out = nd.add_bias(nd.Tensor(np.ones((2, 3))), nd.Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.value, [[2, 3, 4], [2, 3, 4]])

    def test_non_finite_output_raises(self):
        with pytest.raises(nd.NumericError, match="exp"):
            nd.exp(nd.Tensor([1000.0]))

    def test_log_clamped_floor(self):
        out = nd.log_clamped(nd.Tensor([0.0, 1.0]))
        assert out.value[0] == pytest.approx(math.log(1e-12))
        assert out.value[1] == 0.0

    def test_segment_softmax_groups(self):
        out = nd.segment_softmax(nd.Tensor([0.0, 0.0, math.log(3.0), 0.0]), [0, 0, 1, 1], 3)
        np.testing.assert_allclose(out.value, [0.5, 0.5, 0.75, 0.25])

    def test_segment_sum_empty_bucket(self):
        out = nd.segment_sum(nd.Tensor([[1.0, 2.0], [3.0, 4.0]]), [0, 0], 2)
        np.testing.assert_array_equal(out.value, [[4.0, 6.0], [0.0, 0.0]])

    def test_segment_attention_matches_composition(self):
        rng = np.random.default_rng(0)
        x, u = nd.Tensor(rng.normal(size=(5, 3))), nd.Tensor(rng.normal(size=3))
        rows, cols = np.array([0, 0, 0, 2, 2]), np.array([1, 3, 4, 0, 4])
        fused, alpha = nd.segment_attention(x, u, rows, cols, 4)
        vals = nd.index(x, cols)
        a = nd.segment_softmax(nd.reshape(nd.matmul(vals, nd.reshape(u, (3, 1))), (5,)), rows, 4)
        ref = nd.segment_sum(nd.scale_rows(vals, a), rows, 4)
        np.testing.assert_allclose(fused.value, ref.value, atol=1e-14)
        np.testing.assert_allclose(alpha, a.value, atol=1e-15)
        assert np.all(fused.value[[1, 3]] == 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    def test_softmax_sums_to_one(self, xs):
        s = nd.softmax(nd.Tensor(xs)).value
        assert abs(s.sum() - 1.0) < 1e-12 and np.all(s >= 0)


class TestBackward:
    def test_square_sum(self):
        _, g = grad_of(lambda x: nd.sum(x * x), x=[1.0, 2.0])
        np.testing.assert_allclose(g["x"], [2.0, 4.0])

    def test_sigmoid_at_zero(self):
        x = np.array([1.0, -2.0, 3.0])
        _, g = grad_of(lambda w, x: nd.sigmoid(nd.sum(w * x)), w=np.zeros(3), x=x)
        np.testing.assert_allclose(g["w"], 0.25 * x)

    def test_loss_must_be_scalar(self):
        with nd.recording() as tape:
            out = nd.scale(nd.Tensor([1.0, 2.0], name="x"), 2.0)
        with pytest.raises(ValueError, match="scalar"):
            nd.backward(tape, out)

    def test_reused_node_accumulates(self):
        _, g = grad_of(lambda x: nd.sum(x * x + x), x=[3.0])
        np.testing.assert_allclose(g["x"], [7.0])

    def test_three_layer_composite(self):
        def build(x, W1, W2, W3, b):
            h = nd.tanh(nd.add_bias(nd.linear(x, W1), b))
            h = nd.sigmoid(nd.matmul(h, nd.transpose(W2)))
            return nd.sum(nd.log_clamped(nd.softmax(nd.linear(h, W3))))
        check_numeric(build, np.random.default_rng(1), tol=1e-4,
                      x=(4, 5), W1=(6, 5), W2=(3, 6), W3=(4, 3), b=(6,))

    def test_structural_ops(self):
        def build(x, y):
            z = nd.concat([x, y], axis=-1)
            z = nd.reshape(nd.transpose(z, (1, 0, 2)), (3, 2 * 5))
            picked = nd.index(z, np.array([[0, 2], [2, 2]]))
            last = nd.take_last(picked, axis=1)
            return nd.sum(nd.mean(last * last, axis=0)) + nd.sum(nd.exp(nd.scale(x, 0.1)))
        check_numeric(build, np.random.default_rng(2), x=(2, 3, 2), y=(2, 3, 3))

    def test_segment_ops(self):
        rows, cols = np.array([0, 0, 1, 1, 1, 3]), np.array([0, 1, 1, 2, 3, 0])

        def build(x, u, w):
            pooled, _ = nd.segment_attention(x, u, rows, cols, 4)
            a = nd.segment_softmax(nd.reshape(nd.linear(nd.index(x, cols), nd.reshape(u, (1, 3))),
                                              (6,)), rows, 4)
            s = nd.segment_sum(nd.scale_rows(nd.index(x, cols), a), rows, 4)
            return nd.sum(nd.tanh(pooled) * s) + nd.sum(nd.scale_rows(x, w))
        check_numeric(build, np.random.default_rng(3), x=(4, 3), u=(3,), w=(4,))

    def test_batched_matmul(self):
        def build(a, b):
            return nd.sum(nd.tanh(nd.matmul(a, b)))
        check_numeric(build, np.random.default_rng(4), a=(2, 3, 4), b=(2, 4, 2))


class TestAdam:
    def test_first_step_moves_by_lr(self):
        store = nd.ParamStore({"w": np.array([1.0, 1.0])})
        nd.adam_step(store, {"w": np.array([0.5, -3.0])}, lr=0.001)
        # m_hat / sqrt(v_hat) = g / |g| on the first step
        expected = 1.0 - 0.001 * np.array([0.5, -3.0]) / (np.abs([0.5, -3.0]) + 1e-8)
        np.testing.assert_allclose(store["w"], expected, rtol=0, atol=1e-15)

    def test_two_steps_by_hand(self):
        store = nd.ParamStore({"w": np.array([0.0])})
        nd.adam_step(store, {"w": np.array([1.0])}, lr=0.1)
        nd.adam_step(store, {"w": np.array([-1.0])}, lr=0.1)
        m = 0.9 * 0.1 + 0.1 * -1.0
        v = 0.999 * 0.001 + 0.001 * 1.0
        step2 = 0.1 * (m / (1 - 0.9**2)) / (math.sqrt(v / (1 - 0.999**2)) + 1e-8)
        assert store["w"][0] == pytest.approx(-0.1 * 1.0 / (1.0 + 1e-8) - step2, abs=1e-15)

    def test_zero_gradient_keeps_param_and_decays_moments(self):
        store = nd.ParamStore({"w": np.array([2.0])})
        nd.adam_step(store, {"w": np.array([1.0])})
        before, m_before = store["w"].copy(), store.m["w"].copy()
        nd.adam_step(store, {"w": np.array([0.0])})
        assert store.m["w"][0] == pytest.approx(0.9 * m_before[0])
        assert abs(store["w"][0] - before[0]) < 1e-3  # momentum only, no new signal
        fresh = nd.ParamStore({"w": np.array([2.0])})
        nd.adam_step(fresh, {"w": np.array([0.0])})
        assert fresh["w"][0] == 2.0

    def test_gradient_shape_checked(self):
        store = nd.ParamStore({"w": np.zeros(2)})
        with pytest.raises(nd.ShapeError):
            nd.adam_step(store, {"w": np.zeros(3)})


class TestInitAndCheckpoint:
    def test_same_seed_identical(self):
        np.testing.assert_array_equal(nd.init((3, 4), 5), nd.init((3, 4), 5))
        assert not np.array_equal(nd.init((3, 4), 5), nd.init((3, 4), 6))

    def test_range_and_mean(self):
        x = nd.init((10_000, 16), 0)
        assert np.abs(x).max() <= 0.25
        assert abs(x.mean()) < 0.01

    def test_roundtrip(self, tmp_path):
        store = nd.ParamStore({"a": nd.init((2, 3), 1), "b": nd.init((4,), 2)})
        store.step = 7
        nd.save_checkpoint(tmp_path / "ck.json", store, {"note": "x"})
        loaded, meta = nd.load_checkpoint(tmp_path / "ck.json")
        assert meta == {"note": "x"} and loaded.step == 7
        for name in store.names():
            np.testing.assert_array_equal(loaded[name], store[name])

    def test_version_required(self, tmp_path):
        (tmp_path / "ck.json").write_text('{"params": {}}')
        with pytest.raises(ValueError, match="version"):
            nd.load_checkpoint(tmp_path / "ck.json")
