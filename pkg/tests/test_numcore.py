import math

import numpy as np
import pytest

from ucf import numcore as nc
from ucf.errors import ContractError, ShapeError
from ucf.numcore import Node


class TestMatmul:
    def test_identity_and_zero(self):
        M = np.array([[1.5, -2.0], [0.25, 4.0]])
        assert np.array_equal(nc.matmul(np.eye(2), M).value, M)
        assert np.array_equal(nc.matmul(np.zeros((2, 2)), M).value, np.zeros((2, 2)))

    def test_hand_product(self):
        out = nc.matmul([[1, 2], [3, 4]], [[5, 6], [7, 8]])
        assert np.array_equal(out.value, [[19, 22], [43, 50]])

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            nc.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associative(self):
        rng = nc.make_rng(1)
        A, B, C = (rng.normal(size=(3, 3)) for _ in range(3))
        left = nc.matmul(nc.matmul(A, B), C).value
        right = nc.matmul(A, nc.matmul(B, C)).value
        np.testing.assert_allclose(left, right, rtol=1e-9, atol=1e-12)


class TestBackward:
    def test_identity(self):
        x = Node.leaf(3.0, "x")
        assert backward_value(x, "x") == 1.0

    def test_sum_of_squares(self):
        x = Node.leaf([1.0, 2.0], "x")
        grads = nc.backward(nc.sum_all(nc.hadamard(x, x)))
        np.testing.assert_array_equal(grads["x"], [[2.0, 4.0]])

    def test_fan_out_accumulates(self):
        x = Node.leaf(2.0, "x")
        y = nc.add(nc.scale(x, 3.0), nc.hadamard(x, x))
        assert nc.backward(y)["x"][0, 0] == pytest.approx(3.0 + 4.0)

    def test_non_scalar_output(self):
        x = Node.leaf([1.0, 2.0], "x")
        with pytest.raises(ContractError):
            nc.backward(nc.scale(x, 2.0))

    def test_stale_gradients_need_zero_grad(self):
        x = Node.leaf([1.0, 2.0], "x")
        loss = nc.sum_all(nc.hadamard(x, x))
        nc.backward(loss)
        with pytest.raises(ContractError):
            nc.backward(loss)
        nc.zero_grad(loss)
        np.testing.assert_array_equal(nc.backward(loss)["x"], [[2.0, 4.0]])

    def test_three_layer_tanh_net(self):
        rng = nc.make_rng(5)
        X = rng.normal(size=(6, 4))
        params = {
            "w1": rng.normal(size=(4, 5)),
            "w2": rng.normal(size=(5, 5)),
            "w3": rng.normal(size=(5, 1)),
        }

        def loss_fn(p):
            h = nc.tanh(nc.matmul(X, p["w1"]))
            h = nc.tanh(nc.matmul(h, p["w2"]))
            return nc.sum_all(nc.tanh(nc.matmul(h, p["w3"])))

        assert nc.finite_diff_check(loss_fn, params, eps=1e-5) < 1e-4

    @pytest.mark.parametrize("graph_seed", range(100))
    def test_random_small_graphs(self, graph_seed):
        rng = nc.make_rng(graph_seed)
        params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2)), "c": rng.normal(size=(1, 2))}
        unary = [nc.tanh, nc.sigmoid, nc.softmax_rows, nc.l2_normalize_rows, lambda n: nc.scale(n, -0.7)]
        pick = rng.integers(0, len(unary), size=2)

        def loss_fn(p):
            h = unary[pick[0]](nc.matmul(p["a"], p["b"]))
            h = nc.add(h, p["c"])
            h = unary[pick[1]](h)
            h = nc.concat_rows([h, nc.mean_rows(h)])
            return nc.sum_all(nc.hadamard(h, nc.exp(nc.scale(h, 0.3))))

        assert nc.finite_diff_check(loss_fn, params, eps=1e-5) < 1e-4


def backward_value(x: Node, name: str) -> float:
    return float(nc.backward(nc.sum_all(x))[name][0, 0])


class TestSoftmaxRows:
    def test_symmetric_row(self):
        np.testing.assert_allclose(nc.softmax_rows([[0.0, 0.0]]).value, [[0.5, 0.5]])

    def test_no_overflow(self):
        out = nc.softmax_rows([[1000.0, 0.0]]).value
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_closed_form(self):
        out = nc.softmax_rows([[math.log(1.0), math.log(3.0)]]).value
        np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-15)

    def test_rows_sum_to_one_and_shift_invariant(self):
        m = nc.make_rng(2).normal(scale=5.0, size=(7, 5))
        out = nc.softmax_rows(m).value
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        shifted = nc.softmax_rows(m + np.arange(7)[:, None] * 3.0).value
        np.testing.assert_allclose(shifted, out, atol=1e-12)


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(nc.l2_normalize_rows([[3.0, 4.0]]).value, [[0.6, 0.8]])

    def test_unit_row_unchanged(self):
        row = np.array([[0.6, 0.8]])
        np.testing.assert_allclose(nc.l2_normalize_rows(row).value, row, atol=1e-15)

    def test_zero_row(self):
        out = nc.l2_normalize_rows([[0.0, 0.0], [1e-13, 0.0], [2.0, 0.0]]).value
        np.testing.assert_array_equal(out[:2], 0.0)
        np.testing.assert_array_equal(out[2], [1.0, 0.0])

    def test_idempotent(self):
        m = nc.make_rng(3).normal(size=(5, 4))
        once = nc.l2_normalize_rows_array(m)
        np.testing.assert_allclose(nc.l2_normalize_rows_array(once), once, atol=1e-15)


class TestFiniteDiffCheck:
    def test_linear_loss(self):
        w = np.array([[1.0, -2.0, 0.5]])

        def loss_fn(p):
            return nc.sum_all(nc.hadamard(p["x"], w))

        assert nc.finite_diff_check(loss_fn, {"x": np.array([[0.3, 0.1, -0.4]])}) < 1e-10

    def test_quadratic_loss(self):
        def loss_fn(p):
            return nc.sum_all(nc.hadamard(p["x"], p["x"]))

        assert nc.finite_diff_check(loss_fn, {"x": np.array([[0.3, 1.1, -0.4]])}) < 1e-8

    def test_eps_must_be_positive(self):
        with pytest.raises(ContractError):
            nc.finite_diff_check(lambda p: nc.sum_all(p["x"]), {"x": np.ones((1, 1))}, eps=0.0)


class TestRng:
    def test_same_seed_same_stream(self):
        a = nc.make_rng(123).integers(0, 2**62, size=50)
        b = nc.make_rng(123).integers(0, 2**62, size=50)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = nc.make_rng(1).integers(0, 2**62, size=8)
        b = nc.make_rng(2).integers(0, 2**62, size=8)
        assert not np.array_equal(a, b)

    def test_generator_is_pcg64(self):
        assert isinstance(nc.make_rng(0).bit_generator, np.random.PCG64)


def test_as_matrix_rejects_3d():
    with pytest.raises(ShapeError):
        nc.as_matrix(np.zeros((2, 2, 2)))


def test_concat_and_transpose_gradients():
    rng = nc.make_rng(9)
    params = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 2))}

    def loss_fn(p):
        joined = nc.concat_cols([p["a"], p["b"]])
        sq = nc.matmul(joined, nc.transpose(joined))
        return nc.sum_all(nc.log(nc.add(nc.relu(sq), 1.0)))

    assert nc.finite_diff_check(loss_fn, params) < 1e-4
