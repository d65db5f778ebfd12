import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ran import tensor as tn
from ran.errors import ContractError, ShapeError
from ran.tensor import Parameter, Tape, Tensor


def naive_matmul(a, b):
    m, p = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for k in range(p):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def naive_conv1d(x, k, b):
    c_in, m = x.shape
    c_out, _, w = k.shape
    left = (w - 1) // 2
    out = np.zeros((c_out, m))
    for co in range(c_out):
        for t in range(m):
            s = b[co]
            for ci in range(c_in):
                for j in range(w):
                    src = t + j - left
                    if 0 <= src < m:
                        s += k[co, ci, j] * x[ci, src]
            out[co, t] = s
    return out


# -- matmul -----------------------------------------------------------------


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(tn.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)


def test_matmul_scalar_case():
    assert tn.matmul(Tensor([[2.0]]), Tensor([[3.0]])).data.tolist() == [[6.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    np.testing.assert_allclose(tn.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12, rtol=0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# -- softmax ----------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(tn.softmax_rows(Tensor([[1.0, 1.0, 1.0]])).data, [[1 / 3] * 3], atol=1e-15)


def test_softmax_ln2():
    np.testing.assert_allclose(tn.softmax_rows(Tensor([[0.0, math.log(2)]])).data, [[1 / 3, 2 / 3]], atol=1e-15)


def test_softmax_shift_invariance(rng):
    x = rng.standard_normal((4, 6))
    a = tn.softmax_rows(Tensor(x)).data
    b = tn.softmax_rows(Tensor(x + 17.5)).data
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_softmax_large_inputs_stay_finite():
    out = tn.softmax_rows(Tensor([[1000.0, -1000.0, 999.0]])).data
    assert np.all(np.isfinite(out))


# -- layer norm -------------------------------------------------------------


def test_layer_norm_constant_row_maps_to_beta():
    out = tn.layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 0.0]])


def test_layer_norm_standardized_row_is_fixed_point():
    out = tn.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_array_equal(out.data, [[1.0, -1.0]])


def test_layer_norm_moments(rng):
    x = 3 * rng.standard_normal((5, 16)) + 2
    out = tn.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=1e-12).data
    assert np.abs(out.mean(axis=1)).max() < 1e-10
    assert np.abs(out.var(axis=1) - 1).max() < 1e-6


def test_layer_norm_default_eps_shrinks_variance(rng):
    # with eps > 0 the output variance is var / (var + eps), not exactly 1
    x = rng.standard_normal((3, 10))
    out = tn.layer_norm(Tensor(x), Tensor(np.ones(10)), Tensor(np.zeros(10))).data
    v = x.var(axis=1)
    np.testing.assert_allclose(out.var(axis=1), v / (v + 1e-5), rtol=1e-12)


def test_layer_norm_axis0_matches_transposed(rng):
    x = rng.standard_normal((4, 7))
    g, b = rng.standard_normal(4), rng.standard_normal(4)
    a = tn.layer_norm(Tensor(x), Tensor(g), Tensor(b), axis=0).data
    ref = tn.layer_norm(Tensor(x.T), Tensor(g), Tensor(b)).data.T
    np.testing.assert_allclose(a, ref, atol=1e-14)


# -- conv1d -----------------------------------------------------------------


def test_conv1d_delta_kernel_is_identity(rng):
    x = rng.standard_normal((1, 9))
    out = tn.conv1d(Tensor(x), Tensor(np.ones((1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv1d_box_filter_on_ramp():
    out = tn.conv1d(Tensor([[0.0, 1.0, 2.0, 3.0]]), Tensor(np.full((1, 1, 3), 1 / 3)), Tensor(np.zeros(1)))
    np.testing.assert_allclose(out.data, [[1 / 3, 1.0, 2.0, 5 / 3]], atol=1e-15)


@pytest.mark.parametrize("w", [1, 2, 3, 4, 8, 11])
def test_conv1d_matches_nested_loops(rng, w):
    x = rng.standard_normal((3, 7))
    k = rng.standard_normal((2, 3, w))
    b = rng.standard_normal(2)
    np.testing.assert_allclose(tn.conv1d(Tensor(x), Tensor(k), Tensor(b)).data, naive_conv1d(x, k, b), atol=1e-12, rtol=0)


def test_conv1d_channel_mismatch():
    with pytest.raises(ShapeError):
        tn.conv1d(Tensor(np.ones((2, 5))), Tensor(np.ones((1, 3, 3))), Tensor(np.zeros(1)))


# -- small ops --------------------------------------------------------------


def test_relu():
    assert tn.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]


def test_global_avg_pool_constant():
    assert tn.global_avg_pool(Tensor(np.full((2, 5), 3.0))).data.tolist() == [3.0, 3.0]


def test_concat_features():
    assert tn.concat_features(Tensor([1.0]), Tensor([2.0, 3.0])).data.tolist() == [1.0, 2.0, 3.0]


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        tn.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_tensors_are_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


# -- cross entropy ----------------------------------------------------------


def test_cross_entropy_saturated():
    logits = np.zeros(3)
    logits[1] = 50.0
    assert tn.cross_entropy_logits(Tensor(logits), 1).item() < 1e-10


def test_cross_entropy_uniform():
    assert tn.cross_entropy_logits(Tensor(np.zeros(4)), 2).item() == pytest.approx(math.log(4), abs=1e-15)


def test_cross_entropy_two_logits():
    assert tn.cross_entropy_logits(Tensor([1.0, 2.0]), 0).item() == pytest.approx(math.log1p(math.e), abs=1e-14)
    assert math.log1p(math.e) == pytest.approx(1.313262, abs=1e-6)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        tn.cross_entropy_logits(Tensor([0.0, 1.0]), 2)


# -- backward ---------------------------------------------------------------


def test_backward_linear():
    tape = Tape()
    x = tape.leaf(np.array([1.0, -2.0, 3.0]), "x")
    grads = tape.backward(tn.reduce_sum(tn.scale(x, 2.0)))
    np.testing.assert_array_equal(grads["x"], [2.0, 2.0, 2.0])


def test_backward_square():
    tape = Tape()
    x = tape.leaf(np.array([1.0, -3.0]), "x")
    grads = tape.backward(tn.reduce_sum(tn.mul(x, x)))
    np.testing.assert_array_equal(grads["x"], [2.0, -6.0])


def test_loss_gradient_of_itself_is_one():
    tape = Tape()
    x = tape.leaf(np.array([0.3, 0.1]), "x")
    loss = tn.reduce_sum(x)
    tape.backward(loss)
    assert tape.grad(loss) == 1.0


def test_unreachable_parameter_gets_zero():
    params = {"a": Parameter("a", Tensor(np.ones(3))), "b": Parameter("b", Tensor(np.ones((2, 2))))}
    tape = Tape()
    p = tape.watch(params)
    grads = tape.backward(tn.reduce_sum(p["a"]))
    np.testing.assert_array_equal(grads["b"], np.zeros((2, 2)))


def test_non_scalar_loss_rejected():
    tape = Tape()
    x = tape.leaf(np.ones(3), "x")
    with pytest.raises(ContractError):
        tape.backward(tn.relu(x))


def test_inputs_reference_earlier_nodes(rng):
    tape = Tape()
    x = tape.leaf(rng.standard_normal((3, 3)))
    y = tn.softmax_rows(tn.matmul(x, x))
    tn.reduce_sum(tn.relu(y))
    for i, (_, ids, _) in enumerate(tape.nodes):
        assert all(j is None or j < i for j in ids)


def test_fan_out_accumulates():
    # x used twice: d/dx sum(x * x + x) = 2x + 1
    tape = Tape()
    x = tape.leaf(np.array([0.5, -1.5]), "x")
    grads = tape.backward(tn.reduce_sum(tn.add(tn.mul(x, x), x)))
    np.testing.assert_array_equal(grads["x"], [2.0, -2.0])


# -- grad_check -------------------------------------------------------------


def test_grad_check_sum(rng):
    assert tn.grad_check(tn.reduce_sum, rng.standard_normal(7)) < 1e-10


def test_grad_check_softmax_pick(rng):
    f = lambda x: tn.take(tn.reshape(tn.softmax_rows(tn.reshape(x, (1, 5))), (5,)), 2)
    assert tn.grad_check(f, rng.standard_normal(5)) < 1e-6


def test_grad_check_detects_wrong_rule(monkeypatch, rng):
    monkeypatch.setitem(tn.VJP_RULES, "relu", lambda g, needs, mask: (g,))
    x = rng.standard_normal(10)
    x[0] = -1.0
    assert tn.grad_check(lambda t: tn.reduce_sum(tn.relu(t)), x) > 0.1


# -- shape algebra (property) -----------------------------------------------

dims = st.integers(min_value=1, max_value=6)


@settings(max_examples=40, deadline=None)
@given(m=dims, p=dims, n=dims, w=st.integers(1, 7), c=dims)
def test_shape_algebra(m, p, n, w, c):
    a, b = Tensor(np.ones((m, p))), Tensor(np.ones((p, n)))
    assert tn.matmul(a, b).shape == (m, n)
    assert tn.softmax_rows(a).shape == (m, p)
    assert tn.transpose(a).shape == (p, m)
    assert tn.layer_norm(a, Tensor(np.ones(p)), Tensor(np.zeros(p))).shape == (m, p)
    x = Tensor(np.ones((c, m)))
    assert tn.conv1d(x, Tensor(np.ones((n, c, w))), Tensor(np.zeros(n))).shape == (n, m)
    assert tn.global_avg_pool(x).shape == (c,)
    assert tn.concat([a, a], axis=1).shape == (m, 2 * p)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(row):
    out = tn.softmax_rows(Tensor([row])).data
    assert abs(out.sum() - 1) < 1e-12
    assert np.all(np.isfinite(out))
