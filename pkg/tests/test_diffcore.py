import math

import numpy as np
import pytest

from pcae import diffcore as dc
from pcae.diffcore import FeatureMap
from pcae.errors import ShapeError, StaleTapeError

from . import oracles


def leaf(a):
    return FeatureMap(np.array(a, dtype=float), requires_grad=True)


def check_grad(build, arrays, tol=1e-6, h=1e-5):
    """Compare backward() against central differences for every entry of every array."""
    leaves = {k: FeatureMap(v, requires_grad=True) for k, v in arrays.items()}
    grads = dc.backward(build(leaves), leaves)

    def value():
        consts = {k: FeatureMap(v) for k, v in arrays.items()}
        return float(build(consts).data)

    for k, arr in arrays.items():
        for idx in np.ndindex(arr.shape):
            num = oracles.central_difference(value, arr, idx, h)
            ana = grads[k][idx]
            assert abs(ana - num) <= tol * max(1.0, abs(num)), (k, idx, ana, num)


def test_affine_identity_and_zero():
    x = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(dc.affine(x, np.eye(4), np.zeros(4)).data, x)
    b = np.array([1.0, -2.0])
    np.testing.assert_array_equal(dc.affine(x, np.zeros((4, 2)), b).data, np.tile(b, (3, 1)))


def test_affine_matches_triple_loop():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    expect = np.array([[sum(x[i, k] * w[k, j] for k in range(4)) for j in range(2)] for i in range(3)])
    assert oracles.rel_err(dc.affine(x, w).data, expect) < 1e-14


def test_affine_shape_errors():
    with pytest.raises(ShapeError):
        dc.affine(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        dc.affine(np.zeros((2, 4)), np.zeros((4, 2)), np.zeros(3))


def test_softmax_columns_uniform_and_shift():
    s = np.zeros((4, 3))
    np.testing.assert_allclose(dc.softmax_columns(s).data, 0.25, rtol=0, atol=1e-15)
    r = np.random.default_rng(0).normal(size=(5, 3))
    shifted = r.copy()
    shifted[:, 1] += 7.0
    np.testing.assert_allclose(dc.softmax_columns(r).data, dc.softmax_columns(shifted).data, atol=1e-15)


def test_softmax_columns_hand_values():
    s = np.array([[0.0, math.log(3)], [0.0, 0.0]])
    out = dc.softmax_columns(s).data
    np.testing.assert_allclose(out, [[0.5, 0.75], [0.5, 0.25]], rtol=1e-15)
    np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-12)


def test_softmax_columns_large_inputs_stay_finite():
    out = dc.softmax_columns(np.array([[1000.0, -1000.0], [999.0, 0.0]])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-12)


def test_maxpool_rows_examples():
    row = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(dc.maxpool_rows(row).data, row[0])
    x = np.random.default_rng(2).normal(size=(5, 3))
    expect = [max(x[i, j] for i in range(5)) for j in range(3)]
    np.testing.assert_array_equal(dc.maxpool_rows(x).data, expect)
    np.testing.assert_array_equal(dc.maxpool_rows(x[::-1]).data, expect)
    with pytest.raises(ShapeError):
        dc.maxpool_rows(np.zeros((0, 3)))


def test_maxpool_tie_gradient_goes_to_lowest_row():
    x = leaf([[1.0, 0.0], [1.0, 2.0], [0.5, 2.0]])
    dc.backward(dc.maxpool_rows(x).sum())
    np.testing.assert_array_equal(x.grad, [[1, 0], [0, 1], [0, 0]])


def _lstm_params(rng, n_in, hid):
    return {"W_x": rng.normal(size=(n_in, 4 * hid)), "W_h": rng.normal(size=(hid, 4 * hid)),
            "b": rng.normal(size=4 * hid)}


def test_lstm_zero_weights_stay_zero():
    p = {"W_x": np.zeros((3, 8)), "W_h": np.zeros((2, 8)), "b": np.zeros(8)}
    h, c = np.zeros(2), np.zeros(2)
    for _ in range(4):
        h, c = dc.lstm_step((h, c), np.ones(3), p)
        np.testing.assert_array_equal(h.data, 0)
        np.testing.assert_array_equal(c.data, 0)


def test_lstm_scalar_oracle():
    p = {"W_x": np.array([[0.5, -0.3, 0.8, 0.2]]), "W_h": np.array([[0.1, 0.4, -0.6, 0.7]]),
         "b": np.array([0.0, 1.0, 0.1, -0.2])}
    x = np.array([0.9])
    h, c = FeatureMap(np.zeros(1)), FeatureMap(np.zeros(1))
    hs = []
    for _ in range(3):
        h, c = dc.lstm_step((h, c), x, p)
        hs.append(h.data[0])
    expect = [v[0] for v in oracles.lstm(x, p["W_x"], p["W_h"], p["b"], 3)]
    assert oracles.rel_err(hs, expect) < 1e-14


def test_lstm_deterministic_and_shape_checked():
    p = _lstm_params(np.random.default_rng(0), 3, 2)
    run = lambda: dc.lstm_step((np.zeros(2), np.zeros(2)), np.ones(3), p)[0].data
    np.testing.assert_array_equal(run(), run())
    with pytest.raises(ShapeError):
        dc.lstm_step((np.zeros(3), np.zeros(3)), np.ones(3), p)


def test_backward_affine_sum_outer_product():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4))
    w = leaf(rng.normal(size=(4, 2)))
    grads = dc.backward(dc.affine(x, w).sum(), {"w": w})
    np.testing.assert_allclose(grads["w"], np.outer(x.sum(axis=0), np.ones(2)), rtol=1e-14)
    check_grad(lambda p: dc.affine(x, p["w"]).sum(), {"w": rng.normal(size=(4, 2))})


def test_unreachable_parameter_has_zero_gradient():
    a, unused = leaf([1.0, 2.0]), leaf([[3.0]])
    grads = dc.backward((a * a).sum(), {"a": a, "unused": unused})
    np.testing.assert_array_equal(grads["unused"], [[0.0]])
    np.testing.assert_array_equal(grads["a"], [2.0, 4.0])


def test_backward_twice_is_stale():
    a = leaf([1.0, 2.0])
    loss = (a * a).sum()
    dc.backward(loss)
    with pytest.raises(StaleTapeError):
        dc.backward(loss)


def test_backward_through_shared_spent_graph_is_stale():
    a = leaf([1.0, 2.0])
    mid = a * a
    dc.backward(mid.sum())
    with pytest.raises(StaleTapeError):
        dc.backward((mid * 2.0).sum())


PRIMITIVES = {
    "affine": (lambda p: (dc.affine(p["x"], p["w"], p["b"]) * p["c"]).sum(),
               {"x": (3, 4), "w": (4, 2), "b": (2,), "c": (3, 2)}),
    "batched_affine": (lambda p: (dc.affine(p["x"], p["w"]) * p["c"]).sum(),
                       {"x": (2, 3, 4), "w": (4, 2), "c": (2, 3, 2)}),
    "softmax_columns": (lambda p: (dc.softmax_columns(p["s"]) * p["c"]).sum(), {"s": (4, 3), "c": (4, 3)}),
    "maxpool": (lambda p: (dc.maxpool_rows(p["x"]) * p["c"]).sum(), {"x": (5, 3), "c": (3,)}),
    "min": (lambda p: (dc.reduce_min(p["x"], axis=-1) * p["c"]).sum(), {"x": (4, 5), "c": (4,)}),
    "relu": (lambda p: (dc.relu(p["x"]) * p["c"]).sum(), {"x": (4, 3), "c": (4, 3)}),
    "tanh_sigmoid": (lambda p: (dc.tanh(p["x"]) * dc.sigmoid(p["x"] * p["c"])).sum(), {"x": (6,), "c": (6,)}),
    "norm": (lambda p: (dc.norm(p["x"]) * p["c"]).sum(), {"x": (4, 3), "c": (4,)}),
    "concat_reshape": (lambda p: (dc.concat([p["a"], p["b"]], axis=-1).reshape(2, 5) * p["c"]).sum(),
                       {"a": (5, 1), "b": (5, 1), "c": (2, 5)}),
    "batched_matmul": (lambda p: ((p["a"] @ p["b"].T) * p["c"]).sum(),
                       {"a": (2, 3, 4), "b": (2, 5, 4), "c": (2, 3, 5)}),
    "index_mean": (lambda p: (p["x"][..., 1:3] * p["c"]).mean(), {"x": (3, 4), "c": (3, 2)}),
    "lstm": (lambda p: (dc.lstm_step((p["h"], p["cell"]), p["x"],
                                     {"W_x": p["wx"], "W_h": p["wh"], "b": p["b"]})[0] * p["c"]).sum(),
             {"h": (2,), "cell": (2,), "x": (3,), "wx": (3, 8), "wh": (2, 8), "b": (8,), "c": (2,)}),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients_match_finite_differences(name, seed):
    build, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(seed)
    arrays = {k: rng.normal(size=s) for k, s in shapes.items()}
    check_grad(build, arrays, tol=1e-6)


def test_forward_is_bitwise_reproducible():
    rng = np.random.default_rng(0)
    x, w = rng.normal(size=(6, 4)), rng.normal(size=(4, 4))
    run = lambda: dc.softmax_columns(dc.affine(x, w) @ dc.constant(x).T).data
    assert run().tobytes() == run().tobytes()


def test_model_params_reinit_reproducible():
    def make(seed):
        p = dc.ModelParams()
        rng = np.random.default_rng(seed)
        p.add("w", (5, 3), "xavier_uniform", rng, seed)
        p.add("b", (3,), "zeros", rng, seed)
        p.add("lstm", (8,), "lstm_bias", rng, seed, 1.0)
        return p

    a, b = make(4), make(4)
    np.testing.assert_array_equal(a["w"], b["w"])
    assert np.abs(a["w"]).max() <= np.sqrt(6 / 8)
    np.testing.assert_array_equal(a["lstm"], [0, 0, 1, 1, 0, 0, 0, 0])
    assert a.inits["w"].scheme == "xavier_uniform" and a.inits["w"].seed == 4
    with pytest.raises(ValueError):
        a.add("w", (1,), "zeros", np.random.default_rng(0), 0)
