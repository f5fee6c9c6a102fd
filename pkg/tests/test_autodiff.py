import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from learncodes import autodiff as ad
from learncodes.autodiff import GruLayerParams, Tape, Tensor
from learncodes.errors import ConfigurationError, InputError, UsageError
from learncodes.selfcheck import GRAD_TOLERANCE, gradient_suite, stack_case


def _params(rng, in_w, units, scale=1.0, dtype=np.float64):
    p = ad.init_gru(rng, in_w, units, dtype)
    return GruLayerParams(Tensor(p["W"] * scale), Tensor(p["U"] * scale),
                          Tensor(rng.standard_normal(3 * units) * 0.1 * scale))


def _zero_params(in_w, units):
    return GruLayerParams(Tensor(np.zeros((in_w, 3 * units))), Tensor(np.zeros((units, 3 * units))),
                          Tensor(np.zeros(3 * units)))


# ---------------------------------------------------------------- primitives


def test_primitive_examples():
    assert float(ad.sigmoid(Tensor(np.array(0.0))).data) == 0.5
    assert float(ad.tanh(Tensor(np.array(0.0))).data) == 0.0
    A = np.random.default_rng(1).standard_normal((3, 3))
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(A)).data, A)


def test_shape_mismatch_names_op():
    with pytest.raises(ConfigurationError, match="add"):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
    with pytest.raises(ConfigurationError, match="matmul"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_bce_examples():
    assert math.isclose(float(ad.bce_loss(Tensor(np.array([0.5])), [1]).data), math.log(2),
                        rel_tol=1e-12)
    v = float(ad.bce_loss(Tensor(np.array([0.5, 0.5])), [0, 1]).data)
    assert math.isclose(v, 0.693147, abs_tol=1e-6)
    eps = ad.BCE_CLIP
    v = float(ad.bce_loss(Tensor(np.array([eps, 1 - eps])), [0, 1]).data)
    assert 0 <= v <= -math.log(1 - eps) + 1e-15


def test_bce_rejects_bad_targets():
    with pytest.raises(InputError):
        ad.bce_loss(Tensor(np.array([0.5])), [2])
    with pytest.raises(InputError):
        ad.bce_loss(Tensor(np.array([0.5, 0.5])), [1])


def test_mse_examples():
    assert float(ad.mse_loss(Tensor(np.array([1.0, 2.0])), [1.0, 2.0]).data) == 0.0
    assert float(ad.mse_loss(Tensor(np.array([1.0, 0.0])), [0.0, 0.0]).data) == 0.5
    assert float(ad.mse_loss(Tensor(np.array([2.0])), [0.0]).data) == 4.0
    with pytest.raises(InputError):
        ad.mse_loss(Tensor(np.zeros(2)), np.zeros(3))


# ---------------------------------------------------------------- backward


def test_backward_mean_dot():
    x = np.array([1.0, -2.0, 3.0, 0.5])
    w = Tensor(np.array([0.3, 0.1, -0.7, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.mean(w * Tensor(x))
    g = ad.backward(tape, loss)[w]
    np.testing.assert_allclose(g, x / x.size, rtol=0, atol=1e-15)


def test_backward_requires_loss_on_tape():
    w = Tensor(np.ones(2), requires_grad=True)
    with Tape():
        loss = ad.tsum(w)
    with pytest.raises(UsageError):
        ad.backward(Tape(), loss)
    with Tape() as tape:
        vec = w * 2.0
    with pytest.raises(UsageError):
        ad.backward(tape, vec)


def test_tape_topological_order_and_single_visit():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    with Tape() as tape:
        b = ad.tanh(a @ a)
        ad.tsum(b * a + b)
    produced = set()
    for rec in tape.records:
        for t in rec.inputs:
            assert t.is_leaf or id(t) in produced
        produced.add(id(rec.output))
    assert len(produced) == len(tape.records)


def test_every_primitive_matches_finite_differences():
    results = gradient_suite(seed=3)
    bad = [(r.name, r.value) for r in results if not r.passed]
    assert not bad
    assert all(r.value <= GRAD_TOLERANCE for r in results)


def test_stack_has_under_thousand_params():
    _, arrays = stack_case(np.random.default_rng(0))
    assert sum(a.size for a in arrays) <= 1000


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (3, 2), elements=st.floats(-3, 3)),
       hnp.arrays(np.float64, (2,), elements=st.floats(-3, 3)))
def test_broadcast_add_mul_gradients(a, b):
    fn = lambda x, y: ad.tsum(ad.tanh(x * y + y))  # noqa: E731
    assert ad.check_gradients(fn, [a, b]) <= GRAD_TOLERANCE


# ---------------------------------------------------------------- GRU


def test_zero_params_give_zero_outputs():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
    out, h = ad.gru_forward(_zero_params(3, 5), x)
    assert out.shape == (4, 5) and not np.any(out.data)
    bi = ad.bigru_forward(_zero_params(3, 5), _zero_params(3, 5), Tensor(x.data[None]))
    assert bi.shape == (1, 4, 10) and not np.any(bi.data)


def test_single_step_is_one_cell():
    rng = np.random.default_rng(1)
    p = _params(rng, 2, 4)
    x = rng.standard_normal((3, 1, 2))
    h0 = Tensor(rng.standard_normal((3, 4)))
    out, hT = ad.gru_forward(p, Tensor(x), h0=h0)
    cell = ad.gru_cell(p, Tensor(x[:, 0]), h0)
    np.testing.assert_array_equal(out.data[:, 0], cell.data)
    np.testing.assert_array_equal(hT.data, cell.data)


def test_fused_equals_composite():
    rng = np.random.default_rng(2)
    p = _params(rng, 3, 4)
    x = Tensor(rng.standard_normal((2, 6, 3)))
    for rev in (False, True):
        a, _ = ad.gru_forward(p, x, reverse=rev)
        b, _ = ad.gru_forward(p, x, reverse=rev, fused=False)
        np.testing.assert_allclose(a.data, b.data, rtol=0, atol=1e-14)


def test_width_mismatch():
    p = _params(np.random.default_rng(0), 3, 4)
    with pytest.raises(ConfigurationError):
        ad.gru_forward(p, Tensor(np.zeros((2, 5, 2))))
    with pytest.raises(ConfigurationError):
        ad.bigru_forward(p, _params(np.random.default_rng(0), 3, 5), Tensor(np.zeros((1, 2, 3))))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 7), st.floats(-2, 2).filter(lambda v: abs(v) > 1e-3))
def test_gru_causality(t, delta):
    rng = np.random.default_rng(5)
    p = _params(rng, 2, 3)
    x = rng.standard_normal((2, 8, 2))
    y = x.copy()
    y[:, t, :] += delta
    a, _ = ad.gru_forward(p, Tensor(x))
    b, _ = ad.gru_forward(p, Tensor(y))
    np.testing.assert_array_equal(a.data[:, :t], b.data[:, :t])


def test_bigru_palindrome_symmetry():
    rng = np.random.default_rng(3)
    p = _params(rng, 2, 3)
    half = rng.standard_normal((1, 3, 2))
    x = np.concatenate([half, half[:, ::-1]], axis=1)
    out = ad.bigru_forward(p, p, Tensor(x)).data[0]
    H = 3
    swapped = np.concatenate([out[::-1, H:], out[::-1, :H]], axis=1)
    np.testing.assert_allclose(out, swapped, rtol=0, atol=1e-14)


def test_bigru_single_step_is_two_cells():
    rng = np.random.default_rng(4)
    f, b = _params(rng, 2, 3), _params(rng, 2, 3)
    x = rng.standard_normal((2, 1, 2))
    out = ad.bigru_forward(f, b, Tensor(x)).data
    zero = Tensor(np.zeros((2, 3)))
    expect = np.concatenate([ad.gru_cell(f, Tensor(x[:, 0]), zero).data,
                             ad.gru_cell(b, Tensor(x[:, 0]), zero).data], axis=1)
    np.testing.assert_array_equal(out[:, 0], expect)


def test_bigru_coverage():
    rng = np.random.default_rng(6)
    T_, hits, trials = 6, 0, 200
    for _ in range(trials):
        f, b = _params(rng, 1, 3), _params(rng, 1, 3)
        x = rng.standard_normal((1, T_, 1))
        t, t2 = rng.choice(T_, size=2, replace=False)
        y = x.copy()
        y[0, t2, 0] += rng.standard_normal()
        d = ad.bigru_forward(f, b, Tensor(y)).data - ad.bigru_forward(f, b, Tensor(x)).data
        hits += bool(np.any(d[0, t] != 0))
    assert hits >= 0.99 * trials


def test_forward_backward_deterministic():
    runs = []
    for _ in range(2):
        fn, arrays = stack_case(np.random.default_rng(11))
        runs.append(ad.gradcheck.analytic_grad(fn, arrays))
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)


def test_init_statistics():
    rng = np.random.default_rng(0)
    p = ad.init_gru(rng, 4, 6, np.float64)
    limit = math.sqrt(6 / (4 + 6))
    assert np.all(np.abs(p["W"]) <= limit)
    for k in range(3):
        U = p["U"][:, 6 * k:6 * (k + 1)]
        np.testing.assert_allclose(U.T @ U, np.eye(6), atol=1e-12)
    assert not np.any(p["b"])


# ---------------------------------------------------------------- Adam


def test_adam_first_step():
    p = {"w": np.array([0.0])}
    ad.adam_step(p, {"w": np.array([1.0])}, ad.AdamState(lr=0.001))
    assert math.isclose(p["w"][0], -0.001 / (1 + 1e-8), rel_tol=1e-12)


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.5, -2.0])}
    state = ad.AdamState()
    for _ in range(5):
        ad.adam_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p["w"], [1.5, -2.0])
    assert state.t == 5


def test_adam_two_steps_closed_form():
    g, lr, b1, b2, eps = 0.3, 0.01, 0.9, 0.999, 1e-8
    p = {"w": np.array([1.0])}
    state = ad.AdamState(lr=lr)
    ad.adam_step(p, {"w": np.array([g])}, state)
    ad.adam_step(p, {"w": np.array([g])}, state)
    w = 1.0
    m = v = 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    assert math.isclose(p["w"][0], w, rel_tol=1e-14)
    assert state.m["w"].shape == p["w"].shape


def test_adam_missing_gradient():
    with pytest.raises(UsageError):
        ad.adam_step({"w": np.zeros(1)}, {}, ad.AdamState())
