import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiodiff.gradcore import (
    RULES,
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    check_primitives,
    checked_mode,
    finite_difference_check,
    ops,
)
from audiodiff.gradcore.ops import PRIMITIVES


def grad_of(f, *xs):
    with Tape() as tape:
        out = f(*xs)
    return backward(out, tape)


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True, dtype=np.float64)
    g = grad_of(lambda x: ops.mul(x, x), x)
    assert g[x] == pytest.approx(6.0)


def test_product_rule():
    a = Tensor(2.0, requires_grad=True, dtype=np.float64)
    b = Tensor(5.0, requires_grad=True, dtype=np.float64)
    g = grad_of(lambda a, b: a * b, a, b)
    assert g[a] == pytest.approx(5.0)
    assert g[b] == pytest.approx(2.0)


def test_softmax_ce_gradient_zero_logits():
    logits = Tensor(np.zeros((1, 4)), requires_grad=True)
    g = grad_of(lambda z: ops.softmax_cross_entropy(z, [0]), logits)
    np.testing.assert_allclose(g[logits][0], [-0.75, 0.25, 0.25, 0.25], atol=1e-12)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, 2.0)
    with pytest.raises(ValueError, match="scalar"):
        backward(y, tape)


def test_backward_rejects_node_from_another_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        y = ops.mul(x, 2.0)
    with Tape() as tape:
        loss = ops.sum(y)
    with pytest.raises(ValueError, match="recorded after it or on another tape"):
        backward(loss, tape)


def test_tape_is_reset_after_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    assert len(tape) == 2
    backward(loss, tape)
    assert len(tape) == 0


def test_no_recording_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.mul(x, x)
    assert not y.requires_grad and y.op is None


def test_sub_routes_opposite_signs():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    G = np.random.default_rng(0).standard_normal((2, 3))
    g = grad_of(lambda a, b: ops.sum(ops.mul(ops.sub(a, b), G)), a, b)
    np.testing.assert_array_equal(g[a], G)
    np.testing.assert_array_equal(g[b], -G)


def test_shared_leaf_accumulates():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    g = grad_of(lambda x: ops.sum(ops.add(ops.mul(x, 3.0), ops.mul(x, x))), x)
    np.testing.assert_allclose(g[x], 3.0 + 2 * x.data)


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss = ops.softmax_cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3])
        assert loss.item() == pytest.approx(math.log(4), abs=1e-6)

    def test_saturated(self):
        z = np.zeros((1, 5))
        z[0, 2] = 30.0
        loss = ops.softmax_cross_entropy(Tensor(z, dtype=np.float64), [2])
        assert loss.item() < 1e-9

    def test_pad_masking(self):
        z = np.random.default_rng(0).standard_normal((3, 4))
        full = ops.softmax_cross_entropy(Tensor(z[:2]), [1, 2]).item()
        masked = ops.softmax_cross_entropy(Tensor(z), [1, 2, 0], pad_id=0).item()
        assert masked == pytest.approx(full, rel=1e-6)

    def test_all_pad(self):
        with pytest.raises(ValueError, match="padding"):
            ops.softmax_cross_entropy(Tensor(np.zeros((2, 4))), [0, 0], pad_id=0)

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            ops.softmax_cross_entropy(Tensor(np.zeros((2, 4))), [1, 4])


@given(st.integers(1, 6), st.integers(2, 9), st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_softmax_rows_sum_to_one(rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * 10
    p = ops.softmax(Tensor(x.astype(np.float32))).data
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)


class TestAdam:
    def test_first_step(self):
        # hand recursion: m_hat = 0.5, v_hat = 0.25, step = lr * 0.5 / (0.5 + eps)
        p = {"w": Tensor(np.array([1.0]), requires_grad=True)}
        st_ = AdamState(lr=0.1)
        adam_step(p, {"w": np.array([0.5])}, st_)
        assert p["w"].data[0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-12)
        assert p["w"].data[0] == pytest.approx(0.9, abs=1e-7)
        assert st_.t == 1

    def test_zero_gradient_first_step(self):
        p = {"w": Tensor(np.array([1.0, -3.0]), requires_grad=True)}
        adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
        np.testing.assert_array_equal(p["w"].data, [1.0, -3.0])

    def test_two_steps_match_hand_recursion(self):
        lr, b1, b2, eps, g = 0.1, 0.9, 0.999, 1e-8, 0.5
        theta, m, v = 1.0, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        p = {"w": Tensor(np.array([1.0]), requires_grad=True)}
        state = AdamState(lr=lr)
        for _ in range(2):
            adam_step(p, {"w": np.array([g])}, state)
        assert p["w"].data[0] == pytest.approx(theta, abs=1e-12)
        assert state.t == 2

    def test_lr_zero_is_bit_identical(self, rng):
        w = rng.standard_normal((4, 3)).astype(np.float32)
        p = {"w": Tensor(w.copy(), requires_grad=True)}
        state = AdamState(lr=0.0)
        for _ in range(3):
            adam_step(p, {"w": rng.standard_normal((4, 3)).astype(np.float32)}, state)
        assert p["w"].data.tobytes() == w.tobytes()

    def test_shape_mismatch(self):
        p = {"w": Tensor(np.ones(3), requires_grad=True)}
        with pytest.raises(ValueError, match="shape mismatch"):
            adam_step(p, {"w": np.ones(4)}, AdamState())


class TestFiniteDifference:
    def test_linear_is_exact(self, rng):
        w = Tensor(rng.standard_normal(5), requires_grad=True)
        c = rng.standard_normal(5)
        err = finite_difference_check(lambda p: ops.sum(ops.mul(p[0], c)), [w])
        assert err < 1e-10

    def test_two_layer_net(self, rng):
        x = rng.standard_normal((6, 4))
        w1 = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        w2 = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        y = rng.integers(0, 3, size=6)

        def f(p):
            return ops.softmax_cross_entropy(ops.matmul(ops.tanh(ops.matmul(Tensor(x), p[0])), p[1]), y)

        assert finite_difference_check(f, [w1, w2], eps=1e-5) < 1e-4

    def test_detects_corrupted_rule(self, rng, monkeypatch):
        original = RULES["tanh"]
        monkeypatch.setitem(RULES, "tanh", lambda g, out, x: tuple(2 * a for a in original(g, out, x)))
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        err = finite_difference_check(lambda p: ops.sum(ops.tanh(p[0])), [x])
        assert err == pytest.approx(0.5, abs=1e-4)

    def test_non_finite_f(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(FloatingPointError):
            finite_difference_check(lambda p: ops.mul(p[0], np.inf), [x])


def test_every_primitive_passes_on_ten_seeds():
    results = check_primitives()
    assert [r.op for r in results] == list(PRIMITIVES)
    bad = [(r.op, r.max_error) for r in results if not r.passed]
    assert not bad


def test_checked_mode_flags_nan():
    x = Tensor(np.array([-1.0]))
    with checked_mode():
        with pytest.raises(FloatingPointError):
            ops.mul(x, np.nan)
    ops.mul(x, np.nan)  # unchecked by default


def test_gather_negative_index_gives_zero_slice():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    with Tape() as tape:
        y = ops.gather(x, [2, -1, 0], axis=0)
        loss = ops.sum(y)
    np.testing.assert_array_equal(y.data, [[4, 5], [0, 0], [0, 1]])
    g = backward(loss, tape)[x]
    np.testing.assert_array_equal(g, [[1, 1], [0, 0], [1, 1]])
