"""Tape engine tests: op contracts, finite-difference oracles, invariants."""

import math

import numpy as np
import pytest

from evrel import autodiff as ad
from evrel.autodiff import Tape, Tensor, backward, gradcheck


def fd_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f with respect to array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        out[i] = (hi - lo) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    out = ad.matmul(a, Tensor(np.eye(3)))
    assert np.array_equal(out.data, a.data)


def test_matmul_hand_value():
    out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_grad_vs_ones_bt():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)))
    with Tape() as tape:
        loss = ad.sum_all(ad.matmul(a, b))
    backward(loss, tape)
    expected = np.ones((3, 2)) @ b.data.T
    assert np.allclose(a.grad, expected, atol=1e-12)
    fd = fd_grad(lambda: float(ad.sum_all(ad.matmul(a, b)).data), a.data)
    assert np.allclose(a.grad, fd, atol=1e-6)


# ---------------------------------------------------------------------------
# softmax_rows
# ---------------------------------------------------------------------------

def test_softmax_symmetric_row():
    out = ad.softmax_rows(Tensor([[0.0, 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)


def test_softmax_hand_value():
    out = ad.softmax_rows(Tensor([[math.log(2.0), 0.0]]))
    assert np.allclose(out.data, [[2 / 3, 1 / 3]], atol=1e-12)


def test_softmax_single_unmasked_entry():
    mask = np.array([[False, True, False]])
    out = ad.softmax_rows(Tensor([[5.0, -1.0, 2.0]]), mask=mask)
    assert np.allclose(out.data, [[0.0, 1.0, 0.0]])


def test_softmax_fully_masked_row_raises():
    with pytest.raises(ValueError):
        ad.softmax_rows(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


def test_softmax_rows_sum_to_one_randomized():
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = Tensor(rng.normal(scale=5, size=(4, 6)))
        mask = rng.random((4, 6)) < 0.7
        mask[:, 0] = True
        p = ad.softmax_rows(x, mask=mask)
        assert np.allclose(p.data.sum(axis=1), 1.0, atol=1e-9)
        assert (p.data[~mask] == 0).all()


def test_softmax_grad_fd():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    w = rng.normal(size=(3, 5))

    def loss_fn():
        return float((ad.softmax_rows(x).data * w).sum())

    with Tape() as tape:
        loss = ad.sum_all(ad.mul(ad.softmax_rows(x), Tensor(w)))
    backward(loss, tape)
    assert np.allclose(x.grad, fd_grad(loss_fn, x.data), atol=1e-7)


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    x = Tensor(np.full((2, 4), 3.7))
    out = ad.layer_norm_rows(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.allclose(out.data, 0.0)


def test_layer_norm_hand_value():
    out = ad.layer_norm_rows(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)),
                             Tensor(np.zeros(2)), eps=1e-12)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-6)


def test_layer_norm_output_mean_equals_bias_mean():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(5, 8)))
    bias = Tensor(rng.normal(size=8))
    out = ad.layer_norm_rows(x, Tensor(np.ones(8)), bias)
    assert np.allclose(out.data.mean(axis=1), bias.data.mean(), atol=1e-9)


def test_layer_norm_grad_fd():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    gain = Tensor(rng.normal(size=6), requires_grad=True)
    bias = Tensor(rng.normal(size=6), requires_grad=True)
    w = rng.normal(size=(3, 6))

    def run():
        return ad.sum_all(ad.mul(ad.layer_norm_rows(x, gain, bias), Tensor(w)))

    with Tape() as tape:
        loss = run()
    backward(loss, tape)
    for t in (x, gain, bias):
        fd = fd_grad(lambda: float(run().data), t.data)
        assert np.allclose(t.grad, fd, atol=1e-6)


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def test_dropout_rate_zero_is_identity():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    assert ad.dropout_mask(x, 0.0, key=(1,), training=True) is x


def test_dropout_eval_mode_is_identity():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    assert ad.dropout_mask(x, 0.9, key=(1,), training=False) is x


def test_dropout_same_key_same_mask():
    x = Tensor(np.ones((4, 4)))
    a = ad.dropout_mask(x, 0.5, key=(7, 3), training=True)
    b = ad.dropout_mask(x, 0.5, key=(7, 3), training=True)
    assert (a.data == b.data).all()


def test_dropout_expectation_monte_carlo():
    # mean over many keys approximates the input at rate 0.2
    x = Tensor(np.full((1, 4), 2.0))
    n = 100_000
    acc = np.zeros((1, 4))
    for key in range(n):
        acc += ad.dropout_mask(x, 0.2, key=(key,), training=True).data
    assert np.allclose(acc / n, x.data, rtol=0.02)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(x)
    backward(loss, tape)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_quadratic():
    x = Tensor(np.arange(1.0, 5.0), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(x, x))
    backward(loss, tape)
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_is_linear_in_loss():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(4,)), requires_grad=True)

    def run(alpha, beta):
        x.zero_grad()
        with Tape() as tape:
            l1 = ad.sum_all(ad.mul(x, x))
            l2 = ad.sum_all(ad.tanh(x))
            loss = ad.add(ad.scalar_mul(l1, alpha), ad.scalar_mul(l2, beta))
        backward(loss, tape)
        return x.grad.copy()

    g1 = run(1.0, 0.0)
    g2 = run(0.0, 1.0)
    g = run(0.7, -1.3)
    assert np.allclose(g, 0.7 * g1 - 1.3 * g2, atol=1e-12)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
    with pytest.raises(ValueError):
        backward(y, tape)


def test_backward_rejects_detached():
    x = Tensor(np.ones(3), requires_grad=False)
    with Tape() as tape:
        loss = ad.sum_all(x)
    with pytest.raises(RuntimeError):
        backward(loss, tape)


def test_grad_accumulates_across_tapes():
    x = Tensor(np.ones(3), requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = ad.sum_all(x)
        backward(loss, tape)
    assert np.allclose(x.grad, 2.0)


# ---------------------------------------------------------------------------
# structural / elementwise ops against finite differences
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("build", [
    lambda x: ad.sum_all(ad.log(ad.clip_min(x, 1e-12))),
    lambda x: ad.sum_all(ad.absval(x)),
    lambda x: ad.sum_all(ad.relu(x)),
    lambda x: ad.sum_all(ad.tanh(x)),
    lambda x: ad.sum_all(ad.rowsum(x)),
    lambda x: ad.sum_all(ad.mul(ad.mean_rows(x), ad.mean_rows(x))),
    lambda x: ad.sum_all(ad.mul(ad.concat([x, x], axis=1), Tensor(np.arange(24.0).reshape(3, 8)))),
    lambda x: ad.sum_all(ad.gather_rows(x, np.array([0, 2, 2, 1]))),
    lambda x: ad.sum_all(ad.gather2d(x, np.array([0, 2, 2]), np.array([1, 3, 3]))),
    lambda x: ad.sum_all(ad.scale_rows(x, Tensor(np.array([1.0, -2.0, 0.5])))),
    lambda x: ad.sum_all(ad.segment_sum(x, np.array([0, 0, 1]), 3)),
])
def test_op_grads_match_fd(build):
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(3, 4)) + 2.0, requires_grad=True)
    with Tape() as tape:
        loss = build(x)
    backward(loss, tape)
    fd = fd_grad(lambda: float(build(x).data), x.data)
    assert np.allclose(x.grad, fd, atol=1e-6)


def test_segment_softmax_grad_fd():
    rng = np.random.default_rng(7)
    seg_ptr = np.array([0, 0, 3, 7, 7, 10], dtype=np.int64)
    s = Tensor(rng.normal(size=10), requires_grad=True)
    w = rng.normal(size=10)

    def run():
        return ad.sum_all(ad.mul(ad.segment_softmax(s, seg_ptr), Tensor(w)))

    with Tape() as tape:
        loss = run()
    backward(loss, tape)
    assert np.allclose(s.grad, fd_grad(lambda: float(run().data), s.data), atol=1e-7)


def test_affine_and_take1d_grads():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    v = Tensor(rng.normal(size=5), requires_grad=True)
    idx = np.array([0, 4, 4, 2])

    def run():
        core = ad.sum_all(ad.affine(x, w, b))
        return ad.add(core, ad.sum_all(ad.take1d(v, idx)))

    with Tape() as tape:
        loss = run()
    backward(loss, tape)
    for t in (x, w, b, v):
        fd = fd_grad(lambda: float(run().data), t.data)
        assert np.allclose(t.grad, fd, atol=1e-6)


# ---------------------------------------------------------------------------
# gradcheck utility
# ---------------------------------------------------------------------------

def test_gradcheck_quadratic_is_tight():
    theta = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    report = gradcheck(lambda p: ad.sum_all(ad.mul(p["theta"], p["theta"])),
                       {"theta": theta}, h=1e-5, tol=1e-8)
    assert report.passed
    assert report.max_rel_error < 1e-8


def test_gradcheck_softmax_ce_composite():
    rng = np.random.default_rng(9)
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 4)))
    rows = np.arange(5)
    cols = np.array([0, 2, 1, 2, 0])

    def f(p):
        probs = ad.softmax_rows(ad.matmul(x, p["w"]))
        picked = ad.gather2d(ad.log(ad.clip_min(probs, 1e-12)), rows, cols)
        return ad.scalar_mul(ad.sum_all(picked), -1.0 / 5)

    report = gradcheck(f, {"w": w}, h=1e-5, tol=1e-4)
    assert report.passed


def test_gradcheck_detects_corrupted_gradient():
    theta = Tensor(np.array([1.0, 2.0]), requires_grad=True)

    def f(p):
        # a mul whose backward is deliberately off by 1%
        t = p["theta"]
        out = ad._make(t.data * t.data, (t,), lambda g: (1.01 * 2 * t.data * g,))
        return ad.sum_all(out)

    report = gradcheck(f, {"theta": theta}, h=1e-5, tol=1e-4)
    assert not report.passed
