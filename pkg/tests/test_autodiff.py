import numpy as np
import pytest

from corridor_twin import autodiff as ad
from helpers import check_gradients, directional_check, rel_error


def test_relu_values():
    out = ad.relu(ad.Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_mse_identity_is_zero():
    assert float(ad.mse_loss(ad.Tensor([1.0, 2.0]), ad.Tensor([1.0, 2.0])).data) == 0.0


def test_mse_gradient_matches_2y_over_n():
    y = ad.Tensor([3.0, 4.0], requires_grad=True)
    with ad.Tape():
        loss = ad.mse_loss(y, ad.Tensor([0.0, 0.0]))
        ad.backward(loss)
    assert np.allclose(y.grad, [3.0, 4.0])  # 2*y/n with n=2
    check_gradients(lambda ts: ad.mse_loss(ts[0], ad.Tensor([0.0, 0.0])),
                    [np.array([3.0, 4.0])])


def test_matmul_identity_and_arithmetic():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(ad.Tensor(np.eye(2)), ad.Tensor(m))
    assert np.array_equal(out.data, m)
    out = ad.matmul(ad.Tensor([[1.0, 2.0]]), ad.Tensor([[3.0], [4.0]]))
    assert out.data.shape == (1, 1) and out.data[0, 0] == 11.0


def test_matmul_rejects_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3))))


def test_matmul_gradient_random():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    probe = rng.standard_normal((3, 2))
    check_gradients(lambda ts: ad.reduce_sum(ad.multiply(
        ad.matmul(ts[0], ts[1]), ad.Tensor(probe))), [a, b])


def test_softmax_basics():
    assert np.allclose(ad.softmax_axis(ad.Tensor([0.0, 0.0]), 0).data, [0.5, 0.5])
    x = ad.softmax_axis(ad.Tensor([5.5, 5.5, 5.5]), 0)
    assert np.allclose(x.data, [1 / 3] * 3)
    big = ad.softmax_axis(ad.Tensor([1000.0, 1000.0]), 0)
    assert np.all(np.isfinite(big.data)) and np.allclose(big.data, [0.5, 0.5])


def test_softmax_shift_invariance_and_unit_sum():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 6))
    a = ad.softmax_axis(ad.Tensor(x), 1).data
    b = ad.softmax_axis(ad.Tensor(x + 13.7), 1).data
    assert np.abs(a.sum(axis=1) - 1.0).max() < 1e-9
    assert np.abs(a - b).max() < 1e-9
    assert (a > 0).all()


def test_backward_square():
    x = ad.Tensor(3.0, requires_grad=True)
    with ad.Tape():
        loss = ad.multiply(x, x)
        ad.backward(loss)
    assert np.allclose(x.grad, 6.0)


def test_backward_relu_sum():
    x = ad.Tensor([-1.0, 2.0], requires_grad=True)
    with ad.Tape():
        loss = ad.reduce_sum(ad.relu(x))
        ad.backward(loss)
    assert np.array_equal(x.grad, [0.0, 1.0])


def test_backward_requires_scalar_and_live_tape():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ad.TapeError):
        ad.backward(ad.relu(x))  # no tape
    with ad.Tape():
        out = ad.relu(x)
        with pytest.raises(ad.TapeError):
            ad.backward(out)  # non-scalar


def test_foreign_tape_rejected():
    x = ad.Tensor([1.0], requires_grad=True)
    with ad.Tape():
        y = ad.relu(x)
    with ad.Tape():
        with pytest.raises(ad.TapeError):
            ad.add(y, y)


def test_gradient_accumulation_on_fanout():
    x = ad.Tensor([2.0], requires_grad=True)
    with ad.Tape():
        ad.backward(ad.reduce_sum(ad.add(ad.multiply(x, x), ad.multiply(x, x))))
    both = x.grad.copy()
    x.grad = None
    with ad.Tape():
        ad.backward(ad.reduce_sum(ad.multiply(x, x)))
    assert np.allclose(both, 2 * x.grad)


def test_composite_chain_gradient_ten_seeds():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 5))
        w = rng.standard_normal((4, 5))
        b = rng.standard_normal(4)
        t = rng.standard_normal((3, 4))

        def loss_fn(ts):
            h = ad.relu(ad.linear(ts[0], ts[1], ts[2]))
            return ad.mse_loss(h, ad.Tensor(t))

        check_gradients(loss_fn, [x, w, b])


@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradients_random_shapes(seed):
    rng = np.random.default_rng(100 + seed)
    shape = tuple(rng.integers(1, 5, size=2))
    a = rng.standard_normal(shape)
    b = rng.standard_normal(shape) + 2.5  # keep divisor away from zero
    probe = rng.standard_normal(shape)

    def weighted(expr):
        return ad.reduce_sum(ad.multiply(expr, ad.Tensor(probe)))

    check_gradients(lambda ts: weighted(ad.add(ts[0], ts[1])), [a, b])
    check_gradients(lambda ts: weighted(ad.subtract(ts[0], ts[1])), [a, b])
    check_gradients(lambda ts: weighted(ad.multiply(ts[0], ts[1])), [a, b])
    check_gradients(lambda ts: weighted(ad.divide(ts[0], ts[1])), [a, b])
    check_gradients(lambda ts: weighted(ad.leaky_relu(ts[0], 0.2)), [a])
    check_gradients(lambda ts: weighted(ad.exp(ad.scale(ts[0], 0.5))), [a])
    check_gradients(lambda ts: weighted(ad.softmax_axis(ts[0], 1)), [a])
    check_gradients(
        lambda ts: ad.reduce_sum(ad.multiply(ad.concat([ts[0], ts[1]], axis=1),
                                             ad.Tensor(np.concatenate([probe, probe], axis=1)))),
        [a, b])
    check_gradients(lambda ts: weighted(ad.reshape(ad.transpose(ts[0], (1, 0)),
                                                   shape)), [a])
    probe3 = rng.standard_normal((3,) + shape)
    check_gradients(lambda ts: ad.reduce_sum(ad.multiply(
        ad.broadcast_to(ad.reshape(ts[0], (1,) + shape), (3,) + shape),
        ad.Tensor(probe3))), [a])
    check_gradients(lambda ts: ad.reduce_sum(ad.reduce_mean(
        ad.multiply(ts[0], ts[0]), axis=0, keepdims=False)), [a])


def test_gather_and_segment_sum_gradients():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 4, 3))
    idx = np.array([0, 2, 2, 3, 1])
    probe = rng.standard_normal((2, 5, 3))
    check_gradients(lambda ts: ad.reduce_sum(ad.multiply(ad.gather(ts[0], idx),
                                                         ad.Tensor(probe))), [x])
    seg = np.array([0, 0, 1, 2, 2])
    y = rng.standard_normal((2, 5, 3))
    probe2 = rng.standard_normal((2, 3, 3))
    check_gradients(lambda ts: ad.reduce_sum(ad.multiply(ad.segment_sum(ts[0], seg, 3),
                                                         ad.Tensor(probe2))), [y])


def test_deterministic_replay_bitwise():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, 4))
    w = rng.standard_normal((4, 4))

    def run():
        xt = ad.Tensor(x.copy(), requires_grad=True)
        wt = ad.Tensor(w.copy(), requires_grad=True)
        with ad.Tape():
            ad.backward(ad.mse_loss(ad.relu(ad.matmul(xt, wt)), ad.Tensor(np.ones((4, 4)))))
        return xt.grad.copy(), wt.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


def test_apply_primitive_dispatch():
    out = ad.apply_primitive("relu", [ad.Tensor([-2.0, 5.0])])
    assert np.array_equal(out.data, [0.0, 5.0])
    with pytest.raises(ValueError):
        ad.apply_primitive("not_an_op", [])
    with pytest.raises(ad.ShapeError):
        ad.apply_primitive("add", [ad.Tensor([1.0]), ad.Tensor([1.0, 2.0])])
    with pytest.raises(ad.ShapeError):
        ad.apply_primitive("reduce_sum", [ad.Tensor([1.0])], axis=3)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        theta = ad.Tensor(np.array(1.0), requires_grad=True)
        opt = ad.Adam([theta], learning_rate=0.1)
        with ad.Tape():
            ad.backward(ad.multiply(theta, theta))
        opt.step()
        # First-step bias correction makes the update approximately lr*sign(g).
        assert abs(float(theta.data) - 0.9) < 1e-6
        assert theta.grad is None and opt.step_count == 1

    def test_zero_gradient_keeps_params(self):
        theta = ad.Tensor(np.array([2.0, 3.0]), requires_grad=True)
        opt = ad.Adam([theta], learning_rate=0.1)
        theta.grad = np.zeros(2)
        opt.step()
        assert np.array_equal(theta.data, [2.0, 3.0]) and opt.step_count == 1

    def test_missing_gradient_raises_with_name(self):
        theta = ad.Tensor(np.array(1.0), requires_grad=True, name="theta")
        opt = ad.Adam([theta])
        with pytest.raises(ad.GradientError, match="theta"):
            opt.step()

    def test_converges_on_quadratic_and_matches_reference(self):
        theta = ad.Tensor(np.array(1.0), requires_grad=True)
        opt = ad.Adam([theta], learning_rate=0.1)
        # Reference scalar recursion run independently.
        ref, m, v = 1.0, 0.0, 0.0
        for t in range(1, 201):
            with ad.Tape():
                diff = ad.subtract(theta, ad.Tensor(np.array(5.0)))
                ad.backward(ad.multiply(diff, diff))
            opt.step()
            g = 2.0 * (ref - 5.0)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(float(theta.data) - 5.0) < 0.1
        assert abs(float(theta.data) - ref) < 1e-9

    def test_functional_entry_point(self):
        theta = ad.Tensor(np.array(1.0), requires_grad=True)
        opt = ad.Adam([theta], learning_rate=0.1)
        theta.grad = np.asarray(1.0)
        ad.adam_step(opt)
        assert opt.step_count == 1
