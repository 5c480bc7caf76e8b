import numpy as np

from stancerl.autodiff import Tensor, Trace, backward, parameter
from stancerl.lstm import LstmDirection, lstm_bidirectional


def zero_direction(d, h):
    return LstmDirection(wx=parameter(np.zeros((d, 4 * h))),
                         wh=parameter(np.zeros((h, 4 * h))),
                         b=parameter(np.zeros(4 * h)))


def random_direction(d, h, rng):
    return LstmDirection(wx=parameter(rng.normal(scale=0.4, size=(d, 4 * h))),
                         wh=parameter(rng.normal(scale=0.4, size=(h, 4 * h))),
                         b=parameter(rng.normal(scale=0.2, size=4 * h)))


def test_all_zero_parameters_give_zero_outputs():
    seq = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    out = lstm_bidirectional(seq, zero_direction(3, 2), zero_direction(3, 2))
    np.testing.assert_array_equal(out.data, np.zeros((4, 4)))


def test_single_step_sequence():
    rng = np.random.default_rng(1)
    fwd, bwd = random_direction(3, 2, rng), random_direction(3, 2, rng)
    seq = Tensor(rng.normal(size=(1, 3)))
    out = lstm_bidirectional(seq, fwd, bwd)
    assert out.shape == (1, 4)
    # both directions see the same single step from a zero initial state
    half_f = lstm_bidirectional(seq, fwd, fwd).data[0, :2]
    np.testing.assert_allclose(out.data[0, :2], half_f)


def test_forget_bias_initialized_open():
    rng = np.random.default_rng(2)
    direction = LstmDirection.init(4, 3, rng)
    np.testing.assert_array_equal(direction.b.data[3:6], np.ones(3))
    assert (direction.b.data[:3] == 0).all() and (direction.b.data[6:] == 0).all()


def test_order_matters():
    rng = np.random.default_rng(3)
    fwd, bwd = random_direction(3, 2, rng), random_direction(3, 2, rng)
    seq = rng.normal(size=(3, 3))
    out1 = lstm_bidirectional(Tensor(seq), fwd, bwd).data
    out2 = lstm_bidirectional(Tensor(seq[::-1].copy()), fwd, bwd).data
    assert not np.allclose(out1, out2)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    d, h, n = 3, 2, 4
    fwd, bwd = random_direction(d, h, rng), random_direction(d, h, rng)
    seq0 = rng.normal(size=(n, d))
    weight = rng.normal(size=(n, 2 * h))
    seq = parameter(seq0.copy())

    def forward_value(params_override=None):
        out = lstm_bidirectional(seq, fwd, bwd)
        return float((out.data * weight).sum())

    with Trace() as tr:
        out = lstm_bidirectional(seq, fwd, bwd)
        from stancerl import autodiff as ad
        loss = ad.sum_all(ad.mul(out, Tensor(weight)))
    backward(loss, tr)

    tensors = {"seq": seq, "wx_f": fwd.wx, "wh_f": fwd.wh, "b_f": fwd.b,
               "wx_b": bwd.wx, "wh_b": bwd.wh, "b_b": bwd.b}
    eps = 1e-5
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = forward_value()
            flat[i] = orig - eps
            fm = forward_value()
            flat[i] = orig
            fd = (fp - fm) / (2 * eps)
            rel = abs(grad[i] - fd) / max(1.0, abs(grad[i]), abs(fd))
            assert rel < 1e-4, f"{name}[{i}]: ad={grad[i]} fd={fd}"
