import numpy as np
import pytest

from qsac.errors import StructuralError
from qsac.nn import Adam, DenseNet, adam_step, backward, forward, mlp, mlp_param_count

import oracles


def test_zero_net_gives_zero_output():
    net = DenseNet((3, 4, 2), params=np.zeros(3 * 4 + 4 + 4 * 2 + 2))
    np.testing.assert_array_equal(net(np.array([1.0, -2.0, 3.0])), [0.0, 0.0])


def test_identity_single_layer():
    n = 4
    net = DenseNet((n, n), params=np.concatenate([np.eye(n).ravel(), np.zeros(n)]))
    x = np.array([0.5, -1.5, 2.0, 7.0])
    np.testing.assert_array_equal(net(x), x)


def test_random_2x3x1_matches_hand_arithmetic():
    rng = np.random.default_rng(0)
    net = DenseNet((2, 3, 1), rng=rng)
    W1, b1, W2, b2 = (net.params[0:6].reshape(3, 2), net.params[6:9],
                      net.params[9:12].reshape(1, 3), net.params[12:13])
    for _ in range(10):
        x = rng.normal(size=2)
        hidden = [max(0.0, sum(W1[i, k] * x[k] for k in range(2)) + b1[i]) for i in range(3)]
        out = sum(W2[0, i] * hidden[i] for i in range(3)) + b2[0]
        assert net(x)[0] == pytest.approx(out, abs=1e-12)


def test_forward_shape_mismatch():
    with pytest.raises(StructuralError):
        mlp(3, 1)(np.zeros(4))


def test_zero_upstream_zero_grads():
    net = mlp(3, 2, rng=np.random.default_rng(1))
    y, cache = forward(net, np.ones((5, 3)))
    grads, gin = backward(net, cache, np.zeros_like(y))
    assert not grads.any() and not gin.any()


def test_linear_layer_input_grad_is_wt_upstream():
    net = DenseNet((3, 2), rng=np.random.default_rng(2))
    W, _ = net.layer(0)
    _, cache = net.forward(np.array([0.3, 0.1, -0.2]))
    up = np.array([1.5, -0.5])
    _, gin = net.backward(cache, up)
    np.testing.assert_allclose(gin, W.T @ up, rtol=0, atol=1e-15)


def test_stale_cache_rejected():
    net = mlp(2, 1, rng=np.random.default_rng(3))
    y, cache = net.forward(np.ones(2))
    net.params = net.params + 0.1
    with pytest.raises(StructuralError):
        net.backward(cache, np.ones_like(y))
    other = mlp(2, 1, rng=np.random.default_rng(3))
    with pytest.raises(StructuralError):
        other.backward(cache, np.ones_like(y))


@pytest.mark.parametrize("sizes", [(3, 5, 2), (4, 64, 64, 1), (3, 64, 64, 2), (5, 7, 6, 3)])
def test_backward_matches_finite_differences(sizes):
    rng = np.random.default_rng(sum(sizes))
    for _ in range(50 if sizes[1] < 64 else 5):
        net = DenseNet(sizes, rng=rng)
        x = rng.normal(size=(3, sizes[0]))
        up = rng.normal(size=(3, sizes[-1]))
        _, cache = net.forward(x)
        grads, gin = net.backward(cache, up)

        def loss_p(p):
            return float(np.sum(DenseNet(sizes, params=p)(x) * up))

        def loss_x(xf):
            return float(np.sum(net(xf.reshape(x.shape)) * up))

        fd_p = oracles.central_difference(loss_p, net.params, 1e-6)[0]
        fd_x = oracles.central_difference(loss_x, x.ravel(), 1e-6)[0]
        np.testing.assert_allclose(grads, fd_p, rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(gin.ravel(), fd_x, rtol=1e-6, atol=1e-7)


def test_param_count_formula():
    assert mlp(17, 12).n_params == mlp_param_count(17, 12) == 17 * 64 + 64 + 64 * 64 + 64 + 64 * 12 + 12


# ---------------------------------------------------------------- Adam

def test_adam_zero_grads_no_change():
    p = np.array([1.0, -2.0, 3.0])
    new, _ = adam_step(p, np.zeros(3), Adam(3, lr=0.1))
    np.testing.assert_array_equal(new, p)


def test_adam_first_step_is_lr_sign():
    p = np.zeros(3)
    g = np.array([0.3, -4.0, 1e-3])
    new = Adam(3, lr=0.01).step(p, g)
    np.testing.assert_allclose(new, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_converges_on_quadratic():
    x = np.array([1.0])
    opt = Adam(1, lr=0.01)
    for _ in range(1000):
        x = opt.step(x, 2 * x)
    assert abs(x[0]) < 0.05


def test_adam_deterministic_and_round_trip():
    def run(opt):
        rng = np.random.default_rng(5)
        p = np.zeros(4)
        for _ in range(20):
            p = opt.step(p, rng.normal(size=4))
        return p
    a, b = Adam(4), Adam(4)
    pa, pb = run(a), run(b)
    assert pa.tobytes() == pb.tobytes()
    c = Adam.from_state_dict(a.state_dict())
    g = np.ones(4)
    assert a.step(pa, g).tobytes() == c.step(pa, g).tobytes()


def test_adam_shape_mismatch():
    with pytest.raises(StructuralError):
        Adam(3).step(np.zeros(2), np.zeros(2))
