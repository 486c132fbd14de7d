"""Network substrate: init, forward, exact gradients, optimizer, checkpoints."""

import numpy as np
import pytest

from brakesim.nn import (
    AdamState,
    CheckpointError,
    Layer,
    Network,
    adam_step,
    adam_update_array,
    backward,
    forward,
    init_adam,
    init_network,
    load_bundle,
    load_network,
    save_bundle,
    save_network,
)


def single_layer(w, b, activation="identity"):
    return Network(
        layers=(
            Layer(
                w=np.asarray(w, dtype=np.float64),
                b=np.asarray(b, dtype=np.float64),
                activation=activation,
            ),
        )
    )


# ---------------------------------------------------------------------------
# Construction


def test_init_shapes():
    net = init_network([7, 256, 256, 256, 1], rng=np.random.default_rng(0))
    assert len(net.layers) == 4
    assert [l.w.shape for l in net.layers] == [(256, 7), (256, 256), (256, 256), (1, 256)]
    assert [l.activation for l in net.layers] == ["tanh", "tanh", "tanh", "identity"]
    assert net.layer_sizes() == [7, 256, 256, 256, 1]
    assert net.input_size == 7 and net.output_size == 1


def test_init_rejects_single_size():
    with pytest.raises(ValueError):
        init_network([1], rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        init_network([4, 0, 2], rng=np.random.default_rng(0))


def test_init_deterministic():
    a = init_network([3, 8, 2], rng=np.random.default_rng(5))
    b = init_network([3, 8, 2], rng=np.random.default_rng(5))
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.w, lb.w)
        assert np.array_equal(la.b, lb.b)


def test_init_bounds_and_output_scale():
    net = init_network([10, 20, 3], rng=np.random.default_rng(1))
    hidden, out = net.layers
    assert np.all(np.abs(hidden.w) <= np.sqrt(6.0 / 30.0))
    assert np.all(hidden.b == 0.0) and np.all(out.b == 0.0)
    # Output weights carry the extra 0.01 factor.
    assert np.all(np.abs(out.w) <= 0.01 * np.sqrt(6.0 / 23.0))
    assert np.max(np.abs(out.w)) > 0.0


def test_network_rejects_dimension_mismatch():
    l1 = Layer(w=np.zeros((4, 3)), b=np.zeros(4), activation="tanh")
    l2 = Layer(w=np.zeros((2, 5)), b=np.zeros(2), activation="identity")
    with pytest.raises(ValueError):
        Network(layers=(l1, l2))


def test_layer_rejects_nonfinite():
    with pytest.raises(ValueError):
        Layer(w=np.array([[np.nan]]), b=np.zeros(1), activation="identity")


# ---------------------------------------------------------------------------
# Forward


def test_forward_zero_weights_returns_bias():
    net = single_layer(np.zeros((3, 4)), [1.0, -2.0, 0.5])
    y, _ = forward(net, np.random.default_rng(0).normal(size=(6, 4)))
    assert y.shape == (6, 3)
    assert np.allclose(y, [1.0, -2.0, 0.5])


def test_forward_hand_value():
    net = single_layer([[2.0]], [1.0])
    y, _ = forward(net, np.array([[3.0]]))
    assert y[0, 0] == pytest.approx(7.0)


def test_forward_tanh_bounded():
    net = single_layer([[1.0]], [0.0], activation="tanh")
    y, _ = forward(net, np.array([[5.0], [-5.0], [18.0]]))
    assert np.all(np.abs(y) < 1.0)
    assert y[0, 0] == pytest.approx(np.tanh(5.0))


def test_forward_rejects_bad_width():
    net = single_layer(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        forward(net, np.zeros((1, 4)))
    with pytest.raises(ValueError):
        forward(net, np.zeros(3))


def test_forward_pure():
    net = init_network([5, 16, 2], rng=np.random.default_rng(2))
    x = np.random.default_rng(3).normal(size=(4, 5))
    y1, _ = forward(net, x)
    y2, _ = forward(net, x)
    assert np.array_equal(y1, y2)


def test_forward_cache_shapes():
    net = init_network([5, 16, 8, 2], rng=np.random.default_rng(2))
    x = np.random.default_rng(3).normal(size=(4, 5))
    _, cache = forward(net, x)
    assert [p.shape for p in cache.pres] == [(4, 16), (4, 8), (4, 2)]
    assert [p.shape for p in cache.posts] == [(4, 16), (4, 8), (4, 2)]


# ---------------------------------------------------------------------------
# Backward: finite-difference oracle


def loss_and_grads(net, x, proj):
    """Scalar loss sum(output * proj) and its exact gradients."""
    y, cache = forward(net, x)
    return float(np.sum(y * proj)), backward(net, cache, proj)


def numeric_param_grads(net, x, proj, h=1e-5):
    """Central differences for every parameter of the network."""
    gws, gbs = [], []
    for li, layer in enumerate(net.layers):
        gw = np.zeros_like(layer.w)
        for idx in np.ndindex(layer.w.shape):
            for sign in (+1, -1):
                w2 = layer.w.copy()
                w2[idx] += sign * h
                layers = list(net.layers)
                layers[li] = Layer(w=w2, b=layer.b, activation=layer.activation)
                y, _ = forward(Network(layers=tuple(layers)), x)
                gw[idx] += sign * np.sum(y * proj)
        gws.append(gw / (2 * h))
        gb = np.zeros_like(layer.b)
        for idx in np.ndindex(layer.b.shape):
            for sign in (+1, -1):
                b2 = layer.b.copy()
                b2[idx] += sign * h
                layers = list(net.layers)
                layers[li] = Layer(w=layer.w, b=b2, activation=layer.activation)
                y, _ = forward(Network(layers=tuple(layers)), x)
                gb[idx] += sign * np.sum(y * proj)
        gbs.append(gb / (2 * h))
    return gws, gbs


def max_rel_err(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def random_net(rng, activation):
    n_layers = int(rng.integers(1, 4))
    sizes = [int(rng.integers(2, 9))] + [int(rng.integers(2, 33)) for _ in range(n_layers)]
    return init_network(sizes, activation=activation, rng=rng)


def test_backward_matches_finite_differences_tanh():
    worst = 0.0
    for seed in range(12):
        rng = np.random.default_rng(100 + seed)
        net = random_net(rng, "tanh")
        x = rng.normal(size=(3, net.input_size))
        proj = rng.normal(size=(3, net.output_size))
        _, grads = loss_and_grads(net, x, proj)
        gws, gbs = numeric_param_grads(net, x, proj)
        for a, n in zip(grads.w, gws):
            worst = max(worst, max_rel_err(a, n))
        for a, n in zip(grads.b, gbs):
            worst = max(worst, max_rel_err(a, n))
    assert worst < 1e-4, worst


def test_backward_matches_finite_differences_relu():
    checked = 0
    for seed in range(30):
        rng = np.random.default_rng(200 + seed)
        net = random_net(rng, "relu")
        x = rng.normal(size=(2, net.input_size))
        _, cache = forward(net, x)
        # Skip draws with hidden pre-activations near the relu kink, where
        # central differences are not trustworthy (the identity output layer
        # has no kink).
        hidden_pres = cache.pres[:-1]
        if hidden_pres and min(float(np.min(np.abs(p))) for p in hidden_pres) < 1e-3:
            continue
        proj = rng.normal(size=(2, net.output_size))
        _, grads = loss_and_grads(net, x, proj)
        gws, gbs = numeric_param_grads(net, x, proj)
        for a, n in zip(grads.w, gws):
            assert max_rel_err(a, n) < 1e-4
        for a, n in zip(grads.b, gbs):
            assert max_rel_err(a, n) < 1e-4
        checked += 1
    assert checked >= 5


def test_backward_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    net = init_network([4, 12, 6, 2], rng=rng)
    x = rng.normal(size=(3, 4))
    proj = rng.normal(size=(3, 2))
    _, grads = loss_and_grads(net, x, proj)
    num = np.zeros_like(x)
    h = 1e-5
    for idx in np.ndindex(x.shape):
        for sign in (+1, -1):
            x2 = x.copy()
            x2[idx] += sign * h
            y, _ = forward(net, x2)
            num[idx] += sign * np.sum(y * proj)
    num /= 2 * h
    assert max_rel_err(grads.x, num) < 1e-4


def test_backward_zero_output_grad():
    net = init_network([3, 8, 2], rng=np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 3))
    _, cache = forward(net, x)
    grads = backward(net, cache, np.zeros((5, 2)))
    assert all(np.all(g == 0.0) for g in grads.w)
    assert all(np.all(g == 0.0) for g in grads.b)
    assert np.all(grads.x == 0.0)


def test_backward_batch_additivity():
    rng = np.random.default_rng(7)
    net = init_network([4, 10, 3], rng=rng)
    x = rng.normal(size=(2, 4))
    proj = rng.normal(size=(2, 3))
    _, g_both = loss_and_grads(net, x, proj)
    _, g_a = loss_and_grads(net, x[:1], proj[:1])
    _, g_b = loss_and_grads(net, x[1:], proj[1:])
    for gw, ga, gb in zip(g_both.w, g_a.w, g_b.w):
        assert np.allclose(gw, ga + gb, atol=1e-10)
    for gw, ga, gb in zip(g_both.b, g_a.b, g_b.b):
        assert np.allclose(gw, ga + gb, atol=1e-10)


def test_backward_rejects_bad_shapes():
    net = init_network([3, 8, 2], rng=np.random.default_rng(0))
    x = np.zeros((5, 3))
    _, cache = forward(net, x)
    with pytest.raises(ValueError):
        backward(net, cache, np.zeros((5, 3)))
    with pytest.raises(ValueError):
        backward(net, cache, np.zeros((4, 2)))


# ---------------------------------------------------------------------------
# Optimizer


def test_adam_zero_gradient_leaves_params():
    net = init_network([3, 6, 1], rng=np.random.default_rng(0))
    state = init_adam(net)
    grads_zero = backward(net, forward(net, np.zeros((1, 3)))[1], np.zeros((1, 1)))
    net2, state2 = adam_step(net, grads_zero, state, lr=1e-3)
    for la, lb in zip(net.layers, net2.layers):
        assert np.array_equal(la.w, lb.w)
        assert np.array_equal(la.b, lb.b)
    assert state2.t == 1


def test_adam_single_step_closed_form():
    # First step moves each parameter by ~lr regardless of gradient scale.
    net = single_layer([[0.0]], [0.0])
    state = init_adam(net)
    grads = backward(net, forward(net, np.array([[1.0]]))[1], np.array([[1.0]]))
    net2, _ = adam_step(net, grads, state, lr=1e-3)
    assert abs(net2.layers[0].w[0, 0] - (-1e-3)) < 1e-10
    assert abs(net2.layers[0].b[0] - (-1e-3)) < 1e-10


def test_adam_deterministic():
    rng = np.random.default_rng(3)
    net = init_network([4, 8, 2], rng=rng)
    x = rng.normal(size=(6, 4))
    proj = rng.normal(size=(6, 2))
    _, grads = loss_and_grads(net, x, proj)
    state = init_adam(net)
    a_net, a_state = adam_step(net, grads, state, lr=1e-3)
    b_net, b_state = adam_step(net, grads, state, lr=1e-3)
    for la, lb in zip(a_net.layers, b_net.layers):
        assert np.array_equal(la.w, lb.w)
    assert a_state.t == b_state.t == 1
    for ma, mb in zip(a_state.m_w, b_state.m_w):
        assert np.array_equal(ma, mb)


def test_adam_rejects_nonfinite_gradient():
    net = single_layer([[0.0]], [0.0])
    state = init_adam(net)
    from brakesim.nn import Gradients

    bad = Gradients(w=(np.array([[np.inf]]),), b=(np.zeros(1),), x=np.zeros((1, 1)))
    with pytest.raises(ValueError):
        adam_step(net, bad, state, lr=1e-3)


def test_adam_update_array_closed_form():
    p = np.array([0.0])
    m = np.zeros(1)
    v = np.zeros(1)
    p2, m2, v2 = adam_update_array(p, np.array([1.0]), m, v, t=1, lr=1e-3)
    assert abs(p2[0] - (-1e-3)) < 1e-10
    assert m2[0] == pytest.approx(0.1)
    assert v2[0] == pytest.approx(0.001)
    with pytest.raises(ValueError):
        adam_update_array(p, np.array([np.nan]), m, v, t=1, lr=1e-3)


def test_adam_reduces_quadratic_loss():
    # Minimize ||Wx - y||^2 on a fixed batch; loss must fall substantially.
    rng = np.random.default_rng(11)
    net = init_network([3, 16, 2], rng=rng)
    x = rng.normal(size=(32, 3))
    target = rng.normal(size=(32, 2))
    state = init_adam(net)

    def loss(n):
        y, cache = forward(n, x)
        return float(np.mean((y - target) ** 2)), y, cache

    first, y, cache = loss(net)
    for _ in range(300):
        y, cache = forward(net, x)
        grad = 2.0 * (y - target) / y.size
        net, state = adam_step(net, backward(net, cache, grad), state, lr=1e-2)
    last, _, _ = loss(net)
    assert last < 0.2 * first


# ---------------------------------------------------------------------------
# Checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = init_network([7, 32, 16, 1], rng=np.random.default_rng(9))
    path = tmp_path / "net.ckpt"
    save_network(net, path)
    back = load_network(path)
    assert back.layer_sizes() == net.layer_sizes()
    for la, lb in zip(net.layers, back.layers):
        assert np.array_equal(la.w, lb.w)
        assert np.array_equal(la.b, lb.b)
        assert la.activation == lb.activation


def test_checkpoint_deterministic_bytes(tmp_path):
    net = init_network([5, 8, 2], rng=np.random.default_rng(4))
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_network(net, p1)
    save_network(net, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_insertion_order_independent(tmp_path):
    a = init_network([3, 4, 1], rng=np.random.default_rng(1))
    b = init_network([2, 5, 2], rng=np.random.default_rng(2))
    p1, p2 = tmp_path / "ab.ckpt", tmp_path / "ba.ckpt"
    save_bundle(p1, {"actor": a, "critic": b})
    save_bundle(p2, {"critic": b, "actor": a})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bundle_metadata_roundtrip(tmp_path):
    net = init_network([3, 4, 1], rng=np.random.default_rng(1))
    scalars = {"log_std": -0.5, "third": 1.0 / 3.0, "tiny": 1e-300}
    strings = {"algo": "ppo", "comfort": "on"}
    path = tmp_path / "bundle.ckpt"
    save_bundle(path, {"policy": net}, scalars=scalars, strings=strings)
    nets, s, t = load_bundle(path)
    assert set(nets) == {"policy"}
    assert s == scalars  # exact float round-trip via shortest-repr JSON
    assert t == strings


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_bundle(path)


def test_checkpoint_rejects_truncation(tmp_path):
    net = init_network([3, 4, 1], rng=np.random.default_rng(1))
    path = tmp_path / "t.ckpt"
    save_network(net, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 8])
    with pytest.raises(CheckpointError):
        load_bundle(path)


def test_checkpoint_rejects_wrong_version(tmp_path):
    net = init_network([3, 4, 1], rng=np.random.default_rng(1))
    path = tmp_path / "v.ckpt"
    save_network(net, path)
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_bundle(path)
