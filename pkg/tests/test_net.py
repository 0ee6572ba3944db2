import numpy as np
import pytest

from gcpool.net import (Batch, LayerSpec, Network, NetworkError, StaleTapeError, backward,
                        count_params_flops, cross_entropy, forward, forward_from,
                        grad_wrt_activation, load_checkpoint, parse_arch, save_checkpoint,
                        softmax)


def toy_net(head="gcp", seed=0, size=6):
    arch = f"conv3x3:4,relu,conv3x3:5,{head},dense"
    return Network.from_arch(arch, (2, size, size), 3, seed=seed)


def toy_batch(rng, size=6, b=4):
    return Batch(rng.standard_normal((b, 2, size, size)), rng.integers(0, 3, b))


def test_cross_entropy_examples():
    loss, g = cross_entropy(np.array([[0.0, 0.0]]), np.array([0]))
    assert abs(loss - np.log(2)) <= 1e-12
    np.testing.assert_allclose(g, [[-0.5, 0.5]])
    loss, _ = cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
    assert 0 <= loss <= 1e-6


def test_logit_gradient_closed_form(rng):
    net = toy_net()
    batch = toy_batch(rng)
    logits, _, tape = forward(net, batch)
    onehot = np.eye(3)[batch.labels]
    expected = (softmax(logits) - onehot) / len(batch.labels)
    np.testing.assert_allclose(grad_wrt_activation(net, tape, len(net.layers) - 1), expected,
                               atol=1e-15)


def test_forward_deterministic(rng):
    net = Network([LayerSpec("conv1x1", 1, 1), LayerSpec("gap-head", 1, 1),
                   LayerSpec("dense", 1, 2)], (1, 3, 3))
    batch = Batch(rng.standard_normal((2, 1, 3, 3)), [0, 1])
    assert forward(net, batch)[1] == forward(net, batch)[1]


def test_parse_arch_and_validation():
    layers = parse_arch("conv3x3:8/2,relu,maxpool,gcp,dense", 3, 10)
    assert [s.kind for s in layers] == ["conv3x3", "relu", "maxpool2x2", "gcp-head", "dense"]
    assert layers[0].stride == 2 and layers[-1].in_channels == 36
    with pytest.raises(NetworkError):
        Network.from_arch("conv3x3:4,dense", (1, 4, 4), 2)
    with pytest.raises(NetworkError):
        Network.from_arch("conv3x3:4,gap,gcp,dense", (1, 4, 4), 2)
    with pytest.raises(NetworkError):
        Network.from_arch("gap,conv3x3:4,dense", (1, 4, 4), 2)


def test_count_params_flops():
    net = Network([LayerSpec("conv3x3", 1, 1), LayerSpec("gap-head", 1, 1),
                   LayerSpec("dense", 1, 3)], (1, 4, 4))
    params, flops = count_params_flops(net)
    assert flops == 9 * 16 + 1 * 3
    assert params == (9 + 1) + (1 * 3 + 3)
    gap = count_params_flops(toy_net("gap"))[0]
    gcp = toy_net("gcp")
    dense = gcp.layers[-1]
    conv_params = sum(p.size for p in gcp.params[0].values()) + sum(
        p.size for p in gcp.params[2].values())
    assert count_params_flops(gcp)[0] == conv_params + dense.in_channels * 3 + 3
    assert gap == conv_params + 5 * 3 + 3


def _fd_param_check(net, batch, rng, per_layer=5, h=1e-6):
    _, _, tape = forward(net, batch)
    grads = backward(net, tape).params
    worst = 0.0
    for k, p in enumerate(net.params):
        for name, arr in p.items():
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(per_layer, flat.size), replace=False)
            fd = np.zeros(len(picks))
            for j, i in enumerate(picks):
                old = flat[i]
                flat[i] = old + h
                lp = forward(net, batch)[1]
                flat[i] = old - h
                lm = forward(net, batch)[1]
                flat[i] = old
                fd[j] = (lp - lm) / (2 * h)
            an = grads[k][name].reshape(-1)[picks]
            den = max(np.linalg.norm(fd), np.linalg.norm(an))
            if den < 1e-9:
                continue  # e.g. biases whose effect the centering removes
            worst = max(worst, np.linalg.norm(an - fd) / den)
    return worst


@pytest.mark.parametrize("head", ["gap", "gcp"])
def test_parameter_gradients_finite_difference(rng, head):
    net = toy_net(head, seed=3)
    assert _fd_param_check(net, toy_batch(rng), rng) <= 1e-4


def test_activation_gradient_finite_difference(rng):
    net = toy_net("gcp", seed=1)
    batch = toy_batch(rng)
    _, _, tape = forward(net, batch)
    x = tape.outputs[0]
    g = grad_wrt_activation(net, tape, 0)
    d = rng.standard_normal(x.shape)
    h = 1e-6
    fd = (forward_from(net, tape, 0, x + h * d) - forward_from(net, tape, 0, x - h * d)) / (2 * h)
    assert abs(fd - np.sum(g * d)) <= 1e-5 * abs(fd)


def test_forward_from_consistency(rng):
    net = toy_net("gcp")
    batch = toy_batch(rng)
    _, loss, tape = forward(net, batch)
    for k in range(len(net.layers)):
        x = tape.outputs[k]
        assert abs(forward_from(net, tape, k, x) - loss) <= 1e-12
        g = grad_wrt_activation(net, tape, k)
        assert forward_from(net, tape, k, x + 0.0 * g) == forward_from(net, tape, k, x)
    with pytest.raises(NetworkError):
        forward_from(net, tape, 0, np.zeros((1, 2, 3)))


def test_saturated_loss_gives_zero_gradients():
    net = Network([LayerSpec("conv1x1", 1, 1), LayerSpec("gap-head", 1, 1),
                   LayerSpec("dense", 1, 2)], (1, 2, 2))
    net.params[0]["W"][:] = 1.0
    net.params[2]["W"][:] = [[1e3], [-1e3]]
    batch = Batch(np.ones((2, 1, 2, 2)), [0, 0])
    _, loss, tape = forward(net, batch)
    assert loss <= 1e-12
    g = backward(net, tape)
    for p in g.params:
        for arr in p.values():
            assert np.abs(arr).max() <= 1e-8
    assert np.abs(g.activations[0]).max() <= 1e-8


def test_gap_and_gcp_conv_gradient_shapes(rng):
    batch = toy_batch(rng)
    ga, gc = toy_net("gap"), toy_net("gcp")
    pa = backward(ga, forward(ga, batch)[2]).params
    pc = backward(gc, forward(gc, batch)[2]).params
    for k in (0, 2):
        for name in ("W", "b"):
            assert pa[k][name].shape == pc[k][name].shape


def test_stale_tape_rejected(rng):
    net = toy_net()
    _, _, tape = forward(net, toy_batch(rng))
    assert backward(net, tape) is backward(net, tape)
    net.bump()
    with pytest.raises(StaleTapeError):
        backward(net, tape)


def test_batch_validation():
    with pytest.raises(NetworkError):
        Batch(np.zeros((2, 3, 3)), [0, 1])
    with pytest.raises(NetworkError):
        Batch(np.full((1, 1, 2, 2), np.nan), [0])
    with pytest.raises(NetworkError):
        forward(toy_net(), Batch(np.zeros((1, 2, 6, 6)), [7]))


def test_checkpoint_round_trip(tmp_path, rng):
    net = toy_net("gcp", seed=5)
    path = tmp_path / "c.npz"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.layers == net.layers and back.input_shape == net.input_shape
    np.testing.assert_array_equal(back.flat_params(), net.flat_params())
    batch = toy_batch(rng)
    assert forward(back, batch)[1] == forward(net, batch)[1]
    save_checkpoint(back, tmp_path / "d.npz")
    assert (tmp_path / "d.npz").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, header=np.frombuffer(b'{"format": "other"}', np.uint8))
    with pytest.raises(NetworkError):
        load_checkpoint(path)
