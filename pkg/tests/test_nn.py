import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewshot_ser import nn
from fewshot_ser.errors import ShapeError, TrainingError, UsageError

from conftest import max_rel_error, numeric_grad, random_net


def test_zero_weight_sigmoid_net_outputs_half():
    net = nn.DenseNet.build([5, 4, 3], ["rectifier", "sigmoid"], zero=True)
    out, _ = nn.forward(net, np.arange(5.0))
    assert np.array_equal(out, np.full(3, 0.5))


def test_identity_layer():
    net = nn.DenseNet([nn.LayerSpec(2, 2, "identity")], [np.eye(2)], [np.zeros(2)])
    assert np.array_equal(net([1.0, 2.0]), [1.0, 2.0])


def test_single_sigmoid_unit():
    net = nn.DenseNet([nn.LayerSpec(1, 1, "sigmoid")], [np.ones((1, 1))], [np.zeros(1)])
    assert net([0.2])[0] == pytest.approx(0.549834, abs=1e-6)


def test_forward_shape_error():
    net = nn.DenseNet.build([3, 2], ["identity"], zero=True)
    with pytest.raises(ShapeError):
        nn.forward(net, np.zeros(4))


def test_layers_must_chain():
    with pytest.raises(ShapeError):
        nn.DenseNet(
            [nn.LayerSpec(2, 3), nn.LayerSpec(4, 1)],
            [np.zeros((3, 2)), np.zeros((1, 4))],
            [np.zeros(3), np.zeros(1)],
        )


def test_layer_dims_positive():
    with pytest.raises(ShapeError):
        nn.LayerSpec(0, 3)


def test_batch_and_vector_forward_agree(rng):
    net = random_net(rng, in_dim=6)
    X = rng.normal(size=(5, 6))
    batch = net(X)
    for x, row in zip(X, batch):
        np.testing.assert_allclose(net(x), row, rtol=1e-12, atol=1e-14)


def test_backward_zero_upstream(rng):
    net = random_net(rng, in_dim=4)
    out, cache = nn.forward(net, rng.normal(size=4))
    g = nn.backward(net, cache, np.zeros_like(out))
    assert all(not a.any() for a in g.weights + g.biases)


def test_backward_linear_unit_by_hand():
    # L = 0.5 (w x - y)^2, x = 2, w = 1, y = 0  ->  dL/dw = (w x - y) x = 4
    net = nn.DenseNet([nn.LayerSpec(1, 1, "identity")], [np.ones((1, 1))], [np.zeros(1)])
    out, cache = nn.forward(net, [2.0])
    g = nn.backward(net, cache, out - 0.0)
    assert g.weights[0][0, 0] == 4.0


def test_backward_needs_cache(rng):
    with pytest.raises(UsageError):
        nn.backward(random_net(rng), None, np.zeros(1))


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng)
    X = rng.normal(size=(3, net.in_dim))
    target = rng.normal(size=(3, net.out_dim))

    def loss():
        return 0.5 * float(((net(X) - target) ** 2).sum())

    out, cache = nn.forward(net, X)
    g = nn.backward(net, cache, out - target)
    num = numeric_grad(loss, net.parameters())
    assert max_rel_error(g.weights + g.biases, num) < 1e-4


def test_input_gradient_matches_finite_differences(rng):
    net = random_net(rng, in_dim=5, out_act="sigmoid")
    x = rng.normal(size=5)
    out, cache = nn.forward(net, x)
    g = nn.backward(net, cache, np.ones_like(out))
    num = numeric_grad(lambda: float(net(x).sum()), [x])
    assert max_rel_error([g.inputs], num) < 1e-4


def test_adam_zero_gradient_leaves_weights(rng):
    net = random_net(rng)
    before = [p.copy() for p in net.parameters()]
    state = nn.AdamState.for_net(net)
    for _ in range(5):
        nn.adam_step(net, nn.Gradients.zeros_like(net), state)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))
    assert state.step == 5


def test_adam_moments_decay_under_zero_gradient(rng):
    net = random_net(rng)
    state = nn.AdamState.for_net(net)
    grads = nn.Gradients([np.ones_like(w) for w in net.weights], [np.ones_like(b) for b in net.biases])
    nn.adam_step(net, grads, state)
    m0, v0 = state.m_w[0].copy(), state.v_w[0].copy()
    nn.adam_step(net, nn.Gradients.zeros_like(net), state)
    np.testing.assert_allclose(state.m_w[0], 0.9 * m0)
    np.testing.assert_allclose(state.v_w[0], 0.999 * v0)


def test_adam_first_step_is_lr_times_sign(rng):
    net = random_net(rng, depth=2)
    before = [p.copy() for p in net.parameters()]
    grads = nn.Gradients([rng.normal(size=w.shape) for w in net.weights], [rng.normal(size=b.shape) for b in net.biases])
    nn.adam_step(net, grads, nn.AdamState.for_net(net))
    for b, a, g in zip(before, net.parameters(), grads.weights + grads.biases):
        np.testing.assert_allclose(a - b, -0.0005 * np.sign(g), rtol=1e-4)


def test_adam_minimises_scalar_quadratic():
    net = nn.DenseNet([nn.LayerSpec(1, 1, "identity")], [np.zeros((1, 1))], [np.zeros(1)])
    state = nn.AdamState.for_net(net, lr=0.1)
    for _ in range(200):
        w = net.weights[0][0, 0]
        grads = nn.Gradients([np.array([[2 * (w - 3.0)]])], [np.zeros(1)])
        nn.adam_step(net, grads, state)
    assert abs(net.weights[0][0, 0] - 3.0) < 0.1


def test_adam_rejects_non_finite(rng):
    net = random_net(rng, depth=3)
    grads = nn.Gradients.zeros_like(net)
    grads.weights[1][0, 0] = np.nan
    with pytest.raises(TrainingError) as err:
        nn.adam_step(net, grads, nn.AdamState.for_net(net))
    assert err.value.layer == 1


def test_cross_entropy_cases():
    target = np.array([1.0, 0.0, 0.0])
    assert nn.cross_entropy(target, target)[0] == pytest.approx(0.0, abs=1e-11)
    assert nn.cross_entropy(np.full(3, 1 / 3), target)[0] == pytest.approx(np.log(3), abs=1e-12)
    assert nn.cross_entropy([0.8, 0.1, 0.1], target)[0] == pytest.approx(-np.log(0.8), abs=1e-12)
    with pytest.raises(ShapeError):
        nn.cross_entropy([0.5, 0.5], target)


def test_cross_entropy_gradient(rng):
    p = rng.uniform(0.05, 0.95, size=4)
    y = np.eye(4)[2]
    _, g = nn.cross_entropy(p, y)
    num = numeric_grad(lambda: nn.cross_entropy(p, y)[0], [p])
    assert max_rel_error([g], num) < 1e-6


def test_classification_loss_gradient(rng):
    s = rng.uniform(0.05, 0.95, size=(3, 3))
    y = np.eye(3)[[0, 2, 1]]
    _, g = nn.classification_loss(s, y)
    num = numeric_grad(lambda: nn.classification_loss(s, y)[0], [s])
    assert max_rel_error([g], num) < 1e-6


def test_checkpoint_round_trip(tmp_path, rng):
    net = random_net(rng)
    path = tmp_path / "net.npz"
    nn.save_net(path, net, {"note": "x"})
    loaded, meta = nn.load_net(path)
    assert meta == {"note": "x"}
    assert loaded.layers == net.layers
    for a, b in zip(loaded.parameters(), net.parameters()):
        assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_activation_ranges(seed):
    rng = np.random.default_rng(seed)
    relu = nn.DenseNet.build([4, 6], ["rectifier"], rng)
    sig = nn.DenseNet.build([4, 6], ["sigmoid"], rng)
    x = rng.normal(scale=3.0, size=(8, 4))
    assert (relu(x) >= 0).all()
    s = sig(x)
    assert ((s > 0) & (s < 1)).all()


def test_training_is_deterministic():
    def run():
        rng = np.random.default_rng(7)
        net = nn.DenseNet.build([3, 4, 2], ["rectifier", "sigmoid"], rng)
        state = nn.AdamState.for_net(net)
        X, Y = rng.normal(size=(10, 3)), np.eye(2)[rng.integers(0, 2, 10)]
        for _ in range(20):
            out, cache = nn.forward(net, X)
            _, g = nn.classification_loss(out, Y)
            nn.adam_step(net, nn.backward(net, cache, g), state)
        return b"".join(p.tobytes() for p in net.parameters())

    assert run() == run()
