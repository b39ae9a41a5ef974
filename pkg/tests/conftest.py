import numpy as np
import pytest

from fewshot_ser import nn


def numeric_grad(f, params, eps=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every array in ``params`` (in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            up = f()
            p[i] = old - eps
            down = f()
            p[i] = old
            g[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def max_rel_error(analytic, numeric, floor=1e-5):
    # the floor keeps finite-difference roundoff (~1e-10) on exactly-zero
    # gradients from reading as a large relative error
    a = np.concatenate([x.ravel() for x in analytic])
    n = np.concatenate([x.ravel() for x in numeric])
    return float(np.max(np.abs(a - n) / np.maximum(floor, np.abs(a) + np.abs(n))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_net(rng, depth=None, width=None, in_dim=None, out_act=None):
    depth = depth or int(rng.integers(1, 5))
    dims = [in_dim or int(rng.integers(1, 17))] + [int(rng.integers(1, 17)) for _ in range(depth)]
    acts = [str(rng.choice(["rectifier", "sigmoid", "identity"])) for _ in range(depth)]
    if out_act:
        acts[-1] = out_act
    net = nn.DenseNet.build(dims, acts, rng)
    for b in net.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    return net


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
