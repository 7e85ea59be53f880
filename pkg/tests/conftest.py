import json
import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from favex import AffineLayer, ReluLayer, make_network

FIXTURE_DIR = pathlib.Path(__file__).parent.parent / "fixtures" / "fc_10x2"


def identity_net(d=2):
    return make_network(f"identity{d}", d, [AffineLayer(np.eye(d), np.zeros(d))])


def build_net(weight_list, bias_list, name="net", input_lower=None, input_upper=None):
    """Dense ReLU net from per-affine-layer weight/bias arrays."""
    layers = []
    for i, (w, b) in enumerate(zip(weight_list, bias_list)):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if i > 0:
            layers.append(ReluLayer(width=w.shape[1]))
        layers.append(AffineLayer(w, b))
    return make_network(
        name, layers[0].cols, layers, input_lower=input_lower, input_upper=input_upper
    )


def random_net(rng, d=None, relu_layers=None, width_hi=8, k=None, scale=2.0):
    """Random fully-connected ReLU classifier over the [0,1]^d box."""
    d = int(d if d is not None else rng.integers(2, 6))
    k = int(k if k is not None else rng.integers(2, 4))
    relu_layers = int(relu_layers if relu_layers is not None else rng.integers(0, 3))
    widths = [int(rng.integers(2, width_hi + 1)) for _ in range(relu_layers)]
    dims = [d] + widths + [k]
    ws, bs = [], []
    for m, n in zip(dims, dims[1:]):
        ws.append(rng.normal(0.0, scale / np.sqrt(m), size=(n, m)))
        bs.append(rng.normal(0.0, 0.3, size=n))
    return build_net(ws, bs)


def random_query(rng, net, eps_range=(0.05, 0.6), min_active=1):
    d = net.input_dim
    x = rng.uniform(net.input_lower, net.input_upper)
    n_active = int(rng.integers(min_active, d + 1))
    active = frozenset(int(i) for i in rng.choice(d, size=n_active, replace=False))
    epsilon = float(rng.uniform(*eps_range))
    return x, active, epsilon


@pytest.fixture(scope="session")
def fc_fixture():
    if not FIXTURE_DIR.exists():
        pytest.skip("fc_10x2 fixture bundle not generated")
    from favex import load_model

    net = load_model(FIXTURE_DIR / "model.json")
    inputs = np.asarray(json.loads((FIXTURE_DIR / "inputs.json").read_text()))
    golden = json.loads((FIXTURE_DIR / "golden.json").read_text())
    return net, inputs, golden
