import numpy as np
import pytest

from fixyforge import model_ir as mir
from fixyforge.freeze import build_fixed_pipeline


def make_chain_model(name, input_shape, specs, seed=0, weight_scale=0.4):
    """Small conv-chain model for tests.

    specs: list of (kind, kernel, stride, out_ch) tuples; every conv layer
    gets random weights and attached BN + ReLU.
    """
    rng = np.random.default_rng(seed)
    h, w, c = input_shape
    layers = []
    weights = {}
    cin = c
    for i, (kind, k, stride, out_ch) in enumerate(specs):
        lid = f"l{i}_{kind.split('_')[0]}"
        if kind == "maxpool":
            layers.append(mir.Layer(lid, kind, (k, k), stride, "valid", cin, cin))
            continue
        out = cin if kind == "depthwise_conv2d" else out_ch
        layers.append(mir.Layer(lid, kind, (k, k), stride, "same", cin, out,
                                has_bn=True, bn_eps=1e-3, relu_after=True))
        if kind == "conv2d":
            shape = (out, cin, k, k)
        elif kind == "depthwise_conv2d":
            shape = (cin, k, k)
        else:
            shape = (out, cin, 1, 1)
        weights[lid] = {
            "kernel": rng.normal(0, weight_scale, shape).astype(np.float32),
            "gamma": rng.uniform(0.5, 1.5, out).astype(np.float32),
            "beta": rng.normal(0, 0.3, out).astype(np.float32),
            "mean": rng.normal(0, 0.5, out).astype(np.float32),
            "var": rng.uniform(0.25, 2.0, out).astype(np.float32),
        }
        cin = out
    return mir.Model(name, mir.InputSpec(h, w, c, 8), layers, weights)


def random_small_pipeline(rng, max_stages=3):
    """Random same-padded conv pipeline within the supported kernel/stride set."""
    h = int(rng.integers(8, 33))
    w = int(rng.integers(8, 33))
    c = int(rng.integers(1, 5))
    n_stages = int(rng.integers(1, max_stages + 1))
    specs = []
    for i in range(n_stages):
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 2]))
        kind = "pointwise_conv2d" if k == 1 else "conv2d"
        out_ch = int(rng.integers(1, 7))
        specs.append((kind, k, stride if k > 1 else 1, out_ch))
    model = make_chain_model(f"rnd{rng.integers(1e9)}", (h, w, c), specs,
                             seed=int(rng.integers(1e9)))
    shaped = mir.infer_shapes(model)
    sparsity = float(rng.choice([0.0, 0.3, 0.5]))
    result = build_fixed_pipeline(shaped, sparsity=sparsity if sparsity else None)
    return result.pipeline, shaped


@pytest.fixture(scope="session")
def mobilenet_025_shaped():
    return mir.infer_shapes(mir.build_mobilenet(0.25, seed=1))


@pytest.fixture(scope="session")
def mobilenet_025_pipeline(mobilenet_025_shaped):
    full = mir.split_model(mobilenet_025_shaped, 14).fixed_part
    return build_fixed_pipeline(full, sparsity=0.5).pipeline
