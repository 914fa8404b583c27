import json

import numpy as np
import pytest

from fixyforge import model_ir as mir
from fixyforge.errors import IntegrityError, ParameterError, SchemaError, ShapeError, UnsupportedOpError


def single_conv_manifest(count=216):
    manifest = {
        "name": "one-conv",
        "input": {"h": 16, "w": 16, "c": 3, "bits": 8},
        "layers": [
            {"id": "c0", "kind": "conv2d", "k": [3, 3], "stride": 2, "pad": "same",
             "in_ch": 3, "out_ch": 8, "weights": {"offset": 0, "count": count}}
        ],
    }
    return json.dumps(manifest)


def test_parse_single_conv():
    blob = np.arange(216, dtype="<f4").tobytes()
    model = mir.parse_model(single_conv_manifest(), blob)
    assert len(model.layers) == 1
    store = model.weights["c0"]
    assert store["kernel"].shape == (8, 3, 3, 3)
    assert store["bias"].shape == (8,)  # implicit zero bias
    shaped = mir.infer_shapes(model)
    assert shaped.param_count == 216 + 8


def test_parse_blob_size_mismatch():
    blob = np.zeros(200, dtype="<f4").tobytes()
    with pytest.raises(IntegrityError):
        mir.parse_model(single_conv_manifest(), blob)


def test_parse_unsupported_kind():
    doc = json.loads(single_conv_manifest())
    doc["layers"][0]["kind"] = "deconv2d"
    with pytest.raises(UnsupportedOpError, match="deconv2d"):
        mir.parse_model(json.dumps(doc), b"")


def test_parse_schema_violation_names_field():
    doc = json.loads(single_conv_manifest())
    del doc["layers"][0]["id"]
    with pytest.raises(SchemaError, match="id"):
        mir.parse_model(json.dumps(doc), b"")


def test_parse_exported_mobilenet_025():
    model = mir.build_mobilenet(0.25, seed=7)
    manifest, blob = mir.serialize_model(model)
    parsed = mir.parse_model(manifest, blob)
    assert parsed.conv_unit_count == 14
    shaped = mir.infer_shapes(parsed)
    assert shaped.param_count == pytest.approx(0.47e6, rel=0.02)


def test_roundtrip_semantic_identity():
    model = mir.build_mobilenet(0.25, seed=3)
    manifest, blob = mir.serialize_model(model)
    parsed = mir.parse_model(manifest, blob)
    manifest2, blob2 = mir.serialize_model(parsed)
    assert json.loads(manifest) == json.loads(manifest2)
    assert blob == blob2
    for lid, store in model.weights.items():
        for name, arr in store.items():
            np.testing.assert_array_equal(arr, parsed.weights[lid][name])


def test_infer_shapes_stride2_same():
    model = mir.parse_model(single_conv_manifest(), np.zeros(216, dtype="<f4").tobytes())
    shaped = mir.infer_shapes(model, (224, 224, 3))
    assert shaped.layer_shapes[0].out_shape == (112, 112, 8)


def test_infer_shapes_channel_mismatch():
    model = mir.parse_model(single_conv_manifest(), np.zeros(216, dtype="<f4").tobytes())
    with pytest.raises(ShapeError):
        mir.infer_shapes(model, (16, 16, 4))


def test_infer_shapes_nonpositive_dim():
    model = mir.Model(
        "bad", mir.InputSpec(4, 4, 1),
        [mir.Layer("p", "maxpool", (7, 7), 2, "valid", 1, 1)],
    )
    with pytest.raises(ShapeError):
        mir.infer_shapes(model)


def test_mobilenet_10_published_totals():
    shaped = mir.infer_shapes(mir.build_mobilenet(1.0, seed=1))
    assert shaped.mac_count == pytest.approx(569e6, rel=0.01)
    assert shaped.param_count == pytest.approx(4.24e6, rel=0.01)


def test_mobilenet_025_published_totals():
    shaped = mir.infer_shapes(mir.build_mobilenet(0.25, seed=1))
    assert shaped.mac_count == pytest.approx(41e6, rel=0.02)
    assert shaped.param_count == pytest.approx(0.47e6, rel=0.02)


def test_alpha_squared_scaling():
    base = mir.infer_shapes(mir.build_mobilenet(1.0, seed=1))
    for alpha in (0.25, 0.5, 0.75):
        shaped = mir.infer_shapes(mir.build_mobilenet(alpha, seed=1))
        ratio = shaped.conv_macs / base.conv_macs
        assert alpha**2 * 0.8 <= ratio <= alpha**2 * 1.2
        assert shaped.param_count <= base.param_count


def test_unsupported_alpha():
    with pytest.raises(ParameterError):
        mir.build_mobilenet(0.3)


def test_build_determinism():
    a = mir.serialize_model(mir.build_mobilenet(0.25, seed=42))
    b = mir.serialize_model(mir.build_mobilenet(0.25, seed=42))
    assert a == b
    c = mir.serialize_model(mir.build_mobilenet(0.25, seed=43))
    assert a != c


# hand count of the width-1.0 reference table, first three conv layers
_HAND_FIRST_LAYERS = [
    ("conv1", 112 * 112 * 3 * 3 * 3 * 32),
    ("dw1", 112 * 112 * 3 * 3 * 32),
    ("pw1", 112 * 112 * 32 * 64),
]


def test_per_layer_macs_match_hand_count():
    shaped = mir.infer_shapes(mir.build_mobilenet(1.0, seed=1))
    by_id = {l.id: s for l, s in zip(shaped.model.layers, shaped.layer_shapes)}
    for lid, macs in _HAND_FIRST_LAYERS:
        assert by_id[lid].macs == macs


def test_count_ops_params_single_pointwise():
    model = mir.Model(
        "pw", mir.InputSpec(1, 1, 8),
        [mir.Layer("p0", "pointwise_conv2d", (1, 1), 1, "same", 8, 8)],
        {"p0": {"kernel": np.zeros((8, 8, 1, 1), np.float32)}},
    )
    shaped = mir.infer_shapes(model)
    assert mir.count_ops_params(shaped) == (64, 72)  # 64 MACs, 64 weights + 8 biases


@pytest.mark.parametrize("n_fixed,expected_pct", [(4, 27.1), (7, 44.3), (11, 77.0), (14, 97.0)])
def test_split_fractions_adaptive_bn(mobilenet_025_shaped, n_fixed, expected_pct):
    split = mir.split_model(mobilenet_025_shaped, n_fixed)
    assert abs(100 * split.fixed_ops_fraction - expected_pct) <= 0.5


@pytest.mark.parametrize("n_fixed,expected_pct", [(7, 46.6), (14, 100.0)])
def test_split_fractions_full_fixed(mobilenet_025_shaped, n_fixed, expected_pct):
    split = mir.split_model(mobilenet_025_shaped, n_fixed, adaptive_bn=False)
    assert abs(100 * split.fixed_ops_fraction - expected_pct) <= 0.5


def test_split_zero_and_range(mobilenet_025_shaped):
    split = mir.split_model(mobilenet_025_shaped, 0)
    assert split.fixed_ops_fraction == 0.0
    assert not split.fixed_part.model.layers
    with pytest.raises(ParameterError):
        mir.split_model(mobilenet_025_shaped, 15)
    with pytest.raises(ParameterError):
        mir.split_model(mobilenet_025_shaped, -1)


def test_split_mac_partition_exact(mobilenet_025_shaped):
    total = mobilenet_025_shaped.conv_macs
    for n in range(15):
        split = mir.split_model(mobilenet_025_shaped, n)
        assert split.fixed_macs + split.programmable_macs == total


def test_split_shape_chain_associative(mobilenet_025_shaped):
    whole = mobilenet_025_shaped
    for n in (4, 7, 11):
        split = mir.split_model(whole, n)
        n_fixed_layers = len(split.fixed_part.model.layers)
        for ls, ws in zip(split.fixed_part.layer_shapes, whole.layer_shapes[:n_fixed_layers]):
            assert ls == ws
        for ls, ws in zip(split.programmable_part.layer_shapes, whole.layer_shapes[n_fixed_layers:]):
            assert ls == ws
        assert split.programmable_part.layer_shapes[0].in_shape == split.fixed_part.output_shape
