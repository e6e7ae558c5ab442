import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from microquant.netgraph import (Conv2D, Dense, Flatten, MaxPool2D, ModelSpec, ShapeError,
                                 conv2d, forward, infer_shapes, init_weights, load_architecture,
                                 maxpool2d, param_count, reference_architecture, relu, softmax)


def naive_conv(x, kernel, bias, stride, padding):
    """Direct nested-loop cross-correlation on a single HWC sample."""
    h, w, c = x.shape
    k, _, _, o = kernel.shape
    if padding == "same":
        oh, ow = -(-h // stride), -(-w // stride)
        ph = max((oh - 1) * stride + k - h, 0)
        pw = max((ow - 1) * stride + k - w, 0)
        x = np.pad(x, ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)))
    else:
        oh, ow = (h - k) // stride + 1, (w - k) // stride + 1
    out = np.zeros((oh, ow, o))
    for i in range(oh):
        for j in range(ow):
            patch = x[i * stride:i * stride + k, j * stride:j * stride + k, :]
            for oc in range(o):
                out[i, j, oc] = np.sum(patch * kernel[..., oc]) + bias[oc]
    return out


def test_infer_shapes_examples():
    spec = ModelSpec((28, 28, 1), [Conv2D(1, 32, 3), MaxPool2D(2, 2), Conv2D(32, 64, 3),
                                   MaxPool2D(2, 2), Flatten(), Dense(3136, 24, "softmax")])
    shapes = infer_shapes(spec)
    assert shapes[0] == (28, 28, 32)
    assert shapes[1] == (14, 14, 32)
    assert shapes[3] == (7, 7, 64)
    assert shapes[4] == (3136,)
    assert shapes[5] == (24,)


def test_infer_shapes_valid_and_strided():
    spec = ModelSpec((28, 28, 1), [Conv2D(1, 4, 5, stride=2, padding="valid"),
                                   Conv2D(4, 4, 3, stride=2, padding="same")])
    assert infer_shapes(spec) == [(12, 12, 4), (6, 6, 4)]


def test_shape_errors_name_the_layer():
    with pytest.raises(ShapeError, match="layer 2"):
        ModelSpec((8, 8, 1), [Conv2D(1, 2, 3), Flatten(), Dense(100, 3)])
    with pytest.raises(ShapeError, match="layer 0"):
        ModelSpec((8, 8, 3), [Conv2D(1, 2, 3)])


def test_layer_validation():
    with pytest.raises(ValueError):
        Conv2D(1, 1, 3, padding="full")
    with pytest.raises(ValueError):
        Dense(0, 3)
    with pytest.raises(ValueError, match="final"):
        ModelSpec((2, 2, 1), [Flatten(), Dense(4, 4, "softmax"), Dense(4, 2)])


def test_param_count_examples():
    assert param_count(ModelSpec((4, 4, 1), [])) == 0
    assert param_count(ModelSpec((4, 4, 1), [Conv2D(1, 8, 3)])) == 80
    assert param_count(ModelSpec((10, 1, 1), [Flatten(), Dense(10, 24)])) == 264


def test_reference_architecture():
    spec = reference_architecture()
    assert spec.input_shape == (28, 28, 1)
    assert infer_shapes(spec)[-1] == (24,)
    # oracle: sum the per-layer formulas by hand
    expected = (5 * 5 * 1 * 16 + 16) + (3 * 3 * 16 * 16 + 16) + (784 * 208 + 208) + (208 * 24 + 24)
    assert expected == 171_032
    assert param_count(spec) == expected


def test_architecture_json_round_trip(tmp_path):
    spec = reference_architecture()
    path = tmp_path / "arch.json"
    path.write_text(json.dumps(spec.architecture()))
    again = load_architecture(path)
    assert again.layers == spec.layers and again.input_shape == spec.input_shape
    with pytest.raises(ValueError, match="unknown layer"):
        ModelSpec.from_architecture({"input_shape": [2, 2, 1], "layers": [{"type": "lstm"}]})


def test_weight_shape_check():
    spec = ModelSpec((2, 2, 1), [Flatten(), Dense(4, 2)])
    with pytest.raises(ShapeError):
        spec.with_weights([None, (np.zeros((4, 3)), np.zeros(3))])
    with pytest.raises(ShapeError):
        spec.with_weights([(np.zeros(1), np.zeros(1)), (np.zeros((4, 2)), np.zeros(2))])


def test_identity_conv_forward():
    spec = ModelSpec((5, 5, 1), [Conv2D(1, 1, 1, activation="none")],
                     [(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))])
    x = np.random.default_rng(0).random((5, 5, 1)).astype(np.float32)
    np.testing.assert_array_equal(forward(spec, x), x)


def test_uniform_softmax_forward():
    spec = ModelSpec((2, 1, 1), [Flatten(), Dense(2, 2, "softmax")],
                     [None, (np.eye(2, dtype=np.float32), np.zeros(2, np.float32))])
    np.testing.assert_allclose(forward(spec, np.zeros((2, 1, 1))), [0.5, 0.5])


def test_hand_convolution():
    x = np.arange(1, 10, dtype=np.float32).reshape(3, 3, 1)
    out = conv2d(x, np.ones((2, 2, 1, 1), np.float32), np.zeros(1, np.float32), 1, "valid")
    np.testing.assert_array_equal(out[..., 0], [[12, 16], [24, 28]])


def test_conv_zero_kernel_and_affine():
    x = np.random.default_rng(1).random((6, 6, 2)).astype(np.float32)
    out = conv2d(x, np.zeros((3, 3, 2, 4), np.float32), np.full(4, 1.5, np.float32))
    assert out.shape == (6, 6, 4) and (out == 1.5).all()
    out = conv2d(x[..., :1], np.full((1, 1, 1, 1), 2.0, np.float32), np.ones(1, np.float32))
    np.testing.assert_allclose(out, 2 * x[..., :1] + 1, rtol=1e-6)


@given(h=st.integers(3, 9), w=st.integers(3, 9), c=st.integers(1, 3), o=st.integers(1, 3),
       k=st.integers(1, 4), stride=st.integers(1, 3), padding=st.sampled_from(["same", "valid"]),
       seed=st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_conv_matches_naive(h, w, c, o, k, stride, padding, seed):
    if padding == "valid" and (k > h or k > w):
        return
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(h, w, c))
    kernel = rng.normal(size=(k, k, c, o))
    bias = rng.normal(size=o)
    np.testing.assert_allclose(conv2d(x, kernel, bias, stride, padding),
                               naive_conv(x, kernel, bias, stride, padding), atol=1e-9)


@given(size=st.integers(1, 12), k=st.integers(1, 7))
@settings(max_examples=50, deadline=None)
def test_same_padding_preserves_size(size, k):
    spec = ModelSpec((size, size + 1, 1), [Conv2D(1, 2, k, padding="same")])
    assert infer_shapes(spec)[0][:2] == (size, size + 1)


def test_primitives():
    np.testing.assert_allclose(softmax(np.zeros(24)), np.full(24, 1 / 24))
    assert relu(-3) == 0 and relu(3) == 3
    assert maxpool2d(np.array([[1, 2], [3, 4]], dtype=float)[:, :, None])[0, 0, 0] == 4


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(-100, 100))
def test_softmax_properties(logits, shift):
    v = np.array(logits)
    p = softmax(v)
    assert abs(p.sum() - 1) < 1e-6
    assert ((p > 0) & (p <= 1)).all()
    assert np.argmax(softmax(v + shift)) == np.argmax(p)


def test_batch_forward_equals_per_sample():
    spec = init_weights(reference_architecture(), seed=2)
    x = np.random.default_rng(3).random((5, 28, 28, 1)).astype(np.float32)
    batched = forward(spec, x)
    single = np.stack([forward(spec, s) for s in x])
    np.testing.assert_allclose(batched, single, rtol=1e-5, atol=1e-7)


def test_forward_capture():
    spec = init_weights(reference_architecture(), seed=2)
    x = np.random.default_rng(4).random((28, 28, 1)).astype(np.float32)
    probs, acts = forward(spec, x, capture=True)
    assert len(acts) == len(spec.layers)
    assert [a.shape for a in acts] == infer_shapes(spec)
    np.testing.assert_allclose(softmax(acts[-1]), probs, rtol=1e-6)


def test_forward_shape_mismatch():
    spec = init_weights(reference_architecture())
    with pytest.raises(ShapeError):
        forward(spec, np.zeros((27, 28, 1)))


def random_spec(rng):
    layers = []
    h = w = int(rng.integers(4, 10))
    c = int(rng.integers(1, 3))
    shape = (h, w, c)
    for _ in range(int(rng.integers(0, 3))):
        o = int(rng.integers(1, 5))
        layers.append(Conv2D(c, o, int(rng.integers(1, 4)), padding="same"))
        c = o
        if rng.random() < 0.5 and h >= 2:
            layers.append(MaxPool2D(2, 2))
            h, w = h // 2, w // 2
    layers.append(Flatten())
    n = h * w * c
    for _ in range(int(rng.integers(0, 2))):
        m = int(rng.integers(1, 8))
        layers.append(Dense(n, m, "relu"))
        n = m
    layers.append(Dense(n, int(rng.integers(2, 6)), "softmax"))
    return ModelSpec(shape, layers)


@given(st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_param_count_matches_weight_elements(seed):
    spec = init_weights(random_spec(np.random.default_rng(seed)), seed=seed)
    assert param_count(spec) == sum(t.size for t in spec.tensors())


def test_init_weights_deterministic():
    a = init_weights(reference_architecture(), seed=5)
    b = init_weights(reference_architecture(), seed=5)
    for x, y in zip(a.tensors(), b.tensors()):
        np.testing.assert_array_equal(x, y)
    assert not any(t.any() for t in a.tensors()[1::2])  # zero biases
