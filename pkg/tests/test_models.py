import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segcompare.errors import CapabilityError, InputError
from segcompare.models import (
    constant_model,
    embed,
    gradient,
    gradient_batch,
    grid_mean_embedder,
    linear_model,
    predict,
    random_model,
    softmax,
)

from conftest import make_random_mlp, random_image


def central_difference(model, image, class_index, h=1e-3):
    """Finite-difference oracle for d softmax_c / d pixel."""
    grad = np.zeros_like(image, dtype=np.float64)
    flat = grad.reshape(-1)
    base = image.astype(np.float64)
    for i in range(flat.size):
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += h
        minus[i] -= h
        s_plus = predict(model, [plus.reshape(image.shape)])[0][class_index]
        s_minus = predict(model, [minus.reshape(image.shape)])[0][class_index]
        flat[i] = (float(s_plus) - float(s_minus)) / (2 * h)
    return grad


def test_constant_model_uniform_scores():
    model = constant_model(["a", "b", "c"], (2, 2, 1))
    image = np.full((2, 2, 1), 0.7, dtype=np.float32)
    scores = predict(model, [image])[0]
    assert np.allclose(scores, 1.0 / 3.0, atol=1e-6)
    assert abs(float(scores.sum()) - 1.0) < 1e-4


def test_linear_model_softmax_of_dot_products(two_class_linear):
    image = np.full((1, 2, 1), 0.5, dtype=np.float32)
    scores = predict(two_class_linear, [image])[0]
    assert scores == pytest.approx([0.2689, 0.7311], abs=1e-4)


def test_batch_of_identical_images_identical_scores(two_class_linear):
    image = random_image(3, (1, 2, 1))
    a, b = predict(two_class_linear, [image, image])
    assert np.array_equal(a, b)


def test_predict_is_pure(two_class_linear):
    image = random_image(4, (1, 2, 1))
    first = predict(two_class_linear, [image])[0]
    second = predict(two_class_linear, [image])[0]
    assert np.array_equal(first, second)


def test_predict_shape_mismatch_is_input_error(two_class_linear):
    with pytest.raises(InputError):
        predict(two_class_linear, [np.zeros((2, 2, 1), dtype=np.float32)])


def test_linear_gradient_matches_finite_differences(two_class_linear):
    # 100 (image, class) draws against the central-difference oracle
    for seed in range(50):
        image = random_image(seed, (1, 2, 1))
        for class_index in (0, 1):
            grad = gradient(two_class_linear, image, class_index)
            oracle = central_difference(two_class_linear, image, class_index)
            assert np.allclose(grad, oracle, atol=1e-4)


def test_linear_gradient_closed_form(two_class_linear):
    image = random_image(11, (1, 2, 1))
    scores = softmax(two_class_linear.backend.logits(image[None].astype(np.float64)))[0]
    w = two_class_linear.backend.weights
    expected = scores[1] * (w[1] - (scores[0] * w[0] + scores[1] * w[1]))
    assert np.allclose(gradient(two_class_linear, image, 1), expected, atol=1e-12)


def test_mlp_gradient_matches_finite_differences():
    model = make_random_mlp(0, input_shape=(2, 2, 1), hidden=6)
    for seed in range(10):
        image = random_image(100 + seed, (2, 2, 1))
        for class_index in range(3):
            grad = gradient(model, image, class_index)
            oracle = central_difference(model, image, class_index)
            assert np.allclose(grad, oracle, atol=1e-4)


def test_gradient_class_out_of_range(two_class_linear):
    with pytest.raises(InputError):
        gradient(two_class_linear, random_image(1, (1, 2, 1)), 5)


def test_gradient_unsupported_model_is_capability_error():
    model = constant_model(["a", "b"], (1, 2, 1))
    with pytest.raises(CapabilityError):
        gradient(model, np.zeros((1, 2, 1), dtype=np.float32), 0)
    rand_model = random_model(7, ["a", "b"], (1, 2, 1))
    assert rand_model.supports_gradient is False
    with pytest.raises(CapabilityError):
        gradient(rand_model, np.zeros((1, 2, 1), dtype=np.float32), 0)


def test_random_model_is_deterministic_per_seed():
    image = random_image(9, (2, 2, 1))
    a = predict(random_model(3, ["x", "y"], (2, 2, 1)), [image])[0]
    b = predict(random_model(3, ["x", "y"], (2, 2, 1)), [image])[0]
    c = predict(random_model(4, ["x", "y"], (2, 2, 1)), [image])[0]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_logit_gradient_space(two_class_linear):
    image = random_image(5, (1, 2, 1))
    grads = gradient_batch(two_class_linear, [image], [1], space="logit")
    assert np.allclose(grads[0][0], np.ones((1, 2, 1)), atol=1e-12)


def test_embedder_constant_patch():
    embedder = grid_mean_embedder(channels=3)
    patch = np.full((6, 6, 3), 0.5, dtype=np.float32)
    vec = embed(embedder, [patch])[0]
    assert vec.shape == (27,)
    assert np.allclose(vec, 0.5, atol=1e-7)


def test_embedder_half_split_patch():
    embedder = grid_mean_embedder(channels=3)
    patch = np.zeros((6, 6, 3), dtype=np.float32)
    patch[:, 3:, :] = 1.0
    vec = embed(embedder, [patch])[0]
    expected_row = [0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0]
    assert np.allclose(vec, np.tile(expected_row, 3), atol=1e-7)


def test_embedder_identical_patches_identical_vectors():
    embedder = grid_mean_embedder(channels=1)
    patch = random_image(8, (5, 7, 1))
    a, b = embed(embedder, [patch, patch])
    assert np.array_equal(a, b)


def test_embedder_dimension_constant_across_patch_sizes():
    embedder = grid_mean_embedder(channels=3)
    sizes = [(2, 2, 3), (3, 3, 3), (9, 5, 3), (16, 16, 3), (1, 1, 3)]
    dims = {
        embed(embedder, [np.full(s, 0.25, dtype=np.float32)])[0].shape[0]
        for s in sizes
    }
    assert dims == {27}


def test_embed_empty_input_is_error():
    with pytest.raises(InputError):
        embed(grid_mean_embedder(), [])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 3))
def test_linear_gradient_fd_property(seed, class_index):
    rng_img = random_image(seed, (2, 3, 1))
    model = make_random_mlp(seed % 5, input_shape=(2, 3, 1), classes=("a", "b", "c", "d"))
    class_index = class_index % 4
    grad = gradient(model, rng_img, class_index)
    oracle = central_difference(model, rng_img, class_index)
    assert np.allclose(grad, oracle, atol=1e-4)
