from pathlib import Path

import numpy as np
import pytest

from segcompare import rand
from segcompare.models import linear_model, mlp_model
from segcompare.pngio import save_image


@pytest.fixture
def two_class_linear():
    """1x2x1 model: class 0 ignores the input, class 1 sums it."""
    weights = np.stack([np.zeros((1, 2, 1)), np.ones((1, 2, 1))])
    return linear_model(weights, [0.0, 0.0], ["neg", "pos"], model_id="lin")


def make_random_mlp(seed, input_shape=(4, 4, 1), classes=("a", "b", "c"), hidden=8,
                    scale=1.0, model_id="mlp"):
    rng = rand.make_rng(seed, "test-mlp")
    pixels = int(np.prod(input_shape))
    k = len(classes)
    return mlp_model(
        hidden_w=rand.normal(rng, (hidden, pixels), scale / np.sqrt(pixels)),
        hidden_b=rand.normal(rng, (hidden,), 0.2),
        out_w=rand.normal(rng, (k, hidden), scale / np.sqrt(hidden)),
        out_b=rand.normal(rng, (k,), 0.2),
        class_names=list(classes),
        input_shape=input_shape,
        model_id=model_id,
    )


def random_image(seed, shape=(4, 4, 1), low=0.2, high=0.8):
    rng = rand.make_rng(seed, "test-image")
    return rand.uniform(rng, low, high, shape).astype(np.float32)


def write_pixel_dataset(root: Path, spec):
    """Write 1-pixel PNGs plus a manifest.

    `spec` is a list of (name, pixel_value, label); returns the manifest path.
    """
    root.mkdir(parents=True, exist_ok=True)
    lines = ["image_path,label"]
    for name, value, label in spec:
        save_image(root / f"{name}.png", np.full((1, 1, 1), value, dtype=np.float32))
        lines.append(f"{name}.png,{label}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


@pytest.fixture
def pixel_gate_model():
    """1x1x1 model predicting 'pos' when the pixel is bright."""
    weights = np.stack([np.full((1, 1, 1), -4.0), np.full((1, 1, 1), 4.0)])
    return linear_model(weights, [0.0, 0.0], ["neg", "pos"], model_id="gate")
