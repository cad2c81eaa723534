"""Bindings wrap in-process models behind the adapter wire protocol.

A binding supplies a batch predictor, an optional per-image gradient
callable, an optional patch embedder, and the declared interface metadata.
Reference bindings cover the conformance suite; wrap pretrained networks by
supplying your own callables (for embedders, extract whatever fixed-width
activation vector you consider the model's summary of a patch).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class AdapterBinding:
    predictor: Callable[[np.ndarray], np.ndarray]
    input_shape: tuple[int, int, int]
    class_names: list[str]
    gradient: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    embedder: Optional[Callable[[list[np.ndarray]], list[np.ndarray]]] = None
    apply_softmax: bool = False

    @property
    def supports_gradient(self) -> bool:
        return self.gradient is not None

    def info(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "class_names": list(self.class_names),
            "supports_gradient": self.supports_gradient,
        }

    def predict(self, batch: np.ndarray) -> np.ndarray:
        rows = np.asarray(self.predictor(batch), dtype=np.float64)
        if self.apply_softmax:
            rows = _softmax(rows)
        else:
            rows = rows / rows.sum(axis=1, keepdims=True)
        return rows


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def channel_mean_embedder(patches: list[np.ndarray]) -> list[np.ndarray]:
    """Per-channel mean of each patch; the reference embedding."""
    return [np.asarray(p, dtype=np.float64).mean(axis=(0, 1)) for p in patches]


def make_linear_binding(
    weights, bias, class_names, with_gradient: bool = True
) -> AdapterBinding:
    """Linear softmax classifier with an analytic gradient."""
    weights = np.asarray(weights, dtype=np.float64)  # (K, H, W, C)
    bias = np.asarray(bias, dtype=np.float64)
    input_shape = tuple(weights.shape[1:])
    flat_w = weights.reshape(weights.shape[0], -1)

    def predictor(batch: np.ndarray) -> np.ndarray:
        flat = batch.reshape(batch.shape[0], -1)
        return flat @ flat_w.T + bias

    def gradient(image: np.ndarray, class_index: int) -> np.ndarray:
        logits = image.reshape(1, -1) @ flat_w.T + bias
        scores = _softmax(logits)[0]
        avg = np.tensordot(scores, weights, axes=(0, 0))
        return scores[class_index] * (weights[class_index] - avg)

    return AdapterBinding(
        predictor=predictor,
        input_shape=input_shape,
        class_names=list(class_names),
        gradient=gradient if with_gradient else None,
        embedder=channel_mean_embedder,
        apply_softmax=True,
    )


def reference_bindings() -> dict[str, AdapterBinding]:
    """The bindings exercised by the conformance manifest."""
    weights = np.stack([np.zeros((1, 2, 1)), np.ones((1, 2, 1))])
    return {
        "linear": make_linear_binding(weights, [0.0, 0.0], ["neg", "pos"]),
        "nogradient": make_linear_binding(
            weights, [0.0, 0.0], ["neg", "pos"], with_gradient=False
        ),
    }
