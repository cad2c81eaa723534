"""Uniform gateway to classifiers and embedding models.

Builtin analytic models (constant, linear, one-hidden-layer mlp, and a
fixed-seed random mlp standing in for an untrained network) cover tests and
validation scenarios; remote models speak the JSON-over-HTTP adapter
protocol. All predictions are softmax score vectors; gradients are of the
softmax output so perturbation scores and saliency live on the same scale.
"""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from . import rand
from .errors import CapabilityError, GatewayError, InputError
from .segmentation import split_axis

BUILTIN_KINDS = ("builtin-linear", "builtin-mlp", "builtin-constant", "builtin-random")
MODEL_KINDS = BUILTIN_KINDS + ("remote",)
EMBEDDER_KINDS = ("builtin-embedder", "remote")


class CallCounters:
    """Evaluation counts actually reaching the model (cache misses only)."""

    def __init__(self):
        self._lock = threading.Lock()
        self.predict_images = 0
        self.gradient_calls = 0
        self.embed_patches = 0

    def add(self, field_name: str, count: int) -> None:
        with self._lock:
            setattr(self, field_name, getattr(self, field_name) + count)

    def snapshot(self) -> dict:
        return {
            "predict_images": self.predict_images,
            "gradient_calls": self.gradient_calls,
            "embed_patches": self.embed_patches,
        }


@dataclass(eq=False)
class ModelHandle:
    id: str
    kind: str
    input_shape: tuple[int, int, int]
    class_names: list[str]
    supports_gradient: bool
    backend: object
    counters: CallCounters = field(default_factory=CallCounters)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS + ("builtin-embedder",):
            raise InputError(f"unknown model kind {self.kind!r}")
        if not self.class_names:
            raise InputError("class_names must be non-empty")
        if any(d < 1 for d in self.input_shape):
            raise InputError("input_shape dimensions must be >= 1")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise InputError(f"model {self.id!r} has no class {name!r}") from None


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(images, input_shape) -> np.ndarray:
    batch = np.stack([np.asarray(img, dtype=np.float64) for img in images])
    if batch.shape[1:] != tuple(input_shape):
        raise InputError(
            f"image shape {batch.shape[1:]} does not match model input {tuple(input_shape)}"
        )
    return batch


def predict(model: ModelHandle, images: list[np.ndarray]) -> list[np.ndarray]:
    """Softmax scores for a batch, order preserved; pure and deterministic."""
    if not images:
        return []
    batch = _as_batch(images, model.input_shape)
    scores = model.backend.predict(batch)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(images), model.num_classes):
        raise GatewayError(
            f"model {model.id!r} returned scores of shape {scores.shape}"
        )
    sums = scores.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-4):
        raise GatewayError(f"model {model.id!r} returned non-normalized scores")
    model.counters.add("predict_images", len(images))
    return [row.astype(np.float32) for row in scores]


def gradient(model: ModelHandle, image: np.ndarray, class_index: int) -> np.ndarray:
    """d(softmax score of class_index)/d(pixel), evaluated at `image`."""
    if not model.supports_gradient:
        raise CapabilityError(f"model {model.id!r} does not support gradients")
    if not 0 <= class_index < model.num_classes:
        raise InputError(f"class_index {class_index} out of range")
    batch = _as_batch([image], model.input_shape)
    model.counters.add("gradient_calls", 1)
    return model.backend.softmax_grad(batch, class_index)[0]


def gradient_batch(
    model: ModelHandle,
    images: list[np.ndarray] | np.ndarray,
    class_indices: list[int],
    space: str = "softmax",
) -> np.ndarray:
    """Gradients for several images and classes at once.

    Returns an array shaped (len(class_indices), N, H, W, C). `space`
    selects the output being differentiated: "softmax" (the score fed to
    perturbation analysis) or "logit".
    """
    if not model.supports_gradient:
        raise CapabilityError(f"model {model.id!r} does not support gradients")
    for idx in class_indices:
        if not 0 <= idx < model.num_classes:
            raise InputError(f"class_index {idx} out of range")
    batch = (
        np.asarray(images, dtype=np.float64)
        if isinstance(images, np.ndarray)
        else _as_batch(images, model.input_shape)
    )
    model.counters.add("gradient_calls", batch.shape[0] * len(class_indices))
    if space == "softmax":
        if hasattr(model.backend, "softmax_grad_multi"):
            return model.backend.softmax_grad_multi(batch, class_indices)
        return np.stack(
            [model.backend.softmax_grad(batch, idx) for idx in class_indices]
        )
    if space == "logit":
        if not hasattr(model.backend, "logit_grad_single"):
            raise CapabilityError(f"model {model.id!r} has no logit gradients")
        return np.stack(
            [model.backend.logit_grad_single(batch, idx) for idx in class_indices]
        )
    raise InputError(f"unknown gradient space {space!r}")


def embed(embedder: ModelHandle, patches: list[np.ndarray]) -> list[np.ndarray]:
    """Fixed-dimension embedding per patch, order preserved."""
    if not patches:
        raise InputError("embed requires at least one patch")
    arrays = [np.asarray(p, dtype=np.float64) for p in patches]
    vectors = embedder.backend.embed(arrays)
    dims = {len(v) for v in vectors}
    if len(vectors) != len(patches) or len(dims) != 1:
        raise GatewayError(f"embedder {embedder.id!r} returned inconsistent vectors")
    embedder.counters.add("embed_patches", len(patches))
    return [np.asarray(v, dtype=np.float64) for v in vectors]


class _AnalyticBackend:
    """Shared softmax/gradient plumbing for backends exposing logits."""

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return softmax(self.logits(batch))

    def softmax_grad(self, batch: np.ndarray, class_index: int) -> np.ndarray:
        return self.softmax_grad_multi(batch, [class_index])[0]

    def softmax_grad_multi(self, batch: np.ndarray, class_indices) -> np.ndarray:
        scores = softmax(self.logits(batch))  # (N, K)
        grads = self.logit_grads(batch)  # (N, K, H, W, C)
        avg = np.einsum("nk,nk...->n...", scores, grads)
        out = []
        for idx in class_indices:
            weight = scores[:, idx].reshape((-1,) + (1,) * (grads.ndim - 2))
            out.append(weight * (grads[:, idx] - avg))
        return np.stack(out)

    def logit_grad_single(self, batch: np.ndarray, class_index: int) -> np.ndarray:
        return self.logit_grads(batch)[:, class_index]


class ConstantBackend(_AnalyticBackend):
    def __init__(self, num_classes: int, input_shape):
        self.num_classes = num_classes
        self.input_shape = tuple(input_shape)

    def logits(self, batch):
        return np.zeros((batch.shape[0], self.num_classes))

    def logit_grads(self, batch):
        return np.zeros((batch.shape[0], self.num_classes) + self.input_shape)


class LinearBackend(_AnalyticBackend):
    """logit_c = <W_c, x> + b_c with W shaped (K, H, W, C)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)

    def logits(self, batch):
        flat = batch.reshape(batch.shape[0], -1)
        return flat @ self.weights.reshape(self.weights.shape[0], -1).T + self.bias

    def logit_grads(self, batch):
        return np.broadcast_to(
            self.weights[None], (batch.shape[0],) + self.weights.shape
        ).copy()


class MlpBackend(_AnalyticBackend):
    """One tanh hidden layer plus an optional linear skip path."""

    def __init__(self, hidden_w, hidden_b, out_w, out_b, skip_w=None):
        self.hidden_w = np.asarray(hidden_w, dtype=np.float64)  # (J, P)
        self.hidden_b = np.asarray(hidden_b, dtype=np.float64)  # (J,)
        self.out_w = np.asarray(out_w, dtype=np.float64)  # (K, J)
        self.out_b = np.asarray(out_b, dtype=np.float64)  # (K,)
        self.skip_w = None if skip_w is None else np.asarray(skip_w, dtype=np.float64)

    def logits(self, batch):
        flat = batch.reshape(batch.shape[0], -1)
        hidden = np.tanh(flat @ self.hidden_w.T + self.hidden_b)
        z = hidden @ self.out_w.T + self.out_b
        if self.skip_w is not None:
            z = z + flat @ self.skip_w.reshape(self.skip_w.shape[0], -1).T
        return z

    def logit_grads(self, batch):
        n = batch.shape[0]
        shape = batch.shape[1:]
        flat = batch.reshape(n, -1)
        hidden = np.tanh(flat @ self.hidden_w.T + self.hidden_b)  # (N, J)
        act_grad = 1.0 - hidden**2  # (N, J)
        # d z_k / d x_p = sum_j out_w[k,j] * act_grad[n,j] * hidden_w[j,p]
        grads = np.einsum("kj,nj,jp->nkp", self.out_w, act_grad, self.hidden_w)
        if self.skip_w is not None:
            grads = grads + self.skip_w.reshape(1, self.skip_w.shape[0], -1)
        return grads.reshape((n, self.out_w.shape[0]) + shape)


class GridMeanEmbedder:
    """3x3 spatial grid of per-channel means; 9*C dimensions per patch."""

    def __init__(self, channels: int):
        self.channels = channels

    def embed(self, patches):
        vectors = []
        for patch in patches:
            arr = np.asarray(patch, dtype=np.float64)
            if arr.ndim != 3 or arr.shape[2] != self.channels:
                raise InputError(
                    f"embedder expects (h,w,{self.channels}) patches, got {arr.shape}"
                )
            fallback = arr.mean(axis=(0, 1))
            cells = []
            for top, bottom in split_axis(arr.shape[0], 3):
                for left, right in split_axis(arr.shape[1], 3):
                    block = arr[top:bottom, left:right]
                    cells.append(block.mean(axis=(0, 1)) if block.size else fallback)
            vectors.append(np.concatenate(cells))
        return vectors


class RemoteBackend:
    """Client for the adapter wire protocol (JSON over HTTP)."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def call(self, endpoint: str, payload: dict) -> dict:
        req = urllib.request.Request(
            self.base_url + endpoint,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            body = exc.read().decode("utf-8", "replace")
            if exc.code == 501:
                raise CapabilityError(f"remote endpoint {endpoint} unsupported: {body}")
            raise GatewayError(
                f"remote call {endpoint} failed with HTTP {exc.code}",
                status=exc.code,
                body=body,
            ) from exc
        except urllib.error.URLError as exc:
            raise GatewayError(f"remote call {endpoint} failed: {exc.reason}") from exc

    def info(self) -> dict:
        return self.call("/info", {})

    def predict(self, batch: np.ndarray) -> np.ndarray:
        shape = list(batch.shape[1:])
        payload = {
            "images": [img.ravel().tolist() for img in batch],
            "shape": shape,
        }
        return np.asarray(self.call("/predict", payload)["scores"], dtype=np.float64)

    def softmax_grad(self, batch: np.ndarray, class_index: int) -> np.ndarray:
        grads = []
        for img in batch:
            payload = {
                "image": img.ravel().tolist(),
                "shape": list(img.shape),
                "class_index": int(class_index),
            }
            flat = self.call("/gradient", payload)["gradient"]
            grads.append(np.asarray(flat, dtype=np.float64).reshape(img.shape))
        return np.stack(grads)

    def embed(self, patches):
        payload = {
            "patches": [
                {"data": p.ravel().tolist(), "shape": list(p.shape)} for p in patches
            ]
        }
        return [
            np.asarray(v, dtype=np.float64)
            for v in self.call("/embed", payload)["embeddings"]
        ]


def constant_model(class_names, input_shape, model_id="constant") -> ModelHandle:
    return ModelHandle(
        id=model_id,
        kind="builtin-constant",
        input_shape=tuple(input_shape),
        class_names=list(class_names),
        supports_gradient=False,
        backend=ConstantBackend(len(class_names), input_shape),
    )


def linear_model(weights, bias, class_names, model_id="linear") -> ModelHandle:
    weights = np.asarray(weights, dtype=np.float64)
    return ModelHandle(
        id=model_id,
        kind="builtin-linear",
        input_shape=tuple(weights.shape[1:]),
        class_names=list(class_names),
        supports_gradient=True,
        backend=LinearBackend(weights, bias),
    )


def mlp_model(
    hidden_w, hidden_b, out_w, out_b, class_names, input_shape, skip_w=None,
    model_id="mlp", kind="builtin-mlp", supports_gradient=True,
) -> ModelHandle:
    return ModelHandle(
        id=model_id,
        kind=kind,
        input_shape=tuple(input_shape),
        class_names=list(class_names),
        supports_gradient=supports_gradient,
        backend=MlpBackend(hidden_w, hidden_b, out_w, out_b, skip_w),
    )


def random_model(
    seed, class_names, input_shape, hidden=16, scale=0.2, model_id="random"
) -> ModelHandle:
    """Fixed-seed randomly weighted mlp; stands in for an untrained network.

    Reported gradient-incapable: attribution falls back to perturbation only,
    mirroring how an untrained opponent is driven in validation runs. The
    weight scale keeps softmax outputs in the near-uniform regime a large
    untrained network would produce.
    """
    rng = rand.make_rng(seed, "random-model")
    pixels = int(np.prod(input_shape))
    k = len(class_names)
    hidden_w = rand.normal(rng, (hidden, pixels), scale / np.sqrt(pixels))
    hidden_b = rand.normal(rng, (hidden,), 0.1)
    out_w = rand.normal(rng, (k, hidden), scale / np.sqrt(hidden))
    out_b = rand.normal(rng, (k,), 0.1)
    return mlp_model(
        hidden_w, hidden_b, out_w, out_b, class_names, input_shape,
        model_id=model_id, kind="builtin-random", supports_gradient=False,
    )


def grid_mean_embedder(channels=3, embedder_id="grid-means") -> ModelHandle:
    return ModelHandle(
        id=embedder_id,
        kind="builtin-embedder",
        input_shape=(1, 1, channels),
        class_names=["_embedding"],
        supports_gradient=False,
        backend=GridMeanEmbedder(channels),
    )


def remote_model(url, model_id="remote", timeout=30.0) -> ModelHandle:
    backend = RemoteBackend(url, timeout)
    info = backend.info()
    return ModelHandle(
        id=model_id,
        kind="remote",
        input_shape=tuple(info["input_shape"]),
        class_names=list(info["class_names"]),
        supports_gradient=bool(info.get("supports_gradient", False)),
        backend=backend,
    )


def remote_embedder(url, embedder_id="remote-embedder", timeout=30.0) -> ModelHandle:
    backend = RemoteBackend(url, timeout)
    info = backend.info()
    return ModelHandle(
        id=embedder_id,
        kind="remote",
        input_shape=tuple(info.get("input_shape", (1, 1, 3))),
        class_names=["_embedding"],
        supports_gradient=False,
        backend=backend,
    )


_BUILDERS: dict = {}


def register_builder(name: str, fn) -> None:
    """Register a handcrafted model constructor usable from model specs."""
    _BUILDERS[name] = fn


def build_model(spec: dict) -> ModelHandle:
    """Construct a model handle from a JSON-able spec dict."""
    spec = dict(spec)
    builder = spec.pop("builder", None)
    if builder is not None:
        if builder not in _BUILDERS:
            raise InputError(f"unknown model builder {builder!r}")
        return _BUILDERS[builder](**spec.get("params", {}), model_id=spec.get("id", builder))
    kind = spec.get("kind")
    model_id = spec.get("id", kind or "model")
    if kind == "builtin-constant":
        return constant_model(spec["classes"], spec["input_shape"], model_id)
    if kind == "builtin-linear":
        return linear_model(spec["weights"], spec["bias"], spec["classes"], model_id)
    if kind == "builtin-mlp":
        return mlp_model(
            spec["hidden_w"], spec["hidden_b"], spec["out_w"], spec["out_b"],
            spec["classes"], spec["input_shape"], spec.get("skip_w"), model_id,
        )
    if kind == "builtin-random":
        return random_model(
            spec.get("seed", 0), spec["classes"], spec["input_shape"],
            spec.get("hidden", 16), spec.get("scale", 0.2), model_id,
        )
    if kind == "remote":
        return remote_model(spec["url"], model_id, spec.get("timeout", 30.0))
    raise InputError(f"unknown model kind {kind!r}")


def build_embedder(spec: dict) -> ModelHandle:
    kind = spec.get("kind", "builtin-embedder")
    embedder_id = spec.get("id", kind)
    if kind == "builtin-embedder":
        return grid_mean_embedder(spec.get("channels", 3), embedder_id)
    if kind == "remote":
        return remote_embedder(spec["url"], embedder_id, spec.get("timeout", 30.0))
    raise InputError(f"unknown embedder kind {kind!r}")
