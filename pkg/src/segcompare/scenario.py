"""Synthetic watermark scenario: dataset generator plus handcrafted scorers.

Generates two-class 32x32 images (a red blob in the top or bottom half) and
stamps a small white patch into a blob-free grid cell of half the
bottom-blob images. Model A scores blob position only and is exactly
invariant to the stamp; model B adds a white-patch detector to its
bottom-class logit, recreating a model that learned an accidental shortcut.
Both models are smooth (sigmoid window pooling), analytically
differentiable, and deterministic.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import rand
from .errors import InputError
from .models import ModelHandle, _AnalyticBackend, register_builder
from .pngio import save_image

CLASS_NAMES = ["blob-top", "blob-bottom"]
IMAGE_SIZE = 32
WINDOW = 4
STAMP = 4


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ComponentBackend(_AnalyticBackend):
    """Logits assembled from linear-sum and sigmoid window-detector terms.

    Each component projects the image onto one channel combination and
    either sums a pixel region linearly or pools sigmoid responses of
    sliding-window means over a window-position mask. Equivalent to a
    one-hidden-layer network with a skip path, so gradients are exact.
    """

    def __init__(self, input_shape, components, bias):
        self.input_shape = tuple(input_shape)
        self.components = components  # list of (class_index, spec dict)
        self.bias = np.asarray(bias, dtype=np.float64)

    def _project(self, batch: np.ndarray, proj: np.ndarray) -> np.ndarray:
        return np.einsum("nhwc,c->nhw", batch, proj)

    def logits(self, batch: np.ndarray) -> np.ndarray:
        n = batch.shape[0]
        z = np.tile(self.bias, (n, 1))
        for class_index, comp in self.components:
            y = self._project(batch, comp["proj"])
            if comp["type"] == "linear":
                z[:, class_index] += comp["coeff"] * np.einsum(
                    "nhw,hw->n", y, comp["pixel_mask"]
                )
            else:
                windows = sliding_window_view(y, (comp["window"], comp["window"]), axis=(1, 2))
                means = windows.mean(axis=(3, 4))
                h = _sigmoid(comp["sharp"] * (means - comp["thresh"]))
                z[:, class_index] += comp["gain"] * np.einsum(
                    "nhw,hw->n", h, comp["window_mask"]
                )
        return z

    def logit_grads(self, batch: np.ndarray) -> np.ndarray:
        n = batch.shape[0]
        k = self.bias.shape[0]
        grads = np.zeros((n, k) + self.input_shape)
        for class_index, comp in self.components:
            proj = comp["proj"]
            if comp["type"] == "linear":
                dy = comp["coeff"] * np.broadcast_to(
                    comp["pixel_mask"], (n,) + comp["pixel_mask"].shape
                )
            else:
                y = self._project(batch, proj)
                w = comp["window"]
                windows = sliding_window_view(y, (w, w), axis=(1, 2))
                means = windows.mean(axis=(3, 4))
                h = _sigmoid(comp["sharp"] * (means - comp["thresh"]))
                weight = (
                    comp["gain"] * comp["sharp"] * h * (1.0 - h) * comp["window_mask"]
                ) / (w * w)
                dy = np.zeros((n,) + self.input_shape[:2])
                hw, ww = weight.shape[1], weight.shape[2]
                for di in range(w):
                    for dj in range(w):
                        dy[:, di : di + hw, dj : dj + ww] += weight
            grads[:, class_index] += dy[:, :, :, None] * proj[None, None, None, :]
        return grads


def _half_masks(size: int):
    top = np.zeros((size, size))
    top[: size // 2] = 1.0
    bottom = np.zeros((size, size))
    bottom[size // 2 :] = 1.0
    return top, bottom


def _window_half_masks(size: int, window: int):
    """Windows assigned to the image half containing their center."""
    n = size - window + 1
    centers = np.arange(n) + (window - 1) / 2.0
    top = np.zeros((n, n))
    top[centers < size / 2] = 1.0
    return top, 1.0 - top


def blob_position_scorer(
    image_size: int = IMAGE_SIZE,
    gain: float = 0.25,
    sharp: float = 20.0,
    thresh: float = 0.3,
    model_id: str = "blob_scorer",
) -> ModelHandle:
    """Scores blob position via red-excess window detectors per half.

    Reads only R-B, so any white (or gray) stamp is exactly invisible to it.
    """
    proj = np.array([1.0, 0.0, -1.0])
    top, bottom = _window_half_masks(image_size, WINDOW)
    components = [
        (0, {"type": "detector", "proj": proj, "window": WINDOW, "window_mask": top,
             "gain": gain, "sharp": sharp, "thresh": thresh}),
        (1, {"type": "detector", "proj": proj, "window": WINDOW, "window_mask": bottom,
             "gain": gain, "sharp": sharp, "thresh": thresh}),
    ]
    backend = ComponentBackend((image_size, image_size, 3), components, [0.0, 0.0])
    return ModelHandle(
        id=model_id,
        kind="builtin-mlp",
        input_shape=(image_size, image_size, 3),
        class_names=list(CLASS_NAMES),
        supports_gradient=True,
        backend=backend,
    )


def blob_watermark_scorer(
    image_size: int = IMAGE_SIZE,
    blob_coeff: float = 0.04,
    mark_gain: float = 0.18,
    mark_sharp: float = 30.0,
    mark_thresh: float = 0.55,
    model_id: str = "mark_sensitive",
) -> ModelHandle:
    """Blob-position scorer whose bottom-class logit also rewards any
    bright white patch, pooled smoothly over every window position."""
    proj_rb = np.array([1.0, 0.0, -1.0])
    proj_g = np.array([0.0, 1.0, 0.0])
    top, bottom = _half_masks(image_size)
    n = image_size - WINDOW + 1
    components = [
        (0, {"type": "linear", "proj": proj_rb, "pixel_mask": top, "coeff": blob_coeff}),
        (1, {"type": "linear", "proj": proj_rb, "pixel_mask": bottom, "coeff": blob_coeff}),
        (1, {"type": "detector", "proj": proj_g, "window": WINDOW,
             "window_mask": np.ones((n, n)), "gain": mark_gain,
             "sharp": mark_sharp, "thresh": mark_thresh}),
    ]
    backend = ComponentBackend((image_size, image_size, 3), components, [0.0, 0.0])
    return ModelHandle(
        id=model_id,
        kind="builtin-mlp",
        input_shape=(image_size, image_size, 3),
        class_names=list(CLASS_NAMES),
        supports_gradient=True,
        backend=backend,
    )


register_builder("blob_position_scorer", blob_position_scorer)
register_builder("blob_watermark_scorer", blob_watermark_scorer)

_BLOB_RHO = 2.5
_BLOB_SUPPORT = 6
_BG = 0.1
_BLOB_GAIN = 0.8


def _render_image(size: int, cy: int, cx: int) -> np.ndarray:
    image = np.full((size, size, 3), _BG, dtype=np.float64)
    yy, xx = np.mgrid[0:size, 0:size]
    r2 = (yy - cy) ** 2 + (xx - cx) ** 2
    cutoff = np.exp(-(_BLOB_SUPPORT**2) / (2 * _BLOB_RHO**2))
    g = np.clip(np.exp(-r2 / (2 * _BLOB_RHO**2)) - cutoff, 0.0, None) / (1.0 - cutoff)
    image[:, :, 0] += _BLOB_GAIN * g
    return np.clip(image, 0.0, 1.0)


def _eligible_stamp_cells(size: int, cy: int, cx: int) -> list[tuple[int, int]]:
    """Grid cells whose pixels the blob cannot reach."""
    cell = size // 4
    cells = []
    for row in range(4):
        for col in range(4):
            top, left = row * cell, col * cell
            if (
                top + cell <= cy - _BLOB_SUPPORT
                or top > cy + _BLOB_SUPPORT
                or left + cell <= cx - _BLOB_SUPPORT
                or left > cx + _BLOB_SUPPORT
            ):
                cells.append((row, col))
    return cells


def generate_watermark_scenario(
    seed: int,
    n_images: int,
    watermark_rate: float = 0.5,
    out_dir=".",
    label_noise: float = 0.1,
) -> tuple[Path, dict, dict]:
    """Write the synthetic dataset and return (manifest path, spec A, spec B).

    Emits PNGs, a `manifest.csv`, and a `scenario.json` recording per-image
    ground truth (blob position, label flip, stamp cell) plus exact counts.
    """
    if n_images < 40:
        raise InputError("scenario needs at least 40 images")
    size = IMAGE_SIZE
    cell = size // 4
    out = Path(out_dir)
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    rng = rand.make_rng(seed, "watermark-scenario")

    entries = []
    image_meta = []
    stamped_count = 0
    for i in range(n_images):
        true_class = i % 2
        if true_class == 0:
            cy = rand.randint(rng, 8, 11)
        else:
            cy = rand.randint(rng, 20, 23)
        cx = rand.randint(rng, 8, 23)
        image = _render_image(size, cy, cx)

        stamp = None
        if true_class == 1 and rng.random() < watermark_rate:
            cells = _eligible_stamp_cells(size, cy, cx)
            row, col = cells[rand.randint(rng, 0, len(cells) - 1)]
            off_r = rand.randint(rng, 0, cell - STAMP)
            off_c = rand.randint(rng, 0, cell - STAMP)
            top, left = row * cell + off_r, col * cell + off_c
            image[top : top + STAMP, left : left + STAMP, :] = 1.0
            stamp = {"cell": [row, col], "bbox": [top, left, STAMP, STAMP]}
            stamped_count += 1

        label_class = true_class
        if rng.random() < label_noise:
            label_class = 1 - true_class

        name = f"img_{i:04d}.png"
        save_image(images_dir / name, image)
        rel_path = f"images/{name}"
        entries.append((rel_path, CLASS_NAMES[label_class]))
        image_meta.append(
            {
                "path": rel_path,
                "label": CLASS_NAMES[label_class],
                "true_class": CLASS_NAMES[true_class],
                "label_flipped": label_class != true_class,
                "blob": {"cy": cy, "cx": cx},
                "watermarked": stamp is not None,
                "stamp": stamp,
            }
        )

    manifest_path = out / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "label"])
        writer.writerows(entries)

    spec_a = {"kind": "builtin-mlp", "builder": "blob_position_scorer",
              "id": "blob_scorer", "params": {"image_size": size}}
    spec_b = {"kind": "builtin-mlp", "builder": "blob_watermark_scorer",
              "id": "mark_sensitive", "params": {"image_size": size}}

    scenario = {
        "seed": seed,
        "n_images": n_images,
        "watermark_rate": watermark_rate,
        "label_noise": label_noise,
        "class_names": CLASS_NAMES,
        "target_class": CLASS_NAMES[1],
        "counts": {
            "class_bottom": sum(1 for m in image_meta if m["true_class"] == CLASS_NAMES[1]),
            "watermarked": stamped_count,
        },
        "model_a": spec_a,
        "model_b": spec_b,
        "images": image_meta,
    }
    with open(out / "scenario.json", "w", encoding="utf-8") as fh:
        json.dump(scenario, fh, indent=2, sort_keys=True)
    return manifest_path, spec_a, spec_b


def stamped_segment_keys(scenario: dict) -> set[tuple[str, int, int]]:
    """(image_id, row, col) of every watermark-stamped grid cell."""
    keys = set()
    for meta in scenario["images"]:
        if meta["watermarked"]:
            row, col = meta["stamp"]["cell"]
            keys.add((meta["path"], row, col))
    return keys
