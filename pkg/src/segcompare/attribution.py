"""Saliency pre-scores, top-segment selection, and exact segment Shapley values.

Per image the engine scores every grid cell with an integrated-gradients
saliency sum for the model's top predicted classes, keeps the highest-scoring
cells, and then computes exact Shapley values over those cells: the
characteristic function is the model's softmax score with the absent cells
replaced by a Gaussian blur, enumerated over all coalitions.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ResourceError
from .models import ModelHandle, gradient_batch, predict
from .segmentation import (
    SegmentRef,
    blurred_for_exclusion,
    composite_excluded,
    default_sigma,
    grid_segments,
)

MAX_EXACT_SEGMENTS = 12


@dataclass(frozen=True)
class AttributionConfig:
    top_classes: int = 5
    segments_per_image: int = 5
    ig_steps: int = 128
    grid_rows: int = 4
    grid_cols: int = 4
    blur_sigma: float | str = "auto"
    ig_space: str = "softmax"
    baseline: str | float = "black"

    def __post_init__(self):
        if self.segments_per_image < 1 or self.segments_per_image > self.grid_rows * self.grid_cols:
            raise InputError("segments_per_image must be within the grid size")
        if self.top_classes < 1:
            raise InputError("top_classes must be positive")
        if self.ig_steps < 8:
            raise InputError("ig_steps must be at least 8")

    def baseline_image(self, shape) -> np.ndarray:
        if self.baseline == "black":
            return np.zeros(shape, dtype=np.float32)
        return np.full(shape, float(self.baseline), dtype=np.float32)


@dataclass
class SegmentAttributionRecord:
    seg: SegmentRef
    source_model: str
    quadrant: str
    shapley: dict[str, float]
    prescore: dict[str, float]
    embedding: np.ndarray | None = field(default=None, repr=False)


def integrated_gradients(
    model: ModelHandle,
    image: np.ndarray,
    baseline: np.ndarray,
    class_index: int,
    steps: int,
    space: str = "softmax",
) -> np.ndarray:
    """Straight-line integrated gradients, midpoint Riemann rule."""
    sal = _integrated_gradients_multi(model, image, baseline, [class_index], steps, space)
    return sal[0]


def _integrated_gradients_multi(
    model, image, baseline, class_indices, steps, space
) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != image.shape:
        raise InputError("baseline shape must match image shape")
    delta = image - baseline
    alphas = (np.arange(steps, dtype=np.float64) + 0.5) / steps
    points = baseline[None] + alphas[:, None, None, None] * delta[None]
    grads = gradient_batch(model, points, class_indices, space)  # (C, steps, ...)
    return delta[None] * grads.mean(axis=1)


def segment_prescore(
    saliency: np.ndarray, segments: list[SegmentRef]
) -> dict[SegmentRef, float]:
    """Signed sum of saliency inside each segment's bbox."""
    sal = np.asarray(saliency, dtype=np.float64)
    scores = {}
    for seg in segments:
        t, l, h, w = seg.bbox
        scores[seg] = float(sal[t : t + h, l : l + w].sum())
    return scores


def select_top_segments(
    prescores: dict[str, dict[SegmentRef, float]], m: int
) -> list[SegmentRef]:
    """Top-m segments by the max pre-score across classes, row-major ties."""
    if not prescores:
        raise InputError("no pre-scores supplied")
    segments = None
    for per_seg in prescores.values():
        keys = set(per_seg)
        segments = keys if segments is None else segments & keys
    segments = sorted(segments, key=lambda s: (s.row, s.col))
    if m > len(segments):
        raise InputError(f"cannot select {m} of {len(segments)} segments")
    aggregate = {
        seg: max(per_seg[seg] for per_seg in prescores.values()) for seg in segments
    }
    ranked = sorted(segments, key=lambda s: (-aggregate[s], s.row, s.col))
    return ranked[:m]


def shapley_weights(m: int) -> list[float]:
    """Coalition-size weights |S|!(m-|S|-1)!/m! for the exact formula."""
    fact = [math.factorial(i) for i in range(m + 1)]
    return [fact[s] * fact[m - s - 1] / fact[m] for s in range(m)]


def exact_shapley_from_values(m: int, values: np.ndarray) -> np.ndarray:
    """Exact Shapley values from per-coalition worths.

    `values` has one row per coalition bitmask (2^m rows; bit j set means
    segment j present) and one column per scored class. Accumulates in
    float64; returns (m, n_classes).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != 1 << m:
        raise InputError(f"expected {1 << m} coalition values, got {values.shape[0]}")
    weights = shapley_weights(m)
    popcounts = [bin(mask).count("1") for mask in range(1 << m)]
    phi = np.zeros((m, values.shape[1]))
    for i in range(m):
        bit = 1 << i
        for mask in range(1 << m):
            if mask & bit:
                continue
            w = weights[popcounts[mask]]
            phi[i] += w * (values[mask | bit] - values[mask])
    return phi


def shapley_exact(
    model: ModelHandle,
    image: np.ndarray,
    selected: list[SegmentRef],
    class_indices: list[int],
    blur_sigma: float,
    scorer=None,
) -> dict[tuple[SegmentRef, int], float]:
    """Exact Shapley values for the selected segments under blur exclusion.

    The characteristic function of a coalition is the softmax score of the
    image with the *other* selected segments blurred; non-selected segments
    are never touched. One model call per coalition serves every class.
    `scorer` (images -> list of score vectors) defaults to the gateway
    predict and is the hook for cached evaluation.
    """
    m = len(selected)
    if m > MAX_EXACT_SEGMENTS:
        raise ResourceError(
            f"{m} segments need {1 << m} evaluations; exact enumeration is "
            f"capped at {MAX_EXACT_SEGMENTS} (sampled estimation is out of scope)"
        )
    if not class_indices:
        raise InputError("class_indices must be non-empty")
    scorer = scorer or (lambda images: predict(model, images))

    blurred = blurred_for_exclusion(image, blur_sigma)
    composites = []
    for mask in range(1 << m):
        excluded = [selected[j] for j in range(m) if not mask & (1 << j)]
        composites.append(composite_excluded(image, blurred, excluded))
    scores = scorer(composites)
    values = np.asarray(
        [[float(s[c]) for c in class_indices] for s in scores], dtype=np.float64
    )
    phi = exact_shapley_from_values(m, values)
    return {
        (seg, cls): float(phi[i, j])
        for i, seg in enumerate(selected)
        for j, cls in enumerate(class_indices)
    }


def _zero_saliency(shape, classes) -> np.ndarray:
    return np.zeros((len(classes),) + tuple(shape), dtype=np.float64)


def attribute_image(
    model: ModelHandle,
    image: np.ndarray,
    image_id: str,
    quadrant: str,
    scores: np.ndarray,
    target_class: str,
    cfg: AttributionConfig,
    scorer=None,
    saliency_provider=None,
) -> list[SegmentAttributionRecord]:
    """Attribution records for one sampled image (helper of attribute_sample)."""
    class_names = model.class_names
    k_eff = min(cfg.top_classes, len(class_names))
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    top_k = [int(i) for i in order[:k_eff]]
    target_index = model.class_index(target_class)
    class_set = top_k + ([target_index] if target_index not in top_k else [])

    segments = grid_segments(
        image.shape[0], image.shape[1], cfg.grid_rows, cfg.grid_cols, image_id
    )
    sigma = (
        default_sigma(segments)
        if cfg.blur_sigma == "auto"
        else float(cfg.blur_sigma)
    )

    saliency = None
    if saliency_provider is not None:
        provided = [saliency_provider(model.id, image_id, c) for c in class_set]
        if all(p is not None for p in provided):
            saliency = np.stack([np.asarray(p, dtype=np.float64) for p in provided])
    if saliency is None:
        if model.supports_gradient:
            baseline = cfg.baseline_image(image.shape)
            saliency = _integrated_gradients_multi(
                model, image, baseline, class_set, cfg.ig_steps, cfg.ig_space
            )
        else:
            # No gradients and no injected saliency: fall back to a flat
            # zero map, leaving selection to the row-major tie-break.
            saliency = _zero_saliency(image.shape, class_set)

    prescores = {
        class_names[cls]: segment_prescore(saliency[j], segments)
        for j, cls in enumerate(class_set)
    }
    top_k_names = [class_names[c] for c in top_k]
    selected = select_top_segments(
        {name: prescores[name] for name in top_k_names}, cfg.segments_per_image
    )
    shapley = shapley_exact(model, image, selected, class_set, sigma, scorer)

    records = []
    for seg in selected:
        records.append(
            SegmentAttributionRecord(
                seg=seg,
                source_model=model.id,
                quadrant=quadrant,
                shapley={
                    class_names[cls]: shapley[(seg, cls)] for cls in class_set
                },
                prescore={
                    class_names[cls]: prescores[class_names[cls]][seg]
                    for cls in class_set
                },
            )
        )
    return records


def attribute_sample(
    model: ModelHandle,
    sample,
    target_class: str,
    cfg: AttributionConfig,
    load_image,
    scorer=None,
    saliency_provider=None,
    workers: int = 1,
) -> list[SegmentAttributionRecord]:
    """Attribution records for every member of a sample.

    Emits segments_per_image records per image, ordered by image id then
    selection rank, so output files are byte-stable across worker counts.
    """
    members = sorted(sample.members, key=lambda m: m.image_id)

    def work(member):
        return attribute_image(
            model,
            load_image(member.image_id),
            member.image_id,
            member.quadrant,
            member.scores,
            target_class,
            cfg,
            scorer,
            saliency_provider,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(work, members))
    else:
        chunks = [work(member) for member in members]
    return [record for chunk in chunks for record in chunk]


def record_to_dict(record: SegmentAttributionRecord) -> dict:
    seg = record.seg
    return {
        "image_id": seg.image_id,
        "row": seg.row,
        "col": seg.col,
        "bbox": [seg.top, seg.left, seg.height, seg.width],
        "source_model": record.source_model,
        "quadrant": record.quadrant,
        "shapley": record.shapley,
        "prescore": record.prescore,
    }


def record_from_dict(data: dict) -> SegmentAttributionRecord:
    t, l, h, w = data["bbox"]
    seg = SegmentRef(
        image_id=data["image_id"], row=data["row"], col=data["col"],
        top=t, left=l, height=h, width=w,
    )
    return SegmentAttributionRecord(
        seg=seg,
        source_model=data["source_model"],
        quadrant=data["quadrant"],
        shapley=dict(data["shapley"]),
        prescore=dict(data["prescore"]),
    )


def write_records_jsonl(path, records: list[SegmentAttributionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), sort_keys=True))
            fh.write("\n")


def read_records_jsonl(path) -> list[SegmentAttributionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records
