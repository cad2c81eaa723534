"""Dataset manifest ingestion, correctness quadrants, and balanced sampling.

Images are judged one-vs-rest against a target class, giving each image a
TP/TN/FP/FN quadrant per model; the sampler then draws an equal number of
images from each quadrant (budget permitting), so both models' samples carry
a balanced confusion matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rand
from .cache import JsonCache, NullCache, image_digest
from .errors import IngestionError, InputError
from .models import ModelHandle, predict
from .pngio import load_image

QUADRANTS = ("TP", "TN", "FP", "FN")


@dataclass
class ManifestEntry:
    image_path: str
    label: str


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]

    def image_ids(self) -> list[str]:
        return [e.image_path for e in self.entries]

    def label_of(self, image_id: str) -> str:
        for entry in self.entries:
            if entry.image_path == image_id:
                return entry.label
        raise InputError(f"unknown image id {image_id!r}")

    def load(self, image_id: str) -> np.ndarray:
        return load_image(self.root / image_id)


@dataclass
class SampleMember:
    image_id: str
    quadrant: str
    scores: np.ndarray


@dataclass
class SampleSet:
    model_id: str
    target_class: str
    members: list[SampleMember]
    seed: int

    def quadrant_counts(self) -> dict[str, int]:
        counts = {q: 0 for q in QUADRANTS}
        for m in self.members:
            counts[m.quadrant] += 1
        return counts


def load_manifest(path, class_names: list[str] | None = None) -> DatasetManifest:
    """Parse a `image_path,label` CSV; validates labels and image files."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest {path} does not exist")
    root = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
            "image_path",
            "label",
        ]:
            raise IngestionError(f"manifest {path} must have header 'image_path,label'")
        for line_no, row in enumerate(reader, start=2):
            image_path = (row["image_path"] or "").strip()
            label = (row["label"] or "").strip()
            if not image_path or not label:
                raise IngestionError(f"manifest line {line_no}: empty field")
            if image_path in seen:
                raise IngestionError(f"duplicate image_path {image_path!r}")
            seen.add(image_path)
            if class_names is not None and label not in class_names:
                raise IngestionError(
                    f"label {label!r} of {image_path!r} not among model classes"
                )
            if not (root / image_path).exists():
                raise IngestionError(f"image file missing: {image_path!r}")
            entries.append(ManifestEntry(image_path, label))
    return DatasetManifest(root=root, entries=entries)


def classify_quadrant(prediction: np.ndarray, label: str, target_class: str,
                      class_names: list[str]) -> str:
    """One-vs-rest quadrant; argmax ties go to the lowest class index."""
    if label not in class_names:
        raise InputError(f"unknown label {label!r}")
    if target_class not in class_names:
        raise InputError(f"unknown target class {target_class!r}")
    scores = np.asarray(prediction)
    predicted = class_names[int(np.argmax(scores))]
    if predicted == target_class:
        return "TP" if label == target_class else "FP"
    return "FN" if label == target_class else "TN"


class PredictionStore:
    """Per-(model, image content) prediction cache backed by JSON files."""

    def __init__(self, cache: JsonCache | None = None):
        self.cache = cache if cache is not None else NullCache()

    def scores(self, model: ModelHandle, image: np.ndarray) -> np.ndarray:
        key = f"{model.id}__{image_digest(image)}"
        payload = self.cache.get_or_compute(
            "predictions",
            key,
            lambda: {"scores": [float(v) for v in predict(model, [image])[0]]},
        )
        return np.asarray(payload["scores"], dtype=np.float32)

    def scores_for_manifest(
        self, model: ModelHandle, manifest: DatasetManifest
    ) -> dict[str, np.ndarray]:
        return {
            entry.image_path: self.scores(model, manifest.load(entry.image_path))
            for entry in manifest.entries
        }


def sample_balanced(
    manifest: DatasetManifest,
    model: ModelHandle,
    target_class: str,
    budget: int = 100,
    seed: int = 0,
    store: PredictionStore | None = None,
) -> SampleSet:
    """Draw budget/4 images per quadrant, redistributing any shortfall.

    Quadrants short of candidates contribute everything they have; the
    leftover budget is handed out one image at a time round-robin in the
    fixed order TP, TN, FP, FN to quadrants with unused candidates.
    Deterministic for a given seed.
    """
    if budget < 4:
        raise InputError("budget must be at least 4")
    if not manifest.entries:
        raise InputError("manifest is empty")
    store = store or PredictionStore()
    predictions = store.scores_for_manifest(model, manifest)

    pools: dict[str, list[str]] = {q: [] for q in QUADRANTS}
    for entry in manifest.entries:
        quadrant = classify_quadrant(
            predictions[entry.image_path], entry.label, target_class, model.class_names
        )
        pools[quadrant].append(entry.image_path)

    base = budget // 4
    counts = {q: min(base, len(pools[q])) for q in QUADRANTS}
    remaining = budget - sum(counts.values())
    while remaining > 0:
        progressed = False
        for q in QUADRANTS:
            if remaining == 0:
                break
            if counts[q] < len(pools[q]):
                counts[q] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            break

    rng = rand.make_rng(seed, "balanced-sample", target_class)
    members: list[SampleMember] = []
    for q in QUADRANTS:
        chosen = rand.subsample(rng, sorted(pools[q]), counts[q])
        for image_id in chosen:
            members.append(SampleMember(image_id, q, predictions[image_id]))
    return SampleSet(model.id, target_class, members, seed)


def filter_confident_disagreement(
    set_a: SampleSet, set_b: SampleSet, threshold: float,
    class_names_a: list[str], class_names_b: list[str],
    scores_a: dict[str, np.ndarray] | None = None,
    scores_b: dict[str, np.ndarray] | None = None,
) -> list[str]:
    """Image ids where the models confidently pick different classes.

    Considers every image sampled by either model; `scores_a`/`scores_b`
    supply each model's predictions for images only the other model sampled
    (defaults to the scores stored in the sample members).
    """
    if not 0.5 < threshold <= 1.0:
        raise InputError("threshold must be in (0.5, 1]")
    lookup_a = dict(scores_a or {})
    lookup_b = dict(scores_b or {})
    for member in set_a.members:
        lookup_a.setdefault(member.image_id, member.scores)
    for member in set_b.members:
        lookup_b.setdefault(member.image_id, member.scores)

    universe = {m.image_id for m in set_a.members} | {m.image_id for m in set_b.members}
    picked = []
    for image_id in sorted(universe):
        if image_id not in lookup_a or image_id not in lookup_b:
            continue
        a, b = np.asarray(lookup_a[image_id]), np.asarray(lookup_b[image_id])
        top_a = class_names_a[int(np.argmax(a))]
        top_b = class_names_b[int(np.argmax(b))]
        if top_a != top_b and a.max() >= threshold and b.max() >= threshold:
            picked.append(image_id)
    return picked
