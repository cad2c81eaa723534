"""Segment embedding, seeded k-means pooling, and per-cluster statistics.

Both models' selected segments are pooled into one collection, embedded,
and grouped with k-means++ (fully seeded, deterministic). Cluster statistics
compare the two models: member counts, a shared-axis histogram of
target-class scores, and per-model mean attribution against the maximum
mean across all clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rand
from .attribution import SegmentAttributionRecord
from .errors import InputError
from .models import ModelHandle, embed
from .segmentation import crop_segment


@dataclass(frozen=True)
class ClusterConfig:
    num_clusters: int
    seed: int = 0
    max_iterations: int = 100
    tolerance: float = 1e-6
    normalize: bool = False
    restarts: int = 10

    def __post_init__(self):
        if self.num_clusters < 1:
            raise InputError("num_clusters must be positive")
        if self.restarts < 1:
            raise InputError("restarts must be positive")


@dataclass
class ConceptCluster:
    cluster_id: int
    members: list[SegmentAttributionRecord]
    centroid: np.ndarray


@dataclass
class ClusterStats:
    cluster_id: int
    total: int
    per_model_counts: dict[str, int]
    histogram: dict[str, list[int]]
    mean_attribution: dict[str, float]
    empty_models: list[str]
    global_max_mean: float = 0.0


@dataclass(frozen=True)
class BinningSpec:
    """Shared symmetric histogram axis: [-limit, limit] in `bins` bins."""

    limit: float
    bins: int = 21

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.limit, self.limit, self.bins + 1)

    def index(self, value: float) -> int:
        width = 2.0 * self.limit / self.bins
        idx = int(math.floor((value + self.limit) / width))
        return min(max(idx, 0), self.bins - 1)


def round_up_one_significant(x: float) -> float:
    """Smallest one-significant-digit number >= x (x > 0)."""
    exponent = math.floor(math.log10(x))
    mantissa = x / 10**exponent
    lead = math.ceil(mantissa - 1e-9)
    return lead * 10.0**exponent


def binning_for_records(
    records: list[SegmentAttributionRecord], target_class: str, bins: int = 21
) -> BinningSpec:
    peak = max(
        (abs(r.shapley.get(target_class, 0.0)) for r in records), default=0.0
    )
    limit = 1.0 if peak == 0.0 else round_up_one_significant(peak)
    return BinningSpec(limit=limit, bins=bins)


def pool_and_embed(
    records_a: list[SegmentAttributionRecord],
    records_b: list[SegmentAttributionRecord],
    embedder: ModelHandle,
    load_image,
    embed_fn=None,
) -> list[SegmentAttributionRecord]:
    """Fill embeddings by cropping each record's segment; A-then-B order."""
    pooled = list(records_a) + list(records_b)
    if not pooled:
        return pooled
    images: dict[str, np.ndarray] = {}
    crops = []
    for record in pooled:
        image_id = record.seg.image_id
        if image_id not in images:
            images[image_id] = load_image(image_id)
        crops.append(crop_segment(images[image_id], record.seg))
    embed_fn = embed_fn or (lambda patches: embed(embedder, patches))
    vectors = embed_fn(crops)
    for record, vector in zip(pooled, vectors):
        record.embedding = np.asarray(vector, dtype=np.float64)
    return pooled


def _kmeans_plusplus_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = points.shape[0]
    centroids = np.zeros((k, points.shape[1]))
    first = rand.randint(rng, 0, n - 1)
    centroids[0] = points[first]
    dist_sq = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = dist_sq.sum()
        if total <= 0.0:
            # All remaining points coincide with a centroid; take the
            # lowest-index point to stay deterministic.
            choice = int(np.argmax(dist_sq == dist_sq.max()))
        else:
            r = rng.random() * total
            choice = int(np.searchsorted(np.cumsum(dist_sq), r, side="right"))
            choice = min(choice, n - 1)
        centroids[i] = points[choice]
        dist_sq = np.minimum(dist_sq, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _lloyd(pts: np.ndarray, k: int, cfg: ClusterConfig, rng):
    """One seeded k-means++ init plus Lloyd iterations to convergence."""
    centroids = _kmeans_plusplus_init(pts, k, rng)
    assignments = np.zeros(pts.shape[0], dtype=np.int64)
    previous_inertia = math.inf
    inertia = previous_inertia

    for _ in range(cfg.max_iterations):
        dists = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignments = np.argmin(dists, axis=1)
        inertia = float(dists[np.arange(pts.shape[0]), assignments].sum())
        assert inertia <= previous_inertia + 1e-9 * max(1.0, abs(previous_inertia)), (
            "k-means inertia increased"
        )
        previous_inertia = inertia

        new_centroids = centroids.copy()
        for cid in range(k):
            mask = assignments == cid
            if mask.any():
                new_centroids[cid] = pts[mask].mean(axis=0)
        empty = [cid for cid in range(k) if not (assignments == cid).any()]
        if empty:
            member_dist = dists[np.arange(pts.shape[0]), assignments].copy()
            for cid in empty:
                farthest = int(np.argmax(member_dist))
                new_centroids[cid] = pts[farthest]
                member_dist[farthest] = -1.0

        movement = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if movement < cfg.tolerance and not empty:
            break

    dists = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assignments = np.argmin(dists, axis=1)
    inertia = float(dists[np.arange(pts.shape[0]), assignments].sum())
    return assignments, centroids, inertia


def kmeans(points, cfg: ClusterConfig) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ plus Lloyd iterations; deterministic given the seed.

    Runs `restarts` independently seeded inits and keeps the lowest-inertia
    solution (first wins on ties). Empty clusters are re-seeded with the
    point currently farthest from its centroid; assignment ties go to the
    lowest cluster id. Inertia is asserted non-increasing every iteration.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise InputError("points must be a non-empty 2-D array")
    k = cfg.num_clusters
    if k > pts.shape[0]:
        raise InputError(f"num_clusters {k} exceeds {pts.shape[0]} points")
    if cfg.normalize:
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        pts = pts / np.where(norms == 0.0, 1.0, norms)

    best = None
    for restart in range(cfg.restarts):
        rng = rand.make_rng(cfg.seed, "kmeans", restart)
        assignments, centroids, inertia = _lloyd(pts, k, cfg, rng)
        if best is None or inertia < best[2] - 1e-12:
            best = (assignments, centroids, inertia)
    return best[0], best[1]


def build_clusters(
    records: list[SegmentAttributionRecord],
    assignments: np.ndarray,
    centroids: np.ndarray,
) -> list[ConceptCluster]:
    clusters = [
        ConceptCluster(cluster_id=cid, members=[], centroid=centroids[cid])
        for cid in range(centroids.shape[0])
    ]
    for record, cid in zip(records, assignments):
        clusters[int(cid)].members.append(record)
    return clusters


def compute_stats(
    clusters: list[ConceptCluster],
    target_class: str,
    binning: BinningSpec,
    model_ids: list[str],
) -> list[ClusterStats]:
    """Per-cluster, per-model counts, score histograms, and mean scores."""
    stats = []
    for cluster in clusters:
        counts = {mid: 0 for mid in model_ids}
        hist = {mid: [0] * binning.bins for mid in model_ids}
        sums = {mid: 0.0 for mid in model_ids}
        for member in cluster.members:
            mid = member.source_model
            score = member.shapley.get(target_class, 0.0)
            counts[mid] += 1
            hist[mid][binning.index(score)] += 1
            sums[mid] += score
        means = {
            mid: (sums[mid] / counts[mid] if counts[mid] else 0.0)
            for mid in model_ids
        }
        stats.append(
            ClusterStats(
                cluster_id=cluster.cluster_id,
                total=len(cluster.members),
                per_model_counts=counts,
                histogram=hist,
                mean_attribution=means,
                empty_models=[mid for mid in model_ids if counts[mid] == 0],
            )
        )
    global_max = max(
        (mean for s in stats for mean in s.mean_attribution.values()), default=0.0
    )
    for s in stats:
        s.global_max_mean = global_max
    return stats


def order_clusters(stats: list[ClusterStats], strategy: str) -> list[int]:
    """Cluster ids sorted by the chosen comparison emphasis."""
    if not stats:
        raise InputError("no cluster stats")
    if strategy == "imbalance":
        def sort_key(s: ClusterStats):
            means = list(s.mean_attribution.values())
            spread = abs(means[0] - means[1]) if len(means) == 2 else 0.0
            return (-spread, s.cluster_id)
    elif strategy == "max_mean_attribution":
        def sort_key(s: ClusterStats):
            return (-max(s.mean_attribution.values()), s.cluster_id)
    else:
        raise InputError(f"unknown ordering strategy {strategy!r}")
    return [s.cluster_id for s in sorted(stats, key=sort_key)]


def sort_within_cluster(
    cluster: ConceptCluster,
    strategy: str,
    target_class: str,
    model_ids: list[str],
) -> dict[str, list[SegmentAttributionRecord]]:
    """Per-model member rows in display order."""
    rows = {mid: [m for m in cluster.members if m.source_model == mid] for mid in model_ids}
    if strategy == "attribution_desc":
        def sort_key(member):
            return (
                -member.shapley.get(target_class, 0.0),
                member.seg.image_id,
                member.seg.row,
                member.seg.col,
            )
    elif strategy == "centroid_distance":
        def sort_key(member):
            delta = member.embedding - cluster.centroid
            return (
                float(delta @ delta),
                member.seg.image_id,
                member.seg.row,
                member.seg.col,
            )
    else:
        raise InputError(f"unknown within-cluster sort {strategy!r}")
    return {mid: sorted(row, key=sort_key) for mid, row in rows.items()}
