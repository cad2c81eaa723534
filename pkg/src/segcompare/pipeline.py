"""End-to-end orchestration: sample, attribute, cluster, render, validate.

Stages write their artifacts under the output directory with a config
fingerprint; a re-run reuses any artifact whose fingerprint still matches,
so deleting only the reports regenerates them byte-identically from cached
intermediates, and a warm content-addressed cache makes reruns free of
model evaluations. Every stochastic stage derives from the single pipeline
seed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import scenario as _scenario  # noqa: F401  (registers model builders)
from .attribution import (
    AttributionConfig,
    attribute_sample,
    read_records_jsonl,
    record_from_dict,
    record_to_dict,
    write_records_jsonl,
)
from .cache import JsonCache, image_digest, key_digest
from .clustering import (
    BinningSpec,
    ClusterConfig,
    ClusterStats,
    build_clusters,
    binning_for_records,
    compute_stats,
    kmeans,
    order_clusters,
    pool_and_embed,
    sort_within_cluster,
)
from .datasets import (
    PredictionStore,
    SampleMember,
    SampleSet,
    filter_confident_disagreement,
    load_manifest,
    sample_balanced,
)
from .errors import InputError, StageError
from .models import ModelHandle, build_embedder, build_model, embed
from .reports import ReportStyle, ThumbnailProvider, render_concept_view, render_confusion_view, render_histogram_view

STAGES = ("sample", "attribute", "cluster", "report")


@dataclass
class PipelineConfig:
    manifest: str
    model_a: dict
    model_b: dict
    target_class: str
    out_dir: str
    seed: int = 0
    embedder: dict = field(default_factory=lambda: {"kind": "builtin-embedder"})
    budget: int = 100
    attribution: AttributionConfig = field(default_factory=AttributionConfig)
    clustering: ClusterConfig = field(default_factory=lambda: ClusterConfig(num_clusters=5))
    ordering: str = "imbalance"
    within_sort: str = "attribution_desc"
    filter: dict = field(default_factory=lambda: {"mode": "none"})
    cache_dir: str | None = None
    saliency_dir: str | None = None
    workers: int = 1
    tile_px: int = 32

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        data = dict(data)
        if "attribution" in data and isinstance(data["attribution"], dict):
            data["attribution"] = AttributionConfig(**data["attribution"])
        if "clustering" in data and isinstance(data["clustering"], dict):
            data["clustering"] = ClusterConfig(**data["clustering"])
        return PipelineConfig(**data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return PipelineConfig.from_dict(json.load(fh))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _canonical(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _safe_id(image_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", image_id)


class SaliencyStore:
    """Caches saliency maps; external files override computed ones.

    External injection: one JSON file per (model, image, class) named
    `<model>__<image id with separators replaced by _>__<class index>.json`
    holding {"saliency": [...row-major...], "shape": [H, W, C]}.
    """

    def __init__(self, cache: JsonCache, saliency_dir=None):
        self.cache = cache
        self.saliency_dir = Path(saliency_dir) if saliency_dir else None

    def external(self, model_id: str, image_id: str, class_index: int):
        if self.saliency_dir is None:
            return None
        path = self.saliency_dir / f"{model_id}__{_safe_id(image_id)}__{class_index}.json"
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return np.asarray(payload["saliency"], dtype=np.float64).reshape(payload["shape"])


class _Accounting:
    def __init__(self):
        import threading

        self.requested: dict[str, int] = {}
        self._lock = threading.Lock()

    def bump(self, model_id: str, count: int = 1) -> None:
        with self._lock:
            self.requested[model_id] = self.requested.get(model_id, 0) + count


class Runner:
    """Holds the built models, caches, and per-stage artifact plumbing."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = JsonCache(cfg.cache_dir or self.out / "cache")
        self.model_a = build_model(cfg.model_a)
        self.model_b = build_model(cfg.model_b)
        if self.model_a.id == self.model_b.id:
            raise InputError("the two models must have distinct ids")
        self.embedder = build_embedder(cfg.embedder)
        shared = sorted(set(self.model_a.class_names) & set(self.model_b.class_names))
        if cfg.target_class not in shared:
            raise InputError(
                f"target class {cfg.target_class!r} not shared by both models"
            )
        self.manifest = load_manifest(cfg.manifest, class_names=shared)
        self.store = PredictionStore(self.cache)
        self.saliency = SaliencyStore(self.cache, cfg.saliency_dir)
        self.accounting = _Accounting()

    # -- artifact helpers ---------------------------------------------------

    def path(self, name: str) -> Path:
        return self.out / name

    def _load_artifact(self, name: str, fingerprint: str):
        path = self.path(name)
        meta = self.path(name + ".meta.json")
        if not path.exists() or not meta.exists():
            return None
        with open(meta, "r", encoding="utf-8") as fh:
            if json.load(fh).get("fingerprint") != fingerprint:
                return None
        return path

    def _store_meta(self, name: str, fingerprint: str) -> None:
        _atomic_write(self.path(name + ".meta.json"), _canonical({"fingerprint": fingerprint}))

    # -- fingerprints -------------------------------------------------------

    def _manifest_digest(self) -> str:
        with open(self.cfg.manifest, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()

    def fp_sample(self) -> str:
        return key_digest(
            "sample",
            self._manifest_digest(),
            _canonical(self.cfg.model_a),
            _canonical(self.cfg.model_b),
            self.cfg.target_class,
            str(self.cfg.budget),
            str(self.cfg.seed),
            _canonical(self.cfg.filter),
        )

    def fp_attribute(self) -> str:
        return key_digest(
            "attribute", self.fp_sample(),
            _canonical(dataclasses.asdict(self.cfg.attribution)),
            str(self.cfg.saliency_dir or ""),
        )

    def fp_cluster(self) -> str:
        return key_digest(
            "cluster", self.fp_attribute(),
            _canonical(dataclasses.asdict(self.cfg.clustering)),
            _canonical(self.cfg.embedder),
        )

    def fp_report(self) -> str:
        return key_digest(
            "report", self.fp_cluster(), self.cfg.ordering, self.cfg.within_sort,
            str(self.cfg.tile_px),
        )

    # -- cached evaluation hooks --------------------------------------------

    def scorer_for(self, model: ModelHandle):
        def scorer(images):
            out = []
            for image in images:
                self.accounting.bump(model.id)
                out.append(self.store.scores(model, image))
            return out

        return scorer

    def saliency_provider(self):
        cfg = self.cfg.attribution
        models = {self.model_a.id: self.model_a, self.model_b.id: self.model_b}

        def provider(model_id, image_id, class_index):
            external = self.saliency.external(model_id, image_id, class_index)
            if external is not None:
                return external
            model = models[model_id]
            if not model.supports_gradient:
                return None
            image = self.manifest.load(image_id)
            key = key_digest(
                model_id, image_digest(image), str(class_index),
                str(cfg.ig_steps), cfg.ig_space, str(cfg.baseline),
            )

            def compute():
                from .attribution import _integrated_gradients_multi

                sal = _integrated_gradients_multi(
                    model, image, cfg.baseline_image(image.shape),
                    [class_index], cfg.ig_steps, cfg.ig_space,
                )[0]
                return {"saliency": sal.ravel().tolist(), "shape": list(sal.shape)}

            payload = self.cache.get_or_compute("saliency", key, compute)
            return np.asarray(payload["saliency"], dtype=np.float64).reshape(payload["shape"])

        return provider

    def embed_fn(self):
        def fn(patches):
            vectors = []
            for patch in patches:
                key = key_digest(self.embedder.id, image_digest(patch))
                payload = self.cache.get_or_compute(
                    "embeddings",
                    key,
                    lambda p=patch: {"embedding": [float(v) for v in embed(self.embedder, [p])[0]]},
                )
                vectors.append(np.asarray(payload["embedding"], dtype=np.float64))
            return vectors

        return fn

    # -- stages ---------------------------------------------------------------

    def stage_sample(self) -> dict:
        fingerprint = self.fp_sample()
        cached = self._load_artifact("samples.json", fingerprint)
        if cached is not None:
            with open(cached, "r", encoding="utf-8") as fh:
                return json.load(fh)
        try:
            scores_a = {}
            scores_b = {}
            for entry in self.manifest.entries:
                self.accounting.bump(self.model_a.id)
                self.accounting.bump(self.model_b.id)
                image = self.manifest.load(entry.image_path)
                scores_a[entry.image_path] = self.store.scores(self.model_a, image)
                scores_b[entry.image_path] = self.store.scores(self.model_b, image)

            sample_a = sample_balanced(
                self.manifest, self.model_a, self.cfg.target_class,
                self.cfg.budget, self.cfg.seed, self.store,
            )
            sample_b = sample_balanced(
                self.manifest, self.model_b, self.cfg.target_class,
                self.cfg.budget, self.cfg.seed, self.store,
            )

            mode = self.cfg.filter.get("mode", "none")
            kept = {}
            for model, sample in ((self.model_a, sample_a), (self.model_b, sample_b)):
                if mode == "none":
                    kept[model.id] = [m.image_id for m in sample.members]
                elif mode == "confident_disagreement":
                    ids = set(
                        filter_confident_disagreement(
                            sample_a, sample_b, float(self.cfg.filter["threshold"]),
                            self.model_a.class_names, self.model_b.class_names,
                            scores_a, scores_b,
                        )
                    )
                    kept[model.id] = [m.image_id for m in sample.members if m.image_id in ids]
                elif mode == "false_positives_only":
                    kept[model.id] = [
                        m.image_id for m in sample.members if m.quadrant == "FP"
                    ]
                else:
                    raise InputError(f"unknown filter mode {mode!r}")

            artifact = {
                "target_class": self.cfg.target_class,
                "budget": self.cfg.budget,
                "seed": self.cfg.seed,
                "filter": self.cfg.filter,
                "models": {},
            }
            for sample in (sample_a, sample_b):
                artifact["models"][sample.model_id] = {
                    "members": [
                        {
                            "image_id": m.image_id,
                            "quadrant": m.quadrant,
                            "scores": [float(v) for v in m.scores],
                        }
                        for m in sample.members
                    ],
                    "kept_image_ids": kept[sample.model_id],
                    "quadrant_counts": sample.quadrant_counts(),
                }
            _atomic_write(self.path("samples.json"), _canonical(artifact))
            self._store_meta("samples.json", fingerprint)
            return artifact
        except Exception as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError("sample", str(exc), str(self.path("samples.json"))) from exc

    def _sample_from_artifact(self, artifact: dict, model: ModelHandle) -> SampleSet:
        data = artifact["models"][model.id]
        kept = set(data["kept_image_ids"])
        members = [
            SampleMember(
                image_id=m["image_id"],
                quadrant=m["quadrant"],
                scores=np.asarray(m["scores"], dtype=np.float32),
            )
            for m in data["members"]
            if m["image_id"] in kept
        ]
        return SampleSet(model.id, artifact["target_class"], members, artifact["seed"])

    def stage_attribute(self, samples: dict) -> dict[str, list]:
        fingerprint = self.fp_attribute()
        records = {}
        provider = self.saliency_provider()
        for model in (self.model_a, self.model_b):
            name = f"attributions_{model.id}.jsonl"
            cached = self._load_artifact(name, fingerprint)
            if cached is not None:
                records[model.id] = read_records_jsonl(cached)
                continue
            try:
                sample = self._sample_from_artifact(samples, model)
                recs = attribute_sample(
                    model, sample, self.cfg.target_class, self.cfg.attribution,
                    self.manifest.load, self.scorer_for(model), provider,
                    self.cfg.workers,
                )
                write_records_jsonl(self.path(name), recs)
                self._store_meta(name, fingerprint)
                records[model.id] = recs
            except Exception as exc:
                if isinstance(exc, StageError):
                    raise
                raise StageError("attribute", str(exc), str(self.path(name))) from exc
        return records

    def stage_cluster(self, records: dict[str, list]) -> dict:
        fingerprint = self.fp_cluster()
        cached = self._load_artifact("clusters.json", fingerprint)
        if cached is not None:
            with open(cached, "r", encoding="utf-8") as fh:
                return json.load(fh)
        try:
            pooled = pool_and_embed(
                records[self.model_a.id], records[self.model_b.id],
                self.embedder, self.manifest.load, self.embed_fn(),
            )
            if not pooled:
                raise InputError("no records to cluster (filter removed everything?)")
            binning = binning_for_records(pooled, self.cfg.target_class)
            ccfg = self.cfg.clustering
            if ccfg.num_clusters > len(pooled):
                raise InputError(
                    f"num_clusters {ccfg.num_clusters} exceeds {len(pooled)} records"
                )
            points = np.stack([r.embedding for r in pooled])
            assignments, centroids = kmeans(points, ccfg)
            clusters = build_clusters(pooled, assignments, centroids)
            stats = compute_stats(
                clusters, self.cfg.target_class, binning,
                [self.model_a.id, self.model_b.id],
            )
            artifact = {
                "binning": {"limit": binning.limit, "bins": binning.bins},
                "model_ids": [self.model_a.id, self.model_b.id],
                "records": [
                    dict(record_to_dict(r), embedding=r.embedding.tolist(),
                         cluster=int(a))
                    for r, a in zip(pooled, assignments)
                ],
                "centroids": centroids.tolist(),
                "stats": [
                    {
                        "cluster_id": s.cluster_id,
                        "total": s.total,
                        "per_model_counts": s.per_model_counts,
                        "histogram": s.histogram,
                        "mean_attribution": s.mean_attribution,
                        "empty_models": s.empty_models,
                        "global_max_mean": s.global_max_mean,
                    }
                    for s in stats
                ],
                "orderings": {
                    strategy: order_clusters(stats, strategy)
                    for strategy in ("imbalance", "max_mean_attribution")
                },
            }
            _atomic_write(self.path("clusters.json"), _canonical(artifact))
            self._store_meta("clusters.json", fingerprint)
            return artifact
        except Exception as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError("cluster", str(exc), str(self.path("clusters.json"))) from exc

    def _clusters_from_artifact(self, artifact: dict):
        records = []
        assignments = []
        for data in artifact["records"]:
            record = record_from_dict(data)
            record.embedding = np.asarray(data["embedding"], dtype=np.float64)
            records.append(record)
            assignments.append(data["cluster"])
        centroids = np.asarray(artifact["centroids"], dtype=np.float64)
        clusters = build_clusters(records, np.asarray(assignments), centroids)
        stats = [
            ClusterStats(
                cluster_id=s["cluster_id"],
                total=s["total"],
                per_model_counts=s["per_model_counts"],
                histogram=s["histogram"],
                mean_attribution=s["mean_attribution"],
                empty_models=s["empty_models"],
                global_max_mean=s["global_max_mean"],
            )
            for s in artifact["stats"]
        ]
        binning = BinningSpec(
            limit=artifact["binning"]["limit"], bins=artifact["binning"]["bins"]
        )
        return clusters, stats, binning

    REPORT_FILES = {
        "histogram": "report_histogram",
        "concepts": "report_concepts",
        "confusion": "report_confusion",
    }

    def stage_report(self, cluster_artifact: dict) -> dict:
        fingerprint = self.fp_report()
        names = [f"{stem}.{ext}" for stem in self.REPORT_FILES.values() for ext in ("html", "json")]
        if all(self._load_artifact(name, fingerprint) is not None for name in names):
            return {stem: str(self.path(f"{stem}.html")) for stem in self.REPORT_FILES.values()}
        try:
            clusters, stats, binning = self._clusters_from_artifact(cluster_artifact)
            model_ids = cluster_artifact["model_ids"]
            order = cluster_artifact["orderings"][self.cfg.ordering]
            by_id = {c.cluster_id: c for c in clusters}
            stats_by_id = {s.cluster_id: s for s in stats}
            ordered = [(by_id[cid], stats_by_id[cid]) for cid in order]
            sorted_rows = {
                cid: sort_within_cluster(
                    by_id[cid], self.cfg.within_sort, self.cfg.target_class, model_ids
                )
                for cid in order
            }
            style = ReportStyle(tile_px=self.cfg.tile_px)
            thumb = ThumbnailProvider(self.manifest.load, self.cfg.tile_px)

            documents = {
                "report_histogram": render_histogram_view(
                    ordered, binning, style, self.cfg.target_class, model_ids, thumb
                ),
                "report_concepts": render_concept_view(
                    ordered, sorted_rows, binning, style, self.cfg.target_class,
                    model_ids, thumb,
                ),
                "report_confusion": render_confusion_view(
                    ordered[0][0], style, self.cfg.target_class, model_ids, thumb
                ),
            }
            paths = {}
            for stem, document in documents.items():
                _atomic_write(self.path(f"{stem}.html"), document.html)
                _atomic_write(
                    self.path(f"{stem}.json"),
                    json.dumps(document.sidecar, sort_keys=True, indent=1),
                )
                self._store_meta(f"{stem}.html", fingerprint)
                self._store_meta(f"{stem}.json", fingerprint)
                paths[stem] = str(self.path(f"{stem}.html"))
            return paths
        except Exception as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError("report", str(exc), str(self.path("report_histogram.html"))) from exc


def run_pipeline(cfg: PipelineConfig, until: str = "report") -> dict:
    """Run the stages through `until` and return the run summary."""
    if until not in STAGES:
        raise InputError(f"unknown stage {until!r}")
    runner = Runner(cfg)
    summary: dict = {
        "out_dir": str(runner.out),
        "config_seed": cfg.seed,
        "artifacts": {},
        "reports": {},
    }

    samples = runner.stage_sample()
    summary["artifacts"]["samples"] = str(runner.path("samples.json"))
    summary["sample_counts"] = {
        mid: data["quadrant_counts"] for mid, data in samples["models"].items()
    }
    if until != "sample":
        records = runner.stage_attribute(samples)
        for mid in records:
            summary["artifacts"][f"attributions_{mid}"] = str(
                runner.path(f"attributions_{mid}.jsonl")
            )
        summary["record_counts"] = {mid: len(recs) for mid, recs in records.items()}
    if until in ("cluster", "report"):
        cluster_artifact = runner.stage_cluster(records)
        summary["artifacts"]["clusters"] = str(runner.path("clusters.json"))
        summary["cluster_count"] = len(cluster_artifact["stats"])
        summary["global_max_mean"] = (
            cluster_artifact["stats"][0]["global_max_mean"]
            if cluster_artifact["stats"]
            else 0.0
        )
        summary["per_cluster_means"] = {
            str(s["cluster_id"]): s["mean_attribution"]
            for s in cluster_artifact["stats"]
        }
        summary["cluster_order"] = cluster_artifact["orderings"][cfg.ordering]
    if until == "report":
        reports = runner.stage_report(cluster_artifact)
        summary["reports"] = reports

    summary["model_calls"] = {}
    for model in (runner.model_a, runner.model_b):
        summary["model_calls"][model.id] = {
            "requested_predict_images": runner.accounting.requested.get(model.id, 0),
            "evaluated_predict_images": model.counters.predict_images,
            "gradient_calls": model.counters.gradient_calls,
        }
    summary["cache"] = {"hits": runner.cache.hits, "misses": runner.cache.misses}
    _atomic_write(runner.path("summary.json"), json.dumps(summary, sort_keys=True, indent=1))
    return summary


UNTRAINED_RATIO_THRESHOLD = 0.10


def validate_untrained(cfg: PipelineConfig, opponent: str = "builtin-random") -> dict:
    """Compare model A against a constant or fixed-seed random opponent.

    A constant opponent must produce exactly-zero attributions everywhere;
    a random one must keep every cluster's |mean| within 10% of the global
    max mean (an artifact-level threshold, reported in the verdict).
    """
    if opponent not in ("builtin-random", "builtin-constant"):
        raise InputError(f"opponent must be builtin-random or builtin-constant")
    model_a = build_model(cfg.model_a)
    spec_b = {
        "kind": opponent,
        "id": "untrained",
        "classes": list(model_a.class_names),
        "input_shape": list(model_a.input_shape),
    }
    if opponent == "builtin-random":
        spec_b["seed"] = cfg.seed
    run_cfg = dataclasses.replace(
        cfg,
        model_b=spec_b,
        out_dir=str(Path(cfg.out_dir) / f"untrained_{opponent.split('-')[1]}"),
    )
    summary = run_pipeline(run_cfg)

    with open(Path(run_cfg.out_dir) / "clusters.json", "r", encoding="utf-8") as fh:
        artifact = json.load(fh)
    global_max = summary["global_max_mean"]
    means_b = {
        str(s["cluster_id"]): s["mean_attribution"]["untrained"]
        for s in artifact["stats"]
    }
    max_abs_b = max((abs(v) for v in means_b.values()), default=0.0)

    if opponent == "builtin-constant":
        zero = all(
            all(v == 0.0 for v in rec["shapley"].values())
            for rec in artifact["records"]
            if rec["source_model"] == "untrained"
        )
        passed = zero
        ratio = 0.0 if global_max == 0 else max_abs_b / global_max
    else:
        ratio = max_abs_b / global_max if global_max > 0 else (0.0 if max_abs_b == 0 else float("inf"))
        passed = ratio <= UNTRAINED_RATIO_THRESHOLD

    verdict = {
        "pass": bool(passed),
        "opponent": opponent,
        "max_abs_mean_untrained": max_abs_b,
        "global_max_mean": global_max,
        "ratio": ratio,
        "threshold": UNTRAINED_RATIO_THRESHOLD,
        "per_cluster_mean_untrained": means_b,
        "out_dir": run_cfg.out_dir,
    }
    _atomic_write(
        Path(run_cfg.out_dir) / "verdict.json",
        json.dumps(verdict, sort_keys=True, indent=1),
    )
    return verdict


def warm_ingest(cfg: PipelineConfig) -> dict:
    """Validate the manifest and warm the prediction cache for both models."""
    runner = Runner(cfg)
    for entry in runner.manifest.entries:
        image = runner.manifest.load(entry.image_path)
        runner.store.scores(runner.model_a, image)
        runner.store.scores(runner.model_b, image)
    return {
        "entries": len(runner.manifest.entries),
        "labels": sorted({e.label for e in runner.manifest.entries}),
        "models": [runner.model_a.id, runner.model_b.id],
        "cache": {"hits": runner.cache.hits, "misses": runner.cache.misses},
    }
