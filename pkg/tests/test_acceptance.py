"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The heavyweight fixtures (the n=100 synthetic watermark run) are
session-scoped and shared between criteria.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from segcompare.attribution import (
    AttributionConfig,
    integrated_gradients,
    shapley_exact,
)
from segcompare.clustering import ClusterConfig, kmeans
from segcompare.datasets import load_manifest, sample_balanced
from segcompare.models import linear_model, predict
from segcompare.pipeline import PipelineConfig, run_pipeline, validate_untrained
from segcompare.scenario import (
    CLASS_NAMES,
    generate_watermark_scenario,
    stamped_segment_keys,
)
from segcompare.segmentation import blur_exclude, grid_segments

from conftest import make_random_mlp, random_image, write_pixel_dataset
from goldens import GOLDEN_FILES, run_golden_pipeline
from test_attribution import permutation_shapley
from test_clustering import exhaustive_best_inertia, inertia_of


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, f"{criterion}: {detail}"


@pytest.fixture(scope="session")
def watermark_run(tmp_path_factory):
    """Seed-0, n=100 watermark scenario plus one full pipeline run."""
    root = tmp_path_factory.mktemp("acceptance_wm")
    manifest, spec_a, spec_b = generate_watermark_scenario(
        seed=0, n_images=100, watermark_rate=0.5, out_dir=root
    )
    scenario = json.loads((root / "scenario.json").read_text())

    def config(out_name, **overrides):
        base = dict(
            manifest=str(manifest),
            model_a=spec_a,
            model_b=spec_b,
            target_class=CLASS_NAMES[1],
            out_dir=str(root / out_name),
            seed=0,
            budget=100,
            attribution=AttributionConfig(
                top_classes=2, segments_per_image=5, ig_steps=64
            ),
            clustering=ClusterConfig(num_clusters=6, seed=0),
        )
        base.update(overrides)
        return PipelineConfig(**base)

    start = time.monotonic()
    summary = run_pipeline(config("out"))
    elapsed = time.monotonic() - start
    return {
        "root": root,
        "scenario": scenario,
        "config": config,
        "summary": summary,
        "elapsed": elapsed,
    }


def test_criterion_1_shapley_efficiency_and_permutation_oracle():
    start = time.monotonic()
    max_eff_err = 0.0
    max_perm_err = 0.0
    segs = grid_segments(8, 8, 4, 4, "img")
    for seed in range(200):
        model = make_random_mlp(seed, input_shape=(8, 8, 1), classes=("a", "b"))
        image = random_image(10_000 + seed, (8, 8, 1))
        offset = seed % 12
        selected = segs[offset : offset + 5]
        phi = shapley_exact(model, image, selected, [0, 1], blur_sigma=1.0)

        # efficiency against direct model evaluations
        v_full = predict(model, [blur_exclude(image, [], 1.0)])[0]
        v_empty = predict(model, [blur_exclude(image, selected, 1.0)])[0]
        for class_index in (0, 1):
            total = sum(phi[(seg, class_index)] for seg in selected)
            err = abs(total - (float(v_full[class_index]) - float(v_empty[class_index])))
            max_eff_err = max(max_eff_err, err)

        # independent permutation oracle every 10th instance (m=5: 120 orders)
        if seed % 10 == 0:
            values = np.zeros((1 << 5, 2))
            for mask in range(1 << 5):
                excluded = [selected[j] for j in range(5) if not mask & (1 << j)]
                scores = predict(model, [blur_exclude(image, excluded, 1.0)])[0]
                values[mask] = [float(scores[0]), float(scores[1])]
            oracle = permutation_shapley(5, values)
            for i, seg in enumerate(selected):
                for class_index in (0, 1):
                    max_perm_err = max(
                        max_perm_err,
                        abs(phi[(seg, class_index)] - oracle[i, class_index]),
                    )
    elapsed = time.monotonic() - start
    report(
        "criterion 1 (Shapley exactness)",
        max_eff_err <= 1e-9 and max_perm_err <= 1e-12 and elapsed < 30.0,
        f"efficiency err {max_eff_err:.2e} <= 1e-9, permutation err "
        f"{max_perm_err:.2e} <= 1e-12, runtime {elapsed:.1f}s < 30s",
    )


def test_criterion_2_integrated_gradient_completeness():
    worst_rel = 0.0
    for seed in range(50):
        model = make_random_mlp(seed, input_shape=(4, 4, 1), classes=("a", "b", "c"))
        image = random_image(20_000 + seed, (4, 4, 1))
        baseline = np.zeros_like(image)
        class_index = seed % 3
        sal = integrated_gradients(model, image, baseline, class_index, steps=256)
        full = model.backend.predict(image[None].astype(np.float64))[0][class_index]
        empty = model.backend.predict(baseline[None].astype(np.float64))[0][class_index]
        delta = float(full - empty)
        err = abs(float(sal.sum()) - delta)
        assert err <= 1e-3 * abs(delta) + 1e-6, f"instance {seed}: {err}"
        if delta != 0:
            worst_rel = max(worst_rel, err / abs(delta))

    # linear models: exact completeness at any step count in logit space
    weights = np.zeros((2, 4, 4, 1))
    weights[1] = np.linspace(-1, 1, 16).reshape(4, 4, 1)
    linear = linear_model(weights, [0.0, 0.0], ["n", "p"])
    worst_linear = 0.0
    for steps in (8, 16, 57, 128, 999):
        image = random_image(31, (4, 4, 1))
        sal = integrated_gradients(
            linear, image, np.zeros_like(image), 1, steps, space="logit"
        )
        delta_logit = float((weights[1] * image.astype(np.float64)).sum())
        worst_linear = max(worst_linear, abs(float(sal.sum()) - delta_logit))
    report(
        "criterion 2 (IG completeness)",
        worst_rel <= 1e-3 and worst_linear <= 1e-12,
        f"mlp rel err {worst_rel:.2e} <= 1e-3 over 50 instances; "
        f"linear completeness err {worst_linear:.2e} <= 1e-12 at any step count",
    )


def test_criterion_3_untrained_model_check(watermark_run):
    start = time.monotonic()
    cfg = watermark_run["config"]("out_untrained")
    verdict_const = validate_untrained(cfg, "builtin-constant")
    clusters = json.loads(
        (Path(verdict_const["out_dir"]) / "clusters.json").read_text()
    )
    untrained_records = [
        r for r in clusters["records"] if r["source_model"] == "untrained"
    ]
    all_zero = untrained_records and all(
        v == 0.0 for r in untrained_records for v in r["shapley"].values()
    )
    verdict_rand = validate_untrained(cfg, "builtin-random")
    elapsed = time.monotonic() - start
    report(
        "criterion 3 (untrained opponents)",
        verdict_const["pass"] and all_zero and verdict_rand["pass"] and elapsed < 120.0,
        f"constant: all {len(untrained_records)} records exactly zero; random: "
        f"max cluster ratio {verdict_rand['ratio']:.4f} <= "
        f"{verdict_rand['threshold']}, runtime {elapsed:.1f}s < 120s",
    )


def test_criterion_4_watermark_bias_recovery(watermark_run):
    summary = watermark_run["summary"]
    scenario = watermark_run["scenario"]
    assert watermark_run["elapsed"] < 300.0
    clusters = json.loads(
        (Path(summary["out_dir"]) / "clusters.json").read_text()
    )
    first = summary["cluster_order"][0]
    members = [r for r in clusters["records"] if r["cluster"] == first]
    stamped = stamped_segment_keys(scenario)
    frac = sum(
        ((r["image_id"], r["row"], r["col"]) in stamped) for r in members
    ) / len(members)
    means = summary["per_cluster_means"][str(first)]
    mean_a, mean_b = means["blob_scorer"], means["mark_sensitive"]
    gmax = summary["global_max_mean"]
    report(
        "criterion 4 (watermark bias recovery)",
        frac >= 0.60 and mean_b >= mean_a + 0.2 * gmax,
        f"first cluster stamped fraction {frac:.1%} >= 60%; mean_B {mean_b:.4f} "
        f">= mean_A {mean_a:.4f} + 0.2*global_max {0.2 * gmax:.4f}; "
        f"runtime {watermark_run['elapsed']:.1f}s < 300s",
    )


def test_criterion_5_pipeline_counting(watermark_run, tmp_path, pixel_gate_model):
    counts = watermark_run["summary"]["record_counts"]
    lines = {
        mid: len(
            (Path(watermark_run["summary"]["out_dir"]) / f"attributions_{mid}.jsonl")
            .read_text()
            .splitlines()
        )
        for mid in counts
    }
    spec = []
    layout = {"TP": (1.0, "pos"), "FP": (1.0, "neg"), "FN": (0.0, "pos"), "TN": (0.0, "neg")}
    i = 0
    for quadrant, (pixel, label) in layout.items():
        for _ in range(30):
            spec.append((f"{quadrant}_{i}", pixel, label))
            i += 1
    manifest = write_pixel_dataset(tmp_path / "quadrants", spec)
    loaded = load_manifest(manifest, class_names=["neg", "pos"])
    sample = sample_balanced(loaded, pixel_gate_model, "pos", budget=100, seed=5)
    quadrant_counts = sample.quadrant_counts()
    report(
        "criterion 5 (pipeline counting)",
        counts == {"blob_scorer": 500, "mark_sensitive": 500}
        and lines == {"blob_scorer": 500, "mark_sensitive": 500}
        and quadrant_counts == {"TP": 25, "TN": 25, "FP": 25, "FN": 25},
        f"500 records per model (files: {lines}); balanced sampler quadrants "
        f"{quadrant_counts}",
    )


def test_criterion_6_kmeans_behavior():
    points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    assignments, centroids = kmeans(points, ClusterConfig(num_clusters=2, seed=1))
    got = inertia_of(points, assignments, centroids)
    best = exhaustive_best_inertia(list(points), 2)
    optimum_ok = abs(got - best) <= 1e-9

    deterministic = True
    monotone_ok = True
    for seed in range(20):
        pts = np.asarray(random_image(40_000 + seed, (10, 3, 1)).reshape(10, 3), dtype=np.float64)
        cfg = ClusterConfig(num_clusters=3, seed=seed)
        try:
            a1, c1 = kmeans(pts, cfg)  # inertia monotonicity asserted inside
            a2, c2 = kmeans(pts, cfg)
        except AssertionError:
            monotone_ok = False
            break
        deterministic = deterministic and np.array_equal(a1, a2) and np.array_equal(c1, c2)
    report(
        "criterion 6 (k-means)",
        optimum_ok and deterministic and monotone_ok,
        f"4-point inertia {got:.12f} matches exhaustive optimum {best:.12f}; "
        f"seeded determinism and monotone inertia over 20 instances",
    )


def test_criterion_7_report_fidelity(tmp_path):
    out = run_golden_pipeline(tmp_path)
    golden_dir = Path(__file__).parent / "golden"
    mismatches = [
        name
        for name in GOLDEN_FILES
        if (out / name).read_bytes() != (golden_dir / name).read_bytes()
    ]

    html = (out / "report_histogram.html").read_text()
    colors_ok = all(
        color in html for color in ("#0AC7C7", "#FE04F9", "#FF7F0D", "#1F77B4")
    )

    import re

    ticks = re.findall(r'<td class="tick">([^<]+)</td>', html)
    non_empty = [t for t in ticks if t.strip()]
    rows = [non_empty[i : i + 3] for i in range(0, len(non_empty), 3)]
    shared_axis_ok = len(set(map(tuple, rows))) == 1

    sidecar = json.loads((out / "report_histogram.json").read_text())
    cap_ok = sidecar["tile_cap"] == 5
    overflow_ok = True
    for cluster in sidecar["clusters"]:
        for row in cluster["rows"].values():
            for count, shown, overflow in zip(
                row["bin_counts"], row["shown"], row["overflow"]
            ):
                if shown != min(count, 5) or overflow != max(0, count - 5):
                    overflow_ok = False
    has_overflow_marker = any(
        overflow > 0
        for cluster in sidecar["clusters"]
        for row in cluster["rows"].values()
        for overflow in row["overflow"]
    )
    marker_ok = (not has_overflow_marker) or (">+" in html)
    report(
        "criterion 7 (report fidelity)",
        not mismatches and colors_ok and shared_axis_ok and cap_ok and overflow_ok and marker_ok,
        f"golden byte-equality ({'ok' if not mismatches else mismatches}); paper hex "
        f"colors verbatim; identical axis ticks across {len(rows)} histogram rows; "
        f"tiles capped at 5 with +n overflow",
    )


def test_criterion_8_parallel_determinism(watermark_run):
    cfg_parallel = watermark_run["config"]("out_parallel", workers=4)
    run_pipeline(cfg_parallel)
    serial_dir = Path(watermark_run["summary"]["out_dir"])
    parallel_dir = Path(cfg_parallel.out_dir)
    names = [
        "samples.json",
        "attributions_blob_scorer.jsonl",
        "attributions_mark_sensitive.jsonl",
        "clusters.json",
        "report_histogram.html",
        "report_concepts.html",
        "report_confusion.html",
        "report_histogram.json",
        "report_concepts.json",
        "report_confusion.json",
    ]
    diffs = [
        name
        for name in names
        if (serial_dir / name).read_bytes() != (parallel_dir / name).read_bytes()
    ]
    report(
        "criterion 8 (parallel determinism)",
        not diffs,
        f"1-thread and 4-thread runs byte-identical across {len(names)} artifacts"
        + (f"; mismatches: {diffs}" if diffs else ""),
    )
