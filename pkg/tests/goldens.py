"""Fixed scenario + config behind the golden-report fidelity check."""

from pathlib import Path

from segcompare.attribution import AttributionConfig
from segcompare.clustering import ClusterConfig
from segcompare.pipeline import PipelineConfig, run_pipeline
from segcompare.scenario import CLASS_NAMES, generate_watermark_scenario

GOLDEN_SEED = 11
GOLDEN_FILES = (
    "report_histogram.html",
    "report_histogram.json",
    "report_concepts.html",
    "report_concepts.json",
    "report_confusion.html",
    "report_confusion.json",
)


def run_golden_pipeline(workdir: Path) -> Path:
    """Generate the fixed scenario and run the fixed config; returns out dir."""
    manifest, spec_a, spec_b = generate_watermark_scenario(
        seed=GOLDEN_SEED, n_images=40, watermark_rate=0.5, out_dir=workdir
    )
    cfg = PipelineConfig(
        manifest=str(manifest),
        model_a=spec_a,
        model_b=spec_b,
        target_class=CLASS_NAMES[1],
        out_dir=str(workdir / "out"),
        seed=GOLDEN_SEED,
        budget=20,
        attribution=AttributionConfig(top_classes=2, segments_per_image=5, ig_steps=32),
        clustering=ClusterConfig(num_clusters=4, seed=GOLDEN_SEED),
        tile_px=16,
    )
    run_pipeline(cfg)
    return workdir / "out"
