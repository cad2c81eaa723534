"""Compare two image classifiers by their most influential image segments."""

from .attribution import (
    AttributionConfig,
    SegmentAttributionRecord,
    attribute_sample,
    integrated_gradients,
    segment_prescore,
    select_top_segments,
    shapley_exact,
)
from .clustering import (
    BinningSpec,
    ClusterConfig,
    ConceptCluster,
    compute_stats,
    kmeans,
    order_clusters,
    pool_and_embed,
    sort_within_cluster,
)
from .datasets import (
    DatasetManifest,
    SampleSet,
    classify_quadrant,
    filter_confident_disagreement,
    load_manifest,
    sample_balanced,
)
from .models import (
    ModelHandle,
    build_embedder,
    build_model,
    constant_model,
    embed,
    gradient,
    grid_mean_embedder,
    linear_model,
    mlp_model,
    predict,
    random_model,
    remote_model,
)
from .pipeline import PipelineConfig, run_pipeline, validate_untrained
from .reports import (
    ReportDocument,
    ReportStyle,
    render_concept_view,
    render_confusion_view,
    render_histogram_view,
)
from .scenario import generate_watermark_scenario
from .segmentation import SegmentRef, blur_exclude, crop_segment, grid_segments

__version__ = "0.1.0"
