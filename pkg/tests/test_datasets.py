import numpy as np
import pytest

from segcompare.datasets import (
    SampleMember,
    SampleSet,
    classify_quadrant,
    filter_confident_disagreement,
    load_manifest,
    sample_balanced,
)
from segcompare.errors import IngestionError, InputError

from conftest import write_pixel_dataset


def quadrant_spec(counts):
    """(name, pixel, label) rows that land in the requested quadrants."""
    spec = []
    i = 0
    layout = {"TP": (1.0, "pos"), "FP": (1.0, "neg"), "FN": (0.0, "pos"), "TN": (0.0, "neg")}
    for quadrant, n in counts.items():
        pixel, label = layout[quadrant]
        for _ in range(n):
            spec.append((f"{quadrant.lower()}_{i:03d}", pixel, label))
            i += 1
    return spec


def test_load_manifest_four_valid_entries(tmp_path):
    manifest = write_pixel_dataset(
        tmp_path, [("a", 0.0, "neg"), ("b", 1.0, "pos"), ("c", 0.0, "neg"), ("d", 1.0, "pos")]
    )
    loaded = load_manifest(manifest, class_names=["neg", "pos"])
    assert len(loaded.entries) == 4
    assert loaded.entries[0].image_path == "a.png"


def test_load_manifest_unknown_label_is_ingestion_error(tmp_path):
    manifest = write_pixel_dataset(tmp_path, [("a", 0.0, "mystery")])
    with pytest.raises(IngestionError, match="mystery"):
        load_manifest(manifest, class_names=["neg", "pos"])


def test_load_manifest_duplicate_path_is_ingestion_error(tmp_path):
    manifest = write_pixel_dataset(tmp_path, [("a", 0.0, "neg")])
    manifest.write_text(
        "image_path,label\na.png,neg\na.png,pos\n", encoding="utf-8"
    )
    with pytest.raises(IngestionError, match="duplicate"):
        load_manifest(manifest, class_names=["neg", "pos"])


def test_load_manifest_missing_image_is_ingestion_error(tmp_path):
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("image_path,label\nghost.png,neg\n", encoding="utf-8")
    with pytest.raises(IngestionError, match="ghost"):
        load_manifest(manifest, class_names=["neg"])


def test_load_manifest_missing_file_is_ingestion_error(tmp_path):
    with pytest.raises(IngestionError):
        load_manifest(tmp_path / "nope.csv")


@pytest.mark.parametrize(
    "scores,label,target,expected",
    [
        ([0.1, 0.8, 0.1], "oak", "oak", "TP"),
        ([0.1, 0.8, 0.1], "pine", "oak", "FP"),
        ([0.1, 0.1, 0.8], "pine", "oak", "TN"),
        ([0.1, 0.1, 0.8], "oak", "oak", "FN"),
    ],
)
def test_classify_quadrant_cases(scores, label, target, expected):
    classes = ["pine", "oak", "elm"]
    assert classify_quadrant(np.array(scores), label, target, classes) == expected


def test_classify_quadrant_tie_breaks_to_lowest_index():
    classes = ["a", "b"]
    assert classify_quadrant(np.array([0.5, 0.5]), "a", "a", classes) == "TP"
    assert classify_quadrant(np.array([0.5, 0.5]), "b", "b", classes) == "FN"


def test_classify_quadrant_unknown_class_is_error():
    with pytest.raises(InputError):
        classify_quadrant(np.array([1.0, 0.0]), "zz", "a", ["a", "b"])


def test_sample_balanced_ample_candidates(tmp_path, pixel_gate_model):
    manifest = write_pixel_dataset(
        tmp_path, quadrant_spec({"TP": 30, "TN": 30, "FP": 30, "FN": 30})
    )
    loaded = load_manifest(manifest, class_names=["neg", "pos"])
    sample = sample_balanced(loaded, pixel_gate_model, "pos", budget=100, seed=1)
    assert len(sample.members) == 100
    assert sample.quadrant_counts() == {"TP": 25, "TN": 25, "FP": 25, "FN": 25}


def test_sample_balanced_shortfall_redistributes_round_robin(tmp_path, pixel_gate_model):
    manifest = write_pixel_dataset(
        tmp_path, quadrant_spec({"TP": 40, "TN": 40, "FP": 40, "FN": 5})
    )
    loaded = load_manifest(manifest, class_names=["neg", "pos"])
    sample = sample_balanced(loaded, pixel_gate_model, "pos", budget=100, seed=1)
    assert sample.quadrant_counts() == {"TP": 32, "TN": 32, "FP": 31, "FN": 5}
    assert len(sample.members) == 100


def test_sample_balanced_same_seed_identical(tmp_path, pixel_gate_model):
    manifest = write_pixel_dataset(
        tmp_path, quadrant_spec({"TP": 30, "TN": 30, "FP": 30, "FN": 30})
    )
    loaded = load_manifest(manifest, class_names=["neg", "pos"])
    a = sample_balanced(loaded, pixel_gate_model, "pos", budget=40, seed=7)
    b = sample_balanced(loaded, pixel_gate_model, "pos", budget=40, seed=7)
    assert [m.image_id for m in a.members] == [m.image_id for m in b.members]


def test_sample_balanced_disjoint_seeds_differ_but_counts_match(tmp_path, pixel_gate_model):
    manifest = write_pixel_dataset(
        tmp_path, quadrant_spec({"TP": 50, "TN": 50, "FP": 50, "FN": 50})
    )
    loaded = load_manifest(manifest, class_names=["neg", "pos"])
    a = sample_balanced(loaded, pixel_gate_model, "pos", budget=40, seed=1)
    b = sample_balanced(loaded, pixel_gate_model, "pos", budget=40, seed=2)
    assert [m.image_id for m in a.members] != [m.image_id for m in b.members]
    assert a.quadrant_counts() == b.quadrant_counts()


def test_sample_balanced_quadrants_match_reclassification(tmp_path, pixel_gate_model):
    manifest = write_pixel_dataset(
        tmp_path, quadrant_spec({"TP": 10, "TN": 10, "FP": 10, "FN": 10})
    )
    loaded = load_manifest(manifest, class_names=["neg", "pos"])
    sample = sample_balanced(loaded, pixel_gate_model, "pos", budget=20, seed=3)
    for member in sample.members:
        label = loaded.label_of(member.image_id)
        assert (
            classify_quadrant(member.scores, label, "pos", ["neg", "pos"])
            == member.quadrant
        )


def test_sample_balanced_total_capped_by_dataset(tmp_path, pixel_gate_model):
    manifest = write_pixel_dataset(
        tmp_path, quadrant_spec({"TP": 3, "TN": 3, "FP": 3, "FN": 3})
    )
    loaded = load_manifest(manifest, class_names=["neg", "pos"])
    sample = sample_balanced(loaded, pixel_gate_model, "pos", budget=100, seed=0)
    assert len(sample.members) == 12


def test_sample_balanced_empty_manifest_is_error(tmp_path, pixel_gate_model):
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("image_path,label\n", encoding="utf-8")
    loaded = load_manifest(manifest, class_names=["neg", "pos"])
    with pytest.raises(InputError):
        sample_balanced(loaded, pixel_gate_model, "pos", budget=100, seed=0)


def _member(image_id, quadrant, scores):
    return SampleMember(image_id, quadrant, np.asarray(scores, dtype=np.float32))


def test_confident_disagreement_agreeing_models_is_empty():
    set_a = SampleSet("a", "pos", [_member("x", "TP", [0.1, 0.9])], 0)
    set_b = SampleSet("b", "pos", [_member("x", "TP", [0.2, 0.8])], 0)
    assert (
        filter_confident_disagreement(set_a, set_b, 0.7, ["neg", "pos"], ["neg", "pos"])
        == []
    )


def test_confident_disagreement_included_above_threshold():
    set_a = SampleSet("a", "pos", [_member("x", "TP", [0.05, 0.95])], 0)
    set_b = SampleSet("b", "pos", [_member("x", "TN", [0.90, 0.10])], 0)
    assert filter_confident_disagreement(
        set_a, set_b, 0.8, ["neg", "pos"], ["neg", "pos"]
    ) == ["x"]


def test_confident_disagreement_excluded_at_higher_threshold():
    set_a = SampleSet("a", "pos", [_member("x", "TP", [0.05, 0.95])], 0)
    set_b = SampleSet("b", "pos", [_member("x", "TN", [0.90, 0.10])], 0)
    assert (
        filter_confident_disagreement(set_a, set_b, 0.99, ["neg", "pos"], ["neg", "pos"])
        == []
    )


def test_confident_disagreement_threshold_validation():
    set_a = SampleSet("a", "pos", [], 0)
    set_b = SampleSet("b", "pos", [], 0)
    with pytest.raises(InputError):
        filter_confident_disagreement(set_a, set_b, 0.5, ["a"], ["a"])
