import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from bundlecraft import corpus as C
from bundlecraft.errors import SynthSpecError
from bundlecraft.synth import SynthSpec, generate, spec_from_dict

SMALL = dict(
    n_items=100, n_users=30, n_bundles=20, n_topics=4, feature_dim=8,
    bundle_size_min=3, bundle_size_max=6, feedback_density=0.08,
    cold_item_fraction=0.1, modality_missing_fraction=0.15, seed=11,
)


def dir_hashes(path):
    out = {}
    for p in sorted(Path(path).iterdir()):
        out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def test_emits_six_files(tmp_path):
    generate(SynthSpec(**SMALL), tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == [
        "affiliations.tsv", "features_media.bin", "features_text.bin",
        "interactions.tsv", "item_index.tsv", "manifest.json",
    ]


def test_same_seed_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate(SynthSpec(**SMALL), a)
    generate(SynthSpec(**SMALL), b)
    assert dir_hashes(a) == dir_hashes(b)


def test_different_seed_differs(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate(SynthSpec(**SMALL), a)
    generate(SynthSpec(**{**SMALL, "seed": 12}), b)
    assert dir_hashes(a) != dir_hashes(b)


def test_loader_round_trip_and_manifest_counts(tmp_path):
    manifest = generate(SynthSpec(**SMALL), tmp_path)
    catalog, features, graph = C.load_dir(tmp_path)
    assert catalog.n_items == manifest["counts"]["items"]
    assert catalog.n_bundles == manifest["counts"]["bundles"]
    assert graph.n_edges == manifest["counts"]["interactions"]
    assert sum(len(b) for b in catalog.bundles) == manifest["counts"]["bundle_items"]
    # users with zero interactions are not interned by the loader
    assert catalog.n_users <= manifest["counts"]["users"]


def test_manifest_consistent_with_files(tmp_path):
    manifest = generate(SynthSpec(**SMALL), tmp_path)
    catalog, features, graph = C.load_dir(tmp_path)
    topic_of = manifest["topic_of_item"]
    assert len(topic_of) == catalog.n_items
    # every bundle is dominated by its declared topic
    for b, topic in enumerate(manifest["bundle_topic"]):
        members = sorted(catalog.bundles[b])
        same = sum(1 for i in members if topic_of[i] == topic)
        assert same >= len(members) / 2

    # cold items never appear in simulated-train bundles
    cold = set(manifest["cold_items"])
    for b in manifest["simulated_split"]["train"]:
        assert not cold & catalog.bundles[b]


def test_cold_items_present_in_test_bundles(tmp_path):
    manifest = generate(SynthSpec(**{**SMALL, "cold_item_fraction": 0.2}), tmp_path)
    catalog, _, _ = C.load_dir(tmp_path)
    cold = set(manifest["cold_items"])
    test_members = set()
    for b in manifest["simulated_split"]["test"]:
        test_members |= catalog.bundles[b]
    assert cold & test_members


def test_zero_cold_fraction_covers_all_test_items(tmp_path):
    manifest = generate(SynthSpec(**{**SMALL, "cold_item_fraction": 0.0}), tmp_path)
    catalog, _, _ = C.load_dir(tmp_path)
    warm = set()
    for b in manifest["simulated_split"]["train"]:
        warm |= catalog.bundles[b]
    for b in manifest["simulated_split"]["val"] + manifest["simulated_split"]["test"]:
        assert catalog.bundles[b] <= warm


def test_single_topic_works(tmp_path):
    spec = SynthSpec(**{**SMALL, "n_topics": 1})
    manifest = generate(spec, tmp_path)
    assert set(manifest["topic_of_item"]) == {0}


def test_split_simulation_matches_corpus_split(tmp_path):
    manifest = generate(SynthSpec(**SMALL), tmp_path)
    catalog, _, _ = C.load_dir(tmp_path)
    train, val, test = C.split_bundles(catalog, SMALL["seed"])
    assert manifest["simulated_split"] == {"train": train, "val": val, "test": test}


def test_infeasible_spec_rejected():
    with pytest.raises(SynthSpecError):
        SynthSpec(**{**SMALL, "bundle_size_max": 80}).validate()
    with pytest.raises(SynthSpecError):
        SynthSpec(**{**SMALL, "n_topics": 0}).validate()
    with pytest.raises(SynthSpecError):
        SynthSpec(**{**SMALL, "feedback_density": 1.5}).validate()
    with pytest.raises(SynthSpecError):
        spec_from_dict({**SMALL, "bogus_key": 1})


def test_no_missing_content_pairs(tmp_path):
    generate(SynthSpec(**{**SMALL, "modality_missing_fraction": 0.5}), tmp_path)
    _, features, _ = C.load_dir(tmp_path)
    assert (features.text_present | features.media_present).all()


@pytest.mark.slow
def test_default_spec_oracle_recall(tmp_path):
    manifest = generate(SynthSpec(seed=0), tmp_path)
    assert manifest["oracle_recall_at_20"] > 0.6
