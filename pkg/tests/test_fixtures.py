import json

import numpy as np
import pytest

from deflicker.fixtures import (
    CLIPS,
    DEFAULT_SEED,
    FLICKER_FIXTURES,
    fixtures_root,
    generate_fixtures,
    load_corpus,
    pan_clips,
    refiner_training_pairs,
)
from deflicker.media_io import directory_checksum, load_frame_sequence
from deflicker.metrics import psnr, warp_error_video
from deflicker.optical_flow import FlowProvider

ROOT = fixtures_root()


@pytest.fixture(scope="module")
def top_manifest():
    return json.loads((ROOT / "manifest.json").read_text())


def test_committed_checksums_verify(top_manifest):
    assert top_manifest["seed"] == DEFAULT_SEED
    for rel, digest in top_manifest["checksums"].items():
        assert directory_checksum(ROOT / rel) == digest, rel


def test_every_fixture_manifest_is_complete(top_manifest):
    assert top_manifest["fixtures"] == [fx.name for fx in FLICKER_FIXTURES]
    for fx in FLICKER_FIXTURES:
        man = json.loads((ROOT / "flicker" / fx.name / "manifest.json").read_text())
        assert man["flicker"]["frame_count"] == fx.frames
        assert man["flicker"]["spec"]["mode"] == fx.mode
        for which in ("clean", "input"):
            assert man["expected"][which]["provenance"]
            assert directory_checksum(ROOT / "flicker" / fx.name / which) == man["checksums"][which]


def test_static_fixture_clean_is_consistent():
    man = json.loads((ROOT / "flicker" / "static_w1" / "manifest.json").read_text())
    assert man["expected"]["clean"]["warp_error_reference_flow"] < 1e-3


@pytest.mark.parametrize("name", ["static_w1", "sprite_w1"])
def test_w1_fixtures_are_clearly_flickered(name):
    exp = json.loads((ROOT / "flicker" / name / "manifest.json").read_text())["expected"]
    assert exp["input"]["warp_error_reference_flow"] > 3 * exp["clean"]["warp_error_reference_flow"]


def test_recorded_values_reproduce():
    base = ROOT / "flicker" / "sprite_w3"
    exp = json.loads((base / "manifest.json").read_text())["expected"]["input"]
    clean, inp = load_frame_sequence(base / "clean"), load_frame_sequence(base / "input")
    e = warp_error_video(inp, FlowProvider(clean)).mean_warp_error
    assert abs(e - exp["warp_error_reference_flow"]) < 1e-6
    assert abs(psnr(inp, clean) - exp["psnr_vs_clean"]) < 1e-6


def test_corpus_splits():
    train, hold = load_corpus(ROOT, "train"), load_corpus(ROOT, "holdout")
    assert len(train) >= 150 and len(hold) >= 50
    assert train[0].shape == (80, 80, 3)


def test_clips_are_procedural_and_seeded():
    for name, fn in CLIPS.items():
        a, b = fn(5, 3), fn(5, 3)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (5, 64, 64, 3) and a.min() >= 0 and a.max() <= 1


def test_pan_clips_and_refiner_pairs():
    corpus = load_corpus(ROOT, "train")[:4]
    clips = pan_clips(corpus, 3, frames=4, size=32, seed=1)
    assert all(c.shape == (4, 32, 32, 3) for c in clips)
    pairs = refiner_training_pairs(corpus, 2, frames=4, size=32, seed=1)
    assert len(pairs) == 2 and not np.array_equal(pairs[0][0], pairs[0][1])
    consistent = refiner_training_pairs(corpus, 2, frames=4, size=32, seed=1, clean_fraction=1.0)
    assert all(np.array_equal(c, f) for c, f in consistent)
    with pytest.raises(ValueError):
        refiner_training_pairs(corpus, 1, clean_fraction=2.0)


def test_regeneration_matches_committed_checksums():
    # regenerates every fixture in memory and compares against the manifest
    generate_fixtures(ROOT, DEFAULT_SEED, verify=True)


def test_regeneration_detects_drift(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"checksums": {"corpus/train": "0" * 64}}))
    with pytest.raises(ValueError, match="drift"):
        generate_fixtures(tmp_path, DEFAULT_SEED, verify=True)
