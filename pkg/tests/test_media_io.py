import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from deflicker.media_io import (
    MediaError,
    load_frame_sequence,
    quantize,
    save_frame_sequence,
)


def test_black_frames(tmp_path):
    for i in range(3):
        Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / f"f{i}.png")
    video = load_frame_sequence(tmp_path)
    assert video.shape == (3, 8, 8, 3)
    assert np.all(video == 0.0)


def test_dimension_mismatch(tmp_path):
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / "a.png")
    Image.fromarray(np.zeros((8, 9, 3), np.uint8)).save(tmp_path / "b.png")
    with pytest.raises(MediaError, match="mismatch"):
        load_frame_sequence(tmp_path)


def test_missing_and_empty(tmp_path):
    with pytest.raises(MediaError):
        load_frame_sequence(tmp_path / "nope")
    with pytest.raises(MediaError):
        load_frame_sequence(tmp_path)


def test_undecodable(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not a png")
    with pytest.raises(MediaError, match="decode"):
        load_frame_sequence(tmp_path)


def test_lexicographic_order(tmp_path):
    for name, v in [("b.png", 20), ("a.png", 10), ("c.png", 30)]:
        Image.fromarray(np.full((2, 2, 3), v, np.uint8)).save(tmp_path / name)
    video = load_frame_sequence(tmp_path)
    np.testing.assert_allclose(video[:, 0, 0, 0] * 255, [10, 20, 30], atol=1e-4)


def test_round_trip_quantization_bound(tmp_path):
    rng = np.random.default_rng(0)
    v = rng.uniform(size=(2, 16, 16, 3)).astype(np.float32)
    save_frame_sequence(v, tmp_path)
    back = load_frame_sequence(tmp_path)
    assert np.abs(back - v).max() <= 1 / 510 + 1e-7


def test_naming(tmp_path):
    n = save_frame_sequence(np.zeros((2, 4, 4, 3), np.float32), tmp_path)
    assert n == 2
    assert sorted(p.name for p in tmp_path.iterdir()) == ["00000.png", "00001.png"]


def test_quantize_values():
    assert quantize(np.array([0.5]))[0] == 128
    assert quantize(np.array([1.2]))[0] == 255
    assert quantize(np.array([-0.3]))[0] == 0


def test_save_clamps(tmp_path):
    v = np.full((1, 2, 2, 3), 1.2, np.float32)
    save_frame_sequence(v, tmp_path)
    assert np.asarray(Image.open(tmp_path / "00000.png")).min() == 255


def test_empty_video(tmp_path):
    with pytest.raises(MediaError):
        save_frame_sequence(np.zeros((0, 4, 4, 3), np.float32), tmp_path)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_idempotent_after_first_quantization(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-0.2, 1.2, size=(1, 5, 7, 3)).astype(np.float32)
    d1 = tmp_path_factory.mktemp("a")
    d2 = tmp_path_factory.mktemp("b")
    save_frame_sequence(v, d1)
    once = load_frame_sequence(d1)
    save_frame_sequence(once, d2)
    twice = load_frame_sequence(d2)
    assert once.tobytes() == twice.tobytes()
    assert once.min() >= 0.0 and once.max() <= 1.0
