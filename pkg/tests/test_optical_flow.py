import numpy as np
import pytest

from deflicker.optical_flow import (
    FlowConfig,
    FlowError,
    FlowProvider,
    estimate_flow,
    load_flow,
    occlusion_mask,
    pyramid_levels,
    save_flow,
    warp_backward,
)

from .conftest import shifted_pair, textured


def test_zero_motion():
    img = textured(64)
    fl = estimate_flow(img, img)
    assert np.abs(fl).max() < 0.05


@pytest.mark.parametrize("u,v", [(2, 1), (0, 3), (-4, 0), (3, -2), (4, 4), (-1, -4)])
def test_translation_epe(u, v):
    src, dst = shifted_pair(u, v)
    fl = estimate_flow(src, dst)
    inner = fl[6:-6, 6:-6]
    epe = np.hypot(inner[..., 0] - u, inner[..., 1] - v)
    assert np.median(epe) < 0.5


def test_flicker_robust_translation():
    src, dst = shifted_pair(2, 1)
    fl = estimate_flow(src, np.clip(dst * 1.25 + 0.05, 0, 1))
    epe = np.hypot(fl[6:-6, 6:-6, 0] - 2, fl[6:-6, 6:-6, 1] - 1)
    assert np.median(epe) < 0.5


def test_flat_image_finite():
    img = np.full((32, 32, 3), 0.4)
    fl = estimate_flow(img, img)
    assert np.isfinite(fl).all()
    assert np.abs(fl).max() < 0.05


def test_errors():
    with pytest.raises(FlowError):
        estimate_flow(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))
    with pytest.raises(FlowError):
        estimate_flow(np.zeros((6, 8, 3)), np.zeros((6, 8, 3)))
    with pytest.raises(FlowError):
        warp_backward(np.zeros((8, 8, 3)), np.zeros((8, 9, 2)))
    with pytest.raises(FlowError):
        occlusion_mask(np.zeros((8, 8, 2)), np.zeros((8, 9, 2)))


def test_levels():
    assert pyramid_levels(8, 8) == 1
    assert pyramid_levels(64, 64) == 4
    assert pyramid_levels(64, 100) == 4


def test_deterministic():
    src, dst = shifted_pair(1, 2)
    assert estimate_flow(src, dst).tobytes() == estimate_flow(src, dst).tobytes()


def test_warp_identity_bitwise():
    img = textured(20).astype(np.float32)
    out = warp_backward(img, np.zeros((20, 20, 2), np.float32))
    assert out.tobytes() == img.tobytes()


def test_warp_ramp():
    w = 11
    ramp = np.tile((np.arange(w) / (w - 1))[None, :, None], (5, 1, 3))
    flow = np.zeros((5, w, 2))
    flow[..., 0] = 1.0
    out = warp_backward(ramp, flow)
    np.testing.assert_allclose(out[:, :-1], ramp[:, :-1] + 1 / (w - 1), atol=1e-12)
    # fractional shift stays linear on a ramp
    flow[..., 0] = 0.25
    out = warp_backward(ramp, flow)
    np.testing.assert_allclose(out[:, :-1], ramp[:, :-1] + 0.25 / (w - 1), atol=1e-12)


def test_warp_off_image():
    flow = np.full((6, 6, 2), 100.0)
    assert np.all(warp_backward(np.ones((6, 6, 3)), flow) == 0)


def test_warp_border_padding():
    flow = np.full((6, 6, 2), 100.0)
    assert np.all(warp_backward(np.ones((6, 6, 3)), flow, padding="border") == 1)


def test_mask_cases():
    z = np.zeros((6, 7, 2))
    assert np.all(occlusion_mask(z, z, 1.0) == 1)
    fwd = z.copy()
    fwd[..., 0] = 5
    assert np.all(occlusion_mask(fwd, z, 1.0) == 0)
    fwd[..., 0] = 1
    bwd = z.copy()
    bwd[..., 0] = -1
    m = occlusion_mask(fwd, bwd, 0.5)
    expected = np.ones((6, 7), np.uint8)
    expected[:, 6] = 0  # x + 1 > 6
    assert np.array_equal(m, expected)
    assert m.dtype == np.uint8


def test_mask_monotone_in_tol():
    rng = np.random.default_rng(0)
    fwd = rng.normal(size=(10, 10, 2))
    bwd = rng.normal(size=(10, 10, 2))
    prev = occlusion_mask(fwd, bwd, 0.0)
    for tol in [0.5, 1.0, 2.0, 5.0]:
        cur = occlusion_mask(fwd, bwd, tol)
        assert np.all(cur >= prev)
        prev = cur


def test_flo2_round_trip(tmp_path):
    fl = np.random.default_rng(1).normal(size=(5, 7, 2)).astype(np.float32)
    save_flow(tmp_path / "a.flo2", fl)
    blob = (tmp_path / "a.flo2").read_bytes()
    assert blob[:8] == (5).to_bytes(4, "little") + (7).to_bytes(4, "little")
    assert len(blob) == 8 + 5 * 7 * 8
    assert load_flow(tmp_path / "a.flo2").tobytes() == fl.tobytes()
    (tmp_path / "b.flo2").write_bytes(blob[:-4])
    with pytest.raises(FlowError):
        load_flow(tmp_path / "b.flo2")


def test_provider_cache(tmp_path):
    src, dst = shifted_pair(1, 0, size=32)
    video = np.stack([src, dst])
    p = FlowProvider(video, FlowConfig(), cache_dir=tmp_path)
    fl, mask = p.pair(1, 0)
    assert (tmp_path / "flow_00001_00000.flo2").is_file()
    again = FlowProvider(video, FlowConfig(), cache_dir=tmp_path).pair(1, 0)
    assert again[0].tobytes() == fl.tobytes() and np.array_equal(again[1], mask)
