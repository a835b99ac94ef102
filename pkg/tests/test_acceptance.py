"""Acceptance suite.

One test per acceptance criterion.  Each prints a single
``[criterion N] PASS|FAIL <title>: <measurements>`` line to the terminal
(even without ``-s``) and then asserts the criterion at its stated
tolerance.  Long-running artifacts (atlas fits, end-to-end runs) are built
once per session and shared between criteria.
"""

import time

import numpy as np
import pytest

from deflicker.atlas import reconstruct_atlas_video, uv_drift
from deflicker.config import PipelineConfig
from deflicker.fixtures import fixtures_root, load_corpus
from deflicker.local_refine import RefinerModel, refine_video
from deflicker.media_io import load_frame_sequence
from deflicker.metrics import psnr, warp_error_pair, warp_error_video
from deflicker.neural_filter import DistortionConfig, FilterModel, filter_frame, make_pair
from deflicker.nn.gradcheck import check_gradients, standard_suite
from deflicker.optical_flow import FlowProvider, estimate_flow
from deflicker.pipeline import run_deflicker

from .conftest import shifted_pair, textured

FIXTURES = fixtures_root()
CHECKPOINTS = FIXTURES / "checkpoints"


@pytest.fixture
def verdict(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, f"criterion {number} ({title}) not met: {detail}"
    return emit


@pytest.fixture(scope="session")
def filter_model():
    return FilterModel.load(CHECKPOINTS / "filter.ckpt")


@pytest.fixture(scope="session")
def refiner_model():
    return RefinerModel.load(CHECKPOINTS / "refiner.ckpt")


def _eval_config() -> PipelineConfig:
    # fixture metrics use flows estimated on the clean reference clip
    return PipelineConfig().apply_overrides({"eval.flow_source": "reference"})


@pytest.fixture(scope="session")
def end_to_end(tmp_path_factory, filter_model, refiner_model):
    """Full default-configuration runs, cached by fixture name."""
    cache = {}

    def run(name: str):
        if name not in cache:
            if name == "static_clean":
                clean = load_frame_sequence(FIXTURES / "clips" / "static")
                video = clean
            else:
                video = load_frame_sequence(FIXTURES / "flicker" / name / "input")
                clean = load_frame_sequence(FIXTURES / "flicker" / name / "clean")
            t0 = time.perf_counter()
            res = run_deflicker(video, _eval_config(), tmp_path_factory.mktemp(name), filter_model,
                                refiner_model, reference=clean)
            cache[name] = (res, clean, time.perf_counter() - t0)
        return cache[name]

    return run


# -- 1 ------------------------------------------------------------------------------------

def test_criterion_1_gradient_suite(verdict):
    t0 = time.perf_counter()
    results = [check_gradients(fn, inputs, name=name, n_samples=1000, eps=1e-3, rel_tol=1e-3)
               for name, fn, inputs in standard_suite(seed=0)]
    elapsed = time.perf_counter() - t0
    worst = min(results, key=lambda r: r.pass_rate)
    ok = all(r.pass_rate >= 0.99 and r.n_checked >= 1000 for r in results) and elapsed < 60
    verdict(1, "gradient suite", ok,
            f"{len(results)} ops, worst {worst.name} pass rate {worst.pass_rate:.4f}, {elapsed:.1f}s")


# -- 2 ------------------------------------------------------------------------------------

SHIFTS = [(1, 0), (0, -2), (3, 1), (-4, 0), (2, -3), (-1, 4), (4, 4), (-4, -4)]


def test_criterion_2_flow_suite(verdict):
    t0 = time.perf_counter()
    epes = {}
    for u, v in SHIFTS:
        src, dst = shifted_pair(u, v, size=64, seed=u * 10 + v + 50)
        flow = estimate_flow(src, dst)  # whole-image median, borders included
        epe = np.hypot(flow[..., 0] - u, flow[..., 1] - v)
        epes[(u, v)] = float(np.median(epe))
    still = textured(64, seed=7)
    zero_max = float(np.abs(estimate_flow(still, still.copy())).max())
    elapsed = time.perf_counter() - t0
    worst = max(epes, key=epes.get)
    ok = max(epes.values()) < 0.5 and zero_max < 0.05 and elapsed < 60
    verdict(2, "flow suite", ok, f"worst median EPE {epes[worst]:.3f}px at shift {worst}, "
                                 f"zero-motion max |flow| {zero_max:.4f}px, {elapsed:.1f}s")


# -- 3 ------------------------------------------------------------------------------------

def test_criterion_3_metric_suite(verdict):
    t0 = time.perf_counter()
    frame = textured(32, seed=1)
    zero = np.zeros((32, 32, 2))
    full = np.ones((32, 32), np.uint8)
    e_same = warp_error_pair(frame, frame, zero, full)
    a = np.array([[[0.0] * 3, [0.5] * 3]])
    b = np.array([[[0.0] * 3, [0.0] * 3]])
    e_hand = warp_error_pair(a, b, np.zeros((1, 2, 2)), np.ones((1, 2), np.uint8))
    ref = np.full((8, 8, 8, 3), 0.5)
    p = psnr(ref + 0.1, ref)
    static = np.stack([frame] * 6)
    e_static = warp_error_video(static, FlowProvider(static)).mean_warp_error
    elapsed = time.perf_counter() - t0
    ok = e_same == 0.0 and e_hand == 0.25 and abs(p - 20.0) <= 1e-6 and e_static < 1e-3 and elapsed < 30
    verdict(3, "metric suite", ok, f"E_pair(identical)={e_same}, 1x2 example={e_hand}, PSNR={p:.9f}dB, "
                                   f"static E_warp={e_static:.2e}, {elapsed:.1f}s")


# -- 4 ------------------------------------------------------------------------------------

def test_criterion_4_atlas_consistency(verdict, static_w1_atlas):
    t0 = time.perf_counter()
    model, video, clean = static_w1_atlas
    flows = FlowProvider(clean)
    e_in = warp_error_video(video, flows).mean_warp_error
    e_atlas = warp_error_video(reconstruct_atlas_video(model), flows).mean_warp_error
    drift = uv_drift(model)
    frac = float((drift < 0.01).mean())
    elapsed = time.perf_counter() - t0 + model.trace.header["seconds"]
    ok = e_atlas <= 0.25 * e_in and frac >= 0.95 and elapsed < 15 * 60
    verdict(4, "atlas consistency", ok, f"E_warp atlas {e_atlas:.4f} vs input {e_in:.4f} "
                                        f"(ratio {e_atlas / e_in:.3f}), UV drift < 0.01 on {100 * frac:.1f}% "
                                        f"of pixels, {elapsed / 60:.1f} min")


# -- 5 ------------------------------------------------------------------------------------

def test_criterion_5_filtering_property(verdict, filter_model):
    t0 = time.perf_counter()
    holdout = load_corpus(FIXTURES, "holdout")[:50]
    cfg = DistortionConfig()
    wins = 0
    for i, img in enumerate(holdout):
        x = img[8:72, 8:72]
        a, s = make_pair(x, cfg, [777, i])
        out = filter_frame(filter_model, a, s)
        wins += np.abs(out - x).mean() < min(np.abs(a - x).mean(), np.abs(s - x).mean())
    elapsed = time.perf_counter() - t0
    ok = len(holdout) == 50 and wins >= 45 and elapsed < 60
    verdict(5, "filtering property", ok, f"{wins}/50 held-out pairs improved on both inputs, {elapsed:.1f}s")


# -- 6 ------------------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["sprite_w1", "sprite_w3", "sprite_w10"])
def test_criterion_6_end_to_end(verdict, end_to_end, name):
    res, _, elapsed = end_to_end(name)
    m = res.report["metrics"]
    e_in, e_out = m["input"]["mean_warp_error"], m["output"]["mean_warp_error"]
    p_in, p_out = m["input"]["psnr_vs_reference"], m["output"]["psnr_vs_reference"]
    ok = e_out < 0.5 * e_in and p_out >= p_in + 2.0 and elapsed < 20 * 60
    verdict(6, f"end-to-end deflickering [{name}]", ok,
            f"E_warp {e_in:.4f} -> {e_out:.4f} (ratio {e_out / e_in:.3f}), "
            f"PSNR {p_in:.2f} -> {p_out:.2f} dB ({p_out - p_in:+.2f}), {elapsed / 60:.1f} min")


# -- 7 ------------------------------------------------------------------------------------

def test_criterion_7_no_harm(verdict, end_to_end):
    res, clean, elapsed = end_to_end("static_clean")
    m = res.report["metrics"]
    e_in, e_out = m["input"]["mean_warp_error"], m["output"]["mean_warp_error"]
    mad = float(np.abs(res.videos["output"] - res.videos["input"]).mean())
    ok = e_out <= e_in + 1e-3 and mad < 0.05 and elapsed < 10 * 60
    verdict(7, "no-harm on static clean clip", ok,
            f"E_warp {e_in:.5f} -> {e_out:.5f}, mean |out - in| {mad:.4f}, {elapsed / 60:.1f} min")


# -- 8 ------------------------------------------------------------------------------------

def test_criterion_8_ablation_order(verdict, end_to_end, refiner_model):
    res, clean, _ = end_to_end("sprite_w1")
    flows = FlowProvider(clean)
    e_full = warp_error_video(res.videos["output"], flows).mean_warp_error
    e_no_local = warp_error_video(res.videos["filtered"], flows).mean_warp_error
    refine_only = np.clip(np.round(refine_video(refiner_model, res.videos["input"]) * 255) / 255, 0, 1)
    e_no_atlas = warp_error_video(refine_only, flows).mean_warp_error
    ok = e_full <= e_no_local <= e_no_atlas and e_full <= 0.8 * e_no_atlas
    verdict(8, "ablation order", ok, f"full {e_full:.4f} <= w/o local {e_no_local:.4f} <= "
                                     f"w/o atlas+filter {e_no_atlas:.4f} (full/last {e_full / e_no_atlas:.3f})")


# -- 9 ------------------------------------------------------------------------------------

def test_criterion_9_determinism(verdict, tmp_path, filter_model, refiner_model):
    base = FIXTURES / "flicker" / "sprite_w1"
    video, clean = load_frame_sequence(base / "input"), load_frame_sequence(base / "clean")
    cfg = _eval_config().apply_overrides({"atlas.iterations": 300})
    digests = []
    for name in ("first", "second"):
        work = tmp_path / name
        run_deflicker(video, cfg, work, filter_model, refiner_model, reference=clean)
        pngs = sorted((work / "refined" / "frames").glob("*.png")) + sorted((work / "atlas" / "frames").glob("*.png"))
        digests.append(([p.read_bytes() for p in pngs],
                        (work / "reports" / "deflicker.json").read_bytes(),
                        (work / "reports" / "deflicker.txt").read_bytes()))
    same_png = digests[0][0] == digests[1][0] and len(digests[0][0]) == 40
    same_report = digests[0][1:] == digests[1][1:]
    verdict(9, "determinism", same_png and same_report,
            f"{len(digests[0][0])} PNGs identical={same_png}, reports identical={same_report}")
