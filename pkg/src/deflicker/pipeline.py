"""End-to-end orchestration: atlas -> filter -> local refinement, with a
resumable work directory and metric reports.

Work-dir layout::

    work/
      .lock                   held while a process owns the directory
      flows/                  cached .flo2 flows of the input video
      atlas/   frames/ atlas.ckpt atlas_log.csv preview.png .complete
      filtered/ frames/ .complete
      refined/  frames/ .complete
      reports/ deflicker.json deflicker.txt

Each stage reads the previous stage's PNG frames, so a resumed run and a
fresh run see identical (quantized) inputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .atlas import AtlasModel, reconstruct_atlas_video, render_atlas_image, train_atlas
from .config import PipelineConfig
from .local_refine import RefinerModel, refine_video
from .media_io import load_frame_sequence, save_frame, save_frame_sequence, video_checksum
from .metrics import psnr, warp_error_video
from .neural_filter import FilterModel, filter_video
from .nn.layers import TrainTrace
from .optical_flow import FlowProvider

log = logging.getLogger(__name__)

STAGES = ("atlas", "filter", "refine")
_STAGE_DIRS = {"atlas": "atlas", "filter": "filtered", "refine": "refined"}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class LockError(RuntimeError):
    pass


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_loss_csv(path: str | Path, trace: TrainTrace, log_every: int = 1) -> Path:
    """``# key=value`` header lines, then one ``iteration,loss`` row per logging interval."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    log_every = max(1, int(log_every))
    with open(path, "w", newline="") as f:
        for k in sorted(trace.header):
            f.write(f"# {k}={trace.header[k]}\n")
        w = csv.writer(f)
        w.writerow(["iteration", "loss"])
        for i in range(0, len(trace.losses), log_every):
            w.writerow([i, repr(trace.losses[i])])
    return path


def read_loss_csv(path: str | Path) -> tuple[dict, list[tuple[int, float]]]:
    header, rows = {}, []
    with open(path) as f:
        for line in f:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                header[k] = v
            elif line.strip() and not line.startswith("iteration"):
                it, loss = line.strip().split(",")
                rows.append((int(it), float(loss)))
    return header, rows


class WorkDir:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def stage_dir(self, stage: str) -> Path:
        return self.root / _STAGE_DIRS[stage]

    def frames_dir(self, stage: str) -> Path:
        return self.stage_dir(stage) / "frames"

    @property
    def flows_dir(self) -> Path:
        return self.root / "flows"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def _marker(self, stage: str) -> Path:
        return self.stage_dir(stage) / ".complete"

    def is_complete(self, stage: str, key: str) -> bool:
        m = self._marker(stage)
        return m.is_file() and json.loads(m.read_text()).get("key") == key

    def mark_complete(self, stage: str, key: str) -> None:
        self._marker(stage).write_text(json.dumps({"stage": stage, "key": key}) + "\n")

    def reset_stage(self, stage: str) -> None:
        d = self.stage_dir(stage)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)

    def prepare_flow_cache(self, key: str) -> None:
        """Empty the flow cache unless it was built for ``key`` (input video + flow config)."""
        tag = self.flows_dir / ".key"
        if tag.is_file() and tag.read_text().strip() == key:
            return
        if self.flows_dir.exists():
            shutil.rmtree(self.flows_dir)
        self.flows_dir.mkdir(parents=True)
        tag.write_text(key + "\n")

    @contextmanager
    def lock(self):
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / ".lock"
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise LockError(f"work dir {self.root} is locked by another process ({path})") from exc
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield self
        finally:
            path.unlink(missing_ok=True)


def _stage_key(*parts: str) -> str:
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


@dataclass
class DeflickerResult:
    videos: dict[str, np.ndarray] = field(default_factory=dict)  # input/atlas/filtered/output
    report: dict = field(default_factory=dict)


def evaluate_videos(videos: dict[str, np.ndarray], flow_source: str = "self", reference: np.ndarray | None = None,
                    input_flows: FlowProvider | None = None, flow_cfg=None) -> dict:
    """Warping error (and PSNR vs ``reference``) for each named video."""
    if flow_source == "reference" and reference is None:
        raise ValueError("flow_source 'reference' needs a reference video")
    ref_flows = FlowProvider(reference, flow_cfg) if flow_source == "reference" else None
    out = {}
    for name, video in videos.items():
        if len(video) < 2:
            out[name] = {"mean_warp_error": None, "skipped": 0}
            continue
        if ref_flows is not None:
            flows = ref_flows
        elif name == "input" and input_flows is not None:
            flows = input_flows
        else:
            flows = FlowProvider(video, flow_cfg)
        rep = warp_error_video(video, flows)
        entry = {"mean_warp_error": rep.mean_warp_error, "skipped": rep.skipped, "per_frame": rep.per_frame}
        if reference is not None:
            entry["psnr_vs_reference"] = psnr(video, reference)
        out[name] = entry
    return out


def run_deflicker(video: np.ndarray, cfg: PipelineConfig, work_dir: str | Path,
                  filter_model: FilterModel | None, refiner_model: RefinerModel | None,
                  stop_after: str = "refine", reference: np.ndarray | None = None,
                  evaluate: bool = True) -> DeflickerResult:
    """Run the stages up to ``stop_after`` and (optionally) write metric reports."""
    if stop_after not in STAGES:
        raise ValueError(f"unknown stage {stop_after!r}; choose from {STAGES}")
    video = np.asarray(video, dtype=np.float32)
    work = WorkDir(work_dir)
    last = STAGES.index(stop_after)
    result = DeflickerResult(videos={"input": video})
    input_sum = video_checksum(video)
    snap = cfg.snapshot_hash()
    flow_cfg = cfg.flow_config()

    with work.lock():
        work.prepare_flow_cache(_stage_key("flows", input_sum, json.dumps(flow_cfg.to_dict(), sort_keys=True)))
        input_flows = FlowProvider(video, flow_cfg, cache_dir=work.flows_dir)
        # -- atlas ----------------------------------------------------------------
        key = _stage_key("atlas", snap, input_sum)
        if not work.is_complete("atlas", key):
            try:
                work.reset_stage("atlas")
                acfg = cfg.atlas_config()
                model = train_atlas(video, input_flows, acfg)
                model.save(work.stage_dir("atlas") / "atlas.ckpt")
                write_loss_csv(work.stage_dir("atlas") / "atlas_log.csv", model.trace, acfg.log_every)
                save_frame_sequence(reconstruct_atlas_video(model), work.frames_dir("atlas"))
                save_frame(render_atlas_image(model, (video.shape[1], video.shape[2])),
                           work.stage_dir("atlas") / "preview.png")
            except Exception as exc:
                raise StageError("atlas", str(exc)) from exc
            work.mark_complete("atlas", key)
        result.videos["atlas"] = load_frame_sequence(work.frames_dir("atlas"))
        prev_key = key

        # -- filter ---------------------------------------------------------------
        if last >= 1:
            if filter_model is None:
                raise StageError("filter", "no filter checkpoint available")
            key = _stage_key("filter", prev_key, _params_digest(filter_model.params))
            if not work.is_complete("filter", key):
                try:
                    work.reset_stage("filter")
                    save_frame_sequence(filter_video(filter_model, video, result.videos["atlas"]),
                                        work.frames_dir("filter"))
                except Exception as exc:
                    raise StageError("filter", str(exc)) from exc
                work.mark_complete("filter", key)
            result.videos["filtered"] = load_frame_sequence(work.frames_dir("filter"))
            prev_key = key

        # -- local refinement ---------------------------------------------------------
        if last >= 2:
            if refiner_model is None:
                raise StageError("refine", "no refiner checkpoint available")
            key = _stage_key("refine", prev_key, _params_digest(refiner_model.params))
            if not work.is_complete("refine", key):
                try:
                    work.reset_stage("refine")
                    save_frame_sequence(refine_video(refiner_model, result.videos["filtered"]),
                                        work.frames_dir("refine"))
                except Exception as exc:
                    raise StageError("refine", str(exc)) from exc
                work.mark_complete("refine", key)
            result.videos["output"] = load_frame_sequence(work.frames_dir("refine"))

        if evaluate:
            flow_source = cfg.eval["flow_source"]
            metrics = evaluate_videos(result.videos, flow_source, reference, input_flows, flow_cfg)
            result.report = {
                "config_hash": snap,
                "config": cfg.snapshot(),
                "stages_run": list(STAGES[:last + 1]),
                "flow_source": flow_source,
                "frame_count": int(len(video)),
                "frame_size": [int(video.shape[1]), int(video.shape[2])],
                "metrics": metrics,
            }
            write_report(result.report, work.reports_dir / "deflicker")
    return result


def _params_digest(params) -> str:
    h = hashlib.sha256()
    for k, t in params.items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return h.hexdigest()[:16]


def report_text(report: dict) -> str:
    lines = [f"config_hash: {report.get('config_hash')}"]
    for k in ("stages_run", "flow_source", "frame_count", "frame_size"):
        if k in report:
            lines.append(f"{k}: {report[k]}")
    for name, m in report.get("metrics", {}).items():
        e = m.get("mean_warp_error")
        line = f"{name}: warp_error={'undefined' if e is None else f'{e:.6f}'}"
        if "psnr_vs_reference" in m:
            line += f" psnr={m['psnr_vs_reference']:.4f}"
        if m.get("skipped"):
            line += f" skipped={m['skipped']}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def write_report(report: dict, stem: str | Path) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    stem.with_suffix(".txt").write_text(report_text(report))
