"""``deflicker`` command line.

Subcommands: synth, deflicker, eval, train-atlas, train-filter,
train-refiner, report.  Any config field can be overridden with a dotted
flag mirroring its path, e.g. ``--atlas.iterations 500``.

Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .atlas import train_atlas
from .config import ConfigError, PipelineConfig, parse_value
from .fixtures import fixtures_root, refiner_training_pairs
from .flicker_synth import FlickerSpec, apply_flicker, flicker_manifest
from .local_refine import RefinerModel, TrainingClip, model_local_loss, train_refiner
from .media_io import MediaError, directory_checksum, load_frame_sequence, save_frame_sequence
from .metrics import MetricError, psnr
from .neural_filter import FilterModel, train_filter
from .nn.checkpoint import CheckpointError
from .optical_flow import FlowError, FlowProvider
from .pipeline import LockError, STAGES, StageError, evaluate_videos, run_deflicker, write_loss_csv, write_report

log = logging.getLogger("deflicker")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class UsageError(ValueError):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deflicker", description="Blind video deflickering at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="pipeline config JSON")
        sp.add_argument("--seed", type=int, help="global seed (overrides the config)")
        return sp

    sp = common(sub.add_parser("synth", help="add synthetic flicker to a clean frame directory"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--preset", choices=["w1", "w3", "w10"])

    sp = common(sub.add_parser("deflicker", help="run atlas -> filter -> refinement"))
    sp.add_argument("--input")
    sp.add_argument("--output")
    sp.add_argument("--work")
    sp.add_argument("--reference", help="clean frames for PSNR / reference flows")
    sp.add_argument("--stage", choices=list(STAGES), default="refine",
                    help="stop after this stage (atlas writes {A_t} only)")
    sp.add_argument("--train-all", action="store_true",
                    help="train filter and refiner first when checkpoints are missing")
    sp.add_argument("--flow-source", choices=["self", "reference"])

    sp = common(sub.add_parser("eval", help="warping error (and PSNR) of a frame directory"))
    sp.add_argument("--candidate", required=True)
    sp.add_argument("--reference")
    sp.add_argument("--flow-source", choices=["self", "reference"])
    sp.add_argument("--output", help="report path stem (writes .json and .txt)")

    sp = common(sub.add_parser("train-atlas", help="fit an atlas to one video"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True, help="directory for atlas.ckpt + atlas_log.csv")

    sp = common(sub.add_parser("train-filter", help="train the filter network on an image corpus"))
    sp.add_argument("--corpus")
    sp.add_argument("--output", required=True, help="directory for filter.ckpt + filter_log.csv")

    sp = common(sub.add_parser("train-refiner", help="train the local refinement network"))
    sp.add_argument("--corpus")
    sp.add_argument("--output", required=True, help="directory for refiner.ckpt + refiner_log.csv")

    sp = sub.add_parser("report", help="print the reports stored in a work dir")
    sp.add_argument("--work", required=True)
    sp.add_argument("--json", action="store_true")
    return p


def _parse_overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise UsageError(f"unrecognized argument {tok!r}")
        key, eq, val = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {tok}")
            val = extra[i + 1]
            i += 1
        out[key] = parse_value(val)
        i += 1
    return out


def _load_config(args, extra: list[str]) -> PipelineConfig:
    cfg = PipelineConfig.load(getattr(args, "config", None))
    overrides = _parse_overrides(extra)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        seed = overrides.pop("seed", None)
        cfg = cfg.apply_overrides(overrides)
        if seed is not None:
            cfg = PipelineConfig.from_dict({**cfg.to_dict(), "seed": seed})
    return cfg


def _path(cfg_value, default: Path | None = None) -> Path | None:
    return Path(cfg_value) if cfg_value else default


# -- subcommands --------------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig) -> int:
    clean = load_frame_sequence(args.input)
    spec_dict = {**cfg.flicker, "seed": cfg.seed}
    if args.preset:
        spec_dict["window_size"] = FlickerSpec.from_preset(args.preset).window_size
    spec = FlickerSpec.from_dict(spec_dict)
    out = Path(args.output)
    save_frame_sequence(apply_flicker(clean, spec), out)
    flickered = load_frame_sequence(out)
    manifest = {
        "config_hash": cfg.snapshot_hash(),
        "source": str(args.input),
        "preset": args.preset,
        "flicker": flicker_manifest(spec, len(clean), clean.shape[1], clean.shape[2]),
        "checksum": directory_checksum(out),
        "expected": {"psnr_vs_clean": psnr(flickered, clean), "provenance": "computed at synthesis"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(clean)} frames to {out} ({manifest['flicker']['num_blocks']} artifact blocks)")
    return EXIT_OK


def _filter_ckpt(cfg) -> Path:
    return _path(cfg.paths["filter_checkpoint"], fixtures_root() / "checkpoints" / "filter.ckpt")


def _refiner_ckpt(cfg) -> Path:
    return _path(cfg.paths["refiner_checkpoint"], fixtures_root() / "checkpoints" / "refiner.ckpt")


def _corpus_dir(cfg, arg) -> Path:
    return Path(arg) if arg else _path(cfg.paths["corpus"], fixtures_root() / "corpus" / "train")


def cmd_deflicker(args, cfg: PipelineConfig) -> int:
    inp = args.input or cfg.paths["input"]
    if not inp:
        raise UsageError("deflicker needs --input (or paths.input)")
    work = Path(args.work or cfg.paths["work"])
    output = args.output or cfg.paths["output"]
    ref_dir = args.reference or cfg.paths["reference"]
    if args.flow_source:
        cfg = cfg.apply_overrides({"eval.flow_source": args.flow_source})
    video = load_frame_sequence(inp)
    reference = load_frame_sequence(ref_dir) if ref_dir else None
    if reference is not None and reference.shape != video.shape:
        raise MetricError(f"reference {reference.shape} does not match input {video.shape}")

    filter_model = refiner_model = None
    if STAGES.index(args.stage) >= 1:
        fpath = _filter_ckpt(cfg)
        if not fpath.is_file():
            if not args.train_all:
                raise UsageError(f"missing filter checkpoint {fpath} (use --train-all to train one)")
            fpath = _train_filter(cfg, _corpus_dir(cfg, None), work / "checkpoints")
        filter_model = FilterModel.load(fpath)
    if STAGES.index(args.stage) >= 2:
        rpath = _refiner_ckpt(cfg)
        if not rpath.is_file():
            if not args.train_all:
                raise UsageError(f"missing refiner checkpoint {rpath} (use --train-all to train one)")
            rpath = _train_refiner(cfg, _corpus_dir(cfg, None), work / "checkpoints")
        refiner_model = RefinerModel.load(rpath)

    result = run_deflicker(video, cfg, work, filter_model, refiner_model, args.stage, reference)
    final = {"atlas": "atlas", "filter": "filtered", "refine": "output"}[args.stage]
    if output:
        save_frame_sequence(result.videos[final], output)
    print((work / "reports" / "deflicker.txt").read_text(), end="")
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    cand = load_frame_sequence(args.candidate)
    ref = load_frame_sequence(args.reference) if args.reference else None
    if ref is not None and ref.shape != cand.shape:
        raise MetricError(f"candidate {cand.shape} and reference {ref.shape} differ")
    flow_source = args.flow_source or cfg.eval["flow_source"]
    metrics = evaluate_videos({"candidate": cand}, flow_source, ref, flow_cfg=cfg.flow_config())
    report = {"config_hash": cfg.snapshot_hash(), "flow_source": flow_source,
              "frame_count": int(len(cand)), "metrics": metrics}
    if args.output:
        write_report(report, args.output)
    m = metrics["candidate"]
    e = m["mean_warp_error"]
    print(f"warp_error: {'undefined' if e is None else f'{e:.6f}'}")
    if "psnr_vs_reference" in m:
        print(f"psnr: {m['psnr_vs_reference']:.4f}")
    print(f"config_hash: {report['config_hash']}")
    return EXIT_OK


def cmd_train_atlas(args, cfg: PipelineConfig) -> int:
    video = load_frame_sequence(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    acfg = cfg.atlas_config()
    model = train_atlas(video, FlowProvider(video, cfg.flow_config()), acfg)
    model.save(out / "atlas.ckpt")
    write_loss_csv(out / "atlas_log.csv", model.trace, acfg.log_every)
    print(f"wrote {out / 'atlas.ckpt'}")
    return EXIT_OK


def _train_filter(cfg: PipelineConfig, corpus_dir: Path, out: Path) -> Path:
    corpus = list(load_frame_sequence(corpus_dir))
    fcfg = cfg.filter_config()
    model = train_filter(corpus, fcfg)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "filter.ckpt")
    write_loss_csv(out / "filter_log.csv", model.trace, fcfg.log_every)
    return out / "filter.ckpt"


def cmd_train_filter(args, cfg: PipelineConfig) -> int:
    path = _train_filter(cfg, _corpus_dir(cfg, args.corpus), Path(args.output))
    print(f"wrote {path}")
    return EXIT_OK


def refiner_clips_from_corpus(cfg: PipelineConfig, corpus_dir: Path) -> list[TrainingClip]:
    corpus = list(load_frame_sequence(corpus_dir))
    rc = cfg.refiner_clips
    pairs = refiner_training_pairs(corpus, int(rc["count"]), int(rc["frames"]), int(rc["size"]), cfg.seed,
                                   float(rc["clean_fraction"]))
    return [TrainingClip.from_pair(c, f, cfg.flow_config()) for c, f in pairs]


def _train_refiner(cfg: PipelineConfig, corpus_dir: Path, out: Path) -> Path:
    clips = refiner_clips_from_corpus(cfg, corpus_dir)
    rcfg = cfg.refiner_config()
    model = train_refiner(clips, rcfg)
    model.trace.header["local_loss_end"] = model_local_loss(model, clips)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "refiner.ckpt")
    write_loss_csv(out / "refiner_log.csv", model.trace, 1)
    return out / "refiner.ckpt"


def cmd_train_refiner(args, cfg: PipelineConfig) -> int:
    path = _train_refiner(cfg, _corpus_dir(cfg, args.corpus), Path(args.output))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args, cfg: PipelineConfig | None = None) -> int:
    reports = sorted((Path(args.work) / "reports").glob("*.json"))
    if not reports:
        raise UsageError(f"no reports under {args.work}/reports")
    for path in reports:
        if args.json:
            print(path.read_text(), end="")
        else:
            print(f"== {path.stem}")
            print(path.with_suffix(".txt").read_text(), end="")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "deflicker": cmd_deflicker,
    "eval": cmd_eval,
    "train-atlas": cmd_train_atlas,
    "train-filter": cmd_train_filter,
    "train-refiner": cmd_train_refiner,
    "report": cmd_report,
}

VALIDATION_ERRORS = (UsageError, ConfigError, MediaError, MetricError, FlowError, CheckpointError)


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("DEFLICKER_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"error: DEFLICKER_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        with threadpool_limits(limits=limit):
            cfg = None if args.command == "report" else _load_config(args, extra)
            if args.command == "report" and extra:
                raise UsageError(f"unrecognized arguments {extra}")
            return COMMANDS[args.command](args, cfg)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (StageError, LockError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
