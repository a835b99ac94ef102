"""Pipeline configuration: one JSON document, overridable by dotted CLI flags."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .atlas import AtlasConfig
from .flicker_synth import FlickerSpec
from .local_refine import RefinerConfig
from .neural_filter import FilterConfig
from .optical_flow import FlowConfig


class ConfigError(ValueError):
    pass


def _default_paths() -> dict:
    return {
        "input": None,
        "output": None,
        "work": "work",
        "reference": None,
        "corpus": None,  # None -> bundled fixtures/corpus/train
        "filter_checkpoint": None,  # None -> bundled fixtures/checkpoints/filter.ckpt
        "refiner_checkpoint": None,
    }


def _without_seed(d: dict) -> dict:
    # the top-level seed drives every component
    d = dict(d)
    d.pop("seed", None)
    return d


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: dict = field(default_factory=_default_paths)
    atlas: dict = field(default_factory=lambda: _without_seed(AtlasConfig().to_dict()))
    filter: dict = field(default_factory=lambda: _without_seed(FilterConfig().to_dict()))
    refiner: dict = field(default_factory=lambda: _without_seed(RefinerConfig().to_dict()))
    flow: dict = field(default_factory=lambda: FlowConfig().to_dict())
    flicker: dict = field(default_factory=lambda: _without_seed(FlickerSpec().to_dict()))
    eval: dict = field(default_factory=lambda: {"flow_source": "self"})
    refiner_clips: dict = field(default_factory=lambda: {"count": 200, "frames": 8, "size": 64,
                                                         "clean_fraction": 0.25})

    SECTIONS = ("paths", "atlas", "filter", "refiner", "flow", "flicker", "eval", "refiner_clips")

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        cfg = cls()
        unknown = set(d) - set(cls.SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        if "seed" in d:
            cfg.seed = d["seed"]
        for sec in cls.SECTIONS:
            if sec in d:
                base = getattr(cfg, sec)
                extra = set(d[sec]) - set(base)
                if extra:
                    raise ConfigError(f"unknown keys in '{sec}': {sorted(extra)}")
                base.update(copy.deepcopy(d[sec]))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        d = {"seed": self.seed}
        for sec in self.SECTIONS:
            d[sec] = copy.deepcopy(getattr(self, sec))
        return d

    def apply_overrides(self, overrides: dict[str, Any]) -> "PipelineConfig":
        """Set dotted keys such as ``atlas.iterations``; returns a validated copy."""
        d = self.to_dict()
        for key, value in overrides.items():
            parts = key.split(".")
            node = d
            for p in parts[:-1]:
                if not isinstance(node, dict) or p not in node:
                    raise ConfigError(f"unknown config key '{key}'")
                node = node[p]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise ConfigError(f"unknown config key '{key}'")
            node[parts[-1]] = value
        return PipelineConfig.from_dict(d)

    # -- typed views --------------------------------------------------------------
    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        try:
            self.atlas_config()
            self.filter_config()
            self.refiner_config()
            self.flow_config()
            self.flicker_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.eval.get("flow_source") not in ("self", "reference"):
            raise ConfigError("eval.flow_source must be 'self' or 'reference'")
        rc = self.refiner_clips
        try:
            ok = (int(rc["count"]) >= 1 and int(rc["frames"]) >= 2 and int(rc["size"]) >= 8
                  and 0.0 <= float(rc["clean_fraction"]) <= 1.0)
        except (TypeError, ValueError):
            ok = False
        if not ok:
            raise ConfigError("refiner_clips needs count >= 1, frames >= 2, size >= 8, clean_fraction in [0, 1]")

    def atlas_config(self) -> AtlasConfig:
        return AtlasConfig(**{**self.atlas, "seed": self.seed})

    def filter_config(self) -> FilterConfig:
        return FilterConfig(**{**self.filter, "seed": self.seed})

    def refiner_config(self) -> RefinerConfig:
        return RefinerConfig(**{**self.refiner, "seed": self.seed})

    def flow_config(self) -> FlowConfig:
        return FlowConfig(**self.flow)

    def flicker_spec(self) -> FlickerSpec:
        return FlickerSpec.from_dict({**self.flicker, "seed": self.seed})

    def snapshot(self) -> dict:
        """Config without filesystem paths (what determines the numbers)."""
        d = self.to_dict()
        d.pop("paths")
        return d

    def snapshot_hash(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def parse_value(text: str) -> Any:
    """CLI override values: JSON when it parses (numbers, lists, null, bools), else a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text
