"""Blind video deflickering: neural atlas, atlas-guided filter and recurrent local refinement."""

from .flicker_synth import FlickerSpec, apply_flicker
from .media_io import load_frame_sequence, save_frame_sequence
from .metrics import psnr, warp_error_video

__all__ = [
    "FlickerSpec",
    "apply_flicker",
    "load_frame_sequence",
    "save_frame_sequence",
    "psnr",
    "warp_error_video",
]
__version__ = "0.1.0"
