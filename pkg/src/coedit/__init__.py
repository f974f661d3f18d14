"""Coopetitive training-free image editing on a synthetic-scene denoiser."""

from coedit.attention import NormKind
from coedit.metrics import FcesInputs, fces, psnr, ssim
from coedit.pipeline import EditTask, OwnershipMode, PipelineConfig, run_edit
from coedit.refinement import RefinementConfig
from coedit.schedule import NoiseSchedule, make_schedule
from coedit.sim import SimDenoiser, make_edit_fixture

__all__ = ["EditTask", "FcesInputs", "NoiseSchedule", "NormKind", "OwnershipMode", "PipelineConfig",
           "RefinementConfig", "SimDenoiser", "fces", "make_edit_fixture", "make_schedule", "psnr",
           "run_edit", "ssim"]
