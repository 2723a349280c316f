"""Rolling-shutter simulation and correction by multi-field warping.

The package is organised by task: :mod:`rscorrect.image` (frames, sampling,
metrics), :mod:`rscorrect.sim` (rolling-shutter rendering),
:mod:`rscorrect.motion` (flow, correlation volumes, field bundles),
:mod:`rscorrect.warp` (the three warping operators and their gradients),
:mod:`rscorrect.opt` (losses and Adam), :mod:`rscorrect.corrector` (the
coarse-to-fine pipeline) and :mod:`rscorrect.experiments` (suites and
ablation grids).
"""

from rscorrect.corrector import CorrectionResult, CorrectorConfig, correct, evaluate
from rscorrect.image import bilinear_sample, build_pyramid, psnr, ssim
from rscorrect.motion import FieldBundle, block_match_flow, correlation_volume, init_bundle, upsample_bundle
from rscorrect.opt import AdamState, LossConfig, adam_step, charbonnier, tv_loss
from rscorrect.sim import SceneSpec, TimeOffsetMap, gt_displacement, make_scene, make_sequence, render_gs, render_rs
from rscorrect.warp import AttentionParams, WarpOutput, ada_msa_warp, backward_warp, dfw_forward_warp

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AttentionParams", "CorrectionResult", "CorrectorConfig", "FieldBundle",
    "LossConfig", "SceneSpec", "TimeOffsetMap", "WarpOutput", "ada_msa_warp", "adam_step",
    "backward_warp", "bilinear_sample", "block_match_flow", "build_pyramid", "charbonnier",
    "correct", "correlation_volume", "dfw_forward_warp", "evaluate", "gt_displacement",
    "init_bundle", "make_scene", "make_sequence", "psnr", "render_gs", "render_rs", "ssim",
    "tv_loss", "upsample_bundle",
]
