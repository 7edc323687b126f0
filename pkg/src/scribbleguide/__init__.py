"""Scribble-guided diffusion sampling on an analytic Gaussian-blob toy world.

The sampler steers a DDIM reverse process with gradients of a focal loss and
geometric-moment penalties computed on closed-form cross-attention maps, and
grows the scribble masks outward by merging self-attention-similar neighbor
cells during a mid-sampling window.
"""

from .attention import CrossLossTerms, GuidanceConfig, cross_loss, focal_loss, grad_cross_loss, grad_focal_loss
from .core import Rng, avg_pool, resize_bilinear
from .diffusion import (
    DiffusionSchedule,
    GuidanceBlowupError,
    LatentState,
    SampleResult,
    StepDiagnostics,
    cfg_combine,
    ddim_step,
    guided_sample,
    make_schedule,
)
from .experiments import (
    find_template_index,
    oriented_scribble_set,
    point_scribble_set,
    run_paired_moment_experiment,
    run_paired_propagation_experiment,
)
from .metrics import (
    EvalReport,
    evaluate_sample,
    infer_target_index,
    miou,
    orientation_error,
    report_from_dict,
    report_to_dict,
    scribble_ratio,
)
from .moments import MomentSummary, grad_moment_loss, moment_loss, moment_summary, wrap_axis_angle
from .propagation import (
    AnchorGrid,
    PropagationState,
    SelfAttentionStack,
    aggregate_self_attention,
    initial_state,
    merge_neighbors,
    pool_anchors,
    regions_to_masks,
    symmetric_kl,
)
from .scribble import (
    Scribble,
    ScribbleFormatError,
    ScribbleGeometry,
    ScribbleSet,
    boundary_anchors,
    load_scribble_set,
    padded_bbox,
    rasterize,
    scribble_set_from_dict,
)
from .toyworld import (
    DecodeResult,
    Template,
    ToyWorld,
    WorldSpec,
    build_world,
    cross_attention_map,
    decode_final,
    default_world_spec,
    model_epsilon,
    render_blob,
    responsibilities,
    self_attention_stack,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorGrid",
    "CrossLossTerms",
    "DecodeResult",
    "DiffusionSchedule",
    "EvalReport",
    "GuidanceBlowupError",
    "GuidanceConfig",
    "MomentSummary",
    "PropagationState",
    "Rng",
    "LatentState",
    "SampleResult",
    "Scribble",
    "ScribbleFormatError",
    "ScribbleGeometry",
    "ScribbleSet",
    "SelfAttentionStack",
    "StepDiagnostics",
    "Template",
    "ToyWorld",
    "WorldSpec",
    "aggregate_self_attention",
    "avg_pool",
    "boundary_anchors",
    "build_world",
    "cfg_combine",
    "cross_attention_map",
    "cross_loss",
    "ddim_step",
    "decode_final",
    "default_world_spec",
    "evaluate_sample",
    "find_template_index",
    "focal_loss",
    "grad_cross_loss",
    "grad_focal_loss",
    "grad_moment_loss",
    "guided_sample",
    "infer_target_index",
    "initial_state",
    "load_scribble_set",
    "make_schedule",
    "merge_neighbors",
    "miou",
    "model_epsilon",
    "moment_loss",
    "moment_summary",
    "orientation_error",
    "oriented_scribble_set",
    "padded_bbox",
    "point_scribble_set",
    "pool_anchors",
    "rasterize",
    "regions_to_masks",
    "render_blob",
    "report_from_dict",
    "report_to_dict",
    "resize_bilinear",
    "responsibilities",
    "run_paired_moment_experiment",
    "run_paired_propagation_experiment",
    "scribble_ratio",
    "scribble_set_from_dict",
    "self_attention_stack",
    "symmetric_kl",
    "wrap_axis_angle",
]
