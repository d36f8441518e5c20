"""vcut: degenerate cross-attention folding for pooled-embedding video diffusion.

A desk-scale laboratory around one observation: cross-attention against a
single globally pooled conditioning token collapses to a cacheable affine
map of the embedding. The package provides the deterministic numerics, a
toy spatio-temporal denoiser exhibiting the degeneracy, graph surgery that
folds it away, a two-stage guided sampler with a guidance cut, an
analytical cost model of the production-scale architecture, and the
standard video-consistency metric formulas.
"""

from .costmodel import (
    ArchSpec,
    AttentionCost,
    AffineCost,
    ConvCost,
    NormCost,
    arch_from_model_spec,
    build_cost_report,
    conditioner_macs,
    count_macs,
    count_params,
    fold_cross_attention,
    latency_estimate,
    load_arch,
    per_step_macs,
    published_step_table,
    published_totals_table,
    remove_tca,
    svd_arch,
    vcut_totals,
)
from .errors import (
    ArgumentError,
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
    TransformError,
    VcutError,
)
from .metrics import (
    background_consistency,
    block_matching_flow,
    cosine_probe,
    dynamic_degree,
    motion_smoothness,
    subject_consistency,
    video_image_background_consistency,
    video_image_subject_consistency,
    video_motion_score,
)
from .model import (
    AttentionSite,
    ModelSpec,
    build_weights,
    cross_attention,
    degenerate_output,
    forward_unet,
    load_model,
    null_embedding,
    parameter_count,
    random_attention_site,
    random_embedding,
    reshape_spatial,
    reshape_spatial_inverse,
    reshape_temporal,
    reshape_temporal_inverse,
    save_model,
    self_attention,
    svd_layout_spec,
)
from .sampler import (
    CachePolicyReport,
    GuidanceSchedule,
    RunStats,
    SamplerConfig,
    Trajectory,
    cache_policy_check,
    cfg_combine,
    expected_forward_passes,
    initial_latent,
    run,
    sigma_schedule,
)
from .surgery import (
    FoldedAffine,
    FoldedConditioner,
    apply_vcut,
    build_cache,
    fold_model_sites,
    fold_site,
    surgery_report,
)
from .tensorops import Rng, affine, layer_norm, matmul, normal_like, rng_uniform, softmax_lastdim
from .vten import read_vten, write_vten

__version__ = "0.1.0"
