//! Multi-plane synchronized operators.
//!
//! Spatial operators applied face-by-face break at cube seams. The synced
//! variants here make convolution see across edges (cube padding), let
//! attention run over the tokens of all six faces at once, and pool
//! normalization statistics over every plane. The unsynced variants are
//! kept as baselines.

pub mod flops;
mod multiplane;
mod ops;
mod pad;

pub use flops::{estimate_flops, ArchSpec, FlopsBreakdown, LayerSpec, SyncFlags};
pub use multiplane::{planes_to_tokens, tokens_to_planes, MultiPlaneTensor, PLANES};
pub use ops::{
    concat_planes_along_width, per_view_group_norm, synced_attention, synced_conv2d, synced_conv2d_with,
    synced_group_norm, unsynced_attention, unsynced_conv2d,
};
pub use pad::{cube_pad, HaloPlan, PaddedFace};
