//! The graph attention network.
//!
//! Four feature collections flow through the network: projection features
//! `P` (one per observation), view features `V`, scene-point features `S`
//! and a single global feature `g`. Views and points aggregate from their
//! projections by cross-attention, `g` aggregates from all views and all
//! points, and projections are refreshed from their view, point, `g` and
//! the initial embedding. Regression heads on `V` and `S` produce cameras
//! and points.
//!
//! Every aggregation is a GATv2 layer with [`HEADS`] heads. Parameters live
//! in a flat, canonically ordered list ([`ModelParams`]); [`Layout`] maps
//! the blocks of the architecture onto it.

mod attention;
mod network;
mod params;
mod updates;

pub use attention::{gatv2_attention, graph_cross_attention, Edges, GatOutput};
pub use network::{
    bind_params, decode, forward, forward_tape, measurement_tensor, FeatureState, NetOutput,
    HEAD_NORM_EPS,
};
pub use params::{
    init_params, param_count, CrossAttnId, GatId, GlobalUpdateId, HeadId, Hyper, InitKind,
    LayerId, Layout, LinearId, ModelParams, NodeUpdateId, NormId, ParamEntry, ProjUpdateId,
};
pub use updates::{
    update_global_feat, update_point_feats, update_proj_feats, update_view_feats, SceneGraph,
};

use crate::camera::Mode;
use crate::diff::DiffError;

/// Attention heads per GATv2 layer.
pub const HEADS: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GnnError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("invalid edge set: {0}")]
    InvalidEdges(String),
    #[error("target node {node} has no incoming edge")]
    IsolatedTarget { node: usize },
    #[error("feature width {found}, expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("parameter mismatch: {0}")]
    ParamShape(String),
    #[error("{0}")]
    Structure(&'static str),
    #[error("non-finite {stage} features at layer {layer}")]
    NonFinite { layer: usize, stage: &'static str },
    #[error("network is configured for {expected} mode, scene is {found}")]
    ModeMismatch { expected: Mode, found: Mode },
}
