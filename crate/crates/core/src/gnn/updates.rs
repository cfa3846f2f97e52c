use std::sync::Arc;

use super::attention::{graph_cross_attention, linear, relu_norm, Edges};
use super::params::{GlobalUpdateId, NodeUpdateId, ProjUpdateId};
use super::GnnError;
use crate::diff::{Tape, Var};
use crate::scene::ObservabilityPattern;

/// The four edge sets the network propagates along.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    pub proj_to_view: Edges,
    pub proj_to_point: Edges,
    pub view_to_global: Edges,
    pub point_to_global: Edges,
    /// View index of every projection.
    pub view_of: Arc<[usize]>,
    /// Point index of every projection.
    pub point_of: Arc<[usize]>,
    /// All zeros, one per projection, for broadcasting `g`.
    pub global_of: Arc<[usize]>,
}

impl SceneGraph {
    pub fn new(pattern: &ObservabilityPattern, num_views: usize, num_points: usize) -> Result<Self, GnnError> {
        let n_obs = pattern.len();
        Ok(Self {
            proj_to_view: Edges::from_targets(pattern.view_index().to_vec(), num_views)?,
            proj_to_point: Edges::from_targets(pattern.point_index().to_vec(), num_points)?,
            view_to_global: Edges::all_to_one(num_views)?,
            point_to_global: Edges::all_to_one(num_points)?,
            view_of: pattern.view_index().into(),
            point_of: pattern.point_index().into(),
            global_of: vec![0; n_obs].into(),
        })
    }

    pub fn num_observations(&self) -> usize {
        self.view_of.len()
    }

    pub fn num_views(&self) -> usize {
        self.proj_to_view.num_targets()
    }

    pub fn num_points(&self) -> usize {
        self.proj_to_point.num_targets()
    }
}

/// `x + Linear(ReLU(LN(x)))`.
fn residual_ffn(
    tape: &mut Tape,
    vars: &[Var],
    norm: &super::params::NormId,
    ffn: &super::params::LinearId,
    x: Var,
) -> Result<Var, GnnError> {
    let h = relu_norm(tape, vars, norm, x)?;
    let h = linear(tape, vars, ffn, h)?;
    Ok(tape.add(x, h)?)
}

fn update_nodes(
    tape: &mut Tape,
    vars: &[Var],
    id: &NodeUpdateId,
    proj: Var,
    prev: Option<Var>,
    edges: &Edges,
) -> Result<Var, GnnError> {
    let agg = graph_cross_attention(tape, vars, &id.attn, proj, prev, edges)?;
    let x = match prev {
        Some(prev) => tape.add(prev, agg)?,
        None => agg,
    };
    residual_ffn(tape, vars, &id.ffn_norm, &id.ffn, x)
}

/// View features from the projections in each view's row, residual on the
/// previous view features when given.
pub fn update_view_feats(
    tape: &mut Tape,
    vars: &[Var],
    id: &NodeUpdateId,
    proj: Var,
    prev: Option<Var>,
    graph: &SceneGraph,
) -> Result<Var, GnnError> {
    update_nodes(tape, vars, id, proj, prev, &graph.proj_to_view)
}

/// Scene-point features from the projections in each point's column.
pub fn update_point_feats(
    tape: &mut Tape,
    vars: &[Var],
    id: &NodeUpdateId,
    proj: Var,
    prev: Option<Var>,
    graph: &SceneGraph,
) -> Result<Var, GnnError> {
    update_nodes(tape, vars, id, proj, prev, &graph.proj_to_point)
}

/// Global feature from two independent aggregations over all views and all
/// points.
pub fn update_global_feat(
    tape: &mut Tape,
    vars: &[Var],
    id: &GlobalUpdateId,
    view: Var,
    point: Var,
    prev: Option<Var>,
    graph: &SceneGraph,
) -> Result<Var, GnnError> {
    let from_views = graph_cross_attention(tape, vars, &id.from_views, view, prev, &graph.view_to_global)?;
    let from_points = graph_cross_attention(tape, vars, &id.from_points, point, prev, &graph.point_to_global)?;
    let mut g = tape.add(from_views, from_points)?;
    if let Some(prev) = prev {
        g = tape.add(prev, g)?;
    }
    residual_ffn(tape, vars, &id.ffn_norm, &id.ffn, g)
}

/// Projection features from the features of each projection's view, point,
/// the global feature and `proj_in`. No aggregation is involved.
///
/// `residual` is added to the result when given; it must have the output
/// width.
#[allow(clippy::too_many_arguments)]
pub fn update_proj_feats(
    tape: &mut Tape,
    vars: &[Var],
    id: &ProjUpdateId,
    proj_in: Var,
    residual: Option<Var>,
    view: Var,
    point: Var,
    global: Var,
    graph: &SceneGraph,
) -> Result<Var, GnnError> {
    let found = tape.value(proj_in).cols();
    if found != id.d_in {
        return Err(GnnError::DimMismatch {
            expected: id.d_in,
            found,
        });
    }
    let v = relu_norm(tape, vars, &id.view_norm, view)?;
    let v = tape.gather_rows(v, graph.view_of.clone())?;
    let s = relu_norm(tape, vars, &id.point_norm, point)?;
    let s = tape.gather_rows(s, graph.point_of.clone())?;
    let g = relu_norm(tape, vars, &id.global_norm, global)?;
    let g = tape.gather_rows(g, graph.global_of.clone())?;
    let p = relu_norm(tape, vars, &id.proj_norm, proj_in)?;
    let cat = tape.concat_cols(&[v, s, g, p])?;
    let out = linear(tape, vars, &id.ffn, cat)?;
    match residual {
        Some(r) => Ok(tape.add(r, out)?),
        None => Ok(out),
    }
}
