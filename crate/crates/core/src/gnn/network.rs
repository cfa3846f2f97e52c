use nalgebra::{Matrix3x4, Quaternion, UnitQuaternion, Vector3};

use super::attention::linear;
use super::params::{HeadId, ModelParams};
use super::updates::{
    update_global_feat, update_point_feats, update_proj_feats, update_view_feats, SceneGraph,
};
use super::GnnError;
use crate::camera::{Camera, Mode, Pose};
use crate::diff::{Tape, Tensor, Var};
use crate::recon::Reconstruction;
use crate::scene::Scene;

/// Epsilon inside the square root when normalizing head outputs.
pub const HEAD_NORM_EPS: f64 = 1e-24;

/// The feature collections after the last layer.
#[derive(Debug, Clone, Copy)]
pub struct FeatureState {
    pub proj: Var,
    pub view: Var,
    pub point: Var,
    pub global: Var,
    pub proj_init: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct NetOutput {
    /// `[m, 7]` rows `(c, q_wxyz)` or `[m, 12]` row-major camera matrices.
    pub cameras: Var,
    /// `[n, 3]`.
    pub points: Var,
    pub features: FeatureState,
}

/// Puts every parameter tensor on the tape, trainable or constant.
pub fn bind_params(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Vec<Var> {
    params
        .tensors()
        .iter()
        .map(|t| tape.leaf(t.clone(), trainable))
        .collect()
}

fn check_finite(tape: &Tape, v: Var, layer: usize, stage: &'static str) -> Result<Var, GnnError> {
    if tape.value(v).is_finite() {
        Ok(v)
    } else {
        Err(GnnError::NonFinite { layer, stage })
    }
}

fn head(tape: &mut Tape, vars: &[Var], id: &HeadId, x: Var) -> Result<Var, GnnError> {
    let mut h = tape.relu(x);
    for (k, lin) in id.layers.iter().enumerate() {
        h = linear(tape, vars, lin, h)?;
        if k < 2 {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Scales each row of `x` to unit L2 norm.
fn normalize_rows(tape: &mut Tape, x: Var) -> Var {
    let sq = tape.square(x);
    let ss = tape.row_sum(sq);
    let ss = tape.offset(ss, HEAD_NORM_EPS);
    let norm = tape.sqrt(ss);
    let inv = tape.recip(norm);
    tape.mul_col(x, inv).expect("one scale per row")
}

/// Per-row sign making the largest-magnitude entry positive.
fn sign_column(t: &Tensor) -> Tensor {
    let signs = (0..t.rows())
        .map(|r| {
            let largest = t
                .row(r)
                .iter()
                .copied()
                .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if largest < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    Tensor::new(vec![t.rows(), 1], signs).expect("one per row")
}

fn camera_output(tape: &mut Tape, mode: Mode, raw: Var) -> Result<Var, GnnError> {
    match mode {
        Mode::Euclidean => {
            let center = tape.slice_cols(raw, 0, 3)?;
            let q = tape.slice_cols(raw, 3, 7)?;
            let q = normalize_rows(tape, q);
            Ok(tape.concat_cols(&[center, q])?)
        }
        Mode::Projective => {
            let p = normalize_rows(tape, raw);
            let sign = tape.constant(sign_column(tape.value(p)));
            Ok(tape.mul_col(p, sign)?)
        }
    }
}

/// Runs the network on normalized `measurements` (`[N, 2]`).
///
/// Layer order: embedding, initial view, point and global updates, then per
/// layer the projection, view and point updates followed by the global
/// update on all but the last layer, then both regression heads.
pub fn forward_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &[Var],
    graph: &SceneGraph,
    measurements: Var,
) -> Result<NetOutput, GnnError> {
    let layout = params.layout();
    let hyper = layout.hyper;
    if vars.len() != layout.entries.len() {
        return Err(GnnError::ParamShape(format!(
            "{} bound tensors for {} entries",
            vars.len(),
            layout.entries.len()
        )));
    }
    let shape = tape.value(measurements).shape().to_vec();
    if shape != [graph.num_observations(), 2] {
        return Err(GnnError::DimMismatch {
            expected: graph.num_observations(),
            found: shape[0],
        });
    }

    let p0 = linear(tape, vars, &layout.embed, measurements)?;
    let p0 = check_finite(tape, p0, 0, "embedding")?;
    let mut v = update_view_feats(tape, vars, &layout.init_view, p0, None, graph)?;
    let mut s = update_point_feats(tape, vars, &layout.init_point, p0, None, graph)?;
    let mut g = update_global_feat(tape, vars, &layout.init_global, v, s, None, graph)?;
    check_finite(tape, v, 0, "view")?;
    check_finite(tape, s, 0, "point")?;
    check_finite(tape, g, 0, "global")?;

    let mut p = p0;
    for (k, layer) in layout.layers.iter().enumerate() {
        let l = k + 1;
        p = if l == 1 {
            update_proj_feats(tape, vars, &layer.proj, p0, None, v, s, g, graph)?
        } else {
            let input = tape.concat_cols(&[p, p0])?;
            update_proj_feats(tape, vars, &layer.proj, input, Some(p), v, s, g, graph)?
        };
        check_finite(tape, p, l, "projection")?;
        v = update_view_feats(tape, vars, &layer.view, p, Some(v), graph)?;
        check_finite(tape, v, l, "view")?;
        s = update_point_feats(tape, vars, &layer.point, p, Some(s), graph)?;
        check_finite(tape, s, l, "point")?;
        if let Some(gid) = &layer.global {
            g = update_global_feat(tape, vars, gid, v, s, Some(g), graph)?;
            check_finite(tape, g, l, "global")?;
        }
    }

    let heads_layer = hyper.num_layers + 1;
    let cam_raw = head(tape, vars, &layout.camera_head, v)?;
    let cameras = camera_output(tape, hyper.mode, cam_raw)?;
    check_finite(tape, cameras, heads_layer, "camera head")?;
    let points = head(tape, vars, &layout.point_head, s)?;
    check_finite(tape, points, heads_layer, "point head")?;
    Ok(NetOutput {
        cameras,
        points,
        features: FeatureState {
            proj: p,
            view: v,
            point: s,
            global: g,
            proj_init: p0,
        },
    })
}

/// Measurements of `scene` as an `[N, 2]` tensor.
pub fn measurement_tensor(scene: &Scene) -> Tensor {
    let data = scene.observations().iter().flat_map(|o| [o.x, o.y]).collect();
    Tensor::new(vec![scene.num_observations(), 2], data).expect("two per observation")
}

/// Converts raw head outputs into cameras and points.
pub fn decode(mode: Mode, cameras: &Tensor, points: &Tensor) -> Reconstruction {
    let cams = (0..cameras.rows())
        .map(|i| {
            let r = cameras.row(i);
            match mode {
                Mode::Euclidean => Camera::Euclidean(Pose::new(
                    UnitQuaternion::new_unchecked(Quaternion::new(r[3], r[4], r[5], r[6])),
                    Vector3::new(r[0], r[1], r[2]),
                )),
                Mode::Projective => Camera::Projective(Matrix3x4::from_row_slice(r)),
            }
        })
        .collect();
    let pts = (0..points.rows())
        .map(|j| Vector3::from_row_slice(points.row(j)))
        .collect();
    Reconstruction {
        mode,
        cameras: cams,
        points: pts,
    }
}

/// Network inference on a normalized scene.
pub fn forward(scene: &Scene, params: &ModelParams) -> Result<Reconstruction, GnnError> {
    let mode = params.hyper().mode;
    if scene.mode() != mode {
        return Err(GnnError::ModeMismatch {
            expected: mode,
            found: scene.mode(),
        });
    }
    let graph = SceneGraph::new(scene.pattern(), scene.num_views(), scene.num_points())?;
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, false);
    let x = tape.constant(measurement_tensor(scene));
    let out = forward_tape(&mut tape, params, &vars, &graph, x)?;
    Ok(decode(mode, tape.value(out.cameras), tape.value(out.points)))
}
