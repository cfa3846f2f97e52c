use std::sync::Arc;

use super::params::{CrossAttnId, GatId, LinearId, NormId};
use super::GnnError;
use crate::diff::{Tape, Tensor, Var, LAYER_NORM_EPS, LEAKY_RELU_SLOPE};

/// Directed bipartite edges from source rows into target rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edges {
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    num_sources: usize,
    num_targets: usize,
    identity_src: bool,
}

impl Edges {
    /// Fails if an index is out of range or a target has no incoming edge.
    pub fn new(
        src: Vec<usize>,
        dst: Vec<usize>,
        num_sources: usize,
        num_targets: usize,
    ) -> Result<Self, GnnError> {
        if src.len() != dst.len() {
            return Err(GnnError::InvalidEdges(format!(
                "{} sources for {} targets",
                src.len(),
                dst.len()
            )));
        }
        if let Some(&s) = src.iter().find(|&&s| s >= num_sources) {
            return Err(GnnError::InvalidEdges(format!("source {s} out of range {num_sources}")));
        }
        let mut incoming = vec![0usize; num_targets];
        for &t in &dst {
            if t >= num_targets {
                return Err(GnnError::InvalidEdges(format!("target {t} out of range {num_targets}")));
            }
            incoming[t] += 1;
        }
        if let Some(node) = incoming.iter().position(|&c| c == 0) {
            return Err(GnnError::IsolatedTarget { node });
        }
        let identity_src = src.len() == num_sources && src.iter().enumerate().all(|(k, &s)| k == s);
        Ok(Self {
            src: src.into(),
            dst: dst.into(),
            num_sources,
            num_targets,
            identity_src,
        })
    }

    /// Every source row feeds target `dst[row]`.
    pub fn from_targets(dst: Vec<usize>, num_targets: usize) -> Result<Self, GnnError> {
        let n = dst.len();
        Self::new((0..n).collect(), dst, n, num_targets)
    }

    /// All `num_sources` rows feed one target.
    pub fn all_to_one(num_sources: usize) -> Result<Self, GnnError> {
        Self::from_targets(vec![0; num_sources], 1)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src(&self) -> &[usize] {
        &self.src
    }

    pub fn dst(&self) -> &[usize] {
        &self.dst
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn num_targets(&self) -> usize {
        self.num_targets
    }
}

pub(crate) fn linear(tape: &mut Tape, vars: &[Var], id: &LinearId, x: Var) -> Result<Var, GnnError> {
    let y = tape.matmul(x, vars[id.weight])?;
    Ok(tape.add_row(y, vars[id.bias])?)
}

pub(crate) fn norm(tape: &mut Tape, vars: &[Var], id: &NormId, x: Var) -> Result<Var, GnnError> {
    let y = tape.layer_norm(x, LAYER_NORM_EPS);
    let y = tape.mul_row(y, vars[id.gain])?;
    Ok(tape.add_row(y, vars[id.bias])?)
}

/// `ReLU(LN(x))`.
pub(crate) fn relu_norm(tape: &mut Tape, vars: &[Var], id: &NormId, x: Var) -> Result<Var, GnnError> {
    let y = norm(tape, vars, id, x)?;
    Ok(tape.relu(y))
}

fn check_cols(tape: &Tape, x: Var, expected: usize) -> Result<(), GnnError> {
    let found = tape.value(x).cols();
    if found != expected {
        return Err(GnnError::DimMismatch { expected, found });
    }
    Ok(())
}

/// `[heads, heads·head_dim]` with ones on each head's column block.
fn head_blocks(heads: usize, head_dim: usize) -> Tensor {
    let width = heads * head_dim;
    let mut t = Tensor::zeros(heads, width);
    for h in 0..heads {
        for c in 0..head_dim {
            t.data_mut()[h * width + h * head_dim + c] = 1.0;
        }
    }
    t
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[j * r + i] = t.get(i, j);
        }
    }
    out
}

impl GatId {
    /// Input and output feature width.
    pub fn dim(&self) -> usize {
        if self.concat {
            self.heads * self.head_dim
        } else {
            self.head_dim
        }
    }
}

pub struct GatOutput {
    /// Updated target features, `[num_targets, dim]`.
    pub out: Var,
    /// Attention weights per edge and head, `[num_edges, heads]`.
    pub alpha: Var,
}

/// GATv2 with multiple heads over bipartite `edges`.
///
/// Per head the score of edge `j → i` is
/// `aᵀ LeakyReLU(W_src h_j + W_dst q_i)`, weights are the softmax of the
/// scores over the edges into `i`, and the output is
/// `Σ_j α_ij W_src h_j` plus a bias.
pub fn gatv2_attention(
    tape: &mut Tape,
    vars: &[Var],
    id: &GatId,
    src: Var,
    dst: Var,
    edges: &Edges,
) -> Result<GatOutput, GnnError> {
    check_cols(tape, src, id.dim())?;
    check_cols(tape, dst, id.dim())?;
    if tape.value(src).rows() != edges.num_sources || tape.value(dst).rows() != edges.num_targets {
        return Err(GnnError::InvalidEdges(format!(
            "edge set spans {}→{} nodes, features have {}→{} rows",
            edges.num_sources,
            edges.num_targets,
            tape.value(src).rows(),
            tape.value(dst).rows()
        )));
    }
    let x_src = linear(tape, vars, &id.lin_src, src)?;
    let x_dst = linear(tape, vars, &id.lin_dst, dst)?;
    let msg = if edges.identity_src {
        x_src
    } else {
        tape.gather_rows(x_src, edges.src.clone())?
    };
    let query = tape.gather_rows(x_dst, edges.dst.clone())?;
    let pre = tape.add(msg, query)?;
    let act = tape.leaky_relu(pre, LEAKY_RELU_SLOPE);
    let weighted = tape.mul_row(act, vars[id.att])?;
    let blocks = head_blocks(id.heads, id.head_dim);
    let sum_heads = tape.constant(transpose(&blocks));
    let scores = tape.matmul(weighted, sum_heads)?;
    let alpha = tape.segment_softmax(scores, edges.dst.clone(), edges.num_targets)?;
    let expand = tape.constant(blocks);
    let alpha_wide = tape.matmul(alpha, expand)?;
    let contrib = tape.mul(msg, alpha_wide)?;
    let mut out = tape.scatter_add_rows(contrib, edges.dst.clone(), edges.num_targets)?;
    if !id.concat {
        let width = id.heads * id.head_dim;
        let mut mean = Tensor::zeros(width, id.head_dim);
        for h in 0..id.heads {
            for c in 0..id.head_dim {
                mean.data_mut()[(h * id.head_dim + c) * id.head_dim + c] = 1.0 / id.heads as f64;
            }
        }
        let mean = tape.constant(mean);
        out = tape.matmul(out, mean)?;
    }
    let out = tape.add_row(out, vars[id.bias])?;
    Ok(GatOutput { out, alpha })
}

/// Cross-attention from source features `h1` into the targets of `edges`.
///
/// Sources pass through `ReLU(LN(·))`. Previous target features `h2`, when
/// given, are normalized the same way and projected to the source width to
/// act as queries; otherwise the queries are zero. The attention output is
/// projected to the target width when the widths differ.
pub fn graph_cross_attention(
    tape: &mut Tape,
    vars: &[Var],
    id: &CrossAttnId,
    h1: Var,
    h2: Option<Var>,
    edges: &Edges,
) -> Result<Var, GnnError> {
    check_cols(tape, h1, id.d1)?;
    let src = relu_norm(tape, vars, &id.src_norm, h1)?;
    let query = match (h2, id.dst_norm) {
        (Some(h2), Some(dst_norm)) => {
            check_cols(tape, h2, id.d2)?;
            let q = relu_norm(tape, vars, &dst_norm, h2)?;
            match &id.dst_proj {
                Some(p) => linear(tape, vars, p, q)?,
                None => q,
            }
        }
        (None, None) => tape.constant(Tensor::zeros(edges.num_targets, id.d1)),
        (Some(_), None) => return Err(GnnError::Structure("block takes no previous target features")),
        (None, Some(_)) => return Err(GnnError::Structure("block requires previous target features")),
    };
    let out = gatv2_attention(tape, vars, &id.gat, src, query, edges)?.out;
    match &id.out_proj {
        Some(p) => linear(tape, vars, p, out),
        None => Ok(out),
    }
}
