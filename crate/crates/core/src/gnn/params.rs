use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GnnError, HEADS};
use crate::camera::Mode;
use crate::diff::Tensor;

/// Network dimensions and depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    pub num_layers: usize,
    pub d_p: usize,
    pub d_v: usize,
    pub d_s: usize,
    pub d_g: usize,
    pub mode: Mode,
}

impl Hyper {
    /// The configuration of the published model.
    pub fn full(mode: Mode) -> Self {
        Self {
            num_layers: 12,
            d_p: 32,
            d_v: 1024,
            d_s: 64,
            d_g: 2048,
            mode,
        }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let dims = [self.num_layers, self.d_p, self.d_v, self.d_s, self.d_g];
        if dims.contains(&0) {
            return Err(GnnError::InvalidHyper(format!("{self:?} has a zero entry")));
        }
        Ok(())
    }

    /// Width of the camera head output.
    pub fn camera_width(&self) -> usize {
        match self.mode {
            Mode::Euclidean => 7,
            Mode::Projective => 12,
        }
    }
}

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    /// Uniform in `±1/√fan_in`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub init: InitKind,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearId {
    pub weight: usize,
    pub bias: usize,
}

/// Layer normalization with a learned gain and bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormId {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatId {
    /// Projection of source (message) features.
    pub lin_src: LinearId,
    /// Projection of target (query) features.
    pub lin_dst: LinearId,
    /// Attention vector, `[1, heads · head_dim]`.
    pub att: usize,
    pub bias: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Heads are concatenated when true, averaged otherwise.
    pub concat: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossAttnId {
    pub src_norm: NormId,
    pub dst_norm: Option<NormId>,
    pub dst_proj: Option<LinearId>,
    pub gat: GatId,
    pub out_proj: Option<LinearId>,
    pub d1: usize,
    pub d2: usize,
}

/// View or scene-point update: cross-attention from projections, then a
/// residual feed-forward block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeUpdateId {
    pub attn: CrossAttnId,
    pub ffn_norm: NormId,
    pub ffn: LinearId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalUpdateId {
    pub from_views: CrossAttnId,
    pub from_points: CrossAttnId,
    pub ffn_norm: NormId,
    pub ffn: LinearId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjUpdateId {
    pub view_norm: NormId,
    pub point_norm: NormId,
    pub global_norm: NormId,
    pub proj_norm: NormId,
    pub ffn: LinearId,
    pub d_in: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerId {
    pub proj: ProjUpdateId,
    pub view: NodeUpdateId,
    pub point: NodeUpdateId,
    /// Absent in the last layer.
    pub global: Option<GlobalUpdateId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadId {
    pub layers: [LinearId; 3],
}

/// Canonical parameter order and the typed handles into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub hyper: Hyper,
    pub entries: Vec<ParamEntry>,
    pub embed: LinearId,
    pub init_view: NodeUpdateId,
    pub init_point: NodeUpdateId,
    pub init_global: GlobalUpdateId,
    pub layers: Vec<LayerId>,
    pub camera_head: HeadId,
    pub point_head: HeadId,
}

struct Builder {
    entries: Vec<ParamEntry>,
}

impl Builder {
    fn push(&mut self, name: String, shape: [usize; 2], init: InitKind) -> usize {
        self.entries.push(ParamEntry { name, shape, init });
        self.entries.len() - 1
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> LinearId {
        LinearId {
            weight: self.push(format!("{name}.weight"), [d_in, d_out], InitKind::Uniform { fan_in: d_in }),
            bias: self.push(format!("{name}.bias"), [1, d_out], InitKind::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormId {
        NormId {
            gain: self.push(format!("{name}.gain"), [1, d], InitKind::Ones),
            bias: self.push(format!("{name}.bias"), [1, d], InitKind::Zeros),
        }
    }

    fn gat(&mut self, name: &str, d: usize) -> GatId {
        // Widths not divisible by the head count get full-width heads that
        // are averaged instead of concatenated.
        let concat = d.is_multiple_of(HEADS);
        let head_dim = if concat { d / HEADS } else { d };
        let width = HEADS * head_dim;
        GatId {
            lin_src: self.linear(&format!("{name}.lin_src"), d, width),
            lin_dst: self.linear(&format!("{name}.lin_dst"), d, width),
            att: self.push(format!("{name}.att"), [1, width], InitKind::Uniform { fan_in: head_dim }),
            bias: self.push(format!("{name}.bias"), [1, d], InitKind::Zeros),
            heads: HEADS,
            head_dim,
            concat,
        }
    }

    fn cross(&mut self, name: &str, d1: usize, d2: usize, with_target: bool) -> CrossAttnId {
        let src_norm = self.norm(&format!("{name}.src_norm"), d1);
        let dst_norm = with_target.then(|| self.norm(&format!("{name}.dst_norm"), d2));
        let dst_proj = (with_target && d1 != d2).then(|| self.linear(&format!("{name}.dst_proj"), d2, d1));
        let gat = self.gat(&format!("{name}.gat"), d1);
        let out_proj = (d1 != d2).then(|| self.linear(&format!("{name}.out_proj"), d1, d2));
        CrossAttnId {
            src_norm,
            dst_norm,
            dst_proj,
            gat,
            out_proj,
            d1,
            d2,
        }
    }

    fn node_update(&mut self, name: &str, d_src: usize, d: usize, with_prev: bool) -> NodeUpdateId {
        NodeUpdateId {
            attn: self.cross(&format!("{name}.attn"), d_src, d, with_prev),
            ffn_norm: self.norm(&format!("{name}.ffn_norm"), d),
            ffn: self.linear(&format!("{name}.ffn"), d, d),
        }
    }

    fn global_update(&mut self, name: &str, h: &Hyper, with_prev: bool) -> GlobalUpdateId {
        GlobalUpdateId {
            from_views: self.cross(&format!("{name}.from_views"), h.d_v, h.d_g, with_prev),
            from_points: self.cross(&format!("{name}.from_points"), h.d_s, h.d_g, with_prev),
            ffn_norm: self.norm(&format!("{name}.ffn_norm"), h.d_g),
            ffn: self.linear(&format!("{name}.ffn"), h.d_g, h.d_g),
        }
    }

    fn proj_update(&mut self, name: &str, h: &Hyper, d_in: usize) -> ProjUpdateId {
        ProjUpdateId {
            view_norm: self.norm(&format!("{name}.view_norm"), h.d_v),
            point_norm: self.norm(&format!("{name}.point_norm"), h.d_s),
            global_norm: self.norm(&format!("{name}.global_norm"), h.d_g),
            proj_norm: self.norm(&format!("{name}.proj_norm"), d_in),
            ffn: self.linear(&format!("{name}.ffn"), h.d_v + h.d_s + h.d_g + d_in, h.d_p),
            d_in,
        }
    }

    fn head(&mut self, name: &str, d: usize, d_out: usize) -> HeadId {
        HeadId {
            layers: [
                self.linear(&format!("{name}.0"), d, d),
                self.linear(&format!("{name}.1"), d, d),
                self.linear(&format!("{name}.2"), d, d_out),
            ],
        }
    }
}

impl Layout {
    pub fn new(hyper: Hyper) -> Result<Self, GnnError> {
        hyper.validate()?;
        let h = hyper;
        let mut b = Builder { entries: Vec::new() };
        let embed = b.linear("embed", 2, 2);
        let init_view = b.node_update("init.view", 2, h.d_v, false);
        let init_point = b.node_update("init.point", 2, h.d_s, false);
        let init_global = b.global_update("init.global", &h, false);
        let mut layers = Vec::with_capacity(h.num_layers);
        for l in 1..=h.num_layers {
            let d_in = if l == 1 { 2 } else { h.d_p + 2 };
            layers.push(LayerId {
                proj: b.proj_update(&format!("layer{l}.proj"), &h, d_in),
                view: b.node_update(&format!("layer{l}.view"), h.d_p, h.d_v, true),
                point: b.node_update(&format!("layer{l}.point"), h.d_p, h.d_s, true),
                global: (l < h.num_layers).then(|| b.global_update(&format!("layer{l}.global"), &h, true)),
            });
        }
        let camera_head = b.head("camera_head", h.d_v, h.camera_width());
        let point_head = b.head("point_head", h.d_s, 3);
        Ok(Self {
            hyper,
            entries: b.entries,
            embed,
            init_view,
            init_point,
            init_global,
            layers,
            camera_head,
            point_head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(ParamEntry::len).sum()
    }
}

/// Number of learned scalars for `hyper`, without allocating them.
pub fn param_count(hyper: &Hyper) -> Result<usize, GnnError> {
    Ok(Layout::new(*hyper)?.param_count())
}

/// All learned tensors of the network, in the canonical layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Layout,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn from_tensors(hyper: Hyper, tensors: Vec<Tensor>) -> Result<Self, GnnError> {
        let layout = Layout::new(hyper)?;
        if tensors.len() != layout.entries.len() {
            return Err(GnnError::ParamShape(format!(
                "{} tensors for {} entries",
                tensors.len(),
                layout.entries.len()
            )));
        }
        for (t, e) in tensors.iter().zip(&layout.entries) {
            if t.shape() != e.shape {
                return Err(GnnError::ParamShape(format!(
                    "{} has shape {:?}, expected {:?}",
                    e.name,
                    t.shape(),
                    e.shape
                )));
            }
        }
        Ok(Self { layout, tensors })
    }

    /// Rebuilds parameters from one flat buffer in canonical order.
    pub fn from_flat(hyper: Hyper, flat: &[f64]) -> Result<Self, GnnError> {
        let layout = Layout::new(hyper)?;
        if flat.len() != layout.param_count() {
            return Err(GnnError::ParamShape(format!(
                "{} values for {} parameters",
                flat.len(),
                layout.param_count()
            )));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(layout.entries.len());
        for e in &layout.entries {
            let data = flat[offset..offset + e.len()].to_vec();
            offset += e.len();
            tensors.push(Tensor::new(e.shape.to_vec(), data).expect("length checked"));
        }
        Ok(Self { layout, tensors })
    }

    pub fn hyper(&self) -> &Hyper {
        &self.layout.hyper
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Index of the tensor called `name`.
    pub fn find(&self, name: &str) -> Option<usize> {
        self.layout.entries.iter().position(|e| e.name == name)
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero, normalization gains one.
/// Deterministic in `seed`.
pub fn init_params(hyper: &Hyper, seed: u64) -> Result<ModelParams, GnnError> {
    let layout = Layout::new(*hyper)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = layout
        .entries
        .iter()
        .map(|e| {
            let [r, c] = e.shape;
            match e.init {
                InitKind::Zeros => Tensor::zeros(r, c),
                InitKind::Ones => Tensor::filled(r, c, 1.0),
                InitKind::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let data = (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect();
                    Tensor::new(vec![r, c], data).expect("shape")
                }
            }
        })
        .collect();
    Ok(ModelParams { layout, tensors })
}
