//! Graph encoder: per-type input projection into a shared hidden space,
//! type-erased message passing (GCN or single-head GAT), mean readout, and a
//! two-layer projection head used only by contrastive pre-training.
//!
//! Every node gets a self-loop before aggregation. The GCN operator is
//! `D^-1/2 (A + I) D^-1/2` over the undirected multigraph; the GAT operator
//! attends over the same neighbor lists. A rectifier follows the projection
//! and every message-passing layer.

use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Segments, SparseRows, Tape, Var};
use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::error::{HgmpError, Result};
use crate::hetgraph::{HetGraph, Schema};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Gcn,
    Gat,
}

impl FromStr for Backbone {
    type Err = HgmpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Backbone::Gcn),
            "gat" => Ok(Backbone::Gat),
            _ => Err(HgmpError::UnknownBackbone(s.to_string())),
        }
    }
}

impl std::fmt::Display for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backbone::Gcn => "gcn",
            Backbone::Gat => "gat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub hidden: usize,
    pub layers: usize,
    pub latent: usize,
    pub head_activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Gcn,
            hidden: 64,
            layers: 2,
            latent: 32,
            head_activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..a)),
            bias: Array2::zeros((1, fan_out)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageLayer {
    pub linear: Linear,
    /// `(att_dst, att_src)` row vectors, present for the attention backbone.
    pub attention: Option<(Array2<f64>, Array2<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    schema_fingerprint: String,
    type_names: Vec<String>,
    type_dims: Vec<usize>,
    projections: Vec<Linear>,
    layers: Vec<MessageLayer>,
    head: [Linear; 2],
    frozen: bool,
}

#[derive(Debug, Clone)]
pub struct GraphEmbedding {
    pub z: Array1<f64>,
    pub node_states: Array2<f64>,
}

/// Deterministic Glorot initialization.
pub fn init_encoder(schema: &Schema, config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    if config.hidden == 0 || config.layers == 0 || config.latent == 0 {
        return Err(HgmpError::InvalidArgument("hidden, layers and latent must be positive".into()));
    }
    if config.latent > config.hidden {
        return Err(HgmpError::InvalidArgument(format!(
            "latent size {} exceeds hidden size {}",
            config.latent, config.hidden
        )));
    }
    let h = config.hidden;
    let projections = schema
        .node_types
        .iter()
        .enumerate()
        .map(|(t, def)| Linear::glorot(&mut rng_for(seed, &[10, t as u64]), def.dim, h))
        .collect();
    let layers = (0..config.layers)
        .map(|l| {
            let mut rng = rng_for(seed, &[20, l as u64]);
            let linear = Linear::glorot(&mut rng, h, h);
            let attention = (config.backbone == Backbone::Gat).then(|| {
                let a = (6.0 / (h + 1) as f64).sqrt();
                let mut vec = || Array2::from_shape_simple_fn((1, h), || rng.random_range(-a..a));
                let dst = vec();
                (dst, vec())
            });
            MessageLayer { linear, attention }
        })
        .collect();
    let head = [
        Linear::glorot(&mut rng_for(seed, &[30, 0]), h, h),
        Linear::glorot(&mut rng_for(seed, &[30, 1]), h, config.latent),
    ];
    Ok(EncoderParams {
        config: config.clone(),
        schema_fingerprint: schema.fingerprint(),
        type_names: schema.node_types.iter().map(|t| t.name.clone()).collect(),
        type_dims: schema.dims(),
        projections,
        layers,
        head,
        frozen: false,
    })
}

/// Weight, bias and optional `(att_dst, att_src)` of one message layer.
type BoundLayer = (Var, Var, Option<(Var, Var)>);

/// Encoder parameters placed on a tape.
pub struct BoundEncoder {
    projections: Vec<(Var, Var)>,
    layers: Vec<BoundLayer>,
    head: [(Var, Var); 2],
}

impl BoundEncoder {
    /// Vars in the order of [`EncoderParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in &self.projections {
            out.extend([w, b]);
        }
        for &(w, b, att) in &self.layers {
            out.extend([w, b]);
            if let Some((d, s)) = att {
                out.extend([d, s]);
            }
        }
        for &(w, b) in &self.head {
            out.extend([w, b]);
        }
        out
    }
}

/// Disjoint union of graphs prepared for one encoder pass. Node rows are
/// type-major: all type-0 nodes of graph 0, then of graph 1, ..., then type 1.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub type_features: Vec<Array2<f64>>,
    operator: Arc<SparseRows>,
    segments: Arc<Segments>,
}

impl GraphBatch {
    pub fn new(graphs: &[&HetGraph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| HgmpError::InvalidArgument("empty graph batch".into()))?;
        let schema = first.schema();
        for g in graphs {
            if g.schema() != schema {
                return Err(HgmpError::SchemaMismatch("graphs in a batch must share a schema".into()));
            }
            if g.total_nodes() == 0 {
                return Err(HgmpError::InvalidArgument("cannot encode a graph with no nodes".into()));
            }
        }
        let nt = schema.num_node_types();
        // base[t][g]: first batch row of graph g's type-t block.
        let mut base = vec![vec![0usize; graphs.len()]; nt];
        let mut row = 0;
        for (t, base_t) in base.iter_mut().enumerate() {
            for (gi, g) in graphs.iter().enumerate() {
                base_t[gi] = row;
                row += g.all_features()[t].nrows();
            }
        }
        let n = row;
        let mut segment = vec![0usize; n];
        let mut counts = vec![0usize; graphs.len()];
        for (t, base_t) in base.iter().enumerate() {
            for (gi, g) in graphs.iter().enumerate() {
                let rows = g.all_features()[t].nrows();
                segment[base_t[gi]..base_t[gi] + rows].fill(gi);
                counts[gi] += rows;
            }
        }

        let mut nbrs: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (gi, g) in graphs.iter().enumerate() {
            for (et, list) in g.all_edges().iter().enumerate() {
                let def = &schema.edge_types[et];
                for &(s, d) in list {
                    let u = base[def.src.0][gi] + s;
                    let v = base[def.dst.0][gi] + d;
                    nbrs[u].push(v);
                    if u != v {
                        nbrs[v].push(u);
                    }
                }
            }
        }
        let degree: Vec<f64> = nbrs.iter().map(|l| l.len() as f64).collect();
        let mut starts = Vec::with_capacity(n + 1);
        starts.push(0);
        let mut entries = Vec::with_capacity(nbrs.iter().map(Vec::len).sum());
        for (i, list) in nbrs.iter().enumerate() {
            for &j in list {
                entries.push((j, 1.0 / (degree[i] * degree[j]).sqrt()));
            }
            starts.push(entries.len());
        }

        let type_features = (0..nt)
            .map(|t| {
                let views: Vec<_> = graphs.iter().map(|g| g.all_features()[t].view()).collect();
                ndarray::concatenate(ndarray::Axis(0), &views).expect("same per-type width")
            })
            .collect();
        Ok(Self {
            type_features,
            operator: Arc::new(SparseRows {
                starts,
                entries,
                ncols: n,
            }),
            segments: Arc::new(Segments { segment, counts }),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.segments.counts.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.segments.segment.len()
    }
}

impl EncoderParams {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn backbone(&self) -> Backbone {
        self.config.backbone
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn latent(&self) -> usize {
        self.config.latent
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn schema_fingerprint(&self) -> &str {
        &self.schema_fingerprint
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the parameters read-only. Idempotent.
    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Named parameter arrays in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (name, p) in self.type_names.iter().zip(&self.projections) {
            out.push((format!("proj.{name}.weight"), &p.weight));
            out.push((format!("proj.{name}.bias"), &p.bias));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer.{l}.weight"), &layer.linear.weight));
            out.push((format!("layer.{l}.bias"), &layer.linear.bias));
            if let Some((d, s)) = &layer.attention {
                out.push((format!("layer.{l}.att_dst"), d));
                out.push((format!("layer.{l}.att_src"), s));
            }
        }
        for (i, lin) in self.head.iter().enumerate() {
            out.push((format!("head.{i}.weight"), &lin.weight));
            out.push((format!("head.{i}.bias"), &lin.bias));
        }
        out
    }

    /// Mutable parameter arrays in [`tensors`](Self::tensors) order. Refused
    /// once frozen.
    pub fn tensors_mut(&mut self) -> Result<Vec<&mut Array2<f64>>> {
        if self.frozen {
            return Err(HgmpError::Frozen);
        }
        let mut out = Vec::new();
        for p in &mut self.projections {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        for layer in &mut self.layers {
            out.push(&mut layer.linear.weight);
            out.push(&mut layer.linear.bias);
            if let Some((d, s)) = &mut layer.attention {
                out.push(d);
                out.push(s);
            }
        }
        for lin in &mut self.head {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
        }
        Ok(out)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        let idx = self
            .tensors()
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| HgmpError::InvalidArgument(format!("no parameter `{name}`")))?;
        Ok(self.tensors_mut()?.swap_remove(idx))
    }

    pub fn set_head_activation(&mut self, activation: Activation) -> Result<()> {
        if self.frozen {
            return Err(HgmpError::Frozen);
        }
        self.config.head_activation = activation;
        Ok(())
    }

    /// Places parameters on `tape`; trainable ones as leaves, otherwise as
    /// constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundEncoder {
        let mut put = |a: &Array2<f64>| {
            if trainable {
                tape.leaf(a.clone())
            } else {
                tape.constant(a.clone())
            }
        };
        let projections = self.projections.iter().map(|p| (put(&p.weight), put(&p.bias))).collect();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = put(&l.linear.weight);
                let b = put(&l.linear.bias);
                let att = l.attention.as_ref().map(|(d, s)| (put(d), put(s)));
                (w, b, att)
            })
            .collect();
        let head = [
            (put(&self.head[0].weight), put(&self.head[0].bias)),
            (put(&self.head[1].weight), put(&self.head[1].bias)),
        ];
        BoundEncoder {
            projections,
            layers,
            head,
        }
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if schema.dims() != self.type_dims || schema.fingerprint() != self.schema_fingerprint {
            return Err(HgmpError::SchemaMismatch(format!(
                "encoder built for schema {} but graph has schema {}",
                self.schema_fingerprint,
                schema.fingerprint()
            )));
        }
        Ok(())
    }

    /// Encoder pass on the tape. `inputs[t]` holds the (possibly prompted)
    /// type-t feature rows of `batch`. Returns `(node states, graph
    /// embeddings)`.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundEncoder, batch: &GraphBatch, inputs: &[Var]) -> (Var, Var) {
        let hs: Vec<Var> = inputs
            .iter()
            .zip(&bound.projections)
            .map(|(&x, &(w, b))| {
                let h = tape.matmul(x, w);
                tape.add_row(h, b)
            })
            .collect();
        let mut h = tape.concat_rows(&hs);
        h = tape.relu(h);
        for &(w, b, att) in &bound.layers {
            let hw = tape.matmul(h, w);
            let agg = match att {
                None => tape.propagate(hw, batch.operator.clone()),
                Some((dst, src)) => tape.attend(hw, dst, src, batch.operator.clone()),
            };
            let out = tape.add_row(agg, b);
            h = tape.relu(out);
        }
        let z = tape.segment_mean(h, batch.segments.clone());
        (h, z)
    }

    /// Projection head on the tape.
    pub fn head_forward(&self, tape: &mut Tape, bound: &BoundEncoder, z: Var) -> Var {
        let [(w0, b0), (w1, b1)] = bound.head;
        let a = tape.matmul(z, w0);
        let mut a = tape.add_row(a, b0);
        if self.config.head_activation == Activation::Relu {
            a = tape.relu(a);
        }
        let o = tape.matmul(a, w1);
        tape.add_row(o, b1)
    }

    /// Graph embeddings (one row per graph) for a batch, without gradients.
    pub fn encode_batch(&self, graphs: &[&HetGraph]) -> Result<Array2<f64>> {
        if let Some(g) = graphs.first() {
            self.check_schema(g.schema())?;
        }
        let batch = GraphBatch::new(graphs)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let inputs: Vec<Var> = batch.type_features.iter().map(|f| tape.constant(f.clone())).collect();
        let (_, z) = self.forward(&mut tape, &bound, &batch, &inputs);
        Ok(tape.value(z).clone())
    }

    pub fn encode_graph(&self, g: &HetGraph) -> Result<GraphEmbedding> {
        self.check_schema(g.schema())?;
        let batch = GraphBatch::new(&[g])?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let inputs: Vec<Var> = batch.type_features.iter().map(|f| tape.constant(f.clone())).collect();
        let (h, z) = self.forward(&mut tape, &bound, &batch, &inputs);
        let emb = GraphEmbedding {
            z: tape.value(z).row(0).to_owned(),
            node_states: tape.value(h).clone(),
        };
        if emb.z.iter().any(|v| !v.is_finite()) {
            return Err(HgmpError::Numerical("non-finite graph embedding".into()));
        }
        Ok(emb)
    }

    /// Projection head applied to one embedding.
    pub fn project_head(&self, z: &Array1<f64>) -> Array1<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone().insert_axis(ndarray::Axis(0)));
        let out = self.head_forward(&mut tape, &bound, zv);
        tape.value(out).row(0).to_owned()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("encoder", &self.schema_fingerprint);
        ck.backbone = Some(self.config.backbone.to_string());
        ck.frozen = self.frozen;
        ck.meta.insert("hidden".into(), self.config.hidden.into());
        ck.meta.insert("layers".into(), self.config.layers.into());
        ck.meta.insert("latent".into(), self.config.latent.into());
        let act = match self.config.head_activation {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        };
        ck.meta.insert("head_activation".into(), act.into());
        ck.tensors = self.tensors().into_iter().map(|(n, a)| NamedTensor::new(n, a)).collect();
        ck
    }

    /// Rebuilds parameters from a checkpoint, verifying that it was made for
    /// `schema`.
    pub fn from_checkpoint(ck: &Checkpoint, schema: &Schema) -> Result<Self> {
        ck.expect_kind("encoder")?;
        ck.expect_fingerprint(&schema.fingerprint())?;
        let backbone: Backbone = ck
            .backbone
            .as_deref()
            .ok_or_else(|| HgmpError::Config("encoder checkpoint lacks a backbone".into()))?
            .parse()?;
        let head_activation = match ck.meta_str("head_activation")? {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            other => return Err(HgmpError::Config(format!("unknown head activation `{other}`"))),
        };
        let config = EncoderConfig {
            backbone,
            hidden: ck.meta_usize("hidden")?,
            layers: ck.meta_usize("layers")?,
            latent: ck.meta_usize("latent")?,
            head_activation,
        };
        let mut params = init_encoder(schema, &config, 0)?;
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != ck.tensors.len() {
            return Err(HgmpError::Config(format!(
                "checkpoint has {} tensors, expected {}",
                ck.tensors.len(),
                names.len()
            )));
        }
        for (name, slot) in names.iter().zip(params.tensors_mut()?) {
            let a = ck.tensor(name)?;
            if a.dim() != slot.dim() {
                return Err(HgmpError::Config(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    a.dim(),
                    slot.dim()
                )));
            }
            *slot = a;
        }
        params.frozen = ck.frozen;
        Ok(params)
    }
}
