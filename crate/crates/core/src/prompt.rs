//! Per-type feature prompts, the downstream classification head, and prompt
//! tuning against a frozen encoder.

use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::encoder::{EncoderParams, GraphBatch};
use crate::error::{HgmpError, Result};
use crate::hetgraph::{HetGraph, Schema};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::rng_for;
use crate::taskbuilder::{FewShotTask, InducedSubgraph};

/// How a prompt vector combines with a feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Multiplicative,
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptInit {
    #[default]
    Ones,
    Random,
}

impl FromStr for PromptInit {
    type Err = HgmpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(PromptInit::Ones),
            "random" => Ok(PromptInit::Random),
            other => Err(HgmpError::InvalidArgument(format!("unknown prompt init `{other}`"))),
        }
    }
}

/// Half-width of the uniform perturbation used by [`PromptInit::Random`].
const RANDOM_SPREAD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub mode: PromptMode,
    names: Vec<String>,
    schema_fingerprint: String,
    /// One `1 x d_t` row per node type.
    vectors: Vec<Array2<f64>>,
}

/// Bank of per-type prompts. Multiplicative banks start at (or around) one,
/// additive banks at (or around) zero, so the identity start is exact.
pub fn init_prompts(schema: &Schema, init: PromptInit, mode: PromptMode, seed: u64) -> PromptBank {
    let centre = match mode {
        PromptMode::Multiplicative => 1.0,
        PromptMode::Additive => 0.0,
    };
    let vectors = schema
        .node_types
        .iter()
        .enumerate()
        .map(|(t, def)| match init {
            PromptInit::Ones => Array2::from_elem((1, def.dim), centre),
            PromptInit::Random => {
                let mut rng = rng_for(seed, &[0x9A, t as u64]);
                Array2::from_shape_simple_fn((1, def.dim), || centre + rng.random_range(-RANDOM_SPREAD..RANDOM_SPREAD))
            }
        })
        .collect();
    PromptBank {
        mode,
        names: schema.node_types.iter().map(|t| t.name.clone()).collect(),
        schema_fingerprint: schema.fingerprint(),
        vectors,
    }
}

impl PromptBank {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, t: usize) -> &Array2<f64> {
        &self.vectors[t]
    }

    pub fn vector_mut(&mut self, t: usize) -> &mut Array2<f64> {
        &mut self.vectors[t]
    }

    pub fn vectors(&self) -> &[Array2<f64>] {
        &self.vectors
    }

    fn check(&self, schema: &Schema) -> Result<()> {
        let dims = schema.dims();
        if dims.len() != self.vectors.len() {
            return Err(HgmpError::SchemaMismatch(format!(
                "prompt bank has {} vectors for {} node types",
                self.vectors.len(),
                dims.len()
            )));
        }
        for (t, (v, d)) in self.vectors.iter().zip(dims).enumerate() {
            if v.ncols() != d {
                return Err(HgmpError::SchemaMismatch(format!(
                    "prompt for type `{}` has length {}, features have {d}",
                    schema.node_types[t].name,
                    v.ncols()
                )));
            }
        }
        Ok(())
    }

    fn combine(&self, features: &Array2<f64>, t: usize) -> Array2<f64> {
        let p = self.vectors[t].row(0);
        let mut out = features.clone();
        Zip::from(out.rows_mut()).for_each(|mut row| match self.mode {
            PromptMode::Multiplicative => row *= &p,
            PromptMode::Additive => row += &p,
        });
        out
    }

    /// Places the prompt-adjusted features of `batch` on the tape. Returns
    /// the per-type input vars and, when `trainable`, the prompt leaves.
    fn bind_inputs(&self, tape: &mut Tape, batch: &GraphBatch, trainable: bool) -> (Vec<Var>, Vec<Var>) {
        let mut inputs = Vec::new();
        let mut leaves = Vec::new();
        for (t, feats) in batch.type_features.iter().enumerate() {
            if !trainable {
                inputs.push(tape.constant(self.combine(feats, t)));
                continue;
            }
            let x = tape.constant(feats.clone());
            let p = tape.leaf(self.vectors[t].clone());
            leaves.push(p);
            inputs.push(match self.mode {
                PromptMode::Multiplicative => tape.mul_row(x, p),
                PromptMode::Additive => tape.add_row(x, p),
            });
        }
        (inputs, leaves)
    }
}

/// Copy of `g` with every feature row combined with its type's prompt.
pub fn apply_prompts(g: &HetGraph, bank: &PromptBank) -> Result<HetGraph> {
    bank.check(g.schema())?;
    let features = g
        .all_features()
        .iter()
        .enumerate()
        .map(|(t, f)| bank.combine(f, t))
        .collect();
    Ok(g.with_features(features))
}

/// Affine map from graph embeddings to class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl TaskHead {
    pub fn init(hidden: usize, num_classes: usize, seed: u64) -> Self {
        let a = (6.0 / (hidden + num_classes) as f64).sqrt();
        let mut rng = rng_for(seed, &[0x4EAD]);
        Self {
            weight: Array2::from_shape_simple_fn((hidden, num_classes), || rng.random_range(-a..a)),
            bias: Array2::zeros((1, num_classes)),
        }
    }

    pub fn zeros(hidden: usize, num_classes: usize) -> Self {
        Self {
            weight: Array2::zeros((hidden, num_classes)),
            bias: Array2::zeros((1, num_classes)),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.ncols()
    }

    pub fn scores(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// When false the bank stays fixed and only the head is fitted.
    pub train_prompt: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.003,
            optimizer: OptimizerKind::Adam,
            train_prompt: true,
        }
    }
}

/// Support-set loss before each step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuneTrace {
    pub loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub scores: Array1<f64>,
}

/// Argmax with ties going to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn support_labels(support: &[Arc<InducedSubgraph>], num_classes: usize) -> Result<Vec<usize>> {
    support
        .iter()
        .enumerate()
        .map(|(i, s)| match s.label {
            Some(y) if y < num_classes => Ok(y),
            Some(y) => Err(HgmpError::InvalidArgument(format!(
                "support item {i} has class {y} but the head has {num_classes} outputs"
            ))),
            None => Err(HgmpError::NoLabels(format!("support item {i} is unlabeled"))),
        })
        .collect()
}

fn head_on_tape(tape: &mut Tape, z: Var, labels: &Arc<Vec<usize>>, head: &TaskHead) -> (Var, Var, Var) {
    let w = tape.leaf(head.weight.clone());
    let b = tape.leaf(head.bias.clone());
    let logits = tape.matmul(z, w);
    let logits = tape.add_row(logits, b);
    (tape.cross_entropy(logits, labels.clone()), w, b)
}

/// Support cross-entropy for fixed embeddings, with gradients for the head
/// weight and bias.
fn head_loss(z: &Array2<f64>, labels: &Arc<Vec<usize>>, head: &TaskHead) -> (f64, Vec<Array2<f64>>) {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let (loss, w, b) = head_on_tape(&mut tape, zv, labels, head);
    let grads = tape.backward(loss);
    (tape.scalar(loss), vec![grads.get(w), grads.get(b)])
}

/// Mean cross-entropy of `head(encode(prompted batch))` against `labels`,
/// with gradients for every prompt vector (type order) followed by the head
/// weight and bias. The encoder enters as constants.
pub fn prompt_loss(
    batch: &GraphBatch,
    labels: &Arc<Vec<usize>>,
    encoder: &EncoderParams,
    bank: &PromptBank,
    head: &TaskHead,
) -> (f64, Vec<Array2<f64>>) {
    let mut tape = Tape::new();
    let bound = encoder.bind(&mut tape, false);
    let (inputs, leaves) = bank.bind_inputs(&mut tape, batch, true);
    let (_, z) = encoder.forward(&mut tape, &bound, batch, &inputs);
    let (loss, w, b) = head_on_tape(&mut tape, z, labels, head);
    let grads = tape.backward(loss);
    let mut out: Vec<Array2<f64>> = leaves.into_iter().map(|v| grads.get(v)).collect();
    out.extend([grads.get(w), grads.get(b)]);
    (tape.scalar(loss), out)
}

/// Fits the prompt bank (when enabled) and the head on the support set by
/// full-batch gradient descent. The encoder is only read.
pub fn tune(
    task: &FewShotTask,
    encoder: &EncoderParams,
    bank: PromptBank,
    head: TaskHead,
    cfg: &TuneConfig,
) -> Result<(PromptBank, TaskHead, TuneTrace)> {
    if !encoder.is_frozen() {
        return Err(HgmpError::NotFrozen);
    }
    if task.support.is_empty() {
        return Err(HgmpError::InvalidArgument("support set is empty".into()));
    }
    if !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(HgmpError::InvalidArgument(format!("learning rate {} must be non-negative", cfg.lr)));
    }
    let schema = task.support[0].graph.schema();
    encoder.check_schema(schema)?;
    bank.check(schema)?;
    if head.weight.nrows() != encoder.hidden() {
        return Err(HgmpError::InvalidArgument(format!(
            "head expects {} inputs, encoder emits {}",
            head.weight.nrows(),
            encoder.hidden()
        )));
    }
    let labels = Arc::new(support_labels(&task.support, head.num_classes())?);
    let graphs: Vec<&HetGraph> = task.support.iter().map(|s| &s.graph).collect();
    let batch = GraphBatch::new(&graphs)?;

    let mut bank = bank;
    let mut head = head;
    let mut trace = TuneTrace::default();

    // With a fixed bank the embeddings never change.
    let fixed_z = if cfg.train_prompt {
        None
    } else {
        let mut tape = Tape::new();
        let bound = encoder.bind(&mut tape, false);
        let (inputs, _) = bank.bind_inputs(&mut tape, &batch, false);
        let (_, z) = encoder.forward(&mut tape, &bound, &batch, &inputs);
        Some(tape.value(z).clone())
    };

    let mut shapes: Vec<(usize, usize)> = Vec::new();
    if cfg.train_prompt {
        shapes.extend(bank.vectors.iter().map(|v| v.dim()));
    }
    shapes.extend([head.weight.dim(), head.bias.dim()]);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, &shapes);

    for step in 0..cfg.steps {
        let (value, g) = match &fixed_z {
            Some(z) => head_loss(z, &labels, &head),
            None => prompt_loss(&batch, &labels, encoder, &bank, &head),
        };
        if !value.is_finite() {
            return Err(HgmpError::Numerical(format!("non-finite support loss at step {step}")));
        }
        trace.loss.push(value);
        let mut params: Vec<&mut Array2<f64>> = Vec::new();
        if cfg.train_prompt {
            params.extend(bank.vectors.iter_mut());
        }
        params.push(&mut head.weight);
        params.push(&mut head.bias);
        opt.step(&mut params, &g);
    }
    Ok((bank, head, trace))
}

/// Scores for many subgraphs, encoded in chunks.
pub fn predict_batch(
    graphs: &[&HetGraph],
    encoder: &EncoderParams,
    bank: &PromptBank,
    head: &TaskHead,
) -> Result<Vec<Prediction>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(CHUNK) {
        let schema = chunk[0].schema();
        encoder.check_schema(schema)?;
        bank.check(schema)?;
        let batch = GraphBatch::new(chunk)?;
        let mut tape = Tape::new();
        let bound = encoder.bind(&mut tape, false);
        let (inputs, _) = bank.bind_inputs(&mut tape, &batch, false);
        let (_, z) = encoder.forward(&mut tape, &bound, &batch, &inputs);
        let scores = head.scores(tape.value(z));
        for row in scores.rows() {
            let scores = row.to_owned();
            out.push(Prediction {
                class: argmax(scores.as_slice().expect("contiguous")),
                scores,
            });
        }
    }
    Ok(out)
}

pub fn predict(g: &HetGraph, encoder: &EncoderParams, bank: &PromptBank, head: &TaskHead) -> Result<Prediction> {
    Ok(predict_batch(&[g], encoder, bank, head)?.remove(0))
}

pub fn prompt_checkpoint(bank: &PromptBank, head: &TaskHead) -> Checkpoint {
    let mut ck = Checkpoint::new("prompt", &bank.schema_fingerprint);
    ck.frozen = false;
    let mode = match bank.mode {
        PromptMode::Multiplicative => "multiplicative",
        PromptMode::Additive => "additive",
    };
    ck.meta.insert("mode".into(), mode.into());
    for (name, v) in bank.names.iter().zip(&bank.vectors) {
        ck.tensors.push(NamedTensor::new(format!("prompt.{name}"), v));
    }
    ck.tensors.push(NamedTensor::new("head.weight", &head.weight));
    ck.tensors.push(NamedTensor::new("head.bias", &head.bias));
    ck
}

pub fn load_prompt_checkpoint(ck: &Checkpoint, schema: &Schema) -> Result<(PromptBank, TaskHead)> {
    ck.expect_kind("prompt")?;
    ck.expect_fingerprint(&schema.fingerprint())?;
    let mode = match ck.meta_str("mode")? {
        "multiplicative" => PromptMode::Multiplicative,
        "additive" => PromptMode::Additive,
        other => return Err(HgmpError::Config(format!("unknown prompt mode `{other}`"))),
    };
    let mut bank = init_prompts(schema, PromptInit::Ones, mode, 0);
    for (name, v) in bank.names.clone().iter().zip(bank.vectors.iter_mut()) {
        *v = ck.tensor(&format!("prompt.{name}"))?;
    }
    bank.check(schema)?;
    let head = TaskHead {
        weight: ck.tensor("head.weight")?,
        bias: ck.tensor("head.bias")?,
    };
    Ok((bank, head))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_encoder, EncoderConfig};
    use crate::hetgraph::{generate_synthetic, SyntheticSpec};
    use crate::taskbuilder::{build_node_tasks, sample_k_shot, TaskKind};

    fn setup() -> (HetGraph, EncoderParams, FewShotTask) {
        let g = generate_synthetic(&SyntheticSpec::benchmark(60, 3, 0.9, 8)).unwrap();
        let cfg = EncoderConfig {
            hidden: 16,
            latent: 8,
            ..EncoderConfig::default()
        };
        let enc = init_encoder(g.schema(), &cfg, 2).unwrap().freeze();
        let tasks = build_node_tasks(&g, 1).unwrap();
        let task = sample_k_shot(TaskKind::Node, &tasks, 5, 1.0, 3).unwrap();
        (g, enc, task)
    }

    #[test]
    fn bank_shapes_and_identity() {
        let (g, _, _) = setup();
        let bank = init_prompts(g.schema(), PromptInit::Ones, PromptMode::Multiplicative, 0);
        assert_eq!(bank.len(), 4);
        for (t, v) in bank.vectors().iter().enumerate() {
            assert_eq!(v.ncols(), g.schema().node_types[t].dim);
        }
        assert_eq!(apply_prompts(&g, &bank).unwrap(), g);
        let add = init_prompts(g.schema(), PromptInit::Ones, PromptMode::Additive, 0);
        assert_eq!(apply_prompts(&g, &add).unwrap(), g);
    }

    #[test]
    fn random_bank_is_reproducible_and_near_one() {
        let (g, _, _) = setup();
        let a = init_prompts(g.schema(), PromptInit::Random, PromptMode::Multiplicative, 5);
        let b = init_prompts(g.schema(), PromptInit::Random, PromptMode::Multiplicative, 5);
        assert_eq!(a, b);
        assert!(a.vectors().iter().flatten().all(|&x| (x - 1.0).abs() <= RANDOM_SPREAD));
    }

    #[test]
    fn zero_prompt_absorbs() {
        let (g, _, _) = setup();
        let mut bank = init_prompts(g.schema(), PromptInit::Ones, PromptMode::Multiplicative, 0);
        bank.vector_mut(1).fill(0.0);
        let out = apply_prompts(&g, &bank).unwrap();
        assert!(out.all_features()[1].iter().all(|&x| x == 0.0));
        assert_eq!(out.all_features()[0], g.all_features()[0]);
        assert_eq!(out.all_edges(), g.all_edges());
    }

    #[test]
    fn zero_steps_and_zero_lr_leave_parameters() {
        let (g, enc, task) = setup();
        let bank = init_prompts(g.schema(), PromptInit::Random, PromptMode::Multiplicative, 1);
        let head = TaskHead::init(16, 3, 1);
        let cfg = TuneConfig {
            steps: 0,
            ..TuneConfig::default()
        };
        let (b, h, t) = tune(&task, &enc, bank.clone(), head.clone(), &cfg).unwrap();
        assert_eq!((b, h), (bank.clone(), head.clone()));
        assert!(t.loss.is_empty());

        let cfg = TuneConfig {
            steps: 5,
            lr: 0.0,
            ..TuneConfig::default()
        };
        let (b, h, t) = tune(&task, &enc, bank.clone(), head.clone(), &cfg).unwrap();
        assert_eq!((b, h), (bank, head));
        assert!(t.loss.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn tuning_reduces_support_loss_and_spares_encoder() {
        let (g, enc, task) = setup();
        let before = enc.to_checkpoint().to_bytes();
        let bank = init_prompts(g.schema(), PromptInit::Ones, PromptMode::Multiplicative, 0);
        let cfg = TuneConfig {
            steps: 100,
            lr: 0.05,
            ..TuneConfig::default()
        };
        let (_, _, trace) = tune(&task, &enc, bank, TaskHead::init(16, 3, 4), &cfg).unwrap();
        assert!(trace.loss.last().unwrap() < &trace.loss[0]);
        assert_eq!(enc.to_checkpoint().to_bytes(), before);
    }

    #[test]
    fn refuses_unfrozen_encoder_and_empty_support() {
        let (g, enc, mut task) = setup();
        let bank = init_prompts(g.schema(), PromptInit::Ones, PromptMode::Multiplicative, 0);
        let head = TaskHead::init(16, 3, 1);
        let mut thawed = enc.clone();
        thawed = EncoderParams::from_checkpoint(
            &{
                let mut ck = thawed.to_checkpoint();
                ck.frozen = false;
                ck
            },
            g.schema(),
        )
        .unwrap();
        assert!(matches!(
            tune(&task, &thawed, bank.clone(), head.clone(), &TuneConfig::default()),
            Err(HgmpError::NotFrozen)
        ));
        task.support.clear();
        assert!(tune(&task, &enc, bank, head, &TuneConfig::default()).is_err());
    }

    #[test]
    fn zero_head_ties_to_class_zero() {
        let (g, enc, task) = setup();
        let bank = init_prompts(g.schema(), PromptInit::Ones, PromptMode::Multiplicative, 0);
        let p = predict(&task.query[0].graph, &enc, &bank, &TaskHead::zeros(16, 3)).unwrap();
        assert_eq!(p.class, 0);
        assert!(p.scores.iter().all(|&s| s == 0.0));
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn prompt_checkpoint_round_trip() {
        let (g, _, _) = setup();
        let bank = init_prompts(g.schema(), PromptInit::Random, PromptMode::Additive, 7);
        let head = TaskHead::init(16, 3, 7);
        let ck = prompt_checkpoint(&bank, &head);
        let back: Checkpoint = serde_json::from_slice(&ck.to_bytes()).unwrap();
        let (b2, h2) = load_prompt_checkpoint(&back, g.schema()).unwrap();
        assert_eq!((b2, h2), (bank, head));
    }
}
