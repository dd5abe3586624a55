//! Graph-level contrastive pre-training with paired augmented views.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, AugmentConfig};
use crate::autograd::{Tape, Var};
use crate::encoder::{EncoderParams, GraphBatch};
use crate::error::{HgmpError, Result};
use crate::hetgraph::HetGraph;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{derive_seed, rng_for};
use crate::taskbuilder::InducedSubgraph;

/// Norm floor for latents during training; fully masked views can map to
/// the zero vector.
const MIN_NORM: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Caps the corpus to a seeded random subset when set.
    pub max_corpus: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            batch_size: 32,
            epochs: 20,
            lr: 0.01,
            optimizer: OptimizerKind::Sgd,
            augment: AugmentConfig::default(),
            seed: 0,
            max_corpus: None,
        }
    }
}

impl PretrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(HgmpError::InvalidArgument(format!("temperature {} must be positive", self.temperature)));
        }
        if self.batch_size == 0 {
            return Err(HgmpError::InvalidArgument("batch size must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(HgmpError::InvalidArgument(format!("learning rate {} must be non-negative", self.lr)));
        }
        self.augment.check()
    }
}

/// Mean loss per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainTrace {
    pub epoch_loss: Vec<f64>,
}

impl PretrainTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (e, l) in self.epoch_loss.iter().enumerate() {
            s.push_str(&format!("{e},{l}\n"));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| HgmpError::io(path, e))
    }
}

/// Normalized-temperature contrastive loss for `first[i]` / `second[i]`
/// positive pairs, averaged over all `2N` anchors.
pub fn contrastive_loss(first: &Array2<f64>, second: &Array2<f64>, temperature: f64) -> Result<f64> {
    if first.dim() != second.dim() {
        return Err(HgmpError::InvalidArgument("view batches differ in shape".into()));
    }
    let mut tape = Tape::new();
    let z = tape.constant(concatenate(Axis(0), &[first.view(), second.view()]).expect("same width"));
    let loss = tape.nt_xent(z, temperature)?;
    Ok(tape.scalar(loss))
}

/// Contrastive loss of the encoder on `batch`, whose graphs are laid out as
/// all first views followed by all second views, with gradients for every
/// encoder tensor in [`EncoderParams::tensors`] order.
pub fn contrastive_objective(
    encoder: &EncoderParams,
    batch: &GraphBatch,
    temperature: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let bound = encoder.bind(&mut tape, true);
    let inputs: Vec<Var> = batch.type_features.iter().map(|f| tape.constant(f.clone())).collect();
    let (_, z) = encoder.forward(&mut tape, &bound, batch, &inputs);
    let latent = encoder.head_forward(&mut tape, &bound, z);
    let loss = tape.nt_xent_floored(latent, temperature, MIN_NORM)?;
    let grads = tape.backward(loss);
    let g = bound.vars().into_iter().map(|v| grads.get(v)).collect();
    Ok((tape.scalar(loss), g))
}

/// Builds the `2N` augmented views for one batch: all first views, then all
/// second views.
fn views_for(graphs: &[&HetGraph], augment: &AugmentConfig, seeds: &[u64]) -> Result<Vec<HetGraph>> {
    let pairs: Vec<(HetGraph, HetGraph)> = graphs
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(g, &s)| make_views(g, &augment.with_seed(s)).map(|(a, b)| (a.graph, b.graph)))
        .collect::<Result<_>>()?;
    let (first, second): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(first.into_iter().chain(second).collect())
}

/// Contrastive pre-training. Returns the frozen encoder and the loss trace.
pub fn pretrain(
    corpus: &[Arc<InducedSubgraph>],
    encoder: EncoderParams,
    cfg: &PretrainConfig,
) -> Result<(EncoderParams, PretrainTrace)> {
    if corpus.is_empty() {
        return Err(HgmpError::InvalidArgument("pre-training corpus is empty".into()));
    }
    if encoder.is_frozen() {
        return Err(HgmpError::Frozen);
    }
    cfg.check()?;
    encoder.check_schema(corpus[0].graph.schema())?;

    let mut pool: Vec<&HetGraph> = corpus.iter().map(|s| &s.graph).collect();
    if let Some(cap) = cfg.max_corpus.filter(|&c| c < pool.len()) {
        pool.shuffle(&mut rng_for(cfg.seed, &[0xC0]));
        pool.truncate(cap.max(1));
    }

    let mut encoder = encoder;
    let shapes: Vec<_> = encoder.tensors().iter().map(|(_, a)| a.dim()).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, &shapes);
    let mut trace = PretrainTrace::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[0xE0, epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let graphs: Vec<&HetGraph> = chunk.iter().map(|&i| pool[i]).collect();
            let seeds: Vec<u64> = chunk
                .iter()
                .map(|&i| derive_seed(cfg.seed, &[0xA0, epoch as u64, i as u64]))
                .collect();
            let views = views_for(&graphs, &cfg.augment, &seeds)?;
            let refs: Vec<&HetGraph> = views.iter().collect();
            let batch = GraphBatch::new(&refs)?;

            let (value, grads) = contrastive_objective(&encoder, &batch, cfg.temperature)?;
            if !value.is_finite() {
                return Err(HgmpError::Numerical(format!("non-finite contrastive loss in epoch {epoch}")));
            }
            opt.step(&mut encoder.tensors_mut()?, &grads);
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("pretrain epoch {epoch}: mean loss {mean:.6}");
        trace.epoch_loss.push(mean);
    }
    Ok((encoder.freeze(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_encoder, EncoderConfig};
    use crate::hetgraph::{generate_synthetic, SyntheticSpec};
    use crate::taskbuilder::build_target_corpus;
    use ndarray::array;

    fn brute_force(z: &[Vec<f64>], temp: f64) -> f64 {
        let n2 = z.len();
        let n = n2 / 2;
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut total = 0.0;
        for a in 0..n2 {
            let p = (a + n) % n2;
            let denom: f64 = (0..n2).filter(|&j| j != a).map(|j| (cos(&z[a], &z[j]) / temp).exp()).sum();
            total -= ((cos(&z[a], &z[p]) / temp).exp() / denom).ln();
        }
        total / n2 as f64
    }

    #[test]
    fn single_pair_is_exactly_zero() {
        let l = contrastive_loss(&array![[1.0, 2.0]], &array![[-3.0, 0.5]], 0.5).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn orthonormal_pairs_match_brute_force() {
        let first = array![[1.0, 0.0], [0.0, 1.0]];
        let second = first.clone();
        let l = contrastive_loss(&first, &second, 1.0).unwrap();
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!((l - brute_force(&rows, 1.0)).abs() < 1e-12);
        // Hand value: -ln(e / (e + 1 + 1)).
        let e = 1f64.exp();
        assert!((l + (e / (e + 2.0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_rejected() {
        assert!(contrastive_loss(&array![[0.0, 0.0], [1.0, 0.0]], &array![[1.0, 1.0], [0.0, 1.0]], 0.5).is_err());
    }

    fn corpus() -> (HetGraph, Vec<Arc<InducedSubgraph>>) {
        let g = generate_synthetic(&SyntheticSpec::benchmark(30, 3, 0.9, 4)).unwrap();
        let c = build_target_corpus(&g, 1).unwrap();
        (g, c)
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            hidden: 8,
            latent: 4,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_frozen_init() {
        let (g, c) = corpus();
        let enc = init_encoder(g.schema(), &small(), 1).unwrap();
        let cfg = PretrainConfig {
            epochs: 0,
            ..PretrainConfig::default()
        };
        let (out, trace) = pretrain(&c, enc.clone(), &cfg).unwrap();
        assert!(out.is_frozen());
        assert!(trace.epoch_loss.is_empty());
        assert_eq!(out.tensors(), enc.tensors());
    }

    #[test]
    fn zero_lr_is_bit_identical_and_runs_deterministically() {
        let (g, c) = corpus();
        let enc = init_encoder(g.schema(), &small(), 1).unwrap();
        let cfg = PretrainConfig {
            epochs: 2,
            lr: 0.0,
            batch_size: 8,
            ..PretrainConfig::default()
        };
        let (out, _) = pretrain(&c, enc.clone(), &cfg).unwrap();
        assert_eq!(out.tensors(), enc.tensors());

        let cfg = PretrainConfig { lr: 0.05, ..cfg };
        let (a, ta) = pretrain(&c, enc.clone(), &cfg).unwrap();
        let (b, tb) = pretrain(&c, enc, &cfg).unwrap();
        assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());
        assert_eq!(ta, tb);
        assert_eq!(ta.to_csv().lines().count(), 3);
    }

    #[test]
    fn refuses_frozen_or_empty() {
        let (g, c) = corpus();
        let enc = init_encoder(g.schema(), &small(), 1).unwrap();
        assert!(matches!(
            pretrain(&c, enc.clone().freeze(), &PretrainConfig::default()),
            Err(HgmpError::Frozen)
        ));
        assert!(pretrain(&[], enc, &PretrainConfig::default()).is_err());
    }
}
