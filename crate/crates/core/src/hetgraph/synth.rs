//! Planted-class synthetic heterogeneous graphs.
//!
//! Every target node gets a balanced class label. Its features are unit
//! Gaussian noise plus a shift of `signal` on the block of dimensions owned
//! by its class. Auxiliary nodes carry pure noise but are assigned a planted
//! class (`index mod C`); when an edge is drawn, its destination is taken
//! from the source's class with probability `signal`, otherwise uniformly.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{HetGraph, Schema};
use crate::error::{HgmpError, Result};
use crate::rng::rng_for;

/// Shift applied to a class's feature block at full signal.
const SIGNAL_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub name: String,
    pub count: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeWiring {
    pub name: String,
    pub src: String,
    pub dst: String,
    /// Expected edges per source node; the type receives
    /// `round(density * count(src))` edges.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub node_types: Vec<TypeSpec>,
    pub edges: Vec<EdgeWiring>,
    pub target: String,
    pub num_classes: usize,
    /// Class-signal strength in `[0, 1]`.
    pub signal: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// Academic-network shaped benchmark: `paper` targets plus `author`,
    /// `subject` and `term` auxiliary types.
    pub fn benchmark(papers: usize, num_classes: usize, signal: f64, seed: u64) -> Self {
        let ty = |name: &str, count: usize, dim: usize| TypeSpec {
            name: name.to_string(),
            count,
            dim,
        };
        let wire = |name: &str, dst: &str, density: f64| EdgeWiring {
            name: name.to_string(),
            src: "paper".to_string(),
            dst: dst.to_string(),
            density,
        };
        SyntheticSpec {
            node_types: vec![
                ty("paper", papers, 16),
                ty("author", (papers * 2 / 3).max(num_classes), 8),
                ty("subject", (papers / 20).max(num_classes), 4),
                ty("term", (papers / 6).max(num_classes), 8),
            ],
            edges: vec![
                wire("paper-author", "author", 2.0),
                wire("paper-subject", "subject", 1.0),
                wire("paper-term", "term", 1.0),
            ],
            target: "paper".to_string(),
            num_classes,
            signal,
            seed,
        }
    }

    pub fn schema(&self) -> Result<Schema> {
        let nodes: Vec<(&str, usize)> = self.node_types.iter().map(|t| (t.name.as_str(), t.dim)).collect();
        let edges: Vec<(&str, &str, &str)> = self
            .edges
            .iter()
            .map(|e| (e.name.as_str(), e.src.as_str(), e.dst.as_str()))
            .collect();
        Schema::new(&nodes, &edges, &self.target, self.num_classes)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(HgmpError::InvalidArgument(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return bad(format!("signal {} outside [0, 1]", self.signal));
        }
        if let Some(t) = self.node_types.iter().find(|t| t.count == 0) {
            return bad(format!("node type `{}` has zero count", t.name));
        }
        if let Some(e) = self.edges.iter().find(|e| !(e.density.is_finite() && e.density >= 0.0)) {
            return bad(format!("edge type `{}` has invalid density {}", e.name, e.density));
        }
        self.schema().map(|_| ())
    }
}

fn class_block(class: usize, num_classes: usize, dim: usize) -> std::ops::Range<usize> {
    if dim < num_classes {
        let d = class % dim;
        return d..d + 1;
    }
    let start = class * dim / num_classes;
    let end = (class + 1) * dim / num_classes;
    start..end
}

/// Generates a graph from `spec`; identical specs give identical graphs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<HetGraph> {
    spec.check()?;
    if spec.signal == 0.0 {
        log::warn!("null signal: synthetic labels are independent of features and wiring");
    }
    let schema = Arc::new(spec.schema()?);
    let c = spec.num_classes;
    let target = schema.target;
    let n_target = spec.node_types[target.0].count;

    let mut label_rng = rng_for(spec.seed, &[1]);
    let mut classes: Vec<usize> = (0..n_target).map(|i| i % c).collect();
    classes.shuffle(&mut label_rng);

    // Planted class of every node, per type.
    let planted: Vec<Vec<usize>> = spec
        .node_types
        .iter()
        .enumerate()
        .map(|(t, ts)| {
            if t == target.0 {
                classes.clone()
            } else {
                (0..ts.count).map(|i| i % c).collect()
            }
        })
        .collect();

    let features = spec
        .node_types
        .iter()
        .enumerate()
        .map(|(t, ts)| {
            let mut rng = rng_for(spec.seed, &[2, t as u64]);
            let mut m = Array2::from_shape_simple_fn((ts.count, ts.dim), || rng.sample::<f64, _>(StandardNormal));
            if t == target.0 {
                for (i, &class) in classes.iter().enumerate() {
                    for d in class_block(class, c, ts.dim) {
                        m[[i, d]] += spec.signal * SIGNAL_SCALE;
                    }
                }
            }
            m
        })
        .collect::<Vec<_>>();

    let edges = spec
        .edges
        .iter()
        .enumerate()
        .map(|(et, wiring)| {
            let def = &schema.edge_types[et];
            let n_src = spec.node_types[def.src.0].count;
            let n_dst = spec.node_types[def.dst.0].count;
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
            for (i, &k) in planted[def.dst.0].iter().enumerate() {
                by_class[k].push(i);
            }
            let count = (wiring.density * n_src as f64).round() as usize;
            let mut rng = rng_for(spec.seed, &[3, et as u64]);
            (0..count)
                .map(|e| {
                    let s = e % n_src;
                    let pool = &by_class[planted[def.src.0][s]];
                    let d = if !pool.is_empty() && rng.random::<f64>() < spec.signal {
                        pool[rng.random_range(0..pool.len())]
                    } else {
                        rng.random_range(0..n_dst)
                    };
                    (s, d)
                })
                .collect()
        })
        .collect::<Vec<_>>();

    let labels: BTreeMap<usize, usize> = classes.iter().copied().enumerate().collect();
    HetGraph::new(schema, features, edges, labels)
}
