//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use hgmp::hetgraph::{HetGraph, NodeRef, NodeTypeId, Schema};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random typed graph with at most `max_nodes` nodes: 1-3 node types, 0-3
/// edge types, random features in [-1, 1] and labels on about half of the
/// target nodes.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize, max_edges_per_type: usize) -> HetGraph {
    let nt = rng.random_range(1..=3usize);
    let et = rng.random_range(0..=3usize);
    let names: Vec<String> = (0..nt).map(|t| format!("n{t}")).collect();
    let dims: Vec<usize> = (0..nt).map(|_| rng.random_range(1..=4)).collect();
    let node_decl: Vec<(&str, usize)> = names.iter().map(String::as_str).zip(dims.iter().copied()).collect();
    let edge_names: Vec<String> = (0..et).map(|e| format!("e{e}")).collect();
    let ends: Vec<(usize, usize)> = (0..et).map(|_| (rng.random_range(0..nt), rng.random_range(0..nt))).collect();
    let edge_decl: Vec<(&str, &str, &str)> = edge_names
        .iter()
        .zip(&ends)
        .map(|(n, &(s, d))| (n.as_str(), names[s].as_str(), names[d].as_str()))
        .collect();
    let num_classes = rng.random_range(2..=4);
    let schema = Arc::new(Schema::new(&node_decl, &edge_decl, "n0", num_classes).unwrap());

    let mut left = max_nodes.max(nt);
    let mut counts = Vec::new();
    for t in 0..nt {
        let reserve = nt - t - 1;
        let c = rng.random_range(1..=(left - reserve).clamp(1, max_nodes / nt + 1));
        counts.push(c);
        left -= c;
    }
    let features = counts
        .iter()
        .zip(&dims)
        .map(|(&c, &d)| Array2::from_shape_simple_fn((c, d), || rng.random_range(-1.0..1.0)))
        .collect();
    let edges = ends
        .iter()
        .map(|&(s, d)| {
            let m = rng.random_range(0..=max_edges_per_type);
            (0..m)
                .map(|_| (rng.random_range(0..counts[s]), rng.random_range(0..counts[d])))
                .collect()
        })
        .collect();
    let mut labels = BTreeMap::new();
    for i in 0..counts[0] {
        if rng.random_bool(0.5) {
            labels.insert(i, rng.random_range(0..num_classes));
        }
    }
    HetGraph::new(schema, features, edges, labels).unwrap()
}

/// Undirected hop distances from `roots` by repeated relaxation over a dense
/// adjacency matrix, independent of the library's adjacency structure.
pub fn hop_ball(g: &HetGraph, roots: &[NodeRef], tau: usize) -> BTreeSet<NodeRef> {
    let counts: Vec<usize> = (0..g.schema().num_node_types()).map(|t| g.node_count(NodeTypeId(t))).collect();
    let ids: Vec<NodeRef> = counts
        .iter()
        .enumerate()
        .flat_map(|(t, &c)| (0..c).map(move |i| NodeRef::new(NodeTypeId(t), i)))
        .collect();
    let pos = |r: NodeRef| ids.iter().position(|&x| x == r).unwrap();
    let n = ids.len();
    let mut adj = vec![vec![false; n]; n];
    for (et, list) in g.all_edges().iter().enumerate() {
        let def = &g.schema().edge_types[et];
        for &(s, d) in list {
            let a = pos(NodeRef::new(def.src, s));
            let b = pos(NodeRef::new(def.dst, d));
            adj[a][b] = true;
            adj[b][a] = true;
        }
    }
    let mut reached = vec![false; n];
    for &r in roots {
        reached[pos(r)] = true;
    }
    for _ in 0..tau {
        let prev = reached.clone();
        for a in 0..n {
            if prev[a] {
                for b in 0..n {
                    if adj[a][b] {
                        reached[b] = true;
                    }
                }
            }
        }
    }
    (0..n).filter(|&i| reached[i]).map(|i| ids[i]).collect()
}

/// Parent edges `(edge type, src, dst)` with both endpoints in `nodes`,
/// sorted.
pub fn edges_within(g: &HetGraph, nodes: &BTreeSet<NodeRef>) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (et, list) in g.all_edges().iter().enumerate() {
        let def = &g.schema().edge_types[et];
        for &(s, d) in list {
            if nodes.contains(&NodeRef::new(def.src, s)) && nodes.contains(&NodeRef::new(def.dst, d)) {
                out.push((et, s, d));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Central finite-difference check of `grad` against `f` at `x`. Returns
/// the worst relative error, with the denominator floored at `floor`.
pub fn fd_check(x: &mut Array2<f64>, grad: &Array2<f64>, step: f64, floor: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let orig = x.as_slice().unwrap()[idx];
        x.as_slice_mut().unwrap()[idx] = orig + step;
        let up = f(x);
        x.as_slice_mut().unwrap()[idx] = orig - step;
        let down = f(x);
        x.as_slice_mut().unwrap()[idx] = orig;
        let numeric = (up - down) / (2.0 * step);
        let analytic = grad.as_slice().unwrap()[idx];
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}
