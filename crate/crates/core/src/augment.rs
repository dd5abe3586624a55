//! Heterogeneous node masking and edge permutation.
//!
//! Perturbation budgets are spread over types by squared-count weights,
//! `a(i) = count(i)^2 / sum_j count(j)^2`, so abundant types absorb most of
//! the perturbation and rare types are left almost untouched. A type then
//! receives `round(r * a(i) * total)` perturbations, clamped to its size,
//! where `total` is the graph-wide node (or edge) count.

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{HgmpError, Result};
use crate::hetgraph::{type_counts, HetGraph};
use crate::rng::{derive_seed, rng_for};

/// Squared-count weights over types. Fails when every count is zero.
pub fn adjusted_ratios(counts: &[usize]) -> Result<Vec<f64>> {
    // Exact in u128; counts up to ~1e9 keep the sum below 2^64 easily.
    let squares: Vec<u128> = counts.iter().map(|&c| (c as u128) * (c as u128)).collect();
    let total: u128 = squares.iter().sum();
    if total == 0 {
        return Err(HgmpError::InvalidArgument("all type counts are zero".into()));
    }
    let total = total as f64;
    Ok(squares.into_iter().map(|s| s as f64 / total).collect())
}

pub fn adjusted_node_ratios(counts: &[usize]) -> Result<Vec<f64>> {
    adjusted_ratios(counts)
}

pub fn adjusted_edge_ratios(counts: &[usize]) -> Result<Vec<f64>> {
    adjusted_ratios(counts)
}

fn budget(r: f64, ratio: f64, total: usize, type_count: usize) -> usize {
    let raw = (r * ratio * total as f64).round();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(type_count)
    }
}

/// `round(r * a_i * total_nodes)` clamped to `[0, type_count]`.
pub fn num_to_mask(r: f64, a_i: f64, total_nodes: usize, type_count: usize) -> usize {
    budget(r, a_i, total_nodes, type_count)
}

/// `round(r * b_i * total_edges)` clamped to `[0, type_count]`.
pub fn num_to_permute(r: f64, b_i: f64, total_edges: usize, type_count: usize) -> usize {
    budget(r, b_i, total_edges, type_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NodeMask,
    EdgePermute,
}

/// How perturbation budgets are distributed over types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Squared-count adjusted ratios per type.
    #[default]
    Heterogeneous,
    /// Type-blind: `round(r * total)` items drawn uniformly from the whole
    /// graph.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub ratio: f64,
    pub mode: AugmentMode,
    /// Strategies for the first and second view, applied in listed order.
    pub views: [Vec<Strategy>; 2],
    pub seed: u64,
}

fn default_views() -> [Vec<Strategy>; 2] {
    [vec![Strategy::NodeMask], vec![Strategy::EdgePermute]]
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            ratio: 0.2,
            mode: AugmentMode::Heterogeneous,
            views: default_views(),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(HgmpError::InvalidArgument(format!("augmentation ratio {} outside [0, 1]", self.ratio)));
        }
        if self.views.iter().all(Vec::is_empty) {
            return Err(HgmpError::InvalidArgument("no augmentation strategy selected".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Which nodes were masked and which edge positions were permuted, per type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentAudit {
    pub masked: Vec<Vec<usize>>,
    pub permuted: Vec<Vec<usize>>,
}

impl AugmentAudit {
    fn empty(g: &HetGraph) -> Self {
        Self {
            masked: vec![Vec::new(); g.schema().num_node_types()],
            permuted: vec![Vec::new(); g.schema().num_edge_types()],
        }
    }

    fn merge(&mut self, other: AugmentAudit) {
        for (a, b) in self.masked.iter_mut().zip(other.masked) {
            a.extend(b);
            a.sort_unstable();
            a.dedup();
        }
        for (a, b) in self.permuted.iter_mut().zip(other.permuted) {
            a.extend(b);
            a.sort_unstable();
            a.dedup();
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("audit serializes")
    }
}

#[derive(Debug, Clone)]
pub struct AugmentView {
    pub graph: HetGraph,
    pub audit: AugmentAudit,
    pub seed: u64,
}

/// Per-type sample sizes for masking.
pub fn mask_budgets(g: &HetGraph, r: f64) -> Vec<usize> {
    let counts = type_counts(g).nodes;
    let total: usize = counts.iter().sum();
    match adjusted_node_ratios(&counts) {
        Ok(ratios) => counts
            .iter()
            .zip(ratios)
            .map(|(&c, a)| num_to_mask(r, a, total, c))
            .collect(),
        Err(_) => vec![0; counts.len()],
    }
}

/// Per-type sample sizes for permutation.
pub fn permute_budgets(g: &HetGraph, r: f64) -> Vec<usize> {
    let counts = type_counts(g).edges;
    let total: usize = counts.iter().sum();
    match adjusted_edge_ratios(&counts) {
        Ok(ratios) => counts
            .iter()
            .zip(ratios)
            .map(|(&c, b)| num_to_permute(r, b, total, c))
            .collect(),
        Err(_) => vec![0; counts.len()],
    }
}

/// Spreads `round(r * total)` uniform draws over types: returns the
/// selected positions per type.
fn uniform_selection(counts: &[usize], r: f64, seed: u64) -> Vec<Vec<usize>> {
    let total: usize = counts.iter().sum();
    let amount = ((r * total as f64).round() as usize).min(total);
    let mut rng = rng_for(seed, &[0xB11D]);
    let mut picked: Vec<usize> = index::sample(&mut rng, total, amount).into_vec();
    picked.sort_unstable();
    let mut out = vec![Vec::new(); counts.len()];
    let mut offset = 0;
    let mut t = 0;
    for p in picked {
        while p >= offset + counts[t] {
            offset += counts[t];
            t += 1;
        }
        out[t].push(p - offset);
    }
    out
}

fn heterogeneous_selection(counts: &[usize], budgets: &[usize], seed: u64) -> Vec<Vec<usize>> {
    counts
        .iter()
        .zip(budgets)
        .enumerate()
        .map(|(t, (&c, &b))| {
            let mut rng = rng_for(seed, &[t as u64]);
            let mut v = index::sample(&mut rng, c, b).into_vec();
            v.sort_unstable();
            v
        })
        .collect()
}

fn mask_selected(g: &HetGraph, selected: Vec<Vec<usize>>, seed: u64) -> AugmentView {
    let features: Vec<Array2<f64>> = g
        .all_features()
        .iter()
        .zip(&selected)
        .map(|(f, rows)| {
            let mut f = f.clone();
            for &i in rows {
                f.row_mut(i).fill(0.0);
            }
            f
        })
        .collect();
    let mut audit = AugmentAudit::empty(g);
    audit.masked = selected;
    AugmentView {
        graph: g.with_features(features),
        audit,
        seed,
    }
}

fn permute_selected(g: &HetGraph, selected: Vec<Vec<usize>>, seed: u64) -> AugmentView {
    let edges: Vec<Vec<(usize, usize)>> = g
        .all_edges()
        .iter()
        .zip(&selected)
        .enumerate()
        .map(|(et, (list, positions))| {
            let mut list = list.clone();
            let mut dsts: Vec<usize> = positions.iter().map(|&p| list[p].1).collect();
            let mut rng = rng_for(seed, &[0xED6E, et as u64]);
            dsts.shuffle(&mut rng);
            for (&p, d) in positions.iter().zip(dsts) {
                list[p].1 = d;
            }
            list
        })
        .collect();
    let mut audit = AugmentAudit::empty(g);
    audit.permuted = selected;
    AugmentView {
        graph: g.with_edges(edges),
        audit,
        seed,
    }
}

/// Zeroes the feature rows of `num_to_mask(i)` uniformly chosen nodes of
/// every type. Topology is untouched.
pub fn apply_node_masking(g: &HetGraph, r: f64, seed: u64) -> AugmentView {
    let counts = type_counts(g).nodes;
    let selected = heterogeneous_selection(&counts, &mask_budgets(g, r), derive_seed(seed, &[0x3A5C]));
    mask_selected(g, selected, seed)
}

/// Shuffles destination endpoints among `num_to_permute(i)` chosen edges of
/// every edge type. Sources, counts and per-type destination multisets are
/// preserved; duplicate edges may appear.
pub fn apply_edge_permutation(g: &HetGraph, r: f64, seed: u64) -> AugmentView {
    let counts = type_counts(g).edges;
    let selected = heterogeneous_selection(&counts, &permute_budgets(g, r), derive_seed(seed, &[0x9E27]));
    permute_selected(g, selected, seed)
}

/// Type-blind masking: `round(r * |V|)` nodes drawn uniformly overall.
pub fn apply_uniform_masking(g: &HetGraph, r: f64, seed: u64) -> AugmentView {
    let counts = type_counts(g).nodes;
    mask_selected(g, uniform_selection(&counts, r, derive_seed(seed, &[0x3A5C])), seed)
}

/// Type-blind permutation: `round(r * |E|)` edges drawn uniformly overall,
/// then shuffled within their own type.
pub fn apply_uniform_permutation(g: &HetGraph, r: f64, seed: u64) -> AugmentView {
    let counts = type_counts(g).edges;
    permute_selected(g, uniform_selection(&counts, r, derive_seed(seed, &[0x9E27])), seed)
}

fn apply_strategy(g: &HetGraph, s: Strategy, mode: AugmentMode, r: f64, seed: u64) -> AugmentView {
    match (s, mode) {
        (Strategy::NodeMask, AugmentMode::Heterogeneous) => apply_node_masking(g, r, seed),
        (Strategy::EdgePermute, AugmentMode::Heterogeneous) => apply_edge_permutation(g, r, seed),
        (Strategy::NodeMask, AugmentMode::Uniform) => apply_uniform_masking(g, r, seed),
        (Strategy::EdgePermute, AugmentMode::Uniform) => apply_uniform_permutation(g, r, seed),
    }
}

/// Applies one view's strategies in order.
pub fn make_view(g: &HetGraph, strategies: &[Strategy], mode: AugmentMode, r: f64, seed: u64) -> AugmentView {
    let mut view = AugmentView {
        graph: g.clone(),
        audit: AugmentAudit::empty(g),
        seed,
    };
    for (step, &s) in strategies.iter().enumerate() {
        let next = apply_strategy(&view.graph, s, mode, r, derive_seed(seed, &[step as u64]));
        view.graph = next.graph;
        view.audit.merge(next.audit);
    }
    view
}

/// Two independently seeded views of `g`.
pub fn make_views(g: &HetGraph, cfg: &AugmentConfig) -> Result<(AugmentView, AugmentView)> {
    cfg.check()?;
    let v1 = make_view(g, &cfg.views[0], cfg.mode, cfg.ratio, derive_seed(cfg.seed, &[1]));
    let v2 = make_view(g, &cfg.views[1], cfg.mode, cfg.ratio, derive_seed(cfg.seed, &[2]));
    Ok((v1, v2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{generate_synthetic, EdgeTypeId, SyntheticSpec};

    #[test]
    fn ratio_hand_cases() {
        assert_eq!(adjusted_node_ratios(&[10, 10]).unwrap(), vec![0.5, 0.5]);
        let r = adjusted_node_ratios(&[3, 4]).unwrap();
        assert_eq!(r, vec![9.0 / 25.0, 16.0 / 25.0]);
        assert!((r[0] - 0.36).abs() < 1e-15 && (r[1] - 0.64).abs() < 1e-15);
        assert_eq!(adjusted_edge_ratios(&[42]).unwrap(), vec![1.0]);
        let e = adjusted_edge_ratios(&[1, 1, 2]).unwrap();
        assert_eq!(e, vec![1.0 / 6.0, 1.0 / 6.0, 4.0 / 6.0]);
        assert!(adjusted_node_ratios(&[0, 0]).is_err());
    }

    #[test]
    fn count_formula_cases() {
        assert_eq!(num_to_mask(0.1, 0.5, 100, 100), 5);
        assert_eq!(num_to_mask(0.0, 0.7, 100, 100), 0);
        assert_eq!(num_to_mask(1.0, 1.0, 7, 7), 7);
        assert_eq!(num_to_permute(0.2, 0.25, 200, 200), 10);
        assert_eq!(num_to_permute(0.0, 0.25, 200, 200), 0);
        assert_eq!(num_to_permute(1.0, 0.9, 200, 30), 30);
    }

    fn graph() -> HetGraph {
        generate_synthetic(&SyntheticSpec::benchmark(60, 3, 0.5, 3)).unwrap()
    }

    #[test]
    fn zero_ratio_is_identity() {
        let g = graph();
        assert_eq!(apply_node_masking(&g, 0.0, 1).graph, g);
        assert_eq!(apply_edge_permutation(&g, 0.0, 1).graph, g);
        let (a, b) = make_views(&g, &AugmentConfig { ratio: 0.0, ..Default::default() }).unwrap();
        assert_eq!(a.graph, g);
        assert_eq!(b.graph, g);
    }

    #[test]
    fn masking_zeroes_exact_budget() {
        let g = graph();
        let v = apply_node_masking(&g, 0.5, 9);
        assert_eq!(v.graph.all_edges(), g.all_edges());
        let budgets = mask_budgets(&g, 0.5);
        for (t, rows) in v.audit.masked.iter().enumerate() {
            assert_eq!(rows.len(), budgets[t]);
            let f = v.graph.features(crate::hetgraph::NodeTypeId(t));
            for &i in rows {
                assert!(f.row(i).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn singleton_permutation_is_identity() {
        let g = graph();
        // Pick a ratio giving exactly one permuted edge in the largest type.
        let counts = type_counts(&g).edges;
        let ratios = adjusted_edge_ratios(&counts).unwrap();
        let total: usize = counts.iter().sum();
        let r = 1.0 / (ratios[0] * total as f64);
        let v = apply_edge_permutation(&g, r, 4);
        assert_eq!(v.audit.permuted[0].len(), 1);
        assert_eq!(v.graph.edges(EdgeTypeId(0)), g.edges(EdgeTypeId(0)));
    }

    #[test]
    fn both_strategies_compose_in_order() {
        let g = graph();
        let cfg = AugmentConfig {
            ratio: 0.3,
            views: [vec![Strategy::NodeMask, Strategy::EdgePermute], vec![Strategy::EdgePermute]],
            seed: 17,
            ..Default::default()
        };
        let (v1, _) = make_views(&g, &cfg).unwrap();
        let seed = derive_seed(17, &[1]);
        let masked = apply_node_masking(&g, 0.3, derive_seed(seed, &[0]));
        let permuted = apply_edge_permutation(&masked.graph, 0.3, derive_seed(seed, &[1]));
        assert_eq!(v1.graph, permuted.graph);
        assert_eq!(v1.audit.masked, masked.audit.masked);
        assert_eq!(v1.audit.permuted, permuted.audit.permuted);
    }

    #[test]
    fn uniform_mode_draws_global_budget() {
        let g = graph();
        let v = apply_uniform_masking(&g, 0.25, 2);
        let masked: usize = v.audit.masked.iter().map(Vec::len).sum();
        assert_eq!(masked, (0.25 * g.total_nodes() as f64).round() as usize);
        let p = apply_uniform_permutation(&g, 0.25, 2);
        let permuted: usize = p.audit.permuted.iter().map(Vec::len).sum();
        assert_eq!(permuted, (0.25 * g.total_edges() as f64).round() as usize);
    }

    #[test]
    fn invalid_config_rejected() {
        let g = graph();
        assert!(make_views(&g, &AugmentConfig { ratio: 1.5, ..Default::default() }).is_err());
        let empty = AugmentConfig {
            views: [vec![], vec![]],
            ..Default::default()
        };
        assert!(make_views(&g, &empty).is_err());
    }

    #[test]
    fn audit_serializes() {
        let v = apply_node_masking(&graph(), 0.2, 1);
        let json = v.audit.to_json();
        let back: AugmentAudit = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v.audit);
    }
}
