//! Reformulating node and edge classification as graph classification.
//!
//! Each labeled node (or qualifying edge) becomes a τ-hop induced subgraph
//! that inherits the label. Hops ignore edge direction. Local node indices
//! follow the parent's index order within each type, and local edges keep the
//! parent's edge order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{HgmpError, Result};
use crate::hetgraph::{save_graph, EdgeTypeId, HetGraph, NodeRef, NodeTypeId};
use crate::rng::rng_for;

pub const DEFAULT_TAU: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Node,
    Edge,
    Graph,
}

impl std::str::FromStr for TaskKind {
    type Err = HgmpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(TaskKind::Node),
            "edge" => Ok(TaskKind::Edge),
            "graph" => Ok(TaskKind::Graph),
            other => Err(HgmpError::InvalidArgument(format!("unknown task kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Node => "node",
            TaskKind::Edge => "edge",
            TaskKind::Graph => "graph",
        })
    }
}

/// Labeling rule for edges whose endpoints are both target nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeTieRule {
    #[default]
    Skip,
    FirstEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Origin {
    Node { node_type: usize, index: usize },
    Edge { edge_type: usize, position: usize },
}

#[derive(Debug, Clone)]
pub struct InducedSubgraph {
    pub graph: HetGraph,
    pub origin: Origin,
    pub label: Option<usize>,
    /// Per node type, local index -> parent index.
    pub node_map: Vec<Vec<usize>>,
    pub tau: usize,
}

impl InducedSubgraph {
    /// Parent node set, sorted.
    pub fn parent_nodes(&self) -> BTreeSet<NodeRef> {
        self.node_map
            .iter()
            .enumerate()
            .flat_map(|(t, m)| m.iter().map(move |&i| NodeRef::new(NodeTypeId(t), i)))
            .collect()
    }

    /// Parent edges as `(edge type, parent src, parent dst)` triples.
    pub fn parent_edges(&self) -> Vec<(usize, usize, usize)> {
        let schema = self.graph.schema();
        let mut out = Vec::new();
        for (et, list) in self.graph.all_edges().iter().enumerate() {
            let def = &schema.edge_types[et];
            for &(s, d) in list {
                out.push((et, self.node_map[def.src.0][s], self.node_map[def.dst.0][d]));
            }
        }
        out
    }
}

/// BFS ball around `roots`, in global ids.
fn ball(g: &HetGraph, roots: &[usize], tau: usize) -> Vec<bool> {
    let adj = g.adjacency();
    let mut dist = vec![usize::MAX; adj.num_nodes()];
    let mut queue = VecDeque::new();
    for &r in roots {
        if dist[r] != 0 {
            dist[r] = 0;
            queue.push_back(r);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == tau {
            continue;
        }
        for inc in adj.incident(u) {
            if dist[inc.neighbor] == usize::MAX {
                dist[inc.neighbor] = dist[u] + 1;
                queue.push_back(inc.neighbor);
            }
        }
    }
    dist.into_iter().map(|d| d != usize::MAX).collect()
}

/// Induced subgraph on the node set `keep` (global ids).
fn induce(g: &HetGraph, keep: &[bool], origin: Origin, label: Option<usize>, tau: usize) -> InducedSubgraph {
    let adj = g.adjacency();
    let schema = g.schema();
    let nt = schema.num_node_types();
    let mut node_map: Vec<Vec<usize>> = vec![Vec::new(); nt];
    let mut local = vec![usize::MAX; keep.len()];
    // Global ids are type-major and index-ascending, so this preserves
    // parent order within each type.
    for (gid, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
        let r = adj.node_ref(gid);
        local[gid] = node_map[r.ty.0].len();
        node_map[r.ty.0].push(r.index);
    }
    let mut positions: Vec<Vec<usize>> = vec![Vec::new(); schema.num_edge_types()];
    for (gid, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
        for inc in adj.incident(gid) {
            if inc.is_src && keep[inc.neighbor] {
                positions[inc.edge_type.0].push(inc.position);
            }
        }
    }
    let edges = positions
        .into_iter()
        .enumerate()
        .map(|(et, mut pos)| {
            pos.sort_unstable();
            let def = &schema.edge_types[et];
            let parent = g.edges(EdgeTypeId(et));
            pos.into_iter()
                .map(|p| {
                    let (s, d) = parent[p];
                    let gs = adj.global_id(NodeRef::new(def.src, s));
                    let gd = adj.global_id(NodeRef::new(def.dst, d));
                    (local[gs], local[gd])
                })
                .collect()
        })
        .collect();
    let features = node_map
        .iter()
        .enumerate()
        .map(|(t, idx)| g.features(NodeTypeId(t)).select(ndarray::Axis(0), idx))
        .collect();
    let graph = HetGraph::from_parts_unchecked(g.schema_arc().clone(), features, edges, BTreeMap::new());
    InducedSubgraph {
        graph,
        origin,
        label,
        node_map,
        tau,
    }
}

fn check_tau(tau: usize) -> Result<()> {
    if tau == 0 {
        return Err(HgmpError::InvalidArgument("tau must be at least 1".into()));
    }
    Ok(())
}

/// τ-hop ego network around `v`. Labeled target nodes pass their label on.
pub fn node_induced_subgraph(g: &HetGraph, v: NodeRef, tau: usize) -> Result<InducedSubgraph> {
    check_tau(tau)?;
    if !g.contains(v) {
        return Err(HgmpError::NoSuchNode {
            node_type: g
                .schema()
                .node_types
                .get(v.ty.0)
                .map(|t| t.name.clone())
                .unwrap_or_else(|| format!("#{}", v.ty.0)),
            index: v.index,
        });
    }
    let root = g.adjacency().global_id(v);
    let keep = ball(g, &[root], tau);
    let origin = Origin::Node {
        node_type: v.ty.0,
        index: v.index,
    };
    Ok(induce(g, &keep, origin, g.label_of(v), tau))
}

/// Union of both endpoints' τ-balls. Unlabeled; edge labels come from
/// [`build_edge_tasks`].
pub fn edge_induced_subgraph(g: &HetGraph, et: EdgeTypeId, position: usize, tau: usize) -> Result<InducedSubgraph> {
    check_tau(tau)?;
    let no_edge = || HgmpError::NoSuchEdge {
        edge_type: g
            .schema()
            .edge_types
            .get(et.0)
            .map(|t| t.name.clone())
            .unwrap_or_else(|| format!("#{}", et.0)),
        position,
    };
    if et.0 >= g.schema().num_edge_types() {
        return Err(no_edge());
    }
    let &(s, d) = g.edges(et).get(position).ok_or_else(no_edge)?;
    let def = g.schema().edge_type(et);
    let adj = g.adjacency();
    let roots = [
        adj.global_id(NodeRef::new(def.src, s)),
        adj.global_id(NodeRef::new(def.dst, d)),
    ];
    let keep = ball(g, &roots, tau);
    let origin = Origin::Edge {
        edge_type: et.0,
        position,
    };
    Ok(induce(g, &keep, origin, None, tau))
}

/// One labeled subgraph per labeled target node, in node order.
pub fn build_node_tasks(g: &HetGraph, tau: usize) -> Result<Vec<Arc<InducedSubgraph>>> {
    check_tau(tau)?;
    if g.labels().is_empty() {
        return Err(HgmpError::NoLabels("graph has no labeled target nodes".into()));
    }
    let target = g.schema().target;
    g.labels()
        .keys()
        .map(|&i| node_induced_subgraph(g, NodeRef::new(target, i), tau).map(Arc::new))
        .collect()
}

/// Unlabeled ego networks of every target node, for pre-training.
pub fn build_target_corpus(g: &HetGraph, tau: usize) -> Result<Vec<Arc<InducedSubgraph>>> {
    let target = g.schema().target;
    (0..g.node_count(target))
        .map(|i| node_induced_subgraph(g, NodeRef::new(target, i), tau).map(Arc::new))
        .collect()
}

/// Edge label: the label of the edge's single target-type endpoint.
pub fn edge_label(g: &HetGraph, et: EdgeTypeId, position: usize, tie: EdgeTieRule) -> Option<usize> {
    let schema = g.schema();
    let def = schema.edge_type(et);
    let (s, d) = g.edges(et)[position];
    let target = schema.target;
    match (def.src == target, def.dst == target) {
        (true, false) => g.label_of(NodeRef::new(target, s)),
        (false, true) => g.label_of(NodeRef::new(target, d)),
        (true, true) => match tie {
            EdgeTieRule::Skip => None,
            EdgeTieRule::FirstEndpoint => g.label_of(NodeRef::new(target, s)),
        },
        (false, false) => None,
    }
}

/// Labeled edge subgraphs in (edge type, position) order. Edges without a
/// labeled target endpoint are skipped.
pub fn build_edge_tasks(g: &HetGraph, tau: usize, tie: EdgeTieRule) -> Result<Vec<Arc<InducedSubgraph>>> {
    check_tau(tau)?;
    if g.labels().is_empty() {
        return Err(HgmpError::NoLabels("graph has no labeled target nodes".into()));
    }
    let mut out = Vec::new();
    for et in 0..g.schema().num_edge_types() {
        let et = EdgeTypeId(et);
        for pos in 0..g.edges(et).len() {
            if let Some(label) = edge_label(g, et, pos, tie) {
                let mut sub = edge_induced_subgraph(g, et, pos, tau)?;
                sub.label = Some(label);
                out.push(Arc::new(sub));
            }
        }
    }
    if out.is_empty() {
        return Err(HgmpError::NoLabels("no edge has a labeled target endpoint".into()));
    }
    Ok(out)
}

/// Task corpus for a task kind. Graph classification reuses the node
/// corpus.
pub fn build_tasks(g: &HetGraph, kind: TaskKind, tau: usize, tie: EdgeTieRule) -> Result<Vec<Arc<InducedSubgraph>>> {
    match kind {
        TaskKind::Node | TaskKind::Graph => build_node_tasks(g, tau),
        TaskKind::Edge => build_edge_tasks(g, tau, tie),
    }
}

#[derive(Debug, Clone)]
pub struct FewShotTask {
    pub kind: TaskKind,
    pub support: Vec<Arc<InducedSubgraph>>,
    pub query: Vec<Arc<InducedSubgraph>>,
    pub classes: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

/// Samples `k` support items per class without replacement. Of the rest,
/// the first `ceil(query_fraction * rest)` in shuffled order form the query.
pub fn sample_k_shot(
    kind: TaskKind,
    tasks: &[Arc<InducedSubgraph>],
    k: usize,
    query_fraction: f64,
    seed: u64,
) -> Result<FewShotTask> {
    if k == 0 {
        return Err(HgmpError::InvalidArgument("k must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&query_fraction) {
        return Err(HgmpError::InvalidArgument(format!("query fraction {query_fraction} outside [0, 1]")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        let label = t
            .label
            .ok_or_else(|| HgmpError::NoLabels(format!("task item {i} has no label")))?;
        by_class.entry(label).or_default().push(i);
    }
    if by_class.is_empty() {
        return Err(HgmpError::NoLabels("empty task list".into()));
    }
    for (&class, items) in &by_class {
        if items.len() < k + 1 {
            return Err(HgmpError::InsufficientClass {
                class,
                available: items.len(),
                k,
                needed: k + 1,
            });
        }
    }
    let mut rng = rng_for(seed, &[0x5107]);
    let mut support = Vec::new();
    let mut rest = Vec::new();
    for items in by_class.values() {
        let mut items = items.clone();
        items.shuffle(&mut rng);
        support.extend_from_slice(&items[..k]);
        rest.extend_from_slice(&items[k..]);
    }
    rest.shuffle(&mut rng);
    let n_query = (query_fraction * rest.len() as f64).ceil() as usize;
    rest.truncate(n_query.min(rest.len()));
    Ok(FewShotTask {
        kind,
        support: support.iter().map(|&i| tasks[i].clone()).collect(),
        query: rest.iter().map(|&i| tasks[i].clone()).collect(),
        classes: by_class.keys().copied().collect(),
        k,
        seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskIndexEntry {
    dir: String,
    origin: Origin,
    label: Option<usize>,
    split: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskIndex {
    kind: TaskKind,
    k: usize,
    seed: u64,
    classes: Vec<usize>,
    items: Vec<TaskIndexEntry>,
}

/// Writes each subgraph as a dataset directory plus a `tasks.json` index.
pub fn dump_tasks(task: &FewShotTask, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| HgmpError::io(dir, e))?;
    let mut items = Vec::new();
    let splits = [("support", &task.support), ("query", &task.query)];
    for (split, list) in splits {
        for sub in list.iter() {
            let name = format!("sub_{:05}", items.len());
            save_graph(&sub.graph, dir.join(&name))?;
            items.push(TaskIndexEntry {
                dir: name,
                origin: sub.origin,
                label: sub.label,
                split: split.to_string(),
            });
        }
    }
    let index = TaskIndex {
        kind: task.kind,
        k: task.k,
        seed: task.seed,
        classes: task.classes.clone(),
        items,
    };
    let path = dir.join("tasks.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text + "\n").map_err(|e| HgmpError::io(&path, e))
}
