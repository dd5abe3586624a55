//! Typed heterogeneous graphs.
//!
//! Nodes are indexed per type (`0..count`), so the global identity of a node
//! is the pair `(NodeTypeId, index)`. Each node type owns a dense feature
//! matrix whose width is that type's feature dimension; dimensions may differ
//! between types. Edges are stored per edge type as `(src, dst)` pairs of
//! type-local indices.

mod io;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HgmpError, Result};

pub use io::{load_graph, save_graph, MANIFEST_FILE};
pub use synth::{generate_synthetic, EdgeWiring, SyntheticSpec, TypeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeTypeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeTypeId(pub usize);

/// A node addressed by type and type-local index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub ty: NodeTypeId,
    pub index: usize,
}

impl NodeRef {
    pub fn new(ty: NodeTypeId, index: usize) -> Self {
        Self { ty, index }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeDef {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTypeDef {
    pub name: String,
    pub src: NodeTypeId,
    pub dst: NodeTypeId,
}

/// Node and edge type declarations plus the classification target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub node_types: Vec<NodeTypeDef>,
    pub edge_types: Vec<EdgeTypeDef>,
    pub target: NodeTypeId,
    pub num_classes: usize,
}

impl Schema {
    /// Builds a schema from names, checking uniqueness and endpoint types.
    pub fn new(
        node_types: &[(&str, usize)],
        edge_types: &[(&str, &str, &str)],
        target: &str,
        num_classes: usize,
    ) -> Result<Self> {
        let node_types: Vec<NodeTypeDef> = node_types
            .iter()
            .map(|&(name, dim)| NodeTypeDef {
                name: name.to_string(),
                dim,
            })
            .collect();
        let lookup = |name: &str| -> Result<NodeTypeId> {
            node_types
                .iter()
                .position(|t| t.name == name)
                .map(NodeTypeId)
                .ok_or_else(|| HgmpError::InvalidGraph(format!("unknown node type `{name}`")))
        };
        let edge_types = edge_types
            .iter()
            .map(|&(name, src, dst)| {
                Ok(EdgeTypeDef {
                    name: name.to_string(),
                    src: lookup(src)?,
                    dst: lookup(dst)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let schema = Schema {
            target: lookup(target)?,
            node_types,
            edge_types,
            num_classes,
        };
        let problems = schema.violations();
        if let Some(first) = problems.first() {
            return Err(HgmpError::InvalidGraph(first.to_string()));
        }
        Ok(schema)
    }

    pub fn num_node_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    pub fn node_type(&self, id: NodeTypeId) -> &NodeTypeDef {
        &self.node_types[id.0]
    }

    pub fn edge_type(&self, id: EdgeTypeId) -> &EdgeTypeDef {
        &self.edge_types[id.0]
    }

    pub fn node_type_id(&self, name: &str) -> Option<NodeTypeId> {
        self.node_types.iter().position(|t| t.name == name).map(NodeTypeId)
    }

    pub fn edge_type_id(&self, name: &str) -> Option<EdgeTypeId> {
        self.edge_types.iter().position(|t| t.name == name).map(EdgeTypeId)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.node_types.iter().map(|t| t.dim).collect()
    }

    /// Stable hash of everything an encoder depends on: type names, feature
    /// dims and edge-type endpoints. Class count is included because prompt
    /// checkpoints carry a head sized by it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.node_types {
            h.update(format!("n:{}:{};", t.name, t.dim).as_bytes());
        }
        for e in &self.edge_types {
            h.update(format!("e:{}:{}:{};", e.name, e.src.0, e.dst.0).as_bytes());
        }
        h.update(format!("t:{};c:{}", self.target.0, self.num_classes).as_bytes());
        hex::encode(&h.finalize()[..16])
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, t) in self.node_types.iter().enumerate() {
            if self.node_types[..i].iter().any(|u| u.name == t.name) {
                out.push(Violation::new("unique-node-type", format!("duplicate node type `{}`", t.name)));
            }
            if t.dim == 0 {
                out.push(Violation::new("feature-dim", format!("node type `{}` has zero feature dimension", t.name)));
            }
        }
        for (i, e) in self.edge_types.iter().enumerate() {
            if self.edge_types[..i].iter().any(|u| u.name == e.name) {
                out.push(Violation::new("unique-edge-type", format!("duplicate edge type `{}`", e.name)));
            }
            for end in [e.src, e.dst] {
                if end.0 >= self.node_types.len() {
                    out.push(Violation::new(
                        "edge-endpoint-type",
                        format!("edge type `{}` references node type #{}", e.name, end.0),
                    ));
                }
            }
        }
        if self.target.0 >= self.node_types.len() {
            out.push(Violation::new("target-type", format!("target type #{} undeclared", self.target.0)));
        }
        if self.num_classes < 1 {
            out.push(Violation::new("class-count", "class count must be positive".to_string()));
        }
        out
    }
}

/// One failed invariant, with where it failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    pub location: String,
}

impl Violation {
    fn new(invariant: &str, location: String) -> Self {
        Self {
            invariant: invariant.to_string(),
            location,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.invariant, self.location)
    }
}

/// An immutable heterogeneous graph. Augmentation and prompting produce new
/// graphs rather than editing one in place.
#[derive(Debug, Clone)]
pub struct HetGraph {
    schema: Arc<Schema>,
    features: Vec<Array2<f64>>,
    edges: Vec<Vec<(usize, usize)>>,
    labels: BTreeMap<usize, usize>,
    adjacency: OnceLock<Arc<Adjacency>>,
}

impl PartialEq for HetGraph {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.features == other.features
            && self.edges == other.edges
            && self.labels == other.labels
    }
}

impl HetGraph {
    /// Builds a graph and rejects it if any invariant fails.
    pub fn new(
        schema: Arc<Schema>,
        features: Vec<Array2<f64>>,
        edges: Vec<Vec<(usize, usize)>>,
        labels: BTreeMap<usize, usize>,
    ) -> Result<Self> {
        let g = Self::from_parts_unchecked(schema, features, edges, labels);
        let problems = validate(&g);
        if !problems.is_empty() {
            let msg = problems.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            return Err(HgmpError::InvalidGraph(msg));
        }
        Ok(g)
    }

    /// Builds a graph without checking invariants. Pair with [`validate`].
    pub fn from_parts_unchecked(
        schema: Arc<Schema>,
        features: Vec<Array2<f64>>,
        edges: Vec<Vec<(usize, usize)>>,
        labels: BTreeMap<usize, usize>,
    ) -> Self {
        Self {
            schema,
            features,
            edges,
            labels,
            adjacency: OnceLock::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn features(&self, ty: NodeTypeId) -> &Array2<f64> {
        &self.features[ty.0]
    }

    pub fn all_features(&self) -> &[Array2<f64>] {
        &self.features
    }

    pub fn edges(&self, ty: EdgeTypeId) -> &[(usize, usize)] {
        &self.edges[ty.0]
    }

    pub fn all_edges(&self) -> &[Vec<(usize, usize)>] {
        &self.edges
    }

    pub fn labels(&self) -> &BTreeMap<usize, usize> {
        &self.labels
    }

    pub fn label_of(&self, node: NodeRef) -> Option<usize> {
        if node.ty == self.schema.target {
            self.labels.get(&node.index).copied()
        } else {
            None
        }
    }

    pub fn node_count(&self, ty: NodeTypeId) -> usize {
        self.features[ty.0].nrows()
    }

    pub fn total_nodes(&self) -> usize {
        self.features.iter().map(|f| f.nrows()).sum()
    }

    pub fn total_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        node.ty.0 < self.features.len() && node.index < self.node_count(node.ty)
    }

    /// Copy with replaced feature matrices; structure and labels are shared.
    pub fn with_features(&self, features: Vec<Array2<f64>>) -> Self {
        let g = Self::from_parts_unchecked(self.schema.clone(), features, self.edges.clone(), self.labels.clone());
        // Topology is unchanged so the cached adjacency stays valid.
        if let Some(adj) = self.adjacency.get() {
            let _ = g.adjacency.set(adj.clone());
        }
        g
    }

    /// Copy with replaced edge lists.
    pub fn with_edges(&self, edges: Vec<Vec<(usize, usize)>>) -> Self {
        Self::from_parts_unchecked(self.schema.clone(), self.features.clone(), edges, self.labels.clone())
    }

    /// Undirected, type-erased adjacency in global node numbering, built
    /// lazily and cached.
    pub fn adjacency(&self) -> &Adjacency {
        self.adjacency.get_or_init(|| Arc::new(Adjacency::build(self)))
    }
}

/// One incidence of an edge at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incidence {
    pub neighbor: usize,
    pub edge_type: EdgeTypeId,
    pub position: usize,
    /// True when the owning node is the edge's source.
    pub is_src: bool,
}

/// Compressed incidence lists over global node ids. The global id of
/// `(ty, index)` is `offsets[ty] + index`.
#[derive(Debug, Clone)]
pub struct Adjacency {
    offsets: Vec<usize>,
    starts: Vec<usize>,
    entries: Vec<Incidence>,
}

impl Adjacency {
    fn build(g: &HetGraph) -> Self {
        let mut offsets = Vec::with_capacity(g.features.len() + 1);
        let mut acc = 0;
        for f in &g.features {
            offsets.push(acc);
            acc += f.nrows();
        }
        offsets.push(acc);
        let n = acc;
        let schema = g.schema();
        let mut degree = vec![0usize; n];
        for (et, list) in g.edges.iter().enumerate() {
            let def = &schema.edge_types[et];
            for &(s, d) in list {
                let gs = offsets[def.src.0] + s;
                let gd = offsets[def.dst.0] + d;
                degree[gs] += 1;
                if gs != gd {
                    degree[gd] += 1;
                }
            }
        }
        let mut starts = vec![0usize; n + 1];
        for i in 0..n {
            starts[i + 1] = starts[i] + degree[i];
        }
        let mut fill = starts.clone();
        let placeholder = Incidence {
            neighbor: 0,
            edge_type: EdgeTypeId(0),
            position: 0,
            is_src: true,
        };
        let mut entries = vec![placeholder; starts[n]];
        for (et, list) in g.edges.iter().enumerate() {
            let def = &schema.edge_types[et];
            for (pos, &(s, d)) in list.iter().enumerate() {
                let gs = offsets[def.src.0] + s;
                let gd = offsets[def.dst.0] + d;
                entries[fill[gs]] = Incidence {
                    neighbor: gd,
                    edge_type: EdgeTypeId(et),
                    position: pos,
                    is_src: true,
                };
                fill[gs] += 1;
                if gs != gd {
                    entries[fill[gd]] = Incidence {
                        neighbor: gs,
                        edge_type: EdgeTypeId(et),
                        position: pos,
                        is_src: false,
                    };
                    fill[gd] += 1;
                }
            }
        }
        Self {
            offsets,
            starts,
            entries,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn global_id(&self, node: NodeRef) -> usize {
        self.offsets[node.ty.0] + node.index
    }

    pub fn node_ref(&self, global: usize) -> NodeRef {
        // offsets is sorted; the owning type is the last offset <= global
        // among types that actually contain nodes.
        let ty = self.offsets[..self.offsets.len() - 1]
            .partition_point(|&o| o <= global)
            - 1;
        NodeRef::new(NodeTypeId(ty), global - self.offsets[ty])
    }

    pub fn incident(&self, global: usize) -> &[Incidence] {
        &self.entries[self.starts[global]..self.starts[global + 1]]
    }
}

/// Checks every graph invariant and reports each failure with its location.
pub fn validate(g: &HetGraph) -> Vec<Violation> {
    let schema = g.schema();
    let mut out = schema.violations();
    if g.features.len() != schema.node_types.len() {
        out.push(Violation::new(
            "feature-matrices",
            format!("{} feature matrices for {} node types", g.features.len(), schema.node_types.len()),
        ));
        return out;
    }
    if g.edges.len() != schema.edge_types.len() {
        out.push(Violation::new(
            "edge-lists",
            format!("{} edge lists for {} edge types", g.edges.len(), schema.edge_types.len()),
        ));
        return out;
    }
    for (t, (def, f)) in schema.node_types.iter().zip(&g.features).enumerate() {
        if f.ncols() != def.dim {
            out.push(Violation::new(
                "feature-dim",
                format!("node type `{}` (#{t}) has width {} but declares dim {}", def.name, f.ncols(), def.dim),
            ));
        }
        if let Some((row, _)) = f
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            out.push(Violation::new(
                "finite-features",
                format!("node type `{}` row {row} has a non-finite value", def.name),
            ));
        }
    }
    for (et, (def, list)) in schema.edge_types.iter().zip(&g.edges).enumerate() {
        if def.src.0 >= g.features.len() || def.dst.0 >= g.features.len() {
            continue;
        }
        let ns = g.features[def.src.0].nrows();
        let nd = g.features[def.dst.0].nrows();
        for (pos, &(s, d)) in list.iter().enumerate() {
            if s >= ns || d >= nd {
                out.push(Violation::new(
                    "edge-endpoint",
                    format!("edge type `{}` (#{et}) position {pos}: ({s}, {d}) outside ({ns}, {nd})", def.name),
                ));
            }
        }
    }
    if schema.target.0 < g.features.len() {
        let nt = g.features[schema.target.0].nrows();
        for (&node, &class) in &g.labels {
            if node >= nt {
                out.push(Violation::new(
                    "label-node",
                    format!("label on target node {node} but only {nt} target nodes exist"),
                ));
            }
            if class >= schema.num_classes {
                out.push(Violation::new(
                    "label-range",
                    format!("target node {node} has class {class}, class count is {}", schema.num_classes),
                ));
            }
        }
    }
    out
}

/// Per-type node and edge counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TypeCounts {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
}

impl TypeCounts {
    pub fn total_nodes(&self) -> usize {
        self.nodes.iter().sum()
    }

    pub fn total_edges(&self) -> usize {
        self.edges.iter().sum()
    }

    /// Counts keyed by type name.
    pub fn named(&self, schema: &Schema) -> (BTreeMap<String, usize>, BTreeMap<String, usize>) {
        let nodes = schema
            .node_types
            .iter()
            .zip(&self.nodes)
            .map(|(t, &c)| (t.name.clone(), c))
            .collect();
        let edges = schema
            .edge_types
            .iter()
            .zip(&self.edges)
            .map(|(t, &c)| (t.name.clone(), c))
            .collect();
        (nodes, edges)
    }
}

pub fn type_counts(g: &HetGraph) -> TypeCounts {
    TypeCounts {
        nodes: g.features.iter().map(|f| f.nrows()).collect(),
        edges: g.edges.iter().map(Vec::len).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> HetGraph {
        let schema = Arc::new(
            Schema::new(
                &[("paper", 2), ("author", 3)],
                &[("writes", "author", "paper"), ("cites", "paper", "paper")],
                "paper",
                2,
            )
            .unwrap(),
        );
        HetGraph::new(
            schema,
            vec![array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], Array2::zeros((2, 3))],
            vec![vec![(0, 0), (1, 2)], vec![(0, 1)]],
            BTreeMap::from([(0, 0), (1, 1)]),
        )
        .unwrap()
    }

    #[test]
    fn valid_graph_has_no_violations() {
        assert!(validate(&tiny()).is_empty());
    }

    #[test]
    fn out_of_range_class_is_one_violation() {
        let g = tiny();
        let bad = HetGraph::from_parts_unchecked(
            g.schema_arc().clone(),
            g.all_features().to_vec(),
            g.all_edges().to_vec(),
            BTreeMap::from([(0, 0), (1, 2)]),
        );
        let v = validate(&bad);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, "label-range");
    }

    #[test]
    fn inconsistent_dimension_is_one_violation() {
        let g = tiny();
        let mut feats = g.all_features().to_vec();
        feats[1] = Array2::zeros((2, 4));
        let bad = HetGraph::from_parts_unchecked(g.schema_arc().clone(), feats, g.all_edges().to_vec(), g.labels().clone());
        let v = validate(&bad);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, "feature-dim");
    }

    #[test]
    fn dangling_endpoint_rejected() {
        let g = tiny();
        let mut edges = g.all_edges().to_vec();
        edges[0].push((2, 0));
        let err = HetGraph::new(g.schema_arc().clone(), g.all_features().to_vec(), edges, BTreeMap::new());
        assert!(matches!(err, Err(HgmpError::InvalidGraph(m)) if m.contains("edge-endpoint")));
    }

    #[test]
    fn duplicate_type_names_rejected() {
        assert!(Schema::new(&[("a", 1), ("a", 1)], &[], "a", 2).is_err());
        assert!(Schema::new(&[("a", 1)], &[("e", "a", "b")], "a", 2).is_err());
    }

    #[test]
    fn counts_match_storage() {
        let g = tiny();
        let c = type_counts(&g);
        assert_eq!(c.nodes, vec![3, 2]);
        assert_eq!(c.edges, vec![2, 1]);
        assert_eq!(c.total_nodes(), g.total_nodes());
        assert_eq!(c.total_edges(), g.total_edges());
    }

    #[test]
    fn adjacency_is_undirected_and_typed() {
        let g = tiny();
        let adj = g.adjacency();
        assert_eq!(adj.num_nodes(), 5);
        let author1 = adj.global_id(NodeRef::new(NodeTypeId(1), 1));
        assert_eq!(adj.node_ref(author1), NodeRef::new(NodeTypeId(1), 1));
        let paper2 = adj.global_id(NodeRef::new(NodeTypeId(0), 2));
        assert_eq!(adj.incident(paper2).len(), 1);
        assert_eq!(adj.incident(paper2)[0].neighbor, author1);
        assert!(!adj.incident(paper2)[0].is_src);
    }

    #[test]
    fn node_ref_skips_empty_types() {
        let schema = Arc::new(Schema::new(&[("a", 1), ("b", 1), ("c", 1)], &[], "a", 2).unwrap());
        let g = HetGraph::new(
            schema,
            vec![Array2::zeros((1, 1)), Array2::zeros((0, 1)), Array2::zeros((2, 1))],
            vec![],
            BTreeMap::new(),
        )
        .unwrap();
        let adj = g.adjacency();
        assert_eq!(adj.node_ref(1), NodeRef::new(NodeTypeId(2), 0));
        assert_eq!(adj.node_ref(0), NodeRef::new(NodeTypeId(0), 0));
    }
}
